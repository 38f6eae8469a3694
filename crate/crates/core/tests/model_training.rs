mod common;

use common::*;
use rand::Rng;
use smgcn_core::metrics::{accuracy, macro_f1, nmi};
use smgcn_core::model::{loss_and_grad_dense, predict, train_run, TrainData};
use smgcn_core::pipeline::{prepare, PipelineConfig};
use smgcn_core::{
    adam_step, count_parameters, fit, generate_synthetic, DenseMatrix, Method, ModelParams,
    Multigraph, PropagatedFeatures, SparseMatrix, Splits, SyntheticSpec, TermSpec, TrainConfig,
};

fn small_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        n: 120,
        m: 3,
        classes: 3,
        p_in: 0.15,
        p_out: 0.02,
        noise: vec![0.0; 3],
        feature_dim: 8,
        feature_snr: 1.0,
        seed,
        view_seeds: None,
    }
}

fn small_config() -> TrainConfig {
    TrainConfig {
        learning_rates: vec![0.01],
        weight_decays: vec![1e-4],
        hidden: 8,
        epochs: 40,
        patience: 10,
        ..TrainConfig::default()
    }
}

#[test]
fn gradients_match_central_differences() {
    for method in Method::ALL {
        for seed in 0..5 {
            let inst = grad_instance(method, 20, 3, 8, 4, 3, 2, seed);
            let err = gradient_error(&inst.features, &inst.params, &inst.labels, 1e-3, 1e-5);
            assert!(err < 1e-5, "{method} seed {seed}: {err}");
        }
    }
}

#[test]
fn small_steps_descend() {
    let mut descents = 0;
    for seed in 0..100 {
        let inst = grad_instance(Method::Smgcn, 20, 3, 8, 4, 3, 2, 1000 + seed);
        let mut p = inst.params.clone();
        let mut losses = Vec::new();
        for _ in 0..=10 {
            let (loss, grads) = loss_and_grad_dense(&inst.features, &p, &inst.labels, 0.0).unwrap();
            losses.push(loss);
            adam_step(&mut p, &grads, 1e-3).unwrap();
        }
        if losses.windows(2).all(|w| w[1] < w[0]) {
            descents += 1;
        }
    }
    assert!(descents >= 95, "{descents}/100");
}

#[test]
fn adam_is_deterministic() {
    let inst = grad_instance(Method::Mgcn, 20, 3, 8, 4, 3, 2, 7);
    let run = || {
        let mut p = inst.params.clone();
        for _ in 0..100 {
            let (_, g) = loss_and_grad_dense(&inst.features, &p, &inst.labels, 1e-4).unwrap();
            adam_step(&mut p, &g, 1e-2).unwrap();
        }
        p
    };
    let a = run();
    let b = run();
    assert_eq!(a, b);
    assert_eq!(a.adam.step, 100);
}

#[test]
fn adam_rejects_non_finite_gradients() {
    let inst = grad_instance(Method::Mgcn, 20, 3, 8, 4, 3, 1, 8);
    let (_, mut g) = loss_and_grad_dense(&inst.features, &inst.params, &inst.labels, 0.0).unwrap();
    g.bias[0] = f64::NAN;
    let mut p = inst.params.clone();
    assert!(adam_step(&mut p, &g, 1e-2).is_err());
    assert_eq!(p, inst.params);
}

#[test]
fn separable_data_is_fit_exactly() {
    // two isolated cliques with one-hot features
    let n = 20;
    let edges: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter(|&(i, j)| (i < 10) == (j < 10))
        .collect();
    let view = SparseMatrix::from_edges(n, &edges).unwrap();
    let labels: Vec<usize> = (0..n).map(|i| usize::from(i >= 10)).collect();
    let x = DenseMatrix::from_fn(n, 2, |i, k| if k == labels[i] { 1.0 } else { 0.0 });
    let g = Multigraph::new(vec![view.clone(), view], x, labels.clone()).unwrap();
    let pf = prepare(&g, &PipelineConfig::new(Method::Smgcn, 2))
        .unwrap()
        .features;
    let mut r = rng(3);
    let mut p = ModelParams::init(Method::Smgcn, pf.len(), 2, 4, 2, &mut r);
    for _ in 0..300 {
        let (_, grads) = loss_and_grad_dense(&pf, &p, &labels, 0.0).unwrap();
        adam_step(&mut p, &grads, 0.05).unwrap();
    }
    assert_eq!(accuracy(&predict(&pf, &p).unwrap(), &labels), 1.0);
}

#[test]
fn single_cell_grid_equals_stream_zero_run() {
    let g = generate_synthetic(&small_spec(5)).unwrap();
    let pf = prepare(&g, &PipelineConfig::new(Method::Smgcn, 2))
        .unwrap()
        .features;
    let cfg = TrainConfig {
        order: 2,
        ..small_config()
    };
    let fitted = fit(&pf, &g, Method::Smgcn, &cfg).unwrap();
    let data = TrainData::prepare(&pf, &g, &cfg).unwrap();
    let run = train_run(&data, Method::Smgcn, 0.01, 1e-4, &cfg, 0).unwrap();
    assert_eq!(fitted.params, run.params);
    assert_eq!(fitted.report.best, run.cell);
    assert_eq!(fitted.report.cells, vec![run.cell]);
}

#[test]
fn fit_is_reproducible_and_seed_keeps_the_schema() {
    let g = generate_synthetic(&small_spec(6)).unwrap();
    let pf = prepare(&g, &PipelineConfig::new(Method::Mgcn, 2))
        .unwrap()
        .features;
    let cfg = TrainConfig {
        order: 2,
        learning_rates: vec![0.01, 0.001],
        ..small_config()
    };
    let a = fit(&pf, &g, Method::Mgcn, &cfg).unwrap();
    let b = fit(&pf, &g, Method::Mgcn, &cfg).unwrap();
    assert_eq!(a.report, b.report);
    assert_eq!(a.params, b.params);

    let c = fit(&pf, &g, Method::Mgcn, &TrainConfig { seed: 99, ..cfg }).unwrap();
    let keys = |r: &smgcn_core::model::FitReport| {
        let v = serde_json::to_value(r).unwrap();
        v.as_object().unwrap().keys().cloned().collect::<Vec<_>>()
    };
    assert_eq!(keys(&a.report), keys(&c.report));
    assert_eq!(c.report.cells.len(), 2);
    assert_eq!(
        a.report.train_nodes + a.report.val_nodes,
        g.splits().train_indices().len()
    );
}

#[test]
fn grid_winner_has_best_validation_accuracy() {
    let g = generate_synthetic(&small_spec(8)).unwrap();
    let pf = prepare(&g, &PipelineConfig::new(Method::Smgcn, 2))
        .unwrap()
        .features;
    let cfg = TrainConfig {
        order: 2,
        learning_rates: vec![0.1, 0.01],
        weight_decays: vec![0.0, 1e-2],
        ..small_config()
    };
    let out = fit(&pf, &g, Method::Smgcn, &cfg).unwrap();
    let best = out
        .report
        .cells
        .iter()
        .map(|c| c.val_acc)
        .fold(0.0, f64::max);
    assert_eq!(out.report.best.val_acc, best);
    assert_eq!(out.report.cells.len(), 4);
    let order: Vec<(f64, f64)> = out.report.cells.iter().map(|c| (c.lr, c.wd)).collect();
    assert_eq!(
        order,
        vec![(0.1, 0.0), (0.1, 1e-2), (0.01, 0.0), (0.01, 1e-2)]
    );
}

#[test]
fn parameter_count_matches_the_formula() {
    for method in Method::ALL {
        for k in 1..=3 {
            let m = 3;
            let report = count_parameters(method, m, k, 10, 6, 4).unwrap();
            let terms = smgcn_core::propagation::enumerate_terms(method, m, k).unwrap();
            let p = ModelParams::zeros(method, terms.len(), 10, 6, 4);
            assert_eq!(p.parameter_count(), report.total, "{method} K={k}");
            assert_eq!(report.term_count, terms.len());
        }
    }
}

#[test]
fn mismatched_shapes_are_rejected() {
    let inst = grad_instance(Method::Smgcn, 20, 3, 8, 4, 3, 2, 9);
    let fewer = PropagatedFeatures::new(
        vec![TermSpec::identity(Method::Smgcn)],
        vec![inst.features.features()[0].clone()],
    )
    .unwrap();
    assert!(loss_and_grad_dense(&fewer, &inst.params, &inst.labels, 0.0).is_err());
    let bad_labels = vec![7; 20];
    assert!(loss_and_grad_dense(&inst.features, &inst.params, &bad_labels, 0.0).is_err());
}

#[test]
fn missing_training_class_is_a_warning() {
    let g = generate_synthetic(&small_spec(10)).unwrap();
    let n = g.n();
    let mut splits = Splits::empty(n);
    for i in 0..n {
        // class 2 never appears in train
        if g.labels()[i] == 2 {
            splits.test[i] = true;
        } else {
            splits.train[i] = true;
        }
    }
    let g = g.with_splits(splits).unwrap();
    let pf = prepare(&g, &PipelineConfig::new(Method::Mgcn, 1))
        .unwrap()
        .features;
    let out = fit(
        &pf,
        &g,
        Method::Mgcn,
        &TrainConfig {
            order: 1,
            ..small_config()
        },
    )
    .unwrap();
    assert!(out.report.warnings.iter().any(|w| w.contains("class 2")));
}

#[test]
fn metric_bounds_and_invariances() {
    let mut r = rng(40);
    for _ in 0..500 {
        let n = r.random_range(1..40);
        let c = r.random_range(1..5);
        let a: Vec<usize> = (0..n).map(|_| r.random_range(0..c)).collect();
        let b: Vec<usize> = (0..n).map(|_| r.random_range(0..c)).collect();
        for v in [accuracy(&a, &b), macro_f1(&a, &b), nmi(&a, &b)] {
            assert!((0.0..=1.0).contains(&v));
        }
        let distinct = a.iter().collect::<std::collections::BTreeSet<_>>().len();
        if distinct > 1 {
            assert!((nmi(&a, &a) - 1.0).abs() < 1e-12);
        }
        // relabel b through a permutation of class ids
        let perm: Vec<usize> = (0..c).rev().collect();
        let pb: Vec<usize> = b.iter().map(|&x| perm[x]).collect();
        assert!((nmi(&a, &b) - nmi(&a, &pb)).abs() < 1e-12);
        assert!((nmi(&a, &b) - nmi(&b, &a)).abs() < 1e-12);
        assert_eq!(accuracy(&a, &a), 1.0);
    }
}

#[test]
fn metric_worked_examples() {
    let truth = [0, 0, 1, 1];
    let pred = [0, 1, 0, 1];
    assert!((accuracy(&pred, &truth) - 0.5).abs() < 1e-12);
    assert!((macro_f1(&pred, &truth) - 0.5).abs() < 1e-12);
    assert!(nmi(&pred, &truth).abs() < 1e-9);
    assert_eq!(nmi(&[1, 1, 1], &[0, 0, 0]), 0.0);
    assert!((nmi(&[0, 0, 1, 1], &[1, 1, 0, 0]) - 1.0).abs() < 1e-9);
}
