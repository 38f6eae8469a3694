//! One multigraph convolution followed by a linear classifier, trained with
//! hand-derived gradients and Adam over precomputed propagated features.
//!
//! For the summing methods the embedding is `Z = ReLU(Σ_i F_i W_i)` where
//! `F_i` is the i-th propagated block. P-GCN instead computes one
//! `H_v = F_v W_v` per view and pools them element-wise into
//! `[min_v H_v, max_v H_v, mean_v H_v]` before the ReLU. Logits are
//! `Z W_cls + b` in both cases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Multigraph;
use crate::dense::{gemm, DenseMatrix};
use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, Metrics};
use crate::propagation::{embedding_width, Method, PropagatedFeatures};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// RNG stream reserved for the validation carve-out; grid cell `i` uses stream `i`.
const VAL_SPLIT_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub step: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub method: Method,
    /// One `d0 × d1` projection per term.
    pub projections: Vec<DenseMatrix>,
    /// `width × classes`, width being `d1` or `3·d1` for P-GCN.
    pub classifier: DenseMatrix,
    pub bias: Vec<f64>,
    pub adam: AdamState,
}

/// Gradients with the same layout as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub projections: Vec<DenseMatrix>,
    pub classifier: DenseMatrix,
    pub bias: Vec<f64>,
}

impl Gradients {
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.projections.iter().map(DenseMatrix::as_slice).collect();
        out.push(self.classifier.as_slice());
        out.push(&self.bias);
        out
    }
}

fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-limit..limit))
}

impl ModelParams {
    pub fn zeros(method: Method, terms: usize, d0: usize, d1: usize, classes: usize) -> Self {
        let mut p = Self {
            method,
            projections: vec![DenseMatrix::zeros(d0, d1); terms],
            classifier: DenseMatrix::zeros(embedding_width(method, d1), classes),
            bias: vec![0.0; classes],
            adam: AdamState::default(),
        };
        p.reset_adam();
        p
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(
        method: Method,
        terms: usize,
        d0: usize,
        d1: usize,
        classes: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let projections = (0..terms).map(|_| glorot(d0, d1, rng)).collect();
        let width = embedding_width(method, d1);
        let mut p = Self {
            method,
            projections,
            classifier: glorot(width, classes, rng),
            bias: vec![0.0; classes],
            adam: AdamState::default(),
        };
        p.reset_adam();
        p
    }

    pub fn reset_adam(&mut self) {
        let shapes: Vec<usize> = self.tensors().iter().map(|t| t.len()).collect();
        self.adam = AdamState {
            step: 0,
            first: shapes.iter().map(|&l| vec![0.0; l]).collect(),
            second: shapes.iter().map(|&l| vec![0.0; l]).collect(),
        };
    }

    pub fn hidden(&self) -> usize {
        self.projections.first().map_or(0, DenseMatrix::cols)
    }

    pub fn classes(&self) -> usize {
        self.bias.len()
    }

    /// Parameter tensors in a fixed order: projections, classifier, bias.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.projections.iter().map(DenseMatrix::as_slice).collect();
        out.push(self.classifier.as_slice());
        out.push(&self.bias);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self
            .projections
            .iter_mut()
            .map(DenseMatrix::as_mut_slice)
            .collect();
        out.push(self.classifier.as_mut_slice());
        out.push(&mut self.bias);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn check_shapes(&self, pf: &PropagatedFeatures) -> Result<()> {
        let d0 = pf.dim();
        let d1 = self.hidden();
        if self.projections.len() != pf.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} projections for {} terms",
                self.projections.len(),
                pf.len()
            )));
        }
        if self.projections.iter().any(|w| w.shape() != (d0, d1)) {
            return Err(Error::DimensionMismatch(format!(
                "projections must be {d0}x{d1}"
            )));
        }
        if self.classifier.shape() != (embedding_width(self.method, d1), self.classes()) {
            return Err(Error::DimensionMismatch(format!(
                "classifier is {:?}, expected {}x{}",
                self.classifier.shape(),
                embedding_width(self.method, d1),
                self.classes()
            )));
        }
        Ok(())
    }
}

/// Intermediate values kept for the backward pass.
struct ForwardCache {
    /// Per-view pre-pooling blocks (P-GCN only).
    per_view: Vec<DenseMatrix>,
    /// Pre-activation embedding.
    pre: DenseMatrix,
    z: DenseMatrix,
    logits: DenseMatrix,
}

fn forward_cached(pf: &PropagatedFeatures, params: &ModelParams) -> Result<ForwardCache> {
    params.check_shapes(pf)?;
    let rows = pf.n();
    let d1 = params.hidden();
    let (per_view, pre) = match params.method {
        Method::Pgcn => {
            let per_view = pf
                .features()
                .iter()
                .zip(&params.projections)
                .map(|(f, w)| f.matmul(w))
                .collect::<Result<Vec<_>>>()?;
            let m = per_view.len() as f64;
            let mut pooled = DenseMatrix::zeros(rows, 3 * d1);
            for r in 0..rows {
                for c in 0..d1 {
                    let vals = per_view.iter().map(|h| h[(r, c)]);
                    let min = vals.clone().fold(f64::INFINITY, f64::min);
                    let max = vals.clone().fold(f64::NEG_INFINITY, f64::max);
                    let mean = vals.sum::<f64>() / m;
                    pooled[(r, c)] = min;
                    pooled[(r, d1 + c)] = max;
                    pooled[(r, 2 * d1 + c)] = mean;
                }
            }
            (per_view, pooled)
        }
        _ => {
            let mut h = DenseMatrix::zeros(rows, d1);
            for (f, w) in pf.features().iter().zip(&params.projections) {
                gemm(1.0, f, false, w, false, 1.0, &mut h)?;
            }
            (Vec::new(), h)
        }
    };
    let mut z = pre.clone();
    z.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
    let mut logits = z.matmul(&params.classifier)?;
    for r in 0..rows {
        for (l, b) in logits.row_mut(r).iter_mut().zip(&params.bias) {
            *l += b;
        }
    }
    Ok(ForwardCache {
        per_view,
        pre,
        z,
        logits,
    })
}

/// Returns the embedding `Z` and the logits.
pub fn forward(
    pf: &PropagatedFeatures,
    params: &ModelParams,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let c = forward_cached(pf, params)?;
    Ok((c.z, c.logits))
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn predict(pf: &PropagatedFeatures, params: &ModelParams) -> Result<Vec<usize>> {
    let (_, logits) = forward(pf, params)?;
    Ok((0..logits.rows()).map(|r| argmax(logits.row(r))).collect())
}

/// Mean softmax cross-entropy over the masked nodes plus
/// `(weight_decay / 2) · Σ ‖W‖²` over projections and classifier, with its
/// exact gradient.
pub fn loss_and_grad(
    pf: &PropagatedFeatures,
    params: &ModelParams,
    labels: &[usize],
    mask: &[bool],
    weight_decay: f64,
) -> Result<(f64, Gradients)> {
    if mask.len() != pf.n() || labels.len() != pf.n() {
        return Err(Error::DimensionMismatch(
            "mask and labels must cover every node".into(),
        ));
    }
    let rows: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    if rows.is_empty() {
        return Err(Error::InvalidConfig("loss mask selects no nodes".into()));
    }
    let sub = pf.select_rows(&rows);
    let sub_labels: Vec<usize> = rows.iter().map(|&i| labels[i]).collect();
    loss_and_grad_dense(&sub, params, &sub_labels, weight_decay)
}

/// [`loss_and_grad`] with every row of `pf` selected.
pub fn loss_and_grad_dense(
    pf: &PropagatedFeatures,
    params: &ModelParams,
    labels: &[usize],
    weight_decay: f64,
) -> Result<(f64, Gradients)> {
    let rows = pf.n();
    if rows == 0 || labels.len() != rows {
        return Err(Error::InvalidConfig(
            "loss needs at least one labeled row".into(),
        ));
    }
    let classes = params.classes();
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidConfig(format!(
            "label {bad} outside {classes} classes"
        )));
    }
    let cache = forward_cached(pf, params)?;
    let d1 = params.hidden();

    let mut loss = 0.0;
    let mut dlogits = DenseMatrix::zeros(rows, classes);
    let inv = 1.0 / rows as f64;
    for r in 0..rows {
        let l = cache.logits.row(r);
        let max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = l.iter().map(|v| (v - max).exp()).sum();
        let log_sum = max + sum.ln();
        loss += log_sum - l[labels[r]];
        let d = dlogits.row_mut(r);
        for (k, dv) in d.iter_mut().enumerate() {
            *dv = (l[k] - log_sum).exp() * inv;
        }
        d[labels[r]] -= inv;
    }
    loss *= inv;
    let penalty: f64 = params
        .projections
        .iter()
        .map(DenseMatrix::squared_norm)
        .sum::<f64>()
        + params.classifier.squared_norm();
    loss += 0.5 * weight_decay * penalty;

    let mut g_cls = params.classifier.clone();
    gemm(
        1.0,
        &cache.z,
        true,
        &dlogits,
        false,
        weight_decay,
        &mut g_cls,
    )?;
    let mut g_bias = vec![0.0; classes];
    for r in 0..rows {
        for (g, d) in g_bias.iter_mut().zip(dlogits.row(r)) {
            *g += d;
        }
    }

    let mut dpre = dlogits.matmul_t(&params.classifier)?;
    for (d, &p) in dpre.as_mut_slice().iter_mut().zip(cache.pre.as_slice()) {
        if p <= 0.0 {
            *d = 0.0;
        }
    }

    let mut g_proj = Vec::with_capacity(params.projections.len());
    match params.method {
        Method::Pgcn => {
            let m = cache.per_view.len();
            let mut dviews = vec![DenseMatrix::zeros(rows, d1); m];
            for r in 0..rows {
                for c in 0..d1 {
                    let (mut amin, mut amax) = (0, 0);
                    for v in 1..m {
                        let x = cache.per_view[v][(r, c)];
                        if x < cache.per_view[amin][(r, c)] {
                            amin = v;
                        }
                        if x > cache.per_view[amax][(r, c)] {
                            amax = v;
                        }
                    }
                    dviews[amin][(r, c)] += dpre[(r, c)];
                    dviews[amax][(r, c)] += dpre[(r, d1 + c)];
                    let share = dpre[(r, 2 * d1 + c)] / m as f64;
                    for dv in dviews.iter_mut() {
                        dv[(r, c)] += share;
                    }
                }
            }
            for ((f, w), dh) in pf.features().iter().zip(&params.projections).zip(&dviews) {
                let mut g = w.clone();
                gemm(1.0, f, true, dh, false, weight_decay, &mut g)?;
                g_proj.push(g);
            }
        }
        _ => {
            for (f, w) in pf.features().iter().zip(&params.projections) {
                let mut g = w.clone();
                gemm(1.0, f, true, &dpre, false, weight_decay, &mut g)?;
                g_proj.push(g);
            }
        }
    }

    Ok((
        loss,
        Gradients {
            projections: g_proj,
            classifier: g_cls,
            bias: g_bias,
        },
    ))
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut ModelParams, grads: &Gradients, lr: f64) -> Result<()> {
    let g_tensors = grads.tensors();
    if g_tensors.len() != params.adam.first.len()
        || g_tensors
            .iter()
            .zip(&params.adam.first)
            .any(|(g, m)| g.len() != m.len())
    {
        return Err(Error::DimensionMismatch(
            "gradient layout differs from parameters".into(),
        ));
    }
    if g_tensors.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite("gradient".into()));
    }
    let step = params.adam.step + 1;
    let c1 = 1.0 - ADAM_BETA1.powi(step as i32);
    let c2 = 1.0 - ADAM_BETA2.powi(step as i32);
    let mut first = std::mem::take(&mut params.adam.first);
    let mut second = std::mem::take(&mut params.adam.second);
    for (((p, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(g_tensors)
        .zip(first.iter_mut())
        .zip(second.iter_mut())
    {
        for i in 0..p.len() {
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    params.adam = AdamState {
        step,
        first,
        second,
    };
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rates: Vec<f64>,
    pub weight_decays: Vec<f64>,
    pub hidden: usize,
    /// Polynomial order the features were propagated with.
    pub order: usize,
    pub epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    /// Share of the training nodes held out for validation.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rates: vec![0.1, 0.01, 0.001],
            weight_decays: vec![0.0, 1e-5, 1e-4, 1e-3, 1e-2],
            hidden: 128,
            order: 3,
            epochs: 300,
            patience: 50,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rates.is_empty() || self.weight_decays.is_empty() {
            return Err(Error::InvalidConfig(
                "hyper-parameter grids must be non-empty".into(),
            ));
        }
        if self.epochs == 0 || self.hidden == 0 || self.order == 0 {
            return Err(Error::InvalidConfig(
                "epochs, hidden and order must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::InvalidConfig(
                "val_fraction must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Row subsets and labels fixed for the whole grid search.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub train_rows: Vec<usize>,
    pub val_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    pub classes: usize,
    pub warnings: Vec<String>,
    train: PropagatedFeatures,
    train_labels: Vec<usize>,
    val: PropagatedFeatures,
    val_labels: Vec<usize>,
}

/// Holds out `fraction` of `train` for validation, stratified by class
/// unless some class has fewer than 10 training nodes.
pub fn carve_validation(
    labels: &[usize],
    train: &[usize],
    fraction: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, Vec<usize>) {
    use rand::seq::SliceRandom;
    let classes = train.iter().map(|&i| labels[i] + 1).max().unwrap_or(0);
    let groups: Vec<Vec<usize>> = (0..classes)
        .map(|c| train.iter().copied().filter(|&i| labels[i] == c).collect())
        .filter(|g: &Vec<usize>| !g.is_empty())
        .collect();
    let stratify = groups.iter().all(|g| g.len() >= 10);
    let mut held = Vec::new();
    if stratify {
        for mut g in groups {
            g.shuffle(rng);
            let k = (fraction * g.len() as f64).round() as usize;
            held.extend_from_slice(&g[..k]);
        }
    } else {
        let mut all = train.to_vec();
        all.shuffle(rng);
        let k = (fraction * all.len() as f64).round() as usize;
        held.extend_from_slice(&all[..k]);
    }
    held.sort_unstable();
    let kept = train
        .iter()
        .copied()
        .filter(|i| held.binary_search(i).is_err())
        .collect();
    (kept, held)
}

impl TrainData {
    pub fn prepare(pf: &PropagatedFeatures, g: &Multigraph, cfg: &TrainConfig) -> Result<Self> {
        if pf.n() != g.n() {
            return Err(Error::DimensionMismatch(format!(
                "propagated features cover {} nodes, graph has {}",
                pf.n(),
                g.n()
            )));
        }
        let labels = g.labels();
        let classes = g.num_classes();
        let splits = g.splits();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(VAL_SPLIT_STREAM);
        let (train_rows, val_rows) =
            carve_validation(labels, &splits.train_indices(), cfg.val_fraction, &mut rng);
        if train_rows.is_empty() {
            return Err(Error::InvalidConfig(
                "no training nodes after the validation carve-out".into(),
            ));
        }
        let mut warnings = Vec::new();
        for c in 0..classes {
            if !train_rows.iter().any(|&i| labels[i] == c) {
                warnings.push(format!("class {c} has no training nodes"));
            }
        }
        if val_rows.is_empty() {
            warnings.push("validation split is empty; checkpoints use the final epoch".into());
        }
        let pick = |rows: &[usize]| rows.iter().map(|&i| labels[i]).collect::<Vec<_>>();
        Ok(Self {
            train: pf.select_rows(&train_rows),
            train_labels: pick(&train_rows),
            val: pf.select_rows(&val_rows),
            val_labels: pick(&val_rows),
            test_rows: splits.test_indices(),
            classes,
            warnings,
            train_rows,
            val_rows,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub lr: f64,
    pub wd: f64,
    pub val_acc: f64,
    pub epochs_run: usize,
    pub best_epoch: usize,
}

pub struct RunOutcome {
    pub params: ModelParams,
    pub cell: CellReport,
}

/// Trains one grid cell from a fresh initialization drawn from RNG stream
/// `stream` of `cfg.seed`, keeping the checkpoint with the best validation
/// accuracy.
pub fn train_run(
    data: &TrainData,
    method: Method,
    lr: f64,
    wd: f64,
    cfg: &TrainConfig,
    stream: u64,
) -> Result<RunOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let mut params = ModelParams::init(
        method,
        data.train.len(),
        data.train.dim(),
        cfg.hidden,
        data.classes,
        &mut rng,
    );
    let val_acc = |p: &ModelParams| -> Result<f64> {
        if data.val_labels.is_empty() {
            return Ok(0.0);
        }
        let pred = predict(&data.val, p)?;
        Ok(crate::metrics::accuracy(&pred, &data.val_labels))
    };
    let mut best = params.clone();
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut epochs_run = 0;
    for epoch in 1..=cfg.epochs {
        let (_, grads) = loss_and_grad_dense(&data.train, &params, &data.train_labels, wd)?;
        adam_step(&mut params, &grads, lr)?;
        epochs_run = epoch;
        let acc = val_acc(&params)?;
        if acc > best_acc || data.val_labels.is_empty() {
            best_acc = acc;
            best_epoch = epoch;
            best.clone_from(&params);
        } else if epoch - best_epoch >= cfg.patience {
            break;
        }
    }
    Ok(RunOutcome {
        params: best,
        cell: CellReport {
            lr,
            wd,
            val_acc: best_acc.max(0.0),
            epochs_run,
            best_epoch,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub method: Method,
    #[serde(rename = "K")]
    pub order: usize,
    pub seed: u64,
    pub train_nodes: usize,
    pub val_nodes: usize,
    pub test_nodes: usize,
    pub cells: Vec<CellReport>,
    pub best: CellReport,
    pub test: Option<Metrics>,
    pub warnings: Vec<String>,
}

pub struct FitOutcome {
    pub params: ModelParams,
    pub report: FitReport,
}

/// Grid search over learning rate and weight decay. The winner has the best
/// validation accuracy, ties going to the lower weight decay, then the lower
/// learning rate. Test metrics are computed on the graph's test nodes.
pub fn fit(
    pf: &PropagatedFeatures,
    g: &Multigraph,
    method: Method,
    cfg: &TrainConfig,
) -> Result<FitOutcome> {
    cfg.validate()?;
    let data = TrainData::prepare(pf, g, cfg)?;
    let mut cells = Vec::new();
    let mut best: Option<RunOutcome> = None;
    let mut stream = 0u64;
    for &lr in &cfg.learning_rates {
        for &wd in &cfg.weight_decays {
            let run = train_run(&data, method, lr, wd, cfg, stream)?;
            stream += 1;
            cells.push(run.cell.clone());
            let better = match &best {
                None => true,
                Some(b) => {
                    let (x, y) = (&run.cell, &b.cell);
                    x.val_acc > y.val_acc
                        || (x.val_acc == y.val_acc
                            && (x.wd < y.wd || (x.wd == y.wd && x.lr < y.lr)))
                }
            };
            if better {
                best = Some(run);
            }
        }
    }
    let best = best.expect("grid is non-empty");

    let test = if data.test_rows.is_empty() {
        None
    } else {
        let pred = predict(&pf.select_rows(&data.test_rows), &best.params)?;
        let truth: Vec<usize> = data.test_rows.iter().map(|&i| g.labels()[i]).collect();
        Some(compute_metrics(&pred, &truth)?)
    };

    Ok(FitOutcome {
        report: FitReport {
            method,
            order: cfg.order,
            seed: cfg.seed,
            train_nodes: data.train_rows.len(),
            val_nodes: data.val_rows.len(),
            test_nodes: data.test_rows.len(),
            cells,
            best: best.cell,
            test,
            warnings: data.warnings,
        },
        params: best.params,
    })
}
