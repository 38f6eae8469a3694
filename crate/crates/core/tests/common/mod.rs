//! Dense straight-line reference implementations used as test oracles.
//! Nothing here calls into the sparse kernels it is checked against.
#![allow(dead_code, clippy::needless_range_loop, clippy::too_many_arguments)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smgcn_core::model::loss_and_grad_dense;
use smgcn_core::pipeline::{prepare, PipelineConfig};
use smgcn_core::{DenseMatrix, Method, ModelParams, Multigraph, PropagatedFeatures, SparseMatrix};

pub type Dense = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn zeros(n: usize) -> Dense {
    vec![vec![0.0; n]; n]
}

pub fn to_dense(m: &SparseMatrix) -> Dense {
    let n = m.n();
    let mut d = zeros(n);
    for (i, j, v) in m.iter() {
        d[i][j] = v;
    }
    d
}

pub fn to_sparse(d: &Dense) -> SparseMatrix {
    let n = d.len();
    SparseMatrix::from_dense(n, &d.concat()).unwrap()
}

pub fn mul(a: &Dense, b: &Dense) -> Dense {
    let n = a.len();
    let mut c = zeros(n);
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for l in 0..n {
                s += a[i][l] * b[l][j];
            }
            c[i][j] = s;
        }
    }
    c
}

pub fn mul_rect(a: &Dense, x: &Dense) -> Dense {
    let cols = x.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| {
            (0..cols)
                .map(|j| row.iter().zip(x).map(|(a, xr)| a * xr[j]).sum())
                .collect()
        })
        .collect()
}

pub fn transpose(a: &Dense) -> Dense {
    let n = a.len();
    (0..n).map(|i| (0..n).map(|j| a[j][i]).collect()).collect()
}

pub fn identity(n: usize) -> Dense {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

pub fn sym_normalize(a: &Dense) -> Dense {
    let n = a.len();
    let deg: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    let mut out = zeros(n);
    for i in 0..n {
        for j in 0..n {
            if deg[i] > 0.0 && deg[j] > 0.0 {
                out[i][j] = a[i][j] / (deg[i].sqrt() * deg[j].sqrt());
            }
        }
    }
    out
}

/// Random symmetric binary adjacency without self-loops.
pub fn random_graph(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Dense {
    let mut a = zeros(n);
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                a[i][j] = 1.0;
                a[j][i] = 1.0;
            }
        }
    }
    a
}

pub fn random_features(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Dense {
    (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

pub fn dense_matrix(d: &Dense) -> DenseMatrix {
    DenseMatrix::from_rows(d).unwrap()
}

/// e_ij = 1 iff i != j and at least `threshold` views have a_ij > 0.
pub fn vote(views: &[Dense], threshold: usize) -> Dense {
    let n = views[0].len();
    let mut e = zeros(n);
    for i in 0..n {
        for j in 0..n {
            let count = views.iter().filter(|v| v[i][j] > 0.0).count();
            if i != j && count >= threshold {
                e[i][j] = 1.0;
            }
        }
    }
    e
}

/// (A + I)² ∘ (A + I), written out as sums.
pub fn triangle(a: &Dense) -> Dense {
    let n = a.len();
    let closed: Dense = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| a[i][j] + if i == j { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();
    let mut out = zeros(n);
    for i in 0..n {
        for j in 0..n {
            let walks: f64 = (0..n).map(|l| closed[i][l] * closed[l][j]).sum();
            out[i][j] = walks * closed[i][j];
        }
    }
    out
}

/// First-nearest-neighbour graph with the smallest-index tie-break.
pub fn first_nn(s: &Dense) -> Dense {
    let n = s.len();
    let mut out = zeros(n);
    for i in 0..n {
        let mut best: Option<usize> = None;
        for j in 0..n {
            if j == i || s[i][j] <= 0.0 {
                continue;
            }
            if best.is_none_or(|b| s[i][j] > s[i][b]) {
                best = Some(j);
            }
        }
        if let Some(j) = best {
            out[i][j] = 1.0;
            out[j][i] = 1.0;
        }
    }
    out
}

pub fn edge_topology(views: &[Dense], threshold: usize) -> Dense {
    vote(views, threshold)
}

pub fn subgraph_topology(views: &[Dense], threshold: usize) -> Dense {
    let nn: Vec<Dense> = views.iter().map(|v| first_nn(&triangle(v))).collect();
    vote(&nn, threshold)
}

pub fn max_rel_err(a: &Dense, b: &Dense) -> f64 {
    let scale = a
        .iter()
        .flatten()
        .chain(b.iter().flatten())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-300);
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs() / scale)
        .fold(0.0, f64::max)
}

/// Spectral radius of a symmetric matrix by power iteration.
pub fn spectral_radius(a: &Dense, iters: usize) -> f64 {
    let n = a.len();
    if n == 0 {
        return 0.0;
    }
    // start from a vector with no special structure
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64 * 0.37).sin()).collect();
    let mut lambda = 0.0;
    for _ in 0..iters {
        // iterate on A² so negative dominant eigenvalues converge too
        let w: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| a[i][j] * v[j]).sum())
            .collect();
        let w2: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| a[i][j] * w[j]).sum())
            .collect();
        let norm = w2.iter().map(|x| x * x).sum::<f64>().sqrt();
        let vnorm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = (norm / vnorm).sqrt();
        v = w2.iter().map(|x| x / norm).collect();
    }
    lambda
}

/// Smallest distance of any pre-activation, or any min/max pooling
/// decision, from a kink. Finite differences are meaningless near one.
pub fn kink_margin(pf: &PropagatedFeatures, params: &ModelParams) -> f64 {
    let blocks: Vec<DenseMatrix> = pf
        .features()
        .iter()
        .zip(&params.projections)
        .map(|(f, w)| f.matmul(w).unwrap())
        .collect();
    let mut margin = f64::INFINITY;
    for r in 0..pf.n() {
        for c in 0..params.hidden() {
            let mut vals: Vec<f64> = blocks.iter().map(|b| b[(r, c)]).collect();
            let sum: f64 = vals.iter().sum();
            if params.method == Method::Pgcn {
                vals.sort_by(f64::total_cmp);
                let k = vals.len();
                margin = margin
                    .min(vals[0].abs())
                    .min(vals[k - 1].abs())
                    .min((sum / k as f64).abs());
                if k > 1 {
                    margin = margin.min(vals[1] - vals[0]).min(vals[k - 1] - vals[k - 2]);
                }
            } else {
                margin = margin.min(sum.abs());
            }
        }
    }
    margin
}

/// Largest component-wise relative error between the analytic gradient and
/// central differences, with the denominator floored at 1e-6.
pub fn gradient_error(
    pf: &PropagatedFeatures,
    params: &ModelParams,
    labels: &[usize],
    wd: f64,
    h: f64,
) -> f64 {
    let (_, grads) = loss_and_grad_dense(pf, params, labels, wd).unwrap();
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for (t, g) in analytic.iter().enumerate() {
        for (i, &a) in g.iter().enumerate() {
            let orig = probe.tensors()[t][i];
            probe.tensors_mut()[t][i] = orig + h;
            let (up, _) = loss_and_grad_dense(pf, &probe, labels, wd).unwrap();
            probe.tensors_mut()[t][i] = orig - h;
            let (down, _) = loss_and_grad_dense(pf, &probe, labels, wd).unwrap();
            probe.tensors_mut()[t][i] = orig;
            let num = (up - down) / (2.0 * h);
            worst = worst.max((a - num).abs() / a.abs().max(num.abs()).max(1e-6));
        }
    }
    worst
}

pub struct GradInstance {
    pub features: PropagatedFeatures,
    pub params: ModelParams,
    pub labels: Vec<usize>,
}

/// A random multigraph propagated for `method`, with Glorot parameters.
/// Redraws until every pre-activation sits at least `1e-3` from a kink.
pub fn grad_instance(
    method: Method,
    n: usize,
    m: usize,
    d0: usize,
    d1: usize,
    c: usize,
    k: usize,
    seed: u64,
) -> GradInstance {
    let mut r = rng(seed);
    loop {
        let views: Vec<SparseMatrix> = (0..m)
            .map(|_| to_sparse(&random_graph(n, 0.3, &mut r)))
            .collect();
        let x = dense_matrix(&random_features(n, d0, &mut r));
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..c)).collect();
        let g = Multigraph::new(views, x, labels.clone()).unwrap();
        let mut cfg = PipelineConfig::new(method, k);
        cfg.propagate.normalize = true;
        let features = prepare(&g, &cfg).unwrap().features;
        let params = ModelParams::init(method, features.len(), d0, d1, c, &mut r);
        if kink_margin(&features, &params) > 1e-3 {
            return GradInstance {
                features,
                params,
                labels,
            };
        }
    }
}
