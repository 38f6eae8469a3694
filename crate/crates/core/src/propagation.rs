//! Polynomial terms for the four multigraph convolutions and their
//! precomputation against the node features.
//!
//! Each method is a sum over operator products `P` with one projection per
//! product. Because the model is linear in those projections, every `P · X`
//! is computed once up front; training never touches the graph again.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Multigraph;
use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::sparse::{SparseMatrix, DEFAULT_NNZ_CAP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Per-view first-order convolutions pooled by min, max and mean.
    Pgcn,
    /// Identity plus every power of every single view.
    Mgcn,
    /// Identity plus every ordered view sequence up to length K.
    Mimo,
    /// Identity plus view powers interleaved with the credible topologies.
    Smgcn,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Pgcn, Method::Mgcn, Method::Mimo, Method::Smgcn];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Pgcn => "pgcn",
            Method::Mgcn => "mgcn",
            Method::Mimo => "mimo",
            Method::Smgcn => "smgcn",
        }
    }

    /// Whether the method needs the extracted topologies.
    pub fn uses_topologies(&self) -> bool {
        matches!(self, Method::Smgcn)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "pgcn" => Ok(Method::Pgcn),
            "mgcn" => Ok(Method::Mgcn),
            "mimo" | "mimogcn" => Ok(Method::Mimo),
            "smgcn" => Ok(Method::Smgcn),
            other => Err(Error::InvalidConfig(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Operator {
    Identity,
    View(usize),
    EdgeTopology,
    SubgraphTopology,
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operator::Identity => f.write_str("I"),
            Operator::View(v) => write!(f, "A{v}"),
            Operator::EdgeTopology => f.write_str("E"),
            Operator::SubgraphTopology => f.write_str("S"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Factor {
    pub op: Operator,
    pub power: usize,
}

impl Factor {
    pub fn new(op: Operator, power: usize) -> Self {
        Self { op, power }
    }
}

/// One operator product, written left to right; it is applied to the
/// features right to left.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TermSpec {
    pub method: Method,
    pub factors: Vec<Factor>,
}

impl TermSpec {
    pub fn identity(method: Method) -> Self {
        Self {
            method,
            factors: vec![Factor::new(Operator::Identity, 1)],
        }
    }

    /// Factors that actually act on the features.
    pub fn effective_factors(&self) -> impl Iterator<Item = &Factor> {
        self.factors
            .iter()
            .filter(|f| f.power > 0 && f.op != Operator::Identity)
    }

    pub fn is_identity(&self) -> bool {
        self.effective_factors().next().is_none()
    }

    /// Total polynomial degree.
    pub fn degree(&self) -> usize {
        self.effective_factors().map(|f| f.power).sum()
    }

    pub fn references(&self, op: Operator) -> bool {
        self.effective_factors().any(|f| f.op == op)
    }
}

impl fmt::Display for TermSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_identity() {
            return f.write_str("I");
        }
        for (i, factor) in self.effective_factors().enumerate() {
            if i > 0 {
                f.write_str("·")?;
            }
            write!(f, "{}", factor.op)?;
            if factor.power > 1 {
                write!(f, "^{}", factor.power)?;
            }
        }
        Ok(())
    }
}

/// Enumerates the terms of `method` over `m` views up to order `k`.
///
/// Orderings: identity first, then `(topology, view, power)` for SMGCN,
/// `(view, power)` for M-GCN, length-then-lexicographic view sequences for
/// MIMO, and one first-order term per view for P-GCN (which has no identity
/// term).
pub fn enumerate_terms(method: Method, m: usize, k: usize) -> Result<Vec<TermSpec>> {
    if m < 2 || k < 1 {
        return Err(Error::InvalidConfig(format!(
            "term enumeration needs m >= 2 and K >= 1, got m={m}, K={k}"
        )));
    }
    let term = |factors: Vec<Factor>| TermSpec { method, factors };
    let mut terms = Vec::new();
    match method {
        Method::Pgcn => {
            terms.extend((0..m).map(|v| term(vec![Factor::new(Operator::View(v), 1)])));
        }
        Method::Mgcn => {
            terms.push(TermSpec::identity(method));
            for v in 0..m {
                for p in 1..=k {
                    terms.push(term(vec![Factor::new(Operator::View(v), p)]));
                }
            }
        }
        Method::Mimo => {
            terms.push(TermSpec::identity(method));
            for len in 1..=k {
                let mut seq = vec![0usize; len];
                loop {
                    terms.push(term(
                        seq.iter()
                            .map(|&v| Factor::new(Operator::View(v), 1))
                            .collect(),
                    ));
                    // odometer increment, last position fastest
                    let mut pos = len;
                    while pos > 0 {
                        pos -= 1;
                        seq[pos] += 1;
                        if seq[pos] < m {
                            break;
                        }
                        seq[pos] = 0;
                    }
                    if seq.iter().all(|&v| v == 0) {
                        break;
                    }
                }
            }
        }
        Method::Smgcn => {
            terms.push(TermSpec::identity(method));
            for topo in [Operator::EdgeTopology, Operator::SubgraphTopology] {
                for v in 0..m {
                    for p in 1..=k {
                        terms.push(term(vec![
                            Factor::new(Operator::View(v), p),
                            Factor::new(topo, k - p),
                        ]));
                    }
                }
            }
        }
    }
    Ok(terms)
}

/// Drops terms whose effective operator product repeats an earlier one.
/// For SMGCN this collapses the two copies of each `(A^(v))^K`.
pub fn dedupe_terms(terms: Vec<TermSpec>) -> Vec<TermSpec> {
    let mut seen: Vec<Vec<Factor>> = Vec::new();
    terms
        .into_iter()
        .filter(|t| {
            let key: Vec<Factor> = t.effective_factors().copied().collect();
            if seen.contains(&key) {
                false
            } else {
                seen.push(key);
                true
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropagateOptions {
    /// Apply `D^{-1/2} M D^{-1/2}` to every view and topology before use.
    pub normalize: bool,
    /// Replace each term operator `P` by `(P + Pᵀ) / 2`.
    pub symmetrize: bool,
    /// Build each operator as an explicit sparse matrix before applying it.
    pub materialize: bool,
    pub nnz_cap: usize,
}

impl Default for PropagateOptions {
    fn default() -> Self {
        Self {
            normalize: true,
            symmetrize: false,
            materialize: false,
            nnz_cap: DEFAULT_NNZ_CAP,
        }
    }
}

/// The (optionally normalized) matrices terms refer to.
#[derive(Debug, Clone)]
pub struct OperatorSet {
    views: Vec<SparseMatrix>,
    edge: Option<SparseMatrix>,
    subgraph: Option<SparseMatrix>,
}

impl OperatorSet {
    pub fn new(
        g: &Multigraph,
        edge: Option<&SparseMatrix>,
        subgraph: Option<&SparseMatrix>,
        normalize: bool,
    ) -> Result<Self> {
        Self::from_matrices(g.views(), edge, subgraph, normalize)
    }

    pub fn from_matrices(
        views: &[SparseMatrix],
        edge: Option<&SparseMatrix>,
        subgraph: Option<&SparseMatrix>,
        normalize: bool,
    ) -> Result<Self> {
        let prep = |m: &SparseMatrix| -> Result<SparseMatrix> {
            if normalize {
                m.sym_normalize()
            } else {
                Ok(m.clone())
            }
        };
        Ok(Self {
            views: views.iter().map(prep).collect::<Result<_>>()?,
            edge: edge.map(prep).transpose()?,
            subgraph: subgraph.map(prep).transpose()?,
        })
    }

    pub fn get(&self, op: Operator) -> Result<&SparseMatrix> {
        match op {
            Operator::View(v) => self.views.get(v).ok_or_else(|| {
                Error::InvalidConfig(format!("view {v} out of range (m={})", self.views.len()))
            }),
            Operator::EdgeTopology => self
                .edge
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("edge topology not provided".into())),
            Operator::SubgraphTopology => self
                .subgraph
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("subgraph topology not provided".into())),
            Operator::Identity => Err(Error::InvalidConfig("identity has no matrix".into())),
        }
    }

    fn n(&self) -> usize {
        self.views.first().map_or(0, SparseMatrix::n)
    }

    /// Applies `term` to `x` with sparse-times-dense products, right to left.
    pub fn apply(&self, term: &TermSpec, x: &DenseMatrix, symmetrize: bool) -> Result<DenseMatrix> {
        let factors: Vec<&Factor> = term.effective_factors().collect();
        let mut y = x.clone();
        for f in factors.iter().rev() {
            let m = self.get(f.op)?;
            for _ in 0..f.power {
                y = m.mul_dense(&y)?;
            }
        }
        if !symmetrize {
            return Ok(y);
        }
        // Pᵀ = ... (F2ᵀ)^p2 (F1ᵀ)^p1, so F1ᵀ is applied first
        let mut yt = x.clone();
        for f in &factors {
            let mt = self.get(f.op)?.transpose();
            for _ in 0..f.power {
                yt = mt.mul_dense(&yt)?;
            }
        }
        y.add_assign(&yt)?;
        y.scale(0.5);
        Ok(y)
    }

    /// Builds the explicit operator of `term`, erroring once any intermediate
    /// product exceeds `nnz_cap` stored entries.
    pub fn materialize(
        &self,
        term: &TermSpec,
        symmetrize: bool,
        nnz_cap: usize,
    ) -> Result<SparseMatrix> {
        let mut p = SparseMatrix::identity(self.n());
        for f in term.effective_factors() {
            let m = self.get(f.op)?;
            for _ in 0..f.power {
                p = p.matmul_capped(m, nnz_cap)?;
            }
        }
        Ok(if symmetrize { p.symmetrize() } else { p })
    }
}

/// Precomputed `P · X` for every term, in term order.
#[derive(Debug, Clone)]
pub struct PropagatedFeatures {
    terms: Vec<TermSpec>,
    features: Vec<DenseMatrix>,
}

impl PropagatedFeatures {
    pub fn new(terms: Vec<TermSpec>, features: Vec<DenseMatrix>) -> Result<Self> {
        if terms.is_empty() || terms.len() != features.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} terms vs {} feature blocks",
                terms.len(),
                features.len()
            )));
        }
        let shape = features[0].shape();
        if features.iter().any(|f| f.shape() != shape) {
            return Err(Error::DimensionMismatch(
                "feature blocks differ in shape".into(),
            ));
        }
        Ok(Self { terms, features })
    }

    pub fn terms(&self) -> &[TermSpec] {
        &self.terms
    }

    pub fn features(&self) -> &[DenseMatrix] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn n(&self) -> usize {
        self.features[0].rows()
    }

    pub fn dim(&self) -> usize {
        self.features[0].cols()
    }

    /// Restricts every block to the listed nodes.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            terms: self.terms.clone(),
            features: self.features.iter().map(|f| f.select_rows(rows)).collect(),
        }
    }
}

/// Computes `P · X` for each term over the multigraph's features.
pub fn propagate(
    g: &Multigraph,
    edge: Option<&SparseMatrix>,
    subgraph: Option<&SparseMatrix>,
    terms: &[TermSpec],
    opts: &PropagateOptions,
) -> Result<PropagatedFeatures> {
    let ops = OperatorSet::new(g, edge, subgraph, opts.normalize)?;
    propagate_with(&ops, g.features(), terms, opts)
}

pub fn propagate_with(
    ops: &OperatorSet,
    x: &DenseMatrix,
    terms: &[TermSpec],
    opts: &PropagateOptions,
) -> Result<PropagatedFeatures> {
    let features = terms
        .iter()
        .map(|t| {
            let out = if opts.materialize {
                ops.materialize(t, opts.symmetrize, opts.nnz_cap)
                    .and_then(|p| p.mul_dense(x))
            } else {
                ops.apply(t, x, opts.symmetrize)
            };
            out.map_err(|e| Error::Term {
                term: t.to_string(),
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    PropagatedFeatures::new(terms.to_vec(), features)
}

/// Trainable parameter totals for one method and shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParameterReport {
    pub method: Method,
    pub m: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub d0: usize,
    pub d1: usize,
    pub classes: usize,
    pub term_count: usize,
    pub projection_params: usize,
    pub classifier_params: usize,
    pub bias_params: usize,
    pub total: usize,
}

/// Width of the embedding the classifier reads.
pub fn embedding_width(method: Method, d1: usize) -> usize {
    match method {
        Method::Pgcn => 3 * d1,
        _ => d1,
    }
}

pub fn count_parameters(
    method: Method,
    m: usize,
    k: usize,
    d0: usize,
    d1: usize,
    classes: usize,
) -> Result<ParameterReport> {
    let term_count = enumerate_terms(method, m, k)?.len();
    let projection_params = term_count * d0 * d1;
    let classifier_params = embedding_width(method, d1) * classes;
    Ok(ParameterReport {
        method,
        m,
        k,
        d0,
        d1,
        classes,
        term_count,
        projection_params,
        classifier_params,
        bias_params: classes,
        total: projection_params + classifier_params + classes,
    })
}
