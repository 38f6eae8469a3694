//! Glue from a loaded multigraph to propagated features for one method.

use crate::data::Multigraph;
use crate::error::Result;
use crate::propagation::{
    dedupe_terms, enumerate_terms, propagate, Method, PropagateOptions, PropagatedFeatures,
};
use crate::sparse::SparseMatrix;
use crate::topology::{extract_edge_topology, extract_subgraph_topology, VoteConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub method: Method,
    pub order: usize,
    pub vote: VoteConfig,
    pub propagate: PropagateOptions,
    pub dedupe: bool,
}

impl PipelineConfig {
    pub fn new(method: Method, order: usize) -> Self {
        Self {
            method,
            order,
            vote: VoteConfig::default(),
            propagate: PropagateOptions::default(),
            dedupe: false,
        }
    }
}

pub struct Prepared {
    /// Edge- and subgraph-level topologies, present for methods that use them.
    pub topologies: Option<(SparseMatrix, SparseMatrix)>,
    pub features: PropagatedFeatures,
}

pub fn prepare(g: &Multigraph, cfg: &PipelineConfig) -> Result<Prepared> {
    let mut terms = enumerate_terms(cfg.method, g.view_count(), cfg.order)?;
    if cfg.dedupe {
        terms = dedupe_terms(terms);
    }
    let topologies = if cfg.method.uses_topologies() {
        Some((
            extract_edge_topology(g, &cfg.vote)?,
            extract_subgraph_topology(g, &cfg.vote)?,
        ))
    } else {
        None
    };
    let (e, s) = match &topologies {
        Some((e, s)) => (Some(e), Some(s)),
        None => (None, None),
    };
    let features = propagate(g, e, s, &terms, &cfg.propagate)?;
    Ok(Prepared {
        topologies,
        features,
    })
}
