//! Simple multigraph convolution.
//!
//! Credible cross-view topologies are voted out of the raw views
//! ([`topology`]), combined with the views into a pruned polynomial whose
//! terms are applied to the node features once ([`propagation`]), and a
//! single convolution plus linear classifier is trained over the result
//! ([`model`]). P-GCN, M-GCN and MIMO-GCN are available through the same
//! path for comparison.

pub mod data;
pub mod dense;
pub mod error;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod propagation;
pub mod sparse;
pub mod topology;

pub use data::{
    generate_synthetic, load_dataset, split_masks, DatasetManifest, Multigraph, Splits,
    SyntheticSpec,
};
pub use dense::DenseMatrix;
pub use error::{Error, Result};
pub use metrics::{compute_metrics, Metrics};
pub use model::{adam_step, fit, forward, loss_and_grad, ModelParams, TrainConfig};
pub use propagation::{
    count_parameters, enumerate_terms, propagate, Method, Operator, ParameterReport,
    PropagateOptions, PropagatedFeatures, TermSpec,
};
pub use sparse::SparseMatrix;
pub use topology::{extract_edge_topology, extract_subgraph_topology, TieBreak, VoteConfig};
