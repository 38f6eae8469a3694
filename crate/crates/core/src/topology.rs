//! Credible cross-view topologies.
//!
//! The edge-level topology keeps every off-diagonal pair supported by at
//! least `threshold` raw views. The subgraph-level topology runs the same
//! vote over per-view first-nearest-neighbour graphs, where neighbours are
//! ranked by a triangle-weighted similarity `(A + I)² ∘ (A + I)`.

use serde::Serialize;

use crate::data::Multigraph;
use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

/// How ties for a node's nearest neighbour are resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieBreak {
    /// Keep only the smallest tied column index.
    #[default]
    SmallestIndex,
    /// Keep every tied maximum.
    KeepAll,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VoteConfig {
    /// Minimum number of views that must support an entry.
    pub threshold: usize,
    pub tie_break: TieBreak,
}

impl Default for VoteConfig {
    fn default() -> Self {
        Self {
            threshold: 2,
            tie_break: TieBreak::SmallestIndex,
        }
    }
}

impl VoteConfig {
    pub fn with_threshold(threshold: usize) -> Self {
        Self {
            threshold,
            ..Self::default()
        }
    }

    pub fn validate(&self, view_count: usize) -> Result<()> {
        if view_count < 2 {
            return Err(Error::InvalidConfig(format!(
                "voting needs at least 2 views, got {view_count}"
            )));
        }
        if self.threshold < 2 || self.threshold > view_count {
            return Err(Error::InvalidConfig(format!(
                "vote threshold {} outside 2..={view_count}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Off-diagonal entries positive in at least `cfg.threshold` views, as a
/// binary matrix with empty diagonal.
pub fn vote_filter(views: &[SparseMatrix], cfg: &VoteConfig) -> Result<SparseMatrix> {
    cfg.validate(views.len())?;
    let n = views[0].n();
    if let Some(v) = views.iter().find(|v| v.n() != n) {
        return Err(Error::DimensionMismatch(format!(
            "views disagree on n: {n} vs {}",
            v.n()
        )));
    }
    let mut votes = vec![0usize; n];
    let mut touched = Vec::new();
    let mut triplets = Vec::new();
    for i in 0..n {
        for view in views {
            let (cols, vals) = view.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if v > 0.0 && j != i {
                    if votes[j] == 0 {
                        touched.push(j);
                    }
                    votes[j] += 1;
                }
            }
        }
        for &j in &touched {
            if votes[j] >= cfg.threshold {
                triplets.push((i, j, 1.0));
            }
            votes[j] = 0;
        }
        touched.clear();
    }
    SparseMatrix::from_triplets(n, triplets)
}

/// `(A + I)² ∘ (A + I)` for a binary adjacency `A`: on the support of
/// `A + I`, each entry counts the common neighbours of its endpoints in the
/// self-looped graph.
pub fn triangle_similarity(a: &SparseMatrix) -> Result<SparseMatrix> {
    if let Some((row, col, value)) = a.iter().find(|e| e.2 != 1.0) {
        return Err(Error::NonBinary { row, col, value });
    }
    // only entries on the support of A + I survive the mask, so each is the
    // overlap of row i with column j rather than a full product
    let closed = a.add_identity();
    let by_col = closed.transpose();
    let n = closed.n();
    let mut in_row = vec![false; n];
    let mut row_offsets = Vec::with_capacity(n + 1);
    row_offsets.push(0);
    let mut col_indices = Vec::with_capacity(closed.nnz());
    let mut values = Vec::with_capacity(closed.nnz());
    for i in 0..n {
        let row = closed.row(i).0;
        row.iter().for_each(|&l| in_row[l] = true);
        for &j in row {
            let overlap: usize = by_col
                .row(j)
                .0
                .iter()
                .map(|&l| usize::from(in_row[l]))
                .sum();
            col_indices.push(j);
            values.push(overlap as f64);
        }
        row.iter().for_each(|&l| in_row[l] = false);
        row_offsets.push(col_indices.len());
    }
    SparseMatrix::from_raw_parts(n, row_offsets, col_indices, values)
}

/// Symmetric binary first-nearest-neighbour graph of a non-negative
/// similarity matrix. A node's neighbour is its largest off-diagonal entry;
/// nodes without a positive off-diagonal entry select nothing.
pub fn first_nn(sim: &SparseMatrix, tie_break: TieBreak) -> Result<SparseMatrix> {
    if let Some((row, col, value)) = sim.iter().find(|e| e.2 < 0.0) {
        return Err(Error::NegativeEntry { row, col, value });
    }
    let n = sim.n();
    let mut triplets = Vec::new();
    for i in 0..n {
        let (cols, vals) = sim.row(i);
        let best = cols
            .iter()
            .zip(vals)
            .filter(|(&j, _)| j != i)
            .map(|(_, &v)| v)
            .fold(0.0, f64::max);
        if best <= 0.0 {
            continue;
        }
        let mut winners = cols
            .iter()
            .zip(vals)
            .filter(|(&j, &v)| j != i && v == best)
            .map(|(&j, _)| j);
        let chosen: Vec<usize> = match tie_break {
            TieBreak::SmallestIndex => winners.next().into_iter().collect(),
            TieBreak::KeepAll => winners.collect(),
        };
        for j in chosen {
            triplets.push((i, j, 1.0));
            triplets.push((j, i, 1.0));
        }
    }
    Ok(SparseMatrix::from_triplets(n, triplets)?.binarize())
}

/// Edge-level credible topology over the binarized raw views.
pub fn extract_edge_topology(g: &Multigraph, cfg: &VoteConfig) -> Result<SparseMatrix> {
    let binary: Vec<SparseMatrix> = g.views().iter().map(SparseMatrix::binarize).collect();
    vote_filter(&binary, cfg)
}

/// Per-view first-nearest-neighbour graph. Binary views are ranked by
/// triangle similarity; weighted views are ranked by their own weights.
pub fn view_neighbor_graph(view: &SparseMatrix, tie_break: TieBreak) -> Result<SparseMatrix> {
    if view.is_binary() {
        first_nn(&triangle_similarity(view)?, tie_break)
    } else {
        first_nn(view, tie_break)
    }
}

/// Subgraph-level credible topology: the vote over per-view
/// first-nearest-neighbour graphs.
pub fn extract_subgraph_topology(g: &Multigraph, cfg: &VoteConfig) -> Result<SparseMatrix> {
    cfg.validate(g.view_count())?;
    let nn: Vec<SparseMatrix> = g
        .views()
        .iter()
        .map(|v| view_neighbor_graph(v, cfg.tie_break))
        .collect::<Result<_>>()?;
    vote_filter(&nn, cfg)
}

/// Summary statistics for an extracted topology.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopologyStats {
    pub nnz: usize,
    /// `nnz / n²`
    pub density: f64,
    /// Connected components of the undirected support, isolated nodes included.
    pub components: usize,
}

pub fn topology_stats(m: &SparseMatrix) -> TopologyStats {
    let n = m.n();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut components = n;
    for (i, j, _) in m.iter() {
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
        if ri != rj {
            parent[ri.max(rj)] = ri.min(rj);
            components -= 1;
        }
    }
    TopologyStats {
        nnz: m.nnz(),
        density: if n == 0 {
            0.0
        } else {
            m.nnz() as f64 / (n * n) as f64
        },
        components,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::DenseMatrix;

    fn edges(n: usize, e: &[(usize, usize)]) -> SparseMatrix {
        SparseMatrix::from_edges(n, e).unwrap()
    }

    fn graph(views: Vec<SparseMatrix>) -> Multigraph {
        let n = views[0].n();
        Multigraph::new(views, DenseMatrix::zeros(n, 1), vec![0; n]).unwrap()
    }

    #[test]
    fn vote_counts_supporting_views() {
        let v1 = edges(3, &[(0, 1)]);
        let v2 = edges(3, &[(0, 1), (1, 2)]);
        let v3 = edges(3, &[(0, 2)]);
        let e = vote_filter(&[v1, v2, v3], &VoteConfig::default()).unwrap();
        assert_eq!(e, edges(3, &[(0, 1)]));
    }

    #[test]
    fn vote_on_empty_views_is_empty() {
        let z = SparseMatrix::zeros(4);
        let e = vote_filter(&[z.clone(), z.clone(), z], &VoteConfig::default()).unwrap();
        assert_eq!(e.nnz(), 0);
    }

    #[test]
    fn vote_errors() {
        let a = SparseMatrix::zeros(3);
        let b = SparseMatrix::zeros(4);
        assert!(matches!(
            vote_filter(&[a.clone(), b], &VoteConfig::default()),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(
            vote_filter(&[a.clone(), a.clone()], &VoteConfig::with_threshold(3)),
            Err(Error::InvalidConfig(_))
        ));
        assert!(vote_filter(&[a], &VoteConfig::default()).is_err());
    }

    #[test]
    fn vote_ignores_diagonal_and_weights() {
        let v1 = SparseMatrix::from_dense(2, &[5.0, 0.2, 0.0, 1.0]).unwrap();
        let v2 = SparseMatrix::from_dense(2, &[1.0, 9.0, 0.0, 0.0]).unwrap();
        let e = vote_filter(&[v1, v2], &VoteConfig::default()).unwrap();
        assert_eq!(e.to_dense(), vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn triangle_similarity_complete_graph() {
        let k3 = edges(3, &[(0, 1), (1, 2), (0, 2)]);
        assert_eq!(triangle_similarity(&k3).unwrap().to_dense(), vec![3.0; 9]);
    }

    #[test]
    fn triangle_similarity_path() {
        let s = triangle_similarity(&edges(3, &[(0, 1), (1, 2)])).unwrap();
        assert_eq!(
            s.to_dense(),
            vec![2.0, 2.0, 0.0, 2.0, 3.0, 2.0, 0.0, 2.0, 2.0]
        );
    }

    #[test]
    fn triangle_similarity_isolated_node() {
        let s = triangle_similarity(&SparseMatrix::zeros(1)).unwrap();
        assert_eq!(s.to_dense(), vec![1.0]);
    }

    #[test]
    fn triangle_similarity_rejects_weights() {
        let w = SparseMatrix::from_dense(2, &[0.0, 2.0, 2.0, 0.0]).unwrap();
        assert!(matches!(
            triangle_similarity(&w),
            Err(Error::NonBinary { .. })
        ));
    }

    #[test]
    fn first_nn_on_path_similarity() {
        let s = triangle_similarity(&edges(3, &[(0, 1), (1, 2)])).unwrap();
        let nn = first_nn(&s, TieBreak::SmallestIndex).unwrap();
        assert_eq!(nn, edges(3, &[(0, 1), (1, 2)]));
    }

    #[test]
    fn first_nn_dominant_node_gives_star() {
        // node 2 holds the strictly largest off-diagonal weight in every row
        let s = SparseMatrix::from_dense(
            4,
            &[
                9.0, 1.0, 5.0, 2.0, //
                1.0, 9.0, 5.0, 2.0, //
                4.0, 3.0, 9.0, 1.0, //
                1.0, 2.0, 5.0, 9.0,
            ],
        )
        .unwrap();
        let nn = first_nn(&s, TieBreak::SmallestIndex).unwrap();
        assert_eq!(nn, edges(4, &[(0, 2), (1, 2), (2, 3)]));
    }

    #[test]
    fn first_nn_of_zero_is_zero() {
        let nn = first_nn(&SparseMatrix::zeros(5), TieBreak::SmallestIndex).unwrap();
        assert_eq!(nn.nnz(), 0);
    }

    #[test]
    fn first_nn_keep_all_ties() {
        let s = triangle_similarity(&edges(3, &[(0, 1), (1, 2), (0, 2)])).unwrap();
        assert_eq!(
            first_nn(&s, TieBreak::SmallestIndex).unwrap(),
            edges(3, &[(0, 1), (0, 2)])
        );
        assert_eq!(
            first_nn(&s, TieBreak::KeepAll).unwrap(),
            edges(3, &[(0, 1), (1, 2), (0, 2)])
        );
    }

    #[test]
    fn edge_topology_identical_views() {
        let a = edges(5, &[(0, 1), (1, 2), (3, 4)]);
        let g = graph(vec![a.clone(), a.clone()]);
        assert_eq!(
            extract_edge_topology(&g, &VoteConfig::default()).unwrap(),
            a
        );
    }

    #[test]
    fn edge_topology_disjoint_views() {
        let g = graph(vec![edges(4, &[(0, 1)]), edges(4, &[(2, 3)])]);
        assert_eq!(
            extract_edge_topology(&g, &VoteConfig::default())
                .unwrap()
                .nnz(),
            0
        );
    }

    #[test]
    fn subgraph_topology_on_triangles() {
        let k3 = edges(3, &[(0, 1), (1, 2), (0, 2)]);
        let g = graph(vec![k3.clone(), k3.clone(), k3.clone()]);
        let s = extract_subgraph_topology(&g, &VoteConfig::default()).unwrap();
        assert_eq!(s, edges(3, &[(0, 1), (0, 2)]));
        let all = VoteConfig {
            tie_break: TieBreak::KeepAll,
            ..VoteConfig::default()
        };
        assert_eq!(extract_subgraph_topology(&g, &all).unwrap(), k3);
    }

    #[test]
    fn subgraph_topology_disjoint_neighbor_graphs() {
        let g = graph(vec![
            edges(4, &[(0, 1), (2, 3)]),
            edges(4, &[(0, 2), (1, 3)]),
        ]);
        let s = extract_subgraph_topology(&g, &VoteConfig::default()).unwrap();
        assert_eq!(s.nnz(), 0);
    }

    #[test]
    fn weighted_views_skip_triangle_step() {
        let w =
            SparseMatrix::from_dense(3, &[0.0, 0.5, 2.0, 0.5, 0.0, 1.0, 2.0, 1.0, 0.0]).unwrap();
        let nn = view_neighbor_graph(&w, TieBreak::SmallestIndex).unwrap();
        assert_eq!(nn, edges(3, &[(0, 2), (1, 2)]));
    }

    #[test]
    fn stats_count_components() {
        let a = edges(5, &[(0, 1), (1, 2)]);
        let s = topology_stats(&a);
        assert_eq!(s.nnz, 4);
        assert_eq!(s.components, 3);
        assert!((s.density - 4.0 / 25.0).abs() < 1e-15);
    }
}
