//! Cluster graphs and D2D consensus.
//!
//! Each cluster owns an undirected connected graph over its devices and a
//! consensus matrix `V` that is graph-sparse, symmetric and row-stochastic,
//! with `ρ(V - 11ᵀ/s) < 1`. The stored contraction factor `λ` is that
//! deflated spectral radius, so `k` rounds of [`run_consensus`] shrink every
//! device's distance to the cluster mean by at least `λᵏ√s` times the spread
//! of the starting vectors.

use std::collections::BTreeSet;

use rand::Rng;
use thiserror::Error;

use crate::linalg::{self, Square};
use crate::rng;
use crate::ModelVector;

/// Retries of a fresh placement before bridging components by hand.
const MAX_PLACEMENT_ATTEMPTS: usize = 100;
/// Radius bisection steps in [`tune_radius_for_spectral_target`].
const MAX_BISECTION_STEPS: usize = 50;
/// Node placements tried in [`tune_radius_for_spectral_target`].
const PLACEMENT_SEED_ATTEMPTS: u64 = 20;
/// Accepted distance between the achieved and the requested spectral radius.
pub const SPECTRAL_TOLERANCE: f64 = 0.05;
pub const POWER_ITERATION_TOL: f64 = 1e-10;
pub const POWER_ITERATION_MAX_ITER: usize = 10_000;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("graph over {nodes} nodes is not connected")]
    DisconnectedGraph { nodes: usize },
    #[error("spectral target {target} not met: closest achieved {achieved}")]
    ToleranceNotMet {
        target: f64,
        achieved: f64,
        closest: Box<(ClusterGraph, ConsensusMatrix)>,
    },
    #[error("power iteration did not converge within {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T, E = TopologyError> = std::result::Result<T, E>;

/// Undirected simple graph over the devices of one cluster.
///
/// Nodes are addressed locally as `0..size()`; `node_ids()` maps local
/// positions back to global device indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterGraph {
    node_ids: Vec<usize>,
    neighbors: Vec<BTreeSet<usize>>,
}

impl ClusterGraph {
    /// Builds a graph from local-index edges. Each undirected edge may be
    /// listed once in either orientation.
    pub fn new(node_ids: Vec<usize>, edges: &[(usize, usize)]) -> Result<Self> {
        let n = node_ids.len();
        if n == 0 {
            return Err(TopologyError::InvalidGraph("empty node set".into()));
        }
        let mut neighbors = vec![BTreeSet::new(); n];
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(TopologyError::InvalidGraph(format!("edge ({i},{j}) out of range")));
            }
            if i == j {
                return Err(TopologyError::InvalidGraph(format!("self-loop at {i}")));
            }
            neighbors[i].insert(j);
            neighbors[j].insert(i);
        }
        Ok(ClusterGraph { node_ids, neighbors })
    }

    pub fn complete(n: usize) -> Self {
        let edges: Vec<_> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        ClusterGraph::new((0..n).collect(), &edges).expect("complete graph is valid")
    }

    pub fn path(n: usize) -> Self {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        ClusterGraph::new((0..n).collect(), &edges).expect("path graph is valid")
    }

    /// Same graph with different global device labels.
    pub fn relabel(mut self, node_ids: Vec<usize>) -> Result<Self> {
        if node_ids.len() != self.size() {
            return Err(TopologyError::DimensionMismatch { expected: self.size(), found: node_ids.len() });
        }
        self.node_ids = node_ids;
        Ok(self)
    }

    pub fn size(&self) -> usize {
        self.node_ids.len()
    }

    pub fn node_ids(&self) -> &[usize] {
        &self.node_ids
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.neighbors[i].iter().copied()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].contains(&j)
    }

    /// Edges as `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, ns)| ns.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
            .collect()
    }

    pub fn is_connected(&self) -> bool {
        let n = self.size();
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for v in self.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == n
    }
}

/// Consensus weights `V` for one cluster plus the contraction factor `λ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusMatrix {
    weights: Square,
    lambda: f64,
}

impl ConsensusMatrix {
    pub fn size(&self) -> usize {
        self.weights.size()
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights.get(i, j)
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.weights.to_rows()
    }

    /// `λ_c`, the deflated spectral radius `ρ(V - 11ᵀ/s)`.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// A cluster's graph and the consensus matrix built on it.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterTopology {
    pub graph: ClusterGraph,
    pub consensus: ConsensusMatrix,
}

impl ClusterTopology {
    pub fn from_graph(graph: ClusterGraph) -> Result<Self> {
        let consensus = metropolis_weights(&graph)?;
        Ok(ClusterTopology { graph, consensus })
    }

    pub fn members(&self) -> &[usize] {
        self.graph.node_ids()
    }

    pub fn size(&self) -> usize {
        self.graph.size()
    }

    pub fn lambda(&self) -> f64 {
        self.consensus.lambda()
    }
}

/// Random geometric graph: `s` points uniform in the unit square, joined when
/// their distance is at most `radius`.
///
/// Disconnected draws are redrawn up to a fixed number of times; after that
/// the last draw is patched with minimum-distance edges between components
/// (Kruskal over inter-component pairs), so the result is always connected.
pub fn generate_random_geometric_cluster(s: usize, radius: f64, seed: u64) -> Result<ClusterGraph> {
    if s == 0 {
        return Err(TopologyError::InvalidArgument("cluster size must be positive".into()));
    }
    if !(radius > 0.0 && radius <= std::f64::consts::SQRT_2) {
        return Err(TopologyError::InvalidArgument(format!("radius {radius} outside (0, √2]")));
    }
    let mut rng = rng::stream(seed, &[rng::TOPOLOGY_STREAM, s as u64]);
    let mut points = Vec::new();
    let mut edges = Vec::new();
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        points = place_points(&mut rng, s);
        edges = threshold_edges(&points, radius);
        let graph = ClusterGraph::new((0..s).collect(), &edges)?;
        if graph.is_connected() {
            return Ok(graph);
        }
    }
    edges.extend(bridging_edges(&points, &edges));
    ClusterGraph::new((0..s).collect(), &edges)
}

/// Distinct pairwise distances of the first placement drawn for `(s, seed)`,
/// i.e. the radii at which the threshold graph changes.
fn placement_distances(s: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng::stream(seed, &[rng::TOPOLOGY_STREAM, s as u64]);
    let points = place_points(&mut rng, s);
    let mut d: Vec<f64> = (0..s)
        .flat_map(|i| (i + 1..s).map(move |j| (i, j)))
        .map(|(i, j)| dist(points[i], points[j]))
        .filter(|&r| r > 0.0)
        .collect();
    d.sort_by(f64::total_cmp);
    d.dedup();
    d
}

fn place_points<R: Rng>(rng: &mut R, s: usize) -> Vec<(f64, f64)> {
    (0..s).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect()
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

fn threshold_edges(points: &[(f64, f64)], radius: f64) -> Vec<(usize, usize)> {
    let n = points.len();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if dist(points[i], points[j]) <= radius {
                edges.push((i, j));
            }
        }
    }
    edges
}

fn bridging_edges(points: &[(f64, f64)], edges: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let n = points.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for &(i, j) in edges {
        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
        parent[a] = b;
    }
    let mut candidates: Vec<(f64, usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| (dist(points[i], points[j]), i, j))
        .collect();
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut added = Vec::new();
    for (_, i, j) in candidates {
        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
        if a != b {
            parent[a] = b;
            added.push((i, j));
        }
    }
    added
}

/// Metropolis–Hastings weights: `v_ij = 1 / (1 + max(deg_i, deg_j))` on
/// edges, the remainder of each row on the diagonal.
pub fn metropolis_weights(graph: &ClusterGraph) -> Result<ConsensusMatrix> {
    if !graph.is_connected() {
        return Err(TopologyError::DisconnectedGraph { nodes: graph.size() });
    }
    let n = graph.size();
    let mut w = Square::zeros(n);
    for i in 0..n {
        let mut off = 0.0;
        for j in graph.neighbors(i) {
            let v = 1.0 / (1.0 + graph.degree(i).max(graph.degree(j)) as f64);
            w.set(i, j, v);
            off += v;
        }
        w.set(i, i, 1.0 - off);
    }
    let lambda = match deflated_spectral_radius(&w) {
        Ok(r) => r,
        Err(TopologyError::NoConvergence { .. }) => exact_deflated_spectral_radius(&w),
        Err(e) => return Err(e),
    };
    Ok(ConsensusMatrix { weights: w, lambda })
}

/// `ρ(V - 11ᵀ/s)` by power iteration (tolerance 1e-10, at most 10 000
/// iterations). `NoConvergence` signals a degenerate spectrum; use
/// [`spectral_radius_exact`] in that case.
pub fn spectral_radius(weights: &[Vec<f64>]) -> Result<f64> {
    let square = to_square(weights)?;
    deflated_spectral_radius(&square)
}

/// `ρ(V - 11ᵀ/s)` from a full symmetric eigendecomposition.
pub fn spectral_radius_exact(weights: &[Vec<f64>]) -> Result<f64> {
    Ok(exact_deflated_spectral_radius(&to_square(weights)?))
}

fn to_square(weights: &[Vec<f64>]) -> Result<Square> {
    Square::from_rows(weights).ok_or_else(|| TopologyError::DimensionMismatch {
        expected: weights.len(),
        found: weights.iter().map(|r| r.len()).find(|&l| l != weights.len()).unwrap_or(0),
    })
}

fn deflated_spectral_radius(w: &Square) -> Result<f64> {
    linalg::power_iteration_abs_max(&w.deflate_uniform(), POWER_ITERATION_TOL, POWER_ITERATION_MAX_ITER)
        .map_err(|e| TopologyError::NoConvergence { iterations: e.iterations })
}

fn exact_deflated_spectral_radius(w: &Square) -> f64 {
    linalg::symmetric_eigenvalues(&w.deflate_uniform().to_nalgebra())
        .into_iter()
        .map(f64::abs)
        .fold(0.0, f64::max)
}

/// Searches for a geometric graph whose Metropolis matrix has
/// `|ρ - target| ≤ 0.05`.
///
/// For one placement of the nodes, bisection over the radius (at most 50
/// steps) walks through nested graphs. `ρ` takes a discrete set of values
/// and is not monotone in the radius, so if bisection misses, every
/// threshold graph of the placement is tried. Up to 20 placements, each
/// derived from `seed`, are tried in turn. On failure
/// the closest pair found is returned inside
/// [`TopologyError::ToleranceNotMet`] so the caller can accept it.
pub fn tune_radius_for_spectral_target(
    s: usize,
    target_rho: f64,
    seed: u64,
) -> Result<(ClusterGraph, ConsensusMatrix)> {
    if !(target_rho > 0.0 && target_rho < 1.0) {
        return Err(TopologyError::InvalidArgument(format!("target spectral radius {target_rho} outside (0,1)")));
    }
    let mut best: Option<(f64, ClusterGraph, ConsensusMatrix)> = None;
    for attempt in 0..PLACEMENT_SEED_ATTEMPTS {
        let placement = rng::derive_seed(seed, &[attempt]);
        let mut lo = 0.0_f64;
        let mut hi = std::f64::consts::SQRT_2;
        for _ in 0..MAX_BISECTION_STEPS {
            let radius = 0.5 * (lo + hi);
            let graph = generate_random_geometric_cluster(s, radius, placement)?;
            let matrix = metropolis_weights(&graph)?;
            let achieved = matrix.lambda();
            let gap = (achieved - target_rho).abs();
            if best.as_ref().is_none_or(|(g, _, _)| gap < *g) {
                best = Some((gap, graph, matrix));
            }
            if gap <= SPECTRAL_TOLERANCE {
                let (_, graph, matrix) = best.expect("just set");
                return Ok((graph, matrix));
            }
            // More edges usually mix faster and lower ρ.
            if achieved > target_rho {
                lo = radius;
            } else {
                hi = radius;
            }
        }
        // ρ is not monotone in the radius, so bisection can step over a
        // matching graph; visit every threshold of this placement.
        for radius in placement_distances(s, placement) {
            let graph = generate_random_geometric_cluster(s, radius, placement)?;
            let matrix = metropolis_weights(&graph)?;
            let gap = (matrix.lambda() - target_rho).abs();
            if best.as_ref().is_none_or(|(g, _, _)| gap < *g) {
                best = Some((gap, graph, matrix));
            }
            if gap <= SPECTRAL_TOLERANCE {
                let (_, graph, matrix) = best.expect("just set");
                return Ok((graph, matrix));
            }
        }
    }
    let (_, graph, matrix) = best.expect("at least one bisection step");
    Err(TopologyError::ToleranceNotMet {
        target: target_rho,
        achieved: matrix.lambda(),
        closest: Box::new((graph, matrix)),
    })
}

/// How cluster graphs are drawn when building a whole network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GraphSpec {
    /// Tune each cluster towards this deflated spectral radius.
    SpectralTarget(f64),
    /// Fixed geometric radius.
    Radius(f64),
    /// Complete graphs (one consensus round averages exactly).
    Complete,
}

/// Builds one topology per cluster. `clusters[c]` lists the global device ids
/// of cluster `c`.
pub fn build_topologies(clusters: &[Vec<usize>], spec: GraphSpec, seed: u64) -> Result<Vec<ClusterTopology>> {
    clusters
        .iter()
        .enumerate()
        .map(|(c, members)| {
            let s = members.len();
            let (graph, consensus) = match spec {
                GraphSpec::Complete => {
                    let g = ClusterGraph::complete(s);
                    let m = metropolis_weights(&g)?;
                    (g, m)
                }
                GraphSpec::Radius(r) => {
                    let g = generate_random_geometric_cluster(s, r, rng::derive_seed(seed, &[c as u64]))?;
                    let m = metropolis_weights(&g)?;
                    (g, m)
                }
                GraphSpec::SpectralTarget(target) => tune_cluster(s, target, seed, c as u64)?,
            };
            Ok(ClusterTopology { graph: graph.relabel(members.clone())?, consensus })
        })
        .collect()
}

fn tune_cluster(s: usize, target: f64, seed: u64, cluster: u64) -> Result<(ClusterGraph, ConsensusMatrix)> {
    match tune_radius_for_spectral_target(s, target, rng::derive_seed(seed, &[cluster])) {
        Err(TopologyError::ToleranceNotMet { closest, .. }) => Ok(*closest),
        other => other,
    }
}

/// Applies `rounds` iterations of `z_i ← Σ_j v_ij z_j`.
pub fn run_consensus(initial: &[ModelVector], matrix: &ConsensusMatrix, rounds: usize) -> Result<Vec<ModelVector>> {
    let s = matrix.size();
    if initial.len() != s {
        return Err(TopologyError::DimensionMismatch { expected: s, found: initial.len() });
    }
    let dim = initial.first().map_or(0, ModelVector::dim);
    if let Some(bad) = initial.iter().find(|v| v.dim() != dim) {
        return Err(TopologyError::DimensionMismatch { expected: dim, found: bad.dim() });
    }
    let mut current: Vec<ModelVector> = initial.to_vec();
    let mut next: Vec<ModelVector> = vec![ModelVector::zeros(dim); s];
    for _ in 0..rounds {
        for (i, out) in next.iter_mut().enumerate() {
            out.as_mut_slice().fill(0.0);
            for (j, z) in current.iter().enumerate() {
                let v = matrix.weight(i, j);
                if v != 0.0 {
                    out.axpy(v, z);
                }
            }
        }
        std::mem::swap(&mut current, &mut next);
    }
    Ok(current)
}

/// Largest pairwise distance within a set of vectors (`Υ` for a cluster).
pub fn max_pairwise_distance(vectors: &[ModelVector]) -> f64 {
    let mut best = 0.0_f64;
    for (i, a) in vectors.iter().enumerate() {
        for b in &vectors[i + 1..] {
            best = best.max(a.distance(b));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn mv(v: &[f64]) -> ModelVector {
        ModelVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn singleton_cluster() {
        let g = generate_random_geometric_cluster(1, 0.3, 4).unwrap();
        assert_eq!(g.size(), 1);
        assert!(g.edges().is_empty());
        let m = metropolis_weights(&g).unwrap();
        assert_eq!(m.rows(), vec![vec![1.0]]);
        assert_eq!(m.lambda(), 0.0);
    }

    #[test]
    fn full_radius_gives_complete_graph() {
        let g = generate_random_geometric_cluster(5, std::f64::consts::SQRT_2, 11).unwrap();
        assert_eq!(g.edges().len(), 10);
    }

    #[test]
    fn rejects_bad_radius() {
        assert!(generate_random_geometric_cluster(3, 0.0, 1).is_err());
        assert!(generate_random_geometric_cluster(3, 1.5, 1).is_err());
        assert!(generate_random_geometric_cluster(0, 0.5, 1).is_err());
    }

    #[test]
    fn tiny_radius_falls_back_to_bridging() {
        let g = generate_random_geometric_cluster(8, 1e-6, 3).unwrap();
        assert!(g.is_connected());
        // a spanning tree: bridging adds exactly n - 1 edges to an empty graph
        assert_eq!(g.edges().len(), 7);
    }

    #[test]
    fn path3_metropolis() {
        let m = metropolis_weights(&ClusterGraph::path(3)).unwrap();
        let expect = [[2.0 / 3.0, 1.0 / 3.0, 0.0], [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], [0.0, 1.0 / 3.0, 2.0 / 3.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(m.weight(i, j), expect[i][j], epsilon = 1e-15);
            }
        }
        assert_abs_diff_eq!(m.lambda(), 2.0 / 3.0, epsilon = 1e-9);
    }

    #[test]
    fn k2_metropolis_averages() {
        let m = metropolis_weights(&ClusterGraph::complete(2)).unwrap();
        assert_eq!(m.rows(), vec![vec![0.5, 0.5], vec![0.5, 0.5]]);
        assert!(m.lambda() < 1e-12);
    }

    #[test]
    fn disconnected_graph_rejected() {
        let g = ClusterGraph::new(vec![0, 1, 2], &[(0, 1)]).unwrap();
        assert!(matches!(metropolis_weights(&g), Err(TopologyError::DisconnectedGraph { .. })));
    }

    #[test]
    fn invalid_graphs_rejected() {
        assert!(ClusterGraph::new(vec![0, 1], &[(1, 1)]).is_err());
        assert!(ClusterGraph::new(vec![0, 1], &[(0, 2)]).is_err());
    }

    #[test]
    fn spectral_radius_examples() {
        let j = vec![vec![0.25; 4]; 4];
        assert!(spectral_radius(&j).unwrap() < 1e-12);
        let id: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|k| if i == k { 1.0 } else { 0.0 }).collect()).collect();
        assert_abs_diff_eq!(spectral_radius(&id).unwrap(), 1.0, epsilon = 1e-9);
        let p3 = metropolis_weights(&ClusterGraph::path(3)).unwrap().rows();
        assert_abs_diff_eq!(spectral_radius(&p3).unwrap(), 2.0 / 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(spectral_radius_exact(&p3).unwrap(), 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn spectral_radius_rejects_ragged_input() {
        assert!(spectral_radius(&[vec![1.0, 0.0], vec![1.0]]).is_err());
    }

    #[test]
    fn tune_two_node_cluster() {
        let (g, m) = tune_radius_for_spectral_target(2, 0.01, 9).unwrap();
        assert_eq!(g.edges(), vec![(0, 1)]);
        assert!(m.lambda() < 1e-12);
        assert!(matches!(
            tune_radius_for_spectral_target(2, 0.7, 9),
            Err(TopologyError::ToleranceNotMet { .. })
        ));
    }

    #[test]
    fn consensus_examples() {
        let m = metropolis_weights(&ClusterGraph::path(3)).unwrap();
        let init = vec![mv(&[0.0]), mv(&[3.0]), mv(&[6.0])];
        assert_eq!(run_consensus(&init, &m, 0).unwrap(), init);
        let one = run_consensus(&init, &m, 1).unwrap();
        for (got, want) in one.iter().zip([1.0, 3.0, 5.0]) {
            assert_abs_diff_eq!(got.as_slice()[0], want, epsilon = 1e-12);
        }
        let same = vec![mv(&[1.5, -2.0]); 3];
        let out = run_consensus(&same, &m, 7).unwrap();
        for v in out {
            assert_abs_diff_eq!(v.as_slice()[0], 1.5, epsilon = 1e-12);
            assert_abs_diff_eq!(v.as_slice()[1], -2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn consensus_dimension_mismatch() {
        let m = metropolis_weights(&ClusterGraph::path(3)).unwrap();
        let bad = vec![mv(&[0.0]), mv(&[3.0, 1.0]), mv(&[6.0])];
        assert!(matches!(run_consensus(&bad, &m, 1), Err(TopologyError::DimensionMismatch { .. })));
        assert!(run_consensus(&bad[..2], &m, 1).is_err());
    }

    #[test]
    fn build_topologies_relabels_members() {
        let clusters = vec![vec![0, 1, 2, 3, 4], vec![5, 6, 7, 8, 9]];
        let topos = build_topologies(&clusters, GraphSpec::SpectralTarget(0.7), 1).unwrap();
        assert_eq!(topos[1].members(), &[5, 6, 7, 8, 9]);
        for t in &topos {
            assert!(t.lambda() < 1.0);
        }
    }
}
