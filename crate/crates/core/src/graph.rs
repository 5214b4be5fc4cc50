//! Directed communication graphs, rootedness, BFS spanning trees and the
//! 3-regular binary-tree construction.
//!
//! Nodes are `0..m` internally and `1..=m` in every serialized form. An edge
//! `(j, i)` means agent `j` sends to agent `i`. Self-loops are never stored:
//! every agent implicitly listens to itself and the weight builders add the
//! diagonal.

use std::collections::{BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{stream, stream_rng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("graph needs at least one node")]
    Empty,
    #[error("self-loop ({0}, {0}) cannot be stored; loops are implicit")]
    SelfLoop(usize),
    #[error("edge endpoint {node} outside 1..={m}")]
    NodeOutOfRange { node: usize, m: usize },
    #[error("node {unreachable} is not reachable from root {root}")]
    NotRooted { root: usize, unreachable: usize },
    #[error("binary-tree construction needs d >= 2, got {0}")]
    DepthTooSmall(u32),
    #[error("random rooted graph needs m >= 2, got {0}")]
    TooFewNodes(usize),
    #[error("edge probability {0} outside [0, 1]")]
    BadProbability(f64),
    #[error("periodic graph sequence is empty")]
    EmptyPeriod,
    #[error("graph at time {t} is not rooted")]
    SequenceNotRooted { t: usize },
}

/// Directed graph on `m` nodes with implicit self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiGraph {
    m: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl DiGraph {
    pub fn empty(m: usize) -> Result<Self, GraphError> {
        if m == 0 {
            return Err(GraphError::Empty);
        }
        Ok(Self { m, edges: BTreeSet::new() })
    }

    /// Builds a graph from 0-based `(from, to)` pairs.
    pub fn from_edges(m: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, GraphError> {
        let mut g = Self::empty(m)?;
        for (j, i) in edges {
            g.add_edge(j, i)?;
        }
        Ok(g)
    }

    pub fn add_edge(&mut self, from: usize, to: usize) -> Result<(), GraphError> {
        for node in [from, to] {
            if node >= self.m {
                return Err(GraphError::NodeOutOfRange { node: node + 1, m: self.m });
            }
        }
        if from == to {
            return Err(GraphError::SelfLoop(from + 1));
        }
        self.edges.insert((from, to));
        Ok(())
    }

    pub fn add_undirected(&mut self, a: usize, b: usize) -> Result<(), GraphError> {
        self.add_edge(a, b)?;
        self.add_edge(b, a)
    }

    pub fn node_count(&self) -> usize {
        self.m
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.edges.contains(&(from, to))
    }

    /// Stored edges in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    /// Agents `j` with an edge `j -> i`, ascending.
    pub fn in_neighbors(&self, i: usize) -> Vec<usize> {
        self.edges.iter().filter(|&&(_, to)| to == i).map(|&(from, _)| from).collect()
    }

    pub fn out_neighbors(&self, j: usize) -> Vec<usize> {
        self.edges.range((j, 0)..(j + 1, 0)).map(|&(_, to)| to).collect()
    }

    pub fn in_degree(&self, i: usize) -> usize {
        self.edges.iter().filter(|&&(_, to)| to == i).count()
    }

    pub fn out_degree(&self, j: usize) -> usize {
        self.edges.range((j, 0)..(j + 1, 0)).count()
    }

    /// Every edge has its reverse.
    pub fn is_symmetric(&self) -> bool {
        self.edges.iter().all(|&(a, b)| self.edges.contains(&(b, a)))
    }

    fn out_adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.m];
        for &(j, i) in &self.edges {
            adj[j].push(i);
        }
        adj
    }

    /// BFS distances (edge counts) from `source`; `None` for unreachable nodes.
    pub fn bfs_distances(&self, source: usize) -> Vec<Option<usize>> {
        let adj = self.out_adjacency();
        let mut dist = vec![None; self.m];
        dist[source] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(v) = queue.pop_front() {
            let dv = dist[v].unwrap_or(0);
            for &w in &adj[v] {
                if dist[w].is_none() {
                    dist[w] = Some(dv + 1);
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    /// Largest BFS distance from `source`, or `None` if some node is unreachable.
    pub fn eccentricity(&self, source: usize) -> Option<usize> {
        self.bfs_distances(source).into_iter().try_fold(0, |acc, d| d.map(|d| acc.max(d)))
    }

    /// All nodes from which every node is reachable. Empty means not rooted.
    pub fn roots(&self) -> BTreeSet<usize> {
        let adj = self.out_adjacency();
        let Some(root) = (0..self.m).find(|&v| Self::reach_set(&adj, v).iter().all(|&s| s)) else {
            return BTreeSet::new();
        };
        // Everything that reaches one root is itself a root.
        let mut rev = vec![Vec::new(); self.m];
        for &(j, i) in &self.edges {
            rev[i].push(j);
        }
        Self::reach_set(&rev, root).into_iter().enumerate().filter(|&(_, s)| s).map(|(v, _)| v).collect()
    }

    pub fn is_rooted(&self) -> bool {
        !self.roots().is_empty()
    }

    pub fn is_strongly_connected(&self) -> bool {
        self.roots().len() == self.m
    }

    /// Smallest-index root.
    pub fn first_root(&self) -> Option<usize> {
        self.roots().into_iter().next()
    }

    fn reach_set(adj: &[Vec<usize>], source: usize) -> Vec<bool> {
        let mut seen = vec![false; adj.len()];
        seen[source] = true;
        let mut stack = vec![source];
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen
    }

    /// Subgraph keeping only the edges accepted by `keep`.
    pub fn filter_edges(&self, mut keep: impl FnMut(usize, usize) -> bool) -> DiGraph {
        DiGraph { m: self.m, edges: self.edges.iter().copied().filter(|&(j, i)| keep(j, i)).collect() }
    }

    pub fn to_json(&self) -> GraphJson {
        GraphJson { m: self.m, edges: self.edges.iter().map(|&(j, i)| [j + 1, i + 1]).collect() }
    }

    pub fn from_json(json: &GraphJson) -> Result<Self, GraphError> {
        let mut g = Self::empty(json.m)?;
        for &[j, i] in &json.edges {
            if j == 0 || i == 0 {
                return Err(GraphError::NodeOutOfRange { node: 0, m: json.m });
            }
            g.add_edge(j - 1, i - 1)?;
        }
        Ok(g)
    }
}

/// Serialized graph: 1-based ids, edges sorted lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphJson {
    pub m: usize,
    pub edges: Vec<[usize; 2]>,
}

/// Directed spanning tree rooted at `root`, with parent pointers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanningTree {
    pub root: usize,
    pub parent: Vec<Option<usize>>,
    pub depth: usize,
}

impl SpanningTree {
    /// Tree edges `(parent, child)`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.parent.iter().enumerate().filter_map(|(child, p)| p.map(|p| (p, child)))
    }

    /// Checks every structural invariant against the source graph.
    pub fn validate(&self, g: &DiGraph) -> Result<(), String> {
        let m = g.node_count();
        if self.parent.len() != m {
            return Err(format!("parent map has {} entries for {m} nodes", self.parent.len()));
        }
        if self.parent[self.root].is_some() {
            return Err("root has a parent".into());
        }
        let tree_edges: Vec<_> = self.edges().collect();
        if tree_edges.len() != m - 1 {
            return Err(format!("{} tree edges, expected {}", tree_edges.len(), m - 1));
        }
        if let Some(&(p, c)) = tree_edges.iter().find(|&&(p, c)| !g.has_edge(p, c)) {
            return Err(format!("tree edge {}->{} not in graph", p + 1, c + 1));
        }
        let mut max_depth = 0;
        for v in 0..m {
            let mut hops = 0;
            let mut cur = v;
            while let Some(p) = self.parent[cur] {
                cur = p;
                hops += 1;
                if hops > m {
                    return Err(format!("cycle through node {}", v + 1));
                }
            }
            if cur != self.root {
                return Err(format!("node {} does not lead to the root", v + 1));
            }
            max_depth = max_depth.max(hops);
        }
        if max_depth != self.depth {
            return Err(format!("depth field {} but deepest node at {max_depth}", self.depth));
        }
        Ok(())
    }
}

/// Breadth-first spanning tree from `root`.
///
/// Each node's parent is its smallest-index in-neighbor on the previous BFS
/// level, so the tree is a deterministic function of the graph.
pub fn bfs_spanning_tree(g: &DiGraph, root: usize) -> Result<SpanningTree, GraphError> {
    let m = g.node_count();
    if root >= m {
        return Err(GraphError::NodeOutOfRange { node: root + 1, m });
    }
    let dist = g.bfs_distances(root);
    if let Some(unreachable) = dist.iter().position(Option::is_none) {
        return Err(GraphError::NotRooted { root: root + 1, unreachable: unreachable + 1 });
    }
    let dist: Vec<usize> = dist.into_iter().map(|d| d.unwrap_or(0)).collect();
    let mut parent = vec![None; m];
    for v in 0..m {
        if v == root {
            continue;
        }
        // Edges are sorted by source, so the first hit is the smallest index.
        parent[v] = g.edges().find(|&(j, i)| i == v && dist[j] + 1 == dist[v]).map(|(j, _)| j);
    }
    let depth = dist.into_iter().max().unwrap_or(0);
    Ok(SpanningTree { root, parent, depth })
}

/// The 3-regular graph on `2^d` nodes built from a complete binary tree.
///
/// Node 0 is the extra root agent; nodes `1..2^d` are the binary tree in heap
/// order (children of `h` are `2h` and `2h + 1`), so the leaves
/// `2^(d-1)..2^d` are already in left-to-right order. The leaves form a path
/// and both end leaves link back to node 0. All edges are bidirectional.
pub fn build_regular_tree_graph(d: u32) -> Result<DiGraph, GraphError> {
    if d < 2 {
        return Err(GraphError::DepthTooSmall(d));
    }
    let m = 1usize << d;
    let first_leaf = m / 2;
    let last_leaf = m - 1;
    let mut g = DiGraph::empty(m)?;
    g.add_undirected(0, 1)?;
    for h in 1..first_leaf {
        g.add_undirected(h, 2 * h)?;
        g.add_undirected(h, 2 * h + 1)?;
    }
    for leaf in first_leaf..last_leaf {
        g.add_undirected(leaf, leaf + 1)?;
    }
    g.add_undirected(0, first_leaf)?;
    g.add_undirected(0, last_leaf)?;
    Ok(g)
}

/// Random spanning tree rooted at a uniform node, plus independent extra
/// directed edges with probability `extra_edge_prob`.
///
/// The tree attaches nodes one by one (in a random order) to a uniformly
/// chosen earlier node, which keeps the root's reachability by construction.
pub fn random_rooted_graph<R: Rng + ?Sized>(
    m: usize,
    extra_edge_prob: f64,
    rng: &mut R,
) -> Result<(DiGraph, usize), GraphError> {
    if m < 2 {
        return Err(GraphError::TooFewNodes(m));
    }
    if !(0.0..=1.0).contains(&extra_edge_prob) {
        return Err(GraphError::BadProbability(extra_edge_prob));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(rng);
    let root = order[0];
    let mut g = DiGraph::empty(m)?;
    for k in 1..m {
        let parent = order[rng.gen_range(0..k)];
        g.add_edge(parent, order[k])?;
    }
    for j in 0..m {
        for i in 0..m {
            if i != j && !g.has_edge(j, i) && rng.gen_bool(extra_edge_prob) {
                g.add_edge(j, i)?;
            }
        }
    }
    Ok((g, root))
}

/// How a graph sequence produces `G_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphSource {
    Static { graph: GraphJson },
    Periodic { graphs: Vec<GraphJson> },
    RandomRooted { m: usize, extra_edge_prob: f64, seed: u64 },
    RegularTree { d: u32 },
}

/// Time-indexed graphs `G_0, G_1, ...`; periodic lists repeat, random graphs
/// are regenerated per time from `(seed, t)` so any `t` is addressable.
#[derive(Debug, Clone)]
pub struct GraphSequence {
    source: GraphSource,
    fixed: Vec<DiGraph>,
    m: usize,
}

impl GraphSequence {
    pub fn new(source: GraphSource) -> Result<Self, GraphError> {
        let (fixed, m) = match &source {
            GraphSource::Static { graph } => {
                let g = DiGraph::from_json(graph)?;
                let m = g.node_count();
                (vec![g], m)
            }
            GraphSource::Periodic { graphs } => {
                let gs = graphs.iter().map(DiGraph::from_json).collect::<Result<Vec<_>, _>>()?;
                let m = gs.first().ok_or(GraphError::EmptyPeriod)?.node_count();
                if let Some(g) = gs.iter().find(|g| g.node_count() != m) {
                    return Err(GraphError::NodeOutOfRange { node: g.node_count(), m });
                }
                (gs, m)
            }
            GraphSource::RandomRooted { m, extra_edge_prob, .. } => {
                if *m < 2 {
                    return Err(GraphError::TooFewNodes(*m));
                }
                if !(0.0..=1.0).contains(extra_edge_prob) {
                    return Err(GraphError::BadProbability(*extra_edge_prob));
                }
                (Vec::new(), *m)
            }
            GraphSource::RegularTree { d } => {
                let g = build_regular_tree_graph(*d)?;
                let m = g.node_count();
                (vec![g], m)
            }
        };
        for (t, g) in fixed.iter().enumerate() {
            if !g.is_rooted() {
                return Err(GraphError::SequenceNotRooted { t });
            }
        }
        Ok(Self { source, fixed, m })
    }

    pub fn node_count(&self) -> usize {
        self.m
    }

    pub fn source(&self) -> &GraphSource {
        &self.source
    }

    /// `G_t`.
    pub fn graph_at(&self, t: usize) -> DiGraph {
        match &self.source {
            GraphSource::RandomRooted { m, extra_edge_prob, seed } => {
                let mut rng = stream_rng(*seed, stream::GRAPH_AT + t as u64);
                random_rooted_graph(*m, *extra_edge_prob, &mut rng)
                    .map(|(g, _)| g)
                    .expect("parameters validated in GraphSequence::new")
            }
            _ => self.fixed[t % self.fixed.len()].clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn path3() -> DiGraph {
        DiGraph::from_edges(3, [(0, 1), (1, 2)]).unwrap()
    }

    /// Per-node DFS reachability; independent of `roots()`.
    fn brute_roots(g: &DiGraph) -> BTreeSet<usize> {
        let m = g.node_count();
        (0..m)
            .filter(|&v| {
                let mut seen = vec![false; m];
                fn dfs(g: &DiGraph, v: usize, seen: &mut [bool]) {
                    seen[v] = true;
                    for w in g.out_neighbors(v) {
                        if !seen[w] {
                            dfs(g, w, seen);
                        }
                    }
                }
                dfs(g, v, &mut seen);
                seen.into_iter().all(|s| s)
            })
            .collect()
    }

    #[test]
    fn roots_of_small_graphs() {
        assert_eq!(path3().roots(), BTreeSet::from([0]));
        let k3 = DiGraph::from_edges(3, [(0, 1), (1, 0), (0, 2), (2, 0), (1, 2), (2, 1)]).unwrap();
        assert_eq!(k3.roots(), BTreeSet::from([0, 1, 2]));
        assert!(DiGraph::empty(2).unwrap().roots().is_empty());
    }

    #[test]
    fn self_loops_and_range_rejected() {
        let mut g = DiGraph::empty(2).unwrap();
        assert_eq!(g.add_edge(1, 1), Err(GraphError::SelfLoop(2)));
        assert!(matches!(g.add_edge(0, 2), Err(GraphError::NodeOutOfRange { .. })));
    }

    #[test]
    fn bfs_tree_depths() {
        let t = bfs_spanning_tree(&path3(), 0).unwrap();
        assert_eq!(t.depth, 2);
        t.validate(&path3()).unwrap();

        let star = DiGraph::from_edges(5, (1..5).map(|i| (0, i))).unwrap();
        let t = bfs_spanning_tree(&star, 0).unwrap();
        assert_eq!(t.depth, 1);

        assert!(matches!(bfs_spanning_tree(&path3(), 1), Err(GraphError::NotRooted { .. })));
    }

    #[test]
    fn bfs_parent_is_smallest_previous_level_in_neighbor() {
        // 0 -> 1, 0 -> 2, 1 -> 3, 2 -> 3: node 3 gets parent 1.
        let g = DiGraph::from_edges(4, [(0, 2), (0, 1), (2, 3), (1, 3)]).unwrap();
        let t = bfs_spanning_tree(&g, 0).unwrap();
        assert_eq!(t.parent[3], Some(1));
    }

    #[test]
    fn regular_tree_graph_d3() {
        let g = build_regular_tree_graph(3).unwrap();
        assert_eq!(g.node_count(), 8);
        assert_eq!(g.edge_count(), 24);
        assert!(g.is_symmetric());
        assert!((0..8).all(|v| g.out_degree(v) == 3 && g.in_degree(v) == 3));
        assert_eq!(bfs_spanning_tree(&g, 0).unwrap().depth, 2);
        assert_eq!(g.first_root(), Some(0));
    }

    #[test]
    fn regular_tree_graph_d2_is_k4() {
        let g = build_regular_tree_graph(2).unwrap();
        let k4 = DiGraph::from_edges(4, (0..4).flat_map(|a| (0..4).filter(move |&b| b != a).map(move |b| (a, b)))).unwrap();
        assert_eq!(g, k4);
        assert_eq!(build_regular_tree_graph(1), Err(GraphError::DepthTooSmall(1)));
    }

    #[test]
    fn regular_tree_graph_degrees_and_true_eccentricity() {
        // Extra-root eccentricities from an independent BFS over the
        // construction (path between leaves): 1, 2, 4, 5, 6.
        let expected = [(2, 1), (3, 2), (4, 4), (5, 5), (6, 6)];
        for (d, ecc) in expected {
            let g = build_regular_tree_graph(d).unwrap();
            assert!((0..g.node_count()).all(|v| g.out_degree(v) == 3), "d={d}");
            assert_eq!(g.eccentricity(0), Some(ecc), "d={d}");
        }
    }

    #[test]
    fn moore_bound_rules_out_logarithmic_radius() {
        // In a 3-regular graph at most 1 + 3(2^r - 1) nodes lie within r hops.
        for d in 4..=6u32 {
            let r = d.div_ceil(2) as i32;
            let ball = 1 + 3 * (2i64.pow(r as u32) - 1);
            assert!(ball < (1i64 << d));
            let g = build_regular_tree_graph(d).unwrap();
            let min_ecc = (0..g.node_count()).filter_map(|v| g.eccentricity(v)).min().unwrap();
            assert!(min_ecc > r as usize);
        }
    }

    #[test]
    fn random_rooted_graph_counts() {
        let mut rng = stream_rng(1, 0);
        let (g, root) = random_rooted_graph(2, 0.0, &mut rng).unwrap();
        assert_eq!(g.edge_count(), 1);
        assert!(g.has_edge(root, 1 - root));
        for seed in 0..20 {
            let mut rng = stream_rng(seed, 0);
            let (g, root) = random_rooted_graph(10, 0.0, &mut rng).unwrap();
            assert_eq!(g.edge_count(), 9);
            assert!(g.roots().contains(&root));
            let (full, _) = random_rooted_graph(10, 1.0, &mut rng).unwrap();
            assert_eq!(full.edge_count(), 90);
        }
        assert!(matches!(random_rooted_graph(1, 0.0, &mut stream_rng(0, 0)), Err(GraphError::TooFewNodes(1))));
    }

    #[test]
    fn graph_json_is_sorted_and_one_based() {
        let g = DiGraph::from_edges(3, [(1, 2), (0, 1), (2, 0)]).unwrap();
        let json = serde_json::to_string(&g.to_json()).unwrap();
        assert_eq!(json, r#"{"m":3,"edges":[[1,2],[2,3],[3,1]]}"#);
        assert_eq!(DiGraph::from_json(&g.to_json()).unwrap(), g);
    }

    #[test]
    fn random_sequence_is_deterministic() {
        let src = GraphSource::RandomRooted { m: 6, extra_edge_prob: 0.2, seed: 42 };
        let a = GraphSequence::new(src.clone()).unwrap();
        let b = GraphSequence::new(src).unwrap();
        for t in 0..20 {
            assert_eq!(a.graph_at(t), b.graph_at(t));
            assert!(a.graph_at(t).is_rooted());
        }
        assert_ne!(a.graph_at(0), a.graph_at(1));
    }

    #[test]
    fn roots_match_brute_force_exhaustive_sample() {
        let mut rng = stream_rng(2024, 0);
        for _ in 0..10_000 {
            let m = rng.gen_range(1..=6);
            let p = rng.gen_range(0.0..0.6);
            let mut g = DiGraph::empty(m).unwrap();
            for j in 0..m {
                for i in 0..m {
                    if i != j && rng.gen_bool(p) {
                        g.add_edge(j, i).unwrap();
                    }
                }
            }
            assert_eq!(g.roots(), brute_roots(&g), "{g:?}");
        }
    }

    proptest! {
        #[test]
        fn bfs_tree_invariants(m in 2usize..12, p in 0.0f64..0.5, seed in any::<u64>()) {
            let mut rng = stream_rng(seed, 0);
            let (g, _) = random_rooted_graph(m, p, &mut rng).unwrap();
            for r in g.roots() {
                let t = bfs_spanning_tree(&g, r).unwrap();
                prop_assert!(t.validate(&g).is_ok());
                prop_assert_eq!(Some(t.depth), g.eccentricity(r));
            }
        }
    }
}
