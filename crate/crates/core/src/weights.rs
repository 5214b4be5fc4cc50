//! Row-stochastic weight matrices, the schemes that build them from a graph,
//! and the compliance checker that extracts beta and the spanning trees the
//! rate bounds are stated in terms of.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{bfs_spanning_tree, DiGraph, GraphError, GraphJson, GraphSequence, GraphSource, SpanningTree};
use crate::linalg::Matrix;

/// Row sums and column sums must match 1 within this.
pub const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WeightError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("negative entry {value} at ({i}, {j})")]
    NegativeEntry { i: usize, j: usize, value: f64 },
    #[error("non-finite entry at ({i}, {j})")]
    NonFinite { i: usize, j: usize },
    #[error("row {i} sums to {sum}")]
    RowSum { i: usize, sum: f64 },
    #[error("gamma = {gamma} must exceed m = {m}")]
    GammaTooSmall { gamma: f64, m: usize },
    #[error("Laplacian and Metropolis weights need a symmetric edge set")]
    AsymmetricGraph,
    #[error("node {node} has degree {degree}, quarter weights need degree 3 everywhere")]
    NotThreeRegular { node: usize, degree: usize },
    #[error("matrix order {got} does not match m = {expected}")]
    OrderMismatch { expected: usize, got: usize },
    #[error("explicit matrix sequence is empty")]
    EmptySequence,
    #[error("scheme {0} needs parameter gamma")]
    MissingGamma(&'static str),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Square matrix with nonnegative entries whose rows sum to 1 within
/// [`STOCHASTIC_TOL`].
#[derive(Debug, Clone, PartialEq)]
pub struct RowStochasticMatrix(Matrix);

impl RowStochasticMatrix {
    pub fn new(m: Matrix) -> Result<Self, WeightError> {
        if !m.is_square() {
            return Err(WeightError::NotSquare { rows: m.rows(), cols: m.cols() });
        }
        for i in 0..m.rows() {
            for (j, &v) in m.row(i).iter().enumerate() {
                if !v.is_finite() {
                    return Err(WeightError::NonFinite { i: i + 1, j: j + 1 });
                }
                if v < 0.0 {
                    return Err(WeightError::NegativeEntry { i: i + 1, j: j + 1, value: v });
                }
            }
            let sum: f64 = m.row(i).iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(WeightError::RowSum { i: i + 1, sum });
            }
        }
        Ok(Self(m))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, WeightError> {
        let m = Matrix::from_rows(rows).ok_or(WeightError::NotSquare { rows: rows.len(), cols: 0 })?;
        Self::new(m)
    }

    pub fn identity(m: usize) -> Self {
        Self(Matrix::identity(m))
    }

    pub fn order(&self) -> usize {
        self.0.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn is_doubly_stochastic(&self) -> bool {
        self.0.col_sums().iter().all(|s| (s - 1.0).abs() <= STOCHASTIC_TOL)
    }

    /// Graph of positive off-diagonal entries: `A_ij > 0` gives edge `j -> i`.
    pub fn support_graph(&self) -> DiGraph {
        let m = self.order();
        let edges = (0..m).flat_map(|i| (0..m).filter(move |&j| j != i).map(move |j| (j, i)));
        DiGraph::from_edges(m, edges.filter(|&(j, i)| self.get(i, j) > 0.0)).expect("indices in range")
    }

    pub fn to_json(&self) -> MatrixJson {
        MatrixJson { m: self.order(), rows: self.0.to_rows() }
    }

    pub fn from_json(json: &MatrixJson) -> Result<Self, WeightError> {
        let a = Self::from_rows(&json.rows)?;
        if a.order() != json.m {
            return Err(WeightError::OrderMismatch { expected: json.m, got: a.order() });
        }
        Ok(a)
    }
}

/// `{"m": .., "rows": [[..], ..]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub m: usize,
    pub rows: Vec<Vec<f64>>,
}

/// Pushes the rounding residue of row `i` into its last positive entry.
fn absorb_row_residue(a: &mut Matrix, i: usize) {
    let row = a.row_mut(i);
    let residue = 1.0 - row.iter().sum::<f64>();
    if let Some(last) = row.iter_mut().rev().find(|v| **v > 0.0) {
        *last += residue;
    }
}

fn finish(mut a: Matrix) -> Result<RowStochasticMatrix, WeightError> {
    for i in 0..a.rows() {
        absorb_row_residue(&mut a, i);
    }
    RowStochasticMatrix::new(a)
}

/// `A_ij = 1 / (1 + indeg(i))` for each in-neighbor `j` and for `j = i`.
pub fn equal_neighbor_weights(g: &DiGraph) -> RowStochasticMatrix {
    let m = g.node_count();
    let mut a = Matrix::zeros(m, m);
    for i in 0..m {
        let nbrs = g.in_neighbors(i);
        let w = 1.0 / (1 + nbrs.len()) as f64;
        a[(i, i)] = w;
        for j in nbrs {
            a[(i, j)] = w;
        }
    }
    finish(a).expect("equal-neighbor rows are stochastic by construction")
}

/// `W = I - L / gamma` for the Laplacian `L` of a symmetric graph.
pub fn laplacian_weights(g: &DiGraph, gamma: f64) -> Result<RowStochasticMatrix, WeightError> {
    let m = g.node_count();
    if !(gamma > m as f64) {
        return Err(WeightError::GammaTooSmall { gamma, m });
    }
    if !g.is_symmetric() {
        return Err(WeightError::AsymmetricGraph);
    }
    let mut a = Matrix::identity(m);
    for (j, i) in g.edges() {
        a[(i, j)] = 1.0 / gamma;
        a[(i, i)] -= 1.0 / gamma;
    }
    finish(a)
}

/// Lazy Metropolis weights on a symmetric graph:
/// `A_ij = 1 / (2 max(deg_i, deg_j))` on edges, diagonal takes the rest.
pub fn lazy_metropolis_weights(g: &DiGraph) -> Result<RowStochasticMatrix, WeightError> {
    if !g.is_symmetric() {
        return Err(WeightError::AsymmetricGraph);
    }
    let m = g.node_count();
    let deg: Vec<usize> = (0..m).map(|v| g.out_degree(v)).collect();
    let mut a = Matrix::zeros(m, m);
    for i in 0..m {
        let mut off = 0.0;
        for j in g.in_neighbors(i) {
            let w = 1.0 / (2 * deg[i].max(deg[j])) as f64;
            a[(i, j)] = w;
            off += w;
        }
        a[(i, i)] = 1.0 - off;
    }
    RowStochasticMatrix::new(a)
}

/// `A_ij = 1/4` for each neighbor and self on a 3-regular symmetric graph.
pub fn regular_quarter_weights(g: &DiGraph) -> Result<RowStochasticMatrix, WeightError> {
    let m = g.node_count();
    for v in 0..m {
        let (out, inn) = (g.out_degree(v), g.in_degree(v));
        if out != 3 || inn != 3 {
            return Err(WeightError::NotThreeRegular { node: v + 1, degree: out.max(inn) });
        }
    }
    if !g.is_symmetric() {
        return Err(WeightError::AsymmetricGraph);
    }
    let mut a = Matrix::zeros(m, m);
    for i in 0..m {
        a[(i, i)] = 0.25;
        for j in g.in_neighbors(i) {
            a[(i, j)] = 0.25;
        }
    }
    RowStochasticMatrix::new(a)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "kebab-case")]
pub enum WeightScheme {
    EqualNeighbor,
    LazyMetropolis,
    Laplacian { gamma: f64 },
    RegularQuarter,
}

impl WeightScheme {
    pub fn name(&self) -> &'static str {
        match self {
            WeightScheme::EqualNeighbor => "equal-neighbor",
            WeightScheme::LazyMetropolis => "lazy-metropolis",
            WeightScheme::Laplacian { .. } => "laplacian",
            WeightScheme::RegularQuarter => "regular-quarter",
        }
    }

    pub fn build(&self, g: &DiGraph) -> Result<RowStochasticMatrix, WeightError> {
        match *self {
            WeightScheme::EqualNeighbor => Ok(equal_neighbor_weights(g)),
            WeightScheme::LazyMetropolis => lazy_metropolis_weights(g),
            WeightScheme::Laplacian { gamma } => laplacian_weights(g, gamma),
            WeightScheme::RegularQuarter => regular_quarter_weights(g),
        }
    }
}

/// Graph given either as a literal graph or as a generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GraphInput {
    Generator(GraphSource),
    Literal(GraphJson),
}

impl GraphInput {
    pub fn into_source(self) -> GraphSource {
        match self {
            GraphInput::Generator(s) => s,
            GraphInput::Literal(graph) => GraphSource::Static { graph },
        }
    }
}

/// Sequence file: a list of matrices (cycled past its end) or a scheme
/// applied to a graph sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SequenceSpec {
    Explicit(Vec<MatrixJson>),
    Generated {
        #[serde(flatten)]
        scheme: WeightScheme,
        graph: GraphInput,
    },
}

#[derive(Debug, Clone)]
enum Source {
    Generated { graphs: GraphSequence, scheme: WeightScheme },
    Explicit { matrices: Vec<RowStochasticMatrix>, graphs: Vec<DiGraph> },
}

/// `A(0), A(1), ...` paired with `G_0, G_1, ...`.
///
/// Generated sequences are defined for every `t`. Explicit lists repeat
/// cyclically, which is the extension rule used past the stored horizon.
#[derive(Debug, Clone)]
pub struct MatrixSequence {
    source: Source,
    m: usize,
}

impl MatrixSequence {
    pub fn generated(graphs: GraphSequence, scheme: WeightScheme) -> Self {
        let m = graphs.node_count();
        Self { source: Source::Generated { graphs, scheme }, m }
    }

    /// Explicit matrices; the graph at each time is the matrix support.
    pub fn explicit(matrices: Vec<RowStochasticMatrix>) -> Result<Self, WeightError> {
        let m = matrices.first().ok_or(WeightError::EmptySequence)?.order();
        if let Some(a) = matrices.iter().find(|a| a.order() != m) {
            return Err(WeightError::OrderMismatch { expected: m, got: a.order() });
        }
        let graphs = matrices.iter().map(RowStochasticMatrix::support_graph).collect();
        Ok(Self { source: Source::Explicit { matrices, graphs }, m })
    }

    /// Explicit matrices over explicitly given graphs.
    pub fn explicit_with_graphs(
        matrices: Vec<RowStochasticMatrix>,
        graphs: Vec<DiGraph>,
    ) -> Result<Self, WeightError> {
        let mut seq = Self::explicit(matrices)?;
        if let Some(g) = graphs.iter().find(|g| g.node_count() != seq.m) {
            return Err(WeightError::OrderMismatch { expected: seq.m, got: g.node_count() });
        }
        if let Source::Explicit { graphs: ref mut gs, ref matrices } = seq.source {
            if graphs.len() != matrices.len() {
                return Err(WeightError::OrderMismatch { expected: matrices.len(), got: graphs.len() });
            }
            *gs = graphs;
        }
        Ok(seq)
    }

    pub fn constant(a: RowStochasticMatrix) -> Self {
        Self::explicit(vec![a]).expect("single matrix is a valid sequence")
    }

    pub fn from_spec(spec: SequenceSpec) -> Result<Self, WeightError> {
        match spec {
            SequenceSpec::Explicit(list) => {
                Self::explicit(list.iter().map(RowStochasticMatrix::from_json).collect::<Result<_, _>>()?)
            }
            SequenceSpec::Generated { scheme, graph } => {
                Ok(Self::generated(GraphSequence::new(graph.into_source())?, scheme))
            }
        }
    }

    pub fn node_count(&self) -> usize {
        self.m
    }

    pub fn scheme_tag(&self) -> &'static str {
        match &self.source {
            Source::Generated { scheme, .. } => scheme.name(),
            Source::Explicit { .. } => "custom",
        }
    }

    /// Whether the sequence repeats a single matrix.
    pub fn is_constant(&self) -> bool {
        match &self.source {
            Source::Explicit { matrices, .. } => matrices.len() == 1,
            Source::Generated { graphs, .. } => {
                matches!(graphs.source(), GraphSource::Static { .. } | GraphSource::RegularTree { .. })
            }
        }
    }

    pub fn graph_at(&self, t: usize) -> DiGraph {
        match &self.source {
            Source::Generated { graphs, .. } => graphs.graph_at(t),
            Source::Explicit { graphs, .. } => graphs[t % graphs.len()].clone(),
        }
    }

    pub fn matrix_at(&self, t: usize) -> Result<RowStochasticMatrix, WeightError> {
        match &self.source {
            Source::Generated { graphs, scheme } => scheme.build(&graphs.graph_at(t)),
            Source::Explicit { matrices, .. } => Ok(matrices[t % matrices.len()].clone()),
        }
    }

    /// `A(start), ..., A(start + len - 1)`.
    pub fn window(&self, start: usize, len: usize) -> Result<Vec<RowStochasticMatrix>, WeightError> {
        (start..start + len).map(|t| self.matrix_at(t)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssumptionLevel {
    Assumption1,
    Assumption2,
    Neither,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub t: usize,
    pub reason: String,
}

/// Outcome of [`verify_assumptions`] over `0..horizon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceReport {
    pub level: AssumptionLevel,
    pub horizon: usize,
    /// Minimum over diagonal entries and tree-edge entries.
    pub beta: f64,
    /// Minimum positive entry (the uniform-positivity constant).
    pub beta_uniform: f64,
    pub doubly_stochastic: bool,
    /// Deepest spanning tree used, `max_t p*(t)`.
    pub p_star: usize,
    pub trees: Vec<SpanningTree>,
    /// First failure of the weaker assumption, if any.
    pub violation: Option<Violation>,
    /// First failure of the stronger assumption, if any.
    pub assumption1_violation: Option<Violation>,
}

impl ComplianceReport {
    pub fn is_certified(&self) -> bool {
        self.level != AssumptionLevel::Neither
    }

    /// `p*(t)` for each checked time.
    pub fn depth_at(&self, t: usize) -> usize {
        self.trees[t].depth
    }
}

/// Checks stochasticity, aperiodicity and graph compliance at each `t` in
/// `0..horizon`, building a compliant BFS spanning tree per step.
pub fn verify_assumptions(seq: &MatrixSequence, horizon: usize) -> ComplianceReport {
    let mut trees = Vec::with_capacity(horizon);
    let mut beta = f64::INFINITY;
    let mut beta_uniform = f64::INFINITY;
    let mut doubly = true;
    let mut a1_violation: Option<Violation> = None;
    let fail = |t: usize, reason: String, a1: Option<Violation>, doubly: bool| ComplianceReport {
        level: AssumptionLevel::Neither,
        horizon,
        beta: 0.0,
        beta_uniform: 0.0,
        doubly_stochastic: doubly,
        p_star: 0,
        trees: Vec::new(),
        violation: Some(Violation { t, reason: reason.clone() }),
        assumption1_violation: a1.or(Some(Violation { t, reason })),
    };
    for t in 0..horizon {
        let a = match seq.matrix_at(t) {
            Ok(a) => a,
            Err(e) => return fail(t, e.to_string(), a1_violation, false),
        };
        // Re-check the stochastic invariant; explicit inputs pass through here.
        if let Err(e) = RowStochasticMatrix::new(a.matrix().clone()) {
            return fail(t, e.to_string(), a1_violation, false);
        }
        let m = a.order();
        if let Some(i) = (0..m).find(|&i| a.get(i, i) <= 0.0) {
            return fail(t, format!("diagonal entry A_{0}{0} is not positive", i + 1), a1_violation, doubly);
        }
        doubly &= a.is_doubly_stochastic();
        let g = seq.graph_at(t);

        if a1_violation.is_none() {
            if !g.is_strongly_connected() {
                a1_violation = Some(Violation { t, reason: "graph not strongly connected".into() });
            } else if let Some((j, i)) = g.edges().find(|&(j, i)| a.get(i, j) <= 0.0) {
                a1_violation =
                    Some(Violation { t, reason: format!("edge {}->{} has zero weight", j + 1, i + 1) });
            }
        }

        let compliant = g.filter_edges(|j, i| a.get(i, j) > 0.0);
        let Some(root) = compliant.first_root() else {
            let reason = if g.is_rooted() {
                "no spanning tree of the graph carries positive weight"
            } else {
                "graph is not rooted"
            };
            return fail(t, reason.into(), a1_violation, doubly);
        };
        let tree = bfs_spanning_tree(&compliant, root).expect("root reaches every node");
        let step_beta = (0..m)
            .map(|i| a.get(i, i))
            .chain(tree.edges().map(|(p, c)| a.get(c, p)))
            .fold(f64::INFINITY, f64::min);
        beta = beta.min(step_beta);
        let step_uniform = a.matrix().as_slice().iter().copied().filter(|&v| v > 0.0).fold(f64::INFINITY, f64::min);
        beta_uniform = beta_uniform.min(step_uniform);
        trees.push(tree);
    }
    let level = if a1_violation.is_none() { AssumptionLevel::Assumption1 } else { AssumptionLevel::Assumption2 };
    let p_star = trees.iter().map(|t| t.depth).max().unwrap_or(0);
    ComplianceReport {
        level,
        horizon,
        beta: if beta.is_finite() { beta } else { 0.0 },
        beta_uniform: if beta_uniform.is_finite() { beta_uniform } else { 0.0 },
        doubly_stochastic: doubly,
        p_star,
        trees,
        violation: None,
        assumption1_violation: a1_violation,
    }
}
