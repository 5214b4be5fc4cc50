//! Unconstrained and projected weighted-averaging dynamics, and the
//! per-step certificates evaluated on a finished trajectory.
//!
//! A run is [`prepare`] (sequence, compliance, adjoint), [`simulate`]
//! (states only), then [`certify`]. Verification of a stored trajectory goes
//! through the same `prepare` and `certify`, so verdicts are bit-stable.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adjoint::{
    assemble_adjoint, stationary_adjoint, uniform_adjoint, AbsoluteProbabilitySequence, AdjointError,
    DEFAULT_MAX_WINDOW, DEFAULT_SPREAD_TOL,
};
use crate::exec::Execution;
use crate::graph::{DiGraph, GraphError, GraphJson};
use crate::linalg::{dist_sq, norm, norm_sq};
use crate::lyapunov::{
    apply, comparison_fn_vec, decrement_sum, decrement_vec, matrix_product_sweep, rate_certificate, rate_quotient,
    spread_sq, state_scale, weighted_mean, weighted_sq_dist, CertificateRecord, CheckKind, LyapunovError,
    IDENTITY_TOL, NOISE_FLOOR, VALUE_SLACK,
};
use crate::rng::{stream, stream_rng};
use crate::sets::{regularity_interior, regularity_sampling, ConvexSet, RegionBall, RegularityEstimate, SetError, FEAS_TOL};
use crate::weights::{
    verify_assumptions, ComplianceReport, MatrixSequence, RowStochasticMatrix, SequenceSpec, WeightError,
};

/// Agent-major states: `x[i][k]` is coordinate `k` of agent `i`.
pub type States = Vec<Vec<f64>>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl EngineError {
    /// Process exit code: 2 for configuration problems, 4 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            EngineError::Config(_) | EngineError::DimensionMismatch { .. } => 2,
            EngineError::Numerical(_) => 4,
        }
    }
}

impl From<WeightError> for EngineError {
    fn from(e: WeightError) -> Self {
        EngineError::Config(e.to_string())
    }
}

impl From<GraphError> for EngineError {
    fn from(e: GraphError) -> Self {
        EngineError::Config(e.to_string())
    }
}

impl From<AdjointError> for EngineError {
    fn from(e: AdjointError) -> Self {
        match e {
            AdjointError::NotErgodicWithinWindow { .. }
            | AdjointError::AdjointResidualTooLarge { .. }
            | AdjointError::StationaryNotConverged
            | AdjointError::CrossCheckFailed { .. } => EngineError::Numerical(e.to_string()),
            _ => EngineError::Config(e.to_string()),
        }
    }
}

impl From<SetError> for EngineError {
    fn from(e: SetError) -> Self {
        match e {
            SetError::DykstraNotConverged { .. } | SetError::NoInformativeSamples => EngineError::Numerical(e.to_string()),
            _ => EngineError::Config(e.to_string()),
        }
    }
}

impl From<LyapunovError> for EngineError {
    fn from(e: LyapunovError) -> Self {
        EngineError::Config(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Unconstrained,
    Constrained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialStates {
    Explicit { states: States },
    /// Uniform in `[lower, upper]^n`, then projected onto `X_i` in constrained mode.
    RandomBox { lower: f64, upper: f64 },
}

impl Default for InitialStates {
    fn default() -> Self {
        InitialStates::RandomBox { lower: -1.0, upper: 1.0 }
    }
}

fn default_spread_tol() -> f64 {
    DEFAULT_SPREAD_TOL
}

fn default_max_window() -> usize {
    DEFAULT_MAX_WINDOW
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum AdjointChoice {
    /// Uniform when every `A(t)` is doubly stochastic, backward products otherwise.
    #[default]
    Auto,
    Uniform,
    BackwardProduct {
        #[serde(default = "default_spread_tol")]
        spread_tol: f64,
        #[serde(default = "default_max_window")]
        max_window: usize,
    },
    Stationary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum RegularityChoice {
    /// Interior ball `B(x_bar, theta)` in every set; the region is the
    /// observed iterate ball `B(0, rho)`.
    Interior { theta: f64, x_bar: Vec<f64> },
    /// Sampling lower bound over `B(0, rho)`, escalated on violation.
    Sampling { samples: usize },
    Fixed { r: f64 },
}

fn yes() -> bool {
    true
}

fn default_span() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateToggles {
    #[serde(default = "yes")]
    pub enabled: bool,
    /// Restrict to these checks; all applicable checks when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub only: Option<Vec<CheckKind>>,
    /// Largest `t - k` in the matrix-product check.
    #[serde(default = "default_span")]
    pub matrix_product_span: usize,
}

impl Default for CertificateToggles {
    fn default() -> Self {
        Self { enabled: true, only: None, matrix_product_span: default_span() }
    }
}

impl CertificateToggles {
    fn wants(&self, kind: CheckKind) -> bool {
        self.enabled && self.only.as_ref().map_or(true, |o| o.contains(&kind))
    }
}

fn one() -> usize {
    1
}

fn default_horizon() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub m: usize,
    #[serde(default = "one")]
    pub n: usize,
    pub weights: SequenceSpec,
    /// Communication graphs for explicit matrix lists (cycled with them);
    /// the matrix supports are used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graphs: Option<Vec<GraphJson>>,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub initial: InitialStates,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sets: Option<Vec<ConvexSet>>,
    #[serde(default)]
    pub adjoint: AdjointChoice,
    #[serde(default)]
    pub certificates: CertificateToggles,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regularity: Option<RegularityChoice>,
    /// Start times `k` for the rate checks; `[0, horizon/2]` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ks: Option<Vec<usize>>,
}

impl RunConfig {
    pub fn ks(&self) -> Vec<usize> {
        self.ks.clone().unwrap_or_else(|| {
            let mut ks = vec![0, self.horizon / 2];
            ks.dedup();
            ks
        })
    }

    /// Copy with defaults that depend on other fields written out.
    pub fn resolved(&self) -> RunConfig {
        let mut c = self.clone();
        c.ks = Some(self.ks());
        if c.mode == Mode::Constrained && c.regularity.is_none() {
            c.regularity = Some(RegularityChoice::Sampling { samples: 10_000 });
        }
        c
    }
}

/// Everything a run needs besides the states.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: RunConfig,
    pub sequence: MatrixSequence,
    /// `A(0), ..., A(T-1)`.
    pub matrices: Vec<RowStochasticMatrix>,
    pub compliance: ComplianceReport,
    pub adjoint: AbsoluteProbabilitySequence,
    pub sets: Vec<ConvexSet>,
}

impl Prepared {
    pub fn intersection(&self) -> Option<ConvexSet> {
        (!self.sets.is_empty()).then(|| ConvexSet::Intersection { sets: self.sets.clone() })
    }
}

/// Builds the sequence, checks the assumptions and computes the adjoint.
pub fn prepare(config: &RunConfig) -> Result<Prepared, EngineError> {
    let config = config.resolved();
    if config.m == 0 || config.n == 0 {
        return Err(EngineError::Config("m and n must be positive".into()));
    }
    if config.horizon == 0 {
        return Err(EngineError::Config("horizon must be positive".into()));
    }
    let sequence = match (&config.weights, &config.graphs) {
        (SequenceSpec::Explicit(list), Some(graphs)) => {
            let mats = list.iter().map(RowStochasticMatrix::from_json).collect::<Result<Vec<_>, _>>()?;
            let gs = graphs.iter().map(DiGraph::from_json).collect::<Result<Vec<_>, _>>()?;
            MatrixSequence::explicit_with_graphs(mats, gs)?
        }
        (_, Some(_)) => return Err(EngineError::Config("graphs are only used with explicit matrices".into())),
        (spec, None) => MatrixSequence::from_spec(spec.clone())?,
    };
    if sequence.node_count() != config.m {
        return Err(EngineError::DimensionMismatch { expected: config.m, got: sequence.node_count() });
    }
    let compliance = verify_assumptions(&sequence, config.horizon);
    if let Some(v) = &compliance.violation {
        return Err(EngineError::Config(format!("compliance neither: t={} {}", v.t, v.reason)));
    }
    let matrices = sequence.window(0, config.horizon)?;
    let horizon = config.horizon;
    let adjoint = match &config.adjoint {
        AdjointChoice::Auto if compliance.doubly_stochastic => uniform_adjoint(&sequence, horizon)?,
        AdjointChoice::Auto => assemble_adjoint(&sequence, horizon, DEFAULT_SPREAD_TOL, DEFAULT_MAX_WINDOW)?,
        AdjointChoice::Uniform => uniform_adjoint(&sequence, horizon)?,
        AdjointChoice::BackwardProduct { spread_tol, max_window } => {
            assemble_adjoint(&sequence, horizon, *spread_tol, *max_window)?
        }
        AdjointChoice::Stationary => stationary_adjoint(&sequence, horizon)?,
    };
    let sets = match (config.mode, &config.sets) {
        (Mode::Unconstrained, _) => Vec::new(),
        (Mode::Constrained, None) => return Err(EngineError::Config("constrained mode needs sets".into())),
        (Mode::Constrained, Some(sets)) => {
            if sets.len() != config.m {
                return Err(EngineError::DimensionMismatch { expected: config.m, got: sets.len() });
            }
            for s in sets {
                s.validate()?;
                if s.dim() != config.n {
                    return Err(EngineError::DimensionMismatch { expected: config.n, got: s.dim() });
                }
            }
            sets.clone()
        }
    };
    Ok(Prepared { config, sequence, matrices, compliance, adjoint, sets })
}

fn check_dims(x: &[Vec<f64>], m: usize, n: usize) -> Result<(), EngineError> {
    if x.len() != m {
        return Err(EngineError::DimensionMismatch { expected: m, got: x.len() });
    }
    if let Some(bad) = x.iter().find(|xi| xi.len() != n) {
        return Err(EngineError::DimensionMismatch { expected: n, got: bad.len() });
    }
    Ok(())
}

/// `x_i(t+1) = sum_j A_ij x_j(t)`.
pub fn step_unconstrained(x: &[Vec<f64>], a: &RowStochasticMatrix) -> Result<States, EngineError> {
    check_dims(x, a.order(), x.first().map_or(0, Vec::len))?;
    Ok(apply(a, x))
}

/// Averaging followed by projection: returns `(w(t+1), x(t+1))`.
pub fn step_constrained(x: &[Vec<f64>], a: &RowStochasticMatrix, sets: &[ConvexSet]) -> Result<(States, States), EngineError> {
    let w = step_unconstrained(x, a)?;
    if sets.len() != w.len() {
        return Err(EngineError::DimensionMismatch { expected: w.len(), got: sets.len() });
    }
    let next = w.iter().zip(sets).map(|(wi, s)| s.project(wi)).collect::<Result<Vec<_>, _>>()?;
    Ok((w, next))
}

/// `V(t, y) = sum_i pi_i |x_i - y|^2`.
pub fn v_function(x: &[Vec<f64>], pi: &[f64], y: &[f64]) -> f64 {
    weighted_sq_dist(x, pi, y)
}

/// `(phi'v - s)^2 - [sum_j phi_j (v_j - s)^2 - 1/2 sum_j sum_l phi_j phi_l (v_j - v_l)^2]`.
pub fn lemma5_identity_check(v: &[f64], phi: &[f64], s: f64) -> f64 {
    let mean: f64 = v.iter().zip(phi).map(|(a, b)| a * b).sum();
    let lhs = (mean - s).powi(2);
    let first: f64 = v.iter().zip(phi).map(|(a, b)| b * (a - s).powi(2)).sum();
    let mut pair = 0.0;
    for (j, (vj, pj)) in v.iter().zip(phi).enumerate() {
        for (vl, pl) in v[j + 1..].iter().zip(&phi[j + 1..]) {
            pair += pj * pl * (vj - vl).powi(2);
        }
    }
    // The full double sum counts each unordered pair twice.
    lhs - (first - pair)
}

/// `u = sum_i pi_i x_i` and `v = P_X[u]`.
pub fn track_uv(x: &[Vec<f64>], pi: &[f64], whole: &ConvexSet) -> Result<(Vec<f64>, Vec<f64>), EngineError> {
    let u = weighted_mean(x, pi);
    let v = whole.project(&u)?;
    Ok((u, v))
}

/// Stored states of a run: `x[t]` for `t = 0..=T` and, in constrained mode,
/// `w[t]` = `w(t+1)` for `t = 0..T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub x: Vec<States>,
    pub w: Option<Vec<States>>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.x.len() - 1
    }

    /// `max_{i,t} |x_i(t)|`.
    pub fn radius(&self) -> f64 {
        self.x.iter().flatten().map(|xi| norm(xi)).fold(0.0, f64::max)
    }
}

fn initial_states(p: &Prepared) -> Result<States, EngineError> {
    let c = &p.config;
    match &c.initial {
        InitialStates::Explicit { states } => {
            check_dims(states, c.m, c.n)?;
            if states.iter().flatten().any(|v| !v.is_finite()) {
                return Err(EngineError::Config("initial states must be finite".into()));
            }
            if let Some(i) = p.sets.iter().zip(states).position(|(s, x)| !s.contains(x, FEAS_TOL)) {
                return Err(EngineError::Config(format!("initial state of agent {} is not in its set", i + 1)));
            }
            Ok(states.clone())
        }
        InitialStates::RandomBox { lower, upper } => {
            if !(lower < upper) || !lower.is_finite() || !upper.is_finite() {
                return Err(EngineError::Config("random box needs finite lower < upper".into()));
            }
            use rand::Rng;
            let mut rng = stream_rng(c.seed, stream::INITIAL_STATES);
            let raw: States = (0..c.m).map(|_| (0..c.n).map(|_| rng.gen_range(*lower..*upper)).collect()).collect();
            if p.sets.is_empty() {
                return Ok(raw);
            }
            Ok(raw.iter().zip(&p.sets).map(|(x, s)| s.project(x)).collect::<Result<_, _>>()?)
        }
    }
}

/// Runs the dynamic for the configured horizon.
pub fn simulate(p: &Prepared) -> Result<Trajectory, EngineError> {
    let mut x = vec![initial_states(p)?];
    let constrained = p.config.mode == Mode::Constrained;
    let mut w = constrained.then(Vec::new);
    for a in &p.matrices {
        let cur = x.last().expect("non-empty");
        if constrained {
            let (wt, next) = step_constrained(cur, a, &p.sets)?;
            w.as_mut().expect("constrained").push(wt);
            x.push(next);
        } else {
            x.push(step_unconstrained(cur, a)?);
        }
    }
    Ok(Trajectory { x, w })
}

/// Per-time quantities shared by the certificates and the exports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub t: usize,
    pub spread_sq: f64,
    /// `phi(x(t), pi(t))` unconstrained, `V(t, y)` at the fixed test point constrained.
    pub lyap: f64,
    /// `D(t)`; absent at the final time.
    pub decrement: Option<f64>,
    pub v_vt: Option<f64>,
    /// `dist^2(x_j(t), X)` per agent.
    pub dist_sq_x: Option<Vec<f64>>,
    pub u: Option<Vec<f64>>,
    pub v: Option<Vec<f64>>,
}

/// Regularity constant used by the constrained rate checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityUse {
    pub estimate: Option<RegularityEstimate>,
    pub r_initial: f64,
    pub r_used: f64,
    /// Doublings applied after violations with a sampled `r`.
    pub escalations: usize,
    /// True when `r` is a sampled lower bound rather than a proven constant.
    pub is_estimate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Certification {
    pub steps: Vec<StepMetrics>,
    pub records: Vec<CertificateRecord>,
    pub q_step: f64,
    /// Constrained per-step factor `1 - delta beta^2 / (4 p* (r+1)^2)`.
    pub constrained_factor: Option<f64>,
    pub regularity: Option<RegularityUse>,
    /// Fixed test point `y = v(0)` of the constrained checks.
    pub test_point: Option<Vec<f64>>,
    pub rho: f64,
    pub conservation_drift: f64,
}

impl Certification {
    pub fn violations(&self) -> usize {
        self.records.iter().filter(|r| !r.verdict.is_pass()).count()
    }

    pub fn all_pass(&self) -> bool {
        self.violations() == 0
    }
}

/// Evaluates every enabled certificate on `traj`. Per-time work runs under
/// `exec`; the result does not depend on it.
pub fn certify(p: &Prepared, traj: &Trajectory, exec: Execution) -> Result<Certification, EngineError> {
    let c = &p.config;
    let horizon = c.horizon;
    if traj.x.len() != horizon + 1 {
        return Err(EngineError::DimensionMismatch { expected: horizon + 1, got: traj.x.len() });
    }
    for x in &traj.x {
        check_dims(x, c.m, c.n)?;
    }
    let q_step = rate_quotient(p.adjoint.delta, p.compliance.beta, p.compliance.p_star)?;
    match c.mode {
        Mode::Unconstrained => certify_unconstrained(p, traj, exec, q_step),
        Mode::Constrained => certify_constrained(p, traj, exec, q_step),
    }
}

fn certify_unconstrained(p: &Prepared, traj: &Trajectory, exec: Execution, q_step: f64) -> Result<Certification, EngineError> {
    let c = &p.config;
    let horizon = c.horizon;
    let adj = &p.adjoint;
    let steps: Vec<StepMetrics> = exec.map_range(horizon + 1, |t| {
        let x = &traj.x[t];
        let lyap = comparison_fn_vec(x, adj.pi(t)).map(|v| v.value).unwrap_or(f64::NAN);
        let decrement = (t < horizon).then(|| decrement_sum(&p.matrices[t], x, adj.pi(t + 1)));
        StepMetrics { t, spread_sq: spread_sq(x), lyap, decrement, v_vt: None, dist_sq_x: None, u: None, v: None }
    });

    let toggles = &c.certificates;
    let mut records = Vec::new();
    let c0 = weighted_mean(&traj.x[0], adj.pi(0));
    let x0_norm = traj.x[0].iter().map(|xi| norm_sq(xi)).sum::<f64>().sqrt();
    let mut drift: f64 = 0.0;
    for t in 0..=horizon {
        let x = &traj.x[t];
        let ct = weighted_mean(x, adj.pi(t));
        let d = ct.iter().zip(&c0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        drift = drift.max(d);
        if toggles.wants(CheckKind::Conservation) {
            records.push(CertificateRecord::identity(CheckKind::Conservation, t, d, IDENTITY_TOL * (1.0 + x0_norm)));
        }
        if t == horizon {
            continue;
        }
        let dt = steps[t].decrement.expect("t < horizon");
        if toggles.wants(CheckKind::LyapunovStep) {
            let residual = steps[t + 1].lyap - (steps[t].lyap - dt);
            records.push(CertificateRecord::identity(CheckKind::LyapunovStep, t, residual, IDENTITY_TOL * state_scale(x)));
        }
        if toggles.wants(CheckKind::DecrementBound) {
            let rec = decrement_vec(
                t,
                &p.matrices[t],
                x,
                adj.pi(t + 1),
                adj.delta,
                p.compliance.beta,
                p.compliance.depth_at(t),
            );
            records.push(rec.to_certificate());
        }
    }
    let kind = if c.n == 1 { CheckKind::Theorem2 } else { CheckKind::VectorCase };
    if toggles.wants(kind) {
        for k in c.ks().into_iter().filter(|&k| k <= horizon) {
            let rb = rate_certificate(kind, &traj.x, adj, p.compliance.beta, p.compliance.p_star, k)?;
            records.extend(rb.records);
        }
    }
    if toggles.wants(CheckKind::MatrixProduct) {
        records.extend(matrix_product_records(p, exec)?);
    }
    Ok(Certification {
        steps,
        records,
        q_step,
        constrained_factor: None,
        regularity: None,
        test_point: None,
        rho: traj.radius(),
        conservation_drift: drift,
    })
}

fn matrix_product_records(p: &Prepared, exec: Execution) -> Result<Vec<CertificateRecord>, EngineError> {
    let horizon = p.config.horizon;
    let span = p.config.certificates.matrix_product_span;
    let mut out = Vec::new();
    for k in p.config.ks().into_iter().filter(|&k| k < horizon) {
        let s = span.min(horizon - 1 - k);
        out.extend(matrix_product_sweep(&p.sequence, &p.adjoint, p.compliance.beta, p.compliance.p_star, &[k], s, exec)?);
    }
    Ok(out)
}

fn regularity_for(p: &Prepared, rho: f64) -> Result<RegularityUse, EngineError> {
    let region = RegionBall { center: vec![0.0; p.config.n], radius: rho };
    match p.config.regularity.as_ref().expect("resolved config") {
        RegularityChoice::Interior { theta, x_bar } => {
            if x_bar.len() != p.config.n {
                return Err(EngineError::DimensionMismatch { expected: p.config.n, got: x_bar.len() });
            }
            let est = regularity_interior(&p.sets, *theta, x_bar, &region)?;
            Ok(RegularityUse { r_initial: est.r_hat, r_used: est.r_hat, estimate: Some(est), escalations: 0, is_estimate: false })
        }
        RegularityChoice::Sampling { samples } => {
            let est = regularity_sampling(&p.sets, &region, *samples, p.config.seed, Execution::Parallel)?;
            Ok(RegularityUse { r_initial: est.r_hat, r_used: est.r_hat, estimate: Some(est), escalations: 0, is_estimate: true })
        }
        RegularityChoice::Fixed { r } => {
            if !(*r >= 1.0) {
                return Err(EngineError::Config("regularity constant must be at least 1".into()));
            }
            Ok(RegularityUse { r_initial: *r, r_used: *r, estimate: None, escalations: 0, is_estimate: true })
        }
    }
}

const MAX_ESCALATIONS: usize = 30;

fn certify_constrained(p: &Prepared, traj: &Trajectory, exec: Execution, q_step: f64) -> Result<Certification, EngineError> {
    let c = &p.config;
    let horizon = c.horizon;
    let adj = &p.adjoint;
    let whole = p.intersection().expect("constrained mode has sets");
    let w = traj.w.as_ref().ok_or_else(|| EngineError::Config("constrained trajectory lacks w".into()))?;
    if w.len() != horizon {
        return Err(EngineError::DimensionMismatch { expected: horizon, got: w.len() });
    }
    let (_, y) = track_uv(&traj.x[0], adj.pi(0), &whole)?;
    if !whole.contains(&y, FEAS_TOL) {
        return Err(EngineError::Numerical("test point y is not in X".into()));
    }

    let per_t: Vec<Result<StepMetrics, EngineError>> = exec.map_range(horizon + 1, |t| {
        let x = &traj.x[t];
        let (u, v) = track_uv(x, adj.pi(t), &whole)?;
        let mut dists = Vec::with_capacity(x.len());
        for xi in x {
            dists.push(whole.distance(xi)?.powi(2));
        }
        Ok(StepMetrics {
            t,
            spread_sq: spread_sq(x),
            lyap: v_function(x, adj.pi(t), &y),
            decrement: (t < horizon).then(|| decrement_sum(&p.matrices[t], x, adj.pi(t + 1))),
            v_vt: Some(v_function(x, adj.pi(t), &v)),
            dist_sq_x: Some(dists),
            u: Some(u),
            v: Some(v),
        })
    });
    let steps = per_t.into_iter().collect::<Result<Vec<_>, _>>()?;

    let rho = traj.radius();
    let floor = NOISE_FLOOR * rho.max(norm(&y)).powi(2).max(1.0);
    let gain = adj.delta * p.compliance.beta.powi(2) / (4.0 * p.compliance.p_star.max(1) as f64);
    let toggles = &c.certificates;
    let mut records = Vec::new();
    for t in 0..horizon {
        let x = &traj.x[t];
        let dt = steps[t].decrement.expect("t < horizon");
        if toggles.wants(CheckKind::Lemma5Identity) {
            let averaged = v_function(&w[t], adj.pi(t + 1), &y);
            let scale = (state_scale(x) + norm_sq(&y)).max(1.0);
            records.push(CertificateRecord::identity(
                CheckKind::Lemma5Identity,
                t,
                averaged - (steps[t].lyap - dt),
                IDENTITY_TOL * scale,
            ));
        }
        if toggles.wants(CheckKind::Theorem5) {
            let rhs = steps[t].lyap - gain * steps[t].spread_sq;
            records.push(CertificateRecord::inequality(CheckKind::Theorem5, t, t, steps[t + 1].lyap, rhs, VALUE_SLACK, floor));
        }
    }

    let mut reg = regularity_for(p, rho)?;
    let v0 = steps[0].v_vt.expect("constrained");
    let rate_records = |r: f64| -> Result<(f64, Vec<CertificateRecord>), EngineError> {
        let factor = 1.0 - gain / (r + 1.0).powi(2);
        if factor >= 1.0 - 1e-12 {
            return Err(LyapunovError::VacuousBound { gain: gain / (r + 1.0).powi(2) }.into());
        }
        let mut out = Vec::new();
        if toggles.wants(CheckKind::Theorem7) {
            for t in 0..horizon {
                let lhs = steps[t + 1].v_vt.expect("constrained");
                let rhs = factor * steps[t].v_vt.expect("constrained");
                out.push(CertificateRecord::inequality(CheckKind::Theorem7, t, t, lhs, rhs, VALUE_SLACK, floor));
            }
        }
        if toggles.wants(CheckKind::Theorem8) {
            for (t, s) in steps.iter().enumerate() {
                let lhs: f64 = s.dist_sq_x.as_ref().expect("constrained").iter().sum();
                let rhs = factor.powf(t as f64) * v0 / adj.delta;
                out.push(CertificateRecord::inequality(CheckKind::Theorem8, t, 0, lhs, rhs, VALUE_SLACK, floor));
            }
        }
        Ok((factor, out))
    };
    let (mut factor, mut rate) = rate_records(reg.r_used)?;
    while reg.is_estimate && rate.iter().any(|r| !r.verdict.is_pass()) && reg.escalations < MAX_ESCALATIONS {
        reg.r_used *= 2.0;
        reg.escalations += 1;
        (factor, rate) = rate_records(reg.r_used)?;
    }
    if reg.escalations > 0 {
        log::info!("regularity constant escalated {}x to r = {}", reg.escalations, reg.r_used);
    }
    records.extend(rate);
    if toggles.wants(CheckKind::MatrixProduct) {
        records.extend(matrix_product_records(p, exec)?);
    }
    Ok(Certification {
        steps,
        records,
        q_step,
        constrained_factor: Some(factor),
        regularity: Some(reg),
        test_point: Some(y),
        rho,
        conservation_drift: f64::NAN,
    })
}

/// A finished run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub prepared: Prepared,
    pub trajectory: Trajectory,
    pub certification: Certification,
}

/// `prepare`, `simulate` and `certify` in one call.
pub fn run(config: &RunConfig, exec: Execution) -> Result<RunOutcome, EngineError> {
    let prepared = prepare(config)?;
    let trajectory = simulate(&prepared)?;
    let certification = certify(&prepared, &trajectory, exec)?;
    Ok(RunOutcome { prepared, trajectory, certification })
}

/// Independent runs, concurrently under `exec`. Each run's own per-step
/// work is sequential so the pool is not oversubscribed.
pub fn run_batch(configs: &[RunConfig], exec: Execution) -> Vec<Result<RunOutcome, EngineError>> {
    exec.map_slice(configs, |c| run(c, Execution::Sequential))
}

/// `max_j dist(x_j(T), X)` for a constrained run.
pub fn final_max_distance(c: &Certification) -> Option<f64> {
    c.steps.last()?.dist_sq_x.as_ref().map(|d| d.iter().copied().fold(0.0, f64::max).sqrt())
}

/// `max_{j,l} |x_j - x_l|` at every time.
pub fn spreads(traj: &Trajectory) -> Vec<f64> {
    traj.x.iter().map(|x| spread_sq(x).sqrt()).collect()
}

/// `|x - y|^2` summed over agents; handy for comparisons against a fixed point.
pub fn total_sq_dist(x: &[Vec<f64>], y: &[f64]) -> f64 {
    x.iter().map(|xi| dist_sq(xi, y)).sum()
}
