//! Quadratic comparison function, its exact one-step decrease, and the rate
//! certificates built on it.
//!
//! States are agent-major: `x[i]` is the vector held by agent `i`. Scalar
//! helpers wrap the vector ones with `n = 1`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adjoint::AbsoluteProbabilitySequence;
use crate::exec::Execution;
use crate::linalg::{dist_sq, norm_sq, operator_norm_sq, Matrix};
use crate::weights::{MatrixSequence, RowStochasticMatrix, WeightError, STOCHASTIC_TOL};

/// Multiplicative slack on value inequalities.
pub const VALUE_SLACK: f64 = 1e-9;
/// Multiplicative slack on operator-norm inequalities.
pub const NORM_SLACK: f64 = 1e-6;
/// Relative tolerance on exact identities.
pub const IDENTITY_TOL: f64 = 1e-10;
/// Absolute floor, relative to the state scale, below which two sides of an
/// inequality are treated as rounding noise.
pub const NOISE_FLOOR: f64 = 1e-20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LyapunovError {
    #[error("weight {i} is negative")]
    NegativeWeight { i: usize },
    #[error("delta*beta^2/(4 p*) = {gain} leaves no contraction")]
    VacuousBound { gain: f64 },
    #[error("need k <= t (k={k}, t={t})")]
    BadRange { k: usize, t: usize },
    #[error("trajectory has {len} states, k={k} is out of range")]
    ShortTrajectory { len: usize, k: usize },
    #[error(transparent)]
    Weights(#[from] WeightError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn is_pass(self) -> bool {
        self == Verdict::Pass
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    LyapunovStep,
    Conservation,
    DecrementBound,
    Theorem2,
    VectorCase,
    MatrixProduct,
    Lemma5Identity,
    Theorem5,
    Theorem7,
    Theorem8,
}

impl CheckKind {
    pub fn name(self) -> &'static str {
        match self {
            CheckKind::LyapunovStep => "lyapunov_step",
            CheckKind::Conservation => "conservation",
            CheckKind::DecrementBound => "decrement_bound",
            CheckKind::Theorem2 => "theorem2",
            CheckKind::VectorCase => "vector_case",
            CheckKind::MatrixProduct => "matrix_product",
            CheckKind::Lemma5Identity => "lemma5_identity",
            CheckKind::Theorem5 => "theorem5",
            CheckKind::Theorem7 => "theorem7",
            CheckKind::Theorem8 => "theorem8",
        }
    }
}

/// One checked inequality `lhs <= rhs` (or `|residual| <= tolerance` for
/// identities, stored the same way).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateRecord {
    pub check: CheckKind,
    pub t: usize,
    pub k: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub verdict: Verdict,
}

impl CertificateRecord {
    /// `lhs <= rhs * (1 + slack) + floor`.
    pub fn inequality(check: CheckKind, t: usize, k: usize, lhs: f64, rhs: f64, slack: f64, floor: f64) -> Self {
        let ok = lhs.is_finite() && rhs.is_finite() && lhs <= rhs * (1.0 + slack) + floor;
        Self { check, t, k, lhs, rhs, slack, verdict: Verdict::from_bool(ok) }
    }

    /// `|residual| <= tol`; stored with `slack = 0`.
    pub fn identity(check: CheckKind, t: usize, residual: f64, tol: f64) -> Self {
        let lhs = residual.abs();
        Self { check, t, k: t, lhs, rhs: tol, slack: 0.0, verdict: Verdict::from_bool(lhs <= tol) }
    }
}

/// `phi(x, nu)` with the centering value `nu'x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonValue {
    pub value: f64,
    pub center: Vec<f64>,
    /// Variance form `sum nu_i |x_i - nu'x|^2`, evaluated when `nu` is stochastic.
    pub variance_form: Option<f64>,
}

fn dim(x: &[Vec<f64>]) -> usize {
    x.first().map_or(0, Vec::len)
}

/// `sum_i nu_i x_i` (not normalized).
pub fn weighted_mean(x: &[Vec<f64>], nu: &[f64]) -> Vec<f64> {
    let mut c = vec![0.0; dim(x)];
    for (xi, &w) in x.iter().zip(nu) {
        for (cj, &v) in c.iter_mut().zip(xi) {
            *cj += w * v;
        }
    }
    c
}

/// `sum_i nu_i |x_i - c|^2`.
pub fn weighted_sq_dist(x: &[Vec<f64>], nu: &[f64], c: &[f64]) -> f64 {
    x.iter().zip(nu).map(|(xi, &w)| w * dist_sq(xi, c)).sum()
}

fn moment_form(x: &[Vec<f64>], nu: &[f64]) -> f64 {
    let second: f64 = x.iter().zip(nu).map(|(xi, &w)| w * norm_sq(xi)).sum();
    second - norm_sq(&weighted_mean(x, nu))
}

fn is_stochastic(nu: &[f64]) -> bool {
    nu.iter().all(|&w| w >= 0.0) && (nu.iter().sum::<f64>() - 1.0).abs() <= STOCHASTIC_TOL
}

/// `phi(x, nu) = sum_i nu_i |x_i|^2 - |nu'x|^2` for vector states.
pub fn comparison_fn_vec(x: &[Vec<f64>], nu: &[f64]) -> Result<ComparisonValue, LyapunovError> {
    if let Some(i) = nu.iter().position(|&w| w < 0.0) {
        return Err(LyapunovError::NegativeWeight { i });
    }
    let center = weighted_mean(x, nu);
    let value = moment_form(x, nu);
    let variance_form = is_stochastic(nu).then(|| weighted_sq_dist(x, nu, &center));
    Ok(ComparisonValue { value, center, variance_form })
}

pub fn comparison_fn(x: &[f64], nu: &[f64]) -> Result<ComparisonValue, LyapunovError> {
    comparison_fn_vec(&as_states(x), nu)
}

/// Scalar state as a one-column agent-major state.
pub fn as_states(x: &[f64]) -> Vec<Vec<f64>> {
    x.iter().map(|&v| vec![v]).collect()
}

/// `A x` applied agent-wise.
pub fn apply(a: &RowStochasticMatrix, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = dim(x);
    (0..a.order())
        .map(|i| {
            let mut w = vec![0.0; n];
            for (j, xj) in x.iter().enumerate() {
                let aij = a.get(i, j);
                if aij != 0.0 {
                    for (wk, &v) in w.iter_mut().zip(xj) {
                        *wk += aij * v;
                    }
                }
            }
            w
        })
        .collect()
}

/// `1/2 sum_i nu_i sum_j sum_l A_ij A_il |x_j - x_l|^2`.
pub fn decrement_sum(a: &RowStochasticMatrix, x: &[Vec<f64>], nu: &[f64]) -> f64 {
    let m = a.order();
    let mut total = 0.0;
    for (i, &w) in nu.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let row = a.matrix().row(i);
        let mut inner = 0.0;
        for j in 0..m {
            if row[j] == 0.0 {
                continue;
            }
            for l in 0..m {
                if row[l] != 0.0 {
                    inner += row[j] * row[l] * dist_sq(&x[j], &x[l]);
                }
            }
        }
        total += w * inner;
    }
    0.5 * total
}

/// `max_{j,l} |x_j - x_l|^2`.
pub fn spread_sq(x: &[Vec<f64>]) -> f64 {
    let mut best: f64 = 0.0;
    for j in 0..x.len() {
        for l in j + 1..x.len() {
            best = best.max(dist_sq(&x[j], &x[l]));
        }
    }
    best
}

/// `max(1, |x|^2)` over all agents and coordinates.
pub fn state_scale(x: &[Vec<f64>]) -> f64 {
    x.iter().map(|xi| norm_sq(xi)).sum::<f64>().max(1.0)
}

/// `phi(Ax, nu) - (phi(x, A'nu) - D)` with `D` the triple sum.
pub fn exact_decrease_check_vec(a: &RowStochasticMatrix, x: &[Vec<f64>], nu: &[f64]) -> f64 {
    let lhs = moment_form(&apply(a, x), nu);
    let pulled = a.matrix().tr_mul_vec(nu);
    lhs - (moment_form(x, &pulled) - decrement_sum(a, x, nu))
}

pub fn exact_decrease_check(a: &RowStochasticMatrix, x: &[f64], nu: &[f64]) -> f64 {
    exact_decrease_check_vec(a, &as_states(x), nu)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecrementRecord {
    pub t: usize,
    pub decrement: f64,
    pub spread_sq: f64,
    pub lower_bound: f64,
    pub verdict: Verdict,
}

/// `D(t)` against `delta beta^2 spread^2 / (4 p*(t))`.
pub fn decrement_vec(
    t: usize,
    a: &RowStochasticMatrix,
    x: &[Vec<f64>],
    pi_next: &[f64],
    delta: f64,
    beta: f64,
    p_star_t: usize,
) -> DecrementRecord {
    let d = decrement_sum(a, x, pi_next);
    let s = spread_sq(x);
    let lower_bound = delta * beta * beta * s / (4.0 * p_star_t.max(1) as f64);
    let ok = d >= 0.0 && d * (1.0 + VALUE_SLACK) >= lower_bound - IDENTITY_TOL * state_scale(x);
    DecrementRecord { t, decrement: d, spread_sq: s, lower_bound, verdict: Verdict::from_bool(ok) }
}

pub fn decrement(
    t: usize,
    a: &RowStochasticMatrix,
    x: &[f64],
    pi_next: &[f64],
    delta: f64,
    beta: f64,
    p_star_t: usize,
) -> DecrementRecord {
    decrement_vec(t, a, &as_states(x), pi_next, delta, beta, p_star_t)
}

impl DecrementRecord {
    pub fn to_certificate(&self) -> CertificateRecord {
        CertificateRecord {
            check: CheckKind::DecrementBound,
            t: self.t,
            k: self.t,
            lhs: self.lower_bound,
            rhs: self.decrement,
            slack: VALUE_SLACK,
            verdict: self.verdict,
        }
    }
}

/// `(max spread^2, weighted variance, variance <= spread^2)`.
pub fn weighted_spread_check(x: &[f64], nu: &[f64]) -> (f64, f64, bool) {
    let xs = as_states(x);
    let c = weighted_mean(&xs, nu);
    let var = weighted_sq_dist(&xs, nu, &c);
    let s = spread_sq(&xs);
    (s, var, var <= s * (1.0 + VALUE_SLACK) + NOISE_FLOOR)
}

/// Residual of `phi(x(t+1), pi(t+1)) = phi(x(t), pi(t)) - D(t)` as a record.
pub fn lyapunov_step_check(
    t: usize,
    a: &RowStochasticMatrix,
    x_t: &[Vec<f64>],
    x_next: &[Vec<f64>],
    pi_t: &[f64],
    pi_next: &[f64],
) -> (CertificateRecord, f64, f64) {
    let before = moment_form(x_t, pi_t);
    let after = moment_form(x_next, pi_next);
    let d = decrement_sum(a, x_t, pi_next);
    let residual = after - (before - d);
    (CertificateRecord::identity(CheckKind::LyapunovStep, t, residual, IDENTITY_TOL * state_scale(x_t)), before, d)
}

/// `|pi(t)'x(t) - pi(0)'x(0)| <= 1e-10 (1 + |x(0)|)`.
pub fn conservation_check(t: usize, x_t: &[Vec<f64>], pi_t: &[f64], c0: &[f64], x0_norm: f64) -> CertificateRecord {
    let c = weighted_mean(x_t, pi_t);
    CertificateRecord::identity(CheckKind::Conservation, t, dist_sq(&c, c0).sqrt(), IDENTITY_TOL * (1.0 + x0_norm))
}

/// Per-step quotient `1 - delta beta^2 / (4 p*)` and the bound checks made with it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateBound {
    pub q_step: f64,
    pub records: Vec<CertificateRecord>,
}

impl RateBound {
    pub fn factor(&self, steps: usize) -> f64 {
        self.q_step.powf(steps as f64)
    }

    pub fn violations(&self) -> usize {
        self.records.iter().filter(|r| !r.verdict.is_pass()).count()
    }
}

pub fn rate_quotient(delta: f64, beta: f64, p_star: usize) -> Result<f64, LyapunovError> {
    let gain = delta * beta * beta / (4.0 * p_star.max(1) as f64);
    if !(gain < 1.0) {
        return Err(LyapunovError::VacuousBound { gain });
    }
    Ok(1.0 - gain)
}

/// `(1 - beta / (2 m^2))^steps`.
pub fn doubly_stochastic_baseline(beta: f64, m: usize, steps: usize) -> f64 {
    (1.0 - beta / (2.0 * (m * m) as f64)).powf(steps as f64)
}

/// Per-step quotients of the adjoint-based bound and the doubly stochastic baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateComparison {
    pub q_adjoint: f64,
    pub q_baseline: f64,
    /// `ln q_adjoint / ln q_baseline`; above 1 means the adjoint bound decays faster.
    pub log_ratio: f64,
}

pub fn compare_rates(delta: f64, beta: f64, p_star: usize, m: usize) -> Result<RateComparison, LyapunovError> {
    let q_adjoint = rate_quotient(delta, beta, p_star)?;
    let q_baseline = doubly_stochastic_baseline(beta, m, 1);
    Ok(RateComparison { q_adjoint, q_baseline, log_ratio: q_adjoint.ln() / q_baseline.ln() })
}

fn rate_records(check: CheckKind, lhs: &[f64], k: usize, q: f64, floor: f64) -> Vec<CertificateRecord> {
    (k..lhs.len())
        .map(|t| {
            let rhs = q.powf((t - k) as f64) * lhs[k];
            CertificateRecord::inequality(check, t, k, lhs[t], rhs, VALUE_SLACK, floor)
        })
        .collect()
}

fn require_k(len: usize, k: usize) -> Result<(), LyapunovError> {
    if k >= len {
        return Err(LyapunovError::ShortTrajectory { len, k });
    }
    Ok(())
}

/// `sum_i pi_i(t) |x_i(t) - c|^2 <= q^(t-k) sum_j pi_j(k) |x_j(k) - c|^2`
/// for every stored `t >= k`, with `c = pi(0)'x(0)`.
pub fn vector_case_certificate(
    trajectory: &[Vec<Vec<f64>>],
    adjoint: &AbsoluteProbabilitySequence,
    beta: f64,
    p_star: usize,
    k: usize,
) -> Result<RateBound, LyapunovError> {
    rate_certificate(CheckKind::VectorCase, trajectory, adjoint, beta, p_star, k)
}

/// Scalar form of [`vector_case_certificate`].
pub fn theorem2_certificate(
    trajectory: &[Vec<f64>],
    adjoint: &AbsoluteProbabilitySequence,
    beta: f64,
    p_star: usize,
    k: usize,
) -> Result<RateBound, LyapunovError> {
    let states: Vec<Vec<Vec<f64>>> = trajectory.iter().map(|x| as_states(x)).collect();
    rate_certificate(CheckKind::Theorem2, &states, adjoint, beta, p_star, k)
}

pub fn rate_certificate(
    check: CheckKind,
    trajectory: &[Vec<Vec<f64>>],
    adjoint: &AbsoluteProbabilitySequence,
    beta: f64,
    p_star: usize,
    k: usize,
) -> Result<RateBound, LyapunovError> {
    let q_step = rate_quotient(adjoint.delta, beta, p_star)?;
    let len = trajectory.len().min(adjoint.pis.len());
    require_k(len, k)?;
    let c = weighted_mean(&trajectory[0], adjoint.pi(0));
    let lhs: Vec<f64> = (0..len).map(|t| weighted_sq_dist(&trajectory[t], adjoint.pi(t), &c)).collect();
    let floor = NOISE_FLOOR * state_scale(&trajectory[0]);
    Ok(RateBound { q_step, records: rate_records(check, &lhs, k, q_step, floor) })
}

/// `A(t) A(t-1) ... A(k)`.
pub fn product_range(seq: &MatrixSequence, k: usize, t: usize) -> Result<Matrix, LyapunovError> {
    if t < k {
        return Err(LyapunovError::BadRange { k, t });
    }
    let mut p = Matrix::identity(seq.node_count());
    for s in k..=t {
        p = seq.matrix_at(s)?.matrix().matmul(&p);
    }
    Ok(p)
}

fn product_bound_rhs(pi_k: &[f64], delta: f64, q: f64, steps: usize) -> f64 {
    let m = pi_k.len();
    let base = Matrix::identity(m).sub(&Matrix::outer_ones(pi_k));
    q.powf(steps as f64) * operator_norm_sq(&base) / delta
}

/// `|A(t:k) - 1 pi(k)'|^2 <= (1/delta) q^(t-k) |I - 1 pi(k)'|^2` in the
/// induced 2-norm.
pub fn matrix_product_certificate(
    seq: &MatrixSequence,
    adjoint: &AbsoluteProbabilitySequence,
    beta: f64,
    p_star: usize,
    k: usize,
    t: usize,
) -> Result<CertificateRecord, LyapunovError> {
    let q = rate_quotient(adjoint.delta, beta, p_star)?;
    require_k(adjoint.pis.len(), k)?;
    let p = product_range(seq, k, t)?;
    let pi_k = adjoint.pi(k);
    let lhs = operator_norm_sq(&p.sub(&Matrix::outer_ones(pi_k)));
    let rhs = product_bound_rhs(pi_k, adjoint.delta, q, t - k);
    Ok(CertificateRecord::inequality(CheckKind::MatrixProduct, t, k, lhs, rhs, NORM_SLACK, 0.0))
}

/// [`matrix_product_certificate`] for every `t` in `k..=k+span`, sharing the
/// running product. Different `k` run under `exec`.
pub fn matrix_product_sweep(
    seq: &MatrixSequence,
    adjoint: &AbsoluteProbabilitySequence,
    beta: f64,
    p_star: usize,
    ks: &[usize],
    span: usize,
    exec: Execution,
) -> Result<Vec<CertificateRecord>, LyapunovError> {
    let q = rate_quotient(adjoint.delta, beta, p_star)?;
    let per_k = exec.map_slice(ks, |&k| -> Result<Vec<CertificateRecord>, LyapunovError> {
        require_k(adjoint.pis.len(), k)?;
        let pi_k = adjoint.pi(k);
        let one_pi = Matrix::outer_ones(pi_k);
        let base = operator_norm_sq(&Matrix::identity(pi_k.len()).sub(&one_pi));
        let mut p = Matrix::identity(seq.node_count());
        let mut out = Vec::with_capacity(span + 1);
        for t in k..=k + span {
            p = seq.matrix_at(t)?.matrix().matmul(&p);
            let lhs = operator_norm_sq(&p.sub(&one_pi));
            let rhs = q.powf((t - k) as f64) * base / adjoint.delta;
            out.push(CertificateRecord::inequality(CheckKind::MatrixProduct, t, k, lhs, rhs, NORM_SLACK, 0.0));
        }
        Ok(out)
    });
    let mut all = Vec::new();
    for r in per_k {
        all.extend(r?);
    }
    Ok(all)
}
