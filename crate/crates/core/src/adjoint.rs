//! Absolute probability (adjoint) sequences: stochastic vectors with
//! `pi(t)' = pi(t+1)' A(t)`.
//!
//! Four sources are supported: the uniform vector for doubly stochastic
//! sequences, backward products `A(t+T-1)...A(t)` for ergodic sequences,
//! the stationary left vector of a constant matrix, and user-supplied
//! vectors (the permutation counterexample is built that way).

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::linalg::{l1_dist, Matrix};
use crate::rng::{stream, stream_rng};
use crate::weights::{MatrixSequence, RowStochasticMatrix, WeightError, STOCHASTIC_TOL};

pub const DEFAULT_SPREAD_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_WINDOW: usize = 1 << 14;
/// Largest admissible `||pi(t)' - pi(t+1)' A(t)||_1`.
pub const RESIDUAL_TOL: f64 = 1e-8;
const FIRST_WINDOW: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdjointError {
    #[error("A({t}) is not doubly stochastic")]
    NotDoublyStochastic { t: usize },
    #[error("backward product from t={t} still has column spread {spread:e} at window {window}")]
    NotErgodicWithinWindow { t: usize, window: usize, spread: f64 },
    #[error("adjoint residual {residual:e} at t={t} exceeds {RESIDUAL_TOL:e}")]
    AdjointResidualTooLarge { t: usize, residual: f64 },
    #[error("pi({t}) is not a stochastic vector")]
    NotStochastic { t: usize },
    #[error("stationary method needs a constant matrix sequence")]
    NotConstant,
    #[error("stationary power iteration did not settle")]
    StationaryNotConverged,
    #[error("independent phi(0) differs from the propagated pi(0) by {diff:e}")]
    CrossCheckFailed { diff: f64 },
    #[error("spread tolerance must be positive")]
    BadTolerance,
    #[error(transparent)]
    Weights(#[from] WeightError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdjointMethod {
    Uniform,
    BackwardProduct,
    Stationary,
    UserSupplied,
}

/// `pi(0), ..., pi(H)` with residuals for `t < H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsoluteProbabilitySequence {
    pub method: AdjointMethod,
    pub pis: Vec<Vec<f64>>,
    pub delta: f64,
    pub residuals: Vec<f64>,
}

/// `||pi(t) - A(t)' pi(t+1)||_1`.
pub fn adjoint_residual(a: &RowStochasticMatrix, pi_t: &[f64], pi_next: &[f64]) -> f64 {
    l1_dist(pi_t, &a.matrix().tr_mul_vec(pi_next))
}

fn is_stochastic(v: &[f64]) -> bool {
    v.iter().all(|&p| p >= 0.0 && p.is_finite()) && (v.iter().sum::<f64>() - 1.0).abs() <= STOCHASTIC_TOL
}

fn normalize(v: &mut [f64]) {
    for p in v.iter_mut() {
        *p = p.max(0.0);
    }
    let s: f64 = v.iter().sum();
    for p in v.iter_mut() {
        *p /= s;
    }
}

impl AbsoluteProbabilitySequence {
    /// Validates user vectors against `seq`: each must be stochastic and
    /// every residual within [`RESIDUAL_TOL`].
    pub fn from_vectors(
        seq: &MatrixSequence,
        pis: Vec<Vec<f64>>,
        method: AdjointMethod,
    ) -> Result<Self, AdjointError> {
        if let Some(t) = pis.iter().position(|p| !is_stochastic(p)) {
            return Err(AdjointError::NotStochastic { t });
        }
        let mut residuals = Vec::with_capacity(pis.len().saturating_sub(1));
        for t in 0..pis.len().saturating_sub(1) {
            let r = adjoint_residual(&seq.matrix_at(t)?, &pis[t], &pis[t + 1]);
            if r > RESIDUAL_TOL {
                return Err(AdjointError::AdjointResidualTooLarge { t, residual: r });
            }
            residuals.push(r);
        }
        let delta = pis.iter().flatten().copied().fold(f64::INFINITY, f64::min);
        Ok(Self { method, pis, delta, residuals })
    }

    /// Last time index `H` with a stored vector.
    pub fn horizon(&self) -> usize {
        self.pis.len() - 1
    }

    pub fn pi(&self, t: usize) -> &[f64] {
        &self.pis[t]
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }

    /// Rows `t, i, pi, residual_l1` with 1-based `i`. The residual column is
    /// empty at the final time, which has no successor.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "i", "pi", "residual_l1"])?;
        for (t, pi) in self.pis.iter().enumerate() {
            let res = self.residuals.get(t).map(|r| r.to_string()).unwrap_or_default();
            for (i, p) in pi.iter().enumerate() {
                w.write_record([t.to_string(), (i + 1).to_string(), p.to_string(), res.clone()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn sidecar(&self) -> AdjointSidecar {
        AdjointSidecar {
            method: self.method,
            delta: self.delta,
            horizon: self.horizon(),
            max_residual_l1: self.max_residual(),
        }
    }
}

/// JSON companion of the adjoint CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjointSidecar {
    pub method: AdjointMethod,
    pub delta: f64,
    pub horizon: usize,
    pub max_residual_l1: f64,
}

/// `pi(t) = 1/m` for `t = 0..=horizon`, after checking every `A(t)`, `t < horizon`,
/// is doubly stochastic.
pub fn uniform_adjoint(seq: &MatrixSequence, horizon: usize) -> Result<AbsoluteProbabilitySequence, AdjointError> {
    for t in 0..horizon {
        if !seq.matrix_at(t)?.is_doubly_stochastic() {
            return Err(AdjointError::NotDoublyStochastic { t });
        }
    }
    let m = seq.node_count();
    AbsoluteProbabilitySequence::from_vectors(seq, vec![vec![1.0 / m as f64; m]; horizon + 1], AdjointMethod::Uniform)
}

/// Largest column spread `max_j (max_i P_ij - min_i P_ij)`.
pub fn column_spread(p: &Matrix) -> f64 {
    (0..p.cols())
        .map(|j| {
            let col = p.column(j);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            hi - lo
        })
        .fold(0.0, f64::max)
}

fn row_mean(p: &Matrix) -> Vec<f64> {
    let n = p.rows() as f64;
    let mut v: Vec<f64> = (0..p.cols()).map(|j| p.column(j).iter().sum::<f64>() / n).collect();
    normalize(&mut v);
    v
}

/// `A(t + window - 1) ... A(t + 1) A(t)`.
pub fn backward_product(seq: &MatrixSequence, t: usize, window: usize) -> Result<Matrix, AdjointError> {
    let mut p = Matrix::identity(seq.node_count());
    for s in t..t + window {
        p = seq.matrix_at(s)?.matrix().matmul(&p);
    }
    Ok(p)
}

/// Limit vector `phi(t)` of the backward products together with the window
/// and spread at which it was accepted.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardProductEstimate {
    pub phi: Vec<f64>,
    pub window: usize,
    pub spread: f64,
}

/// Doubles the window `8, 16, ...` (capped at `max_window`) until the
/// product's column spread is at most `spread_tol`, then returns the mean
/// row of the product.
pub fn backward_product_adjoint(
    seq: &MatrixSequence,
    t: usize,
    spread_tol: f64,
    max_window: usize,
) -> Result<BackwardProductEstimate, AdjointError> {
    if !(spread_tol > 0.0) {
        return Err(AdjointError::BadTolerance);
    }
    let max_window = max_window.max(1);
    let mut p = Matrix::identity(seq.node_count());
    let mut done = 0;
    let mut target = FIRST_WINDOW.min(max_window);
    loop {
        for s in t + done..t + target {
            p = seq.matrix_at(s)?.matrix().matmul(&p);
        }
        done = target;
        let spread = column_spread(&p);
        if spread <= spread_tol {
            return Ok(BackwardProductEstimate { phi: row_mean(&p), window: done, spread });
        }
        if done >= max_window {
            return Err(AdjointError::NotErgodicWithinWindow { t, window: done, spread });
        }
        target = (target * 2).min(max_window);
    }
}

/// Adjoint sequence of an ergodic matrix sequence on `0..=horizon`.
///
/// `pi(H)` is the backward-product limit at the anchor time `H`; earlier
/// vectors follow from `pi(t) = A(t)' pi(t+1)`, which is nonexpansive in
/// the 1-norm and so keeps every residual at rounding level. An independent
/// backward product at `t = 0` must agree with the propagated `pi(0)`.
pub fn assemble_adjoint(
    seq: &MatrixSequence,
    horizon: usize,
    spread_tol: f64,
    max_window: usize,
) -> Result<AbsoluteProbabilitySequence, AdjointError> {
    let anchor = backward_product_adjoint(seq, horizon, spread_tol, max_window)?;
    let mut pis = vec![Vec::new(); horizon + 1];
    pis[horizon] = anchor.phi;
    for t in (0..horizon).rev() {
        let mut v = seq.matrix_at(t)?.matrix().tr_mul_vec(&pis[t + 1]);
        normalize(&mut v);
        pis[t] = v;
    }
    if horizon > 0 {
        let start = backward_product_adjoint(seq, 0, spread_tol, max_window)?;
        let diff = start.phi.iter().zip(&pis[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if diff > 2.0 * spread_tol {
            return Err(AdjointError::CrossCheckFailed { diff });
        }
    }
    AbsoluteProbabilitySequence::from_vectors(seq, pis, AdjointMethod::BackwardProduct)
}

/// `phi(t)` for every `t` in `0..=horizon`, each from its own backward
/// product. Independent per `t`, so it runs under `exec`.
pub fn independent_backward_products(
    seq: &MatrixSequence,
    horizon: usize,
    spread_tol: f64,
    max_window: usize,
    exec: Execution,
) -> Result<Vec<BackwardProductEstimate>, AdjointError> {
    exec.map_range(horizon + 1, |t| backward_product_adjoint(seq, t, spread_tol, max_window))
        .into_iter()
        .collect()
}

/// Row means of the fixed-window products at windows `T` and `2T` starting
/// at `t`, and their largest entrywise difference.
pub fn window_uniqueness_check(
    seq: &MatrixSequence,
    t: usize,
    window: usize,
) -> Result<(Vec<f64>, Vec<f64>, f64), AdjointError> {
    let short = row_mean(&backward_product(seq, t, window)?);
    let long = row_mean(&backward_product(seq, t, 2 * window)?);
    let diff = short.iter().zip(&long).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok((short, long, diff))
}

/// Stationary left vector of a constant sequence, repeated over `0..=horizon`.
pub fn stationary_adjoint(seq: &MatrixSequence, horizon: usize) -> Result<AbsoluteProbabilitySequence, AdjointError> {
    if !seq.is_constant() {
        return Err(AdjointError::NotConstant);
    }
    let a = seq.matrix_at(0)?;
    let m = a.order();
    let mut v = vec![1.0 / m as f64; m];
    let mut settled = false;
    for _ in 0..1_000_000 {
        let mut next = a.matrix().tr_mul_vec(&v);
        normalize(&mut next);
        let step = l1_dist(&next, &v);
        v = next;
        if step <= 1e-15 {
            settled = true;
            break;
        }
    }
    if !settled && adjoint_residual(&a, &v, &v) > 1e-13 {
        return Err(AdjointError::StationaryNotConverged);
    }
    AbsoluteProbabilitySequence::from_vectors(seq, vec![v; horizon + 1], AdjointMethod::Stationary)
}

/// Adjoint sequence generated forward from a seed vector `u` for a sequence
/// of permutation matrices: `pi(t+1) = P(t) pi(t)`, i.e. `pi(t+1)' = pi(t)' P(t)^{-1}`.
pub fn permutation_adjoint(seq: &MatrixSequence, u: &[f64], horizon: usize) -> Result<AbsoluteProbabilitySequence, AdjointError> {
    let mut pis = Vec::with_capacity(horizon + 1);
    pis.push(u.to_vec());
    for t in 0..horizon {
        let next = seq.matrix_at(t)?.matrix().mul_vec(&pis[t]);
        pis.push(next);
    }
    AbsoluteProbabilitySequence::from_vectors(seq, pis, AdjointMethod::UserSupplied)
}

/// A random permutation-matrix sequence and two adjoint sequences for it
/// that start from different seed vectors.
#[derive(Debug, Clone)]
pub struct PermutationCounterexample {
    pub sequence: MatrixSequence,
    pub first: AbsoluteProbabilitySequence,
    pub second: AbsoluteProbabilitySequence,
}

pub fn random_permutation_sequence(m: usize, len: usize, seed: u64) -> MatrixSequence {
    let mut rng = stream_rng(seed, stream::PERMUTATION);
    let mats = (0..len.max(1))
        .map(|_| {
            let mut sigma: Vec<usize> = (0..m).collect();
            sigma.shuffle(&mut rng);
            let mut p = Matrix::zeros(m, m);
            for (i, &j) in sigma.iter().enumerate() {
                p[(i, j)] = 1.0;
            }
            RowStochasticMatrix::new(p).expect("permutation matrices are stochastic")
        })
        .collect();
    MatrixSequence::explicit(mats).expect("non-empty sequence")
}

/// Seeds `e_1` and `e_2`; both sequences are exact and differ at `t = 0`.
pub fn permutation_counterexample(m: usize, seed: u64, horizon: usize) -> Result<PermutationCounterexample, AdjointError> {
    let m = m.max(2);
    let sequence = random_permutation_sequence(m, horizon.max(1), seed);
    let mut u1 = vec![0.0; m];
    u1[0] = 1.0;
    let mut u2 = vec![0.0; m];
    u2[1] = 1.0;
    let first = permutation_adjoint(&sequence, &u1, horizon)?;
    let second = permutation_adjoint(&sequence, &u2, horizon)?;
    Ok(PermutationCounterexample { sequence, first, second })
}
