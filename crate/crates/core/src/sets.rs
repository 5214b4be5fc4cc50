//! Closed convex sets with Euclidean projection, projection-property checks,
//! and regularity constants for families of sets.
//!
//! Halfspaces, boxes, balls and hyperplanes project in closed form.
//! Polyhedra and intersections are flattened to those leaves and projected
//! with Dykstra's algorithm, which converges to the true nearest point of
//! the intersection rather than just some feasible point.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::linalg::{dist, dot, norm, norm_sq};
use crate::rng::{stream, stream_rng};

pub const DYKSTRA_TOL: f64 = 1e-12;
pub const DYKSTRA_MAX_SWEEPS: usize = 100_000;
/// Per-constraint feasibility tolerance.
pub const FEAS_TOL: f64 = 1e-10;
/// Samples whose largest per-set distance is at most this are skipped.
pub const INFORMATIVE_DIST: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SetError {
    #[error("dimension mismatch: set is {expected}-dimensional, point has {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("normal vector is zero")]
    ZeroNormal,
    #[error("radius must be positive")]
    NonPositiveRadius,
    #[error("box lower bound exceeds upper bound at coordinate {0}")]
    InvertedBox(usize),
    #[error("intersection or polyhedron has no members")]
    NoMembers,
    #[error("Dykstra did not converge in {sweeps} sweeps (last displacement {displacement:e})")]
    DykstraNotConverged { sweeps: usize, displacement: f64 },
    #[error("reference point is not in the set")]
    YNotInSet,
    #[error("every sample lies in the intersection")]
    NoInformativeSamples,
    #[error("interior ball is not contained in set {set}")]
    InteriorBallNotContained { set: usize },
    #[error("point {agent} is not in its set")]
    InfeasiblePoint { agent: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfspaceSpec {
    pub a: Vec<f64>,
    pub b: f64,
}

/// Set description. Box bounds use `null` for an infinite bound in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ConvexSet {
    /// `{x : a'x <= b}`
    Halfspace { a: Vec<f64>, b: f64 },
    Box { lower: Vec<Option<f64>>, upper: Vec<Option<f64>> },
    Ball { center: Vec<f64>, radius: f64 },
    /// `{x : a'x = b}`
    Hyperplane { a: Vec<f64>, b: f64 },
    Polyhedron { halfspaces: Vec<HalfspaceSpec> },
    Intersection { sets: Vec<ConvexSet> },
}

fn lo(v: &[Option<f64>], i: usize) -> f64 {
    v[i].unwrap_or(f64::NEG_INFINITY)
}

fn hi(v: &[Option<f64>], i: usize) -> f64 {
    v[i].unwrap_or(f64::INFINITY)
}

impl ConvexSet {
    pub fn halfspace(a: Vec<f64>, b: f64) -> Self {
        ConvexSet::Halfspace { a, b }
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Self {
        ConvexSet::Ball { center, radius }
    }

    pub fn finite_box(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        ConvexSet::Box {
            lower: lower.into_iter().map(Some).collect(),
            upper: upper.into_iter().map(Some).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ConvexSet::Halfspace { a, .. } | ConvexSet::Hyperplane { a, .. } => a.len(),
            ConvexSet::Box { lower, .. } => lower.len(),
            ConvexSet::Ball { center, .. } => center.len(),
            ConvexSet::Polyhedron { halfspaces } => halfspaces.first().map_or(0, |h| h.a.len()),
            ConvexSet::Intersection { sets } => sets.first().map_or(0, ConvexSet::dim),
        }
    }

    pub fn validate(&self) -> Result<(), SetError> {
        let n = self.dim();
        let check_dim = |got: usize| {
            if got == n {
                Ok(())
            } else {
                Err(SetError::DimensionMismatch { expected: n, got })
            }
        };
        match self {
            ConvexSet::Halfspace { a, b } | ConvexSet::Hyperplane { a, b } => {
                if !(norm_sq(a) > 0.0) || !b.is_finite() {
                    return Err(SetError::ZeroNormal);
                }
            }
            ConvexSet::Box { lower, upper } => {
                check_dim(upper.len())?;
                for i in 0..n {
                    if lo(lower, i) > hi(upper, i) || lo(lower, i).is_nan() || hi(upper, i).is_nan() {
                        return Err(SetError::InvertedBox(i));
                    }
                }
            }
            ConvexSet::Ball { radius, .. } => {
                if !(*radius > 0.0) || !radius.is_finite() {
                    return Err(SetError::NonPositiveRadius);
                }
            }
            ConvexSet::Polyhedron { halfspaces } => {
                if halfspaces.is_empty() {
                    return Err(SetError::NoMembers);
                }
                for h in halfspaces {
                    check_dim(h.a.len())?;
                    ConvexSet::halfspace(h.a.clone(), h.b).validate()?;
                }
            }
            ConvexSet::Intersection { sets } => {
                if sets.is_empty() {
                    return Err(SetError::NoMembers);
                }
                for s in sets {
                    check_dim(s.dim())?;
                    s.validate()?;
                }
            }
        }
        Ok(())
    }

    fn is_leaf(&self) -> bool {
        !matches!(self, ConvexSet::Polyhedron { .. } | ConvexSet::Intersection { .. })
    }

    /// Leaf sets whose intersection equals `self`.
    pub fn leaves(&self) -> Vec<ConvexSet> {
        match self {
            ConvexSet::Polyhedron { halfspaces } => {
                halfspaces.iter().map(|h| ConvexSet::halfspace(h.a.clone(), h.b)).collect()
            }
            ConvexSet::Intersection { sets } => sets.iter().flat_map(ConvexSet::leaves).collect(),
            leaf => vec![leaf.clone()],
        }
    }

    fn project_leaf(&self, x: &[f64]) -> Vec<f64> {
        match self {
            ConvexSet::Halfspace { a, b } => {
                let excess = dot(a, x) - b;
                if excess <= 0.0 {
                    return x.to_vec();
                }
                let s = excess / norm_sq(a);
                x.iter().zip(a).map(|(xi, ai)| xi - s * ai).collect()
            }
            ConvexSet::Hyperplane { a, b } => {
                let s = (dot(a, x) - b) / norm_sq(a);
                x.iter().zip(a).map(|(xi, ai)| xi - s * ai).collect()
            }
            ConvexSet::Box { lower, upper } => {
                x.iter().enumerate().map(|(i, &xi)| xi.max(lo(lower, i)).min(hi(upper, i))).collect()
            }
            ConvexSet::Ball { center, radius } => {
                let d = dist(x, center);
                if d <= *radius {
                    return x.to_vec();
                }
                let s = radius / d;
                x.iter().zip(center).map(|(xi, ci)| ci + s * (xi - ci)).collect()
            }
            _ => unreachable!("compound sets are projected by Dykstra"),
        }
    }

    fn leaf_distance(&self, x: &[f64]) -> f64 {
        match self {
            ConvexSet::Halfspace { a, b } => ((dot(a, x) - b) / norm(a)).max(0.0),
            ConvexSet::Hyperplane { a, b } => ((dot(a, x) - b) / norm(a)).abs(),
            ConvexSet::Ball { center, radius } => (dist(x, center) - radius).max(0.0),
            ConvexSet::Box { .. } => dist(x, &self.project_leaf(x)),
            _ => unreachable!(),
        }
    }

    /// Euclidean projection of `x`.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>, SetError> {
        if x.len() != self.dim() {
            return Err(SetError::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        if self.is_leaf() {
            return Ok(self.project_leaf(x));
        }
        dykstra(&self.leaves(), x)
    }

    pub fn distance(&self, x: &[f64]) -> Result<f64, SetError> {
        if self.is_leaf() {
            if x.len() != self.dim() {
                return Err(SetError::DimensionMismatch { expected: self.dim(), got: x.len() });
            }
            return Ok(self.leaf_distance(x));
        }
        Ok(dist(x, &self.project(x)?))
    }

    /// Every leaf constraint holds within `tol` (as a distance).
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.dim() && self.leaves().iter().all(|s| s.leaf_distance(x) <= tol)
    }
}

/// Dykstra's alternating projection onto the intersection of `leaves`.
pub fn dykstra(leaves: &[ConvexSet], x0: &[f64]) -> Result<Vec<f64>, SetError> {
    let mut x = x0.to_vec();
    let mut incr = vec![vec![0.0; x0.len()]; leaves.len()];
    let mut displacement = f64::INFINITY;
    let mut previous = f64::INFINITY;
    for _ in 0..DYKSTRA_MAX_SWEEPS {
        let start = x.clone();
        for (set, y) in leaves.iter().zip(incr.iter_mut()) {
            let z: Vec<f64> = x.iter().zip(y.iter()).map(|(a, b)| a + b).collect();
            let p = set.project_leaf(&z);
            for ((yi, zi), pi) in y.iter_mut().zip(&z).zip(&p) {
                *yi = zi - pi;
            }
            x = p;
        }
        displacement = dist(&x, &start);
        // Under linear convergence with ratio rho the remaining distance is
        // about displacement * rho / (1 - rho), which dominates the raw step
        // when consecutive sets are nearly parallel.
        let rho = if previous > 0.0 { (displacement / previous).min(1.0) } else { 0.0 };
        previous = displacement;
        let remaining = if displacement == 0.0 {
            0.0
        } else if rho < 1.0 {
            displacement.max(displacement * rho / (1.0 - rho))
        } else {
            f64::INFINITY
        };
        if remaining <= DYKSTRA_TOL * norm(&x).max(1.0) && leaves.iter().all(|s| s.leaf_distance(&x) <= FEAS_TOL) {
            return Ok(x);
        }
    }
    Err(SetError::DykstraNotConverged { sweeps: DYKSTRA_MAX_SWEEPS, displacement })
}

/// Outcome of a single inequality `lhs <= rhs` (after tolerance).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Inequality {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// `|P_S[x] - y| <= |x - y|` for `y` in `S`.
pub fn nonexpansiveness_check(s: &ConvexSet, x: &[f64], y: &[f64]) -> Result<Inequality, SetError> {
    if !s.contains(y, FEAS_TOL) {
        return Err(SetError::YNotInSet);
    }
    let p = s.project(x)?;
    let lhs = dist(&p, y);
    let rhs = dist(x, y);
    Ok(Inequality { lhs, rhs, holds: lhs <= rhs * (1.0 + 1e-10) })
}

/// `(P_S[x] - x)'(y - P_S[x]) >= 0` for `y` in `S`; reported as `0 <= value`.
pub fn variational_inequality_check(s: &ConvexSet, x: &[f64], y: &[f64]) -> Result<Inequality, SetError> {
    if !s.contains(y, FEAS_TOL) {
        return Err(SetError::YNotInSet);
    }
    let p = s.project(x)?;
    let u: Vec<f64> = p.iter().zip(x).map(|(a, b)| a - b).collect();
    let v: Vec<f64> = y.iter().zip(&p).map(|(a, b)| a - b).collect();
    let value = dot(&u, &v);
    Ok(Inequality { lhs: 0.0, rhs: value, holds: value >= -1e-10 })
}

/// Closed ball used as the region `Z` or `Y` in regularity statements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionBall {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl RegionBall {
    /// Uniform point in the ball.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.center.len();
        let dir: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let len = norm(&dir).max(f64::MIN_POSITIVE);
        let r = self.radius * rng.gen::<f64>().powf(1.0 / n as f64);
        self.center.iter().zip(&dir).map(|(c, d)| c + r * d / len).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegularityMethod {
    Sampling,
    InteriorFormula,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityEstimate {
    pub r_hat: f64,
    pub method: RegularityMethod,
    pub samples: usize,
    pub skipped: usize,
    /// Samples where `dist(x, X_i) > dist(x, X)` beyond tolerance; always 0
    /// for a correct projection.
    #[serde(default)]
    pub order_violations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_bar: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<RegionBall>,
}

enum SampleOutcome {
    Skipped,
    Ratio { ratio: f64, order_ok: bool },
}

/// Lower bound on the regularity constant of `sets` over `z`:
/// the largest sampled `dist(x, X) / max_i dist(x, X_i)`, at least 1.
pub fn regularity_sampling(
    sets: &[ConvexSet],
    z: &RegionBall,
    samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<RegularityEstimate, SetError> {
    let whole = ConvexSet::Intersection { sets: sets.to_vec() };
    whole.validate()?;
    let outcomes = exec.map_range(samples, |s| -> Result<SampleOutcome, SetError> {
        let mut rng = stream_rng(seed, stream::REGULARITY_SAMPLE + s as u64);
        let x = z.sample(&mut rng);
        let mut worst: f64 = 0.0;
        for set in sets {
            worst = worst.max(set.distance(&x)?);
        }
        if worst <= INFORMATIVE_DIST {
            return Ok(SampleOutcome::Skipped);
        }
        let d = whole.distance(&x)?;
        Ok(SampleOutcome::Ratio { ratio: d / worst, order_ok: worst <= d + FEAS_TOL })
    });
    let mut r_hat: f64 = 1.0;
    let mut skipped = 0;
    let mut order_violations = 0;
    for o in outcomes {
        match o? {
            SampleOutcome::Skipped => skipped += 1,
            SampleOutcome::Ratio { ratio, order_ok } => {
                r_hat = r_hat.max(ratio);
                if !order_ok {
                    order_violations += 1;
                }
            }
        }
    }
    if skipped == samples {
        return Err(SetError::NoInformativeSamples);
    }
    Ok(RegularityEstimate {
        r_hat,
        method: RegularityMethod::Sampling,
        samples,
        skipped,
        order_violations,
        theta: None,
        x_bar: None,
        region: Some(z.clone()),
    })
}

/// `100 n` points on the sphere of radius `theta` about `x_bar`: the `2n`
/// axis points followed by seeded Gaussian directions.
pub fn sphere_points(x_bar: &[f64], theta: f64) -> Vec<Vec<f64>> {
    let n = x_bar.len();
    let total = 100 * n;
    let mut pts = Vec::with_capacity(total);
    for i in 0..n {
        for sign in [1.0, -1.0] {
            let mut p = x_bar.to_vec();
            p[i] += sign * theta;
            pts.push(p);
        }
    }
    let mut rng = stream_rng(0, stream::SPHERE);
    while pts.len() < total {
        let dir: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let len = norm(&dir);
        if len > 0.0 {
            pts.push(x_bar.iter().zip(&dir).map(|(c, d)| c + theta * d / len).collect());
        }
    }
    pts
}

/// Regularity constant from an interior ball `B(x_bar, theta)` contained in
/// every set: `max_{y in Y} |y - x_bar| / theta`, at least 1.
pub fn regularity_interior(
    sets: &[ConvexSet],
    theta: f64,
    x_bar: &[f64],
    y: &RegionBall,
) -> Result<RegularityEstimate, SetError> {
    if !(theta > 0.0) {
        return Err(SetError::NonPositiveRadius);
    }
    let pts = sphere_points(x_bar, theta);
    for (idx, set) in sets.iter().enumerate() {
        if !pts.iter().all(|p| set.contains(p, FEAS_TOL)) {
            return Err(SetError::InteriorBallNotContained { set: idx });
        }
    }
    Ok(RegularityEstimate {
        r_hat: interior_formula(theta, x_bar, y),
        method: RegularityMethod::InteriorFormula,
        samples: pts.len(),
        skipped: 0,
        order_violations: 0,
        theta: Some(theta),
        x_bar: Some(x_bar.to_vec()),
        region: Some(y.clone()),
    })
}

/// `(|center(Y) - x_bar| + radius(Y)) / theta`, clamped below at 1.
pub fn interior_formula(theta: f64, x_bar: &[f64], y: &RegionBall) -> f64 {
    ((dist(&y.center, x_bar) + y.radius) / theta).max(1.0)
}

/// Checks `max_{j,l} |x_j - x_l| >= max_p |x_p - P_X[sum_i phi_i x_i]| / (r + 1)`
/// for points `x_i` in `sets[i]`, with `X` the intersection. `lhs` holds
/// the scaled right side and `rhs` the spread, so `holds` means `lhs <= rhs`.
pub fn lemma6_check(sets: &[ConvexSet], points: &[Vec<f64>], phi: &[f64], r: f64) -> Result<Inequality, SetError> {
    for (agent, (set, x)) in sets.iter().zip(points).enumerate() {
        if !set.contains(x, FEAS_TOL) {
            return Err(SetError::InfeasiblePoint { agent });
        }
    }
    let mut spread: f64 = 0.0;
    for j in 0..points.len() {
        for l in j + 1..points.len() {
            spread = spread.max(dist(&points[j], &points[l]));
        }
    }
    let n = points.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; n];
    for (x, &w) in points.iter().zip(phi) {
        for (mk, xk) in mean.iter_mut().zip(x) {
            *mk += w * xk;
        }
    }
    let target = ConvexSet::Intersection { sets: sets.to_vec() }.project(&mean)?;
    let far = points.iter().map(|x| dist(x, &target)).fold(0.0, f64::max);
    let bound = far / (r + 1.0);
    Ok(Inequality { lhs: bound, rhs: spread, holds: bound <= spread * (1.0 + 1e-9) })
}
