//! Run artifacts: trajectory and plot CSVs, certificate JSON/CSV, the run
//! report, and the trajectory reader used for offline verification.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! trajectory read back from CSV is bit-identical to the one written.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adjoint::AdjointSidecar;
use crate::engine::{final_max_distance, Mode, RegularityUse, RunConfig, RunOutcome, States, Trajectory};
use crate::lyapunov::{compare_rates, weighted_mean, CertificateRecord, CheckKind, Verdict};
use crate::rng::SEED_SCHEME;
use crate::weights::AssumptionLevel;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("inconsistent trajectory: {0}")]
    Inconsistent(String),
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Aggregated verdict of each check kind at each time.
fn verdicts_by_time(records: &[CertificateRecord]) -> (Vec<CheckKind>, BTreeMap<(usize, CheckKind), Verdict>) {
    let mut kinds: Vec<CheckKind> = records.iter().map(|r| r.check).collect();
    kinds.sort();
    kinds.dedup();
    let mut map = BTreeMap::new();
    for r in records {
        let e = map.entry((r.t, r.check)).or_insert(Verdict::Pass);
        if !r.verdict.is_pass() {
            *e = Verdict::Fail;
        }
    }
    (kinds, map)
}

fn verdict_str(v: Option<&Verdict>) -> &'static str {
    match v {
        Some(Verdict::Pass) => "pass",
        Some(Verdict::Fail) => "fail",
        None => "",
    }
}

/// One row per `(t, agent, coord)`; `agent` and `coord` are 1-based.
pub fn write_trajectory_csv<W: Write>(out: W, run: &RunOutcome) -> Result<(), ReportError> {
    let traj = &run.trajectory;
    let cert = &run.certification;
    let (kinds, verdicts) = verdicts_by_time(&cert.records);
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> =
        ["t", "agent", "coord", "x", "w", "spread_sq", "lyap", "decrement", "V_vt", "dist_sq_X"].iter().map(|s| s.to_string()).collect();
    header.extend(kinds.iter().map(|k| k.name().to_string()));
    w.write_record(&header)?;
    for (t, x) in traj.x.iter().enumerate() {
        let s = &cert.steps[t];
        let wt = match (&traj.w, t) {
            (Some(ws), t) if t > 0 => Some(&ws[t - 1]),
            _ => None,
        };
        for (i, xi) in x.iter().enumerate() {
            for (k, v) in xi.iter().enumerate() {
                let mut row = vec![
                    t.to_string(),
                    (i + 1).to_string(),
                    (k + 1).to_string(),
                    v.to_string(),
                    opt(wt.map(|w| w[i][k])),
                    s.spread_sq.to_string(),
                    s.lyap.to_string(),
                    opt(s.decrement),
                    opt(s.v_vt),
                    opt(s.dist_sq_x.as_ref().map(|d| d[i])),
                ];
                row.extend(kinds.iter().map(|kind| verdict_str(verdicts.get(&(t, *kind))).to_string()));
                w.write_record(&row)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads the `x` and `w` columns back. Every `(t, agent, coord)` for
/// `t = 0..=T` must appear exactly once.
pub fn read_trajectory_csv<R: Read>(input: R, m: usize, n: usize, mode: Mode) -> Result<Trajectory, ReportError> {
    let bad = |msg: String| ReportError::Inconsistent(msg);
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| bad(format!("missing column {name}")));
    let (ct, ca, ck, cx, cw) = (col("t")?, col("agent")?, col("coord")?, col("x")?, col("w")?);
    let mut x: Vec<Vec<Vec<Option<f64>>>> = Vec::new();
    let mut w: Vec<Vec<Vec<Option<f64>>>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let field = |c: usize| rec.get(c).ok_or_else(|| bad("short row".into()));
        let parse_idx = |c: usize| -> Result<usize, ReportError> {
            field(c)?.parse::<usize>().map_err(|e| bad(format!("bad index: {e}")))
        };
        let t = parse_idx(ct)?;
        let (i, k) = (parse_idx(ca)?, parse_idx(ck)?);
        if i == 0 || i > m || k == 0 || k > n {
            return Err(bad(format!("agent {i} / coord {k} out of range")));
        }
        let value: f64 = field(cx)?.parse().map_err(|e| bad(format!("bad x at t={t}: {e}")))?;
        while x.len() <= t {
            x.push(vec![vec![None; n]; m]);
            w.push(vec![vec![None; n]; m]);
        }
        if x[t][i - 1][k - 1].replace(value).is_some() {
            return Err(bad(format!("duplicate row t={t} agent={i} coord={k}")));
        }
        let wf = field(cw)?;
        if !wf.is_empty() {
            w[t][i - 1][k - 1] = Some(wf.parse().map_err(|e| bad(format!("bad w at t={t}: {e}")))?);
        }
    }
    if x.is_empty() {
        return Err(bad("no rows".into()));
    }
    let complete = |grid: &[Vec<Vec<Option<f64>>>], what: &str| -> Result<Vec<States>, ReportError> {
        grid.iter()
            .enumerate()
            .map(|(t, s)| {
                s.iter()
                    .map(|xi| xi.iter().map(|v| v.ok_or_else(|| bad(format!("missing {what} at t={t}")))).collect())
                    .collect()
            })
            .collect()
    };
    let xs = complete(&x, "x")?;
    let ws = match mode {
        Mode::Unconstrained => None,
        Mode::Constrained => Some(complete(&w[1..], "w")?),
    };
    Ok(Trajectory { x: xs, w: ws })
}

pub fn write_certificates_json<W: Write>(out: W, records: &[CertificateRecord]) -> Result<(), ReportError> {
    let mut out = out;
    serde_json::to_writer_pretty(&mut out, records)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn write_certificates_csv<W: Write>(out: W, records: &[CertificateRecord]) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["check", "t", "k", "lhs", "rhs", "slack", "verdict"])?;
    for r in records {
        w.write_record([
            r.check.name().to_string(),
            r.t.to_string(),
            r.k.to_string(),
            r.lhs.to_string(),
            r.rhs.to_string(),
            r.slack.to_string(),
            verdict_str(Some(&r.verdict)).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-time series for plotting: measured quantities next to their bounds.
pub fn write_plot_csv<W: Write>(out: W, run: &RunOutcome) -> Result<(), ReportError> {
    let cert = &run.certification;
    let delta = run.prepared.adjoint.delta;
    let lyap0 = cert.steps[0].lyap;
    let v0 = cert.steps[0].v_vt;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "spread_sq", "lyap", "decrement", "rate_bound", "V_vt", "dist_sq_X_sum", "constrained_bound"])?;
    for s in &cert.steps {
        let t = s.t as f64;
        let (rate_bound, constrained_bound) = match cert.constrained_factor {
            None => (Some(cert.q_step.powf(t) * lyap0), None),
            Some(f) => (None, v0.map(|v| f.powf(t) * v / delta)),
        };
        w.write_record([
            s.t.to_string(),
            s.spread_sq.to_string(),
            s.lyap.to_string(),
            opt(s.decrement),
            opt(rate_bound),
            opt(s.v_vt),
            opt(s.dist_sq_x.as_ref().map(|d| d.iter().sum())),
            opt(constrained_bound),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceSummary {
    pub level: AssumptionLevel,
    pub beta: f64,
    pub beta_uniform: f64,
    pub doubly_stochastic: bool,
    pub p_star: usize,
    /// `p*` is the maximum tree depth over `t < p_star_horizon` only.
    pub p_star_horizon: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub q_step: f64,
    /// Doubly stochastic baseline quotient, when that baseline applies.
    pub q_baseline: Option<f64>,
    pub log_ratio: Option<f64>,
    pub constrained_factor: Option<f64>,
    pub regularity: Option<RegularityUse>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub q_theory: f64,
    /// Geometric-mean per-step contraction of the Lyapunov value.
    pub q_empirical: Option<f64>,
    pub steps_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckSummary {
    pub check: CheckKind,
    pub total: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed_scheme: String,
    pub config: RunConfig,
    pub scheme: String,
    pub compliance: ComplianceSummary,
    pub adjoint: AdjointSidecar,
    pub rates: Rates,
    pub final_estimate: Vec<f64>,
    pub conservation_drift: Option<f64>,
    pub rho: f64,
    pub final_spread: f64,
    pub final_max_dist_x: Option<f64>,
    pub test_point: Option<Vec<f64>>,
    pub rate_fit: RateFit,
    pub certificates: Vec<CheckSummary>,
    pub violations: usize,
    pub all_pass: bool,
}

fn rate_fit(values: &[f64], q_theory: f64) -> RateFit {
    let v0 = values.first().copied().unwrap_or(0.0);
    let used = values.iter().rposition(|&v| v > 1e-20 * v0 && v > 0.0).unwrap_or(0);
    let q_empirical = (v0 > 0.0 && used > 0).then(|| (values[used] / v0).powf(1.0 / used as f64));
    RateFit { q_theory, q_empirical, steps_used: used }
}

pub fn build_report(run: &RunOutcome) -> RunReport {
    let p = &run.prepared;
    let cert = &run.certification;
    let horizon = p.config.horizon;
    let c = &p.compliance;
    let baseline = (c.doubly_stochastic && c.level == AssumptionLevel::Assumption1)
        .then(|| compare_rates(p.adjoint.delta, c.beta_uniform, c.p_star, p.config.m).ok())
        .flatten();
    let mut summary: BTreeMap<CheckKind, CheckSummary> = BTreeMap::new();
    for r in &cert.records {
        let e = summary.entry(r.check).or_insert(CheckSummary { check: r.check, total: 0, failed: 0 });
        e.total += 1;
        if !r.verdict.is_pass() {
            e.failed += 1;
        }
    }
    let (fit_values, q_theory): (Vec<f64>, f64) = match cert.constrained_factor {
        None => (cert.steps.iter().map(|s| s.lyap).collect(), cert.q_step),
        Some(f) => (cert.steps.iter().map(|s| s.v_vt.unwrap_or(0.0)).collect(), f),
    };
    RunReport {
        seed_scheme: SEED_SCHEME.to_string(),
        config: p.config.clone(),
        scheme: p.sequence.scheme_tag().to_string(),
        compliance: ComplianceSummary {
            level: c.level,
            beta: c.beta,
            beta_uniform: c.beta_uniform,
            doubly_stochastic: c.doubly_stochastic,
            p_star: c.p_star,
            p_star_horizon: c.horizon,
        },
        adjoint: p.adjoint.sidecar(),
        rates: Rates {
            q_step: cert.q_step,
            q_baseline: baseline.map(|b| b.q_baseline),
            log_ratio: baseline.map(|b| b.log_ratio),
            constrained_factor: cert.constrained_factor,
            regularity: cert.regularity.clone(),
        },
        final_estimate: weighted_mean(&run.trajectory.x[horizon], p.adjoint.pi(horizon)),
        conservation_drift: cert.conservation_drift.is_finite().then_some(cert.conservation_drift),
        rho: cert.rho,
        final_spread: cert.steps[horizon].spread_sq.sqrt(),
        final_max_dist_x: final_max_distance(cert),
        test_point: cert.test_point.clone(),
        rate_fit: rate_fit(&fit_values, q_theory),
        certificates: summary.into_values().collect(),
        violations: cert.violations(),
        all_pass: cert.all_pass(),
    }
}
