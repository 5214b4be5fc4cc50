//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! Reference values are recomputed here from first principles (plain loops,
//! nalgebra SVD) rather than taken from the library under test.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use consensus_lab::adjoint::{backward_product_adjoint, permutation_counterexample, window_uniqueness_check, DEFAULT_SPREAD_TOL};
use consensus_lab::cli::{cmd_verify, write_artifacts, OutputSpec, VerifyArgs};
use consensus_lab::engine::{final_max_distance, run, run_batch, CertificateToggles, RunConfig, RunOutcome};
use consensus_lab::exec::Execution;
use consensus_lab::graph::{build_regular_tree_graph, DiGraph};
use consensus_lab::lyapunov::{exact_decrease_check_vec, CheckKind, NOISE_FLOOR};
use consensus_lab::scenarios::{constrained_with_interior, mixed_unconstrained, random_rooted, regular_tree};
use consensus_lab::sets::{
    interior_formula, nonexpansiveness_check, regularity_sampling, variational_inequality_check, ConvexSet, HalfspaceSpec,
    RegionBall,
};
use consensus_lab::weights::{lazy_metropolis_weights, MatrixSequence, RowStochasticMatrix};

type States = Vec<Vec<f64>>;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Self { pass, detail }
    }
}

// ---- independent reference computations ----

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn mean(x: &States, nu: &[f64]) -> Vec<f64> {
    let n = x[0].len();
    (0..n).map(|k| x.iter().zip(nu).map(|(xi, w)| w * xi[k]).sum()).collect()
}

/// Variance form of the comparison function.
fn phi(x: &States, nu: &[f64]) -> f64 {
    let c = mean(x, nu);
    x.iter().zip(nu).map(|(xi, w)| w * sq(xi, &c)).sum()
}

/// Pairwise decrement over unordered pairs `j < l`.
fn decrement(a: &[Vec<f64>], x: &States, nu: &[f64]) -> f64 {
    let m = x.len();
    let mut total = 0.0;
    for i in 0..m {
        let mut inner = 0.0;
        for j in 0..m {
            for l in j + 1..m {
                inner += a[i][j] * a[i][l] * sq(&x[j], &x[l]);
            }
        }
        total += nu[i] * inner;
    }
    total
}

fn mul(a: &[Vec<f64>], x: &States) -> States {
    let n = x[0].len();
    a.iter().map(|row| (0..n).map(|k| row.iter().zip(x).map(|(w, xj)| w * xj[k]).sum()).collect()).collect()
}

fn total_sq(x: &States) -> f64 {
    x.iter().map(|xi| xi.iter().map(|v| v * v).sum::<f64>()).sum()
}

fn scale(x: &States) -> f64 {
    total_sq(x).max(1.0)
}

fn dense(a: &RowStochasticMatrix) -> DMatrix<f64> {
    let m = a.order();
    DMatrix::from_fn(m, m, |i, j| a.get(i, j))
}

fn op_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.max()
}

fn rows(a: &RowStochasticMatrix) -> Vec<Vec<f64>> {
    (0..a.order()).map(|i| (0..a.order()).map(|j| a.get(i, j)).collect()).collect()
}

fn bfs_ecc(g: &DiGraph, source: usize) -> Option<usize> {
    let m = g.node_count();
    let mut dist = vec![usize::MAX; m];
    dist[source] = 0;
    let mut frontier = vec![source];
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for &u in &frontier {
            for v in 0..m {
                if g.has_edge(u, v) && dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    next.push(v);
                }
            }
        }
        frontier = next;
    }
    dist.iter().all(|&d| d != usize::MAX).then(|| *dist.iter().max().unwrap())
}

fn random_stochastic(m: usize, rng: &mut ChaCha8Rng) -> RowStochasticMatrix {
    let rows: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let mut r: Vec<f64> =
                (0..m).map(|j| if j == i || rng.gen_bool(0.5) { rng.gen_range(0.01..1.0) } else { 0.0 }).collect();
            let s: f64 = r.iter().sum();
            r.iter_mut().for_each(|v| *v /= s);
            r
        })
        .collect();
    RowStochasticMatrix::from_rows(&rows).expect("normalized rows")
}

fn random_simplex(m: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..1.0)).collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

fn certificates_failed(run: &RunOutcome, kind: CheckKind) -> usize {
    run.certification.records.iter().filter(|r| r.check == kind && !r.verdict.is_pass()).count()
}

fn adjoint_residual_l1(run: &RunOutcome) -> f64 {
    let adj = &run.prepared.adjoint;
    let mut worst: f64 = 0.0;
    for (t, a) in run.prepared.matrices.iter().enumerate() {
        let next = adj.pi(t + 1);
        let pulled: Vec<f64> = (0..a.order()).map(|j| (0..a.order()).map(|i| next[i] * a.get(i, j)).sum()).collect();
        let r: f64 = pulled.iter().zip(adj.pi(t)).map(|(p, q)| (p - q).abs()).sum();
        worst = worst.max(r);
    }
    worst
}

fn unconstrained_runs(count: usize, max_m: usize, horizon: usize, seed: u64) -> Vec<RunOutcome> {
    let configs: Vec<RunConfig> = (0..count).map(|i| mixed_unconstrained(seed, i, max_m, horizon)).collect();
    run_batch(&configs, Execution::Parallel).into_iter().map(|r| r.expect("generated scenario runs")).collect()
}

// ---- criteria ----

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst_oracle: f64 = 0.0;
    let mut worst_lib: f64 = 0.0;
    for _ in 0..1000 {
        let m = rng.gen_range(2..=12);
        let n = rng.gen_range(1..=3);
        let a = random_stochastic(m, &mut rng);
        let nu = random_simplex(m, &mut rng);
        let amp = 10f64.powf(rng.gen_range(-1.0..2.0));
        let x: States = (0..m).map(|_| (0..n).map(|_| amp * rng.gen_range(-1.0..1.0)).collect()).collect();
        let ar = rows(&a);
        let pulled: Vec<f64> = (0..m).map(|j| (0..m).map(|i| nu[i] * ar[i][j]).sum()).collect();
        let residual = phi(&mul(&ar, &x), &nu) - (phi(&x, &pulled) - decrement(&ar, &x, &nu));
        let s = scale(&x);
        worst_oracle = worst_oracle.max(residual.abs() / s);
        worst_lib = worst_lib.max(exact_decrease_check_vec(&a, &x, &nu).abs() / s);
    }
    Outcome::new(
        worst_oracle <= 1e-10 && worst_lib <= 1e-10,
        format!("max scaled residual reference {worst_oracle:.2e}, library {worst_lib:.2e} (tol 1e-10)"),
    )
}

fn criterion_2() -> Outcome {
    let configs: Vec<RunConfig> = (0..50)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(200 + i);
            random_rooted(rng.gen(), rng.gen_range(2..=20), rng.gen_range(0.0..0.3), 500)
        })
        .collect();
    let runs = run_batch(&configs, Execution::Parallel);
    let mut step_bad = 0;
    let mut cons_bad = 0;
    let mut lib_bad = 0;
    let mut worst_step: f64 = 0.0;
    let mut worst_cons: f64 = 0.0;
    for r in runs {
        let r = r.expect("certified scenario");
        let adj = &r.prepared.adjoint;
        let x = &r.trajectory.x;
        let x0_norm = total_sq(&x[0]).sqrt();
        let c0 = mean(&x[0], adj.pi(0));
        for t in 0..r.prepared.config.horizon {
            let a = rows(&r.prepared.matrices[t]);
            let res = phi(&x[t + 1], adj.pi(t + 1)) - (phi(&x[t], adj.pi(t)) - decrement(&a, &x[t], adj.pi(t + 1)));
            let rel = res.abs() / scale(&x[t]);
            worst_step = worst_step.max(rel);
            step_bad += usize::from(rel > 1e-10);
            let ct = mean(&x[t + 1], adj.pi(t + 1));
            let drift = ct.iter().zip(&c0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / (1.0 + x0_norm);
            worst_cons = worst_cons.max(drift);
            cons_bad += usize::from(drift > 1e-10);
        }
        lib_bad += certificates_failed(&r, CheckKind::LyapunovStep) + certificates_failed(&r, CheckKind::Conservation);
    }
    Outcome::new(
        step_bad + cons_bad + lib_bad == 0,
        format!(
            "50 runs: step residual max {worst_step:.2e}, conservation max {worst_cons:.2e}; \
             violations reference {}, library {lib_bad}",
            step_bad + cons_bad
        ),
    )
}

fn criterion_3(elapsed_budget: Duration) -> Outcome {
    let start = Instant::now();
    let runs = unconstrained_runs(100, 12, 500, 300);
    let mut oracle_bad = 0;
    let mut lib_bad = 0;
    let mut checked = 0;
    let mut uniform = 0;
    for r in &runs {
        let p = &r.prepared;
        let adj = &p.adjoint;
        let x = &r.trajectory.x;
        let q = 1.0 - adj.delta * p.compliance.beta.powi(2) / (4.0 * p.compliance.p_star as f64);
        let c = mean(&x[0], adj.pi(0));
        let v: Vec<f64> = (0..x.len()).map(|t| x[t].iter().zip(adj.pi(t)).map(|(xi, w)| w * sq(xi, &c)).sum()).collect();
        let floor = NOISE_FLOOR * scale(&x[0]);
        for k in [0, p.config.horizon / 2] {
            for t in k..x.len() {
                checked += 1;
                oracle_bad += usize::from(v[t] > q.powi((t - k) as i32) * v[k] * (1.0 + 1e-9) + floor);
            }
        }
        lib_bad += certificates_failed(r, CheckKind::Theorem2);
        uniform += usize::from(p.compliance.doubly_stochastic);
    }
    let elapsed = start.elapsed();
    Outcome::new(
        oracle_bad == 0 && lib_bad == 0 && elapsed < elapsed_budget,
        format!(
            "100 scenarios ({uniform} uniform-pi), {checked} (t,k) pairs: violations reference {oracle_bad}, library {lib_bad}; {:.1}s (< {}s)",
            elapsed.as_secs_f64(),
            elapsed_budget.as_secs()
        ),
    )
}

fn criterion_4() -> Outcome {
    let mut detail = String::new();
    let mut pass = true;
    for d in 2..=6u32 {
        let g = build_regular_tree_graph(d).unwrap();
        let m = g.node_count();
        let regular = (0..m).all(|v| (0..m).filter(|&u| g.has_edge(v, u)).count() == 3 && (0..m).filter(|&u| g.has_edge(u, v)).count() == 3);
        let seq = MatrixSequence::from_spec(regular_tree(d, 0, 1).weights).unwrap();
        let a = rows(&seq.matrix_at(0).unwrap());
        let doubly = (0..m).all(|i| ((a[i].iter().sum::<f64>() - 1.0).abs() < 1e-15) && ((0..m).map(|k| a[k][i]).sum::<f64>() - 1.0).abs() < 1e-15);
        let beta = a.iter().flatten().copied().filter(|&v| v > 0.0).fold(f64::INFINITY, f64::min);
        let half = d.div_ceil(2) as usize;
        let ecc = bfs_ecc(&g, 0).unwrap();
        let q = 1.0 - 1.0 / (64.0 * m as f64 * half as f64);
        let mut violations = 0;
        for init in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(400 + 100 * d as u64 + init);
            let mut x: States = (0..m).map(|_| vec![rng.gen_range(-1.0..1.0)]).collect();
            let avg = x.iter().map(|v| v[0]).sum::<f64>() / m as f64;
            let err = |x: &States| x.iter().map(|v| (v[0] - avg).powi(2)).sum::<f64>();
            let e0 = err(&x);
            for t in 1..=2000 {
                x = mul(&a, &x);
                if err(&x) > q.powi(t) * e0 * (1.0 + 1e-9) {
                    violations += 1;
                }
            }
        }
        let ok = regular && doubly && beta == 0.25 && ecc <= half && violations == 0;
        pass &= ok;
        let _ = write!(
            detail,
            "d={d}: m={m} 3-regular={regular} doubly={doubly} beta={beta} ecc={ecc}(<= {half}: {}) rate violations={violations}; ",
            ecc <= half
        );
    }
    Outcome::new(pass, detail.trim_end_matches("; ").to_string())
}

fn criterion_5() -> Outcome {
    let mut oracle_bad = 0;
    let mut lib_bad = 0;
    let mut pairs = 0;
    for i in 0..20usize {
        let mut c = mixed_unconstrained(500, i, 10, 400);
        c.certificates = CertificateToggles { enabled: true, only: Some(vec![CheckKind::MatrixProduct]), matrix_product_span: 200 };
        c.ks = Some(vec![0, 200]);
        let r = run(&c, Execution::Parallel).expect("certified sequence");
        lib_bad += certificates_failed(&r, CheckKind::MatrixProduct);
        let p = &r.prepared;
        let adj = &p.adjoint;
        let m = c.m;
        let q = 1.0 - adj.delta * p.compliance.beta.powi(2) / (4.0 * p.compliance.p_star as f64);
        for k in [0usize, 200] {
            let pk = DMatrix::from_fn(m, m, |_, j| adj.pi(k)[j]);
            let base = op_norm(&(DMatrix::identity(m, m) - &pk)).powi(2);
            let mut prod = DMatrix::identity(m, m);
            for t in k..=(k + 200).min(c.horizon - 1) {
                prod = dense(&p.matrices[t]) * prod;
                let lhs = op_norm(&(&prod - &pk)).powi(2);
                let rhs = q.powi((t - k) as i32) * base / adj.delta;
                pairs += 1;
                oracle_bad += usize::from(lhs > rhs * (1.0 + 1e-6));
            }
        }
    }
    let mut detail = format!("20 sequences, {pairs} (t,k) pairs: violations reference {oracle_bad}, library {lib_bad}; ");
    let mut pass = oracle_bad == 0 && lib_bad == 0;
    for d in 2..=6u32 {
        let seq = MatrixSequence::from_spec(regular_tree(d, 0, 1).weights).unwrap();
        let w = dense(&seq.matrix_at(0).unwrap());
        let m = w.nrows();
        let mut prod = DMatrix::identity(m, m);
        for _ in 0..=1000 {
            prod = &w * prod;
        }
        let gap = op_norm(&(prod - DMatrix::from_element(m, m, 1.0 / m as f64)));
        pass &= gap <= 1e-6;
        let _ = write!(detail, "d={d} |A(1000:0)-1pi'|={gap:.2e}; ");
    }
    Outcome::new(pass, detail.trim_end_matches("; ").to_string())
}

fn criterion_6() -> Outcome {
    let runs = unconstrained_runs(40, 12, 300, 600);
    let worst = runs.iter().map(adjoint_residual_l1).fold(0.0, f64::max);
    let lib_worst = runs.iter().map(|r| r.prepared.adjoint.max_residual()).fold(0.0, f64::max);

    let mut uniform_ok = true;
    for d in 2..=4 {
        let r = run(&regular_tree(d, 1, 50), Execution::Sequential).unwrap();
        let m = r.prepared.config.m as f64;
        uniform_ok &= r.prepared.adjoint.pis.iter().all(|pi| pi.iter().all(|&v| v == 1.0 / m));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(601);
    for _ in 0..5 {
        let m = rng.gen_range(3..9);
        let mut g = DiGraph::empty(m).unwrap();
        for v in 1..m {
            g.add_undirected(rng.gen_range(0..v), v).unwrap();
        }
        let seq = MatrixSequence::constant(lazy_metropolis_weights(&g).unwrap());
        let adj = consensus_lab::adjoint::uniform_adjoint(&seq, 20).unwrap();
        uniform_ok &= adj.pis.iter().all(|pi| pi.iter().all(|&v| v == 1.0 / m as f64));
    }

    let mut window_diff: f64 = 0.0;
    for i in 0..10u64 {
        let seq = MatrixSequence::from_spec(random_rooted(700 + i, 3 + i as usize, 0.2, 1).weights).unwrap();
        for t in [0usize, 17, 100] {
            let est = backward_product_adjoint(&seq, t, DEFAULT_SPREAD_TOL, 1 << 14).unwrap();
            let (_, _, diff) = window_uniqueness_check(&seq, t, est.window).unwrap();
            window_diff = window_diff.max(diff);
        }
    }

    let ce = permutation_counterexample(5, 11, 60).unwrap();
    let exact = ce.first.max_residual() == 0.0 && ce.second.max_residual() == 0.0;
    let distinct = ce.first.pis[0] != ce.second.pis[0];
    let ok = worst <= 1e-8 && lib_worst <= 1e-8 && uniform_ok && window_diff <= 2.0 * DEFAULT_SPREAD_TOL && exact && distinct;
    Outcome::new(
        ok,
        format!(
            "max L1 residual reference {worst:.2e}, library {lib_worst:.2e}; doubly stochastic -> exact uniform {uniform_ok}; \
             window T vs 2T max diff {window_diff:.2e} (<= {:.0e}); permutation pair exact={exact} distinct={distinct}",
            2.0 * DEFAULT_SPREAD_TOL
        ),
    )
}

fn random_point(n: usize, amp: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-amp..amp)).collect()
}

fn random_set(variant: usize, n: usize, rng: &mut ChaCha8Rng) -> ConvexSet {
    let halfspace = |rng: &mut ChaCha8Rng| {
        let a = random_point(n, 1.0, rng);
        HalfspaceSpec { a, b: rng.gen_range(0.0..1.0) }
    };
    match variant {
        0 => {
            let h = halfspace(rng);
            ConvexSet::Halfspace { a: h.a, b: h.b }
        }
        1 => {
            let lower: Vec<f64> = random_point(n, 1.0, rng);
            let upper = lower.iter().map(|l| l + rng.gen_range(0.0..2.0)).collect();
            ConvexSet::finite_box(lower, upper)
        }
        2 => ConvexSet::ball(random_point(n, 1.0, rng), rng.gen_range(0.1..2.0)),
        3 => ConvexSet::Hyperplane { a: random_point(n, 1.0, rng), b: rng.gen_range(-1.0..1.0) },
        4 => ConvexSet::Polyhedron { halfspaces: (0..rng.gen_range(2..5)).map(|_| halfspace(rng)).collect() },
        _ => ConvexSet::Intersection {
            sets: vec![ConvexSet::ball(vec![0.0; n], rng.gen_range(0.5..2.0)), {
                let h = halfspace(rng);
                ConvexSet::Halfspace { a: h.a, b: h.b }
            }],
        },
    }
}

fn criterion_7() -> Outcome {
    let names = ["halfspace", "box", "ball", "hyperplane", "polyhedron", "intersection"];
    let mut rng = ChaCha8Rng::seed_from_u64(700);
    let mut detail = String::new();
    let mut pass = true;
    for (variant, name) in names.iter().enumerate() {
        let mut fails = 0;
        let mut done = 0;
        while done < 1000 {
            let n = rng.gen_range(1..=4);
            let s = random_set(variant, n, &mut rng);
            let x = random_point(n, 4.0, &mut rng);
            let y = s.project(&random_point(n, 4.0, &mut rng)).unwrap();
            if !s.contains(&y, 1e-10) {
                fails += 1;
                done += 1;
                continue;
            }
            let ne = nonexpansiveness_check(&s, &x, &y).unwrap();
            let vi = variational_inequality_check(&s, &x, &y).unwrap();
            fails += usize::from(!ne.holds || !vi.holds);
            done += 1;
        }
        pass &= fails == 0;
        let _ = write!(detail, "{name} {fails}/1000 fail; ");
    }

    // Redundant encodings against closed forms.
    let mut worst: f64 = 0.0;
    for _ in 0..300 {
        let n = rng.gen_range(1..=4);
        let lower = random_point(n, 1.0, &mut rng);
        let upper: Vec<f64> = lower.iter().map(|l| l + rng.gen_range(0.1..2.0)).collect();
        let mut hs = Vec::new();
        for k in 0..n {
            let mut e = vec![0.0; n];
            e[k] = 1.0;
            hs.push(HalfspaceSpec { a: e.clone(), b: upper[k] });
            hs.push(HalfspaceSpec { a: e.iter().map(|v| 2.0 * v).collect(), b: 2.0 * upper[k] + 0.5 });
            hs.push(HalfspaceSpec { a: e.iter().map(|v| -v).collect(), b: -lower[k] });
        }
        let x = random_point(n, 4.0, &mut rng);
        let clamp: Vec<f64> = x.iter().enumerate().map(|(k, v)| v.clamp(lower[k], upper[k])).collect();
        let poly = ConvexSet::Polyhedron { halfspaces: hs }.project(&x).unwrap();
        worst = worst.max(sq(&poly, &clamp).sqrt());

        let c = random_point(n, 1.0, &mut rng);
        let r = rng.gen_range(0.2..2.0);
        let far = ConvexSet::Halfspace { a: vec![1.0; n], b: c.iter().sum::<f64>() + r * (n as f64).sqrt() + 1.0 };
        let both = ConvexSet::Intersection { sets: vec![ConvexSet::ball(c.clone(), r), far, ConvexSet::ball(c.clone(), r)] };
        let d = sq(&x, &c).sqrt();
        let closed: Vec<f64> = if d <= r { x.clone() } else { c.iter().zip(&x).map(|(ci, xi)| ci + r * (xi - ci) / d).collect() };
        worst = worst.max(sq(&both.project(&x).unwrap(), &closed).sqrt());
    }
    pass &= worst <= 1e-8;
    let _ = write!(detail, "redundant encodings max deviation {worst:.2e} (<= 1e-8)");
    Outcome::new(pass, detail)
}

fn criterion_8(budget: Duration) -> Outcome {
    let start = Instant::now();
    let configs: Vec<RunConfig> = (0..30u64)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(800 + i);
            constrained_with_interior(800 + i, rng.gen_range(3..=8), rng.gen_range(1..=3), 500)
        })
        .collect();
    let runs = run_batch(&configs, Execution::Parallel);
    let mut t5 = 0;
    let mut t7 = 0;
    let mut t8 = 0;
    let mut worst_dist: f64 = 0.0;
    let mut worst_leaf: f64 = 0.0;
    let mut errors = 0;
    for r in runs {
        let Ok(r) = r else {
            errors += 1;
            continue;
        };
        t5 += certificates_failed(&r, CheckKind::Theorem5);
        t7 += certificates_failed(&r, CheckKind::Theorem7);
        t8 += certificates_failed(&r, CheckKind::Theorem8);
        worst_dist = worst_dist.max(final_max_distance(&r.certification).unwrap_or(f64::INFINITY));
        let x = r.trajectory.x.last().unwrap();
        for xj in x {
            for s in &r.prepared.sets {
                worst_leaf = worst_leaf.max(s.distance(xj).unwrap());
            }
        }
    }
    let elapsed = start.elapsed();
    Outcome::new(
        errors == 0 && t5 + t7 + t8 == 0 && worst_dist <= 1e-6 && worst_leaf <= 1e-6 && elapsed < budget,
        format!(
            "30 scenarios: errors {errors}, violations per-step {t5}, ratio {t7}, envelope {t8}; max dist(x_j(T),X) {worst_dist:.2e}, \
             max set distance {worst_leaf:.2e}; {:.1}s (< {}s)",
            elapsed.as_secs_f64(),
            budget.as_secs()
        ),
    )
}

fn criterion_9() -> Outcome {
    let sets = vec![ConvexSet::halfspace(vec![1.0, 0.0], 0.0), ConvexSet::halfspace(vec![0.0, 1.0], 0.0)];
    let z = RegionBall { center: vec![0.0, 0.0], radius: 2.0 };
    let a = regularity_sampling(&sets, &z, 10_000, 9, Execution::Parallel).unwrap();
    let b = regularity_sampling(&sets, &z, 10_000, 9, Execution::Sequential).unwrap();
    let r = a.r_hat;
    let in_range = (1.40..=2f64.sqrt()).contains(&r);
    let stable = a == b;
    let cases = [
        (1.0, vec![0.0, 0.0], RegionBall { center: vec![0.0, 0.0], radius: 2.0 }, 2.0),
        (0.5, vec![1.0, 0.0], RegionBall { center: vec![0.0, 0.0], radius: 1.0 }, 4.0),
        (0.25, vec![0.0, 3.0], RegionBall { center: vec![0.0, -1.0], radius: 1.0 }, 20.0),
        (5.0, vec![0.0], RegionBall { center: vec![1.0], radius: 1.0 }, 1.0),
    ];
    let formula_ok = cases.iter().all(|(theta, x_bar, y, want)| interior_formula(*theta, x_bar, y) == *want);
    Outcome::new(
        in_range && stable && formula_ok,
        format!("r_hat {r:.6} in [1.40, 1.414214]: {in_range}; seed-stable {stable}; interior formula cases exact {formula_ok}"),
    )
}

fn criterion_10() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut scenarios = vec![regular_tree(3, 4, 200), constrained_with_interior(1000, 5, 2, 200)];
    scenarios.push(mixed_unconstrained(1001, 0, 8, 200));
    let mut identical = true;
    let mut verified = true;
    for (i, c) in scenarios.iter().enumerate() {
        let dirs: Vec<_> = [Execution::Parallel, Execution::Sequential]
            .iter()
            .enumerate()
            .map(|(rep, &exec)| {
                let dir = tmp.path().join(format!("s{i}_{rep}"));
                let r = run(c, exec).unwrap();
                write_artifacts(&dir, &r, &OutputSpec::default()).unwrap();
                dir
            })
            .collect();
        let mut names: Vec<_> = std::fs::read_dir(&dirs[0]).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        for n in &names {
            identical &= std::fs::read(dirs[0].join(n)).unwrap() == std::fs::read(dirs[1].join(n)).unwrap();
        }
        let args = VerifyArgs {
            scenario: dirs[0].join("scenario.resolved.json"),
            trajectory: dirs[0].join("trajectory.csv"),
            certificates: Some(dirs[0].join("certificates.json")),
        };
        let mut sink = Vec::new();
        verified &= matches!(cmd_verify(&args, &mut sink), Ok(0));
    }
    Outcome::new(identical && verified, format!("3 scenarios x 2 runs byte-identical {identical}; verify round trip exit 0 {verified}"))
}

fn main() {
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>, Option<Duration>)> = vec![
        ("exact decrease identity", Box::new(criterion_1), Some(Duration::from_secs(5))),
        ("exact Lyapunov step and conservation", Box::new(criterion_2), None),
        ("geometric rate sweep", Box::new(|| criterion_3(Duration::from_secs(120))), None),
        ("3-regular tree construction", Box::new(criterion_4), None),
        ("matrix product bound and convergence", Box::new(criterion_5), None),
        ("adjoint validity", Box::new(criterion_6), None),
        ("projection properties", Box::new(criterion_7), None),
        ("constrained consensus", Box::new(|| criterion_8(Duration::from_secs(180))), None),
        ("regularity geometry", Box::new(criterion_9), None),
        ("reproducibility", Box::new(criterion_10), None),
    ];
    let mut failed = Vec::new();
    for (i, (name, check, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let mut outcome = check();
        let elapsed = start.elapsed();
        if let Some(b) = budget {
            if elapsed >= *b {
                outcome.pass = false;
            }
            let _ = write!(outcome.detail, "; {:.2}s (< {}s)", elapsed.as_secs_f64(), b.as_secs());
        }
        let verdict = if outcome.pass { "PASS" } else { "FAIL" };
        println!("criterion {:>2} {verdict}: {name}: {} [{:.1}s]", i + 1, outcome.detail, elapsed.as_secs_f64());
        if !outcome.pass {
            failed.push(i + 1);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all 10 criteria pass");
    } else {
        println!("acceptance: {} of 10 criteria fail: {failed:?}", failed.len());
        std::process::exit(1);
    }
}
