//! Seeded scenario generators shared by the acceptance suite, the benches
//! and the `batch` subcommand.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::engine::{AdjointChoice, CertificateToggles, InitialStates, Mode, RegularityChoice, RunConfig};
use crate::graph::GraphSource;
use crate::linalg::norm;
use crate::rng::{stream, stream_rng};
use crate::sets::ConvexSet;
use crate::weights::{GraphInput, SequenceSpec, WeightScheme};

fn base(m: usize, n: usize, weights: SequenceSpec, horizon: usize, seed: u64) -> RunConfig {
    RunConfig {
        m,
        n,
        weights,
        graphs: None,
        horizon,
        seed,
        initial: InitialStates::default(),
        mode: Mode::Unconstrained,
        sets: None,
        adjoint: AdjointChoice::Auto,
        certificates: CertificateToggles::default(),
        regularity: None,
        ks: None,
    }
}

/// Equal-neighbor weights on a fresh random rooted digraph at every step.
pub fn random_rooted(seed: u64, m: usize, extra_edge_prob: f64, horizon: usize) -> RunConfig {
    let weights = SequenceSpec::Generated {
        scheme: WeightScheme::EqualNeighbor,
        graph: GraphInput::Generator(GraphSource::RandomRooted { m, extra_edge_prob, seed }),
    };
    base(m, 1, weights, horizon, seed)
}

/// Quarter weights on the 3-regular tree graph with `2^d` agents.
pub fn regular_tree(d: u32, seed: u64, horizon: usize) -> RunConfig {
    let weights =
        SequenceSpec::Generated { scheme: WeightScheme::RegularQuarter, graph: GraphInput::Generator(GraphSource::RegularTree { d }) };
    base(1 << d, 1, weights, horizon, seed)
}

/// The `index`-th member of a mixed unconstrained family: mostly
/// equal-neighbor on random rooted graphs (non-uniform adjoint), every
/// fourth one quarter weights on a tree graph (uniform adjoint).
pub fn mixed_unconstrained(seed: u64, index: usize, max_m: usize, horizon: usize) -> RunConfig {
    let mut rng = stream_rng(seed, stream::SCENARIO + index as u64);
    let scenario_seed: u64 = rng.gen();
    if index % 4 == 3 {
        let d = rng.gen_range(2..=3);
        regular_tree(d, scenario_seed, horizon)
    } else {
        let m = rng.gen_range(2..=max_m.max(2));
        let p = rng.gen_range(0.0..0.3);
        random_rooted(scenario_seed, m, p, horizon)
    }
}

fn unit_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let len = norm(&v);
        if len > 1e-3 {
            return v.into_iter().map(|x| x / len).collect();
        }
    }
}

/// A halfspace, box or ball that contains `B(x_bar, theta)` with some
/// random room to spare.
pub fn set_around<R: Rng + ?Sized>(x_bar: &[f64], theta: f64, rng: &mut R) -> ConvexSet {
    let n = x_bar.len();
    match rng.gen_range(0..3) {
        0 => {
            let a = unit_vector(n, rng);
            let b = a.iter().zip(x_bar).map(|(a, x)| a * x).sum::<f64>() + theta + rng.gen_range(0.0..1.0);
            ConvexSet::Halfspace { a, b }
        }
        1 => {
            let lower = x_bar.iter().map(|x| Some(x - theta - rng.gen_range(0.0..1.0))).collect();
            let upper = x_bar.iter().map(|x| Some(x + theta + rng.gen_range(0.0..1.0))).collect();
            ConvexSet::Box { lower, upper }
        }
        _ => {
            let shift = rng.gen_range(0.0..1.0);
            let dir = unit_vector(n, rng);
            let center = x_bar.iter().zip(&dir).map(|(x, d)| x + shift * d).collect();
            ConvexSet::ball(center, theta + shift + rng.gen_range(0.0..1.0))
        }
    }
}

/// Constrained run whose sets all contain a known interior ball, so the
/// regularity constant comes from the interior-ball formula.
pub fn constrained_with_interior(seed: u64, m: usize, n: usize, horizon: usize) -> RunConfig {
    let mut rng = stream_rng(seed, stream::SCENARIO);
    let theta = rng.gen_range(0.2..0.6);
    let x_bar: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let sets: Vec<ConvexSet> = (0..m).map(|_| set_around(&x_bar, theta, &mut rng)).collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut rng);
    let mut c = random_rooted(rng.gen(), m, 0.2, horizon);
    c.n = n;
    c.seed = seed;
    c.mode = Mode::Constrained;
    c.sets = Some(order.into_iter().map(|i| sets[i].clone()).collect());
    c.initial = InitialStates::RandomBox { lower: -4.0, upper: 4.0 };
    c.regularity = Some(RegularityChoice::Interior { theta, x_bar });
    c
}
