//! Shared helpers for the integration suites: random panels, the
//! brute-force simplex grid oracle, and scoring shortcuts.
//!
//! Each integration binary compiles this module separately and uses only
//! a subset of it.
#![allow(dead_code)]

use kpool::kernels::{DiscreteDistribution, KernelSpec, Point};
use kpool::pooling::{combine, ForecastCase, Panel, Strategy, WeightVector};
use kpool::qp::QpProblem;
use kpool::scoring::crps;
use rand::rngs::StdRng;
use rand::Rng;

pub fn pt1(x: f64) -> Point<f64> {
    Point::scalar(x).unwrap()
}

/// Random panel with the given roster; atoms and observations uniform on
/// [-4, 4]^d, alphas 1.
pub fn random_panel(rng: &mut StdRng, member_counts: &[usize], n: usize, d: usize) -> Panel<f64> {
    let cases = (0..n)
        .map(|_| {
            let members: Vec<Vec<Point<f64>>> = member_counts
                .iter()
                .map(|&m| {
                    (0..m)
                        .map(|_| {
                            Point::new((0..d).map(|_| rng.gen_range(-4.0..4.0)).collect()).unwrap()
                        })
                        .collect()
                })
                .collect();
            let y = Point::new((0..d).map(|_| rng.gen_range(-4.0..4.0)).collect()).unwrap();
            ForecastCase::from_members(members, y, 1.0).unwrap()
        })
        .collect();
    let ids = (0..member_counts.len()).map(|j| format!("m{j}")).collect();
    Panel::new(cases, ids, vec![]).unwrap()
}

/// Minimum of `½wᵀAw + cᵀw` over the simplex grid with `steps` divisions.
pub fn grid_minimum(problem: &QpProblem<f64>, steps: usize) -> f64 {
    fn rec(
        problem: &QpProblem<f64>,
        idx: &mut Vec<usize>,
        pos: usize,
        remaining: usize,
        steps: usize,
        best: &mut f64,
    ) {
        if pos == idx.len() - 1 {
            idx[pos] = remaining;
            let w: Vec<f64> = idx.iter().map(|&v| v as f64 / steps as f64).collect();
            let obj = problem.objective(&w);
            if obj < *best {
                *best = obj;
            }
            return;
        }
        for v in 0..=remaining {
            idx[pos] = v;
            rec(problem, idx, pos + 1, remaining - v, steps, best);
        }
    }
    let mut best = f64::INFINITY;
    let mut idx = vec![0usize; problem.dim()];
    rec(problem, &mut idx, 0, steps, steps, &mut best);
    best
}

/// Mean CRPS of a strategy's pooled forecasts over a univariate panel.
pub fn mean_crps(panel: &Panel<f64>, strategy: Strategy, weights: &WeightVector<f64>) -> f64 {
    let total: f64 = panel
        .cases()
        .iter()
        .map(|case| {
            let pooled = combine(case, strategy, weights).unwrap();
            crps(&pooled, case.observation()).unwrap()
        })
        .sum();
    total / panel.len() as f64
}

/// Equal-weight pool of a case, for reference methods.
pub fn equal_pool(case: &ForecastCase<f64>) -> DiscreteDistribution<f64> {
    let w = WeightVector::uniform(kpool::pooling::IndexSpace::PerModel(case.num_models()));
    combine(case, Strategy::EqualLp, &w).unwrap()
}

/// Random equal-weight univariate distribution.
pub fn random_dist1(rng: &mut StdRng, max_atoms: usize) -> DiscreteDistribution<f64> {
    let m = rng.gen_range(1..=max_atoms);
    DiscreteDistribution::equal_weights((0..m).map(|_| pt1(rng.gen_range(-6.0..6.0))).collect())
        .unwrap()
}

/// Random weighted distribution in d dimensions.
pub fn random_weighted(rng: &mut StdRng, max_atoms: usize, d: usize) -> DiscreteDistribution<f64> {
    let m = rng.gen_range(1..=max_atoms);
    let atoms = (0..m)
        .map(|_| Point::new((0..d).map(|_| rng.gen_range(-6.0..6.0)).collect()).unwrap())
        .collect();
    let raw: Vec<f64> = (0..m).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    DiscreteDistribution::new(atoms, raw.iter().map(|w| w / s).collect()).unwrap()
}

/// Expected kernel score of `f` under a discrete truth, by brute force
/// over the truth's atoms.
pub fn expected_score(
    spec: &KernelSpec<f64>,
    f: &DiscreteDistribution<f64>,
    truth: &DiscreteDistribution<f64>,
) -> f64 {
    truth
        .atoms()
        .iter()
        .zip(truth.weights())
        .map(|(y, &g)| g * kpool::scoring::kernel_score(spec, f, y).unwrap())
        .sum()
}
