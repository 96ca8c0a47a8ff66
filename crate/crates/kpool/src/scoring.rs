//! Proper scoring rules for discrete forecasts.
//!
//! The central object is the kernel score
//! `S_k(F, y) = ½ E k(X, X') + ½ k(y, y) − E k(X, y)`, which equals half the
//! squared MMD between `F` and the point mass at `y`. The CRPS is the
//! energy-kernel score in one dimension, the energy score its multivariate
//! form; both are also computed directly from their expectation formulas so
//! the identities can be cross-checked.
//!
//! Scores here accept weighted atoms, not just equal-weight samples: the
//! member- and order-statistic pooling strategies produce genuinely
//! non-uniform weights.

use crate::error::{Error, Result};
use crate::kernels::{cross_gram, embed_against_point, eval_kernel};
use crate::kernels::{DiscreteDistribution, KernelSpec, Point};
use crate::scalar::{num, pairwise_sum, pairwise_sum_by, Scalar};
use rayon::prelude::*;

/// Non-negative per-case scaling factors for an empirical score; not all
/// zero.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaWeights<S: Scalar>(Vec<S>);

impl<S: Scalar> AlphaWeights<S> {
    pub fn new(alphas: Vec<S>) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::EmptyInput("alpha weights"));
        }
        if alphas.iter().any(|a| !a.is_finite() || *a < S::zero()) {
            return Err(Error::InvalidWeights(
                "alpha weights must be finite and non-negative".into(),
            ));
        }
        if alphas.iter().all(|a| *a == S::zero()) {
            return Err(Error::InvalidWeights(
                "alpha weights must not all be zero".into(),
            ));
        }
        Ok(AlphaWeights(alphas))
    }

    /// All ones, the usual choice.
    pub fn uniform(n: usize) -> Result<Self> {
        AlphaWeights::new(vec![S::one(); n])
    }

    /// Geometric decay `α_i = λ^{n−1−i}` (0-based `i`), emphasising recent
    /// cases; `λ = 1` recovers uniform weights.
    pub fn decay(n: usize, lambda: S) -> Result<Self> {
        if !(lambda > S::zero() && lambda <= S::one()) {
            return Err(Error::InvalidParameter {
                name: "lambda",
                reason: format!("decay must lie in (0, 1], got {lambda}"),
            });
        }
        let alphas = (0..n).map(|i| lambda.powi((n - 1 - i) as i32)).collect();
        AlphaWeights::new(alphas)
    }

    pub fn values(&self) -> &[S] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Elementwise product, e.g. file-provided alphas times a decay profile.
    pub fn scaled_by(&self, other: &AlphaWeights<S>) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::LengthMismatch {
                what: "alpha weights",
                expected: self.len(),
                got: other.len(),
            });
        }
        AlphaWeights::new(
            self.0
                .iter()
                .zip(other.0.iter())
                .map(|(&a, &b)| a * b)
                .collect(),
        )
    }
}

/// Clamp the floating-point noise band below zero; anything more negative
/// indicates a real bug upstream and is reported rather than hidden.
fn clamp_nonnegative<S: Scalar>(value: S, what: &str) -> Result<S> {
    if value >= S::zero() {
        Ok(value)
    } else if value >= -S::score_floor() {
        Ok(S::zero())
    } else {
        Err(Error::InternalConsistency(format!(
            "{what} = {value} is negative beyond tolerance"
        )))
    }
}

/// Kernel score `½ E k(X,X') + ½ k(y,y) − E k(X,y)` of `F` against the
/// observation `y`; always ≥ 0 up to rounding.
pub fn kernel_score<S: Scalar>(
    spec: &KernelSpec<S>,
    f: &DiscreteDistribution<S>,
    y: &Point<S>,
) -> Result<S> {
    let half = num::<S>(0.5);
    let gram = cross_gram(spec, f, f)?;
    let kyy = eval_kernel(spec, y, y)?;
    let emb = embed_against_point(spec, f, y)?;
    clamp_nonnegative(half * gram + half * kyy - emb, "kernel score")
}

/// CRPS `E|X−y| − ½E|X−X'|` over the weighted atoms; univariate only.
pub fn crps<S: Scalar>(f: &DiscreteDistribution<S>, y: &Point<S>) -> Result<S> {
    if f.dim() != 1 || y.dim() != 1 {
        return Err(Error::OrderedRequiresUnivariate(f.dim().max(y.dim())));
    }
    let atoms = f.atoms();
    let w = f.weights();
    let yv = y.value();
    let m = atoms.len();
    let first = pairwise_sum_by(m, &|i| w[i] * (atoms[i].value() - yv).abs());
    let second = pairwise_sum_by(m * m, &|idx| {
        let i = idx / m;
        let j = idx % m;
        w[i] * w[j] * (atoms[i].value() - atoms[j].value()).abs()
    });
    clamp_nonnegative(first - num::<S>(0.5) * second, "crps")
}

/// Energy score `E‖X−y‖ − ½E‖X−X'‖` over the weighted atoms; any dimension.
pub fn energy_score<S: Scalar>(f: &DiscreteDistribution<S>, y: &Point<S>) -> Result<S> {
    if f.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            expected: f.dim(),
            got: y.dim(),
        });
    }
    let atoms = f.atoms();
    let w = f.weights();
    let m = atoms.len();
    let first = pairwise_sum_by(m, &|i| w[i] * atoms[i].distance(y));
    let second = pairwise_sum_by(m * m, &|idx| {
        let i = idx / m;
        let j = idx % m;
        w[i] * w[j] * atoms[i].distance(&atoms[j])
    });
    clamp_nonnegative(first - num::<S>(0.5) * second, "energy score")
}

/// Squared MMD `‖μ_F − μ_G‖²` between two discrete distributions.
pub fn squared_mmd<S: Scalar>(
    spec: &KernelSpec<S>,
    f: &DiscreteDistribution<S>,
    g: &DiscreteDistribution<S>,
) -> Result<S> {
    let ff = cross_gram(spec, f, f)?;
    let gg = cross_gram(spec, g, g)?;
    let fg = cross_gram(spec, f, g)?;
    clamp_nonnegative(ff + gg - num::<S>(2.0) * fg, "squared MMD")
}

/// Weighted empirical score `Σ_i α_i S_k(F_i, y_i)`.
///
/// Cases are scored in parallel and reduced with a fixed-order pairwise
/// sum, so the result is identical for any thread count.
pub fn empirical_score<S: Scalar>(
    spec: &KernelSpec<S>,
    forecasts: &[DiscreteDistribution<S>],
    obs: &[Point<S>],
    alphas: &AlphaWeights<S>,
) -> Result<S> {
    if forecasts.len() != obs.len() {
        return Err(Error::LengthMismatch {
            what: "forecasts vs observations",
            expected: forecasts.len(),
            got: obs.len(),
        });
    }
    if alphas.len() != forecasts.len() {
        return Err(Error::LengthMismatch {
            what: "alpha weights vs cases",
            expected: forecasts.len(),
            got: alphas.len(),
        });
    }
    let a = alphas.values();
    let terms: Vec<S> = forecasts
        .par_iter()
        .zip(obs.par_iter())
        .zip(a.par_iter())
        .map(|((f, y), &ai)| kernel_score(spec, f, y).map(|s| ai * s))
        .collect::<Result<Vec<S>>>()?;
    Ok(pairwise_sum(&terms))
}
