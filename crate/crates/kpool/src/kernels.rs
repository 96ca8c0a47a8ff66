//! Positive definite kernels and discrete distributions.
//!
//! A discrete predictive distribution is a finite weighted sample of points
//! in `R^d`. Its mean embedding under a kernel `k` is the function
//! `x ↦ Σ_m w_m k(atom_m, x)`, which this module represents implicitly as
//! the `(atoms, weights)` pair: every quantity downstream (scores, Gram
//! sums, QP coefficients) only ever needs inner products of embeddings,
//! which reduce to weighted kernel sums over atoms.
//!
//! Two kernels are built in:
//!
//! * the energy kernel `k(x, x') = ‖x‖ + ‖x'‖ − ‖x − x'‖`, whose kernel
//!   score is the CRPS in one dimension and the energy score in general;
//! * the Gaussian kernel `exp(−‖x − x'‖² / (2σ²))`.
//!
//! A kernel can additionally be chained with a point transform
//! (componentwise thresholding), which re-weights the score toward
//! outcomes above the threshold.

use crate::error::{Error, Result};
use crate::scalar::{num, pairwise_sum_by, Scalar};
use std::fmt;

/// A point in `R^d` with finite coordinates, `d ≥ 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Point<S: Scalar>(Vec<S>);

impl<S: Scalar> Point<S> {
    pub fn new(coords: Vec<S>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::EmptyInput("point coordinates"));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("point coordinate".into()));
        }
        Ok(Point(coords))
    }

    /// One-dimensional point.
    pub fn scalar(x: S) -> Result<Self> {
        Point::new(vec![x])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[S] {
        &self.0
    }

    /// The single coordinate of a univariate point.
    ///
    /// Panics if `d != 1`; callers guard with their own dimension checks.
    pub fn value(&self) -> S {
        assert_eq!(self.0.len(), 1, "value() requires a univariate point");
        self.0[0]
    }

    pub fn euclidean_norm(&self) -> S {
        self.0.iter().fold(S::zero(), |acc, &c| acc + c * c).sqrt()
    }

    pub fn distance(&self, other: &Point<S>) -> S {
        debug_assert_eq!(self.dim(), other.dim());
        self.0
            .iter()
            .zip(other.0.iter())
            .fold(S::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b))
            .sqrt()
    }
}

/// A registered pointwise transform `v : R^d → R^d` for chained kernels.
#[derive(Debug, Clone, PartialEq)]
pub enum PointTransform<S: Scalar> {
    /// Componentwise `max(x_l, t)`: censors outcomes below the threshold,
    /// directing the chained kernel score at values above `t`.
    Threshold { t: S },
}

impl<S: Scalar> PointTransform<S> {
    pub fn apply(&self, x: &Point<S>) -> Point<S> {
        match self {
            PointTransform::Threshold { t } => {
                Point(x.coords().iter().map(|&c| c.max(*t)).collect())
            }
        }
    }
}

/// Kernel choice with parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec<S: Scalar> {
    /// `‖x‖ + ‖x'‖ − ‖x − x'‖` with the Euclidean norm.
    Energy,
    /// `exp(−‖x − x'‖² / (2σ²))`, `σ > 0`.
    Gaussian { bandwidth: S },
    /// Inner kernel evaluated at transformed points.
    Chained {
        transform: PointTransform<S>,
        inner: Box<KernelSpec<S>>,
    },
}

impl<S: Scalar> KernelSpec<S> {
    pub fn gaussian(bandwidth: S) -> Result<Self> {
        if !(bandwidth.is_finite() && bandwidth > S::zero()) {
            return Err(Error::InvalidParameter {
                name: "bandwidth",
                reason: format!("must be a positive real, got {bandwidth}"),
            });
        }
        Ok(KernelSpec::Gaussian { bandwidth })
    }

    pub fn chained(transform: PointTransform<S>, inner: KernelSpec<S>) -> Self {
        KernelSpec::Chained {
            transform,
            inner: Box::new(inner),
        }
    }
}

impl<S: Scalar> fmt::Display for KernelSpec<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Energy => write!(f, "energy"),
            KernelSpec::Gaussian { bandwidth } => write!(f, "gaussian:{bandwidth}"),
            KernelSpec::Chained {
                transform: PointTransform::Threshold { t },
                inner,
            } => write!(f, "chained:threshold={t}:{inner}"),
        }
    }
}

/// A kernel specification as parsed from config/CLI text.
///
/// `gaussian:median` keeps the bandwidth symbolic until data is available;
/// [`KernelConfig::resolve`] turns it into a concrete [`KernelSpec`] using
/// the median heuristic over a sample of points.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelConfig<S: Scalar> {
    Energy,
    Gaussian {
        bandwidth: S,
    },
    GaussianMedian,
    Chained {
        transform: PointTransform<S>,
        inner: Box<KernelConfig<S>>,
    },
}

impl<S: Scalar> KernelConfig<S> {
    /// Parse the `energy` | `gaussian:<sigma>` | `gaussian:median` |
    /// `chained:threshold=<t>:<inner>` syntax.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = |reason: &str| Error::KernelSpec {
            spec: text.to_string(),
            reason: reason.to_string(),
        };
        let s = text.trim();
        if s == "energy" {
            return Ok(KernelConfig::Energy);
        }
        if let Some(rest) = s.strip_prefix("gaussian:") {
            if rest == "median" {
                return Ok(KernelConfig::GaussianMedian);
            }
            let sigma: f64 = rest.parse().map_err(|_| bad("bandwidth is not a number"))?;
            if !(sigma.is_finite() && sigma > 0.0) {
                return Err(bad("bandwidth must be a positive real"));
            }
            return Ok(KernelConfig::Gaussian {
                bandwidth: num(sigma),
            });
        }
        if let Some(rest) = s.strip_prefix("chained:") {
            let (head, inner_text) = rest
                .split_once(':')
                .ok_or_else(|| bad("chained kernel needs an inner kernel"))?;
            let t_text = head
                .strip_prefix("threshold=")
                .ok_or_else(|| bad("the only registered transform is threshold=<t>"))?;
            let t: f64 = t_text
                .parse()
                .map_err(|_| bad("threshold is not a number"))?;
            if !t.is_finite() {
                return Err(bad("threshold must be finite"));
            }
            let inner = KernelConfig::parse(inner_text)?;
            return Ok(KernelConfig::Chained {
                transform: PointTransform::Threshold { t: num(t) },
                inner: Box::new(inner),
            });
        }
        Err(bad(
            "expected one of: energy, gaussian:<sigma>, gaussian:median, chained:threshold=<t>:<inner>",
        ))
    }

    /// Resolve symbolic bandwidths against a data sample.
    ///
    /// `gaussian:median` becomes a Gaussian with the median pairwise
    /// Euclidean distance over `sample` (the usual median heuristic). An
    /// inner kernel of a chained spec sees the transformed sample.
    pub fn resolve(&self, sample: &[Point<S>]) -> Result<KernelSpec<S>> {
        match self {
            KernelConfig::Energy => Ok(KernelSpec::Energy),
            KernelConfig::Gaussian { bandwidth } => Ok(KernelSpec::Gaussian {
                bandwidth: *bandwidth,
            }),
            KernelConfig::GaussianMedian => {
                let sigma = median_pairwise_distance(sample)?;
                KernelSpec::gaussian(sigma)
            }
            KernelConfig::Chained { transform, inner } => {
                let transformed: Vec<Point<S>> =
                    sample.iter().map(|p| transform.apply(p)).collect();
                Ok(KernelSpec::chained(
                    transform.clone(),
                    inner.resolve(&transformed)?,
                ))
            }
        }
    }

    /// True when resolution needs a data sample.
    pub fn needs_data(&self) -> bool {
        match self {
            KernelConfig::GaussianMedian => true,
            KernelConfig::Chained { inner, .. } => inner.needs_data(),
            _ => false,
        }
    }
}

impl<S: Scalar> fmt::Display for KernelConfig<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelConfig::Energy => write!(f, "energy"),
            KernelConfig::Gaussian { bandwidth } => write!(f, "gaussian:{bandwidth}"),
            KernelConfig::GaussianMedian => write!(f, "gaussian:median"),
            KernelConfig::Chained {
                transform: PointTransform::Threshold { t },
                inner,
            } => write!(f, "chained:threshold={t}:{inner}"),
        }
    }
}

/// Median of pairwise Euclidean distances, the bandwidth default.
///
/// Deterministic: when the sample is large, a fixed-stride subsample of at
/// most 512 points is used. Falls back to 1 when the median is zero (all
/// points identical) so the resulting bandwidth is always valid.
pub fn median_pairwise_distance<S: Scalar>(sample: &[Point<S>]) -> Result<S> {
    if sample.len() < 2 {
        return Err(Error::EmptyInput(
            "median heuristic needs at least two sample points",
        ));
    }
    const CAP: usize = 512;
    let stride = sample.len().div_ceil(CAP);
    let pts: Vec<&Point<S>> = sample.iter().step_by(stride).collect();
    let mut dists = Vec::with_capacity(pts.len() * (pts.len() - 1) / 2);
    for i in 0..pts.len() {
        for j in (i + 1)..pts.len() {
            dists.push(pts[i].distance(pts[j]));
        }
    }
    if dists.is_empty() {
        return Err(Error::EmptyInput(
            "median heuristic needs at least two sample points",
        ));
    }
    dists.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let med = dists[dists.len() / 2];
    Ok(if med > S::zero() { med } else { S::one() })
}

/// Evaluate `k(x, x2)`.
pub fn eval_kernel<S: Scalar>(spec: &KernelSpec<S>, x: &Point<S>, x2: &Point<S>) -> Result<S> {
    if x.dim() != x2.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            got: x2.dim(),
        });
    }
    Ok(eval_unchecked(spec, x, x2))
}

/// Kernel evaluation with dimensions already validated.
///
/// The inner loops of Gram sums call this; constructing distributions and
/// checking dimensions once at the boundary keeps the hot path branch-free.
pub(crate) fn eval_unchecked<S: Scalar>(spec: &KernelSpec<S>, x: &Point<S>, x2: &Point<S>) -> S {
    match spec {
        KernelSpec::Energy => x.euclidean_norm() + x2.euclidean_norm() - x.distance(x2),
        KernelSpec::Gaussian { bandwidth } => {
            let d = x.distance(x2);
            let sig = *bandwidth;
            (-(d * d) / (num::<S>(2.0) * sig * sig)).exp()
        }
        KernelSpec::Chained { transform, inner } => {
            eval_unchecked(inner, &transform.apply(x), &transform.apply(x2))
        }
    }
}

/// A finite weighted sample of points representing one predictive
/// distribution: `M ≥ 1` atoms sharing a dimension, non-negative weights
/// summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution<S: Scalar> {
    atoms: Vec<Point<S>>,
    weights: Vec<S>,
}

impl<S: Scalar> DiscreteDistribution<S> {
    pub fn new(atoms: Vec<Point<S>>, weights: Vec<S>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::EmptyInput("distribution atoms"));
        }
        if atoms.len() != weights.len() {
            return Err(Error::LengthMismatch {
                what: "atoms vs weights",
                expected: atoms.len(),
                got: weights.len(),
            });
        }
        let d = atoms[0].dim();
        if let Some(bad) = atoms.iter().find(|a| a.dim() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: bad.dim(),
            });
        }
        if weights.iter().any(|w| !w.is_finite() || *w < S::zero()) {
            return Err(Error::InvalidWeights(
                "weights must be finite and non-negative".into(),
            ));
        }
        let sum: S = pairwise_sum_by(weights.len(), &|i| weights[i]);
        if (sum - S::one()).abs() > S::weight_sum_tol(weights.len()) {
            return Err(Error::InvalidWeights(format!(
                "weights sum to {sum}, expected 1"
            )));
        }
        Ok(DiscreteDistribution { atoms, weights })
    }

    /// Equal-weight distribution over a sample.
    pub fn equal_weights(atoms: Vec<Point<S>>) -> Result<Self> {
        let m = atoms.len();
        if m == 0 {
            return Err(Error::EmptyInput("distribution atoms"));
        }
        let w = S::one() / num::<S>(m as f64);
        DiscreteDistribution::new(atoms, vec![w; m])
    }

    /// Point mass at `point`.
    pub fn dirac(point: Point<S>) -> Self {
        DiscreteDistribution {
            atoms: vec![point],
            weights: vec![S::one()],
        }
    }

    pub fn atoms(&self) -> &[Point<S>] {
        &self.atoms
    }

    pub fn weights(&self) -> &[S] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].dim()
    }
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch {
            expected: a,
            got: b,
        });
    }
    Ok(())
}

/// `Σ_m Σ_m' P.w[m] Q.w[m'] k(P.atom[m], Q.atom[m'])`, the RKHS inner
/// product of the two mean embeddings.
pub fn cross_gram<S: Scalar>(
    spec: &KernelSpec<S>,
    p: &DiscreteDistribution<S>,
    q: &DiscreteDistribution<S>,
) -> Result<S> {
    check_dims(p.dim(), q.dim())?;
    let m = p.len();
    let mq = q.len();
    Ok(pairwise_sum_by(m * mq, &|idx| {
        let i = idx / mq;
        let j = idx % mq;
        p.weights[i] * q.weights[j] * eval_unchecked(spec, &p.atoms[i], &q.atoms[j])
    }))
}

/// `Σ_m P.w[m] k(P.atom[m], y)`, the embedding of `P` evaluated at `y`.
pub fn embed_against_point<S: Scalar>(
    spec: &KernelSpec<S>,
    p: &DiscreteDistribution<S>,
    y: &Point<S>,
) -> Result<S> {
    check_dims(p.dim(), y.dim())?;
    Ok(pairwise_sum_by(p.len(), &|i| {
        p.weights[i] * eval_unchecked(spec, &p.atoms[i], y)
    }))
}
