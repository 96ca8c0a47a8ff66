//! Floating-point scalar abstraction and deterministic summation.
//!
//! All numeric kernels, scores and solvers in this crate are generic over a
//! [`Scalar`] so they can run in `f32` or `f64`; the crate-root aliases pin
//! the default double-precision instantiation. Tolerances that guard type
//! invariants live on the trait, since a sensible bound for `f64` is far too
//! strict for `f32`.

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar usable throughout the numeric core.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Send + Sync + 'static
{
    /// Allowed deviation of a weight vector's sum from 1, for `len` entries.
    fn weight_sum_tol(len: usize) -> Self;

    /// Band below zero inside which a kernel score is clamped to 0;
    /// anything more negative is an internal-consistency error.
    fn score_floor() -> Self;

    /// Absolute tolerance for matrix symmetry checks.
    fn symmetry_tol() -> Self;

    /// Relative tolerance (against `trace/K`) for the PSD check.
    fn psd_rel_tol() -> Self;
}

impl Scalar for f64 {
    fn weight_sum_tol(len: usize) -> Self {
        // 1e-10 is the contract bound; the eps term keeps very long
        // vectors from tripping on accumulated rounding alone.
        (1e-10f64).max(32.0 * len as f64 * f64::EPSILON)
    }
    fn score_floor() -> Self {
        1e-9
    }
    fn symmetry_tol() -> Self {
        1e-10
    }
    fn psd_rel_tol() -> Self {
        1e-8
    }
}

impl Scalar for f32 {
    fn weight_sum_tol(len: usize) -> Self {
        (1e-5f32).max(32.0 * len as f32 * f32::EPSILON)
    }
    fn score_floor() -> Self {
        1e-4
    }
    fn symmetry_tol() -> Self {
        1e-5
    }
    fn psd_rel_tol() -> Self {
        1e-4
    }
}

/// Shorthand conversion from an `f64` literal into any [`Scalar`].
#[inline]
pub fn num<S: Scalar>(x: f64) -> S {
    S::from_f64(x).expect("literal representable in scalar type")
}

/// Pairwise (cascade) summation of `f(0), ..., f(n-1)`.
///
/// Error grows as O(log n) instead of O(n), and the reduction order is a
/// pure function of `n`, so results are identical no matter how the terms
/// were produced.
pub fn pairwise_sum_by<S: Scalar, F: Fn(usize) -> S>(n: usize, f: &F) -> S {
    fn rec<S: Scalar, F: Fn(usize) -> S>(start: usize, len: usize, f: &F) -> S {
        if len <= 32 {
            let mut acc = S::zero();
            for i in start..start + len {
                acc += f(i);
            }
            acc
        } else {
            let half = len / 2;
            rec(start, half, f) + rec(start + half, len - half, f)
        }
    }
    rec(0, n, f)
}

/// Pairwise summation of a slice.
pub fn pairwise_sum<S: Scalar>(xs: &[S]) -> S {
    pairwise_sum_by(xs.len(), &|i| xs[i])
}
