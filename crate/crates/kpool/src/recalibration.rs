//! Member-by-member post-processing of component forecasts.
//!
//! On square-root transformed values, each sample is mapped through
//! `t_m = (a + b·z̄) + √(c + d/s²) · (z_m − z̄)` where `z̄` and `s²` are the
//! sample mean and variance of the transformed members, then squared back
//! so the output stays non-negative. The affine map rescales the ensemble
//! mean and stretches the spread without reordering the members.
//!
//! Parameters are estimated by a two-stage method of moments: ordinary
//! least squares of (sqrt-scale) observations on ensemble means for
//! `(a, b)`, then least squares of the squared residuals on `(s², 1)` for
//! `(c, d)`, each clamped to be non-negative.

use crate::error::{Error, Result};
use crate::pooling::{ForecastCase, Panel};
use crate::scalar::{num, pairwise_sum_by, Scalar};

/// Affine recalibration parameters on the square-root scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MbmParams<S: Scalar> {
    /// Intercept of the mean correction.
    pub a: S,
    /// Slope of the mean correction.
    pub b: S,
    /// Spread scaling, `≥ 0`.
    pub c: S,
    /// Spread offset divided by the sample variance, `≥ 0`.
    pub d: S,
}

impl<S: Scalar> MbmParams<S> {
    pub fn new(a: S, b: S, c: S, d: S) -> Result<Self> {
        for (name, v) in [("a", a), ("b", b), ("c", c), ("d", d)] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter {
                    name: "mbm",
                    reason: format!("{name} must be finite, got {v}"),
                });
            }
        }
        if c < S::zero() || d < S::zero() {
            return Err(Error::InvalidParameter {
                name: "mbm",
                reason: "spread parameters c and d must be non-negative".into(),
            });
        }
        Ok(MbmParams { a, b, c, d })
    }

    /// `a=0, b=1, c=1, d=0`: the map that changes nothing.
    pub fn identity() -> Self {
        MbmParams {
            a: S::zero(),
            b: S::one(),
            c: S::one(),
            d: S::zero(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.a == S::zero() && self.b == S::one() && self.c == S::one() && self.d == S::zero()
    }
}

fn sqrt_members<S: Scalar>(members: &[S]) -> Result<Vec<S>> {
    if members.len() < 2 {
        return Err(Error::Degenerate(format!(
            "member-by-member needs at least 2 members for a defined variance, got {}",
            members.len()
        )));
    }
    members
        .iter()
        .map(|&x| {
            if !x.is_finite() || x < S::zero() {
                Err(Error::InvalidParameter {
                    name: "member",
                    reason: format!("members must be non-negative reals, got {x}"),
                })
            } else {
                Ok(x.sqrt())
            }
        })
        .collect()
}

fn mean_and_var<S: Scalar>(z: &[S]) -> (S, S) {
    let m = z.len();
    let mean = pairwise_sum_by(m, &|i| z[i]) / num::<S>(m as f64);
    let var = pairwise_sum_by(m, &|i| (z[i] - mean) * (z[i] - mean)) / num::<S>((m - 1) as f64);
    (mean, var)
}

/// Apply the transform to one member vector of non-negative values.
///
/// Identity parameters return the input unchanged (bit for bit), skipping
/// the sqrt round trip. Transformed values that land below zero on the
/// sqrt scale are truncated to zero before squaring, which keeps the map
/// weakly order-preserving for any `c, d ≥ 0`.
pub fn mbm_apply<S: Scalar>(params: &MbmParams<S>, members: &[S]) -> Result<Vec<S>> {
    let z = sqrt_members(members)?;
    if params.is_identity() {
        return Ok(members.to_vec());
    }
    let (mean, var) = mean_and_var(&z);
    let spread = if params.d == S::zero() {
        params.c.sqrt()
    } else {
        if var == S::zero() {
            return Err(Error::Degenerate(
                "zero member variance with d > 0 divides by zero".into(),
            ));
        }
        (params.c + params.d / var).sqrt()
    };
    let center = params.a + params.b * mean;
    Ok(z.iter()
        .map(|&zm| {
            let t = (center + spread * (zm - mean)).max(S::zero());
            t * t
        })
        .collect())
}

/// Fit parameters from `(members, observation)` training pairs.
///
/// Requires at least 3 cases and ensemble means that are not all equal on
/// the sqrt scale.
pub fn mbm_fit<S: Scalar>(cases: &[(Vec<S>, S)]) -> Result<MbmParams<S>> {
    let n = cases.len();
    if n < 3 {
        return Err(Error::Degenerate(format!(
            "member-by-member fitting needs at least 3 cases, got {n}"
        )));
    }
    let mut means = Vec::with_capacity(n);
    let mut vars = Vec::with_capacity(n);
    let mut obs = Vec::with_capacity(n);
    for (members, y) in cases {
        let z = sqrt_members(members)?;
        if !y.is_finite() || *y < S::zero() {
            return Err(Error::InvalidParameter {
                name: "observation",
                reason: format!("observations must be non-negative reals, got {y}"),
            });
        }
        let (mean, var) = mean_and_var(&z);
        means.push(mean);
        vars.push(var);
        obs.push(y.sqrt());
    }

    // Stage 1: OLS of sqrt-observations on sqrt-scale ensemble means.
    let nf = num::<S>(n as f64);
    let mean_x = pairwise_sum_by(n, &|i| means[i]) / nf;
    let mean_y = pairwise_sum_by(n, &|i| obs[i]) / nf;
    let sxx = pairwise_sum_by(n, &|i| (means[i] - mean_x) * (means[i] - mean_x));
    if sxx <= S::epsilon() * nf * (mean_x.abs() + S::one()) {
        return Err(Error::Degenerate(
            "all ensemble means coincide; the mean regression is singular".into(),
        ));
    }
    let sxy = pairwise_sum_by(n, &|i| (means[i] - mean_x) * (obs[i] - mean_y));
    let b = sxy / sxx;
    let a = mean_y - b * mean_x;

    // Stage 2: least squares of squared residuals on (s², 1); slope is c,
    // intercept is d, both clamped at zero.
    let resid2: Vec<S> = (0..n)
        .map(|i| {
            let r = obs[i] - a - b * means[i];
            r * r
        })
        .collect();
    let mean_v = pairwise_sum_by(n, &|i| vars[i]) / nf;
    let mean_r = pairwise_sum_by(n, &|i| resid2[i]) / nf;
    let svv = pairwise_sum_by(n, &|i| (vars[i] - mean_v) * (vars[i] - mean_v));
    let (c, d) = if svv <= S::epsilon() * nf * (mean_v.abs() + S::one()) {
        // Constant member variance: the split between c and d is not
        // identified; attribute everything to the scale term.
        if mean_v > S::zero() {
            (mean_r / mean_v, S::zero())
        } else {
            (S::zero(), S::zero())
        }
    } else {
        let svr = pairwise_sum_by(n, &|i| (vars[i] - mean_v) * (resid2[i] - mean_r));
        let c = svr / svv;
        let d = mean_r - c * mean_v;
        (c, d)
    };
    MbmParams::new(a, b, c.max(S::zero()), d.max(S::zero()))
}

/// Fit one parameter set per model over a univariate panel.
pub fn mbm_fit_panel<S: Scalar>(panel: &Panel<S>) -> Result<Vec<MbmParams<S>>> {
    if panel.dim() != 1 {
        return Err(Error::OrderedRequiresUnivariate(panel.dim()));
    }
    (0..panel.num_models())
        .map(|j| {
            let cases: Vec<(Vec<S>, S)> = panel
                .cases()
                .iter()
                .map(|case| {
                    let members = case.components()[j]
                        .atoms()
                        .iter()
                        .map(|a| a.value())
                        .collect();
                    (members, case.observation().value())
                })
                .collect();
            mbm_fit(&cases)
        })
        .collect()
}

/// Apply per-model parameters to every case of a univariate panel,
/// preserving observations, alphas and meta.
pub fn mbm_apply_panel<S: Scalar>(panel: &Panel<S>, params: &[MbmParams<S>]) -> Result<Panel<S>> {
    if panel.dim() != 1 {
        return Err(Error::OrderedRequiresUnivariate(panel.dim()));
    }
    if params.len() != panel.num_models() {
        return Err(Error::LengthMismatch {
            what: "mbm parameters vs models",
            expected: panel.num_models(),
            got: params.len(),
        });
    }
    let cases = panel
        .cases()
        .iter()
        .map(|case| {
            let members = case
                .components()
                .iter()
                .zip(params)
                .map(|(comp, p)| {
                    let raw: Vec<S> = comp.atoms().iter().map(|a| a.value()).collect();
                    let post = mbm_apply(p, &raw)?;
                    post.into_iter()
                        .map(crate::kernels::Point::scalar)
                        .collect()
                })
                .collect::<Result<Vec<Vec<_>>>>()?;
            ForecastCase::from_members(members, case.observation().clone(), case.alpha())
        })
        .collect::<Result<Vec<_>>>()?;
    Panel::new(cases, panel.model_ids().to_vec(), panel.meta().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn identity_parameters_leave_members_bit_unchanged() {
        let params = MbmParams::<f64>::identity();
        let members = vec![0.0, 2.0, 3.7, 11.25, 1e-8];
        let out = mbm_apply(&params, &members).unwrap();
        for (a, b) in members.iter().zip(&out) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn hand_worked_transform() {
        // sqrt {1,9} = {1,3}, mean 2, spread factor 2 → t = {0,4} → {0,16}.
        let params = MbmParams::new(0.0, 1.0, 4.0, 0.0).unwrap();
        let out = mbm_apply(&params, &[1.0, 9.0]).unwrap();
        assert_eq!(out, vec![0.0, 16.0]);
    }

    #[test]
    fn constant_members_collapse_to_center() {
        let params = MbmParams::new(1.0, 2.0, 3.0, 0.0).unwrap();
        let out = mbm_apply(&params, &[4.0, 4.0, 4.0]).unwrap();
        let center: f64 = 1.0 + 2.0 * 2.0;
        for v in out {
            assert!((v - center * center).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_variance_with_d_errors() {
        let params = MbmParams::new(0.0, 1.0, 1.0, 0.5).unwrap();
        assert!(mbm_apply(&params, &[4.0, 4.0]).is_err());
    }

    #[test]
    fn negative_members_rejected() {
        let params = MbmParams::<f64>::identity();
        assert!(mbm_apply(&params, &[1.0, -0.5]).is_err());
        assert!(mbm_apply(&params, &[1.0]).is_err());
        assert!(MbmParams::new(0.0, 1.0, -1.0, 0.0).is_err());
    }

    #[test]
    fn ordering_preserved() {
        let mut rng = StdRng::seed_from_u64(41);
        for _ in 0..1000 {
            let m = rng.gen_range(2..=12);
            let mut members: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..30.0)).collect();
            members.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let params = MbmParams::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(0.0..3.0),
                rng.gen_range(0.0..4.0),
                rng.gen_range(0.0..4.0),
            )
            .unwrap();
            let out = match mbm_apply(&params, &members) {
                Ok(out) => out,
                // zero-variance draw with d > 0
                Err(_) => continue,
            };
            for pair in out.windows(2) {
                assert!(pair[0] <= pair[1], "ordering broken: {pair:?}");
            }
            assert!(out.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn fit_recovers_identity_like_panel() {
        // Observations equal the squared ensemble mean, members constant
        // spread: OLS must find a≈0, b≈1.
        let cases: Vec<(Vec<f64>, f64)> = (1..=12)
            .map(|i| {
                let center = i as f64;
                let members = vec![center * center; 4];
                (members, center * center)
            })
            .collect();
        let params = mbm_fit(&cases).unwrap();
        assert!(params.a.abs() < 1e-8, "a = {}", params.a);
        assert!((params.b - 1.0).abs() < 1e-8, "b = {}", params.b);
    }

    #[test]
    fn fit_recovers_linear_mean_map() {
        // sqrt(y) = 2 + 3·z̄ exactly.
        let cases: Vec<(Vec<f64>, f64)> = (1..=10)
            .map(|i| {
                let zbar = 0.5 * i as f64;
                let members = vec![zbar * zbar; 3];
                let y = (2.0 + 3.0 * zbar).powi(2);
                (members, y)
            })
            .collect();
        let params = mbm_fit(&cases).unwrap();
        assert!((params.a - 2.0).abs() < 1e-8);
        assert!((params.b - 3.0).abs() < 1e-8);
    }

    #[test]
    fn fit_needs_three_cases_and_varying_means() {
        let two: Vec<(Vec<f64>, f64)> = vec![(vec![1.0, 2.0], 1.0), (vec![2.0, 3.0], 2.0)];
        assert!(mbm_fit(&two).is_err());
        let flat: Vec<(Vec<f64>, f64)> = (0..5).map(|_| (vec![4.0, 4.0, 4.0], 3.0)).collect();
        assert!(mbm_fit(&flat).is_err());
    }

    #[test]
    fn fit_reduces_bias_on_synthetic_data() {
        let mut rng = StdRng::seed_from_u64(42);
        for bias in [0.5, 1.0, -0.8] {
            // Gaussian-derived positive data on the sqrt scale.
            let cases: Vec<(Vec<f64>, f64)> = (0..400)
                .map(|_| {
                    let mu: f64 = rng.gen_range(3.0..6.0);
                    let members: Vec<f64> = (0..8)
                        .map(|_| {
                            let z: f64 =
                                mu + bias + 0.4 * rng.sample::<f64, _>(rand_distr::StandardNormal);
                            z.max(0.0).powi(2)
                        })
                        .collect();
                    let y: f64 = (mu + 0.4 * rng.sample::<f64, _>(rand_distr::StandardNormal))
                        .max(0.0)
                        .powi(2);
                    (members, y)
                })
                .collect();
            let params = mbm_fit(&cases).unwrap();
            let raw_err: f64 = cases
                .iter()
                .map(|(m, y)| y - m.iter().sum::<f64>() / m.len() as f64)
                .sum::<f64>()
                / cases.len() as f64;
            let post_err: f64 = cases
                .iter()
                .map(|(m, y)| {
                    let t = mbm_apply(&params, m).unwrap();
                    y - t.iter().sum::<f64>() / t.len() as f64
                })
                .sum::<f64>()
                / cases.len() as f64;
            assert!(
                post_err.abs() < raw_err.abs(),
                "bias {bias}: post {post_err} vs raw {raw_err}"
            );
        }
    }
}
