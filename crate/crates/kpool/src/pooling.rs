//! Combination strategies over panels of component forecasts.
//!
//! Four strategies build a pooled predictive distribution from `J`
//! equal-weight component samples:
//!
//! * `EqualLp` — the multi-model baseline, fixed weights `1/J` per model;
//! * `DiscreteLp` — one weight per model, atoms keep their within-model
//!   share `w_j / M_j`;
//! * `PointLp` — one weight per individual member, members flattened in
//!   model order then member index;
//! * `OrderedLp` — one weight per order statistic: each component's atoms
//!   are sorted ascending per case and the weight attaches to the rank,
//!   not the member. Univariate only. With equal member counts the sorted
//!   atoms sit at fixed quantile levels, so the fitted rank weights can be
//!   read as a quantile-level weight profile; only the finite-support
//!   mixture itself is constructed here.
//!
//! `OrderedLp` nests `DiscreteLp`: rank weights constant within a model
//! reproduce the plain linear pool, which is why its fitted training score
//! can never be worse.

use crate::error::{Error, Result};
use crate::kernels::{DiscreteDistribution, KernelSpec, Point};
use crate::scalar::{num, pairwise_sum_by, Scalar};
use crate::scoring::kernel_score;

/// One training or test case: `J` equal-weight component forecasts, the
/// verifying observation, and a per-case scaling `α ≥ 0`.
#[derive(Debug, Clone)]
pub struct ForecastCase<S: Scalar> {
    components: Vec<DiscreteDistribution<S>>,
    observation: Point<S>,
    alpha: S,
}

impl<S: Scalar> ForecastCase<S> {
    /// Build a case from raw member lists; components become equal-weight
    /// distributions, which is the only form a panel admits.
    pub fn from_members(
        members: Vec<Vec<Point<S>>>,
        observation: Point<S>,
        alpha: S,
    ) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::EmptyInput("case components"));
        }
        let components = members
            .into_iter()
            .map(DiscreteDistribution::equal_weights)
            .collect::<Result<Vec<_>>>()?;
        ForecastCase::new(components, observation, alpha)
    }

    pub fn new(
        components: Vec<DiscreteDistribution<S>>,
        observation: Point<S>,
        alpha: S,
    ) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::EmptyInput("case components"));
        }
        let d = observation.dim();
        for comp in &components {
            if comp.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: comp.dim(),
                });
            }
            let m = comp.len();
            let uniform = S::one() / num::<S>(m as f64);
            if comp
                .weights()
                .iter()
                .any(|&w| (w - uniform).abs() > S::weight_sum_tol(m))
            {
                return Err(Error::InvalidDistribution(
                    "component forecasts must carry uniform member weights".into(),
                ));
            }
        }
        if !(alpha.is_finite() && alpha >= S::zero()) {
            return Err(Error::InvalidParameter {
                name: "alpha",
                reason: format!("must be a non-negative real, got {alpha}"),
            });
        }
        Ok(ForecastCase {
            components,
            observation,
            alpha,
        })
    }

    pub fn components(&self) -> &[DiscreteDistribution<S>] {
        &self.components
    }

    pub fn observation(&self) -> &Point<S> {
        &self.observation
    }

    pub fn alpha(&self) -> S {
        self.alpha
    }

    pub fn num_models(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.observation.dim()
    }

    pub fn member_counts(&self) -> Vec<usize> {
        self.components.iter().map(|c| c.len()).collect()
    }
}

/// Optional per-case labels used for grouped fitting and reporting.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CaseMeta {
    pub case_id: String,
    pub lead_time: Option<u32>,
    pub location: Option<String>,
    pub date: Option<String>,
}

/// `n` cases sharing the same model roster `(J, M_1..M_J)` and dimension.
#[derive(Debug, Clone)]
pub struct Panel<S: Scalar> {
    cases: Vec<ForecastCase<S>>,
    model_ids: Vec<String>,
    member_counts: Vec<usize>,
    meta: Vec<CaseMeta>,
}

impl<S: Scalar> Panel<S> {
    pub fn new(
        cases: Vec<ForecastCase<S>>,
        model_ids: Vec<String>,
        meta: Vec<CaseMeta>,
    ) -> Result<Self> {
        if cases.is_empty() {
            return Err(Error::EmptyInput("panel cases"));
        }
        if !meta.is_empty() && meta.len() != cases.len() {
            return Err(Error::LengthMismatch {
                what: "case meta",
                expected: cases.len(),
                got: meta.len(),
            });
        }
        let member_counts = cases[0].member_counts();
        if model_ids.len() != member_counts.len() {
            return Err(Error::LengthMismatch {
                what: "model ids",
                expected: member_counts.len(),
                got: model_ids.len(),
            });
        }
        let d = cases[0].dim();
        for (idx, case) in cases.iter().enumerate() {
            if case.dim() != d {
                return Err(Error::PanelStructure {
                    case_id: meta
                        .get(idx)
                        .map(|m| m.case_id.clone())
                        .unwrap_or_else(|| idx.to_string()),
                    model_id: String::new(),
                    reason: format!("dimension {} differs from panel dimension {d}", case.dim()),
                });
            }
            if case.member_counts() != member_counts {
                return Err(Error::PanelStructure {
                    case_id: meta
                        .get(idx)
                        .map(|m| m.case_id.clone())
                        .unwrap_or_else(|| idx.to_string()),
                    model_id: String::new(),
                    reason: "member counts differ from panel roster".into(),
                });
            }
        }
        let meta = if meta.is_empty() {
            (0..cases.len())
                .map(|i| CaseMeta {
                    case_id: i.to_string(),
                    ..CaseMeta::default()
                })
                .collect()
        } else {
            meta
        };
        Ok(Panel {
            cases,
            model_ids,
            member_counts,
            meta,
        })
    }

    pub fn cases(&self) -> &[ForecastCase<S>] {
        &self.cases
    }

    pub fn model_ids(&self) -> &[String] {
        &self.model_ids
    }

    pub fn member_counts(&self) -> &[usize] {
        &self.member_counts
    }

    pub fn meta(&self) -> &[CaseMeta] {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn num_models(&self) -> usize {
        self.member_counts.len()
    }

    pub fn total_members(&self) -> usize {
        self.member_counts.iter().sum()
    }

    pub fn dim(&self) -> usize {
        self.cases[0].dim()
    }

    pub fn observations(&self) -> Vec<Point<S>> {
        self.cases.iter().map(|c| c.observation().clone()).collect()
    }

    /// Per-case alphas as stored on the panel (defaulting to 1 on load).
    pub fn alphas(&self) -> Result<crate::scoring::AlphaWeights<S>> {
        crate::scoring::AlphaWeights::new(self.cases.iter().map(|c| c.alpha()).collect())
    }

    /// Panel restricted to the given case indices, keeping roster and meta.
    pub fn subset(&self, indices: &[usize]) -> Result<Panel<S>> {
        let cases = indices.iter().map(|&i| self.cases[i].clone()).collect();
        let meta = indices.iter().map(|&i| self.meta[i].clone()).collect();
        Panel::new(cases, self.model_ids.clone(), meta)
    }

    /// All atoms and observations, the sample used by the bandwidth median
    /// heuristic.
    pub fn sample_points(&self) -> Vec<Point<S>> {
        let mut pts = Vec::new();
        for case in &self.cases {
            for comp in case.components() {
                pts.extend(comp.atoms().iter().cloned());
            }
            pts.push(case.observation().clone());
        }
        pts
    }
}

/// Combination strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Fixed uniform model weights, no estimation.
    EqualLp,
    /// Weight per model.
    DiscreteLp,
    /// Weight per individual sample member.
    PointLp,
    /// Weight per order statistic; univariate outcomes only.
    OrderedLp,
}

impl Strategy {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "equal" => Ok(Strategy::EqualLp),
            "lp-discrete" => Ok(Strategy::DiscreteLp),
            "lp-point" => Ok(Strategy::PointLp),
            "lp-ordered" => Ok(Strategy::OrderedLp),
            other => Err(Error::Config(format!(
                "unknown strategy `{other}` (expected equal, lp-discrete, lp-point, lp-ordered)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::EqualLp => "equal",
            Strategy::DiscreteLp => "lp-discrete",
            Strategy::PointLp => "lp-point",
            Strategy::OrderedLp => "lp-ordered",
        }
    }

    /// Index space a weight vector must live in for this strategy on the
    /// given roster.
    pub fn index_space(&self, member_counts: &[usize]) -> IndexSpace {
        match self {
            Strategy::EqualLp | Strategy::DiscreteLp => IndexSpace::PerModel(member_counts.len()),
            Strategy::PointLp | Strategy::OrderedLp => {
                IndexSpace::PerMember(member_counts.iter().sum())
            }
        }
    }

    pub fn all() -> [Strategy; 4] {
        [
            Strategy::EqualLp,
            Strategy::DiscreteLp,
            Strategy::PointLp,
            Strategy::OrderedLp,
        ]
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Whether weights index models (`J` entries) or members/order statistics
/// (`Σ M_j` entries).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexSpace {
    PerModel(usize),
    PerMember(usize),
}

impl IndexSpace {
    pub fn len(&self) -> usize {
        match self {
            IndexSpace::PerModel(j) => *j,
            IndexSpace::PerMember(m) => *m,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn label(&self) -> &'static str {
        match self {
            IndexSpace::PerModel(_) => "per-model",
            IndexSpace::PerMember(_) => "per-member",
        }
    }
}

impl std::fmt::Display for IndexSpace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}({})", self.label(), self.len())
    }
}

/// Element of the probability simplex indexed by model, member, or order
/// statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector<S: Scalar> {
    weights: Vec<S>,
    index_space: IndexSpace,
}

impl<S: Scalar> WeightVector<S> {
    pub fn new(weights: Vec<S>, index_space: IndexSpace) -> Result<Self> {
        if weights.len() != index_space.len() {
            return Err(Error::LengthMismatch {
                what: "weight vector vs index space",
                expected: index_space.len(),
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite() || *w < S::zero()) {
            return Err(Error::InvalidWeights(
                "weights must be finite and non-negative".into(),
            ));
        }
        let sum = pairwise_sum_by(weights.len(), &|i| weights[i]);
        if (sum - S::one()).abs() > S::weight_sum_tol(weights.len()) {
            return Err(Error::InvalidWeights(format!(
                "weights sum to {sum}, expected 1"
            )));
        }
        Ok(WeightVector {
            weights,
            index_space,
        })
    }

    pub fn uniform(index_space: IndexSpace) -> Self {
        let k = index_space.len();
        WeightVector {
            weights: vec![S::one() / num::<S>(k as f64); k],
            index_space,
        }
    }

    pub fn weights(&self) -> &[S] {
        &self.weights
    }

    pub fn index_space(&self) -> IndexSpace {
        self.index_space
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

fn check_index_space<S: Scalar>(
    w: &WeightVector<S>,
    strategy: Strategy,
    member_counts: &[usize],
) -> Result<()> {
    let expected = strategy.index_space(member_counts);
    if w.index_space() != expected {
        return Err(Error::IndexSpaceMismatch {
            expected: expected.to_string(),
            got: w.index_space().to_string(),
        });
    }
    Ok(())
}

/// Pool one case under a strategy and weight vector.
///
/// Duplicate atoms are kept rather than merged; scores are invariant to
/// the representation and each atom stays traceable to its member.
/// `EqualLp` substitutes the fixed uniform model weights regardless of the
/// values carried by `w`.
pub fn combine<S: Scalar>(
    case: &ForecastCase<S>,
    strategy: Strategy,
    w: &WeightVector<S>,
) -> Result<DiscreteDistribution<S>> {
    let counts = case.member_counts();
    check_index_space(w, strategy, &counts)?;
    match strategy {
        Strategy::EqualLp => {
            let uniform = WeightVector::uniform(IndexSpace::PerModel(case.num_models()));
            mixture(case, &uniform)
        }
        Strategy::DiscreteLp => mixture(case, w),
        Strategy::PointLp => {
            let atoms: Vec<Point<S>> = case
                .components()
                .iter()
                .flat_map(|c| c.atoms().iter().cloned())
                .collect();
            DiscreteDistribution::new(atoms, w.weights().to_vec())
        }
        Strategy::OrderedLp => {
            if case.dim() != 1 {
                return Err(Error::OrderedRequiresUnivariate(case.dim()));
            }
            let mut atoms = Vec::with_capacity(counts.iter().sum());
            for comp in case.components() {
                let mut sorted: Vec<Point<S>> = comp.atoms().to_vec();
                // Stable sort: ties keep original member order.
                sorted.sort_by(|a, b| a.value().partial_cmp(&b.value()).expect("finite atoms"));
                atoms.extend(sorted);
            }
            DiscreteDistribution::new(atoms, w.weights().to_vec())
        }
    }
}

fn mixture<S: Scalar>(
    case: &ForecastCase<S>,
    w: &WeightVector<S>,
) -> Result<DiscreteDistribution<S>> {
    let mut atoms = Vec::new();
    let mut weights = Vec::new();
    for (j, comp) in case.components().iter().enumerate() {
        let share = w.weights()[j] / num::<S>(comp.len() as f64);
        for atom in comp.atoms() {
            atoms.push(atom.clone());
            weights.push(share);
        }
    }
    DiscreteDistribution::new(atoms, weights)
}

/// Per-model weight totals `Σ_m w_{j,m}`; the relative contribution of each
/// component forecast to the combination. Per-model weights pass through
/// unchanged.
pub fn model_contributions<S: Scalar>(
    w: &WeightVector<S>,
    member_counts: &[usize],
) -> Result<Vec<S>> {
    match w.index_space() {
        IndexSpace::PerModel(j) => {
            if j != member_counts.len() {
                return Err(Error::LengthMismatch {
                    what: "member counts vs per-model weights",
                    expected: j,
                    got: member_counts.len(),
                });
            }
            Ok(w.weights().to_vec())
        }
        IndexSpace::PerMember(m) => {
            let total: usize = member_counts.iter().sum();
            if total != m {
                return Err(Error::LengthMismatch {
                    what: "member counts vs per-member weights",
                    expected: m,
                    got: total,
                });
            }
            let mut out = Vec::with_capacity(member_counts.len());
            let mut offset = 0;
            for &mj in member_counts {
                out.push(pairwise_sum_by(mj, &|i| w.weights()[offset + i]));
                offset += mj;
            }
            Ok(out)
        }
    }
}

/// `Σ_j w_j S_k(F_j, y) − S_k(F_LP, y)`: the score saved by pooling before
/// scoring instead of scoring before pooling. Kernel-score convexity makes
/// this non-negative up to rounding.
pub fn convexity_gap<S: Scalar>(
    spec: &KernelSpec<S>,
    case: &ForecastCase<S>,
    w: &WeightVector<S>,
) -> Result<S> {
    if !matches!(w.index_space(), IndexSpace::PerModel(_)) {
        return Err(Error::IndexSpaceMismatch {
            expected: IndexSpace::PerModel(case.num_models()).to_string(),
            got: w.index_space().to_string(),
        });
    }
    let pooled = combine(case, Strategy::DiscreteLp, w)?;
    let pool_score = kernel_score(spec, &pooled, case.observation())?;
    let weighted = pairwise_sum_by(case.num_models(), &|j| {
        w.weights()[j]
            * kernel_score(spec, &case.components()[j], case.observation()).unwrap_or(S::nan())
    });
    if !weighted.is_finite() {
        // Surface the per-component error instead of a NaN gap.
        for comp in case.components() {
            kernel_score(spec, comp, case.observation())?;
        }
    }
    Ok(weighted - pool_score)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn pt(x: f64) -> Point<f64> {
        Point::scalar(x).unwrap()
    }

    fn case(models: &[&[f64]], y: f64) -> ForecastCase<f64> {
        ForecastCase::from_members(
            models
                .iter()
                .map(|vals| vals.iter().map(|&v| pt(v)).collect())
                .collect(),
            pt(y),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn discrete_lp_mixture() {
        let c = case(&[&[0.0], &[2.0]], 1.0);
        let w = WeightVector::new(vec![0.5, 0.5], IndexSpace::PerModel(2)).unwrap();
        let pooled = combine(&c, Strategy::DiscreteLp, &w).unwrap();
        assert_eq!(
            pooled.atoms().iter().map(|a| a.value()).collect::<Vec<_>>(),
            vec![0.0, 2.0]
        );
        assert_eq!(pooled.weights(), &[0.5, 0.5]);
    }

    #[test]
    fn ordered_lp_sorts_then_attaches_weights() {
        let c = case(&[&[3.0, 1.0, 2.0]], 0.0);
        let w = WeightVector::new(vec![0.2, 0.3, 0.5], IndexSpace::PerMember(3)).unwrap();
        let pooled = combine(&c, Strategy::OrderedLp, &w).unwrap();
        assert_eq!(
            pooled.atoms().iter().map(|a| a.value()).collect::<Vec<_>>(),
            vec![1.0, 2.0, 3.0]
        );
        assert_eq!(pooled.weights(), &[0.2, 0.3, 0.5]);
    }

    #[test]
    fn ordered_lp_rejects_multivariate() {
        let c = ForecastCase::from_members(
            vec![vec![Point::new(vec![0.0, 1.0]).unwrap()]],
            Point::new(vec![0.0, 0.0]).unwrap(),
            1.0,
        )
        .unwrap();
        let w = WeightVector::new(vec![1.0], IndexSpace::PerMember(1)).unwrap();
        assert!(matches!(
            combine(&c, Strategy::OrderedLp, &w),
            Err(Error::OrderedRequiresUnivariate(2))
        ));
    }

    #[test]
    fn index_space_mismatch_rejected() {
        let c = case(&[&[0.0], &[2.0]], 1.0);
        let w = WeightVector::new(vec![0.5, 0.5], IndexSpace::PerMember(2)).unwrap();
        assert!(combine(&c, Strategy::DiscreteLp, &w).is_err());
    }

    #[test]
    fn point_lp_with_uniform_member_weights_equals_count_weighted_mixture() {
        let c = case(&[&[0.0, 1.0], &[2.0, 3.0, 4.0]], 1.0);
        let m = 5;
        let w_pt = WeightVector::new(vec![1.0 / m as f64; m], IndexSpace::PerMember(m)).unwrap();
        let pooled_pt = combine(&c, Strategy::PointLp, &w_pt).unwrap();

        let w_md = WeightVector::new(vec![2.0 / 5.0, 3.0 / 5.0], IndexSpace::PerModel(2)).unwrap();
        let pooled_md = combine(&c, Strategy::DiscreteLp, &w_md).unwrap();

        let key = |d: &DiscreteDistribution<f64>| {
            let mut pairs: Vec<(f64, f64)> = d
                .atoms()
                .iter()
                .map(|a| a.value())
                .zip(d.weights().iter().copied())
                .collect();
            pairs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            pairs
        };
        for ((xa, wa), (xb, wb)) in key(&pooled_pt).into_iter().zip(key(&pooled_md)) {
            assert_eq!(xa, xb);
            assert!((wa - wb).abs() < 1e-15);
        }
    }

    #[test]
    fn equal_lp_ignores_weight_values() {
        let c = case(&[&[0.0], &[2.0]], 1.0);
        let w = WeightVector::new(vec![0.9, 0.1], IndexSpace::PerModel(2)).unwrap();
        let pooled = combine(&c, Strategy::EqualLp, &w).unwrap();
        assert_eq!(pooled.weights(), &[0.5, 0.5]);
    }

    #[test]
    fn model_contribution_examples() {
        let w =
            WeightVector::<f64>::new(vec![0.1, 0.2, 0.3, 0.4], IndexSpace::PerMember(4)).unwrap();
        let contrib = model_contributions(&w, &[2, 2]).unwrap();
        assert!((contrib[0] - 0.3).abs() < 1e-15);
        assert!((contrib[1] - 0.7).abs() < 1e-15);

        let w = WeightVector::new(vec![0.6, 0.4], IndexSpace::PerModel(2)).unwrap();
        assert_eq!(model_contributions(&w, &[3, 5]).unwrap(), vec![0.6, 0.4]);

        let counts = [11usize, 21, 51];
        let m: usize = counts.iter().sum();
        let w = WeightVector::uniform(IndexSpace::PerMember(m));
        let contrib = model_contributions(&w, &counts).unwrap();
        for (c, &mj) in contrib.iter().zip(&counts) {
            assert!((c - mj as f64 / m as f64).abs() < 1e-12);
        }

        assert!(model_contributions(&w, &[11, 21]).is_err());
    }

    #[test]
    fn convexity_gap_examples() {
        let e = KernelSpec::Energy;
        let single = case(&[&[0.0, 2.0]], 1.0);
        let w1 = WeightVector::new(vec![1.0], IndexSpace::PerModel(1)).unwrap();
        assert!(convexity_gap(&e, &single, &w1).unwrap().abs() < 1e-12);

        let twins = case(&[&[0.0, 2.0], &[0.0, 2.0]], 1.0);
        let w = WeightVector::new(vec![0.3, 0.7], IndexSpace::PerModel(2)).unwrap();
        assert!(convexity_gap(&e, &twins, &w).unwrap().abs() < 1e-12);

        let c = case(&[&[0.0], &[2.0]], 1.0);
        let w = WeightVector::new(vec![0.5, 0.5], IndexSpace::PerModel(2)).unwrap();
        assert!((convexity_gap(&e, &c, &w).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn convexity_gap_nonnegative_random() {
        let mut rng = StdRng::seed_from_u64(21);
        for trial in 0..200 {
            let d = rng.gen_range(1..=3);
            let j = rng.gen_range(1..=4);
            let members: Vec<Vec<Point<f64>>> = (0..j)
                .map(|_| {
                    (0..rng.gen_range(1..=8))
                        .map(|_| {
                            Point::new((0..d).map(|_| rng.gen_range(-4.0..4.0)).collect()).unwrap()
                        })
                        .collect()
                })
                .collect();
            let y = Point::new((0..d).map(|_| rng.gen_range(-4.0..4.0)).collect()).unwrap();
            let c = ForecastCase::from_members(members, y, 1.0).unwrap();
            let raw: Vec<f64> = (0..j).map(|_| rng.gen_range(0.01..1.0)).collect();
            let s: f64 = raw.iter().sum();
            let w = WeightVector::new(raw.iter().map(|v| v / s).collect(), IndexSpace::PerModel(j))
                .unwrap();
            let spec = if trial % 2 == 0 {
                KernelSpec::Energy
            } else {
                KernelSpec::gaussian(1.0).unwrap()
            };
            let gap = convexity_gap(&spec, &c, &w).unwrap();
            assert!(gap >= -1e-9, "trial {trial}: gap {gap}");
        }
    }

    #[test]
    fn unanimity_identical_components() {
        let comp = [0.5, 1.5, 2.5];
        let c = case(&[&comp, &comp, &comp], 1.0);
        let w = WeightVector::new(vec![0.2, 0.5, 0.3], IndexSpace::PerModel(3)).unwrap();
        let pooled = combine(&c, Strategy::DiscreteLp, &w).unwrap();
        // Merge duplicate atoms and compare with the single component.
        let mut merged: std::collections::BTreeMap<u64, f64> = std::collections::BTreeMap::new();
        for (a, &wt) in pooled.atoms().iter().zip(pooled.weights()) {
            *merged.entry(a.value().to_bits()).or_insert(0.0) += wt;
        }
        assert_eq!(merged.len(), comp.len());
        for (&bits, &wt) in &merged {
            assert!(comp.contains(&f64::from_bits(bits)));
            assert!((wt - 1.0 / 3.0).abs() < 1e-10);
        }
    }

    #[test]
    fn ordered_nests_discrete() {
        let c = case(&[&[3.0, 1.0], &[5.0, 2.0, 4.0]], 2.0);
        let v = [0.4, 0.6];
        let counts = c.member_counts();
        let mut per_member = Vec::new();
        for (j, &mj) in counts.iter().enumerate() {
            per_member.extend(std::iter::repeat_n(v[j] / mj as f64, mj));
        }
        let w_os =
            WeightVector::new(per_member, IndexSpace::PerMember(counts.iter().sum())).unwrap();
        let pooled_os = combine(&c, Strategy::OrderedLp, &w_os).unwrap();

        let w_lp = WeightVector::new(v.to_vec(), IndexSpace::PerModel(2)).unwrap();
        let pooled_lp = combine(&c, Strategy::DiscreteLp, &w_lp).unwrap();

        let key = |d: &DiscreteDistribution<f64>| {
            let mut pairs: Vec<(f64, f64)> = d
                .atoms()
                .iter()
                .map(|a| a.value())
                .zip(d.weights().iter().copied())
                .collect();
            pairs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            pairs
        };
        assert_eq!(key(&pooled_os), key(&pooled_lp));
    }

    #[test]
    fn combine_output_weights_sum_to_one() {
        let mut rng = StdRng::seed_from_u64(22);
        for _ in 0..50 {
            let j = rng.gen_range(1..=4);
            let members: Vec<Vec<Point<f64>>> = (0..j)
                .map(|_| {
                    (0..rng.gen_range(1..=7))
                        .map(|_| pt(rng.gen_range(-3.0..3.0)))
                        .collect()
                })
                .collect();
            let c = ForecastCase::from_members(members, pt(0.0), 1.0).unwrap();
            let counts = c.member_counts();
            let total: usize = counts.iter().sum();
            let raw: Vec<f64> = (0..total).map(|_| rng.gen_range(0.0..1.0) + 1e-3).collect();
            let s: f64 = raw.iter().sum();
            let w = WeightVector::new(
                raw.iter().map(|v| v / s).collect(),
                IndexSpace::PerMember(total),
            )
            .unwrap();
            for strat in [Strategy::PointLp, Strategy::OrderedLp] {
                let pooled = combine(&c, strat, &w).unwrap();
                let sum: f64 = pooled.weights().iter().sum();
                assert!((sum - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn panel_rejects_ragged_cases() {
        let a = case(&[&[0.0], &[1.0]], 0.5);
        let b = case(&[&[0.0, 1.0], &[1.0]], 0.5);
        let err = Panel::new(vec![a, b], vec!["m1".into(), "m2".into()], vec![]);
        assert!(err.is_err());
    }
}
