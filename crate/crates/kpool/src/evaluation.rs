//! Verification suite: PIT values and histograms, grouped score means,
//! skill, per-member MSE, and the CSV report writers.

use crate::error::{Error, Result};
use crate::kernels::DiscreteDistribution;
use crate::pooling::Panel;
use crate::scalar::{num, pairwise_sum_by, Scalar};
use crate::scoring;
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::io::Write;

/// A probability integral transform value in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PitValue<S: Scalar>(S);

impl<S: Scalar> PitValue<S> {
    pub fn new(u: S) -> Result<Self> {
        if !(u >= S::zero() && u <= S::one()) {
            return Err(Error::InvalidParameter {
                name: "pit",
                reason: format!("must lie in [0, 1], got {u}"),
            });
        }
        Ok(PitValue(u))
    }

    pub fn value(&self) -> S {
        self.0
    }
}

/// Randomised PIT of a discrete univariate forecast:
/// `u = F(y⁻) + V · (F(y) − F(y⁻))` with `V ~ U[0, 1)`.
///
/// `F(y⁻)` sums weights of atoms strictly below `y`, `F(y)` of atoms up to
/// and including it, so the draw only matters when an atom sits exactly at
/// the observation.
pub fn pit_with_uniform<S: Scalar>(f: &DiscreteDistribution<S>, y: S, v: S) -> Result<PitValue<S>> {
    if f.dim() != 1 {
        return Err(Error::OrderedRequiresUnivariate(f.dim()));
    }
    if !(v >= S::zero() && v <= S::one()) {
        return Err(Error::InvalidParameter {
            name: "pit draw",
            reason: format!("must lie in [0, 1], got {v}"),
        });
    }
    let mut below = S::zero();
    let mut at = S::zero();
    for (atom, &w) in f.atoms().iter().zip(f.weights()) {
        let x = atom.value();
        if x < y {
            below += w;
        } else if x == y {
            at += w;
        }
    }
    let u = (below + v * at).min(S::one()).max(S::zero());
    PitValue::new(u)
}

/// Randomised PIT with the uniform draw keyed by `(seed, case_index)`, so
/// evaluation order and thread count cannot change the result.
pub fn pit<S: Scalar>(
    f: &DiscreteDistribution<S>,
    y: S,
    seed: u64,
    case_index: u64,
) -> Result<PitValue<S>> {
    use rand::Rng;
    let mut rng = crate::rng::stream(&[seed, crate::rng::role::PIT, case_index]);
    let v: f64 = rng.gen();
    pit_with_uniform(f, y, num(v))
}

/// Mean squared error of each member as a point forecast:
/// `Σ_i ‖x^m_{j,i} − y_i‖² / n`, indexed `[model][member]`.
pub fn member_mse<S: Scalar>(panel: &Panel<S>) -> Vec<Vec<S>> {
    let n = panel.len();
    let nf = num::<S>(n as f64);
    panel
        .member_counts()
        .iter()
        .enumerate()
        .map(|(j, &mj)| {
            (0..mj)
                .map(|m| {
                    pairwise_sum_by(n, &|i| {
                        let case = &panel.cases()[i];
                        let x = &case.components()[j].atoms()[m];
                        let d = x.distance(case.observation());
                        d * d
                    }) / nf
                })
                .collect()
        })
        .collect()
}

/// Which scoring rule a report aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    Crps,
    Energy,
}

impl ScoreKind {
    pub fn name(&self) -> &'static str {
        match self {
            ScoreKind::Crps => "crps",
            ScoreKind::Energy => "energy",
        }
    }
}

/// Grouping key for aggregated reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupKey {
    /// Single group over the whole panel.
    All,
    LeadTime,
    Location,
    Date,
}

impl GroupKey {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "all" | "pooled" => Ok(GroupKey::All),
            "lead_time" => Ok(GroupKey::LeadTime),
            "location" => Ok(GroupKey::Location),
            "date" => Ok(GroupKey::Date),
            other => Err(Error::Config(format!(
                "unknown group key `{other}` (expected pooled, lead_time, location, date)"
            ))),
        }
    }

    /// Group label of one case, or an error if the panel lacks the meta.
    pub fn label(&self, panel: &Panel<impl Scalar>, case: usize) -> Result<String> {
        let meta = &panel.meta()[case];
        match self {
            GroupKey::All => Ok("all".to_string()),
            GroupKey::LeadTime => meta
                .lead_time
                .map(|lt| format!("{lt}"))
                .ok_or_else(|| missing_meta("lead_time", &meta.case_id)),
            GroupKey::Location => meta
                .location
                .clone()
                .ok_or_else(|| missing_meta("location", &meta.case_id)),
            GroupKey::Date => meta
                .date
                .clone()
                .ok_or_else(|| missing_meta("date", &meta.case_id)),
        }
    }
}

fn missing_meta(key: &str, case_id: &str) -> Error {
    Error::Config(format!("case `{case_id}` has no `{key}` meta column"))
}

/// One aggregated score: `method` over `group`, averaged over `n` cases.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub method: String,
    pub group: String,
    pub value: f64,
    pub n: usize,
}

/// Mean per-case score of the method outputs within each group, ordered by
/// group label. Scores are computed in parallel; each group mean is a
/// fixed-order pairwise sum.
pub fn score_by_group<S: Scalar>(
    panel: &Panel<S>,
    outputs: &[DiscreteDistribution<S>],
    method: &str,
    score: ScoreKind,
    group_key: GroupKey,
) -> Result<Vec<ScoreReport>> {
    if outputs.len() != panel.len() {
        return Err(Error::LengthMismatch {
            what: "method outputs vs panel cases",
            expected: panel.len(),
            got: outputs.len(),
        });
    }
    let scores: Vec<S> = outputs
        .par_iter()
        .zip(panel.cases().par_iter())
        .map(|(f, case)| match score {
            ScoreKind::Crps => scoring::crps(f, case.observation()),
            ScoreKind::Energy => scoring::energy_score(f, case.observation()),
        })
        .collect::<Result<Vec<S>>>()?;

    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for i in 0..panel.len() {
        groups
            .entry(group_key.label(panel, i)?)
            .or_default()
            .push(i);
    }
    Ok(groups
        .into_iter()
        .map(|(group, idx)| {
            let sum = pairwise_sum_by(idx.len(), &|r| scores[idx[r]]);
            ScoreReport {
                method: method.to_string(),
                group,
                value: (sum / num::<S>(idx.len() as f64))
                    .to_f64()
                    .unwrap_or(f64::NAN),
                n: idx.len(),
            }
        })
        .collect())
}

/// Relative improvement `1 − s/s_ref` of a score against a reference.
pub fn skill<S: Scalar>(score_method: S, score_ref: S) -> Result<S> {
    if score_ref.is_nan() || score_ref <= S::zero() {
        return Err(Error::InvalidParameter {
            name: "score_ref",
            reason: format!("reference score must be positive, got {score_ref}"),
        });
    }
    Ok(S::one() - score_method / score_ref)
}

/// Histogram of PIT values over `bins` equal-width bins on `[0, 1]`,
/// right-closed except the first bin.
pub fn pit_histogram<S: Scalar>(pits: &[PitValue<S>], bins: usize) -> Result<Vec<usize>> {
    if bins < 2 {
        return Err(Error::InvalidParameter {
            name: "bins",
            reason: format!("need at least 2 bins, got {bins}"),
        });
    }
    let mut counts = vec![0usize; bins];
    let nb = num::<S>(bins as f64);
    for p in pits {
        let u = p.value();
        let idx = if u <= S::zero() {
            0
        } else {
            let scaled = (u * nb).ceil();
            (scaled.to_f64().unwrap_or(1.0) as usize)
                .saturating_sub(1)
                .min(bins - 1)
        };
        counts[idx] += 1;
    }
    Ok(counts)
}

/// Kolmogorov–Smirnov distance of the PIT sample from the uniform law.
pub fn ks_statistic_uniform<S: Scalar>(pits: &[PitValue<S>]) -> Result<S> {
    if pits.is_empty() {
        return Err(Error::EmptyInput("pit values"));
    }
    let mut u: Vec<S> = pits.iter().map(|p| p.value()).collect();
    u.sort_by(|a, b| a.partial_cmp(b).expect("pit values are finite"));
    let n = num::<S>(u.len() as f64);
    let mut d = S::zero();
    for (i, &ui) in u.iter().enumerate() {
        let hi = num::<S>((i + 1) as f64) / n - ui;
        let lo = ui - num::<S>(i as f64) / n;
        d = d.max(hi).max(lo);
    }
    Ok(d)
}

/// Serialise score reports with the documented header
/// `method,group,value,n,seed`.
pub fn write_score_reports<W: Write>(
    out: &mut W,
    reports: &[ScoreReport],
    seed: u64,
) -> Result<()> {
    writeln!(out, "method,group,value,n,seed")?;
    for r in reports {
        writeln!(out, "{},{},{},{},{}", r.method, r.group, r.value, r.n, seed)?;
    }
    Ok(())
}

/// Serialise PIT histograms, one method per block, with the single header
/// `method,bin_lo,bin_hi,count,n,seed`.
pub fn write_pit_histograms<W: Write>(
    out: &mut W,
    blocks: &[(&str, Vec<usize>)],
    seed: u64,
) -> Result<()> {
    writeln!(out, "method,bin_lo,bin_hi,count,n,seed")?;
    for (method, counts) in blocks {
        let n: usize = counts.iter().sum();
        let bins = counts.len();
        for (i, &c) in counts.iter().enumerate() {
            let lo = i as f64 / bins as f64;
            let hi = (i + 1) as f64 / bins as f64;
            writeln!(out, "{method},{lo},{hi},{c},{n},{seed}")?;
        }
    }
    Ok(())
}
