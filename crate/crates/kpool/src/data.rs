//! Panel ingestion, fitted-model persistence, and the synthetic scenario
//! generator.
//!
//! Panels travel as a pair of tidy CSV files (UTF-8, comma separator,
//! header row required):
//!
//! * forecasts: `case_id,model_id,member_id,dim_index,value` plus the
//!   optional meta columns `lead_time,location,date,alpha` (constant
//!   within a case);
//! * observations: `case_id,dim_index,value`.
//!
//! Cases are ordered by `case_id`, models lexicographically by id, members
//! numerically by `member_id`, so a panel loads identically everywhere.
//! Numbers are written in the shortest representation that parses back to
//! the same bits, making save → load the identity.
//!
//! Fitted models are stored as a line-oriented `key = value` text file
//! with a `format_version = 1` header.

use crate::error::{Error, Result};
use crate::kernels::{KernelConfig, KernelSpec, Point};
use crate::pooling::{CaseMeta, ForecastCase, IndexSpace, Panel, Strategy, WeightVector};
use crate::qp::Solution;
use crate::recalibration::MbmParams;
use crate::rng::{role, stream};
use rand::Rng;
use rand_distr::StandardNormal;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufWriter, Write};
use std::path::Path;

// ---------------------------------------------------------------------------
// Panel CSV
// ---------------------------------------------------------------------------

struct Columns {
    case_id: usize,
    model_id: usize,
    member_id: usize,
    dim_index: usize,
    value: usize,
    lead_time: Option<usize>,
    location: Option<usize>,
    date: Option<usize>,
    alpha: Option<usize>,
}

fn header_columns(path: &str, header: &str) -> Result<Columns> {
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    let find = |name: &str| names.iter().position(|h| *h == name);
    let need = |name: &'static str| {
        find(name).ok_or_else(|| Error::FileFormat {
            path: path.to_string(),
            row: 1,
            reason: format!("missing required column `{name}`"),
        })
    };
    Ok(Columns {
        case_id: need("case_id")?,
        model_id: need("model_id")?,
        member_id: need("member_id")?,
        dim_index: need("dim_index")?,
        value: need("value")?,
        lead_time: find("lead_time"),
        location: find("location"),
        date: find("date"),
        alpha: find("alpha"),
    })
}

fn parse_number(path: &str, row: usize, field: &str, text: &str) -> Result<f64> {
    text.trim().parse::<f64>().map_err(|_| Error::FileFormat {
        path: path.to_string(),
        row,
        reason: format!("non-numeric {field} `{text}`"),
    })
}

fn parse_index(path: &str, row: usize, field: &str, text: &str) -> Result<usize> {
    text.trim().parse::<usize>().map_err(|_| Error::FileFormat {
        path: path.to_string(),
        row,
        reason: format!("non-integer {field} `{text}`"),
    })
}

#[derive(Default, Clone)]
struct RawMeta {
    lead_time: Option<u32>,
    location: Option<String>,
    date: Option<String>,
    alpha: Option<f64>,
}

/// Load a panel from its forecast and observation CSV files.
pub fn load_panel(forecast_path: &Path, obs_path: &Path) -> Result<Panel<f64>> {
    let fpath = forecast_path.display().to_string();
    let ftext = std::fs::read_to_string(forecast_path)?;
    let mut lines = ftext.lines().enumerate();
    let header = lines
        .next()
        .ok_or_else(|| Error::FileFormat {
            path: fpath.clone(),
            row: 1,
            reason: "empty file, header row required".into(),
        })?
        .1;
    let cols = header_columns(&fpath, header)?;

    // (case, model, member) → per-dimension values.
    type MemberKey = (String, String, usize);
    let mut values: BTreeMap<MemberKey, BTreeMap<usize, f64>> = BTreeMap::new();
    let mut metas: BTreeMap<String, RawMeta> = BTreeMap::new();
    for (lineno, line) in lines {
        let row = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let get = |idx: usize, name: &str| -> Result<&str> {
            fields.get(idx).copied().ok_or_else(|| Error::FileFormat {
                path: fpath.clone(),
                row,
                reason: format!("missing field `{name}`"),
            })
        };
        let case_id = get(cols.case_id, "case_id")?.to_string();
        let model_id = get(cols.model_id, "model_id")?.to_string();
        let member_id = parse_index(&fpath, row, "member_id", get(cols.member_id, "member_id")?)?;
        let dim = parse_index(&fpath, row, "dim_index", get(cols.dim_index, "dim_index")?)?;
        let value = parse_number(&fpath, row, "value", get(cols.value, "value")?)?;

        let mut meta = RawMeta::default();
        if let Some(i) = cols.lead_time {
            meta.lead_time =
                Some(parse_index(&fpath, row, "lead_time", get(i, "lead_time")?)? as u32);
        }
        if let Some(i) = cols.location {
            meta.location = Some(get(i, "location")?.to_string());
        }
        if let Some(i) = cols.date {
            meta.date = Some(get(i, "date")?.to_string());
        }
        if let Some(i) = cols.alpha {
            meta.alpha = Some(parse_number(&fpath, row, "alpha", get(i, "alpha")?)?);
        }
        match metas.entry(case_id.clone()) {
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(meta);
            }
            std::collections::btree_map::Entry::Occupied(e) => {
                let prev = e.get();
                if prev.lead_time != meta.lead_time
                    || prev.location != meta.location
                    || prev.date != meta.date
                    || prev.alpha != meta.alpha
                {
                    return Err(Error::FileFormat {
                        path: fpath.clone(),
                        row,
                        reason: format!("meta columns differ within case `{case_id}`"),
                    });
                }
            }
        }
        if values
            .entry((case_id.clone(), model_id.clone(), member_id))
            .or_default()
            .insert(dim, value)
            .is_some()
        {
            return Err(Error::FileFormat {
                path: fpath.clone(),
                row,
                reason: format!(
                    "duplicate row for case `{case_id}`, model `{model_id}`, member {member_id}, dim {dim}"
                ),
            });
        }
    }
    if values.is_empty() {
        return Err(Error::EmptyInput("forecast file has no data rows"));
    }

    // Observations.
    let opath = obs_path.display().to_string();
    let otext = std::fs::read_to_string(obs_path)?;
    let mut olines = otext.lines().enumerate();
    let oheader = olines
        .next()
        .ok_or_else(|| Error::FileFormat {
            path: opath.clone(),
            row: 1,
            reason: "empty file, header row required".into(),
        })?
        .1;
    let onames: Vec<&str> = oheader.split(',').map(str::trim).collect();
    let ocase = onames.iter().position(|h| *h == "case_id");
    let odim = onames.iter().position(|h| *h == "dim_index");
    let oval = onames.iter().position(|h| *h == "value");
    let (ocase, odim, oval) = match (ocase, odim, oval) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => {
            return Err(Error::FileFormat {
                path: opath.clone(),
                row: 1,
                reason: "observation file needs columns case_id,dim_index,value".into(),
            })
        }
    };
    let mut obs: BTreeMap<String, BTreeMap<usize, f64>> = BTreeMap::new();
    for (lineno, line) in olines {
        let row = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let case_id = fields.get(ocase).copied().unwrap_or("").to_string();
        let dim = parse_index(
            &opath,
            row,
            "dim_index",
            fields.get(odim).copied().unwrap_or(""),
        )?;
        let value = parse_number(
            &opath,
            row,
            "value",
            fields.get(oval).copied().unwrap_or(""),
        )?;
        obs.entry(case_id).or_default().insert(dim, value);
    }

    // Global roster: model ids and their member id sets.
    let mut roster: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (_, model_id, member_id) in values.keys() {
        let members = roster.entry(model_id.clone()).or_default();
        if !members.contains(member_id) {
            members.push(*member_id);
        }
    }
    for members in roster.values_mut() {
        members.sort_unstable();
    }
    let d = values
        .values()
        .flat_map(|dims| dims.keys().copied())
        .max()
        .unwrap_or(0)
        + 1;

    let case_ids: Vec<String> = metas.keys().cloned().collect();
    let model_ids: Vec<String> = roster.keys().cloned().collect();

    let dense_point =
        |dims: &BTreeMap<usize, f64>, what: &dyn Fn() -> Error| -> Result<Point<f64>> {
            let mut coords = Vec::with_capacity(d);
            for l in 0..d {
                coords.push(*dims.get(&l).ok_or_else(what)?);
            }
            Point::new(coords).map_err(|_| what())
        };

    let mut cases = Vec::with_capacity(case_ids.len());
    let mut meta_out = Vec::with_capacity(case_ids.len());
    for case_id in &case_ids {
        let mut members_by_model = Vec::with_capacity(model_ids.len());
        for model_id in &model_ids {
            let mut pts = Vec::new();
            for member_id in &roster[model_id] {
                let key = (case_id.clone(), model_id.clone(), *member_id);
                let dims = values.get(&key).ok_or_else(|| Error::PanelStructure {
                    case_id: case_id.clone(),
                    model_id: model_id.clone(),
                    reason: format!("missing member {member_id}"),
                })?;
                let err = || Error::PanelStructure {
                    case_id: case_id.clone(),
                    model_id: model_id.clone(),
                    reason: format!("member {member_id} lacks a dense dim_index 0..{d}"),
                };
                pts.push(dense_point(dims, &err)?);
            }
            members_by_model.push(pts);
        }
        let odims = obs.get(case_id).ok_or_else(|| Error::PanelStructure {
            case_id: case_id.clone(),
            model_id: String::new(),
            reason: "no observation rows".into(),
        })?;
        let oerr = || Error::PanelStructure {
            case_id: case_id.clone(),
            model_id: String::new(),
            reason: format!("observation lacks a dense dim_index 0..{d}"),
        };
        let y = dense_point(odims, &oerr)?;
        let raw = &metas[case_id];
        let alpha = raw.alpha.unwrap_or(1.0);
        cases.push(ForecastCase::from_members(members_by_model, y, alpha)?);
        meta_out.push(CaseMeta {
            case_id: case_id.clone(),
            lead_time: raw.lead_time,
            location: raw.location.clone(),
            date: raw.date.clone(),
        });
    }
    Panel::new(cases, model_ids, meta_out)
}

/// Write a panel to forecast and observation CSV files.
pub fn save_panel(panel: &Panel<f64>, forecast_path: &Path, obs_path: &Path) -> Result<()> {
    let has_lead = panel.meta().iter().any(|m| m.lead_time.is_some());
    let has_loc = panel.meta().iter().any(|m| m.location.is_some());
    let has_date = panel.meta().iter().any(|m| m.date.is_some());

    let mut fw = BufWriter::new(std::fs::File::create(forecast_path)?);
    let mut header = String::from("case_id,model_id,member_id,dim_index,value");
    if has_lead {
        header.push_str(",lead_time");
    }
    if has_loc {
        header.push_str(",location");
    }
    if has_date {
        header.push_str(",date");
    }
    header.push_str(",alpha");
    writeln!(fw, "{header}")?;
    for (case, meta) in panel.cases().iter().zip(panel.meta()) {
        let mut suffix = String::new();
        if has_lead {
            match meta.lead_time {
                Some(lt) => write!(suffix, ",{lt}").unwrap(),
                None => {
                    return Err(Error::Config(format!(
                        "case `{}` lacks lead_time while other cases have it",
                        meta.case_id
                    )))
                }
            }
        }
        if has_loc {
            match &meta.location {
                Some(loc) => write!(suffix, ",{loc}").unwrap(),
                None => {
                    return Err(Error::Config(format!(
                        "case `{}` lacks location while other cases have it",
                        meta.case_id
                    )))
                }
            }
        }
        if has_date {
            match &meta.date {
                Some(dt) => write!(suffix, ",{dt}").unwrap(),
                None => {
                    return Err(Error::Config(format!(
                        "case `{}` lacks date while other cases have it",
                        meta.case_id
                    )))
                }
            }
        }
        write!(suffix, ",{}", case.alpha()).unwrap();
        for (j, model_id) in panel.model_ids().iter().enumerate() {
            for (m, atom) in case.components()[j].atoms().iter().enumerate() {
                for (l, v) in atom.coords().iter().enumerate() {
                    writeln!(
                        fw,
                        "{},{},{},{},{}{}",
                        meta.case_id, model_id, m, l, v, suffix
                    )?;
                }
            }
        }
    }
    fw.flush()?;

    let mut ow = BufWriter::new(std::fs::File::create(obs_path)?);
    writeln!(ow, "case_id,dim_index,value")?;
    for (case, meta) in panel.cases().iter().zip(panel.meta()) {
        for (l, v) in case.observation().coords().iter().enumerate() {
            writeln!(ow, "{},{},{}", meta.case_id, l, v)?;
        }
    }
    ow.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Scenario generator
// ---------------------------------------------------------------------------

/// Per-model data-generating parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelScenario {
    pub id: String,
    /// Sample members `M_j ≥ 1`.
    pub members: usize,
    /// Additive bias `b_j` of every member.
    pub bias: f64,
    /// Member noise standard deviation `s_j > 0`.
    pub dispersion: f64,
    /// Weight `γ_j ≥ 0` of a model-private signal that also enters the
    /// observation. Zero (the default) removes the signal entirely;
    /// positive values give each model genuine information of its own, so
    /// components can be individually calibrated yet mutually distinct —
    /// the regime in which pooling calibrated forecasts over-disperses.
    pub info_weight: f64,
    /// Half-range of a deterministic per-member bias ramp across member
    /// indices. Zero (the default) keeps members exchangeable; positive
    /// values order members from `bias − ramp` to `bias + ramp`, giving
    /// member identity predictive value.
    pub bias_ramp: f64,
    /// Noise multiplier for member 0, the control run. One (the default)
    /// keeps members exchangeable; smaller values make the control member
    /// a sharper point forecast than the perturbed members, the way an
    /// unperturbed model run behaves.
    pub control_scale: f64,
    /// Additive bias of member 0 relative to `bias` (default 0); lets the
    /// control run carry its own systematic error.
    pub control_bias: f64,
}

impl ModelScenario {
    pub fn new(id: impl Into<String>, members: usize, bias: f64, dispersion: f64) -> Self {
        ModelScenario {
            id: id.into(),
            members,
            bias,
            dispersion,
            info_weight: 0.0,
            bias_ramp: 0.0,
            control_scale: 1.0,
            control_bias: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.id.is_empty() || self.id.contains(',') || self.id.contains('=') {
            return Err(Error::Config(format!(
                "model id `{}` must be non-empty without `,` or `=`",
                self.id
            )));
        }
        if self.members == 0 {
            return Err(Error::Config(format!(
                "model `{}` needs members ≥ 1",
                self.id
            )));
        }
        if !(self.dispersion > 0.0 && self.dispersion.is_finite()) {
            return Err(Error::Config(format!(
                "model `{}` needs a positive finite dispersion",
                self.id
            )));
        }
        if !self.bias.is_finite() || !self.info_weight.is_finite() || !self.bias_ramp.is_finite() {
            return Err(Error::Config(format!(
                "model `{}` has non-finite parameters",
                self.id
            )));
        }
        if self.info_weight < 0.0 || self.bias_ramp < 0.0 {
            return Err(Error::Config(format!(
                "model `{}` needs info_weight ≥ 0 and bias_ramp ≥ 0",
                self.id
            )));
        }
        if !(self.control_scale > 0.0 && self.control_scale.is_finite()) {
            return Err(Error::Config(format!(
                "model `{}` needs a positive finite control_scale",
                self.id
            )));
        }
        if !self.control_bias.is_finite() {
            return Err(Error::Config(format!(
                "model `{}` needs a finite control_bias",
                self.id
            )));
        }
        Ok(())
    }
}

/// Full synthetic-scenario description; one seed determines everything.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub dim: usize,
    pub seed: u64,
    pub models: Vec<ModelScenario>,
    /// Map all values through `x ↦ x²` componentwise for a positive,
    /// wind-speed-like panel. Off by default; the Gaussian core stays
    /// analytically checkable.
    pub squared_transform: bool,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::Config("n_train and n_test must be ≥ 1".into()));
        }
        if self.dim == 0 {
            return Err(Error::Config("dim must be ≥ 1".into()));
        }
        if self.models.is_empty() {
            return Err(Error::Config("at least one model is required".into()));
        }
        let mut ids: Vec<&str> = self.models.iter().map(|m| m.id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.models.len() {
            return Err(Error::Config("model ids must be unique".into()));
        }
        for m in &self.models {
            m.validate()?;
        }
        Ok(())
    }
}

fn normal_vec(words: &[u64], d: usize) -> Vec<f64> {
    let mut rng = stream(words);
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

fn generate_cases(
    config: &ScenarioConfig,
    purpose: u64,
    n: usize,
    prefix: &str,
) -> Result<Panel<f64>> {
    let d = config.dim;
    let seed = config.seed;
    let mut cases = Vec::with_capacity(n);
    let mut meta = Vec::with_capacity(n);
    let width = (n.max(2) as f64).log10().ceil() as usize + 1;
    for i in 0..n {
        let iu = i as u64;
        let mu = normal_vec(&[seed, purpose, iu, role::TRUTH], d);
        let eps = normal_vec(&[seed, purpose, iu, role::OBS], d);
        let infos: Vec<Option<Vec<f64>>> = config
            .models
            .iter()
            .enumerate()
            .map(|(j, m)| {
                (m.info_weight > 0.0)
                    .then(|| normal_vec(&[seed, purpose, iu, role::INFO, j as u64], d))
            })
            .collect();
        let mut y: Vec<f64> = (0..d).map(|l| mu[l] + eps[l]).collect();
        for (m, info) in config.models.iter().zip(&infos) {
            if let Some(z) = info {
                for l in 0..d {
                    y[l] += m.info_weight * z[l];
                }
            }
        }

        let mut members = Vec::with_capacity(config.models.len());
        for (j, m) in config.models.iter().enumerate() {
            let mut pts = Vec::with_capacity(m.members);
            for mem in 0..m.members {
                let eta = normal_vec(&[seed, purpose, iu, role::MEMBER, j as u64, mem as u64], d);
                let ramp_pos = if m.members > 1 {
                    2.0 * mem as f64 / (m.members - 1) as f64 - 1.0
                } else {
                    0.0
                };
                let mut offset = m.bias + m.bias_ramp * ramp_pos;
                if mem == 0 {
                    offset += m.control_bias;
                }
                let noise = if mem == 0 {
                    m.dispersion * m.control_scale
                } else {
                    m.dispersion
                };
                let coords: Vec<f64> = (0..d)
                    .map(|l| {
                        let base = mu[l]
                            + infos[j].as_ref().map_or(0.0, |z| m.info_weight * z[l])
                            + offset
                            + noise * eta[l];
                        if config.squared_transform {
                            base * base
                        } else {
                            base
                        }
                    })
                    .collect();
                pts.push(Point::new(coords)?);
            }
            members.push(pts);
        }
        let y_pt = Point::new(if config.squared_transform {
            y.iter().map(|v| v * v).collect()
        } else {
            y
        })?;
        cases.push(ForecastCase::from_members(members, y_pt, 1.0)?);
        meta.push(CaseMeta {
            case_id: format!("{prefix}-{i:0width$}"),
            ..CaseMeta::default()
        });
    }
    let ids = config.models.iter().map(|m| m.id.clone()).collect();
    Panel::new(cases, ids, meta)
}

/// Generate `(train, test)` panels from the documented data-generating
/// process: latent truth `μ_i ~ N(0,1)^d`, observation `y_i = μ_i + ε_i`
/// (plus any model-private signals), members
/// `x = μ_i + b_j·1 + s_j·η` i.i.d. across members. Fully determined by
/// the seed; train and test use disjoint sub-streams.
pub fn generate_scenario(config: &ScenarioConfig) -> Result<(Panel<f64>, Panel<f64>)> {
    config.validate()?;
    // Model order must be deterministic regardless of config order.
    let mut config = config.clone();
    config.models.sort_by(|a, b| a.id.cmp(&b.id));
    let train = generate_cases(&config, 0, config.n_train, "train")?;
    let test = generate_cases(&config, 1, config.n_test, "test")?;
    Ok((train, test))
}

// ---------------------------------------------------------------------------
// Fitted-model persistence
// ---------------------------------------------------------------------------

/// One group's fitted weights and optional per-model recalibration.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupFit {
    pub label: String,
    pub solution: Solution<f64>,
    /// Aligned with the panel's model ids when present.
    pub mbm: Option<Vec<MbmParams<f64>>>,
}

/// Everything needed to apply a fitted combination to new panels.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub strategy: Strategy,
    pub kernel: KernelSpec<f64>,
    pub dim: usize,
    pub model_ids: Vec<String>,
    pub member_counts: Vec<usize>,
    /// Comma-joined grouping keys, `pooled` when the fit was global.
    pub group_by: String,
    pub groups: Vec<GroupFit>,
}

impl FittedModel {
    pub fn group(&self, label: &str) -> Option<&GroupFit> {
        self.groups.iter().find(|g| g.label == label)
    }
}

fn fmt_floats(vals: &[f64]) -> String {
    vals.iter()
        .map(|v| format!("{v}"))
        .collect::<Vec<_>>()
        .join(",")
}

/// Serialise a fitted model as `key = value` lines.
pub fn write_model<W: Write>(out: &mut W, model: &FittedModel) -> Result<()> {
    for label in model.groups.iter().map(|g| &g.label) {
        if label.is_empty() || label.contains(',') || label.contains('=') {
            return Err(Error::Config(format!(
                "group label `{label}` must be non-empty without `,` or `=`"
            )));
        }
    }
    writeln!(out, "format_version = 1")?;
    writeln!(out, "strategy = {}", model.strategy.name())?;
    writeln!(out, "kernel = {}", model.kernel)?;
    writeln!(out, "dim = {}", model.dim)?;
    writeln!(out, "model_ids = {}", model.model_ids.join(","))?;
    writeln!(
        out,
        "member_counts = {}",
        model
            .member_counts
            .iter()
            .map(|m| m.to_string())
            .collect::<Vec<_>>()
            .join(",")
    )?;
    writeln!(out, "group_by = {}", model.group_by)?;
    writeln!(
        out,
        "groups = {}",
        model
            .groups
            .iter()
            .map(|g| g.label.clone())
            .collect::<Vec<_>>()
            .join(",")
    )?;
    for g in &model.groups {
        let p = format!("group.{}", g.label);
        writeln!(
            out,
            "{p}.index_space = {}",
            g.solution.weights.index_space().label()
        )?;
        writeln!(
            out,
            "{p}.weights = {}",
            fmt_floats(g.solution.weights.weights())
        )?;
        writeln!(out, "{p}.objective = {}", g.solution.objective)?;
        writeln!(out, "{p}.iterations = {}", g.solution.iterations)?;
        writeln!(out, "{p}.kkt_residual = {}", g.solution.kkt_residual)?;
        writeln!(out, "{p}.converged = {}", g.solution.converged)?;
        if let Some(mbm) = &g.mbm {
            for (model_id, params) in model.model_ids.iter().zip(mbm) {
                writeln!(out, "{p}.mbm.{model_id}.a = {}", params.a)?;
                writeln!(out, "{p}.mbm.{model_id}.b = {}", params.b)?;
                writeln!(out, "{p}.mbm.{model_id}.c = {}", params.c)?;
                writeln!(out, "{p}.mbm.{model_id}.d = {}", params.d)?;
            }
        }
    }
    Ok(())
}

pub fn save_model(model: &FittedModel, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    write_model(&mut out, model)?;
    out.flush()?;
    Ok(())
}

/// Split `key = value` lines, skipping blanks and `#` comments.
pub(crate) fn parse_kv(text: &str) -> Vec<(usize, String, String)> {
    text.lines()
        .enumerate()
        .filter_map(|(i, line)| {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                return None;
            }
            let (k, v) = line.split_once('=')?;
            Some((i + 1, k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

pub fn read_model(text: &str, path: &str) -> Result<FittedModel> {
    let first = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .unwrap_or("")
        .trim();
    if first != "format_version = 1" {
        if let Some(rest) = first.strip_prefix("format_version") {
            return Err(Error::VersionMismatch(
                rest.trim_start_matches(['=', ' ']).to_string(),
            ));
        }
        return Err(Error::FileFormat {
            path: path.to_string(),
            row: 1,
            reason: "missing `format_version = 1` header".into(),
        });
    }
    let kv: BTreeMap<String, (usize, String)> = parse_kv(text)
        .into_iter()
        .map(|(row, k, v)| (k, (row, v)))
        .collect();
    let lookup = |key: &str| -> Result<&str> {
        kv.get(key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::FileFormat {
                path: path.to_string(),
                row: 0,
                reason: format!("missing key `{key}`"),
            })
    };
    let parse_f64s = |key: &str| -> Result<Vec<f64>> {
        let (row, v) = kv.get(key).ok_or_else(|| Error::FileFormat {
            path: path.to_string(),
            row: 0,
            reason: format!("missing key `{key}`"),
        })?;
        v.split(',')
            .map(|x| {
                x.trim().parse::<f64>().map_err(|_| Error::FileFormat {
                    path: path.to_string(),
                    row: *row,
                    reason: format!("non-numeric entry `{x}` in `{key}`"),
                })
            })
            .collect()
    };

    let strategy = Strategy::parse(lookup("strategy")?)?;
    let kernel = match KernelConfig::<f64>::parse(lookup("kernel")?)? {
        cfg if cfg.needs_data() => {
            return Err(Error::FileFormat {
                path: path.to_string(),
                row: 0,
                reason: "model file must store a resolved kernel bandwidth".into(),
            })
        }
        cfg => cfg.resolve(&[])?,
    };
    let dim: usize = lookup("dim")?.parse().map_err(|_| Error::FileFormat {
        path: path.to_string(),
        row: 0,
        reason: "non-integer dim".into(),
    })?;
    let model_ids: Vec<String> = lookup("model_ids")?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let member_counts: Vec<usize> = lookup("member_counts")?
        .split(',')
        .map(|s| {
            s.trim().parse::<usize>().map_err(|_| Error::FileFormat {
                path: path.to_string(),
                row: 0,
                reason: format!("non-integer member count `{s}`"),
            })
        })
        .collect::<Result<_>>()?;
    if model_ids.len() != member_counts.len() {
        return Err(Error::FileFormat {
            path: path.to_string(),
            row: 0,
            reason: "model_ids and member_counts lengths differ".into(),
        });
    }
    let group_by = lookup("group_by")?.to_string();
    let labels: Vec<String> = lookup("groups")?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();

    let mut groups = Vec::with_capacity(labels.len());
    for label in &labels {
        let p = format!("group.{label}");
        let space = match lookup(&format!("{p}.index_space"))? {
            "per-model" => IndexSpace::PerModel(model_ids.len()),
            "per-member" => IndexSpace::PerMember(member_counts.iter().sum()),
            other => {
                return Err(Error::FileFormat {
                    path: path.to_string(),
                    row: 0,
                    reason: format!("unknown index space `{other}`"),
                })
            }
        };
        let weights = WeightVector::new(parse_f64s(&format!("{p}.weights"))?, space)?;
        let objective = parse_f64s(&format!("{p}.objective"))?[0];
        let iterations: usize =
            lookup(&format!("{p}.iterations"))?
                .parse()
                .map_err(|_| Error::FileFormat {
                    path: path.to_string(),
                    row: 0,
                    reason: "non-integer iterations".into(),
                })?;
        let kkt_residual = parse_f64s(&format!("{p}.kkt_residual"))?[0];
        let converged = match lookup(&format!("{p}.converged"))? {
            "true" => true,
            "false" => false,
            other => {
                return Err(Error::FileFormat {
                    path: path.to_string(),
                    row: 0,
                    reason: format!("non-boolean converged `{other}`"),
                })
            }
        };
        let mut mbm = Vec::new();
        for model_id in &model_ids {
            let field = |name: &str| -> Result<Option<f64>> {
                match kv.get(&format!("{p}.mbm.{model_id}.{name}")) {
                    None => Ok(None),
                    Some((row, v)) => {
                        v.trim()
                            .parse::<f64>()
                            .map(Some)
                            .map_err(|_| Error::FileFormat {
                                path: path.to_string(),
                                row: *row,
                                reason: format!("non-numeric mbm entry `{v}`"),
                            })
                    }
                }
            };
            match (field("a")?, field("b")?, field("c")?, field("d")?) {
                (Some(a), Some(b), Some(c), Some(d)) => {
                    mbm.push(MbmParams::new(a, b, c, d)?);
                }
                (None, None, None, None) => {}
                _ => {
                    return Err(Error::FileFormat {
                        path: path.to_string(),
                        row: 0,
                        reason: format!(
                            "group `{label}` model `{model_id}` has incomplete mbm parameters"
                        ),
                    })
                }
            }
        }
        let mbm = if mbm.is_empty() {
            None
        } else if mbm.len() == model_ids.len() {
            Some(mbm)
        } else {
            return Err(Error::FileFormat {
                path: path.to_string(),
                row: 0,
                reason: format!("group `{label}` has mbm parameters for only some models"),
            });
        };
        groups.push(GroupFit {
            label: label.clone(),
            solution: Solution {
                weights,
                objective,
                iterations,
                kkt_residual,
                converged,
            },
            mbm,
        });
    }
    Ok(FittedModel {
        strategy,
        kernel,
        dim,
        model_ids,
        member_counts,
        group_by,
        groups,
    })
}

pub fn load_model(path: &Path) -> Result<FittedModel> {
    let text = std::fs::read_to_string(path)?;
    read_model(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pooling::IndexSpace;
    use tempfile::tempdir;

    fn tiny_scenario(seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            n_train: 6,
            n_test: 4,
            dim: 1,
            seed,
            models: vec![
                ModelScenario::new("alpha", 3, 0.5, 1.0),
                ModelScenario::new("beta", 2, -0.2, 0.8),
            ],
            squared_transform: false,
        }
    }

    #[test]
    fn generator_is_deterministic() {
        let (t1, s1) = generate_scenario(&tiny_scenario(7)).unwrap();
        let (t2, s2) = generate_scenario(&tiny_scenario(7)).unwrap();
        for (a, b) in t1.cases().iter().zip(t2.cases()) {
            assert_eq!(a.observation().coords(), b.observation().coords());
            for (ca, cb) in a.components().iter().zip(b.components()) {
                for (x, y) in ca.atoms().iter().zip(cb.atoms()) {
                    assert_eq!(x.coords()[0].to_bits(), y.coords()[0].to_bits());
                }
            }
        }
        assert_eq!(s1.len(), s2.len());
        // Different seed → different data.
        let (t3, _) = generate_scenario(&tiny_scenario(8)).unwrap();
        assert_ne!(
            t1.cases()[0].observation().coords()[0],
            t3.cases()[0].observation().coords()[0]
        );
    }

    #[test]
    fn generator_moments_match_documented_process() {
        let config = ScenarioConfig {
            n_train: 5000,
            n_test: 1,
            dim: 1,
            seed: 123,
            models: vec![ModelScenario::new("m", 1, 1.0, 2.0)],
            squared_transform: false,
        };
        let (train, _) = generate_scenario(&config).unwrap();
        let diffs: Vec<f64> = train
            .cases()
            .iter()
            .map(|c| c.components()[0].atoms()[0].value() - c.observation().value())
            .collect();
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
        let sd = var.sqrt();
        // diff = b + s·η − ε: mean b = 1, sd √(s² + 1) = √5.
        let se = (5.0f64 / n).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * se, "mean {mean}");
        assert!((sd - 5.0f64.sqrt()).abs() < 0.05 * 5.0f64.sqrt(), "sd {sd}");
    }

    #[test]
    fn squared_transform_makes_values_positive() {
        let mut config = tiny_scenario(3);
        config.squared_transform = true;
        let (train, _) = generate_scenario(&config).unwrap();
        for case in train.cases() {
            assert!(case.observation().value() >= 0.0);
            for comp in case.components() {
                assert!(comp.atoms().iter().all(|a| a.value() >= 0.0));
            }
        }
    }

    #[test]
    fn panel_round_trip() {
        let dir = tempdir().unwrap();
        let fpath = dir.path().join("forecasts.csv");
        let opath = dir.path().join("obs.csv");
        let (train, _) = generate_scenario(&tiny_scenario(11)).unwrap();
        save_panel(&train, &fpath, &opath).unwrap();
        let loaded = load_panel(&fpath, &opath).unwrap();
        assert_eq!(loaded.len(), train.len());
        assert_eq!(loaded.model_ids(), train.model_ids());
        assert_eq!(loaded.member_counts(), train.member_counts());
        for (a, b) in loaded.cases().iter().zip(train.cases()) {
            assert_eq!(a.alpha().to_bits(), b.alpha().to_bits());
            assert_eq!(
                a.observation().coords()[0].to_bits(),
                b.observation().coords()[0].to_bits()
            );
            for (ca, cb) in a.components().iter().zip(b.components()) {
                for (x, y) in ca.atoms().iter().zip(cb.atoms()) {
                    assert_eq!(x.coords()[0].to_bits(), y.coords()[0].to_bits());
                }
            }
        }
        assert_eq!(loaded.meta(), train.meta());
    }

    #[test]
    fn minimal_panel_loads() {
        let dir = tempdir().unwrap();
        let fpath = dir.path().join("f.csv");
        let opath = dir.path().join("o.csv");
        std::fs::write(
            &fpath,
            "case_id,model_id,member_id,dim_index,value\nc1,m1,0,0,1.5\n",
        )
        .unwrap();
        std::fs::write(&opath, "case_id,dim_index,value\nc1,0,2.0\n").unwrap();
        let panel = load_panel(&fpath, &opath).unwrap();
        assert_eq!(panel.len(), 1);
        assert_eq!(panel.num_models(), 1);
        assert_eq!(panel.member_counts(), &[1]);
        assert_eq!(panel.cases()[0].alpha(), 1.0);
    }

    #[test]
    fn missing_member_row_names_case_and_model() {
        let dir = tempdir().unwrap();
        let fpath = dir.path().join("f.csv");
        let opath = dir.path().join("o.csv");
        std::fs::write(
            &fpath,
            "case_id,model_id,member_id,dim_index,value\n\
             c1,m1,0,0,1.0\nc1,m1,1,0,2.0\nc2,m1,0,0,3.0\n",
        )
        .unwrap();
        std::fs::write(&opath, "case_id,dim_index,value\nc1,0,0.0\nc2,0,0.0\n").unwrap();
        match load_panel(&fpath, &opath) {
            Err(Error::PanelStructure {
                case_id, model_id, ..
            }) => {
                assert_eq!(case_id, "c2");
                assert_eq!(model_id, "m1");
            }
            other => panic!("expected structure error, got {other:?}"),
        }
    }

    #[test]
    fn non_numeric_value_names_row() {
        let dir = tempdir().unwrap();
        let fpath = dir.path().join("f.csv");
        let opath = dir.path().join("o.csv");
        std::fs::write(
            &fpath,
            "case_id,model_id,member_id,dim_index,value\nc1,m1,0,0,abc\n",
        )
        .unwrap();
        std::fs::write(&opath, "case_id,dim_index,value\nc1,0,0.0\n").unwrap();
        match load_panel(&fpath, &opath) {
            Err(Error::FileFormat { row, .. }) => assert_eq!(row, 2),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn alpha_column_is_used() {
        let dir = tempdir().unwrap();
        let fpath = dir.path().join("f.csv");
        let opath = dir.path().join("o.csv");
        std::fs::write(
            &fpath,
            "case_id,model_id,member_id,dim_index,value,alpha\nc1,m1,0,0,1.0,0.25\n",
        )
        .unwrap();
        std::fs::write(&opath, "case_id,dim_index,value\nc1,0,0.0\n").unwrap();
        let panel = load_panel(&fpath, &opath).unwrap();
        assert_eq!(panel.cases()[0].alpha(), 0.25);
    }

    #[test]
    fn model_file_round_trip() {
        let model = FittedModel {
            strategy: Strategy::DiscreteLp,
            kernel: KernelSpec::Energy,
            dim: 1,
            model_ids: vec!["m1".into(), "m2".into()],
            member_counts: vec![1, 1],
            group_by: "pooled".into(),
            groups: vec![GroupFit {
                label: "all".into(),
                solution: Solution {
                    weights: WeightVector::new(vec![0.5, 0.5], IndexSpace::PerModel(2)).unwrap(),
                    objective: -0.5,
                    iterations: 17,
                    kkt_residual: 3.25e-9,
                    converged: true,
                },
                mbm: Some(vec![
                    MbmParams::new(0.1, 1.01, 0.9, 0.0).unwrap(),
                    MbmParams::new(-0.2, 0.97, 1.1, 0.3).unwrap(),
                ]),
            }],
        };
        let mut buf = Vec::new();
        write_model(&mut buf, &model).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let loaded = read_model(&text, "mem").unwrap();
        assert_eq!(loaded, model);
    }

    #[test]
    fn model_file_full_precision_round_trip() {
        let w = vec![1.0 / 3.0, 2.0 / 3.0 - 1e-16, 1e-16];
        let model = FittedModel {
            strategy: Strategy::PointLp,
            kernel: KernelSpec::gaussian(0.1 + 0.2).unwrap(),
            dim: 2,
            model_ids: vec!["a".into()],
            member_counts: vec![3],
            group_by: "pooled".into(),
            groups: vec![GroupFit {
                label: "all".into(),
                solution: Solution {
                    weights: WeightVector::new(w.clone(), IndexSpace::PerMember(3)).unwrap(),
                    objective: std::f64::consts::PI,
                    iterations: 0,
                    kkt_residual: f64::MIN_POSITIVE,
                    converged: false,
                },
                mbm: None,
            }],
        };
        let mut buf = Vec::new();
        write_model(&mut buf, &model).unwrap();
        let loaded = read_model(&String::from_utf8(buf).unwrap(), "mem").unwrap();
        for (a, b) in loaded.groups[0].solution.weights.weights().iter().zip(&w) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(loaded, model);
    }

    #[test]
    fn corrupted_header_and_version_mismatch() {
        assert!(matches!(
            read_model("format_version = 2\n", "mem"),
            Err(Error::VersionMismatch(_))
        ));
        assert!(matches!(
            read_model("strategy = equal\n", "mem"),
            Err(Error::FileFormat { .. })
        ));
    }
}
