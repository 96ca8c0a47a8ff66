//! Command-line front end: `simulate`, `fit`, `combine`, `recalibrate`,
//! `evaluate`, `report`.
//!
//! Settings resolve in three layers: built-in defaults, then an INI-style
//! `key = value` config file (`--config`), then command-line flags. Three
//! scenario presets ship with the binary (`calibrated`,
//! `biased-underdispersed`, `postprocessed`) and can be used wherever a
//! config file can.

use crate::data::{
    generate_scenario, load_model, load_panel, parse_kv, save_model, save_panel, FittedModel,
    GroupFit, ModelScenario, ScenarioConfig,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    ks_statistic_uniform, member_mse, pit, pit_histogram, score_by_group, skill,
    write_pit_histograms, write_score_reports, GroupKey, PitValue, ScoreKind, ScoreReport,
};
use crate::kernels::{DiscreteDistribution, KernelConfig};
use crate::pooling::{combine, model_contributions, IndexSpace, Panel, Strategy, WeightVector};
use crate::qp::{fit_traced, SolverConfig};
use crate::recalibration::{mbm_apply_panel, mbm_fit_panel};
use crate::scoring::AlphaWeights;
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

const PRESETS: &[(&str, &str)] = &[
    ("calibrated", include_str!("../presets/calibrated.ini")),
    (
        "biased-underdispersed",
        include_str!("../presets/biased-underdispersed.ini"),
    ),
    (
        "postprocessed",
        include_str!("../presets/postprocessed.ini"),
    ),
];

#[derive(Parser, Debug)]
#[command(
    name = "kpool",
    about = "Optimal combination of discrete probabilistic forecasts via kernel scores",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,

    /// INI-style config file; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed for all randomness; recorded in every report.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Kernel: `energy` | `gaussian:<sigma>` | `gaussian:median` |
    /// `chained:threshold=<t>:<inner>`.
    #[arg(long, global = true)]
    kernel: Option<String>,

    /// Strategy: equal | lp-discrete | lp-point | lp-ordered.
    #[arg(long, global = true)]
    strategy: Option<String>,

    /// Training-case decay in (0, 1]; case i of n gets alpha λ^(n−i).
    #[arg(long, global = true)]
    lambda: Option<f64>,

    /// Comma-separated grouping keys (lead_time, location, date) for
    /// separate per-group fits; omit for one pooled fit.
    #[arg(long, global = true)]
    group_by: Option<String>,

    /// Print solver diagnostics.
    #[arg(long, global = true)]
    verbose: bool,

    /// Worker threads for parallel sections (0 = library default).
    /// Outputs are identical for any value.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Solver KKT tolerance.
    #[arg(long, global = true)]
    kkt_tol: Option<f64>,

    /// Solver iteration cap.
    #[arg(long, global = true)]
    max_iter: Option<usize>,

    /// Solver ridge regularisation.
    #[arg(long, global = true)]
    ridge: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic train/test panels from a scenario config or a
    /// named preset.
    Simulate(SimulateArgs),
    /// Estimate pooling weights on a training panel.
    Fit(FitArgs),
    /// Apply a fitted model to a panel, writing the pooled distributions.
    Combine(CombineArgs),
    /// Fit and apply member-by-member recalibration to a panel.
    Recalibrate(RecalibrateArgs),
    /// Score a fitted model on a test panel and write report CSVs.
    Evaluate(EvaluateArgs),
    /// Fit and evaluate in one run, optionally for all strategies.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Named preset: calibrated | biased-underdispersed | postprocessed.
    #[arg(long)]
    preset: Option<String>,
    /// Output directory for the four panel CSVs.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    train_forecasts: PathBuf,
    #[arg(long)]
    train_obs: PathBuf,
    /// Fitted-model output file.
    #[arg(long)]
    model_out: PathBuf,
    /// Weight report CSV (model/member/order-statistic weights).
    #[arg(long)]
    weights_report: Option<PathBuf>,
    /// Recalibrate components member-by-member before fitting weights.
    #[arg(long)]
    mbm: bool,
}

#[derive(Args, Debug)]
struct CombineArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    forecasts: PathBuf,
    #[arg(long)]
    obs: PathBuf,
    /// Combined-distribution CSV output.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RecalibrateArgs {
    #[arg(long)]
    forecasts: PathBuf,
    #[arg(long)]
    obs: PathBuf,
    /// Output directory for recalibrated forecasts and parameter CSV.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    test_forecasts: PathBuf,
    #[arg(long)]
    test_obs: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    train_forecasts: PathBuf,
    #[arg(long)]
    train_obs: PathBuf,
    #[arg(long)]
    test_forecasts: PathBuf,
    #[arg(long)]
    test_obs: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Fit and evaluate all four strategies, not just the configured one.
    #[arg(long)]
    all_strategies: bool,
    /// Recalibrate components member-by-member before fitting weights.
    #[arg(long)]
    mbm: bool,
}

/// Fully resolved run settings after merging defaults, config file, flags.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub kernel: KernelConfig<f64>,
    pub strategy: Strategy,
    pub lambda: f64,
    pub group_keys: Vec<GroupKey>,
    pub solver: SolverConfig<f64>,
    pub verbose: bool,
    pub scenario: Option<ScenarioConfig>,
}

fn parse_group_keys(text: &str) -> Result<Vec<GroupKey>> {
    let t = text.trim();
    if t.is_empty() || t == "pooled" || t == "all" {
        return Ok(Vec::new());
    }
    t.split(',').map(|k| GroupKey::parse(k.trim())).collect()
}

fn group_keys_label(keys: &[GroupKey]) -> String {
    if keys.is_empty() {
        return "pooled".to_string();
    }
    keys.iter()
        .map(|k| match k {
            GroupKey::All => "pooled",
            GroupKey::LeadTime => "lead_time",
            GroupKey::Location => "location",
            GroupKey::Date => "date",
        })
        .collect::<Vec<_>>()
        .join(",")
}

struct FileConfig {
    map: BTreeMap<String, String>,
}

impl FileConfig {
    fn parse(text: &str, path: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (row, key, value) in parse_kv(text) {
            if map.insert(key.clone(), value).is_some() {
                return Err(Error::FileFormat {
                    path: path.to_string(),
                    row,
                    reason: format!("duplicate key `{key}`"),
                });
            }
        }
        Ok(FileConfig { map })
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    fn get_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::Config(format!("config key `{key}` has invalid value `{v}`"))),
        }
    }

    fn scenario(&self, seed: u64) -> Result<Option<ScenarioConfig>> {
        let mut models: BTreeMap<String, ModelScenario> = BTreeMap::new();
        for (key, value) in &self.map {
            let Some(rest) = key.strip_prefix("model.") else {
                continue;
            };
            let Some((id, field)) = rest.rsplit_once('.') else {
                return Err(Error::Config(format!(
                    "model key `{key}` must look like model.<id>.<field>"
                )));
            };
            let entry = models
                .entry(id.to_string())
                .or_insert_with(|| ModelScenario::new(id, 0, 0.0, 1.0));
            let parse_field = |name: &str| -> Result<f64> {
                value.parse::<f64>().map_err(|_| {
                    Error::Config(format!(
                        "config key `{key}` ({name}) has invalid value `{value}`"
                    ))
                })
            };
            match field {
                "members" => {
                    entry.members = value.parse::<usize>().map_err(|_| {
                        Error::Config(format!("config key `{key}` has invalid value `{value}`"))
                    })?
                }
                "bias" => entry.bias = parse_field("bias")?,
                "dispersion" => entry.dispersion = parse_field("dispersion")?,
                "info_weight" => entry.info_weight = parse_field("info_weight")?,
                "bias_ramp" => entry.bias_ramp = parse_field("bias_ramp")?,
                "control_scale" => entry.control_scale = parse_field("control_scale")?,
                "control_bias" => entry.control_bias = parse_field("control_bias")?,
                other => {
                    return Err(Error::Config(format!(
                        "unknown model field `{other}` in `{key}`"
                    )))
                }
            }
        }
        if models.is_empty() {
            return Ok(None);
        }
        let config = ScenarioConfig {
            n_train: self
                .get_parsed("n_train")?
                .ok_or_else(|| Error::Config("scenario config needs n_train".into()))?,
            n_test: self
                .get_parsed("n_test")?
                .ok_or_else(|| Error::Config("scenario config needs n_test".into()))?,
            dim: self.get_parsed("dim")?.unwrap_or(1),
            seed,
            models: models.into_values().collect(),
            squared_transform: self.get_parsed("squared_transform")?.unwrap_or(false),
        };
        config.validate()?;
        Ok(Some(config))
    }
}

impl Cli {
    fn resolve(&self, preset: Option<&str>) -> Result<RunConfig> {
        let file_text = match (&self.config, preset) {
            (Some(path), _) => Some((std::fs::read_to_string(path)?, path.display().to_string())),
            (None, Some(name)) => {
                let text = PRESETS
                    .iter()
                    .find(|(n, _)| *n == name)
                    .map(|(_, t)| t.to_string())
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "unknown preset `{name}` (expected calibrated, biased-underdispersed, postprocessed)"
                        ))
                    })?;
                Some((text, format!("preset:{name}")))
            }
            (None, None) => None,
        };
        let file = match &file_text {
            Some((text, path)) => FileConfig::parse(text, path)?,
            None => FileConfig {
                map: BTreeMap::new(),
            },
        };

        let seed = self.seed.or(file.get_parsed("seed")?).unwrap_or(42);
        let kernel_text = self
            .kernel
            .clone()
            .or_else(|| file.get("kernel").map(str::to_string))
            .unwrap_or_else(|| "energy".to_string());
        let kernel = KernelConfig::parse(&kernel_text)?;
        let strategy_text = self
            .strategy
            .clone()
            .or_else(|| file.get("strategy").map(str::to_string))
            .unwrap_or_else(|| "lp-discrete".to_string());
        let strategy = Strategy::parse(&strategy_text)?;
        let lambda = self.lambda.or(file.get_parsed("lambda")?).unwrap_or(1.0);
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(Error::Config(format!(
                "lambda must lie in (0, 1], got {lambda}"
            )));
        }
        let group_text = self
            .group_by
            .clone()
            .or_else(|| file.get("group_by").map(str::to_string))
            .unwrap_or_default();
        let group_keys = parse_group_keys(&group_text)?;
        let mut solver = SolverConfig::default();
        if let Some(t) = self.kkt_tol.or(file.get_parsed("kkt_tol")?) {
            solver.kkt_tol = t;
        }
        if let Some(m) = self.max_iter.or(file.get_parsed("max_iter")?) {
            solver.max_iter = m;
        }
        if let Some(r) = self.ridge.or(file.get_parsed("ridge")?) {
            solver.ridge = r;
        }
        solver.validate()?;
        let scenario = file.scenario(seed)?;
        Ok(RunConfig {
            seed,
            kernel,
            strategy,
            lambda,
            group_keys,
            solver,
            verbose: self.verbose,
            scenario,
        })
    }
}

fn composite_label(panel: &Panel<f64>, case: usize, keys: &[GroupKey]) -> Result<String> {
    if keys.is_empty() {
        return Ok("all".to_string());
    }
    let parts: Vec<String> = keys
        .iter()
        .map(|k| k.label(panel, case))
        .collect::<Result<_>>()?;
    Ok(parts.join("|"))
}

fn group_indices(panel: &Panel<f64>, keys: &[GroupKey]) -> Result<BTreeMap<String, Vec<usize>>> {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for i in 0..panel.len() {
        groups
            .entry(composite_label(panel, i, keys)?)
            .or_default()
            .push(i);
    }
    Ok(groups)
}

type PreparedGroup = (
    String,
    Panel<f64>,
    Option<Vec<crate::recalibration::MbmParams<f64>>>,
);

/// Fit one model over a panel: optional member-by-member recalibration,
/// kernel resolution, then per-group weight estimation (groups fitted in
/// parallel, assembled in label order).
pub fn fit_model(panel: &Panel<f64>, config: &RunConfig, with_mbm: bool) -> Result<FittedModel> {
    let groups = group_indices(panel, &config.group_keys)?;
    let prepared: Vec<PreparedGroup> = groups
        .iter()
        .map(|(label, idx)| {
            let sub = panel.subset(idx)?;
            if with_mbm {
                let params = mbm_fit_panel(&sub)?;
                let post = mbm_apply_panel(&sub, &params)?;
                Ok((label.clone(), post, Some(params)))
            } else {
                Ok((label.clone(), sub, None))
            }
        })
        .collect::<Result<Vec<_>>>()?;

    // One kernel for the whole model; the median heuristic sees every
    // (recalibrated) group's sample.
    let sample: Vec<_> = prepared
        .iter()
        .flat_map(|(_, p, _)| p.sample_points())
        .collect();
    let kernel = config.kernel.resolve(&sample)?;

    type FitResult = (String, GroupFit, Vec<(usize, f64)>);
    let fits: Vec<FitResult> = prepared
        .par_iter()
        .map(|(label, sub, mbm)| {
            let alphas = sub
                .alphas()?
                .scaled_by(&AlphaWeights::decay(sub.len(), config.lambda)?)?;
            let (solution, trace) =
                fit_traced(&kernel, sub, config.strategy, &alphas, &config.solver)?;
            Ok((
                label.clone(),
                GroupFit {
                    label: label.clone(),
                    solution,
                    mbm: mbm.clone(),
                },
                trace,
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    if config.verbose {
        for (label, fit, trace) in &fits {
            eprintln!("solver.group = {label}");
            eprintln!("solver.iterations = {}", fit.solution.iterations);
            eprintln!("solver.kkt_residual = {}", fit.solution.kkt_residual);
            eprintln!("solver.objective = {}", fit.solution.objective);
            eprintln!("solver.converged = {}", fit.solution.converged);
            let line = trace
                .iter()
                .map(|(it, obj)| format!("{it}:{obj}"))
                .collect::<Vec<_>>()
                .join(";");
            eprintln!("solver.objective_trace = {line}");
        }
    }
    for (label, fit, _) in &fits {
        if !fit.solution.converged {
            return Err(Error::NonConvergence(format!(
                "group `{label}`: {} iterations, kkt residual {}",
                fit.solution.iterations, fit.solution.kkt_residual
            )));
        }
    }

    Ok(FittedModel {
        strategy: config.strategy,
        kernel,
        dim: panel.dim(),
        model_ids: panel.model_ids().to_vec(),
        member_counts: panel.member_counts().to_vec(),
        group_by: group_keys_label(&config.group_keys),
        groups: fits.into_iter().map(|(_, g, _)| g).collect(),
    })
}

fn check_structure(model: &FittedModel, panel: &Panel<f64>) -> Result<()> {
    if model.model_ids != panel.model_ids()
        || model.member_counts != panel.member_counts()
        || model.dim != panel.dim()
    {
        return Err(Error::Config(format!(
            "model/panel structure mismatch: model has {:?}×{:?} d={}, panel has {:?}×{:?} d={}",
            model.model_ids,
            model.member_counts,
            model.dim,
            panel.model_ids(),
            panel.member_counts(),
            panel.dim()
        )));
    }
    Ok(())
}

/// Apply a fitted model to every case of a structurally compatible panel.
pub fn combine_panel(
    model: &FittedModel,
    panel: &Panel<f64>,
) -> Result<Vec<DiscreteDistribution<f64>>> {
    check_structure(model, panel)?;
    let keys = parse_group_keys(&model.group_by)?;
    (0..panel.len())
        .map(|i| {
            let label = composite_label(panel, i, &keys)?;
            let group = model.group(&label).ok_or_else(|| {
                Error::Config(format!(
                    "case `{}` falls in group `{label}` which the model was not fitted for",
                    panel.meta()[i].case_id
                ))
            })?;
            let case = match &group.mbm {
                Some(params) => {
                    let sub = panel.subset(&[i])?;
                    mbm_apply_panel(&sub, params)?.cases()[0].clone()
                }
                None => panel.cases()[i].clone(),
            };
            combine(&case, model.strategy, &group.solution.weights)
        })
        .collect()
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path)?;
    Ok(())
}

fn cmd_simulate(cli: &Cli, args: &SimulateArgs) -> Result<()> {
    let config = cli.resolve(args.preset.as_deref())?;
    let scenario = config.scenario.clone().ok_or_else(|| {
        Error::Config(
            "simulate needs a scenario: pass --preset or a config file with model.* keys".into(),
        )
    })?;
    let (train, test) = generate_scenario(&scenario)?;
    create_dir(&args.out_dir)?;
    save_panel(
        &train,
        &args.out_dir.join("train_forecasts.csv"),
        &args.out_dir.join("train_observations.csv"),
    )?;
    save_panel(
        &test,
        &args.out_dir.join("test_forecasts.csv"),
        &args.out_dir.join("test_observations.csv"),
    )?;
    println!("scenario.seed = {}", scenario.seed);
    println!("scenario.dim = {}", scenario.dim);
    println!("scenario.n_train = {}", scenario.n_train);
    println!("scenario.n_test = {}", scenario.n_test);
    for m in &scenario.models {
        println!(
            "scenario.model.{} = members {} bias {} dispersion {} info_weight {} bias_ramp {} control_scale {} control_bias {}",
            m.id, m.members, m.bias, m.dispersion, m.info_weight, m.bias_ramp, m.control_scale, m.control_bias
        );
    }
    println!("wrote {}", args.out_dir.display());
    Ok(())
}

fn write_weight_report(path: &Path, model: &FittedModel, seed: u64) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "group,scope,model,index,weight,seed")?;
    for g in &model.groups {
        let contrib = model_contributions(&g.solution.weights, &model.member_counts)?;
        for (model_id, w) in model.model_ids.iter().zip(&contrib) {
            writeln!(out, "{},model,{},0,{},{}", g.label, model_id, w, seed)?;
        }
        if let IndexSpace::PerMember(_) = g.solution.weights.index_space() {
            let scope = match model.strategy {
                Strategy::OrderedLp => "order_stat",
                _ => "member",
            };
            let mut offset = 0;
            for (model_id, &mj) in model.model_ids.iter().zip(&model.member_counts) {
                for m in 0..mj {
                    writeln!(
                        out,
                        "{},{},{},{},{},{}",
                        g.label,
                        scope,
                        model_id,
                        m,
                        g.solution.weights.weights()[offset + m],
                        seed
                    )?;
                }
                offset += mj;
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn cmd_fit(cli: &Cli, args: &FitArgs) -> Result<()> {
    let config = cli.resolve(None)?;
    let panel = load_panel(&args.train_forecasts, &args.train_obs)?;
    let model = fit_model(&panel, &config, args.mbm)?;
    save_model(&model, &args.model_out)?;
    if let Some(report) = &args.weights_report {
        write_weight_report(report, &model, config.seed)?;
    }
    println!(
        "fitted {} groups, wrote {}",
        model.groups.len(),
        args.model_out.display()
    );
    Ok(())
}

fn cmd_combine(cli: &Cli, args: &CombineArgs) -> Result<()> {
    let _ = cli.resolve(None)?;
    let model = load_model(&args.model)?;
    let panel = load_panel(&args.forecasts, &args.obs)?;
    let combined = combine_panel(&model, &panel)?;
    let mut out = std::io::BufWriter::new(std::fs::File::create(&args.out)?);
    writeln!(out, "case_id,atom_index,dim_index,value,weight")?;
    for (meta, dist) in panel.meta().iter().zip(&combined) {
        for (ai, (atom, w)) in dist.atoms().iter().zip(dist.weights()).enumerate() {
            for (l, v) in atom.coords().iter().enumerate() {
                writeln!(out, "{},{},{},{},{}", meta.case_id, ai, l, v, w)?;
            }
        }
    }
    out.flush()?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_recalibrate(cli: &Cli, args: &RecalibrateArgs) -> Result<()> {
    let config = cli.resolve(None)?;
    let panel = load_panel(&args.forecasts, &args.obs)?;
    let groups = group_indices(&panel, &config.group_keys)?;
    create_dir(&args.out_dir)?;

    let mut params_out =
        std::io::BufWriter::new(std::fs::File::create(args.out_dir.join("mbm_params.csv"))?);
    writeln!(params_out, "group,model,a,b,c,d,seed")?;
    let mut recalibrated: Vec<(usize, crate::pooling::ForecastCase<f64>)> = Vec::new();
    for (label, idx) in &groups {
        let sub = panel.subset(idx)?;
        let params = mbm_fit_panel(&sub)?;
        for (model_id, p) in panel.model_ids().iter().zip(&params) {
            writeln!(
                params_out,
                "{},{},{},{},{},{},{}",
                label, model_id, p.a, p.b, p.c, p.d, config.seed
            )?;
        }
        let post = mbm_apply_panel(&sub, &params)?;
        for (pos, case) in idx.iter().zip(post.cases()) {
            recalibrated.push((*pos, case.clone()));
        }
    }
    params_out.flush()?;
    recalibrated.sort_by_key(|(pos, _)| *pos);
    let cases: Vec<_> = recalibrated.into_iter().map(|(_, c)| c).collect();
    let post_panel = Panel::new(cases, panel.model_ids().to_vec(), panel.meta().to_vec())?;
    save_panel(
        &post_panel,
        &args.out_dir.join("recalibrated_forecasts.csv"),
        &args.out_dir.join("recalibrated_observations.csv"),
    )?;
    println!("wrote {}", args.out_dir.display());
    Ok(())
}

/// Evaluation artifacts for one fitted model on one test panel.
fn evaluate_model(
    model: &FittedModel,
    panel: &Panel<f64>,
    group_key: GroupKey,
    seed: u64,
) -> Result<EvalArtifacts> {
    let combined = combine_panel(model, panel)?;
    let score_kind = if panel.dim() == 1 {
        ScoreKind::Crps
    } else {
        ScoreKind::Energy
    };

    // Reference and raw-component methods for context.
    let equal_w = WeightVector::uniform(IndexSpace::PerModel(panel.num_models()));
    let equal_pool: Vec<DiscreteDistribution<f64>> = panel
        .cases()
        .iter()
        .map(|c| combine(c, Strategy::EqualLp, &equal_w))
        .collect::<Result<_>>()?;

    let mut scores = Vec::new();
    for (j, model_id) in panel.model_ids().iter().enumerate() {
        let outputs: Vec<DiscreteDistribution<f64>> = panel
            .cases()
            .iter()
            .map(|c| c.components()[j].clone())
            .collect();
        scores.extend(score_by_group(
            panel, &outputs, model_id, score_kind, group_key,
        )?);
    }
    scores.extend(score_by_group(
        panel,
        &equal_pool,
        "equal",
        score_kind,
        group_key,
    )?);
    let method = model.strategy.name();
    let method_scores = score_by_group(panel, &combined, method, score_kind, group_key)?;
    scores.extend(method_scores.clone());

    // Skill of the fitted method against the equal-weight reference.
    let equal_scores = score_by_group(panel, &equal_pool, "equal", score_kind, group_key)?;
    let mut skills = Vec::new();
    for (m, e) in method_scores.iter().zip(&equal_scores) {
        skills.push(ScoreReport {
            method: method.to_string(),
            group: m.group.clone(),
            value: skill(m.value, e.value)?,
            n: m.n,
        });
    }

    // PIT histograms (univariate panels only).
    let mut pits_method = Vec::new();
    let mut pits_equal = Vec::new();
    if panel.dim() == 1 {
        for (i, case) in panel.cases().iter().enumerate() {
            let y = case.observation().value();
            pits_method.push(pit(&combined[i], y, seed, i as u64)?);
            pits_equal.push(pit(&equal_pool[i], y, seed, i as u64)?);
        }
    }

    let mse = member_mse(panel);
    Ok(EvalArtifacts {
        scores,
        skills,
        pits_method,
        pits_equal,
        mse,
        combined,
    })
}

struct EvalArtifacts {
    scores: Vec<ScoreReport>,
    skills: Vec<ScoreReport>,
    pits_method: Vec<PitValue<f64>>,
    pits_equal: Vec<PitValue<f64>>,
    mse: Vec<Vec<f64>>,
    #[allow(dead_code)]
    combined: Vec<DiscreteDistribution<f64>>,
}

fn member_weight_rows(model: &FittedModel, group: &GroupFit) -> Vec<(String, usize, f64)> {
    let w = &group.solution.weights;
    let mut rows = Vec::new();
    match w.index_space() {
        IndexSpace::PerModel(_) => {
            for ((model_id, &mj), &wj) in model
                .model_ids
                .iter()
                .zip(&model.member_counts)
                .zip(w.weights())
            {
                for m in 0..mj {
                    rows.push((model_id.clone(), m, wj / mj as f64));
                }
            }
        }
        IndexSpace::PerMember(_) => {
            let mut offset = 0;
            for (model_id, &mj) in model.model_ids.iter().zip(&model.member_counts) {
                for m in 0..mj {
                    rows.push((model_id.clone(), m, w.weights()[offset + m]));
                }
                offset += mj;
            }
        }
    }
    rows
}

fn write_evaluation(
    out_dir: &Path,
    model: &FittedModel,
    panel: &Panel<f64>,
    artifacts: &EvalArtifacts,
    seed: u64,
    suffix: &str,
) -> Result<()> {
    create_dir(out_dir)?;
    let file = |name: &str| -> PathBuf { out_dir.join(format!("{name}{suffix}.csv")) };

    let mut f = std::io::BufWriter::new(std::fs::File::create(file("scores"))?);
    write_score_reports(&mut f, &artifacts.scores, seed)?;
    f.flush()?;

    let mut f = std::io::BufWriter::new(std::fs::File::create(file("skill"))?);
    write_score_reports(&mut f, &artifacts.skills, seed)?;
    f.flush()?;

    if !artifacts.pits_method.is_empty() {
        let mut f = std::io::BufWriter::new(std::fs::File::create(file("pit_histogram"))?);
        let blocks = vec![
            (
                model.strategy.name(),
                pit_histogram(&artifacts.pits_method, 10)?,
            ),
            ("equal", pit_histogram(&artifacts.pits_equal, 10)?),
        ];
        write_pit_histograms(&mut f, &blocks, seed)?;
        f.flush()?;

        let mut f = std::io::BufWriter::new(std::fs::File::create(file("pit_ks"))?);
        writeln!(f, "method,ks,n,seed")?;
        writeln!(
            f,
            "{},{},{},{}",
            model.strategy.name(),
            ks_statistic_uniform(&artifacts.pits_method)?,
            artifacts.pits_method.len(),
            seed
        )?;
        writeln!(
            f,
            "equal,{},{},{}",
            ks_statistic_uniform(&artifacts.pits_equal)?,
            artifacts.pits_equal.len(),
            seed
        )?;
        f.flush()?;
    }

    let mut f = std::io::BufWriter::new(std::fs::File::create(file("member_mse_weights"))?);
    writeln!(f, "group,model,member,mse,weight,seed")?;
    for g in &model.groups {
        let rows = member_weight_rows(model, g);
        let mut by_model: BTreeMap<&str, Vec<(usize, f64)>> = BTreeMap::new();
        for (mid, m, w) in &rows {
            by_model.entry(mid.as_str()).or_default().push((*m, *w));
        }
        for (j, model_id) in panel.model_ids().iter().enumerate() {
            if let Some(entries) = by_model.get(model_id.as_str()) {
                for (m, w) in entries {
                    writeln!(
                        f,
                        "{},{},{},{},{},{}",
                        g.label, model_id, m, artifacts.mse[j][*m], w, seed
                    )?;
                }
            }
        }
    }
    f.flush()?;
    Ok(())
}

fn cmd_evaluate(cli: &Cli, args: &EvaluateArgs) -> Result<()> {
    let config = cli.resolve(None)?;
    let model = load_model(&args.model)?;
    let panel = load_panel(&args.test_forecasts, &args.test_obs)?;
    let group_key = config.group_keys.first().copied().unwrap_or(GroupKey::All);
    let artifacts = evaluate_model(&model, &panel, group_key, config.seed)?;
    write_evaluation(&args.out_dir, &model, &panel, &artifacts, config.seed, "")?;
    println!("wrote {}", args.out_dir.display());
    Ok(())
}

fn cmd_report(cli: &Cli, args: &ReportArgs) -> Result<()> {
    let config = cli.resolve(None)?;
    let train = load_panel(&args.train_forecasts, &args.train_obs)?;
    let test = load_panel(&args.test_forecasts, &args.test_obs)?;
    create_dir(&args.out_dir)?;
    let strategies: Vec<Strategy> = if args.all_strategies {
        Strategy::all()
            .into_iter()
            .filter(|s| *s != Strategy::OrderedLp || train.dim() == 1)
            .collect()
    } else {
        vec![config.strategy]
    };
    let group_key = config.group_keys.first().copied().unwrap_or(GroupKey::All);
    for strategy in strategies {
        let mut cfg = config.clone();
        cfg.strategy = strategy;
        let model = fit_model(&train, &cfg, args.mbm)?;
        save_model(
            &model,
            &args.out_dir.join(format!("model_{}.txt", strategy.name())),
        )?;
        write_weight_report(
            &args
                .out_dir
                .join(format!("weights_{}.csv", strategy.name())),
            &model,
            cfg.seed,
        )?;
        let artifacts = evaluate_model(&model, &test, group_key, cfg.seed)?;
        write_evaluation(
            &args.out_dir,
            &model,
            &test,
            &artifacts,
            cfg.seed,
            &format!("_{}", strategy.name()),
        )?;
    }
    println!("wrote {}", args.out_dir.display());
    Ok(())
}

/// Parse arguments and dispatch; returns the process exit code.
pub fn run_from<I, T>(argv: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::parse_from(argv);
    let body = || -> Result<()> {
        match &cli.command {
            Command::Simulate(args) => cmd_simulate(&cli, args),
            Command::Fit(args) => cmd_fit(&cli, args),
            Command::Combine(args) => cmd_combine(&cli, args),
            Command::Recalibrate(args) => cmd_recalibrate(&cli, args),
            Command::Evaluate(args) => cmd_evaluate(&cli, args),
            Command::Report(args) => cmd_report(&cli, args),
        }
    };
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(body)
    } else {
        body()
    }
}

pub fn run() -> Result<()> {
    run_from(std::env::args_os())
}

/// The presets shipped with the binary, as `(name, ini text)` pairs.
pub fn presets() -> &'static [(&'static str, &'static str)] {
    PRESETS
}

/// The scenario described by a named preset, re-seeded with `seed`.
pub fn preset_scenario(name: &str, seed: u64) -> Result<ScenarioConfig> {
    let text = PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| Error::Config(format!("unknown preset `{name}`")))?;
    let file = FileConfig::parse(text, name)?;
    file.scenario(seed)?
        .ok_or_else(|| Error::Config(format!("preset `{name}` lacks scenario keys")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_into_valid_scenarios() {
        for (name, text) in PRESETS {
            let file = FileConfig::parse(text, name).unwrap();
            let scenario = file.scenario(7).unwrap().unwrap_or_else(|| {
                panic!("preset {name} has no scenario");
            });
            assert_eq!(scenario.models.len(), 3, "{name}");
            assert_eq!(
                scenario
                    .models
                    .iter()
                    .map(|m| m.members)
                    .collect::<Vec<_>>(),
                vec![11, 21, 51],
                "{name}"
            );
        }
    }

    #[test]
    fn group_key_parsing() {
        assert!(parse_group_keys("").unwrap().is_empty());
        assert!(parse_group_keys("pooled").unwrap().is_empty());
        assert_eq!(
            parse_group_keys("lead_time,location").unwrap(),
            vec![GroupKey::LeadTime, GroupKey::Location]
        );
        assert!(parse_group_keys("altitude").is_err());
    }
}
