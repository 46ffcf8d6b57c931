//! Batch entry points: estimation on user data, simulation studies,
//! cross-validation, rate feasibility reports, and bootstrap inference.
//! Configuration is a single JSON document; command-line flags override
//! individual fields.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::baselines::{baseline_asf_ape, re_cre_fit, BaselineMode};
use crate::beta::{
    cmle_fit, smoothed_max_score_fit, BetaEstimate, BetaMethod, CmleOptions, SmsOptions,
};
use crate::bootstrap::{bootstrap_effect, BootstrapPlan, CiKind};
use crate::effects::{average_over_time, EffectEstimate, EffectKind, EffectsEngine, Period, Smoother};
use crate::error::{Error, Result};
use crate::localpoly::{check_rates, default_delta, BandwidthSpec, LocalPolyConfig, RateReport, TrimmingPolicy};
use crate::mc::{self, DgpFamily, DgpSpec, EstimatorKind};
use crate::panel::{apply_transform, build_index, load_panel, CoarseningScheme, CsvSchema, IndexSpec, IndexedPanel, PanelDataset};

#[derive(Parser, Debug)]
#[command(name = "panelbin", version, about = "Semiparametric ASF/APE estimation for binary response panels")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate effects on a dataset described by a JSON config.
    Estimate(CommonFlags),
    /// Run a Monte Carlo study and write the comparison tables.
    Simulate(SimulateFlags),
    /// Leave-one-out cross-validation of the bandwidth constant.
    Crossval(CommonFlags),
    /// Bandwidth-rate feasibility report.
    Rates(RatesFlags),
    /// Cluster bootstrap confidence intervals for one effect.
    Bootstrap(CommonFlags),
}

#[derive(Parser, Debug, Clone)]
struct CommonFlags {
    /// JSON configuration file (a previous run_meta.json also works).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores, or PANELBIN_THREADS).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Parser, Debug, Clone)]
struct SimulateFlags {
    #[command(flatten)]
    common: CommonFlagsOptionalConfig,
    /// DGP family (L1, L2, G11, G12, G21, G22); overrides the config.
    #[arg(long)]
    dgp: Option<String>,
    /// Number of Monte Carlo replications; overrides the config.
    #[arg(long)]
    reps: Option<usize>,
}

#[derive(Parser, Debug, Clone)]
struct CommonFlagsOptionalConfig {
    /// JSON configuration file; optional when --dgp is given.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Parser, Debug, Clone)]
struct RatesFlags {
    /// JSON configuration file; optional when the direct flags are given.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Local polynomial order.
    #[arg(long)]
    ell: Option<usize>,
    /// Number of continuous index components.
    #[arg(long)]
    d_v: Option<usize>,
    /// First-step rate exponent (1/2 for the CMLE, 4/9 for max score).
    #[arg(long)]
    epsilon: Option<f64>,
    /// Sample size used to resolve the bandwidth.
    #[arg(long, default_value_t = 1500)]
    n: usize,
}

// ---------------------------------------------------------------------------
// Configuration document

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DataConfig {
    pub path: PathBuf,
    pub schema: CsvSchema,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct IndexConfig {
    #[serde(default)]
    pub continuous: Vec<String>,
    #[serde(default)]
    pub discrete: Vec<(String, CoarseningScheme)>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct LocalPolyUserConfig {
    #[serde(default = "default_ell")]
    pub ell: usize,
    /// Fixed bandwidth constant; cross-validated over `cv_grid` when absent.
    #[serde(default)]
    pub kappa: Option<f64>,
    /// Bandwidth exponent; the midpoint of the admissible window when absent.
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default = "default_cv_grid")]
    pub cv_grid: Vec<f64>,
}

fn default_ell() -> usize {
    2
}

fn default_cv_grid() -> Vec<f64> {
    vec![0.75, 1.0, 1.25, 1.5, 1.75, 2.0]
}

impl Default for LocalPolyUserConfig {
    fn default() -> Self {
        LocalPolyUserConfig {
            ell: default_ell(),
            kappa: None,
            delta: None,
            cv_grid: default_cv_grid(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GridConfig {
    /// Covariate whose values vary along the grid.
    pub coordinate: String,
    pub values: Vec<f64>,
    /// Values of the remaining covariates (zeros when absent).
    #[serde(default)]
    pub base: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct BootstrapConfig {
    pub n_reps: usize,
    #[serde(default = "default_ci_kind")]
    pub ci: String,
    #[serde(default = "default_level")]
    pub level: f64,
    /// Re-use the original sample's bandwidth constant inside replicates.
    #[serde(default = "default_true")]
    pub freeze_kappa: bool,
    /// Re-estimate the coefficients inside each replicate.
    #[serde(default = "default_true")]
    pub reestimate_beta: bool,
    /// Effect bootstrapped by the `bootstrap` command: "asf" or "ape".
    #[serde(default = "default_target")]
    pub target: String,
}

fn default_ci_kind() -> String {
    "percentile_t".into()
}
fn default_level() -> f64 {
    0.95
}
fn default_true() -> bool {
    true
}
fn default_target() -> String {
    "ape".into()
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SimulateConfig {
    pub family: String,
    #[serde(default = "default_reps")]
    pub n_reps: usize,
    #[serde(default)]
    pub n_units: Option<usize>,
    #[serde(default)]
    pub n_periods: Option<usize>,
    #[serde(default = "default_sim_ell")]
    pub ell: usize,
    #[serde(default = "default_true")]
    pub time_average: bool,
    #[serde(default = "default_estimator_names")]
    pub estimators: Vec<String>,
    #[serde(default)]
    pub grid_values: Option<Vec<f64>>,
    #[serde(default)]
    pub kappa: Option<f64>,
    #[serde(default = "default_quad_nodes")]
    pub quad_nodes: usize,
}

fn default_reps() -> usize {
    100
}
fn default_sim_ell() -> usize {
    3
}
fn default_estimator_names() -> Vec<String> {
    vec!["semiparametric".into(), "re".into(), "cre".into()]
}
fn default_quad_nodes() -> usize {
    32
}

/// Top-level run configuration. Unknown fields are ignored, so a previous
/// run's `run_meta.json` can be fed back directly.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Default)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub data: Option<DataConfig>,
    /// Covariates entering the coefficient vector; all of them when absent.
    #[serde(default)]
    pub model_covariates: Option<Vec<String>>,
    #[serde(default)]
    pub index: Option<IndexConfig>,
    /// "semiparametric_ls", "semiparametric_logit", "re", or "cre".
    #[serde(default = "default_estimator")]
    pub estimator: String,
    /// "cmle" or "smoothed_max_score".
    #[serde(default = "default_beta_method")]
    pub beta_method: String,
    #[serde(default)]
    pub local_poly: LocalPolyUserConfig,
    #[serde(default)]
    pub trimming: TrimmingPolicy,
    #[serde(default)]
    pub grid: Option<GridConfig>,
    /// Target coordinate for partial effects; the grid coordinate if absent.
    #[serde(default)]
    pub ape_coordinate: Option<String>,
    /// Alternative value for a discrete effect at the grid coordinate.
    #[serde(default)]
    pub ape_alt: Option<f64>,
    /// Floor derivative summands at zero (on by default for data work; the
    /// simulation driver leaves it off).
    #[serde(default = "default_true")]
    pub monotone_ape: bool,
    #[serde(default = "default_true")]
    pub time_average: bool,
    #[serde(default)]
    pub with_bounds: bool,
    #[serde(default)]
    pub with_analytic_se: bool,
    #[serde(default)]
    pub bootstrap: Option<BootstrapConfig>,
    #[serde(default = "default_quad_nodes")]
    pub quad_nodes: usize,
    #[serde(default)]
    pub simulate: Option<SimulateConfig>,
    /// Bandwidth for the smoothed maximum score objective; rule of thumb
    /// when absent.
    #[serde(default)]
    pub sms_bandwidth: Option<f64>,
    #[serde(default = "default_sms_starts")]
    pub sms_starts: usize,
}

fn default_estimator() -> String {
    "semiparametric_ls".into()
}
fn default_beta_method() -> String {
    "cmle".into()
}
fn default_sms_starts() -> usize {
    16
}

/// run_meta.json shape: the resolved config plus resolution details.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunMeta {
    #[serde(flatten)]
    pub config: RunConfig,
    pub resolved_kappa: Option<f64>,
    pub resolved_delta: Option<f64>,
    pub rate_report: Option<RateReport>,
    pub beta_method_used: Option<String>,
}

// ---------------------------------------------------------------------------
// Entry point

pub fn main() {
    let args = Args::parse();
    let code = match dispatch(args) {
        Ok(()) => 0,
        Err(CliError { code, err, out_dir }) => {
            let payload = serde_json::json!({
                "error": format!("{err}"),
                "kind": format!("{err:?}").split(['(', '{', ' ']).next().unwrap_or("Error"),
                "exit_code": code,
            });
            eprintln!("{}", serde_json::to_string_pretty(&payload).unwrap());
            if let Some(dir) = out_dir {
                let _ = std::fs::create_dir_all(&dir);
                let _ = std::fs::write(
                    dir.join("error.json"),
                    serde_json::to_string_pretty(&payload).unwrap(),
                );
            }
            code
        }
    };
    std::process::exit(code);
}

struct CliError {
    code: i32,
    err: Error,
    out_dir: Option<PathBuf>,
}

fn config_err(err: Error, out: Option<PathBuf>) -> CliError {
    CliError {
        code: 2,
        err,
        out_dir: out,
    }
}

fn data_err(err: Error, out: Option<PathBuf>) -> CliError {
    CliError {
        code: 3,
        err,
        out_dir: out,
    }
}

fn estimation_err(err: Error, out: Option<PathBuf>) -> CliError {
    CliError {
        code: 4,
        err,
        out_dir: out,
    }
}

fn classify(err: Error, out: Option<PathBuf>) -> CliError {
    match err {
        Error::UnbalancedPanel { .. }
        | Error::NonBinaryOutcome { .. }
        | Error::Parse { .. }
        | Error::Io(_) => data_err(err, out),
        Error::Invalid(_) | Error::EmptyIndex => config_err(err, out),
        other => estimation_err(other, out),
    }
}

fn dispatch(args: Args) -> std::result::Result<(), CliError> {
    match args.command {
        Command::Estimate(f) => {
            let (cfg, out) = load_config(&f)?;
            init_threads(f.threads.or(cfg.threads));
            cmd_estimate(&cfg, &out).map_err(|e| classify(e, Some(out.clone())))
        }
        Command::Crossval(f) => {
            let (cfg, out) = load_config(&f)?;
            init_threads(f.threads.or(cfg.threads));
            cmd_crossval(&cfg, &out).map_err(|e| classify(e, Some(out.clone())))
        }
        Command::Bootstrap(f) => {
            let (cfg, out) = load_config(&f)?;
            init_threads(f.threads.or(cfg.threads));
            cmd_bootstrap(&cfg, &out).map_err(|e| classify(e, Some(out.clone())))
        }
        Command::Simulate(f) => {
            let mut cfg = match &f.common.config {
                Some(path) => read_config(path).map_err(|e| config_err(e, None))?,
                None => RunConfig::default(),
            };
            if let Some(seed) = f.common.seed {
                cfg.seed = seed;
            }
            if let Some(out) = &f.common.out {
                cfg.out_dir = Some(out.clone());
            }
            let mut sim = cfg.simulate.clone().unwrap_or(SimulateConfig {
                family: String::new(),
                n_reps: default_reps(),
                n_units: None,
                n_periods: None,
                ell: default_sim_ell(),
                time_average: true,
                estimators: default_estimator_names(),
                grid_values: None,
                kappa: None,
                quad_nodes: default_quad_nodes(),
            });
            if let Some(dgp) = &f.dgp {
                sim.family = dgp.clone();
            }
            if let Some(reps) = f.reps {
                sim.n_reps = reps;
            }
            cfg.simulate = Some(sim);
            let out = cfg
                .out_dir
                .clone()
                .unwrap_or_else(|| PathBuf::from("panelbin_out"));
            init_threads(f.common.threads.or(cfg.threads));
            cmd_simulate(&cfg, &out).map_err(|e| classify(e, Some(out.clone())))
        }
        Command::Rates(f) => {
            let report = if let Some(path) = &f.config {
                let cfg = read_config(path).map_err(|e| config_err(e, None))?;
                rates_from_config(&cfg, f.n).map_err(|e| config_err(e, None))?
            } else {
                let ell = f.ell.unwrap_or(2);
                let d_v = f.d_v.unwrap_or(1);
                let epsilon = f.epsilon.unwrap_or(0.5);
                let delta = default_delta(ell, epsilon, d_v).unwrap_or(f64::NAN);
                let bw = BandwidthSpec::new(1.0, if delta.is_finite() { delta } else { 0.1 })
                    .map_err(|e| config_err(e, None))?;
                check_rates(&LocalPolyConfig::new(ell, d_v, bw), epsilon, d_v, f.n)
            };
            print_rate_report(&report);
            Ok(())
        }
    }
}

fn load_config(f: &CommonFlags) -> std::result::Result<(RunConfig, PathBuf), CliError> {
    let mut cfg = read_config(&f.config).map_err(|e| config_err(e, None))?;
    if let Some(seed) = f.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &f.out {
        cfg.out_dir = Some(out.clone());
    }
    let out = cfg
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("panelbin_out"));
    Ok((cfg, out))
}

fn read_config(path: &Path) -> Result<RunConfig> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&raw).map_err(|e| Error::Invalid(format!("config: {e}")))
}

fn init_threads(requested: Option<usize>) {
    let n = requested.or_else(|| {
        std::env::var("PANELBIN_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = n {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
    }
}

// ---------------------------------------------------------------------------
// Pipeline shared by estimate/crossval/bootstrap

struct Pipeline {
    panel: PanelDataset,
    indexed: IndexedPanel,
    beta: BetaEstimate,
    cfg: LocalPolyConfig,
    kappa: f64,
    delta: f64,
    rate: RateReport,
    grid: Vec<(f64, Vec<f64>)>,
    ape_k: usize,
    beta_method: BetaMethod,
}

fn resolve_schema(cfg: &RunConfig) -> Result<(PathBuf, CsvSchema)> {
    let data = cfg
        .data
        .as_ref()
        .ok_or_else(|| Error::Invalid("config has no data section".into()))?;
    Ok((data.path.clone(), data.schema.clone()))
}

fn model_positions(cfg: &RunConfig, panel: &PanelDataset) -> Result<Vec<usize>> {
    let names = match &cfg.model_covariates {
        Some(list) => list.clone(),
        None => panel.covariate_names().to_vec(),
    };
    names
        .iter()
        .map(|n| {
            panel
                .covariate_position(n)
                .ok_or_else(|| Error::Invalid(format!("model covariate `{n}` not in data")))
        })
        .collect()
}

/// Panel restricted to the model covariates, used for coefficient
/// estimation (index columns may be time-invariant and must stay out).
fn model_subpanel(panel: &PanelDataset, positions: &[usize]) -> Result<PanelDataset> {
    let n = panel.n_units();
    let t = panel.n_periods();
    let mut covs = Vec::with_capacity(n * t * positions.len());
    let mut outcomes = Vec::with_capacity(n * t);
    for i in 0..n {
        for s in 0..t {
            outcomes.push(panel.y(i, s));
            for &k in positions {
                covs.push(panel.x(i, s, k));
            }
        }
    }
    PanelDataset::from_parts(
        n,
        t,
        outcomes,
        covs,
        positions
            .iter()
            .map(|&k| panel.covariate_names()[k].clone())
            .collect(),
        Some(panel.unit_ids().to_vec()),
    )
}

/// Spread a sub-panel coefficient vector over the full covariate list,
/// zeros elsewhere.
fn embed_beta(est: BetaEstimate, positions: &[usize], d_full: usize) -> BetaEstimate {
    let mut beta = vec![0.0; d_full];
    for (j, &k) in positions.iter().enumerate() {
        beta[k] = est.beta[j];
    }
    BetaEstimate { beta, ..est }
}

fn fit_beta(cfg: &RunConfig, sub: &PanelDataset) -> Result<(BetaEstimate, BetaMethod)> {
    match cfg.beta_method.as_str() {
        "cmle" => Ok((cmle_fit(sub, CmleOptions::default())?, BetaMethod::Cmle)),
        "smoothed_max_score" | "sms" => {
            let opts = SmsOptions {
                bandwidth: cfg.sms_bandwidth,
                starts: cfg.sms_starts,
                seed: cfg.seed,
                max_iter: 600,
            };
            Ok((
                smoothed_max_score_fit(sub, &opts)?,
                BetaMethod::SmoothedMaxScore,
            ))
        }
        other => Err(Error::Invalid(format!("unknown beta method `{other}`"))),
    }
}

fn build_pipeline(cfg: &RunConfig) -> Result<Pipeline> {
    let (path, schema) = resolve_schema(cfg)?;
    let panel = load_panel(&path, &schema)?;
    let index_cfg = cfg
        .index
        .as_ref()
        .ok_or_else(|| Error::Invalid("config has no index section".into()))?;
    let spec = IndexSpec {
        continuous: index_cfg.continuous.clone(),
        discrete: index_cfg.discrete.clone(),
    };
    let indexed = apply_transform(&build_index(&panel, &spec)?)?;

    let positions = model_positions(cfg, &panel)?;
    let sub = model_subpanel(&panel, &positions)?;
    let (raw_beta, method) = fit_beta(cfg, &sub)?;
    let beta = embed_beta(raw_beta, &positions, panel.d_x());

    let d_v = indexed.d_v();
    let ell = cfg.local_poly.ell;
    let delta = match cfg.local_poly.delta {
        Some(d) => d,
        None => default_delta(ell, beta.epsilon_rate, d_v).ok_or_else(|| {
            Error::Invalid(format!(
                "no admissible bandwidth exponent for ell = {ell}, d_V = {d_v}; pick ell > d_V"
            ))
        })?,
    };
    let lp_cfg = LocalPolyConfig::new(ell, d_v, BandwidthSpec::new(1.0, delta)?);
    let rate = check_rates(&lp_cfg, beta.epsilon_rate, d_v, panel.n_units());

    let grid_cfg = cfg
        .grid
        .as_ref()
        .ok_or_else(|| Error::Invalid("config has no grid section".into()))?;
    let coord = panel
        .covariate_position(&grid_cfg.coordinate)
        .ok_or_else(|| {
            Error::Invalid(format!("grid coordinate `{}` not in data", grid_cfg.coordinate))
        })?;
    if grid_cfg.values.is_empty() {
        return Err(Error::Invalid("grid has no values".into()));
    }
    let base = match &grid_cfg.base {
        Some(b) if b.len() == panel.d_x() => b.clone(),
        Some(_) => {
            return Err(Error::Invalid(
                "grid base must list one value per covariate".into(),
            ))
        }
        None => vec![0.0; panel.d_x()],
    };
    let grid: Vec<(f64, Vec<f64>)> = grid_cfg
        .values
        .iter()
        .map(|&v| {
            let mut x = base.clone();
            x[coord] = v;
            (v, x)
        })
        .collect();
    let ape_k = match &cfg.ape_coordinate {
        Some(name) => panel
            .covariate_position(name)
            .ok_or_else(|| Error::Invalid(format!("ape coordinate `{name}` not in data")))?,
        None => coord,
    };

    // bandwidth constant: fixed or cross-validated on the first period
    let mut engine = EffectsEngine::new(&indexed, &beta, lp_cfg.clone(), cfg.trimming)?;
    let kappa = match cfg.local_poly.kappa {
        Some(k) => k,
        None => engine.select_kappa(0, &cfg.local_poly.cv_grid)?.0,
    };
    engine.set_kappa(kappa);
    let lp_cfg = engine.config().clone();

    Ok(Pipeline {
        panel,
        indexed,
        beta,
        cfg: lp_cfg,
        kappa,
        delta,
        rate,
        grid,
        ape_k,
        beta_method: method,
    })
}

fn smoother_of(cfg: &RunConfig) -> Result<Smoother> {
    match cfg.estimator.as_str() {
        "semiparametric_ls" | "semiparametric" => Ok(Smoother::LeastSquares),
        "semiparametric_logit" => Ok(Smoother::LocalLogit),
        "re" | "cre" => Ok(Smoother::LeastSquares),
        other => Err(Error::Invalid(format!("unknown estimator `{other}`"))),
    }
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:.16e}")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

fn period_label(p: Period) -> String {
    match p {
        Period::At(t) => t.to_string(),
        Period::Averaged => "averaged".into(),
    }
}

fn write_csv(path: &Path, header: &str, rows: &[Vec<String>]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "{header}")?;
    for row in rows {
        writeln!(f, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn cmd_estimate(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let smoother = smoother_of(cfg)?;
    let is_baseline = matches!(cfg.estimator.as_str(), "re" | "cre");
    let pl = build_pipeline(cfg)?;

    let mut rows: Vec<Vec<String>> = Vec::new();
    let boot_plan = cfg
        .bootstrap
        .as_ref()
        .map(|b| plan_from(b, cfg.seed))
        .transpose()?;

    if is_baseline {
        let mode = if cfg.estimator == "re" {
            BaselineMode::Re
        } else {
            BaselineMode::Cre
        };
        let fit = re_cre_fit(&pl.indexed, mode, cfg.quad_nodes)?;
        for (v, x) in &pl.grid {
            let (asf, ape) = baseline_asf_ape(&fit, &pl.indexed, x, pl.ape_k)?;
            for e in [asf, ape] {
                rows.push(effect_row(*v, &e));
            }
        }
        write_beta_json(
            out_dir,
            &fit.beta,
            &format!("{mode:?}"),
            fit.loglik,
            fit.converged,
        )?;
    } else {
        let engine = EffectsEngine::new(&pl.indexed, &pl.beta, pl.cfg.clone(), cfg.trimming)?
            .with_smoother(smoother)
            .with_monotone_ape(cfg.monotone_ape);
        let periods: Vec<usize> = (0..pl.panel.n_periods()).collect();
        for (v, x) in &pl.grid {
            let mut asf_per_t = Vec::new();
            let mut ape_per_t = Vec::new();
            for &t in &periods {
                let mut asf = engine.asf(x, t)?;
                let mut ape = match cfg.ape_alt {
                    Some(alt) => {
                        let pt = crate::effects::EvaluationPoint::new(x.clone(), pl.ape_k)?
                            .with_alt(alt)?;
                        engine.ape_discrete(&pt, t)?
                    }
                    None => engine.ape(x, pl.ape_k, t)?,
                };
                if cfg.with_analytic_se {
                    asf.analytic_se = engine.analytic_se(EffectKind::Asf, x, pl.ape_k, t).ok();
                    if ape.kind == EffectKind::ApeContinuous {
                        ape.analytic_se = engine
                            .analytic_se(EffectKind::ApeContinuous, x, pl.ape_k, t)
                            .ok();
                    }
                }
                if cfg.with_bounds {
                    asf.bounds = engine.asf_bounds(x, t).ok().map(|b| (b.lo, b.hi));
                    if ape.kind == EffectKind::ApeContinuous {
                        ape.bounds = engine.ape_bounds(x, pl.ape_k, t).ok().map(|b| (b.lo, b.hi));
                    }
                }
                asf_per_t.push(asf);
                ape_per_t.push(ape);
            }
            let mut asf_avg = average_over_time(&asf_per_t)?;
            let mut ape_avg = average_over_time(&ape_per_t)?;
            if let Some(plan) = &boot_plan {
                let boot_cfg = cfg.bootstrap.as_ref().unwrap();
                for (kind, target) in [("asf", &mut asf_avg), ("ape", &mut ape_avg)] {
                    let mut plan = *plan;
                    // censored derivative summands give a non-standard
                    // bootstrap distribution; use percentile endpoints
                    if kind == "ape" && cfg.monotone_ape {
                        plan.ci_kind = CiKind::Percentile;
                    }
                    let closure = replicate_closure(
                        cfg,
                        pl_frozen(cfg, &pl, boot_cfg),
                        x.clone(),
                        kind.to_string(),
                        pl.ape_k,
                    );
                    let r = bootstrap_effect(&plan, closure, &pl.panel)?;
                    target.ci = Some(r.ci);
                }
            }
            if cfg.time_average {
                rows.push(effect_row(*v, &asf_avg));
                rows.push(effect_row(*v, &ape_avg));
            }
            for (a, p) in asf_per_t.iter().zip(&ape_per_t) {
                rows.push(effect_row(*v, a));
                rows.push(effect_row(*v, p));
            }
        }
        write_beta_json(
            out_dir,
            &pl.beta.beta,
            match pl.beta_method {
                BetaMethod::Cmle => "cmle",
                BetaMethod::SmoothedMaxScore => "smoothed_max_score",
            },
            pl.beta.objective_value,
            pl.beta.converged,
        )?;
    }

    write_csv(
        &out_dir.join("effects.csv"),
        "x,kind,value,trim_share,analytic_se,ci_lo,ci_hi,bound_lo,bound_hi,period",
        &rows,
    )?;
    write_run_meta(cfg, out_dir, Some(&pl))?;
    Ok(())
}

fn effect_row(x: f64, e: &EffectEstimate) -> Vec<String> {
    vec![
        fmt(x),
        format!("{:?}", e.kind).to_lowercase(),
        fmt(e.value),
        fmt(e.trim_share),
        fmt_opt(e.analytic_se),
        fmt_opt(e.ci.map(|c| c.0)),
        fmt_opt(e.ci.map(|c| c.1)),
        fmt_opt(e.bounds.map(|b| b.0)),
        fmt_opt(e.bounds.map(|b| b.1)),
        period_label(e.period),
    ]
}

fn write_beta_json(
    out_dir: &Path,
    beta: &[f64],
    method: &str,
    objective: f64,
    converged: bool,
) -> Result<()> {
    let payload = serde_json::json!({
        "coefficients": beta,
        "method": method,
        "objective_value": objective,
        "converged": converged,
    });
    std::fs::write(
        out_dir.join("beta.json"),
        serde_json::to_string_pretty(&payload).map_err(|e| Error::Io(e.to_string()))?,
    )?;
    Ok(())
}

fn write_run_meta(cfg: &RunConfig, out_dir: &Path, pl: Option<&Pipeline>) -> Result<()> {
    let meta = RunMeta {
        config: cfg.clone(),
        resolved_kappa: pl.map(|p| p.kappa),
        resolved_delta: pl.map(|p| p.delta),
        rate_report: pl.map(|p| p.rate),
        beta_method_used: pl.map(|p| {
            match p.beta_method {
                BetaMethod::Cmle => "cmle",
                BetaMethod::SmoothedMaxScore => "smoothed_max_score",
            }
            .to_string()
        }),
    };
    std::fs::write(
        out_dir.join("run_meta.json"),
        serde_json::to_string_pretty(&meta).map_err(|e| Error::Io(e.to_string()))?,
    )?;
    Ok(())
}

fn plan_from(b: &BootstrapConfig, seed: u64) -> Result<BootstrapPlan> {
    let kind = match b.ci.as_str() {
        "percentile_t" => CiKind::PercentileT,
        "percentile" => CiKind::Percentile,
        other => return Err(Error::Invalid(format!("unknown ci kind `{other}`"))),
    };
    BootstrapPlan::new(b.n_reps, seed, kind, b.level)
}

/// Settings frozen from the original fit for use inside replicates.
#[derive(Clone)]
struct FrozenSettings {
    kappa: Option<f64>,
    beta: Option<BetaEstimate>,
    delta: f64,
    ell: usize,
    trimming: TrimmingPolicy,
    index: IndexSpec,
    positions: Vec<usize>,
    monotone: bool,
    smoother: Smoother,
    time_average: bool,
    n_periods: usize,
    cv_grid: Vec<f64>,
}

fn pl_frozen(cfg: &RunConfig, pl: &Pipeline, boot: &BootstrapConfig) -> FrozenSettings {
    FrozenSettings {
        kappa: boot.freeze_kappa.then_some(pl.kappa),
        beta: (!boot.reestimate_beta).then(|| pl.beta.clone()),
        delta: pl.delta,
        ell: pl.cfg.poly_order,
        trimming: cfg.trimming,
        index: IndexSpec {
            continuous: cfg.index.as_ref().map(|i| i.continuous.clone()).unwrap_or_default(),
            discrete: cfg.index.as_ref().map(|i| i.discrete.clone()).unwrap_or_default(),
        },
        positions: model_positions(cfg, &pl.panel).expect("validated earlier"),
        monotone: cfg.monotone_ape,
        smoother: Smoother::LeastSquares,
        time_average: cfg.time_average,
        n_periods: pl.panel.n_periods(),
        cv_grid: cfg.local_poly.cv_grid.clone(),
    }
}

/// The full-pipeline estimator re-run on each bootstrap replicate.
fn replicate_closure(
    cfg: &RunConfig,
    frozen: FrozenSettings,
    x: Vec<f64>,
    kind: String,
    ape_k: usize,
) -> impl Fn(&PanelDataset) -> Result<EffectEstimate> + Sync {
    let beta_method = cfg.beta_method.clone();
    let seed = cfg.seed;
    let sms_bandwidth = cfg.sms_bandwidth;
    let sms_starts = cfg.sms_starts;
    move |panel: &PanelDataset| -> Result<EffectEstimate> {
        let indexed = apply_transform(&build_index(panel, &frozen.index)?)?;
        let beta = match &frozen.beta {
            Some(b) => b.clone(),
            None => {
                let sub = model_subpanel(panel, &frozen.positions)?;
                let est = match beta_method.as_str() {
                    "cmle" => cmle_fit(&sub, CmleOptions::default())?,
                    _ => smoothed_max_score_fit(
                        &sub,
                        &SmsOptions {
                            bandwidth: sms_bandwidth,
                            starts: sms_starts,
                            seed,
                            max_iter: 600,
                        },
                    )?,
                };
                embed_beta(est, &frozen.positions, panel.d_x())
            }
        };
        let lp = LocalPolyConfig::new(
            frozen.ell,
            indexed.d_v(),
            BandwidthSpec::new(1.0, frozen.delta)?,
        );
        let mut engine = EffectsEngine::new(&indexed, &beta, lp, frozen.trimming)?
            .with_smoother(frozen.smoother)
            .with_monotone_ape(frozen.monotone);
        let kappa = match frozen.kappa {
            Some(k) => k,
            None => engine.select_kappa(0, &frozen.cv_grid)?.0,
        };
        engine.set_kappa(kappa);
        let periods: Vec<usize> = if frozen.time_average {
            (0..frozen.n_periods).collect()
        } else {
            vec![0]
        };
        let per_t: Result<Vec<EffectEstimate>> = periods
            .iter()
            .map(|&t| match kind.as_str() {
                "asf" => engine.asf(&x, t),
                _ => engine.ape(&x, ape_k, t),
            })
            .collect();
        average_over_time(&per_t?)
    }
}

pub fn cmd_crossval(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let pl = build_pipeline(cfg)?;
    let engine = EffectsEngine::new(&pl.indexed, &pl.beta, pl.cfg.clone(), cfg.trimming)?;
    let (kappa, scores) = engine.select_kappa(0, &cfg.local_poly.cv_grid)?;
    let mut grid = cfg.local_poly.cv_grid.clone();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rows: Vec<Vec<String>> = grid
        .iter()
        .zip(&scores)
        .map(|(k, s)| vec![fmt(*k), fmt(*s)])
        .collect();
    write_csv(&out_dir.join("crossval.csv"), "kappa,score", &rows)?;
    println!("kappa_star = {kappa}");
    write_run_meta(cfg, out_dir, Some(&pl))?;
    Ok(())
}

pub fn cmd_bootstrap(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let boot_cfg = cfg
        .bootstrap
        .as_ref()
        .ok_or_else(|| Error::Invalid("config has no bootstrap section".into()))?;
    let mut plan = plan_from(boot_cfg, cfg.seed)?;
    if boot_cfg.target == "ape" && cfg.monotone_ape {
        plan.ci_kind = CiKind::Percentile;
    }
    let pl = build_pipeline(cfg)?;
    let frozen = pl_frozen(cfg, &pl, boot_cfg);
    let mut rows = Vec::new();
    for (v, x) in &pl.grid {
        let closure = replicate_closure(
            cfg,
            frozen.clone(),
            x.clone(),
            boot_cfg.target.clone(),
            pl.ape_k,
        );
        let r = bootstrap_effect(&plan, closure, &pl.panel)?;
        rows.push(vec![
            fmt(*v),
            boot_cfg.target.clone(),
            fmt(r.point.value),
            fmt(r.sd),
            fmt(r.ci.0),
            fmt(r.ci.1),
            r.n_failed.to_string(),
        ]);
    }
    write_csv(
        &out_dir.join("bootstrap.csv"),
        "x,kind,point,sd,ci_lo,ci_hi,n_failed",
        &rows,
    )?;
    write_run_meta(cfg, out_dir, Some(&pl))?;
    Ok(())
}

pub fn cmd_simulate(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let sim = cfg
        .simulate
        .as_ref()
        .ok_or_else(|| Error::Invalid("config has no simulate section".into()))?;
    let family = DgpFamily::parse(&sim.family)
        .ok_or_else(|| Error::Invalid(format!("unknown DGP family `{}`", sim.family)))?;
    let mut spec = DgpSpec::preset(family, sim.n_reps, cfg.seed)?;
    if let Some(n) = sim.n_units {
        spec.n_units = n;
    }
    if let Some(t) = sim.n_periods {
        spec.n_periods = t;
    }
    let estimators: Vec<EstimatorKind> = sim
        .estimators
        .iter()
        .map(|name| match name.as_str() {
            "semiparametric" | "semiparametric_ls" => {
                let mut kind = EstimatorKind::default_semiparametric(sim.ell);
                if let EstimatorKind::Semiparametric {
                    time_average,
                    kappa,
                    ..
                } = &mut kind
                {
                    *time_average = sim.time_average;
                    *kappa = sim.kappa;
                }
                Ok(kind)
            }
            "re" => Ok(EstimatorKind::Re {
                quad_nodes: sim.quad_nodes,
            }),
            "cre" => Ok(EstimatorKind::Cre {
                quad_nodes: sim.quad_nodes,
            }),
            other => Err(Error::Invalid(format!("unknown estimator `{other}`"))),
        })
        .collect::<Result<_>>()?;
    let grid_values = sim
        .grid_values
        .clone()
        .unwrap_or_else(mc::default_grid_values);

    let results = mc::run_study(&spec, &estimators, &grid_values)?;

    let table = |pick: &dyn Fn(&mc::StudyResult) -> &mc::PerfStats| -> Vec<Vec<String>> {
        results
            .iter()
            .map(|r| {
                let s = pick(r);
                vec![
                    sim.family.clone(),
                    r.estimator.clone(),
                    fmt(s.weighted_abs_bias),
                    fmt(s.weighted_sd),
                    fmt(s.weighted_rmse),
                    fmt_opt(s.ratio_min),
                    fmt_opt(s.ratio_median),
                    fmt_opt(s.ratio_max),
                ]
            })
            .collect()
    };
    let header = "dgp,estimator,abs_bias,sd,rmse,ratio_min,ratio_median,ratio_max";
    write_csv(&out_dir.join("table_ape.csv"), header, &table(&|r| &r.ape))?;
    write_csv(&out_dir.join("table_asf.csv"), header, &table(&|r| &r.asf))?;
    let beta_rows: Vec<Vec<String>> = results
        .iter()
        .map(|r| {
            vec![
                sim.family.clone(),
                r.estimator.clone(),
                fmt(r.beta.bias),
                fmt(r.beta.sd),
                fmt(r.beta.rmse),
            ]
        })
        .collect();
    write_csv(
        &out_dir.join("table_beta.csv"),
        "dgp,estimator,bias,sd,rmse",
        &beta_rows,
    )?;

    // long format for plotting
    let k = mc::vary_coordinate(&spec);
    let x_grid = mc::evaluation_grid(spec.d_x(), k, &grid_values);
    let truth = mc::true_effects(&spec, &x_grid, k);
    let mut long_rows = Vec::new();
    for r in &results {
        for rec in &r.records {
            for (g, &x) in grid_values.iter().enumerate() {
                long_rows.push(vec![
                    sim.family.clone(),
                    r.estimator.clone(),
                    rec.rep.to_string(),
                    fmt(x),
                    fmt(rec.asf[g]),
                    fmt(rec.ape[g]),
                    fmt(truth[g].asf),
                    fmt(truth[g].ape),
                ]);
            }
        }
    }
    write_csv(
        &out_dir.join("replicates_long.csv"),
        "dgp,estimator,rep,x,asf,ape,true_asf,true_ape",
        &long_rows,
    )?;
    write_run_meta(cfg, out_dir, None)?;
    Ok(())
}

fn rates_from_config(cfg: &RunConfig, n: usize) -> Result<RateReport> {
    let d_v = cfg.index.as_ref().map(|i| i.continuous.len()).unwrap_or(1);
    let epsilon = match cfg.beta_method.as_str() {
        "cmle" => 0.5,
        _ => 4.0 / 9.0,
    };
    let ell = cfg.local_poly.ell;
    let delta = cfg
        .local_poly
        .delta
        .or_else(|| default_delta(ell, epsilon, d_v))
        .unwrap_or(0.1);
    Ok(check_rates(
        &LocalPolyConfig::new(ell, d_v, BandwidthSpec::new(1.0, delta)?),
        epsilon,
        d_v,
        n,
    ))
}

fn print_rate_report(r: &RateReport) {
    println!(
        "ell = {}, d_V = {}, epsilon = {:.6}",
        r.ell, r.d_v, r.epsilon
    );
    println!(
        "admissible delta window: ({:.6}, {:.6}) -> {}",
        r.delta_lower,
        r.delta_upper,
        if r.feasible { "feasible" } else { "infeasible" }
    );
    println!(
        "first-step requirement: epsilon > {:.6} -> {}",
        r.epsilon_floor,
        if r.epsilon_ok { "satisfied" } else { "violated" }
    );
    println!(
        "configured delta = {:.6} ({}), b_N = {:.6}",
        r.delta,
        if r.delta_in_range {
            "inside the window"
        } else {
            "outside the window"
        },
        r.b_n
    );
    println!(
        "attainable ASF rate exponents: ({:.6}, {:.6})",
        r.asf_rate_interval.0, r.asf_rate_interval.1
    );
    println!(
        "attainable APE rate exponents: ({:.6}, {:.6})",
        r.ape_rate_interval.0, r.ape_rate_interval.1
    );
}
