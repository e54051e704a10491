//! `cmr` subcommands.
//!
//! Each subcommand starts from built-in defaults, merges `--config FILE`
//! (a JSON object, merged key by key) over them, then applies flags. The
//! resolved config is written to `config.json` in the run directory before
//! any computation starts.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 runtime failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use cmr_core::estimator::RefineConfig;
use cmr_core::experiment::{
    gradcheck, lemma1_mean_check, run_b_sweep, run_phase_diagram, verify_lemma1, verify_lemma2, verify_lemma3,
    BSweepConfig, BoundCheckConfig, ConcentrationConfig, CovarianceSpec, GradcheckConfig, InitMode, MeanCheckConfig,
    PhaseGridConfig,
};
use cmr_core::model::{divergence_coefficients, random_model, SyntheticDims};
use cmr_core::rng::{derive_seed, seeded};
use cmr_core::vision::{all_pairs, run_pair_classification, ClassifyConfig, Method};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::document::ModelDocument;
use crate::idx::load_image_set;
use crate::output::{self, fmt_f64, summary_line};
use crate::parallel::RayonExecutor;

pub const DATA_DIR_ENV: &str = "CMR_DATA_DIR";
pub const DEFAULT_DATA_DIR: &str = "data/mnist-5k";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<cmr_core::Error> for CliError {
    fn from(e: cmr_core::Error) -> Self {
        match e {
            cmr_core::Error::OutOfDomain(_) => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

/// Any failure while validating a resolved config is a config error.
fn invalid(r: cmr_core::Result<()>) -> Result<(), CliError> {
    r.map_err(|e| CliError::Config(e.to_string()))
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "cmr", version, about = "Common mechanism regression experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON file merged over the built-in defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Parent directory of the run directory.
    #[arg(long, global = true, default_value = "results")]
    pub outdir: PathBuf,
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Success-rate grid over the number of tasks and samples per task.
    Phase(PhaseArgs),
    /// Success rate as the number of bands grows at fixed I and T.
    SweepB(SweepArgs),
    /// Concentration of the moment matrix and its mean over many datasets.
    VerifyLemma1(Lemma1Args),
    /// Concentration of the band covariance estimate.
    VerifyLemma2(Lemma2Args),
    /// Perturbation bound on the recovered subspace.
    VerifyLemma3(Lemma3Args),
    /// Finite-difference check of the refinement gradient.
    Gradcheck(GradcheckArgs),
    /// Digit-pair classification on IDX images.
    Classify(ClassifyArgs),
    /// Task-divergence coefficients of a model file or a random model.
    Diagnostics(DiagnosticsArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InitArg {
    Spectral,
    Random,
}

#[derive(Debug, Args)]
pub struct PhaseArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_delimiter = ',')]
    pub i_values: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub t_values: Option<Vec<usize>>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long, value_enum)]
    pub init: Option<InitArg>,
    #[arg(long)]
    pub b: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long)]
    pub max_iters: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_delimiter = ',')]
    pub b_values: Option<Vec<usize>>,
    #[arg(long)]
    pub tasks: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long, value_enum)]
    pub init: Option<InitArg>,
}

#[derive(Debug, Args)]
pub struct Lemma1Args {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_delimiter = ',')]
    pub task_values: Option<Vec<usize>>,
    #[arg(long)]
    pub repetitions: Option<usize>,
    #[arg(long)]
    pub datasets: Option<usize>,
}

#[derive(Debug, Args)]
pub struct Lemma2Args {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_delimiter = ',')]
    pub task_values: Option<Vec<usize>>,
    #[arg(long)]
    pub repetitions: Option<usize>,
}

#[derive(Debug, Args)]
pub struct Lemma3Args {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub tasks: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub instances: Option<usize>,
    #[arg(long)]
    pub step: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory holding the IDX files; falls back to $CMR_DATA_DIR, then data/mnist-5k.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub t_train: Option<usize>,
    #[arg(long)]
    pub repetitions: Option<usize>,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    /// Use all 45 digit pairs.
    #[arg(long)]
    pub all_pairs: bool,
}

#[derive(Debug, Args)]
pub struct DiagnosticsArgs {
    #[command(flatten)]
    pub common: Common,
    /// Model document; a random model is drawn when absent.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub b: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long)]
    pub tasks: Option<usize>,
}

/// `verify-lemma1` runs both the rate sweep and the mean check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Config {
    pub rates: ConcentrationConfig,
    pub mean: MeanCheckConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyJob {
    pub data_dir: Option<PathBuf>,
    #[serde(flatten)]
    pub classify: ClassifyConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsConfig {
    pub model: Option<PathBuf>,
    pub b: usize,
    pub p: usize,
    pub r: usize,
    pub tasks: usize,
    pub master_seed: u64,
    pub covariance: CovarianceSpec,
}

pub const PHASE_I_VALUES: [usize; 5] = [10, 50, 100, 500, 2000];
pub const PHASE_T_VALUES: [usize; 5] = [2, 5, 10, 20, 50];

fn phase_refine() -> RefineConfig {
    RefineConfig { max_iters: 200, grad_tol: 1e-6, ..RefineConfig::default() }
}

pub fn default_phase() -> PhaseGridConfig {
    let mut cfg = PhaseGridConfig::with_grid(PHASE_I_VALUES.to_vec(), PHASE_T_VALUES.to_vec());
    cfg.refine = phase_refine();
    cfg
}

pub fn default_sweep() -> BSweepConfig {
    BSweepConfig {
        b_values: vec![10, 20, 40],
        p: 10,
        r: 1,
        tasks: 50,
        samples: 10,
        trials_per_cell: 50,
        master_seed: 0,
        init_mode: InitMode::Spectral,
        success_threshold: 0.9,
        covariance: CovarianceSpec::Identity,
        refine: phase_refine(),
        spectral: Default::default(),
    }
}

pub fn default_lemma1() -> Lemma1Config {
    let covariance = CovarianceSpec::Random { gamma_condition: 4.0, delta_condition: 4.0 };
    Lemma1Config {
        rates: ConcentrationConfig {
            b: 8,
            p: 4,
            r: 1,
            samples: 50,
            task_values: vec![25, 100, 400],
            repetitions: 20,
            master_seed: 0,
            covariance,
        },
        mean: MeanCheckConfig { b: 8, p: 4, r: 1, tasks: 50, samples: 50, datasets: 200, master_seed: 0, covariance },
    }
}

pub fn default_lemma2() -> ConcentrationConfig {
    ConcentrationConfig {
        b: 10,
        p: 10,
        r: 1,
        samples: 4,
        task_values: vec![100, 400, 1600],
        repetitions: 20,
        master_seed: 0,
        covariance: CovarianceSpec::Random { gamma_condition: 4.0, delta_condition: 4.0 },
    }
}

pub fn default_diagnostics() -> DiagnosticsConfig {
    DiagnosticsConfig {
        model: None,
        b: 20,
        p: 10,
        r: 1,
        tasks: 100,
        master_seed: 0,
        covariance: CovarianceSpec::Random { gamma_condition: 4.0, delta_condition: 4.0 },
    }
}

/// Merges `patch` into `base`: objects key by key, everything else replaced.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Defaults, then the config file, then flag overrides.
pub fn resolve<T: Serialize + DeserializeOwned>(
    defaults: &T,
    file: Option<&Path>,
    overrides: Map<String, Value>,
) -> Result<T, CliError> {
    let mut value = serde_json::to_value(defaults).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(path) = file {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let patch: Value =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if !patch.is_object() {
            return Err(CliError::Config(format!("{}: expected a JSON object", path.display())));
        }
        merge(&mut value, patch);
    }
    merge(&mut value, Value::Object(overrides));
    serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))
}

/// Flag overrides, skipping flags that were not given.
#[derive(Default)]
struct Overrides(Map<String, Value>);

impl Overrides {
    fn set<T: Serialize>(&mut self, key: &str, value: Option<T>) -> &mut Self {
        if let Some(v) = value {
            self.0.insert(key.to_owned(), json!(v));
        }
        self
    }

    fn nested<T: Serialize>(&mut self, outer: &str, key: &str, value: Option<T>) -> &mut Self {
        if let Some(v) = value {
            let slot = self.0.entry(outer.to_owned()).or_insert_with(|| Value::Object(Map::new()));
            slot.as_object_mut().unwrap().insert(key.to_owned(), json!(v));
        }
        self
    }

    fn take(&mut self) -> Map<String, Value> {
        std::mem::take(&mut self.0)
    }
}

fn init_mode(arg: Option<InitArg>) -> Option<InitMode> {
    arg.map(|a| match a {
        InitArg::Spectral => InitMode::Spectral,
        InitArg::Random => InitMode::Random,
    })
}

fn executor(threads: usize) -> Result<RayonExecutor, CliError> {
    RayonExecutor::new(threads).map_err(|e| CliError::Runtime(e.to_string()))
}

fn start_run<T: Serialize>(common: &Common, name: &str, cfg: &T) -> Result<PathBuf, CliError> {
    let dir = output::create_run_dir(&common.outdir, name)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", common.outdir.display())))?;
    output::write_json(&dir.join("config.json"), cfg)?;
    Ok(dir)
}

fn phase(args: PhaseArgs) -> Result<(), CliError> {
    let mut o = Overrides::default();
    o.set("master_seed", args.common.seed)
        .set("i_values", args.i_values)
        .set("t_values", args.t_values)
        .set("trials_per_cell", args.trials)
        .set("init_mode", init_mode(args.init))
        .set("b", args.b)
        .set("p", args.p)
        .set("r", args.r)
        .nested("refine", "max_iters", args.max_iters);
    let cfg: PhaseGridConfig = resolve(&default_phase(), args.common.config.as_deref(), o.take())?;
    invalid(cfg.validate())?;
    let exec = executor(args.common.threads)?;
    let dir = start_run(&args.common, "phase", &cfg)?;
    let res = run_phase_diagram(&cfg, &exec)?;
    output::write_phase(&dir, &res)?;
    let cells = cfg.i_values.len() * cfg.t_values.len();
    let mean = res.success_rate.iter().flatten().sum::<f64>() / cells as f64;
    summary_line(&format!(
        "phase: {cells} cells x {} trials, mean success rate {mean:.4} -> {}",
        cfg.trials_per_cell,
        dir.display()
    ));
    Ok(())
}

fn sweep_b(args: SweepArgs) -> Result<(), CliError> {
    let mut o = Overrides::default();
    o.set("master_seed", args.common.seed)
        .set("b_values", args.b_values)
        .set("tasks", args.tasks)
        .set("samples", args.samples)
        .set("trials_per_cell", args.trials)
        .set("init_mode", init_mode(args.init));
    let cfg: BSweepConfig = resolve(&default_sweep(), args.common.config.as_deref(), o.take())?;
    invalid(cfg.validate())?;
    let exec = executor(args.common.threads)?;
    let dir = start_run(&args.common, "sweep-b", &cfg)?;
    let res = run_b_sweep(&cfg, &exec)?;
    output::write_sweep(&dir, &res)?;
    let rates: Vec<String> = cfg.b_values.iter().zip(&res.success_rate).map(|(b, r)| format!("B={b}:{r:.2}")).collect();
    summary_line(&format!("sweep-b: {} -> {}", rates.join(" "), dir.display()));
    Ok(())
}

fn ratios_text(ratios: &[f64]) -> String {
    ratios.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>().join(",")
}

fn verify_lemma1_cmd(args: Lemma1Args) -> Result<(), CliError> {
    let mut o = Overrides::default();
    o.nested("rates", "master_seed", args.common.seed)
        .nested("mean", "master_seed", args.common.seed)
        .nested("rates", "task_values", args.task_values)
        .nested("rates", "repetitions", args.repetitions)
        .nested("mean", "datasets", args.datasets);
    let cfg: Lemma1Config = resolve(&default_lemma1(), args.common.config.as_deref(), o.take())?;
    invalid(cfg.rates.validate())?;
    invalid(cfg.mean.validate())?;
    let exec = executor(args.common.threads)?;
    let dir = start_run(&args.common, "verify-lemma1", &cfg)?;
    let report = verify_lemma1(&cfg.rates, &exec)?;
    output::write_concentration(&dir, &report)?;
    let mean = lemma1_mean_check(&cfg.mean, &exec)?;
    output::write_json(&dir.join("mean_check.json"), &mean)?;
    summary_line(&format!(
        "verify-lemma1: median ratios {}, mean relative error {} -> {}",
        ratios_text(&report.median_ratios()),
        fmt_f64(mean.relative_error),
        dir.display()
    ));
    Ok(())
}

fn verify_lemma2_cmd(args: Lemma2Args) -> Result<(), CliError> {
    let mut o = Overrides::default();
    o.set("master_seed", args.common.seed).set("task_values", args.task_values).set("repetitions", args.repetitions);
    let cfg: ConcentrationConfig = resolve(&default_lemma2(), args.common.config.as_deref(), o.take())?;
    invalid(cfg.validate())?;
    let exec = executor(args.common.threads)?;
    let dir = start_run(&args.common, "verify-lemma2", &cfg)?;
    let report = verify_lemma2(&cfg, &exec)?;
    output::write_concentration(&dir, &report)?;
    summary_line(&format!(
        "verify-lemma2: median ratios {} -> {}",
        ratios_text(&report.median_ratios()),
        dir.display()
    ));
    Ok(())
}

fn verify_lemma3_cmd(args: Lemma3Args) -> Result<(), CliError> {
    let mut o = Overrides::default();
    o.set("master_seed", args.common.seed)
        .set("trials", args.trials)
        .set("tasks", args.tasks)
        .set("samples", args.samples);
    let cfg: BoundCheckConfig = resolve(&BoundCheckConfig::default(), args.common.config.as_deref(), o.take())?;
    let exec = executor(args.common.threads)?;
    let dir = start_run(&args.common, "verify-lemma3", &cfg)?;
    let report = verify_lemma3(&cfg, &exec)?;
    output::write_bound_trials(&dir, &report)?;
    summary_line(&format!(
        "verify-lemma3: {} valid, {} excluded, {} violations -> {}",
        report.valid,
        report.excluded,
        report.violations,
        dir.display()
    ));
    Ok(())
}

fn gradcheck_cmd(args: GradcheckArgs) -> Result<(), CliError> {
    let mut o = Overrides::default();
    o.set("master_seed", args.common.seed).set("instances", args.instances).set("step", args.step);
    let cfg: GradcheckConfig = resolve(&GradcheckConfig::default(), args.common.config.as_deref(), o.take())?;
    invalid(cfg.validate())?;
    let exec = executor(args.common.threads)?;
    let dir = start_run(&args.common, "gradcheck", &cfg)?;
    let report = gradcheck(&cfg, &exec)?;
    output::write_gradcheck(&dir, &report)?;
    summary_line(&format!(
        "gradcheck: {} instances, max relative error {} -> {}",
        report.instances.len(),
        fmt_f64(report.max_rel_error),
        dir.display()
    ));
    Ok(())
}

fn parse_methods(names: Option<Vec<String>>) -> Result<Option<Vec<Method>>, CliError> {
    names
        .map(|names| {
            names
                .iter()
                .map(|n| {
                    serde_json::from_value(Value::String(n.trim().to_owned()))
                        .map_err(|_| CliError::Config(format!("unknown method `{n}` (cmr, cmr1, frr, cmr-nw)")))
                })
                .collect()
        })
        .transpose()
}

/// Image and label files inside `dir`, under either naming convention.
pub fn idx_paths(dir: &Path) -> (PathBuf, PathBuf) {
    for prefix in ["", "train-"] {
        let images = dir.join(format!("{prefix}images-idx3-ubyte"));
        let labels = dir.join(format!("{prefix}labels-idx1-ubyte"));
        if images.exists() && labels.exists() {
            return (images, labels);
        }
    }
    (dir.join("images-idx3-ubyte"), dir.join("labels-idx1-ubyte"))
}

fn classify(args: ClassifyArgs) -> Result<(), CliError> {
    let mut o = Overrides::default();
    o.set("split_seed", args.common.seed)
        .set("data_dir", args.data_dir)
        .set("t_train", args.t_train)
        .set("repetitions", args.repetitions)
        .set("rank", args.rank)
        .set("methods", parse_methods(args.methods)?);
    if args.all_pairs {
        o.set("pairs", Some(all_pairs()));
    }
    let defaults = ClassifyJob { data_dir: None, classify: ClassifyConfig::default() };
    let mut job: ClassifyJob = resolve(&defaults, args.common.config.as_deref(), o.take())?;
    invalid(job.classify.validate())?;
    let data_dir = job
        .data_dir
        .clone()
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR));
    job.data_dir = Some(data_dir.clone());
    let (images_path, labels_path) = idx_paths(&data_dir);
    let images = load_image_set(&images_path, &labels_path).map_err(|e| CliError::Runtime(e.to_string()))?;
    let exec = executor(args.common.threads)?;
    let dir = start_run(&args.common, "classify", &job)?;
    let res = run_pair_classification(&images, &job.classify, &exec)?;
    output::write_classify(&dir, &res)?;
    let means: Vec<String> =
        res.summary.iter().map(|s| format!("{}={:.4}", s.method.name(), s.mean_accuracy)).collect();
    summary_line(&format!("classify: T={} {} -> {}", job.classify.t_train, means.join(" "), dir.display()));
    Ok(())
}

fn diagnostics(args: DiagnosticsArgs) -> Result<(), CliError> {
    let mut o = Overrides::default();
    o.set("master_seed", args.common.seed)
        .set("model", args.model)
        .set("b", args.b)
        .set("p", args.p)
        .set("r", args.r)
        .set("tasks", args.tasks);
    let cfg: DiagnosticsConfig = resolve(&default_diagnostics(), args.common.config.as_deref(), o.take())?;
    let doc = match &cfg.model {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            serde_json::from_str::<ModelDocument>(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => {
            let dims = SyntheticDims { bands: cfg.b, positions: cfg.p, rank: cfg.r, tasks: cfg.tasks, samples: 1 };
            let mut rng = seeded(derive_seed(cfg.master_seed, &[0]));
            invalid(dims.validate())?;
            let cov = cfg.covariance.build(cfg.b, cfg.p, cfg.tasks, &mut rng)?;
            let model = random_model(&dims, &mut rng)?;
            ModelDocument::new(&model, &cov, Some(cfg.master_seed))
        }
    };
    let (model, cov) = doc.into_parts().map_err(|e| CliError::Config(e.to_string()))?;
    let dir = start_run(&args.common, "diagnostics", &cfg)?;
    output::write_json(&dir.join("model.json"), &doc)?;
    let coeffs = divergence_coefficients(&model, &cov)?;
    output::write_json(&dir.join("coefficients.json"), &coeffs)?;
    summary_line(&format!(
        "diagnostics: D={} M={} L={} -> {}",
        fmt_f64(coeffs.d),
        fmt_f64(coeffs.m),
        fmt_f64(coeffs.l),
        dir.display()
    ));
    Ok(())
}

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Phase(a) => phase(a),
        Command::SweepB(a) => sweep_b(a),
        Command::VerifyLemma1(a) => verify_lemma1_cmd(a),
        Command::VerifyLemma2(a) => verify_lemma2_cmd(a),
        Command::VerifyLemma3(a) => verify_lemma3_cmd(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
        Command::Classify(a) => classify(a),
        Command::Diagnostics(a) => diagnostics(a),
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    if args.len() <= 1 {
        let mut cmd = <Cli as clap::CommandFactory>::command();
        let _ = cmd.print_help();
        return 1;
    }
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("cmr: {e}");
            e.exit_code()
        }
    }
}
