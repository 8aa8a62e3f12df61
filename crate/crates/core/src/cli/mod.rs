//! The `plsi` command-line tool.

pub mod checkpoint;
pub mod io;
pub mod manifest;
pub mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::data::Family;
use crate::error::{PlsiError, Result};
use crate::inference::{self, bootstrap_from_point, curve_band, linspace, BootstrapConfig};
use crate::mcstudy::{format_records, format_table, run_cell, CellKey, GridConfig};
use crate::model::{self, apply_mean_link, predict_eta};
use crate::neural_link::Activation;
use crate::simgen::{eval_true_link, simulate, Censoring, LinkShape, SimMetadata, SimScenario};
use crate::trainer::{fit_with, BetaInit, FitConfig, FitOverrides};
use checkpoint::{Checkpoint, CheckpointHeader};
use io::{CsvTable, DataRoles, LoadedData};
use manifest::{InputDigest, RunManifest};

const LONG_ABOUT: &str = "\
Fits partial-linear single-index models g(beta'x) + gamma'z with a neural
network for g, for gaussian, binomial, poisson, and cox outcomes.

Randomness: every run is a pure function of its seeds. The generator is
ChaCha8 (rand_chacha) keyed by the 64-bit seed; independent sub-streams for
replicates, bootstrap samples, and epochs select other ChaCha streams under
the same key (stream ids are mixed with SplitMix64). Normal draws use the
ziggurat method. PLSI_SEED, when set, supplies --seed.

Exit codes: 0 success, 2 bad arguments or configuration, 3 data error,
4 numerical divergence, 5 bootstrap failure.";

#[derive(Debug, Parser)]
#[command(name = "plsi", version, about = "Neural partial-linear single-index models", long_about = LONG_ABOUT)]
pub struct Cli {
    /// Worker threads for replicate jobs (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a dataset from one of the simulation scenarios.
    Simulate(SimulateArgs),
    /// Fit a model to a CSV file.
    Fit(FitArgs),
    /// Bootstrap standard errors and intervals.
    Bootstrap(BootstrapArgs),
    /// Link curve with a pointwise bootstrap band.
    Curve(CurveArgs),
    /// Monte-Carlo study over a grid of scenarios.
    Mcstudy(McstudyArgs),
    /// Predict from a saved model.
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value = "linear")]
    pub link: LinkShape,
    #[arg(long, default_value = "gaussian")]
    pub family: Family,
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, env = "PLSI_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, allow_negative_numbers = true)]
    pub rho: Option<f64>,
    /// Target censored fraction (cox).
    #[arg(long)]
    pub censoring_rate: Option<f64>,
    /// Use sqrt(1.84) instead of the unit norm for the true direction.
    #[arg(long)]
    pub literal_normalizer: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct DataArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "gaussian")]
    pub family: Family,
    /// Exposure columns: comma list; `x*` matches by prefix.
    #[arg(long)]
    pub exposures: String,
    /// Linear covariate columns.
    #[arg(long)]
    pub covariates: Option<String>,
    /// Response column (gaussian, binomial, poisson).
    #[arg(long)]
    pub outcome: Option<String>,
    /// Follow-up time column (cox).
    #[arg(long)]
    pub time: Option<String>,
    /// Event indicator column, 1 = event (cox).
    #[arg(long)]
    pub event: Option<String>,
    /// Per-observation weight column.
    #[arg(long)]
    pub weights: Option<String>,
    /// Do not add an intercept column.
    #[arg(long)]
    pub no_intercept: bool,
    /// Use exposures on their original scale.
    #[arg(long)]
    pub no_standardize: bool,
}

impl DataArgs {
    fn roles(&self) -> DataRoles {
        DataRoles {
            family: self.family,
            exposures: self.exposures.clone(),
            covariates: self.covariates.clone(),
            outcome: self.outcome.clone(),
            time: self.time.clone(),
            event: self.event.clone(),
            weights: self.weights.clone(),
            intercept: !self.no_intercept,
            standardize: !self.no_standardize,
        }
    }
}

#[derive(Debug, Args, Clone)]
pub struct TrainArgs {
    /// TOML file of training settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Hidden layer widths, e.g. 64,64.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub activation: Option<Activation>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub anchoring_weight: Option<f64>,
    #[arg(long)]
    pub index_centering_weight: Option<f64>,
    /// Early-stopping patience in epochs; 0 disables.
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    #[arg(long)]
    pub beta_init: Option<BetaInit>,
    /// Cox: form risk sets within minibatches.
    #[arg(long)]
    pub cox_minibatch: bool,
    /// Keep the link level in the network instead of the intercept.
    #[arg(long)]
    pub no_recenter: bool,
    #[arg(long, env = "PLSI_SEED", default_value_t = 0)]
    pub seed: u64,
}

impl TrainArgs {
    fn overrides(&self) -> Result<FitOverrides> {
        let mut o: FitOverrides = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| {
                    PlsiError::Argument(format!("cannot read {}: {e}", path.display()))
                })?;
                toml::from_str(&text).map_err(|e| {
                    PlsiError::Config(format!("{}: {}", path.display(), e.message()))
                })?
            }
            None => FitOverrides::default(),
        };
        macro_rules! flag {
            ($($field:ident <- $src:expr),*) => {$(
                if let Some(v) = $src.clone() {
                    o.$field = Some(v);
                }
            )*};
        }
        flag!(
            hidden <- self.hidden,
            activation <- self.activation,
            epochs <- self.epochs,
            batch_size <- self.batch_size,
            learning_rate <- self.learning_rate,
            anchoring_weight <- self.anchoring_weight,
            index_centering_weight <- self.index_centering_weight,
            early_stop_patience <- self.patience,
            validation_fraction <- self.validation_fraction,
            beta_init <- self.beta_init
        );
        if self.cox_minibatch {
            o.cox_minibatch = Some(true);
        }
        if self.no_recenter {
            o.recenter_link = Some(false);
        }
        Ok(o)
    }

    fn fit_config(&self, family: Family) -> Result<FitConfig> {
        let mut cfg = self.overrides()?.apply(FitConfig::for_family(family))?;
        cfg.seed = self.seed;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Start from a saved model; with --epochs 0 the model is returned as is.
    #[arg(long)]
    pub warm_start: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BootstrapArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Use this full-data model instead of fitting one.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub replicates: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Seed for resampling (defaults to the training seed).
    #[arg(long)]
    pub bootstrap_seed: Option<u64>,
    /// Start each replicate fit from the full-data model.
    #[arg(long)]
    pub replicate_warm_start: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    /// Output directory of a `bootstrap` run.
    #[arg(long)]
    pub bootstrap: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    pub grid_min: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub grid_max: Option<f64>,
    #[arg(long, default_value_t = inference::DEFAULT_GRID_POINTS)]
    pub grid_points: usize,
    /// Band level; defaults to the bootstrap's alpha.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// `truth.json` from `simulate`, to add the true link.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct McstudyArgs {
    /// TOML grid: links, families, sizes, replicates, bootstrap, alpha, seed, [fit].
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Re-run the grid recorded in a previous run's manifest.
    #[arg(long, conflicts_with = "config")]
    pub from_manifest: Option<PathBuf>,
    /// Run one cell only: link,family,n.
    #[arg(long)]
    pub cell: Option<CellKey>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub bootstrap: Option<usize>,
    #[arg(long, env = "PLSI_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Exit status for an error.
pub fn exit_code(err: &PlsiError) -> i32 {
    match err {
        PlsiError::Argument(_) | PlsiError::Config(_) | PlsiError::UnsupportedForFamily { .. } => 2,
        PlsiError::Divergence { .. }
        | PlsiError::NumericOverflow { .. }
        | PlsiError::DegenerateDirection
        | PlsiError::NotPositiveDefinite { .. } => 4,
        PlsiError::InferenceFailure { .. } => 5,
        _ => 3,
    }
}

/// Parses `args`, runs the command, and returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(PlsiError::Argument("--jobs must be at least 1".into()));
        }
        // Only the first configuration in a process takes effect.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Bootstrap(a) => cmd_bootstrap(&a),
        Command::Curve(a) => cmd_curve(&a),
        Command::Mcstudy(a) => cmd_mcstudy(&a),
        Command::Predict(a) => cmd_predict(&a),
    }
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)
        .map_err(|e| PlsiError::Argument(format!("cannot create {}: {e}", dir.display())))
}

fn write(dir: &Path, name: &str, contents: &str, manifest: &mut RunManifest) -> Result<()> {
    fs::write(dir.join(name), contents)?;
    manifest.outputs.push(name.to_string());
    Ok(())
}

fn to_json<T: serde::Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

fn input_digest(path: &Path, sha256: &str) -> InputDigest {
    InputDigest {
        path: path.display().to_string(),
        sha256: sha256.to_string(),
    }
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let start = Instant::now();
    let mut scenario = SimScenario::standard(a.link, a.family, a.n, a.seed);
    if a.literal_normalizer {
        scenario = scenario.with_literal_normalizer();
    }
    if let Some(rho) = a.rho {
        scenario.rho = rho;
    }
    if let Some(rate) = a.censoring_rate {
        scenario.censoring = Censoring::Calibrated(rate);
    }
    scenario
        .validate()
        .map_err(|e| PlsiError::Config(e.to_string()))?;
    let sim = simulate(&scenario)?;
    prepare_out(&a.out)?;
    let mut m = RunManifest::new("simulate", to_json(&scenario));
    m.seeds.insert("data".into(), a.seed);
    write(&a.out, "data.csv", &io::dataset_csv(&sim.dataset), &mut m)?;
    write(&a.out, "truth.json", &(serde_json::to_string_pretty(&sim.meta)? + "\n"), &mut m)?;
    m.timings.insert("total".into(), start.elapsed().as_secs_f64());
    m.write(&a.out)
}

fn header_for(loaded: &LoadedData, cfg: &FitConfig, models: usize) -> CheckpointHeader {
    CheckpointHeader {
        family: cfg.family,
        mlp: cfg.mlp.clone(),
        p: loaded.dataset.p(),
        q: loaded.dataset.q(),
        models,
        exposures: loaded.exposures.clone(),
        covariates: loaded.covariates.clone(),
        intercept: loaded.covariates.first().is_some_and(|c| c == io::INTERCEPT),
        standardization: loaded.standardization.clone(),
        fit_config: Some(cfg.clone()),
        index_range: None,
        alpha: None,
        replicate_ids: None,
    }
}

/// Loads the data, reusing the exposure scaling stored in `checkpoint` if given.
fn load_for(data: &DataArgs, checkpoint: Option<&Path>) -> Result<LoadedData> {
    let stored = match checkpoint {
        Some(path) => Checkpoint::read(path)?.header.standardization,
        None => None,
    };
    io::load_dataset(&data.data, &data.roles(), stored.as_ref())
}

/// Loads a model for `loaded`, checking that its columns and scaling match.
fn load_matching(path: &Path, loaded: &LoadedData, cfg: &FitConfig) -> Result<crate::model::ModelParams> {
    let ck = Checkpoint::read(path)?;
    let h = &ck.header;
    if h.exposures != loaded.exposures || h.covariates != loaded.covariates {
        return Err(PlsiError::Argument(format!(
            "{} was fitted on different columns",
            path.display()
        )));
    }
    if h.standardization.is_some() != loaded.standardization.is_some() {
        return Err(PlsiError::Argument(
            "checkpoint and data disagree on exposure standardization".into(),
        ));
    }
    if h.mlp != cfg.mlp {
        return Err(PlsiError::Argument(format!(
            "{} has network {:?}, the configuration asks for {:?}",
            path.display(),
            h.mlp,
            cfg.mlp
        )));
    }
    Ok(ck.single()?.clone())
}

fn cmd_fit(a: &FitArgs) -> Result<()> {
    let start = Instant::now();
    let loaded = load_for(&a.data, a.warm_start.as_deref())?;
    let cfg = a.train.fit_config(a.data.family)?;
    let init = match &a.warm_start {
        Some(path) => Some(load_matching(path, &loaded, &cfg)?),
        None => None,
    };
    let result = fit_with(&loaded.dataset, &cfg, init.as_ref(), &mut |_| {})?;
    prepare_out(&a.out)?;
    let mut m = RunManifest::new("fit", to_json(&cfg));
    m.seeds.insert("fit".into(), cfg.seed);
    m.inputs.push(input_digest(&a.data.data, &loaded.sha256));
    let ck = Checkpoint {
        header: header_for(&loaded, &cfg, 1),
        models: vec![result.params.clone()],
    };
    ck.write(&a.out.join("model.ckpt"))?;
    m.outputs.push("model.ckpt".into());
    let labels = report::labels(&loaded.exposures, &loaded.covariates);
    let (text, csv) = report::coefficient_table(&result.params, &labels);
    write(&a.out, "coefficients.txt", &text, &mut m)?;
    write(&a.out, "coefficients.csv", &csv, &mut m)?;
    let mut hist = String::from("epoch,train_loss,val_loss\n");
    for (k, l) in result.loss_history.iter().enumerate() {
        let v = result.val_history.get(k).map_or(String::new(), f64::to_string);
        hist.push_str(&format!("{},{l},{v}\n", k + 1));
    }
    write(&a.out, "loss.csv", &hist, &mut m)?;
    m.timings.insert("total".into(), start.elapsed().as_secs_f64());
    m.write(&a.out)?;
    print!("{text}");
    Ok(())
}

fn cmd_bootstrap(a: &BootstrapArgs) -> Result<()> {
    let start = Instant::now();
    let loaded = load_for(&a.data, a.checkpoint.as_deref())?;
    let cfg = a.train.fit_config(a.data.family)?;
    let boot = BootstrapConfig {
        replicates: a.replicates,
        alpha: a.alpha,
        seed: a.bootstrap_seed.unwrap_or(cfg.seed),
        warm_start: a.replicate_warm_start,
        ..BootstrapConfig::default()
    };
    boot.validate()?;
    let point = match &a.checkpoint {
        Some(path) => load_matching(path, &loaded, &cfg)?,
        None => fit_with(&loaded.dataset, &cfg, None, &mut |_| {})?.params,
    };
    let fitted = Instant::now();
    let result = bootstrap_from_point(&loaded.dataset, &cfg, &point, &boot)?;

    prepare_out(&a.out)?;
    let mut m = RunManifest::new(
        "bootstrap",
        serde_json::json!({ "fit": to_json(&cfg), "bootstrap": to_json(&boot) }),
    );
    m.seeds.insert("fit".into(), cfg.seed);
    m.seeds.insert("bootstrap".into(), boot.seed);
    m.inputs.push(input_digest(&a.data.data, &loaded.sha256));

    let grid = &result.curve_band.grid;
    let range = (grid[0], grid[grid.len() - 1]);
    let mut header = header_for(&loaded, &cfg, 1);
    header.index_range = Some(range);
    header.alpha = Some(boot.alpha);
    Checkpoint {
        header: header.clone(),
        models: vec![point],
    }
    .write(&a.out.join("model.ckpt"))?;
    m.outputs.push("model.ckpt".into());
    header.models = result.replicate_models.len();
    header.replicate_ids = Some(result.replicate_ids.clone());
    Checkpoint {
        header,
        models: result.replicate_models.clone(),
    }
    .write(&a.out.join("replicates.ckpt"))?;
    m.outputs.push("replicates.ckpt".into());

    let labels = report::labels(&loaded.exposures, &loaded.covariates);
    let (text, csv) = report::inference_table(&result, &labels);
    write(&a.out, "inference.txt", &text, &mut m)?;
    write(&a.out, "inference.csv", &csv, &mut m)?;
    write(&a.out, "replicates.csv", &report::replicate_dump(&result, &labels), &mut m)?;
    m.timings.insert("point_fit".into(), (fitted - start).as_secs_f64());
    m.timings.insert("total".into(), start.elapsed().as_secs_f64());
    m.write(&a.out)?;
    if result.dropped > 0 {
        eprintln!(
            "warning: {} of {} bootstrap replicates dropped",
            result.dropped, result.requested
        );
    }
    print!("{text}");
    Ok(())
}

fn cmd_curve(a: &CurveArgs) -> Result<()> {
    let start = Instant::now();
    let missing = |name: &str| {
        PlsiError::Argument(format!(
            "{} has no {name}; run `plsi bootstrap --out {}` first",
            a.bootstrap.display(),
            a.bootstrap.display()
        ))
    };
    let model_path = a.bootstrap.join("model.ckpt");
    let reps_path = a.bootstrap.join("replicates.ckpt");
    if !model_path.exists() {
        return Err(missing("model.ckpt"));
    }
    if !reps_path.exists() {
        return Err(missing("replicates.ckpt"));
    }
    let point = Checkpoint::read(&model_path)?;
    let reps = Checkpoint::read(&reps_path)?;
    let alpha = a.alpha.or(reps.header.alpha).unwrap_or(0.05);
    let (lo, hi) = match reps.header.index_range.or(point.header.index_range) {
        Some((lo, hi)) => (a.grid_min.unwrap_or(lo), a.grid_max.unwrap_or(hi)),
        None => match (a.grid_min, a.grid_max) {
            (Some(lo), Some(hi)) => (lo, hi),
            _ => return Err(missing("index range (pass --grid-min and --grid-max)")),
        },
    };
    if !(lo <= hi) || a.grid_points == 0 {
        return Err(PlsiError::Argument("grid needs min <= max and at least one point".into()));
    }
    let grid = linspace(lo, hi, a.grid_points);
    let band = curve_band(&reps.models, &grid, alpha)?;
    let fitted = point.single()?.link(&grid)?;
    let truth: Option<SimMetadata> = match &a.truth {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| {
                PlsiError::Argument(format!("cannot read {}: {e}", path.display()))
            })?;
            Some(serde_json::from_str(&text)?)
        }
        None => None,
    };

    prepare_out(&a.out)?;
    let mut m = RunManifest::new(
        "curve",
        serde_json::json!({ "grid_min": lo, "grid_max": hi, "grid_points": a.grid_points, "alpha": alpha }),
    );
    let mut csv = String::from("s,g_hat,g_mean,lo,hi");
    let mut text = format!("{:>10}{:>10}{:>10}{:>10}{:>10}", "s", "g_hat", "g_mean", "lo", "hi");
    if truth.is_some() {
        csv.push_str(",g_true");
        text.push_str(&format!("{:>10}", "g_true"));
    }
    csv.push('\n');
    text.push('\n');
    for k in 0..grid.len() {
        csv.push_str(&format!(
            "{},{},{},{},{}",
            grid[k], fitted[k], band.mean[k], band.lo[k], band.hi[k]
        ));
        text.push_str(&format!(
            "{:>10}{:>10}{:>10}{:>10}{:>10}",
            crate::mcstudy::fmt4(grid[k]),
            crate::mcstudy::fmt4(fitted[k]),
            crate::mcstudy::fmt4(band.mean[k]),
            crate::mcstudy::fmt4(band.lo[k]),
            crate::mcstudy::fmt4(band.hi[k])
        ));
        if let Some(t) = &truth {
            let g = eval_true_link(t.scenario.link, grid[k]);
            csv.push_str(&format!(",{g}"));
            text.push_str(&format!("{:>10}", crate::mcstudy::fmt4(g)));
        }
        csv.push('\n');
        text.push('\n');
    }
    write(&a.out, "curve.csv", &csv, &mut m)?;
    write(&a.out, "curve.txt", &text, &mut m)?;
    m.timings.insert("total".into(), start.elapsed().as_secs_f64());
    m.write(&a.out)
}

fn load_grid(a: &McstudyArgs) -> Result<(GridConfig, Option<CellKey>)> {
    let (mut grid, mut cell) = if let Some(path) = &a.from_manifest {
        let prev = RunManifest::read(path)?;
        if prev.command != "mcstudy" {
            return Err(PlsiError::Argument(format!(
                "manifest records a `{}` run, not `mcstudy`",
                prev.command
            )));
        }
        let grid: GridConfig = serde_json::from_value(prev.config["grid"].clone())
            .map_err(|e| PlsiError::Argument(format!("manifest grid: {e}")))?;
        let cell = match prev.config["cell"].as_str() {
            Some(s) => Some(s.parse()?),
            None => None,
        };
        (grid, cell)
    } else if let Some(path) = &a.config {
        let text = fs::read_to_string(path)
            .map_err(|e| PlsiError::Argument(format!("cannot read {}: {e}", path.display())))?;
        let grid = toml::from_str(&text)
            .map_err(|e| PlsiError::Config(format!("{}: {}", path.display(), e.message())))?;
        (grid, None)
    } else {
        (GridConfig::default(), None)
    };
    if a.cell.is_some() {
        cell = a.cell;
    }
    if let Some(r) = a.replicates {
        grid.replicates = r;
    }
    if let Some(b) = a.bootstrap {
        grid.bootstrap = b;
    }
    if let Some(seed) = a.seed {
        grid.seed = seed;
    }
    Ok((grid, cell))
}

fn cell_label(key: &CellKey) -> String {
    format!("{},{},{}", key.link.as_str(), key.family, key.n)
}

fn cmd_mcstudy(a: &McstudyArgs) -> Result<()> {
    let start = Instant::now();
    let (grid, cell) = load_grid(a)?;
    let cells = grid.cells(cell)?;
    for c in &cells {
        c.validate()?;
    }
    prepare_out(&a.out)?;
    let mut m = RunManifest::new(
        "mcstudy",
        serde_json::json!({ "grid": to_json(&grid), "cell": cell.as_ref().map(cell_label) }),
    );
    m.seeds.insert("grid".into(), grid.seed);
    for c in &cells {
        let t = Instant::now();
        let result = run_cell(c)?;
        let label = c.label();
        m.seeds.insert(label.clone(), c.seed);
        let (text, csv) = format_table(&result.table);
        write(&a.out, &format!("{label}.txt"), &text, &mut m)?;
        write(&a.out, &format!("{label}.csv"), &csv, &mut m)?;
        write(&a.out, &format!("{label}_replicates.csv"), &format_records(&result), &mut m)?;
        m.timings.insert(label, t.elapsed().as_secs_f64());
        print!("{text}");
    }
    m.timings.insert("total".into(), start.elapsed().as_secs_f64());
    m.write(&a.out)
}

fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let start = Instant::now();
    let ck = Checkpoint::read(&a.checkpoint)?;
    let model = ck.single()?;
    let bytes = fs::read(&a.data)
        .map_err(|e| PlsiError::Argument(format!("cannot read {}: {e}", a.data.display())))?;
    let table = CsvTable::parse(&bytes)?;
    let (x, z) = io::design(
        &table,
        &ck.header.exposures,
        &ck.header.covariates,
        ck.header.standardization.as_ref(),
    )?;
    let s = model::index(model, &x)?;
    let g = model.link(&s)?;
    let eta = predict_eta(model, &x, &z)?;
    let mean = match ck.header.family {
        Family::Cox => None,
        f => Some(apply_mean_link(f, &eta)?),
    };
    let mut csv = String::from(if mean.is_some() {
        "index,link,eta,mean\n"
    } else {
        "index,link,eta\n"
    });
    for i in 0..s.len() {
        csv.push_str(&format!("{},{},{}", s[i], g[i], eta.0[i]));
        if let Some(mu) = &mean {
            csv.push_str(&format!(",{}", mu[i]));
        }
        csv.push('\n');
    }
    prepare_out(&a.out)?;
    let mut m = RunManifest::new("predict", serde_json::json!({ "checkpoint": a.checkpoint }));
    m.inputs.push(input_digest(&a.data, &io::sha256_hex(&bytes)));
    m.inputs.push(input_digest(
        &a.checkpoint,
        &io::sha256_hex(&fs::read(&a.checkpoint)?),
    ));
    write(&a.out, "predictions.csv", &csv, &mut m)?;
    m.timings.insert("total".into(), start.elapsed().as_secs_f64());
    m.write(&a.out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&PlsiError::Argument("x".into())), 2);
        assert_eq!(exit_code(&PlsiError::Config("x".into())), 2);
        assert_eq!(exit_code(&PlsiError::Data("x".into())), 3);
        assert_eq!(
            exit_code(&PlsiError::Divergence {
                epoch: 1,
                loss: f64::NAN,
                learning_rate: 1.0
            }),
            4
        );
        assert_eq!(
            exit_code(&PlsiError::InferenceFailure {
                dropped: 3,
                requested: 4
            }),
            5
        );
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fit.toml");
        fs::write(&path, "epochs = 7\nlearning_rate = 0.5\nhidden = [3]\n").unwrap();
        let cli = Cli::try_parse_from([
            "plsi", "fit", "--data", "d.csv", "--exposures", "x*", "--outcome", "y", "--out",
            "o", "--config", path.to_str().unwrap(), "--learning-rate", "0.01",
        ])
        .unwrap();
        let Command::Fit(a) = cli.command else {
            panic!("parsed the wrong subcommand")
        };
        let cfg = a.train.fit_config(Family::Gaussian).unwrap();
        assert_eq!(cfg.epochs, 7);
        assert_eq!(cfg.learning_rate, 0.01);
        assert_eq!(cfg.mlp.hidden, vec![3]);
    }
}
