//! `rfr` command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use rfr::basis::{select_centers, GridSpec, NeighborhoodNorm, DEFAULT_CENTER_CAP};
use rfr::config::{preset, stream_seed, ConfigError, ExperimentConfig, Preset, SystemTag, Threshold};
use rfr::deriv::{best_stride, StencilOrder};
use rfr::dynamics::{simulate, DynamicsError, SimulationConfig};
use rfr::evaluate::{delay_structure_error, density_compare, forecast_suite, DEFAULT_DENSITY_BINS};
use rfr::io::{self, EmbeddingMeta, IoError, SeriesMeta, Table};
use rfr::model::{self, ModelError, RfrModel};
use rfr::observe::{add_observation_noise, EmbeddingLayout, ObserveError};
use rfr::pipeline::{self, PipelineError};
use rfr::regress::{fit_all, sample_rows, RegressError};
use rfr::saddle::{auto_threshold, stagger_step, SaddleConfig, SaddleError};

#[derive(Debug, Error)]
enum Failure {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{0}")]
    Io(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 2,
            Failure::Numeric(_) => 3,
            Failure::Io(_) => 4,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Validation(e.to_string())
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Dynamics(_) => Failure::Numeric(e.to_string()),
            ModelError::Shape(_) => Failure::Validation(e.to_string()),
            _ => Failure::Io(e.to_string()),
        }
    }
}

impl From<DynamicsError> for Failure {
    fn from(e: DynamicsError) -> Self {
        match e {
            DynamicsError::NonFiniteState { .. } => Failure::Numeric(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<RegressError> for Failure {
    fn from(e: RegressError) -> Self {
        match e {
            RegressError::SingularSystem { .. } => Failure::Numeric(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<SaddleError> for Failure {
    fn from(e: SaddleError) -> Self {
        match e {
            SaddleError::InvalidConfig(_) => Failure::Validation(e.to_string()),
            _ => Failure::Numeric(e.to_string()),
        }
    }
}

macro_rules! validation_from {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Failure::Validation(e.to_string())
            }
        }
    )*};
}
validation_from!(ObserveError, rfr::deriv::DerivError, rfr::basis::BasisError);

/// Classifies a boxed stage error by its concrete type.
fn classify(source: &(dyn std::error::Error + Send + Sync + 'static)) -> Failure {
    let msg = source.to_string();
    if source.is::<ConfigError>() || source.is::<ObserveError>() || source.is::<rfr::basis::BasisError>() {
        Failure::Validation(msg)
    } else if source.is::<IoError>() {
        Failure::Io(msg)
    } else if let Some(e) = source.downcast_ref::<ModelError>() {
        match e {
            ModelError::Io { .. } => Failure::Io(msg),
            _ => Failure::Numeric(msg),
        }
    } else if let Some(e) = source.downcast_ref::<RegressError>() {
        match e {
            RegressError::SingularSystem { .. } => Failure::Numeric(msg),
            _ => Failure::Validation(msg),
        }
    } else if let Some(e) = source.downcast_ref::<SaddleError>() {
        match e {
            SaddleError::InvalidConfig(_) => Failure::Validation(msg),
            _ => Failure::Numeric(msg),
        }
    } else {
        Failure::Numeric(msg)
    }
}

#[derive(Parser)]
#[command(name = "rfr", version, about = "Learn ODE models of chaotic systems from scalar time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a reference system and write its observables.
    Simulate(SimulateArgs),
    /// Standardize, differentiate and delay-embed a series.
    Embed(EmbedArgs),
    /// Fit a model to an embedded series with derivative columns.
    Fit(FitArgs),
    /// Integrate a fitted model from an initial state.
    Predict(PredictArgs),
    /// Delay-structure error, density overlap and forecast valid times.
    Evaluate(EvaluateArgs),
    /// Long trajectory near a chaotic saddle by stagger-and-step.
    Saddle(SaddleArgs),
    /// Run the full pipeline from a configuration.
    Run(RunArgs),
    /// Derivative error against the stride of the stencil.
    DerivScan(DerivScanArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    system: SystemTag,
    /// Observed duration after the transient.
    #[arg(long = "T", value_name = "T")]
    t_total: f64,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    dt_int: Option<f64>,
    #[arg(long, default_value_t = 1000.0)]
    transient: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Observation noise as a fraction of each observable's standard deviation.
    #[arg(long, default_value_t = 0.0)]
    noise_std_ratio: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long = "in", value_name = "CSV")]
    input: PathBuf,
    #[arg(long)]
    dim: usize,
    #[arg(long)]
    tau: f64,
    /// `single` or `interleaved`; defaults to interleaved for multi-channel input.
    #[arg(long)]
    layout: Option<String>,
    /// Samples used for the standardization statistics (default: all).
    #[arg(long)]
    train: Option<usize>,
    #[arg(long, default_value_t = 6)]
    deriv_order: u32,
    #[arg(long, default_value_t = 1)]
    deriv_stride: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long = "in", value_name = "CSV")]
    input: PathBuf,
    /// Lattice spacing of the center grid.
    #[arg(long = "grid", value_name = "DELTA")]
    delta: f64,
    #[arg(long, default_value_t = 3)]
    m: u32,
    #[arg(long, default_value_t = 0.1)]
    p: f64,
    #[arg(long)]
    lambda: f64,
    /// Regression rows sampled from the embedded series.
    #[arg(long = "n-samples", value_name = "N")]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_CENTER_CAP)]
    center_cap: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InitArgs {
    /// Initial state as comma-separated standardized coordinates.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "init")]
    x0: Option<Vec<f64>>,
    /// Embedded CSV supplying the initial state.
    #[arg(long = "init-from", value_name = "CSV")]
    init: Option<PathBuf>,
    /// Row of `--init-from` to start from.
    #[arg(long, default_value_t = 0)]
    row: usize,
}

impl InitArgs {
    fn state(&self, dim: usize) -> Result<Vec<f64>, Failure> {
        let x0 = match (&self.x0, &self.init) {
            (Some(x0), _) => x0.clone(),
            (None, Some(path)) => {
                let file = io::read_embedded(path)?;
                if self.row >= file.embedded.len() {
                    return Err(Failure::Validation(format!(
                        "row {} out of range for {} samples",
                        self.row,
                        file.embedded.len()
                    )));
                }
                file.embedded.sample(self.row).to_vec()
            }
            (None, None) => return Err(Failure::Validation("give --x0 or --init-from".into())),
        };
        if x0.len() != dim {
            return Err(Failure::Validation(format!("initial state has {} entries, model needs {dim}", x0.len())));
        }
        Ok(x0)
    }
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    init: InitArgs,
    #[arg(long)]
    horizon: f64,
    #[arg(long)]
    dt_int: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Embedded held-out series in the model's standardized coordinates.
    #[arg(long)]
    actual: PathBuf,
    /// Model trajectory written by `predict`; otherwise one is integrated
    /// from the first actual state for `--length` time units.
    #[arg(long)]
    prediction: Option<PathBuf>,
    #[arg(long, default_value_t = 1000.0)]
    length: f64,
    #[arg(long, default_value_t = 10)]
    inits: usize,
    #[arg(long, default_value_t = 20.0)]
    horizon: f64,
    #[arg(long, default_value_t = DEFAULT_DENSITY_BINS)]
    bins: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_name = "DIR")]
    report: PathBuf,
}

#[derive(Args)]
struct SaddleArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    init: InitArgs,
    /// `inf`, `auto` (needs `--actual`) or a number.
    #[arg(long, default_value = "inf")]
    threshold: Threshold,
    #[arg(long)]
    actual: Option<PathBuf>,
    #[arg(long, default_value_t = 50.0)]
    segment_length: f64,
    #[arg(long, default_value_t = 25.0)]
    keep_length: f64,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Total trajectory length in model time units.
    #[arg(long, default_value_t = 1000.0)]
    length: f64,
    #[arg(long)]
    refine: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration; `--system` alone uses the preset.
    #[arg(long, required_unless_present = "system")]
    config: Option<PathBuf>,
    #[arg(long, conflicts_with = "config")]
    system: Option<SystemTag>,
    #[arg(long, default_value = "desk")]
    preset: Preset,
    /// Override one key, e.g. `fit.lambda=1e-6`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct DerivScanArgs {
    #[arg(long, default_value = "ks")]
    system: SystemTag,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 0.1)]
    noise_std_ratio: f64,
    #[arg(long, default_value_t = 6)]
    deriv_order: u32,
    #[arg(long, default_value_t = 1)]
    min_stride: usize,
    #[arg(long, default_value_t = 16)]
    max_stride: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn simulate_cmd(a: SimulateArgs) -> Result<(), Failure> {
    let kind = a.system.kind();
    let dt = a.dt.unwrap_or(rfr::config::table1_defaults(a.system).system.dt);
    let mut sim = SimulationConfig::new(kind, a.t_total, dt);
    if let Some(h) = a.dt_int {
        sim.dt_int = h;
    }
    sim.transient = a.transient;
    sim.seed = stream_seed(a.seed, "simulate");
    let out = simulate(&sim)?;
    let noise = if a.system == SystemTag::NoisyKs && a.noise_std_ratio == 0.0 { 0.1 } else { a.noise_std_ratio };
    let series = if noise > 0.0 {
        add_observation_noise(&out.series, noise, stream_seed(a.seed, "noise"))
    } else {
        out.series
    };
    let meta = SeriesMeta {
        system: a.system.tag().into(),
        params: out.params,
        dt,
        dt_int: sim.dt_int,
        seed: sim.seed,
        transient: sim.transient,
        noise_std_ratio: noise,
    };
    io::write_series(&a.out, &series, Some(&meta))?;
    Ok(())
}

fn embed_cmd(a: EmbedArgs) -> Result<(), Failure> {
    let (series, _) = io::read_series(&a.input)?;
    let k = series.n_components();
    let mut cfg = rfr::config::table1_defaults(SystemTag::Ks);
    cfg.system.dt = series.dt;
    cfg.system.n_train = a.train.unwrap_or(series.len());
    cfg.embed.dim = a.dim;
    cfg.embed.tau = a.tau;
    cfg.embed.layout = match a.layout.as_deref() {
        None if k > 1 => EmbeddingLayout::Interleaved,
        None | Some("single") => EmbeddingLayout::Single,
        Some("interleaved") => EmbeddingLayout::Interleaved,
        Some(other) => return Err(Failure::Validation(format!("unknown layout '{other}'"))),
    };
    let k = if cfg.embed.layout == EmbeddingLayout::Single { 1 } else { k };
    cfg.embed.pair_offset = k;
    cfg.deriv.order = StencilOrder::try_from(a.deriv_order)?;
    cfg.deriv.stride = a.deriv_stride;
    let (x, y, st) = pipeline::embed_with_derivatives(&series, &cfg, None).map_err(|e| classify(e.as_ref()))?;
    let meta = EmbeddingMeta {
        dim: a.dim,
        observables: k,
        tau: a.tau,
        lag: x.lag,
        dt: series.dt,
        layout: cfg.embed.layout,
        standardization: st,
        deriv_order: Some(a.deriv_order),
        deriv_stride: Some(a.deriv_stride),
    };
    io::write_embedded(&a.out, &x, Some(&y), &meta)?;
    Ok(())
}

fn fit_cmd(a: FitArgs) -> Result<(), Failure> {
    let file = io::read_embedded(&a.input)?;
    let targets = file
        .targets
        .ok_or_else(|| Failure::Validation(format!("{} has no dX columns", a.input.display())))?;
    let e = &file.embedded;
    let grid = GridSpec { delta: a.delta, m: a.m, p: a.p, norm: NeighborhoodNorm::default(), anchor: 0.0 };
    let centers = select_centers(&e.data, e.dim, grid, a.center_cap)?;
    let problem = sample_rows(&e.data, &targets, e.dim, a.n, a.lambda, stream_seed(a.seed, "sample_rows"))?;
    let fit = fit_all(&problem, &centers)?;
    let provenance = vec![
        ("fit.delta".into(), a.delta.to_string()),
        ("fit.m".into(), a.m.to_string()),
        ("fit.p".into(), a.p.to_string()),
        ("fit.lambda".into(), a.lambda.to_string()),
        ("fit.n_samples".into(), a.n.to_string()),
        ("seed".into(), a.seed.to_string()),
        ("source".into(), a.input.display().to_string()),
    ];
    let m = RfrModel {
        dim: e.dim,
        observables: e.observables,
        tau: e.tau,
        dt: e.dt,
        centers,
        coefficients: fit.coefficients,
        standardization: file.meta.standardization,
        provenance,
    };
    model::save(&m, &a.out)?;
    println!("J = {}", m.centers.len());
    println!("residual mse {:?}", fit.residual_mse);
    Ok(())
}

fn predict_cmd(a: PredictArgs) -> Result<(), Failure> {
    let m = model::load(&a.model)?;
    let x0 = a.init.state(m.dim)?;
    let p = model::predict(&m, &x0, a.horizon, a.dt_int)?;
    io::write_table(&a.out, &pipeline::prediction_table(&m, &p))?;
    Ok(())
}

fn read_prediction(path: &Path, dim: usize) -> Result<Vec<f64>, Failure> {
    let t = io::read_table(path)?;
    let cols: Vec<&[f64]> = (1..=dim)
        .map(|i| t.column(&format!("X{i}")).ok_or_else(|| Failure::Validation(format!("missing column X{i}"))))
        .collect::<Result<_, _>>()?;
    Ok((0..t.rows()).flat_map(|r| cols.iter().map(move |c| c[r])).collect())
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<(), Failure> {
    let m = model::load(&a.model)?;
    let actual = io::read_embedded(&a.actual)?.embedded;
    if actual.dim != m.dim {
        return Err(Failure::Validation(format!("actual has dimension {}, model {}", actual.dim, m.dim)));
    }
    std::fs::create_dir_all(&a.report).map_err(|e| Failure::Io(e.to_string()))?;
    let states = match a.prediction.as_deref() {
        Some(p) => Some(read_prediction(p, m.dim)?),
        None => match model::predict(&m, actual.sample(0), a.length, None) {
            Ok(p) => Some(p.trajectory.data),
            Err(ModelError::Dynamics(e)) => {
                eprintln!("model trajectory blew up: {e}");
                None
            }
            Err(e) => return Err(e.into()),
        },
    };
    let delay = states.as_ref().map(|s| delay_structure_error(s, m.dim, m.observables, actual.lag, 100));
    let density = states.as_ref().map(|s| {
        let x1: Vec<f64> = s.iter().step_by(m.dim).copied().collect();
        density_compare(&x1, &actual.component(0), a.bins)
    });
    let forecasts = forecast_suite(&m, &actual, a.inits, a.horizon, stream_seed(a.seed, "forecast"), 0.0);
    pipeline::write_metrics(&a.report, delay.as_ref(), density.as_ref(), &forecasts, None)?;
    if let Some(d) = &delay {
        println!("delay error median {:.6} p95 {:.6} max {:.6}", d.quantiles.median, d.quantiles.p95, d.quantiles.max);
    }
    if let Some(d) = &density {
        println!("density overlap {:.4}", d.overlap);
    }
    println!("valid times {:?}", forecasts.valid_times());
    Ok(())
}

fn saddle_cmd(a: SaddleArgs) -> Result<(), Failure> {
    let m = model::load(&a.model)?;
    let x0 = a.init.state(m.dim)?;
    let threshold = match a.threshold {
        Threshold::Value(v) => v,
        Threshold::Auto => {
            let path = a.actual.as_ref().ok_or_else(|| Failure::Validation("--threshold auto needs --actual".into()))?;
            let actual = io::read_embedded(path)?.embedded;
            auto_threshold(&m, &actual, 20, a.segment_length)
        }
    };
    let cfg = SaddleConfig {
        segment_length: a.segment_length,
        keep_length: a.keep_length,
        trials_max: a.trials,
        threshold,
        total_length: a.length,
        seed: stream_seed(a.seed, "saddle"),
        refine: a.refine,
        ..SaddleConfig::default()
    };
    let write = |run: &rfr::saddle::SaddleRun| -> Result<(), Failure> {
        let (traj, log) = pipeline::saddle_tables(&m, run);
        io::write_table(&a.out, &traj)?;
        io::write_table(&sidecar_log(&a.out), &log)?;
        Ok(())
    };
    match stagger_step(&m, &x0, &cfg) {
        Ok(run) => write(&run),
        Err(SaddleError::SaddleEscape { segment, best_error, run }) => {
            write(&run)?;
            Err(Failure::Numeric(format!(
                "trajectory escaped at segment {segment} (best E {best_error:.4} > threshold {threshold:.4})"
            )))
        }
        Err(e) => Err(e.into()),
    }
}

fn sidecar_log(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}_segments.csv"))
}

fn run_cmd(a: RunArgs) -> Result<(), Failure> {
    let mut cfg = match (&a.config, a.system) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
            ExperimentConfig::from_toml(&text)?
        }
        (None, Some(system)) => preset(system, a.preset),
        (None, None) => return Err(Failure::Validation("give --config or --system".into())),
    };
    for o in &a.overrides {
        cfg.set(o)?;
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    match pipeline::run_pipeline(&cfg, &a.out_dir) {
        Ok(outcome) => {
            let s = &outcome.summary;
            println!("centers {}", s.n_centers);
            println!("delay error median {:.6}", s.delay_error.median);
            println!("density overlap {:.4} (baseline {:.4})", s.density_overlap, s.density_baseline);
            println!("valid times {:?}", s.valid_times);
            if s.model_blew_up {
                return Err(Failure::Numeric("model trajectory blew up".into()));
            }
            Ok(())
        }
        Err(PipelineError { stage, source, manifest }) => {
            if a.out_dir.is_dir() {
                let _ = io::write_json(&a.out_dir.join("manifest.json"), &manifest);
            }
            let f = classify(source.as_ref());
            Err(match f {
                Failure::Validation(m) => Failure::Validation(format!("{stage}: {m}")),
                Failure::Numeric(m) => Failure::Numeric(format!("{stage}: {m}")),
                Failure::Io(m) => Failure::Io(format!("{stage}: {m}")),
            })
        }
    }
}

fn deriv_scan_cmd(a: DerivScanArgs) -> Result<(), Failure> {
    if a.min_stride == 0 || a.min_stride > a.max_stride {
        return Err(Failure::Validation("need 1 <= min-stride <= max-stride".into()));
    }
    let dt = rfr::config::table1_defaults(a.system).system.dt;
    let order = StencilOrder::try_from(a.deriv_order)?;
    let scan = pipeline::deriv_scan(a.system.kind(), a.samples, dt, a.noise_std_ratio, a.seed, order, a.min_stride..=a.max_stride)
        .map_err(|e| classify(e.as_ref()))?;
    let mut table = Table::new(vec!["l".into(), "error_std".into()]);
    for s in &scan {
        table.push_row(&[s.stride as f64, s.error_std]);
    }
    if let Some(best) = best_stride(&scan) {
        println!("order {}: best stride {} (error std {:.4})", a.deriv_order, best.stride, best.error_std);
    }
    io::write_table(&a.out, &table)?;
    Ok(())
}

fn init_threads() -> Result<(), Failure> {
    if let Ok(v) = std::env::var("RFR_THREADS") {
        let n: usize = v.parse().map_err(|_| Failure::Validation(format!("RFR_THREADS must be a count, got '{v}'")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Validation(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_threads().and_then(|()| match cli.command {
        Command::Simulate(a) => simulate_cmd(a),
        Command::Embed(a) => embed_cmd(a),
        Command::Fit(a) => fit_cmd(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Saddle(a) => saddle_cmd(a),
        Command::Run(a) => run_cmd(a),
        Command::DerivScan(a) => deriv_scan_cmd(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
