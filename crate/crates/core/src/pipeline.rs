//! End-to-end experiment: simulate, embed, differentiate, fit, predict, evaluate.

use std::error::Error as StdError;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::basis::select_centers;
use crate::config::{stream_seed, ExperimentConfig, Threshold};
use crate::deriv::{estimate_derivative, DerivativeConfig};
use crate::dynamics::{simulate, SimulationConfig};
use crate::evaluate::{
    delay_structure_error, density_compare, forecast_suite, laminar_lasting_times, DelayErrorReport,
    DensityComparison, ForecastReport, LaminarConfig, LaminarStats, Quantiles,
};
use crate::io::{self, EmbeddingMeta, SeriesMeta, Table};
use crate::model::{predict, save, Prediction, RfrModel};
use crate::observe::{add_observation_noise, embed, EmbeddedSeries, Standardization, TimeSeries};
use crate::regress::{fit_all, sample_rows};
use crate::saddle::{auto_threshold, stagger_step, SaddleError, SaddleRun};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Training rows, their derivative targets, and held-out reference rows, all
/// in standardized coordinates.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub standardization: Standardization,
    pub train: EmbeddedSeries,
    pub targets: EmbeddedSeries,
    pub heldout: EmbeddedSeries,
}

fn interleave(series: &TimeSeries) -> Vec<f64> {
    (0..series.len()).flat_map(|i| series.columns.iter().map(move |c| c[i])).collect()
}

fn deinterleave(values: &[f64], k: usize, dt: f64, t0: f64) -> TimeSeries {
    let columns = (0..k).map(|j| values.iter().skip(j).step_by(k).copied().collect()).collect();
    TimeSeries::new(dt, t0, columns)
}

fn trim(series: &TimeSeries, start: usize, len: usize) -> TimeSeries {
    let columns = series.columns.iter().map(|c| c[start..start + len].to_vec()).collect();
    TimeSeries::new(series.dt, series.time(start), columns)
}

/// Standardizes with statistics of the first `n_train` samples, estimates
/// derivatives, and embeds values and derivatives on the same rows.
pub fn embed_with_derivatives(
    observed: &TimeSeries,
    cfg: &ExperimentConfig,
    standardization: Option<&Standardization>,
) -> Result<(EmbeddedSeries, EmbeddedSeries, Standardization), Box<dyn StdError + Send + Sync>> {
    let st = match standardization {
        Some(s) => s.clone(),
        None => Standardization::fit(&trim(observed, 0, cfg.system.n_train.min(observed.len())))?,
    };
    let std_series = st.apply(observed);
    let k = std_series.n_components();
    let dcfg = DerivativeConfig::new(cfg.deriv.order, cfg.deriv.stride, observed.dt);
    let est = estimate_derivative(&interleave(&std_series), k, &dcfg)?;
    let hw = est.first_index;
    let values = trim(&std_series, hw, est.len());
    let rates = deinterleave(&est.values, k, observed.dt, values.t0);
    let x = embed(&values, cfg.embed.dim, cfg.embed.tau, cfg.embed.layout)?;
    let y = embed(&rates, cfg.embed.dim, cfg.embed.tau, cfg.embed.layout)?;
    Ok((x, y, st))
}

pub fn prepare(
    clean: &TimeSeries,
    observed: &TimeSeries,
    cfg: &ExperimentConfig,
) -> Result<PreparedData, Box<dyn StdError + Send + Sync>> {
    let (x, y, st) = embed_with_derivatives(observed, cfg, None)?;
    let (reference, _, _) = embed_with_derivatives(clean, cfg, Some(&st))?;
    let n = cfg.system.n_train;
    if x.len() < n {
        return Err(format!("only {} embedded samples for {} training rows", x.len(), n).into());
    }
    Ok(PreparedData {
        standardization: st,
        train: x.slice(0, n),
        targets: y.slice(0, n),
        heldout: reference.slice(n, reference.len()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub seconds: f64,
    pub outputs: Vec<FileRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: String,
    pub stages: Vec<StageRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub system: String,
    pub n_centers: usize,
    pub residual_mse: Vec<f64>,
    pub model_blew_up: bool,
    pub delay_error: Quantiles,
    pub training_delay_error_max: f64,
    pub density_overlap: f64,
    pub density_baseline: f64,
    pub valid_times: Vec<f64>,
    pub laminar_episodes: Option<usize>,
    pub laminar_tail_slope: Option<f64>,
    pub saddle_threshold: Option<f64>,
    pub saddle_success: Option<bool>,
}

#[derive(Debug)]
pub struct PipelineError {
    pub stage: String,
    pub source: Box<dyn StdError + Send + Sync>,
    pub manifest: RunManifest,
}

impl std::fmt::Display for PipelineError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "stage '{}' failed: {}", self.stage, self.source)
    }
}

impl StdError for PipelineError {
    fn source(&self) -> Option<&(dyn StdError + 'static)> {
        Some(self.source.as_ref())
    }
}

/// In-memory products of a run, for callers that inspect results directly.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub summary: RunSummary,
    pub model: RfrModel,
    pub data: PreparedData,
    pub prediction: Option<Prediction>,
    pub delay: Option<DelayErrorReport>,
    pub density: Option<DensityComparison>,
    pub forecasts: ForecastReport,
    pub laminar: Option<LaminarStats>,
    pub saddle: Option<SaddleRun>,
}

struct Recorder {
    dir: PathBuf,
    manifest: RunManifest,
}

type StageResult<T> = Result<T, Box<dyn StdError + Send + Sync>>;

impl Recorder {
    fn stage<T>(
        &mut self,
        name: &str,
        body: impl FnOnce(&Path) -> StageResult<(T, Vec<PathBuf>)>,
    ) -> Result<T, PipelineError> {
        let start = Instant::now();
        let outcome = body(&self.dir).and_then(|(value, files)| {
            let outputs = files
                .iter()
                .map(|p| {
                    Ok(FileRecord {
                        path: p.strip_prefix(&self.dir).unwrap_or(p).display().to_string(),
                        sha256: io::sha256_file(p)?,
                    })
                })
                .collect::<Result<Vec<_>, io::IoError>>()?;
            Ok((value, outputs))
        });
        match outcome {
            Ok((value, outputs)) => {
                self.manifest.stages.push(StageRecord {
                    name: name.to_string(),
                    seconds: start.elapsed().as_secs_f64(),
                    outputs,
                });
                Ok(value)
            }
            Err(source) => Err(PipelineError { stage: name.to_string(), source, manifest: self.manifest.clone() }),
        }
    }
}

fn with_sidecar(path: PathBuf) -> Vec<PathBuf> {
    let side = io::sidecar_path(&path);
    vec![path, side]
}

pub fn prediction_table(model: &RfrModel, prediction: &Prediction) -> Table {
    let d = model.dim;
    let mut headers = vec!["t".to_string()];
    headers.extend((1..=d).map(|i| format!("X{i}")));
    headers.push("X1_destd".into());
    let mut table = Table::new(headers);
    let mut row = vec![0.0; d + 2];
    for (i, s) in prediction.trajectory.states().enumerate() {
        row[0] = prediction.time(i);
        row[1..=d].copy_from_slice(s);
        row[d + 1] = model.destandardize_first(s[0]);
        table.push_row(&row);
    }
    table
}

/// Writes the metric files shared by `run` and `evaluate`.
pub fn write_metrics(
    dir: &Path,
    delay: Option<&DelayErrorReport>,
    density: Option<&DensityComparison>,
    forecasts: &ForecastReport,
    laminar: Option<&LaminarStats>,
) -> Result<Vec<PathBuf>, io::IoError> {
    let mut files = Vec::new();
    if let Some(delay) = delay {
        let mut t = Table::new(vec!["t".into(), "E".into()]);
        for (i, e) in delay.per_time.iter().enumerate() {
            t.push_row(&[i as f64 * forecasts.dt, *e]);
        }
        let p = dir.join("delay_error.csv");
        io::write_table(&p, &t)?;
        files.push(p);
        let mut h = Table::new(vec!["lo".into(), "hi".into(), "probability".into()]);
        for (i, pr) in delay.first_pair.probability.iter().enumerate() {
            h.push_row(&[delay.first_pair.edges[i], delay.first_pair.edges[i + 1], *pr]);
        }
        let p = dir.join("delay_histogram.csv");
        io::write_table(&p, &h)?;
        files.push(p);
    }
    if let Some(density) = density {
        let mut t = Table::new(vec!["lo".into(), "hi".into(), "model".into(), "actual".into()]);
        for i in 0..density.model.len() {
            t.push_row(&[density.edges[i], density.edges[i + 1], density.model[i], density.actual[i]]);
        }
        let p = dir.join("density.csv");
        io::write_table(&p, &t)?;
        files.push(p);
    }
    let mut curves = Table::new(vec!["init".into(), "t".into(), "error".into()]);
    let mut valid = Table::new(vec!["init".into(), "start_index".into(), "valid_time".into(), "blew_up".into()]);
    for (k, run) in forecasts.runs.iter().enumerate() {
        for (i, e) in run.error.iter().enumerate() {
            curves.push_row(&[k as f64, i as f64 * forecasts.dt, *e]);
        }
        valid.push_row(&[k as f64, run.start_index as f64, run.valid_time, if run.blew_up { 1.0 } else { 0.0 }]);
    }
    for (name, table) in [("forecast_error.csv", &curves), ("valid_times.csv", &valid)] {
        let p = dir.join(name);
        io::write_table(&p, table)?;
        files.push(p);
    }
    if let Some(lam) = laminar {
        let mut t = Table::new(vec!["duration_lo".into(), "log10_probability".into()]);
        for &(e, y) in &lam.histogram {
            t.push_row(&[e, y]);
        }
        let p = dir.join("laminar.csv");
        io::write_table(&p, &t)?;
        files.push(p);
    }
    Ok(files)
}

pub fn saddle_tables(model: &RfrModel, run: &SaddleRun) -> (Table, Table) {
    let traj = Prediction { trajectory: run.trajectory.clone(), dt_int: model.dt };
    let mut log = Table::new(vec!["segment".into(), "trials".into(), "E".into(), "noise_mag".into()]);
    for s in &run.segments {
        log.push_row(&[s.segment as f64, s.trials as f64, s.error, s.noise_magnitude]);
    }
    (prediction_table(model, &traj), log)
}

/// Runs every stage, writing artifacts and `manifest.json` into `out_dir`.
pub fn run_pipeline(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunOutcome, PipelineError> {
    let mut rec = Recorder {
        dir: out_dir.to_path_buf(),
        manifest: RunManifest { tool_version: TOOL_VERSION.into(), config: cfg.to_toml(), stages: Vec::new() },
    };
    let fail = |stage: &str, source: Box<dyn StdError + Send + Sync>, rec: &Recorder| PipelineError {
        stage: stage.into(),
        source,
        manifest: rec.manifest.clone(),
    };
    cfg.validate().map_err(|e| fail("validate", e.into(), &rec))?;
    fs::create_dir_all(out_dir).map_err(|e| fail("validate", e.into(), &rec))?;
    let dt = cfg.system.dt;

    let clean = rec.stage("simulate", |dir| {
        let n = cfg.samples_needed();
        let mut sim = SimulationConfig::new(cfg.system.name.kind(), n as f64 * dt, dt);
        sim.dt_int = cfg.system.dt_int;
        sim.transient = cfg.system.transient;
        sim.seed = stream_seed(cfg.seed, "simulate");
        let out = simulate(&sim)?;
        let meta = SeriesMeta {
            system: cfg.system.name.tag().into(),
            params: out.params.clone(),
            dt,
            dt_int: sim.dt_int,
            seed: sim.seed,
            transient: sim.transient,
            noise_std_ratio: 0.0,
        };
        let path = dir.join("series.csv");
        io::write_series(&path, &out.series, Some(&meta))?;
        Ok(((out.series, meta), with_sidecar(path)))
    })?;
    let (clean, series_meta) = clean;

    let observed = rec.stage("observe", |dir| {
        let mut files = Vec::new();
        let observed = if cfg.system.noise_std_ratio > 0.0 {
            let noisy = add_observation_noise(&clean, cfg.system.noise_std_ratio, stream_seed(cfg.seed, "noise"));
            let meta = SeriesMeta { noise_std_ratio: cfg.system.noise_std_ratio, ..series_meta.clone() };
            let path = dir.join("observed.csv");
            io::write_series(&path, &noisy, Some(&meta))?;
            files.extend(with_sidecar(path));
            noisy
        } else {
            clean.clone()
        };
        Ok((observed, files))
    })?;

    let data = rec.stage("embed", |dir| {
        let data = prepare(&clean, &observed, cfg)?;
        let meta = EmbeddingMeta {
            dim: cfg.embed.dim,
            observables: data.train.observables,
            tau: cfg.embed.tau,
            lag: data.train.lag,
            dt,
            layout: cfg.embed.layout,
            standardization: data.standardization.clone(),
            deriv_order: Some(cfg.deriv.order.as_u32()),
            deriv_stride: Some(cfg.deriv.stride),
        };
        let path = dir.join("embedded.csv");
        io::write_embedded(&path, &data.train, Some(&data.targets), &meta)?;
        Ok((data, with_sidecar(path)))
    })?;

    let (model, residual_mse) = rec.stage("fit", |dir| {
        let centers = select_centers(&data.train.data, cfg.embed.dim, cfg.fit.grid(), cfg.fit.center_cap)?;
        let problem = sample_rows(
            &data.train.data,
            &data.targets.data,
            cfg.embed.dim,
            cfg.fit.n_samples,
            cfg.fit.lambda,
            stream_seed(cfg.seed, "sample_rows"),
        )?;
        let fit = fit_all(&problem, &centers)?;
        let model = RfrModel {
            dim: cfg.embed.dim,
            observables: data.train.observables,
            tau: cfg.embed.tau,
            dt,
            centers,
            coefficients: fit.coefficients,
            standardization: data.standardization.clone(),
            provenance: cfg.provenance(),
        };
        let path = dir.join("model.rfr");
        save(&model, &path)?;
        Ok(((model, fit.residual_mse), vec![path]))
    })?;

    let prediction = rec.stage("predict", |dir| {
        let x0 = data.heldout.sample(0);
        match predict(&model, x0, cfg.evaluate.model_length, None) {
            Ok(p) => {
                let path = dir.join("prediction.csv");
                io::write_table(&path, &prediction_table(&model, &p))?;
                Ok((Some(p), vec![path]))
            }
            Err(crate::model::ModelError::Dynamics(_)) => Ok((None, Vec::new())),
            Err(e) => Err(e.into()),
        }
    })?;

    let (delay, density, forecasts, laminar, baseline, training_delay) = rec.stage("evaluate", |dir| {
        let lag = data.train.lag;
        let obs = data.train.observables;
        let delay = prediction.as_ref().map(|p| delay_structure_error(&p.trajectory.data, model.dim, obs, lag, 100));
        let actual_x1 = data.heldout.component(0);
        let density =
            prediction.as_ref().map(|p| density_compare(&p.trajectory.component(0), &actual_x1, cfg.evaluate.density_bins));
        let half = actual_x1.len() / 2;
        let baseline = density_compare(&actual_x1[..half], &actual_x1[half..], cfg.evaluate.density_bins).overlap;
        let training_delay = delay_structure_error(&data.train.data, model.dim, obs, lag, 10).quantiles.max;
        let forecasts = forecast_suite(
            &model,
            &data.heldout,
            cfg.evaluate.forecast_inits,
            cfg.evaluate.forecast_horizon,
            stream_seed(cfg.seed, "forecast"),
            0.0,
        );
        let laminar = match (&prediction, obs) {
            (Some(p), 2) => {
                let st = &model.standardization;
                let x1: Vec<f64> = p.trajectory.states().map(|s| st.inverse(0, s[0])).collect();
                let x2: Vec<f64> = p.trajectory.states().map(|s| st.inverse(1, s[1])).collect();
                let lc = LaminarConfig {
                    threshold: cfg.evaluate.laminar_threshold,
                    bin_width: cfg.evaluate.laminar_bin_width,
                    tail_min: cfg.evaluate.laminar_tail_min,
                };
                Some(laminar_lasting_times(&x1, &x2, dt, &lc))
            }
            _ => None,
        };
        let files = write_metrics(dir, delay.as_ref(), density.as_ref(), &forecasts, laminar.as_ref())?;
        Ok(((delay, density, forecasts, laminar, baseline, training_delay), files))
    })?;

    let mut saddle_threshold = None;
    let saddle = if cfg.saddle.enabled {
        let seed = stream_seed(cfg.seed, "saddle");
        let run = rec.stage("saddle", |dir| {
            let threshold = match cfg.saddle.threshold {
                Threshold::Value(v) => v,
                Threshold::Auto => auto_threshold(&model, &data.heldout, 20, cfg.saddle.segment_length),
            };
            saddle_threshold = Some(threshold);
            let run = match stagger_step(&model, data.heldout.sample(0), &cfg.saddle.to_config(threshold, seed)) {
                Ok(run) => run,
                Err(SaddleError::SaddleEscape { run, .. }) => *run,
                Err(e) => return Err(e.into()),
            };
            let (traj, log) = saddle_tables(&model, &run);
            let p1 = dir.join("saddle.csv");
            let p2 = dir.join("saddle_segments.csv");
            io::write_table(&p1, &traj)?;
            io::write_table(&p2, &log)?;
            Ok((run, vec![p1, p2]))
        })?;
        Some(run)
    } else {
        None
    };

    let summary = RunSummary {
        system: cfg.system.name.tag().into(),
        n_centers: model.centers.len(),
        residual_mse,
        model_blew_up: prediction.is_none(),
        delay_error: delay.as_ref().map_or(Quantiles::of(&[]), |d| d.quantiles),
        training_delay_error_max: training_delay,
        density_overlap: density.as_ref().map_or(0.0, |d| d.overlap),
        density_baseline: baseline,
        valid_times: forecasts.valid_times(),
        laminar_episodes: laminar.as_ref().map(|l| l.durations.len()),
        laminar_tail_slope: laminar.as_ref().and_then(|l| l.tail_slope),
        saddle_threshold,
        saddle_success: saddle.as_ref().map(|s| s.success),
    };
    let summary_path = out_dir.join("summary.json");
    io::write_json(&summary_path, &summary).map_err(|e| fail("summary", e.into(), &rec))?;
    io::write_json(&out_dir.join("manifest.json"), &rec.manifest).map_err(|e| fail("summary", e.into(), &rec))?;

    Ok(RunOutcome {
        manifest: rec.manifest,
        summary,
        model,
        data,
        prediction,
        delay,
        density,
        forecasts,
        laminar,
        saddle,
    })
}

/// Derivative error against the simulator's exact rates, per stride, on a
/// noisy standardized first observable.
pub fn deriv_scan(
    system: crate::dynamics::SystemKind,
    samples: usize,
    dt: f64,
    noise_std_ratio: f64,
    seed: u64,
    order: crate::deriv::StencilOrder,
    strides: impl IntoIterator<Item = usize>,
) -> Result<Vec<crate::deriv::StrideError>, Box<dyn StdError + Send + Sync>> {
    let mut sim = SimulationConfig::new(system, samples as f64 * dt, dt);
    sim.seed = stream_seed(seed, "simulate");
    let out = simulate(&sim)?;
    let noisy = add_observation_noise(&out.series, noise_std_ratio, stream_seed(seed, "noise"));
    let st = Standardization::fit(&noisy)?;
    let values: Vec<f64> = noisy.columns[0].iter().map(|&v| st.forward(0, v)).collect();
    let truth: Vec<f64> = out.derivative[0].iter().map(|&v| v / st.std[0]).collect();
    Ok(crate::deriv::scan_stride(&values, &truth, dt, order, strides)?)
}
