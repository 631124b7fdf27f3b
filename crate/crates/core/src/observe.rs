//! Observables: standardization, autocorrelation-based delay selection,
//! delay-coordinate embedding and synthetic observation noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObserveError {
    #[error("component {component} is constant and cannot be standardized")]
    DegenerateSeries { component: usize },
    #[error("series of {available} samples is too short: {required} needed")]
    InsufficientLength { available: usize, required: usize },
    #[error("delay {tau} is not an integer multiple of the sampling step {dt}")]
    TauNotOnGrid { tau: f64, dt: f64 },
    #[error("embedding dimension {dim} is not a positive multiple of the observable count {observables}")]
    BadDimension { dim: usize, observables: usize },
    #[error("empty series")]
    Empty,
}

/// Uniformly sampled observations, one column per observable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub dt: f64,
    pub t0: f64,
    pub columns: Vec<Vec<f64>>,
}

impl TimeSeries {
    pub fn new(dt: f64, t0: f64, columns: Vec<Vec<f64>>) -> Self {
        debug_assert!(columns.windows(2).all(|w| w[0].len() == w[1].len()));
        Self { dt, t0, columns }
    }

    pub fn scalar(dt: f64, values: Vec<f64>) -> Self {
        Self::new(dt, 0.0, vec![values])
    }

    pub fn len(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_components(&self) -> usize {
        self.columns.len()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }
}

pub(crate) fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-observable affine map to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    pub fn identity(components: usize) -> Self {
        Self { mean: vec![0.0; components], std: vec![1.0; components] }
    }

    pub fn fit(series: &TimeSeries) -> Result<Self, ObserveError> {
        if series.is_empty() {
            return Err(ObserveError::Empty);
        }
        let mut mean = Vec::with_capacity(series.n_components());
        let mut std = Vec::with_capacity(series.n_components());
        for (component, col) in series.columns.iter().enumerate() {
            let (m, s) = mean_std(col);
            if !(s > 0.0) || s <= 1e-14 * m.abs() {
                return Err(ObserveError::DegenerateSeries { component });
            }
            mean.push(m);
            std.push(s);
        }
        Ok(Self { mean, std })
    }

    pub fn forward(&self, component: usize, value: f64) -> f64 {
        (value - self.mean[component]) / self.std[component]
    }

    pub fn inverse(&self, component: usize, value: f64) -> f64 {
        value * self.std[component] + self.mean[component]
    }

    pub fn apply(&self, series: &TimeSeries) -> TimeSeries {
        let columns = series
            .columns
            .iter()
            .enumerate()
            .map(|(c, col)| col.iter().map(|&v| self.forward(c, v)).collect())
            .collect();
        TimeSeries::new(series.dt, series.t0, columns)
    }

    pub fn invert(&self, series: &TimeSeries) -> TimeSeries {
        let columns = series
            .columns
            .iter()
            .enumerate()
            .map(|(c, col)| col.iter().map(|&v| self.inverse(c, v)).collect())
            .collect();
        TimeSeries::new(series.dt, series.t0, columns)
    }
}

pub fn standardize(series: &TimeSeries) -> Result<(TimeSeries, Standardization), ObserveError> {
    let st = Standardization::fit(series)?;
    Ok((st.apply(series), st))
}

/// Sampled autocorrelation function; `values[s]` is the correlation at lag `s * dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Autocorrelation {
    pub dt: f64,
    pub values: Vec<f64>,
}

impl Autocorrelation {
    pub fn max_lag(&self) -> f64 {
        (self.values.len() - 1) as f64 * self.dt
    }

    /// Correlation at the grid lag nearest to `lag`.
    pub fn at(&self, lag: f64) -> f64 {
        let i = (lag / self.dt).round() as usize;
        self.values[i.min(self.values.len() - 1)]
    }
}

/// Biased sample autocorrelation (autocovariance divided by N, normalized by
/// the lag-0 value). `max_lag` is clamped to half the series length.
pub fn autocorrelation(values: &[f64], dt: f64, max_lag: f64) -> Autocorrelation {
    let n = values.len();
    let max_s = ((max_lag / dt).round() as usize).min(n.saturating_sub(1) / 2);
    let (mean, _) = mean_std(values);
    let centered: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let c0: f64 = centered.iter().map(|v| v * v).sum();
    let values = (0..=max_s)
        .map(|s| {
            if c0 == 0.0 {
                return if s == 0 { 1.0 } else { 0.0 };
            }
            let c: f64 = centered[s..].iter().zip(&centered[..n - s]).map(|(a, b)| a * b).sum();
            c / c0
        })
        .collect();
    Autocorrelation { dt, values }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TauWarning {
    /// Correlation was already below target at the first lag.
    FirstLag,
    /// Correlation never reached the target; the maximum lag was returned.
    NoCrossing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauSelection {
    pub tau: f64,
    pub lag_samples: usize,
    pub achieved: f64,
    pub warning: Option<TauWarning>,
}

/// Smallest grid lag at which the correlation first falls to `target`.
///
/// Between the two bracketing grid points the one whose correlation is closer
/// to the target wins; the result is never below one sample.
pub fn select_tau(acf: &Autocorrelation, target: f64) -> TauSelection {
    let pick = |s: usize, warning| TauSelection {
        tau: s as f64 * acf.dt,
        lag_samples: s,
        achieved: acf.values[s],
        warning,
    };
    match acf.values.iter().skip(1).position(|&v| v <= target).map(|p| p + 1) {
        None => pick(acf.values.len() - 1, Some(TauWarning::NoCrossing)),
        Some(1) => pick(1, Some(TauWarning::FirstLag)),
        Some(s) => {
            if (acf.values[s - 1] - target).abs() < (acf.values[s] - target).abs() {
                pick(s - 1, None)
            } else {
                pick(s, None)
            }
        }
    }
}

/// Override path: snap a caller-chosen delay to the grid and report its correlation.
pub fn tau_on_grid(tau: f64, dt: f64) -> Result<usize, ObserveError> {
    let ratio = tau / dt;
    let lag = ratio.round();
    if lag < 1.0 || (ratio - lag).abs() > 1e-6 * ratio.max(1.0) {
        return Err(ObserveError::TauNotOnGrid { tau, dt });
    }
    Ok(lag as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingLayout {
    /// Delays of the first observable only.
    #[default]
    Single,
    /// All observables at each delay: `(w1(t), w2(t), w1(t-tau), w2(t-tau), ...)`.
    Interleaved,
}

/// Delay-coordinate samples, row-major `len() x dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedSeries {
    pub dim: usize,
    /// Number of observables interleaved per delay block.
    pub observables: usize,
    pub tau: f64,
    pub lag: usize,
    pub dt: f64,
    /// Time of the first sample.
    pub t0: f64,
    pub data: Vec<f64>,
}

impl EmbeddedSeries {
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn component(&self, j: usize) -> Vec<f64> {
        self.data.chunks_exact(self.dim).map(|s| s[j]).collect()
    }

    /// Rows `range` as a new embedded series.
    pub fn slice(&self, start: usize, end: usize) -> EmbeddedSeries {
        EmbeddedSeries {
            data: self.data[start * self.dim..end * self.dim].to_vec(),
            t0: self.time(start),
            ..self.clone()
        }
    }
}

pub fn embed(
    series: &TimeSeries,
    dim: usize,
    tau: f64,
    layout: EmbeddingLayout,
) -> Result<EmbeddedSeries, ObserveError> {
    let observables = match layout {
        EmbeddingLayout::Single => 1,
        EmbeddingLayout::Interleaved => series.n_components(),
    };
    if observables == 0 || dim == 0 || dim % observables != 0 {
        return Err(ObserveError::BadDimension { dim, observables });
    }
    let blocks = dim / observables;
    let lag = if blocks == 1 { tau_on_grid(tau, series.dt).unwrap_or(0) } else { tau_on_grid(tau, series.dt)? };
    let history = (blocks - 1) * lag;
    let n = series.len();
    if n <= history {
        return Err(ObserveError::InsufficientLength { available: n, required: history + 1 });
    }
    let count = n - history;
    let mut data = Vec::with_capacity(count * dim);
    for i in history..n {
        for b in 0..blocks {
            for col in &series.columns[..observables] {
                data.push(col[i - b * lag]);
            }
        }
    }
    Ok(EmbeddedSeries { dim, observables, tau, lag, dt: series.dt, t0: series.time(history), data })
}

/// Adds i.i.d. Gaussian noise with standard deviation `std_ratio * std(column)`.
pub fn add_observation_noise(series: &TimeSeries, std_ratio: f64, seed: u64) -> TimeSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let columns = series
        .columns
        .iter()
        .map(|col| {
            let (_, s) = mean_std(col);
            let sigma = std_ratio * s;
            if sigma == 0.0 || col.is_empty() {
                return col.clone();
            }
            col.iter()
                .map(|&v| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    v + sigma * z
                })
                .collect()
        })
        .collect();
    TimeSeries::new(series.dt, series.t0, columns)
}
