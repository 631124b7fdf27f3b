//! Model quality metrics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{predict, RfrModel};
use crate::observe::EmbeddedSeries;

/// Probability histogram over fixed bin edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub probability: Vec<f64>,
}

impl Histogram {
    /// Bins `values` over `[lo, hi]` with `bins` equal cells; the top edge is inclusive.
    pub fn with_range(values: &[f64], lo: f64, hi: f64, bins: usize) -> Self {
        let bins = bins.max(1);
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        let edges = (0..=bins).map(|i| lo + i as f64 * width).collect();
        let mut counts = vec![0usize; bins];
        let mut total = 0usize;
        for &v in values.iter().filter(|v| v.is_finite()) {
            let i = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
            counts[i] += 1;
            total += 1;
        }
        let probability = counts.iter().map(|&c| if total > 0 { c as f64 / total as f64 } else { 0.0 }).collect();
        Self { edges, probability }
    }

    pub fn new(values: &[f64], bins: usize) -> Self {
        let (lo, hi) = finite_range(values.iter().copied());
        Self::with_range(values, lo, hi, bins)
    }
}

fn finite_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub min: f64,
    pub median: f64,
    pub p95: f64,
    pub max: f64,
    pub mean: f64,
}

impl Quantiles {
    /// Nearest-rank quantiles; NaN entries are treated as +infinity.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self { min: f64::NAN, median: f64::NAN, p95: f64::NAN, max: f64::NAN, mean: f64::NAN };
        }
        let mut v: Vec<f64> = values.iter().map(|&x| if x.is_nan() { f64::INFINITY } else { x }).collect();
        v.sort_by(f64::total_cmp);
        let at = |q: f64| v[((q * (v.len() - 1) as f64).round() as usize).min(v.len() - 1)];
        Self {
            min: v[0],
            median: at(0.5),
            p95: at(0.95),
            max: v[v.len() - 1],
            mean: v.iter().sum::<f64>() / v.len() as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayErrorReport {
    /// `E(t)` for every `t` whose shifted partner exists.
    pub per_time: Vec<f64>,
    pub quantiles: Quantiles,
    /// Distribution of `X_1(t) - X_{1+I}(t + tau)`.
    pub first_pair: Histogram,
}

/// `E(t) = max_i |X_i(t) - X_{i+I}(t + tau)|` for row-major states sampled on
/// the observation grid, where `tau = lag` samples and `I = observables`.
pub fn delay_errors(states: &[f64], dim: usize, observables: usize, lag: usize) -> Vec<f64> {
    let n = states.len() / dim;
    if n <= lag || observables >= dim {
        return Vec::new();
    }
    (0..n - lag)
        .map(|t| {
            let now = &states[t * dim..(t + 1) * dim];
            let later = &states[(t + lag) * dim..(t + lag + 1) * dim];
            (0..dim - observables).map(|i| (now[i] - later[i + observables]).abs()).fold(0.0, f64::max)
        })
        .collect()
}

pub fn delay_structure_error(
    states: &[f64],
    dim: usize,
    observables: usize,
    lag: usize,
    bins: usize,
) -> DelayErrorReport {
    let per_time = delay_errors(states, dim, observables, lag);
    let n = states.len() / dim;
    let diffs: Vec<f64> = if n > lag && observables < dim {
        (0..n - lag).map(|t| states[t * dim] - states[(t + lag) * dim + observables]).collect()
    } else {
        Vec::new()
    };
    DelayErrorReport { quantiles: Quantiles::of(&per_time), first_pair: Histogram::new(&diffs, bins), per_time }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityComparison {
    pub edges: Vec<f64>,
    pub model: Vec<f64>,
    pub actual: Vec<f64>,
    /// Histogram intersection, in `[0, 1]`.
    pub overlap: f64,
}

pub const DEFAULT_DENSITY_BINS: usize = 100;

/// Shared-bin densities over the pooled range and their intersection.
pub fn density_compare(model: &[f64], actual: &[f64], bins: usize) -> DensityComparison {
    let (lo, hi) = finite_range(model.iter().chain(actual).copied());
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) };
    let m = Histogram::with_range(model, lo, hi, bins);
    let a = Histogram::with_range(actual, lo, hi, bins);
    let overlap = m.probability.iter().zip(&a.probability).map(|(p, q)| p.min(*q)).sum::<f64>().min(1.0);
    DensityComparison { edges: m.edges, model: m.probability, actual: a.probability, overlap }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRun {
    pub start_index: usize,
    /// `|X_1^model(t) - X_1^actual(t)|` per output step; shorter on blow-up.
    pub error: Vec<f64>,
    pub valid_time: f64,
    pub blew_up: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub dt: f64,
    pub horizon: f64,
    pub threshold: f64,
    pub runs: Vec<ForecastRun>,
}

impl ForecastReport {
    pub fn valid_times(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.valid_time).collect()
    }
}

/// Fraction of the observable's standard deviation used as the validity bound.
pub const VALID_FRACTION: f64 = 0.5;

/// Time of the first step at which `error` exceeds `threshold`; the full span if never.
pub fn valid_time(error: &[f64], dt: f64, threshold: f64) -> f64 {
    match error.iter().position(|&e| !(e <= threshold)) {
        Some(i) => i as f64 * dt,
        None => error.len().saturating_sub(1) as f64 * dt,
    }
}

/// Forecasts from `n_init` random embedded states, one per disjoint window of
/// the actual series, comparing observable 1 against the truth.
pub fn forecast_suite(
    model: &RfrModel,
    actual: &EmbeddedSeries,
    n_init: usize,
    horizon: f64,
    seed: u64,
    perturbation: f64,
) -> ForecastReport {
    let steps = (horizon / actual.dt).round() as usize;
    let x1 = actual.component(0);
    let std = crate::observe::mean_std(&x1).1;
    let threshold = VALID_FRACTION * std;
    let window = actual.len() / n_init.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts: Vec<usize> = if window > steps {
        (0..n_init).map(|w| w * window + rng.random_range(0..window - steps)).collect()
    } else {
        Vec::new()
    };
    let noise: Vec<Vec<f64>> = starts
        .iter()
        .map(|_| (0..actual.dim).map(|_| perturbation * rng.sample::<f64, _>(rand_distr::StandardNormal)).collect())
        .collect();
    let runs = starts
        .par_iter()
        .zip(&noise)
        .map(|(&start, eps)| {
            let x0: Vec<f64> = actual.sample(start).iter().zip(eps).map(|(x, e)| x + e).collect();
            let truth = &x1[start..=start + steps];
            let (error, blew_up) = match predict(model, &x0, horizon, None) {
                Ok(p) => (p.trajectory.states().zip(truth).map(|(s, t)| (s[0] - t).abs()).collect(), false),
                Err(_) => (vec![f64::INFINITY], true),
            };
            let vt = if blew_up { 0.0 } else { valid_time(&error, actual.dt, threshold) };
            ForecastRun { start_index: start, error, valid_time: vt, blew_up }
        })
        .collect();
    ForecastReport { dt: actual.dt, horizon, threshold, runs }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaminarConfig {
    pub threshold: f64,
    pub bin_width: f64,
    /// Smallest duration included in the tail fit.
    pub tail_min: f64,
}

impl Default for LaminarConfig {
    fn default() -> Self {
        Self { threshold: 1.0, bin_width: 10.0, tail_min: 100.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaminarStats {
    pub threshold: f64,
    pub durations: Vec<f64>,
    pub laminar_total: f64,
    pub bursting_total: f64,
    pub bursts: usize,
    /// Lower bin edges and `log10` of the normalized counts (empty bins omitted).
    pub histogram: Vec<(f64, f64)>,
    /// Least-squares slope of `log10(probability)` against duration over the tail.
    pub tail_slope: Option<f64>,
}

/// Maximal runs with `|x1 - x2| < C`; each sample counts for `dt` time units.
pub fn laminar_lasting_times(x1: &[f64], x2: &[f64], dt: f64, cfg: &LaminarConfig) -> LaminarStats {
    let mut durations = Vec::new();
    let mut bursts = 0;
    let mut run = 0usize;
    let mut bursting_samples = 0usize;
    let mut in_burst = false;
    for (a, b) in x1.iter().zip(x2) {
        if (a - b).abs() < cfg.threshold {
            run += 1;
            in_burst = false;
        } else {
            if run > 0 {
                durations.push(run as f64 * dt);
                run = 0;
            }
            if !in_burst {
                bursts += 1;
                in_burst = true;
            }
            bursting_samples += 1;
        }
    }
    if run > 0 {
        durations.push(run as f64 * dt);
    }
    let laminar_total = durations.iter().sum();
    let bursting_total = bursting_samples as f64 * dt;

    let mut histogram = Vec::new();
    if !durations.is_empty() && cfg.bin_width > 0.0 {
        let top = durations.iter().copied().fold(0.0, f64::max);
        let bins = (top / cfg.bin_width).floor() as usize + 1;
        let mut counts = vec![0usize; bins];
        for d in &durations {
            counts[((d / cfg.bin_width).floor() as usize).min(bins - 1)] += 1;
        }
        let total = durations.len() as f64;
        for (i, &c) in counts.iter().enumerate() {
            if c > 0 {
                histogram.push((i as f64 * cfg.bin_width, (c as f64 / total).log10()));
            }
        }
    }
    let tail: Vec<(f64, f64)> =
        histogram.iter().filter(|(edge, _)| *edge >= cfg.tail_min).map(|&(e, y)| (e + 0.5 * cfg.bin_width, y)).collect();
    let tail_slope = least_squares_slope(&tail);
    LaminarStats { threshold: cfg.threshold, durations, laminar_total, bursting_total, bursts, histogram, tail_slope }
}

fn least_squares_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{select_centers, GridSpec};
    use crate::observe::{embed, EmbeddingLayout, Standardization, TimeSeries};
    use crate::regress::Coefficients;
    use proptest::{prop_assert, proptest};

    #[test]
    fn training_embedding_has_zero_error() {
        let w: Vec<f64> = (0..500).map(|i| (i as f64 * 0.037).sin() + 0.3 * (i as f64 * 0.11).cos()).collect();
        let e = embed(&TimeSeries::scalar(0.01, w), 5, 0.12, EmbeddingLayout::Single).unwrap();
        let report = delay_structure_error(&e.data, 5, 1, e.lag, 50);
        assert!(!report.per_time.is_empty());
        assert!(report.per_time.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn interleaved_pairs_use_observable_offset() {
        let a: Vec<f64> = (0..300).map(|i| (i as f64 * 0.05).sin()).collect();
        let b: Vec<f64> = (0..300).map(|i| (i as f64 * 0.07).cos()).collect();
        let e = embed(&TimeSeries::new(0.1, 0.0, vec![a, b]), 6, 0.4, EmbeddingLayout::Interleaved).unwrap();
        assert!(delay_errors(&e.data, 6, 2, e.lag).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shifted_component_gives_constant_error() {
        let w: Vec<f64> = (0..400).map(|i| (i as f64 * 0.02).sin()).collect();
        let mut e = embed(&TimeSeries::scalar(0.01, w), 3, 0.05, EmbeddingLayout::Single).unwrap();
        let eps = 0.125;
        for row in e.data.chunks_exact_mut(3) {
            row[1] += eps;
        }
        let errs = delay_errors(&e.data, 3, 1, e.lag);
        assert!(errs.iter().all(|&v| (v - eps).abs() < 1e-12));
    }

    #[test]
    fn density_identity_and_disjoint() {
        let a: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.013).sin()).collect();
        assert!((density_compare(&a, &a, 100).overlap - 1.0).abs() < 1e-12);
        let b: Vec<f64> = a.iter().map(|v| v + 10.0).collect();
        assert_eq!(density_compare(&a, &b, 100).overlap, 0.0);
        let d = density_compare(&a, &b, 100);
        assert!((d.model.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((d.actual.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn laminar_constant_cases() {
        let n = 1000;
        let x1 = vec![0.0; n];
        let s = laminar_lasting_times(&x1, &vec![0.5; n], 0.1, &LaminarConfig::default());
        assert_eq!(s.durations.len(), 1);
        assert!((s.durations[0] - 100.0).abs() < 1e-9);
        let s = laminar_lasting_times(&x1, &vec![2.0; n], 0.1, &LaminarConfig::default());
        assert!(s.durations.is_empty());
        assert_eq!(s.bursts, 1);
    }

    #[test]
    fn geometric_durations_give_negative_slope() {
        // run lengths drawn from an exponential law with mean 50
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (mut x1, mut x2) = (Vec::new(), Vec::new());
        for _ in 0..20_000 {
            let len = (-50.0 * rng.random::<f64>().ln()).ceil() as usize;
            x1.extend(std::iter::repeat_n(0.0, len + 1));
            x2.extend(std::iter::repeat_n(0.0, len));
            x2.push(5.0);
        }
        let s = laminar_lasting_times(&x1, &x2, 1.0, &LaminarConfig { threshold: 1.0, bin_width: 10.0, tail_min: 20.0 });
        let slope = s.tail_slope.unwrap();
        let expected = -std::f64::consts::LOG10_E / 50.0;
        assert!((slope - expected).abs() < 0.25 * expected.abs(), "{slope} vs {expected}");
    }

    fn zero_model(dim: usize, dt: f64) -> RfrModel {
        let centers = select_centers(&[], dim, GridSpec::new(1.0, 3, 0.1), 10).unwrap();
        RfrModel {
            dim,
            observables: 1,
            tau: dt,
            dt,
            coefficients: Coefficients::zeros(dim, centers.layout().n_columns()),
            centers,
            standardization: Standardization::identity(1),
            provenance: vec![],
        }
    }

    #[test]
    fn zero_model_valid_time_matches_direct_count() {
        let w: Vec<f64> = (0..5000).map(|i| (i as f64 * 0.01).sin() * 1.4).collect();
        let e = embed(&TimeSeries::scalar(0.01, w), 2, 0.01, EmbeddingLayout::Single).unwrap();
        let m = zero_model(2, 0.01);
        let report = forecast_suite(&m, &e, 4, 3.0, 11, 0.0);
        let x1 = e.component(0);
        for run in &report.runs {
            let s = run.start_index;
            let k = (0..=300).find(|&k| (x1[s + k] - x1[s]).abs() > report.threshold).unwrap_or(300);
            assert!((run.valid_time - k as f64 * 0.01).abs() < 1e-9);
        }
        assert_eq!(report.runs.len(), 4);
    }

    #[test]
    fn exact_linear_model_is_valid_for_the_whole_horizon() {
        // x' = -x sampled exactly; the model reproduces it up to RK4 error
        let w: Vec<f64> = (0..3000).map(|i| 3.0 * (-(i as f64) * 0.001).exp()).collect();
        let e = embed(&TimeSeries::scalar(0.01, w), 1, 0.0, EmbeddingLayout::Single).unwrap();
        let mut m = zero_model(1, 0.01);
        // the series decays at rate 0.1 per time unit
        m.coefficients.beta[0][1] = -0.1;
        let report = forecast_suite(&m, &e, 3, 5.0, 1, 0.0);
        assert!(report.runs.iter().all(|r| (r.valid_time - 5.0).abs() < 1e-9));
    }

    proptest! {
        #[test]
        fn overlap_is_symmetric_and_bounded(
            a in proptest::collection::vec(-5.0f64..5.0, 10..200),
            b in proptest::collection::vec(-5.0f64..5.0, 10..200),
        ) {
            let ab = density_compare(&a, &b, 20).overlap;
            let ba = density_compare(&b, &a, 20).overlap;
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn laminar_partition_covers_the_run(d in proptest::collection::vec(0.0f64..2.0, 1..500)) {
            let zeros = vec![0.0; d.len()];
            let s = laminar_lasting_times(&zeros, &d, 0.5, &LaminarConfig::default());
            let total = d.len() as f64 * 0.5;
            prop_assert!((s.laminar_total + s.bursting_total - total).abs() < 1e-9);
            prop_assert!(s.durations.iter().all(|&v| v > 0.0));
        }
    }
}
