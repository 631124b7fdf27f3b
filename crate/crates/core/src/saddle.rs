//! Stagger-and-Step: long model trajectories that stay on a chaotic saddle.
//!
//! The model is integrated in short segments. A segment is accepted when its
//! delay-structure error stays below a threshold; otherwise the start point is
//! nudged by small random kicks and the best of several trial segments wins.
//! Only the first part of each winner is kept before the next round.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{DynamicsError, Trajectory};
use crate::evaluate::delay_errors;
use crate::model::{integrate_sampled, RfrModel};
use crate::observe::EmbeddedSeries;

#[derive(Debug, Error)]
pub enum SaddleError {
    #[error("invalid saddle configuration: {0}")]
    InvalidConfig(String),
    #[error("trajectory escaped the saddle at segment {segment} (best E {best_error})")]
    SaddleEscape { segment: usize, best_error: f64, run: Box<SaddleRun> },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddleConfig {
    pub segment_length: f64,
    pub keep_length: f64,
    pub trials_max: usize,
    pub threshold: f64,
    pub total_length: f64,
    pub seed: u64,
    pub refine: bool,
    /// Kick magnitudes are `10^-u` with `u` uniform on this range.
    pub exponent_range: (f64, f64),
    pub refine_shrink: f64,
    /// A round fails hard when its best error exceeds `hard_fail_factor * threshold`.
    pub hard_fail_factor: f64,
    /// Consecutive hard failures before the run is abandoned.
    pub hard_fail_rounds: usize,
    /// RK4 steps per output sample.
    pub substeps: usize,
}

impl Default for SaddleConfig {
    fn default() -> Self {
        Self {
            segment_length: 50.0,
            keep_length: 25.0,
            trials_max: 100,
            threshold: f64::INFINITY,
            total_length: 1000.0,
            seed: 0,
            refine: false,
            exponent_range: (1.0, 8.0),
            refine_shrink: 0.1,
            hard_fail_factor: 10.0,
            hard_fail_rounds: 3,
            substeps: 1,
        }
    }
}

impl SaddleConfig {
    pub fn validate(&self) -> Result<(), SaddleError> {
        let bad = |m: &str| Err(SaddleError::InvalidConfig(m.into()));
        if !(self.segment_length > 0.0 && self.keep_length > 0.0) {
            return bad("segment and keep lengths must be positive");
        }
        if self.keep_length > 0.5 * self.segment_length + 1e-12 {
            return bad("keep length must be at most half the segment length");
        }
        if !(self.threshold > 0.0) {
            return bad("threshold must be positive");
        }
        if !(self.total_length >= 0.0) || !self.total_length.is_finite() {
            return bad("total length must be finite and non-negative");
        }
        let (a, b) = self.exponent_range;
        if !(a.is_finite() && b.is_finite() && a <= b) {
            return bad("exponent range must satisfy a <= b");
        }
        if self.substeps == 0 {
            return bad("substeps must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub segment: usize,
    /// Integrations beyond the unperturbed one, refinement included.
    pub trials: usize,
    pub error: f64,
    pub noise_magnitude: f64,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaddleRun {
    pub trajectory: Trajectory,
    pub segments: Vec<SegmentRecord>,
    pub success: bool,
}

/// Largest delay error over a segment; every sample with an in-segment
/// partner `tau` later is scored.
pub fn segment_score(states: &[f64], dim: usize, observables: usize, lag: usize) -> f64 {
    delay_errors(states, dim, observables, lag).into_iter().fold(0.0, |m, e| if e.is_nan() { f64::INFINITY } else { m.max(e) })
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent generator for one trial of one segment.
pub fn trial_rng(seed: u64, segment: usize, trial: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(mix(seed) ^ segment as u64) ^ trial as u64))
}

fn unit_vector(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Kick with a uniformly random direction and magnitude `10^-u`, `u ~ U[a, b]`.
pub fn draw_stagger(dim: usize, exponent_range: (f64, f64), rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (a, b) = exponent_range;
    let u = if b > a { rng.random_range(a..=b) } else { a };
    let mag = 10f64.powf(-u);
    unit_vector(dim, rng).into_iter().map(|x| x * mag).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

struct Trial {
    kick: Vec<f64>,
    states: Option<Trajectory>,
    error: f64,
}

impl Trial {
    fn run(model: &RfrModel, current: &[f64], kick: Vec<f64>, samples: usize, substeps: usize) -> Self {
        let start: Vec<f64> = current.iter().zip(&kick).map(|(x, k)| x + k).collect();
        let lag = lag_samples(model);
        match integrate_sampled(model, &start, samples, substeps) {
            Ok(t) => {
                let error = segment_score(&t.data, model.dim, model.observables, lag);
                Self { kick, states: Some(t), error }
            }
            Err(_) => Self { kick, states: None, error: f64::INFINITY },
        }
    }
}

fn lag_samples(model: &RfrModel) -> usize {
    (model.tau / model.dt).round() as usize
}

/// Extra kicks around the best one, shrunk by `refine_shrink`; only strict
/// improvements are accepted. Spends at most `trials_max / 4` integrations.
fn refine_noise(
    model: &RfrModel,
    current: &[f64],
    best: Trial,
    cfg: &SaddleConfig,
    segment: usize,
    samples: usize,
) -> (Trial, usize) {
    let budget = cfg.trials_max / 4;
    let mut best = best;
    let mut used = 0;
    while used < budget && best.error > cfg.threshold {
        let radius = cfg.refine_shrink * norm(&best.kick);
        if radius == 0.0 {
            break;
        }
        let mut rng = trial_rng(cfg.seed, segment, cfg.trials_max + used);
        let dir = unit_vector(model.dim, &mut rng);
        let kick: Vec<f64> = best.kick.iter().zip(&dir).map(|(k, d)| k + radius * d).collect();
        let t = Trial::run(model, current, kick, samples, cfg.substeps);
        used += 1;
        if t.error < best.error {
            best = t;
        }
    }
    (best, used)
}

/// Patches kept segments into a trajectory of `total_length` model time.
pub fn stagger_step(model: &RfrModel, x0: &[f64], cfg: &SaddleConfig) -> Result<SaddleRun, SaddleError> {
    cfg.validate()?;
    if x0.len() != model.dim {
        return Err(SaddleError::InvalidConfig(format!("initial state has {} components, model {}", x0.len(), model.dim)));
    }
    let seg_samples = (cfg.segment_length / model.dt).round() as usize + 1;
    let keep = ((cfg.keep_length / model.dt).round() as usize).max(1);
    let total = (cfg.total_length / model.dt).round() as usize;
    let lag = lag_samples(model);
    let scoring = cfg.threshold.is_finite();
    let batch = rayon::current_num_threads().max(1);

    let mut trajectory = Trajectory::new(model.dim, model.dt);
    trajectory.push(x0);
    let mut current = x0.to_vec();
    let mut segments = Vec::new();
    let mut streak = 0;
    let mut success = true;

    let mut segment = 0;
    while trajectory.len() - 1 < total {
        let plain = integrate_sampled(model, &current, seg_samples, cfg.substeps);
        let (winner, trials) = if !scoring {
            match plain {
                Ok(t) => (Trial { kick: vec![0.0; model.dim], states: Some(t), error: f64::NAN }, 0),
                Err(DynamicsError::NonFiniteState { .. }) => {
                    let run = SaddleRun { trajectory, segments, success: false };
                    return Err(SaddleError::SaddleEscape { segment, best_error: f64::INFINITY, run: Box::new(run) });
                }
                Err(e) => return Err(e.into()),
            }
        } else {
            let first = match plain {
                Ok(t) => {
                    let error = segment_score(&t.data, model.dim, model.observables, lag);
                    Trial { kick: vec![0.0; model.dim], states: Some(t), error }
                }
                Err(_) => Trial { kick: vec![0.0; model.dim], states: None, error: f64::INFINITY },
            };
            if first.error <= cfg.threshold {
                (first, 0)
            } else {
                let mut best = first;
                let mut used = 0;
                // batches keep the selection identical to a serial scan:
                // the lowest-index trial under threshold wins, else the minimum
                'search: while used < cfg.trials_max {
                    let hi = (used + batch).min(cfg.trials_max);
                    let results: Vec<Trial> = (used..hi)
                        .into_par_iter()
                        .map(|k| {
                            let mut rng = trial_rng(cfg.seed, segment, k);
                            let kick = draw_stagger(model.dim, cfg.exponent_range, &mut rng);
                            Trial::run(model, &current, kick, seg_samples, cfg.substeps)
                        })
                        .collect();
                    for t in results {
                        used += 1;
                        let hit = t.error <= cfg.threshold;
                        if t.error < best.error {
                            best = t;
                        }
                        if hit {
                            break 'search;
                        }
                    }
                }
                if cfg.refine && best.error > cfg.threshold {
                    let (refined, extra) = refine_noise(model, &current, best, cfg, segment, seg_samples);
                    best = refined;
                    used += extra;
                }
                (best, used)
            }
        };

        let Some(states) = winner.states else {
            let run = SaddleRun { trajectory, segments, success: false };
            return Err(SaddleError::SaddleEscape { segment, best_error: f64::INFINITY, run: Box::new(run) });
        };
        let valid = !scoring || winner.error <= cfg.threshold;
        success &= valid;
        segments.push(SegmentRecord {
            segment,
            trials,
            error: winner.error,
            noise_magnitude: norm(&winner.kick),
            valid,
        });
        let take = keep.min(total - (trajectory.len() - 1));
        for i in 1..=take {
            trajectory.push(states.state(i));
        }
        current = states.state(keep).to_vec();

        if scoring && winner.error > cfg.hard_fail_factor * cfg.threshold {
            streak += 1;
            if streak >= cfg.hard_fail_rounds {
                let run = SaddleRun { trajectory, segments, success: false };
                return Err(SaddleError::SaddleEscape { segment, best_error: winner.error, run: Box::new(run) });
            }
        } else {
            streak = 0;
        }
        segment += 1;
    }
    Ok(SaddleRun { trajectory, segments, success })
}

/// Quantile of the segment scores used by [`auto_threshold`].
pub const AUTO_THRESHOLD_QUANTILE: f64 = 0.95;

/// [`AUTO_THRESHOLD_QUANTILE`] of the segment errors of unperturbed model
/// segments started from evenly spaced points of `actual`; a data-driven
/// default for the threshold.
pub fn auto_threshold(model: &RfrModel, actual: &EmbeddedSeries, segments: usize, segment_length: f64) -> f64 {
    let samples = (segment_length / model.dt).round() as usize + 1;
    let lag = lag_samples(model);
    let n = actual.len();
    let count = segments.max(1);
    let mut scores: Vec<f64> = (0..count)
        .into_par_iter()
        .map(|k| {
            let start = k * n / count;
            match integrate_sampled(model, actual.sample(start), samples, 1) {
                Ok(t) => segment_score(&t.data, model.dim, model.observables, lag),
                Err(_) => f64::INFINITY,
            }
        })
        .collect();
    scores.sort_by(f64::total_cmp);
    let rank = ((AUTO_THRESHOLD_QUANTILE * scores.len() as f64).ceil() as usize).clamp(1, scores.len());
    scores[rank - 1]
}

/// Length of time from the start of `states` until the first window of
/// `window` samples whose delay error exceeds `threshold`.
pub fn valid_duration(states: &Trajectory, observables: usize, lag: usize, window: usize, threshold: f64) -> f64 {
    let errs = delay_errors(&states.data, states.dim, observables, lag);
    let step = window.max(1);
    let mut t = 0;
    while t < errs.len() {
        let end = (t + step).min(errs.len());
        if errs[t..end].iter().any(|e| !(*e <= threshold)) {
            return t as f64 * states.dt;
        }
        t = end;
    }
    errs.len() as f64 * states.dt
}
