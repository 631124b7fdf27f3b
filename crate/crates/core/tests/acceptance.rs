//! Desk-scale acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. `RFR_ACCEPTANCE_ONLY=4,6` runs a subset.

use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rfr::basis::sigma2;
use rfr::config::{desk_preset, stream_seed, ExperimentConfig, SystemTag};
use rfr::deriv::{best_stride, estimate_derivative, DerivativeConfig, StencilOrder, StrideError};
use rfr::dynamics::{ks_rhs, shell_rhs, simulate, ShellModel, SimulationConfig, SystemKind, KS_MODES};
use rfr::evaluate::delay_errors;
use rfr::model::{integrate_sampled, RfrModel};
use rfr::observe::{autocorrelation, embed, standardize, EmbeddingLayout, TimeSeries};
use rfr::pipeline::{deriv_scan, run_pipeline, RunOutcome};
use rfr::regress::{fit_all, ridge_solve, sample_rows};
use rfr::saddle::{auto_threshold, stagger_step, valid_duration, SaddleConfig, SaddleError, SaddleRun};

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

/// Combines sub-checks; the criterion passes only if all of them do.
#[derive(Default)]
struct Checks {
    pass: bool,
    parts: Vec<String>,
    started: bool,
}

impl Checks {
    fn check(&mut self, ok: bool, what: String) {
        self.pass = if self.started { self.pass && ok } else { ok };
        self.started = true;
        self.parts.push(format!("{}{what}", if ok { "" } else { "[x] " }));
    }

    fn note(&mut self, what: String) {
        self.parts.push(what);
    }

    fn verdict(self) -> Verdict {
        Verdict::new(self.pass, self.parts.join("; "))
    }
}

fn rel_err(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / scale.max(f64::MIN_POSITIVE)
}

// ---------------------------------------------------------------- criterion 1

/// `sum_{m+n=k}` over the full two-sided spectrum of an odd real field.
fn ks_naive(a: &[f64], nu: f64) -> Vec<f64> {
    let m = a.len() as i64;
    let hat = |k: i64| -> Complex64 {
        match k {
            0 => Complex64::new(0.0, 0.0),
            k if k > 0 && k <= m => Complex64::new(0.0, -a[(k - 1) as usize] / 2.0),
            k if k < 0 && -k <= m => Complex64::new(0.0, a[(-k - 1) as usize] / 2.0),
            _ => Complex64::new(0.0, 0.0),
        }
    };
    (1..=m)
        .map(|k| {
            // (u^2)_x has Fourier coefficient i k sum_p u_p u_{k-p}; sine coefficient is 2i times that
            let conv: Complex64 = (-m..=m).map(|p| hat(p) * hat(k - p)).sum();
            let nonlinear = Complex64::new(0.0, 2.0) * Complex64::new(0.0, k as f64) * conv;
            let kf = k as f64;
            (kf * kf - nu * kf.powi(4)) * a[(k - 1) as usize] + nonlinear.re
        })
        .collect()
}

fn shell_naive(u: &[Complex64], p: &ShellModel) -> Vec<Complex64> {
    let n = u.len();
    // two zero shells of padding on each side
    let mut pad = vec![Complex64::new(0.0, 0.0); n + 4];
    pad[2..n + 2].copy_from_slice(u);
    let k = |j: i64| p.k0 * p.ratio.powi(j as i32);
    (1..=n as i64)
        .map(|j| {
            let at = |i: i64| pad[(i + 1) as usize].conj();
            let mut v = Complex64::new(0.0, 1.0)
                * (k(j) * at(j + 1) * at(j + 2)
                    - p.delta * k(j - 1) * at(j - 1) * at(j + 1)
                    - (1.0 - p.delta) * k(j - 2) * at(j - 1) * at(j - 2))
                - p.nu * k(j) * k(j) * pad[(j + 1) as usize];
            if j == 1 {
                v += p.forcing;
            }
            v
        })
        .collect()
}

fn gradient_descent_ridge(a: &[f64], y: &[f64], cols: usize, lambda: f64) -> Vec<f64> {
    let rows = y.len();
    let nf = rows as f64;
    // step from a bound on the largest Hessian eigenvalue
    let frob: f64 = a.iter().map(|v| v * v).sum::<f64>() / nf;
    let step = 1.0 / (2.0 * (frob + lambda));
    let mut beta = vec![0.0; cols];
    let mut grad = vec![0.0; cols];
    for _ in 0..200_000 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for r in 0..rows {
            let row = &a[r * cols..(r + 1) * cols];
            let resid: f64 = row.iter().zip(&beta).map(|(x, b)| x * b).sum::<f64>() - y[r];
            for (g, x) in grad.iter_mut().zip(row) {
                *g += 2.0 * resid * x / nf;
            }
        }
        let mut moved = 0.0f64;
        for (b, g) in beta.iter_mut().zip(&grad) {
            let d = step * (g + 2.0 * lambda * *b);
            *b -= d;
            moved = moved.max(d.abs());
        }
        if moved < 1e-15 {
            break;
        }
    }
    beta
}

fn criterion_1() -> Verdict {
    let mut c = Checks::default();
    let s2 = sigma2(3, 0.1, 1.0).unwrap();
    c.check((s2 - 1.7372).abs() < 1e-4, format!("sigma^2 = {s2:.6}"));

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let coef: Vec<f64> = (0..=6).map(|_| rng.random_range(-2.0..2.0)).collect();
        let dt = rng.random_range(0.005..0.05);
        let stride = rng.random_range(1..4usize);
        let p = |x: f64| coef.iter().rev().fold(0.0, |acc, c| acc * x + c);
        let dp = |x: f64| (1..=6).rev().fold(0.0, |acc, i| acc * x + i as f64 * coef[i]);
        let x0 = rng.random_range(-1.0..1.0);
        let samples: Vec<f64> = (0..60).map(|i| p(x0 + i as f64 * dt)).collect();
        let est = estimate_derivative(&samples, 1, &DerivativeConfig::new(StencilOrder::Sixth, stride, dt)).unwrap();
        for (i, v) in est.values.iter().enumerate() {
            let x = x0 + (i + est.first_index) as f64 * dt;
            let scale: f64 = (1..=6).map(|k| (k as f64 * coef[k] * x.powi(k as i32 - 1)).abs()).sum();
            worst = worst.max(rel_err(*v, dp(x), scale));
        }
    }
    c.check(worst < 1e-9, format!("stencil rel err {worst:.2e}"));

    let (mut ne_worst, mut gd_worst) = (0.0f64, 0.0f64);
    for trial in 0..5 {
        let (rows, cols) = (50, 8);
        let a: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lambda = [1e-3, 1e-2, 1e-1, 1e-4, 1e-3][trial];
        let beta = ridge_solve(&a, &y, cols, lambda).unwrap();
        // (A^T A + N lambda I) beta = A^T y
        for i in 0..cols {
            let lhs: f64 = (0..cols)
                .map(|j| (0..rows).map(|r| a[r * cols + i] * a[r * cols + j]).sum::<f64>() * beta[j])
                .sum::<f64>()
                + rows as f64 * lambda * beta[i];
            let rhs: f64 = (0..rows).map(|r| a[r * cols + i] * y[r]).sum();
            let scale = rhs.abs().max(lhs.abs()).max(1.0);
            ne_worst = ne_worst.max(rel_err(lhs, rhs, scale));
        }
        let oracle = gradient_descent_ridge(&a, &y, cols, lambda);
        let norm = oracle.iter().map(|v| v * v).sum::<f64>().sqrt();
        let diff = beta.iter().zip(&oracle).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        gd_worst = gd_worst.max(diff / norm);
    }
    c.check(ne_worst < 1e-8, format!("normal equations rel {ne_worst:.1e}"));
    c.check(gd_worst < 1e-6, format!("gradient-descent oracle rel {gd_worst:.1e}"));

    let (mut ks_worst, mut shell_worst) = (0.0f64, 0.0f64);
    let shell = ShellModel::default();
    for _ in 0..100 {
        let a: Vec<f64> = (0..KS_MODES).map(|_| rng.random_range(-1.0..1.0)).collect();
        for (x, y) in ks_rhs(&a, 0.0215).iter().zip(ks_naive(&a, 0.0215)) {
            ks_worst = ks_worst.max(rel_err(*x, y, y.abs().max(1.0)));
        }
        let u: Vec<Complex64> =
            (0..shell.shells).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        for (x, y) in shell_rhs(&u, &shell).iter().zip(shell_naive(&u, &shell)) {
            shell_worst = shell_worst.max((x - y).norm() / y.norm().max(1.0));
        }
    }
    c.check(ks_worst < 1e-12, format!("ks_rhs {ks_worst:.1e}"));
    c.check(shell_worst < 1e-12, format!("shell_rhs {shell_worst:.1e}"));
    c.verdict()
}

// ---------------------------------------------------------------- criterion 2

fn argmin(scan: &[StrideError]) -> StrideError {
    best_stride(scan).expect("non-empty scan")
}

fn criterion_2() -> Verdict {
    let scan = |order| deriv_scan(SystemKind::Ks, 100_000, 0.01, 0.1, 7, order, 1..=20).unwrap();
    let (two, six) = (scan(StencilOrder::Second), scan(StencilOrder::Sixth));
    let (b2, b6) = (argmin(&two), argmin(&six));
    let mut c = Checks::default();
    c.check((4..=8).contains(&b2.stride), format!("order 2 argmin l = {} (std {:.4})", b2.stride, b2.error_std));
    c.check((7..=12).contains(&b6.stride), format!("order 6 argmin l = {} (std {:.4})", b6.stride, b6.error_std));
    c.check(b6.error_std <= b2.error_std, "order-6 minimum <= order-2 minimum".into());
    c.verdict()
}

// ---------------------------------------------------------------- criterion 3

fn first_observable(kind: SystemKind, t_total: f64, dt: f64, seed: u64) -> Vec<f64> {
    let mut sim = SimulationConfig::new(kind, t_total, dt);
    sim.seed = seed;
    simulate(&sim).unwrap().series.columns.swap_remove(0)
}

fn criterion_3() -> Verdict {
    let ks = first_observable(SystemKind::Ks, 10_000.0, 0.01, 1);
    let mg = first_observable(SystemKind::Mg, 10_000.0, 0.01, 1);
    let rk = autocorrelation(&ks, 0.01, 0.2).at(0.12);
    let rm = autocorrelation(&mg, 0.01, 0.6).at(0.5);
    let mut c = Checks::default();
    c.check((rk - 0.50).abs() <= 0.05, format!("KS acf(0.12) = {rk:.4}"));
    c.check((rm - 0.80).abs() <= 0.05, format!("MG acf(0.5) = {rm:.4}"));
    c.verdict()
}

// ---------------------------------------------------------------- criterion 4

fn ks_desk() -> &'static RunOutcome {
    static RUN: OnceLock<RunOutcome> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        run_pipeline(&desk_preset(SystemTag::Ks), dir.path()).unwrap()
    })
}

fn criterion_4() -> Verdict {
    let run = ks_desk();
    let s = &run.summary;
    let mut c = Checks::default();
    c.note(format!("J = {}", s.n_centers));
    c.check(s.n_centers <= 10_000, "J <= 1e4".into());
    c.check(!s.model_blew_up && s.delay_error.median < 0.1, format!("median E = {:.4}", s.delay_error.median));
    c.check(s.density_overlap >= 0.85, format!("overlap = {:.4}", s.density_overlap));
    c.check(s.density_baseline >= 0.95, format!("baseline = {:.4}", s.density_baseline));
    let positive = s.valid_times.iter().filter(|&&t| t > 0.0).count();
    c.check(positive >= 9, format!("{positive}/10 valid times > 0 {:?}", s.valid_times));
    c.verdict()
}

// ---------------------------------------------------------------- criterion 5

fn criterion_5() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = desk_preset(SystemTag::Cr);
    cfg.evaluate.model_length = 100_000.0;
    let run = run_pipeline(&cfg, dir.path()).unwrap();
    let mut c = Checks::default();
    let Some(lam) = &run.laminar else {
        c.check(false, "model trajectory blew up".into());
        return c.verdict();
    };
    c.check(
        lam.durations.len() >= 10 && lam.bursts >= 10,
        format!("{} laminar episodes, {} bursts", lam.durations.len(), lam.bursts),
    );
    match lam.tail_slope {
        Some(slope) => {
            c.check(slope < 0.0, format!("tail slope {slope:.5} per unit time (log10)"));
            let ratio = slope / -0.008;
            c.note(format!("within factor 2 of -0.008: {} (informational)", (0.5..=2.0).contains(&ratio)));
        }
        None => c.check(false, "too few long laminar episodes for a tail".into()),
    }
    c.verdict()
}

// ---------------------------------------------------------------- criterion 6

const SADDLE_SEGMENT: f64 = 2.0;
const SADDLE_KEEP: f64 = 1.0;

fn saddle_cfg(threshold: f64, total: f64, seed: u64) -> SaddleConfig {
    SaddleConfig {
        segment_length: SADDLE_SEGMENT,
        keep_length: SADDLE_KEEP,
        trials_max: 100,
        threshold,
        total_length: total,
        seed,
        ..SaddleConfig::default()
    }
}

/// Time up to the first invalid kept segment.
fn sustained(run: &SaddleRun, keep: f64) -> f64 {
    let valid = run.segments.iter().take_while(|s| s.valid).count();
    (valid as f64 * keep).min((run.trajectory.len() - 1) as f64 * run.trajectory.dt)
}

fn degraded(model: &RfrModel, outcome: &RunOutcome, cfg: &ExperimentConfig) -> RfrModel {
    let problem = sample_rows(
        &outcome.data.train.data,
        &outcome.data.targets.data,
        cfg.embed.dim,
        cfg.fit.n_samples,
        1e-2,
        stream_seed(cfg.seed, "sample_rows"),
    )
    .unwrap();
    let fit = fit_all(&problem, &model.centers).unwrap();
    RfrModel { coefficients: fit.coefficients, ..model.clone() }
}

fn criterion_6() -> Verdict {
    let outcome = ks_desk();
    let model = &outcome.model;
    let x0 = outcome.data.heldout.sample(0);
    let lag = outcome.data.train.lag;
    let mut c = Checks::default();

    let total = 50.0;
    let steps = (total / model.dt).round() as usize;
    let plain = integrate_sampled(model, x0, steps + 1, 1).unwrap();
    let inf = stagger_step(model, x0, &saddle_cfg(f64::INFINITY, total, 1)).unwrap();
    c.check(inf.trajectory.data == plain.data, "threshold inf bit-equals plain integration".into());

    let threshold = auto_threshold(model, &outcome.data.heldout, 20, SADDLE_SEGMENT);
    c.note(format!("threshold {threshold:.4}"));
    let run = match stagger_step(model, x0, &saddle_cfg(threshold, 20.0, 2)) {
        Ok(run) => run,
        Err(SaddleError::SaddleEscape { run, .. }) => *run,
        Err(e) => panic!("{e}"),
    };
    let keep = (SADDLE_KEEP / model.dt).round() as usize;
    let mut worst = 0.0f64;
    for (k, seg) in run.segments.iter().enumerate().filter(|(_, s)| s.valid) {
        // the appended samples only; the seam sample precedes the kick
        let lo = (k * keep + 1) * model.dim;
        let hi = ((k + 1) * keep + 1).min(run.trajectory.len()) * model.dim;
        let e = delay_errors(&run.trajectory.data[lo..hi], model.dim, model.observables, lag);
        worst = worst.max(e.into_iter().fold(seg.error, f64::max) / threshold);
    }
    let kept = run.segments.iter().filter(|s| s.valid).count();
    c.check(kept > 0 && worst <= 1.0, format!("{kept} kept segments, max E/threshold = {worst:.3}"));

    let bad = degraded(model, outcome, &desk_preset(SystemTag::Ks));
    let window = (SADDLE_SEGMENT / model.dt).round() as usize;
    let horizon = 200.0;
    let plain_time = match integrate_sampled(&bad, x0, (horizon / model.dt) as usize + 1, 1) {
        Ok(t) => valid_duration(&t, model.observables, lag, window, threshold),
        Err(_) => 0.0,
    };
    // long enough to show the required margin over plain integration
    let reach = (3.0 * plain_time).clamp(20.0, horizon);
    let staggered = match stagger_step(&bad, x0, &saddle_cfg(threshold, reach, 3)) {
        Ok(run) => sustained(&run, SADDLE_KEEP),
        Err(SaddleError::SaddleEscape { run, .. }) => sustained(&run, SADDLE_KEEP),
        Err(e) => panic!("{e}"),
    };
    let ratio = staggered / plain_time.max(model.dt);
    c.check(
        ratio >= 2.5,
        format!("degraded model: plain valid {plain_time:.2}, stagger-and-step {staggered:.2} (x{ratio:.1})"),
    );
    c.verdict()
}

// ---------------------------------------------------------------- criterion 7

fn small_config() -> ExperimentConfig {
    let mut cfg = desk_preset(SystemTag::Cr);
    cfg.seed = 42;
    cfg.system.n_train = 5_000;
    cfg.system.n_heldout = 5_000;
    cfg.system.transient = 100.0;
    cfg.fit.n_samples = 2_000;
    cfg.fit.delta = 1.0;
    cfg.evaluate.model_length = 200.0;
    cfg.evaluate.forecast_inits = 3;
    cfg.evaluate.forecast_horizon = 20.0;
    cfg
}

fn criterion_7() -> Verdict {
    let cfg = small_config();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        run_pipeline(&cfg, d.path()).unwrap();
    }
    let mut files: Vec<String> = std::fs::read_dir(dirs[0].path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".csv") || n.ends_with(".rfr"))
        .collect();
    files.sort();
    let differing: Vec<&String> = files
        .iter()
        .filter(|f| std::fs::read(dirs[0].path().join(f)).ok() != std::fs::read(dirs[1].path().join(f)).ok())
        .collect();
    let mut c = Checks::default();
    c.check(files.iter().any(|f| f == "model.rfr"), "model file written".into());
    c.check(differing.is_empty(), format!("{} artifacts compared, differing: {differing:?}", files.len()));
    c.verdict()
}

// ---------------------------------------------------------------- criterion 8

fn criterion_8() -> Verdict {
    let mut c = Checks::default();
    let ks = first_observable(SystemKind::Ks, 200.0, 0.01, 3);
    let (std_ks, _) = standardize(&TimeSeries::scalar(0.01, ks)).unwrap();
    let e = embed(&std_ks, 5, 0.12, EmbeddingLayout::Single).unwrap();
    let worst = delay_errors(&e.data, 5, 1, e.lag).into_iter().fold(0.0, f64::max);
    c.check(worst == 0.0, format!("single-observable E max = {worst:e}"));

    let mut sim = SimulationConfig::new(SystemKind::Cr, 200.0, 0.1);
    sim.seed = 3;
    let cr = simulate(&sim).unwrap().series;
    let (std_cr, st) = standardize(&cr).unwrap();
    let e = embed(&std_cr, 6, 0.4, EmbeddingLayout::Interleaved).unwrap();
    let worst = delay_errors(&e.data, 6, 2, e.lag).into_iter().fold(0.0, f64::max);
    c.check(worst == 0.0, format!("two-observable E max = {worst:e}"));

    let back = st.invert(&std_cr);
    let trip = back
        .columns
        .iter()
        .flatten()
        .zip(cr.columns.iter().flatten())
        .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
        .fold(0.0, f64::max);
    c.check(trip <= 1e-12, format!("standardize round trip {trip:.1e}"));
    c.verdict()
}

fn main() -> ExitCode {
    let only: Option<Vec<u32>> =
        std::env::var("RFR_ACCEPTANCE_ONLY").ok().map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let criteria: [(u32, &str, fn() -> Verdict); 8] = [
        (1, "formula fidelity", criterion_1),
        (2, "derivative stride scan", criterion_2),
        (3, "autocorrelation at tau", criterion_3),
        (4, "desk KS model", criterion_4),
        (5, "CR intermittency", criterion_5),
        (6, "stagger-and-step", criterion_6),
        (7, "determinism", criterion_7),
        (8, "embedding identity", criterion_8),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let v = run();
        println!(
            "criterion {id} ({name}): {} [{:.1}s] {}",
            if v.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            v.detail
        );
        failed += usize::from(!v.pass);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
