use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::shell::ShellOde;
use super::{
    all_finite, mackey_glass_step, shell_rhs, CoupledRossler, DynamicsError, KsGalerkin, KsIntegrator, MackeyGlass,
    MackeyGlassState, OdeSystem, Rk4, ShellModel,
};
use crate::observe::TimeSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemKind {
    Ks,
    Mg,
    Sm,
    Cr,
}

impl SystemKind {
    pub fn tag(self) -> &'static str {
        match self {
            SystemKind::Ks => "ks",
            SystemKind::Mg => "mg",
            SystemKind::Sm => "sm",
            SystemKind::Cr => "cr",
        }
    }

    /// Default internal integration step.
    pub fn default_dt_int(self) -> f64 {
        match self {
            SystemKind::Ks => 0.002,
            SystemKind::Mg | SystemKind::Sm | SystemKind::Cr => 0.01,
        }
    }

    pub fn observables(self) -> usize {
        match self {
            SystemKind::Cr => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for SystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for SystemKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ks" => Ok(SystemKind::Ks),
            "mg" => Ok(SystemKind::Mg),
            "sm" => Ok(SystemKind::Sm),
            "cr" => Ok(SystemKind::Cr),
            other => Err(format!("unknown system '{other}' (expected ks, mg, sm or cr)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub system: SystemKind,
    /// Observed duration after the transient.
    pub t_total: f64,
    /// Observation step.
    pub dt: f64,
    pub dt_int: f64,
    pub transient: f64,
    pub seed: u64,
}

impl SimulationConfig {
    pub fn new(system: SystemKind, t_total: f64, dt: f64) -> Self {
        Self { system, t_total, dt, dt_int: system.default_dt_int().min(dt), transient: 1000.0, seed: 0 }
    }

    fn substeps(&self) -> Result<usize, DynamicsError> {
        if !(self.dt > 0.0 && self.dt_int > 0.0 && self.t_total > 0.0 && self.transient >= 0.0) {
            return Err(DynamicsError::InvalidParameter(
                "dt, dt_int and T must be positive and the transient non-negative".into(),
            ));
        }
        let ratio = self.dt / self.dt_int;
        let sub = ratio.round();
        if sub < 1.0 || (ratio - sub).abs() > 1e-9 * ratio {
            return Err(DynamicsError::InvalidParameter(format!(
                "observation step {} is not a multiple of dt_int {}",
                self.dt, self.dt_int
            )));
        }
        Ok(sub as usize)
    }
}

/// Observed series plus the exact time derivative of each observable.
#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub series: TimeSeries,
    pub derivative: Vec<Vec<f64>>,
    pub params: Vec<(String, f64)>,
}

trait Stepper {
    fn advance(&mut self) -> Result<(), DynamicsError>;
    /// Observables and their time derivatives at the current state.
    fn observe(&self, values: &mut [f64], rates: &mut [f64]);
}

struct KsStepper {
    integ: KsIntegrator,
    a: Vec<f64>,
}

impl Stepper for KsStepper {
    fn advance(&mut self) -> Result<(), DynamicsError> {
        self.integ.step(&mut self.a)
    }

    fn observe(&self, values: &mut [f64], rates: &mut [f64]) {
        values[0] = self.a[0];
        let mut d = vec![0.0; self.a.len()];
        self.integ.system().rhs(&self.a, &mut d);
        rates[0] = d[0];
    }
}

struct MgStepper {
    sys: MackeyGlass,
    state: MackeyGlassState,
}

impl Stepper for MgStepper {
    fn advance(&mut self) -> Result<(), DynamicsError> {
        mackey_glass_step(&self.sys, &mut self.state)
    }

    fn observe(&self, values: &mut [f64], rates: &mut [f64]) {
        let x = self.state.current();
        values[0] = x;
        rates[0] = self.sys.rate(x, self.state.delayed_value(self.sys.delay));
    }
}

struct OdeStepper<S: OdeSystem> {
    sys: S,
    rk: Rk4,
    x: Vec<f64>,
    dt: f64,
    observe: fn(&S, &[f64], &mut [f64], &mut [f64]),
}

impl<S: OdeSystem> Stepper for OdeStepper<S> {
    fn advance(&mut self) -> Result<(), DynamicsError> {
        self.rk.step(&self.sys, &mut self.x, self.dt);
        if all_finite(&self.x) {
            Ok(())
        } else {
            Err(DynamicsError::NonFiniteState { step: 1, time: self.dt })
        }
    }

    fn observe(&self, values: &mut [f64], rates: &mut [f64]) {
        (self.observe)(&self.sys, &self.x, values, rates)
    }
}

fn observe_shell(sys: &ShellOde, x: &[f64], values: &mut [f64], rates: &mut [f64]) {
    let u: Vec<Complex64> = x.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect();
    let du = shell_rhs(&u, &sys.model);
    let u3 = u[2];
    let r = u3.norm();
    values[0] = r;
    rates[0] = if r > 0.0 { (u3.conj() * du[2]).re / r } else { 0.0 };
}

fn observe_rossler(sys: &CoupledRossler, x: &[f64], values: &mut [f64], rates: &mut [f64]) {
    let mut d = [0.0; 6];
    sys.rhs(x, &mut d);
    values[0] = x[0];
    values[1] = x[3];
    rates[0] = d[0];
    rates[1] = d[3];
}

/// Runs a reference system with its default parameters and returns the
/// observables sampled every `dt` after discarding the transient.
pub fn simulate(cfg: &SimulationConfig) -> Result<SimulationOutput, DynamicsError> {
    let substeps = cfg.substeps()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut stepper, params): (Box<dyn Stepper>, Vec<(String, f64)>) = match cfg.system {
        SystemKind::Ks => {
            let sys = KsGalerkin::default();
            let a = (0..sys.modes).map(|_| 0.1 * rng.random_range(-1.0..1.0)).collect();
            let params = vec![("nu".into(), sys.nu), ("modes".into(), sys.modes as f64)];
            (Box::new(KsStepper { integ: KsIntegrator::new(sys, cfg.dt_int)?, a }), params)
        }
        SystemKind::Mg => {
            let sys = MackeyGlass::default();
            let n = (sys.delay / cfg.dt_int).ceil() as usize + 4;
            let history = (0..n).map(|_| 0.5 + 0.05 * rng.random_range(-1.0..1.0)).collect();
            let state = MackeyGlassState::from_history(history, cfg.dt_int, sys.delay)?;
            let params = vec![
                ("delay".into(), sys.delay),
                ("exponent".into(), sys.exponent),
                ("beta".into(), sys.beta),
                ("gamma".into(), sys.gamma),
                ("history_mean".into(), 0.5),
                ("history_jitter".into(), 0.05),
            ];
            (Box::new(MgStepper { sys, state }), params)
        }
        SystemKind::Sm => {
            let model = ShellModel::default();
            let params = vec![
                ("shells".into(), model.shells as f64),
                ("nu".into(), model.nu),
                ("forcing_re".into(), model.forcing.re),
                ("forcing_im".into(), model.forcing.im),
                ("delta".into(), model.delta),
                ("k0".into(), model.k0),
                ("ratio".into(), model.ratio),
            ];
            let x = (0..2 * model.shells).map(|_| 0.01 * rng.random_range(-1.0..1.0)).collect();
            let sys = ShellOde::new(model);
            let rk = Rk4::new(sys.dim());
            (Box::new(OdeStepper { sys, rk, x, dt: cfg.dt_int, observe: observe_shell }), params)
        }
        SystemKind::Cr => {
            let sys = CoupledRossler::default();
            let params = vec![
                ("a".into(), sys.a),
                ("c".into(), sys.c),
                ("f".into(), sys.f),
                ("epsilon".into(), sys.epsilon),
            ];
            let x = vec![
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(0.0..0.1),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(0.0..0.1),
            ];
            (Box::new(OdeStepper { sys, rk: Rk4::new(6), x, dt: cfg.dt_int, observe: observe_rossler }), params)
        }
    };

    let warmup = (cfg.transient / cfg.dt_int).round() as usize;
    for step in 0..warmup {
        stepper.advance().map_err(|_| DynamicsError::NonFiniteState {
            step: step + 1,
            time: (step + 1) as f64 * cfg.dt_int,
        })?;
    }

    let n_obs = (cfg.t_total / cfg.dt).round() as usize;
    let k = cfg.system.observables();
    let mut columns = vec![Vec::with_capacity(n_obs); k];
    let mut derivative = vec![Vec::with_capacity(n_obs); k];
    let mut values = vec![0.0; k];
    let mut rates = vec![0.0; k];
    for i in 0..n_obs {
        if i > 0 {
            for s in 0..substeps {
                stepper.advance().map_err(|_| {
                    let step = warmup + (i - 1) * substeps + s + 1;
                    DynamicsError::NonFiniteState { step, time: step as f64 * cfg.dt_int }
                })?;
            }
        }
        stepper.observe(&mut values, &mut rates);
        for c in 0..k {
            columns[c].push(values[c]);
            derivative[c].push(rates[c]);
        }
    }
    Ok(SimulationOutput { series: TimeSeries::new(cfg.dt, 0.0, columns), derivative, params })
}
