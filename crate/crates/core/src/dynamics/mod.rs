//! Reference dynamical systems and fixed-step integrators.
//!
//! Every system here produces ground-truth trajectories that the regression
//! pipeline later tries to reconstruct from a scalar (or two-component)
//! observable. Integration is always fixed-step so observations can be taken
//! by exact subsampling.

mod ks;
mod mackey_glass;
mod rossler;
mod shell;
mod simulate;

pub use ks::{ks_rhs, KsGalerkin, KsIntegrator, KS_MODES};
pub use mackey_glass::{mackey_glass_step, MackeyGlass, MackeyGlassState};
pub use rossler::CoupledRossler;
pub use shell::{shell_rhs, ShellCouplings, ShellModel};
pub use simulate::{simulate, SimulationConfig, SimulationOutput, SystemKind};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("non-finite state after step {step} (t = {time}); reduce the integration step")]
    NonFiniteState { step: usize, time: f64 },
    #[error("history buffer spans {available} time units but the delay needs {required}")]
    InsufficientHistory { available: f64, required: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// An autonomous ODE `dx/dt = f(x)` of fixed dimension.
pub trait OdeSystem {
    fn dim(&self) -> usize;

    /// Writes `f(x)` into `dx`. Both slices have length `dim()`.
    fn rhs(&self, x: &[f64], dx: &mut [f64]);
}

/// Adapter turning a closure into an [`OdeSystem`].
pub struct FnSystem<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64], &mut [f64])> FnSystem<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64], &mut [f64])> OdeSystem for FnSystem<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn rhs(&self, x: &[f64], dx: &mut [f64]) {
        (self.f)(x, dx)
    }
}

/// Classical 4th-order Runge-Kutta stepper with reusable stage buffers.
#[derive(Debug, Clone)]
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(dim: usize) -> Self {
        Self {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }

    /// Advances `x` in place by one step of size `dt`.
    pub fn step<S: OdeSystem + ?Sized>(&mut self, system: &S, x: &mut [f64], dt: f64) {
        let half = 0.5 * dt;
        system.rhs(x, &mut self.k1);
        for ((t, &xi), &k) in self.tmp.iter_mut().zip(x.iter()).zip(&self.k1) {
            *t = xi + half * k;
        }
        system.rhs(&self.tmp, &mut self.k2);
        for ((t, &xi), &k) in self.tmp.iter_mut().zip(x.iter()).zip(&self.k2) {
            *t = xi + half * k;
        }
        system.rhs(&self.tmp, &mut self.k3);
        for ((t, &xi), &k) in self.tmp.iter_mut().zip(x.iter()).zip(&self.k3) {
            *t = xi + dt * k;
        }
        system.rhs(&self.tmp, &mut self.k4);
        let sixth = dt / 6.0;
        for i in 0..x.len() {
            x[i] += sixth * (self.k1[i] + 2.0 * (self.k2[i] + self.k3[i]) + self.k4[i]);
        }
    }
}

/// A uniformly sampled state trajectory stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dim: usize,
    pub dt: f64,
    pub data: Vec<f64>,
}

impl Trajectory {
    pub fn new(dim: usize, dt: f64) -> Self {
        Self { dim, dt, data: Vec::new() }
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn push(&mut self, state: &[f64]) {
        debug_assert_eq!(state.len(), self.dim);
        self.data.extend_from_slice(state);
    }

    pub fn last(&self) -> Option<&[f64]> {
        let n = self.len();
        (n > 0).then(|| self.state(n - 1))
    }

    /// Component `j` across all samples.
    pub fn component(&self, j: usize) -> Vec<f64> {
        self.data.chunks_exact(self.dim).map(|s| s[j]).collect()
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }
}

pub(crate) fn all_finite(x: &[f64]) -> bool {
    x.iter().all(|v| v.is_finite())
}

/// Integrates `system` with fixed-step RK4, returning `steps + 1` states.
pub fn integrate<S: OdeSystem + ?Sized>(
    system: &S,
    initial: &[f64],
    dt_int: f64,
    steps: usize,
) -> Result<Trajectory, DynamicsError> {
    if !(dt_int > 0.0) || !dt_int.is_finite() {
        return Err(DynamicsError::InvalidParameter(format!("dt_int must be positive, got {dt_int}")));
    }
    if steps == 0 {
        return Err(DynamicsError::InvalidParameter("steps must be at least 1".into()));
    }
    if initial.len() != system.dim() {
        return Err(DynamicsError::InvalidParameter(format!(
            "initial state has {} components, system has {}",
            initial.len(),
            system.dim()
        )));
    }
    if !all_finite(initial) {
        return Err(DynamicsError::NonFiniteState { step: 0, time: 0.0 });
    }
    let mut rk = Rk4::new(system.dim());
    let mut x = initial.to_vec();
    let mut traj = Trajectory::new(system.dim(), dt_int);
    traj.data.reserve((steps + 1) * system.dim());
    traj.push(&x);
    for step in 1..=steps {
        rk.step(system, &mut x, dt_int);
        if !all_finite(&x) {
            return Err(DynamicsError::NonFiniteState { step, time: step as f64 * dt_int });
        }
        traj.push(&x);
    }
    Ok(traj)
}
