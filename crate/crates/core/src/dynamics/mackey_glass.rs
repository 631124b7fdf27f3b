use std::collections::VecDeque;

use super::DynamicsError;

/// `dx/dt = beta x(t-delay) / (1 + x(t-delay)^exponent) - gamma x(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MackeyGlass {
    pub delay: f64,
    pub exponent: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for MackeyGlass {
    fn default() -> Self {
        Self { delay: 2.0, exponent: 9.65, beta: 2.0, gamma: 1.0 }
    }
}

impl MackeyGlass {
    pub fn rate(&self, x: f64, x_delayed: f64) -> f64 {
        self.beta * x_delayed / (1.0 + x_delayed.powf(self.exponent)) - self.gamma * x
    }
}

/// Current value plus a uniformly spaced history buffer (oldest first, the
/// newest entry is the current state).
#[derive(Debug, Clone)]
pub struct MackeyGlassState {
    dt: f64,
    history: VecDeque<f64>,
    capacity: usize,
}

impl MackeyGlassState {
    /// Builds a state from samples spaced `dt` apart ending at the current time.
    pub fn from_history(samples: Vec<f64>, dt: f64, delay: f64) -> Result<Self, DynamicsError> {
        if !(dt > 0.0) {
            return Err(DynamicsError::InvalidParameter(format!("dt_int must be positive, got {dt}")));
        }
        // enough points for a cubic stencil reaching one step behind t - delay
        let capacity = (delay / dt).ceil() as usize + 4;
        let mut history: VecDeque<f64> = samples.into();
        while history.len() > capacity {
            history.pop_front();
        }
        Ok(Self { dt, history, capacity })
    }

    pub fn constant(value: f64, dt: f64, delay: f64) -> Result<Self, DynamicsError> {
        let n = (delay / dt).ceil() as usize + 4;
        Self::from_history(vec![value; n], dt, delay)
    }

    pub fn current(&self) -> f64 {
        *self.history.back().expect("history is never empty")
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Interpolated value `lookback` time units in the past.
    pub fn delayed_value(&self, lookback: f64) -> f64 {
        self.lookup(lookback)
    }

    fn span(&self) -> f64 {
        (self.history.len().saturating_sub(1)) as f64 * self.dt
    }

    /// Value at `t_now - lookback`, cubic Lagrange interpolation between samples.
    fn lookup(&self, lookback: f64) -> f64 {
        let n = self.history.len();
        let pos = (n - 1) as f64 - lookback / self.dt;
        let nearest = pos.round();
        if (pos - nearest).abs() < 1e-9 {
            return self.history[nearest as usize];
        }
        let base = pos.floor() as isize;
        // stencil base-1 .. base+2, shifted to stay inside the buffer
        let start = (base - 1).clamp(0, n as isize - 4) as usize;
        let s = pos - start as f64;
        let mut value = 0.0;
        for i in 0..4 {
            let mut w = 1.0;
            for j in 0..4 {
                if i != j {
                    w *= (s - j as f64) / (i as f64 - j as f64);
                }
            }
            value += w * self.history[start + i];
        }
        value
    }
}

/// One RK4 step of the delay equation using the method of steps.
pub fn mackey_glass_step(system: &MackeyGlass, state: &mut MackeyGlassState) -> Result<(), DynamicsError> {
    let h = state.dt;
    if system.delay < h || state.span() + 1e-12 < system.delay || state.history.len() < 4 {
        return Err(DynamicsError::InsufficientHistory { available: state.span(), required: system.delay });
    }
    let x = state.current();
    let d0 = state.lookup(system.delay);
    let d_half = state.lookup(system.delay - 0.5 * h);
    let d1 = state.lookup(system.delay - h);
    let k1 = system.rate(x, d0);
    let k2 = system.rate(x + 0.5 * h * k1, d_half);
    let k3 = system.rate(x + 0.5 * h * k2, d_half);
    let k4 = system.rate(x + h * k3, d1);
    let next = x + h / 6.0 * (k1 + 2.0 * (k2 + k3) + k4);
    if !next.is_finite() {
        return Err(DynamicsError::NonFiniteState { step: 1, time: h });
    }
    state.history.push_back(next);
    if state.history.len() > state.capacity {
        state.history.pop_front();
    }
    Ok(())
}
