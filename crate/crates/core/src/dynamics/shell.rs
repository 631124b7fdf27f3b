use num_complex::Complex64;

use super::OdeSystem;

/// GOY shell model of turbulence.
///
/// Shell wavenumbers are `k_j = k0 * ratio^j`. The state is stored as
/// interleaved real/imaginary parts so it can be integrated as a real ODE.
#[derive(Debug, Clone, PartialEq)]
pub struct ShellModel {
    pub shells: usize,
    pub nu: f64,
    pub forcing: Complex64,
    pub delta: f64,
    pub k0: f64,
    pub ratio: f64,
}

impl Default for ShellModel {
    fn default() -> Self {
        Self {
            shells: 9,
            nu: 0.00251,
            forcing: Complex64::new(0.005, 0.005),
            delta: 0.5,
            k0: 1.0 / 16.0,
            ratio: 2.0,
        }
    }
}

/// Coupling coefficients `c_j^(1..3)` with the boundary zeros applied.
#[derive(Debug, Clone, PartialEq)]
pub struct ShellCouplings {
    pub k: Vec<f64>,
    pub c1: Vec<f64>,
    pub c2: Vec<f64>,
    pub c3: Vec<f64>,
}

impl ShellModel {
    pub fn wavenumber(&self, j: usize) -> f64 {
        self.k0 * self.ratio.powi(j as i32)
    }

    pub fn couplings(&self) -> ShellCouplings {
        let n = self.shells;
        let k: Vec<f64> = (1..=n).map(|j| self.wavenumber(j)).collect();
        let mut c1 = vec![0.0; n];
        let mut c2 = vec![0.0; n];
        let mut c3 = vec![0.0; n];
        for j in 1..=n {
            // a coupling vanishes whenever it would reach outside shells 1..=n
            if j + 2 <= n {
                c1[j - 1] = self.wavenumber(j);
            }
            if j >= 2 && j < n {
                c2[j - 1] = -self.delta * self.wavenumber(j - 1);
            }
            if j >= 3 {
                c3[j - 1] = (self.delta - 1.0) * self.wavenumber(j - 2);
            }
        }
        ShellCouplings { k, c1, c2, c3 }
    }
}

/// `du_j/dt` for all shells.
pub fn shell_rhs(u: &[Complex64], model: &ShellModel) -> Vec<Complex64> {
    let c = model.couplings();
    let mut out = vec![Complex64::new(0.0, 0.0); u.len()];
    shell_rhs_into(u, model, &c, &mut out);
    out
}

fn shell_rhs_into(u: &[Complex64], model: &ShellModel, c: &ShellCouplings, out: &mut [Complex64]) {
    let n = u.len();
    let zero = Complex64::new(0.0, 0.0);
    let conj = |i: isize| -> Complex64 {
        if i >= 0 && (i as usize) < n {
            u[i as usize].conj()
        } else {
            zero
        }
    };
    let i_unit = Complex64::new(0.0, 1.0);
    for j in 0..n {
        let ji = j as isize;
        let nonlinear = c.c1[j] * conj(ji + 2) * conj(ji + 1)
            + c.c2[j] * conj(ji + 1) * conj(ji - 1)
            + c.c3[j] * conj(ji - 1) * conj(ji - 2);
        let mut v = -model.nu * c.k[j] * c.k[j] * u[j] + i_unit * nonlinear;
        if j == 0 {
            v += model.forcing;
        }
        out[j] = v;
    }
}

/// Real-valued view of the shell model for the generic integrators.
pub(crate) struct ShellOde {
    pub model: ShellModel,
    couplings: ShellCouplings,
}

impl ShellOde {
    pub fn new(model: ShellModel) -> Self {
        let couplings = model.couplings();
        Self { model, couplings }
    }
}

impl OdeSystem for ShellOde {
    fn dim(&self) -> usize {
        2 * self.model.shells
    }

    fn rhs(&self, x: &[f64], dx: &mut [f64]) {
        let n = self.model.shells;
        let mut u = [Complex64::new(0.0, 0.0); 32];
        let mut out = [Complex64::new(0.0, 0.0); 32];
        assert!(n <= 32, "at most 32 shells supported");
        for j in 0..n {
            u[j] = Complex64::new(x[2 * j], x[2 * j + 1]);
        }
        shell_rhs_into(&u[..n], &self.model, &self.couplings, &mut out[..n]);
        for j in 0..n {
            dx[2 * j] = out[j].re;
            dx[2 * j + 1] = out[j].im;
        }
    }
}
