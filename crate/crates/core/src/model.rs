//! The fitted vector field, its integration, and the model file format.

use std::cell::RefCell;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::basis::{CenterSet, GridSpec, NeighborhoodNorm};
use crate::dynamics::{DynamicsError, OdeSystem, Rk4, Trajectory};
use crate::observe::Standardization;
use crate::regress::Coefficients;

pub const MODEL_MAGIC: &[u8; 4] = b"RFR1";
pub const MODEL_FORMAT_VERSION: u32 = 1;
/// How many times `predict` halves the step after a blow-up.
pub const MAX_HALVINGS: u32 = 3;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model file format version {found} is not supported (expected {expected})")]
    FormatVersionMismatch { found: u32, expected: u32 },
    #[error("corrupt model file: {0}")]
    CorruptFile(String),
    #[error("inconsistent model: {0}")]
    Shape(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// A reconstructed ODE in standardized delay coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct RfrModel {
    pub dim: usize,
    /// Observables interleaved per delay block; also the delay-pair offset.
    pub observables: usize,
    pub tau: f64,
    /// Observation step, the default integration step and output spacing.
    pub dt: f64,
    pub centers: CenterSet,
    pub coefficients: Coefficients,
    pub standardization: Standardization,
    pub provenance: Vec<(String, String)>,
}

impl RfrModel {
    pub fn validate(&self) -> Result<(), ModelError> {
        let cols = self.centers.layout().n_columns();
        if self.centers.dim != self.dim {
            return Err(ModelError::Shape(format!("centers have dimension {}, model {}", self.centers.dim, self.dim)));
        }
        if self.coefficients.components() != self.dim || self.coefficients.beta.iter().any(|b| b.len() != cols) {
            return Err(ModelError::Shape(format!("expected {} coefficient vectors of length {cols}", self.dim)));
        }
        if self.observables == 0 || self.dim % self.observables != 0 {
            return Err(ModelError::Shape(format!("{} observables do not divide dimension {}", self.observables, self.dim)));
        }
        if self.standardization.mean.len() != self.observables || self.standardization.std.len() != self.observables {
            return Err(ModelError::Shape("standardization does not match the observables".into()));
        }
        if !(self.dt > 0.0) || !(self.tau >= 0.0) {
            return Err(ModelError::Shape(format!("bad time steps dt={} tau={}", self.dt, self.tau)));
        }
        Ok(())
    }

    /// `F(x)` written into `out`; `scratch` holds the RBF values.
    pub fn eval_f_into(&self, x: &[f64], scratch: &mut [f64], out: &mut [f64]) {
        let d = self.dim;
        self.centers.rbf_into(x, scratch);
        for (o, b) in out.iter_mut().zip(&self.coefficients.beta) {
            let lin: f64 = b[1..=d].iter().zip(x).map(|(c, v)| c * v).sum();
            let rbf: f64 = b[1 + d..].iter().zip(scratch.iter()).map(|(c, v)| c * v).sum();
            *o = b[0] + lin + rbf;
        }
    }

    pub fn eval_f(&self, x: &[f64]) -> Vec<f64> {
        let mut scratch = vec![0.0; self.centers.len()];
        let mut out = vec![0.0; self.dim];
        self.eval_f_into(x, &mut scratch, &mut out);
        out
    }

    pub fn field(&self) -> ModelField<'_> {
        ModelField { model: self, scratch: RefCell::new(vec![0.0; self.centers.len()]) }
    }

    /// Observable 1 in original units.
    pub fn destandardize_first(&self, value: f64) -> f64 {
        self.standardization.inverse(0, value)
    }

    pub fn provenance_value(&self, key: &str) -> Option<&str> {
        self.provenance.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

/// [`OdeSystem`] view of a model with its own scratch buffer.
pub struct ModelField<'a> {
    model: &'a RfrModel,
    scratch: RefCell<Vec<f64>>,
}

impl OdeSystem for ModelField<'_> {
    fn dim(&self) -> usize {
        self.model.dim
    }

    fn rhs(&self, x: &[f64], dx: &mut [f64]) {
        self.model.eval_f_into(x, &mut self.scratch.borrow_mut(), dx);
    }
}

/// Integrates with RK4 at `dt_int = model.dt / substeps`, recording every
/// `substeps` steps. Returns `samples` states including `x0`.
pub fn integrate_sampled(
    model: &RfrModel,
    x0: &[f64],
    samples: usize,
    substeps: usize,
) -> Result<Trajectory, DynamicsError> {
    if x0.len() != model.dim {
        return Err(DynamicsError::InvalidParameter(format!(
            "initial state has {} components, model has {}",
            x0.len(),
            model.dim
        )));
    }
    if substeps == 0 {
        return Err(DynamicsError::InvalidParameter("substeps must be positive".into()));
    }
    let field = model.field();
    let h = model.dt / substeps as f64;
    let mut rk = Rk4::new(model.dim);
    let mut x = x0.to_vec();
    let mut traj = Trajectory::new(model.dim, model.dt);
    traj.push(&x);
    for i in 1..samples {
        for s in 0..substeps {
            rk.step(&field, &mut x, h);
            if !x.iter().all(|v| v.is_finite()) {
                let step = (i - 1) * substeps + s + 1;
                return Err(DynamicsError::NonFiniteState { step, time: step as f64 * h });
            }
        }
        traj.push(&x);
    }
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub trajectory: Trajectory,
    pub dt_int: f64,
}

impl Prediction {
    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.trajectory.dt
    }
}

/// Model trajectory from `x0` over `horizon` time units, sampled every `model.dt`.
///
/// Starts at `dt_int` (default `model.dt`) and halves the step on blow-up up
/// to [`MAX_HALVINGS`] times.
pub fn predict(model: &RfrModel, x0: &[f64], horizon: f64, dt_int: Option<f64>) -> Result<Prediction, ModelError> {
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(ModelError::Dynamics(DynamicsError::InvalidParameter(format!("bad horizon {horizon}"))));
    }
    let base = dt_int.unwrap_or(model.dt);
    let ratio = model.dt / base;
    let substeps = ratio.round();
    if !(substeps >= 1.0) || (ratio - substeps).abs() > 1e-9 * ratio {
        return Err(ModelError::Dynamics(DynamicsError::InvalidParameter(format!(
            "dt_int {base} does not divide the model step {}",
            model.dt
        ))));
    }
    let samples = (horizon / model.dt).round() as usize + 1;
    let mut last_err = None;
    for halving in 0..=MAX_HALVINGS {
        let sub = (substeps as usize) << halving;
        match integrate_sampled(model, x0, samples, sub) {
            Ok(trajectory) => return Ok(Prediction { trajectory, dt_int: model.dt / sub as f64 }),
            Err(e @ DynamicsError::NonFiniteState { .. }) => last_err = Some(e),
            Err(e) => return Err(e.into()),
        }
    }
    Err(last_err.expect("at least one attempt").into())
}

// ---- binary container ----

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn section(&mut self, tag: &[u8; 4], payload: Vec<u8>) {
        self.buf.extend_from_slice(tag);
        self.buf.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        self.buf.extend_from_slice(&payload);
    }
}

#[derive(Default)]
struct Payload(Vec<u8>);

impl Payload {
    fn u64(mut self, v: u64) -> Self {
        self.0.extend_from_slice(&v.to_le_bytes());
        self
    }

    fn f64(mut self, v: f64) -> Self {
        self.0.extend_from_slice(&v.to_le_bytes());
        self
    }

    fn f64s(mut self, vs: &[f64]) -> Self {
        for v in vs {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
        self
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.buf.len() - self.pos < n {
            return Err(ModelError::CorruptFile(format!("unexpected end of data at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize, ModelError> {
        usize::try_from(self.u64()?).map_err(|_| ModelError::CorruptFile("size out of range".into()))
    }

    fn f64(&mut self) -> Result<f64, ModelError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, ModelError> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| ModelError::CorruptFile("size overflow".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    fn section(&mut self, tag: &[u8; 4]) -> Result<Reader<'a>, ModelError> {
        let found = self.take(4)?;
        if found != tag {
            return Err(ModelError::CorruptFile(format!(
                "expected section {}, found {}",
                String::from_utf8_lossy(tag),
                String::from_utf8_lossy(found)
            )));
        }
        let len = self.usize()?;
        Ok(Reader { buf: self.take(len)?, pos: 0 })
    }
}

fn norm_code(norm: NeighborhoodNorm) -> u64 {
    match norm {
        NeighborhoodNorm::L2 => 0,
        NeighborhoodNorm::LInf => 1,
    }
}

/// Serializes a model into the self-describing container.
pub fn to_bytes(model: &RfrModel) -> Vec<u8> {
    let mut w = Writer { buf: Vec::new() };
    w.buf.extend_from_slice(MODEL_MAGIC);
    w.buf.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
    w.section(
        b"HEAD",
        Payload::default().u64(model.dim as u64).u64(model.observables as u64).f64(model.tau).f64(model.dt).0,
    );
    let st = &model.standardization;
    w.section(b"STDZ", Payload::default().u64(st.mean.len() as u64).f64s(&st.mean).f64s(&st.std).0);
    let g = &model.centers.grid;
    w.section(
        b"LAYO",
        Payload::default()
            .u64(model.centers.dim as u64)
            .u64(model.centers.len() as u64)
            .f64(g.delta)
            .u64(g.m as u64)
            .f64(g.p)
            .u64(norm_code(g.norm))
            .f64(g.anchor)
            .0,
    );
    w.section(b"CENT", Payload::default().f64s(&model.centers.centers).0);
    w.section(b"SIG2", Payload::default().f64(model.centers.sigma2).0);
    let mut coef = Payload::default()
        .u64(model.coefficients.components() as u64)
        .u64(model.coefficients.n_columns() as u64);
    for b in &model.coefficients.beta {
        coef = coef.f64s(b);
    }
    w.section(b"COEF", coef.0);
    let prov: String = model.provenance.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    w.section(b"PROV", prov.into_bytes());
    let crc = crc32fast::hash(&w.buf);
    w.buf.extend_from_slice(&crc.to_le_bytes());
    w.buf
}

pub fn from_bytes(bytes: &[u8]) -> Result<RfrModel, ModelError> {
    if bytes.len() < 12 || &bytes[..4] != MODEL_MAGIC {
        return Err(ModelError::CorruptFile("missing RFR1 magic bytes".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != MODEL_FORMAT_VERSION {
        return Err(ModelError::FormatVersionMismatch { found: version, expected: MODEL_FORMAT_VERSION });
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(ModelError::CorruptFile("checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 8 };

    let mut head = r.section(b"HEAD")?;
    let dim = head.usize()?;
    let observables = head.usize()?;
    let tau = head.f64()?;
    let dt = head.f64()?;

    let mut stdz = r.section(b"STDZ")?;
    let k = stdz.usize()?;
    let mean = stdz.f64s(k)?;
    let std = stdz.f64s(k)?;

    let mut layo = r.section(b"LAYO")?;
    let cdim = layo.usize()?;
    let n_centers = layo.usize()?;
    let delta = layo.f64()?;
    let m = u32::try_from(layo.u64()?).map_err(|_| ModelError::CorruptFile("bad m".into()))?;
    let p = layo.f64()?;
    let norm = match layo.u64()? {
        0 => NeighborhoodNorm::L2,
        1 => NeighborhoodNorm::LInf,
        other => return Err(ModelError::CorruptFile(format!("unknown norm code {other}"))),
    };
    let anchor = layo.f64()?;

    let mut cent = r.section(b"CENT")?;
    let centers = cent.f64s(
        n_centers.checked_mul(cdim).ok_or_else(|| ModelError::CorruptFile("center count overflow".into()))?,
    )?;
    let sigma2 = r.section(b"SIG2")?.f64()?;

    let mut coef = r.section(b"COEF")?;
    let comps = coef.usize()?;
    let cols = coef.usize()?;
    let beta = (0..comps).map(|_| coef.f64s(cols)).collect::<Result<Vec<_>, _>>()?;

    let prov = r.section(b"PROV")?;
    let text = std::str::from_utf8(prov.buf).map_err(|_| ModelError::CorruptFile("provenance is not UTF-8".into()))?;
    let provenance = text
        .lines()
        .map(|line| {
            line.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| ModelError::CorruptFile(format!("bad provenance line '{line}'")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if r.pos != body.len() {
        return Err(ModelError::CorruptFile("trailing bytes after the last section".into()));
    }

    let grid = GridSpec { delta, m, p, norm, anchor };
    let model = RfrModel {
        dim,
        observables,
        tau,
        dt,
        centers: CenterSet { dim: cdim, centers, sigma2, grid },
        coefficients: Coefficients { beta },
        standardization: Standardization { mean, std },
        provenance,
    };
    model.validate().map_err(|e| ModelError::CorruptFile(e.to_string()))?;
    Ok(model)
}

pub fn save(model: &RfrModel, path: &Path) -> Result<(), ModelError> {
    fs::write(path, to_bytes(model)).map_err(|source| ModelError::Io { path: path.display().to_string(), source })
}

pub fn load(path: &Path) -> Result<RfrModel, ModelError> {
    let bytes = fs::read(path).map_err(|source| ModelError::Io { path: path.display().to_string(), source })?;
    from_bytes(&bytes)
}
