//! Central finite-difference estimates of time derivatives with a stride `l`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::observe::mean_std;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DerivError {
    #[error("series of {len} samples is too short for a stencil of half-width {half_width}")]
    SeriesTooShort { len: usize, half_width: usize },
    #[error("stride must be at least 1")]
    ZeroStride,
    #[error("unsupported stencil order {0} (expected 2 or 6)")]
    UnsupportedOrder(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum StencilOrder {
    Second,
    Sixth,
}

impl StencilOrder {
    pub fn as_u32(self) -> u32 {
        match self {
            StencilOrder::Second => 2,
            StencilOrder::Sixth => 6,
        }
    }

    /// Offsets (in units of `l`) with weights; the sum is divided by `denominator * l * dt`.
    fn stencil(self) -> (&'static [(isize, f64)], f64) {
        match self {
            StencilOrder::Second => (&[(1, 1.0), (-1, -1.0)], 2.0),
            StencilOrder::Sixth => {
                (&[(3, 1.0), (2, -9.0), (1, 45.0), (-1, -45.0), (-2, 9.0), (-3, -1.0)], 60.0)
            }
        }
    }

    fn reach(self) -> usize {
        self.as_u32() as usize / 2
    }
}

impl TryFrom<u32> for StencilOrder {
    type Error = DerivError;

    fn try_from(v: u32) -> Result<Self, DerivError> {
        match v {
            2 => Ok(StencilOrder::Second),
            6 => Ok(StencilOrder::Sixth),
            other => Err(DerivError::UnsupportedOrder(other)),
        }
    }
}

impl From<StencilOrder> for u32 {
    fn from(o: StencilOrder) -> u32 {
        o.as_u32()
    }
}

impl std::fmt::Display for StencilOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.as_u32())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivativeConfig {
    pub order: StencilOrder,
    pub stride: usize,
    pub dt: f64,
}

impl DerivativeConfig {
    pub fn new(order: StencilOrder, stride: usize, dt: f64) -> Self {
        Self { order, stride, dt }
    }

    /// Samples dropped at each end of the series.
    pub fn half_width(&self) -> usize {
        self.order.reach() * self.stride
    }
}

/// Derivatives at the interior samples `first_index .. first_index + len()`
/// of the input, row-major with the same dimension as the input.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeEstimate {
    pub first_index: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl DerivativeEstimate {
    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

/// Differences a row-major series of `dim`-vectors; boundary samples whose
/// stencil would leave the series are dropped.
pub fn estimate_derivative(
    samples: &[f64],
    dim: usize,
    cfg: &DerivativeConfig,
) -> Result<DerivativeEstimate, DerivError> {
    if cfg.stride == 0 {
        return Err(DerivError::ZeroStride);
    }
    let n = samples.len() / dim;
    let half = cfg.half_width();
    if n <= 2 * half {
        return Err(DerivError::SeriesTooShort { len: n, half_width: half });
    }
    let (weights, denom) = cfg.order.stencil();
    let scale = 1.0 / (denom * cfg.stride as f64 * cfg.dt);
    let l = cfg.stride as isize;
    let mut values = Vec::with_capacity((n - 2 * half) * dim);
    for i in half..n - half {
        for j in 0..dim {
            let mut acc = 0.0;
            for &(off, w) in weights {
                let idx = (i as isize + off * l) as usize;
                acc += w * samples[idx * dim + j];
            }
            values.push(acc * scale);
        }
    }
    Ok(DerivativeEstimate { first_index: half, dim, values })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrideError {
    pub stride: usize,
    pub error_std: f64,
}

/// Error statistics of the estimator against known derivatives for each
/// stride in `strides`, evaluated on a common set of interior points.
pub fn scan_stride(
    noisy: &[f64],
    truth: &[f64],
    dt: f64,
    order: StencilOrder,
    strides: impl IntoIterator<Item = usize>,
) -> Result<Vec<StrideError>, DerivError> {
    let strides: Vec<usize> = strides.into_iter().collect();
    let max_half = strides.iter().map(|&l| order.reach() * l).max().unwrap_or(0);
    let n = noisy.len().min(truth.len());
    if n <= 2 * max_half {
        return Err(DerivError::SeriesTooShort { len: n, half_width: max_half });
    }
    strides
        .into_iter()
        .map(|stride| {
            let cfg = DerivativeConfig::new(order, stride, dt);
            let est = estimate_derivative(&noisy[..n], 1, &cfg)?;
            let errors: Vec<f64> = (max_half..n - max_half)
                .map(|i| est.values[i - est.first_index] - truth[i])
                .collect();
            let (_, error_std) = mean_std(&errors);
            Ok(StrideError { stride, error_std })
        })
        .collect()
}

/// Stride with the smallest error standard deviation.
pub fn best_stride(scan: &[StrideError]) -> Option<StrideError> {
    scan.iter().copied().min_by(|a, b| a.error_std.total_cmp(&b.error_std))
}
