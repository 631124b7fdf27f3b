//! Gaussian radial basis on a lattice of centers near the data.
//!
//! A lattice point `anchor + i * delta` (per axis) becomes a center when at
//! least one sample lies within `(m - 1) * delta` of it. All centers share the
//! width `sigma^2 = ((m - 1) delta)^2 / (-ln p)`, so a basis function has value
//! exactly `p` at the retention radius.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BasisError {
    #[error("invalid basis parameters: {0}")]
    InvalidParams(String),
    #[error("{found} centers exceed the cap of {cap}; increase the grid size")]
    TooManyCenters { found: usize, cap: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NeighborhoodNorm {
    #[default]
    L2,
    LInf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub delta: f64,
    pub m: u32,
    pub p: f64,
    #[serde(default)]
    pub norm: NeighborhoodNorm,
    #[serde(default)]
    pub anchor: f64,
}

impl GridSpec {
    pub fn new(delta: f64, m: u32, p: f64) -> Self {
        Self { delta, m, p, norm: NeighborhoodNorm::L2, anchor: 0.0 }
    }

    pub fn radius(&self) -> f64 {
        (self.m as f64 - 1.0) * self.delta
    }

    pub fn validate(&self) -> Result<(), BasisError> {
        sigma2(self.m, self.p, self.delta).map(|_| ())
    }
}

pub const DEFAULT_CENTER_CAP: usize = 1_000_000;

/// `((m - 1) delta)^2 / (-ln p)`.
pub fn sigma2(m: u32, p: f64, delta: f64) -> Result<f64, BasisError> {
    if m < 2 {
        return Err(BasisError::InvalidParams(format!("m must be at least 2, got {m}")));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(BasisError::InvalidParams(format!("p must lie in (0, 1), got {p}")));
    }
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(BasisError::InvalidParams(format!("grid size must be positive, got {delta}")));
    }
    let r = (m as f64 - 1.0) * delta;
    Ok(r * r / -p.ln())
}

/// Column order of a design-matrix row: constant, linear terms, then RBFs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisLayout {
    pub dim: usize,
    pub n_centers: usize,
}

impl BasisLayout {
    pub fn n_columns(&self) -> usize {
        1 + self.dim + self.n_centers
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterSet {
    pub dim: usize,
    /// Row-major `len() x dim` center coordinates.
    pub centers: Vec<f64>,
    pub sigma2: f64,
    pub grid: GridSpec,
}

impl CenterSet {
    pub fn empty(dim: usize, grid: GridSpec) -> Result<Self, BasisError> {
        Ok(Self { dim, centers: Vec::new(), sigma2: sigma2(grid.m, grid.p, grid.delta)?, grid })
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.centers.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn center(&self, j: usize) -> &[f64] {
        &self.centers[j * self.dim..(j + 1) * self.dim]
    }

    pub fn layout(&self) -> BasisLayout {
        BasisLayout { dim: self.dim, n_centers: self.len() }
    }

    /// Writes `phi_j(x)` for every center into `out`.
    pub fn rbf_into(&self, x: &[f64], out: &mut [f64]) {
        let inv = 1.0 / self.sigma2;
        for (o, c) in out.iter_mut().zip(self.centers.chunks_exact(self.dim)) {
            let d2: f64 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
            *o = (-d2 * inv).exp();
        }
    }
}

fn distance(norm: NeighborhoodNorm, a: &[f64], b: &[f64]) -> f64 {
    match norm {
        NeighborhoodNorm::L2 => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
        NeighborhoodNorm::LInf => a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max),
    }
}

/// Lattice points with at least one sample within the retention radius.
///
/// Samples are bucketed by lattice cell; each occupied cell proposes the
/// lattice points reachable from it, and a proposal is accepted as soon as
/// one sample of the cell is close enough. Centers come back sorted by their
/// integer lattice coordinates.
pub fn select_centers(samples: &[f64], dim: usize, grid: GridSpec, cap: usize) -> Result<CenterSet, BasisError> {
    let s2 = sigma2(grid.m, grid.p, grid.delta)?;
    if dim == 0 {
        return Err(BasisError::InvalidParams("dimension must be positive".into()));
    }
    let radius = grid.radius();
    let tol = radius * (1.0 + 1e-12);
    let reach = (grid.m - 1) as i64;

    let mut cells: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
    for (i, x) in samples.chunks_exact(dim).enumerate() {
        let cell: Vec<i64> = x.iter().map(|v| ((v - grid.anchor) / grid.delta).floor() as i64).collect();
        cells.entry(cell).or_default().push(i);
    }
    let mut occupied: Vec<(&Vec<i64>, &Vec<usize>)> = cells.iter().collect();
    occupied.sort();

    let mut accepted: HashSet<Vec<i64>> = HashSet::new();
    let mut candidate = vec![0i64; dim];
    let mut coords = vec![0.0; dim];
    let span = (2 * reach + 2) as usize;
    for (cell, members) in occupied {
        // odometer over cell - reach ..= cell + reach + 1 on every axis
        let mut offset = vec![0usize; dim];
        'outer: loop {
            for a in 0..dim {
                candidate[a] = cell[a] - reach + offset[a] as i64;
                coords[a] = grid.anchor + candidate[a] as f64 * grid.delta;
            }
            if !accepted.contains(&candidate) {
                // closest point of the cell box to the candidate
                let gap: Vec<f64> = (0..dim)
                    .map(|a| {
                        let lo = grid.anchor + cell[a] as f64 * grid.delta;
                        let hi = lo + grid.delta;
                        (lo - coords[a]).max(coords[a] - hi).max(0.0)
                    })
                    .collect();
                let zero = vec![0.0; dim];
                if distance(grid.norm, &gap, &zero) <= tol {
                    let hit = members
                        .iter()
                        .any(|&i| distance(grid.norm, &samples[i * dim..(i + 1) * dim], &coords) <= tol);
                    if hit {
                        accepted.insert(candidate.clone());
                        if accepted.len() > cap {
                            return Err(BasisError::TooManyCenters { found: accepted.len(), cap });
                        }
                    }
                }
            }
            for a in 0..dim {
                offset[a] += 1;
                if offset[a] < span {
                    continue 'outer;
                }
                offset[a] = 0;
            }
            break;
        }
    }

    let mut lattice: Vec<Vec<i64>> = accepted.into_iter().collect();
    lattice.sort();
    let centers = lattice
        .iter()
        .flat_map(|idx| idx.iter().map(|&i| grid.anchor + i as f64 * grid.delta))
        .collect();
    Ok(CenterSet { dim, centers, sigma2: s2, grid })
}

/// `[1, x_1..x_D, phi_1(x)..phi_J(x)]`.
pub fn eval_row(x: &[f64], centers: &CenterSet) -> Vec<f64> {
    let mut row = vec![0.0; centers.layout().n_columns()];
    eval_row_into(x, centers, &mut row);
    row
}

pub fn eval_row_into(x: &[f64], centers: &CenterSet, row: &mut [f64]) {
    let d = centers.dim;
    row[0] = 1.0;
    row[1..=d].copy_from_slice(x);
    centers.rbf_into(x, &mut row[1 + d..]);
}
