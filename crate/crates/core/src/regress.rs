//! Ridge regression of the vector field onto the basis.
//!
//! The design matrix is never stored: rows are generated block by block from
//! the sampled points and folded into `A^T A` and `A^T y`. One Cholesky
//! factorization of `A^T A + n lambda I` then serves every model component.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{eval_row_into, CenterSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegressError {
    #[error("requested {requested} samples but only {available} are usable")]
    NotEnoughSamples { requested: usize, available: usize },
    #[error("normal equations are singular (pivot {pivot} at column {column}); use a positive lambda")]
    SingularSystem { column: usize, pivot: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

const BLOCK_ROWS: usize = 256;

/// Sampled regression rows: embedded points and their standardized derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionProblem {
    pub dim: usize,
    /// Row-major `n x dim`.
    pub points: Vec<f64>,
    /// Row-major `n x dim`.
    pub targets: Vec<f64>,
    pub indices: Vec<usize>,
    pub lambda: f64,
    pub seed: u64,
}

impl RegressionProblem {
    pub fn n(&self) -> usize {
        self.indices.len()
    }
}

/// Uniform sample of `n` rows without replacement, indices in ascending order.
pub fn sample_indices(available: usize, n: usize, seed: u64) -> Result<Vec<usize>, RegressError> {
    if n > available {
        return Err(RegressError::NotEnoughSamples { requested: n, available });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, available, n).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

pub fn sample_rows(
    points: &[f64],
    targets: &[f64],
    dim: usize,
    n: usize,
    lambda: f64,
    seed: u64,
) -> Result<RegressionProblem, RegressError> {
    if dim == 0 || points.len() % dim != 0 || points.len() != targets.len() {
        return Err(RegressError::Shape(format!(
            "{} point values and {} target values for dimension {dim}",
            points.len(),
            targets.len()
        )));
    }
    let indices = sample_indices(points.len() / dim, n, seed)?;
    let gather = |src: &[f64]| -> Vec<f64> {
        indices.iter().flat_map(|&i| src[i * dim..(i + 1) * dim].iter().copied()).collect()
    };
    Ok(RegressionProblem { dim, points: gather(points), targets: gather(targets), indices, lambda, seed })
}

/// Accumulated `A^T A` (full square, row-major) and `A^T Y` (`cols x targets`).
#[derive(Debug, Clone)]
pub struct NormalEquations {
    pub cols: usize,
    pub targets: usize,
    pub rows: usize,
    pub gram: Vec<f64>,
    pub cross: Vec<f64>,
}

impl NormalEquations {
    pub fn new(cols: usize, targets: usize) -> Self {
        Self { cols, targets, rows: 0, gram: vec![0.0; cols * cols], cross: vec![0.0; cols * targets] }
    }

    /// Folds in a row-major block `a` (`r x cols`) with targets `y` (`r x targets`).
    pub fn accumulate(&mut self, a: &[f64], y: &[f64]) {
        let p = self.cols;
        let t = self.targets;
        let r = a.len() / p;
        debug_assert_eq!(y.len(), r * t);
        if r == 0 {
            return;
        }
        unsafe {
            // gram += a^T a ; a^T is read through swapped strides
            matrixmultiply::dgemm(
                p,
                r,
                p,
                1.0,
                a.as_ptr(),
                1,
                p as isize,
                a.as_ptr(),
                p as isize,
                1,
                1.0,
                self.gram.as_mut_ptr(),
                p as isize,
                1,
            );
            matrixmultiply::dgemm(
                p,
                r,
                t,
                1.0,
                a.as_ptr(),
                1,
                p as isize,
                y.as_ptr(),
                t as isize,
                1,
                1.0,
                self.cross.as_mut_ptr(),
                t as isize,
                1,
            );
        }
        self.rows += r;
    }

    /// Builds the system from a dense row-major `n x cols` matrix.
    pub fn from_dense(a: &[f64], y: &[f64], cols: usize, targets: usize) -> Self {
        let mut ne = Self::new(cols, targets);
        let rows = a.len() / cols;
        for start in (0..rows).step_by(BLOCK_ROWS) {
            let end = (start + BLOCK_ROWS).min(rows);
            ne.accumulate(&a[start * cols..end * cols], &y[start * targets..end * targets]);
        }
        ne
    }

    /// Builds the system from basis rows evaluated at the problem's points.
    pub fn from_basis(problem: &RegressionProblem, centers: &CenterSet) -> Self {
        let cols = centers.layout().n_columns();
        let dim = problem.dim;
        let mut ne = Self::new(cols, dim);
        let mut block = vec![0.0; BLOCK_ROWS * cols];
        for (pts, ys) in problem.points.chunks(BLOCK_ROWS * dim).zip(problem.targets.chunks(BLOCK_ROWS * dim)) {
            let r = pts.len() / dim;
            for (x, row) in pts.chunks_exact(dim).zip(block.chunks_exact_mut(cols)) {
                eval_row_into(x, centers, row);
            }
            ne.accumulate(&block[..r * cols], ys);
        }
        ne
    }

    /// Cholesky factor of `gram + n lambda I`.
    pub fn factorize(&self, lambda: f64) -> Result<Cholesky, RegressError> {
        let shift = self.rows as f64 * lambda;
        let mut m = self.gram.clone();
        for i in 0..self.cols {
            m[i * self.cols + i] += shift;
        }
        Cholesky::new(m, self.cols, lambda == 0.0)
    }

    pub fn rhs(&self, k: usize) -> Vec<f64> {
        (0..self.cols).map(|i| self.cross[i * self.targets + k]).collect()
    }
}

/// Lower-triangular factor `L` with `L L^T = M`, row-major.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    fn new(mut m: Vec<f64>, n: usize, strict: bool) -> Result<Self, RegressError> {
        let max_diag = (0..n).map(|i| m[i * n + i].abs()).fold(0.0, f64::max);
        // without a ridge term, treat pivots at round-off level as rank loss
        let floor = if strict { max_diag * n as f64 * f64::EPSILON } else { 0.0 };
        for i in 0..n {
            let (done, rest) = m.split_at_mut(i * n);
            let row_i = &mut rest[..n];
            for j in 0..i {
                let row_j = &done[j * n..j * n + j];
                let s: f64 = row_i[..j].iter().zip(row_j).map(|(a, b)| a * b).sum();
                row_i[j] = (row_i[j] - s) / done[j * n + j];
            }
            let s: f64 = row_i[..i].iter().map(|v| v * v).sum();
            let pivot = row_i[i] - s;
            if !(pivot > floor) || !pivot.is_finite() {
                return Err(RegressError::SingularSystem { column: i, pivot });
            }
            row_i[i] = pivot.sqrt();
            for v in &mut row_i[i + 1..] {
                *v = 0.0;
            }
        }
        Ok(Self { n, l: m })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        for i in 0..n {
            let row = &self.l[i * n..i * n + i];
            let s: f64 = row.iter().zip(&x[..i]).map(|(a, b)| a * b).sum();
            x[i] = (x[i] - s) / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= self.l[j * n + i] * x[j];
            }
            x[i] = s / self.l[i * n + i];
        }
        x
    }
}

/// One coefficient vector per model component, each over `[1, x, phi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub beta: Vec<Vec<f64>>,
}

impl Coefficients {
    pub fn zeros(components: usize, cols: usize) -> Self {
        Self { beta: vec![vec![0.0; cols]; components] }
    }

    pub fn components(&self) -> usize {
        self.beta.len()
    }

    pub fn n_columns(&self) -> usize {
        self.beta.first().map_or(0, Vec::len)
    }

    pub fn is_finite(&self) -> bool {
        self.beta.iter().flatten().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub coefficients: Coefficients,
    /// Mean squared training residual per component.
    pub residual_mse: Vec<f64>,
}

/// Solves `(A^T A + n lambda I) b = A^T y` for a dense row-major `A` (`n x cols`).
pub fn ridge_solve(a: &[f64], y: &[f64], cols: usize, lambda: f64) -> Result<Vec<f64>, RegressError> {
    if cols == 0 || a.len() != y.len() * cols {
        return Err(RegressError::Shape(format!("{} matrix entries for {} rows of {cols} columns", a.len(), y.len())));
    }
    let ne = NormalEquations::from_dense(a, y, cols, 1);
    Ok(ne.factorize(lambda)?.solve(&ne.rhs(0)))
}

/// Fits every component against the shared basis.
pub fn fit_all(problem: &RegressionProblem, centers: &CenterSet) -> Result<FitResult, RegressError> {
    if centers.dim != problem.dim {
        return Err(RegressError::Shape(format!(
            "centers have dimension {} but samples have {}",
            centers.dim, problem.dim
        )));
    }
    let ne = NormalEquations::from_basis(problem, centers);
    let chol = ne.factorize(problem.lambda)?;
    let beta: Vec<Vec<f64>> = (0..problem.dim).map(|k| chol.solve(&ne.rhs(k))).collect();
    let coefficients = Coefficients { beta };
    if !coefficients.is_finite() {
        return Err(RegressError::SingularSystem { column: 0, pivot: f64::NAN });
    }
    let residual_mse = training_residual(problem, centers, &coefficients);
    Ok(FitResult { coefficients, residual_mse })
}

fn training_residual(problem: &RegressionProblem, centers: &CenterSet, coef: &Coefficients) -> Vec<f64> {
    let dim = problem.dim;
    let mut row = vec![0.0; centers.layout().n_columns()];
    let mut sse = vec![0.0; dim];
    for (x, y) in problem.points.chunks_exact(dim).zip(problem.targets.chunks_exact(dim)) {
        eval_row_into(x, centers, &mut row);
        for (k, b) in coef.beta.iter().enumerate() {
            let f: f64 = row.iter().zip(b).map(|(r, c)| r * c).sum();
            sse[k] += (y[k] - f).powi(2);
        }
    }
    let n = problem.n().max(1) as f64;
    sse.into_iter().map(|s| s / n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{select_centers, GridSpec};
    use proptest::prelude::*;
    use rand::Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn loss(a: &[f64], y: &[f64], b: &[f64], lambda: f64) -> f64 {
        let n = y.len();
        let cols = b.len();
        let r: f64 = (0..n)
            .map(|i| {
                let f: f64 = (0..cols).map(|j| a[i * cols + j] * b[j]).sum();
                (y[i] - f).powi(2)
            })
            .sum();
        r / (2.0 * n as f64) + 0.5 * lambda * b.iter().map(|v| v * v).sum::<f64>()
    }

    // plain gradient descent on the ridge loss, run until the step stalls
    fn gradient_descent(a: &[f64], y: &[f64], cols: usize, lambda: f64) -> Vec<f64> {
        let n = y.len();
        let frob: f64 = a.iter().map(|v| v * v).sum::<f64>() / n as f64;
        let step = 1.0 / (frob + lambda);
        let mut b = vec![0.0; cols];
        for _ in 0..200_000 {
            let mut grad = vec![lambda; cols];
            for (g, bj) in grad.iter_mut().zip(&b) {
                *g *= bj;
            }
            for i in 0..n {
                let row = &a[i * cols..(i + 1) * cols];
                let r: f64 = row.iter().zip(&b).map(|(x, c)| x * c).sum::<f64>() - y[i];
                for (g, x) in grad.iter_mut().zip(row) {
                    *g += r * x / n as f64;
                }
            }
            let mut moved = 0.0f64;
            for (bj, g) in b.iter_mut().zip(&grad) {
                *bj -= step * g;
                moved = moved.max((step * g).abs());
            }
            if moved < 1e-14 {
                break;
            }
        }
        b
    }

    #[test]
    fn identity_design_returns_targets() {
        let n = 6;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + i] = 1.0;
        }
        let y: Vec<f64> = (0..n).map(|i| i as f64 - 2.5).collect();
        let b = ridge_solve(&a, &y, n, 0.0).unwrap();
        assert!(b.iter().zip(&y).all(|(u, v)| (u - v).abs() < 1e-14));
        let lambda = 0.05;
        let b = ridge_solve(&a, &y, n, lambda).unwrap();
        let scale = 1.0 + n as f64 * lambda;
        assert!(b.iter().zip(&y).all(|(u, v)| (u - v / scale).abs() < 1e-14));
    }

    #[test]
    fn matches_gradient_descent() {
        for seed in 0..3 {
            let a = random_matrix(50, 8, seed);
            let y = random_matrix(50, 1, seed + 100);
            let b = ridge_solve(&a, &y, 8, 1e-3).unwrap();
            let oracle = gradient_descent(&a, &y, 8, 1e-3);
            for (u, v) in b.iter().zip(&oracle) {
                assert!((u - v).abs() < 1e-6, "{u} vs {v}");
            }
        }
    }

    #[test]
    fn satisfies_normal_equations() {
        let (n, p, lambda) = (50, 8, 1e-3);
        let a = random_matrix(n, p, 7);
        let y = random_matrix(n, 1, 8);
        let b = ridge_solve(&a, &y, p, lambda).unwrap();
        let mut aty = vec![0.0; p];
        let mut lhs = vec![0.0; p];
        for i in 0..n {
            let row = &a[i * p..(i + 1) * p];
            let ab: f64 = row.iter().zip(&b).map(|(x, c)| x * c).sum();
            for j in 0..p {
                aty[j] += row[j] * y[i];
                lhs[j] += row[j] * ab;
            }
        }
        let res: f64 = (0..p).map(|j| (lhs[j] + n as f64 * lambda * b[j] - aty[j]).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = aty.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(res <= 1e-8 * norm);
    }

    #[test]
    fn rank_deficient_without_ridge_is_singular() {
        let mut a = random_matrix(20, 4, 3);
        for i in 0..20 {
            a[i * 4 + 3] = 2.0 * a[i * 4 + 1];
        }
        let y = random_matrix(20, 1, 4);
        assert!(matches!(ridge_solve(&a, &y, 4, 0.0), Err(RegressError::SingularSystem { .. })));
        assert!(ridge_solve(&a, &y, 4, 1e-6).is_ok());
    }

    #[test]
    fn sampling_is_deterministic_and_distinct() {
        let a = sample_indices(1_000_000, 50_000, 9).unwrap();
        let b = sample_indices(1_000_000, 50_000, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 50_000);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(sample_indices(10, 10, 1).unwrap(), (0..10).collect::<Vec<_>>());
        assert!(matches!(sample_indices(10, 11, 1), Err(RegressError::NotEnoughSamples { .. })));
        assert_ne!(a, sample_indices(1_000_000, 50_000, 10).unwrap());
    }

    fn toy_problem(dim: usize, n: usize, lambda: f64) -> (RegressionProblem, CenterSet) {
        let pts = random_matrix(n, dim, 11);
        let targets: Vec<f64> = pts.chunks_exact(dim).flat_map(|x| x.iter().map(|v| v.sin())).collect();
        let problem = sample_rows(&pts, &targets, dim, n, lambda, 0).unwrap();
        let centers = select_centers(&problem.points, dim, GridSpec::new(1.0, 3, 0.1), 10_000).unwrap();
        (problem, centers)
    }

    #[test]
    fn duplicate_targets_give_duplicate_coefficients() {
        let (mut problem, centers) = toy_problem(2, 200, 1e-6);
        for pair in problem.targets.chunks_exact_mut(2) {
            pair[1] = pair[0];
        }
        let fit = fit_all(&problem, &centers).unwrap();
        assert_eq!(fit.coefficients.beta[0], fit.coefficients.beta[1]);
    }

    #[test]
    fn single_component_matches_ridge_solve() {
        let (problem, centers) = toy_problem(1, 120, 1e-5);
        let fit = fit_all(&problem, &centers).unwrap();
        let a: Vec<f64> = problem.points.iter().flat_map(|&x| crate::basis::eval_row(&[x], &centers)).collect();
        let b = ridge_solve(&a, &problem.targets, centers.layout().n_columns(), 1e-5).unwrap();
        assert_eq!(fit.coefficients.beta[0], b);
    }

    #[test]
    fn recovers_planted_coefficients() {
        let (n, p) = (200, 10);
        let a = random_matrix(n, p, 21);
        let truth: Vec<f64> = (0..p).map(|j| (j as f64 - 4.5) * 0.3).collect();
        let y: Vec<f64> = a.chunks_exact(p).map(|r| r.iter().zip(&truth).map(|(x, c)| x * c).sum()).collect();
        let b = ridge_solve(&a, &y, p, 1e-12).unwrap();
        let err: f64 = b.iter().zip(&truth).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = truth.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(err < 1e-4 * norm);
    }

    #[test]
    fn growing_lambda_shrinks_coefficients() {
        let a = random_matrix(40, 6, 5);
        let y = random_matrix(40, 1, 6);
        let norms: Vec<f64> = [1e-6, 1e-4, 1e-2, 1.0, 1e2, 1e4]
            .iter()
            .map(|&l| ridge_solve(&a, &y, 6, l).unwrap().iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        assert!(norms.windows(2).all(|w| w[1] < w[0]), "{norms:?}");
        assert!(norms[5] < 1e-4);
    }

    #[test]
    fn residual_reported_matches_direct_evaluation() {
        let (problem, centers) = toy_problem(2, 300, 1e-6);
        let fit = fit_all(&problem, &centers).unwrap();
        assert!(fit.residual_mse.iter().all(|&r| r >= 0.0 && r < 1e-2));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn perturbing_the_solution_never_lowers_the_loss(seed in 0u64..1000, scale in 1e-6f64..1e-2) {
            let a = random_matrix(30, 5, seed);
            let y = random_matrix(30, 1, seed + 1);
            let lambda = 1e-3;
            let b = ridge_solve(&a, &y, 5, lambda).unwrap();
            let base = loss(&a, &y, &b, lambda);
            let eps = random_matrix(1, 5, seed + 2);
            let shifted: Vec<f64> = b.iter().zip(&eps).map(|(u, e)| u + scale * e).collect();
            prop_assert!(loss(&a, &y, &shifted, lambda) >= base - 1e-15);
        }
    }
}
