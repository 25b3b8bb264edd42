//! Linear smoothers: least squares, ridge, kernel ridge and k-nearest neighbors.
//!
//! Each fit exposes its in-sample predictions `S(X)Y`, the hat diagonal `h_ii`
//! and `tr S(X)`. No intercept is added; include a constant column if needed.

use crate::datagen::TrainingSet;
use crate::error::{Error, Result};
use crate::linalg::{dot, gram_cholesky, hat_diagonal_with, kahan_sum, Cholesky, Matrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    /// `exp(-‖a - b‖² / (2h²))`. `None` picks `h` as the median pairwise training distance.
    Gaussian { bandwidth: Option<f64> },
    /// `aᵀb`; kernel ridge with this kernel is ridge regression.
    Linear,
}

impl Kernel {
    fn eval(self, a: &[f64], b: &[f64], bandwidth: f64) -> f64 {
        match self {
            Kernel::Gaussian { .. } => {
                let d2: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
                (-d2 / (2.0 * bandwidth * bandwidth)).exp()
            }
            Kernel::Linear => dot(a, b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SmootherSpec {
    LeastSquares,
    Ridge { lambda: f64 },
    KernelRidge { lambda: f64, kernel: Kernel },
    Knn { k: usize },
}

impl SmootherSpec {
    pub fn name(&self) -> &'static str {
        match self {
            SmootherSpec::LeastSquares => "least_squares",
            SmootherSpec::Ridge { .. } => "ridge",
            SmootherSpec::KernelRidge { .. } => "kernel_ridge",
            SmootherSpec::Knn { .. } => "knn",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SmootherSpec::Ridge { lambda } if !(lambda >= 0.0) || !lambda.is_finite() => Err(
                Error::Domain(format!("ridge lambda must be nonnegative, got {lambda}")),
            ),
            SmootherSpec::KernelRidge { lambda, .. } if !(lambda > 0.0) || !lambda.is_finite() => {
                Err(Error::Domain(format!(
                    "kernel ridge lambda must be positive, got {lambda}"
                )))
            }
            SmootherSpec::KernelRidge {
                kernel: Kernel::Gaussian {
                    bandwidth: Some(h),
                },
                ..
            } if !(h > 0.0) || !h.is_finite() => Err(Error::Domain(format!(
                "kernel bandwidth must be positive, got {h}"
            ))),
            SmootherSpec::Knn { k: 0 } => Err(Error::Domain("k must be at least 1".into())),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Coefficients {
    /// Regression coefficients `β` (least squares, ridge).
    Primal(Vec<f64>),
    /// Dual weights `α = (K + λI)⁻¹Y` (kernel ridge).
    Dual(Vec<f64>),
    /// Training responses averaged by kNN.
    Responses(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct FittedSmoother {
    pub spec: SmootherSpec,
    pub train_x: Matrix,
    pub coefficients: Coefficients,
    pub fitted: Vec<f64>,
    pub hat_diag: Vec<f64>,
    pub trace_s: f64,
    /// Resolved Gaussian-kernel bandwidth, if any.
    pub bandwidth: Option<f64>,
}

impl FittedSmoother {
    pub fn n(&self) -> usize {
        self.train_x.rows()
    }

    pub fn p(&self) -> usize {
        self.train_x.cols()
    }

    pub fn residuals(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.fitted).map(|(a, b)| a - b).collect()
    }

    pub fn predict(&self, x0: &Matrix) -> Result<Vec<f64>> {
        predict(self, x0)
    }
}

pub fn fit(spec: &SmootherSpec, data: &TrainingSet) -> Result<FittedSmoother> {
    fit_xy(spec, &data.x, &data.y)
}

/// Fits `spec` to covariates `x` and responses `y`.
pub fn fit_xy(spec: &SmootherSpec, x: &Matrix, y: &[f64]) -> Result<FittedSmoother> {
    spec.validate()?;
    if y.len() != x.rows() {
        return Err(Error::Shape(format!(
            "X has {} rows but Y has {} entries",
            x.rows(),
            y.len()
        )));
    }
    match *spec {
        SmootherSpec::LeastSquares => fit_ridge(spec, x, y, 0.0),
        SmootherSpec::Ridge { lambda } => fit_ridge(spec, x, y, lambda),
        SmootherSpec::KernelRidge { lambda, kernel } => fit_kernel_ridge(spec, x, y, lambda, kernel),
        SmootherSpec::Knn { k } => fit_knn(spec, x, y, k),
    }
}

fn fit_ridge(spec: &SmootherSpec, x: &Matrix, y: &[f64], lambda: f64) -> Result<FittedSmoother> {
    let chol = gram_cholesky(x, lambda)?;
    let beta = chol.solve(&x.t_matvec(y)?)?;
    let fitted = x.matvec(&beta)?;
    let hat_diag = hat_diagonal_with(&chol, x);
    let trace_s = kahan_sum(hat_diag.iter().copied());
    Ok(FittedSmoother {
        spec: *spec,
        train_x: x.clone(),
        coefficients: Coefficients::Primal(beta),
        fitted,
        hat_diag,
        trace_s,
        bandwidth: None,
    })
}

/// Median of the pairwise Euclidean distances between rows (1.0 when undefined or zero).
pub fn median_pairwise_distance(x: &Matrix) -> f64 {
    let n = x.rows();
    let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let d2: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            d.push(d2.sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let median = if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    };
    if median > 0.0 {
        median
    } else {
        1.0
    }
}

fn resolve_bandwidth(kernel: Kernel, x: &Matrix) -> Option<f64> {
    match kernel {
        Kernel::Gaussian { bandwidth: Some(h) } => Some(h),
        Kernel::Gaussian { bandwidth: None } => Some(median_pairwise_distance(x)),
        Kernel::Linear => None,
    }
}

/// Kernel matrix `K(A, B)` with entries `k(a_i, b_j)`.
pub fn kernel_matrix(kernel: Kernel, a: &Matrix, b: &Matrix, bandwidth: Option<f64>) -> Matrix {
    let h = bandwidth.unwrap_or(1.0);
    Matrix::from_fn(a.rows(), b.rows(), |i, j| kernel.eval(a.row(i), b.row(j), h))
}

/// Cholesky factor of `K + λI` for a kernel ridge fit.
pub(crate) fn kernel_system(
    kernel: Kernel,
    x: &Matrix,
    lambda: f64,
    bandwidth: Option<f64>,
) -> Result<(Matrix, Cholesky)> {
    let k = kernel_matrix(kernel, x, x, bandwidth);
    let chol = Cholesky::factor(&k.add_diagonal(lambda))?;
    Ok((k, chol))
}

fn fit_kernel_ridge(
    spec: &SmootherSpec,
    x: &Matrix,
    y: &[f64],
    lambda: f64,
    kernel: Kernel,
) -> Result<FittedSmoother> {
    let bandwidth = resolve_bandwidth(kernel, x);
    let (k, chol) = kernel_system(kernel, x, lambda, bandwidth)?;
    let alpha = chol.solve(y)?;
    let fitted = k.matvec(&alpha)?;
    // S = K(K + λI)⁻¹ = I - λ(K + λI)⁻¹
    let inv = chol.inverse();
    let hat_diag: Vec<f64> = inv.diagonal().iter().map(|d| 1.0 - lambda * d).collect();
    let trace_s = kahan_sum(hat_diag.iter().copied());
    Ok(FittedSmoother {
        spec: *spec,
        train_x: x.clone(),
        coefficients: Coefficients::Dual(alpha),
        fitted,
        hat_diag,
        trace_s,
        bandwidth,
    })
}

fn fit_knn(spec: &SmootherSpec, x: &Matrix, y: &[f64], k: usize) -> Result<FittedSmoother> {
    let n = x.rows();
    if k > n {
        return Err(Error::DegenerateNeighbors { k, n });
    }
    let sets = self_neighbor_sets(x, k);
    let fitted = sets.iter().map(|s| neighbor_mean(s, y)).collect();
    Ok(FittedSmoother {
        spec: *spec,
        train_x: x.clone(),
        coefficients: Coefficients::Responses(y.to_vec()),
        fitted,
        hat_diag: vec![1.0 / k as f64; n],
        trace_s: n as f64 / k as f64,
        bandwidth: None,
    })
}

pub(crate) fn neighbor_mean(set: &[usize], values: &[f64]) -> f64 {
    kahan_sum(set.iter().map(|&i| values[i])) / set.len() as f64
}

/// Predictions `f̂(x0)` at the rows of `x0`.
pub fn predict(model: &FittedSmoother, x0: &Matrix) -> Result<Vec<f64>> {
    if x0.cols() != model.p() {
        return Err(Error::Shape(format!(
            "model has p = {} but X0 has {} columns",
            model.p(),
            x0.cols()
        )));
    }
    match (&model.spec, &model.coefficients) {
        (_, Coefficients::Primal(beta)) => x0.matvec(beta),
        (SmootherSpec::KernelRidge { kernel, .. }, Coefficients::Dual(alpha)) => {
            kernel_matrix(*kernel, x0, &model.train_x, model.bandwidth).matvec(alpha)
        }
        (SmootherSpec::Knn { k }, Coefficients::Responses(y)) => Ok(neighbor_sets(
            &model.train_x,
            x0,
            *k,
        )?
        .iter()
        .map(|s| neighbor_mean(s, y))
        .collect()),
        _ => unreachable!("coefficients always match the spec they were fitted with"),
    }
}

fn squared_distances(x: &Matrix, q: &[f64]) -> Vec<f64> {
    x.row_iter()
        .map(|r| r.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum())
        .collect()
}

fn k_smallest(dist: &[f64], k: usize, rank: impl Fn(usize) -> usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dist.len()).collect();
    let cmp = |&a: &usize, &b: &usize| {
        dist[a]
            .total_cmp(&dist[b])
            .then_with(|| rank(a).cmp(&rank(b)))
    };
    if k < idx.len() {
        idx.select_nth_unstable_by(k, cmp);
        idx.truncate(k);
    }
    idx.sort_by(cmp);
    idx
}

/// Indices of the `k` nearest training rows (Euclidean) for each row of `x0`.
/// Equidistant points are ordered by lowest index.
pub fn neighbor_sets(x: &Matrix, x0: &Matrix, k: usize) -> Result<Vec<Vec<usize>>> {
    if k > x.rows() {
        return Err(Error::DegenerateNeighbors { k, n: x.rows() });
    }
    if x0.cols() != x.cols() {
        return Err(Error::Shape(format!(
            "training rows have {} columns, queries have {}",
            x.cols(),
            x0.cols()
        )));
    }
    Ok(x0
        .row_iter()
        .map(|q| k_smallest(&squared_distances(x, q), k, |i| i))
        .collect())
}

/// In-sample neighbor sets: every training point is one of its own `k` nearest
/// neighbors, even when other rows duplicate it.
pub fn self_neighbor_sets(x: &Matrix, k: usize) -> Vec<Vec<usize>> {
    (0..x.rows())
        .map(|i| {
            // rank 0 for self, then by index
            k_smallest(&squared_distances(x, x.row(i)), k, |j| {
                if j == i {
                    0
                } else {
                    j + 1
                }
            })
        })
        .collect()
}
