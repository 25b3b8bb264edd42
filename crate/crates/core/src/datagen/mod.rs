//! Covariate, mean and noise models for the simulation studies.

pub mod quantile;
pub mod stream;

pub use quantile::{normal_cdf, quantile_t};
pub use stream::{derive_seed, Purpose, Stream};

use crate::error::{Error, Result};
use crate::linalg::{kahan_sum, Matrix};

/// Marginal law of the i.i.d. entries of `z` in the scaled-product model.
/// Each has mean zero and unit variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseDistribution {
    Normal,
    /// Uniform on `(-√3, √3)`.
    Uniform,
    Rademacher,
}

impl BaseDistribution {
    fn draw(self, stream: &mut Stream) -> f64 {
        match self {
            BaseDistribution::Normal => stream.normal(),
            BaseDistribution::Uniform => 3f64.sqrt() * (2.0 * stream.uniform() - 1.0),
            BaseDistribution::Rademacher => {
                if stream.next_u64() >> 63 == 0 {
                    -1.0
                } else {
                    1.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BaseDistribution::Normal => "normal",
            BaseDistribution::Uniform => "uniform",
            BaseDistribution::Rademacher => "rademacher",
        }
    }
}

/// Distribution `Q` of a covariate row.
#[derive(Debug, Clone, PartialEq)]
pub enum CovariateModel {
    /// `N(0, Σ)` with `Σ` block diagonal, unit variances and correlation `rho` inside each block.
    NormalBlock { p: usize, blocks: usize, rho: f64 },
    /// Componentwise `Φ` applied to a `NormalBlock` draw: uniform marginals on (0, 1).
    CopulaUniform { p: usize, blocks: usize, rho: f64 },
    /// `NormalBlock` draw mapped to t(4) marginals through `Φ` and the t quantile.
    CopulaT4 { p: usize, blocks: usize, rho: f64 },
    IsotropicNormal { p: usize },
    /// Rows `x = Σ^{1/2} z` with i.i.d. standardized entries of `z`. `None` means `Σ = I`.
    ScaledProduct {
        p: usize,
        base: BaseDistribution,
        sigma_half: Option<Matrix>,
    },
}

impl CovariateModel {
    pub fn dim(&self) -> usize {
        match self {
            CovariateModel::NormalBlock { p, .. }
            | CovariateModel::CopulaUniform { p, .. }
            | CovariateModel::CopulaT4 { p, .. }
            | CovariateModel::IsotropicNormal { p }
            | CovariateModel::ScaledProduct { p, .. } => *p,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CovariateModel::NormalBlock { .. } => "normal_block",
            CovariateModel::CopulaUniform { .. } => "copula_uniform",
            CovariateModel::CopulaT4 { .. } => "copula_t4",
            CovariateModel::IsotropicNormal { .. } => "isotropic_normal",
            CovariateModel::ScaledProduct { .. } => "scaled_product",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.dim();
        if p == 0 {
            return Err(Error::Config("covariate dimension p must be at least 1".into()));
        }
        match self {
            CovariateModel::NormalBlock { blocks, rho, .. }
            | CovariateModel::CopulaUniform { blocks, rho, .. }
            | CovariateModel::CopulaT4 { blocks, rho, .. } => {
                if *blocks == 0 || *blocks > p {
                    return Err(Error::Config(format!(
                        "blocks must be in 1..={p}, got {blocks}"
                    )));
                }
                if !(0.0..1.0).contains(rho) {
                    return Err(Error::Config(format!("rho must be in [0, 1), got {rho}")));
                }
            }
            CovariateModel::ScaledProduct {
                sigma_half: Some(s),
                ..
            } => {
                if s.rows() != p || s.cols() != p {
                    return Err(Error::Config(format!(
                        "sigma_half must be {p}x{p}, got {}x{}",
                        s.rows(),
                        s.cols()
                    )));
                }
                if !s.is_symmetric(1e-10) {
                    return Err(Error::Config("sigma_half must be symmetric".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Sizes of the correlation blocks; the first `p mod blocks` blocks get one extra variable.
pub fn block_sizes(p: usize, blocks: usize) -> Vec<usize> {
    let base = p / blocks;
    let extra = p % blocks;
    (0..blocks).map(|b| base + usize::from(b < extra)).collect()
}

/// Block-equicorrelated normal rows via the one-factor form
/// `x_j = √ρ·w_b + √(1-ρ)·e_j`, which has exactly the block covariance.
fn draw_normal_block(p: usize, blocks: usize, rho: f64, n: usize, stream: &mut Stream) -> Matrix {
    let sizes = block_sizes(p, blocks);
    let (shared, own) = (rho.sqrt(), (1.0 - rho).sqrt());
    let mut x = Matrix::zeros(n, p);
    for i in 0..n {
        let row = x.row_mut(i);
        let mut j = 0;
        for &size in &sizes {
            let w = stream.normal();
            for v in &mut row[j..j + size] {
                *v = shared * w + own * stream.normal();
            }
            j += size;
        }
    }
    x
}

/// Draws an `n × p` covariate matrix with i.i.d. rows from `model`.
pub fn draw_covariates(model: &CovariateModel, n: usize, stream: &mut Stream) -> Matrix {
    match model {
        CovariateModel::NormalBlock { p, blocks, rho } => {
            draw_normal_block(*p, *blocks, *rho, n, stream)
        }
        CovariateModel::CopulaUniform { p, blocks, rho } => {
            let mut x = draw_normal_block(*p, *blocks, *rho, n, stream);
            for i in 0..n {
                x.row_mut(i).iter_mut().for_each(|v| *v = normal_cdf(*v));
            }
            x
        }
        CovariateModel::CopulaT4 { p, blocks, rho } => {
            let mut x = draw_normal_block(*p, *blocks, *rho, n, stream);
            for i in 0..n {
                x.row_mut(i)
                    .iter_mut()
                    .for_each(|v| *v = quantile::normal_to_t(*v, 4.0));
            }
            x
        }
        CovariateModel::IsotropicNormal { p } => {
            let mut x = Matrix::zeros(n, *p);
            for i in 0..n {
                stream.fill_normal(x.row_mut(i));
            }
            x
        }
        CovariateModel::ScaledProduct {
            p,
            base,
            sigma_half,
        } => {
            let z = Matrix::from_fn(n, *p, |_, _| base.draw(stream));
            match sigma_half {
                Some(s) => z.matmul(s).expect("validated sigma_half shape"),
                None => z,
            }
        }
    }
}

/// Regression function `f(x) = E(y | x)`.
#[derive(Debug, Clone, PartialEq)]
pub enum MeanModel {
    /// `Σ_j x_j`
    LinearSum,
    /// `C Σ_j |x_j|`
    AbsSum { c: f64 },
    Null,
    /// `xᵀβ`
    LinearBeta { beta: Vec<f64> },
}

impl MeanModel {
    pub fn name(&self) -> &'static str {
        match self {
            MeanModel::LinearSum => "linear_sum",
            MeanModel::AbsSum { .. } => "abs_sum",
            MeanModel::Null => "null",
            MeanModel::LinearBeta { .. } => "linear_beta",
        }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        match self {
            MeanModel::AbsSum { c } if !(*c >= 0.0) || !c.is_finite() => Err(Error::Config(
                format!("mean amplitude C must be finite and nonnegative, got {c}"),
            )),
            MeanModel::LinearBeta { beta } if beta.len() != p => Err(Error::Config(format!(
                "beta has length {}, expected p = {p}",
                beta.len()
            ))),
            _ => Ok(()),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            MeanModel::LinearSum => kahan_sum(x.iter().copied()),
            MeanModel::AbsSum { c } => c * kahan_sum(x.iter().map(|v| v.abs())),
            MeanModel::Null => 0.0,
            MeanModel::LinearBeta { beta } => kahan_sum(x.iter().zip(beta).map(|(a, b)| a * b)),
        }
    }

    /// `f` applied to every row.
    pub fn eval_rows(&self, x: &Matrix) -> Vec<f64> {
        x.row_iter().map(|r| self.eval(r)).collect()
    }
}

/// Homoskedastic Gaussian noise `ε ~ N(0, σ²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub sigma: f64,
}

impl NoiseModel {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Config(format!("noise sigma must be positive, got {sigma}")));
        }
        Ok(Self { sigma })
    }

    pub fn variance(&self) -> f64 {
        self.sigma * self.sigma
    }
}

/// A sample `(X, Y)` together with the true conditional means `f(X)`.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub x: Matrix,
    pub y: Vec<f64>,
    pub fx: Vec<f64>,
}

impl TrainingSet {
    pub fn new(x: Matrix, y: Vec<f64>, fx: Vec<f64>) -> Result<Self> {
        if y.len() != x.rows() || fx.len() != x.rows() {
            return Err(Error::Shape(format!(
                "X has {} rows but Y has {} and f(X) has {} entries",
                x.rows(),
                y.len(),
                fx.len()
            )));
        }
        Ok(Self { x, y, fx })
    }

    /// Observed data with unknown `f`; `fx` is zero-filled and carries no information.
    pub fn from_observed(x: Matrix, y: Vec<f64>) -> Result<Self> {
        let fx = vec![0.0; y.len()];
        Self::new(x, y, fx)
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn p(&self) -> usize {
        self.x.cols()
    }
}

/// Draws `Y = f(X) + σ·ε` and returns `(Y, f(X))`.
pub fn draw_response(
    x: &Matrix,
    mean: &MeanModel,
    noise: &NoiseModel,
    stream: &mut Stream,
) -> (Vec<f64>, Vec<f64>) {
    let fx = mean.eval_rows(x);
    let y = fx.iter().map(|f| f + noise.sigma * stream.normal()).collect();
    (y, fx)
}
