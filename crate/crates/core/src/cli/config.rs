//! JSON study configurations.

use serde::{Deserialize, Serialize};

use crate::datagen::{derive_seed, BaseDistribution, CovariateModel, MeanModel, NoiseModel};
use crate::error::{Error, Result};
use crate::experiments::ScenarioConfig;
use crate::linalg::{symmetric_eigen, Matrix};
use crate::smoothers::{Kernel, SmootherSpec};

fn default_test_m() -> usize {
    10_000
}

/// A decomposition or criteria study: shared settings plus a list of scenarios.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub seed: u64,
    pub reps: usize,
    pub n: usize,
    pub p: usize,
    #[serde(default = "default_test_m")]
    pub test_m: usize,
    pub noise: NoiseConfig,
    #[serde(default)]
    pub smoother: SmootherConfig,
    pub scenarios: Vec<ScenarioEntry>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub sigma: f64,
}

/// One scenario; `n`, `p` and `noise` fall back to the study values.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioEntry {
    pub name: String,
    pub covariates: CovariateConfig,
    pub mean: MeanConfig,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub p: Option<usize>,
    #[serde(default)]
    pub noise: Option<NoiseConfig>,
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseConfig {
    Normal,
    Uniform,
    Rademacher,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovariateConfig {
    NormalBlock {
        blocks: usize,
        rho: f64,
    },
    CopulaUniform {
        blocks: usize,
        rho: f64,
    },
    CopulaT4 {
        blocks: usize,
        rho: f64,
    },
    IsotropicNormal,
    /// `sigma_half` gives `Σ^{1/2}` directly; `ar1_rho` builds it from `Σ_ij = ρ^|i-j|`.
    ScaledProduct {
        base: BaseConfig,
        #[serde(default)]
        ar1_rho: Option<f64>,
        #[serde(default)]
        sigma_half: Option<Vec<Vec<f64>>>,
    },
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeanConfig {
    LinearSum,
    AbsSum { c: f64 },
    Null,
    LinearBeta { beta: Vec<f64> },
}

#[derive(Debug, Clone, Copy, Default, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelName {
    #[default]
    Gaussian,
    Linear,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SmootherConfig {
    #[default]
    LeastSquares,
    Ridge {
        lambda: f64,
    },
    KernelRidge {
        lambda: f64,
        #[serde(default)]
        kernel: KernelName,
        #[serde(default)]
        bandwidth: Option<f64>,
    },
    Knn {
        k: usize,
    },
}

impl SmootherConfig {
    pub fn to_spec(&self) -> Result<SmootherSpec> {
        let spec = match *self {
            SmootherConfig::LeastSquares => SmootherSpec::LeastSquares,
            SmootherConfig::Ridge { lambda } => SmootherSpec::Ridge { lambda },
            SmootherConfig::KernelRidge {
                lambda,
                kernel,
                bandwidth,
            } => SmootherSpec::KernelRidge {
                lambda,
                kernel: match kernel {
                    KernelName::Gaussian => Kernel::Gaussian { bandwidth },
                    KernelName::Linear => Kernel::Linear,
                },
            },
            SmootherConfig::Knn { k } => SmootherSpec::Knn { k },
        };
        spec.validate().map_err(|e| Error::Config(format!("smoother: {e}")))?;
        Ok(spec)
    }
}

/// Symmetric square root of the AR(1) correlation matrix `ρ^|i-j|`.
pub fn ar1_sqrt(p: usize, rho: f64) -> Result<Matrix> {
    if !(rho > -1.0 && rho < 1.0) {
        return Err(Error::Config(format!("ar1_rho must lie in (-1, 1), got {rho}")));
    }
    let sigma = Matrix::from_fn(p, p, |i, j| rho.powi(i.abs_diff(j) as i32));
    let eig = symmetric_eigen(&sigma)?;
    let roots: Vec<f64> = eig.values.iter().map(|v| v.max(0.0).sqrt()).collect();
    let u = &eig.vectors;
    let mut s = Matrix::from_fn(p, p, |i, j| (0..p).map(|k| u[(i, k)] * roots[k] * u[(j, k)]).sum());
    // exact symmetry
    for i in 0..p {
        for j in 0..i {
            let avg = 0.5 * (s[(i, j)] + s[(j, i)]);
            s.row_mut(i)[j] = avg;
            s.row_mut(j)[i] = avg;
        }
    }
    Ok(s)
}

impl CovariateConfig {
    fn to_model(&self, p: usize) -> Result<CovariateModel> {
        Ok(match self {
            CovariateConfig::NormalBlock { blocks, rho } => CovariateModel::NormalBlock {
                p,
                blocks: *blocks,
                rho: *rho,
            },
            CovariateConfig::CopulaUniform { blocks, rho } => CovariateModel::CopulaUniform {
                p,
                blocks: *blocks,
                rho: *rho,
            },
            CovariateConfig::CopulaT4 { blocks, rho } => CovariateModel::CopulaT4 {
                p,
                blocks: *blocks,
                rho: *rho,
            },
            CovariateConfig::IsotropicNormal => CovariateModel::IsotropicNormal { p },
            CovariateConfig::ScaledProduct {
                base,
                ar1_rho,
                sigma_half,
            } => {
                let base = match base {
                    BaseConfig::Normal => BaseDistribution::Normal,
                    BaseConfig::Uniform => BaseDistribution::Uniform,
                    BaseConfig::Rademacher => BaseDistribution::Rademacher,
                };
                let sigma_half = match (ar1_rho, sigma_half) {
                    (Some(_), Some(_)) => {
                        return Err(Error::Config(
                            "covariates: give at most one of ar1_rho and sigma_half".into(),
                        ))
                    }
                    (Some(rho), None) => Some(ar1_sqrt(p, *rho)?),
                    (None, Some(rows)) => Some(
                        Matrix::from_rows(rows)
                            .map_err(|e| Error::Config(format!("covariates.sigma_half: {e}")))?,
                    ),
                    (None, None) => None,
                };
                CovariateModel::ScaledProduct {
                    p,
                    base,
                    sigma_half,
                }
            }
        })
    }
}

impl MeanConfig {
    fn to_model(&self) -> MeanModel {
        match self {
            MeanConfig::LinearSum => MeanModel::LinearSum,
            MeanConfig::AbsSum { c } => MeanModel::AbsSum { c: *c },
            MeanConfig::Null => MeanModel::Null,
            MeanConfig::LinearBeta { beta } => MeanModel::LinearBeta { beta: beta.clone() },
        }
    }
}

impl StudyConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Resolved scenarios. Scenario `i` gets the seed `derive_seed(seed, i)`.
    pub fn scenarios(&self) -> Result<Vec<ScenarioConfig>> {
        if self.scenarios.is_empty() {
            return Err(Error::Config("scenarios: at least one scenario is required".into()));
        }
        self.scenarios
            .iter()
            .enumerate()
            .map(|(i, entry)| {
                let p = entry.p.unwrap_or(self.p);
                let noise = entry.noise.as_ref().unwrap_or(&self.noise);
                let scenario = ScenarioConfig {
                    name: entry.name.clone(),
                    covariates: entry.covariates.to_model(p)?,
                    mean: entry.mean.to_model(),
                    noise: NoiseModel::new(noise.sigma)
                        .map_err(|e| Error::Config(format!("scenarios[{i}].noise: {e}")))?,
                    n: entry.n.unwrap_or(self.n),
                    p,
                    test_m: self.test_m,
                    reps: self.reps,
                    seed: derive_seed(self.seed, i as u64),
                };
                scenario.validate().map_err(|e| match e {
                    Error::Config(m) => Error::Config(format!("scenarios[{i}]: {m}")),
                    other => Error::Config(format!("scenarios[{i}]: {other}")),
                })?;
                Ok(scenario)
            })
            .collect()
    }
}

/// Settings for the ridge variance-ratio curve. Every field is optional.
#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RidgeConfig {
    pub n: Option<usize>,
    pub p: Option<usize>,
    pub reps: Option<usize>,
    pub seed: Option<u64>,
    pub lambda_min: Option<f64>,
    pub lambda_max: Option<f64>,
    pub points: Option<usize>,
}

impl RidgeConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}
