//! Simulation studies: decomposition tables, criterion accuracy tables and the
//! ridge variance-ratio curve.

use crate::criteria::CriteriaReport;
use crate::datagen::{draw_covariates, draw_response, CovariateModel, MeanModel, NoiseModel, Purpose, Stream};
use crate::decomp::{estimate_decomposition, mean_and_se, run_replicates, DecompositionEstimate};
use crate::error::{Error, Result};
use crate::linalg::{kahan_sum, symmetric_eigen, KahanSum, Matrix};
use crate::smoothers::{fit_xy, FittedSmoother, SmootherSpec};

/// One simulation setting.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub covariates: CovariateModel,
    pub mean: MeanModel,
    pub noise: NoiseModel,
    pub n: usize,
    pub p: usize,
    /// Size of the test set used for Random-X targets in the criteria study.
    pub test_m: usize,
    pub reps: usize,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.covariates.validate()?;
        if self.covariates.dim() != self.p {
            return Err(Error::Config(format!(
                "scenario {}: p = {} but covariate model has dimension {}",
                self.name,
                self.p,
                self.covariates.dim()
            )));
        }
        self.mean.validate(self.p)?;
        NoiseModel::new(self.noise.sigma)?;
        if self.n == 0 {
            return Err(Error::Config(format!("scenario {}: n must be positive", self.name)));
        }
        if self.test_m == 0 {
            return Err(Error::Config(format!("scenario {}: test_m must be at least 1", self.name)));
        }
        if self.reps < 2 {
            return Err(Error::Config(format!(
                "scenario {}: reps must be at least 2, got {}",
                self.name, self.reps
            )));
        }
        Ok(())
    }
}

/// One decomposition estimate per scenario, each with its own replicate count and seed.
pub fn run_decomposition_study(
    configs: &[ScenarioConfig],
    smoother: &SmootherSpec,
) -> Result<Vec<DecompositionEstimate>> {
    configs
        .iter()
        .map(|c| estimate_decomposition(c, smoother, c.reps))
        .collect()
}

/// Random-X error of a trained model with the noise integrated out:
/// `σ² + (1/m) Σ (f(x0_j) - f̂(x0_j))²`.
pub fn err_r_target(fit: &FittedSmoother, x_test: &Matrix, f_test: &[f64], sigma2: f64) -> Result<f64> {
    if x_test.rows() == 0 || f_test.len() != x_test.rows() {
        return Err(Error::Shape(format!(
            "test set has {} rows and {} mean values",
            x_test.rows(),
            f_test.len()
        )));
    }
    let pred = fit.predict(x_test)?;
    let gap = kahan_sum(pred.iter().zip(f_test).map(|(a, b)| (a - b) * (a - b)));
    Ok(sigma2 + gap / f_test.len() as f64)
}

/// Criteria compared in the accuracy study, in output order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Rcp,
    RcpHat,
    Gcv,
    RcpPlus,
    Ocv,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Rcp, Method::RcpHat, Method::Gcv, Method::RcpPlus, Method::Ocv];

    pub fn name(self) -> &'static str {
        match self {
            Method::Rcp => "RCp",
            Method::RcpHat => "RCpHat",
            Method::Gcv => "GCV",
            Method::RcpPlus => "RCpPlus",
            Method::Ocv => "OCV",
        }
    }

    fn value(self, r: &CriteriaReport) -> f64 {
        match self {
            Method::Rcp => r.rcp.expect("sigma2 supplied"),
            Method::RcpHat => r.rcp_hat.expect("n > p + 1 checked"),
            Method::Gcv => r.gcv.expect("n > p + 1 checked"),
            Method::RcpPlus => r.rcp_plus.expect("sigma2 supplied"),
            Method::Ocv => r.ocv,
        }
    }
}

/// Criterion values and the Random-X target for one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct CriteriaReplicate {
    pub target: f64,
    /// Indexed like [`Method::ALL`].
    pub values: [f64; 5],
    pub rss: f64,
}

/// Fits least squares on every replicate and records each criterion next to `ErrR`.
pub fn criteria_replicates(config: &ScenarioConfig) -> Result<Vec<CriteriaReplicate>> {
    config.validate()?;
    if config.n <= config.p + 1 {
        return Err(Error::Dimension(format!(
            "criteria study needs n > p + 1, got n = {}, p = {}",
            config.n, config.p
        )));
    }
    let sigma2 = config.noise.variance();
    run_replicates(config.seed, config.reps, |rep| {
        let mut train = Stream::new(config.seed, rep, Purpose::TrainCovariates);
        let mut test = Stream::new(config.seed, rep, Purpose::TestCovariates);
        let mut noise = Stream::new(config.seed, rep, Purpose::TrainNoise);
        let x = draw_covariates(&config.covariates, config.n, &mut train);
        let (y, _) = draw_response(&x, &config.mean, &config.noise, &mut noise);
        let x_test = draw_covariates(&config.covariates, config.test_m, &mut test);
        let f_test = config.mean.eval_rows(&x_test);
        let fit = fit_xy(&SmootherSpec::LeastSquares, &x, &y)?;
        let report = CriteriaReport::compute(&fit, &y, Some(sigma2))?;
        Ok(CriteriaReplicate {
            target: err_r_target(&fit, &x_test, &f_test, sigma2)?,
            values: Method::ALL.map(|m| m.value(&report)),
            rss: report.rss,
        })
    })
}

/// Accuracy of one criterion as an estimate of `ErrR`.
#[derive(Debug, Clone, PartialEq)]
pub struct CriteriaMseRow {
    pub method: &'static str,
    pub mse: f64,
    pub bias2: f64,
    pub variance: f64,
    pub rel_to_ocv: f64,
}

/// What each criterion is scored against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Target {
    /// The expected Random-X error `ErrR`, estimated by the replicate mean of the
    /// noise-integrated test errors. Criterion variance is then its own spread.
    #[default]
    Expected,
    /// The noise-integrated test error of each replicate's own fit.
    Conditional,
}

impl Target {
    pub fn name(self) -> &'static str {
        match self {
            Target::Expected => "expected",
            Target::Conditional => "conditional",
        }
    }
}

/// Aggregates replicate errors `criterion - target` into MSE, squared bias and variance.
pub fn summarize_criteria(replicates: &[CriteriaReplicate], target: Target) -> Vec<CriteriaMseRow> {
    let reps = replicates.len() as f64;
    let expected = kahan_sum(replicates.iter().map(|r| r.target)) / reps;
    let target_of = |r: &CriteriaReplicate| match target {
        Target::Expected => expected,
        Target::Conditional => r.target,
    };
    let mut rows: Vec<CriteriaMseRow> = Method::ALL
        .iter()
        .enumerate()
        .map(|(k, method)| {
            let errors: Vec<f64> = replicates.iter().map(|r| r.values[k] - target_of(r)).collect();
            let bias = kahan_sum(errors.iter().copied()) / reps;
            let variance = kahan_sum(errors.iter().map(|e| (e - bias) * (e - bias))) / reps;
            CriteriaMseRow {
                method: method.name(),
                mse: kahan_sum(errors.iter().map(|e| e * e)) / reps,
                bias2: bias * bias,
                variance,
                rel_to_ocv: f64::NAN,
            }
        })
        .collect();
    let ocv_mse = rows[Method::ALL.len() - 1].mse;
    for row in &mut rows {
        row.rel_to_ocv = row.mse / ocv_mse;
    }
    rows
}

/// MSE of each criterion relative to OCV, over `config.reps` replicates.
pub fn run_criteria_study(config: &ScenarioConfig, target: Target) -> Result<Vec<CriteriaMseRow>> {
    Ok(summarize_criteria(&criteria_replicates(config)?, target))
}

/// `points` log-spaced values from `min` to `max`, endpoints included exactly.
pub fn lambda_grid(min: f64, max: f64, points: usize) -> Result<Vec<f64>> {
    if !(min > 0.0 && max > min && max.is_finite()) || points < 2 {
        return Err(Error::Config(format!(
            "lambda grid needs 0 < min < max and at least 2 points, got [{min}, {max}] with {points}"
        )));
    }
    let (lo, hi) = (min.ln(), max.ln());
    let step = (hi - lo) / (points - 1) as f64;
    Ok((0..points)
        .map(|i| match i {
            0 => min,
            i if i == points - 1 => max,
            i => (lo + step * i as f64).exp(),
        })
        .collect())
}

/// Ratio of Random-X to Same-X integrated ridge variance across a λ grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeRatioCurve {
    pub lambdas: Vec<f64>,
    pub ratio: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    /// Large-λ limit `n²p/(n²p + np² + np)` for isotropic normal covariates.
    pub theoretical_limit: f64,
    /// The same limit as `tr(E[G]²)/tr(E[G²])` with `G = XᵀX` averaged over the replicates.
    pub theoretical_limit_mc: f64,
}

pub fn ridge_limit_isotropic(n: usize, p: usize) -> f64 {
    let (n, p) = (n as f64, p as f64);
    n * n * p / (n * n * p + n * p * p + n * p)
}

/// For isotropic normal `X` and `X0` (both `n × p`) and each λ, averages over
/// replicates the ratio `tr(AGA X0ᵀX0) / tr(AGAG)` with `A = (G + λI)⁻¹`.
pub fn run_ridge_ratio_study(
    n: usize,
    p: usize,
    lambdas: &[f64],
    reps: usize,
    seed: u64,
) -> Result<RidgeRatioCurve> {
    if p == 0 || p >= n {
        return Err(Error::Config(format!("ridge study needs 0 < p < n, got n = {n}, p = {p}")));
    }
    if reps < 2 {
        return Err(Error::Config(format!("ridge study needs at least 2 replicates, got {reps}")));
    }
    if lambdas.is_empty() || lambdas.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
        return Err(Error::Config("lambda grid must be nonempty and positive".into()));
    }
    let model = CovariateModel::IsotropicNormal { p };
    let per_rep = run_replicates(seed, reps, |rep| {
        let x = draw_covariates(&model, n, &mut Stream::new(seed, rep, Purpose::TrainCovariates));
        let x0 = draw_covariates(&model, n, &mut Stream::new(seed, rep, Purpose::TestCovariates));
        let gram = x.gram();
        let eig = symmetric_eigen(&gram)?;
        let rotated = x0.matmul(&eig.vectors)?;
        let test_weights: Vec<f64> = (0..p)
            .map(|j| kahan_sum(rotated.row_iter().map(|r| r[j] * r[j])))
            .collect();
        let ratios: Vec<f64> = lambdas
            .iter()
            .map(|&lambda| {
                let (mut num, mut den) = (KahanSum::new(), KahanSum::new());
                for (d, c) in eig.values.iter().zip(&test_weights) {
                    let shrink = d / ((d + lambda) * (d + lambda));
                    num.add(c * shrink);
                    den.add(d * shrink);
                }
                num.total() / den.total()
            })
            .collect();
        let square = gram.matmul(&gram)?;
        Ok((ratios, gram, square))
    })?;

    let z = 1.959_963_984_540_054;
    let mut curve = RidgeRatioCurve {
        lambdas: lambdas.to_vec(),
        ratio: Vec::with_capacity(lambdas.len()),
        ci_low: Vec::with_capacity(lambdas.len()),
        ci_high: Vec::with_capacity(lambdas.len()),
        theoretical_limit: ridge_limit_isotropic(n, p),
        theoretical_limit_mc: f64::NAN,
    };
    for k in 0..lambdas.len() {
        let values: Vec<f64> = per_rep.iter().map(|(r, _, _)| r[k]).collect();
        let (mean, se) = mean_and_se(&values);
        curve.ratio.push(mean);
        curve.ci_low.push(mean - z * se);
        curve.ci_high.push(mean + z * se);
    }
    let average = |pick: &dyn Fn(&(Vec<f64>, Matrix, Matrix)) -> &Matrix| -> Matrix {
        Matrix::from_fn(p, p, |i, j| {
            kahan_sum(per_rep.iter().map(|r| pick(r)[(i, j)])) / reps as f64
        })
    };
    let mean_gram = average(&|r| &r.1);
    let mean_square = average(&|r| &r.2);
    curve.theoretical_limit_mc =
        mean_gram.frobenius_inner(&mean_gram)? / mean_square.trace();
    Ok(curve)
}
