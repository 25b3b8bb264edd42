//! Covariance-penalty criteria and closed-form excess-variance quantities.
//!
//! All criteria are in squared-response units and estimate prediction error of
//! a fit with `df` degrees of freedom (`p` for least squares, `tr S(X)` for
//! other linear smoothers) trained on `n` observations.

use crate::error::{Error, Result};
use crate::linalg::{kahan_sum, sum_squares};
use crate::smoothers::{FittedSmoother, SmootherSpec};

/// Leverage at or above `1 - LEVERAGE_GUARD` is treated as an interpolated point.
pub const LEVERAGE_GUARD: f64 = 1e-12;

fn require_room(n: usize, df: f64) -> Result<f64> {
    let slack = n as f64 - df - 1.0;
    if slack <= 0.0 {
        return Err(Error::Dimension(format!(
            "need p < n - 1, got p = {df} with n = {n}"
        )));
    }
    Ok(slack)
}

/// Mallows' `Cp = RSS/n + 2σ²p/n`.
pub fn cp(rss: f64, n: usize, df: f64, sigma2: f64) -> f64 {
    rss / n as f64 + 2.0 * sigma2 * df / n as f64
}

/// `Cp` plus the exact normal-covariate excess variance:
/// `RSS/n + (σ²p/n)(2 + (p+1)/(n-p-1))`.
pub fn rcp(rss: f64, n: usize, df: f64, sigma2: f64) -> Result<f64> {
    Ok(cp(rss, n, df, sigma2) + vplus_normal_exact(n, df, sigma2)?)
}

/// `RSS(n-1) / ((n-p)(n-p-1))`, i.e. `rcp` with `σ² = RSS/(n-p)` plugged in.
pub fn rcp_hat(rss: f64, n: usize, df: f64) -> Result<f64> {
    let slack = require_room(n, df)?;
    let n = n as f64;
    Ok(rss * (n - 1.0) / ((n - df) * slack))
}

/// The plug-in form of [`rcp_hat`], kept for checking the closed form.
pub fn rcp_hat_plugin(rss: f64, n: usize, df: f64) -> Result<f64> {
    rcp(rss, n, df, sigma2_hat(rss, n, df)?)
}

/// `RSS / (n - p)`.
pub fn sigma2_hat(rss: f64, n: usize, df: f64) -> Result<f64> {
    let dof = n as f64 - df;
    if dof <= 0.0 {
        return Err(Error::Dimension(format!(
            "residual degrees of freedom n - p = {dof} must be positive"
        )));
    }
    Ok(rss / dof)
}

/// Generalized cross-validation `RSS / (n(1 - p/n)²)`.
pub fn gcv(rss: f64, n: usize, df: f64) -> f64 {
    let n = n as f64;
    let shrink = 1.0 - df / n;
    rss / (n * shrink * shrink)
}

fn check_leverage(hat_diag: &[f64]) -> Result<()> {
    match hat_diag.iter().position(|&h| h >= 1.0 - LEVERAGE_GUARD) {
        Some(index) => Err(Error::LeverageOne {
            index,
            leverage: hat_diag[index],
        }),
        None => Ok(()),
    }
}

fn check_lengths(residuals: &[f64], hat_diag: &[f64]) -> Result<()> {
    if residuals.len() != hat_diag.len() || residuals.is_empty() {
        return Err(Error::Shape(format!(
            "{} residuals but {} hat-diagonal entries",
            residuals.len(),
            hat_diag.len()
        )));
    }
    Ok(())
}

/// Leave-one-out error through the shortcut `(1/n) Σ (r_i / (1 - h_ii))²`.
pub fn ocv(residuals: &[f64], hat_diag: &[f64]) -> Result<f64> {
    check_lengths(residuals, hat_diag)?;
    check_leverage(hat_diag)?;
    let n = residuals.len() as f64;
    Ok(kahan_sum(
        residuals
            .iter()
            .zip(hat_diag)
            .map(|(r, h)| (r / (1.0 - h)).powi(2)),
    ) / n)
}

/// Excess-bias estimate `(1/n) Σ (r_i² - (1 - h_ii)σ²)(1/(1 - h_ii)² - 1)`.
///
/// Reported raw; it can be negative on a given sample.
pub fn bplus_hat(residuals: &[f64], hat_diag: &[f64], sigma2: f64) -> Result<f64> {
    check_lengths(residuals, hat_diag)?;
    check_leverage(hat_diag)?;
    let n = residuals.len() as f64;
    Ok(kahan_sum(residuals.iter().zip(hat_diag).map(|(r, h)| {
        let m = 1.0 - h;
        (r * r - m * sigma2) * (1.0 / (m * m) - 1.0)
    })) / n)
}

pub fn rcp_plus(rcp: f64, bplus_hat: f64) -> f64 {
    rcp + bplus_hat
}

/// `OCV - (σ²/n) Σ h_ii/(1 - h_ii) + (σ²p/n)(1 + (p+1)/(n-p-1))`, equal to
/// `rcp + bplus_hat` whenever `Σ h_ii = p`.
pub fn rcp_plus_ocv_form(
    ocv: f64,
    hat_diag: &[f64],
    n: usize,
    df: f64,
    sigma2: f64,
) -> Result<f64> {
    check_leverage(hat_diag)?;
    let slack = require_room(n, df)?;
    let nf = n as f64;
    let leverage_term = kahan_sum(hat_diag.iter().map(|h| h / (1.0 - h)));
    Ok(ocv - sigma2 / nf * leverage_term + sigma2 * df / nf * (1.0 + (df + 1.0) / slack))
}

/// Exact excess variance of least squares under normal covariates:
/// `(σ²p/n)(p+1)/(n-p-1)`, whatever the covariance of the covariates.
pub fn vplus_normal_exact(n: usize, df: f64, sigma2: f64) -> Result<f64> {
    let slack = require_room(n, df)?;
    Ok(sigma2 * df / n as f64 * (df + 1.0) / slack)
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Domain(format!("gamma = p/n must lie in (0, 1), got {gamma}")));
    }
    Ok(())
}

/// Limit `σ²γ²/(1-γ)` of the excess variance as `p/n → γ`.
pub fn vplus_asymptotic(gamma: f64, sigma2: f64) -> Result<f64> {
    check_gamma(gamma)?;
    Ok(sigma2 * gamma * gamma / (1.0 - gamma))
}

/// Limit `σ²γ(2-γ)/(1-γ)` of the Random-X optimism for an unbiased linear model.
pub fn optr_asymptotic(gamma: f64, sigma2: f64) -> Result<f64> {
    check_gamma(gamma)?;
    Ok(sigma2 * gamma * (2.0 - gamma) / (1.0 - gamma))
}

/// Every criterion for one fit. Entries that need the noise variance are `None`
/// when it is not supplied, and entries whose dimension requirement fails
/// (`n > p` for `sigma2_hat`, `n > p + 1` for the RCp family) are `None` with
/// the reason kept in `unavailable`.
#[derive(Debug, Clone, PartialEq)]
pub struct CriteriaReport {
    pub rss: f64,
    pub n: usize,
    pub p: usize,
    /// Degrees of freedom used in the penalties: `p` for least squares, `tr S(X)` otherwise.
    pub df: f64,
    pub sigma2: Option<f64>,
    pub sigma2_hat: Option<f64>,
    pub cp: Option<f64>,
    pub rcp: Option<f64>,
    pub rcp_hat: Option<f64>,
    pub gcv: Option<f64>,
    pub ocv: f64,
    pub bplus_hat: Option<f64>,
    pub rcp_plus: Option<f64>,
    pub unavailable: Vec<(&'static str, String)>,
}

impl CriteriaReport {
    pub fn compute(fit: &FittedSmoother, y: &[f64], sigma2: Option<f64>) -> Result<Self> {
        if y.len() != fit.n() {
            return Err(Error::Shape(format!(
                "fit has n = {} but {} responses given",
                fit.n(),
                y.len()
            )));
        }
        if let Some(s) = sigma2 {
            if !(s >= 0.0) || !s.is_finite() {
                return Err(Error::Domain(format!("sigma2 must be nonnegative, got {s}")));
            }
        }
        let n = fit.n();
        let df = degrees_of_freedom(fit);
        let residuals = fit.residuals(y);
        let rss = sum_squares(&residuals);
        let mut unavailable = Vec::new();
        let mut keep = |name: &'static str, value: Result<f64>| match value {
            Ok(v) => Some(v),
            Err(e) => {
                unavailable.push((name, e.to_string()));
                None
            }
        };
        let ocv_value = ocv(&residuals, &fit.hat_diag)?;
        let sigma2_hat_value = keep("sigma2_hat", sigma2_hat(rss, n, df));
        let rcp_hat_value = keep("rcp_hat", rcp_hat(rss, n, df));
        let gcv_value = if df < n as f64 {
            Some(gcv(rss, n, df))
        } else {
            keep("gcv", Err(Error::Dimension(format!("need p < n, got p = {df} with n = {n}"))))
        };
        let (mut cp_value, mut rcp_value, mut bplus, mut plus) = (None, None, None, None);
        if let Some(s2) = sigma2 {
            cp_value = Some(cp(rss, n, df, s2));
            bplus = Some(bplus_hat(&residuals, &fit.hat_diag, s2)?);
            rcp_value = keep("rcp", rcp(rss, n, df, s2));
            if let (Some(r), Some(b)) = (rcp_value, bplus) {
                plus = Some(rcp_plus(r, b));
            } else {
                unavailable.push(("rcp_plus", "requires rcp".to_string()));
            }
        }
        Ok(Self {
            rss,
            n,
            p: fit.p(),
            df,
            sigma2,
            sigma2_hat: sigma2_hat_value,
            cp: cp_value,
            rcp: rcp_value,
            rcp_hat: rcp_hat_value,
            gcv: gcv_value,
            ocv: ocv_value,
            bplus_hat: bplus,
            rcp_plus: plus,
            unavailable,
        })
    }

    /// `(key, value)` pairs in a fixed order; absent entries are skipped.
    pub fn entries(&self) -> Vec<(&'static str, f64)> {
        [
            ("rss", Some(self.rss)),
            ("sigma2_hat", self.sigma2_hat),
            ("cp", self.cp),
            ("rcp", self.rcp),
            ("rcp_hat", self.rcp_hat),
            ("gcv", self.gcv),
            ("ocv", Some(self.ocv)),
            ("bplus_hat", self.bplus_hat),
            ("rcp_plus", self.rcp_plus),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k, v)))
        .collect()
    }
}

pub fn degrees_of_freedom(fit: &FittedSmoother) -> f64 {
    match fit.spec {
        SmootherSpec::LeastSquares => fit.p() as f64,
        _ => fit.trace_s,
    }
}

/// Optimism in the Fixed-X, Same-X and Random-X settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimismReport {
    pub opt_f: f64,
    /// Known only when `tr S(X)` does not depend on `X`.
    pub opt_s: Option<f64>,
    /// `OptS + B⁺ + V⁺`, when excess bias and variance are supplied.
    pub opt_r: Option<f64>,
}

/// Optimism of a linear smoother, `OptF = 2σ² tr S(X) / n`.
///
/// `excess` carries `(B⁺, V⁺)` estimates; without them `opt_r` is left empty.
pub fn optimism(
    smoother: &FittedSmoother,
    sigma2: f64,
    excess: Option<(f64, f64)>,
) -> OptimismReport {
    let opt_f = 2.0 * sigma2 * degrees_of_freedom(smoother) / smoother.n() as f64;
    let opt_s = match smoother.spec {
        SmootherSpec::LeastSquares | SmootherSpec::Knn { .. } => Some(opt_f),
        _ => None,
    };
    let opt_r = match (opt_s, excess) {
        (Some(s), Some((bplus, vplus))) => Some(s + bplus + vplus),
        _ => None,
    };
    OptimismReport { opt_f, opt_s, opt_r }
}
