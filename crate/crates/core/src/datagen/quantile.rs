//! Normal CDF and Student-t quantiles for the copula covariate models.

use statrs::function::beta::beta_reg;
use libm::erfc;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Standard normal CDF `Φ(x)`.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `Φ(-x)`, accurate in the far upper tail where `1 - Φ(x)` would cancel.
pub fn normal_upper_tail(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// `P(T > t)` for `t ≥ 0` and `T ~ t(df)`.
fn t_upper_tail(t: f64, df: f64) -> f64 {
    0.5 * beta_reg(0.5 * df, 0.5, df / (df + t * t))
}

pub fn t_cdf(t: f64, df: f64) -> f64 {
    if t >= 0.0 {
        1.0 - t_upper_tail(t, df)
    } else {
        t_upper_tail(-t, df)
    }
}

pub fn t_pdf(t: f64, df: f64) -> f64 {
    let log_norm = ln_gamma(0.5 * (df + 1.0))
        - ln_gamma(0.5 * df)
        - 0.5 * (df * std::f64::consts::PI).ln();
    (log_norm - 0.5 * (df + 1.0) * (1.0 + t * t / df).ln()).exp()
}

fn check_args(u: f64, df: f64) -> Result<()> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::Domain(format!("quantile probability {u} outside (0, 1)")));
    }
    if !(df > 0.0) || !df.is_finite() {
        return Err(Error::Domain(format!("degrees of freedom must be positive, got {df}")));
    }
    Ok(())
}

/// Quantile of Student's t distribution with `df` degrees of freedom.
///
/// Uses the closed forms for 1, 2 and 4 degrees of freedom and falls back to
/// [`quantile_t_numeric`] otherwise.
pub fn quantile_t(u: f64, df: f64) -> Result<f64> {
    check_args(u, df)?;
    let q = if df == 1.0 {
        let tail = u.min(1.0 - u);
        (u - 0.5).signum() / (std::f64::consts::PI * tail).tan()
    } else if df == 2.0 {
        (2.0 * u - 1.0) / (2.0 * u * (1.0 - u)).sqrt()
    } else if df == 4.0 {
        let alpha = 4.0 * u * (1.0 - u);
        let root = alpha.sqrt();
        let q = (root.acos() / 3.0).cos() / root;
        (u - 0.5).signum() * 2.0 * (q - 1.0).max(0.0).sqrt()
    } else {
        return quantile_t_numeric(u, df);
    };
    Ok(q)
}

/// Quantile by safeguarded Newton iteration on the incomplete-beta CDF.
///
/// Solves on the smaller tail so that probabilities near 0 keep full relative precision.
pub fn quantile_t_numeric(u: f64, df: f64) -> Result<f64> {
    check_args(u, df)?;
    if u == 0.5 {
        return Ok(0.0);
    }
    let target = u.min(1.0 - u);
    let mut lo = 0.0;
    let mut hi = 1.0;
    while t_upper_tail(hi, df) > target {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::Domain(format!("t quantile of {u} overflows (df = {df})")));
        }
    }
    let mut s = 0.5 * (lo + hi);
    for _ in 0..200 {
        let g = t_upper_tail(s, df) - target;
        if g.abs() <= 1e-14 * target {
            break;
        }
        if g > 0.0 {
            lo = s;
        } else {
            hi = s;
        }
        let step = g / t_pdf(s, df);
        let newton = s + step;
        s = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(if u < 0.5 { -s } else { s })
}

/// Maps a standard normal draw to a t(df) draw with the same rank (Gaussian copula).
pub fn normal_to_t(z: f64, df: f64) -> f64 {
    let tail = normal_upper_tail(z.abs()).max(f64::MIN_POSITIVE);
    let q = quantile_t(tail, df).unwrap_or(f64::MIN);
    if z >= 0.0 {
        -q
    } else {
        q
    }
}
