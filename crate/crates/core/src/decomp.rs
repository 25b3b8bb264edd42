//! Monte Carlo estimates of the Random-X error decomposition.
//!
//! Noise is integrated out analytically for every linear smoother, so each
//! replicate only draws training covariates `X` and an equally sized set of test
//! covariates `X0`. Replicates run in parallel and are summed in index order.

use rayon::prelude::*;

use crate::datagen::{draw_covariates, CovariateModel, Purpose, Stream};
use crate::error::{Error, Result};
use crate::experiments::ScenarioConfig;
use crate::linalg::{gram_cholesky, hat_diagonal_with, kahan_sum, Cholesky, Matrix};
use crate::smoothers::{
    fit_xy, kernel_matrix, kernel_system, median_pairwise_distance, neighbor_mean, neighbor_sets,
    self_neighbor_sets, Kernel, SmootherSpec,
};

/// Noise-integrated bias and variance of one fit, conditional on `X` (and `X0`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionalMoments {
    /// `(1/n) Σ (E f̂(x_i) - f(x_i))²`
    pub bias_s: f64,
    /// `(1/n) Σ Var f̂(x_i)`
    pub var_s: f64,
    /// `(1/m) Σ (E f̂(x0_j) - f(x0_j))²`
    pub bias_r: f64,
    /// `(1/m) Σ Var f̂(x0_j)`
    pub var_r: f64,
}

fn check_inputs(x: &Matrix, x0: &Matrix, fx: &[f64], fx0: &[f64]) -> Result<()> {
    if fx.len() != x.rows() || fx0.len() != x0.rows() || x.cols() != x0.cols() {
        return Err(Error::Shape(format!(
            "X is {}x{} with {} mean values, X0 is {}x{} with {}",
            x.rows(),
            x.cols(),
            fx.len(),
            x0.rows(),
            x0.cols(),
            fx0.len()
        )));
    }
    if x0.rows() == 0 {
        return Err(Error::Shape("X0 has no rows".into()));
    }
    Ok(())
}

fn mean_squared_gap(a: &[f64], b: &[f64]) -> f64 {
    kahan_sum(a.iter().zip(b).map(|(u, v)| (u - v) * (u - v))) / a.len() as f64
}

/// Least squares. `Var f̂(x0) = σ² x0ᵀ(XᵀX)⁻¹x0`, summed through the Cholesky factor.
pub fn conditional_moments_ls(
    x: &Matrix,
    x0: &Matrix,
    fx: &[f64],
    fx0: &[f64],
    sigma2: f64,
) -> Result<ConditionalMoments> {
    check_inputs(x, x0, fx, fx0)?;
    let (n, p, m) = (x.rows() as f64, x.cols() as f64, x0.rows() as f64);
    let chol = gram_cholesky(x, 0.0)?;
    let beta = chol.solve(&x.t_matvec(fx)?)?;
    let leverage0 = hat_diagonal_with(&chol, x0);
    Ok(ConditionalMoments {
        bias_s: mean_squared_gap(&x.matvec(&beta)?, fx),
        var_s: sigma2 * p / n,
        bias_r: mean_squared_gap(&x0.matvec(&beta)?, fx0),
        var_r: sigma2 * kahan_sum(leverage0) / m,
    })
}

/// Ridge with penalty `lambda ≥ 0`. With `A = (XᵀX + λI)⁻¹` and `G = XᵀX`:
/// `Var_S = σ²/n tr(AGAG)` and `Var_R = σ²/m ⟨AGA, X0ᵀX0⟩`.
pub fn conditional_moments_ridge(
    x: &Matrix,
    x0: &Matrix,
    fx: &[f64],
    fx0: &[f64],
    sigma2: f64,
    lambda: f64,
) -> Result<ConditionalMoments> {
    check_inputs(x, x0, fx, fx0)?;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Domain(format!("lambda must be nonnegative, got {lambda}")));
    }
    let (n, m) = (x.rows() as f64, x0.rows() as f64);
    let gram = x.gram();
    let chol = gram_cholesky(x, lambda)?;
    let beta = chol.solve(&x.t_matvec(fx)?)?;
    let inverse = chol.inverse();
    let ag = inverse.matmul(&gram)?;
    let aga = ag.matmul(&inverse)?;
    Ok(ConditionalMoments {
        bias_s: mean_squared_gap(&x.matvec(&beta)?, fx),
        var_s: sigma2 * ag.frobenius_inner(&ag.transpose())? / n,
        bias_r: mean_squared_gap(&x0.matvec(&beta)?, fx0),
        var_r: sigma2 * aga.frobenius_inner(&x0.gram())? / m,
    })
}

/// Kernel ridge with `M = (K + λI)⁻¹`: `Var_S = σ²/n ‖KM‖²_F`, `Var_R = σ²/m ‖K0 M‖²_F`.
pub fn conditional_moments_kernel(
    x: &Matrix,
    x0: &Matrix,
    fx: &[f64],
    fx0: &[f64],
    sigma2: f64,
    lambda: f64,
    kernel: Kernel,
) -> Result<ConditionalMoments> {
    check_inputs(x, x0, fx, fx0)?;
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Domain(format!("kernel ridge needs lambda > 0, got {lambda}")));
    }
    let (n, m) = (x.rows() as f64, x0.rows() as f64);
    let bandwidth = match kernel {
        Kernel::Gaussian { bandwidth: Some(h) } => Some(h),
        Kernel::Gaussian { bandwidth: None } => Some(median_pairwise_distance(x)),
        Kernel::Linear => None,
    };
    let (k, chol) = kernel_system(kernel, x, lambda, bandwidth)?;
    let inverse = chol.inverse();
    let smoother = k.matmul(&inverse)?;
    let smoother0 = kernel_matrix(kernel, x0, x, bandwidth).matmul(&inverse)?;
    Ok(ConditionalMoments {
        bias_s: mean_squared_gap(&smoother.matvec(fx)?, fx),
        var_s: sigma2 * smoother.frobenius_norm().powi(2) / n,
        bias_r: mean_squared_gap(&smoother0.matvec(fx)?, fx0),
        var_r: sigma2 * smoother0.frobenius_norm().powi(2) / m,
    })
}

/// kNN regression. In-sample neighbor sets contain the point itself, so both
/// variances are exactly `σ²/k`.
pub fn conditional_moments_knn(
    x: &Matrix,
    x0: &Matrix,
    fx: &[f64],
    fx0: &[f64],
    sigma2: f64,
    k: usize,
) -> Result<ConditionalMoments> {
    check_inputs(x, x0, fx, fx0)?;
    if k == 0 || k > x.rows() {
        return Err(Error::DegenerateNeighbors { k, n: x.rows() });
    }
    let gaps = |sets: &[Vec<usize>], f: &[f64]| {
        kahan_sum(sets.iter().zip(f).map(|(s, fi)| (neighbor_mean(s, fx) - fi).powi(2)))
            / f.len() as f64
    };
    let variance = sigma2 / k as f64;
    Ok(ConditionalMoments {
        bias_s: gaps(&self_neighbor_sets(x, k), fx),
        var_s: variance,
        bias_r: gaps(&neighbor_sets(x, x0, k)?, fx0),
        var_r: variance,
    })
}

/// Dispatches on the smoother.
pub fn conditional_moments(
    spec: &SmootherSpec,
    x: &Matrix,
    x0: &Matrix,
    fx: &[f64],
    fx0: &[f64],
    sigma2: f64,
) -> Result<ConditionalMoments> {
    spec.validate()?;
    match *spec {
        SmootherSpec::LeastSquares => conditional_moments_ls(x, x0, fx, fx0, sigma2),
        SmootherSpec::Ridge { lambda } => conditional_moments_ridge(x, x0, fx, fx0, sigma2, lambda),
        SmootherSpec::KernelRidge { lambda, kernel } => {
            conditional_moments_kernel(x, x0, fx, fx0, sigma2, lambda, kernel)
        }
        SmootherSpec::Knn { k } => conditional_moments_knn(x, x0, fx, fx0, sigma2, k),
    }
}

/// Mean and standard error (sample sd over `√len`) of replicate values.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let len = values.len() as f64;
    let mean = kahan_sum(values.iter().copied()) / len;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let ss = kahan_sum(values.iter().map(|v| (v - mean) * (v - mean)));
    (mean, (ss / (len - 1.0) / len).sqrt())
}

/// Averaged decomposition `ErrR = σ² + B + V + B⁺ + V⁺` with Monte Carlo standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionEstimate {
    pub sigma2: f64,
    pub b: f64,
    pub v: f64,
    pub bplus: f64,
    pub vplus: f64,
    pub err_s: f64,
    pub err_r: f64,
    pub se_b: f64,
    pub se_v: f64,
    pub se_bplus: f64,
    pub se_vplus: f64,
    pub se_err_s: f64,
    pub se_err_r: f64,
    /// Paired standard error of `B⁺ - B`.
    pub se_bplus_minus_b: f64,
    /// Paired standard error of `ErrR - ErrS = B⁺ + V⁺`.
    pub se_excess: f64,
    pub reps: usize,
}

impl DecompositionEstimate {
    /// Aggregates replicate moments in the order given.
    pub fn from_moments(sigma2: f64, moments: &[ConditionalMoments]) -> Self {
        let column = |f: &dyn Fn(&ConditionalMoments) -> f64| -> (f64, f64) {
            mean_and_se(&moments.iter().map(f).collect::<Vec<_>>())
        };
        let (b, se_b) = column(&|m| m.bias_s);
        let (v, se_v) = column(&|m| m.var_s);
        let (bplus, se_bplus) = column(&|m| m.bias_r - m.bias_s);
        let (vplus, se_vplus) = column(&|m| m.var_r - m.var_s);
        let (_, se_err_s) = column(&|m| m.bias_s + m.var_s);
        let (_, se_err_r) = column(&|m| m.bias_r + m.var_r);
        let (_, se_bplus_minus_b) = column(&|m| m.bias_r - 2.0 * m.bias_s);
        let (_, se_excess) = column(&|m| m.bias_r + m.var_r - m.bias_s - m.var_s);
        let err_s = sigma2 + b + v;
        Self {
            sigma2,
            b,
            v,
            bplus,
            vplus,
            err_s,
            err_r: err_s + bplus + vplus,
            se_b,
            se_v,
            se_bplus,
            se_vplus,
            se_err_s,
            se_err_r,
            se_bplus_minus_b,
            se_excess,
            reps: moments.len(),
        }
    }
}

/// Training and test covariates with their mean values for one replicate.
pub struct ReplicateDraw {
    pub x: Matrix,
    pub x0: Matrix,
    pub fx: Vec<f64>,
    pub fx0: Vec<f64>,
}

/// Draws replicate `rep` of `scenario` with `test_rows` test points.
pub fn draw_replicate(scenario: &ScenarioConfig, rep: u64, test_rows: usize) -> ReplicateDraw {
    let mut train = Stream::new(scenario.seed, rep, Purpose::TrainCovariates);
    let mut test = Stream::new(scenario.seed, rep, Purpose::TestCovariates);
    let x = draw_covariates(&scenario.covariates, scenario.n, &mut train);
    let x0 = draw_covariates(&scenario.covariates, test_rows, &mut test);
    let fx = scenario.mean.eval_rows(&x);
    let fx0 = scenario.mean.eval_rows(&x0);
    ReplicateDraw { x, x0, fx, fx0 }
}

/// Runs `f` on every replicate index in parallel, keeping replicate order. The
/// first failure is returned together with its replicate index and seed.
pub fn run_replicates<T, F>(seed: u64, reps: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    (0..reps as u64)
        .into_par_iter()
        .map(|rep| {
            f(rep).map_err(|e| Error::ReplicateFailed {
                replicate: rep,
                seed,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Per-replicate conditional moments for `scenario`, in replicate order.
pub fn replicate_moments(
    scenario: &ScenarioConfig,
    smoother: &SmootherSpec,
    reps: usize,
) -> Result<Vec<ConditionalMoments>> {
    scenario.validate()?;
    smoother.validate()?;
    if reps < 2 {
        return Err(Error::Config(format!("need at least 2 replicates, got {reps}")));
    }
    let sigma2 = scenario.noise.variance();
    run_replicates(scenario.seed, reps, |rep| {
        let d = draw_replicate(scenario, rep, scenario.n);
        conditional_moments(smoother, &d.x, &d.x0, &d.fx, &d.fx0, sigma2)
    })
}

/// Estimates `B, V, B⁺, V⁺` for `smoother` under `scenario` from `reps` replicates.
pub fn estimate_decomposition(
    scenario: &ScenarioConfig,
    smoother: &SmootherSpec,
    reps: usize,
) -> Result<DecompositionEstimate> {
    let moments = replicate_moments(scenario, smoother, reps)?;
    Ok(DecompositionEstimate::from_moments(scenario.noise.variance(), &moments))
}

/// The two terms of `E(OCV | X)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OcvConditionalDecomp {
    /// `(σ²/n) Σ 1/(1 - h_ii)`
    pub v_of_x: f64,
    /// `(1/n) Σ (f(x_i) - E f̂(x_i))² / (1 - h_ii)²`
    pub b_of_x: f64,
}

pub fn ocv_conditional(
    x: &Matrix,
    fx: &[f64],
    smoother: &SmootherSpec,
    sigma2: f64,
) -> Result<OcvConditionalDecomp> {
    // fitting the noiseless means gives E(f̂(x_i) | X) as fitted values
    let fit = fit_xy(smoother, x, fx)?;
    if let Some(index) = fit
        .hat_diag
        .iter()
        .position(|&h| h >= 1.0 - crate::criteria::LEVERAGE_GUARD)
    {
        return Err(Error::LeverageOne {
            index,
            leverage: fit.hat_diag[index],
        });
    }
    let n = fx.len() as f64;
    let v_of_x = sigma2 * kahan_sum(fit.hat_diag.iter().map(|h| 1.0 / (1.0 - h))) / n;
    let b_of_x = kahan_sum(
        fx.iter()
            .zip(&fit.fitted)
            .zip(&fit.hat_diag)
            .map(|((f, e), h)| ((f - e) / (1.0 - h)).powi(2)),
    ) / n;
    Ok(OcvConditionalDecomp { v_of_x, b_of_x })
}

/// Average over `reps` draws of the mean inverse eigenvalue of `ZᵀZ/n`, computed
/// as `tr((ZᵀZ/n)⁻¹)/p`.
pub fn eigen_mp_check(
    n: usize,
    model: &CovariateModel,
    reps: usize,
    seed: u64,
) -> Result<f64> {
    model.validate()?;
    let p = model.dim();
    if p >= n {
        return Err(Error::Dimension(format!("need p < n, got p = {p}, n = {n}")));
    }
    if reps == 0 {
        return Err(Error::Config("need at least one replicate".into()));
    }
    let values = run_replicates(seed, reps, |rep| {
        let mut stream = Stream::new(seed, rep, Purpose::TrainCovariates);
        let z = draw_covariates(model, n, &mut stream);
        let chol = Cholesky::factor(&z.gram().scale(1.0 / n as f64))?;
        Ok(chol.inverse().trace() / p as f64)
    })?;
    Ok(kahan_sum(values) / reps as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{BaseDistribution, MeanModel, NoiseModel};

    fn iso(p: usize, n: usize, seed: u64) -> Matrix {
        draw_covariates(&CovariateModel::IsotropicNormal { p }, n, &mut Stream::new(seed, 0, Purpose::Auxiliary(0)))
    }

    fn fixture(n: usize, p: usize, seed: u64) -> (Matrix, Matrix, Vec<f64>, Vec<f64>) {
        let x = iso(p, n, seed);
        let x0 = iso(p, n + 3, seed + 1);
        let mean = MeanModel::AbsSum { c: 1.5 };
        let (fx, fx0) = (mean.eval_rows(&x), mean.eval_rows(&x0));
        (x, x0, fx, fx0)
    }

    #[test]
    fn ls_linear_mean_has_no_bias() {
        let x = iso(4, 30, 1);
        let x0 = iso(4, 30, 2);
        let mean = MeanModel::LinearBeta { beta: vec![1.0, -2.0, 0.5, 3.0] };
        let m = conditional_moments_ls(&x, &x0, &mean.eval_rows(&x), &mean.eval_rows(&x0), 2.0).unwrap();
        assert!(m.bias_s < 1e-20 && m.bias_r < 1e-20);
        assert_eq!(m.var_s, 2.0 * 4.0 / 30.0);
    }

    #[test]
    fn ls_same_test_points_gives_same_variance() {
        let (x, _, fx, _) = fixture(25, 5, 3);
        let m = conditional_moments_ls(&x, &x, &fx, &fx, 3.0).unwrap();
        assert!((m.var_r - m.var_s).abs() < 1e-12);
        assert!((m.bias_r - m.bias_s).abs() < 1e-12);
    }

    #[test]
    fn ridge_at_zero_matches_ls() {
        let (x, x0, fx, fx0) = fixture(25, 5, 4);
        let a = conditional_moments_ls(&x, &x0, &fx, &fx0, 3.0).unwrap();
        let b = conditional_moments_ridge(&x, &x0, &fx, &fx0, 3.0, 0.0).unwrap();
        for (u, v) in [(a.bias_s, b.bias_s), (a.var_s, b.var_s), (a.bias_r, b.bias_r), (a.var_r, b.var_r)] {
            assert!((u - v).abs() <= 1e-8 * u.abs().max(1.0), "{u} vs {v}");
        }
    }

    #[test]
    fn ridge_variances_vanish_for_large_lambda() {
        let (x, x0, fx, fx0) = fixture(25, 5, 5);
        let m = conditional_moments_ridge(&x, &x0, &fx, &fx0, 3.0, 1e9).unwrap();
        assert!(m.var_s < 1e-12 && m.var_r < 1e-12);
    }

    #[test]
    fn ls_rank_deficiency_propagates() {
        let x = Matrix::from_fn(6, 2, |i, _| i as f64);
        let f = vec![0.0; 6];
        assert!(matches!(
            conditional_moments_ls(&x, &x, &f, &f, 1.0),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn linear_kernel_matches_ridge() {
        let (x, x0, fx, fx0) = fixture(20, 3, 6);
        let a = conditional_moments_ridge(&x, &x0, &fx, &fx0, 2.0, 0.7).unwrap();
        let b = conditional_moments_kernel(&x, &x0, &fx, &fx0, 2.0, 0.7, Kernel::Linear).unwrap();
        for (u, v) in [(a.bias_s, b.bias_s), (a.var_s, b.var_s), (a.bias_r, b.bias_r), (a.var_r, b.var_r)] {
            assert!((u - v).abs() <= 1e-8 * u.abs().max(1.0), "{u} vs {v}");
        }
    }

    #[test]
    fn knn_variances_equal_and_constant_mean_unbiased() {
        let x = iso(2, 40, 7);
        let x0 = iso(2, 15, 8);
        let f = vec![4.0; 40];
        let f0 = vec![4.0; 15];
        let m = conditional_moments_knn(&x, &x0, &f, &f0, 5.0, 6).unwrap();
        assert_eq!(m.var_r - m.var_s, 0.0);
        assert_eq!(m.var_s, 5.0 / 6.0);
        assert!(m.bias_s < 1e-28 && m.bias_r < 1e-28);
        assert!(conditional_moments_knn(&x, &x0, &f, &f0, 1.0, 41).is_err());
    }

    #[test]
    fn estimate_identities_and_determinism() {
        let scenario = ScenarioConfig {
            name: "t".into(),
            covariates: CovariateModel::NormalBlock { p: 6, blocks: 2, rho: 0.5 },
            mean: MeanModel::AbsSum { c: 1.0 },
            noise: NoiseModel::new(2.0).unwrap(),
            n: 30,
            p: 6,
            test_m: 10,
            reps: 50,
            seed: 11,
        };
        let a = estimate_decomposition(&scenario, &SmootherSpec::LeastSquares, 50).unwrap();
        assert_eq!(a.reps, 50);
        assert!((a.err_s - (a.sigma2 + a.b + a.v)).abs() < 1e-10);
        assert!((a.err_r - (a.err_s + a.bplus + a.vplus)).abs() < 1e-10);
        assert_eq!(a.se_v, 0.0);
        let b = estimate_decomposition(&scenario, &SmootherSpec::LeastSquares, 50).unwrap();
        assert_eq!(a, b);
        assert!(estimate_decomposition(&scenario, &SmootherSpec::LeastSquares, 1).is_err());
    }

    #[test]
    fn replicate_failure_reports_seed() {
        let scenario = ScenarioConfig {
            name: "t".into(),
            covariates: CovariateModel::ScaledProduct {
                p: 3,
                base: BaseDistribution::Rademacher,
                sigma_half: None,
            },
            mean: MeanModel::Null,
            noise: NoiseModel::new(1.0).unwrap(),
            n: 4,
            p: 3,
            test_m: 1,
            reps: 400,
            seed: 99,
        };
        // with 4 Rademacher rows in 3 dimensions some replicate is singular
        match estimate_decomposition(&scenario, &SmootherSpec::LeastSquares, 400) {
            Err(Error::ReplicateFailed { seed, source, .. }) => {
                assert_eq!(seed, 99);
                assert!(matches!(*source, Error::RankDeficient { .. }));
            }
            other => panic!("expected replicate failure, got {other:?}"),
        }
    }

    #[test]
    fn ocv_conditional_examples() {
        let x = iso(3, 20, 12);
        let linear = MeanModel::LinearSum.eval_rows(&x);
        let d = ocv_conditional(&x, &linear, &SmootherSpec::LeastSquares, 2.0).unwrap();
        assert!(d.b_of_x < 1e-20);
        assert!(d.v_of_x >= 2.0);

        // huge ridge penalty: every h_ii ≈ 0
        let d = ocv_conditional(&x, &linear, &SmootherSpec::Ridge { lambda: 1e14 }, 2.0).unwrap();
        assert!((d.v_of_x - 2.0).abs() < 1e-9);
    }

    #[test]
    fn ocv_conditional_matches_formula_oracle() {
        let (x, _, fx, _) = fixture(15, 3, 13);
        let s2 = 1.7;
        let d = ocv_conditional(&x, &fx, &SmootherSpec::LeastSquares, s2).unwrap();
        // oracle: explicit hat matrix H = X (XᵀX)⁻¹ Xᵀ
        let inv = Cholesky::factor(&x.gram()).unwrap().inverse();
        let h = x.matmul(&inv).unwrap().matmul(&x.transpose()).unwrap();
        let hf = h.matvec(&fx).unwrap();
        let n = 15.0;
        let v: f64 = (0..15).map(|i| 1.0 / (1.0 - h[(i, i)])).sum::<f64>() * s2 / n;
        let b: f64 = (0..15).map(|i| ((fx[i] - hf[i]) / (1.0 - h[(i, i)])).powi(2)).sum::<f64>() / n;
        assert!((d.v_of_x - v).abs() < 1e-10 * v);
        assert!((d.b_of_x - b).abs() < 1e-10 * b.max(1e-300));
    }

    #[test]
    fn eigen_check_near_one_for_small_ratio() {
        let m = eigen_mp_check(2000, &CovariateModel::IsotropicNormal { p: 10 }, 5, 3).unwrap();
        assert!((m - 1.0).abs() < 0.02, "{m}");
        assert!(eigen_mp_check(10, &CovariateModel::IsotropicNormal { p: 10 }, 5, 3).is_err());
    }

    #[test]
    fn mean_and_se_examples() {
        let (m, se) = mean_and_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }
}
