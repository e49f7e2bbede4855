//! Multivariate skew-normal regression `yᵢ ~ SN_k(βᵀxᵢ, Ω, α)`.
//!
//! With `η = ω⁻¹α` the maximizing Ω for fixed `(β, η)` is
//! `V(β) = n⁻¹uᵀu`, `u = y − Xβ`, so only `(β, η)` are optimized.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::fit_uv::Convergence;
use crate::kernels::{zeta0, zeta1};
use crate::optim::{self, BfgsOptions, Outcome};
use crate::param::{alpha_from_delta, alpha_from_gamma1, gamma1_max, CorrelationMatrix, StdMoments, SQRT_2_OVER_PI};
use crate::{linalg, stats, Result, SnError};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Relative gradient tolerance; the profiled surface is cheap and smooth, so
/// stationarity is pushed well below the absolute 1e-6 check.
const TIGHT_GTOL: f64 = 1e-11;

/// ‖α̂‖ beyond which a fit is treated as divergent.
pub const DIVERGENCE_NORM: f64 = 1e3;

#[derive(Debug, Clone)]
pub struct MvRegressionData {
    y: DMatrix<f64>,
    x: DMatrix<f64>,
    intercept: Option<usize>,
}

impl MvRegressionData {
    pub fn new(y: DMatrix<f64>, x: DMatrix<f64>) -> Result<Self> {
        let (n, p) = x.shape();
        let k = y.ncols();
        crate::error::dim_check("rows of the design matrix", y.nrows(), n)?;
        if p == 0 || k == 0 || n <= p + k {
            return Err(SnError::Dimension(format!("need n > p + k with p, k ≥ 1, got n = {n}, p = {p}, k = {k}")));
        }
        if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(SnError::Input("non-finite value in data".into()));
        }
        linalg::cholesky(&(x.transpose() * &x), "XᵀX")
            .map_err(|_| SnError::Rank("design matrix is not of full column rank".into()))?;
        let intercept = (0..p).find(|&j| x.column(j).iter().all(|&v| v == 1.0));
        Ok(Self { y, x, intercept })
    }

    /// Intercept-only design.
    pub fn location(y: DMatrix<f64>) -> Result<Self> {
        let n = y.nrows();
        Self::new(y, DMatrix::from_element(n, 1, 1.0))
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn k(&self) -> usize {
        self.y.ncols()
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }
}

/// `ℓ = −½n log|Ω| − ½ tr(Ω⁻¹uᵀu) + Σζ₀(uᵢᵀη) − (nk/2) log 2π`, `η = ω⁻¹α`.
pub fn loglik_mv(beta: &DMatrix<f64>, omega: &DMatrix<f64>, alpha: &DVector<f64>, data: &MvRegressionData) -> Result<f64> {
    let (n, k) = (data.n(), data.k());
    crate::error::dim_check("rows of beta", data.p(), beta.nrows())?;
    crate::error::dim_check("columns of beta", k, beta.ncols())?;
    crate::error::dim_check("alpha length", k, alpha.len())?;
    let chol = linalg::cholesky(omega, "Omega").map_err(|_| SnError::Singular("Omega is not positive definite".into()))?;
    let u = data.y() - data.x() * beta;
    let eta = DVector::from_fn(k, |i, _| alpha[i] / omega[(i, i)].sqrt());
    let quad = (chol.solve(&(u.transpose() * &u))).trace();
    let skew: f64 = (&u * eta).iter().map(|&v| zeta0(v)).sum();
    let nf = n as f64;
    Ok(-0.5 * nf * linalg::log_det(&chol) - 0.5 * quad + skew - 0.5 * nf * k as f64 * LN_2PI)
}

fn unpack(theta: &DVector<f64>, p: usize, k: usize) -> (DMatrix<f64>, DVector<f64>) {
    let beta = DMatrix::from_column_slice(p, k, &theta.as_slice()[..p * k]);
    let eta = DVector::from_column_slice(&theta.as_slice()[p * k..]);
    (beta, eta)
}

fn pack(beta: &DMatrix<f64>, eta: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(beta.len() + eta.len(), beta.iter().chain(eta.iter()).copied())
}

/// `ℓ*(β, η) = −½n log|V(β)| − ½nk + Σζ₀(uᵢᵀη) − (nk/2) log 2π`.
pub fn profile_loglik(beta: &DMatrix<f64>, eta: &DVector<f64>, data: &MvRegressionData) -> Result<f64> {
    Ok(profile_eval(beta, eta, data, false)?.0)
}

/// Gradient of [`profile_loglik`]: `XᵀuV⁻¹ − Xᵀζ₁(uη)ηᵀ` for β (p×k) and
/// `uᵀζ₁(uη)` for η.
pub fn profile_grad(beta: &DMatrix<f64>, eta: &DVector<f64>, data: &MvRegressionData) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let (_, g) = profile_eval(beta, eta, data, true)?;
    Ok(g.expect("gradient requested"))
}

#[allow(clippy::type_complexity)]
fn profile_eval(
    beta: &DMatrix<f64>,
    eta: &DVector<f64>,
    data: &MvRegressionData,
    with_grad: bool,
) -> Result<(f64, Option<(DMatrix<f64>, DVector<f64>)>)> {
    let (n, k) = (data.n(), data.k());
    let nf = n as f64;
    let u = data.y() - data.x() * beta;
    let v = u.transpose() * &u / nf;
    let chol = linalg::cholesky(&v, "V(beta)").map_err(|_| SnError::Singular("residual covariance V(beta) is singular".into()))?;
    let ue = &u * eta;
    let f = -0.5 * nf * linalg::log_det(&chol) - 0.5 * nf * k as f64 + ue.iter().map(|&t| zeta0(t)).sum::<f64>()
        - 0.5 * nf * k as f64 * LN_2PI;
    if !with_grad {
        return Ok((f, None));
    }
    let z1 = ue.map(zeta1);
    let xt = data.x().transpose();
    let gb = &xt * &u * linalg::inverse(&chol) - &xt * &z1 * eta.transpose();
    let ge = u.transpose() * z1;
    Ok((f, Some((gb, ge))))
}

fn objective(data: &MvRegressionData) -> impl FnMut(&DVector<f64>) -> (f64, DVector<f64>) + '_ {
    let (p, k) = (data.p(), data.k());
    move |theta: &DVector<f64>| {
        let (b, e) = unpack(theta, p, k);
        match profile_eval(&b, &e, data, true) {
            Ok((f, Some((gb, ge)))) if f.is_finite() => (f, pack(&gb, &ge)),
            _ => (f64::NEG_INFINITY, DVector::zeros(theta.len())),
        }
    }
}

/// Least-squares β shifted to the skew-normal location, and η from
/// componentwise moment estimates. The marginal δ's are shrunk until they
/// form a feasible joint δ.
pub fn mv_start(data: &MvRegressionData) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let (n, k) = (data.n(), data.k());
    let mut beta = linalg::least_squares(data.x(), data.y())?;
    let u = data.y() - data.x() * &beta;
    let v = u.transpose() * &u / n as f64;
    let cap = 0.9 * gamma1_max();
    let mut delta = DVector::zeros(k);
    let mut omega_sd = DVector::zeros(k);
    for j in 0..k {
        let col: Vec<f64> = u.column(j).iter().copied().collect();
        let (_, _, skew) = stats::sample_moments(&col);
        let m = StdMoments::from_alpha(alpha_from_gamma1(skew.clamp(-cap, cap))?);
        delta[j] = m.delta;
        omega_sd[j] = v[(j, j)].sqrt() / m.sigma_z;
    }
    let mut eta = DVector::zeros(k);
    for _ in 0..50 {
        let d = DVector::from_fn(k, |i, _| omega_sd[i] * SQRT_2_OVER_PI * delta[i]);
        let omega = &v + &d * d.transpose();
        let ob = CorrelationMatrix::from_covariance(&omega)?;
        if let Ok(alpha) = alpha_from_delta(&delta, &ob) {
            eta = DVector::from_fn(k, |i, _| alpha[i] / omega_sd[i]);
            if let Some(ic) = data.intercept {
                for j in 0..k {
                    beta[(ic, j)] -= d[j];
                }
            }
            break;
        }
        delta *= 0.9;
    }
    Ok((beta, eta))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptionsMv {
    pub bfgs: BfgsOptions,
    /// Relative step of the finite-difference Hessian used for SEs.
    pub fd_step: f64,
}

impl Default for FitOptionsMv {
    fn default() -> Self {
        Self { bfgs: BfgsOptions { max_iter: 500, gtol: TIGHT_GTOL }, fd_step: 1e-5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResultMv {
    /// p×k, as rows.
    pub beta: Vec<Vec<f64>>,
    /// k×k, as rows.
    pub omega: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
    pub eta: Vec<f64>,
    pub loglik: f64,
    pub se_beta: Vec<Vec<f64>>,
    pub se_eta: Vec<f64>,
    /// `ω̂ⱼ · SE(η̂ⱼ)`.
    pub se_alpha: Vec<f64>,
    pub convergence: Convergence,
    pub boundary: bool,
    pub deficit: Option<f64>,
    pub trace: Vec<f64>,
}

impl FitResultMv {
    pub fn beta_matrix(&self) -> DMatrix<f64> {
        linalg::from_rows(&self.beta, "beta").expect("rectangular by construction")
    }

    pub fn omega_matrix(&self) -> DMatrix<f64> {
        linalg::from_rows(&self.omega, "Omega").expect("rectangular by construction")
    }
}

fn build(theta: &DVector<f64>, data: &MvRegressionData, loglik: f64, convergence: Convergence, trace: Vec<f64>, options: &FitOptionsMv) -> FitResultMv {
    let (p, k, n) = (data.p(), data.k(), data.n() as f64);
    let (beta, eta) = unpack(theta, p, k);
    let u = data.y() - data.x() * &beta;
    let omega = u.transpose() * &u / n;
    let w = omega.diagonal().map(f64::sqrt);
    let alpha = eta.component_mul(&w);
    let mut grad = objective(data);
    let h = optim::fd_hessian(|t| grad(t).1, theta, options.fd_step);
    let se = match linalg::cholesky(&linalg::symmetrize(&-h), "information") {
        Ok(c) => linalg::inverse(&c).diagonal().map(f64::sqrt),
        Err(_) => DVector::from_element(theta.len(), f64::NAN),
    };
    let (se_b, se_e) = unpack(&se, p, k);
    FitResultMv {
        beta: linalg::to_rows(&beta),
        omega: linalg::to_rows(&omega),
        alpha: alpha.iter().copied().collect(),
        eta: eta.iter().copied().collect(),
        loglik,
        se_beta: linalg::to_rows(&se_b),
        se_alpha: se_e.component_mul(&w).iter().copied().collect(),
        se_eta: se_e.iter().copied().collect(),
        boundary: convergence == Convergence::Boundary,
        convergence,
        deficit: None,
        trace,
    }
}

/// Quasi-Newton on `(β, η)`. A fit whose ‖α̂‖ exceeds
/// [`DIVERGENCE_NORM`] when the optimizer stops is reported as a boundary
/// fit.
pub fn fit_mv(data: &MvRegressionData, options: &FitOptionsMv) -> Result<FitResultMv> {
    let (beta0, eta0) = mv_start(data)?;
    let mut res = optim::maximize(objective(data), pack(&beta0, &eta0), &options.bfgs, None);
    if !res.f.is_finite() {
        return Err(SnError::Singular("residual covariance is singular at the start".into()));
    }
    let mut obj = objective(data);
    let x = optim::refine_stationary(|t| obj(t).1, res.x.clone(), options.fd_step, 4);
    let (f, g) = obj(&x);
    if f.is_finite() && g.amax() <= res.grad.amax() {
        res.x = x;
        res.f = f;
        res.grad = g;
    }
    let (_, eta) = unpack(&res.x, data.p(), data.k());
    let n = data.n() as f64;
    let (beta, _) = unpack(&res.x, data.p(), data.k());
    let u = data.y() - data.x() * beta;
    let w = (u.transpose() * &u / n).diagonal().map(f64::sqrt);
    let conv = if eta.component_mul(&w).norm() > DIVERGENCE_NORM {
        Convergence::Boundary
    } else {
        match res.outcome {
            Outcome::Converged => Convergence::Converged,
            Outcome::LineSearchFailed if res.grad.amax() < 1e-5 * (1.0 + res.f.abs()) => Convergence::Converged,
            _ => Convergence::MaxIter,
        }
    };
    Ok(build(&res.x, data, res.f, conv, res.trace, options))
}

/// Default loglikelihood drop for resolving a k-variate boundary fit.
pub fn default_drop_mv(k: usize) -> f64 {
    2.0 * k as f64
}

/// Maximum over β with η fixed.
fn profile_eta(data: &MvRegressionData, eta: &DVector<f64>, beta0: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
    let (p, k) = (data.p(), data.k());
    let mut full = objective(data);
    let f = |b: &DVector<f64>| {
        let (val, g) = full(&pack(&DMatrix::from_column_slice(p, k, b.as_slice()), eta));
        (val, g.rows(0, p * k).into_owned())
    };
    let start = DVector::from_column_slice(beta0.as_slice());
    let r = optim::maximize(f, start, &BfgsOptions { max_iter: 500, gtol: TIGHT_GTOL }, None);
    let mut full = objective(data);
    let mut g = |b: &DVector<f64>| full(&pack(&DMatrix::from_column_slice(p, k, b.as_slice()), eta)).1.rows(0, p * k).into_owned();
    let x = optim::refine_stationary(&mut g, r.x.clone(), 1e-5, 4);
    let b = DMatrix::from_column_slice(p, k, x.as_slice());
    match profile_loglik(&b, eta, data) {
        Ok(v) if v.is_finite() && v >= r.f - 1e-9 * (1.0 + r.f.abs()) => (v, b),
        _ => (r.f, DMatrix::from_column_slice(p, k, r.x.as_slice())),
    }
}

/// Shrinks a boundary fit along `η = tη̂`, `t ∈ [0, 1]`, re-maximizing β,
/// until the loglikelihood is `drop` below the supremum. Non-boundary
/// fits and `drop ≤ 0` are returned unchanged.
pub fn boundary_resolve_mv(fit: &FitResultMv, data: &MvRegressionData, drop: f64, options: &FitOptionsMv) -> Result<FitResultMv> {
    if !fit.boundary || !(drop > 0.0) {
        return Ok(fit.clone());
    }
    let sup = fit.loglik;
    let eta_hat = DVector::from_vec(fit.eta.clone());
    let mut beta = fit.beta_matrix();
    let (l0, b0) = profile_eta(data, &DVector::zeros(data.k()), &beta);
    let (theta, ll) = if sup - l0 <= drop {
        (pack(&b0, &DVector::zeros(data.k())), l0)
    } else {
        let (mut inner, mut outer) = (0.0, 1.0);
        let mut best = (pack(&beta, &eta_hat), sup);
        for _ in 0..80 {
            let mid = 0.5 * (inner + outer);
            let eta = &eta_hat * mid;
            let (lm, bm) = profile_eta(data, &eta, &beta);
            beta = bm.clone();
            best = (pack(&bm, &eta), lm);
            let d = sup - lm;
            if (d - drop).abs() < 1e-7 {
                break;
            }
            if d > drop {
                inner = mid;
            } else {
                outer = mid;
            }
        }
        best
    };
    let mut out = build(&theta, data, ll, Convergence::BoundaryResolved, fit.trace.clone(), options);
    out.boundary = true;
    out.deficit = Some(sup - ll);
    Ok(out)
}

/// Fits at several stopping deficits, for checking that β̂ is stable
/// along the resolved path. Interior fits yield a single entry.
pub fn fit_mv_sensitivity(data: &MvRegressionData, drops: &[f64], options: &FitOptionsMv) -> Result<Vec<FitResultMv>> {
    let base = fit_mv(data, options)?;
    if !base.boundary {
        return Ok(vec![base]);
    }
    drops.iter().map(|&d| boundary_resolve_mv(&base, data, d, options)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrTestMv {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub loglik_sn: f64,
    pub loglik_normal: f64,
}

/// Multivariate normal regression loglikelihood at least squares.
pub fn loglik_normal_mv(data: &MvRegressionData) -> Result<f64> {
    let beta = linalg::least_squares(data.x(), data.y())?;
    profile_loglik(&beta, &DVector::zeros(data.k()), data)
}

/// `2{ℓ(SN fit) − ℓ(normal fit)}`, referred to χ²_k.
pub fn lr_normality_mv(data: &MvRegressionData) -> Result<LrTestMv> {
    let f = fit_mv(data, &FitOptionsMv::default())?;
    let ln = loglik_normal_mv(data)?;
    let statistic = (2.0 * (f.loglik - ln)).max(0.0);
    let k = data.k();
    Ok(LrTestMv { statistic, df: k, p_value: 1.0 - stats::chi2_cdf(statistic, k), loglik_sn: f.loglik, loglik_normal: ln })
}

/// Ω⁻¹ scaled to unit diagonal with off-diagonal signs changed.
pub fn partial_correlation_matrix(omega: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = linalg::cholesky(omega, "Omega").map_err(|_| SnError::Singular("Omega is not positive definite".into()))?;
    let pm = linalg::inverse(&chol);
    let k = pm.nrows();
    Ok(DMatrix::from_fn(k, k, |i, j| if i == j { 1.0 } else { -pm[(i, j)] / (pm[(i, i)] * pm[(j, j)]).sqrt() }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairIndependence {
    pub i: usize,
    pub j: usize,
    pub partial_correlation: f64,
    /// The (i, j) entry of Ω⁻¹ is zero within tolerance.
    pub zero_partial: bool,
    /// At most one of αᵢ, αⱼ is nonzero within tolerance.
    pub at_most_one_skewed: bool,
    pub independent: bool,
}

/// For each pair (i < j): are `Yᵢ`, `Yⱼ` independent given the other
/// components?
pub fn conditional_independence_report(omega: &DMatrix<f64>, alpha: &DVector<f64>, zero_tol: f64) -> Result<Vec<PairIndependence>> {
    let pc = partial_correlation_matrix(omega)?;
    let k = pc.nrows();
    crate::error::dim_check("alpha length", k, alpha.len())?;
    let mut out = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            let zero_partial = pc[(i, j)].abs() <= zero_tol;
            let at_most_one_skewed = alpha[i].abs() <= zero_tol || alpha[j].abs() <= zero_tol;
            out.push(PairIndependence {
                i,
                j,
                partial_correlation: pc[(i, j)],
                zero_partial,
                at_most_one_skewed,
                independent: zero_partial && at_most_one_skewed,
            });
        }
    }
    Ok(out)
}

/// [`conditional_independence_report`] on a fitted model.
pub fn fit_independence_report(fit: &FitResultMv, zero_tol: f64) -> Result<Vec<PairIndependence>> {
    conditional_independence_report(&fit.omega_matrix(), &DVector::from_vec(fit.alpha.clone()), zero_tol)
}
