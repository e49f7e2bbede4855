//! Univariate skew-normal regression by maximum likelihood.
//!
//! The model is `yᵢ = xᵢᵀβ + εᵢ` with `εᵢ` skew-normal. Fitting works in
//! centred parameters `θ = (β, σ, γ₁)`, where `xᵢᵀβ` is the mean of `yᵢ`,
//! because that chart avoids the stationary point of the direct-parameter
//! likelihood at `α = 0`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::kernels::{half_normal_cumulant, zeta0, zeta1, zeta2};
use crate::optim::{self, BfgsOptions, Bounds, Outcome};
use crate::param::{alpha_from_gamma1, gamma1_max, StdMoments, SQRT_2_OVER_PI};
use crate::{linalg, stats, Result, SnError};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Distance from `γ₁ᵐᵃˣ` at which an estimate counts as on the boundary.
pub const BOUNDARY_GAP: f64 = 1e-6;

/// Below this |λ| the γ₁-score uses its limit at `γ₁ = 0`.
const SMALL_LAMBDA: f64 = 1e-4;

/// Response and design matrix.
#[derive(Debug, Clone)]
pub struct RegressionData {
    y: DVector<f64>,
    x: DMatrix<f64>,
    intercept: Option<usize>,
}

impl RegressionData {
    pub fn new(y: DVector<f64>, x: DMatrix<f64>) -> Result<Self> {
        let (n, p) = x.shape();
        crate::error::dim_check("rows of the design matrix", y.len(), n)?;
        if p == 0 || n <= p {
            return Err(SnError::Dimension(format!("need n > p ≥ 1, got n = {n}, p = {p}")));
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
    pub fn location(y: &[f64]) -> Result<Self> {
        let n = y.len();
        Self::new(DVector::from_column_slice(y), DMatrix::from_element(n, 1, 1.0))
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// Index of a column of ones, needed to move between the two
    /// parametrizations.
    pub fn intercept(&self) -> Option<usize> {
        self.intercept
    }
}

/// Centred parameters: `E yᵢ = xᵢᵀβ`, standard deviation σ, skewness γ₁.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpRegression {
    pub beta: Vec<f64>,
    pub sigma: f64,
    pub gamma1: f64,
}

impl CpRegression {
    pub fn to_vector(&self) -> DVector<f64> {
        let mut v = self.beta.clone();
        v.push(self.sigma);
        v.push(self.gamma1);
        DVector::from_vec(v)
    }

    pub fn from_vector(theta: &DVector<f64>) -> Self {
        let p = theta.len() - 2;
        Self { beta: theta.rows(0, p).iter().copied().collect(), sigma: theta[p], gamma1: theta[p + 1] }
    }
}

/// Direct parameters: location `xᵢᵀβ`, scale ω, shape α.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpRegression {
    pub beta: Vec<f64>,
    pub omega: f64,
    pub alpha: f64,
}

/// Only the intercept moves: `β₁ᴰᴾ = β₁ᶜᴾ − σμ_z/σ_z`.
pub fn cp_to_dp(cp: &CpRegression, intercept: usize) -> Result<DpRegression> {
    let alpha = alpha_from_gamma1(cp.gamma1)?;
    let m = StdMoments::from_alpha(alpha);
    let mut beta = cp.beta.clone();
    beta[intercept] -= cp.sigma * m.mu_z / m.sigma_z;
    Ok(DpRegression { beta, omega: cp.sigma / m.sigma_z, alpha })
}

pub fn dp_to_cp(dp: &DpRegression, intercept: usize) -> CpRegression {
    let m = StdMoments::from_alpha(dp.alpha);
    let mut beta = dp.beta.clone();
    beta[intercept] += dp.omega * m.mu_z;
    CpRegression { beta, sigma: dp.omega * m.sigma_z, gamma1: m.gamma1() }
}

fn residuals(data: &RegressionData, beta: &[f64]) -> DVector<f64> {
    data.y() - data.x() * DVector::from_column_slice(beta)
}

/// `ℓ = −n log ω − ½Σzᵢ² + Σζ₀(αzᵢ) − (n/2) log 2π` with `z = (y − Xβ)/ω`.
pub fn loglik_dp(dp: &DpRegression, data: &RegressionData) -> f64 {
    if !(dp.omega > 0.0) || !dp.alpha.is_finite() {
        return f64::NEG_INFINITY;
    }
    let n = data.n() as f64;
    let z = residuals(data, &dp.beta) / dp.omega;
    -n * dp.omega.ln() - 0.5 * z.norm_squared() + z.iter().map(|&v| zeta0(dp.alpha * v)).sum::<f64>() - 0.5 * n * LN_2PI
}

/// Gradient of [`loglik_dp`] in `(β, ω, α)`.
pub fn score_dp(dp: &DpRegression, data: &RegressionData) -> DVector<f64> {
    let p = data.p();
    let n = data.n() as f64;
    let z = residuals(data, &dp.beta) / dp.omega;
    let p1 = z.map(|v| zeta1(dp.alpha * v));
    let mut g = DVector::zeros(p + 2);
    let gb = data.x().transpose() * (&z - &p1 * dp.alpha) / dp.omega;
    g.rows_mut(0, p).copy_from(&gb);
    g[p] = (-n + z.norm_squared() - dp.alpha * p1.dot(&z)) / dp.omega;
    g[p + 1] = p1.dot(&z);
    g
}

/// Per-point quantities shared by the centred loglikelihood and its
/// derivatives. Primes are derivatives in λ.
struct CpState {
    lambda: f64,
    sigma: f64,
    mu_z: f64,
    sigma_z: f64,
    mu1: f64,
    sig1: f64,
    sig2: f64,
    r: DVector<f64>,
    z: DVector<f64>,
    z1: DVector<f64>,
    z2: DVector<f64>,
    p1: DVector<f64>,
    p2: DVector<f64>,
}

impl CpState {
    fn new(theta: &DVector<f64>, data: &RegressionData) -> Result<Self> {
        let p = data.p();
        crate::error::dim_check("centred parameter length", p + 2, theta.len())?;
        let (sigma, gamma1) = (theta[p], theta[p + 1]);
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(SnError::Domain(format!("sigma must be positive, got {sigma}")));
        }
        let lambda = alpha_from_gamma1(gamma1)?;
        let m = StdMoments::from_alpha(lambda);
        let (mu_z, sigma_z) = (m.mu_z, m.sigma_z);
        let q = 1.0 + lambda * lambda;
        let mu1 = SQRT_2_OVER_PI / q.powf(1.5);
        let sig1 = -mu_z * mu1 / sigma_z;
        let mu2 = -3.0 * mu_z / (q * q);
        let sig2 = -(mu1 * (mu1 * sigma_z - mu_z * sig1) / (sigma_z * sigma_z) + mu_z * mu2 / sigma_z);
        let r = (data.y() - data.x() * theta.rows(0, p)) / sigma;
        let z = r.map(|v| mu_z + sigma_z * v);
        let z1 = r.map(|v| mu1 + sig1 * v);
        let z2 = r.map(|v| mu2 + sig2 * v);
        let p1 = z.map(|v| zeta1(lambda * v));
        let p2 = z.map(|v| zeta2(lambda * v));
        Ok(Self { lambda, sigma, mu_z, sigma_z, mu1, sig1, sig2, r, z, z1, z2, p1, p2 })
    }

    fn loglik(&self) -> f64 {
        let n = self.z.len() as f64;
        n * (self.sigma_z / self.sigma).ln() - 0.5 * self.z.norm_squared()
            + self.z.iter().map(|&v| zeta0(self.lambda * v)).sum::<f64>()
            - 0.5 * n * LN_2PI
    }

    /// Gradient in `(β, σ, λ)`.
    fn grad_lambda(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let p = x.ncols();
        let n = self.z.len() as f64;
        let (s, sz, l) = (self.sigma, self.sigma_z, self.lambda);
        let e = &self.r * s;
        let mut g = DVector::zeros(p + 2);
        let inner = &e - (&self.p1 * l - DVector::from_element(self.z.len(), self.mu_z)) * (s / sz);
        g.rows_mut(0, p).copy_from(&(x.transpose() * inner * (sz / s).powi(2)));
        g[p] = -n / s + sz * e.dot(&(&self.z - &self.p1 * l)) / (s * s);
        g[p + 1] = n * self.sig1 / sz - self.z.dot(&self.z1) + self.p1.dot(&(&self.z + &self.z1 * l));
        g
    }

    /// Negative Hessian in `(β, σ, λ)`.
    fn neg_hess_lambda(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let p = x.ncols();
        let nn = self.z.len();
        let n = nn as f64;
        let (s, sz, l) = (self.sigma, self.sigma_z, self.lambda);
        let ones = DVector::from_element(nn, 1.0);
        let w = self.p2.map(|v| 1.0 - l * l * v);
        let zt = &self.z + &self.z1 * l;
        let p2zt = self.p2.component_mul(&zt);
        let mut j = DMatrix::zeros(p + 2, p + 2);

        let xw = DMatrix::from_fn(nn, p, |i, c| x[(i, c)] * w[i]);
        j.view_mut((0, 0), (p, p)).copy_from(&(x.transpose() * xw * (sz / s).powi(2)));

        let zc = &self.z - &ones * self.mu_z;
        let jbs = x.transpose() * (&self.z - &self.p1 * l + w.component_mul(&zc)) * (sz / (s * s));
        let jbl = x.transpose()
            * ((&self.r * (-2.0 * sz) + &self.p1 * l - &ones * self.mu_z) * self.sig1
                + (&self.p1 + &p2zt * l - &ones * self.mu1) * sz)
            / s;
        let rw = self.r.component_mul(&w);
        let jss = (-n + 2.0 * sz * self.r.dot(&(&self.z - &self.p1 * l)) + sz * sz * rw.dot(&self.r)) / (s * s);
        let jsl = -self.r.dot(&((&self.z - &self.p1 * l) * self.sig1 + (&self.z1 - &self.p1 - &p2zt * l) * sz)) / s;
        let jll = n * (self.sig1 * self.sig1 - sz * self.sig2) / (sz * sz)
            + self.z1.norm_squared()
            + self.z.dot(&self.z2)
            - zt.dot(&p2zt)
            - self.p1.dot(&(&self.z1 * 2.0 + &self.z2 * l));

        for c in 0..p {
            j[(c, p)] = jbs[c];
            j[(p, c)] = jbs[c];
            j[(c, p + 1)] = jbl[c];
            j[(p + 1, c)] = jbl[c];
        }
        j[(p, p)] = jss;
        j[(p, p + 1)] = jsl;
        j[(p + 1, p)] = jsl;
        j[(p + 1, p + 1)] = jll;
        j
    }

    /// Limit of ∂ℓ/∂γ₁ as `γ₁ → 0`: ℓ grows like `Aλ³` with
    /// `A = (b/2 − b³)Σr + (κ₃/6)Σr³`, `b = √(2/π)`.
    fn gamma1_score_at_zero(&self) -> f64 {
        let b = SQRT_2_OVER_PI;
        let k3 = half_normal_cumulant(3).expect("order 3 is supported");
        let a = (0.5 * b - b.powi(3)) * self.r.sum() + k3 / 6.0 * self.r.iter().map(|v| v.powi(3)).sum::<f64>();
        2.0 * a / ((4.0 - PI) * b.powi(3))
    }
}

/// `(R, T, R′, T′)` of the γ₁ → λ map.
fn rt(gamma1: f64) -> (f64, f64, f64, f64) {
    let r = (2.0 * gamma1 / (4.0 - PI)).cbrt();
    let t = (2.0 / PI - (1.0 - 2.0 / PI) * r * r).sqrt();
    let r1 = 2.0 / (3.0 * r * r * (4.0 - PI));
    let t1 = -(1.0 - 2.0 / PI) * r * r1 / t;
    (r, t, r1, t1)
}

/// dλ/dγ₁.
pub fn dlambda_dgamma1(gamma1: f64) -> f64 {
    let (r, t, _, _) = rt(gamma1);
    2.0 / (3.0 * (4.0 - PI)) * (1.0 / (t * r * r) + (1.0 - 2.0 / PI) / t.powi(3))
}

/// d²λ/dγ₁².
pub fn d2lambda_dgamma1(gamma1: f64) -> f64 {
    let (r, t, r1, t1) = rt(gamma1);
    -2.0 / (3.0 * (4.0 - PI)) * (t1 / (t * r).powi(2) + 2.0 * r1 / (t * r.powi(3)) + 3.0 * (1.0 - 2.0 / PI) * t1 / t.powi(4))
}

/// `ℓ(CP) = n log(σ_z/σ) − ½zᵀz + Σζ₀(λzᵢ) − (n/2) log 2π`, where
/// `zᵢ = μ_z + σ_z(yᵢ − xᵢᵀβ)/σ`.
pub fn loglik_cp(theta: &DVector<f64>, data: &RegressionData) -> Result<f64> {
    Ok(CpState::new(theta, data)?.loglik())
}

/// Gradient of [`loglik_cp`] in `(β, σ, γ₁)`.
pub fn grad_cp(theta: &DVector<f64>, data: &RegressionData) -> Result<DVector<f64>> {
    let st = CpState::new(theta, data)?;
    Ok(grad_from_state(&st, theta, data))
}

fn grad_from_state(st: &CpState, theta: &DVector<f64>, data: &RegressionData) -> DVector<f64> {
    let p = data.p();
    let mut g = st.grad_lambda(data.x());
    g[p + 1] = if st.lambda.abs() < SMALL_LAMBDA {
        st.gamma1_score_at_zero()
    } else {
        g[p + 1] * dlambda_dgamma1(theta[p + 1])
    };
    g
}

/// Hessian of [`loglik_cp`] in `(β, σ, γ₁)`. Undefined at `γ₁ = 0`,
/// where dλ/dγ₁ is infinite.
pub fn hess_cp(theta: &DVector<f64>, data: &RegressionData) -> Result<DMatrix<f64>> {
    let st = CpState::new(theta, data)?;
    let p = data.p();
    let g1 = theta[p + 1];
    if g1 == 0.0 {
        return Err(SnError::Domain("the centred Hessian is not defined at gamma1 = 0".into()));
    }
    let gl = st.grad_lambda(data.x())[p + 1];
    let mut h = -st.neg_hess_lambda(data.x());
    let d1 = dlambda_dgamma1(g1);
    let corner = h[(p + 1, p + 1)] * d1 * d1 + gl * d2lambda_dgamma1(g1);
    for c in 0..=p {
        h[(c, p + 1)] *= d1;
        h[(p + 1, c)] *= d1;
    }
    h[(p + 1, p + 1)] = corner;
    Ok(h)
}

/// Least-squares β, residual standard deviation and clipped residual
/// skewness.
pub fn mom_init(data: &RegressionData) -> Result<CpRegression> {
    if data.n() < 3 {
        return Err(SnError::Degenerate("need at least 3 observations".into()));
    }
    let beta = linalg::least_squares(data.x(), &DMatrix::from_column_slice(data.n(), 1, data.y().as_slice()))?;
    let beta: Vec<f64> = beta.column(0).iter().copied().collect();
    let e = residuals(data, &beta);
    let (_, var, skew) = stats::sample_moments(e.as_slice());
    if !(var > 0.0) {
        return Err(SnError::Degenerate("residual standard deviation is zero".into()));
    }
    let cap = 0.9 * gamma1_max();
    Ok(CpRegression { beta, sigma: var.sqrt(), gamma1: skew.clamp(-cap, cap) })
}

/// One EM iteration. The latent `h = |X₀|` given `yᵢ` is `N(δzᵢ, 1−δ²)`
/// truncated to `(0, ∞)`; the M-step regresses `y` on `[X, E h]`.
/// Returns the update and its observed-data loglikelihood.
pub fn em_step(dp: &DpRegression, data: &RegressionData) -> Result<(DpRegression, f64)> {
    let (n, p) = (data.n(), data.p());
    let delta = StdMoments::from_alpha(dp.alpha).delta;
    let z = residuals(data, &dp.beta) / dp.omega;
    let sd = (1.0 - delta * delta).sqrt();
    let eh = z.map(|v| delta * v + sd * zeta1(dp.alpha * v));
    let eh2 = DVector::from_fn(n, |i, _| sd * sd + delta * z[i] * eh[i]);

    let mut a = DMatrix::zeros(p + 1, p + 1);
    let xt = data.x().transpose();
    a.view_mut((0, 0), (p, p)).copy_from(&(&xt * data.x()));
    let xh = &xt * &eh;
    for c in 0..p {
        a[(c, p)] = xh[c];
        a[(p, c)] = xh[c];
    }
    a[(p, p)] = eh2.sum();
    let mut rhs = DVector::zeros(p + 1);
    rhs.rows_mut(0, p).copy_from(&(&xt * data.y()));
    rhs[p] = eh.dot(data.y());
    let sol = linalg::cholesky(&a, "EM normal equations")?.solve(&rhs);
    let beta: Vec<f64> = sol.rows(0, p).iter().copied().collect();
    let psi = sol[p];
    let e = residuals(data, &beta);
    let tau2 = (e.norm_squared() - 2.0 * psi * e.dot(&eh) + psi * psi * eh2.sum()) / n as f64;
    if !(tau2 > 0.0) {
        return Err(SnError::Degenerate("EM residual variance vanished".into()));
    }
    let next = DpRegression { beta, omega: (tau2 + psi * psi).sqrt(), alpha: psi / tau2.sqrt() };
    let ll = loglik_dp(&next, data);
    Ok((next, ll))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convergence {
    Converged,
    /// |γ̂₁| reached `γ₁ᵐᵃˣ − 1e-6`; the likelihood increases toward the
    /// boundary.
    Boundary,
    MaxIter,
    /// Interior point chosen by [`boundary_resolve`].
    BoundaryResolved,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptionsUv {
    /// EM iterations between the moment start and quasi-Newton.
    pub em_iterations: usize,
    pub bfgs: BfgsOptions,
    /// Iteration limit of the EM fallback.
    pub full_em_max_iter: usize,
}

impl Default for FitOptionsUv {
    fn default() -> Self {
        Self { em_iterations: 10, bfgs: BfgsOptions::default(), full_em_max_iter: 20_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResultUv {
    pub cp: CpRegression,
    /// Absent when the design has no intercept column.
    pub dp: Option<DpRegression>,
    pub loglik: f64,
    /// Standard errors of `(β, σ, γ₁)`; NaN where the observed information
    /// is not positive definite.
    pub se_cp: Vec<f64>,
    pub convergence: Convergence,
    pub trace: Vec<f64>,
    /// Loglikelihood deficit from the supremum after boundary resolution.
    pub deficit: Option<f64>,
}

fn gamma1_cap() -> f64 {
    gamma1_max() - BOUNDARY_GAP
}

/// Below this |γ̂₁| standard errors use the expected information at
/// `γ₁ = 0`: the observed γ₁-curvature there carries a sample term of
/// order `|γ₁|^{-2/3}`.
pub const SE_EXPECTED_BELOW: f64 = 1e-2;

/// Expected information of `(β, σ, γ₁)` at `γ₁ = 0`. The γ₁-score there is
/// `Σ(a rᵢ + rᵢ³/6)` with `a = 2(b/2 − b³)/((4−π)b³)`.
pub fn expected_information_at_normal(data: &RegressionData, sigma: f64) -> DMatrix<f64> {
    let (n, p) = (data.n() as f64, data.p());
    let b = SQRT_2_OVER_PI;
    let a = 2.0 * (0.5 * b - b.powi(3)) / ((4.0 - PI) * b.powi(3));
    let mut info = DMatrix::zeros(p + 2, p + 2);
    let x = data.x();
    info.view_mut((0, 0), (p, p)).copy_from(&(x.transpose() * x / (sigma * sigma)));
    for c in 0..p {
        let v = x.column(c).sum() * (a + 0.5) / sigma;
        info[(c, p + 1)] = v;
        info[(p + 1, c)] = v;
    }
    info[(p, p)] = 2.0 * n / (sigma * sigma);
    info[(p + 1, p + 1)] = n * (a * a + a + 5.0 / 12.0);
    info
}

/// Standard errors from the inverse observed information `−H⁻¹`, or from
/// [`expected_information_at_normal`] when |γ̂₁| < [`SE_EXPECTED_BELOW`].
pub fn standard_errors(theta: &DVector<f64>, data: &RegressionData) -> Vec<f64> {
    let nan = vec![f64::NAN; theta.len()];
    let p = data.p();
    let info = if theta[p + 1].abs() < SE_EXPECTED_BELOW {
        expected_information_at_normal(data, theta[p])
    } else {
        match hess_cp(theta, data) {
            Ok(h) => linalg::symmetrize(&-h),
            Err(_) => return nan,
        }
    };
    match linalg::cholesky(&info, "information") {
        Ok(c) => linalg::inverse(&c).diagonal().iter().map(|v| v.sqrt()).collect(),
        Err(_) => nan,
    }
}

fn objective(data: &RegressionData) -> impl FnMut(&DVector<f64>) -> (f64, DVector<f64>) + '_ {
    move |theta: &DVector<f64>| match CpState::new(theta, data) {
        Ok(st) => {
            let f = st.loglik();
            if f.is_finite() {
                (f, grad_from_state(&st, theta, data))
            } else {
                (f64::NEG_INFINITY, DVector::zeros(theta.len()))
            }
        }
        Err(_) => (f64::NEG_INFINITY, DVector::zeros(theta.len())),
    }
}

fn gamma_bounds(p: usize) -> Bounds {
    let cap = gamma1_cap();
    let mut lower = DVector::from_element(p + 2, f64::NEG_INFINITY);
    let mut upper = DVector::from_element(p + 2, f64::INFINITY);
    lower[p + 1] = -cap;
    upper[p + 1] = cap;
    Bounds { lower, upper }
}

fn finish(theta: DVector<f64>, data: &RegressionData, loglik: f64, convergence: Convergence, trace: Vec<f64>) -> FitResultUv {
    let cp = CpRegression::from_vector(&theta);
    let dp = data.intercept().and_then(|i| cp_to_dp(&cp, i).ok());
    FitResultUv { se_cp: standard_errors(&theta, data), cp, dp, loglik, convergence, trace, deficit: None }
}

/// Moment start, a few EM steps, then quasi-Newton in centred parameters;
/// EM to convergence if quasi-Newton fails.
pub fn fit(data: &RegressionData, options: &FitOptionsUv) -> Result<FitResultUv> {
    let p = data.p();
    let mut cp = mom_init(data)?;
    let mut trace = vec![loglik_cp(&cp.to_vector(), data)?];
    if let Some(ic) = data.intercept() {
        let mut dp = cp_to_dp(&cp, ic)?;
        for _ in 0..options.em_iterations {
            let Ok((next, ll)) = em_step(&dp, data) else { break };
            dp = next;
            trace.push(ll);
        }
        cp = dp_to_cp(&dp, ic);
        let cap = gamma1_cap();
        cp.gamma1 = cp.gamma1.clamp(-cap, cap);
    }

    let bounds = gamma_bounds(p);
    let res = optim::maximize(objective(data), cp.to_vector(), &options.bfgs, Some(&bounds));
    trace.extend_from_slice(&res.trace[1..]);
    let near_stationary = || {
        let g = DVector::from_fn(p + 2, |i, _| if res.at_bound[i] { 0.0 } else { res.grad[i] });
        g.amax() < 1e-5 * (1.0 + res.f.abs())
    };
    if res.at_bound[p + 1] {
        let (f, theta) = newton_polish(data, res.x, true);
        trace.push(f);
        return Ok(finish(theta, data, f, Convergence::Boundary, trace));
    }
    if res.outcome == Outcome::Converged || (res.outcome == Outcome::LineSearchFailed && near_stationary()) {
        return Ok(finish(res.x, data, res.f, Convergence::Converged, trace));
    }

    let Some(ic) = data.intercept() else {
        return Ok(finish(res.x, data, res.f, Convergence::MaxIter, trace));
    };
    let start = CpRegression::from_vector(&res.x);
    let mut dp = cp_to_dp(&start, ic)?;
    let mut ll = loglik_dp(&dp, data);
    let mut conv = Convergence::MaxIter;
    for _ in 0..options.full_em_max_iter {
        let Ok((next, nll)) = em_step(&dp, data) else { break };
        let change = nll - ll;
        dp = next;
        ll = nll;
        trace.push(ll);
        if StdMoments::from_alpha(dp.alpha).gamma1().abs() >= gamma1_cap() {
            conv = Convergence::Boundary;
            break;
        }
        if change.abs() < 1e-12 * (1.0 + ll.abs()) {
            conv = Convergence::Converged;
            break;
        }
    }
    let mut cp = dp_to_cp(&dp, ic);
    let cap = gamma1_cap();
    cp.gamma1 = cp.gamma1.clamp(-cap, cap);
    let theta = cp.to_vector();
    let ll = loglik_cp(&theta, data)?;
    Ok(finish(theta, data, ll, conv, trace))
}

/// Maximum over `(β, σ)` with γ₁ held at `gamma1`.
fn profile_gamma1(data: &RegressionData, gamma1: f64, start: &DVector<f64>, opts: &BfgsOptions) -> (f64, DVector<f64>) {
    let p = data.p();
    let mut full = objective(data);
    let f = |v: &DVector<f64>| {
        let mut theta = DVector::zeros(p + 2);
        theta.rows_mut(0, p + 1).copy_from(v);
        theta[p + 1] = gamma1;
        let (val, g) = full(&theta);
        (val, g.rows(0, p + 1).into_owned())
    };
    let r = optim::maximize(f, start.rows(0, p + 1).into_owned(), opts, None);
    let mut theta = DVector::zeros(p + 2);
    theta.rows_mut(0, p + 1).copy_from(&r.x);
    theta[p + 1] = gamma1;
    if gamma1 == 0.0 {
        return (r.f, theta);
    }
    newton_polish(data, theta, true)
}

/// Damped Newton steps with the analytic Hessian, over `(β, σ)` only when
/// `fix_gamma1`. Used where the surface is too stiff for quasi-Newton,
/// as happens for large |λ|.
fn newton_polish(data: &RegressionData, mut theta: DVector<f64>, fix_gamma1: bool) -> (f64, DVector<f64>) {
    let m = if fix_gamma1 { data.p() + 1 } else { data.p() + 2 };
    let ll = |t: &DVector<f64>| loglik_cp(t, data).unwrap_or(f64::NEG_INFINITY);
    let mut f = ll(&theta);
    for _ in 0..200 {
        let (Ok(g), Ok(h)) = (grad_cp(&theta, data), hess_cp(&theta, data)) else { break };
        let g = g.rows(0, m).into_owned();
        if g.amax() < 1e-10 * (1.0 + f.abs()) {
            break;
        }
        let neg_h = -h.view((0, 0), (m, m)).into_owned();
        let d = match linalg::cholesky(&linalg::symmetrize(&neg_h), "negative Hessian") {
            Ok(c) => c.solve(&g),
            Err(_) => &g / (1.0 + neg_h.amax()),
        };
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let mut trial = theta.clone();
            for i in 0..m {
                trial[i] += t * d[i];
            }
            let ft = ll(&trial);
            if ft.is_finite() && ft >= f {
                moved = ft > f || t == 1.0;
                theta = trial;
                f = ft;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    (f, theta)
}

/// Moves a boundary fit inward along the profile of γ₁ until the
/// loglikelihood is `drop` below the supremum. Other fits, and `drop ≤ 0`,
/// are returned unchanged. If even `γ₁ = 0` is within `drop`, that point
/// is returned.
pub fn boundary_resolve(fit: &FitResultUv, data: &RegressionData, drop: f64) -> Result<FitResultUv> {
    if fit.convergence != Convergence::Boundary || !(drop > 0.0) {
        return Ok(fit.clone());
    }
    let opts = BfgsOptions::default();
    let sup = fit.loglik;
    let g_hat = fit.cp.gamma1;
    let mut start = fit.cp.to_vector();
    let (l0, t0) = profile_gamma1(data, 0.0, &start, &opts);
    let (theta, ll) = if sup - l0 <= drop {
        (t0, l0)
    } else {
        // deficit grows from 0 at γ̂₁ to sup − l0 at 0
        let (mut inner, mut outer) = (0.0, 1.0);
        let mut best = (fit.cp.to_vector(), sup);
        for _ in 0..60 {
            let mid = 0.5 * (inner + outer);
            let (lm, tm) = profile_gamma1(data, mid * g_hat, &start, &opts);
            start = tm.clone();
            let d = sup - lm;
            best = (tm, lm);
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
    let mut out = finish(theta, data, ll, Convergence::BoundaryResolved, fit.trace.clone());
    out.deficit = Some(sup - ll);
    Ok(out)
}

/// Likelihood-ratio test of `γ₁ = 0` against the skew-normal fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrTest {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub loglik_sn: f64,
    pub loglik_normal: f64,
}

/// Gaussian regression loglikelihood at the least-squares fit.
pub fn loglik_normal(data: &RegressionData) -> Result<f64> {
    let n = data.n() as f64;
    let b = linalg::least_squares(data.x(), &DMatrix::from_column_slice(data.n(), 1, data.y().as_slice()))?;
    let rss = (data.y() - data.x() * b.column(0)).norm_squared();
    Ok(-0.5 * n * (LN_2PI + (rss / n).ln() + 1.0))
}

pub fn lr_normality_uv(data: &RegressionData) -> Result<LrTest> {
    let f = fit(data, &FitOptionsUv::default())?;
    let ln = loglik_normal(data)?;
    let statistic = (2.0 * (f.loglik - ln)).max(0.0);
    Ok(LrTest { statistic, df: 1, p_value: 1.0 - stats::chi2_cdf(statistic, 1), loglik_sn: f.loglik, loglik_normal: ln })
}

/// Shape estimate with location and scale known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeFit {
    pub alpha: f64,
    pub gamma1: f64,
    pub loglik: f64,
    pub convergence: Convergence,
}

/// Maximizes `Σζ₀(αzᵢ)` over α with `z = (y − ξ)/ω`. The loglikelihood is
/// concave in α; when the score is still positive (negative) where γ₁ is
/// within 1e-6 of its supremum, the estimate is reported on that boundary.
pub fn fit_shape_known(y: &[f64], xi: f64, omega: f64) -> Result<ShapeFit> {
    if !(omega > 0.0) || y.is_empty() {
        return Err(SnError::Input("need omega > 0 and a non-empty sample".into()));
    }
    let z: Vec<f64> = y.iter().map(|v| (v - xi) / omega).collect();
    let score = |a: f64| z.iter().map(|&v| v * zeta1(a * v)).sum::<f64>();
    let ll = |a: f64| {
        let n = z.len() as f64;
        -n * omega.ln() - 0.5 * z.iter().map(|v| v * v).sum::<f64>() + z.iter().map(|&v| zeta0(a * v)).sum::<f64>()
            - 0.5 * n * LN_2PI
    };
    let a_max = alpha_from_gamma1(gamma1_cap())?;
    let at = |a: f64, c| ShapeFit { alpha: a, gamma1: StdMoments::from_alpha(a).gamma1(), loglik: ll(a), convergence: c };
    // with every zᵢ of one sign the score keeps that sign for all α, but
    // ζ₁(α_max zᵢ) underflows, so those cases are decided directly
    let all_pos = z.iter().all(|&v| v >= 0.0) && z.iter().any(|&v| v > 0.0);
    let all_neg = z.iter().all(|&v| v <= 0.0) && z.iter().any(|&v| v < 0.0);
    if all_pos || score(a_max) > 0.0 {
        return Ok(at(a_max, Convergence::Boundary));
    }
    if all_neg || score(-a_max) < 0.0 {
        return Ok(at(-a_max, Convergence::Boundary));
    }
    let (mut lo, mut hi) = (-a_max, a_max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if score(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 * (1.0 + mid.abs()) {
            break;
        }
    }
    Ok(at(0.5 * (lo + hi), Convergence::Converged))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::DpParams;
    use crate::sample::{rvs_sn, SeededStream};

    fn sn_sample(alpha: f64, n: usize, seed: u64) -> Vec<f64> {
        let dp = DpParams::scalar(0.0, 1.0, alpha).unwrap();
        rvs_sn(&dp, n, SeededStream::new(seed, 0)).unwrap().column(0).iter().copied().collect()
    }

    fn regression(seed: u64) -> RegressionData {
        let n = 200;
        let e = sn_sample(4.0, n, seed);
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { (i as f64 / n as f64) * 3.0 });
        let y = DVector::from_fn(n, |i, _| 1.0 + 2.0 * x[(i, 1)] + 0.7 * e[i]);
        RegressionData::new(y, x).unwrap()
    }

    #[test]
    fn single_point_at_origin() {
        let d = RegressionData::new(DVector::from_vec(vec![0.0]), DMatrix::from_element(1, 1, 1.0));
        assert!(d.is_err());
        let data = RegressionData::location(&[0.0, 0.0, 0.0]).unwrap();
        let dp = DpRegression { beta: vec![0.0], omega: 1.0, alpha: 3.7 };
        assert!((loglik_dp(&dp, &data) / 3.0 + 0.918_938_533_204_672_7).abs() < 1e-14);
    }

    #[test]
    fn alpha_zero_is_normal() {
        let data = regression(1);
        let dp = DpRegression { beta: vec![0.5, 2.0], omega: 1.3, alpha: 0.0 };
        let e = residuals(&data, &dp.beta);
        let normal: f64 = e.iter().map(|v| crate::kernels::norm_logpdf(v / 1.3) - 1.3f64.ln()).sum();
        assert!((loglik_dp(&dp, &data) - normal).abs() < 1e-10);
    }

    #[test]
    fn dp_score_matches_differences() {
        let data = regression(2);
        let dp = DpRegression { beta: vec![0.7, 1.9], omega: 0.9, alpha: 2.5 };
        let g = score_dp(&dp, &data);
        let v = |b0: f64, b1: f64, w: f64, a: f64| loglik_dp(&DpRegression { beta: vec![b0, b1], omega: w, alpha: a }, &data);
        let h = 1e-6;
        let fd = [
            (v(0.7 + h, 1.9, 0.9, 2.5) - v(0.7 - h, 1.9, 0.9, 2.5)) / (2.0 * h),
            (v(0.7, 1.9 + h, 0.9, 2.5) - v(0.7, 1.9 - h, 0.9, 2.5)) / (2.0 * h),
            (v(0.7, 1.9, 0.9 + h, 2.5) - v(0.7, 1.9, 0.9 - h, 2.5)) / (2.0 * h),
            (v(0.7, 1.9, 0.9, 2.5 + h) - v(0.7, 1.9, 0.9, 2.5 - h)) / (2.0 * h),
        ];
        for i in 0..4 {
            assert!((g[i] - fd[i]).abs() < 1e-6 * (1.0 + fd[i].abs()), "{i}: {} vs {}", g[i], fd[i]);
        }
    }

    #[test]
    fn dp_and_cp_loglik_agree() {
        let data = regression(3);
        let theta = DVector::from_vec(vec![1.4, 2.1, 0.6, 0.55]);
        let dp = cp_to_dp(&CpRegression::from_vector(&theta), 0).unwrap();
        assert!((loglik_dp(&dp, &data) - loglik_cp(&theta, &data).unwrap()).abs() < 1e-9);
        let back = dp_to_cp(&dp, 0);
        assert!((back.to_vector() - theta).amax() < 1e-12);
    }

    #[test]
    fn cp_derivatives_match_differences() {
        let data = regression(4);
        for &g1 in &[-0.8, -0.2, 0.03, 0.4, 0.95] {
            let theta = DVector::from_vec(vec![1.3, 2.0, 0.65, g1]);
            let g = grad_cp(&theta, &data).unwrap();
            for j in 0..4 {
                let h = 1e-6 * (1.0 + theta[j].abs());
                let (mut tp, mut tm) = (theta.clone(), theta.clone());
                tp[j] += h;
                tm[j] -= h;
                let fd = (loglik_cp(&tp, &data).unwrap() - loglik_cp(&tm, &data).unwrap()) / (2.0 * h);
                assert!((g[j] - fd).abs() <= 1e-6 * fd.abs().max(1.0), "grad {g1} {j}: {} vs {fd}", g[j]);
            }
            let hs = hess_cp(&theta, &data).unwrap();
            assert!((&hs - hs.transpose()).amax() < 1e-9);
            let fd = optim::fd_hessian(|t| grad_cp(t, &data).unwrap(), &theta, 1e-5);
            for i in 0..4 {
                for j in 0..4 {
                    let (a, b) = (hs[(i, j)], fd[(i, j)]);
                    assert!((a - b).abs() <= 1e-4 * b.abs().max(1.0), "hess {g1} ({i},{j}): {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn gamma1_score_is_continuous_at_zero() {
        let data = regression(5);
        let at = |g: f64| grad_cp(&DVector::from_vec(vec![1.3, 2.0, 0.65, g]), &data).unwrap()[3];
        let g0 = at(0.0);
        assert!(g0.is_finite());
        assert!((at(1e-6) - g0).abs() < 1e-2 * (1.0 + g0.abs()));
        assert!((at(-1e-6) - g0).abs() < 1e-2 * (1.0 + g0.abs()));
        assert!(hess_cp(&DVector::from_vec(vec![1.3, 2.0, 0.65, 0.0]), &data).is_err());
    }

    #[test]
    fn mom_init_clips() {
        let y = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 10.0];
        let cp = mom_init(&RegressionData::location(&y).unwrap()).unwrap();
        assert!((cp.gamma1 - 0.9 * gamma1_max()).abs() < 1e-15);
        assert!((cp.gamma1 - 0.895_745).abs() < 1e-6);
        let sym = mom_init(&RegressionData::location(&[-2.0, -1.0, 0.0, 1.0, 2.0]).unwrap()).unwrap();
        assert_eq!(sym.gamma1, 0.0);
        assert!(mom_init(&RegressionData::location(&[1.0, 1.0, 1.0, 1.0]).unwrap()).is_err());
    }

    #[test]
    fn em_is_monotone_and_fixed_at_optimum() {
        let data = regression(6);
        let cp = mom_init(&data).unwrap();
        let mut dp = cp_to_dp(&cp, 0).unwrap();
        let mut ll = loglik_dp(&dp, &data);
        for _ in 0..200 {
            let (next, nll) = em_step(&dp, &data).unwrap();
            assert!(nll - ll >= -1e-9, "{ll} -> {nll}");
            dp = next;
            ll = nll;
        }
        let f = fit(&data, &FitOptionsUv::default()).unwrap();
        assert_eq!(f.convergence, Convergence::Converged);
        let dp = f.dp.unwrap();
        let (next, _) = em_step(&dp, &data).unwrap();
        let change = (DVector::from_vec(next.beta.clone()) - DVector::from_vec(dp.beta.clone())).amax()
            .max((next.omega - dp.omega).abs())
            .max((next.alpha - dp.alpha).abs());
        assert!(change < 1e-6, "{change}");
        assert!(f.loglik >= ll - 1e-9);
    }

    #[test]
    fn fit_is_stationary_and_reproducible() {
        let data = regression(7);
        let a = fit(&data, &FitOptionsUv::default()).unwrap();
        let b = fit(&data, &FitOptionsUv::default()).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.convergence, Convergence::Converged);
        let g = grad_cp(&a.cp.to_vector(), &data).unwrap();
        assert!(g.amax() < 1e-6, "{g}");
        assert!(a.se_cp.iter().all(|s| s.is_finite() && *s > 0.0));
        let dp = a.dp.unwrap();
        assert!((loglik_dp(&dp, &data) - a.loglik).abs() < 1e-9);
    }

    #[test]
    fn all_positive_sample_is_a_boundary_case() {
        let y: Vec<f64> = sn_sample(5.0, 400, 11).into_iter().map(f64::abs).collect();
        let s = fit_shape_known(&y, 0.0, 1.0).unwrap();
        assert_eq!(s.convergence, Convergence::Boundary);
        assert!((gamma1_max() - s.gamma1 - BOUNDARY_GAP).abs() < 1e-9);
        // far from the origin every ζ₁(α_max zᵢ) underflows
        let far: Vec<f64> = (0..25).map(|i| 1.0 + 0.1 * i as f64).collect();
        assert_eq!(fit_shape_known(&far, 0.0, 1.0).unwrap().convergence, Convergence::Boundary);
        let neg: Vec<f64> = far.iter().map(|v| -v).collect();
        let s = fit_shape_known(&neg, 0.0, 1.0).unwrap();
        assert!(s.convergence == Convergence::Boundary && s.alpha < 0.0);
        let mixed = sn_sample(2.0, 400, 12);
        let s = fit_shape_known(&mixed, 0.0, 1.0).unwrap();
        assert_eq!(s.convergence, Convergence::Converged);
        assert!((s.alpha - 2.0).abs() < 1.0);
    }

    #[test]
    fn boundary_resolution() {
        // small half-normal samples often put γ̂₁ on its supremum
        let found = (0..50).find_map(|seed| {
            let y: Vec<f64> = sn_sample(0.0, 20, 100 + seed).into_iter().map(f64::abs).collect();
            let data = RegressionData::location(&y).unwrap();
            let f = fit(&data, &FitOptionsUv::default()).unwrap();
            (f.convergence == Convergence::Boundary).then_some((f, data))
        });
        let (f, data) = found.expect("a boundary sample among 50 seeds");
        assert!((gamma1_max() - f.cp.gamma1.abs() - BOUNDARY_GAP).abs() < 1e-12);
        let same = |a: &FitResultUv, b: &FitResultUv| serde_json::to_string(a).unwrap() == serde_json::to_string(b).unwrap();
        assert!(same(&boundary_resolve(&f, &data, 0.0).unwrap(), &f));
        let r = boundary_resolve(&f, &data, 2.0).unwrap();
        assert_eq!(r.convergence, Convergence::BoundaryResolved);
        let d = r.deficit.unwrap();
        assert!(d <= 2.0 + 1e-6 && d > 0.0);
        assert!(r.cp.gamma1.abs() < f.cp.gamma1.abs());
        let interior = fit(&regression(8), &FitOptionsUv::default()).unwrap();
        assert_eq!(interior.convergence, Convergence::Converged);
        assert_eq!(boundary_resolve(&interior, &regression(8), 2.0).unwrap(), interior);
    }

    #[test]
    fn expected_information_gives_skewness_variance() {
        let y = sn_sample(0.0, 500, 15);
        let data = RegressionData::location(&y).unwrap();
        let info = expected_information_at_normal(&data, 1.0);
        let inv = linalg::inverse(&linalg::cholesky(&info, "info").unwrap());
        assert!((inv[(2, 2)] - 6.0 / 500.0).abs() < 1e-12);
        // finite SEs even when γ̂₁ is essentially zero
        let se = standard_errors(&DVector::from_vec(vec![0.0, 1.0, 1e-10]), &data);
        assert!((se[2] - (6.0f64 / 500.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn lr_statistic_is_affine_invariant() {
        let y = sn_sample(5.0, 300, 14);
        let a = lr_normality_uv(&RegressionData::location(&y).unwrap()).unwrap();
        let z: Vec<f64> = y.iter().map(|v| 3.0 + 2.5 * v).collect();
        let b = lr_normality_uv(&RegressionData::location(&z).unwrap()).unwrap();
        assert!(a.statistic > 0.0);
        assert!((a.statistic - b.statistic).abs() < 1e-6, "{} {}", a.statistic, b.statistic);
        let mut sym: Vec<f64> = y.iter().take(150).copied().collect();
        sym.extend(y.iter().take(150).map(|v| -v));
        assert!(lr_normality_uv(&RegressionData::location(&sym).unwrap()).unwrap().statistic < 1e-6);
    }
}
