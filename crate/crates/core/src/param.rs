//! Skew-normal parametrizations and the exact maps between them.
//!
//! The direct parameters `(ξ, Ω, α)` are the working currency of the crate.
//! The shape part `(Ω̄, α)` can be re-expressed through
//! `δ = Ω̄α/√(1 + αᵀΩ̄α)`, through the `(λ, Ψ)` pair, and, in one dimension,
//! through the centred parameters `(μ, σ, γ₁)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::linalg::{self, Chol};
use crate::{Result, SnError};

/// Tolerance for symmetry and unit diagonal of a correlation matrix.
pub const MATRIX_TOL: f64 = 1e-12;

/// Components of δ closer to ±1 than this are rejected.
pub const DELTA_MARGIN: f64 = 1e-12;

/// `√(2/π)`, the mean of the half-normal distribution.
pub const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

/// Supremum of |γ₁| over the skew-normal family, `((4−π)/2)·b³/(1−b²)^{3/2}`
/// with `b = √(2/π)`.
pub fn gamma1_max() -> f64 {
    let b = SQRT_2_OVER_PI;
    0.5 * (4.0 - PI) * b.powi(3) / (1.0 - b * b).powf(1.5)
}

/// Symmetric positive-definite matrix with unit diagonal.
#[derive(Debug, Clone)]
pub struct CorrelationMatrix {
    m: DMatrix<f64>,
    chol: Chol,
}

impl PartialEq for CorrelationMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.m == other.m
    }
}

impl CorrelationMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(SnError::Dimension(format!(
                "correlation matrix must be square and non-empty, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let asym = linalg::max_asymmetry(&m);
        if asym > MATRIX_TOL {
            return Err(SnError::InvalidMatrix(format!("not symmetric (max deviation {asym:e})")));
        }
        if let Some(i) = (0..m.nrows()).find(|&i| (m[(i, i)] - 1.0).abs() > MATRIX_TOL) {
            return Err(SnError::InvalidMatrix(format!("diagonal entry {i} is {}, not 1", m[(i, i)])));
        }
        let chol = linalg::cholesky(&m, "correlation matrix")?;
        Ok(Self { m, chol })
    }

    pub fn identity(k: usize) -> Self {
        Self::new(DMatrix::identity(k, k)).expect("identity is a correlation matrix")
    }

    /// Rescales a covariance matrix to unit diagonal.
    pub fn from_covariance(cov: &DMatrix<f64>) -> Result<Self> {
        let k = cov.nrows();
        if (0..k).any(|i| !(cov[(i, i)] > 0.0)) {
            return Err(SnError::Singular("covariance has a non-positive diagonal entry".into()));
        }
        let s: Vec<f64> = (0..k).map(|i| cov[(i, i)].sqrt()).collect();
        let mut m = DMatrix::from_fn(k, k, |i, j| cov[(i, j)] / (s[i] * s[j]));
        m = linalg::symmetrize(&m);
        for i in 0..k {
            m[(i, i)] = 1.0;
        }
        Self::new(m)
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn cholesky(&self) -> &Chol {
        &self.chol
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        linalg::inverse(&self.chol)
    }

    /// `vᵀ Ω̄⁻¹ v`.
    pub fn inv_quad(&self, v: &DVector<f64>) -> f64 {
        linalg::inv_quad_form(&self.chol, v)
    }
}

/// Shape part `(Ω̄, α)` of a skew-normal law; every pair is feasible.
#[derive(Debug, Clone, PartialEq)]
pub struct DpShape {
    pub omega_bar: CorrelationMatrix,
    pub alpha: DVector<f64>,
}

impl DpShape {
    pub fn new(omega_bar: CorrelationMatrix, alpha: DVector<f64>) -> Result<Self> {
        crate::error::dim_check("alpha length", omega_bar.dim(), alpha.len())?;
        if alpha.iter().any(|a| !a.is_finite()) {
            return Err(SnError::Domain("alpha has non-finite entries".into()));
        }
        Ok(Self { omega_bar, alpha })
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    /// `αᵀΩ̄α`, the square of the canonical shape magnitude.
    pub fn alpha_quad(&self) -> f64 {
        (self.alpha.transpose() * self.omega_bar.matrix() * &self.alpha)[0].max(0.0)
    }
}

/// Direct parameters `(ξ, Ω, α)` with the derived scale `ω = √diag(Ω)` and
/// correlation `Ω̄ = ω⁻¹Ωω⁻¹` built at construction.
#[derive(Debug, Clone)]
pub struct DpParams {
    xi: DVector<f64>,
    omega: DMatrix<f64>,
    alpha: DVector<f64>,
    scale: DVector<f64>,
    omega_bar: CorrelationMatrix,
    chol: Chol,
}

impl PartialEq for DpParams {
    fn eq(&self, other: &Self) -> bool {
        self.xi == other.xi && self.omega == other.omega && self.alpha == other.alpha
    }
}

impl DpParams {
    pub fn new(xi: DVector<f64>, omega: DMatrix<f64>, alpha: DVector<f64>) -> Result<Self> {
        let k = xi.len();
        if k == 0 {
            return Err(SnError::Dimension("empty parameter vector".into()));
        }
        crate::error::dim_check("Omega rows", k, omega.nrows())?;
        crate::error::dim_check("Omega columns", k, omega.ncols())?;
        crate::error::dim_check("alpha length", k, alpha.len())?;
        if xi.iter().chain(alpha.iter()).any(|v| !v.is_finite()) {
            return Err(SnError::Domain("xi and alpha must be finite".into()));
        }
        let rel_asym = linalg::max_asymmetry(&omega) / linalg::scale_of(&omega);
        if rel_asym > MATRIX_TOL {
            return Err(SnError::InvalidMatrix(format!("Omega is not symmetric (relative deviation {rel_asym:e})")));
        }
        let omega = linalg::symmetrize(&omega);
        let chol = linalg::cholesky(&omega, "Omega")?;
        let scale = DVector::from_fn(k, |i, _| omega[(i, i)].sqrt());
        let omega_bar = CorrelationMatrix::from_covariance(&omega)?;
        Ok(Self { xi, omega, alpha, scale, omega_bar, chol })
    }

    /// Builds `(ξ, ωΩ̄ω, α)` from a location, a scale vector and a shape.
    pub fn from_shape(xi: DVector<f64>, scale: DVector<f64>, shape: &DpShape) -> Result<Self> {
        let k = shape.dim();
        crate::error::dim_check("scale length", k, scale.len())?;
        if scale.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(SnError::Domain("scale entries must be positive".into()));
        }
        let ob = shape.omega_bar.matrix();
        let omega = DMatrix::from_fn(k, k, |i, j| scale[i] * ob[(i, j)] * scale[j]);
        Self::new(xi, omega, shape.alpha.clone())
    }

    /// `SN_k(0, Ω̄, α)`.
    pub fn standard(shape: &DpShape) -> Self {
        let k = shape.dim();
        Self::from_shape(DVector::zeros(k), DVector::from_element(k, 1.0), shape)
            .expect("a valid shape gives valid standard parameters")
    }

    /// Scalar `SN(ξ, ω², α)`.
    pub fn scalar(xi: f64, omega: f64, alpha: f64) -> Result<Self> {
        if !(omega > 0.0) {
            return Err(SnError::Domain(format!("scale must be positive, got {omega}")));
        }
        Self::new(
            DVector::from_element(1, xi),
            DMatrix::from_element(1, 1, omega * omega),
            DVector::from_element(1, alpha),
        )
    }

    pub fn dim(&self) -> usize {
        self.xi.len()
    }

    pub fn xi(&self) -> &DVector<f64> {
        &self.xi
    }

    pub fn omega(&self) -> &DMatrix<f64> {
        &self.omega
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// ω = √diag(Ω).
    pub fn scale(&self) -> &DVector<f64> {
        &self.scale
    }

    pub fn omega_bar(&self) -> &CorrelationMatrix {
        &self.omega_bar
    }

    /// Cholesky factor of Ω.
    pub fn cholesky(&self) -> &Chol {
        &self.chol
    }

    pub fn shape(&self) -> DpShape {
        DpShape { omega_bar: self.omega_bar.clone(), alpha: self.alpha.clone() }
    }

    pub fn delta(&self) -> DeltaVector {
        dp_to_delta(&self.shape())
    }

    /// η = ω⁻¹α.
    pub fn eta(&self) -> DVector<f64> {
        self.alpha.component_div(&self.scale)
    }

    pub fn with_xi(&self, xi: DVector<f64>) -> Result<Self> {
        crate::error::dim_check("xi length", self.dim(), xi.len())?;
        Ok(Self { xi, ..self.clone() })
    }
}

/// δ vector; valid relative to a correlation matrix when every component is
/// inside (−1, 1) and `Ω̄ − δδᵀ` is positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaVector(DVector<f64>);

impl DeltaVector {
    pub fn new(delta: DVector<f64>, omega_bar: &CorrelationMatrix) -> Result<Self> {
        crate::error::dim_check("delta length", omega_bar.dim(), delta.len())?;
        if let Some(d) = delta.iter().find(|d| !(d.abs() <= 1.0 - DELTA_MARGIN)) {
            return Err(SnError::Domain(format!("delta component {d} is not inside (-1, 1)")));
        }
        let inner = omega_bar.matrix() - &delta * delta.transpose();
        linalg::cholesky(&inner, "Omega_bar - delta delta^T")
            .map_err(|_| SnError::Domain("Omega_bar - delta delta^T is not positive definite".into()))?;
        Ok(Self(delta))
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }
}

/// δ = Ω̄α / √(1 + αᵀΩ̄α).
pub fn dp_to_delta(shape: &DpShape) -> DeltaVector {
    let oa = shape.omega_bar.matrix() * &shape.alpha;
    let q = shape.alpha.dot(&oa).max(0.0);
    DeltaVector(oa / (1.0 + q).sqrt())
}

/// α = Ω̄⁻¹δ / √(1 − δᵀΩ̄⁻¹δ), the inverse of [`dp_to_delta`].
pub fn delta_to_alpha(delta: &DeltaVector, omega_bar: &CorrelationMatrix) -> Result<DVector<f64>> {
    alpha_from_delta(delta.as_vector(), omega_bar)
}

pub(crate) fn alpha_from_delta(delta: &DVector<f64>, omega_bar: &CorrelationMatrix) -> Result<DVector<f64>> {
    crate::error::dim_check("delta length", omega_bar.dim(), delta.len())?;
    let solved = omega_bar.cholesky().solve(delta);
    let q = delta.dot(&solved);
    if !(1.0 - q > 0.0) {
        return Err(SnError::Domain(format!("1 - delta' Omega_bar^-1 delta = {} is not positive", 1.0 - q)));
    }
    Ok(solved / (1.0 - q).sqrt())
}

/// The `(λ, Ψ)` parametrization of the shape.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaPsiParams {
    pub lambda: DVector<f64>,
    pub psi: CorrelationMatrix,
}

impl LambdaPsiParams {
    pub fn new(lambda: DVector<f64>, psi: CorrelationMatrix) -> Result<Self> {
        crate::error::dim_check("lambda length", psi.dim(), lambda.len())?;
        if lambda.iter().any(|l| !l.is_finite()) {
            return Err(SnError::Domain("lambda has non-finite entries".into()));
        }
        Ok(Self { lambda, psi })
    }
}

/// `λⱼ = δⱼ/√(1−δⱼ²)`, `Ψ = Δ⁻¹(Ω̄ − δδᵀ)Δ⁻¹` with `Δ = diag(√(1−δⱼ²))`.
pub fn dp_to_lambdapsi(shape: &DpShape) -> LambdaPsiParams {
    let delta = dp_to_delta(shape).into_vector();
    let k = delta.len();
    let d: Vec<f64> = delta.iter().map(|x| (1.0 - x * x).sqrt()).collect();
    let lambda = DVector::from_fn(k, |i, _| delta[i] / d[i]);
    let ob = shape.omega_bar.matrix();
    let mut psi = DMatrix::from_fn(k, k, |i, j| (ob[(i, j)] - delta[i] * delta[j]) / (d[i] * d[j]));
    psi = linalg::symmetrize(&psi);
    for i in 0..k {
        psi[(i, i)] = 1.0;
    }
    let psi = CorrelationMatrix::new(psi).expect("Psi from a feasible shape is a correlation matrix");
    LambdaPsiParams { lambda, psi }
}

/// `Ω̄ = Δ(Ψ + λλᵀ)Δ`, `α = Δ⁻¹Ψ⁻¹λ / √(1 + λᵀΨ⁻¹λ)`, `Δ = diag(1/√(1+λⱼ²))`.
pub fn lambdapsi_to_dp(lp: &LambdaPsiParams) -> DpShape {
    let k = lp.lambda.len();
    let l = &lp.lambda;
    let d: Vec<f64> = l.iter().map(|x| 1.0 / (1.0 + x * x).sqrt()).collect();
    let psi = lp.psi.matrix();
    let mut ob = DMatrix::from_fn(k, k, |i, j| d[i] * (psi[(i, j)] + l[i] * l[j]) * d[j]);
    ob = linalg::symmetrize(&ob);
    for i in 0..k {
        ob[(i, i)] = 1.0;
    }
    let psi_inv_l = lp.psi.cholesky().solve(l);
    let denom = (1.0 + l.dot(&psi_inv_l)).sqrt();
    let alpha = DVector::from_fn(k, |i, _| psi_inv_l[i] / (d[i] * denom));
    DpShape { omega_bar: CorrelationMatrix::new(ob).expect("feasible (lambda, Psi) gives a correlation matrix"), alpha }
}

/// Univariate centred parameters: mean, standard deviation and skewness.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CpParamsUv {
    pub mu: f64,
    pub sigma: f64,
    pub gamma1: f64,
}

impl CpParamsUv {
    pub fn new(mu: f64, sigma: f64, gamma1: f64) -> Result<Self> {
        if !mu.is_finite() || !(sigma > 0.0) || !sigma.is_finite() {
            return Err(SnError::Domain(format!("need finite mu and positive sigma, got ({mu}, {sigma})")));
        }
        if !(gamma1.abs() < gamma1_max()) {
            return Err(SnError::Domain(format!("|gamma1| = {} is not below {}", gamma1.abs(), gamma1_max())));
        }
        Ok(Self { mu, sigma, gamma1 })
    }
}

/// Quantities of the standardized variable `Z ~ SN(0, 1, α)` used by the
/// centred parametrization.
#[derive(Debug, Clone, Copy)]
pub(crate) struct StdMoments {
    pub delta: f64,
    pub mu_z: f64,
    pub sigma_z: f64,
}

impl StdMoments {
    pub fn from_delta(delta: f64) -> Self {
        let mu_z = SQRT_2_OVER_PI * delta;
        Self { delta, mu_z, sigma_z: (1.0 - mu_z * mu_z).sqrt() }
    }

    pub fn from_alpha(alpha: f64) -> Self {
        Self::from_delta(alpha / (1.0 + alpha * alpha).sqrt())
    }

    pub fn gamma1(&self) -> f64 {
        0.5 * (4.0 - PI) * (self.mu_z / self.sigma_z).powi(3)
    }
}

/// λ (the scalar α) from γ₁ through `R = (2γ₁/(4−π))^{1/3}`,
/// `T = √(2/π − (1−2/π)R²)` and `λ = R/T`.
pub fn alpha_from_gamma1(gamma1: f64) -> Result<f64> {
    if !(gamma1.abs() < gamma1_max()) {
        return Err(SnError::Domain(format!("|gamma1| = {} is not below {}", gamma1.abs(), gamma1_max())));
    }
    let r = (2.0 * gamma1 / (4.0 - PI)).cbrt();
    let t2 = 2.0 / PI - (1.0 - 2.0 / PI) * r * r;
    if !(t2 > 0.0) {
        return Err(SnError::Domain(format!("gamma1 = {gamma1} is too close to its supremum")));
    }
    Ok(r / t2.sqrt())
}

/// Scalar centred parameters from `(ξ, ω, α)`.
pub fn cp_from_dp_scalar(xi: f64, omega: f64, alpha: f64) -> CpParamsUv {
    let m = StdMoments::from_alpha(alpha);
    CpParamsUv { mu: xi + omega * m.mu_z, sigma: omega * m.sigma_z, gamma1: m.gamma1() }
}

/// Scalar `(ξ, ω, α)` from centred parameters.
pub fn dp_from_cp_scalar(cp: &CpParamsUv) -> Result<(f64, f64, f64)> {
    let alpha = alpha_from_gamma1(cp.gamma1)?;
    let m = StdMoments::from_alpha(alpha);
    let omega = cp.sigma / m.sigma_z;
    Ok((cp.mu - omega * m.mu_z, omega, alpha))
}

pub fn cp_to_dp_uv(cp: &CpParamsUv) -> Result<DpParams> {
    let (xi, omega, alpha) = dp_from_cp_scalar(cp)?;
    DpParams::scalar(xi, omega, alpha)
}

pub fn dp_to_cp_uv(dp: &DpParams) -> Result<CpParamsUv> {
    crate::error::dim_check("dimension for the univariate centred map", 1, dp.dim())?;
    Ok(cp_from_dp_scalar(dp.xi()[0], dp.scale()[0], dp.alpha()[0]))
}

/// Componentwise centred parameters. Each margin `Yⱼ` is `SN(ξⱼ, ωⱼ², αⱼ*)`
/// whose δ is the j-th component of the joint δ.
pub fn cp_convert_mv(dp: &DpParams) -> Vec<CpParamsUv> {
    let delta = dp.delta().into_vector();
    (0..dp.dim())
        .map(|j| {
            let m = StdMoments::from_delta(delta[j]);
            let w = dp.scale()[j];
            CpParamsUv { mu: dp.xi()[j] + w * m.mu_z, sigma: w * m.sigma_z, gamma1: m.gamma1() }
        })
        .collect()
}
