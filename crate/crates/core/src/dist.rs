//! Density, cumulant generating function, moments and cumulants of
//! `SN_k(ξ, Ω, α)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::kernels::{half_normal_cumulant, norm_cdf, zeta0};
use crate::linalg;
use crate::param::{dp_to_delta, DpParams, DpShape, SQRT_2_OVER_PI};
use crate::{Result, SnError};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// log density at one point.
pub fn logpdf(dp: &DpParams, y: &DVector<f64>) -> Result<f64> {
    crate::error::dim_check("observation length", dp.dim(), y.len())?;
    let z = y - dp.xi();
    let k = dp.dim() as f64;
    let quad = linalg::inv_quad_form(dp.cholesky(), &z);
    let lin = dp.eta().dot(&z);
    Ok(-0.5 * k * LN_2PI - 0.5 * linalg::log_det(dp.cholesky()) - 0.5 * quad + zeta0(lin))
}

pub fn pdf(dp: &DpParams, y: &DVector<f64>) -> Result<f64> {
    logpdf(dp, y).map(f64::exp)
}

/// log density for each row of `ys`.
pub fn logpdf_rows(dp: &DpParams, ys: &DMatrix<f64>) -> Result<DVector<f64>> {
    crate::error::dim_check("observation columns", dp.dim(), ys.ncols())?;
    let mut out = DVector::zeros(ys.nrows());
    for i in 0..ys.nrows() {
        out[i] = logpdf(dp, &ys.row(i).transpose())?;
    }
    Ok(out)
}

/// `K(t) = tᵀξ + ½tᵀΩt + ζ₀(δᵀωt)`.
pub fn cgf(dp: &DpParams, t: &DVector<f64>) -> Result<f64> {
    crate::error::dim_check("argument length", dp.dim(), t.len())?;
    let delta = dp.delta().into_vector();
    let wt = t.component_mul(dp.scale());
    Ok(t.dot(dp.xi()) + 0.5 * (t.transpose() * dp.omega() * t)[0] + zeta0(delta.dot(&wt)))
}

/// Moments and the Mardia skewness and kurtosis indices.
#[derive(Debug, Clone, Serialize)]
pub struct MomentSummary {
    pub mean: Vec<f64>,
    pub variance: Vec<Vec<f64>>,
    /// Marginal skewness of each component.
    pub gamma1_marginal: Vec<f64>,
    /// Mardia multivariate skewness γ₁,ₖ.
    pub mardia_skewness: f64,
    /// Mardia multivariate excess kurtosis γ₂,ₖ.
    pub mardia_kurtosis: f64,
}

/// `(γ₁,ₖ, γ₂,ₖ)` from `a = αᵀΩ̄α` via `q = 2a/(π + (π−2)a)`.
pub fn mardia_indices(alpha_quad: f64) -> (f64, f64) {
    let a = alpha_quad;
    let q = 2.0 * a / (PI + (PI - 2.0) * a);
    (((4.0 - PI) / 2.0).powi(2) * q.powi(3), 2.0 * (PI - 3.0) * q * q)
}

/// Suprema of the Mardia indices as `αᵀΩ̄α → ∞`.
pub fn mardia_suprema() -> (f64, f64) {
    let q = 2.0 / (PI - 2.0);
    (((4.0 - PI) / 2.0).powi(2) * q.powi(3), 2.0 * (PI - 3.0) * q * q)
}

pub fn mean(dp: &DpParams) -> DVector<f64> {
    let delta = dp.delta().into_vector();
    dp.xi() + dp.scale().component_mul(&delta) * SQRT_2_OVER_PI
}

pub fn variance(dp: &DpParams) -> DMatrix<f64> {
    let delta = dp.delta().into_vector();
    let m = dp.scale().component_mul(&delta) * SQRT_2_OVER_PI;
    linalg::symmetrize(&(dp.omega() - &m * m.transpose()))
}

pub fn moments(dp: &DpParams) -> MomentSummary {
    let delta = dp.delta().into_vector();
    let g1 = delta
        .iter()
        .map(|d| {
            let mz = SQRT_2_OVER_PI * d;
            0.5 * (4.0 - PI) * (mz / (1.0 - mz * mz).sqrt()).powi(3)
        })
        .collect();
    let (s, k) = mardia_indices(dp.shape().alpha_quad());
    MomentSummary {
        mean: mean(dp).iter().copied().collect(),
        variance: linalg::to_rows(&variance(dp)),
        gamma1_marginal: g1,
        mardia_skewness: s,
        mardia_kurtosis: k,
    }
}

/// Cumulant tensor of the given order, flattened row-major into `kᵒʳᵈᵉʳ`
/// entries. Orders above two are `κₘ (ωδ)^{⊗m}` with `κₘ` the half-normal
/// cumulant.
pub fn cumulant_array(dp: &DpParams, order: u8) -> Result<Vec<f64>> {
    match order {
        1 => Ok(mean(dp).iter().copied().collect()),
        2 => Ok(variance(dp).transpose().iter().copied().collect()),
        3 | 4 => {
            let km = half_normal_cumulant(order).expect("order checked");
            let v = dp.scale().component_mul(&dp.delta().into_vector());
            let mut out = vec![km];
            for _ in 0..order {
                out = out.iter().flat_map(|a| v.iter().map(move |b| a * b)).collect();
            }
            Ok(out)
        }
        _ => Err(SnError::Domain(format!("cumulant order {order} not in 1..=4"))),
    }
}

/// `α* = √(αᵀΩ̄α)`, the shape of the canonical form.
pub fn alpha_star(shape: &DpShape) -> f64 {
    shape.alpha_quad().sqrt()
}

/// Largest absolute δ reachable in any direction, `α*/√(1+α*²)`.
pub fn delta_star(shape: &DpShape) -> f64 {
    let a = alpha_star(shape);
    a / (1.0 + a * a).sqrt()
}

/// Owen's `T(h, a) = (1/2π) ∫₀ᵃ exp(−h²(1+x²)/2)/(1+x²) dx`.
pub fn owens_t(h: f64, a: f64) -> f64 {
    if a == 0.0 {
        return 0.0;
    }
    if a < 0.0 {
        return -owens_t(h, -a);
    }
    if h == 0.0 {
        return a.atan() / (2.0 * PI);
    }
    let f = |x: f64| {
        let s = 1.0 + x * x;
        (-0.5 * h * h * s).exp() / s
    };
    // Beyond x ≈ 40/|h| the integrand is below e⁻⁸⁰⁰.
    let upper = a.min(40.0 / h.abs());
    crate::quad::integrate(f, 0.0, upper, 1e-15, 400).0 / (2.0 * PI)
}

/// Distribution function of the scalar `SN(0, 1, α)`, `Φ(z) − 2T(z, α)`.
pub fn cdf_std_uv(z: f64, alpha: f64) -> f64 {
    (norm_cdf(z) - 2.0 * owens_t(z, alpha)).clamp(0.0, 1.0)
}

/// Distribution function of the scalar `SN(ξ, ω², α)`.
pub fn cdf_uv(x: f64, xi: f64, omega: f64, alpha: f64) -> f64 {
    cdf_std_uv((x - xi) / omega, alpha)
}

/// δ of a shape, re-exported for callers that only hold `(Ω̄, α)`.
pub fn shape_delta(shape: &DpShape) -> DVector<f64> {
    dp_to_delta(shape).into_vector()
}
