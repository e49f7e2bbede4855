//! Margins, affine images, canonical form, independence of blocks and of
//! quadratic forms, and conditional laws.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::kernels::{half_normal_cumulant, zeta0, zeta_all};
use crate::linalg::{self, select, select_vec};
use crate::param::{alpha_from_delta, CorrelationMatrix, DpParams, DpShape, SQRT_2_OVER_PI};
use crate::{Result, SnError};

/// Tolerance, relative to the matrix scale, for the algebraic conditions
/// checked in this module.
pub const CONDITION_TOL: f64 = 1e-10;

fn check_indices(idx: &[usize], k: usize) -> Result<()> {
    if idx.is_empty() {
        return Err(SnError::Index("empty index set".into()));
    }
    let mut seen = vec![false; k];
    for &i in idx {
        if i >= k {
            return Err(SnError::Index(format!("index {i} out of range for dimension {k}")));
        }
        if seen[i] {
            return Err(SnError::Index(format!("index {i} repeated")));
        }
        seen[i] = true;
    }
    Ok(())
}

fn complement(idx: &[usize], k: usize) -> Vec<usize> {
    (0..k).filter(|i| !idx.contains(i)).collect()
}

/// Law of the components `idx` (in the given order).
pub fn marginal(dp: &DpParams, idx: &[usize]) -> Result<DpParams> {
    let k = dp.dim();
    check_indices(idx, k)?;
    let rest = complement(idx, k);
    let xi1 = select_vec(dp.xi(), idx);
    let om11 = select(dp.omega(), idx, idx);
    if rest.is_empty() {
        return DpParams::new(xi1, om11, select_vec(dp.alpha(), idx));
    }
    let ob = dp.omega_bar().matrix();
    let ob11 = select(ob, idx, idx);
    let ob12 = select(ob, idx, &rest);
    let ob22 = select(ob, &rest, &rest);
    let a1 = select_vec(dp.alpha(), idx);
    let a2 = select_vec(dp.alpha(), &rest);
    let c11 = linalg::cholesky(&ob11, "marginal correlation block")?;
    let proj = c11.solve(&ob12);
    let ob22_1 = &ob22 - ob12.transpose() * &proj;
    let denom = (1.0 + (a2.transpose() * &ob22_1 * &a2)[0].max(0.0)).sqrt();
    let alpha = (a1 + proj * a2) / denom;
    DpParams::new(xi1, om11, alpha)
}

/// Law of `AᵀY` for a `k×h` matrix `A` with `AᵀΩA` nonsingular.
pub fn affine(dp: &DpParams, a: &DMatrix<f64>) -> Result<DpParams> {
    crate::error::dim_check("rows of A", dp.dim(), a.nrows())?;
    let om_x = linalg::symmetrize(&(a.transpose() * dp.omega() * a));
    let chol_x = linalg::cholesky(&om_x, "AᵀΩA").map_err(|_| SnError::Rank("AᵀΩA is singular".into()))?;
    if linalg::symmetric_rank(&om_x, 1e-13) < a.ncols() {
        return Err(SnError::Rank("AᵀΩA is numerically singular".into()));
    }
    let xi_x = a.transpose() * dp.xi();
    let inv_w = dp.scale().map(|s| 1.0 / s);
    let b = DMatrix::from_diagonal(&inv_w) * dp.omega() * a;
    let w_x = DVector::from_fn(a.ncols(), |i, _| om_x[(i, i)].sqrt());
    let bt_alpha = b.transpose() * dp.alpha();
    let solved = chol_x.solve(&bt_alpha);
    let resid = dp.shape().alpha_quad() - bt_alpha.dot(&solved);
    let alpha_x = w_x.component_mul(&solved) / (1.0 + resid.max(0.0)).sqrt();
    DpParams::new(xi_x, om_x, alpha_x)
}

/// `A*` with `A*Z ~ SN_k(I, α*)` for `Z ~ SN_k(Ω̄, α)`, and `α* = (‖Lᵀα‖, 0, …)`.
#[derive(Debug, Clone)]
pub struct Canonical {
    pub a_star: DMatrix<f64>,
    pub alpha_star: DVector<f64>,
}

/// Canonical form: whiten with the Cholesky factor `Ω̄ = LLᵀ`, then rotate
/// `Lᵀα` onto the first axis with a Householder reflector.
pub fn canonical(shape: &DpShape) -> Canonical {
    let k = shape.dim();
    let l = shape.omega_bar.cholesky().l();
    let v = l.transpose() * &shape.alpha;
    let h = linalg::householder_from_e1(&v);
    let l_inv = l
        .solve_lower_triangular(&DMatrix::identity(k, k))
        .expect("Cholesky factor is nonsingular");
    let mut alpha_star = DVector::zeros(k);
    alpha_star[0] = v.norm();
    Canonical { a_star: h * l_inv, alpha_star }
}

/// Disjoint, covering, non-empty groups of column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPartition {
    blocks: Vec<Vec<usize>>,
}

impl BlockPartition {
    pub fn new(blocks: Vec<Vec<usize>>, size: usize) -> Result<Self> {
        let mut seen = vec![false; size];
        for b in &blocks {
            if b.is_empty() {
                return Err(SnError::Index("empty block".into()));
            }
            for &i in b {
                if i >= size || seen[i] {
                    return Err(SnError::Index(format!("index {i} out of range or repeated")));
                }
                seen[i] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(SnError::Index("blocks do not cover every index".into()));
        }
        Ok(Self { blocks })
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }
}

#[derive(Debug, Clone)]
pub struct BlockIndependence {
    pub independent: bool,
    /// `AᵢᵀΩ̄Aⱼ = 0` for every pair of distinct blocks.
    pub cross_blocks_zero: bool,
    /// Blocks with `AᵢᵀΩ̄α ≠ 0`.
    pub skewed_blocks: Vec<usize>,
    /// Law of each block `AᵢᵀZ`.
    pub block_params: Vec<DpParams>,
}

/// Independence of the blocks of `AᵀZ`, `Z ~ SN_k(Ω̄, α)`.
pub fn independent_blocks(shape: &DpShape, a: &DMatrix<f64>, partition: &BlockPartition) -> Result<BlockIndependence> {
    crate::error::dim_check("rows of A", shape.dim(), a.nrows())?;
    let ob = shape.omega_bar.matrix();
    let cols: Vec<DMatrix<f64>> = partition
        .blocks()
        .iter()
        .map(|b| DMatrix::from_fn(a.nrows(), b.len(), |i, j| a[(i, b[j])]))
        .collect();
    if partition.blocks().iter().flatten().count() != a.ncols() {
        return Err(SnError::Dimension("partition does not match the columns of A".into()));
    }
    let scale = linalg::scale_of(&(a.transpose() * ob * a));
    let mut cross_zero = true;
    for i in 0..cols.len() {
        for j in 0..i {
            if (cols[i].transpose() * ob * &cols[j]).amax() > CONDITION_TOL * scale {
                cross_zero = false;
            }
        }
    }
    let oa = ob * &shape.alpha;
    let a_scale = oa.norm().max(1.0) * scale.sqrt();
    let skewed_blocks: Vec<usize> =
        (0..cols.len()).filter(|&i| (cols[i].transpose() * &oa).amax() > CONDITION_TOL * a_scale).collect();
    let z = DpParams::standard(shape);
    let block_params = cols.iter().map(|c| affine(&z, c)).collect::<Result<Vec<_>>>()?;
    Ok(BlockIndependence {
        independent: cross_zero && skewed_blocks.len() <= 1,
        cross_blocks_zero: cross_zero,
        skewed_blocks,
        block_params,
    })
}

fn is_zero_matrix(m: &DMatrix<f64>, scale: f64) -> bool {
    m.amax() <= CONDITION_TOL * scale
}

/// Degrees of freedom `p = rank(B)` when `ZᵀBZ ~ χ²_p`, i.e. when `BΩ̄B = B`.
pub fn quadratic_form_is_chi2(shape: &DpShape, b: &DMatrix<f64>) -> Result<Option<usize>> {
    let k = shape.dim();
    crate::error::dim_check("rows of B", k, b.nrows())?;
    crate::error::dim_check("columns of B", k, b.ncols())?;
    let lhs = b * shape.omega_bar.matrix() * b;
    if is_zero_matrix(&(lhs - b), linalg::scale_of(b)) {
        Ok(Some(linalg::symmetric_rank(b, 1e-9)))
    } else {
        Ok(None)
    }
}

/// `C(CᵀΩ̄C)⁻¹Cᵀ` for a full-column-rank `C`; its quadratic form is `χ²_p`.
pub fn chi2_form_matrix(omega_bar: &CorrelationMatrix, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    crate::error::dim_check("rows of C", omega_bar.dim(), c.nrows())?;
    let inner = c.transpose() * omega_bar.matrix() * c;
    let chol = linalg::cholesky(&linalg::symmetrize(&inner), "CᵀΩ̄C")
        .map_err(|_| SnError::Rank("C is not of full column rank".into()))?;
    Ok(linalg::symmetrize(&(c * chol.solve(&c.transpose()))))
}

/// Mutual independence of `ZᵀBᵢZ`: `BᵢΩ̄Bⱼ = 0` for `i ≠ j` and
/// `αᵀΩ̄BᵢΩ̄α ≠ 0` for at most one `i`.
pub fn quad_forms_independent(shape: &DpShape, bs: &[DMatrix<f64>]) -> Result<bool> {
    let k = shape.dim();
    for b in bs {
        crate::error::dim_check("size of B", k, b.nrows())?;
        crate::error::dim_check("size of B", k, b.ncols())?;
    }
    let ob = shape.omega_bar.matrix();
    let scale = bs.iter().map(linalg::scale_of).fold(1.0, f64::max);
    for i in 0..bs.len() {
        for j in 0..i {
            if !is_zero_matrix(&(&bs[i] * ob * &bs[j]), scale * scale) {
                return Ok(false);
            }
        }
    }
    let oa = ob * &shape.alpha;
    let a_scale = oa.norm_squared().max(1.0) * scale;
    let skewed = bs.iter().filter(|b| (oa.transpose() * *b * &oa)[0].abs() > CONDITION_TOL * a_scale).count();
    Ok(skewed <= 1)
}

#[derive(Debug, Clone, Serialize)]
pub struct FisherCochran {
    /// `ΣBᵢ = I` and `Bᵢα ≠ 0` for at most one `i`.
    pub applicable: bool,
    pub ranks: Vec<usize>,
    /// The forms are independent `χ²_{pᵢ}` variables: `applicable` and `Σpᵢ = k`.
    pub independent_chi2: bool,
}

/// Fisher–Cochran verdict for `Z ~ SN_k(I, α)`.
pub fn fisher_cochran(alpha: &DVector<f64>, bs: &[DMatrix<f64>]) -> Result<FisherCochran> {
    let k = alpha.len();
    let mut sum = DMatrix::zeros(k, k);
    for b in bs {
        crate::error::dim_check("size of B", k, b.nrows())?;
        crate::error::dim_check("size of B", k, b.ncols())?;
        sum += b;
    }
    let sums_to_identity = is_zero_matrix(&(sum - DMatrix::identity(k, k)), 1.0);
    let a_scale = alpha.norm().max(1.0);
    let skewed = bs.iter().filter(|b| (*b * alpha).amax() > CONDITION_TOL * a_scale).count();
    let ranks: Vec<usize> = bs.iter().map(|b| linalg::symmetric_rank(b, 1e-9)).collect();
    let applicable = sums_to_identity && skewed <= 1;
    let independent_chi2 = applicable && ranks.iter().sum::<usize>() == k;
    Ok(FisherCochran { applicable, ranks, independent_chi2 })
}

/// Squared Mahalanobis distances `(yᵢ−ξ)ᵀΩ⁻¹(yᵢ−ξ)` for each row.
pub fn mahalanobis(dp: &DpParams, y: &DMatrix<f64>) -> Result<Vec<f64>> {
    crate::error::dim_check("data columns", dp.dim(), y.ncols())?;
    Ok((0..y.nrows())
        .map(|i| linalg::inv_quad_form(dp.cholesky(), &(y.row(i).transpose() - dp.xi())))
        .collect())
}

/// Exact law of `Y₂ | Y₁ = y₁`.
#[derive(Debug, Clone, Serialize)]
pub struct ConditionalLaw {
    /// Indices of the conditioning block.
    pub given: Vec<usize>,
    /// Indices of the free block, in output order.
    pub free: Vec<usize>,
    pub xi2c: Vec<f64>,
    pub omega22_1: Vec<Vec<f64>>,
    pub x0: f64,
    pub x0_prime: f64,
    pub tau: Vec<f64>,
    pub alpha2: Vec<f64>,
    /// √diag(Ω₂₂) from the joint law.
    pub scale2: Vec<f64>,
    /// Φ(x₀).
    pub normalizer: f64,
}

impl ConditionalLaw {
    fn vectors(&self) -> (DVector<f64>, DMatrix<f64>, DVector<f64>) {
        (
            DVector::from_vec(self.xi2c.clone()),
            linalg::from_rows(&self.omega22_1, "Omega22.1").expect("rectangular by construction"),
            DVector::from_vec(self.tau.clone()),
        )
    }

    pub fn mean(&self) -> DVector<f64> {
        let (xi, _, tau) = self.vectors();
        xi + tau * crate::kernels::zeta1(self.x0)
    }

    pub fn variance(&self) -> DMatrix<f64> {
        let (_, om, tau) = self.vectors();
        om + &tau * tau.transpose() * crate::kernels::zeta2(self.x0)
    }

    /// Flattened `ζ_m(x₀) τ^{⊗m}` for `m ∈ {3, 4}`.
    pub fn cumulant(&self, order: u8) -> Result<Vec<f64>> {
        if !(3..=4).contains(&order) {
            return Err(SnError::Domain(format!("conditional cumulant order {order} not in 3..=4")));
        }
        let z = zeta_all(self.x0)[order as usize];
        let mut out = vec![z];
        for _ in 0..order {
            out = out.iter().flat_map(|a| self.tau.iter().map(move |b| a * b)).collect();
        }
        Ok(out)
    }

    /// log of `φ(y₂−ξ₂ᶜ; Ω₂₂·₁) Φ(α₂ᵀω₂⁻¹(y₂−ξ₂ᶜ) + x₀′) / Φ(x₀)`.
    pub fn logpdf(&self, y2: &DVector<f64>) -> Result<f64> {
        let (xi, om, _) = self.vectors();
        crate::error::dim_check("free-block length", xi.len(), y2.len())?;
        let chol = linalg::cholesky(&om, "Omega22.1")?;
        let z = y2 - xi;
        let m = z.len() as f64;
        let lin: f64 = (0..z.len()).map(|i| self.alpha2[i] * z[i] / self.scale2[i]).sum();
        Ok(-0.5 * m * (2.0 * PI).ln() - 0.5 * linalg::log_det(&chol) - 0.5 * linalg::inv_quad_form(&chol, &z)
            + zeta0(lin + self.x0_prime)
            - zeta0(self.x0))
    }

    pub fn pdf(&self, y2: &DVector<f64>) -> Result<f64> {
        self.logpdf(y2).map(f64::exp)
    }

    /// When `x₀ = 0` the conditional is exactly `SN(ξ₂ᶜ, Ω₂₂·₁, ω_cω₂⁻¹α₂)`
    /// with `ω_c = √diag(Ω₂₂·₁)`.
    pub fn exact_sn(&self) -> Option<DpParams> {
        if self.x0 != 0.0 {
            return None;
        }
        let (xi, om, _) = self.vectors();
        let alpha = DVector::from_fn(xi.len(), |i, _| om[(i, i)].sqrt() * self.alpha2[i] / self.scale2[i]);
        DpParams::new(xi, om, alpha).ok()
    }
}

/// Conditional law of the complement of `given` at `Y_given = y1`.
pub fn conditional_exact(dp: &DpParams, given: &[usize], y1: &DVector<f64>) -> Result<ConditionalLaw> {
    let k = dp.dim();
    check_indices(given, k)?;
    if given.len() >= k {
        return Err(SnError::Dimension("the conditioning block must leave a free component".into()));
    }
    crate::error::dim_check("conditioning values", given.len(), y1.len())?;
    let free = complement(given, k);
    let om = dp.omega();
    let om11 = select(om, given, given);
    let om12 = select(om, given, &free);
    let om22 = select(om, &free, &free);
    let c11 = linalg::cholesky(&om11, "Omega11")?;
    let xi1 = select_vec(dp.xi(), given);
    let xi2 = select_vec(dp.xi(), &free);
    let xi2c = &xi2 + om12.transpose() * c11.solve(&(y1 - &xi1));
    let om22_1 = linalg::symmetrize(&(&om22 - om12.transpose() * c11.solve(&om12)));

    let w1 = select_vec(dp.scale(), given);
    let w2 = select_vec(dp.scale(), &free);
    let a1 = select_vec(dp.alpha(), given);
    let a2 = select_vec(dp.alpha(), &free);
    let ob22_1 = DMatrix::from_fn(free.len(), free.len(), |i, j| om22_1[(i, j)] / (w2[i] * w2[j]));
    let q = (a2.transpose() * &ob22_1 * &a2)[0].max(0.0);
    let root = (1.0 + q).sqrt();
    let shift = c11.solve(&(om12 * a2.component_div(&w2)));
    let alpha1_bar = (a1 + w1.component_mul(&shift)) / root;
    let x0 = alpha1_bar.dot(&(y1 - &xi1).component_div(&w1));
    let delta2 = &ob22_1 * &a2 / root;
    let tau = w2.component_mul(&delta2);
    Ok(ConditionalLaw {
        given: given.to_vec(),
        free,
        xi2c: xi2c.iter().copied().collect(),
        omega22_1: linalg::to_rows(&om22_1),
        x0,
        x0_prime: root * x0,
        tau: tau.iter().copied().collect(),
        alpha2: a2.iter().copied().collect(),
        scale2: w2.iter().copied().collect(),
        normalizer: crate::kernels::norm_cdf(x0),
    })
}

/// SN law matching the first three cumulants of a conditional law.
#[derive(Debug, Clone)]
pub struct SnApproximation {
    /// The matching SN when feasible, otherwise the normal with the exact
    /// mean and variance.
    pub dp: DpParams,
    pub feasible: bool,
    /// Largest absolute differences in cumulants of order 1, 2 and 3.
    pub matched_cumulant_error: [f64; 3],
}

/// Third-order cumulant match: `ωδ = cτ` with `c = (ζ₃(x₀)/κ₃)^{1/3}`,
/// `Ω = Var + (2/π)c²ττᵀ`, `ξ = E − √(2/π)cτ`.
pub fn conditional_sn_approx(law: &ConditionalLaw) -> Result<SnApproximation> {
    let mean = law.mean();
    let var = linalg::symmetrize(&law.variance());
    let tau = DVector::from_vec(law.tau.clone());
    let kappa3 = half_normal_cumulant(3).expect("order 3");
    let c = (zeta_all(law.x0)[3] / kappa3).cbrt();
    let d = &tau * c;
    let omega = linalg::symmetrize(&(&var + &d * d.transpose() * (2.0 / PI)));
    let xi = &mean - &d * SQRT_2_OVER_PI;
    let scale = omega.diagonal().map(f64::sqrt);
    let delta = d.component_div(&scale);
    let attempt = CorrelationMatrix::from_covariance(&omega)
        .and_then(|ob| alpha_from_delta(&delta, &ob))
        .and_then(|alpha| DpParams::new(xi.clone(), omega.clone(), alpha));
    let (dp, feasible) = match attempt {
        Ok(dp) if delta.iter().all(|v| v.abs() < 1.0 - crate::param::DELTA_MARGIN) => (dp, true),
        _ => (DpParams::new(mean.clone(), var.clone(), DVector::zeros(mean.len()))?, false),
    };
    let err1 = (crate::dist::mean(&dp) - &mean).amax();
    let err2 = (crate::dist::variance(&dp) - &var).amax();
    let err3 = crate::dist::cumulant_array(&dp, 3)?
        .iter()
        .zip(law.cumulant(3)?)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(SnApproximation { dp, feasible, matched_cumulant_error: [err1, err2, err3] })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> DpParams {
        let om = DMatrix::from_row_slice(3, 3, &[2.0, 0.6, -0.3, 0.6, 1.5, 0.4, -0.3, 0.4, 1.0]);
        DpParams::new(DVector::from_vec(vec![0.5, -1.0, 2.0]), om, DVector::from_vec(vec![2.0, -1.0, 3.0])).unwrap()
    }

    #[test]
    fn marginal_agrees_with_delta_route() {
        let dp = example();
        let m = marginal(&dp, &[2, 0]).unwrap();
        let delta = dp.delta().into_vector();
        let md = m.delta().into_vector();
        assert!((md[0] - delta[2]).abs() < 1e-12 && (md[1] - delta[0]).abs() < 1e-12);
        assert!(marginal(&dp, &[0, 0]).is_err());
        assert!(marginal(&dp, &[3]).is_err());
        assert!(marginal(&dp, &[]).is_err());
    }

    #[test]
    fn affine_identity_and_permutation() {
        let dp = example();
        let same = affine(&dp, &DMatrix::identity(3, 3)).unwrap();
        assert!((same.alpha() - dp.alpha()).norm() < 1e-12);
        let mut p = DMatrix::zeros(3, 3);
        p[(2, 0)] = 1.0;
        p[(0, 1)] = 1.0;
        p[(1, 2)] = 1.0;
        let perm = affine(&dp, &p).unwrap();
        assert!((perm.alpha()[0] - dp.alpha()[2]).abs() < 1e-12);
        assert!((perm.omega()[(0, 1)] - dp.omega()[(2, 0)]).abs() < 1e-12);
        let singular = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert!(matches!(affine(&dp, &singular), Err(SnError::Rank(_))));
    }

    #[test]
    fn canonical_form() {
        let shape = DpShape::new(CorrelationMatrix::identity(2), DVector::from_vec(vec![3.0, 4.0])).unwrap();
        let c = canonical(&shape);
        assert!((c.alpha_star[0] - 5.0).abs() < 1e-12 && c.alpha_star[1] == 0.0);
        let z = affine(&DpParams::standard(&shape), &c.a_star.transpose()).unwrap();
        assert!((z.omega() - DMatrix::identity(2, 2)).norm() < 1e-12);
        assert!((z.alpha() - &c.alpha_star).norm() < 1e-12);
    }

    #[test]
    fn conditional_at_zero_x0_is_exact_sn() {
        let om = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.2, 0.3, 1.0, 0.5, 0.2, 0.5, 1.0]);
        let dp = DpParams::new(DVector::zeros(3), om, DVector::from_vec(vec![1.0, 2.0, -1.0])).unwrap();
        let law = conditional_exact(&dp, &[0], &DVector::from_element(1, 0.0)).unwrap();
        assert_eq!(law.x0, 0.0);
        let exact = law.exact_sn().unwrap();
        let approx = conditional_sn_approx(&law).unwrap();
        assert!(approx.feasible);
        assert!((approx.dp.alpha() - exact.alpha()).amax() < 1e-10);
        assert!((approx.dp.xi() - exact.xi()).amax() < 1e-10);
        assert!((approx.dp.omega() - exact.omega()).amax() < 1e-10);
    }

    #[test]
    fn fisher_cochran_projectors() {
        let alpha = DVector::from_vec(vec![2.0, 0.0, 0.0]);
        let p1 = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0, 0.0]));
        let p2 = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0, 1.0]));
        let fc = fisher_cochran(&alpha, &[p1.clone(), p2.clone()]).unwrap();
        assert!(fc.applicable && fc.independent_chi2);
        assert_eq!(fc.ranks, vec![1, 2]);
        let both = fisher_cochran(&DVector::from_vec(vec![1.0, 1.0, 0.0]), &[p1, p2]).unwrap();
        assert!(!both.applicable);
    }
}
