//! Discrimination between SN populations that share `(Ω, α)` and differ in
//! location: the likelihood rule, the Fisher linear rule built from the SN
//! mean and variance, their error rates and the direction sweep used to
//! compare them.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::fit_mv::{fit_mv, FitOptionsMv, FitResultMv, MvRegressionData};
use crate::kernels::{norm_pdf, norm_cdf, zeta0};
use crate::linalg;
use crate::parallel::{chunk_sizes, map_indexed, Execution};
use crate::param::DpParams;
use crate::quad;
use crate::sample::{SeededStream, SnSampler};
use crate::{dist, transform, Result, SnError};

const LINEAR_TOL: f64 = 1e-10;
/// Stream offset between groups in the Monte Carlo; chunk `j` of group `i`
/// uses `child(i·GROUP_STRIDE + j)`.
const GROUP_STRIDE: u64 = 1 << 32;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawModel {
    locations: Vec<Vec<f64>>,
    #[serde(rename = "Omega")]
    omega: Vec<Vec<f64>>,
    alpha: Vec<f64>,
    priors: Vec<f64>,
}

/// `g` populations `SN_k(ξᵢ, Ω, α)` with prior weights `πᵢ`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawModel", into = "RawModel")]
pub struct DiscrimModel {
    locations: Vec<DVector<f64>>,
    /// Shared parameters with `ξ = 0`.
    base: DpParams,
    priors: Vec<f64>,
}

impl TryFrom<RawModel> for DiscrimModel {
    type Error = SnError;

    fn try_from(r: RawModel) -> Result<Self> {
        let omega = linalg::from_rows(&r.omega, "Omega")?;
        let locations = r.locations.into_iter().map(DVector::from_vec).collect();
        Self::new(locations, omega, DVector::from_vec(r.alpha), r.priors)
    }
}

impl From<DiscrimModel> for RawModel {
    fn from(m: DiscrimModel) -> Self {
        RawModel {
            locations: m.locations.iter().map(|x| x.iter().copied().collect()).collect(),
            omega: linalg::to_rows(m.base.omega()),
            alpha: m.base.alpha().iter().copied().collect(),
            priors: m.priors,
        }
    }
}

impl DiscrimModel {
    pub fn new(locations: Vec<DVector<f64>>, omega: DMatrix<f64>, alpha: DVector<f64>, priors: Vec<f64>) -> Result<Self> {
        let g = locations.len();
        if g < 2 {
            return Err(SnError::GroupCount { expected: "at least 2".into(), got: g });
        }
        let k = omega.nrows();
        let base = DpParams::new(DVector::zeros(k), omega, alpha)?;
        for x in &locations {
            crate::error::dim_check("location length", k, x.len())?;
            if x.iter().any(|v| !v.is_finite()) {
                return Err(SnError::Input("non-finite location".into()));
            }
        }
        crate::error::dim_check("number of priors", g, priors.len())?;
        if priors.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(SnError::Domain("priors must be positive".into()));
        }
        let total: f64 = priors.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(SnError::Domain(format!("priors sum to {total}, not 1")));
        }
        Ok(Self { locations, base, priors })
    }

    /// Equal priors.
    pub fn equal_priors(locations: Vec<DVector<f64>>, omega: DMatrix<f64>, alpha: DVector<f64>) -> Result<Self> {
        let g = locations.len();
        Self::new(locations, omega, alpha, vec![1.0 / g.max(1) as f64; g])
    }

    pub fn groups(&self) -> usize {
        self.locations.len()
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn locations(&self) -> &[DVector<f64>] {
        &self.locations
    }

    pub fn omega(&self) -> &DMatrix<f64> {
        self.base.omega()
    }

    pub fn alpha(&self) -> &DVector<f64> {
        self.base.alpha()
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    pub fn with_priors(&self, priors: Vec<f64>) -> Result<Self> {
        Self::new(self.locations.clone(), self.omega().clone(), self.alpha().clone(), priors)
    }

    /// Parameters of population `i`.
    pub fn population(&self, i: usize) -> Result<DpParams> {
        self.base.with_xi(self.locations[i].clone())
    }

    /// Covariance `Ω − ωμ_zμ_zᵀω` shared by all populations.
    pub fn fisher_covariance(&self) -> DMatrix<f64> {
        dist::variance(&self.base)
    }

    /// Mean `ξᵢ + ωμ_z` of population `i`.
    pub fn fisher_mean(&self, i: usize) -> DVector<f64> {
        &self.locations[i] + dist::mean(&self.base)
    }
}

/// Precomputed linear and quadratic pieces of both rules.
#[derive(Debug, Clone)]
pub struct Classifier {
    omega_inv: DMatrix<f64>,
    eta: DVector<f64>,
    locations: Vec<DVector<f64>>,
    log_priors: Vec<f64>,
    /// Fisher scores are `aᵢᵀy + bᵢ`.
    fisher_a: Vec<DVector<f64>>,
    fisher_b: Vec<f64>,
}

fn argmax(scores: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut top = f64::NEG_INFINITY;
    for (i, s) in scores.enumerate() {
        if s > top {
            top = s;
            best = i;
        }
    }
    best
}

impl Classifier {
    pub fn new(model: &DiscrimModel) -> Result<Self> {
        let omega_inv = linalg::inverse(model.base.cholesky());
        let sigma = model.fisher_covariance();
        let sigma_chol = linalg::cholesky(&sigma, "SN covariance")?;
        let log_priors: Vec<f64> = model.priors.iter().map(|p| p.ln()).collect();
        let mut fisher_a = Vec::new();
        let mut fisher_b = Vec::new();
        for i in 0..model.groups() {
            let mu = model.fisher_mean(i);
            let a = sigma_chol.solve(&mu);
            fisher_b.push(-0.5 * a.dot(&mu) + log_priors[i]);
            fisher_a.push(a);
        }
        Ok(Self { omega_inv, eta: model.base.eta(), locations: model.locations.clone(), log_priors, fisher_a, fisher_b })
    }

    fn check(&self, y: &DVector<f64>) -> Result<()> {
        crate::error::dim_check("observation length", self.eta.len(), y.len())
    }

    /// `log πᵢ + log fᵢ(y)` up to a term common to all groups.
    pub fn likelihood_scores(&self, y: &DVector<f64>) -> Vec<f64> {
        self.locations
            .iter()
            .zip(&self.log_priors)
            .map(|(x, lp)| {
                let z = y - x;
                lp - 0.5 * (z.transpose() * &self.omega_inv * &z)[0] + zeta0(self.eta.dot(&z))
            })
            .collect()
    }

    pub fn fisher_scores(&self, y: &DVector<f64>) -> Vec<f64> {
        self.fisher_a.iter().zip(&self.fisher_b).map(|(a, b)| a.dot(y) + b).collect()
    }

    pub fn likelihood(&self, y: &DVector<f64>) -> Result<usize> {
        self.check(y)?;
        Ok(argmax(self.likelihood_scores(y).into_iter()))
    }

    pub fn fisher(&self, y: &DVector<f64>) -> Result<usize> {
        self.check(y)?;
        Ok(argmax(self.fisher_scores(y).into_iter()))
    }
}

/// Group of highest `log πᵢ + log fᵢ(y)`; ties go to the lowest index.
pub fn classify_likelihood(model: &DiscrimModel, y: &DVector<f64>) -> Result<usize> {
    Classifier::new(model)?.likelihood(y)
}

/// Normal-theory linear rule with the SN means and covariance; ties go to
/// the lowest index.
pub fn classify_fisher(model: &DiscrimModel, y: &DVector<f64>) -> Result<usize> {
    Classifier::new(model)?.fisher(y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Likelihood,
    Fisher,
}

/// Allocation of each row of `y`.
pub fn classify_rows(model: &DiscrimModel, y: &DMatrix<f64>, rule: Rule) -> Result<Vec<usize>> {
    let c = Classifier::new(model)?;
    (0..y.nrows())
        .map(|i| {
            let yi = y.row(i).transpose();
            match rule {
                Rule::Likelihood => c.likelihood(&yi),
                Rule::Fisher => c.fisher(&yi),
            }
        })
        .collect()
}

/// `m[predicted][true]`, so column `j` sums to the size of group `j`.
pub fn confusion_matrix(predicted: &[usize], truth: &[usize], groups: usize) -> Result<Vec<Vec<usize>>> {
    crate::error::dim_check("number of labels", predicted.len(), truth.len())?;
    let mut m = vec![vec![0; groups]; groups];
    for (&p, &t) in predicted.iter().zip(truth) {
        if p >= groups || t >= groups {
            return Err(SnError::Index(format!("label outside 0..{groups}")));
        }
        m[p][t] += 1;
    }
    Ok(m)
}

fn require_two(model: &DiscrimModel) -> Result<()> {
    if model.groups() == 2 {
        Ok(())
    } else {
        Err(SnError::GroupCount { expected: "2".into(), got: model.groups() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearityConditions {
    /// `(ξ₁ − ξ₂)ᵀω⁻¹α = 0`: the likelihood rule is linear.
    pub eq19: bool,
    /// `ω⁻¹α = cΩ⁻¹(ξ₁ − ξ₂)` with `c ≠ 0`: both boundaries are parallel.
    pub eq20: bool,
    pub c: Option<f64>,
}

pub fn linearity_conditions(model: &DiscrimModel) -> Result<LinearityConditions> {
    require_two(model)?;
    let d = &model.locations[0] - &model.locations[1];
    let eta = model.base.eta();
    let eq19 = d.dot(&eta).abs() <= LINEAR_TOL * (d.norm() * eta.norm()).max(1.0);
    let v = model.base.cholesky().solve(&d);
    let vv = v.norm_squared();
    let c = if vv > 0.0 { eta.dot(&v) / vv } else { 0.0 };
    let resid = (&eta - &v * c).norm();
    let eq20 = vv > 0.0 && resid <= LINEAR_TOL * eta.norm().max(1.0) && c.abs() > LINEAR_TOL;
    Ok(LinearityConditions { eq19, eq20, c: eq20.then_some(c) })
}

/// Cosines of the angles between `η = ω⁻¹α` and, respectively, `ξ₁ − ξ₂`
/// (`cos_theta1`) and `Ω⁻¹(ξ₁ − ξ₂)` (`cos_theta2`). Zero when either
/// vector vanishes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometrySummary {
    pub cos_theta1: f64,
    pub cos_theta2: f64,
}

fn cosine(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let n = a.norm() * b.norm();
    if n > 0.0 {
        (a.dot(b) / n).clamp(-1.0, 1.0)
    } else {
        0.0
    }
}

pub fn geometry(model: &DiscrimModel) -> Result<GeometrySummary> {
    require_two(model)?;
    let d = &model.locations[0] - &model.locations[1];
    let eta = model.base.eta();
    let v = model.base.cholesky().solve(&d);
    Ok(GeometrySummary { cos_theta1: cosine(&eta, &d), cos_theta2: cosine(&eta, &v) })
}

/// `P(X ≤ t)` for `X ~ SN(ξ, ω², α)` by adaptive quadrature of the density.
fn sn_lower_tail(xi: f64, omega: f64, alpha: f64, t: f64, upper: bool) -> f64 {
    const SPAN: f64 = 40.0;
    let z = ((t - xi) / omega).clamp(-SPAN, SPAN);
    let f = |u: f64| 2.0 * norm_pdf(u) * norm_cdf(alpha * u);
    let (a, b) = if upper { (z, SPAN) } else { (-SPAN, z) };
    quad::integrate(f, a, b, 1e-10, 4000).0.clamp(0.0, 1.0)
}

/// Exact error rates `(P(allocate 2 | group 1), P(allocate 1 | group 2))` of
/// the Fisher rule: the linear score is univariate SN under each
/// population.
pub fn misclassification_exact_fisher(model: &DiscrimModel) -> Result<[f64; 2]> {
    require_two(model)?;
    let sigma = linalg::cholesky(&model.fisher_covariance(), "SN covariance")?;
    let (m1, m2) = (model.fisher_mean(0), model.fisher_mean(1));
    let a = sigma.solve(&(&m1 - &m2));
    // allocate to group 1 iff aᵀy ≥ t
    let t = 0.5 * a.dot(&(&m1 + &m2)) - (model.priors[0] / model.priors[1]).ln();
    if a.norm() == 0.0 {
        return Ok(if t <= 0.0 { [0.0, 1.0] } else { [1.0, 0.0] });
    }
    let amat = DMatrix::from_column_slice(a.len(), 1, a.as_slice());
    let mut out = [0.0; 2];
    for (i, o) in out.iter_mut().enumerate() {
        let proj = transform::affine(&model.population(i)?, &amat)?;
        let (xi, om, al) = (proj.xi()[0], proj.scale()[0], proj.alpha()[0]);
        *o = sn_lower_tail(xi, om, al, t, i == 1);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McOptions {
    pub n_rep: usize,
    pub chunks: usize,
    pub exec: Execution,
}

impl Default for McOptions {
    fn default() -> Self {
        Self { n_rep: 100_000, chunks: 32, exec: Execution::Parallel }
    }
}

/// Monte Carlo error rates per group with binomial standard errors, and
/// the prior-weighted probability `p*` that both rules allocate alike.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McMisclassification {
    pub n_rep: usize,
    pub likelihood: Vec<f64>,
    pub likelihood_se: Vec<f64>,
    pub fisher: Vec<f64>,
    pub fisher_se: Vec<f64>,
    pub agreement: f64,
    pub agreement_se: f64,
}

fn binomial_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// `n_rep` draws from each population. Group `i` chunk `j` draws from
/// `stream.child(i·2³² + j)`, so results depend only on the seed and the
/// chunk count.
pub fn misclassification_mc(model: &DiscrimModel, stream: SeededStream, options: &McOptions) -> Result<McMisclassification> {
    if options.n_rep == 0 {
        return Err(SnError::Input("n_rep must be at least 1".into()));
    }
    let c = Classifier::new(model)?;
    let g = model.groups();
    let k = model.dim();
    let sizes = chunk_sizes(options.n_rep, options.chunks);
    let samplers: Vec<SnSampler> = (0..g).map(|i| SnSampler::new(&model.population(i)?)).collect::<Result<_>>()?;
    let jobs = g * sizes.len();
    let counts = map_indexed(jobs, options.exec, |job| {
        let (i, j) = (job / sizes.len(), job % sizes.len());
        let mut rng = stream.child(i as u64 * GROUP_STRIDE + j as u64).rng();
        let mut u = DVector::zeros(k + 1);
        let mut y = DVector::zeros(k);
        let mut err = [0usize; 3];
        for _ in 0..sizes[j] {
            samplers[i].draw_into(&mut rng, &mut u, &mut y);
            let l = argmax(c.likelihood_scores(&y).into_iter());
            let f = argmax(c.fisher_scores(&y).into_iter());
            err[0] += usize::from(l != i);
            err[1] += usize::from(f != i);
            err[2] += usize::from(l == f);
        }
        err
    });
    let n = options.n_rep;
    let mut tot = vec![[0usize; 3]; g];
    for (job, e) in counts.iter().enumerate() {
        let i = job / sizes.len();
        for r in 0..3 {
            tot[i][r] += e[r];
        }
    }
    let rate = |i: usize, r: usize| tot[i][r] as f64 / n as f64;
    let likelihood: Vec<f64> = (0..g).map(|i| rate(i, 0)).collect();
    let fisher: Vec<f64> = (0..g).map(|i| rate(i, 1)).collect();
    let agreement = (0..g).map(|i| model.priors[i] * rate(i, 2)).sum();
    let agreement_var: f64 = (0..g).map(|i| model.priors[i].powi(2) * binomial_se(rate(i, 2), n).powi(2)).sum();
    Ok(McMisclassification {
        n_rep: n,
        likelihood_se: likelihood.iter().map(|&p| binomial_se(p, n)).collect(),
        fisher_se: fisher.iter().map(|&p| binomial_se(p, n)).collect(),
        likelihood,
        fisher,
        agreement,
        agreement_se: agreement_var.sqrt(),
    })
}

/// Two-group setting of the direction sweep: `ω = I`, equicorrelated `Ω`,
/// equal priors and `‖ξ₁ − ξ₂‖ = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub rho: f64,
    pub alpha: [f64; 2],
    pub steps: usize,
    pub seed: u64,
    pub mc: McOptions,
}

impl SweepConfig {
    pub fn new(seed: u64) -> Self {
        Self { rho: 0.4, alpha: [3.0, 3.0], steps: 17, seed, mc: McOptions::default() }
    }
}

/// One direction of the sweep. The cosines are those of
/// [`GeometrySummary`] taken with `ξ₂ − ξ₁` in place of `ξ₁ − ξ₂`:
/// `cos_eta_diff` with the shift itself, `cos_eta_whitened` with `Ω⁻¹`
/// times the shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub angle_deg: f64,
    pub p1_likelihood: f64,
    pub p1_fisher: f64,
    pub p2_likelihood: f64,
    pub p2_fisher: f64,
    pub agreement: f64,
    pub cos_eta_whitened: f64,
    pub cos_eta_diff: f64,
    pub mc: McMisclassification,
}

/// Model with `ξ₂ − ξ₁ = d` at angle `phi` (radians) from the first
/// principal axis `(1, 1)/√2` of `Ω` towards `(1, −1)/√2`.
pub fn sweep_model(config: &SweepConfig, phi: f64) -> Result<DiscrimModel> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let d = DVector::from_vec(vec![s * (phi.cos() + phi.sin()), s * (phi.cos() - phi.sin())]);
    let omega = DMatrix::from_row_slice(2, 2, &[1.0, config.rho, config.rho, 1.0]);
    DiscrimModel::equal_priors(vec![&d * -0.5, &d * 0.5], omega, DVector::from_row_slice(&config.alpha))
}

/// Error rates over `steps` equally spaced directions from 0 to 180°.
/// Fisher columns are exact; the likelihood columns and `p*` are Monte
/// Carlo. Each row uses stream `seed/row`.
pub fn direction_sweep(config: &SweepConfig) -> Result<Vec<SweepRow>> {
    if config.steps < 2 {
        return Err(SnError::Input("need at least two directions".into()));
    }
    (0..config.steps)
        .map(|j| {
            let phi = PI * j as f64 / (config.steps - 1) as f64;
            let model = sweep_model(config, phi)?;
            let exact = misclassification_exact_fisher(&model)?;
            let mc = misclassification_mc(&model, SeededStream::new(config.seed, j as u64), &config.mc)?;
            let geo = geometry(&model)?;
            Ok(SweepRow {
                angle_deg: phi.to_degrees(),
                p1_likelihood: mc.likelihood[0],
                p1_fisher: exact[0],
                p2_likelihood: mc.likelihood[1],
                p2_fisher: exact[1],
                agreement: mc.agreement,
                cos_eta_whitened: -geo.cos_theta2,
                cos_eta_diff: -geo.cos_theta1,
                mc,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    /// Observed frequencies when absent.
    pub priors: Option<Vec<f64>>,
    pub fit: FitOptionsMv,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedModel {
    pub model: DiscrimModel,
    pub fit: FitResultMv,
    pub group_sizes: Vec<usize>,
}

/// Fits common `(Ω, α)` and one location per group by regressing on group
/// indicators. Labels must cover `0..g` with `g ≥ 2`.
pub fn train(y: &DMatrix<f64>, labels: &[usize], options: &TrainOptions) -> Result<TrainedModel> {
    crate::error::dim_check("number of labels", y.nrows(), labels.len())?;
    let g = labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; g];
    for &l in labels {
        sizes[l] += 1;
    }
    let present = sizes.iter().filter(|&&s| s > 0).count();
    if present < 2 {
        return Err(SnError::GroupCount { expected: "at least 2".into(), got: present });
    }
    let k = y.ncols();
    if let Some(i) = sizes.iter().position(|&s| s < k + 1) {
        return Err(SnError::Degenerate(format!("group {i} has {} observations, need at least {}", sizes[i], k + 1)));
    }
    let x = DMatrix::from_fn(y.nrows(), g, |i, j| f64::from(u8::from(labels[i] == j)));
    let data = MvRegressionData::new(y.clone(), x)?;
    let fit = fit_mv(&data, &options.fit)?;
    let beta = fit.beta_matrix();
    let locations = (0..g).map(|j| beta.row(j).transpose()).collect();
    let n = y.nrows() as f64;
    let priors = options.priors.clone().unwrap_or_else(|| sizes.iter().map(|&s| s as f64 / n).collect());
    let model = DiscrimModel::new(locations, fit.omega_matrix(), DVector::from_vec(fit.alpha.clone()), priors)?;
    Ok(TrainedModel { model, fit, group_sizes: sizes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::rvs_sn;

    fn two_group(alpha: [f64; 2], d: [f64; 2]) -> DiscrimModel {
        let omega = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 1.0]);
        DiscrimModel::equal_priors(
            vec![DVector::from_row_slice(&d), DVector::zeros(2)],
            omega,
            DVector::from_row_slice(&alpha),
        )
        .unwrap()
    }

    fn probes(n: usize, seed: u64) -> DMatrix<f64> {
        let dp = DpParams::new(DVector::zeros(2), DMatrix::identity(2, 2) * 4.0, DVector::zeros(2)).unwrap();
        rvs_sn(&dp, n, SeededStream::new(seed, 0)).unwrap()
    }

    #[test]
    fn normal_case_rules_coincide() {
        let m = two_group([0.0, 0.0], [0.7, -0.2]);
        let y = probes(5000, 1);
        assert_eq!(classify_rows(&m, &y, Rule::Likelihood).unwrap(), classify_rows(&m, &y, Rule::Fisher).unwrap());
        let lc = linearity_conditions(&m).unwrap();
        assert!(lc.eq19 && !lc.eq20 && lc.c.is_none());
    }

    #[test]
    fn tie_goes_to_first_group() {
        let m = two_group([2.0, -1.0], [1.0, 0.0]);
        let c = Classifier::new(&m).unwrap();
        // bisect along the segment between the locations for a boundary root
        let diff = |t: f64| {
            let s = c.likelihood_scores(&DVector::from_vec(vec![t, 0.0]));
            s[0] - s[1]
        };
        let (mut lo, mut hi) = (-5.0, 5.0);
        assert!(diff(lo) < 0.0 && diff(hi) > 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if diff(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert_eq!(argmax([1.0, 1.0].into_iter()), 0);
        assert_eq!(c.likelihood(&DVector::from_vec(vec![hi, 0.0])).unwrap(), 0);
    }

    #[test]
    fn rules_agree_when_shape_is_orthogonal_to_shift() {
        // η = (3, 3) ⟂ ξ₁ − ξ₂
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let m = two_group([3.0, 3.0], [s, -s]);
        assert!(linearity_conditions(&m).unwrap().eq19);
        let y = probes(100_000, 2);
        let l = classify_rows(&m, &y, Rule::Likelihood).unwrap();
        let f = classify_rows(&m, &y, Rule::Fisher).unwrap();
        assert_eq!(l.iter().zip(&f).filter(|(a, b)| a != b).count(), 0);
        let g = geometry(&m).unwrap();
        assert!(g.cos_theta1.abs() < 1e-15 && g.cos_theta2.abs() < 1e-15);
    }

    #[test]
    fn parallel_boundaries_when_shape_follows_whitened_shift() {
        let omega = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let d = DVector::from_vec(vec![0.6, 0.3]);
        let v = omega.clone().cholesky().unwrap().solve(&d);
        let scale = DVector::from_vec(vec![2f64.sqrt(), 1.0]);
        let alpha = (&v * 1.7).component_mul(&scale);
        let m = DiscrimModel::equal_priors(vec![d.clone(), DVector::zeros(2)], omega, alpha).unwrap();
        let lc = linearity_conditions(&m).unwrap();
        assert!(lc.eq20 && (lc.c.unwrap() - 1.7).abs() < 1e-10);
        let c = Classifier::new(&m).unwrap();
        let fisher_normal = (&c.fisher_a[0] - &c.fisher_a[1]).normalize();
        // the likelihood score difference depends on y only through vᵀy
        let y0 = DVector::from_vec(vec![0.3, -0.2]);
        let grad = DVector::from_fn(2, |i, _| {
            let h = 1e-6;
            let mut yp = y0.clone();
            let mut ym = y0.clone();
            yp[i] += h;
            ym[i] -= h;
            let dp = c.likelihood_scores(&yp);
            let dm = c.likelihood_scores(&ym);
            ((dp[0] - dp[1]) - (dm[0] - dm[1])) / (2.0 * h)
        });
        assert!((&fisher_normal - v.normalize()).norm() < 1e-10);
        assert!((grad.normalize() - v.normalize()).norm() < 1e-8);
        let g = geometry(&m).unwrap();
        assert!((g.cos_theta2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_fisher_normal_case() {
        let m = two_group([0.0, 0.0], [1.0, 0.5]);
        let d = DVector::from_vec(vec![1.0, 0.5]);
        let delta = linalg::inv_quad_form(&linalg::cholesky(m.omega(), "").unwrap(), &d).sqrt();
        let e = misclassification_exact_fisher(&m).unwrap();
        let want = norm_cdf(-delta / 2.0);
        assert!((e[0] - want).abs() < 1e-9 && (e[1] - want).abs() < 1e-9);
    }

    #[test]
    fn exact_fisher_agrees_with_owen_t() {
        let m = two_group([3.0, 1.0], [0.8, 0.1]);
        let e = misclassification_exact_fisher(&m).unwrap();
        let sigma = linalg::cholesky(&m.fisher_covariance(), "").unwrap();
        let (m1, m2) = (m.fisher_mean(0), m.fisher_mean(1));
        let a = sigma.solve(&(&m1 - &m2));
        let t = 0.5 * a.dot(&(&m1 + &m2));
        let amat = DMatrix::from_column_slice(2, 1, a.as_slice());
        let p1 = transform::affine(&m.population(0).unwrap(), &amat).unwrap();
        let p2 = transform::affine(&m.population(1).unwrap(), &amat).unwrap();
        let c1 = dist::cdf_uv(t, p1.xi()[0], p1.scale()[0], p1.alpha()[0]);
        let c2 = 1.0 - dist::cdf_uv(t, p2.xi()[0], p2.scale()[0], p2.alpha()[0]);
        assert!((e[0] - c1).abs() < 1e-8, "{} {}", e[0], c1);
        assert!((e[1] - c2).abs() < 1e-8, "{} {}", e[1], c2);
    }

    #[test]
    fn orthogonal_direction_error_rate() {
        let config = SweepConfig::new(1);
        let m = sweep_model(&config, PI / 2.0).unwrap();
        let e = misclassification_exact_fisher(&m).unwrap();
        let want = norm_cdf(-0.5 / 0.6f64.sqrt());
        assert!((e[0] - want).abs() < 1e-9 && (e[1] - want).abs() < 1e-9);
        assert_eq!(format!("{:.4}", want), "0.2593");
    }

    #[test]
    fn sweep_fisher_rates_match_reference() {
        // scipy skewnorm tail probabilities of the projected scores
        let config = SweepConfig::new(1);
        let cases = [
            (0, 0.22816981474886644, 0.28313124212176083),
            (3, 0.23531422985059086, 0.2650188706256263),
            (6, 0.2556708117598571, 0.2590361655239928),
        ];
        for (j, p1, p2) in cases {
            let m = sweep_model(&config, PI * j as f64 / 16.0).unwrap();
            let e = misclassification_exact_fisher(&m).unwrap();
            assert!((e[0] - p1).abs() < 1e-8 && (e[1] - p2).abs() < 1e-8, "{j}: {e:?}");
        }
    }

    #[test]
    fn mirrored_directions_swap_groups() {
        let config = SweepConfig::new(1);
        let a = misclassification_exact_fisher(&sweep_model(&config, 0.0).unwrap()).unwrap();
        let b = misclassification_exact_fisher(&sweep_model(&config, PI).unwrap()).unwrap();
        assert!((a[0] - b[1]).abs() < 1e-9 && (a[1] - b[0]).abs() < 1e-9);
    }

    #[test]
    fn mc_is_reproducible_and_matches_exact() {
        let m = two_group([3.0, 1.0], [0.8, 0.1]);
        let opts = McOptions { n_rep: 20_000, chunks: 8, exec: Execution::Parallel };
        let a = misclassification_mc(&m, SeededStream::new(7, 0), &opts).unwrap();
        let b = misclassification_mc(&m, SeededStream::new(7, 0), &McOptions { exec: Execution::Sequential, ..opts }).unwrap();
        assert_eq!(a, b);
        let e = misclassification_exact_fisher(&m).unwrap();
        for i in 0..2 {
            assert!((a.fisher[i] - e[i]).abs() < 4.0 * a.fisher_se[i]);
        }
    }

    #[test]
    fn raising_a_prior_grows_its_region() {
        let m = two_group([2.0, -3.0], [0.5, 0.9]);
        let grid = DMatrix::from_fn(41 * 41, 2, |i, j| if j == 0 { -3.0 + 0.15 * (i / 41) as f64 } else { -3.0 + 0.15 * (i % 41) as f64 });
        for rule in [Rule::Likelihood, Rule::Fisher] {
            let mut prev: Option<Vec<usize>> = None;
            for p in [0.2, 0.35, 0.5, 0.65, 0.8] {
                let alloc = classify_rows(&m.with_priors(vec![p, 1.0 - p]).unwrap(), &grid, rule).unwrap();
                if let Some(prev) = &prev {
                    assert!(prev.iter().zip(&alloc).all(|(a, b)| *a != 0 || *b == 0));
                }
                prev = Some(alloc);
            }
        }
    }

    #[test]
    fn group_count_errors() {
        let omega = DMatrix::identity(2, 2);
        let one = DiscrimModel::new(vec![DVector::zeros(2)], omega.clone(), DVector::zeros(2), vec![1.0]);
        assert!(matches!(one, Err(SnError::GroupCount { .. })));
        let three = DiscrimModel::equal_priors(vec![DVector::zeros(2); 3], omega, DVector::zeros(2)).unwrap();
        assert!(matches!(linearity_conditions(&three), Err(SnError::GroupCount { .. })));
        let y = probes(10, 3);
        assert!(matches!(train(&y, &[0; 10], &TrainOptions::default()), Err(SnError::GroupCount { .. })));
    }

    #[test]
    fn model_json_round_trip() {
        let m = two_group([3.0, 1.0], [0.8, 0.1]);
        let s = serde_json::to_string(&m).unwrap();
        assert!(s.contains("\"Omega\""));
        let back: DiscrimModel = serde_json::from_str(&s).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), s);
    }

    #[test]
    fn training_recovers_separated_groups() {
        let omega = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
        let alpha = DVector::from_vec(vec![4.0, -2.0]);
        let truth = DiscrimModel::equal_priors(
            vec![DVector::from_vec(vec![0.0, 0.0]), DVector::from_vec(vec![2.0, 1.5])],
            omega,
            alpha,
        )
        .unwrap();
        let n = 300;
        let mut y = DMatrix::zeros(2 * n, 2);
        let mut labels = vec![0; 2 * n];
        for i in 0..2 {
            let s = rvs_sn(&truth.population(i).unwrap(), n, SeededStream::new(11, i as u64)).unwrap();
            y.rows_mut(i * n, n).copy_from(&s);
            labels[i * n..(i + 1) * n].fill(i);
        }
        let t = train(&y, &labels, &TrainOptions::default()).unwrap();
        assert_eq!(t.group_sizes, vec![n, n]);
        assert!((t.model.priors()[0] - 0.5).abs() < 1e-12);
        let pred = classify_rows(&t.model, &y, Rule::Likelihood).unwrap();
        let cm = confusion_matrix(&pred, &labels, 2).unwrap();
        assert_eq!(cm[0][0] + cm[1][0], n);
        let err = (cm[1][0] + cm[0][1]) as f64 / (2 * n) as f64;
        let exact = misclassification_exact_fisher(&truth).unwrap();
        let bound = 0.5 * (exact[0] + exact[1]);
        assert!(err < bound + 3.0 * (bound * (1.0 - bound) / (2 * n) as f64).sqrt(), "{err} vs {bound}");
    }
}
