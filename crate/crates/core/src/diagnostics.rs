//! Goodness of fit: χ²_k probability plots of Mahalanobis distances and a
//! summary report for multivariate fits.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::fit_mv::{loglik_normal_mv, FitResultMv, LrTestMv, MvRegressionData};
use crate::param::{cp_convert_mv, DpParams};
use crate::{stats, transform, Result, SnError};

/// Both plot variants for one fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealyData {
    /// `F_{χ²_k}(d₍ᵢ₎)`, nondecreasing.
    pub sorted_probs: Vec<f64>,
    /// `i/n`, `i = 1..n`.
    pub nominal: Vec<f64>,
    pub max_abs_dev: f64,
    /// Sorted distances `d₍ᵢ₎`.
    pub sorted_distances: Vec<f64>,
    /// χ²_k quantiles at `(i − ½)/n`, to plot against `sorted_distances`.
    pub chi2_quantiles: Vec<f64>,
}

/// Distances of the rows of `y` under `dp`, mapped through the χ²_k
/// distribution function and sorted.
pub fn healy(dp: &DpParams, y: &DMatrix<f64>) -> Result<HealyData> {
    if y.nrows() == 0 {
        return Err(SnError::Input("no observations".into()));
    }
    let k = dp.dim();
    let mut d = transform::mahalanobis(dp, y)?;
    d.sort_by(f64::total_cmp);
    let n = d.len();
    let nf = n as f64;
    let sorted_probs: Vec<f64> = d.iter().map(|&x| stats::chi2_cdf(x, k)).collect();
    let nominal: Vec<f64> = (1..=n).map(|i| i as f64 / nf).collect();
    let max_abs_dev = sorted_probs.iter().zip(&nominal).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    let chi2_quantiles = (1..=n).map(|i| stats::chi2_quantile((i as f64 - 0.5) / nf, k)).collect();
    Ok(HealyData { sorted_probs, nominal, max_abs_dev, sorted_distances: d, chi2_quantiles })
}

/// Residuals `y − Xβ̂` of a fit against `SN_k(0, Ω̂, α̂)`.
pub fn healy_fit(fit: &FitResultMv, data: &MvRegressionData) -> Result<HealyData> {
    let resid = data.y() - data.x() * fit.beta_matrix();
    let dp = DpParams::new(DVector::zeros(data.k()), fit.omega_matrix(), DVector::from_vec(fit.alpha.clone()))?;
    healy(&dp, &resid)
}

/// Plot data as two columns under the header `nominal,observed`.
pub fn healy_csv(h: &HealyData) -> String {
    let mut s = String::from("nominal,observed\n");
    for (q, p) in h.nominal.iter().zip(&h.sorted_probs) {
        s.push_str(&format!("{q},{p}\n"));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub loglik: f64,
    pub lr: LrTestMv,
    pub healy_max_abs_dev: f64,
    /// Marginal skewness of each fitted component.
    pub gamma1: Vec<f64>,
    pub boundary: bool,
}

pub fn fit_report(fit: &FitResultMv, data: &MvRegressionData) -> Result<FitReport> {
    let k = data.k();
    let ln = loglik_normal_mv(data)?;
    let statistic = (2.0 * (fit.loglik - ln)).max(0.0);
    let lr = LrTestMv { statistic, df: k, p_value: 1.0 - stats::chi2_cdf(statistic, k), loglik_sn: fit.loglik, loglik_normal: ln };
    let h = healy_fit(fit, data)?;
    let dp = DpParams::new(DVector::zeros(k), fit.omega_matrix(), DVector::from_vec(fit.alpha.clone()))?;
    Ok(FitReport {
        loglik: fit.loglik,
        lr,
        healy_max_abs_dev: h.max_abs_dev,
        gamma1: cp_convert_mv(&dp).iter().map(|c| c.gamma1).collect(),
        boundary: fit.boundary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit_mv::{fit_mv, FitOptionsMv};
    use crate::sample::{rvs_sn, SeededStream};

    fn model(alpha: &[f64]) -> DpParams {
        let k = alpha.len();
        let omega = DMatrix::from_fn(k, k, |i, j| if i == j { 1.0 + i as f64 * 0.5 } else { 0.3 });
        DpParams::new(DVector::from_fn(k, |i, _| i as f64 - 1.0), omega, DVector::from_column_slice(alpha)).unwrap()
    }

    #[test]
    fn model_data_lie_on_the_bisector() {
        let dp = model(&[4.0, -1.0, 2.0]);
        let y = rvs_sn(&dp, 10_000, SeededStream::new(3, 0)).unwrap();
        let h = healy(&dp, &y).unwrap();
        assert!(h.max_abs_dev < 0.03, "{}", h.max_abs_dev);
        assert!(h.sorted_probs.windows(2).all(|w| w[0] <= w[1]));
        assert!(h.nominal.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(*h.nominal.last().unwrap(), 1.0);
    }

    #[test]
    fn single_observation() {
        let dp = model(&[1.0, 1.0]);
        let y = DMatrix::from_row_slice(1, 2, &[0.5, 0.5]);
        let h = healy(&dp, &y).unwrap();
        assert_eq!(h.nominal, vec![1.0]);
        assert!((h.max_abs_dev - (1.0 - h.sorted_probs[0])).abs() < 1e-15);
        assert!(healy(&dp, &DMatrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn componentwise_affine_invariance() {
        let dp = model(&[3.0, -2.0]);
        let y = rvs_sn(&dp, 500, SeededStream::new(4, 0)).unwrap();
        let shift = DVector::from_vec(vec![2.0, -7.0]);
        let scale = DVector::from_vec(vec![3.0, -0.5]);
        let yt = DMatrix::from_fn(y.nrows(), 2, |i, j| shift[j] + scale[j] * y[(i, j)]);
        let d = DMatrix::from_diagonal(&scale);
        let alpha = dp.alpha().component_mul(&scale.map(f64::signum));
        let dpt = DpParams::new(&shift + &d * dp.xi(), &d * dp.omega() * &d, alpha).unwrap();
        let a = healy(&dp, &y).unwrap();
        let b = healy(&dpt, &yt).unwrap();
        for (p, q) in a.sorted_probs.iter().zip(&b.sorted_probs) {
            assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn skew_fit_beats_normal_fit() {
        let dp = model(&[6.0, 6.0]);
        let y = rvs_sn(&dp, 800, SeededStream::new(5, 0)).unwrap();
        let data = MvRegressionData::location(y).unwrap();
        let fit = fit_mv(&data, &FitOptionsMv::default()).unwrap();
        let sn = healy_fit(&fit, &data).unwrap();
        let n = data.n() as f64;
        let mean = data.y().row_mean();
        let c = DMatrix::from_fn(data.n(), 2, |i, j| data.y()[(i, j)] - mean[j]);
        let cov = c.transpose() * &c / n;
        let normal = DpParams::new(mean.transpose(), cov, DVector::zeros(2)).unwrap();
        let nh = healy(&normal, data.y()).unwrap();
        assert!(nh.max_abs_dev > sn.max_abs_dev, "{} vs {}", nh.max_abs_dev, sn.max_abs_dev);
        let r = fit_report(&fit, &data).unwrap();
        assert!(r.lr.statistic > 20.0 && r.lr.p_value < 1e-4);
        let truth = cp_convert_mv(&dp);
        for (g, t) in r.gamma1.iter().zip(&truth) {
            assert!((g - t.gamma1).abs() < 0.1, "{g} vs {}", t.gamma1);
        }
        let back: FitReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn normal_data_report() {
        let dp = model(&[0.0, 0.0]);
        let y = rvs_sn(&dp, 600, SeededStream::new(6, 0)).unwrap();
        let data = MvRegressionData::location(y).unwrap();
        let fit = fit_mv(&data, &FitOptionsMv::default()).unwrap();
        let r = fit_report(&fit, &data).unwrap();
        assert!(r.lr.statistic < 13.8, "{}", r.lr.statistic);
        assert!(r.healy_max_abs_dev < 0.08);
    }

    #[test]
    fn csv_layout() {
        let dp = model(&[1.0]);
        let h = healy(&dp, &DMatrix::from_row_slice(2, 1, &[-1.0, 0.3])).unwrap();
        let s = healy_csv(&h);
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "nominal,observed");
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("1,"));
    }
}
