//! Scalar special functions used throughout the crate: the standard normal
//! density and distribution function, the family
//! `ζ_m(x) = dᵐ/dxᵐ log(2Φ(x))` for `m ≤ 4`, and the cumulants of the
//! half-normal distribution.
//!
//! `ζ_0` and its derivatives are evaluated on two branches. Above
//! [`TAIL_CROSSOVER`] they come from `Φ` (via `erfc`) and the recurrences
//!
//! ```text
//! ζ₂ = −ζ₁ (x + ζ₁)
//! ζ₃ = −ζ₂ (x + ζ₁) − ζ₁ (1 + ζ₂)
//! ζ₄ = −ζ₃ (x + 2ζ₁) − 2ζ₂ (1 + ζ₂)
//! ```
//!
//! Below it the recurrences cancel badly, so every order is taken from the
//! asymptotic Mills-ratio series in `w = 1/x²`, manipulated as a power series.
//!
//! Between the crossover and [`CUMULANT_SWITCH`] the recurrences for `ζ₃` and
//! `ζ₄` still lose roughly `x²` in relative precision. There we use
//! `log Φ(x) = log φ(x) + log ∫₀^∞ exp(xw − w²/2) dw`: for `m ≥ 3`, `ζ_m(x)`
//! is the m-th cumulant of the normal `N(x, 1)` truncated to `w > 0`, which
//! quadrature delivers as central moments without cancellation.

use std::f64::consts::{LN_2, PI};

use libm::erfc;

/// Below this point `ζ_m` is evaluated from the asymptotic series.
pub const TAIL_CROSSOVER: f64 = -10.0;

/// Below this point (and above the tail crossover) `ζ₃` and `ζ₄` come from
/// truncated-normal central moments.
pub const CUMULANT_SWITCH: f64 = -1.0;

/// Number of terms kept in the Mills-ratio series.
const SERIES_TERMS: usize = 30;

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal density φ(x).
#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// log φ(x).
#[inline]
pub fn norm_logpdf(x: f64) -> f64 {
    -LN_SQRT_2PI - 0.5 * x * x
}

/// Standard normal distribution function Φ(x), computed through the
/// complementary error function so that the lower tail keeps full relative
/// precision until it underflows.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// log Φ(x), finite for every finite `x`.
#[inline]
pub fn norm_logcdf(x: f64) -> f64 {
    zeta0(x) - LN_2
}

/// Order of a ζ function, restricted to `0..=4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ZetaOrder(u8);

impl ZetaOrder {
    pub const fn new(m: u8) -> Option<Self> {
        if m <= 4 {
            Some(Self(m))
        } else {
            None
        }
    }

    pub const fn get(self) -> u8 {
        self.0
    }
}

impl TryFrom<u8> for ZetaOrder {
    type Error = crate::SnError;

    fn try_from(m: u8) -> Result<Self, Self::Error> {
        Self::new(m).ok_or_else(|| crate::SnError::Domain(format!("zeta order {m} not in 0..=4")))
    }
}

/// `ζ_m(x)` for the given order.
pub fn zeta(order: ZetaOrder, x: f64) -> f64 {
    match order.0 {
        0 => zeta0(x),
        1 => zeta1(x),
        m => zeta_all(x)[m as usize],
    }
}

/// ζ₀(x) = log(2Φ(x)).
pub fn zeta0(x: f64) -> f64 {
    if x < TAIL_CROSSOVER {
        return TailSeries::new(x).zeta0();
    }
    if x > 0.0 {
        LN_2 + (-norm_cdf(-x)).ln_1p()
    } else {
        (2.0 * norm_cdf(x)).ln()
    }
}

/// ζ₁(x) = φ(x)/Φ(x).
pub fn zeta1(x: f64) -> f64 {
    if x < TAIL_CROSSOVER {
        return TailSeries::new(x).zeta1();
    }
    norm_pdf(x) / norm_cdf(x)
}

/// ζ₀ through ζ₄ evaluated together.
pub fn zeta_all(x: f64) -> [f64; 5] {
    if x < TAIL_CROSSOVER {
        return TailSeries::new(x).all();
    }
    let z0 = zeta0(x);
    let z1 = zeta1(x);
    let s = x + z1;
    let z2 = -z1 * s;
    if x < CUMULANT_SWITCH {
        let (z3, z4) = truncated_normal_cumulants(x, s);
        return [z0, z1, z2, z3, z4];
    }
    let z3 = -z2 * s - z1 * (1.0 + z2);
    let z4 = -z3 * (x + 2.0 * z1) - 2.0 * z2 * (1.0 + z2);
    [z0, z1, z2, z3, z4]
}

/// ζ₂(x) alone, without the cost of the higher orders.
pub fn zeta2(x: f64) -> f64 {
    if x < TAIL_CROSSOVER {
        return TailSeries::new(x).all()[2];
    }
    let z1 = zeta1(x);
    -z1 * (x + z1)
}

/// Third and fourth cumulants of `N(x, 1)` truncated to `(0, ∞)`, for
/// `x < 0`. `mean` is `x + ζ₁(x)`, used only as the expansion centre.
fn truncated_normal_cumulants(x: f64, mean: f64) -> (f64, f64) {
    let t = -x;
    // exp(xw − w²/2) < e⁻⁴⁵ beyond this point.
    let upper = -t + (t * t + 90.0).sqrt();
    let scale = 1.0 / t.max(1.0);
    let moment = |j: i32| {
        let f = |w: f64| (x * w - 0.5 * w * w).exp() * (w - mean).powi(j);
        crate::quad::integrate(f, 0.0, upper, 1e-15 * scale.powi(j + 1), 400).0
    };
    let m0 = moment(0);
    let r: Vec<f64> = (1..=4).map(|j| moment(j) / m0).collect();
    // Re-centre on the quadrature mean; the shift r[0] is tiny.
    let d = r[0];
    let c2 = r[1] - d * d;
    let c3 = r[2] - 3.0 * d * r[1] + 2.0 * d.powi(3);
    let c4 = r[3] - 4.0 * d * r[2] + 6.0 * d * d * r[1] - 3.0 * d.powi(4);
    (c3, c4 - 3.0 * c2 * c2)
}

/// Cumulant of order `m` (1..=4) of the half-normal distribution `|N(0,1)|`.
///
/// For `m ≠ 2` this equals `ζ_m(0)`; the second cumulant is `1 + ζ₂(0)`
/// because the half-normal cumulant generating function is `t²/2 + ζ₀(t)`.
pub fn half_normal_cumulant(m: u8) -> Option<f64> {
    let b = (2.0 / PI).sqrt();
    match m {
        1 => Some(b),
        2 => Some(1.0 - 2.0 / PI),
        3 => Some(b * (4.0 / PI - 1.0)),
        4 => Some(4.0 * (2.0 - 6.0 / PI) / PI),
        _ => None,
    }
}

/// Power-series representation of the lower tail, `t = −x > 0`, `w = t⁻²`.
///
/// With `S(w) = Σ (−1)ⁿ (2n−1)!! wⁿ` the Mills ratio is `S(w)/t`, so
/// `ζ₁ = t·Q(w)` with `Q = 1/S`. Writing `Q = 1 + w·Q₁`, `ζ₂ = −Q·Q₁ =: F(w)`
/// and, since `dw/dx = 2w^{3/2}`, `ζ₃ = 2w^{3/2}F′` and
/// `ζ₄ = 6w²F′ + 4w³F″`.
struct TailSeries {
    t: f64,
    w: f64,
}

struct Coefficients {
    s: [f64; SERIES_TERMS],
    q: [f64; SERIES_TERMS],
    f: [f64; SERIES_TERMS],
}

fn coefficients() -> &'static Coefficients {
    use std::sync::OnceLock;
    static COEFFS: OnceLock<Coefficients> = OnceLock::new();
    COEFFS.get_or_init(|| {
        let mut s = [0.0; SERIES_TERMS];
        let mut dfact = 1.0;
        for (n, c) in s.iter_mut().enumerate() {
            if n > 0 {
                dfact *= (2 * n - 1) as f64;
            }
            *c = if n % 2 == 0 { dfact } else { -dfact };
        }
        let mut q = [0.0; SERIES_TERMS];
        q[0] = 1.0;
        for n in 1..SERIES_TERMS {
            q[n] = -(1..=n).map(|j| s[j] * q[n - j]).sum::<f64>();
        }
        // Q₁ has coefficients q[n+1]; F = −Q·Q₁ truncated to SERIES_TERMS − 1.
        let mut f = [0.0; SERIES_TERMS];
        for n in 0..SERIES_TERMS - 1 {
            f[n] = -(0..=n).map(|j| q[j] * q[n - j + 1]).sum::<f64>();
        }
        Coefficients { s, q, f }
    })
}

fn horner(c: &[f64], w: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &v| acc * w + v)
}

impl TailSeries {
    fn new(x: f64) -> Self {
        let t = -x;
        Self { t, w: 1.0 / (t * t) }
    }

    fn zeta0(&self) -> f64 {
        let s = horner(&coefficients().s, self.w);
        LN_2 - 0.5 * self.t * self.t - LN_SQRT_2PI - self.t.ln() + s.ln()
    }

    fn zeta1(&self) -> f64 {
        self.t * horner(&coefficients().q, self.w)
    }

    fn all(&self) -> [f64; 5] {
        let c = coefficients();
        let w = self.w;
        let n = SERIES_TERMS - 1;
        let f = &c.f[..n];
        let f2 = horner(f, w);
        let d1: Vec<f64> = (1..n).map(|k| k as f64 * f[k]).collect();
        let d2: Vec<f64> = (2..n).map(|k| (k * (k - 1)) as f64 * f[k]).collect();
        let fp = horner(&d1, w);
        let fpp = horner(&d2, w);
        let z3 = 2.0 * w * w.sqrt() * fp;
        let z4 = 6.0 * w * w * fp + 4.0 * w * w * w * fpp;
        [self.zeta0(), self.zeta1(), f2, z3, z4]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Frozen from an 80-digit evaluation of log(2Φ), φ/Φ and the ζ
    // recurrences (mpmath); independent of both branches above.
    #[rustfmt::skip]
    const ZETA_ORACLE: &[(f64, [f64; 5])] = &[
        (-40.0, [-8.03915294833193798e+02, 4.00249688472072620e+01, -9.99377331621408627e-01, 3.10174403964862512e-05, 2.31477004389180681e-06]),
        (-35.0, [-6.16281954081362528e+02, 3.50285249705966848e+01, -9.99187644831617372e-01, 4.61948887113619803e-05, 3.93397434398230723e-06]),
        (-30.0, [-4.53628096775783263e+02, 3.00332596674336756e+01, -9.98896228488109883e-01, 7.30999301578443830e-05, 7.24593721098034199e-06]),
        (-25.0, [-3.15946260827460321e+02, 2.50398730120575621e+01, -9.98415158529607161e-01, 1.25590491623747593e-04, 1.48818628458770200e-05]),
    ];

    #[test]
    fn spot_values() {
        assert_eq!(norm_cdf(0.0), 0.5);
        assert!((norm_pdf(0.0) - 0.398_942_280_4).abs() < 1e-10);
        assert!((norm_cdf(-5.0) / 2.866_515_718_791_939e-7 - 1.0).abs() < 1e-12);
        assert_eq!(zeta0(0.0), 0.0);
        assert!((norm_logcdf(0.0) + LN_2).abs() < 1e-15);
        assert!((zeta1(0.0) - (2.0 / PI).sqrt()).abs() < 1e-15);
        assert!((zeta1(-10.0) - 10.098_093_233_962_512).abs() < 1e-9);
        assert!((zeta_all(0.0)[2] + 2.0 / PI).abs() < 1e-15);
    }

    #[test]
    fn tail_rows_match_oracle() {
        for (x, want) in ZETA_ORACLE {
            let got = zeta_all(*x);
            for m in 0..5 {
                let rel = (got[m] - want[m]).abs() / want[m].abs();
                assert!(rel < 1e-10, "x={x} m={m} got={} want={}", got[m], want[m]);
            }
        }
    }

    #[test]
    fn half_normal_cumulants() {
        let z = zeta_all(0.0);
        for m in [1u8, 3, 4] {
            let k = half_normal_cumulant(m).unwrap();
            assert!((k - z[m as usize]).abs() < 1e-15, "m={m}");
        }
        assert!((half_normal_cumulant(2).unwrap() - (1.0 + z[2])).abs() < 1e-15);
        assert!((half_normal_cumulant(3).unwrap() - 0.218_013_614_144_990_16).abs() < 1e-15);
        assert!((half_normal_cumulant(4).unwrap() - 0.114_770_682_054_218_86).abs() < 1e-15);
        assert!(half_normal_cumulant(5).is_none());
    }

    #[test]
    fn order_validation() {
        assert!(ZetaOrder::new(4).is_some());
        assert!(ZetaOrder::new(5).is_none());
        assert!(ZetaOrder::try_from(7u8).is_err());
        assert_eq!(zeta(ZetaOrder::new(0).unwrap(), 1.3), zeta0(1.3));
    }
}
