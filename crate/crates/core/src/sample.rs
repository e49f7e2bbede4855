//! Random variates from `SN_k(ξ, Ω, α)` and from skew-elliptical densities
//! `2 f(y) G(aᵀy)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::kernels::{norm_cdf, zeta0};
use crate::linalg::{self, Chol};
use crate::parallel::{chunk_sizes, map_indexed, Execution};
use crate::param::{CorrelationMatrix, DpParams};
use crate::{Result, SnError};

/// A reproducible random stream: ChaCha20 keyed by `seed`, on stream `stream_id`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeededStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl SeededStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha20Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }

    /// Stream `stream_id + offset` under the same seed.
    pub fn child(&self, offset: u64) -> Self {
        Self { seed: self.seed, stream_id: self.stream_id.wrapping_add(offset) }
    }
}

/// Precomputed pieces of the sign-flip representation: with
/// `(X₀, X) ~ N_{k+1}(0, Ω*)`, `Ω* = [[1, δᵀ], [δ, Ω̄]]`, the variable
/// `sign(X₀)·X` is `SN_k(Ω̄, α)`.
#[derive(Debug, Clone)]
pub struct SnSampler {
    xi: DVector<f64>,
    scale: DVector<f64>,
    chol: DMatrix<f64>,
}

impl SnSampler {
    pub fn new(dp: &DpParams) -> Result<Self> {
        let k = dp.dim();
        let delta = dp.delta().into_vector();
        let ob = dp.omega_bar().matrix();
        let star = DMatrix::from_fn(k + 1, k + 1, |i, j| match (i, j) {
            (0, 0) => 1.0,
            (0, j) => delta[j - 1],
            (i, 0) => delta[i - 1],
            (i, j) => ob[(i - 1, j - 1)],
        });
        let chol: Chol = linalg::cholesky(&star, "augmented correlation matrix")
            .map_err(|_| SnError::Domain("shape too close to the boundary to sample".into()))?;
        Ok(Self { xi: dp.xi().clone(), scale: dp.scale().clone(), chol: chol.l() })
    }

    pub fn dim(&self) -> usize {
        self.xi.len()
    }

    /// One draw into `out`.
    pub fn draw_into<R: Rng + ?Sized>(&self, rng: &mut R, u: &mut DVector<f64>, out: &mut DVector<f64>) {
        let k = self.dim();
        for v in u.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let x0: f64 = self.chol.row(0).dot(&u.transpose());
        let sign = if x0 > 0.0 { 1.0 } else { -1.0 };
        for j in 0..k {
            let row = self.chol.row(j + 1);
            let mut x = 0.0;
            for c in 0..=j + 1 {
                x += row[c] * u[c];
            }
            out[j] = self.xi[j] + self.scale[j] * sign * x;
        }
    }

    /// `n` draws as rows.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> DMatrix<f64> {
        let k = self.dim();
        let mut m = DMatrix::zeros(n, k);
        let mut u = DVector::zeros(k + 1);
        let mut y = DVector::zeros(k);
        for i in 0..n {
            self.draw_into(rng, &mut u, &mut y);
            m.row_mut(i).copy_from(&y.transpose());
        }
        m
    }
}

/// `n` exact draws from `SN_k(ξ, Ω, α)` on one stream.
pub fn rvs_sn(dp: &DpParams, n: usize, stream: SeededStream) -> Result<DMatrix<f64>> {
    let sampler = SnSampler::new(dp)?;
    Ok(sampler.draw(&mut stream.rng(), n))
}

/// `n` draws split into `chunks` contiguous blocks; block `j` uses stream
/// `stream.child(j)`. Rows are concatenated in block order, so the output
/// is the same for any execution mode.
pub fn rvs_sn_chunked(
    dp: &DpParams,
    n: usize,
    stream: SeededStream,
    chunks: usize,
    exec: Execution,
) -> Result<DMatrix<f64>> {
    let sampler = SnSampler::new(dp)?;
    let sizes = chunk_sizes(n, chunks);
    let parts = map_indexed(sizes.len(), exec, |j| sampler.draw(&mut stream.child(j as u64).rng(), sizes[j]));
    Ok(stack_rows(&parts, dp.dim()))
}

pub(crate) fn stack_rows(parts: &[DMatrix<f64>], k: usize) -> DMatrix<f64> {
    let n: usize = parts.iter().map(|p| p.nrows()).sum();
    let mut out = DMatrix::zeros(n, k);
    let mut at = 0;
    for p in parts {
        out.rows_mut(at, p.nrows()).copy_from(p);
        at += p.nrows();
    }
    out
}

/// Symmetric base density of a skew-elliptical law, centred at 0 with
/// scatter matrix `Ω̄`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BaseDensity {
    Normal,
    StudentT { nu: f64 },
}

/// Distribution function `G` of a variable symmetric about 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SkewWeight {
    NormalCdf,
    Logistic,
}

impl SkewWeight {
    pub fn ln_cdf(&self, x: f64) -> f64 {
        match self {
            Self::NormalCdf => zeta0(x) - std::f64::consts::LN_2,
            // −log(1 + e⁻ˣ) written to avoid overflow for large |x|
            Self::Logistic => -((-x).max(0.0) + (-x.abs()).exp().ln_1p()),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Self::NormalCdf => norm_cdf(x),
            Self::Logistic => 1.0 / (1.0 + (-x).exp()),
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::NormalCdf => rng.sample(StandardNormal),
            Self::Logistic => {
                let u: f64 = rng.random_range(f64::EPSILON..1.0);
                (u / (1.0 - u)).ln()
            }
        }
    }
}

/// Density `2 f(y) G(aᵀy)` with `f` elliptical about 0.
#[derive(Debug, Clone)]
pub struct SkewSpec {
    pub base: BaseDensity,
    pub scatter: CorrelationMatrix,
    pub weight: SkewWeight,
    pub direction: DVector<f64>,
}

impl SkewSpec {
    pub fn new(base: BaseDensity, scatter: CorrelationMatrix, weight: SkewWeight, direction: DVector<f64>) -> Result<Self> {
        crate::error::dim_check("direction length", scatter.dim(), direction.len())?;
        if let BaseDensity::StudentT { nu } = base {
            if !(nu > 0.0) {
                return Err(SnError::Domain(format!("degrees of freedom must be positive, got {nu}")));
            }
        }
        Ok(Self { base, scatter, weight, direction })
    }

    pub fn dim(&self) -> usize {
        self.direction.len()
    }

    fn base_logpdf(&self, y: &DVector<f64>) -> f64 {
        let k = self.dim() as f64;
        let chol = self.scatter.cholesky();
        let q = linalg::inv_quad_form(chol, y);
        let half_logdet = 0.5 * linalg::log_det(chol);
        match self.base {
            BaseDensity::Normal => -0.5 * k * (2.0 * std::f64::consts::PI).ln() - half_logdet - 0.5 * q,
            BaseDensity::StudentT { nu } => {
                use statrs::function::gamma::ln_gamma;
                ln_gamma(0.5 * (nu + k)) - ln_gamma(0.5 * nu) - 0.5 * k * (nu * std::f64::consts::PI).ln() - half_logdet
                    - 0.5 * (nu + k) * (q / nu).ln_1p()
            }
        }
    }
}

/// log of `2 f(y) G(aᵀy)`.
pub fn skew_elliptical_logpdf(spec: &SkewSpec, y: &DVector<f64>) -> Result<f64> {
    crate::error::dim_check("point length", spec.dim(), y.len())?;
    Ok(std::f64::consts::LN_2 + spec.base_logpdf(y) + spec.weight.ln_cdf(spec.direction.dot(y)))
}

/// Draws by sign flip: `Y ~ f`, `X ~ G` independent, emit `Y` if
/// `X < aᵀY` and `−Y` otherwise.
pub fn rvs_skew_elliptical(spec: &SkewSpec, n: usize, stream: SeededStream) -> Result<DMatrix<f64>> {
    let k = spec.dim();
    let l = spec.scatter.cholesky().l();
    let chi = match spec.base {
        BaseDensity::StudentT { nu } => {
            Some(ChiSquared::new(nu).map_err(|e| SnError::Domain(format!("degrees of freedom: {e}")))?)
        }
        BaseDensity::Normal => None,
    };
    let mut rng = stream.rng();
    let mut out = DMatrix::zeros(n, k);
    let mut u = DVector::zeros(k);
    for i in 0..n {
        for v in u.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let mut y = &l * &u;
        if let (Some(chi), BaseDensity::StudentT { nu }) = (&chi, &spec.base) {
            let v: f64 = chi.sample(&mut rng);
            y /= (v / nu).sqrt();
        }
        let x = spec.weight.draw(&mut rng);
        if x >= spec.direction.dot(&y) {
            y = -y;
        }
        out.row_mut(i).copy_from(&y.transpose());
    }
    Ok(out)
}
