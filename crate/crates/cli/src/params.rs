//! Parameter files: `{"xi", "Omega", "alpha"}` with an optional
//! `"parametrization"` tag selecting one of three layouts.

use anyhow::{bail, Context};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use skewnorm::param::{self, CorrelationMatrix, CpParamsUv, DpParams, LambdaPsiParams};

use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Parametrization {
    #[default]
    Dp,
    LambdaPsi,
    Cp,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    #[serde(default)]
    parametrization: Parametrization,
    #[serde(default)]
    names: Option<Vec<String>>,
    xi: Option<Vec<f64>>,
    #[serde(rename = "Omega")]
    omega: Option<Vec<Vec<f64>>>,
    alpha: Option<Vec<f64>>,
    scale: Option<Vec<f64>>,
    lambda: Option<Vec<f64>>,
    #[serde(rename = "Psi")]
    psi: Option<Vec<Vec<f64>>>,
    mu: Option<Vec<f64>>,
    sigma: Option<Vec<f64>>,
    gamma1: Option<Vec<f64>>,
}

/// Direct parameters plus the column names used for CSV headers.
pub struct ParamFile {
    pub dp: DpParams,
    pub names: Vec<String>,
}

fn need<T>(v: Option<T>, field: &str, tag: &str) -> anyhow::Result<T> {
    v.with_context(|| format!("\"{tag}\" parameters need \"{field}\""))
}

pub fn matrix(rows: &[Vec<f64>], what: &str) -> anyhow::Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        bail!("{what} is not rectangular");
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

fn from_raw(raw: RawParams) -> anyhow::Result<DpParams> {
    let dp = match raw.parametrization {
        Parametrization::Dp => DpParams::new(
            DVector::from_vec(need(raw.xi, "xi", "dp")?),
            matrix(&need(raw.omega, "Omega", "dp")?, "Omega")?,
            DVector::from_vec(need(raw.alpha, "alpha", "dp")?),
        )?,
        Parametrization::LambdaPsi => {
            let psi = CorrelationMatrix::new(matrix(&need(raw.psi, "Psi", "lambda_psi")?, "Psi")?)?;
            let lp = LambdaPsiParams::new(DVector::from_vec(need(raw.lambda, "lambda", "lambda_psi")?), psi)?;
            let shape = param::lambdapsi_to_dp(&lp);
            DpParams::from_shape(
                DVector::from_vec(need(raw.xi, "xi", "lambda_psi")?),
                DVector::from_vec(need(raw.scale, "scale", "lambda_psi")?),
                &shape,
            )?
        }
        Parametrization::Cp => {
            let (mu, sigma, g) = (need(raw.mu, "mu", "cp")?, need(raw.sigma, "sigma", "cp")?, need(raw.gamma1, "gamma1", "cp")?);
            if mu.len() != 1 || sigma.len() != 1 || g.len() != 1 {
                bail!("\"cp\" parameters are only accepted in one dimension");
            }
            param::cp_to_dp_uv(&CpParamsUv::new(mu[0], sigma[0], g[0])?)?
        }
    };
    Ok(dp)
}

pub fn read(path: &std::path::Path) -> Result<ParamFile, Failure> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(Failure::Input)?;
    let raw: RawParams = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display())).map_err(Failure::Input)?;
    let names = raw.names.clone();
    let dp = from_raw(raw).map_err(Failure::Input)?;
    let names = match names {
        Some(n) if n.len() != dp.dim() => {
            return Err(Failure::Input(anyhow::anyhow!("{} names for dimension {}", n.len(), dp.dim())));
        }
        Some(n) => n,
        None => (1..=dp.dim()).map(|j| format!("y{j}")).collect(),
    };
    Ok(ParamFile { dp, names })
}

/// The parameters in the requested layout. `cp` is componentwise: the
/// marginal centred parameters of each coordinate.
pub fn write(dp: &DpParams, names: Option<&[String]>, to: Parametrization) -> Value {
    let mut v = match to {
        Parametrization::Dp => json!({
            "parametrization": "dp",
            "xi": vec(dp.xi()),
            "Omega": rows(dp.omega()),
            "alpha": vec(dp.alpha()),
        }),
        Parametrization::LambdaPsi => {
            let lp = param::dp_to_lambdapsi(&dp.shape());
            json!({
                "parametrization": "lambda_psi",
                "xi": vec(dp.xi()),
                "scale": vec(dp.scale()),
                "lambda": vec(&lp.lambda),
                "Psi": rows(lp.psi.matrix()),
            })
        }
        Parametrization::Cp => {
            let cp = param::cp_convert_mv(dp);
            json!({
                "parametrization": "cp",
                "mu": cp.iter().map(|c| c.mu).collect::<Vec<_>>(),
                "sigma": cp.iter().map(|c| c.sigma).collect::<Vec<_>>(),
                "gamma1": cp.iter().map(|c| c.gamma1).collect::<Vec<_>>(),
            })
        }
    };
    if let Some(n) = names {
        v["names"] = json!(n);
    }
    v
}
