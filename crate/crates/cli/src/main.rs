//! `skewnorm` command line. Results go to stdout as JSON or CSV, messages
//! to stderr.
//!
//! Exit codes: 0 success, 2 malformed input, 3 a boundary fit was moved
//! inward, 4 the computation failed.

mod data;
mod params;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde_json::json;

use skewnorm::diagnostics;
use skewnorm::discrim::{self, DiscrimModel, Rule, SweepConfig, TrainOptions};
use skewnorm::fit_mv::{self, FitOptionsMv, MvRegressionData};
use skewnorm::fit_uv::{self, Convergence, FitOptionsUv, RegressionData};
use skewnorm::parallel::Execution;
use skewnorm::sample::{rvs_sn_chunked, SeededStream};
use skewnorm::transform;
use skewnorm::SnError;

use data::CsvDataset;
use params::Parametrization;

pub enum Failure {
    Input(anyhow::Error),
    Compute(anyhow::Error),
}

impl From<SnError> for Failure {
    fn from(e: SnError) -> Self {
        match e {
            SnError::Singular(_) | SnError::Rank(_) | SnError::Degenerate(_) => Failure::Compute(e.into()),
            _ => Failure::Input(e.into()),
        }
    }
}

fn input<T>(r: anyhow::Result<T>) -> Result<T, Failure> {
    r.map_err(Failure::Input)
}

#[derive(Parser)]
#[command(name = "skewnorm", version, about = "Multivariate skew-normal fitting, sampling and discrimination")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Univariate regression with skew-normal errors.
    FitUv(FitUvArgs),
    /// Multivariate regression with skew-normal errors.
    FitMv(FitMvArgs),
    /// Draw from a skew-normal law.
    Sample(SampleArgs),
    /// Rewrite a parameter file in another parametrization.
    Convert(ConvertArgs),
    /// Law of the free coordinates given values of the others.
    Conditional(ConditionalArgs),
    /// Train a discriminant model or allocate new points.
    #[command(subcommand)]
    Classify(ClassifyCommand),
    /// Misclassification rates over directions of the location shift.
    DiscrimSim(DiscrimSimArgs),
    /// Probability plot data for a fitted or given law.
    Healy(HealyArgs),
}

#[derive(Args)]
struct FitUvArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    response: String,
    #[arg(long, value_delimiter = ',')]
    covariates: Vec<String>,
    /// Report only this parametrization; both by default.
    #[arg(long, value_enum)]
    param: Option<UvParam>,
    /// Loglikelihood drop used to move a boundary estimate inward.
    #[arg(long, default_value_t = 2.0)]
    drop: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum UvParam {
    Cp,
    Dp,
}

#[derive(Args)]
struct FitMvArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    responses: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    covariates: Vec<String>,
    /// Loglikelihood drop for a boundary fit; 2k by default.
    #[arg(long)]
    drop: Option<f64>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    seed: u64,
    /// Independent substreams; the draws depend on this but not on threads.
    #[arg(long, default_value_t = 1)]
    streams: usize,
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long)]
    params: PathBuf,
    #[arg(long, value_enum)]
    to: Parametrization,
}

#[derive(Args)]
struct ConditionalArgs {
    #[arg(long)]
    params: PathBuf,
    /// Comma-separated `coordinate=value` pairs; a coordinate is a name or
    /// a 0-based index.
    #[arg(long)]
    given: String,
    /// Report the skew-normal matching the first three cumulants.
    #[arg(long)]
    approx: bool,
}

#[derive(Subcommand)]
enum ClassifyCommand {
    /// Fit common (Omega, alpha) and one location per label.
    Train(TrainArgs),
    /// Allocate the rows of a CSV file under both rules.
    Predict(PredictArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    label: String,
    #[arg(long, value_delimiter = ',', required = true)]
    responses: Vec<String>,
    /// Prior weights in order of first appearance of the labels; observed
    /// frequencies by default.
    #[arg(long, value_delimiter = ',')]
    priors: Vec<f64>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Columns to use; those named in the model file by default.
    #[arg(long, value_delimiter = ',')]
    responses: Vec<String>,
}

#[derive(Args)]
struct DiscrimSimArgs {
    #[arg(long, default_value_t = 100_000)]
    nrep: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 17)]
    steps: usize,
    #[arg(long, default_value_t = 0.4)]
    rho: f64,
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [3.0, 3.0])]
    alpha: Vec<f64>,
}

#[derive(Args)]
struct HealyArgs {
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Data columns; the parameter names by default.
    #[arg(long, value_delimiter = ',')]
    columns: Vec<String>,
    /// `probability` gives nominal against observed probabilities,
    /// `distance` gives chi-square quantiles against sorted distances.
    #[arg(long, value_enum, default_value_t = HealyScale::Probability)]
    scale: HealyScale,
}

#[derive(Clone, Copy, ValueEnum)]
enum HealyScale {
    Probability,
    Distance,
}

/// Output text and exit status.
struct Outcome {
    text: String,
    code: u8,
}

impl Outcome {
    fn ok(text: String) -> Self {
        Self { text, code: 0 }
    }

    fn json(v: &impl serde::Serialize, code: u8) -> Result<Self, Failure> {
        let mut text = serde_json::to_string_pretty(v).map_err(|e| Failure::Compute(e.into()))?;
        text.push('\n');
        Ok(Self { text, code })
    }
}

fn convergence_code(c: Convergence) -> u8 {
    match c {
        Convergence::Converged => 0,
        Convergence::Boundary | Convergence::BoundaryResolved => 3,
        Convergence::MaxIter => 4,
    }
}

fn fit_uv_cmd(a: FitUvArgs) -> Result<Outcome, Failure> {
    let ds = input(CsvDataset::read(&a.data))?;
    let y = input(ds.column(&a.response))?;
    let x = input(ds.design(&a.covariates))?;
    let data = RegressionData::new(y, x)?;
    let mut f = fit_uv::fit(&data, &FitOptionsUv::default())?;
    if f.convergence == Convergence::Boundary {
        eprintln!("estimate on the boundary; moving inward by a loglikelihood drop of {}", a.drop);
        f = fit_uv::boundary_resolve(&f, &data, a.drop)?;
    }
    let code = convergence_code(f.convergence);
    let mut v = serde_json::to_value(&f).map_err(|e| Failure::Compute(e.into()))?;
    match a.param {
        Some(UvParam::Cp) => {
            v.as_object_mut().unwrap().remove("dp");
        }
        Some(UvParam::Dp) => {
            let o = v.as_object_mut().unwrap();
            o.remove("cp");
            o.remove("se_cp");
        }
        None => {}
    }
    Outcome::json(&v, code)
}

fn fit_mv_cmd(a: FitMvArgs) -> Result<Outcome, Failure> {
    let ds = input(CsvDataset::read(&a.data))?;
    let y = input(ds.matrix(&a.responses))?;
    let x = input(ds.design(&a.covariates))?;
    let data = MvRegressionData::new(y, x)?;
    let opts = FitOptionsMv::default();
    let mut f = fit_mv::fit_mv(&data, &opts)?;
    if f.boundary {
        let drop = a.drop.unwrap_or_else(|| fit_mv::default_drop_mv(data.k()));
        eprintln!("estimate on the boundary; moving inward by a loglikelihood drop of {drop}");
        f = fit_mv::boundary_resolve_mv(&f, &data, drop, &opts)?;
    }
    let code = convergence_code(f.convergence);
    let report = diagnostics::fit_report(&f, &data)?;
    let mut v = serde_json::to_value(&f).map_err(|e| Failure::Compute(e.into()))?;
    v["responses"] = json!(a.responses);
    v["report"] = serde_json::to_value(report).map_err(|e| Failure::Compute(e.into()))?;
    Outcome::json(&v, code)
}

fn csv_line(out: &mut String, fields: impl IntoIterator<Item = String>) {
    let fields: Vec<String> = fields.into_iter().collect();
    out.push_str(&fields.join(","));
    out.push('\n');
}

fn sample_cmd(a: SampleArgs) -> Result<Outcome, Failure> {
    let p = params::read(&a.params)?;
    if a.streams == 0 {
        return Err(Failure::Input(anyhow!("--streams must be positive")));
    }
    let y = rvs_sn_chunked(&p.dp, a.n, SeededStream::new(a.seed, 0), a.streams, Execution::Parallel)?;
    let mut out = String::new();
    csv_line(&mut out, p.names.iter().cloned());
    for r in y.row_iter() {
        csv_line(&mut out, r.iter().map(|x| x.to_string()));
    }
    Ok(Outcome::ok(out))
}

fn convert_cmd(a: ConvertArgs) -> Result<Outcome, Failure> {
    let p = params::read(&a.params)?;
    Outcome::json(&params::write(&p.dp, Some(&p.names), a.to), 0)
}

fn parse_given(pairs: &str, names: &[String]) -> anyhow::Result<(Vec<usize>, Vec<f64>)> {
    let (mut idx, mut vals) = (Vec::new(), Vec::new());
    for part in pairs.split(',').filter(|s| !s.trim().is_empty()) {
        let (k, v) = part.split_once('=').with_context(|| format!("{part:?} is not coordinate=value"))?;
        let (k, v) = (k.trim(), v.trim());
        let j = match names.iter().position(|n| n == k) {
            Some(j) => j,
            None => k.parse::<usize>().with_context(|| format!("unknown coordinate {k:?}"))?,
        };
        idx.push(j);
        vals.push(v.parse::<f64>().with_context(|| format!("{v:?} is not a number"))?);
    }
    Ok((idx, vals))
}

fn conditional_cmd(a: ConditionalArgs) -> Result<Outcome, Failure> {
    let p = params::read(&a.params)?;
    let (given, vals) = input(parse_given(&a.given, &p.names))?;
    let law = transform::conditional_exact(&p.dp, &given, &DVector::from_vec(vals))?;
    let free: Vec<String> = law.free.iter().map(|&j| p.names[j].clone()).collect();
    let v = if a.approx {
        let s = transform::conditional_sn_approx(&law)?;
        json!({
            "feasible": s.feasible,
            "matched_cumulant_error": s.matched_cumulant_error,
            "params": params::write(&s.dp, Some(&free), Parametrization::Dp),
        })
    } else {
        let mut v = serde_json::to_value(&law).map_err(|e| Failure::Compute(e.into()))?;
        v["names"] = json!(free);
        v["mean"] = json!(law.mean().iter().copied().collect::<Vec<_>>());
        v["variance"] = json!(params::rows(&law.variance()));
        v
    };
    Outcome::json(&v, 0)
}

#[derive(serde::Serialize, serde::Deserialize)]
struct ModelFile {
    responses: Vec<String>,
    labels: Vec<String>,
    model: DiscrimModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fit: Option<fit_mv::FitResultMv>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    group_sizes: Option<Vec<usize>>,
}

fn train_cmd(a: TrainArgs) -> Result<Outcome, Failure> {
    let ds = input(CsvDataset::read(&a.data))?;
    let y = input(ds.matrix(&a.responses))?;
    let raw = input(ds.labels(&a.label))?;
    let mut labels: Vec<String> = Vec::new();
    let groups: Vec<usize> = raw
        .iter()
        .map(|l| match labels.iter().position(|x| x == l) {
            Some(i) => i,
            None => {
                labels.push(l.clone());
                labels.len() - 1
            }
        })
        .collect();
    let priors = if a.priors.is_empty() { None } else { Some(a.priors) };
    let t = discrim::train(&y, &groups, &TrainOptions { priors, ..TrainOptions::default() })?;
    let code = convergence_code(t.fit.convergence);
    let file = ModelFile { responses: a.responses, labels, model: t.model, fit: Some(t.fit), group_sizes: Some(t.group_sizes) };
    Outcome::json(&file, code)
}

fn predict_cmd(a: PredictArgs) -> Result<Outcome, Failure> {
    let text = input(std::fs::read_to_string(&a.model).with_context(|| format!("reading {}", a.model.display())))?;
    let m: ModelFile = input(serde_json::from_str(&text).with_context(|| format!("parsing {}", a.model.display())))?;
    if m.labels.len() != m.model.groups() {
        return Err(Failure::Input(anyhow!("{} labels for {} groups", m.labels.len(), m.model.groups())));
    }
    let cols = if a.responses.is_empty() { m.responses.clone() } else { a.responses };
    let ds = input(CsvDataset::read(&a.data))?;
    let y = input(ds.matrix(&cols))?;
    let lik = discrim::classify_rows(&m.model, &y, Rule::Likelihood)?;
    let fis = discrim::classify_rows(&m.model, &y, Rule::Fisher)?;
    let mut out = String::from("likelihood,fisher\n");
    for (l, f) in lik.iter().zip(&fis) {
        csv_line(&mut out, [m.labels[*l].clone(), m.labels[*f].clone()]);
    }
    Ok(Outcome::ok(out))
}

fn discrim_sim_cmd(a: DiscrimSimArgs) -> Result<Outcome, Failure> {
    if a.steps < 2 || a.nrep == 0 {
        return Err(Failure::Input(anyhow!("need --steps ≥ 2 and --nrep ≥ 1")));
    }
    let mut config = SweepConfig::new(a.seed);
    config.steps = a.steps;
    config.rho = a.rho;
    config.alpha = [a.alpha[0], a.alpha[1]];
    config.mc.n_rep = a.nrep;
    let rows = discrim::direction_sweep(&config)?;
    let mut out = String::new();
    csv_line(
        &mut out,
        [
            "angle_deg", "p1_likelihood", "p1_fisher", "p2_likelihood", "p2_fisher", "agreement", "cos_eta_whitened", "cos_eta_diff",
            "p1_likelihood_se", "p2_likelihood_se", "p1_fisher_mc", "p2_fisher_mc", "agreement_se",
        ]
        .map(String::from),
    );
    for r in rows {
        csv_line(
            &mut out,
            [
                r.angle_deg, r.p1_likelihood, r.p1_fisher, r.p2_likelihood, r.p2_fisher, r.agreement, r.cos_eta_whitened, r.cos_eta_diff,
                r.mc.likelihood_se[0], r.mc.likelihood_se[1], r.mc.fisher[0], r.mc.fisher[1], r.mc.agreement_se,
            ]
            // prints -0 as 0
            .map(|x| (x + 0.0).to_string()),
        );
    }
    Ok(Outcome::ok(out))
}

fn healy_cmd(a: HealyArgs) -> Result<Outcome, Failure> {
    let p = params::read(&a.params)?;
    let cols = if a.columns.is_empty() { p.names.clone() } else { a.columns };
    let ds = input(CsvDataset::read(&a.data))?;
    let y = input(ds.matrix(&cols))?;
    let h = diagnostics::healy(&p.dp, &y)?;
    let text = match a.scale {
        HealyScale::Probability => diagnostics::healy_csv(&h),
        HealyScale::Distance => {
            let mut out = String::from("chi2_quantile,distance\n");
            for (q, d) in h.chi2_quantiles.iter().zip(&h.sorted_distances) {
                csv_line(&mut out, [q.to_string(), d.to_string()]);
            }
            out
        }
    };
    eprintln!("largest deviation from the bisector: {}", h.max_abs_dev);
    Ok(Outcome::ok(text))
}

fn run(cli: Cli) -> Result<Outcome, Failure> {
    match cli.command {
        Command::FitUv(a) => fit_uv_cmd(a),
        Command::FitMv(a) => fit_mv_cmd(a),
        Command::Sample(a) => sample_cmd(a),
        Command::Convert(a) => convert_cmd(a),
        Command::Conditional(a) => conditional_cmd(a),
        Command::Classify(ClassifyCommand::Train(a)) => train_cmd(a),
        Command::Classify(ClassifyCommand::Predict(a)) => predict_cmd(a),
        Command::DiscrimSim(a) => discrim_sim_cmd(a),
        Command::Healy(a) => healy_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(o) => {
            let mut stdout = std::io::stdout().lock();
            if stdout.write_all(o.text.as_bytes()).and_then(|_| stdout.flush()).is_err() {
                return ExitCode::from(4);
            }
            ExitCode::from(o.code)
        }
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Compute(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(4)
        }
    }
}
