//! Command-line front end.

pub mod config;

use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::criteria::CriteriaReport;
use crate::error::{Error, Result};
use crate::experiments::{
    lambda_grid, run_criteria_study, run_decomposition_study, run_ridge_ratio_study, Target,
};
use crate::linalg::Matrix;
use crate::smoothers::{fit_xy, Kernel, SmootherSpec};
use config::{RidgeConfig, SmootherConfig, StudyConfig};

#[derive(Debug, Parser)]
#[command(name = "randomx-eval", version, about = "Random-X prediction error studies and covariance-penalty criteria")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate B, V, B⁺ and V⁺ for every scenario of a study config
    Decompose(StudyArgs),
    /// MSE of each criterion as an estimate of Random-X error, relative to OCV
    Criteria(CriteriaArgs),
    /// Ratio of Random-X to Same-X ridge variance over a λ grid
    RidgeRatio(RidgeArgs),
    /// Evaluate every criterion on a CSV data set (last column is the response)
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Write CSV here instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run manifest path (defaults to `<out>.manifest.json` when --out is given)
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Worker threads
    #[arg(long, env = "RANDOMX_EVAL_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct StudyArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Override the master seed of the config
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the replicate count of the config
    #[arg(long)]
    pub reps: Option<usize>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TargetKind {
    /// Expected Random-X error, one value per scenario
    Expected,
    /// Each replicate's own noise-integrated test error
    Conditional,
}

#[derive(Debug, Clone, Args)]
pub struct CriteriaArgs {
    #[command(flatten)]
    pub study: StudyArgs,
    /// What the criteria are scored against
    #[arg(long, value_enum, default_value = "expected")]
    pub target: TargetKind,
}

#[derive(Debug, Clone, Args)]
pub struct RidgeArgs {
    /// JSON with any of n, p, reps, seed, lambda_min, lambda_max, points
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lambda_min: Option<f64>,
    #[arg(long)]
    pub lambda_max: Option<f64>,
    #[arg(long)]
    pub points: Option<usize>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SmootherKind {
    Ls,
    Ridge,
    KernelRidge,
    Knn,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KernelKind {
    Gaussian,
    Linear,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// CSV with a header row; the last column is the response
    #[arg(long)]
    pub data: PathBuf,
    /// Known noise variance; enables cp, rcp, bplus_hat and rcp_plus
    #[arg(long)]
    pub sigma2: Option<f64>,
    #[arg(long, value_enum, default_value = "ls")]
    pub smoother: SmootherKind,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_enum, default_value = "gaussian")]
    pub kernel: KernelKind,
    /// Gaussian bandwidth (median pairwise distance when omitted)
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

/// Provenance record written next to a CSV.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_digest: String,
    pub seed: Option<u64>,
    pub version: String,
    pub started: String,
    pub finished: String,
}

/// SHA-256 of `bytes`, lowercase hex.
pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Formats a float with 17 significant digits, enough to round-trip exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// A CSV table held in memory until the run completes.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(&self.header).map_err(io)?;
        for row in &self.rows {
            w.write_record(row).map_err(io)?;
        }
        w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }

    pub fn from_csv(bytes: &[u8]) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().from_reader(bytes);
        let parse = |e: csv::Error| Error::Parse {
            row: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        };
        let header = r.headers().map_err(parse)?.iter().map(String::from).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|r| r.iter().map(String::from).collect()).map_err(parse))
            .collect::<Result<_>>()?;
        Ok(Self { header, rows })
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

fn in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        if t == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(f)
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

struct Outcome {
    table: Table,
    digest: String,
    seed: Option<u64>,
}

fn emit(command: &str, output: &OutputArgs, started: String, outcome: Outcome) -> Result<()> {
    let bytes = outcome.table.to_csv()?;
    match &output.out {
        Some(path) => std::fs::write(path, &bytes)?,
        None => std::io::stdout().lock().write_all(&bytes)?,
    }
    let manifest_path = output.manifest.clone().or_else(|| {
        output.out.as_ref().map(|p| {
            let mut s = p.clone().into_os_string();
            s.push(".manifest.json");
            PathBuf::from(s)
        })
    });
    if let Some(path) = manifest_path {
        let manifest = RunManifest {
            command: command.to_string(),
            config_digest: outcome.digest,
            seed: outcome.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            started,
            finished: now(),
        };
        let text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        std::fs::write(path, text + "\n")?;
    }
    Ok(())
}

fn load_study(args: &StudyArgs) -> Result<(StudyConfig, String)> {
    let text = read_text(&args.config)?;
    let mut study = StudyConfig::from_json(&text)?;
    if let Some(seed) = args.seed {
        study.seed = seed;
    }
    if let Some(reps) = args.reps {
        study.reps = reps;
    }
    Ok((study, digest(text.as_bytes())))
}

pub fn cmd_decompose(args: &StudyArgs) -> Result<Table> {
    Ok(decompose_outcome(args)?.table)
}

fn decompose_outcome(args: &StudyArgs) -> Result<Outcome> {
    let (study, digest) = load_study(args)?;
    let scenarios = study.scenarios()?;
    let smoother = study.smoother.to_spec()?;
    let estimates = in_pool(args.output.threads, || run_decomposition_study(&scenarios, &smoother))?;
    let mut table = Table::new(&[
        "scenario", "covariates", "mean", "n", "p", "sigma", "B", "se_B", "V", "se_V", "Bplus",
        "se_Bplus", "Vplus", "se_Vplus", "errS", "errR",
    ]);
    for (s, e) in scenarios.iter().zip(&estimates) {
        let mut row = vec![
            s.name.clone(),
            s.covariates.name().to_string(),
            s.mean.name().to_string(),
            s.n.to_string(),
            s.p.to_string(),
        ];
        row.extend(
            [s.noise.sigma, e.b, e.se_b, e.v, e.se_v, e.bplus, e.se_bplus, e.vplus, e.se_vplus, e.err_s, e.err_r]
                .map(fmt_f64),
        );
        table.rows.push(row);
    }
    Ok(Outcome { table, digest, seed: Some(study.seed) })
}

pub fn cmd_criteria(args: &CriteriaArgs) -> Result<Table> {
    Ok(criteria_outcome(args)?.table)
}

fn criteria_outcome(criteria_args: &CriteriaArgs) -> Result<Outcome> {
    let args = &criteria_args.study;
    let target = match criteria_args.target {
        TargetKind::Expected => Target::Expected,
        TargetKind::Conditional => Target::Conditional,
    };
    let (study, digest) = load_study(args)?;
    if !matches!(study.smoother, SmootherConfig::LeastSquares) {
        return Err(Error::Config("smoother: the criteria study uses least_squares only".into()));
    }
    let scenarios = study.scenarios()?;
    let mut table = Table::new(&["scenario", "method", "mse", "bias2", "variance", "rel_to_ocv"]);
    for s in &scenarios {
        let rows = in_pool(args.output.threads, || run_criteria_study(s, target))?;
        for r in rows {
            let mut row = vec![s.name.clone(), r.method.to_string()];
            row.extend([r.mse, r.bias2, r.variance, r.rel_to_ocv].map(fmt_f64));
            table.rows.push(row);
        }
    }
    Ok(Outcome { table, digest, seed: Some(study.seed) })
}

/// Resolved ridge-study settings: flags override the config file, which overrides defaults.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RidgeSettings {
    pub n: usize,
    pub p: usize,
    pub reps: usize,
    pub seed: u64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub points: usize,
}

pub fn ridge_settings(args: &RidgeArgs) -> Result<RidgeSettings> {
    let file = match &args.config {
        Some(path) => RidgeConfig::from_json(&read_text(path)?)?,
        None => RidgeConfig::default(),
    };
    let s = RidgeSettings {
        n: args.n.or(file.n).unwrap_or(300),
        p: args.p.or(file.p).unwrap_or(100),
        reps: args.reps.or(file.reps).unwrap_or(100),
        seed: args.seed.or(file.seed).unwrap_or(20160815),
        lambda_min: args.lambda_min.or(file.lambda_min).unwrap_or(1.0),
        lambda_max: args.lambda_max.or(file.lambda_max).unwrap_or(1e6),
        points: args.points.or(file.points).unwrap_or(40),
    };
    if s.p == 0 {
        return Err(Error::Config("p must be at least 1".into()));
    }
    if s.p >= s.n {
        return Err(Error::Config(format!("p must be below n, got n = {}, p = {}", s.n, s.p)));
    }
    if s.reps < 2 {
        return Err(Error::Config(format!(
            "reps must be at least 2 for a confidence band, got {}",
            s.reps
        )));
    }
    Ok(s)
}

pub fn cmd_ridge_ratio(args: &RidgeArgs) -> Result<Table> {
    Ok(ridge_outcome(args)?.table)
}

fn ridge_outcome(args: &RidgeArgs) -> Result<Outcome> {
    let s = ridge_settings(args)?;
    let grid = lambda_grid(s.lambda_min, s.lambda_max, s.points)?;
    let curve = in_pool(args.output.threads, || run_ridge_ratio_study(s.n, s.p, &grid, s.reps, s.seed))?;
    let mut table = Table::new(&["lambda", "ratio", "ci_low", "ci_high", "theory_limit"]);
    for k in 0..grid.len() {
        table.rows.push(
            [curve.lambdas[k], curve.ratio[k], curve.ci_low[k], curve.ci_high[k], curve.theoretical_limit]
                .map(fmt_f64)
                .to_vec(),
        );
    }
    let settings = serde_json::to_vec(&s).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    Ok(Outcome { table, digest: digest(&settings), seed: Some(s.seed) })
}

/// Reads a numeric CSV whose last column is the response. Parse errors carry the line number.
pub fn read_dataset(bytes: &[u8]) -> Result<(Matrix, Vec<f64>)> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
    let line_of = |e: &csv::Error| e.position().map_or(0, |p| p.line() as usize);
    let width = reader
        .headers()
        .map_err(|e| Error::Parse { row: line_of(&e), message: e.to_string() })?
        .len();
    if width < 2 {
        return Err(Error::Parse {
            row: 1,
            message: "need at least one covariate column and a response column".into(),
        });
    }
    let mut values = Vec::new();
    let mut y = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse { row: line_of(&e), message: e.to_string() })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row: line,
                message: format!("column {} is not a number: {field:?}", j + 1),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse { row: line, message: format!("column {} is not finite", j + 1) });
            }
            if j + 1 == width {
                y.push(v);
            } else {
                values.push(v);
            }
        }
    }
    if y.is_empty() {
        return Err(Error::Parse { row: 2, message: "no data rows".into() });
    }
    let x = Matrix::from_row_major(y.len(), width - 1, values)?;
    Ok((x, y))
}

fn eval_spec(args: &EvalArgs) -> Result<SmootherSpec> {
    let need_lambda = || {
        args.lambda
            .ok_or_else(|| Error::Config("--lambda is required for this smoother".into()))
    };
    let spec = match args.smoother {
        SmootherKind::Ls => SmootherSpec::LeastSquares,
        SmootherKind::Ridge => SmootherSpec::Ridge { lambda: need_lambda()? },
        SmootherKind::KernelRidge => SmootherSpec::KernelRidge {
            lambda: need_lambda()?,
            kernel: match args.kernel {
                KernelKind::Gaussian => Kernel::Gaussian { bandwidth: args.bandwidth },
                KernelKind::Linear => Kernel::Linear,
            },
        },
        SmootherKind::Knn => SmootherSpec::Knn {
            k: args.k.ok_or_else(|| Error::Config("--k is required for knn".into()))?,
        },
    };
    spec.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(spec)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<Table> {
    Ok(eval_outcome(args)?.table)
}

fn eval_outcome(args: &EvalArgs) -> Result<Outcome> {
    let bytes = std::fs::read(&args.data)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", args.data.display())))?;
    let spec = eval_spec(args)?;
    if let Some(s2) = args.sigma2 {
        if !(s2 >= 0.0) || !s2.is_finite() {
            return Err(Error::Config(format!("--sigma2 must be nonnegative, got {s2}")));
        }
    }
    let (x, y) = read_dataset(&bytes)?;
    let fit = fit_xy(&spec, &x, &y)?;
    let report = CriteriaReport::compute(&fit, &y, args.sigma2)?;
    for (name, reason) in &report.unavailable {
        eprintln!("warning: {name} omitted: {reason}");
    }
    let mut table = Table::new(&["key", "value"]);
    for (k, v) in report.entries() {
        table.rows.push(vec![k.to_string(), fmt_f64(v)]);
    }
    Ok(Outcome { table, digest: digest(&bytes), seed: None })
}

/// Runs a parsed command line, writing CSV and manifest.
pub fn run(cli: &Cli) -> Result<()> {
    let started = now();
    match &cli.command {
        Command::Decompose(a) => emit("decompose", &a.output, started, decompose_outcome(a)?),
        Command::Criteria(a) => emit("criteria", &a.study.output, started, criteria_outcome(a)?),
        Command::RidgeRatio(a) => emit("ridge-ratio", &a.output, started, ridge_outcome(a)?),
        Command::Eval(a) => emit("eval", &a.output, started, eval_outcome(a)?),
    }
}

/// Process exit status for an error: 2 for input problems, 3 for numeric failures.
pub fn exit_code(error: &Error) -> i32 {
    if error.is_numeric() {
        3
    } else {
        2
    }
}
