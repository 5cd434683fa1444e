//! The `argd` command line.
//!
//! Exit codes: 0 ok, 2 config error, 3 numerical divergence, 4 I/O or
//! format error, 5 internal invariant violation.

pub mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::json;
use thiserror::Error;

pub use config::{Experiment, ExperimentConfig, ExperimentKind};
pub use output::{write_atomic, CsvWriter};

use crate::adapter::{self, AdapterError};
use crate::dynamics::{self, DynamicsError};
use crate::exec::Execution;
use crate::linalg::{gaussian_matrix, read_matrix_file, svd, write_matrix_file, LinalgError};
use crate::lowrank::{self, LowRankError};
use crate::metrics;
use crate::network::make_synthetic;
use crate::train::{self, TrainError};

pub const SEED_ENV: &str = "ARGD_SEED";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("divergence: {0}")]
    Divergence(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Divergence(_) => 3,
            CliError::Io(_) | CliError::Format(_) => 4,
            CliError::Internal(_) => 5,
        }
    }
}

impl From<LinalgError> for CliError {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::Io(_) => CliError::Io(e.to_string()),
            LinalgError::Format(_) => CliError::Format(e.to_string()),
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Divergence { .. } => CliError::Divergence(e.to_string()),
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<DynamicsError> for CliError {
    fn from(e: DynamicsError) -> Self {
        match e {
            DynamicsError::Divergence { .. } => CliError::Divergence(e.to_string()),
            DynamicsError::InvalidSystem(_)
            | DynamicsError::NegativeEigenvalue(_)
            | DynamicsError::NoSteps
            | DynamicsError::NoDistinctPair { .. }
            | DynamicsError::InsufficientTail { .. }
            | DynamicsError::DegenerateStart => CliError::Config(e.to_string()),
            DynamicsError::Linalg(inner) => inner.into(),
        }
    }
}

impl From<AdapterError> for CliError {
    fn from(e: AdapterError) -> Self {
        match e {
            AdapterError::ShapeMismatch { .. } => CliError::Format(e.to_string()),
            AdapterError::InvalidTolerance(_) => CliError::Config(e.to_string()),
            AdapterError::Linalg(inner) => inner.into(),
            AdapterError::InvalidRank { .. } => CliError::Internal(e.to_string()),
        }
    }
}

impl From<LowRankError> for CliError {
    fn from(e: LowRankError) -> Self {
        match e {
            LowRankError::Linalg(inner) => inner.into(),
            other => CliError::Internal(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "argd", version, about = "Adaptive low-rank gradient training toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a synthetic MLP and write the trace, checkpoints and summary.
    Train {
        config: PathBuf,
        /// Overrides [experiment] out_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate reversible gradient dynamics and fit the rank-one decay.
    Dynamics {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time the randomized range finder against a full SVD.
    SsrfBench {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Factorize the difference of two checkpoints into a low-rank adapter.
    ExtractAdapter {
        pre: PathBuf,
        ft: PathBuf,
        #[arg(long, default_value_t = adapter::DEFAULT_REL_TOL)]
        rel_tol: f64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

/// Reads the seed override from the environment.
pub fn seed_override() -> Result<Option<u64>, CliError> {
    match std::env::var(SEED_ENV) {
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(CliError::Config(format!("{SEED_ENV}: {e}"))),
        Ok(v) => v
            .trim()
            .parse::<u64>()
            .map(Some)
            .map_err(|e| CliError::Config(format!("{SEED_ENV}='{v}': {e}"))),
    }
}

/// Parses arguments, runs the command and reports errors on stderr.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(written) => {
            for path in written {
                println!("wrote {}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("argd: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// Runs one command, returning the files written.
pub fn run(command: Command) -> Result<Vec<PathBuf>, CliError> {
    let load = |path: &Path, kind, out: Option<PathBuf>| -> Result<ExperimentConfig, CliError> {
        let mut cfg = config::load(path, kind, seed_override()?)?;
        if let Some(out) = out {
            cfg.out_dir = out;
        }
        Ok(cfg)
    };
    match command {
        Command::Train { config, out } => cmd_train(&load(&config, ExperimentKind::Train, out)?),
        Command::Dynamics { config, out } => cmd_dynamics(&load(&config, ExperimentKind::Dynamics, out)?),
        Command::SsrfBench { config, out } => cmd_ssrf_bench(&load(&config, ExperimentKind::SsrfBench, out)?),
        Command::ExtractAdapter { pre, ft, rel_tol, out } => cmd_extract_adapter(&pre, &ft, rel_tol, &out),
    }
}

/// Runs `f` once per seed (in parallel for seed grids) and gathers the
/// written paths in seed order. A single seed writes straight into `out_dir`.
fn for_each_seed<F>(cfg: &ExperimentConfig, f: F) -> Result<Vec<PathBuf>, CliError>
where
    F: Fn(u64, &Path) -> Result<Vec<PathBuf>, CliError> + Sync + Send,
{
    let dirs: Vec<PathBuf> = if cfg.seeds.len() == 1 {
        vec![cfg.out_dir.clone()]
    } else {
        cfg.seeds.iter().map(|s| cfg.out_dir.join(format!("seed_{s}"))).collect()
    };
    for dir in &dirs {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    let exec = if cfg.seeds.len() > 1 { Execution::default() } else { Execution::Sequential };
    let results = exec.map_collect(cfg.seeds.len(), |i| f(cfg.seeds[i], &dirs[i]));
    let mut written = Vec::new();
    for r in results {
        written.extend(r?);
    }
    Ok(written)
}

fn json_bytes(value: &impl serde::Serialize) -> Result<Vec<u8>, CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>, CliError> {
    let Experiment::Train(exp) = &cfg.experiment else {
        return Err(CliError::Internal("train command with non-train config".into()));
    };
    for_each_seed(cfg, |seed, dir| {
        let mut spec = exp.spec.clone();
        spec.seed = seed;
        let mut tc = exp.train.clone();
        tc.hp.seed = seed;
        let (d_in, d_out) = (spec.layer_dims[0], *spec.layer_dims.last().expect("validated"));
        let data = make_synthetic(exp.data.kind, d_in, d_out, exp.data.samples, seed)
            .map_err(|e| CliError::Config(e.to_string()))?;
        let layers = spec.num_layers();
        let outcome = train::train(&spec, &tc, &data.batch, Execution::for_work(spec.layer_dims.iter().product()))?;

        let mut csv = CsvWriter::new(&["step", "layer_id", "rank", "eta_ratio", "grad_fnorm", "proj_grad_fnorm", "refresh_flag", "loss"]);
        for r in &outcome.records {
            csv.row(&[
                r.step.to_string(),
                r.layer_id.to_string(),
                r.rank.to_string(),
                r.eta_ratio.to_string(),
                r.grad_fnorm.to_string(),
                r.proj_grad_fnorm.to_string(),
                u8::from(r.refresh_flag).to_string(),
                r.loss.to_string(),
            ]);
        }
        let mut written = vec![csv.finish(&dir.join("trace.csv"), &cfg.hash)?];
        for (j, w) in outcome.weights.iter().enumerate() {
            let path = dir.join(format!("layer_{j}.argd"));
            write_matrix_file(&path, w)?;
            written.push(path);
        }
        let summary = metrics::summarize(&outcome.layer_traces).map_err(|e| CliError::Internal(e.to_string()))?;
        let mut value = serde_json::to_value(&summary).map_err(|e| CliError::Internal(e.to_string()))?;
        value["final_loss"] = json!(outcome.final_loss);
        value["steps_run"] = json!(outcome.losses.len());
        value["converged_at"] = json!(outcome.converged_at);
        value["layers_count"] = json!(layers);
        value["config_sha256"] = json!(cfg.hash);
        let path = dir.join("summary.json");
        write_atomic(&path, &json_bytes(&value)?)?;
        written.push(path);
        Ok(written)
    })
}

pub fn cmd_dynamics(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>, CliError> {
    let Experiment::Dynamics(exp) = &cfg.experiment else {
        return Err(CliError::Internal("dynamics command with non-dynamics config".into()));
    };
    for_each_seed(cfg, |seed, dir| {
        let sys = dynamics::make_system(exp.n, exp.m, exp.count, &exp.spectrum, exp.alpha, seed)?;
        let trace = dynamics::simulate(&sys, exp.steps)?;
        let report = dynamics::analyze(&sys, &trace)?;
        let mut csv = CsvWriter::new(&["step", "grad_fnorm", "kappa", "stable_rank"]);
        for s in &trace.steps {
            csv.row(&[s.step.to_string(), s.grad_fnorm.to_string(), s.kappa.to_string(), s.stable_rank.to_string()]);
        }
        let trace_path = csv.finish(&dir.join("trace.csv"), &cfg.hash)?;
        let report_path = dir.join("decay_report.json");
        write_atomic(&report_path, &json_bytes(&report)?)?;
        Ok(vec![trace_path, report_path])
    })
}

fn median_ms(mut samples: Vec<f64>) -> f64 {
    samples.sort_by(f64::total_cmp);
    samples[samples.len() / 2]
}

pub fn cmd_ssrf_bench(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>, CliError> {
    let Experiment::SsrfBench(exp) = &cfg.experiment else {
        return Err(CliError::Internal("ssrf-bench command with non-bench config".into()));
    };
    for_each_seed(cfg, |seed, dir| {
        let mut csv = CsvWriter::new(&["n", "m", "r", "ssrf_ms", "svd_ms", "ssrf_residual", "oracle_residual"]);
        for (k, &(n, m)) in exp.sizes.iter().enumerate() {
            let a = gaussian_matrix(n, m, seed.wrapping_add(k as u64));
            let mut svd_times = Vec::with_capacity(exp.repeats);
            let mut spectrum = Vec::new();
            for _ in 0..exp.repeats {
                let start = Instant::now();
                spectrum = svd(&a)?.s;
                svd_times.push(start.elapsed().as_secs_f64() * 1e3);
            }
            let svd_ms = median_ms(svd_times);
            for &r in &exp.ranks {
                if r > n.min(m) {
                    return Err(CliError::Config(format!("rank {r} exceeds min({n}, {m})")));
                }
                let mut times = Vec::with_capacity(exp.repeats);
                let mut basis = None;
                for _ in 0..exp.repeats {
                    let start = Instant::now();
                    basis = Some(lowrank::ssrf(&a, r, seed)?.basis);
                    times.push(start.elapsed().as_secs_f64() * 1e3);
                }
                let q = basis.expect("repeats >= 1");
                let ssrf_residual = a.sub(&q.matmul(&q.t_matmul(&a)?)?)?.fro_norm();
                let oracle_residual = spectrum[r..].iter().map(|s| s * s).sum::<f64>().sqrt();
                csv.row(&[
                    n.to_string(),
                    m.to_string(),
                    r.to_string(),
                    format!("{:.3}", median_ms(times)),
                    format!("{svd_ms:.3}"),
                    ssrf_residual.to_string(),
                    oracle_residual.to_string(),
                ]);
            }
        }
        Ok(vec![csv.finish(&dir.join("ssrf_bench.csv"), &cfg.hash)?])
    })
}

pub fn cmd_extract_adapter(pre: &Path, ft: &Path, rel_tol: f64, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let w_pre = read_matrix_file(pre)?;
    let w_ft = read_matrix_file(ft)?;
    let extraction = adapter::extract(&w_pre, &w_ft, rel_tol)?;
    std::fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    let mut written = Vec::new();
    if let Some(pair) = &extraction.pair {
        for (name, m) in [("adapter_a.argd", &pair.a), ("adapter_b.argd", &pair.b)] {
            let path = out.join(name);
            write_matrix_file(&path, m)?;
            written.push(path);
        }
    }
    let path = out.join("adapter_report.json");
    write_atomic(&path, &json_bytes(&extraction.report_json())?)?;
    written.push(path);
    Ok(written)
}
