//! INI experiment configs.
//!
//! Every key has a default; unknown sections or keys are rejected so typos
//! fail loudly. The config hash is the SHA-256 of the canonical form (sorted
//! `section.key=value` lines after the seed override is applied).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;
use sha2::{Digest, Sha256};

use super::CliError;
use crate::dynamics::SpectrumSpec;
use crate::lowrank::BasisMode;
use crate::network::{Activation, Loss, NetworkSpec, SyntheticKind};
use crate::optimizer::{Hyperparams, InnerExit, RankPolicy, SecondMomentTransform, UpdateRule};
use crate::train::{OptimizerKind, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Train,
    Dynamics,
    SsrfBench,
}

impl ExperimentKind {
    fn name(self) -> &'static str {
        match self {
            ExperimentKind::Train => "train",
            ExperimentKind::Dynamics => "dynamics",
            ExperimentKind::SsrfBench => "ssrf_bench",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub kind: SyntheticKind,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainExperiment {
    pub spec: NetworkSpec,
    pub data: DataConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsExperiment {
    pub n: usize,
    pub m: usize,
    pub count: usize,
    pub alpha: f64,
    pub steps: usize,
    pub spectrum: SpectrumSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchExperiment {
    pub sizes: Vec<(usize, usize)>,
    pub ranks: Vec<usize>,
    pub repeats: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Experiment {
    Train(TrainExperiment),
    Dynamics(DynamicsExperiment),
    SsrfBench(BenchExperiment),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Hex SHA-256 of the canonical config.
    pub hash: String,
}

/// Parsed key-value pairs; values are removed as they are consumed.
struct RawConfig {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RawConfig {
    fn parse(text: &str) -> Result<Self, CliError> {
        let ini = Ini::load_from_str(text).map_err(|e| bad(format!("parse error: {e}")))?;
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        for (name, props) in &ini {
            let name = name.unwrap_or("").trim().to_ascii_lowercase();
            let entry = sections.entry(name.clone()).or_default();
            for (k, v) in props.iter() {
                let key = k.trim().to_ascii_lowercase();
                if entry.insert(key.clone(), v.trim().to_string()).is_some() {
                    return Err(bad(format!("duplicate key [{name}] {key}")));
                }
            }
        }
        sections.retain(|_, v| !v.is_empty());
        if let Some(keys) = sections.get("") {
            let key = keys.keys().next().expect("nonempty");
            return Err(bad(format!("key '{key}' outside any section")));
        }
        Ok(Self { sections })
    }

    fn set(&mut self, section: &str, key: &str, value: String) {
        self.sections.entry(section.into()).or_default().insert(key.into(), value);
    }

    fn remove(&mut self, section: &str, key: &str) {
        if let Some(s) = self.sections.get_mut(section) {
            s.remove(key);
        }
    }

    fn canonical(&self) -> String {
        let mut out = String::new();
        for (section, keys) in &self.sections {
            for (k, v) in keys {
                out.push_str(&format!("{section}.{k}={v}\n"));
            }
        }
        out
    }

    fn take_raw(&mut self, section: &str, key: &str) -> Option<String> {
        self.sections.get_mut(section).and_then(|s| s.remove(key))
    }

    fn take_parsed<T, F>(&mut self, section: &str, key: &str, default: T, parse: F) -> Result<T, CliError>
    where
        F: FnOnce(&str) -> Result<T, String>,
    {
        match self.take_raw(section, key) {
            None => Ok(default),
            Some(v) => parse(&v).map_err(|e| bad(format!("[{section}] {key} = '{v}': {e}"))),
        }
    }

    fn take<T>(&mut self, section: &str, key: &str, default: T) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        self.take_parsed(section, key, default, |v| v.parse::<T>().map_err(|e| e.to_string()))
    }

    fn take_list<T>(&mut self, section: &str, key: &str, default: Vec<T>) -> Result<Vec<T>, CliError>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        self.take_parsed(section, key, default, parse_list)
    }

    /// Errors on anything not consumed.
    fn finish(self) -> Result<(), CliError> {
        for (section, keys) in &self.sections {
            if let Some(k) = keys.keys().next() {
                return Err(bad(format!("unknown key [{section}] {k}")));
            }
        }
        Ok(())
    }
}

fn parse_list<T>(v: &str) -> Result<Vec<T>, String>
where
    T: FromStr,
    T::Err: std::fmt::Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| format!("'{s}': {e}")))
        .collect()
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (n, m) = s.split_once('x').ok_or_else(|| format!("size '{s}' is not NxM"))?;
    let n = n.trim().parse::<usize>().map_err(|e| e.to_string())?;
    let m = m.trim().parse::<usize>().map_err(|e| e.to_string())?;
    if n == 0 || m == 0 {
        return Err(format!("size '{s}' has a zero dimension"));
    }
    Ok((n, m))
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(format!("'{other}' is not a boolean")),
    }
}

fn config_hash(canonical: &str) -> String {
    Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Loads and validates a config for `kind`; `seed_override` replaces any
/// configured seed(s).
pub fn load(path: &Path, kind: ExperimentKind, seed_override: Option<u64>) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse(&text, kind, seed_override)
}

pub fn parse(text: &str, kind: ExperimentKind, seed_override: Option<u64>) -> Result<ExperimentConfig, CliError> {
    let mut raw = RawConfig::parse(text)?;
    if let Some(seed) = seed_override {
        raw.remove("experiment", "seeds");
        raw.set("experiment", "seed", seed.to_string());
    }
    let hash = config_hash(&raw.canonical());

    let declared = raw.take_raw("experiment", "kind");
    if let Some(d) = declared {
        if d != kind.name() {
            return Err(bad(format!("config declares kind '{d}' but command is '{}'", kind.name())));
        }
    }
    let seed: u64 = raw.take("experiment", "seed", 0)?;
    let seeds = raw.take_list("experiment", "seeds", vec![seed])?;
    if seeds.is_empty() {
        return Err(bad("[experiment] seeds is empty"));
    }
    let out_dir = PathBuf::from(raw.take("experiment", "out_dir", String::from("argd_out"))?);

    let experiment = match kind {
        ExperimentKind::Train => Experiment::Train(train_section(&mut raw)?),
        ExperimentKind::Dynamics => Experiment::Dynamics(dynamics_section(&mut raw)?),
        ExperimentKind::SsrfBench => Experiment::SsrfBench(bench_section(&mut raw)?),
    };
    raw.finish()?;
    Ok(ExperimentConfig { experiment, seeds, out_dir, hash })
}

fn train_section(raw: &mut RawConfig) -> Result<TrainExperiment, CliError> {
    let dims: Vec<usize> = raw.take_list("network", "dims", vec![16, 32, 8])?;
    let slope: f64 = raw.take("network", "leaky_slope", 0.01)?;
    let activation = raw.take_parsed("network", "activation", Activation::Relu, |v| match v {
        "relu" => Ok(Activation::Relu),
        "leaky_relu" => Ok(Activation::LeakyRelu(slope)),
        "identity" => Ok(Activation::Identity),
        other => Err(format!("unknown activation '{other}'")),
    })?;
    let loss = raw.take_parsed("network", "loss", Loss::Mse, |v| match v {
        "mse" => Ok(Loss::Mse),
        "cross_entropy" => Ok(Loss::CrossEntropy),
        other => Err(format!("unknown loss '{other}'")),
    })?;
    let sum_gradients = raw.take_parsed("network", "sum_gradients", false, parse_bool)?;
    let mut spec = NetworkSpec::new(dims.clone(), activation, loss, 0).map_err(|e| bad(e.to_string()))?;
    spec.sum_gradients = sum_gradients;

    let rank: usize = raw.take("data", "rank", 2)?;
    let noise: f64 = raw.take("data", "noise", 0.0)?;
    let classes: usize = raw.take("data", "classes", *dims.last().expect("validated"))?;
    let separation: f64 = raw.take("data", "separation", 3.0)?;
    let samples: usize = raw.take("data", "samples", 256)?;
    let default_kind = match loss {
        Loss::Mse => "lowrank_regression",
        Loss::CrossEntropy => "classification",
    };
    let kind = raw.take_parsed("data", "kind", default_kind.to_string(), |v| Ok(v.to_string()))?;
    let kind = match kind.as_str() {
        "lowrank_regression" => SyntheticKind::LowRankRegression { rank, noise },
        "classification" => SyntheticKind::Classification { classes, separation },
        other => return Err(bad(format!("[data] kind = '{other}': expected lowrank_regression or classification"))),
    };
    // Dry-run the generator so invalid dimensions surface as config errors.
    crate::network::make_synthetic(kind, dims[0], *dims.last().expect("validated"), samples.max(1), 0)
        .map_err(|e| bad(e.to_string()))?;
    if samples == 0 {
        return Err(bad("[data] samples must be positive"));
    }

    let d = Hyperparams::default();
    let s = "optimizer";
    let optimizer = raw.take_parsed(s, "name", OptimizerKind::Adarankgrad, |v| v.parse())?;
    let interval: usize = raw.take(s, "interval", 200)?;
    let inner_exit = raw.take_parsed(s, "inner_exit", d.inner_exit, |v| match v {
        "adaptive" => Ok(InnerExit::AdaptiveVarsigma2),
        "fixed_interval" => Ok(InnerExit::FixedInterval(interval)),
        other => Err(format!("expected adaptive or fixed_interval, got '{other}'")),
    })?;
    let hp = Hyperparams {
        alpha: raw.take(s, "alpha", d.alpha)?,
        beta1: raw.take(s, "beta1", d.beta1)?,
        beta2: raw.take(s, "beta2", d.beta2)?,
        epsilon: raw.take(s, "epsilon", d.epsilon)?,
        eta_th: raw.take(s, "eta_th", d.eta_th)?,
        r_init: raw.take(s, "r_init", d.r_init)?,
        r_max: raw.take(s, "r_max", d.r_max)?,
        varsigma1: raw.take(s, "varsigma1", d.varsigma1)?,
        inner_exit,
        max_inner_steps: raw.take(s, "max_inner_steps", d.max_inner_steps)?,
        seed: 0,
        basis_mode: raw.take_parsed(s, "basis_mode", d.basis_mode, |v| match v {
            "ssrf" => Ok(BasisMode::Ssrf),
            "exact_svd" => Ok(BasisMode::ExactSvd),
            other => Err(format!("expected ssrf or exact_svd, got '{other}'")),
        })?,
        update: raw.take_parsed(s, "update", d.update, |v| match v {
            "adam" => Ok(UpdateRule::Adam),
            "sgd" => Ok(UpdateRule::Sgd),
            other => Err(format!("expected adam or sgd, got '{other}'")),
        })?,
        weight_decay: raw.take(s, "weight_decay", d.weight_decay)?,
        rank_policy: raw.take_parsed(s, "rank", d.rank_policy, |v| match v {
            "adaptive" => Ok(RankPolicy::Adaptive),
            n => n.parse::<usize>().map(RankPolicy::Fixed).map_err(|e| format!("expected adaptive or a rank: {e}")),
        })?,
        transform_moments: raw.take_parsed(s, "transform_moments", d.transform_moments, parse_bool)?,
        v_transform: raw.take_parsed(s, "v_transform", d.v_transform, |v| match v {
            "linear" => Ok(SecondMomentTransform::Linear),
            "squared" => Ok(SecondMomentTransform::Squared),
            other => Err(format!("expected linear or squared, got '{other}'")),
        })?,
        reset_bias_on_refresh: raw.take_parsed(s, "reset_bias_on_refresh", d.reset_bias_on_refresh, parse_bool)?,
    };
    hp.validate().map_err(|e| bad(e.to_string()))?;
    let defaults = TrainConfig::default();
    let train = TrainConfig {
        optimizer,
        hp,
        steps: raw.take("train", "steps", defaults.steps)?,
        batch_size: raw.take("train", "batch_size", defaults.batch_size)?,
        galore_rank: raw.take(s, "galore_rank", defaults.galore_rank)?,
        galore_interval: raw.take(s, "galore_interval", defaults.galore_interval)?,
        stop_on_convergence: raw.take_parsed("train", "stop_on_convergence", defaults.stop_on_convergence, parse_bool)?,
    };
    if train.steps == 0 {
        return Err(bad("[train] steps must be positive"));
    }
    if optimizer == OptimizerKind::Galore && (train.galore_rank == 0 || train.galore_interval == 0) {
        return Err(bad("[optimizer] galore_rank and galore_interval must be positive"));
    }
    Ok(TrainExperiment { spec, data: DataConfig { kind, samples }, train })
}

fn dynamics_section(raw: &mut RawConfig) -> Result<DynamicsExperiment, CliError> {
    let s = "dynamics";
    let exp = DynamicsExperiment {
        n: raw.take(s, "n", 6)?,
        m: raw.take(s, "m", 6)?,
        count: raw.take(s, "count", 2)?,
        alpha: raw.take(s, "alpha", 0.01)?,
        steps: raw.take(s, "steps", 1000)?,
        spectrum: SpectrumSpec {
            b: raw.take_list(s, "b_spectrum", vec![1.0, 2.0])?,
            c: raw.take_list(s, "c_spectrum", vec![1.0])?,
            shared_basis: raw.take_parsed(s, "shared_basis", true, parse_bool)?,
        },
    };
    if exp.n == 0 || exp.m == 0 || exp.count == 0 || exp.steps == 0 {
        return Err(bad("[dynamics] n, m, count and steps must be positive"));
    }
    if !(exp.alpha > 0.0 && exp.alpha.is_finite()) {
        return Err(bad(format!("[dynamics] alpha must be positive, got {}", exp.alpha)));
    }
    Ok(exp)
}

fn bench_section(raw: &mut RawConfig) -> Result<BenchExperiment, CliError> {
    let s = "bench";
    let sizes = raw.take_parsed(s, "sizes", vec![(64, 64), (128, 128)], |v| {
        v.split(',').map(str::trim).filter(|x| !x.is_empty()).map(parse_size).collect()
    })?;
    let exp = BenchExperiment { sizes, ranks: raw.take_list(s, "ranks", vec![4, 8])?, repeats: raw.take(s, "repeats", 3)? };
    if exp.sizes.is_empty() || exp.ranks.is_empty() || exp.repeats == 0 {
        return Err(bad("[bench] sizes, ranks and repeats must be nonempty/positive"));
    }
    if exp.ranks.contains(&0) {
        return Err(bad("[bench] ranks must be positive"));
    }
    Ok(exp)
}
