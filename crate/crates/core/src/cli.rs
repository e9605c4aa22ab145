//! Command-line front end: `verify`, `train`, `sweep` and `diagnose`.
//!
//! Every subcommand resolves a flat `key=value` configuration from built-in
//! defaults, an optional `--config` file, `--set key=value` pairs and the
//! dedicated flags (flags win), validates it before doing any work, and
//! writes the resolved form as `resolved_config.txt` in the output
//! directory. Feeding that file back through `--config` reproduces the run.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::data::{load_idx, make_blobs, Dataset, Split};
use crate::diagnostics::{alignment_sweep, SnrMode, SweepConfig, SweepResult};
use crate::error::Error;
use crate::estimators::{grad_contrast_mc, grad_covariance_mc, ChainStart, McmcSource};
use crate::kernel::{NudgeStrength, Temperature};
use crate::model::LayeredTanhEnergyNet;
use crate::oracle::{exact_grad_j_contrast, exact_grad_j_covariance, random_instance};
use crate::quadrature::QuadratureSpec;
use crate::sampler::{derive_seed, ChainConfig, KernelKind, RelaxConfig};
use crate::train::{metrics_csv, train, Checkpoint, TrainConfig, TrainMethod};
use crate::verify::{
    agreement, gaussian_covariance, gibbs_tv, run_suite, Agreement, Exact, OracleOps, VerifyConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

pub const RESOLVED_CONFIG: &str = "resolved_config.txt";

const TAG_DATA: u64 = 0xda7a;
const TAG_PRETRAIN: u64 = 0x97e7;
const TAG_SWEEP: u64 = 0x5ee9;
const TAG_DIAG: u64 = 0xd1a6;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("check failed: {0}")]
    Check(String),
    #[error(transparent)]
    Runtime(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Check(_) => EXIT_CHECK,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

#[derive(Debug, Parser)]
#[command(name = "thermo-ep", version, about = "Finite-temperature contrastive learning toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Identity and inequality suite on random enumerable instances.
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        n_instances: Option<String>,
    },
    /// Train the layered energy network.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
        /// backprop, ep or path_integral.
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        beta: Option<String>,
    },
    /// Update alignment and perturbation SNR across a nudge grid.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Sampler and estimator checks against enumeration and closed forms.
    Diagnose {
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Flat key=value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long)]
    pub threads: Option<String>,
    /// Override any config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub images: Option<String>,
    #[arg(long)]
    pub labels: Option<String>,
    #[arg(long)]
    pub test_images: Option<String>,
    #[arg(long)]
    pub test_labels: Option<String>,
    #[arg(long)]
    pub limit: Option<String>,
}

/// Resolved flat configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

const COMMON_KEYS: &[(&str, &str)] = &[("seed", "0"), ("threads", "1")];

const VERIFY_KEYS: &[(&str, &str)] = &[
    ("out", "verify_out"),
    ("n_instances", "100"),
    ("min_spins", "2"),
    ("max_spins", "8"),
    ("temperature", "1"),
    ("fd_step", "1e-5"),
    ("trial_distributions", "100"),
];

const DATA_KEYS: &[(&str, &str)] = &[
    ("dataset", "idx"),
    ("images", ""),
    ("labels", ""),
    ("test_images", ""),
    ("test_labels", ""),
    ("limit", "1000"),
    ("test_limit", "500"),
    ("blobs_classes", "3"),
    ("blobs_dim", "2"),
    ("blobs_per_class", "100"),
    ("blobs_test_per_class", "50"),
    ("blobs_spread", "0.3"),
];

const CHAIN_KEYS: &[(&str, &str)] = &[
    ("hidden", "32"),
    ("temperature", "0.01"),
    ("kernel", "mala"),
    ("step_size", "auto"),
    ("burn_in", "auto"),
    ("start_step_size", "0.5"),
    ("start_max_iters", "200"),
    ("start_tol", "1e-4"),
];

const TRAIN_KEYS: &[(&str, &str)] = &[
    ("out", "train_out"),
    ("method", "ep"),
    ("beta", "1"),
    ("quad_scheme", "trapezoid"),
    ("quad_nodes", "3"),
    ("lr", "0.05"),
    ("momentum", "0.9"),
    ("batch_size", "20"),
    ("epochs", "20"),
    ("eval_every", "1"),
    ("steps", "50"),
    ("chains", "4"),
    ("chain_start", "relaxed_per_phase"),
    ("relax_step_size", "0.5"),
    ("relax_max_iters", "500"),
    ("relax_tol", "1e-6"),
    ("checkpoint_every", "0"),
    ("resume", ""),
];

const SWEEP_KEYS: &[(&str, &str)] = &[
    ("out", "sweep_out"),
    ("grid", "0.001,0.003,0.01,0.03,0.1,0.3,1"),
    ("checkpoint", ""),
    ("pretrain_epochs", "2"),
    ("pretrain_lr", "0.05"),
    ("pretrain_momentum", "0.9"),
    ("pretrain_batch_size", "20"),
    ("examples", "10"),
    ("steps", "800"),
    ("chains", "4"),
    ("chain_start", "relaxed_free"),
    ("reference_steps", "2000"),
    ("reference_chains", "4"),
    ("reference_start", "relaxed_per_phase"),
    ("snr_repeats", "20"),
    ("snr_mode", "norm"),
];

const DIAGNOSE_KEYS: &[(&str, &str)] = &[
    ("out", "diagnose_out"),
    ("spins", "8"),
    ("temperature", "2"),
    ("gibbs_samples", "100000"),
    ("gaussian_dim", "4"),
    ("gaussian_steps", "4000"),
    ("gaussian_chains", "4"),
    ("agreement_samples", "10000"),
    ("agreement_seeds", "20"),
    ("agreement_nodes", "5"),
];

impl RunConfig {
    fn with_defaults(command: &str, groups: &[&[(&str, &str)]]) -> Self {
        let mut values = BTreeMap::new();
        values.insert("command".to_string(), command.to_string());
        for g in groups {
            for (k, v) in *g {
                values.insert(k.to_string(), v.to_string());
            }
        }
        Self { values }
    }

    /// Defaults for a subcommand name.
    pub fn defaults(command: &str) -> Result<Self, CliError> {
        Ok(match command {
            "verify" => Self::with_defaults(command, &[COMMON_KEYS, VERIFY_KEYS]),
            "train" => Self::with_defaults(command, &[COMMON_KEYS, DATA_KEYS, CHAIN_KEYS, TRAIN_KEYS]),
            "sweep" => Self::with_defaults(command, &[COMMON_KEYS, DATA_KEYS, CHAIN_KEYS, SWEEP_KEYS]),
            "diagnose" => Self::with_defaults(command, &[COMMON_KEYS, DIAGNOSE_KEYS]),
            other => return Err(usage(format!("unknown command `{other}`"))),
        })
    }

    /// Sets a known key; unknown keys are usage errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let key = key.trim().replace('-', "_");
        if key == "command" {
            let current = &self.values["command"];
            if value.trim() != current {
                return Err(usage(format!(
                    "config was written for `{}`, not `{current}`",
                    value.trim()
                )));
            }
            return Ok(());
        }
        match self.values.get_mut(&key) {
            Some(slot) => {
                *slot = value.trim().to_string();
                Ok(())
            }
            None => Err(usage(format!("unknown config key `{key}` for `{}`", self.values["command"]))),
        }
    }

    pub fn set_pair(&mut self, pair: &str) -> Result<(), CliError> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| usage(format!("expected KEY=VALUE, got `{pair}`")))?;
        self.set(k, v)
    }

    /// Applies a config file: one `key = value` per line, `#` comments.
    pub fn merge_text(&mut self, text: &str) -> Result<(), CliError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.set_pair(line).map_err(|e| usage(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        self.merge_text(&text)
    }

    /// Sorted `key=value` lines.
    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T, CliError> {
        let raw = self.get(key);
        raw.parse()
            .map_err(|_| usage(format!("cannot parse `{key}` value `{raw}`")))
    }

    fn f64(&self, key: &str) -> Result<f64, CliError> {
        let v: f64 = self.parse(key)?;
        if !v.is_finite() {
            return Err(usage(format!("`{key}` must be finite")));
        }
        Ok(v)
    }

    fn usize(&self, key: &str) -> Result<usize, CliError> {
        self.parse(key)
    }

    fn auto<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        if self.get(key) == "auto" {
            Ok(None)
        } else {
            self.parse(key).map(Some)
        }
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        let v = self.get(key);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.parse("seed")
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.get("out"))
    }
}

fn apply_common(cfg: &mut RunConfig, common: &CommonArgs) -> Result<(), CliError> {
    if let Some(path) = &common.config {
        cfg.merge_file(path)?;
    }
    for pair in &common.set {
        cfg.set_pair(pair)?;
    }
    for (key, value) in [("seed", &common.seed), ("out", &common.out), ("threads", &common.threads)] {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    Ok(())
}

fn apply_data(cfg: &mut RunConfig, data: &DataArgs) -> Result<(), CliError> {
    for (key, value) in [
        ("images", &data.images),
        ("labels", &data.labels),
        ("test_images", &data.test_images),
        ("test_labels", &data.test_labels),
        ("limit", &data.limit),
    ] {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    Ok(())
}

/// Resolves the configuration for a parsed command line.
pub fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg;
    match &cli.command {
        Command::Verify { common, n_instances } => {
            cfg = RunConfig::defaults("verify")?;
            apply_common(&mut cfg, common)?;
            if let Some(n) = n_instances {
                cfg.set("n_instances", n)?;
            }
        }
        Command::Train {
            common,
            data,
            method,
            beta,
        } => {
            cfg = RunConfig::defaults("train")?;
            apply_common(&mut cfg, common)?;
            apply_data(&mut cfg, data)?;
            if let Some(m) = method {
                cfg.set("method", m)?;
            }
            if let Some(b) = beta {
                cfg.set("beta", b)?;
            }
        }
        Command::Sweep { common, data } => {
            cfg = RunConfig::defaults("sweep")?;
            apply_common(&mut cfg, common)?;
            apply_data(&mut cfg, data)?;
        }
        Command::Diagnose { common } => {
            cfg = RunConfig::defaults("diagnose")?;
            apply_common(&mut cfg, common)?;
        }
    }
    Ok(cfg)
}

/// Parses, validates and runs; returns a human-readable summary.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    let cfg = resolve(cli)?;
    run_config(&cfg, &Exact)
}

/// Runs a resolved configuration. `ops` backs the `verify` suite.
pub fn run_config(cfg: &RunConfig, ops: &(dyn OracleOps + Sync)) -> Result<String, CliError> {
    let threads = cfg.usize("threads")?;
    if threads == 0 {
        return Err(usage("threads must be at least 1"));
    }
    let command = cfg.get("command").to_string();
    // Validate everything before touching the filesystem.
    let plan = match command.as_str() {
        "verify" => Plan::Verify(verify_config(cfg)?),
        "train" => Plan::Train(Box::new(train_plan(cfg)?)),
        "sweep" => Plan::Sweep(Box::new(sweep_plan(cfg)?)),
        "diagnose" => Plan::Diagnose(diagnose_plan(cfg)?),
        other => return Err(usage(format!("unknown command `{other}`"))),
    };
    let out = cfg.out_dir();
    if out.as_os_str().is_empty() {
        return Err(usage("out must not be empty"));
    }
    fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
    write(&out.join(RESOLVED_CONFIG), &cfg.to_text())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| usage(format!("cannot build thread pool: {e}")))?;
    pool.install(|| match plan {
        Plan::Verify(v) => cmd_verify(&v, ops, &out),
        Plan::Train(t) => cmd_train(&t, &out),
        Plan::Sweep(s) => cmd_sweep(&s, &out),
        Plan::Diagnose(d) => cmd_diagnose(&d, &out),
    })
}

enum Plan {
    Verify(VerifyConfig),
    Train(Box<TrainPlan>),
    Sweep(Box<SweepPlan>),
    Diagnose(DiagnosePlan),
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn validated<T>(r: crate::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| usage(e.to_string()))
}

fn verify_config(cfg: &RunConfig) -> Result<VerifyConfig, CliError> {
    let v = VerifyConfig {
        n_instances: cfg.usize("n_instances")?,
        min_spins: cfg.usize("min_spins")?,
        max_spins: cfg.usize("max_spins")?,
        temperature: cfg.f64("temperature")?,
        fd_step: cfg.f64("fd_step")?,
        trial_distributions: cfg.usize("trial_distributions")?,
        seed: cfg.seed()?,
    };
    validated(v.validate())?;
    Ok(v)
}

pub fn cmd_verify(v: &VerifyConfig, ops: &(dyn OracleOps + Sync), out: &Path) -> Result<String, CliError> {
    let report = run_suite(ops, v)?;
    let csv = report.to_csv();
    write(&out.join("verify_report.csv"), &csv)?;
    match report.first_failure() {
        None => Ok(csv),
        Some(c) => Err(CliError::Check(format!(
            "{} failed on {} of {} instances (worst {:e}, tolerance {:e})",
            c.name, c.failures, c.instances, c.worst, c.tolerance
        ))),
    }
}

struct DataPlan {
    source: DataSource,
    limit: usize,
    test_limit: usize,
}

enum DataSource {
    Idx {
        images: PathBuf,
        labels: PathBuf,
        test: Option<(PathBuf, PathBuf)>,
    },
    Blobs {
        classes: usize,
        dim: usize,
        per_class: usize,
        test_per_class: usize,
        spread: f64,
        seed: u64,
    },
}

fn data_plan(cfg: &RunConfig) -> Result<DataPlan, CliError> {
    let limit = cfg.usize("limit")?;
    let test_limit = cfg.usize("test_limit")?;
    if limit == 0 || test_limit == 0 {
        return Err(usage("limit and test_limit must be positive"));
    }
    let source = match cfg.get("dataset") {
        "idx" => {
            let (Some(images), Some(labels)) = (cfg.path("images"), cfg.path("labels")) else {
                return Err(usage("dataset=idx needs --images and --labels"));
            };
            let test = match (cfg.path("test_images"), cfg.path("test_labels")) {
                (Some(i), Some(l)) => Some((i, l)),
                (None, None) => None,
                _ => return Err(usage("test_images and test_labels go together")),
            };
            DataSource::Idx { images, labels, test }
        }
        "blobs" => DataSource::Blobs {
            classes: cfg.usize("blobs_classes")?,
            dim: cfg.usize("blobs_dim")?,
            per_class: cfg.usize("blobs_per_class")?,
            test_per_class: cfg.usize("blobs_test_per_class")?,
            spread: cfg.f64("blobs_spread")?,
            seed: derive_seed(cfg.seed()?, &[TAG_DATA]),
        },
        other => return Err(usage(format!("dataset must be idx or blobs, got `{other}`"))),
    };
    Ok(DataPlan {
        source,
        limit,
        test_limit,
    })
}

fn load_data(plan: &DataPlan) -> Result<(Dataset, Option<Dataset>), CliError> {
    match &plan.source {
        DataSource::Idx { images, labels, test } => {
            let train = load_idx(images, labels, Some(plan.limit), Split::Train)?;
            let test = test
                .as_ref()
                .map(|(i, l)| load_idx(i, l, Some(plan.test_limit), Split::Test))
                .transpose()?;
            Ok((train, test))
        }
        DataSource::Blobs {
            classes,
            dim,
            per_class,
            test_per_class,
            spread,
            seed,
        } => {
            let train = make_blobs(*classes, *per_class, *dim, *spread, derive_seed(*seed, &[0]))?;
            let test = make_blobs(*classes, *test_per_class, *dim, *spread, derive_seed(*seed, &[1]))?;
            let mut test = test.truncated(plan.test_limit.min(test.len()))?;
            test.split = Split::Test;
            Ok((train.truncated(plan.limit.min(train.len()))?, Some(test)))
        }
    }
}

fn kernel(cfg: &RunConfig) -> Result<KernelKind, CliError> {
    match cfg.get("kernel") {
        "mala" => Ok(KernelKind::LangevinMetropolisAdjusted),
        "ula" => Ok(KernelKind::LangevinUnadjusted),
        other => Err(usage(format!("kernel must be mala or ula, got `{other}`"))),
    }
}

fn chain_config(cfg: &RunConfig, steps_key: &str, chains_key: &str, seed: u64) -> Result<ChainConfig, CliError> {
    let steps = cfg.usize(steps_key)?;
    let mut c = ChainConfig::new(kernel(cfg)?, steps, seed).with_chains(cfg.usize(chains_key)?);
    if let Some(b) = cfg.auto::<usize>("burn_in")? {
        c = c.with_burn_in(b);
    }
    if let Some(eta) = cfg.auto::<f64>("step_size")? {
        c = c.with_step_size(eta);
    }
    validated(c.validate())?;
    Ok(c)
}

fn chain_start(cfg: &RunConfig, key: &str) -> Result<ChainStart, CliError> {
    let relax = RelaxConfig {
        step_size: cfg.f64("start_step_size")?,
        max_iters: cfg.usize("start_max_iters")?,
        tol: cfg.f64("start_tol")?,
    };
    match cfg.get(key) {
        "model_default" => Ok(ChainStart::ModelDefault),
        "relaxed_per_phase" => Ok(ChainStart::RelaxedPerPhase(relax)),
        "relaxed_free" => Ok(ChainStart::RelaxedFree(relax)),
        other => Err(usage(format!(
            "{key} must be model_default, relaxed_per_phase or relaxed_free, got `{other}`"
        ))),
    }
}

struct TrainPlan {
    data: DataPlan,
    hidden: usize,
    config: TrainConfig,
    checkpoint_every: usize,
    resume: Option<PathBuf>,
}

fn quadrature(cfg: &RunConfig) -> Result<QuadratureSpec, CliError> {
    let k = cfg.usize("quad_nodes")?;
    validated(match cfg.get("quad_scheme") {
        "trapezoid" => QuadratureSpec::trapezoid(k),
        "gauss_legendre" => QuadratureSpec::gauss_legendre(k),
        other => return Err(usage(format!("quad_scheme must be trapezoid or gauss_legendre, got `{other}`"))),
    })
}

fn train_plan(cfg: &RunConfig) -> Result<TrainPlan, CliError> {
    let method = match cfg.get("method") {
        "backprop" => TrainMethod::Backprop,
        "ep" => TrainMethod::Ep { beta: cfg.f64("beta")? },
        "path_integral" => TrainMethod::PathIntegral { quad: quadrature(cfg)? },
        other => {
            return Err(usage(format!(
                "method must be backprop, ep or path_integral, got `{other}`"
            )))
        }
    };
    let seed = cfg.seed()?;
    let config = TrainConfig {
        method,
        learning_rate: cfg.f64("lr")?,
        momentum: cfg.f64("momentum")?,
        batch_size: cfg.usize("batch_size")?,
        epochs: cfg.usize("epochs")?,
        eval_every: cfg.usize("eval_every")?,
        seed,
        temperature: cfg.f64("temperature")?,
        chain: chain_config(cfg, "steps", "chains", seed)?,
        chain_start: chain_start(cfg, "chain_start")?,
        relax: RelaxConfig {
            step_size: cfg.f64("relax_step_size")?,
            max_iters: cfg.usize("relax_max_iters")?,
            tol: cfg.f64("relax_tol")?,
        },
    };
    validated(config.validate())?;
    let hidden = cfg.usize("hidden")?;
    if hidden == 0 {
        return Err(usage("hidden must be positive"));
    }
    Ok(TrainPlan {
        data: data_plan(cfg)?,
        hidden,
        config,
        checkpoint_every: cfg.usize("checkpoint_every")?,
        resume: cfg.path("resume"),
    })
}

fn cmd_train(plan: &TrainPlan, out: &Path) -> Result<String, CliError> {
    let (train_set, test_set) = load_data(&plan.data)?;
    let net = LayeredTanhEnergyNet::new(train_set.dim(), plan.hidden, train_set.n_classes);
    let mut state = plan.resume.as_deref().map(Checkpoint::load).transpose()?;
    let total = plan.config.epochs;
    let step = if plan.checkpoint_every == 0 {
        total.max(1)
    } else {
        plan.checkpoint_every
    };
    let mut reached = state.as_ref().map_or(0, |c| c.epoch);
    if reached > total {
        return Err(usage(format!("checkpoint is at epoch {reached}, past epochs={total}")));
    }
    let outcome = loop {
        let target = (reached + step).min(total);
        let cfg = TrainConfig {
            epochs: target,
            ..plan.config.clone()
        };
        let o = train(&net, &train_set, test_set.as_ref(), &cfg, state.take())?;
        reached = target;
        if reached >= total {
            break o;
        }
        o.checkpoint
            .save(&out.join(format!("checkpoint_epoch_{target:04}.json")))?;
        state = Some(o.checkpoint);
    };
    let csv = metrics_csv(&outcome.metrics);
    write(&out.join("metrics.csv"), &csv)?;
    outcome.checkpoint.save(&out.join("checkpoint.json"))?;
    Ok(csv)
}

struct SweepPlan {
    data: DataPlan,
    hidden: usize,
    temperature: f64,
    theta_from: Option<PathBuf>,
    pretrain: TrainConfig,
    examples: usize,
    estimate: McmcSource,
    reference: McmcSource,
    sweep: SweepConfig,
}

fn sweep_plan(cfg: &RunConfig) -> Result<SweepPlan, CliError> {
    let seed = cfg.seed()?;
    let grid = cfg
        .get("grid")
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| usage(format!("cannot parse grid value `{v}`")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let snr_repeats = cfg.usize("snr_repeats")?;
    let snr_mode = match cfg.get("snr_mode") {
        "norm" => SnrMode::Norm,
        "per_unit" => SnrMode::PerUnit,
        other => return Err(usage(format!("snr_mode must be norm or per_unit, got `{other}`"))),
    };
    let sweep = SweepConfig {
        grid,
        seed: derive_seed(seed, &[TAG_SWEEP]),
        snr_repeats: (snr_repeats > 0).then_some(snr_repeats),
        snr_mode,
    };
    validated(sweep.validate())?;
    let temperature = cfg.f64("temperature")?;
    validated(Temperature::new(temperature).map(|_| ()))?;
    let estimate =
        McmcSource::new(chain_config(cfg, "steps", "chains", seed)?).with_start(chain_start(cfg, "chain_start")?);
    let reference = McmcSource::new(chain_config(cfg, "reference_steps", "reference_chains", seed)?)
        .with_start(chain_start(cfg, "reference_start")?);
    let pretrain = TrainConfig {
        method: TrainMethod::Backprop,
        learning_rate: cfg.f64("pretrain_lr")?,
        momentum: cfg.f64("pretrain_momentum")?,
        batch_size: cfg.usize("pretrain_batch_size")?,
        epochs: cfg.usize("pretrain_epochs")?,
        eval_every: 1,
        seed: derive_seed(seed, &[TAG_PRETRAIN]),
        temperature,
        chain: estimate.cfg.clone(),
        chain_start: ChainStart::ModelDefault,
        relax: RelaxConfig::default(),
    };
    validated(pretrain.validate())?;
    let examples = cfg.usize("examples")?;
    if examples == 0 {
        return Err(usage("examples must be positive"));
    }
    let hidden = cfg.usize("hidden")?;
    if hidden == 0 {
        return Err(usage("hidden must be positive"));
    }
    Ok(SweepPlan {
        data: data_plan(cfg)?,
        hidden,
        temperature,
        theta_from: cfg.path("checkpoint"),
        pretrain,
        examples,
        estimate,
        reference,
        sweep,
    })
}

/// Headline statistics of a sweep: Spearman trend of the supervised cosine,
/// the cosine at the largest nudge, and `SNR(1)/SNR(0.01)` when both grid
/// points are present.
pub fn sweep_summary(r: &SweepResult) -> Vec<(String, f64)> {
    let mut out = vec![("spearman_cos_supervised".to_string(), r.trend())];
    if let Some(last) = r.rows.last() {
        out.push(("cos_supervised_at_max_beta".to_string(), last.cos_supervised.value));
    }
    let snr_at = |b: f64| r.rows.iter().find(|row| row.beta == b).and_then(|row| row.snr);
    if let (Some(hi), Some(lo)) = (snr_at(1.0), snr_at(0.01)) {
        out.push(("snr_ratio_1_over_0.01".to_string(), hi / lo));
    }
    out
}

fn cmd_sweep(plan: &SweepPlan, out: &Path) -> Result<String, CliError> {
    let (train_set, _) = load_data(&plan.data)?;
    let net = LayeredTanhEnergyNet::new(train_set.dim(), plan.hidden, train_set.n_classes);
    let theta = match &plan.theta_from {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            if (ck.n_in, ck.n_hidden, ck.n_out) != (net.n_in, net.n_hidden, net.n_out) {
                return Err(CliError::Runtime(Error::Checkpoint(
                    "checkpoint architecture differs from the sweep network".into(),
                )));
            }
            ck.theta()?
        }
        None => train(&net, &train_set, None, &plan.pretrain, None)?.checkpoint.theta()?,
    };
    let n = plan.examples.min(train_set.len());
    let examples = (0..n)
        .map(|i| net.bind(&train_set.inputs[i], Some(train_set.target(i))))
        .collect::<crate::Result<Vec<_>>>()?;
    let t = Temperature::new(plan.temperature)?;
    let result = alignment_sweep(&examples, &theta, t, &plan.estimate, &plan.reference, &plan.sweep)?;
    let csv = result.to_csv();
    write(&out.join("sweep.csv"), &csv)?;
    write(&out.join("sweep_panels.csv"), &result.to_panel_csv())?;
    let mut summary = String::from("statistic,value\n");
    for (k, v) in sweep_summary(&result) {
        summary.push_str(&format!("{k},{v}\n"));
    }
    write(&out.join("sweep_summary.csv"), &summary)?;
    Ok(summary)
}

struct DiagnosePlan {
    seed: u64,
    spins: usize,
    temperature: f64,
    gibbs_samples: usize,
    gaussian_dim: usize,
    gaussian_steps: usize,
    gaussian_chains: usize,
    agreement_samples: usize,
    agreement_seeds: usize,
    quad: QuadratureSpec,
}

fn diagnose_plan(cfg: &RunConfig) -> Result<DiagnosePlan, CliError> {
    let plan = DiagnosePlan {
        seed: cfg.seed()?,
        spins: cfg.usize("spins")?,
        temperature: cfg.f64("temperature")?,
        gibbs_samples: cfg.usize("gibbs_samples")?,
        gaussian_dim: cfg.usize("gaussian_dim")?,
        gaussian_steps: cfg.usize("gaussian_steps")?,
        gaussian_chains: cfg.usize("gaussian_chains")?,
        agreement_samples: cfg.usize("agreement_samples")?,
        agreement_seeds: cfg.usize("agreement_seeds")?,
        quad: validated(QuadratureSpec::trapezoid(cfg.usize("agreement_nodes")?))?,
    };
    validated(Temperature::new(plan.temperature).map(|_| ()))?;
    if !(2..=crate::oracle::DEFAULT_N_MAX).contains(&plan.spins) {
        return Err(usage("spins must lie in [2, 16]"));
    }
    if [
        plan.gibbs_samples,
        plan.gaussian_dim,
        plan.gaussian_steps,
        plan.gaussian_chains,
        plan.agreement_samples,
        plan.agreement_seeds,
    ]
    .contains(&0)
    {
        return Err(usage("diagnose sizes must be positive"));
    }
    Ok(plan)
}

/// Thresholds: total variation ≤ 0.02, Gaussian covariance within 3 SE at
/// ESS ≥ 1000, and ≥ 99% of estimator coordinates within 3 SE.
fn cmd_diagnose(plan: &DiagnosePlan, out: &Path) -> Result<String, CliError> {
    use rand::SeedableRng;
    let t = Temperature::new(plan.temperature)?;
    let mut rows: Vec<(&str, f64, String, bool)> = Vec::new();

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(plan.seed, &[TAG_DIAG, 0]));
    let inst = random_instance(&mut rng, plan.spins, false);
    let tv = gibbs_tv(
        &inst.model,
        &inst.theta,
        NudgeStrength::FREE,
        t,
        plan.gibbs_samples,
        derive_seed(plan.seed, &[TAG_DIAG, 1]),
    )?;
    rows.push(("gibbs_total_variation", tv.tv, "<= 0.02".into(), tv.tv <= 0.02));

    let g = gaussian_covariance(
        plan.gaussian_dim,
        plan.gaussian_steps,
        plan.gaussian_chains,
        derive_seed(plan.seed, &[TAG_DIAG, 2]),
    )?;
    rows.push(("gaussian_covariance_max_z", g.max_z, "<= 3".into(), g.max_z <= 3.0));
    rows.push(("gaussian_min_ess", g.min_ess, ">= 1000".into(), g.min_ess >= 1000.0));

    let mut contrast = Agreement { within: 0, total: 0 };
    let mut covariance = Agreement { within: 0, total: 0 };
    for s in 0..plan.agreement_seeds {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(plan.seed, &[TAG_DIAG, 3, s as u64]));
        let inst = random_instance(&mut rng, plan.spins, true);
        let per_chain = plan.agreement_samples.div_ceil(4);
        let cfg = ChainConfig::new(
            KernelKind::GibbsSweepBinary,
            per_chain + per_chain / 4,
            derive_seed(plan.seed, &[TAG_DIAG, 4, s as u64]),
        )
        .with_chains(4)
        .with_burn_in(per_chain / 4);
        let c = grad_contrast_mc(&inst.model, &inst.theta, t, &cfg)?;
        contrast.merge(&agreement(&c, exact_grad_j_contrast(&inst.model, &inst.theta, t)?.values(), 3.0));
        let v = grad_covariance_mc(&inst.model, &inst.theta, t, &plan.quad, &cfg)?;
        let exact = exact_grad_j_covariance(&inst.model, &inst.theta, t, &plan.quad)?;
        covariance.merge(&agreement(&v, exact.values(), 3.0));
    }
    rows.push((
        "contrast_within_3se",
        contrast.rate(),
        ">= 0.99".into(),
        contrast.rate() >= 0.99,
    ));
    rows.push((
        "covariance_within_3se",
        covariance.rate(),
        ">= 0.99".into(),
        covariance.rate() >= 0.99,
    ));

    let mut csv = String::from("check,value,threshold,status\n");
    for (name, value, threshold, ok) in &rows {
        csv.push_str(&format!("{name},{value},{threshold},{}\n", if *ok { "pass" } else { "FAIL" }));
    }
    write(&out.join("diagnose_report.csv"), &csv)?;
    match rows.iter().find(|r| !r.3) {
        None => Ok(csv),
        Some((name, value, threshold, _)) => Err(CliError::Check(format!("{name} = {value}, expected {threshold}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("thermo-ep").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_override_file_and_set() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.txt");
        fs::write(&file, "# comment\nseed = 5\nn_instances=7\n").unwrap();
        let cli = parse(&[
            "verify",
            "--config",
            file.to_str().unwrap(),
            "--set",
            "n_instances=9",
            "--n-instances",
            "11",
        ]);
        let cfg = resolve(&cli).unwrap();
        assert_eq!(cfg.get("seed"), "5");
        assert_eq!(cfg.get("n_instances"), "11");
    }

    #[test]
    fn resolved_text_round_trips() {
        let mut cfg = RunConfig::defaults("train").unwrap();
        cfg.set("lr", "0.2").unwrap();
        let mut again = RunConfig::defaults("train").unwrap();
        again.merge_text(&cfg.to_text()).unwrap();
        assert_eq!(cfg, again);
        let text = cfg.to_text();
        let keys: Vec<&str> = text.lines().map(|l| l.split('=').next().unwrap()).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }

    #[test]
    fn usage_errors_exit_two() {
        let mut cfg = RunConfig::defaults("verify").unwrap();
        assert_eq!(cfg.set("bogus", "1").unwrap_err().exit_code(), EXIT_USAGE);
        cfg.set("n_instances", "0").unwrap();
        assert_eq!(run_config(&cfg, &Exact).unwrap_err().exit_code(), EXIT_USAGE);
        let mut other = RunConfig::defaults("verify").unwrap();
        assert!(other.merge_text("command=train\n").is_err());
    }

    #[test]
    fn missing_images_is_usage_error() {
        let cfg = RunConfig::defaults("train").unwrap();
        assert_eq!(run_config(&cfg, &Exact).unwrap_err().exit_code(), EXIT_USAGE);
    }
}
