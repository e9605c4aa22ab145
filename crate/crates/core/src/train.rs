//! Supervised training of the layered energy network with SGD and momentum.
//!
//! All randomness is a pure function of the master seed and a position in
//! the run (epoch, example index), so a run restarted from a checkpoint at
//! an epoch boundary continues exactly as the uninterrupted run would.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{grad_classical, grad_path, ChainStart, GradEstimate, McmcSource};
use crate::kernel::{EnergyModel, NudgeStrength, ParamVector, StateVector, Temperature};
use crate::model::argmax;
use crate::model::{FeedforwardBaseline, LayeredTanhEnergyNet};
use crate::quadrature::QuadratureSpec;
use crate::sampler::{derive_seed, relax_deterministic, ChainConfig, RelaxConfig};

pub const CHECKPOINT_VERSION: u32 = 1;

const TAG_INIT: u64 = 0x1417;
const TAG_SHUFFLE: u64 = 0x5401;
const TAG_EXAMPLE: u64 = 0xe8a3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TrainMethod {
    Backprop,
    /// Two-phase contrast at nudge `beta`, scaled by `1/beta`.
    Ep { beta: f64 },
    PathIntegral { quad: QuadratureSpec },
}

impl TrainMethod {
    pub fn name(&self) -> &'static str {
        match self {
            TrainMethod::Backprop => "backprop",
            TrainMethod::Ep { .. } => "ep",
            TrainMethod::PathIntegral { .. } => "path_integral",
        }
    }

    pub fn beta(&self) -> Option<f64> {
        match self {
            TrainMethod::Ep { beta } => Some(*beta),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: TrainMethod,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Evaluate every this many epochs; the final epoch is always evaluated.
    pub eval_every: usize,
    pub seed: u64,
    pub temperature: f64,
    /// Sampler settings; the seed is replaced per example.
    pub chain: ChainConfig,
    pub chain_start: ChainStart,
    /// Prediction relaxation.
    pub relax: RelaxConfig,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be finite and nonnegative, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("minibatch size must be at least 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::invalid("eval_every must be at least 1"));
        }
        Temperature::new(self.temperature)?;
        if let TrainMethod::Ep { beta } = self.method {
            if !(beta > 0.0 && beta <= 1.0) {
                return Err(Error::invalid(format!("nudge must lie in (0, 1], got {beta}")));
            }
        }
        if self.method != TrainMethod::Backprop {
            self.chain.validate()?;
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form with `epochs` zeroed, so a run
    /// can be extended from an earlier checkpoint of the same schedule.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(&TrainConfig {
            epochs: 0,
            ..self.clone()
        })
        .expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub method: String,
    pub beta: Option<f64>,
    pub train_acc: Option<f64>,
    pub test_acc: Option<f64>,
    /// Mean over training examples of the `∫ 𝔼_{ρ_β}[ℓ] dβ` estimate.
    pub mean_j: Option<f64>,
}

/// Everything needed to continue a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub n_in: usize,
    pub n_hidden: usize,
    pub n_out: usize,
    pub params: Vec<f64>,
    pub velocity: Vec<f64>,
    /// Epochs completed.
    pub epoch: usize,
    /// How every random stream is derived; no generator state is carried.
    pub rng: String,
    pub metrics: Vec<EpochMetrics>,
    pub config_fingerprint: String,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Checkpoint(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        if ck.params.len() != ck.velocity.len() {
            return Err(Error::Checkpoint("params and velocity differ in length".into()));
        }
        Ok(ck)
    }

    pub fn theta(&self) -> Result<ParamVector> {
        let net = LayeredTanhEnergyNet::new(self.n_in, self.n_hidden, self.n_out);
        ParamVector::new(self.params.clone(), net.layout())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub metrics: Vec<EpochMetrics>,
    pub checkpoint: Checkpoint,
}

/// Initial parameters for a run with master seed `seed`.
pub fn init_theta(net: &LayeredTanhEnergyNet, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[TAG_INIT]));
    net.init_params(&mut rng)
}

/// Deterministic β = 0 relaxation from `(x, 0, 0)`; returns the output units.
pub fn relaxed_output(
    net: &LayeredTanhEnergyNet,
    theta: &ParamVector,
    x: &[f64],
    relax: &RelaxConfig,
) -> Result<Vec<f64>> {
    let bound = net.bind(x, None)?;
    let init = StateVector::continuous(bound.initial_state())?;
    let r = relax_deterministic(
        &bound,
        theta,
        NudgeStrength::FREE,
        &init,
        relax.step_size,
        relax.max_iters,
        relax.tol,
    )?;
    Ok(net.parts(r.state.values()).2.to_vec())
}

/// Fraction of examples whose relaxed output peaks at the label.
pub fn evaluate(net: &LayeredTanhEnergyNet, theta: &ParamVector, data: &Dataset, relax: &RelaxConfig) -> Result<f64> {
    check_dims(net, data)?;
    let hits: Result<Vec<bool>> = (0..data.len())
        .into_par_iter()
        .map(|i| Ok(argmax(&relaxed_output(net, theta, &data.inputs[i], relax)?) == data.labels[i]))
        .collect();
    Ok(hits?.iter().filter(|h| **h).count() as f64 / data.len() as f64)
}

/// Accuracy of the feedforward reading of θ.
pub fn evaluate_feedforward(net: &LayeredTanhEnergyNet, theta: &ParamVector, data: &Dataset) -> Result<f64> {
    check_dims(net, data)?;
    let ff = FeedforwardBaseline { net: net.clone() };
    let mut hits = 0;
    for (x, &y) in data.inputs.iter().zip(&data.labels) {
        if ff.predict(theta, x)? == y {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

fn check_dims(net: &LayeredTanhEnergyNet, data: &Dataset) -> Result<()> {
    if data.dim() != net.n_in {
        return Err(Error::Shape {
            what: "dataset input",
            expected: net.n_in,
            got: data.dim(),
        });
    }
    if data.n_classes != net.n_out {
        return Err(Error::Shape {
            what: "dataset classes",
            expected: net.n_out,
            got: data.n_classes,
        });
    }
    Ok(())
}

/// Accuracy under the prediction rule matching the method.
pub fn accuracy_for(
    method: &TrainMethod,
    net: &LayeredTanhEnergyNet,
    theta: &ParamVector,
    data: &Dataset,
    relax: &RelaxConfig,
) -> Result<f64> {
    match method {
        TrainMethod::Backprop => evaluate_feedforward(net, theta, data),
        _ => evaluate(net, theta, data, relax),
    }
}

/// `∫_0^1 𝔼_{ρ_β}[ℓ] dβ` from the phases an estimate drew. Two-phase
/// estimates use the trapezoid on `[0, β]` and hold `𝔼_{ρ_β}[ℓ]` flat on
/// `[β, 1]`.
pub fn j_estimate(method: &TrainMethod, est: &GradEstimate) -> Option<f64> {
    let l = &est.meta.mean_losses;
    match method {
        TrainMethod::Backprop => None,
        TrainMethod::Ep { beta } => Some(0.5 * beta * (l[0] + l[1]) + (1.0 - beta) * l[1]),
        TrainMethod::PathIntegral { quad } => Some(quad.integrate(l)),
    }
}

/// Per-example gradient and, for sampled methods, its `J` estimate.
fn example_gradient(
    net: &LayeredTanhEnergyNet,
    theta: &ParamVector,
    x: &[f64],
    target: Vec<f64>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Vec<f64>, Option<f64>)> {
    let t = Temperature::new(cfg.temperature)?;
    match &cfg.method {
        TrainMethod::Backprop => {
            let ff = FeedforwardBaseline { net: net.clone() };
            let mut g = vec![0.0; theta.dim()];
            ff.accumulate_backprop(theta, x, &target, 1.0, &mut g)?;
            Ok((g, None))
        }
        method => {
            let bound = net.bind(x, Some(target))?;
            let source = McmcSource::new(ChainConfig {
                seed,
                ..cfg.chain.clone()
            })
            .with_start(cfg.chain_start.clone());
            let est = match method {
                TrainMethod::Ep { beta } => grad_classical(&source, &bound, theta, t, *beta)?,
                TrainMethod::PathIntegral { quad } => grad_path(&source, &bound, theta, t, quad)?,
                TrainMethod::Backprop => unreachable!(),
            };
            let j = j_estimate(method, &est);
            Ok((est.grad.into_values(), j))
        }
    }
}

/// Trains `net` on `train`, optionally evaluating on `test`, starting fresh
/// or from `resume`.
pub fn train(
    net: &LayeredTanhEnergyNet,
    train: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
    resume: Option<Checkpoint>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_dims(net, train)?;
    if let Some(t) = test {
        check_dims(net, t)?;
    }
    let fingerprint = cfg.fingerprint();
    let (mut theta, mut velocity, start, mut metrics) = match resume {
        Some(ck) => {
            if ck.config_fingerprint != fingerprint {
                return Err(Error::Checkpoint("checkpoint was written under a different config".into()));
            }
            if (ck.n_in, ck.n_hidden, ck.n_out) != (net.n_in, net.n_hidden, net.n_out) {
                return Err(Error::Checkpoint("checkpoint architecture differs".into()));
            }
            let theta = ck.theta()?;
            (theta, ck.velocity, ck.epoch, ck.metrics)
        }
        None => {
            let theta = init_theta(net, cfg.seed);
            let p = theta.dim();
            (theta, vec![0.0; p], 0, Vec::new())
        }
    };

    for epoch in start..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[TAG_SHUFFLE, epoch as u64])));
        let mut j_sum = 0.0;
        let mut j_count = 0usize;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let results: Vec<Result<(Vec<f64>, Option<f64>)>> = idx
                .par_iter()
                .map(|&i| {
                    let seed = derive_seed(cfg.seed, &[TAG_EXAMPLE, epoch as u64, i as u64]);
                    example_gradient(net, &theta, &train.inputs[i], train.target(i), cfg, seed)
                })
                .collect();
            let mut g = vec![0.0; theta.dim()];
            for r in results {
                let (gi, j) = r.map_err(|e| Error::Training {
                    epoch,
                    batch,
                    source: Box::new(e),
                })?;
                g.iter_mut().zip(&gi).for_each(|(a, b)| *a += b);
                if let Some(j) = j {
                    j_sum += j;
                    j_count += 1;
                }
            }
            let scale = 1.0 / idx.len() as f64;
            for (v, gi) in velocity.iter_mut().zip(&g) {
                *v = cfg.momentum * *v + scale * gi;
            }
            let lr = cfg.learning_rate;
            theta
                .update(|th| th.iter_mut().zip(&velocity).for_each(|(t, v)| *t -= lr * v))
                .map_err(|e| Error::Training {
                    epoch,
                    batch,
                    source: Box::new(e),
                })?;
        }
        let done = epoch + 1;
        let evaluate_now = done % cfg.eval_every == 0 || done == cfg.epochs;
        let (train_acc, test_acc) = if evaluate_now {
            let tr = accuracy_for(&cfg.method, net, &theta, train, &cfg.relax)?;
            let te = test
                .map(|d| accuracy_for(&cfg.method, net, &theta, d, &cfg.relax))
                .transpose()?;
            (Some(tr), te)
        } else {
            (None, None)
        };
        metrics.push(EpochMetrics {
            epoch: done,
            method: cfg.method.name().to_string(),
            beta: cfg.method.beta(),
            train_acc,
            test_acc,
            mean_j: (j_count > 0).then(|| j_sum / j_count as f64),
        });
    }

    let checkpoint = Checkpoint {
        version: CHECKPOINT_VERSION,
        n_in: net.n_in,
        n_hidden: net.n_hidden,
        n_out: net.n_out,
        params: theta.into_values(),
        velocity,
        epoch: cfg.epochs.max(start),
        rng: format!(
            "chacha8 streams keyed by splitmix64(master={}, [tag, epoch, example])",
            cfg.seed
        ),
        metrics: metrics.clone(),
        config_fingerprint: fingerprint,
    };
    Ok(TrainOutcome { metrics, checkpoint })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV with header `epoch,method,beta,train_acc,test_acc,mean_J_estimate`.
pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,method,beta,train_acc,test_acc,mean_J_estimate\n");
    for m in metrics {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            m.epoch,
            m.method,
            fmt_opt(m.beta),
            fmt_opt(m.train_acc),
            fmt_opt(m.test_acc),
            fmt_opt(m.mean_j)
        ));
    }
    out
}
