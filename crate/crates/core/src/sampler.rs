//! MCMC draws from `ρ_β ∝ exp(−F/T)` for models too large to enumerate.
//!
//! Each chain owns a `ChaCha8Rng` seeded from the master seed and keyed to
//! its chain index by stream selection, so serial and parallel runs give
//! identical batches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernel::{
    validate_state, EnergyModel, NudgeStrength, ParamVector, StateKind, StateVector, Temperature,
};

/// Acceptance band outside which the adjusted kernel attaches a warning.
pub const ACCEPTANCE_BAND: (f64, f64) = (0.4, 0.9);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelKind {
    LangevinUnadjusted,
    LangevinMetropolisAdjusted,
    GibbsSweepBinary,
}

impl KernelKind {
    pub fn is_langevin(self) -> bool {
        !matches!(self, KernelKind::GibbsSweepBinary)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub n_chains: usize,
    pub n_steps: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Langevin step `η`; `None` picks [`default_step_size`].
    pub step_size: Option<f64>,
    pub seed: u64,
    pub kernel: KernelKind,
}

impl ChainConfig {
    /// Eight chains, 20% burn-in, no thinning.
    pub fn new(kernel: KernelKind, n_steps: usize, seed: u64) -> Self {
        Self {
            n_chains: 8,
            n_steps,
            burn_in: n_steps / 5,
            thin: 1,
            step_size: None,
            seed,
            kernel,
        }
    }

    pub fn with_chains(mut self, n_chains: usize) -> Self {
        self.n_chains = n_chains;
        self
    }

    pub fn with_burn_in(mut self, burn_in: usize) -> Self {
        self.burn_in = burn_in;
        self
    }

    pub fn with_step_size(mut self, eta: f64) -> Self {
        self.step_size = Some(eta);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Recorded samples per chain.
    pub fn samples_per_chain(&self) -> usize {
        (self.n_steps - self.burn_in).div_ceil(self.thin)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 {
            return Err(Error::invalid("n_chains must be positive"));
        }
        if self.n_steps == 0 {
            return Err(Error::invalid("n_steps must be positive"));
        }
        if self.burn_in >= self.n_steps {
            return Err(Error::invalid(format!(
                "burn_in {} must be below n_steps {}",
                self.burn_in, self.n_steps
            )));
        }
        if self.thin == 0 {
            return Err(Error::invalid("thin must be at least 1"));
        }
        if let Some(eta) = self.step_size {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(Error::invalid(format!("step size must be positive, got {eta}")));
            }
        }
        Ok(())
    }
}

/// Static step heuristic `η = 0.5·T·d^(−1/3)` for `d` free coordinates.
pub fn default_step_size(free_dim: usize, t: Temperature) -> f64 {
    0.5 * t.value() * (free_dim.max(1) as f64).powf(-1.0 / 3.0)
}

/// Post-burn-in, thinned draws from every chain, concatenated in chain order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleBatch {
    pub samples: Vec<StateVector>,
    /// Number of samples contributed by each chain, in order.
    pub chain_lengths: Vec<usize>,
    pub beta: f64,
    pub temperature: f64,
    pub theta_hash: String,
    pub kernel: KernelKind,
    pub step_size: Option<f64>,
    /// Present for the Metropolis-adjusted kernel only.
    pub acceptance_rate: Option<f64>,
    /// Per-chain effective sample size of the `F` trace.
    pub ess: Vec<f64>,
    pub warnings: Vec<String>,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples of chain `c`.
    pub fn chain(&self, c: usize) -> &[StateVector] {
        let start: usize = self.chain_lengths[..c].iter().sum();
        &self.samples[start..start + self.chain_lengths[c]]
    }

    /// Componentwise sample mean.
    pub fn mean_state(&self) -> Vec<f64> {
        let d = self.samples.first().map_or(0, |s| s.dim());
        let mut m = vec![0.0; d];
        for s in &self.samples {
            m.iter_mut().zip(s.values()).for_each(|(a, v)| *a += v);
        }
        let n = self.samples.len().max(1) as f64;
        m.iter_mut().for_each(|a| *a /= n);
        m
    }
}

/// Hex SHA-256 of θ's little-endian bytes.
pub fn theta_hash(theta: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in theta {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Splitmix64 mix of a master seed with a sequence of tags.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut z = master;
    for &t in tags {
        z = splitmix(z ^ splitmix(t.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    splitmix(z)
}

fn splitmix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

struct ChainOutput {
    samples: Vec<StateVector>,
    trace: Vec<f64>,
    accepted: usize,
    proposed: usize,
}

/// Runs `cfg.n_chains` independent chains targeting `ρ_β`.
///
/// Every chain starts from `init` when given. Otherwise Langevin chains
/// start from the model's initial state and Gibbs chains from independent
/// uniformly random configurations of the free units, so that chains stuck
/// in different modes show up as between-chain spread. Clamped coordinates
/// keep their starting values throughout.
pub fn run_chains<M: EnergyModel + ?Sized>(
    model: &M,
    theta: &ParamVector,
    beta: NudgeStrength,
    t: Temperature,
    cfg: &ChainConfig,
    init: Option<&StateVector>,
) -> Result<SampleBatch> {
    cfg.validate()?;
    if theta.dim() != model.param_dim() {
        return Err(Error::Shape {
            what: "parameter vector",
            expected: model.param_dim(),
            got: theta.dim(),
        });
    }
    let kind = model.state_kind();
    match (cfg.kernel, kind) {
        (KernelKind::GibbsSweepBinary, StateKind::Binary(_)) => {}
        (KernelKind::GibbsSweepBinary, StateKind::Continuous) => {
            return Err(Error::KernelMismatch(
                "Gibbs sweeps need a binary state space".into(),
            ))
        }
        (_, StateKind::Binary(_)) => {
            return Err(Error::KernelMismatch(
                "Langevin kernels need a continuous state space".into(),
            ))
        }
        (_, StateKind::Continuous) => {
            let probe = model.initial_state();
            if model.grad_state_energy(theta.values(), &probe).is_none() {
                return Err(Error::KernelMismatch(
                    "Langevin kernels need a state gradient".into(),
                ));
            }
            if beta.value() != 0.0 && model.grad_state_loss(&probe).is_none() {
                return Err(Error::KernelMismatch(
                    "Langevin kernels need a loss gradient when nudged".into(),
                ));
            }
        }
    }
    let start = match init {
        Some(s) => {
            validate_state(model, s)?;
            s.values().to_vec()
        }
        None => model.initial_state(),
    };
    let mask = model.clamp_mask();
    let free: Vec<usize> = (0..start.len()).filter(|&i| !mask[i]).collect();
    let eta = cfg
        .kernel
        .is_langevin()
        .then(|| cfg.step_size.unwrap_or_else(|| default_step_size(free.len(), t)));

    let run = |c: usize| -> Result<ChainOutput> {
        let mut rng = chain_rng(cfg.seed, c);
        match cfg.kernel {
            KernelKind::GibbsSweepBinary => {
                gibbs_chain(model, theta, beta, t, cfg, &start, init.is_none(), &free, &mut rng)
            }
            k => langevin_chain(
                model,
                theta,
                beta,
                t,
                cfg,
                &start,
                &free,
                eta.unwrap_or_default(),
                k == KernelKind::LangevinMetropolisAdjusted,
                c,
                &mut rng,
            ),
        }
    };
    let outputs: Vec<Result<ChainOutput>> = if cfg.n_chains > 1 {
        (0..cfg.n_chains).into_par_iter().map(run).collect()
    } else {
        vec![run(0)]
    };

    let mut samples = Vec::with_capacity(cfg.n_chains * cfg.samples_per_chain());
    let mut chain_lengths = Vec::with_capacity(cfg.n_chains);
    let mut ess = Vec::with_capacity(cfg.n_chains);
    let (mut accepted, mut proposed) = (0usize, 0usize);
    for out in outputs {
        let out = out?;
        chain_lengths.push(out.samples.len());
        ess.push(effective_sample_size(&out.trace));
        accepted += out.accepted;
        proposed += out.proposed;
        samples.extend(out.samples);
    }
    let acceptance_rate = (cfg.kernel == KernelKind::LangevinMetropolisAdjusted)
        .then(|| accepted as f64 / proposed.max(1) as f64);
    let mut warnings = Vec::new();
    if let Some(a) = acceptance_rate {
        if !(a > ACCEPTANCE_BAND.0 && a < ACCEPTANCE_BAND.1) {
            warnings.push(format!(
                "acceptance rate {a:.3} outside ({}, {})",
                ACCEPTANCE_BAND.0, ACCEPTANCE_BAND.1
            ));
        }
    }
    let min_ess = ess.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_ess < 10.0 {
        warnings.push(format!("low effective sample size ({min_ess:.1}) in at least one chain"));
    }
    Ok(SampleBatch {
        samples,
        chain_lengths,
        beta: beta.value(),
        temperature: t.value(),
        theta_hash: theta_hash(theta.values()),
        kernel: cfg.kernel,
        step_size: eta,
        acceptance_rate,
        ess,
        warnings,
    })
}

fn records(cfg: &ChainConfig, step: usize) -> bool {
    step >= cfg.burn_in && (step - cfg.burn_in).is_multiple_of(cfg.thin)
}

#[allow(clippy::too_many_arguments)]
fn gibbs_chain<M: EnergyModel + ?Sized>(
    model: &M,
    theta: &ParamVector,
    beta: NudgeStrength,
    t: Temperature,
    cfg: &ChainConfig,
    start: &[f64],
    random_start: bool,
    free: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<ChainOutput> {
    let StateKind::Binary(levels) = model.state_kind() else {
        unreachable!("checked by caller")
    };
    let kernel = model.conditioned(theta.values(), beta.value(), start);
    let temp = t.value();
    let mut s = start.to_vec();
    if random_start {
        for &i in free {
            s[i] = if rng.random_bool(0.5) { levels.high } else { levels.low };
        }
    }
    let mut samples = Vec::with_capacity(cfg.samples_per_chain());
    let mut trace = Vec::with_capacity(cfg.samples_per_chain());
    for step in 0..cfg.n_steps {
        for &i in free {
            s[i] = levels.high;
            let f_high = kernel.value(&s);
            s[i] = levels.low;
            let f_low = kernel.value(&s);
            let d = (f_high - f_low) / temp;
            if !d.is_finite() {
                return Err(Error::NonFinite {
                    term: "energy",
                    value: d,
                });
            }
            // P(high) = 1 / (1 + exp((F_high − F_low)/T))
            let p_high = 1.0 / (1.0 + d.exp());
            if rng.random::<f64>() < p_high {
                s[i] = levels.high;
            }
        }
        if records(cfg, step) {
            trace.push(kernel.value(&s));
            samples.push(StateVector::from_raw(s.clone(), model.state_kind()));
        }
    }
    Ok(ChainOutput {
        samples,
        trace,
        accepted: 0,
        proposed: 0,
    })
}

#[allow(clippy::too_many_arguments)]
fn langevin_chain<M: EnergyModel + ?Sized>(
    model: &M,
    theta: &ParamVector,
    beta: NudgeStrength,
    t: Temperature,
    cfg: &ChainConfig,
    start: &[f64],
    free: &[usize],
    eta: f64,
    adjusted: bool,
    chain: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ChainOutput> {
    let kernel = model.conditioned(theta.values(), beta.value(), start);
    let temp = t.value();
    let drift = eta / temp;
    let noise = (2.0 * eta).sqrt();
    let d = start.len();
    let mut s = start.to_vec();
    let mut g = vec![0.0; d];
    let mut f = kernel
        .value_and_grad(&s, &mut g)
        .ok_or_else(|| Error::KernelMismatch("missing state gradient".into()))?;
    let mut prop = s.clone();
    let mut g_prop = vec![0.0; d];
    let mut samples = Vec::with_capacity(cfg.samples_per_chain());
    let mut trace = Vec::with_capacity(cfg.samples_per_chain());
    let (mut accepted, mut proposed) = (0, 0);
    let diverged = |step: usize| Error::Divergence {
        chain,
        step,
        step_size: eta,
    };
    for step in 0..cfg.n_steps {
        for &i in free {
            let xi: f64 = rng.sample(StandardNormal);
            prop[i] = s[i] - drift * g[i] + noise * xi;
        }
        if free.iter().any(|&i| !prop[i].is_finite()) {
            return Err(diverged(step));
        }
        let f_prop = kernel
            .value_and_grad(&prop, &mut g_prop)
            .ok_or_else(|| Error::KernelMismatch("missing state gradient".into()))?;
        if adjusted {
            proposed += 1;
            // log q(s | s') − log q(s' | s) with q(b | a) ∝ exp(−‖b − a + (η/T)∇F(a)‖² / 4η)
            let mut fwd = 0.0;
            let mut bwd = 0.0;
            for &i in free {
                let a = prop[i] - s[i] + drift * g[i];
                let b = s[i] - prop[i] + drift * g_prop[i];
                fwd += a * a;
                bwd += b * b;
            }
            let log_alpha = -(f_prop - f) / temp + (fwd - bwd) / (4.0 * eta);
            let accept = f_prop.is_finite() && (log_alpha >= 0.0 || rng.random::<f64>().ln() < log_alpha);
            if accept {
                accepted += 1;
                std::mem::swap(&mut s, &mut prop);
                std::mem::swap(&mut g, &mut g_prop);
                f = f_prop;
            } else {
                prop.copy_from_slice(&s);
            }
        } else {
            if !f_prop.is_finite() {
                return Err(diverged(step));
            }
            std::mem::swap(&mut s, &mut prop);
            std::mem::swap(&mut g, &mut g_prop);
            f = f_prop;
        }
        if records(cfg, step) {
            trace.push(f);
            samples.push(StateVector::from_raw(s.clone(), StateKind::Continuous));
        }
    }
    Ok(ChainOutput {
        samples,
        trace,
        accepted,
        proposed,
    })
}

/// ESS by Geyer's initial positive sequence estimator of the integrated
/// autocorrelation time. A constant trace counts as fully independent.
pub fn effective_sample_size(trace: &[f64]) -> f64 {
    let n = trace.len();
    if n < 4 {
        return n as f64;
    }
    let mean = trace.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = trace.iter().map(|x| x - mean).collect();
    let c0 = centered.iter().map(|x| x * x).sum::<f64>() / n as f64;
    if c0 <= 0.0 {
        return n as f64;
    }
    let rho = |k: usize| -> f64 {
        centered[..n - k]
            .iter()
            .zip(&centered[k..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / (n as f64 * c0)
    };
    let mut tau = -1.0;
    let mut m = 0;
    while 2 * m + 1 < n {
        let pair = rho(2 * m) + rho(2 * m + 1);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        m += 1;
    }
    (n as f64 / tau.max(1.0 / n as f64)).min(n as f64)
}

/// Settings for [`relax_deterministic`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelaxConfig {
    pub step_size: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for RelaxConfig {
    fn default() -> Self {
        Self {
            step_size: 0.5,
            max_iters: 500,
            tol: 1e-6,
        }
    }
}

/// Result of deterministic relaxation.
#[derive(Clone, Debug, PartialEq)]
pub struct Relaxation {
    pub state: StateVector,
    pub converged: bool,
    pub iterations: usize,
}

/// Gradient descent `s ← s − η ∇_s F` on the unclamped coordinates until
/// `‖∇_s F‖_∞ ≤ tol` or `max_iters` steps.
pub fn relax_deterministic<M: EnergyModel + ?Sized>(
    model: &M,
    theta: &ParamVector,
    beta: NudgeStrength,
    init: &StateVector,
    eta: f64,
    max_iters: usize,
    tol: f64,
) -> Result<Relaxation> {
    if model.state_kind() != StateKind::Continuous {
        return Err(Error::KernelMismatch("relaxation needs a continuous state space".into()));
    }
    if !(eta > 0.0) {
        return Err(Error::invalid(format!("step size must be positive, got {eta}")));
    }
    validate_state(model, init)?;
    let kernel = model.conditioned(theta.values(), beta.value(), init.values());
    let mask = model.clamp_mask();
    let free: Vec<usize> = (0..init.dim()).filter(|&i| !mask[i]).collect();
    let mut s = init.values().to_vec();
    let mut g = vec![0.0; s.len()];
    for iter in 0..=max_iters {
        if !kernel.grad_state(&s, &mut g) {
            return Err(Error::KernelMismatch("missing state gradient".into()));
        }
        let worst = free.iter().map(|&i| g[i].abs()).fold(0.0, f64::max);
        if !worst.is_finite() {
            return Err(Error::Divergence {
                chain: 0,
                step: iter,
                step_size: eta,
            });
        }
        if worst <= tol || iter == max_iters {
            return Ok(Relaxation {
                state: StateVector::from_raw(s, StateKind::Continuous),
                converged: worst <= tol,
                iterations: iter,
            });
        }
        for &i in &free {
            s[i] -= eta * g[i];
        }
        if free.iter().any(|&i| !s[i].is_finite()) {
            return Err(Error::Divergence {
                chain: 0,
                step: iter,
                step_size: eta,
            });
        }
    }
    unreachable!("loop returns at iter == max_iters")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{QuadraticModel, SpinGlass, SpinLoss, TwoState};

    #[test]
    fn config_validation() {
        let ok = ChainConfig::new(KernelKind::LangevinMetropolisAdjusted, 100, 1);
        assert!(ok.validate().is_ok());
        assert_eq!(ok.burn_in, 20);
        assert!(ok.clone().with_burn_in(100).validate().is_err());
        assert!(ok.clone().with_step_size(0.0).validate().is_err());
        assert!(ok.with_chains(0).validate().is_err());
    }

    #[test]
    fn kernel_mismatch_is_reported() {
        let q = QuadraticModel::new(2);
        let theta = ParamVector::zeros(q.layout());
        let cfg = ChainConfig::new(KernelKind::GibbsSweepBinary, 10, 0);
        assert!(matches!(
            run_chains(&q, &theta, NudgeStrength::FREE, Temperature::default(), &cfg, None),
            Err(Error::KernelMismatch(_))
        ));
        let sg = SpinGlass::new(3, SpinLoss::Zero);
        let theta = ParamVector::zeros(sg.layout());
        let cfg = ChainConfig::new(KernelKind::LangevinUnadjusted, 10, 0);
        assert!(run_chains(&sg, &theta, NudgeStrength::FREE, Temperature::default(), &cfg, None).is_err());
    }

    #[test]
    fn batch_shape_and_metadata() {
        let q = QuadraticModel::new(3);
        let theta = ParamVector::zeros(q.layout());
        let mut cfg = ChainConfig::new(KernelKind::LangevinMetropolisAdjusted, 50, 3).with_chains(3);
        cfg.thin = 4;
        let b = run_chains(&q, &theta, NudgeStrength::FREE, Temperature::default(), &cfg, None).unwrap();
        assert_eq!(b.chain_lengths, vec![10, 10, 10]);
        assert_eq!(b.len(), 30);
        assert!(b.acceptance_rate.is_some());
        assert_eq!(b.ess.len(), 3);
        let cfg = ChainConfig::new(KernelKind::LangevinUnadjusted, 50, 3);
        let b = run_chains(&q, &theta, NudgeStrength::FREE, Temperature::default(), &cfg, None).unwrap();
        assert!(b.acceptance_rate.is_none());
    }

    #[test]
    fn identical_config_is_bit_identical() {
        let q = QuadraticModel::new(4);
        let theta = ParamVector::zeros(q.layout());
        let cfg = ChainConfig::new(KernelKind::LangevinMetropolisAdjusted, 200, 99);
        let a = run_chains(&q, &theta, NudgeStrength::FREE, Temperature::default(), &cfg, None).unwrap();
        let b = run_chains(&q, &theta, NudgeStrength::FREE, Temperature::default(), &cfg, None).unwrap();
        assert_eq!(a, b);
        let c = run_chains(&q, &theta, NudgeStrength::FREE, Temperature::default(), &cfg.with_seed(100), None).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn clamped_coordinates_stay_fixed() {
        let q = QuadraticModel::new(3).with_clamp(vec![true, true, true], vec![0.5, -1.0, 2.0]);
        let theta = ParamVector::zeros(q.layout());
        let cfg = ChainConfig::new(KernelKind::LangevinUnadjusted, 30, 1);
        let b = run_chains(&q, &theta, NudgeStrength::FREE, Temperature::default(), &cfg, None).unwrap();
        assert!(b.samples.iter().all(|s| s.values() == [0.5, -1.0, 2.0]));
        let sg = SpinGlass::new(3, SpinLoss::Zero).with_clamp(vec![true, false, true], vec![-1.0, 1.0, 1.0]);
        let theta = ParamVector::zeros(sg.layout());
        let cfg = ChainConfig::new(KernelKind::GibbsSweepBinary, 30, 1);
        let b = run_chains(&sg, &theta, NudgeStrength::FREE, Temperature::default(), &cfg, None).unwrap();
        assert!(b.samples.iter().all(|s| s.values()[0] == -1.0 && s.values()[2] == 1.0));
    }

    #[test]
    fn divergence_aborts_with_step() {
        let q = QuadraticModel::new(2);
        let theta = ParamVector::zeros(q.layout());
        let cfg = ChainConfig::new(KernelKind::LangevinUnadjusted, 5000, 1).with_step_size(5.0);
        match run_chains(&q, &theta, NudgeStrength::FREE, Temperature::default(), &cfg, None) {
            Err(Error::Divergence { step_size, .. }) => assert_eq!(step_size, 5.0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn two_state_gibbs_frequency() {
        let theta = ParamVector::flat(vec![0.0]).unwrap();
        let cfg = ChainConfig::new(KernelKind::GibbsSweepBinary, 5000, 5).with_chains(4);
        let b = run_chains(&TwoState, &theta, NudgeStrength::NUDGED, Temperature::default(), &cfg, None).unwrap();
        // P(s = 1) = σ(−1)
        let p = 1.0 / (1.0 + 1f64.exp());
        let freq = b.mean_state()[0];
        assert!((freq - p).abs() < 0.02, "{freq} vs {p}");
    }

    #[test]
    fn ess_of_iid_and_correlated_traces() {
        let mut rng = chain_rng(3, 0);
        let iid: Vec<f64> = (0..4000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let e = effective_sample_size(&iid);
        assert!(e > 2500.0, "{e}");
        let mut ar = vec![0.0; 4000];
        for i in 1..ar.len() {
            ar[i] = 0.95 * ar[i - 1] + rng.sample::<f64, _>(StandardNormal);
        }
        // τ = (1 + φ)/(1 − φ) = 39
        let e = effective_sample_size(&ar);
        assert!(e > 40.0 && e < 250.0, "{e}");
        assert_eq!(effective_sample_size(&[1.0; 100]), 100.0);
    }

    #[test]
    fn derived_seeds_differ() {
        let a = derive_seed(7, &[0]);
        let b = derive_seed(7, &[1]);
        let c = derive_seed(8, &[0]);
        assert!(a != b && a != c && b != c);
        assert_eq!(a, derive_seed(7, &[0]));
    }

    #[test]
    fn relaxation_converges_on_convex_quadratic() {
        let q = QuadraticModel::new(3).with_target(vec![1.0, 1.0, 1.0]);
        let theta = ParamVector::new(vec![0.2, -0.4, 0.6], q.layout()).unwrap();
        let init = StateVector::continuous(vec![0.0; 3]).unwrap();
        let r = relax_deterministic(&q, &theta, NudgeStrength::NUDGED, &init, 0.2, 1000, 1e-10).unwrap();
        assert!(r.converged);
        // minimizer (θ + t)/2
        for (v, w) in r.state.values().iter().zip([0.6, 0.3, 0.8]) {
            assert!((v - w).abs() < 1e-9);
        }
    }

    #[test]
    fn relaxation_returns_stationary_init_immediately() {
        let q = QuadraticModel::new(2);
        let theta = ParamVector::new(vec![0.3, 0.1], q.layout()).unwrap();
        let init = StateVector::continuous(vec![0.3, 0.1]).unwrap();
        let r = relax_deterministic(&q, &theta, NudgeStrength::FREE, &init, 0.1, 100, 1e-12).unwrap();
        assert_eq!(r.iterations, 0);
        assert_eq!(r.state, init);
    }

    #[test]
    fn relaxation_flags_non_convergence() {
        let q = QuadraticModel::new(2);
        let theta = ParamVector::new(vec![3.0, 1.0], q.layout()).unwrap();
        let init = StateVector::continuous(vec![0.0, 0.0]).unwrap();
        let r = relax_deterministic(&q, &theta, NudgeStrength::FREE, &init, 0.01, 3, 1e-12).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 3);
    }
}
