//! Gradient estimators for the contrastive objective and its relatives.
//!
//! Every estimator is written against a [`PhaseSource`], which supplies
//! weighted draws from `ρ_β` grouped into independent replicates. The MCMC
//! source splits each chain into contiguous batch means; the exact source returns the whole enumerated law
//! as a single group, so the same code path reproduces the oracle.
//! Standard errors are the between-group spread of the per-group estimate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{EnergyModel, NudgeStrength, ParamVector, StateVector, Temperature};
use crate::oracle::{GibbsTable, DEFAULT_N_MAX};
use crate::quadrature::QuadratureSpec;
use crate::sampler::{derive_seed, relax_deterministic, run_chains, ChainConfig, RelaxConfig};

/// Minimum number of batch-mean groups across all chains of a phase.
pub const BATCH_MEANS: usize = 32;

const TAG_FREE: u64 = 0;
const TAG_NUDGED: u64 = 1;
const TAG_NODE: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    ExpectationContrast,
    IntegratedCovariance,
    ClassicalEP,
    PathIntegral,
    SupervisedCovariance,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EstimateMeta {
    /// β of each phase, in the order they were drawn.
    pub betas: Vec<f64>,
    pub samples_per_phase: Vec<usize>,
    /// Sampler seed of each phase; empty for exact expectations.
    pub seeds: Vec<u64>,
    /// Estimated `𝔼_{ρ_β}[ℓ]` of each phase.
    pub mean_losses: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradEstimate {
    pub grad: ParamVector,
    pub std_err: Vec<f64>,
    pub method: Method,
    pub meta: EstimateMeta,
}

/// Weighted draws from one `ρ_β`, split into independent groups.
#[derive(Clone, Debug)]
pub struct Phase {
    pub beta: f64,
    pub states: Vec<StateVector>,
    /// Sum to one over all states.
    pub weights: Vec<f64>,
    /// Consecutive group sizes.
    pub groups: Vec<usize>,
    /// Whether covariances take the `n − 1` correction.
    pub unbiased: bool,
    pub seed: Option<u64>,
}

impl Phase {
    fn group_slices(&self) -> impl Iterator<Item = (&[StateVector], &[f64])> {
        let mut start = 0;
        self.groups.iter().map(move |&len| {
            let r = start..start + len;
            start += len;
            (&self.states[r.clone()], &self.weights[r])
        })
    }

    pub fn mean_loss<M: EnergyModel + ?Sized>(&self, model: &M) -> f64 {
        self.states
            .iter()
            .zip(&self.weights)
            .map(|(s, w)| w * model.loss(s.values()))
            .sum()
    }

    /// Pooled `𝔼[∇_θ E]` and the per-group means.
    fn grad_means<M: EnergyModel + ?Sized>(&self, model: &M, theta: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let p = theta.len();
        let mut pooled = vec![0.0; p];
        let mut per_group = Vec::with_capacity(self.groups.len());
        for (states, weights) in self.group_slices() {
            let mass: f64 = weights.iter().sum();
            let normalized: Vec<f64> = weights.iter().map(|w| w / mass).collect();
            let mut g = vec![0.0; p];
            model.accumulate_grad_theta(theta, states, &normalized, &mut g);
            pooled.iter_mut().zip(&g).for_each(|(a, b)| *a += mass * b);
            per_group.push(g);
        }
        (pooled, per_group)
    }

    /// Pooled `Cov[ℓ, ∇_θ E]` and the per-group covariances.
    fn loss_grad_cov<M: EnergyModel + ?Sized>(
        &self,
        model: &M,
        theta: &[f64],
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let losses: Vec<f64> = self.states.iter().map(|s| model.loss(s.values())).collect();
        let pooled = weighted_cov(model, theta, &self.states, &self.weights, &losses, self.unbiased)?;
        let mut per_group = Vec::new();
        if self.groups.len() > 1 {
            let mut start = 0;
            for (states, weights) in self.group_slices() {
                let mass: f64 = weights.iter().sum();
                let normalized: Vec<f64> = weights.iter().map(|w| w / mass).collect();
                let l = &losses[start..start + states.len()];
                start += states.len();
                per_group.push(weighted_cov(model, theta, states, &normalized, l, self.unbiased)?);
            }
        }
        Ok((pooled, per_group))
    }
}

fn weighted_cov<M: EnergyModel + ?Sized>(
    model: &M,
    theta: &[f64],
    states: &[StateVector],
    weights: &[f64],
    losses: &[f64],
    unbiased: bool,
) -> Result<Vec<f64>> {
    let n = states.len();
    if n < 2 {
        return Err(Error::Estimation(format!(
            "covariance needs at least 2 samples, got {n}"
        )));
    }
    let mean: f64 = weights.iter().zip(losses).map(|(w, l)| w * l).sum();
    let scale = if unbiased { n as f64 / (n as f64 - 1.0) } else { 1.0 };
    let centered: Vec<f64> = weights
        .iter()
        .zip(losses)
        .map(|(w, l)| scale * w * (l - mean))
        .collect();
    let mut out = vec![0.0; theta.len()];
    model.accumulate_grad_theta(theta, states, &centered, &mut out);
    Ok(out)
}

/// Standard error of the mean of independent per-group estimates.
fn between_group_se(groups: &[Vec<f64>], p: usize) -> Vec<f64> {
    let g = groups.len();
    if g < 2 {
        return vec![0.0; p];
    }
    (0..p)
        .map(|j| {
            let mean = groups.iter().map(|v| v[j]).sum::<f64>() / g as f64;
            let var = groups.iter().map(|v| (v[j] - mean).powi(2)).sum::<f64>() / (g as f64 - 1.0);
            (var / g as f64).sqrt()
        })
        .collect()
}

/// Supplies draws from `ρ_β`.
pub trait PhaseSource {
    /// `tag` distinguishes phases within one estimate; sources that sample
    /// derive their seed from it.
    fn draw<M: EnergyModel + ?Sized>(
        &self,
        model: &M,
        theta: &ParamVector,
        beta: NudgeStrength,
        t: Temperature,
        tag: u64,
    ) -> Result<Phase>;

    /// The same source with a different master seed.
    fn reseeded(&self, seed: u64) -> Self
    where
        Self: Sized;
}

/// Where the chains of each phase start.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ChainStart {
    /// The model's initial state.
    ModelDefault,
    Given(StateVector),
    /// The deterministic minimizer of each phase's own kernel.
    RelaxedPerPhase(RelaxConfig),
    /// The deterministic minimizer at β = 0, shared by every phase.
    RelaxedFree(RelaxConfig),
}

/// Independent MCMC chains per phase.
#[derive(Clone, Debug)]
pub struct McmcSource {
    pub cfg: ChainConfig,
    pub start: ChainStart,
}

impl McmcSource {
    pub fn new(cfg: ChainConfig) -> Self {
        Self {
            cfg,
            start: ChainStart::ModelDefault,
        }
    }

    pub fn with_start(mut self, start: ChainStart) -> Self {
        self.start = start;
        self
    }
}

fn relaxed<M: EnergyModel + ?Sized>(
    model: &M,
    theta: &ParamVector,
    beta: NudgeStrength,
    r: &RelaxConfig,
) -> Result<StateVector> {
    let start = StateVector::of_kind(model.initial_state(), model.state_kind())?;
    Ok(relax_deterministic(model, theta, beta, &start, r.step_size, r.max_iters, r.tol)?.state)
}

impl PhaseSource for McmcSource {
    fn draw<M: EnergyModel + ?Sized>(
        &self,
        model: &M,
        theta: &ParamVector,
        beta: NudgeStrength,
        t: Temperature,
        tag: u64,
    ) -> Result<Phase> {
        let seed = derive_seed(self.cfg.seed, &[tag]);
        let cfg = ChainConfig {
            seed,
            ..self.cfg.clone()
        };
        let init = match &self.start {
            ChainStart::ModelDefault => None,
            ChainStart::Given(s) => Some(s.clone()),
            ChainStart::RelaxedPerPhase(r) => Some(relaxed(model, theta, beta, r)?),
            ChainStart::RelaxedFree(r) => Some(relaxed(model, theta, NudgeStrength::FREE, r)?),
        };
        let batch = run_chains(model, theta, beta, t, &cfg, init.as_ref())?;
        let n = batch.len();
        if n == 0 {
            return Err(Error::Estimation("sampler returned no samples".into()));
        }
        let per_chain = BATCH_MEANS.div_ceil(batch.chain_lengths.len());
        let groups = batch
            .chain_lengths
            .iter()
            .filter(|&&len| len > 0)
            .flat_map(|&len| {
                let b = per_chain.min(len);
                (0..b).map(move |i| (i + 1) * len / b - i * len / b)
            })
            .collect();
        Ok(Phase {
            beta: beta.value(),
            weights: vec![1.0 / n as f64; n],
            states: batch.samples,
            groups,
            unbiased: true,
            seed: Some(seed),
        })
    }

    fn reseeded(&self, seed: u64) -> Self {
        Self {
            cfg: self.cfg.clone().with_seed(seed),
            start: self.start.clone(),
        }
    }
}

/// Exact expectations by enumeration.
#[derive(Clone, Copy, Debug)]
pub struct ExactSource {
    pub n_max: usize,
}

impl Default for ExactSource {
    fn default() -> Self {
        Self { n_max: DEFAULT_N_MAX }
    }
}

impl PhaseSource for ExactSource {
    fn draw<M: EnergyModel + ?Sized>(
        &self,
        model: &M,
        theta: &ParamVector,
        beta: NudgeStrength,
        t: Temperature,
        _tag: u64,
    ) -> Result<Phase> {
        let table = GibbsTable::build_with_limit(model, theta, beta, t, self.n_max)?;
        let n = table.states.len();
        Ok(Phase {
            beta: beta.value(),
            states: table.states,
            weights: table.probs,
            groups: vec![n],
            unbiased: false,
            seed: None,
        })
    }

    fn reseeded(&self, _seed: u64) -> Self {
        *self
    }
}

fn record<M: EnergyModel + ?Sized>(meta: &mut EstimateMeta, phase: &Phase, model: &M) {
    meta.betas.push(phase.beta);
    meta.samples_per_phase.push(phase.states.len());
    if let Some(s) = phase.seed {
        meta.seeds.push(s);
    }
    meta.mean_losses.push(phase.mean_loss(model));
}

/// `(1/β)·(𝔼_{ρ_β}[∇_θ E] − 𝔼_{ρ_0}[∇_θ E])` from two independent phases.
fn contrast_at<S, M>(
    source: &S,
    model: &M,
    theta: &ParamVector,
    t: Temperature,
    beta: NudgeStrength,
    method: Method,
) -> Result<GradEstimate>
where
    S: PhaseSource,
    M: EnergyModel + ?Sized,
{
    let free = source.draw(model, theta, NudgeStrength::FREE, t, TAG_FREE)?;
    let nudged = source.draw(model, theta, beta, t, TAG_NUDGED)?;
    let (m0, g0) = free.grad_means(model, theta.values());
    let (m1, g1) = nudged.grad_means(model, theta.values());
    let inv = 1.0 / beta.value();
    let grad: Vec<f64> = m1.iter().zip(&m0).map(|(a, b)| inv * (a - b)).collect();
    let se0 = between_group_se(&g0, theta.dim());
    let se1 = between_group_se(&g1, theta.dim());
    let std_err = se0
        .iter()
        .zip(&se1)
        .map(|(a, b)| inv * (a * a + b * b).sqrt())
        .collect();
    let mut meta = EstimateMeta::default();
    record(&mut meta, &free, model);
    record(&mut meta, &nudged, model);
    Ok(GradEstimate {
        grad: theta.with_values(grad)?,
        std_err,
        method,
        meta,
    })
}

/// `−(1/T) Σ_k w_k Cov_{ρ_{β_k}}[ℓ, ∇_θ E]` with one independent phase per node.
fn covariance_quadrature<S, M>(
    source: &S,
    model: &M,
    theta: &ParamVector,
    t: Temperature,
    quad: &QuadratureSpec,
    method: Method,
) -> Result<GradEstimate>
where
    S: PhaseSource,
    M: EnergyModel + ?Sized,
{
    let p = theta.dim();
    let inv_t = 1.0 / t.value();
    let mut grad = vec![0.0; p];
    let mut var = vec![0.0; p];
    let mut meta = EstimateMeta::default();
    for (k, (&b, &w)) in quad.nodes().iter().zip(quad.weights()).enumerate() {
        let phase = source.draw(model, theta, NudgeStrength::new(b)?, t, TAG_NODE + k as u64)?;
        let (cov, groups) = phase.loss_grad_cov(model, theta.values())?;
        let se = between_group_se(&groups, p);
        for j in 0..p {
            grad[j] -= w * inv_t * cov[j];
            var[j] += (w * inv_t * se[j]).powi(2);
        }
        record(&mut meta, &phase, model);
    }
    Ok(GradEstimate {
        grad: theta.with_values(grad)?,
        std_err: var.into_iter().map(f64::sqrt).collect(),
        method,
        meta,
    })
}

/// `𝔼_{ρ_1}[∇_θ E] − 𝔼_{ρ_0}[∇_θ E]`.
pub fn grad_contrast<S: PhaseSource, M: EnergyModel + ?Sized>(
    source: &S,
    model: &M,
    theta: &ParamVector,
    t: Temperature,
) -> Result<GradEstimate> {
    contrast_at(source, model, theta, t, NudgeStrength::NUDGED, Method::ExpectationContrast)
}

/// Integrated-covariance form of `∇_θ J`.
pub fn grad_covariance<S: PhaseSource, M: EnergyModel + ?Sized>(
    source: &S,
    model: &M,
    theta: &ParamVector,
    t: Temperature,
    quad: &QuadratureSpec,
) -> Result<GradEstimate> {
    covariance_quadrature(source, model, theta, t, quad, Method::IntegratedCovariance)
}

/// Finite-difference EP update at nudge `β_small`.
pub fn grad_classical<S: PhaseSource, M: EnergyModel + ?Sized>(
    source: &S,
    model: &M,
    theta: &ParamVector,
    t: Temperature,
    beta_small: f64,
) -> Result<GradEstimate> {
    if !(beta_small > 0.0 && beta_small <= 1.0) {
        return Err(Error::invalid(format!(
            "nudge must lie in (0, 1], got {beta_small}"
        )));
    }
    contrast_at(source, model, theta, t, NudgeStrength::new(beta_small)?, Method::ClassicalEP)
}

/// Discrete path integral over covariance nodes; same estimator as
/// [`grad_covariance`], reported under its own name.
pub fn grad_path<S: PhaseSource, M: EnergyModel + ?Sized>(
    source: &S,
    model: &M,
    theta: &ParamVector,
    t: Temperature,
    quad: &QuadratureSpec,
) -> Result<GradEstimate> {
    covariance_quadrature(source, model, theta, t, quad, Method::PathIntegral)
}

/// `−(1/T) Cov_{ρ_0}[ℓ, ∇_θ E]`, the gradient of `𝔼_{ρ_0}[ℓ]`.
pub fn grad_supervised<S: PhaseSource, M: EnergyModel + ?Sized>(
    source: &S,
    model: &M,
    theta: &ParamVector,
    t: Temperature,
) -> Result<GradEstimate> {
    let p = theta.dim();
    let phase = source.draw(model, theta, NudgeStrength::FREE, t, TAG_FREE)?;
    let (cov, groups) = phase.loss_grad_cov(model, theta.values())?;
    let inv_t = 1.0 / t.value();
    let se = between_group_se(&groups, p);
    let mut meta = EstimateMeta::default();
    record(&mut meta, &phase, model);
    Ok(GradEstimate {
        grad: theta.with_values(cov.iter().map(|c| -inv_t * c).collect())?,
        std_err: se.iter().map(|s| inv_t * s).collect(),
        method: Method::SupervisedCovariance,
        meta,
    })
}

pub fn grad_contrast_mc<M: EnergyModel + ?Sized>(
    model: &M,
    theta: &ParamVector,
    t: Temperature,
    cfg: &ChainConfig,
) -> Result<GradEstimate> {
    grad_contrast(&McmcSource::new(cfg.clone()), model, theta, t)
}

pub fn grad_covariance_mc<M: EnergyModel + ?Sized>(
    model: &M,
    theta: &ParamVector,
    t: Temperature,
    quad: &QuadratureSpec,
    cfg: &ChainConfig,
) -> Result<GradEstimate> {
    grad_covariance(&McmcSource::new(cfg.clone()), model, theta, t, quad)
}

pub fn grad_classical_ep<M: EnergyModel + ?Sized>(
    model: &M,
    theta: &ParamVector,
    t: Temperature,
    beta_small: f64,
    cfg: &ChainConfig,
) -> Result<GradEstimate> {
    grad_classical(&McmcSource::new(cfg.clone()), model, theta, t, beta_small)
}

pub fn grad_path_integral<M: EnergyModel + ?Sized>(
    model: &M,
    theta: &ParamVector,
    t: Temperature,
    quad: &QuadratureSpec,
    cfg: &ChainConfig,
) -> Result<GradEstimate> {
    grad_path(&McmcSource::new(cfg.clone()), model, theta, t, quad)
}

pub fn grad_supervised_mc<M: EnergyModel + ?Sized>(
    model: &M,
    theta: &ParamVector,
    t: Temperature,
    cfg: &ChainConfig,
) -> Result<GradEstimate> {
    grad_supervised(&McmcSource::new(cfg.clone()), model, theta, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{SpinGlass, SpinLoss, TwoState};
    use crate::oracle::{exact_grad_j_contrast, exact_grad_j_covariance, random_instance};
    use crate::sampler::KernelKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t1() -> Temperature {
        Temperature::default()
    }

    fn gibbs(n_steps: usize, seed: u64) -> ChainConfig {
        ChainConfig::new(KernelKind::GibbsSweepBinary, n_steps, seed)
    }

    #[test]
    fn exact_source_reproduces_oracle_contrast() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let inst = random_instance(&mut rng, 6, true);
            let est = grad_contrast(&ExactSource::default(), &inst.model, &inst.theta, t1()).unwrap();
            let exact = exact_grad_j_contrast(&inst.model, &inst.theta, t1()).unwrap();
            for (a, b) in est.grad.values().iter().zip(exact.values()) {
                assert!((a - b).abs() <= 1e-10);
            }
            assert!(est.std_err.iter().all(|s| *s == 0.0));
        }
    }

    #[test]
    fn exact_source_reproduces_oracle_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let inst = random_instance(&mut rng, 5, false);
        let q = QuadratureSpec::trapezoid(9).unwrap();
        let est = grad_covariance(&ExactSource::default(), &inst.model, &inst.theta, t1(), &q).unwrap();
        let exact = exact_grad_j_covariance(&inst.model, &inst.theta, t1(), &q).unwrap();
        for (a, b) in est.grad.values().iter().zip(exact.values()) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn two_state_contrast_mc() {
        let theta = ParamVector::flat(vec![0.0]).unwrap();
        let est = grad_contrast_mc(&TwoState, &theta, t1(), &gibbs(2500, 7)).unwrap();
        let g = est.grad.values()[0];
        assert!((g + 0.23106).abs() <= 3.0 * est.std_err[0], "{g} ± {}", est.std_err[0]);
        assert_eq!(est.meta.samples_per_phase, vec![16000, 16000]);
        assert_eq!(est.meta.betas, vec![0.0, 1.0]);
    }

    #[test]
    fn classical_at_unit_nudge_equals_contrast() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inst = random_instance(&mut rng, 5, false);
        let cfg = gibbs(200, 11);
        let a = grad_contrast_mc(&inst.model, &inst.theta, t1(), &cfg).unwrap();
        let b = grad_classical_ep(&inst.model, &inst.theta, t1(), 1.0, &cfg).unwrap();
        assert_eq!(a.grad, b.grad);
        assert_eq!(a.std_err, b.std_err);
    }

    #[test]
    fn classical_rejects_zero_nudge() {
        let theta = ParamVector::flat(vec![0.0]).unwrap();
        assert!(grad_classical_ep(&TwoState, &theta, t1(), 0.0, &gibbs(10, 0)).is_err());
    }

    #[test]
    fn two_node_path_averages_endpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let inst = random_instance(&mut rng, 4, false);
        let q = QuadratureSpec::trapezoid(2).unwrap();
        let est = grad_path(&ExactSource::default(), &inst.model, &inst.theta, t1(), &q).unwrap();
        let c0 = crate::oracle::exact_loss_grad_covariance(&inst.model, &inst.theta, NudgeStrength::FREE, t1()).unwrap();
        let c1 = crate::oracle::exact_loss_grad_covariance(&inst.model, &inst.theta, NudgeStrength::NUDGED, t1()).unwrap();
        for j in 0..c0.len() {
            assert!((est.grad.values()[j] + 0.5 * (c0[j] + c1[j])).abs() <= 1e-12);
        }
        assert_eq!(est.method, Method::PathIntegral);
    }

    #[test]
    fn covariance_needs_two_samples() {
        let theta = ParamVector::flat(vec![0.0]).unwrap();
        let mut cfg = gibbs(2, 0).with_chains(1).with_burn_in(1);
        cfg.thin = 1;
        let q = QuadratureSpec::trapezoid(2).unwrap();
        assert!(matches!(
            grad_covariance_mc(&TwoState, &theta, t1(), &q, &cfg),
            Err(Error::Estimation(_))
        ));
    }

    #[test]
    fn constant_loss_covariance_vanishes() {
        let m = SpinGlass::new(4, SpinLoss::Constant(2.0));
        let theta = ParamVector::zeros(m.layout());
        let q = QuadratureSpec::trapezoid(3).unwrap();
        let est = grad_covariance_mc(&m, &theta, t1(), &q, &gibbs(300, 5)).unwrap();
        assert!(est.grad.values().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn single_chain_uses_batch_means() {
        let theta = ParamVector::flat(vec![0.0]).unwrap();
        let cfg = gibbs(1000, 3).with_chains(1);
        let est = grad_supervised_mc(&TwoState, &theta, t1(), &cfg).unwrap();
        assert!(est.std_err[0] > 0.0);
    }
}
