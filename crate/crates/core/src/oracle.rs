//! Exact ground truth by exhaustive enumeration of small binary models.
//!
//! Every quantity here is a finite sum over the `2^n` configurations of the
//! unclamped units (clamped units stay at their initial values). Partition
//! sums are max-shifted; probabilities are formed in log space and
//! exponentiated once. Sums run in state-index order, so results are
//! bit-stable for a given input.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kernel::{
    EnergyModel, NudgeStrength, ParamVector, StateKind, StateVector, Temperature,
};
use crate::model::{SpinGlass, SpinLoss};
use crate::quadrature::QuadratureSpec;

/// Default cap on enumerated units (65 536 states).
pub const DEFAULT_N_MAX: usize = 16;

/// Tolerance on `Σ q = 1` for trial distributions.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// All configurations of the unclamped units of a binary model.
pub fn enumerate_states<M: EnergyModel + ?Sized>(model: &M, n_max: usize) -> Result<Vec<StateVector>> {
    let StateKind::Binary(levels) = model.state_kind() else {
        return Err(Error::invalid("exact enumeration needs a binary state space"));
    };
    let mask = model.clamp_mask();
    let free: Vec<usize> = (0..model.state_dim()).filter(|&i| !mask[i]).collect();
    if free.len() > n_max {
        return Err(Error::EnumerationRefused {
            n: free.len(),
            n_max,
        });
    }
    let base = model.initial_state();
    let kind = model.state_kind();
    Ok((0..1usize << free.len())
        .map(|idx| {
            let mut s = base.clone();
            for (bit, &unit) in free.iter().enumerate() {
                s[unit] = if idx >> bit & 1 == 1 {
                    levels.high
                } else {
                    levels.low
                };
            }
            StateVector::from_raw(s, kind)
        })
        .collect())
}

/// The Gibbs law `ρ_β` tabulated over every state.
#[derive(Clone, Debug)]
pub struct GibbsTable {
    pub states: Vec<StateVector>,
    pub probs: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub losses: Vec<f64>,
    pub log_z: f64,
    pub beta: f64,
    pub temperature: f64,
}

impl GibbsTable {
    pub fn build<M: EnergyModel + ?Sized>(
        model: &M,
        theta: &ParamVector,
        beta: NudgeStrength,
        t: Temperature,
    ) -> Result<Self> {
        Self::build_with_limit(model, theta, beta, t, DEFAULT_N_MAX)
    }

    pub fn build_with_limit<M: EnergyModel + ?Sized>(
        model: &M,
        theta: &ParamVector,
        beta: NudgeStrength,
        t: Temperature,
        n_max: usize,
    ) -> Result<Self> {
        check_theta(model, theta)?;
        let states = enumerate_states(model, n_max)?;
        Self::from_states(model, theta, beta, t, states)
    }

    fn from_states<M: EnergyModel + ?Sized>(
        model: &M,
        theta: &ParamVector,
        beta: NudgeStrength,
        t: Temperature,
        states: Vec<StateVector>,
    ) -> Result<Self> {
        let (b, temp) = (beta.value(), t.value());
        let mut losses = Vec::with_capacity(states.len());
        let mut log_w = Vec::with_capacity(states.len());
        for s in &states {
            let e = model.energy(theta.values(), s.values());
            if !e.is_finite() {
                return Err(Error::NonFinite {
                    term: "energy",
                    value: e,
                });
            }
            let l = model.loss(s.values());
            if !l.is_finite() {
                return Err(Error::NonFinite {
                    term: "loss",
                    value: l,
                });
            }
            losses.push(l);
            log_w.push(-(e + b * l) / temp);
        }
        let log_z = log_sum_exp(&log_w);
        let log_probs: Vec<f64> = log_w.iter().map(|lw| lw - log_z).collect();
        let probs = log_probs.iter().map(|lp| lp.exp()).collect();
        Ok(Self {
            states,
            probs,
            log_probs,
            losses,
            log_z,
            beta: b,
            temperature: temp,
        })
    }

    /// Same state set and θ at a different β.
    fn rebuild_at<M: EnergyModel + ?Sized>(
        &self,
        model: &M,
        theta: &ParamVector,
        beta: NudgeStrength,
    ) -> Result<Self> {
        Self::from_states(
            model,
            theta,
            beta,
            Temperature::new(self.temperature)?,
            self.states.clone(),
        )
    }

    pub fn expectation<F: Fn(&[f64]) -> f64>(&self, f: F) -> f64 {
        self.states
            .iter()
            .zip(&self.probs)
            .map(|(s, p)| p * f(s.values()))
            .sum()
    }

    pub fn expected_loss(&self) -> f64 {
        self.probs.iter().zip(&self.losses).map(|(p, l)| p * l).sum()
    }

    /// `𝔼[∇_θ E]`.
    pub fn mean_grad_theta<M: EnergyModel + ?Sized>(&self, model: &M, theta: &ParamVector) -> Vec<f64> {
        let mut out = vec![0.0; theta.dim()];
        model.accumulate_grad_theta(theta.values(), &self.states, &self.probs, &mut out);
        out
    }

    /// `Cov[ℓ, ∇_θ E] = 𝔼[(ℓ − 𝔼ℓ) ∇_θ E]`.
    pub fn loss_grad_covariance<M: EnergyModel + ?Sized>(
        &self,
        model: &M,
        theta: &ParamVector,
    ) -> Vec<f64> {
        let mean_loss = self.expected_loss();
        let weights: Vec<f64> = self
            .probs
            .iter()
            .zip(&self.losses)
            .map(|(p, l)| p * (l - mean_loss))
            .collect();
        let mut out = vec![0.0; theta.dim()];
        model.accumulate_grad_theta(theta.values(), &self.states, &weights, &mut out);
        out
    }
}

fn check_theta<M: EnergyModel + ?Sized>(model: &M, theta: &ParamVector) -> Result<()> {
    if theta.dim() != model.param_dim() {
        return Err(Error::Shape {
            what: "parameter vector",
            expected: model.param_dim(),
            got: theta.dim(),
        });
    }
    Ok(())
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `log Z_β(θ)`.
pub fn partition_function<M: EnergyModel + ?Sized>(
    model: &M,
    theta: &ParamVector,
    beta: NudgeStrength,
    t: Temperature,
) -> Result<f64> {
    Ok(GibbsTable::build(model, theta, beta, t)?.log_z)
}

/// `A(θ, β) = −T log Z_β(θ)`.
pub fn free_energy<M: EnergyModel + ?Sized>(
    model: &M,
    theta: &ParamVector,
    beta: NudgeStrength,
    t: Temperature,
) -> Result<f64> {
    Ok(-t.value() * partition_function(model, theta, beta, t)?)
}

/// `A` of the kernel `F + δ` minus `A` of `F`, taken under the law of `F`
/// as `−T log 𝔼_ρ[exp(−δ/T)]`. Uses `expm1` and `log1p`, so a small shift
/// keeps its relative precision instead of cancelling between two large
/// free energies.
pub fn free_energy_shift<F: Fn(&[f64]) -> f64>(table: &GibbsTable, shift: F) -> f64 {
    let t = table.temperature;
    let m: f64 = table
        .states
        .iter()
        .zip(&table.probs)
        .map(|(s, p)| p * (-shift(s.values()) / t).exp_m1())
        .sum();
    -t * m.ln_1p()
}

/// `J(θ) = A(θ, 1) − A(θ, 0)`.
pub fn contrastive_objective<M: EnergyModel + ?Sized>(
    model: &M,
    theta: &ParamVector,
    t: Temperature,
) -> Result<f64> {
    let free = GibbsTable::build(model, theta, NudgeStrength::FREE, t)?;
    let nudged = free.rebuild_at(model, theta, NudgeStrength::NUDGED)?;
    Ok(-t.value() * (nudged.log_z - free.log_z))
}

/// `𝔼_{ρ_β}[f]` for a scalar state function.
pub fn gibbs_expectation<M, F>(
    model: &M,
    theta: &ParamVector,
    beta: NudgeStrength,
    t: Temperature,
    f: F,
) -> Result<f64>
where
    M: EnergyModel + ?Sized,
    F: Fn(&[f64]) -> f64,
{
    let table = GibbsTable::build(model, theta, beta, t)?;
    let v = table.expectation(f);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite {
            term: "expectation",
            value: v,
        })
    }
}

/// `𝔼_{ρ_β}[f]` for a vector-valued state function.
pub fn gibbs_expectation_vec<M, F>(
    model: &M,
    theta: &ParamVector,
    beta: NudgeStrength,
    t: Temperature,
    f: F,
) -> Result<Vec<f64>>
where
    M: EnergyModel + ?Sized,
    F: Fn(&[f64]) -> Vec<f64>,
{
    let table = GibbsTable::build(model, theta, beta, t)?;
    let mut acc: Option<Vec<f64>> = None;
    for (s, p) in table.states.iter().zip(&table.probs) {
        let v = f(s.values());
        match acc.as_mut() {
            None => acc = Some(v.iter().map(|x| p * x).collect()),
            Some(a) => a.iter_mut().zip(&v).for_each(|(a, x)| *a += p * x),
        }
    }
    Ok(acc.unwrap_or_default())
}

/// `∇_θ J = 𝔼_{ρ_1}[∇_θ E] − 𝔼_{ρ_0}[∇_θ E]`.
pub fn exact_grad_j_contrast<M: EnergyModel + ?Sized>(
    model: &M,
    theta: &ParamVector,
    t: Temperature,
) -> Result<ParamVector> {
    let free = GibbsTable::build(model, theta, NudgeStrength::FREE, t)?;
    let nudged = free.rebuild_at(model, theta, NudgeStrength::NUDGED)?;
    let g1 = nudged.mean_grad_theta(model, theta);
    let g0 = free.mean_grad_theta(model, theta);
    theta.with_values(g1.iter().zip(&g0).map(|(a, b)| a - b).collect())
}

/// `∂A/∂β = 𝔼_{ρ_β}[ℓ]`.
pub fn exact_da_dbeta<M: EnergyModel + ?Sized>(
    model: &M,
    theta: &ParamVector,
    beta: NudgeStrength,
    t: Temperature,
) -> Result<f64> {
    Ok(GibbsTable::build(model, theta, beta, t)?.expected_loss())
}

/// `Cov_{ρ_β}[ℓ, ∇_θ E]`, exact.
pub fn exact_loss_grad_covariance<M: EnergyModel + ?Sized>(
    model: &M,
    theta: &ParamVector,
    beta: NudgeStrength,
    t: Temperature,
) -> Result<Vec<f64>> {
    Ok(GibbsTable::build(model, theta, beta, t)?.loss_grad_covariance(model, theta))
}

/// `−(1/T) Σ_k w_k Cov_{ρ_{β_k}}[ℓ, ∇_θ E]` with exact covariances per node.
pub fn exact_grad_j_covariance<M: EnergyModel + ?Sized>(
    model: &M,
    theta: &ParamVector,
    t: Temperature,
    quad: &QuadratureSpec,
) -> Result<ParamVector> {
    let base = GibbsTable::build(model, theta, NudgeStrength::FREE, t)?;
    let mut acc = vec![0.0; theta.dim()];
    for (&b, &w) in quad.nodes().iter().zip(quad.weights()) {
        let table = base.rebuild_at(model, theta, NudgeStrength::new(b)?)?;
        let cov = table.loss_grad_covariance(model, theta);
        for (a, c) in acc.iter_mut().zip(cov) {
            *a -= w * c / t.value();
        }
    }
    theta.with_values(acc)
}

/// `KL(ρ_1 ‖ ρ_0)`.
pub fn kl_nudged_free<M: EnergyModel + ?Sized>(
    model: &M,
    theta: &ParamVector,
    t: Temperature,
) -> Result<f64> {
    let free = GibbsTable::build(model, theta, NudgeStrength::FREE, t)?;
    let nudged = free.rebuild_at(model, theta, NudgeStrength::NUDGED)?;
    Ok(kl(&nudged, &free))
}

fn kl(p: &GibbsTable, q: &GibbsTable) -> f64 {
    p.probs
        .iter()
        .zip(p.log_probs.iter().zip(&q.log_probs))
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, (lp, lq))| pi * (lp - lq))
        .sum()
}

/// The three terms of `J = 𝔼_{ρ_1}[ℓ] + T·KL(ρ_1 ‖ ρ_0)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decomposition {
    pub objective: f64,
    pub nudged_loss: f64,
    pub kl: f64,
    pub temperature: f64,
}

impl Decomposition {
    pub fn residual(&self) -> f64 {
        self.objective - (self.nudged_loss + self.temperature * self.kl)
    }
}

pub fn decomposition<M: EnergyModel + ?Sized>(
    model: &M,
    theta: &ParamVector,
    t: Temperature,
) -> Result<Decomposition> {
    let free = GibbsTable::build(model, theta, NudgeStrength::FREE, t)?;
    let nudged = free.rebuild_at(model, theta, NudgeStrength::NUDGED)?;
    Ok(Decomposition {
        objective: -t.value() * (nudged.log_z - free.log_z),
        nudged_loss: nudged.expected_loss(),
        kl: kl(&nudged, &free),
        temperature: t.value(),
    })
}

/// `J − (𝔼_{ρ_1}[ℓ] + T·KL(ρ_1 ‖ ρ_0))`; zero up to rounding.
pub fn decomposition_residual<M: EnergyModel + ?Sized>(
    model: &M,
    theta: &ParamVector,
    t: Temperature,
) -> Result<f64> {
    Ok(decomposition(model, theta, t)?.residual())
}

/// `𝔼_q[E + βℓ] − T·S(q)` for an explicit distribution `q` over the
/// enumerated states (same order as [`enumerate_states`]).
pub fn variational_free_energy<M: EnergyModel + ?Sized>(
    model: &M,
    theta: &ParamVector,
    beta: NudgeStrength,
    t: Temperature,
    q: &[f64],
) -> Result<f64> {
    check_theta(model, theta)?;
    let states = enumerate_states(model, DEFAULT_N_MAX)?;
    if q.len() != states.len() {
        return Err(Error::Shape {
            what: "trial distribution",
            expected: states.len(),
            got: q.len(),
        });
    }
    if q.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidDistribution("entries must be finite and nonnegative".into()));
    }
    let total: f64 = q.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::InvalidDistribution(format!("mass {total} is not 1")));
    }
    let mut mean_kernel = 0.0;
    let mut neg_entropy = 0.0;
    for (s, &qi) in states.iter().zip(q) {
        if qi == 0.0 {
            continue;
        }
        let f = model.energy(theta.values(), s.values()) + beta.value() * model.loss(s.values());
        mean_kernel += qi * f;
        neg_entropy += qi * qi.ln();
    }
    Ok(mean_kernel + t.value() * neg_entropy)
}

/// A random spin-glass instance with its couplings.
#[derive(Clone, Debug)]
pub struct Instance {
    pub model: SpinGlass,
    pub theta: ParamVector,
}

/// Spin glass on `n` units with i.i.d. standard normal couplings and fields,
/// and a mismatch loss on the last unit. With `signed_loss` the loss gets a
/// random offset in `[−1, 1)` so it can be negative.
pub fn random_instance<R: Rng + ?Sized>(rng: &mut R, n: usize, signed_loss: bool) -> Instance {
    let target = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let weight = rng.random_range(0.5..2.0);
    let offset = if signed_loss {
        rng.random_range(-1.0..1.0)
    } else {
        0.0
    };
    let model = SpinGlass::new(
        n,
        SpinLoss::OutputMismatch {
            unit: n - 1,
            target,
            weight,
            offset,
        },
    );
    let values = (0..model.param_dim())
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let theta = ParamVector::new(values, model.layout()).expect("finite couplings");
    Instance { model, theta }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TwoState;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t1() -> Temperature {
        Temperature::default()
    }

    fn theta0() -> ParamVector {
        ParamVector::flat(vec![0.0]).unwrap()
    }

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn two_state_log_z() {
        let lz = partition_function(&TwoState, &theta0(), NudgeStrength::FREE, t1()).unwrap();
        assert!((lz - 2f64.ln()).abs() < 1e-15);
        // log(1 + e^{-(θ+β)/T}) at θ = 0.3, β = 0.6, T = 2
        let th = ParamVector::flat(vec![0.3]).unwrap();
        let lz = partition_function(&TwoState, &th, NudgeStrength::new(0.6).unwrap(), Temperature::new(2.0).unwrap())
            .unwrap();
        assert!((lz - (1.0 + (-0.45f64).exp()).ln()).abs() < 1e-15);
    }

    #[test]
    fn uniform_measure_log_z() {
        for n in 1..=6 {
            let m = SpinGlass::new(n, SpinLoss::Zero);
            let theta = ParamVector::zeros(m.layout());
            let t = Temperature::new(0.7).unwrap();
            let lz = partition_function(&m, &theta, NudgeStrength::FREE, t).unwrap();
            assert!((lz - n as f64 * 2f64.ln()).abs() < 1e-12);
            let a = free_energy(&m, &theta, NudgeStrength::FREE, t).unwrap();
            assert!((a + 0.7 * n as f64 * 2f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn two_state_free_energy_and_objective() {
        let a = free_energy(&TwoState, &theta0(), NudgeStrength::FREE, t1()).unwrap();
        assert!((a + 0.693147).abs() < 1e-6);
        let j = contrastive_objective(&TwoState, &theta0(), t1()).unwrap();
        let closed = -((1.0 + (-1f64).exp()) / 2.0).ln();
        assert!((j - closed).abs() < 1e-15);
        assert!((j - 0.37989).abs() < 1e-5);
    }

    #[test]
    fn free_energy_below_min_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let inst = random_instance(&mut rng, 5, true);
            for b in [0.0, 0.5, 1.0] {
                let beta = NudgeStrength::new(b).unwrap();
                let a = free_energy(&inst.model, &inst.theta, beta, t1()).unwrap();
                let min_f = enumerate_states(&inst.model, 16)
                    .unwrap()
                    .iter()
                    .map(|s| {
                        inst.model.energy(inst.theta.values(), s.values()) + b * inst.model.loss(s.values())
                    })
                    .fold(f64::INFINITY, f64::min);
                assert!(a <= min_f);
            }
        }
    }

    #[test]
    fn two_state_expectations_and_gradient() {
        let el = gibbs_expectation(&TwoState, &theta0(), NudgeStrength::FREE, t1(), |s| s[0]).unwrap();
        assert!((el - 0.5).abs() < 1e-15);
        let c = gibbs_expectation(&TwoState, &theta0(), NudgeStrength::FREE, t1(), |_| 3.25).unwrap();
        assert!((c - 3.25).abs() < 1e-15);
        let g = exact_grad_j_contrast(&TwoState, &theta0(), t1()).unwrap();
        let closed = sigmoid(-1.0) - sigmoid(0.0);
        assert!((g.values()[0] - closed).abs() < 1e-15);
        assert!((g.values()[0] + 0.23106).abs() < 1e-5);
        let d = exact_da_dbeta(&TwoState, &theta0(), NudgeStrength::FREE, t1()).unwrap();
        assert!((d - 0.5).abs() < 1e-15);
    }

    #[test]
    fn single_spin_concentrates_on_ground_state() {
        // E = −θ s on one spin is the spin glass with n = 1 (field only).
        let m = SpinGlass::new(1, SpinLoss::Zero);
        let theta = ParamVector::new(vec![25.0], m.layout()).unwrap();
        let mean = gibbs_expectation(&m, &theta, NudgeStrength::FREE, t1(), |s| s[0]).unwrap();
        assert!((mean - 1.0).abs() < 1e-12);
        let zero = ParamVector::new(vec![0.0], m.layout()).unwrap();
        let lz = partition_function(&m, &zero, NudgeStrength::FREE, t1()).unwrap();
        assert!((lz - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn zero_loss_gives_zero_objective_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let inst = random_instance(&mut rng, 6, false);
        let m = inst.model.with_loss(SpinLoss::Zero);
        assert_eq!(contrastive_objective(&m, &inst.theta, t1()).unwrap(), 0.0);
        assert!(exact_grad_j_contrast(&m, &inst.theta, t1()).unwrap().values().iter().all(|v| *v == 0.0));
        let q = QuadratureSpec::trapezoid(5).unwrap();
        assert!(exact_grad_j_covariance(&m, &inst.theta, t1(), &q)
            .unwrap()
            .values()
            .iter()
            .all(|v| *v == 0.0));
        assert_eq!(kl_nudged_free(&m, &inst.theta, t1()).unwrap(), 0.0);
        assert_eq!(decomposition_residual(&m, &inst.theta, t1()).unwrap(), 0.0);
    }

    #[test]
    fn constant_loss_has_unit_beta_slope_and_zero_kl() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let inst = random_instance(&mut rng, 5, false);
        let m = inst.model.with_loss(SpinLoss::Constant(1.75));
        for b in [0.0, 0.4, 1.0] {
            let d = exact_da_dbeta(&m, &inst.theta, NudgeStrength::new(b).unwrap(), t1()).unwrap();
            assert!((d - 1.75).abs() < 1e-12);
        }
        assert!(kl_nudged_free(&m, &inst.theta, t1()).unwrap().abs() < 1e-12);
    }

    #[test]
    fn nonnegative_loss_gives_nonnegative_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let inst = random_instance(&mut rng, 6, false);
            assert!(contrastive_objective(&inst.model, &inst.theta, t1()).unwrap() >= 0.0);
        }
    }

    #[test]
    fn two_state_kl_and_residual() {
        let kl = kl_nudged_free(&TwoState, &theta0(), t1()).unwrap();
        let j = -((1.0 + (-1f64).exp()) / 2.0).ln();
        assert!((kl - (j - sigmoid(-1.0))).abs() < 1e-15);
        assert!((kl - 0.11094).abs() < 1e-5);
        assert!(decomposition_residual(&TwoState, &theta0(), t1()).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn two_state_covariance_quadrature() {
        let q = QuadratureSpec::trapezoid(129).unwrap();
        let g = exact_grad_j_covariance(&TwoState, &theta0(), t1(), &q).unwrap();
        let exact = exact_grad_j_contrast(&TwoState, &theta0(), t1()).unwrap();
        assert!((g.values()[0] - exact.values()[0]).abs() < 1e-4);
        assert!((g.values()[0] + 0.23106).abs() < 1e-4);
    }

    #[test]
    fn variational_free_energy_at_gibbs_equals_a() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let inst = random_instance(&mut rng, 6, true);
        let beta = NudgeStrength::new(0.3).unwrap();
        let table = GibbsTable::build(&inst.model, &inst.theta, beta, t1()).unwrap();
        let v = variational_free_energy(&inst.model, &inst.theta, beta, t1(), &table.probs).unwrap();
        let a = free_energy(&inst.model, &inst.theta, beta, t1()).unwrap();
        assert!((v - a).abs() <= 1e-10);
        let n = table.probs.len();
        let uniform = vec![1.0 / n as f64; n];
        assert!(variational_free_energy(&inst.model, &inst.theta, beta, t1(), &uniform).unwrap() >= a);
    }

    #[test]
    fn variational_free_energy_rejects_unnormalized() {
        let m = SpinGlass::new(2, SpinLoss::Zero);
        let theta = ParamVector::zeros(m.layout());
        let q = [0.3, 0.3, 0.3, 0.3];
        assert!(matches!(
            variational_free_energy(&m, &theta, NudgeStrength::FREE, t1(), &q),
            Err(Error::InvalidDistribution(_))
        ));
    }

    #[test]
    fn refuses_oversized_enumeration() {
        let m = SpinGlass::new(17, SpinLoss::Zero);
        let theta = ParamVector::zeros(m.layout());
        assert!(matches!(
            partition_function(&m, &theta, NudgeStrength::FREE, t1()),
            Err(Error::EnumerationRefused { n: 17, n_max: 16 })
        ));
        let small = SpinGlass::new(5, SpinLoss::Zero);
        assert!(GibbsTable::build_with_limit(&small, &ParamVector::zeros(small.layout()), NudgeStrength::FREE, t1(), 4).is_err());
    }

    #[test]
    fn clamped_units_are_not_enumerated() {
        let m = SpinGlass::new(4, SpinLoss::Zero).with_clamp(
            vec![true, false, false, true],
            vec![-1.0, 1.0, 1.0, 1.0],
        );
        let states = enumerate_states(&m, 16).unwrap();
        assert_eq!(states.len(), 4);
        assert!(states.iter().all(|s| s.values()[0] == -1.0 && s.values()[3] == 1.0));
    }

    #[test]
    fn gibbs_table_is_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let inst = random_instance(&mut rng, 10, true);
        let t = GibbsTable::build(&inst.model, &inst.theta, NudgeStrength::new(0.5).unwrap(), t1()).unwrap();
        assert!((t.probs.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        assert!(t.probs.iter().all(|p| *p >= 0.0));
    }

    #[test]
    fn continuous_model_is_refused() {
        let m = crate::model::QuadraticModel::new(2);
        let theta = ParamVector::zeros(m.layout());
        assert!(partition_function(&m, &theta, NudgeStrength::FREE, t1()).is_err());
    }
}
