use crate::kernel::{EnergyModel, Layout, Levels, StateKind};

/// One unit with `S = {0, 1}`, `E = θ s`, `ℓ(s) = s`.
///
/// This model uses {0, 1} levels rather than ±1 spins so its partition
/// function has the closed form `Z_β = 1 + exp(−(θ + β) / T)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct TwoState;

impl EnergyModel for TwoState {
    fn layout(&self) -> Layout {
        Layout::flat(1)
    }
    fn param_dim(&self) -> usize {
        1
    }
    fn state_dim(&self) -> usize {
        1
    }
    fn state_kind(&self) -> StateKind {
        StateKind::Binary(Levels::BIT)
    }
    fn energy(&self, theta: &[f64], s: &[f64]) -> f64 {
        theta[0] * s[0]
    }
    fn grad_theta_energy(&self, _theta: &[f64], s: &[f64]) -> Vec<f64> {
        vec![s[0]]
    }
    fn loss(&self, s: &[f64]) -> f64 {
        s[0]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum SimpleLoss {
    Sum,
    Zero,
}

/// `E = θ · s` over a continuous state; `ℓ(s) = Σ s` unless zeroed.
///
/// Unbounded below, so only usable for kernel and gradient checks.
#[derive(Clone, Debug)]
pub struct LinearModel {
    n: usize,
    loss: SimpleLoss,
}

impl LinearModel {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            loss: SimpleLoss::Sum,
        }
    }

    pub fn with_zero_loss(mut self) -> Self {
        self.loss = SimpleLoss::Zero;
        self
    }
}

impl EnergyModel for LinearModel {
    fn layout(&self) -> Layout {
        Layout::flat(self.n)
    }
    fn param_dim(&self) -> usize {
        self.n
    }
    fn state_dim(&self) -> usize {
        self.n
    }
    fn state_kind(&self) -> StateKind {
        StateKind::Continuous
    }
    fn energy(&self, theta: &[f64], s: &[f64]) -> f64 {
        theta.iter().zip(s).map(|(a, b)| a * b).sum()
    }
    fn grad_theta_energy(&self, _theta: &[f64], s: &[f64]) -> Vec<f64> {
        s.to_vec()
    }
    fn grad_state_energy(&self, theta: &[f64], _s: &[f64]) -> Option<Vec<f64>> {
        Some(theta.to_vec())
    }
    fn loss(&self, s: &[f64]) -> f64 {
        match self.loss {
            SimpleLoss::Sum => s.iter().sum(),
            SimpleLoss::Zero => 0.0,
        }
    }
    fn grad_state_loss(&self, s: &[f64]) -> Option<Vec<f64>> {
        let v = match self.loss {
            SimpleLoss::Sum => 1.0,
            SimpleLoss::Zero => 0.0,
        };
        Some(vec![v; s.len()])
    }
}

/// `E ≡ c` regardless of θ; the parameter gradient is identically zero.
#[derive(Clone, Debug)]
pub struct ConstantModel {
    pub p: usize,
    pub n: usize,
    pub value: f64,
}

impl EnergyModel for ConstantModel {
    fn layout(&self) -> Layout {
        Layout::flat(self.p)
    }
    fn param_dim(&self) -> usize {
        self.p
    }
    fn state_dim(&self) -> usize {
        self.n
    }
    fn state_kind(&self) -> StateKind {
        StateKind::Continuous
    }
    fn energy(&self, _theta: &[f64], _s: &[f64]) -> f64 {
        self.value
    }
    fn grad_theta_energy(&self, _theta: &[f64], _s: &[f64]) -> Vec<f64> {
        vec![0.0; self.p]
    }
    fn grad_state_energy(&self, _theta: &[f64], s: &[f64]) -> Option<Vec<f64>> {
        Some(vec![0.0; s.len()])
    }
    fn loss(&self, _s: &[f64]) -> f64 {
        0.0
    }
}

/// `E = ½‖s − θ‖²`, so `ρ_0 = N(θ, T·I)`. Optional loss `½‖s − target‖²`.
#[derive(Clone, Debug)]
pub struct QuadraticModel {
    n: usize,
    target: Option<Vec<f64>>,
    clamp: Vec<bool>,
    init: Vec<f64>,
}

impl QuadraticModel {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            target: None,
            clamp: vec![false; n],
            init: vec![0.0; n],
        }
    }

    pub fn with_target(mut self, target: Vec<f64>) -> Self {
        assert_eq!(target.len(), self.n, "target dimension");
        self.target = Some(target);
        self
    }

    /// Clamps the masked coordinates at the values in `init`.
    pub fn with_clamp(mut self, clamp: Vec<bool>, init: Vec<f64>) -> Self {
        assert_eq!(clamp.len(), self.n, "clamp mask dimension");
        assert_eq!(init.len(), self.n, "initial state dimension");
        self.clamp = clamp;
        self.init = init;
        self
    }
}

impl EnergyModel for QuadraticModel {
    fn layout(&self) -> Layout {
        Layout::from_sizes(&[("center", self.n)])
    }
    fn param_dim(&self) -> usize {
        self.n
    }
    fn state_dim(&self) -> usize {
        self.n
    }
    fn state_kind(&self) -> StateKind {
        StateKind::Continuous
    }
    fn clamp_mask(&self) -> Vec<bool> {
        self.clamp.clone()
    }
    fn initial_state(&self) -> Vec<f64> {
        self.init.clone()
    }
    fn energy(&self, theta: &[f64], s: &[f64]) -> f64 {
        0.5 * s.iter().zip(theta).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
    }
    fn grad_theta_energy(&self, theta: &[f64], s: &[f64]) -> Vec<f64> {
        theta.iter().zip(s).map(|(t, x)| t - x).collect()
    }
    fn grad_state_energy(&self, theta: &[f64], s: &[f64]) -> Option<Vec<f64>> {
        Some(s.iter().zip(theta).map(|(x, t)| x - t).collect())
    }
    fn loss(&self, s: &[f64]) -> f64 {
        match &self.target {
            Some(t) => 0.5 * s.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(),
            None => 0.0,
        }
    }
    fn grad_state_loss(&self, s: &[f64]) -> Option<Vec<f64>> {
        Some(match &self.target {
            Some(t) => s.iter().zip(t).map(|(a, b)| a - b).collect(),
            None => vec![0.0; s.len()],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{check_grad_state, check_grad_theta, ParamVector, StateVector};

    #[test]
    fn constant_energy_has_zero_gradient() {
        let m = ConstantModel {
            p: 3,
            n: 2,
            value: 4.2,
        };
        let theta = ParamVector::flat(vec![1.0, 2.0, 3.0]).unwrap();
        let s = StateVector::continuous(vec![0.1, 0.2]).unwrap();
        assert_eq!(m.grad_theta_energy(theta.values(), s.values()), vec![0.0; 3]);
        assert_eq!(check_grad_theta(&m, &theta, &s, 1e-5), 0.0);
    }

    #[test]
    fn linear_energy_fd_check_any_point() {
        let m = LinearModel::new(3);
        for (t, x) in [
            ([0.3, -2.0, 5.0], [1.0, 0.25, -0.75]),
            ([-1.1, 0.4, 0.0], [3.0, -2.5, 0.125]),
        ] {
            let theta = ParamVector::flat(t.to_vec()).unwrap();
            let s = StateVector::continuous(x.to_vec()).unwrap();
            // Central differences are exact for linear functions; h only controls rounding.
            assert!(check_grad_theta(&m, &theta, &s, 1e-3) <= 1e-10);
        }
    }

    #[test]
    fn quadratic_gradients_match_fd() {
        let m = QuadraticModel::new(3).with_target(vec![1.0, 0.0, -1.0]);
        let theta = ParamVector::flat(vec![0.5, -0.2, 0.9]).unwrap();
        let s = StateVector::continuous(vec![1.3, 0.7, -0.4]).unwrap();
        assert!(check_grad_theta(&m, &theta, &s, 1e-5) <= 1e-6);
        assert!(check_grad_state(&m, &theta, &s, 1e-5).unwrap() <= 1e-6);
    }
}
