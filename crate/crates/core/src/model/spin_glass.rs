use crate::kernel::{EnergyModel, Layout, Levels, StateKind};

/// Loss attached to a [`SpinGlass`].
#[derive(Clone, Debug, PartialEq)]
pub enum SpinLoss {
    Zero,
    Constant(f64),
    /// `weight · 1[s_unit ≠ target] + offset`.
    OutputMismatch {
        unit: usize,
        target: f64,
        weight: f64,
        offset: f64,
    },
}

/// Fully connected ±1 spin model
/// `E(θ, s) = −Σ_{i<j} J_ij s_i s_j − Σ_i h_i s_i`.
///
/// θ is laid out as the couplings `J` in row-major upper-triangular order
/// followed by the fields `h`.
#[derive(Clone, Debug)]
pub struct SpinGlass {
    n: usize,
    loss: SpinLoss,
    clamp: Vec<bool>,
    init: Vec<f64>,
}

impl SpinGlass {
    pub fn new(n: usize, loss: SpinLoss) -> Self {
        Self {
            n,
            loss,
            clamp: vec![false; n],
            init: vec![1.0; n],
        }
    }

    /// Holds the masked spins at their values in `init`.
    pub fn with_clamp(mut self, clamp: Vec<bool>, init: Vec<f64>) -> Self {
        assert_eq!(clamp.len(), self.n, "clamp mask dimension");
        assert_eq!(init.len(), self.n, "initial state dimension");
        self.clamp = clamp;
        self.init = init;
        self
    }

    pub fn n_spins(&self) -> usize {
        self.n
    }

    pub fn n_couplings(&self) -> usize {
        self.n * (self.n - 1) / 2
    }

    pub fn loss_spec(&self) -> &SpinLoss {
        &self.loss
    }

    /// Same couplings, different loss.
    pub fn with_loss(&self, loss: SpinLoss) -> Self {
        Self {
            loss,
            ..self.clone()
        }
    }
}

impl EnergyModel for SpinGlass {
    fn layout(&self) -> Layout {
        Layout::from_sizes(&[("couplings", self.n_couplings()), ("fields", self.n)])
    }
    fn param_dim(&self) -> usize {
        self.n_couplings() + self.n
    }
    fn state_dim(&self) -> usize {
        self.n
    }
    fn state_kind(&self) -> StateKind {
        StateKind::Binary(Levels::SPIN)
    }
    fn clamp_mask(&self) -> Vec<bool> {
        self.clamp.clone()
    }
    fn initial_state(&self) -> Vec<f64> {
        self.init.clone()
    }

    fn energy(&self, theta: &[f64], s: &[f64]) -> f64 {
        let (couplings, fields) = theta.split_at(self.n_couplings());
        let mut e = 0.0;
        let mut k = 0;
        for i in 0..self.n {
            let mut local = 0.0;
            for j in (i + 1)..self.n {
                local += couplings[k] * s[j];
                k += 1;
            }
            e -= s[i] * (local + fields[i]);
        }
        e
    }

    fn grad_theta_energy(&self, _theta: &[f64], s: &[f64]) -> Vec<f64> {
        let mut g = Vec::with_capacity(self.param_dim());
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                g.push(-s[i] * s[j]);
            }
        }
        g.extend(s.iter().map(|v| -v));
        g
    }

    fn loss(&self, s: &[f64]) -> f64 {
        match self.loss {
            SpinLoss::Zero => 0.0,
            SpinLoss::Constant(c) => c,
            SpinLoss::OutputMismatch {
                unit,
                target,
                weight,
                offset,
            } => {
                if s[unit] == target {
                    offset
                } else {
                    weight + offset
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{check_grad_theta, ParamVector, StateVector};

    #[test]
    fn energy_matches_pairwise_sum() {
        let m = SpinGlass::new(3, SpinLoss::Zero);
        // J12, J13, J23, h1, h2, h3
        let theta = [0.5, -1.0, 2.0, 0.1, 0.2, -0.3];
        let s = [1.0, -1.0, 1.0];
        let expected = -(0.5 * -1.0 + -1.0 * 1.0 + 2.0 * -1.0) - (0.1 - 0.2 - 0.3);
        assert!((m.energy(&theta, &s) - expected).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_fd() {
        let m = SpinGlass::new(4, SpinLoss::Zero);
        let theta = ParamVector::new(
            vec![0.3, -0.2, 0.8, 1.1, -0.6, 0.05, 0.4, -0.9, 0.2, 0.7],
            m.layout(),
        )
        .unwrap();
        let s = StateVector::spins(vec![1.0, -1.0, -1.0, 1.0]).unwrap();
        // Energy is linear in θ.
        assert!(check_grad_theta(&m, &theta, &s, 1e-3) <= 1e-10);
    }

    #[test]
    fn mismatch_loss() {
        let m = SpinGlass::new(
            2,
            SpinLoss::OutputMismatch {
                unit: 1,
                target: 1.0,
                weight: 2.0,
                offset: -0.5,
            },
        );
        assert_eq!(m.loss(&[1.0, 1.0]), -0.5);
        assert_eq!(m.loss(&[1.0, -1.0]), 1.5);
    }
}
