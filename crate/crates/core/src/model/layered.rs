//! Single-hidden-layer continuous Hopfield-style energy network.
//!
//! With state `s = (x, h, o)` (input clamped), `ρ = tanh` and parameters
//! `W1 (n_in × n_hidden)`, `W2 (n_hidden × n_out)`, `b_h`, `b_o`:
//!
//! ```text
//! E = ½‖h‖² + ½‖o‖² − ρ(h)ᵀ W1ᵀ x − ρ(o)ᵀ W2ᵀ ρ(h) − b_hᵀ ρ(h) − b_oᵀ ρ(o)
//! ```
//!
//! The leak terms dominate the bounded couplings, so `E` is bounded below and
//! `∇_s E` is linear plus bounded, which keeps Langevin dynamics stable.

use rand::Rng;

use crate::error::{Error, Result};
use crate::kernel::{ConditionedKernel, EnergyModel, Layout, ParamVector, StateKind, StateVector};

use super::glorot_bound;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayeredTanhEnergyNet {
    pub n_in: usize,
    pub n_hidden: usize,
    pub n_out: usize,
}

/// Parameter slices of a layered net.
pub(crate) struct Weights<'a> {
    pub w1: &'a [f64],
    pub w2: &'a [f64],
    pub b_h: &'a [f64],
    pub b_o: &'a [f64],
}

impl LayeredTanhEnergyNet {
    pub fn new(n_in: usize, n_hidden: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_hidden,
            n_out,
        }
    }

    pub(crate) fn split<'a>(&self, theta: &'a [f64]) -> Weights<'a> {
        let (w1, rest) = theta.split_at(self.n_in * self.n_hidden);
        let (w2, rest) = rest.split_at(self.n_hidden * self.n_out);
        let (b_h, b_o) = rest.split_at(self.n_hidden);
        Weights { w1, w2, b_h, b_o }
    }

    pub(crate) fn offsets(&self) -> (usize, usize, usize) {
        let w2 = self.n_in * self.n_hidden;
        let b_h = w2 + self.n_hidden * self.n_out;
        (w2, b_h, b_h + self.n_hidden)
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut values = Vec::with_capacity(self.param_dim());
        let a1 = glorot_bound(self.n_in, self.n_hidden);
        values.extend((0..self.n_in * self.n_hidden).map(|_| rng.random_range(-a1..a1)));
        let a2 = glorot_bound(self.n_hidden, self.n_out);
        values.extend((0..self.n_hidden * self.n_out).map(|_| rng.random_range(-a2..a2)));
        values.extend(std::iter::repeat_n(0.0, self.n_hidden + self.n_out));
        ParamVector::new(values, self.layout()).expect("finite init")
    }

    /// Binds the net to one example; `target = None` gives `ℓ ≡ 0`.
    pub fn bind<'a>(&'a self, x: &'a [f64], target: Option<Vec<f64>>) -> Result<BoundExample<'a>> {
        if x.len() != self.n_in {
            return Err(Error::Shape {
                what: "input",
                expected: self.n_in,
                got: x.len(),
            });
        }
        let loss = target.map(|t| loss_for_example(self.n_out, t)).transpose()?;
        Ok(BoundExample { net: self, x, loss })
    }

    /// Splits a full state into `(x, h, o)`.
    pub fn parts<'s>(&self, s: &'s [f64]) -> (&'s [f64], &'s [f64], &'s [f64]) {
        let (x, rest) = s.split_at(self.n_in);
        let (h, o) = rest.split_at(self.n_hidden);
        (x, h, o)
    }

    /// `C(θ, x) = Σ|W1_ij x_i| + Σ|W2| + Σ|b_h| + Σ|b_o|`, so that
    /// `E ≥ ½‖h‖² + ½‖o‖² − C`.
    pub fn coupling_bound(&self, theta: &[f64], x: &[f64]) -> f64 {
        let w = self.split(theta);
        let mut c = 0.0;
        for (i, xi) in x.iter().enumerate() {
            c += w.w1[i * self.n_hidden..(i + 1) * self.n_hidden]
                .iter()
                .map(|v| (v * xi).abs())
                .sum::<f64>();
        }
        c + [w.w2, w.b_h, w.b_o]
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| v.abs())
            .sum::<f64>()
    }

    /// `W1ᵀ x + b_h`.
    pub(crate) fn hidden_drive(&self, w: &Weights<'_>, x: &[f64]) -> Vec<f64> {
        let mut a = w.b_h.to_vec();
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &w.w1[i * self.n_hidden..(i + 1) * self.n_hidden];
            for (aj, wij) in a.iter_mut().zip(row) {
                *aj += wij * xi;
            }
        }
        a
    }

    /// Energy and optionally `∂E/∂(h, o)` given the precomputed hidden drive.
    fn eval_with_drive(
        &self,
        w: &Weights<'_>,
        drive: &[f64],
        h: &[f64],
        o: &[f64],
        grad: Option<(&mut [f64], &mut [f64])>,
    ) -> f64 {
        let (nh, no) = (self.n_hidden, self.n_out);
        let rh: Vec<f64> = h.iter().map(|v| v.tanh()).collect();
        let ro: Vec<f64> = o.iter().map(|v| v.tanh()).collect();
        // o-drive: W2ᵀ ρ(h) + b_o ; h-feedback: W2 ρ(o)
        let mut o_drive = w.b_o.to_vec();
        let mut h_fb = vec![0.0; nh];
        for j in 0..nh {
            let row = &w.w2[j * no..(j + 1) * no];
            let mut fb = 0.0;
            for k in 0..no {
                o_drive[k] += row[k] * rh[j];
                fb += row[k] * ro[k];
            }
            h_fb[j] = fb;
        }
        let mut e = 0.0;
        for j in 0..nh {
            e += 0.5 * h[j] * h[j] - rh[j] * drive[j];
        }
        for k in 0..no {
            e += 0.5 * o[k] * o[k] - ro[k] * o_drive[k];
        }
        if let Some((gh, go)) = grad {
            for j in 0..nh {
                gh[j] = h[j] - (1.0 - rh[j] * rh[j]) * (drive[j] + h_fb[j]);
            }
            for k in 0..no {
                go[k] = o[k] - (1.0 - ro[k] * ro[k]) * o_drive[k];
            }
        }
        e
    }

    /// Adds `Σ_i w_i ∇_θ E(s_i)` into `out`, exploiting the factorization
    /// over a shared input.
    fn accumulate(&self, theta: &[f64], states: &[StateVector], weights: &[f64], out: &mut [f64]) {
        let (nh, no) = (self.n_hidden, self.n_out);
        let Some(first) = states.first() else {
            return;
        };
        let x0 = &first.values()[..self.n_in];
        let shared = states.iter().all(|s| &s.values()[..self.n_in] == x0);
        if !shared {
            for (s, &w) in states.iter().zip(weights) {
                let g = self.grad_theta_energy(theta, s.values());
                for (o, gi) in out.iter_mut().zip(g) {
                    *o += w * gi;
                }
            }
            return;
        }
        let mut r_h = vec![0.0; nh];
        let mut r_o = vec![0.0; no];
        let mut m = vec![0.0; nh * no];
        let mut rh = vec![0.0; nh];
        let mut ro = vec![0.0; no];
        for (s, &wt) in states.iter().zip(weights) {
            if wt == 0.0 {
                continue;
            }
            let (_, h, o) = self.parts(s.values());
            for j in 0..nh {
                rh[j] = h[j].tanh();
                r_h[j] += wt * rh[j];
            }
            for k in 0..no {
                ro[k] = o[k].tanh();
                r_o[k] += wt * ro[k];
            }
            for j in 0..nh {
                let a = wt * rh[j];
                let row = &mut m[j * no..(j + 1) * no];
                for k in 0..no {
                    row[k] += a * ro[k];
                }
            }
        }
        let (o_w2, o_bh, o_bo) = self.offsets();
        for (i, &xi) in x0.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &mut out[i * nh..(i + 1) * nh];
            for j in 0..nh {
                row[j] -= xi * r_h[j];
            }
        }
        for (o, v) in out[o_w2..o_bh].iter_mut().zip(&m) {
            *o -= v;
        }
        for (o, v) in out[o_bh..o_bo].iter_mut().zip(&r_h) {
            *o -= v;
        }
        for (o, v) in out[o_bo..].iter_mut().zip(&r_o) {
            *o -= v;
        }
    }
}

impl EnergyModel for LayeredTanhEnergyNet {
    fn layout(&self) -> Layout {
        Layout::from_sizes(&[
            ("W1", self.n_in * self.n_hidden),
            ("W2", self.n_hidden * self.n_out),
            ("b_h", self.n_hidden),
            ("b_o", self.n_out),
        ])
    }

    fn param_dim(&self) -> usize {
        self.n_in * self.n_hidden + self.n_hidden * self.n_out + self.n_hidden + self.n_out
    }

    fn state_dim(&self) -> usize {
        self.n_in + self.n_hidden + self.n_out
    }

    fn state_kind(&self) -> StateKind {
        StateKind::Continuous
    }

    fn clamp_mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.state_dim()];
        m[..self.n_in].fill(true);
        m
    }

    fn energy(&self, theta: &[f64], s: &[f64]) -> f64 {
        let w = self.split(theta);
        let (x, h, o) = self.parts(s);
        let drive = self.hidden_drive(&w, x);
        self.eval_with_drive(&w, &drive, h, o, None)
    }

    fn grad_theta_energy(&self, theta: &[f64], s: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.param_dim()];
        let state = StateVector::from_raw(s.to_vec(), StateKind::Continuous);
        self.accumulate(theta, std::slice::from_ref(&state), &[1.0], &mut g);
        g
    }

    fn grad_state_energy(&self, theta: &[f64], s: &[f64]) -> Option<Vec<f64>> {
        let w = self.split(theta);
        let (x, h, o) = self.parts(s);
        let drive = self.hidden_drive(&w, x);
        let mut g = vec![0.0; s.len()];
        // ∂E/∂x = −W1 ρ(h)
        for i in 0..self.n_in {
            let row = &w.w1[i * self.n_hidden..(i + 1) * self.n_hidden];
            g[i] = -row.iter().zip(h).map(|(a, b)| a * b.tanh()).sum::<f64>();
        }
        let (_, rest) = g.split_at_mut(self.n_in);
        let (gh, go) = rest.split_at_mut(self.n_hidden);
        self.eval_with_drive(&w, &drive, h, o, Some((gh, go)));
        Some(g)
    }

    fn loss(&self, _s: &[f64]) -> f64 {
        0.0
    }

    fn grad_state_loss(&self, s: &[f64]) -> Option<Vec<f64>> {
        Some(vec![0.0; s.len()])
    }

    fn accumulate_grad_theta(
        &self,
        theta: &[f64],
        states: &[StateVector],
        weights: &[f64],
        out: &mut [f64],
    ) {
        self.accumulate(theta, states, weights, out);
    }

    fn conditioned<'a>(
        &'a self,
        theta: &'a [f64],
        beta: f64,
        reference: &[f64],
    ) -> Box<dyn ConditionedKernel + 'a> {
        Box::new(LayeredKernel::new(self, theta, beta, reference, None))
    }
}

/// `ℓ(s) = ½‖o − target‖²`.
#[derive(Clone, Debug, PartialEq)]
pub struct SquaredErrorLoss {
    target: Vec<f64>,
}

impl SquaredErrorLoss {
    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn eval(&self, o: &[f64]) -> f64 {
        0.5 * o
            .iter()
            .zip(&self.target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
    }
}

/// Squared-error loss on the output units for a target vector.
pub fn loss_for_example(n_out: usize, target: Vec<f64>) -> Result<SquaredErrorLoss> {
    if target.len() != n_out {
        return Err(Error::Shape {
            what: "target",
            expected: n_out,
            got: target.len(),
        });
    }
    Ok(SquaredErrorLoss { target })
}

/// A [`LayeredTanhEnergyNet`] with its input clamped to one example and the
/// loss for that example's target.
#[derive(Clone, Debug)]
pub struct BoundExample<'a> {
    net: &'a LayeredTanhEnergyNet,
    x: &'a [f64],
    loss: Option<SquaredErrorLoss>,
}

impl<'a> BoundExample<'a> {
    pub fn net(&self) -> &LayeredTanhEnergyNet {
        self.net
    }

    pub fn input(&self) -> &[f64] {
        self.x
    }

    pub fn target(&self) -> Option<&[f64]> {
        self.loss.as_ref().map(|l| l.target())
    }
}

impl EnergyModel for BoundExample<'_> {
    fn layout(&self) -> Layout {
        self.net.layout()
    }
    fn param_dim(&self) -> usize {
        self.net.param_dim()
    }
    fn state_dim(&self) -> usize {
        self.net.state_dim()
    }
    fn state_kind(&self) -> StateKind {
        StateKind::Continuous
    }
    fn clamp_mask(&self) -> Vec<bool> {
        self.net.clamp_mask()
    }
    fn initial_state(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.state_dim()];
        s[..self.net.n_in].copy_from_slice(self.x);
        s
    }
    fn energy(&self, theta: &[f64], s: &[f64]) -> f64 {
        self.net.energy(theta, s)
    }
    fn grad_theta_energy(&self, theta: &[f64], s: &[f64]) -> Vec<f64> {
        self.net.grad_theta_energy(theta, s)
    }
    fn grad_state_energy(&self, theta: &[f64], s: &[f64]) -> Option<Vec<f64>> {
        self.net.grad_state_energy(theta, s)
    }
    fn loss(&self, s: &[f64]) -> f64 {
        match &self.loss {
            Some(l) => l.eval(self.net.parts(s).2),
            None => 0.0,
        }
    }
    fn grad_state_loss(&self, s: &[f64]) -> Option<Vec<f64>> {
        let mut g = vec![0.0; s.len()];
        if let Some(l) = &self.loss {
            let off = self.net.n_in + self.net.n_hidden;
            for (k, t) in l.target().iter().enumerate() {
                g[off + k] = s[off + k] - t;
            }
        }
        Some(g)
    }
    fn accumulate_grad_theta(
        &self,
        theta: &[f64],
        states: &[StateVector],
        weights: &[f64],
        out: &mut [f64],
    ) {
        self.net.accumulate(theta, states, weights, out);
    }
    fn conditioned<'b>(
        &'b self,
        theta: &'b [f64],
        beta: f64,
        reference: &[f64],
    ) -> Box<dyn ConditionedKernel + 'b> {
        Box::new(LayeredKernel::new(
            self.net,
            theta,
            beta,
            reference,
            self.loss.as_ref().map(|l| l.target()),
        ))
    }
}

/// Kernel with `W1ᵀx + b_h` precomputed for the clamped input.
struct LayeredKernel<'a> {
    net: &'a LayeredTanhEnergyNet,
    w: Weights<'a>,
    drive: Vec<f64>,
    beta: f64,
    target: Option<&'a [f64]>,
}

impl<'a> LayeredKernel<'a> {
    fn new(
        net: &'a LayeredTanhEnergyNet,
        theta: &'a [f64],
        beta: f64,
        reference: &[f64],
        target: Option<&'a [f64]>,
    ) -> Self {
        let w = net.split(theta);
        let drive = net.hidden_drive(&w, &reference[..net.n_in]);
        Self {
            net,
            w,
            drive,
            beta,
            target,
        }
    }

    fn nudge(&self, o: &[f64], go: Option<&mut [f64]>) -> f64 {
        let (Some(t), true) = (self.target, self.beta != 0.0) else {
            return 0.0;
        };
        if let Some(go) = go {
            for k in 0..o.len() {
                go[k] += self.beta * (o[k] - t[k]);
            }
        }
        self.beta * 0.5 * o.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
    }
}

impl ConditionedKernel for LayeredKernel<'_> {
    fn value(&self, s: &[f64]) -> f64 {
        let (_, h, o) = self.net.parts(s);
        self.net.eval_with_drive(&self.w, &self.drive, h, o, None) + self.nudge(o, None)
    }

    fn grad_state(&self, s: &[f64], out: &mut [f64]) -> bool {
        self.value_and_grad(s, out);
        true
    }

    fn value_and_grad(&self, s: &[f64], out: &mut [f64]) -> Option<f64> {
        let (_, h, o) = self.net.parts(s);
        let n_in = self.net.n_in;
        out[..n_in].fill(0.0);
        let (gh, go) = out[n_in..].split_at_mut(self.net.n_hidden);
        let e = self.net.eval_with_drive(&self.w, &self.drive, h, o, Some((gh, &mut *go)));
        Some(e + self.nudge(o, Some(go)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{check_grad_state, check_grad_theta};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_state(net: &LayeredTanhEnergyNet, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut s: Vec<f64> = (0..net.state_dim()).map(|_| rng.random_range(-1.5..1.5)).collect();
        for v in &mut s[..net.n_in] {
            *v = rng.random_range(0.05..1.0);
        }
        s
    }

    fn random_theta(net: &LayeredTanhEnergyNet, rng: &mut ChaCha8Rng) -> ParamVector {
        let v = (0..net.param_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        ParamVector::new(v, net.layout()).unwrap()
    }

    #[test]
    fn zero_params_leave_only_leak() {
        let net = LayeredTanhEnergyNet::new(3, 4, 2);
        let theta = vec![0.0; net.param_dim()];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_state(&net, &mut rng);
        let (_, h, o) = net.parts(&s);
        let leak = 0.5 * h.iter().chain(o).map(|v| v * v).sum::<f64>();
        assert!((net.energy(&theta, &s) - leak).abs() < 1e-14);
    }

    #[test]
    fn analytic_gradients_match_fd() {
        let net = LayeredTanhEnergyNet::new(5, 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let theta = random_theta(&net, &mut rng);
            let s = StateVector::continuous(random_state(&net, &mut rng)).unwrap();
            assert!(check_grad_theta(&net, &theta, &s, 1e-5) <= 1e-6);
            assert!(check_grad_state(&net, &theta, &s, 1e-5).unwrap() <= 1e-6);
        }
    }

    #[test]
    fn conditioned_kernel_matches_plain_evaluation() {
        let net = LayeredTanhEnergyNet::new(5, 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let theta = random_theta(&net, &mut rng);
        let s = random_state(&net, &mut rng);
        let x = s[..5].to_vec();
        let ex = net.bind(&x, Some(vec![0.0, 1.0, 0.0])).unwrap();
        let beta = 0.7;
        let k = ex.conditioned(theta.values(), beta, &s);
        let plain = ex.energy(theta.values(), &s) + beta * ex.loss(&s);
        assert!((k.value(&s) - plain).abs() < 1e-12);
        let mut g = vec![0.0; s.len()];
        k.grad_state(&s, &mut g);
        let ge = ex.grad_state_energy(theta.values(), &s).unwrap();
        let gl = ex.grad_state_loss(&s).unwrap();
        for i in 5..s.len() {
            assert!((g[i] - (ge[i] + beta * gl[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn batched_theta_gradient_matches_per_state_sum() {
        let net = LayeredTanhEnergyNet::new(4, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let theta = random_theta(&net, &mut rng);
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..1.0)).collect();
        let states: Vec<StateVector> = (0..6)
            .map(|_| {
                let mut s = random_state(&net, &mut rng);
                s[..4].copy_from_slice(&x);
                StateVector::continuous(s).unwrap()
            })
            .collect();
        let weights = [0.1, -0.4, 0.3, 0.25, 0.5, -0.05];
        let mut fast = vec![0.0; net.param_dim()];
        net.accumulate_grad_theta(theta.values(), &states, &weights, &mut fast);
        let mut slow = vec![0.0; net.param_dim()];
        for (s, w) in states.iter().zip(weights) {
            for (o, g) in slow.iter_mut().zip(net.grad_theta_energy(theta.values(), s.values())) {
                *o += w * g;
            }
        }
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn energy_respects_coupling_bound() {
        let net = LayeredTanhEnergyNet::new(6, 5, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let theta = random_theta(&net, &mut rng);
        let x: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..1.0)).collect();
        let c = net.coupling_bound(theta.values(), &x);
        for _ in 0..10_000 {
            let mut s: Vec<f64> = (0..net.state_dim()).map(|_| rng.random_range(-4.0..4.0)).collect();
            s[..6].copy_from_slice(&x);
            let leak = 0.5 * s[6..].iter().map(|v| v * v).sum::<f64>();
            assert!(net.energy(theta.values(), &s) >= leak - c - 1e-12);
        }
    }

    #[test]
    fn loss_values() {
        let l = loss_for_example(3, vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(l.eval(&[0.0, 1.0, 0.0]), 0.0);
        assert_eq!(l.eval(&[0.0, 0.0, 0.0]), 0.5);
        assert!(loss_for_example(3, vec![1.0]).is_err());
    }

    #[test]
    fn clamp_mask_covers_inputs_only() {
        let net = LayeredTanhEnergyNet::new(3, 2, 2);
        assert_eq!(
            net.clamp_mask(),
            vec![true, true, true, false, false, false, false]
        );
    }
}
