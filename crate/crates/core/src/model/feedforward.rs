use crate::error::{Error, Result};
use crate::kernel::ParamVector;

use super::layered::LayeredTanhEnergyNet;

/// Feedforward reading of the layered weights:
/// `o = tanh(W2ᵀ tanh(W1ᵀ x + b_h) + b_o)`, trained on `½‖o − target‖²`.
///
/// Shares its parameter layout with [`LayeredTanhEnergyNet`] so the two can be
/// compared weight for weight.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeedforwardBaseline {
    pub net: LayeredTanhEnergyNet,
}

impl FeedforwardBaseline {
    pub fn new(n_in: usize, n_hidden: usize, n_out: usize) -> Self {
        Self {
            net: LayeredTanhEnergyNet::new(n_in, n_hidden, n_out),
        }
    }

    fn check(&self, theta: &ParamVector, x: &[f64]) -> Result<()> {
        use crate::kernel::EnergyModel;
        if theta.dim() != self.net.param_dim() {
            return Err(Error::Shape {
                what: "parameter vector",
                expected: self.net.param_dim(),
                got: theta.dim(),
            });
        }
        if x.len() != self.net.n_in {
            return Err(Error::Shape {
                what: "input",
                expected: self.net.n_in,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Returns `(hidden activations, outputs)`.
    pub fn forward(&self, theta: &ParamVector, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check(theta, x)?;
        let w = self.net.split(theta.values());
        let hidden: Vec<f64> = self.net.hidden_drive(&w, x).iter().map(|a| a.tanh()).collect();
        let no = self.net.n_out;
        let mut out = w.b_o.to_vec();
        for (j, hj) in hidden.iter().enumerate() {
            for (k, ok) in out.iter_mut().enumerate() {
                *ok += w.w2[j * no + k] * hj;
            }
        }
        out.iter_mut().for_each(|v| *v = v.tanh());
        Ok((hidden, out))
    }

    pub fn loss(&self, theta: &ParamVector, x: &[f64], target: &[f64]) -> Result<f64> {
        let (_, o) = self.forward(theta, x)?;
        Ok(0.5 * o.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
    }

    /// Gradient of `½‖forward(x) − target‖²` by reverse-mode chain rule.
    pub fn backprop_grad(&self, theta: &ParamVector, x: &[f64], target: &[f64]) -> Result<ParamVector> {
        let mut g = vec![0.0; theta.dim()];
        self.accumulate_backprop(theta, x, target, 1.0, &mut g)?;
        theta.with_values(g)
    }

    /// Adds `scale · ∇_θ loss` into `out`.
    pub(crate) fn accumulate_backprop(
        &self,
        theta: &ParamVector,
        x: &[f64],
        target: &[f64],
        scale: f64,
        out: &mut [f64],
    ) -> Result<()> {
        if target.len() != self.net.n_out {
            return Err(Error::Shape {
                what: "target",
                expected: self.net.n_out,
                got: target.len(),
            });
        }
        let (hidden, o) = self.forward(theta, x)?;
        let (nh, no) = (self.net.n_hidden, self.net.n_out);
        let w = self.net.split(theta.values());
        let delta_o: Vec<f64> = o
            .iter()
            .zip(target)
            .map(|(ok, tk)| (ok - tk) * (1.0 - ok * ok))
            .collect();
        let mut delta_h = vec![0.0; nh];
        for j in 0..nh {
            let back: f64 = (0..no).map(|k| w.w2[j * no + k] * delta_o[k]).sum();
            delta_h[j] = back * (1.0 - hidden[j] * hidden[j]);
        }
        let (o_w2, o_bh, o_bo) = self.net.offsets();
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &mut out[i * nh..(i + 1) * nh];
            for j in 0..nh {
                row[j] += scale * xi * delta_h[j];
            }
        }
        for j in 0..nh {
            for k in 0..no {
                out[o_w2 + j * no + k] += scale * hidden[j] * delta_o[k];
            }
            out[o_bh + j] += scale * delta_h[j];
        }
        for k in 0..no {
            out[o_bo + k] += scale * delta_o[k];
        }
        Ok(())
    }

    pub fn predict(&self, theta: &ParamVector, x: &[f64]) -> Result<usize> {
        let (_, o) = self.forward(theta, x)?;
        Ok(argmax(&o))
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
