//! Node sets for integrals over the nudge strength `β ∈ [0, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuadratureScheme {
    Trapezoid,
    GaussLegendre,
}

/// Nodes and weights integrating over `[0, 1]`; weights sum to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    scheme: QuadratureScheme,
}

impl QuadratureSpec {
    pub fn new(nodes: Vec<f64>, weights: Vec<f64>, scheme: QuadratureScheme) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::Quadrature(format!(
                "need at least 2 nodes, got {}",
                nodes.len()
            )));
        }
        if nodes.len() != weights.len() {
            return Err(Error::Quadrature("nodes and weights differ in length".into()));
        }
        if nodes.iter().any(|b| !(0.0..=1.0).contains(b)) {
            return Err(Error::Quadrature("nodes must lie in [0, 1]".into()));
        }
        if nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Quadrature("nodes must be strictly increasing".into()));
        }
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::Quadrature("weights must be positive".into()));
        }
        if scheme == QuadratureScheme::Trapezoid && (nodes[0] != 0.0 || *nodes.last().unwrap() != 1.0) {
            return Err(Error::Quadrature("trapezoid nodes must include both endpoints".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Quadrature(format!("weights sum to {total}, not 1")));
        }
        Ok(Self {
            nodes,
            weights,
            scheme,
        })
    }

    /// Composite trapezoid rule on `k` uniformly spaced nodes.
    pub fn trapezoid(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::Quadrature(format!("trapezoid needs k >= 2, got {k}")));
        }
        let h = 1.0 / (k - 1) as f64;
        let nodes: Vec<f64> = (0..k)
            .map(|i| if i == k - 1 { 1.0 } else { i as f64 * h })
            .collect();
        let mut weights = vec![h; k];
        weights[0] = 0.5 * h;
        weights[k - 1] = 0.5 * h;
        // Absorb rounding so the weights integrate 1 to machine precision.
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Self::new(nodes, weights, QuadratureScheme::Trapezoid)
    }

    /// `k`-point Gauss–Legendre rule mapped to `[0, 1]`.
    pub fn gauss_legendre(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::Quadrature(format!("Gauss-Legendre needs k >= 2, got {k}")));
        }
        let mut nodes = vec![0.0; k];
        let mut weights = vec![0.0; k];
        for i in 0..k {
            // Chebyshev initial guess, then Newton on P_k.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (k as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(k, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(k, x);
            if d != 0.0 {
                dp = d;
            }
            // Map [-1, 1] → [0, 1]; ascending order.
            nodes[k - 1 - i] = 0.5 * (x + 1.0);
            weights[k - 1 - i] = 1.0 / ((1.0 - x * x) * dp * dp);
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Self::new(nodes, weights, QuadratureScheme::GaussLegendre)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn scheme(&self) -> QuadratureScheme {
        self.scheme
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for m in 2..=n {
        let m = m as f64;
        let p2 = ((2.0 * m - 1.0) * x * p1 - (m - 1.0) * p0) / m;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}
