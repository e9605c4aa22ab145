//! Shared domain types and the objective-kernel arithmetic.
//!
//! An energy model pairs a parametric energy `E(θ, s)` with a parameter-free
//! loss `ℓ(s)`. The nudged kernel `F(θ, β, s) = E(θ, s) + β ℓ(s)` at
//! temperature `T` defines the Gibbs law `ρ_β ∝ exp(−F / T)` that every other
//! module samples from, enumerates, or differentiates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute floor in relative-error denominators.
pub const EPS_ABS: f64 = 1e-12;

/// A named contiguous slice of the parameter vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Segments that tile `[0, p)` exactly, in order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    segments: Vec<Segment>,
}

impl Layout {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        let mut next = 0;
        for seg in &segments {
            if seg.offset != next {
                return Err(Error::invalid(format!(
                    "segment '{}' starts at {} but the previous segment ends at {}",
                    seg.name, seg.offset, next
                )));
            }
            next += seg.len;
        }
        Ok(Self { segments })
    }

    /// Builds a layout from `(name, len)` pairs laid end to end.
    pub fn from_sizes(sizes: &[(&str, usize)]) -> Self {
        let mut offset = 0;
        let segments = sizes
            .iter()
            .map(|&(name, len)| {
                let seg = Segment {
                    name: name.to_string(),
                    offset,
                    len,
                };
                offset += len;
                seg
            })
            .collect();
        Self { segments }
    }

    /// A single anonymous segment named `theta`.
    pub fn flat(p: usize) -> Self {
        Self::from_sizes(&[("theta", p)])
    }

    pub fn dim(&self) -> usize {
        self.segments.last().map_or(0, |s| s.offset + s.len)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }
}

/// Learnable parameters θ with their segment layout. All entries are finite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Layout,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: Layout) -> Result<Self> {
        if values.len() != layout.dim() {
            return Err(Error::Shape {
                what: "parameter vector",
                expected: layout.dim(),
                got: values.len(),
            });
        }
        check_finite("parameter", &values)?;
        Ok(Self { values, layout })
    }

    pub fn zeros(layout: Layout) -> Self {
        Self {
            values: vec![0.0; layout.dim()],
            layout,
        }
    }

    /// Wraps a flat vector with a single-segment layout.
    pub fn flat(values: Vec<f64>) -> Result<Self> {
        let layout = Layout::flat(values.len());
        Self::new(values, layout)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .segment(name)
            .map(|s| &self.values[s.offset..s.offset + s.len])
    }

    /// Applies `f` to the raw values and re-validates finiteness.
    pub fn update<F: FnOnce(&mut [f64])>(&mut self, f: F) -> Result<()> {
        f(&mut self.values);
        check_finite("parameter", &self.values)
    }

    /// Returns a copy with `values` replaced, keeping the layout.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(values, self.layout.clone())
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        dot(&self.values, &other.values)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Two admissible values of a binary unit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Levels {
    pub low: f64,
    pub high: f64,
}

impl Levels {
    /// ±1 spins, the convention for bundled discrete models.
    pub const SPIN: Levels = Levels {
        low: -1.0,
        high: 1.0,
    };
    /// {0, 1} bits.
    pub const BIT: Levels = Levels {
        low: 0.0,
        high: 1.0,
    };

    pub fn contains(&self, v: f64) -> bool {
        v == self.low || v == self.high
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum StateKind {
    Continuous,
    Binary(Levels),
}

impl StateKind {
    pub fn is_binary(&self) -> bool {
        matches!(self, StateKind::Binary(_))
    }
}

/// A network state `s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    values: Vec<f64>,
    kind: StateKind,
}

impl StateVector {
    pub fn continuous(values: Vec<f64>) -> Result<Self> {
        check_finite("state", &values)?;
        Ok(Self {
            values,
            kind: StateKind::Continuous,
        })
    }

    /// A ±1 spin state.
    pub fn spins(values: Vec<f64>) -> Result<Self> {
        Self::binary(values, Levels::SPIN)
    }

    pub fn binary(values: Vec<f64>, levels: Levels) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !levels.contains(**v)) {
            return Err(Error::invalid(format!(
                "binary state entry {v} is not in {{{}, {}}}",
                levels.low, levels.high
            )));
        }
        Ok(Self {
            values,
            kind: StateKind::Binary(levels),
        })
    }

    /// Builds a state of the given kind, validating entries.
    pub fn of_kind(values: Vec<f64>, kind: StateKind) -> Result<Self> {
        match kind {
            StateKind::Continuous => Self::continuous(values),
            StateKind::Binary(levels) => Self::binary(values, levels),
        }
    }

    pub(crate) fn from_raw(values: Vec<f64>, kind: StateKind) -> Self {
        Self { values, kind }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> StateKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Temperature `T > 0`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && value > 0.0 {
            Ok(Self(value))
        } else {
            Err(Error::invalid(format!("temperature must be > 0, got {value}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Self(1.0)
    }
}

/// Nudging strength `β ∈ [0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct NudgeStrength(f64);

impl NudgeStrength {
    pub const FREE: NudgeStrength = NudgeStrength(0.0);
    pub const NUDGED: NudgeStrength = NudgeStrength(1.0);

    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(Self(value))
        } else {
            Err(Error::invalid(format!("nudge strength must lie in [0, 1], got {value}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// A parametric energy `E(θ, s)` with analytic derivatives and a loss `ℓ(s)`.
///
/// States and parameters are passed as raw slices; the typed wrappers are
/// validated at the public entry points. Implementations must not mutate
/// themselves during evaluation.
pub trait EnergyModel: Send + Sync {
    fn layout(&self) -> Layout;
    fn param_dim(&self) -> usize;
    fn state_dim(&self) -> usize;
    fn state_kind(&self) -> StateKind;

    /// Units held fixed during sampling and relaxation.
    fn clamp_mask(&self) -> Vec<bool> {
        vec![false; self.state_dim()]
    }

    /// Default starting state; clamped coordinates carry their fixed values.
    fn initial_state(&self) -> Vec<f64> {
        match self.state_kind() {
            StateKind::Continuous => vec![0.0; self.state_dim()],
            StateKind::Binary(levels) => vec![levels.high; self.state_dim()],
        }
    }

    fn energy(&self, theta: &[f64], s: &[f64]) -> f64;

    fn grad_theta_energy(&self, theta: &[f64], s: &[f64]) -> Vec<f64>;

    /// `∂E/∂s`, available for continuous models only.
    fn grad_state_energy(&self, _theta: &[f64], _s: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// The loss. Must not depend on θ.
    fn loss(&self, s: &[f64]) -> f64;

    /// `∂ℓ/∂s`, available for continuous models only.
    fn grad_state_loss(&self, _s: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// Adds `Σ_i w_i ∇_θ E(θ, s_i)` into `out`.
    ///
    /// Models whose parameter gradient factorizes over a shared clamped input
    /// override this to avoid materializing one gradient per state.
    fn accumulate_grad_theta(
        &self,
        theta: &[f64],
        states: &[StateVector],
        weights: &[f64],
        out: &mut [f64],
    ) {
        for (s, &w) in states.iter().zip(weights) {
            if w == 0.0 {
                continue;
            }
            let g = self.grad_theta_energy(theta, s.values());
            for (o, gi) in out.iter_mut().zip(g) {
                *o += w * gi;
            }
        }
    }

    /// The kernel `F(θ, β, ·)` with θ, β and the clamped coordinates of
    /// `reference` frozen, for repeated evaluation inside samplers.
    fn conditioned<'a>(
        &'a self,
        theta: &'a [f64],
        beta: f64,
        _reference: &[f64],
    ) -> Box<dyn ConditionedKernel + 'a> {
        Box::new(PlainKernel {
            model: self,
            theta,
            beta,
        })
    }
}

/// `F(θ, β, ·)` at fixed θ and β.
pub trait ConditionedKernel {
    fn value(&self, s: &[f64]) -> f64;

    /// Writes `∇_s F` into `out`; entries at clamped coordinates are unspecified.
    /// Returns `false` when the model has no state gradient.
    fn grad_state(&self, s: &[f64], out: &mut [f64]) -> bool;

    /// Value and gradient in one pass; `None` without a state gradient.
    fn value_and_grad(&self, s: &[f64], out: &mut [f64]) -> Option<f64> {
        if self.grad_state(s, out) {
            Some(self.value(s))
        } else {
            None
        }
    }
}

struct PlainKernel<'a, M: ?Sized> {
    model: &'a M,
    theta: &'a [f64],
    beta: f64,
}

impl<M: EnergyModel + ?Sized> ConditionedKernel for PlainKernel<'_, M> {
    fn value(&self, s: &[f64]) -> f64 {
        let e = self.model.energy(self.theta, s);
        if self.beta == 0.0 {
            e
        } else {
            e + self.beta * self.model.loss(s)
        }
    }

    fn grad_state(&self, s: &[f64], out: &mut [f64]) -> bool {
        let Some(ge) = self.model.grad_state_energy(self.theta, s) else {
            return false;
        };
        out.copy_from_slice(&ge);
        if self.beta != 0.0 {
            let Some(gl) = self.model.grad_state_loss(s) else {
                return false;
            };
            for (o, g) in out.iter_mut().zip(gl) {
                *o += self.beta * g;
            }
        }
        true
    }
}

pub(crate) fn check_finite(term: &'static str, values: &[f64]) -> Result<()> {
    match values.iter().find(|v| !v.is_finite()) {
        Some(&value) => Err(Error::NonFinite { term, value }),
        None => Ok(()),
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Checks that θ and `s` are shaped for `model`.
pub fn validate_inputs<M: EnergyModel + ?Sized>(
    model: &M,
    theta: &ParamVector,
    s: &StateVector,
) -> Result<()> {
    if theta.dim() != model.param_dim() {
        return Err(Error::Shape {
            what: "parameter vector",
            expected: model.param_dim(),
            got: theta.dim(),
        });
    }
    validate_state(model, s)
}

pub fn validate_state<M: EnergyModel + ?Sized>(model: &M, s: &StateVector) -> Result<()> {
    if s.dim() != model.state_dim() {
        return Err(Error::Shape {
            what: "state vector",
            expected: model.state_dim(),
            got: s.dim(),
        });
    }
    match (model.state_kind(), s.kind()) {
        (StateKind::Continuous, StateKind::Continuous) => Ok(()),
        (StateKind::Binary(levels), _) if s.values().iter().all(|v| levels.contains(*v)) => Ok(()),
        (want, got) => Err(Error::invalid(format!(
            "state of kind {got:?} is not valid for a model over {want:?}"
        ))),
    }
}

/// `F(θ, β, s) = E(θ, s) + β ℓ(s)`.
pub fn objective_kernel<M: EnergyModel + ?Sized>(
    model: &M,
    theta: &ParamVector,
    beta: NudgeStrength,
    s: &StateVector,
) -> Result<f64> {
    validate_inputs(model, theta, s)?;
    let energy = model.energy(theta.values(), s.values());
    if !energy.is_finite() {
        return Err(Error::NonFinite {
            term: "energy",
            value: energy,
        });
    }
    let loss = model.loss(s.values());
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            term: "loss",
            value: loss,
        });
    }
    Ok(energy + beta.value() * loss)
}

/// Max over coordinates of `|analytic − central difference| / (|central difference| + ε)`
/// for `∂E/∂θ`.
pub fn check_grad_theta<M: EnergyModel + ?Sized>(
    model: &M,
    theta: &ParamVector,
    s: &StateVector,
    h: f64,
) -> f64 {
    let analytic = model.grad_theta_energy(theta.values(), s.values());
    let mut probe = theta.values().to_vec();
    let mut worst = 0.0_f64;
    for i in 0..probe.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = model.energy(&probe, s.values());
        probe[i] = orig - h;
        let minus = model.energy(&probe, s.values());
        probe[i] = orig;
        let fd = (plus - minus) / (2.0 * h);
        worst = worst.max((analytic[i] - fd).abs() / (fd.abs() + EPS_ABS));
    }
    worst
}

/// State-space analog of [`check_grad_theta`] over unclamped coordinates.
/// `None` when the model provides no state gradient.
pub fn check_grad_state<M: EnergyModel + ?Sized>(
    model: &M,
    theta: &ParamVector,
    s: &StateVector,
    h: f64,
) -> Option<f64> {
    let analytic = model.grad_state_energy(theta.values(), s.values())?;
    let mask = model.clamp_mask();
    let mut probe = s.values().to_vec();
    let mut worst = 0.0_f64;
    for i in (0..probe.len()).filter(|&i| !mask[i]) {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = model.energy(theta.values(), &probe);
        probe[i] = orig - h;
        let minus = model.energy(theta.values(), &probe);
        probe[i] = orig;
        let fd = (plus - minus) / (2.0 * h);
        worst = worst.max((analytic[i] - fd).abs() / (fd.abs() + EPS_ABS));
    }
    Some(worst)
}
