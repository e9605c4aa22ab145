//! Signal-to-noise of nudge-induced state shifts and alignment of the
//! finite-nudge update with reference gradients across β.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{grad_classical, grad_supervised, Phase, PhaseSource};
use crate::kernel::{EnergyModel, NudgeStrength, ParamVector, StateKind, StateVector, Temperature};
use crate::sampler::{derive_seed, relax_deterministic, RelaxConfig};

const TAG_SNR: u64 = 0x5e1;
const TAG_ESTIMATE: u64 = 0xe57;
const TAG_SUPERVISED: u64 = 0x5b9;
const TAG_OBJECTIVE: u64 = 0x0b1;

/// How the fluctuation of `Δs` across repeats is aggregated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SnrMode {
    /// `‖mean_r Δs_r‖ / mean_r ‖Δs_r − mean Δs‖`.
    Norm,
    /// Mean over units of `|mean_r Δs_{r,u}| / sd_r(Δs_{r,u})`.
    PerUnit,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnrReport {
    /// `+∞` when the repeats do not fluctuate.
    pub snr: f64,
    pub signal: f64,
    pub noise: f64,
    pub repeats: usize,
}

/// Noise-free source: the deterministic minimizer of each phase's kernel
/// as a single point mass.
#[derive(Clone, Copy, Debug)]
pub struct RelaxSource {
    pub relax: RelaxConfig,
}

impl PhaseSource for RelaxSource {
    fn draw<M: EnergyModel + ?Sized>(
        &self,
        model: &M,
        theta: &ParamVector,
        beta: NudgeStrength,
        _t: Temperature,
        _tag: u64,
    ) -> Result<Phase> {
        let r = &self.relax;
        let start = StateVector::of_kind(model.initial_state(), model.state_kind())?;
        let s = relax_deterministic(model, theta, beta, &start, r.step_size, r.max_iters, r.tol)?.state;
        Ok(Phase {
            beta: beta.value(),
            states: vec![s],
            weights: vec![1.0],
            groups: vec![1],
            unbiased: false,
            seed: None,
        })
    }

    fn reseeded(&self, _seed: u64) -> Self {
        *self
    }
}

fn phase_mean_state(phase: &Phase, mask: &[bool]) -> Vec<f64> {
    let mut m = vec![0.0; mask.iter().filter(|c| !**c).count()];
    for (s, w) in phase.states.iter().zip(&phase.weights) {
        let free = s.values().iter().zip(mask).filter(|(_, c)| !**c).map(|(v, _)| v);
        m.iter_mut().zip(free).for_each(|(a, v)| *a += w * v);
    }
    m
}

/// SNR of `Δs = 𝔼̂_β[s] − 𝔼̂_0[s]` over `repeats` independent paired runs.
///
/// `Δs` is taken over the unclamped units and concatenated across
/// `examples`. Repeat `r` of example `e` reseeds `source` from
/// `(seed, r, e)`.
pub fn snr_of_perturbation<M, S>(
    examples: &[M],
    theta: &ParamVector,
    beta: NudgeStrength,
    t: Temperature,
    repeats: usize,
    source: &S,
    seed: u64,
    mode: SnrMode,
) -> Result<SnrReport>
where
    M: EnergyModel,
    S: PhaseSource,
{
    if repeats < 2 {
        return Err(Error::invalid(format!("SNR needs at least 2 repeats, got {repeats}")));
    }
    if examples.is_empty() {
        return Err(Error::invalid("SNR needs at least one example"));
    }
    let mut deltas: Vec<Vec<f64>> = vec![Vec::new(); repeats];
    for (e, model) in examples.iter().enumerate() {
        let mask = model.clamp_mask();
        for (r, delta) in deltas.iter_mut().enumerate() {
            let src = source.reseeded(derive_seed(seed, &[TAG_SNR, r as u64, e as u64]));
            let free = src.draw(model, theta, NudgeStrength::FREE, t, 0)?;
            let nudged = src.draw(model, theta, beta, t, 1)?;
            let m0 = phase_mean_state(&free, &mask);
            let m1 = phase_mean_state(&nudged, &mask);
            delta.extend(m1.iter().zip(&m0).map(|(a, b)| a - b));
        }
    }
    Ok(snr_from_deltas(&deltas, mode))
}

/// SNR of a set of repeated perturbation vectors.
pub fn snr_from_deltas(deltas: &[Vec<f64>], mode: SnrMode) -> SnrReport {
    let r = deltas.len() as f64;
    let d = deltas[0].len();
    if deltas.iter().all(|v| v == &deltas[0]) {
        let signal = match mode {
            SnrMode::Norm => deltas[0].iter().map(|x| x * x).sum::<f64>().sqrt(),
            SnrMode::PerUnit => deltas[0].iter().map(|x| x.abs()).sum::<f64>() / d as f64,
        };
        return SnrReport {
            snr: f64::INFINITY,
            signal,
            noise: 0.0,
            repeats: deltas.len(),
        };
    }
    let mean: Vec<f64> = (0..d).map(|j| deltas.iter().map(|v| v[j]).sum::<f64>() / r).collect();
    let (signal, noise) = match mode {
        SnrMode::Norm => {
            let signal = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
            let noise = deltas
                .iter()
                .map(|v| v.iter().zip(&mean).map(|(a, m)| (a - m).powi(2)).sum::<f64>().sqrt())
                .sum::<f64>()
                / r;
            (signal, noise)
        }
        SnrMode::PerUnit => {
            let sd: Vec<f64> = (0..d)
                .map(|j| (deltas.iter().map(|v| (v[j] - mean[j]).powi(2)).sum::<f64>() / (r - 1.0)).sqrt())
                .collect();
            let signal = mean.iter().map(|m| m.abs()).sum::<f64>() / d as f64;
            let noise = sd.iter().sum::<f64>() / d as f64;
            if noise > 0.0 {
                let ratio = mean
                    .iter()
                    .zip(&sd)
                    .filter(|(_, s)| **s > 0.0)
                    .map(|(m, s)| m.abs() / s)
                    .sum::<f64>()
                    / d as f64;
                return SnrReport {
                    snr: ratio,
                    signal,
                    noise,
                    repeats: deltas.len(),
                };
            }
            (signal, noise)
        }
    };
    SnrReport {
        snr: if noise > 0.0 { signal / noise } else { f64::INFINITY },
        signal,
        noise,
        repeats: deltas.len(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cosine {
    pub value: f64,
    /// Set when either vector is zero; `value` is then 0.
    pub degenerate: bool,
}

pub fn cosine(u: &ParamVector, v: &ParamVector) -> Result<Cosine> {
    cosine_slices(u.values(), v.values())
}

pub fn cosine_slices(u: &[f64], v: &[f64]) -> Result<Cosine> {
    if u.len() != v.len() {
        return Err(Error::Shape {
            what: "cosine operand",
            expected: u.len(),
            got: v.len(),
        });
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Ok(Cosine {
            value: 0.0,
            degenerate: true,
        });
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok(Cosine {
        value: (dot / (nu * nv)).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        // Ties share their average rank.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation; NaN when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub grid: Vec<f64>,
    pub seed: u64,
    /// SNR repeats per grid point; `None` skips SNR.
    pub snr_repeats: Option<usize>,
    pub snr_mode: SnrMode,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::invalid("β grid is empty"));
        }
        if self.grid.iter().any(|b| !(*b > 0.0 && *b <= 1.0)) {
            return Err(Error::invalid("β grid must lie in (0, 1]"));
        }
        if self.grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("β grid must be strictly increasing"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub beta: f64,
    pub snr: Option<f64>,
    pub cos_supervised: Cosine,
    pub cos_objective: Cosine,
    pub samples: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn betas(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.beta).collect()
    }

    pub fn cos_supervised(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.cos_supervised.value).collect()
    }

    /// Spearman correlation of the supervised cosine with β.
    pub fn trend(&self) -> f64 {
        spearman(&self.betas(), &self.cos_supervised())
    }

    /// Long-format CSV: `beta,metric,value,samples,seed`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("beta,metric,value,samples,seed\n");
        for r in &self.rows {
            let mut line = |metric: &str, value: f64| {
                out.push_str(&format!("{},{metric},{value},{},{}\n", r.beta, r.samples, r.seed));
            };
            if let Some(s) = r.snr {
                line("snr", s);
            }
            line("cos_supervised", r.cos_supervised.value);
            line("cos_supervised_degenerate", r.cos_supervised.degenerate as u8 as f64);
            line("cos_objective", r.cos_objective.value);
            line("cos_objective_degenerate", r.cos_objective.degenerate as u8 as f64);
        }
        out
    }

    /// Wide CSV, one row per β: `beta,snr,cos_supervised,cos_objective,samples,seed`.
    /// A missing SNR is an empty field.
    pub fn to_panel_csv(&self) -> String {
        let mut out = String::from("beta,snr,cos_supervised,cos_objective,samples,seed\n");
        for r in &self.rows {
            let snr = r.snr.map(|s| s.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{snr},{},{},{},{}\n",
                r.beta, r.cos_supervised.value, r.cos_objective.value, r.samples, r.seed
            ));
        }
        out
    }
}

fn mean_over<M, F>(examples: &[M], p: usize, mut f: F) -> Result<(Vec<f64>, usize)>
where
    F: FnMut(usize, &M) -> Result<(Vec<f64>, usize)>,
{
    let mut acc = vec![0.0; p];
    let mut samples = 0;
    for (e, m) in examples.iter().enumerate() {
        let (g, n) = f(e, m)?;
        acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        samples += n;
    }
    let k = examples.len() as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    Ok((acc, samples))
}

/// Per grid point: the finite-nudge update `ĝ(β)` from `estimate`, and its
/// cosines with `∇ℒ_sup` and with `∇J_β = ∇_θ[A(θ,β) − A(θ,0)]`, both taken
/// from `reference`. Gradients are averaged over `examples`.
pub fn alignment_sweep<M, S, R>(
    examples: &[M],
    theta: &ParamVector,
    t: Temperature,
    estimate: &S,
    reference: &R,
    cfg: &SweepConfig,
) -> Result<SweepResult>
where
    M: EnergyModel,
    S: PhaseSource,
    R: PhaseSource,
{
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::invalid("sweep needs at least one example"));
    }
    let p = theta.dim();
    let (sup, _) = mean_over(examples, p, |e, m| {
        let src = reference.reseeded(derive_seed(cfg.seed, &[TAG_SUPERVISED, e as u64]));
        let g = grad_supervised(&src, m, theta, t)?;
        Ok((g.grad.into_values(), 0))
    })?;
    let mut rows = Vec::with_capacity(cfg.grid.len());
    for (k, &b) in cfg.grid.iter().enumerate() {
        let seed = derive_seed(cfg.seed, &[TAG_ESTIMATE, k as u64]);
        let (g_hat, samples) = mean_over(examples, p, |e, m| {
            let g = grad_classical(&estimate.reseeded(derive_seed(seed, &[e as u64])), m, theta, t, b)?;
            let n = g.meta.samples_per_phase.iter().sum();
            Ok((g.grad.into_values(), n))
        })?;
        let (g_obj, _) = mean_over(examples, p, |e, m| {
            let src = reference.reseeded(derive_seed(cfg.seed, &[TAG_OBJECTIVE, k as u64, e as u64]));
            let g = grad_classical(&src, m, theta, t, b)?;
            Ok((g.grad.values().iter().map(|v| b * v).collect(), 0))
        })?;
        let snr = match cfg.snr_repeats {
            Some(r) => Some(
                snr_of_perturbation(examples, theta, NudgeStrength::new(b)?, t, r, estimate, seed, cfg.snr_mode)?
                    .snr,
            ),
            None => None,
        };
        rows.push(SweepRow {
            beta: b,
            snr,
            cos_supervised: cosine_slices(&g_hat, &sup)?,
            cos_objective: cosine_slices(&g_hat, &g_obj)?,
            samples,
            seed,
        });
    }
    Ok(SweepResult { rows })
}

/// `∇_θ[A(θ,β) − A(θ,0)]` by enumeration.
pub fn exact_objective_gradient<M: EnergyModel + ?Sized>(
    model: &M,
    theta: &ParamVector,
    beta: NudgeStrength,
    t: Temperature,
) -> Result<Vec<f64>> {
    if !matches!(model.state_kind(), StateKind::Binary(_)) {
        return Err(Error::invalid("exact reference needs an enumerable model"));
    }
    let free = crate::oracle::GibbsTable::build(model, theta, NudgeStrength::FREE, t)?;
    let nudged = crate::oracle::GibbsTable::build(model, theta, beta, t)?;
    let g1 = nudged.mean_grad_theta(model, theta);
    let g0 = free.mean_grad_theta(model, theta);
    Ok(g1.iter().zip(&g0).map(|(a, b)| a - b).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{ExactSource, McmcSource};
    use crate::model::{QuadraticModel, SpinGlass, SpinLoss};
    use crate::oracle::random_instance;
    use crate::sampler::{ChainConfig, KernelKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pv(v: Vec<f64>) -> ParamVector {
        ParamVector::flat(v).unwrap()
    }

    #[test]
    fn cosine_basics() {
        let u = pv(vec![1.0, 2.0, -1.0]);
        assert!((cosine(&u, &u).unwrap().value - 1.0).abs() < 1e-15);
        let neg = pv(vec![-1.0, -2.0, 1.0]);
        assert!((cosine(&u, &neg).unwrap().value + 1.0).abs() < 1e-15);
        let orth = pv(vec![2.0, -1.0, 0.0]);
        assert_eq!(cosine(&u, &orth).unwrap().value, 0.0);
        let zero = pv(vec![0.0; 3]);
        let c = cosine(&u, &zero).unwrap();
        assert!(c.degenerate && c.value == 0.0);
        assert!(cosine(&u, &pv(vec![1.0])).is_err());
    }

    #[test]
    fn spearman_basics() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), -1.0);
        // Ties take average ranks.
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0, 2.0, 3.0]);
        assert!((r - 0.9486832980505138).abs() < 1e-12);
    }

    #[test]
    fn deterministic_source_gives_infinite_snr() {
        let q = QuadraticModel::new(3).with_target(vec![1.0, 0.0, -1.0]);
        let theta = ParamVector::new(vec![0.1, 0.2, 0.3], q.layout()).unwrap();
        let src = RelaxSource {
            relax: RelaxConfig::default(),
        };
        let r = snr_of_perturbation(
            &[q],
            &theta,
            NudgeStrength::NUDGED,
            Temperature::default(),
            3,
            &src,
            0,
            SnrMode::Norm,
        )
        .unwrap();
        assert_eq!(r.noise, 0.0);
        assert_eq!(r.snr, f64::INFINITY);
    }

    #[test]
    fn snr_rejects_single_repeat() {
        let q = QuadraticModel::new(2);
        let theta = ParamVector::zeros(q.layout());
        let src = McmcSource::new(ChainConfig::new(KernelKind::LangevinMetropolisAdjusted, 20, 0));
        assert!(snr_of_perturbation(&[q], &theta, NudgeStrength::NUDGED, Temperature::default(), 1, &src, 0, SnrMode::Norm).is_err());
    }

    #[test]
    fn snr_from_known_deltas() {
        let d = vec![vec![1.0, 0.0], vec![3.0, 0.0]];
        let r = snr_from_deltas(&d, SnrMode::Norm);
        assert_eq!(r.signal, 2.0);
        assert_eq!(r.noise, 1.0);
        assert_eq!(r.snr, 2.0);
    }

    #[test]
    fn exact_reference_matches_scaled_contrast() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let inst = random_instance(&mut rng, 5, true);
        let b = NudgeStrength::new(0.3).unwrap();
        let direct = exact_objective_gradient(&inst.model, &inst.theta, b, Temperature::default()).unwrap();
        let via = grad_classical(&ExactSource::default(), &inst.model, &inst.theta, Temperature::default(), 0.3).unwrap();
        for (a, g) in direct.iter().zip(via.grad.values()) {
            assert!((a - 0.3 * g).abs() <= 1e-10);
        }
    }

    #[test]
    fn sweep_validates_grid() {
        let m = SpinGlass::new(3, SpinLoss::Zero);
        let theta = ParamVector::zeros(m.layout());
        let cfg = SweepConfig {
            grid: vec![0.5, 0.1],
            seed: 0,
            snr_repeats: None,
            snr_mode: SnrMode::Norm,
        };
        let e = ExactSource::default();
        assert!(alignment_sweep(&[m], &theta, Temperature::default(), &e, &e, &cfg).is_err());
    }

    #[test]
    fn single_point_csv() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let inst = random_instance(&mut rng, 4, false);
        let cfg = SweepConfig {
            grid: vec![1.0],
            seed: 0,
            snr_repeats: None,
            snr_mode: SnrMode::Norm,
        };
        let e = ExactSource::default();
        let r = alignment_sweep(&[inst.model], &inst.theta, Temperature::default(), &e, &e, &cfg).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert!((r.rows[0].cos_objective.value - 1.0).abs() < 1e-12);
        assert!(r.to_csv().starts_with("beta,metric,value,samples,seed\n1,cos_supervised,"));
        let panel = r.to_panel_csv();
        assert_eq!(panel.lines().count(), 2);
        assert!(panel.lines().nth(1).unwrap().starts_with("1,,"));
    }
}
