//! Stationary-law checks for the samplers against enumeration and the
//! Gaussian closed form.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thermo_ep::kernel::{NudgeStrength, ParamVector, Temperature};
use thermo_ep::model::{LayeredTanhEnergyNet, QuadraticModel};
use thermo_ep::oracle::{random_instance, GibbsTable};
use thermo_ep::sampler::{effective_sample_size, run_chains, ChainConfig, KernelKind, ACCEPTANCE_BAND};
use thermo_ep::verify::{gibbs_tv, state_index};

fn temp(t: f64) -> Temperature {
    Temperature::new(t).unwrap()
}

/// Histogram of 10^5 Gibbs-sweep samples. The Pearson test needs close to
/// independent draws, so that variant thins and spreads the budget over
/// many short chains with random starts.
fn gibbs_counts(seed: u64, t: f64, chains: usize, thin: usize) -> (Vec<usize>, Vec<f64>) {
    let inst = random_instance(&mut ChaCha8Rng::seed_from_u64(seed), 8, false);
    let table = GibbsTable::build(&inst.model, &inst.theta, NudgeStrength::FREE, temp(t)).unwrap();
    let per_chain = 100_000 / chains;
    let mut cfg = ChainConfig::new(KernelKind::GibbsSweepBinary, 500 + per_chain * thin, seed)
        .with_chains(chains)
        .with_burn_in(500);
    cfg.thin = thin;
    let batch = run_chains(&inst.model, &inst.theta, NudgeStrength::FREE, temp(t), &cfg, None).unwrap();
    assert_eq!(batch.len(), 100_000);
    let mut counts = vec![0usize; table.probs.len()];
    for s in &batch.samples {
        counts[state_index(&inst.model, s.values()).unwrap()] += 1;
    }
    (counts, table.probs)
}

#[test]
fn gibbs_total_variation_on_eight_spins() {
    for seed in 0..3 {
        let (counts, probs) = gibbs_counts(seed, 2.0, 4, 1);
        let n: usize = counts.iter().sum();
        let tv: f64 = 0.5
            * counts
                .iter()
                .zip(&probs)
                .map(|(&c, p)| (c as f64 / n as f64 - p).abs())
                .sum::<f64>();
        assert!(tv <= 0.02, "seed {seed}: TV {tv}");
    }
}

#[test]
fn gibbs_passes_pearson_test() {
    for seed in 0..3 {
        let (counts, probs) = gibbs_counts(seed, 2.0, 40, 16);
        let n: f64 = counts.iter().sum::<usize>() as f64;
        let (mut chi2, mut cells) = (0.0, 0usize);
        for (&c, p) in counts.iter().zip(&probs) {
            if p * n >= 5.0 {
                chi2 += (c as f64 - p * n).powi(2) / (p * n);
                cells += 1;
            }
        }
        let p_value = 1.0 - ChiSquared::new((cells - 1) as f64).unwrap().cdf(chi2);
        assert!(p_value > 0.01, "seed {seed}: chi2 {chi2} on {cells} cells, p {p_value}");
    }
}

#[test]
fn library_total_variation_helper_agrees() {
    let inst = random_instance(&mut ChaCha8Rng::seed_from_u64(0), 8, false);
    let r = gibbs_tv(&inst.model, &inst.theta, NudgeStrength::FREE, temp(2.0), 100_000, 4).unwrap();
    assert_eq!(r.samples, 100_000);
    assert!(r.tv <= 0.02, "{r:?}");
}

#[test]
fn adjusted_langevin_recovers_standard_gaussian() {
    let dim = 3;
    let model = QuadraticModel::new(dim);
    let theta = ParamVector::flat(vec![0.0; dim]).unwrap();
    let chains = 4;
    let cfg = ChainConfig::new(KernelKind::LangevinMetropolisAdjusted, 5000, 11).with_chains(chains);
    let batch = run_chains(&model, &theta, NudgeStrength::FREE, temp(1.0), &cfg, None).unwrap();
    let a = batch.acceptance_rate.unwrap();
    let in_band = a > ACCEPTANCE_BAND.0 && a < ACCEPTANCE_BAND.1;
    assert_eq!(in_band, !batch.warnings.iter().any(|w| w.contains("acceptance")), "acceptance {a}");
    // Statistics: every mean and every second moment s_i s_j.
    let mut stats: Vec<(Box<dyn Fn(&[f64]) -> f64>, f64)> = Vec::new();
    for i in 0..dim {
        stats.push((Box::new(move |s: &[f64]| s[i]), 0.0));
        for j in i..dim {
            stats.push((Box::new(move |s: &[f64]| s[i] * s[j]), if i == j { 1.0 } else { 0.0 }));
        }
    }
    for (f, target) in &stats {
        let mut ess = 0.0;
        let mut all = Vec::new();
        for c in 0..chains {
            let y: Vec<f64> = batch.chain(c).iter().map(|s| f(s.values())).collect();
            ess += effective_sample_size(&y);
            all.extend(y);
        }
        assert!(ess >= 1000.0, "ESS {ess}");
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        let var = all.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let z = (mean - target) / (var / ess).sqrt();
        assert!(z.abs() <= 3.0, "z = {z}");
    }
}

#[test]
fn same_configuration_gives_identical_batches() {
    let net = LayeredTanhEnergyNet::new(3, 4, 2);
    let theta = net.init_params(&mut ChaCha8Rng::seed_from_u64(1));
    let ex = net.bind(&[0.2, -0.1, 0.7], Some(vec![1.0, 0.0])).unwrap();
    let cfg = ChainConfig::new(KernelKind::LangevinMetropolisAdjusted, 300, 9).with_chains(3);
    let a = run_chains(&ex, &theta, NudgeStrength::new(0.5).unwrap(), temp(0.05), &cfg, None).unwrap();
    let b = run_chains(&ex, &theta, NudgeStrength::new(0.5).unwrap(), temp(0.05), &cfg, None).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    let c = run_chains(&ex, &theta, NudgeStrength::new(0.5).unwrap(), temp(0.05), &cfg.clone().with_seed(10), None)
        .unwrap();
    assert_ne!(a.samples, c.samples);
}

#[test]
fn oversized_step_is_flagged() {
    let model = QuadraticModel::new(4);
    let theta = ParamVector::flat(vec![0.0; 4]).unwrap();
    let cfg = ChainConfig::new(KernelKind::LangevinMetropolisAdjusted, 400, 2)
        .with_chains(2)
        .with_step_size(8.0);
    let batch = run_chains(&model, &theta, NudgeStrength::FREE, temp(1.0), &cfg, None).unwrap();
    assert!(batch.warnings.iter().any(|w| w.contains("acceptance")), "{:?}", batch.warnings);
}

#[test]
fn nudged_and_free_relaxations_differ_when_loss_is_active() {
    use thermo_ep::kernel::StateVector;
    use thermo_ep::sampler::relax_deterministic;
    let net = LayeredTanhEnergyNet::new(3, 4, 2);
    let theta = net.init_params(&mut ChaCha8Rng::seed_from_u64(3));
    let ex = net.bind(&[0.5, -0.4, 0.9], Some(vec![1.0, 0.0])).unwrap();
    let init = StateVector::continuous(thermo_ep::kernel::EnergyModel::initial_state(&ex)).unwrap();
    let free = relax_deterministic(&ex, &theta, NudgeStrength::FREE, &init, 0.2, 5000, 1e-10).unwrap();
    let nudged = relax_deterministic(&ex, &theta, NudgeStrength::NUDGED, &init, 0.2, 5000, 1e-10).unwrap();
    assert!(free.converged && nudged.converged);
    let delta: f64 = free
        .state
        .values()
        .iter()
        .zip(nudged.state.values())
        .map(|(a, b)| (a - b).abs())
        .sum();
    assert!(delta > 1e-3);
}
