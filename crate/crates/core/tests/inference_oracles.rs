mod common;

use std::sync::{Arc, Mutex};

use common::*;
use levy_infer::inference::{
    assemble_estimate, is_correction, pmmh_run, run_unbiased, sample_level, BoxRandomWalk,
    ChainState, CorrectionOptions, EvidenceEstimator, LevelPmf, ParamModel, PfEvidence,
    PmmhChainRecord, PmmhConfig, UnbiasedConfig,
};
use levy_infer::rng::{substream, StreamKey};
use levy_infer::sde_euler::propagate_unit;
use levy_infer::smc::{
    particle_filter, ConstantPotential, GaussianObservation, HmmSpec, ObservationMap,
    ObservationModel, ParticleCloud, Storage,
};
use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};

/// Observations `ln Y_k + τ ξ_k` of the multiplicative model simulated at a
/// fine level.
fn synthetic_log_data(theta: f64, n: usize, tau: f64, seed: u64) -> Vec<Vec<f64>> {
    let model = stable_model(12);
    let p = model.levels().get(12).unwrap();
    let mut rng = substream(seed, &[]);
    let mut y = vec![1.0];
    (0..n)
        .map(|_| {
            y = propagate_unit(&y, &[theta], p, &model, &mut rng)
                .unwrap()
                .terminal;
            let xi: f64 = StandardNormal.sample(&mut rng);
            vec![y[0].ln() + tau * xi]
        })
        .collect()
}

fn log_hmm(n: usize, seed: u64) -> HmmSpec {
    let obs = Arc::new(GaussianObservation::new(0.3 * 0.3, ObservationMap::Log).unwrap());
    HmmSpec::new(
        Arc::new(stable_model(12)),
        obs,
        synthetic_log_data(0.5, n, 0.3, seed),
        vec![1.0],
    )
    .unwrap()
}

fn unit_box() -> BoxRandomWalk {
    BoxRandomWalk::new(vec![0.05], vec![0.95], vec![0.1]).unwrap()
}

fn short_chain(hmm: &HmmSpec, iterations: usize, seed: u64) -> PmmhChainRecord<ParticleCloud> {
    let est = PfEvidence {
        hmm,
        level: 1,
        particles: 30,
        storage: Storage::Full,
    };
    let config = PmmhConfig {
        iterations,
        burn_in: Some(0),
        ..PmmhConfig::default()
    };
    pmmh_run(&est, &unit_box(), &config, &mut substream(seed, &[])).unwrap()
}

fn single_state_record(hmm: &HmmSpec, theta: f64, seed: u64) -> PmmhChainRecord<ParticleCloud> {
    let mut rng = substream(seed, &[]);
    let cloud = particle_filter(hmm, &[theta], 1, 30, Storage::Full, &mut rng).unwrap();
    PmmhChainRecord {
        states: vec![ChainState {
            theta: vec![theta],
            log_evidence: cloud.log_evidence(),
            output: cloud,
        }],
        repeats: vec![1],
        visits: vec![0],
        accepted: 0,
        iterations: 1,
        burn_in: 0,
        epsilon: 1e-8,
        steps: 0,
    }
}

fn phi_theta_y(theta: &[f64], path: &[f64]) -> f64 {
    theta[0] + path[path.len() - 1]
}

#[test]
fn level_frequencies_match_normalized_weights() {
    let pmf = LevelPmf::geometric(1, 12, 1.5).unwrap();
    assert_eq!(pmf.support(), 2..=12);
    let z: f64 = (2..=12).map(|l| 2f64.powf(-1.5 * l as f64)).sum();
    let mut rng = substream(40, &[]);
    let draws = 1_000_000;
    let mut counts = [0u64; 13];
    for _ in 0..draws {
        counts[sample_level(&pmf, &mut rng) as usize] += 1;
    }
    assert_eq!(counts[0] + counts[1], 0);
    for l in 2..=12 {
        let p = 2f64.powf(-1.5 * l as f64) / z;
        assert!((pmf.prob(l) - p).abs() < 1e-12);
        let freq = counts[l as usize] as f64 / draws as f64;
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        assert!((freq - p).abs() < 4.0 * se, "l={l} freq={freq} p={p}");
    }
}

#[test]
fn single_atom_pmf_always_returns_its_level() {
    let pmf = LevelPmf::from_weights(7, &[1.0]).unwrap();
    let mut rng = substream(41, &[]);
    assert!((0..1000).all(|_| sample_level(&pmf, &mut rng) == 7));
}

/// Three-point ring with a symmetric ±1 proposal that logs what it proposes.
#[derive(Debug, Default)]
struct Ring {
    proposed: Mutex<Vec<usize>>,
}

impl ParamModel for Ring {
    fn dim(&self) -> usize {
        1
    }
    fn log_prior(&self, theta: &[f64]) -> f64 {
        if [0.0, 1.0, 2.0].contains(&theta[0]) {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    }
    fn propose(&self, theta: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        let shift = if rng.random::<bool>() { 1 } else { 2 };
        let next = (theta[0] as usize + shift) % 3;
        self.proposed.lock().unwrap().push(next);
        vec![next as f64]
    }
    fn log_proposal(&self, _from: &[f64], _to: &[f64]) -> f64 {
        0.0
    }
    fn initial(&self, _rng: &mut dyn RngCore) -> Vec<f64> {
        vec![0.0]
    }
}

const RING_EVIDENCE: [f64; 3] = [1.0, 0.3, 0.6];

struct TableEvidence;

impl EvidenceEstimator for TableEvidence {
    type Output = f64;
    fn run(&self, theta: &[f64], _rng: &mut dyn RngCore) -> levy_infer::Result<f64> {
        Ok(RING_EVIDENCE[theta[0] as usize].ln())
    }
    fn log_evidence(output: &f64) -> f64 {
        *output
    }
}

#[test]
fn acceptance_frequencies_follow_metropolis_ratio() {
    let ring = Ring::default();
    let config = PmmhConfig {
        iterations: 200_000,
        burn_in: Some(0),
        initial_theta: Some(vec![0.0]),
        ..PmmhConfig::default()
    };
    let record = pmmh_run(&TableEvidence, &ring, &config, &mut substream(42, &[])).unwrap();
    let proposed = ring.proposed.lock().unwrap();
    assert_eq!(proposed.len(), config.iterations);
    let trace = record.trace(&|t| t[0]);
    let mut tries = [[0u64; 3]; 3];
    let mut moves = [[0u64; 3]; 3];
    let mut prev = 0usize;
    for (k, &now) in trace.iter().enumerate() {
        let now = now as usize;
        let to = proposed[k];
        tries[prev][to] += 1;
        if now != prev {
            assert_eq!(now, to);
            moves[prev][to] += 1;
        }
        prev = now;
    }
    let eps = config.epsilon;
    for from in 0..3 {
        for to in 0..3 {
            if from == to {
                continue;
            }
            let a = ((RING_EVIDENCE[to] + eps) / (RING_EVIDENCE[from] + eps)).min(1.0);
            let n = tries[from][to] as f64;
            let freq = moves[from][to] as f64 / n;
            if a == 1.0 {
                assert_eq!(freq, 1.0);
            } else {
                let se = (a * (1.0 - a) / n).sqrt();
                assert!((freq - a).abs() < 4.0 * se, "{from}->{to}: {freq} vs {a}");
            }
        }
    }
    // Stationary occupation is proportional to the evidence.
    let total: f64 = RING_EVIDENCE.iter().sum();
    for (s, evidence) in RING_EVIDENCE.iter().enumerate() {
        let occ = trace.iter().filter(|&&t| t as usize == s).count() as f64 / trace.len() as f64;
        assert!(
            (occ - evidence / total).abs() < 0.01,
            "state {s} occupation {occ}"
        );
    }
}

#[test]
fn repeat_counts_scale_coarse_contribution_linearly() {
    let hmm = log_hmm(5, 43);
    let record = short_chain(&hmm, 300, 44);
    assert!(record.distinct() > 2);
    assert_eq!(record.repeats.iter().sum::<u64>(), 300);
    assert!(record.repeats.iter().all(|&d| d >= 1));
    let base = assemble_estimate(&record, None, &phi_theta_y).unwrap();
    let k = 1;
    let mut doubled = record.clone();
    doubled.repeats[k] *= 2;
    doubled
        .visits
        .extend(std::iter::repeat_n(k, record.repeats[k] as usize));
    let after = assemble_estimate(&doubled, None, &phi_theta_y).unwrap();
    // Contribution of state k written out from its cloud.
    let st = &record.states[k];
    let log_den = (st.log_evidence.exp() + record.epsilon).ln();
    let (mut cn, mut cd) = (0.0, 0.0);
    for (i, lw) in st.output.log_weights().iter().enumerate() {
        let w = (lw - log_den).exp();
        cn += w * phi_theta_y(&st.theta, st.output.path(i));
        cd += w;
    }
    let d = record.repeats[k] as f64;
    assert!((after.numerator - base.numerator - d * cn).abs() < 1e-12 * after.numerator.abs());
    assert!((after.denominator - base.denominator - d * cd).abs() < 1e-12 * after.denominator);

    let single = single_state_record(&hmm, 0.4, 45);
    let mut twice = single.clone();
    twice.repeats[0] = 2;
    twice.visits.push(0);
    let a = assemble_estimate(&single, None, &phi_theta_y).unwrap();
    let b = assemble_estimate(&twice, None, &phi_theta_y).unwrap();
    assert_eq!(b.numerator, 2.0 * a.numerator);
    assert_eq!(b.denominator, 2.0 * a.denominator);
}

#[test]
fn grouped_and_per_iteration_estimators_agree() {
    let hmm = log_hmm(5, 46);
    let record = short_chain(&hmm, 1000, 47);
    let pmf = LevelPmf::geometric(1, 6, 1.5).unwrap();
    let corr = is_correction(
        &record,
        &hmm,
        &pmf,
        &CorrectionOptions::default(),
        &StreamKey::new(48),
    )
    .unwrap();
    let est = assemble_estimate(&record, Some(&corr), &phi_theta_y).unwrap();
    let v18 = est.per_iteration_value.unwrap();
    assert!(
        (v18 - est.value).abs() <= 1e-12 * est.value.abs(),
        "{v18} vs {}",
        est.value
    );
    assert_eq!(est.levels.len(), record.distinct());
    assert!(est.levels.iter().all(|l| pmf.support().contains(l)));
}

#[test]
fn common_weight_scaling_leaves_estimate_unchanged() {
    let hmm = log_hmm(5, 49);
    let record = short_chain(&hmm, 400, 50);
    let pmf = LevelPmf::geometric(1, 6, 1.5).unwrap();
    let corr = is_correction(
        &record,
        &hmm,
        &pmf,
        &CorrectionOptions::default(),
        &StreamKey::new(51),
    )
    .unwrap();
    let base = assemble_estimate(&record, Some(&corr), &phi_theta_y).unwrap();
    let mut doubled = record.clone();
    doubled.repeats.iter_mut().for_each(|d| *d *= 2);
    doubled.visits = record.visits.iter().flat_map(|&v| [v; 2]).collect();
    let two = assemble_estimate(&doubled, Some(&corr), &phi_theta_y).unwrap();
    assert_eq!(two.value, base.value);
    let mut tripled = record.clone();
    tripled.repeats.iter_mut().for_each(|d| *d *= 3);
    tripled.visits = record.visits.iter().flat_map(|&v| [v; 3]).collect();
    let three = assemble_estimate(&tripled, Some(&corr), &phi_theta_y).unwrap();
    assert!((three.value - base.value).abs() < 1e-14 * base.value.abs());
}

#[test]
fn constant_potential_reduces_to_coarse_pmmh() {
    let obs: Arc<dyn ObservationModel> = Arc::new(ConstantPotential { log_value: -0.2 });
    let hmm = HmmSpec::new(
        Arc::new(stable_model(12)),
        obs,
        vec![vec![0.0]; 4],
        vec![1.0],
    )
    .unwrap();
    let config = UnbiasedConfig {
        l_min: 1,
        pmf: LevelPmf::geometric(1, 8, 1.5).unwrap(),
        coarse_particles: 20,
        pmmh: PmmhConfig {
            iterations: 300,
            ..PmmhConfig::default()
        },
        correction: CorrectionOptions::default(),
    };
    let key = StreamKey::new(52);
    let one = run_unbiased(&hmm, &unit_box(), &config, &key, &|_, _| 1.0).unwrap();
    assert_eq!(one.estimate.value, 1.0);

    // A φ that ignores the path sees identical fine and coarse weights, so
    // every correction cancels exactly.
    let phi_theta = |t: &[f64], _: &[f64]| t[0];
    let with = run_unbiased(&hmm, &unit_box(), &config, &key, &phi_theta).unwrap();
    let est = PfEvidence {
        hmm: &hmm,
        level: 1,
        particles: 20,
        storage: Storage::Full,
    };
    let record = pmmh_run(&est, &unit_box(), &config.pmmh, &mut key.rng()).unwrap();
    let corr = is_correction(&record, &hmm, &config.pmf, &config.correction, &key).unwrap();
    assert!(corr
        .terms
        .iter()
        .all(|t| t.difference.weighted_sum(&|_| 1.0) == 0.0));
    let without = assemble_estimate(&record, None, &phi_theta).unwrap();
    assert_eq!(with.estimate.value, without.value);
    let pmmh = record.posterior_mean(&|t| t[0]);
    assert!(
        (pmmh - without.value).abs() < 1e-12 * pmmh.abs(),
        "{pmmh} vs {}",
        without.value
    );
}

#[test]
fn single_record_without_correction_is_self_normalized_pf() {
    let hmm = log_hmm(6, 53);
    let record = single_state_record(&hmm, 0.6, 54);
    let est = assemble_estimate(&record, None, &phi_theta_y).unwrap();
    let pf = record.states[0]
        .output
        .self_normalized(&|p| phi_theta_y(&[0.6], p));
    assert!((est.value - pf).abs() < 1e-12 * pf.abs());
    assert_eq!(
        assemble_estimate(&record, None, &|_, _| 1.0).unwrap().value,
        1.0
    );
}

#[test]
fn correction_expectation_telescopes_at_one_step() {
    let (z, var) = (0.2, 0.3 * 0.3);
    let obs = Arc::new(GaussianObservation::new(var, ObservationMap::Log).unwrap());
    let hmm = HmmSpec::new(Arc::new(stable_model(12)), obs, vec![vec![z]], vec![1.0]).unwrap();
    let theta = 0.6;
    let (l_min, l_max) = (1, 8);
    let pmf = LevelPmf::geometric(l_min, l_max, 1.5).unwrap();
    let record = single_state_record(&hmm, theta, 55);
    let phi = |p: &[f64]| p[p.len() - 1];
    let options = CorrectionOptions {
        storage: Storage::Terminal,
        ..CorrectionOptions::default()
    };
    let passes: Vec<f64> = (0..10_000u64)
        .map(|r| {
            let c =
                is_correction(&record, &hmm, &pmf, &options, &StreamKey::new(56).child(r)).unwrap();
            let t = &c.terms[0];
            t.difference.weighted_sum(&phi) / t.prob
        })
        .collect();
    let (m, se) = mean_se(&passes);
    let big = 1_000_000;
    let reference = |level: u32, stream: u64| {
        let mut rng = substream(57, &[stream]);
        let cloud =
            particle_filter(&hmm, &[theta], level, big, Storage::Terminal, &mut rng).unwrap();
        let terms: Vec<f64> = (0..big)
            .map(|i| big as f64 * cloud.log_weights()[i].exp() * phi(cloud.terminal(i)))
            .collect();
        mean_se(&terms)
    };
    let (fine, se_f) = reference(l_max, 0);
    let (coarse, se_c) = reference(l_min, 1);
    let combined = (se * se + se_f * se_f + se_c * se_c).sqrt();
    let target = fine - coarse;
    assert!(
        (m - target).abs() < 4.0 * combined,
        "mean {m} target {target} se {combined}"
    );
}

#[test]
fn independent_pmmh_chains_agree() {
    let hmm = log_hmm(20, 58);
    let est = PfEvidence {
        hmm: &hmm,
        level: 1,
        particles: 60,
        storage: Storage::Terminal,
    };
    let chain = |iterations: usize, seed: u64| {
        let config = PmmhConfig {
            iterations,
            ..PmmhConfig::default()
        };
        let record = pmmh_run(&est, &unit_box(), &config, &mut substream(seed, &[])).unwrap();
        let trace = record.trace(&|t| t[0]);
        let m = trace.iter().sum::<f64>() / trace.len() as f64;
        assert!((m - record.posterior_mean(&|t| t[0])).abs() < 1e-12);
        (m, batch_means_se(&trace, 50))
    };
    let (a, se_a) = chain(50_000, 59);
    let (b, se_b) = chain(150_000, 60);
    let combined = (se_a * se_a + se_b * se_b).sqrt();
    assert!(
        (a - b).abs() < 3.0 * combined,
        "chain {a} reference {b} se {combined}"
    );
}
