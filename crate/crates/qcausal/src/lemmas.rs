//! Numerical checks of the estimator guarantees and structural identities
//! the algorithms rely on. Each check returns a [`LemmaResult`] with the
//! worst observed value next to the bound it is compared against.

use anyhow::{ensure, Result};
use num_complex::Complex64;
use qcausal_core::bounds;
use qcausal_core::comb::{
    build_choi, gen_memoryless_with_constant_tooth, gen_unitary_comb, CombMetadata, CombSpec, DEFAULT_DIM_CAP,
};
use qcausal_core::discovery::{discover_general, independence_matrix, pair_tables, LocalConfig};
use qcausal_core::oracle::{swap_test_runs, CombOracle, OracleSession, SessionConfig, StatePrep};
use qcausal_core::povm::{born_bipartite, frame_norm_bounds, random_ic_povm, sic_qubit, IcPovm};
use qcausal_core::tensor::{self, haar_state, random_density, Spectrum};
use qcausal_core::{Matrix, Wire};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::harness::{AuditSink, AuditedOracle, RankRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaResult {
    pub name: String,
    pub passed: bool,
    pub cases: usize,
    /// Worst observed statistic (rate, error or margin; see `detail`).
    pub observed: f64,
    /// Bound the statistic is compared against.
    pub bound: f64,
    pub detail: String,
}

impl LemmaResult {
    pub fn line(&self) -> String {
        format!(
            "{:<28} {}  cases={:<6} observed={:.4e} bound={:.4e}  {}",
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.cases,
            self.observed,
            self.bound,
            self.detail
        )
    }
}

pub fn identity_comb(d: usize) -> CombSpec {
    CombSpec {
        n: 1,
        d_a: d,
        d_m: 1,
        psi0: vec![Complex64::new(1.0, 0.0)],
        unitaries: vec![Matrix::identity(d, d)],
        sigma_true: vec![1],
        pi_true: vec![1],
        metadata: CombMetadata {
            generator: "identity".into(),
            ..Default::default()
        },
    }
}

pub fn projector(amps: &[Complex64]) -> Matrix {
    Matrix::from_fn(amps.len(), amps.len(), |r, c| amps[r] * amps[c].conj())
}

/// Upper edge of a two-sigma binomial band around `p` for `trials` draws.
pub fn binomial_upper(p: f64, trials: usize) -> f64 {
    p + 2.0 * (p * (1.0 - p) / trials as f64).sqrt()
}

/// Wilson score interval at 95% for `successes` out of `trials`.
pub fn wilson_interval(successes: usize, trials: usize) -> (f64, f64) {
    let n = trials as f64;
    let p = successes as f64 / n;
    let z = 1.96f64;
    let denom = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / denom;
    let half = z * ((p * (1.0 - p) + z * z / (4.0 * n)) / n).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// SWAP-test calibration: fraction of trials whose overlap estimate misses
/// the true overlap of two Haar-random pure states by more than `eps`.
pub fn swap_test_calibration(trials: usize, d: usize, eps: f64, kappa: f64, seed: u64) -> Result<LemmaResult> {
    let spec = identity_comb(d);
    let mut session = OracleSession::new(&spec, SessionConfig::sampled(seed))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1111);
    let runs = swap_test_runs(eps, kappa)?;
    let mut misses = 0usize;
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let psi = haar_state(d, &mut rng);
        let phi = haar_state(d, &mut rng);
        let truth = tensor::trace_product(&projector(&psi), &projector(&phi)).re;
        let prep = |amps: &[Complex64]| StatePrep {
            input: Wire::Input(1),
            state: projector(amps),
            discard: Vec::new(),
        };
        let est = session.swap_test(&prep(&psi), &prep(&phi), eps, kappa)?;
        let err = (est - truth).abs();
        worst = worst.max(err);
        if err > eps {
            misses += 1;
        }
    }
    ensure!(
        session.queries() == 2 * runs * trials as u64,
        "SWAP-test query count off"
    );
    let rate = misses as f64 / trials as f64;
    let bound = binomial_upper(kappa, trials);
    Ok(LemmaResult {
        name: "swap-test calibration".into(),
        passed: rate <= bound,
        cases: trials,
        observed: rate,
        bound,
        detail: format!("runs={runs} eps={eps} kappa={kappa} misses={misses} max_err={worst:.4}"),
    })
}

/// chi_1 estimator tail: for the identity channel and for a constant
/// channel, the fraction of `shots`-shot estimates off by more than the
/// `eps` at which the Hoeffding bound equals `kappa`.
pub fn chi1_tail(trials: usize, shots: u64, kappa: f64, seed: u64) -> Result<LemmaResult> {
    let sic = sic_qubit();
    let lambda = sic.frame().lambda_min;
    let xi = bounds::chi1_xi(lambda, lambda, 2, 2);
    let eps = bounds::chi1_eps(kappa, shots, 2, 2, xi);
    let bound = bounds::chi1_kappa(eps, shots, 2, 2, xi);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cases = [
        ("identity", identity_comb(2)),
        ("constant", gen_memoryless_with_constant_tooth(1, 2, 0, &mut rng)?),
    ];
    let mut worst_rate: f64 = 0.0;
    let mut details = Vec::new();
    for (name, spec) in &cases {
        let choi = build_choi(spec, DEFAULT_DIM_CAP)?;
        let truth = choi.pair_chi1(Wire::Input(1), Wire::Output(1))?;
        let mut misses = 0usize;
        let mut max_err: f64 = 0.0;
        for t in 0..trials {
            let trial_seed = rng.random::<u64>();
            let mut session = OracleSession::from_choi(choi.clone(), SessionConfig::sampled(trial_seed));
            let local = LocalConfig {
                shots,
                seed: trial_seed ^ t as u64,
                povm: sic.clone(),
            };
            let m = independence_matrix(&mut session, &local, 0.0)?;
            let err = (m.chi_hat[0][0] - truth).abs();
            max_err = max_err.max(err);
            if err > eps {
                misses += 1;
            }
        }
        let rate = misses as f64 / trials as f64;
        worst_rate = worst_rate.max(rate);
        details.push(format!("{name}: chi={truth:.4} rate={rate:.3} max_err={max_err:.4}"));
    }
    Ok(LemmaResult {
        name: "chi1 estimator tail".into(),
        passed: worst_rate <= bound,
        cases: 2 * trials,
        observed: worst_rate,
        bound,
        detail: format!("eps={eps:.4} shots={shots}; {}", details.join("; ")),
    })
}

fn random_state(d: usize, rng: &mut ChaCha8Rng) -> Result<Matrix> {
    let rank = rng.random_range(1..=d);
    Ok(random_density(d, rank, Spectrum::Random, rng)?)
}

/// Dual-frame reconstruction of random qubit states from exact SIC
/// statistics (Frobenius error).
pub fn reconstruction(states: usize, seed: u64) -> Result<LemmaResult> {
    let sic = sic_qubit();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..states {
        let rho = random_state(2, &mut rng)?;
        let back = sic.reconstruct(&sic.born(&rho))?;
        worst = worst.max((back - rho).norm());
    }
    Ok(LemmaResult {
        name: "povm reconstruction".into(),
        passed: worst < 1e-10,
        cases: states,
        observed: worst,
        bound: 1e-10,
        detail: "SIC on random qubit states".into(),
    })
}

fn povms_for_norm_checks(seed: u64) -> Result<Vec<IcPovm>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(vec![
        sic_qubit(),
        random_ic_povm(2, &mut rng)?,
        random_ic_povm(3, &mut rng)?,
    ])
}

/// Frame sandwich `sum (p-q)^2 / l_max <= ||rho - sigma||_2^2 <= sum (p-q)^2 / l_min`.
/// `observed` is the largest violation (negative when every pair holds).
pub fn frame_sandwich(pairs: usize, seed: u64) -> Result<LemmaResult> {
    let povms = povms_for_norm_checks(seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x2222);
    let mut worst = f64::NEG_INFINITY;
    for k in 0..pairs {
        let povm = &povms[k % povms.len()];
        let d = povm.dim();
        let rho = random_state(d, &mut rng)?;
        let sigma = random_state(d, &mut rng)?;
        let b = frame_norm_bounds(povm, &rho, &sigma)?;
        worst = worst.max((b.lower - b.hs).max(b.hs - b.upper));
    }
    Ok(LemmaResult {
        name: "frame norm sandwich".into(),
        passed: worst <= 1e-12,
        cases: pairs,
        observed: worst,
        bound: 1e-12,
        detail: "SIC, random IC (d=2,3)".into(),
    })
}

/// `||rho-sigma||_1^2 <= rank(rho-sigma) ||rho-sigma||_2^2 <= (rank rho + rank sigma) ||rho-sigma||_2^2`.
/// `observed` is the largest violation.
pub fn norm_chain(pairs: usize, seed: u64) -> Result<LemmaResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..pairs {
        let d = rng.random_range(2..=6);
        let rho = random_state(d, &mut rng)?;
        let sigma = random_state(d, &mut rng)?;
        let diff = &rho - &sigma;
        let t = tensor::trace_norm_matrix(&diff)?;
        let h2 = tensor::hs_norm_matrix(&diff)?.powi(2);
        let r = tensor::numerical_rank_matrix(&diff, tensor::RANK_TOL) as f64;
        let rs = (tensor::numerical_rank_matrix(&rho, tensor::RANK_TOL)
            + tensor::numerical_rank_matrix(&sigma, tensor::RANK_TOL)) as f64;
        worst = worst.max((t * t - r * h2).max(r * h2 - rs * h2));
    }
    Ok(LemmaResult {
        name: "trace/HS norm chain".into(),
        passed: worst <= 1e-10,
        cases: pairs,
        observed: worst,
        bound: 1e-10,
        detail: "random mixed states, d in 2..=6".into(),
    })
}

/// Rank audit of reduced sessions: constant-channel rank relation for each
/// removed tooth and the memory bound `rank <= d_M` after every reduction.
pub fn rank_bounds(records: &[RankRecord]) -> LemmaResult {
    let relation = records.iter().filter(|r| !r.constant_relation_holds()).count();
    let memory = records.iter().filter(|r| !r.memory_bound_holds()).count();
    let max_ratio = records
        .iter()
        .map(|r| r.rank_session as f64 / r.d_m as f64)
        .fold(0.0, f64::max);
    LemmaResult {
        name: "reduced-session ranks".into(),
        passed: !records.is_empty() && relation == 0 && memory == 0,
        cases: records.len(),
        observed: max_ratio,
        bound: 1.0,
        detail: format!("constant-relation failures={relation} memory-bound failures={memory}; observed=max rank/d_M"),
    }
}

/// Rank records from exact last-tooth discovery on `combs` random combs.
pub fn collect_rank_records(combs: usize, seed: u64) -> Result<Vec<RankRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sink = AuditSink::new(false);
    for k in 0..combs {
        let n = 2 + k % 3;
        let d_m = 1 << ((k / 3) % 3);
        let spec = gen_unitary_comb(n, 2, d_m, &mut rng)?;
        let session = OracleSession::new(&spec, SessionConfig::exact(k as u64))?;
        discover_general(AuditedOracle::new(session, k, d_m, sink.clone()), 1e-6, 0.05)?;
    }
    let records = std::mem::take(&mut sink.lock().expect("audit sink poisoned").ranks);
    Ok(records)
}

/// Sampled prepare-and-measure statistics against the Born probabilities
/// of each pair marginal of the Choi state (total-variation distance).
pub fn pair_statistics(combs: usize, shots: u64, seed: u64) -> Result<LemmaResult> {
    let sic = sic_qubit();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut tables = 0usize;
    for k in 0..combs {
        let spec = gen_unitary_comb(2 + k % 2, 2, 2, &mut rng)?;
        let choi = build_choi(&spec, DEFAULT_DIM_CAP)?;
        let mut session = OracleSession::from_choi(choi.clone(), SessionConfig::sampled(rng.random()));
        let local = LocalConfig {
            shots,
            seed: rng.random(),
            povm: sic.clone(),
        };
        let sampled = pair_tables(&mut session, &local)?;
        for (i, &a) in choi.inputs().iter().enumerate() {
            for (j, &b) in choi.outputs().iter().enumerate() {
                let marginal = choi.marginal(&[a, b])?.permuted(&[a, b])?;
                let born = born_bipartite(&sic, &sic, marginal.matrix());
                let tv = 0.5 * born.iter().zip(&sampled[i][j]).map(|(p, q)| (p - q).abs()).sum::<f64>();
                worst = worst.max(tv);
                tables += 1;
            }
        }
    }
    Ok(LemmaResult {
        name: "pair statistics (TV)".into(),
        passed: worst < 0.01,
        cases: tables,
        observed: worst,
        bound: 0.01,
        detail: format!("{combs} random combs, SIC, shots={shots}"),
    })
}

/// Sizes of the default lemma run.
#[derive(Clone, Debug)]
pub struct SuiteSizes {
    pub swap_trials: usize,
    pub chi_trials: usize,
    pub chi_shots: u64,
    pub states: usize,
    pub pairs: usize,
    pub rank_combs: usize,
    pub stat_combs: usize,
    pub stat_shots: u64,
}

impl Default for SuiteSizes {
    fn default() -> Self {
        Self {
            swap_trials: 1000,
            chi_trials: 100,
            chi_shots: 100_000,
            states: 100,
            pairs: 1000,
            rank_combs: 27,
            stat_combs: 4,
            stat_shots: 1_000_000,
        }
    }
}

pub fn run_suite(sizes: &SuiteSizes, seed: u64) -> Result<Vec<LemmaResult>> {
    Ok(vec![
        swap_test_calibration(sizes.swap_trials, 2, 0.1, 0.05, seed)?,
        chi1_tail(sizes.chi_trials, sizes.chi_shots, 0.05, seed + 1)?,
        reconstruction(sizes.states, seed + 2)?,
        frame_sandwich(sizes.pairs, seed + 3)?,
        norm_chain(sizes.pairs, seed + 4)?,
        rank_bounds(&collect_rank_records(sizes.rank_combs, seed + 5)?),
        pair_statistics(sizes.stat_combs, sizes.stat_shots, seed + 6)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_interval_brackets_the_rate() {
        let (lo, hi) = wilson_interval(45, 50);
        assert!(lo < 0.9 && hi > 0.9);
        let (lo, hi) = wilson_interval(50, 50);
        assert!(lo > 0.92 && hi == 1.0);
    }

    #[test]
    fn small_suite_passes() {
        let sizes = SuiteSizes {
            swap_trials: 200,
            chi_trials: 5,
            chi_shots: 20_000,
            states: 20,
            pairs: 100,
            rank_combs: 6,
            stat_combs: 1,
            stat_shots: 200_000,
        };
        for r in run_suite(&sizes, 3).unwrap() {
            assert!(r.passed, "{}", r.line());
        }
    }
}
