//! Causal-order discovery against a [`CombOracle`].
//!
//! * [`discover_general`] peels off a last tooth at a time, testing each
//!   candidate with SWAP-test estimates of Hilbert-Schmidt distances.
//! * [`discover_totalorder`] and [`discover_memoryless`] only use local
//!   prepare-and-measure statistics, summarised by an [`IndMatrix`].

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bounds;
use crate::comb::CausalOrder;
use crate::error::{Error, Result};
use crate::oracle::{
    multinomial, sample_index, swap_test_runs, CombOracle, OracleMode, PairDistributions, ProductSetup, StatePrep,
};
use crate::povm::{ic_povm_for_dim, reconstruct_bipartite, IcPovm};
pub use crate::tensor::chi1;
use crate::tensor::{Op, Wire, WireSpace};

/// Tuple spaces up to this size are sampled with one multinomial draw.
const MULTINOMIAL_TUPLE_LIMIT: usize = 1 << 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algorithm {
    General,
    TotalOrder,
    Memoryless,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::General => "general",
            Algorithm::TotalOrder => "totalorder",
            Algorithm::Memoryless => "memoryless",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Failure {
    /// No candidate passed the last-tooth test.
    NotAComb,
    /// Correlation counts were tied, so the order is not determined.
    AssumptionViolated(String),
}

/// Independence verdicts `ind[i][j]` with the underlying estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct IndMatrix {
    pub inputs: Vec<Wire>,
    pub outputs: Vec<Wire>,
    pub ind: Vec<Vec<bool>>,
    pub chi_hat: Vec<Vec<f64>>,
    pub chi_minus: f64,
    pub shots: u64,
}

impl IndMatrix {
    /// Number of outputs each input is judged correlated with.
    pub fn row_counts(&self) -> Vec<usize> {
        self.ind.iter().map(|row| row.iter().filter(|&&x| !x).count()).collect()
    }

    /// Number of inputs each output is judged correlated with.
    pub fn column_counts(&self) -> Vec<usize> {
        (0..self.outputs.len())
            .map(|j| self.ind.iter().filter(|row| !row[j]).count())
            .collect()
    }
}

/// One candidate `(input, output)` examined by [`find_last`].
#[derive(Clone, Debug, PartialEq)]
pub struct PairTest {
    pub input: Wire,
    pub output: Wire,
    /// `p_1`, then `(p_k, p_1k)` for each `k` reached.
    pub estimates: Vec<f64>,
    /// `p_1 + p_k - 2 p_1k` for each `k` reached.
    pub distances: Vec<f64>,
    pub passed: bool,
}

impl PairTest {
    pub fn swap_tests(&self) -> usize {
        self.estimates.len()
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct FindLastRound {
    pub tests: Vec<PairTest>,
    pub accepted: Option<(Wire, Wire)>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Diagnostics {
    pub rounds: Vec<FindLastRound>,
    pub swap_tests: u64,
    pub swap_runs_per_test: u64,
    pub union_bound_swap_tests: u64,
    pub worst_case_swap_tests: u64,
    pub independence: Vec<IndMatrix>,
    pub c_a: Vec<usize>,
    pub c_b: Vec<usize>,
    pub fallback_order: Option<CausalOrder>,
    pub first_pass_matches: Vec<(Wire, Wire)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscoveryReport {
    pub algorithm: Algorithm,
    pub order: Option<CausalOrder>,
    pub queries: u64,
    pub theoretical_queries: u64,
    pub diagnostics: Diagnostics,
    pub failure: Option<Failure>,
}

impl DiscoveryReport {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none() && self.order.is_some()
    }
}

fn pair_op(rho: crate::tensor::Matrix, d_a: usize, d_b: usize) -> Result<Op> {
    let space = WireSpace::new(vec![Wire::Input(1), Wire::Output(1)], vec![d_a, d_b])?;
    Op::new(space, rho)
}

/// `chi_1` of the linear-inversion estimate built from a joint distribution
/// (or frequency table) over `(a, b)`, row-major.
pub fn estimate_chi1_from_distribution(probs: &[f64], povm_a: &IcPovm, povm_b: &IcPovm) -> Result<f64> {
    let rho = reconstruct_bipartite(povm_a, povm_b, probs)?;
    chi1(&pair_op(rho, povm_a.dim(), povm_b.dim())?, &[Wire::Input(1)])
}

/// Same as [`estimate_chi1_from_distribution`] for raw counts.
pub fn estimate_chi1_from_counts(counts: &[u64], povm_a: &IcPovm, povm_b: &IcPovm) -> Result<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::NoSamples);
    }
    let freq: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
    estimate_chi1_from_distribution(&freq, povm_a, povm_b)
}

/// `chi_1` estimate from i.i.d. outcome pairs `(a, b)`.
pub fn estimate_chi1(outcomes: &[(usize, usize)], povm_a: &IcPovm, povm_b: &IcPovm) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::NoSamples);
    }
    let mb = povm_b.len();
    let mut counts = vec![0u64; povm_a.len() * mb];
    for &(a, b) in outcomes {
        if a >= povm_a.len() || b >= mb {
            return Err(Error::InvalidArgument(alloc::format!("outcome ({a},{b}) out of range")));
        }
        counts[a * mb + b] += 1;
    }
    estimate_chi1_from_counts(&counts, povm_a, povm_b)
}

/// Settings shared by the local-observation algorithms.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalConfig {
    /// Shots `N` (nominal only in exact mode).
    pub shots: u64,
    /// Seed for the input-tuple sampler.
    pub seed: u64,
    /// POVM used on every wire; must match the wire dimensions.
    pub povm: IcPovm,
}

fn check_uniform_dims<O: CombOracle>(oracle: &O, d: usize) -> Result<()> {
    for w in oracle.inputs().into_iter().chain(oracle.outputs()) {
        let dw = oracle.wire_dim(w).unwrap_or(0);
        if dw != d {
            return Err(Error::DimensionMismatch { expected: d, found: dw });
        }
    }
    Ok(())
}

/// Joint `(input state, output outcome)` frequencies for every
/// `(input, output)` pair, row-major in `(alpha, beta)`. Exact mode returns
/// the Born probabilities; sampled mode draws `config.shots` input tuples and
/// lets every shot feed all pair tables.
pub fn pair_tables<O: CombOracle>(oracle: &mut O, config: &LocalConfig) -> Result<PairDistributions> {
    let inputs = oracle.inputs();
    let outputs = oracle.outputs();
    let povm = &config.povm;
    check_uniform_dims(oracle, povm.dim())?;
    let setup = ProductSetup::from_povms(&vec![povm.clone(); inputs.len()], &vec![povm.clone(); outputs.len()]);
    let m = povm.len();

    Ok(match oracle.mode() {
        OracleMode::Exact => oracle.exact_pair_distributions(&setup, config.shots)?,
        OracleMode::Sampled => {
            if config.shots == 0 {
                return Err(Error::NoSamples);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let tuples = sample_input_tuples(&setup.input_weights, config.shots, &mut rng)?;
            let mut counts = vec![vec![vec![0u64; m * m]; outputs.len()]; inputs.len()];
            for (choices, c) in tuples {
                for (outcome, k) in oracle.sample_shots(&setup, &choices, c)? {
                    for (i, &a) in choices.iter().enumerate() {
                        for (j, &b) in outcome.iter().enumerate() {
                            counts[i][j][a * m + b] += k;
                        }
                    }
                }
            }
            let total = config.shots as f64;
            counts
                .into_iter()
                .map(|row| {
                    row.into_iter()
                        .map(|cell| cell.into_iter().map(|c| c as f64 / total).collect())
                        .collect()
                })
                .collect()
        }
    })
}

/// Pairwise independence verdicts from one shared table of
/// prepare-and-measure shots.
pub fn independence_matrix<O: CombOracle>(oracle: &mut O, config: &LocalConfig, chi_minus: f64) -> Result<IndMatrix> {
    let inputs = oracle.inputs();
    let outputs = oracle.outputs();
    let povm = &config.povm;
    let tables = pair_tables(oracle, config)?;

    let mut chi_hat = vec![vec![0.0; outputs.len()]; inputs.len()];
    let mut ind = vec![vec![true; outputs.len()]; inputs.len()];
    for i in 0..inputs.len() {
        for j in 0..outputs.len() {
            let c = estimate_chi1_from_distribution(&tables[i][j], povm, povm)?;
            chi_hat[i][j] = c;
            ind[i][j] = c <= chi_minus;
        }
    }
    Ok(IndMatrix {
        inputs,
        outputs,
        ind,
        chi_hat,
        chi_minus,
        shots: config.shots,
    })
}

/// Groups `shots` i.i.d. input tuples drawn from the product of per-wire
/// weights.
fn sample_input_tuples(weights: &[Vec<f64>], shots: u64, rng: &mut ChaCha8Rng) -> Result<Vec<(Vec<usize>, u64)>> {
    let shape: Vec<usize> = weights.iter().map(Vec::len).collect();
    let space = shape.iter().try_fold(1usize, |acc, &m| acc.checked_mul(m));
    match space {
        Some(total) if total <= MULTINOMIAL_TUPLE_LIMIT => {
            let mut probs = vec![1.0; total];
            for (flat, p) in probs.iter_mut().enumerate() {
                let mut rest = flat;
                for k in (0..shape.len()).rev() {
                    *p *= weights[k][rest % shape[k]];
                    rest /= shape[k];
                }
            }
            let counts = multinomial(shots, &probs, rng)?;
            Ok(counts
                .into_iter()
                .enumerate()
                .filter(|&(_, c)| c > 0)
                .map(|(flat, c)| {
                    let mut rest = flat;
                    let mut tuple = vec![0; shape.len()];
                    for k in (0..shape.len()).rev() {
                        tuple[k] = rest % shape[k];
                        rest /= shape[k];
                    }
                    (tuple, c)
                })
                .collect())
        }
        _ => {
            let mut grouped: BTreeMap<Vec<usize>, u64> = BTreeMap::new();
            for _ in 0..shots {
                let tuple: Vec<usize> = weights.iter().map(|w| sample_index(w, rng)).collect();
                *grouped.entry(tuple).or_insert(0) += 1;
            }
            Ok(grouped.into_iter().collect())
        }
    }
}

struct StateSets {
    by_dim: Vec<(usize, IcPovm)>,
}

impl StateSets {
    fn new() -> Self {
        Self { by_dim: Vec::new() }
    }

    fn get(&mut self, d: usize) -> Result<&IcPovm> {
        if let Some(pos) = self.by_dim.iter().position(|(k, _)| *k == d) {
            return Ok(&self.by_dim[pos].1);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(d as u64);
        let set = ic_povm_for_dim(d, &mut rng)?.state_set()?;
        self.by_dim.push((d, set));
        Ok(&self.by_dim.last().expect("just pushed").1)
    }
}

/// Searches candidate last teeth `(A_i, B_j)` in row-major order and returns
/// the first whose input is judged independent of every other wire once
/// `B_j` is discarded. `Ok(None)` means no candidate passed.
pub fn find_last<O: CombOracle>(
    oracle: &mut O,
    delta: f64,
    kappa: f64,
    round: &mut FindLastRound,
) -> Result<Option<(Wire, Wire)>> {
    let mut sets = StateSets::new();
    find_last_with(oracle, delta, kappa, round, &mut sets)
}

fn find_last_with<O: CombOracle>(
    oracle: &mut O,
    delta: f64,
    kappa: f64,
    round: &mut FindLastRound,
    sets: &mut StateSets,
) -> Result<Option<(Wire, Wire)>> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(alloc::format!(
            "delta must lie in (0,1), got {delta}"
        )));
    }
    let eps = delta / 4.0;
    for a in oracle.inputs() {
        let d = oracle.wire_dim(a).ok_or(Error::UnknownWire(a))?;
        let states: Vec<_> = sets.get(d)?.elements().to_vec();
        for b in oracle.outputs() {
            let prep = |k: usize| StatePrep {
                input: a,
                state: states[k].clone(),
                discard: vec![b],
            };
            let first = prep(0);
            let mut test = PairTest {
                input: a,
                output: b,
                estimates: Vec::new(),
                distances: Vec::new(),
                passed: true,
            };
            let p1 = oracle.swap_test(&first, &first, eps, kappa)?;
            test.estimates.push(p1);
            for k in 1..states.len() {
                let other = prep(k);
                let pk = oracle.swap_test(&other, &other, eps, kappa)?;
                let p1k = oracle.swap_test(&first, &other, eps, kappa)?;
                test.estimates.push(pk);
                test.estimates.push(p1k);
                let dist = p1 + pk - 2.0 * p1k;
                test.distances.push(dist);
                if dist > delta {
                    test.passed = false;
                    break;
                }
            }
            let passed = test.passed;
            round.tests.push(test);
            if passed {
                round.accepted = Some((a, b));
                return Ok(Some((a, b)));
            }
        }
    }
    Ok(None)
}

/// Last-tooth recursion: repeatedly find a last tooth, prepend it to the
/// order and trace it out of the oracle.
pub fn discover_general<O: CombOracle>(mut oracle: O, delta: f64, kappa: f64) -> Result<DiscoveryReport> {
    let n = oracle.inputs().len();
    if oracle.outputs().len() != n {
        return Err(Error::InvalidArgument("inputs and outputs differ in number".into()));
    }
    let d = oracle
        .inputs()
        .iter()
        .filter_map(|&w| oracle.wire_dim(w))
        .max()
        .unwrap_or(1);
    let runs = swap_test_runs(delta / 4.0, kappa)?;
    let mut diagnostics = Diagnostics {
        swap_runs_per_test: runs,
        union_bound_swap_tests: bounds::general_union_bound_swap_tests(n, d),
        worst_case_swap_tests: bounds::general_worst_case_swap_tests(n, d),
        ..Default::default()
    };
    let theoretical_queries = diagnostics.worst_case_swap_tests.saturating_mul(2 * runs);
    let mut sets = StateSets::new();
    let mut teeth: Vec<(Wire, Wire)> = Vec::with_capacity(n);
    let mut failure = None;
    for _ in 0..n {
        let mut round = FindLastRound::default();
        let found = find_last_with(&mut oracle, delta, kappa, &mut round, &mut sets)?;
        diagnostics.swap_tests += round.tests.iter().map(|t| t.swap_tests() as u64).sum::<u64>();
        diagnostics.rounds.push(round);
        match found {
            Some((a, b)) => {
                teeth.insert(0, (a, b));
                oracle = oracle.reduce(a, b)?;
            }
            None => {
                failure = Some(Failure::NotAComb);
                break;
            }
        }
    }
    let order = match failure {
        None => Some(CausalOrder::new(teeth)?),
        Some(_) => None,
    };
    Ok(DiscoveryReport {
        algorithm: Algorithm::General,
        order,
        queries: oracle.queries(),
        theoretical_queries,
        diagnostics,
        failure,
    })
}

fn distinct(values: &[usize]) -> bool {
    let mut v = values.to_vec();
    v.sort_unstable();
    v.windows(2).all(|w| w[0] != w[1])
}

fn order_from_counts(ind: &IndMatrix) -> (Vec<usize>, Vec<usize>, CausalOrder) {
    let c_a = ind.row_counts();
    let c_b = ind.column_counts();
    let mut ins: Vec<usize> = (0..ind.inputs.len()).collect();
    let mut outs: Vec<usize> = (0..ind.outputs.len()).collect();
    ins.sort_by(|&x, &y| c_a[y].cmp(&c_a[x]));
    outs.sort_by(|&x, &y| c_b[x].cmp(&c_b[y]));
    let teeth = ins
        .iter()
        .zip(&outs)
        .map(|(&i, &j)| (ind.inputs[i], ind.outputs[j]))
        .collect();
    (c_a, c_b, CausalOrder::new(teeth).expect("distinct wires"))
}

/// Orders inputs by how many outputs they are correlated with (descending)
/// and outputs by how many inputs they are correlated with (ascending), using
/// the threshold `chi_min / 2`. Tied counts trigger one re-run at twice the
/// shots in sampled mode; persisting ties are reported as a failure.
pub fn discover_totalorder<O: CombOracle>(
    oracle: &mut O,
    config: &LocalConfig,
    chi_min: f64,
) -> Result<DiscoveryReport> {
    if !(chi_min > 0.0) {
        return Err(Error::InvalidArgument("chi_min must be positive".into()));
    }
    let chi_minus = chi_min / 2.0;
    let mut diagnostics = Diagnostics::default();
    let mut ind = independence_matrix(oracle, config, chi_minus)?;
    let mut theoretical = config.shots;
    let (mut c_a, mut c_b, mut order) = order_from_counts(&ind);
    if (!distinct(&c_a) || !distinct(&c_b)) && oracle.mode() == OracleMode::Sampled {
        diagnostics.independence.push(ind);
        let retry = LocalConfig {
            shots: config.shots.saturating_mul(2),
            seed: config.seed.wrapping_add(0x9e37_79b9_7f4a_7c15),
            povm: config.povm.clone(),
        };
        theoretical = theoretical.saturating_add(retry.shots);
        ind = independence_matrix(oracle, &retry, chi_minus)?;
        (c_a, c_b, order) = order_from_counts(&ind);
    }
    let tied = !distinct(&c_a) || !distinct(&c_b);
    diagnostics.independence.push(ind);
    diagnostics.c_a = c_a.clone();
    diagnostics.c_b = c_b.clone();
    let (order, failure) = if tied {
        diagnostics.fallback_order = Some(order);
        (
            None,
            Some(Failure::AssumptionViolated(alloc::format!(
                "tied correlation counts c_A={c_a:?} c_B={c_b:?}"
            ))),
        )
    } else {
        (Some(order), None)
    };
    Ok(DiscoveryReport {
        algorithm: Algorithm::TotalOrder,
        order,
        queries: oracle.queries(),
        theoretical_queries: theoretical,
        diagnostics,
        failure,
    })
}

/// Pairs each input with its first correlated, still unmatched output; the
/// leftovers are paired in index order. Always yields a full matching.
pub fn discover_memoryless<O: CombOracle>(
    oracle: &mut O,
    config: &LocalConfig,
    chi_minus: f64,
) -> Result<DiscoveryReport> {
    let ind = independence_matrix(oracle, config, chi_minus)?;
    let n = ind.inputs.len();
    let mut pi: Vec<Option<usize>> = vec![None; n];
    let mut taken = vec![false; ind.outputs.len()];
    let mut diagnostics = Diagnostics::default();
    for i in 0..n {
        if let Some(j) = (0..ind.outputs.len()).find(|&j| !ind.ind[i][j] && !taken[j]) {
            pi[i] = Some(j);
            taken[j] = true;
            diagnostics.first_pass_matches.push((ind.inputs[i], ind.outputs[j]));
        }
    }
    for slot in pi.iter_mut().filter(|p| p.is_none()) {
        let j = taken
            .iter()
            .position(|&t| !t)
            .ok_or(Error::InvalidArgument("more inputs than outputs".into()))?;
        *slot = Some(j);
        taken[j] = true;
    }
    let teeth = pi
        .iter()
        .enumerate()
        .map(|(i, j)| (ind.inputs[i], ind.outputs[j.expect("matched")]))
        .collect();
    diagnostics.c_a = ind.row_counts();
    diagnostics.c_b = ind.column_counts();
    diagnostics.independence.push(ind);
    Ok(DiscoveryReport {
        algorithm: Algorithm::Memoryless,
        order: Some(CausalOrder::new(teeth)?),
        queries: oracle.queries(),
        theoretical_queries: config.shots,
        diagnostics,
        failure: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comb::{
        check_comb_condition, gen_cnot_memory_comb, gen_memoryless_comb, gen_pairwise_blind_comb, gen_totalorder_comb,
        gen_unitary_comb, CombMetadata, CombSpec,
    };
    use crate::oracle::{OracleSession, SessionConfig};
    use crate::povm::{born_bipartite, sic_qubit};
    use crate::tensor::{Matrix, Op};
    use num_complex::Complex64;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn identity_spec(n: usize, pi: Vec<usize>) -> CombSpec {
        CombSpec {
            n,
            d_a: 2,
            d_m: 1,
            psi0: vec![Complex64::from(1.0)],
            unitaries: vec![Matrix::identity(2, 2); n],
            sigma_true: (1..=n).collect(),
            pi_true: pi,
            metadata: CombMetadata::default(),
        }
    }

    fn local(shots: u64, seed: u64) -> LocalConfig {
        LocalConfig {
            shots,
            seed,
            povm: sic_qubit(),
        }
    }

    #[test]
    fn chi1_examples() {
        let mut phi = Matrix::zeros(4, 4);
        for &i in &[0usize, 3] {
            for &j in &[0usize, 3] {
                phi[(i, j)] = Complex64::from(0.5);
            }
        }
        let op = pair_op(phi.clone(), 2, 2).unwrap();
        assert!((chi1(&op, &[Wire::Input(1)]).unwrap() - 1.5).abs() < 1e-12);
        let sic = sic_qubit();
        let p = born_bipartite(&sic, &sic, &phi);
        assert!((estimate_chi1_from_distribution(&p, &sic, &sic).unwrap() - 1.5).abs() < 1e-9);
        let product = Matrix::identity(4, 4) * Complex64::from(0.25);
        let q = born_bipartite(&sic, &sic, &product);
        assert!(estimate_chi1_from_distribution(&q, &sic, &sic).unwrap() < 1e-9);
    }

    #[test]
    fn estimate_chi1_needs_samples() {
        let sic = sic_qubit();
        assert_eq!(estimate_chi1(&[], &sic, &sic), Err(Error::NoSamples));
        assert!(estimate_chi1(&[(0, 0), (1, 1), (2, 3)], &sic, &sic)
            .unwrap()
            .is_finite());
    }

    #[test]
    fn find_last_single_tooth() {
        let mut s = OracleSession::new(&identity_spec(1, vec![1]), SessionConfig::exact(0)).unwrap();
        let mut round = FindLastRound::default();
        let got = find_last(&mut s, 1e-6, 0.05, &mut round).unwrap();
        assert_eq!(got, Some((Wire::Input(1), Wire::Output(1))));
        assert_eq!(round.tests[0].swap_tests(), 7);
    }

    #[test]
    fn find_last_row_major_tie_break() {
        let mut s = OracleSession::new(&identity_spec(2, vec![1, 2]), SessionConfig::exact(0)).unwrap();
        let mut round = FindLastRound::default();
        let got = find_last(&mut s, 1e-6, 0.05, &mut round).unwrap();
        assert_eq!(got, Some((Wire::Input(1), Wire::Output(1))));
    }

    #[test]
    fn find_last_on_signalling_comb() {
        for seed in 0..5 {
            let spec = gen_cnot_memory_comb(2, &mut rng(seed)).unwrap();
            let mut s = OracleSession::new(&spec, SessionConfig::exact(0)).unwrap();
            let mut round = FindLastRound::default();
            let (a, b) = find_last(&mut s, 1e-6, 0.05, &mut round).unwrap().unwrap();
            let first = spec.true_order().teeth()[0];
            assert_ne!(a, first.0, "the first input signals forward");
            let other = s
                .inputs()
                .into_iter()
                .find(|&w| w != a)
                .zip(s.outputs().into_iter().find(|&w| w != b))
                .unwrap();
            let order = CausalOrder::new(vec![other, (a, b)]).unwrap();
            assert!(check_comb_condition(s.audit_choi(), &order, 1e-9).unwrap().ok);
        }
    }

    #[test]
    fn general_discovery_recovers_valid_orders() {
        let mut r = rng(20);
        for n in 1..=3 {
            for d_m in [1usize, 2, 4] {
                let spec = gen_unitary_comb(n, 2, d_m, &mut r).unwrap();
                let s = OracleSession::new(&spec, SessionConfig::exact(1)).unwrap();
                let choi = s.audit_choi().clone();
                let report = discover_general(s, 1e-6, 0.05).unwrap();
                let order = report.order.expect("order");
                let check = check_comb_condition(&choi, &order, 1e-8).unwrap();
                assert!(check.ok, "n={n} d_m={d_m} {:?}", check.deviations);
                assert_eq!(report.queries, 2 * report.diagnostics.swap_tests);
                assert!(report.theoretical_queries > report.queries);
            }
        }
    }

    #[test]
    fn general_discovery_on_pairwise_blind_comb() {
        let spec = gen_pairwise_blind_comb();
        let s = OracleSession::new(&spec, SessionConfig::exact(0)).unwrap();
        let choi = s.audit_choi().clone();
        let report = discover_general(s, 1e-6, 0.05).unwrap();
        let order = report.order.unwrap();
        assert!(check_comb_condition(&choi, &order, 1e-8).unwrap().ok);
    }

    #[test]
    fn independence_on_memoryless_identity() {
        let spec = identity_spec(2, vec![2, 1]);
        let mut s = OracleSession::new(&spec, SessionConfig::sampled(3)).unwrap();
        let ind = independence_matrix(&mut s, &local(100_000, 4), 0.5).unwrap();
        assert_eq!(s.queries(), 100_000);
        assert_eq!(ind.ind, vec![vec![true, false], vec![false, true]]);
    }

    #[test]
    fn independence_on_pairwise_blind_comb_is_all_true() {
        let spec = gen_pairwise_blind_comb();
        let mut s = OracleSession::new(&spec, SessionConfig::sampled(5)).unwrap();
        let ind = independence_matrix(&mut s, &local(100_000, 6), 0.05).unwrap();
        assert!(ind.ind.iter().flatten().all(|&x| x), "{:?}", ind.chi_hat);
    }

    #[test]
    fn totalorder_exact_recovers_truth() {
        let mut r = rng(21);
        for n in 2..=3 {
            let spec = gen_totalorder_comb(n, 2, 2, 0.05, 10_000, &mut r).unwrap();
            let chi_min = spec.metadata.achieved_chi_min.unwrap();
            let mut s = OracleSession::new(&spec, SessionConfig::exact(0)).unwrap();
            let report = discover_totalorder(&mut s, &local(0, 0), chi_min).unwrap();
            assert_eq!(report.order.unwrap(), spec.true_order());
            let expected: Vec<usize> = (1..=n).rev().collect();
            let mut c_a = report.diagnostics.c_a.clone();
            c_a.sort_unstable_by(|a, b| b.cmp(a));
            assert_eq!(c_a, expected);
        }
    }

    #[test]
    fn totalorder_on_pairwise_blind_comb_reports_violation() {
        let spec = gen_pairwise_blind_comb();
        let mut s = OracleSession::new(&spec, SessionConfig::sampled(7)).unwrap();
        let report = discover_totalorder(&mut s, &local(100_000, 8), 0.1).unwrap();
        assert!(matches!(report.failure, Some(Failure::AssumptionViolated(_))));
        assert!(report.order.is_none());
        assert_eq!(report.diagnostics.independence.len(), 2);
        assert_eq!(report.queries, 300_000);
    }

    #[test]
    fn memoryless_exact_recovers_pairing() {
        let spec = {
            let mut s = gen_memoryless_comb(3, 2, &mut rng(22)).unwrap();
            s.sigma_true = vec![1, 2, 3];
            s.pi_true = vec![2, 3, 1];
            s
        };
        let mut s = OracleSession::new(&spec, SessionConfig::exact(0)).unwrap();
        let report = discover_memoryless(&mut s, &local(0, 0), 1e-6).unwrap();
        assert_eq!(
            report.order.unwrap(),
            CausalOrder::from_indices(&[(1, 2), (2, 3), (3, 1)]).unwrap()
        );
    }

    #[test]
    fn memoryless_single_tooth() {
        let mut s = OracleSession::new(&identity_spec(1, vec![1]), SessionConfig::exact(0)).unwrap();
        let report = discover_memoryless(&mut s, &local(0, 0), 1e-6).unwrap();
        assert_eq!(report.order.unwrap(), CausalOrder::from_indices(&[(1, 1)]).unwrap());
    }

    #[test]
    fn apply_through_trait_object_free_generic() {
        // discovery only needs the trait: a thin wrapper drives it unchanged
        struct Wrapped(OracleSession, u32);
        impl CombOracle for Wrapped {
            fn mode(&self) -> OracleMode {
                self.0.mode()
            }
            fn inputs(&self) -> Vec<Wire> {
                self.0.inputs()
            }
            fn outputs(&self) -> Vec<Wire> {
                self.0.outputs()
            }
            fn wire_dim(&self, w: Wire) -> Option<usize> {
                self.0.wire_dim(w)
            }
            fn queries(&self) -> u64 {
                self.0.queries()
            }
            fn apply(&mut self, input: &Op) -> Result<Op> {
                self.0.apply(input)
            }
            fn reduce(&mut self, a: Wire, b: Wire) -> Result<Self> {
                Ok(Wrapped(self.0.reduce(a, b)?, self.1 + 1))
            }
            fn swap_test(&mut self, a: &StatePrep, b: &StatePrep, e: f64, k: f64) -> Result<f64> {
                self.0.swap_test(a, b, e, k)
            }
            fn sample_shots(&mut self, s: &ProductSetup, c: &[usize], n: u64) -> Result<crate::oracle::OutcomeCounts> {
                self.0.sample_shots(s, c, n)
            }
            fn exact_pair_distributions(
                &mut self,
                s: &ProductSetup,
                n: u64,
            ) -> Result<crate::oracle::PairDistributions> {
                self.0.exact_pair_distributions(s, n)
            }
        }
        let spec = identity_spec(2, vec![2, 1]);
        let s = OracleSession::new(&spec, SessionConfig::exact(0)).unwrap();
        let report = discover_general(Wrapped(s, 0), 1e-6, 0.05).unwrap();
        assert_eq!(
            report.order.unwrap(),
            CausalOrder::from_indices(&[(2, 1), (1, 2)]).unwrap()
        );
    }
}
