//! Black-box access to a comb. Discovery code talks to a [`CombOracle`]; the
//! concrete [`OracleSession`] keeps the Choi state private and meters every
//! channel invocation on a counter shared with the sessions it reduces to.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use num_complex::Complex64;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use crate::comb::{build_choi, trace_out_tooth, ChoiState, CombSpec, DEFAULT_DIM_CAP};
use crate::error::{Error, Result};
use crate::povm::IcPovm;
use crate::tensor::{Matrix, Op, Wire, WireSpace};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OracleMode {
    /// Expectation values are returned exactly.
    Exact,
    /// Every statistic is drawn from finite samples.
    Sampled,
}

/// How exact-mode work is charged to the query counter. Sampled mode always
/// charges what a finite-sample run would consume.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum QueryPolicy {
    /// Charge the channel evaluations actually performed.
    #[default]
    Actual,
    /// Charge the nominal sample count as if the run had been sampled.
    Theoretical,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SessionConfig {
    pub mode: OracleMode,
    pub seed: u64,
    pub query_policy: QueryPolicy,
    pub dim_cap: usize,
}

impl SessionConfig {
    pub fn exact(seed: u64) -> Self {
        Self {
            mode: OracleMode::Exact,
            seed,
            query_policy: QueryPolicy::Actual,
            dim_cap: DEFAULT_DIM_CAP,
        }
    }

    pub fn sampled(seed: u64) -> Self {
        Self {
            mode: OracleMode::Sampled,
            ..Self::exact(seed)
        }
    }
}

/// Recipe for the state obtained by feeding `state` into `input`, halves of
/// maximally entangled pairs into every other input (the partner halves are
/// kept as reference systems), and discarding the `discard` outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct StatePrep {
    pub input: Wire,
    pub state: Matrix,
    pub discard: Vec<Wire>,
}

/// Product prepare-and-measure configuration: per input wire (in oracle
/// input order) a list of states with their sampling weights, and per output
/// wire (in oracle output order) a POVM.
#[derive(Clone, Debug, PartialEq)]
pub struct ProductSetup {
    pub input_states: Vec<Vec<Matrix>>,
    pub input_weights: Vec<Vec<f64>>,
    pub output_povms: Vec<IcPovm>,
}

impl ProductSetup {
    /// Inputs `P_a^T / Tr[P_a]` drawn with weight `Tr[P_a] / d` from each
    /// input POVM.
    pub fn from_povms(input_povms: &[IcPovm], output_povms: &[IcPovm]) -> Self {
        Self {
            input_states: input_povms.iter().map(IcPovm::transposed_inputs).collect(),
            input_weights: input_povms.iter().map(IcPovm::input_weights).collect(),
            output_povms: output_povms.to_vec(),
        }
    }
}

/// `dists[i][j]` is the joint distribution of `(a_i, b_j)`, row-major.
pub type PairDistributions = Vec<Vec<Vec<f64>>>;

/// Sparse joint outcome counts: `(outcome per output wire, count)`.
pub type OutcomeCounts = Vec<(Vec<usize>, u64)>;

/// The black-box interface that discovery algorithms consume.
pub trait CombOracle: Sized {
    fn mode(&self) -> OracleMode;
    fn inputs(&self) -> Vec<Wire>;
    fn outputs(&self) -> Vec<Wire>;
    fn wire_dim(&self, wire: Wire) -> Option<usize>;
    /// Cumulative query count shared with every reduced session.
    fn queries(&self) -> u64;

    /// Runs the channel once on a density operator over all inputs and any
    /// `Ancilla` wires; the result lives on the outputs and the ancillas.
    fn apply(&mut self, input: &Op) -> Result<Op>;

    /// Oracle for `rho -> Tr_out[ O(rho (x) I/d_in) ]`.
    fn reduce(&mut self, input: Wire, output: Wire) -> Result<Self>;

    /// Estimate of `Tr[rho sigma]` within `eps` with probability `1 - kappa`.
    fn swap_test(&mut self, a: &StatePrep, b: &StatePrep, eps: f64, kappa: f64) -> Result<f64>;

    /// `shots` runs on the product input selected by `choices`, each output
    /// measured with its POVM.
    fn sample_shots(&mut self, setup: &ProductSetup, choices: &[usize], shots: u64) -> Result<OutcomeCounts>;

    /// Exact pairwise statistics of the prepare-and-measure process. Exact
    /// mode only; `nominal_shots` is charged under the theoretical policy.
    fn exact_pair_distributions(&mut self, setup: &ProductSetup, nominal_shots: u64) -> Result<PairDistributions>;

    /// One prepare-and-measure shot.
    fn sample_prepare_measure(&mut self, setup: &ProductSetup, choices: &[usize]) -> Result<Vec<usize>> {
        let counts = self.sample_shots(setup, choices, 1)?;
        counts.into_iter().next().map(|(o, _)| o).ok_or(Error::NoSamples)
    }
}

/// `N = ceil(2 eps^-2 ln(2/kappa))` circuit runs for a SWAP test.
pub fn swap_test_runs(eps: f64, kappa: f64) -> Result<u64> {
    if !(eps > 0.0 && eps < 1.0) || !(kappa > 0.0 && kappa < 1.0) {
        return Err(Error::InvalidArgument(alloc::format!(
            "eps and kappa must lie in (0,1), got {eps}, {kappa}"
        )));
    }
    let n = libm::ceil(2.0 / (eps * eps) * libm::log(2.0 / kappa));
    if n >= u64::MAX as f64 {
        return Err(Error::InvalidArgument("SWAP test run count overflows".into()));
    }
    Ok(n as u64)
}

/// `2 c_+ / N - 1` with `c_+ ~ Binomial(N, (1 + overlap) / 2)`.
pub fn simulate_swap_test<R: Rng + ?Sized>(overlap: f64, runs: u64, rng: &mut R) -> Result<f64> {
    if runs == 0 {
        return Err(Error::NoSamples);
    }
    let p = ((1.0 + overlap.clamp(0.0, 1.0)) / 2.0).clamp(0.0, 1.0);
    let plus = Binomial::new(runs, p)
        .map_err(|e| Error::InvalidArgument(alloc::format!("{e}")))?
        .sample(rng);
    Ok(2.0 * plus as f64 / runs as f64 - 1.0)
}

/// Multinomial counts by sequential binomials. Tiny negative probabilities
/// from round-off are treated as zero and the rest renormalised.
pub fn multinomial<R: Rng + ?Sized>(n: u64, probs: &[f64], rng: &mut R) -> Result<Vec<u64>> {
    if probs.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite);
    }
    let clean: Vec<f64> = probs.iter().map(|&p| p.max(0.0)).collect();
    let total: f64 = clean.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument("probabilities sum to zero".into()));
    }
    let mut out = vec![0u64; clean.len()];
    let mut remaining = n;
    let mut mass = total;
    for (k, &p) in clean.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if k + 1 == clean.len() || mass <= 0.0 {
            out[k] = remaining;
            break;
        }
        let q = (p / mass).clamp(0.0, 1.0);
        let c = Binomial::new(remaining, q)
            .map_err(|e| Error::InvalidArgument(alloc::format!("{e}")))?
            .sample(rng);
        out[k] = c;
        remaining -= c;
        mass -= p;
    }
    Ok(out)
}

/// Index drawn from unnormalised weights by inverse CDF.
pub fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (k, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    weights.len() - 1
}

/// Concrete session over a hidden Choi state.
#[derive(Debug)]
pub struct OracleSession {
    choi: ChoiState,
    config: SessionConfig,
    rng: ChaCha8Rng,
    counter: Arc<AtomicU64>,
}

impl OracleSession {
    pub fn new(spec: &CombSpec, config: SessionConfig) -> Result<Self> {
        let choi = build_choi(spec, config.dim_cap)?;
        Ok(Self::from_choi(choi, config))
    }

    pub fn from_choi(choi: ChoiState, config: SessionConfig) -> Self {
        Self {
            choi,
            config,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            counter: Arc::new(AtomicU64::new(0)),
        }
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    /// Privileged view of the hidden Choi state for verification code.
    /// Deliberately absent from [`CombOracle`].
    pub fn audit_choi(&self) -> &ChoiState {
        &self.choi
    }

    fn charge(&self, n: u64) {
        self.counter.fetch_add(n, Ordering::Relaxed);
    }

    fn require_mode(&self, mode: OracleMode) -> Result<()> {
        if self.config.mode == mode {
            Ok(())
        } else {
            Err(Error::ModeMismatch {
                expected: match mode {
                    OracleMode::Exact => "exact",
                    OracleMode::Sampled => "sampled",
                },
            })
        }
    }

    fn prepare(&self, prep: &StatePrep) -> Result<Op> {
        let d = self.choi.dim_of(prep.input).filter(|_| prep.input.is_input());
        let d = d.ok_or(Error::UnknownWire(prep.input))?;
        if prep.state.nrows() != d || prep.state.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: prep.state.nrows(),
            });
        }
        for &w in &prep.discard {
            if !w.is_output() || self.choi.dim_of(w).is_none() {
                return Err(Error::UnknownWire(w));
            }
        }
        let steered = self.choi.op().contract(&[prep.input], &prep.state)?.scale(d as f64);
        steered.trace_out(&prep.discard)
    }

    fn product_input(&self, setup: &ProductSetup, states: &[&Matrix]) -> Result<Op> {
        let inputs = self.inputs();
        if states.len() != inputs.len() || setup.output_povms.len() != self.outputs().len() {
            return Err(Error::DimensionMismatch {
                expected: inputs.len(),
                found: states.len(),
            });
        }
        let mut acc = Op::scalar(Complex64::from(1.0));
        for (&w, s) in inputs.iter().zip(states) {
            acc = acc.tensor(&Op::on_wire(w, (*s).clone())?)?;
        }
        Ok(acc)
    }

    fn check_setup(&self, setup: &ProductSetup) -> Result<()> {
        let n_in = self.inputs().len();
        if setup.input_states.len() != n_in || setup.input_weights.len() != n_in {
            return Err(Error::DimensionMismatch {
                expected: n_in,
                found: setup.input_states.len(),
            });
        }
        for (states, weights) in setup.input_states.iter().zip(&setup.input_weights) {
            if states.len() != weights.len() || states.is_empty() {
                return Err(Error::InvalidArgument("input states and weights disagree".into()));
            }
        }
        let outputs = self.outputs();
        if setup.output_povms.len() != outputs.len() {
            return Err(Error::DimensionMismatch {
                expected: outputs.len(),
                found: setup.output_povms.len(),
            });
        }
        for (&w, povm) in outputs.iter().zip(&setup.output_povms) {
            if Some(povm.dim()) != self.choi.dim_of(w) {
                return Err(Error::DimensionMismatch {
                    expected: self.choi.dim_of(w).unwrap_or(0),
                    found: povm.dim(),
                });
            }
        }
        Ok(())
    }
}

impl CombOracle for OracleSession {
    fn mode(&self) -> OracleMode {
        self.config.mode
    }

    fn inputs(&self) -> Vec<Wire> {
        self.choi.inputs()
    }

    fn outputs(&self) -> Vec<Wire> {
        self.choi.outputs()
    }

    fn wire_dim(&self, wire: Wire) -> Option<usize> {
        self.choi.dim_of(wire)
    }

    fn queries(&self) -> u64 {
        self.counter.load(Ordering::Relaxed)
    }

    fn apply(&mut self, input: &Op) -> Result<Op> {
        let out = channel_apply(self.choi.op(), input)?;
        self.charge(1);
        Ok(out)
    }

    fn reduce(&mut self, input: Wire, output: Wire) -> Result<Self> {
        let choi = trace_out_tooth(&self.choi, input, output)?;
        let seed = self.rng.next_u64();
        Ok(Self {
            choi,
            config: SessionConfig { seed, ..self.config },
            rng: ChaCha8Rng::seed_from_u64(seed),
            counter: Arc::clone(&self.counter),
        })
    }

    fn swap_test(&mut self, a: &StatePrep, b: &StatePrep, eps: f64, kappa: f64) -> Result<f64> {
        let runs = swap_test_runs(eps, kappa)?;
        let rho = self.prepare(a)?;
        let sigma = self.prepare(b)?;
        let overlap = rho.overlap(&sigma)?.re;
        match (self.config.mode, self.config.query_policy) {
            (OracleMode::Exact, QueryPolicy::Actual) => {
                self.charge(2);
                Ok(overlap)
            }
            (OracleMode::Exact, QueryPolicy::Theoretical) => {
                self.charge(2 * runs);
                Ok(overlap)
            }
            (OracleMode::Sampled, _) => {
                self.charge(2 * runs);
                simulate_swap_test(overlap, runs, &mut self.rng)
            }
        }
    }

    fn sample_shots(&mut self, setup: &ProductSetup, choices: &[usize], shots: u64) -> Result<OutcomeCounts> {
        self.require_mode(OracleMode::Sampled)?;
        self.check_setup(setup)?;
        if choices.len() != setup.input_states.len() {
            return Err(Error::DimensionMismatch {
                expected: setup.input_states.len(),
                found: choices.len(),
            });
        }
        let mut states = Vec::with_capacity(choices.len());
        for (k, &c) in choices.iter().enumerate() {
            states.push(
                setup.input_states[k]
                    .get(c)
                    .ok_or(Error::InvalidArgument(alloc::format!(
                        "input choice {c} out of range on wire {k}"
                    )))?,
            );
        }
        let rho_in = self.product_input(setup, &states)?;
        let out = channel_apply(self.choi.op(), &rho_in)?;
        let joint = product_born(&out, &setup.output_povms)?;
        let counts = multinomial(shots, &joint, &mut self.rng)?;
        self.charge(shots);
        let shape: Vec<usize> = setup.output_povms.iter().map(IcPovm::len).collect();
        Ok(counts
            .into_iter()
            .enumerate()
            .filter(|&(_, c)| c > 0)
            .map(|(flat, c)| (unflatten(flat, &shape), c))
            .collect())
    }

    fn exact_pair_distributions(&mut self, setup: &ProductSetup, nominal_shots: u64) -> Result<PairDistributions> {
        self.require_mode(OracleMode::Exact)?;
        self.check_setup(setup)?;
        let inputs = self.inputs();
        let outputs = self.outputs();
        let averages: Vec<Matrix> = setup
            .input_states
            .iter()
            .zip(&setup.input_weights)
            .map(|(states, weights)| {
                let total: f64 = weights.iter().sum();
                states
                    .iter()
                    .zip(weights)
                    .fold(Matrix::zeros(states[0].nrows(), states[0].ncols()), |acc, (s, &w)| {
                        acc + s * Complex64::from(w / total)
                    })
            })
            .collect();
        let mut dists = vec![vec![Vec::new(); outputs.len()]; inputs.len()];
        let mut evaluations = 0u64;
        for i in 0..inputs.len() {
            let weights = &setup.input_weights[i];
            let total: f64 = weights.iter().sum();
            for j in 0..outputs.len() {
                dists[i][j] = vec![0.0; weights.len() * setup.output_povms[j].len()];
            }
            for (alpha, psi) in setup.input_states[i].iter().enumerate() {
                let states: Vec<&Matrix> = (0..inputs.len())
                    .map(|k| if k == i { psi } else { &averages[k] })
                    .collect();
                let out = channel_apply(self.choi.op(), &self.product_input(setup, &states)?)?;
                evaluations += 1;
                for (j, &bw) in outputs.iter().enumerate() {
                    let marginal = out.partial_trace(&[bw])?;
                    let probs = setup.output_povms[j].born(marginal.matrix());
                    let m = probs.len();
                    for (beta, p) in probs.into_iter().enumerate() {
                        dists[i][j][alpha * m + beta] = weights[alpha] / total * p;
                    }
                }
            }
        }
        self.charge(match self.config.query_policy {
            QueryPolicy::Actual => evaluations,
            QueryPolicy::Theoretical => nominal_shots,
        });
        Ok(dists)
    }
}

fn unflatten(mut flat: usize, shape: &[usize]) -> Vec<usize> {
    let mut out = vec![0; shape.len()];
    for k in (0..shape.len()).rev() {
        out[k] = flat % shape[k];
        flat /= shape[k];
    }
    out
}

/// Applies the channel with Choi state `choi` (canonical wire order: inputs,
/// then outputs) to `input`, which must cover every input wire and may carry
/// extra `Ancilla` wires. The result is ordered as outputs, then ancillas.
pub(crate) fn channel_apply(choi: &Op, input: &Op) -> Result<Op> {
    let in_wires: Vec<Wire> = choi.wires().iter().copied().filter(|w| w.is_input()).collect();
    let out_wires: Vec<Wire> = choi.wires().iter().copied().filter(|w| w.is_output()).collect();
    for &w in input.wires() {
        let ok = match w {
            Wire::Ancilla(_) => true,
            Wire::Input(_) => in_wires.contains(&w),
            Wire::Output(_) => false,
        };
        if !ok {
            return Err(Error::UnknownWire(w));
        }
    }
    for &w in &in_wires {
        let d = input.space().dim_of(w).ok_or(Error::UnknownWire(w))?;
        if Some(d) != choi.space().dim_of(w) {
            return Err(Error::DimensionMismatch {
                expected: choi.space().dim_of(w).unwrap_or(0),
                found: d,
            });
        }
    }
    let ancillas: Vec<Wire> = input.wires().iter().copied().filter(|w| !w.is_input()).collect();
    let mut order = in_wires.clone();
    order.extend_from_slice(&ancillas);
    let rho = input.permuted(&order)?;

    let d_in: usize = in_wires.iter().map(|&w| choi.space().dim_of(w).unwrap_or(1)).product();
    let d_out = choi.dim() / d_in;
    let d_x = rho.dim() / d_in;
    let c = choi.matrix();
    let r = rho.matrix();
    let mut out = Matrix::zeros(d_out * d_x, d_out * d_x);
    let scale = Complex64::from(d_in as f64);
    for a in 0..d_in {
        for a2 in 0..d_in {
            let c_block = c.view((a * d_out, a2 * d_out), (d_out, d_out));
            let r_block = r.view((a * d_x, a2 * d_x), (d_x, d_x));
            if r_block.iter().all(|z| *z == Complex64::from(0.0)) {
                continue;
            }
            for b in 0..d_out {
                for b2 in 0..d_out {
                    let cv = c_block[(b, b2)] * scale;
                    if cv == Complex64::from(0.0) {
                        continue;
                    }
                    for x in 0..d_x {
                        for x2 in 0..d_x {
                            out[(b * d_x + x, b2 * d_x + x2)] += cv * r_block[(x, x2)];
                        }
                    }
                }
            }
        }
    }
    let mut wires = out_wires.clone();
    wires.extend_from_slice(&ancillas);
    let mut dims: Vec<usize> = out_wires.iter().map(|&w| choi.space().dim_of(w).unwrap_or(1)).collect();
    dims.extend(ancillas.iter().map(|&w| rho.space().dim_of(w).unwrap_or(1)));
    Op::new(WireSpace::new(wires, dims)?, out)
}

/// Joint outcome distribution of measuring every wire of `rho` (in its wire
/// order) with the matching POVM; flat index is row-major over outcomes.
pub(crate) fn product_born(rho: &Op, povms: &[IcPovm]) -> Result<Vec<f64>> {
    let dims = rho.space().dims().to_vec();
    if dims.len() != povms.len() {
        return Err(Error::DimensionMismatch {
            expected: dims.len(),
            found: povms.len(),
        });
    }
    let n = dims.len();
    let total = rho.dim();
    // interleave row and column indices: modes (b_1 b_1') (b_2 b_2') ...
    let mut strides = vec![1usize; n];
    for k in (0..n.saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * dims[k + 1];
    }
    let mut shape: Vec<usize> = dims.iter().map(|d| d * d).collect();
    let mut t = vec![Complex64::from(0.0); total * total];
    let m = rho.matrix();
    for row in 0..total {
        for col in 0..total {
            let mut idx = 0;
            for k in 0..n {
                let b = (row / strides[k]) % dims[k];
                let b2 = (col / strides[k]) % dims[k];
                idx = idx * shape[k] + b * dims[k] + b2;
            }
            t[idx] = m[(row, col)];
        }
    }
    for (k, povm) in povms.iter().enumerate() {
        let d = dims[k];
        if povm.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: povm.dim(),
            });
        }
        // Tr[Q rho] = sum_{b b'} Q[b', b] rho[b, b']
        let mm = povm.len();
        let outer: usize = shape[..k].iter().product();
        let inner: usize = shape[k + 1..].iter().product();
        let mut next = vec![Complex64::from(0.0); outer * mm * inner];
        for o in 0..outer {
            for (alpha, q) in povm.elements().iter().enumerate() {
                for b in 0..d {
                    for b2 in 0..d {
                        let coef = q[(b2, b)];
                        if coef == Complex64::from(0.0) {
                            continue;
                        }
                        let src = (o * d * d + b * d + b2) * inner;
                        let dst = (o * mm + alpha) * inner;
                        for i in 0..inner {
                            next[dst + i] += coef * t[src + i];
                        }
                    }
                }
            }
        }
        t = next;
        shape[k] = mm;
    }
    let probs: Vec<f64> = t.iter().map(|z| z.re.max(0.0)).collect();
    let sum: f64 = probs.iter().sum();
    if !(sum > 0.0) {
        return Err(Error::InvalidArgument("outcome distribution vanishes".into()));
    }
    Ok(probs.into_iter().map(|p| p / sum).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comb::{gen_memoryless_comb, gen_unitary_comb, CombMetadata};
    use crate::povm::{born_bipartite, sic_qubit};
    use crate::tensor::{haar_state, random_density, Spectrum};

    fn identity_spec(n: usize) -> CombSpec {
        CombSpec {
            n,
            d_a: 2,
            d_m: 1,
            psi0: vec![Complex64::from(1.0)],
            unitaries: vec![Matrix::identity(2, 2); n],
            sigma_true: (1..=n).collect(),
            pi_true: (1..=n).collect(),
            metadata: CombMetadata::default(),
        }
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn swap_run_count_example() {
        assert_eq!(swap_test_runs(0.1, 0.05).unwrap(), 738);
        assert!(swap_test_runs(0.0, 0.05).is_err());
        assert!(swap_test_runs(0.1, 1.0).is_err());
    }

    #[test]
    fn identity_channel_apply_is_identity() {
        let mut s = OracleSession::new(&identity_spec(1), SessionConfig::exact(0)).unwrap();
        let rho = random_density(2, 2, Spectrum::Random, &mut rng(1)).unwrap();
        let out = s.apply(&Op::on_wire(Wire::Input(1), rho.clone()).unwrap()).unwrap();
        assert_eq!(out.wires(), &[Wire::Output(1)]);
        assert!((out.matrix() - rho).norm() < 1e-14);
        assert_eq!(s.queries(), 1);
        for _ in 0..4 {
            s.apply(&Op::on_wire(Wire::Input(1), Matrix::identity(2, 2) * Complex64::from(0.5)).unwrap())
                .unwrap();
        }
        assert_eq!(s.queries(), 5);
    }

    #[test]
    fn entangled_probe_reproduces_choi() {
        let spec = gen_unitary_comb(2, 2, 2, &mut rng(2)).unwrap();
        let mut s = OracleSession::new(&spec, SessionConfig::exact(0)).unwrap();
        let mut phi = vec![Complex64::from(0.0); 4];
        phi[0] = Complex64::from(core::f64::consts::FRAC_1_SQRT_2);
        phi[3] = phi[0];
        let mut probe = Op::scalar(Complex64::from(1.0));
        for k in 1..=2 {
            let space = WireSpace::new(vec![Wire::Input(k), Wire::Ancilla(k)], vec![2, 2]).unwrap();
            probe = probe.tensor(&Op::pure(space, &phi).unwrap()).unwrap();
        }
        let out = s.apply(&probe).unwrap();
        let relabeled = out
            .relabel(|w| match w {
                Wire::Ancilla(k) => Wire::Input(k),
                other => other,
            })
            .unwrap();
        let diff = relabeled.sub(s.audit_choi().op()).unwrap().hs_norm().unwrap();
        assert!(diff < 1e-13, "{diff}");
    }

    #[test]
    fn apply_rejects_wrong_wires() {
        let mut s = OracleSession::new(&identity_spec(2), SessionConfig::exact(0)).unwrap();
        let partial = Op::on_wire(Wire::Input(1), Matrix::identity(2, 2) * Complex64::from(0.5)).unwrap();
        assert!(matches!(s.apply(&partial), Err(Error::UnknownWire(Wire::Input(2)))));
        assert_eq!(s.queries(), 0);
    }

    #[test]
    fn reduce_shares_counter_and_leaves_other_tooth() {
        let spec = gen_memoryless_comb(2, 2, &mut rng(3)).unwrap();
        let mut s = OracleSession::new(&spec, SessionConfig::exact(0)).unwrap();
        let (a1, b1) = spec.true_order().teeth()[0];
        let (a2, b2) = spec.true_order().teeth()[1];
        let mut child = s.reduce(a2, b2).unwrap();
        assert_eq!(child.inputs(), vec![a1]);
        let expected = s.audit_choi().marginal(&[a1, b1]).unwrap();
        assert!(child.audit_choi().op().sub(&expected).unwrap().hs_norm().unwrap() < 1e-14);
        child
            .apply(&Op::on_wire(a1, Matrix::identity(2, 2) * Complex64::from(0.5)).unwrap())
            .unwrap();
        assert_eq!(s.queries(), 1);
        let mut leaf = child.reduce(a1, b1).unwrap();
        assert!(leaf.inputs().is_empty() && leaf.outputs().is_empty());
        let out = leaf.apply(&Op::scalar(Complex64::from(1.0))).unwrap();
        assert!((out.trace().re - 1.0).abs() < 1e-14);
        assert_eq!(s.queries(), 2);
    }

    #[test]
    fn swap_test_pure_equal_states_return_one() {
        let spec = identity_spec(1);
        let mut s = OracleSession::new(&spec, SessionConfig::sampled(4)).unwrap();
        let psi = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0].map(Complex64::from));
        let prep = StatePrep {
            input: Wire::Input(1),
            state: psi,
            discard: Vec::new(),
        };
        assert_eq!(s.swap_test(&prep, &prep, 0.1, 0.05).unwrap(), 1.0);
        assert_eq!(s.queries(), 2 * 738);
    }

    #[test]
    fn swap_test_orthogonal_states_calibrated() {
        let mut r = rng(5);
        let mut misses = 0;
        for _ in 0..200 {
            let est = simulate_swap_test(0.0, 738, &mut r).unwrap();
            if est.abs() > 0.1 {
                misses += 1;
            }
        }
        assert!(misses <= 10, "{misses}");
    }

    #[test]
    fn swap_test_exact_policies() {
        let spec = identity_spec(1);
        let prep = |k: usize| {
            let mut m = Matrix::zeros(2, 2);
            m[(k, k)] = Complex64::from(1.0);
            StatePrep {
                input: Wire::Input(1),
                state: m,
                discard: Vec::new(),
            }
        };
        let mut actual = OracleSession::new(&spec, SessionConfig::exact(0)).unwrap();
        assert_eq!(actual.swap_test(&prep(0), &prep(1), 0.1, 0.05).unwrap(), 0.0);
        assert_eq!(actual.queries(), 2);
        let config = SessionConfig {
            query_policy: QueryPolicy::Theoretical,
            ..SessionConfig::exact(0)
        };
        let mut theory = OracleSession::new(&spec, config).unwrap();
        theory.swap_test(&prep(0), &prep(0), 0.1, 0.05).unwrap();
        assert_eq!(theory.queries(), 1476);
    }

    #[test]
    fn mode_guards() {
        let sic = sic_qubit();
        let setup = ProductSetup::from_povms(std::slice::from_ref(&sic), std::slice::from_ref(&sic));
        let mut exact = OracleSession::new(&identity_spec(1), SessionConfig::exact(0)).unwrap();
        assert!(matches!(
            exact.sample_shots(&setup, &[0], 1),
            Err(Error::ModeMismatch { .. })
        ));
        let mut sampled = OracleSession::new(&identity_spec(1), SessionConfig::sampled(0)).unwrap();
        assert!(matches!(
            sampled.exact_pair_distributions(&setup, 10),
            Err(Error::ModeMismatch { .. })
        ));
    }

    #[test]
    fn exact_pair_distribution_matches_choi_marginal() {
        let spec = gen_unitary_comb(2, 2, 2, &mut rng(6)).unwrap();
        let mut s = OracleSession::new(&spec, SessionConfig::exact(0)).unwrap();
        let sic = sic_qubit();
        let setup = ProductSetup::from_povms(&[sic.clone(), sic.clone()], &[sic.clone(), sic.clone()]);
        let dists = s.exact_pair_distributions(&setup, 0).unwrap();
        assert_eq!(s.queries(), 8);
        for (i, a) in [Wire::Input(1), Wire::Input(2)].into_iter().enumerate() {
            for (j, b) in [Wire::Output(1), Wire::Output(2)].into_iter().enumerate() {
                let marginal = s.audit_choi().marginal(&[a, b]).unwrap();
                let born = born_bipartite(&sic, &sic, marginal.matrix());
                let tv: f64 = born.iter().zip(&dists[i][j]).map(|(x, y)| (x - y).abs()).sum();
                assert!(tv < 1e-12, "pair ({i},{j}) tv {tv}");
            }
        }
    }

    #[test]
    fn sampled_shots_follow_born_rule() {
        let mut s = OracleSession::new(&identity_spec(1), SessionConfig::sampled(7)).unwrap();
        let sic = sic_qubit();
        let setup = ProductSetup::from_povms(std::slice::from_ref(&sic), std::slice::from_ref(&sic));
        let shots = 100_000u64;
        let counts = s.sample_shots(&setup, &[0], shots).unwrap();
        assert_eq!(s.queries(), shots);
        let total: u64 = counts.iter().map(|c| c.1).sum();
        assert_eq!(total, shots);
        // identity channel on psi_0 = 2 P_0^T: outcome probabilities 2 Tr[P_b P_0^T]
        let psi = &setup.input_states[0][0];
        for (outcome, c) in counts {
            let p = crate::tensor::trace_product(&sic.elements()[outcome[0]], psi).re;
            let sigma = libm::sqrt(p * (1.0 - p) / shots as f64);
            assert!((c as f64 / shots as f64 - p).abs() < 4.0 * sigma + 1e-12);
        }
    }

    #[test]
    fn product_born_matches_direct_kron() {
        let mut r = rng(8);
        let sic = sic_qubit();
        let rho = random_density(8, 3, Spectrum::Random, &mut r).unwrap();
        let space = WireSpace::new(vec![Wire::Output(1), Wire::Output(2), Wire::Output(3)], vec![2, 2, 2]).unwrap();
        let op = Op::new(space, rho.clone()).unwrap();
        let fast = product_born(&op, &[sic.clone(), sic.clone(), sic.clone()]).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                for c in 0..4 {
                    let q = sic.elements()[a]
                        .kronecker(&sic.elements()[b])
                        .kronecker(&sic.elements()[c]);
                    let p = crate::tensor::trace_product(&q, &rho).re;
                    assert!((p - fast[a * 16 + b * 4 + c]).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn multinomial_sums_and_handles_round_off() {
        let mut r = rng(9);
        let c = multinomial(1000, &[0.5, -1e-17, 0.5], &mut r).unwrap();
        assert_eq!(c.iter().sum::<u64>(), 1000);
        assert_eq!(c[1], 0);
        assert!(multinomial(10, &[0.0, 0.0], &mut r).is_err());
    }

    #[test]
    fn prepared_states_are_normalised() {
        let spec = gen_unitary_comb(2, 2, 2, &mut rng(10)).unwrap();
        let s = OracleSession::new(&spec, SessionConfig::exact(0)).unwrap();
        let v = Matrix::from_column_slice(2, 1, &haar_state(2, &mut rng(11)));
        let prep = StatePrep {
            input: Wire::Input(1),
            state: &v * v.adjoint(),
            discard: vec![Wire::Output(2)],
        };
        let rho = s.prepare(&prep).unwrap();
        assert!(rho.check_density(1e-10).is_ok());
        assert_eq!(rho.wires(), &[Wire::Input(2), Wire::Output(1)]);
    }

    #[test]
    fn determinism_per_seed() {
        let spec = gen_unitary_comb(2, 2, 2, &mut rng(12)).unwrap();
        let sic = sic_qubit();
        let setup = ProductSetup::from_povms(&[sic.clone(), sic.clone()], &[sic.clone(), sic]);
        let run = || {
            let mut s = OracleSession::new(&spec, SessionConfig::sampled(99)).unwrap();
            s.sample_shots(&setup, &[1, 2], 500).unwrap()
        };
        assert_eq!(run(), run());
    }
}
