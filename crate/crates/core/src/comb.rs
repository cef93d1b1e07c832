//! Ground-truth combs: specifications, Choi states, the comb-compatibility
//! checker, and generators for the instance families used by the discovery
//! algorithms.
//!
//! A [`CombSpec`] describes a comb in the memory-unitary form: a pure memory
//! state threaded through one unitary per tooth, each acting on
//! `(input wire) (x) (memory)` and emitting `(output wire) (x) (memory)`. The
//! final memory is discarded. Unitary indices put the wire first:
//! `index = wire * d_m + memory`.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{self, chi1, haar_state, haar_unitary, Matrix, Op, StateVector, Wire};

/// Default cap on the total Choi dimension.
pub const DEFAULT_DIM_CAP: usize = 1 << 10;

/// Tolerance on the unitarity / normalisation of spec entries.
pub const SPEC_TOL: f64 = 1e-12;

/// Rejection budget for [`gen_totalorder_comb`].
pub const TOTALORDER_BUDGET: usize = 10_000;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

#[derive(Clone, Debug, PartialEq, Default)]
pub struct CombMetadata {
    pub generator: String,
    pub seed: Option<u64>,
    pub achieved_chi_min: Option<f64>,
}

/// A comb in memory-unitary form with its hidden true ordering.
///
/// `sigma_true[t]` and `pi_true[t]` are the (1-based) input and output wire
/// numbers of the tooth at position `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct CombSpec {
    pub n: usize,
    pub d_a: usize,
    pub d_m: usize,
    pub psi0: Vec<Complex64>,
    pub unitaries: Vec<Matrix>,
    pub sigma_true: Vec<usize>,
    pub pi_true: Vec<usize>,
    pub metadata: CombMetadata,
}

fn check_permutation(p: &[usize], n: usize, name: &str) -> Result<()> {
    let mut seen = vec![false; n];
    if p.len() != n {
        return Err(Error::InvalidArgument(alloc::format!(
            "{name} has length {} != {n}",
            p.len()
        )));
    }
    for &v in p {
        if v == 0 || v > n || seen[v - 1] {
            return Err(Error::InvalidArgument(alloc::format!(
                "{name} is not a permutation of 1..={n}"
            )));
        }
        seen[v - 1] = true;
    }
    Ok(())
}

impl CombSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d_a == 0 || self.d_m == 0 {
            return Err(Error::InvalidArgument("n, d_a and d_m must be positive".into()));
        }
        if self.psi0.len() != self.d_m {
            return Err(Error::DimensionMismatch {
                expected: self.d_m,
                found: self.psi0.len(),
            });
        }
        let norm = libm::sqrt(self.psi0.iter().map(|z| z.norm_sqr()).sum());
        if (norm - 1.0).abs() > SPEC_TOL {
            return Err(Error::InvalidArgument(alloc::format!("psi0 has norm {norm}")));
        }
        if self.unitaries.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: self.unitaries.len(),
            });
        }
        let du = self.d_a * self.d_m;
        for u in &self.unitaries {
            if u.nrows() != du || u.ncols() != du {
                return Err(Error::DimensionMismatch {
                    expected: du,
                    found: u.nrows(),
                });
            }
            let dev = tensor::unitary_deviation(u);
            if dev > SPEC_TOL {
                return Err(Error::NotUnitary { deviation: dev });
            }
        }
        check_permutation(&self.sigma_true, self.n, "sigma_true")?;
        check_permutation(&self.pi_true, self.n, "pi_true")?;
        Ok(())
    }

    pub fn true_order(&self) -> CausalOrder {
        CausalOrder {
            teeth: self
                .sigma_true
                .iter()
                .zip(&self.pi_true)
                .map(|(&a, &b)| (Wire::Input(a), Wire::Output(b)))
                .collect(),
        }
    }

    pub fn choi_dim(&self) -> Option<usize> {
        self.d_a.checked_pow(2 * self.n as u32)
    }
}

/// Ordered list of teeth `(input, output)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CausalOrder {
    teeth: Vec<(Wire, Wire)>,
}

impl CausalOrder {
    pub fn new(teeth: Vec<(Wire, Wire)>) -> Result<Self> {
        for (k, &(a, b)) in teeth.iter().enumerate() {
            if !a.is_input() || !b.is_output() {
                return Err(Error::InvalidOrder(alloc::format!(
                    "tooth ({a},{b}) is not (input, output)"
                )));
            }
            if teeth[..k].iter().any(|&(x, y)| x == a || y == b) {
                return Err(Error::InvalidOrder(alloc::format!("wire repeated at tooth ({a},{b})")));
            }
        }
        Ok(Self { teeth })
    }

    /// Builds an order from 1-based `(input, output)` wire numbers.
    pub fn from_indices(pairs: &[(usize, usize)]) -> Result<Self> {
        Self::new(pairs.iter().map(|&(a, b)| (Wire::Input(a), Wire::Output(b))).collect())
    }

    pub fn teeth(&self) -> &[(Wire, Wire)] {
        &self.teeth
    }

    pub fn len(&self) -> usize {
        self.teeth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.teeth.is_empty()
    }

    pub fn inputs(&self) -> Vec<Wire> {
        self.teeth.iter().map(|t| t.0).collect()
    }

    pub fn outputs(&self) -> Vec<Wire> {
        self.teeth.iter().map(|t| t.1).collect()
    }

    pub fn reversed(&self) -> CausalOrder {
        let mut teeth = self.teeth.clone();
        teeth.reverse();
        CausalOrder { teeth }
    }

    /// Order with one tooth removed; other teeth keep their positions.
    pub fn without(&self, input: Wire, output: Wire) -> Result<CausalOrder> {
        let pos = self
            .teeth
            .iter()
            .position(|&t| t == (input, output))
            .ok_or(Error::UnknownWire(input))?;
        let mut teeth = self.teeth.clone();
        teeth.remove(pos);
        Ok(CausalOrder { teeth })
    }

    pub fn push_front(&mut self, input: Wire, output: Wire) -> Result<()> {
        let mut teeth = vec![(input, output)];
        teeth.extend_from_slice(&self.teeth);
        *self = CausalOrder::new(teeth)?;
        Ok(())
    }
}

impl core::fmt::Display for CausalOrder {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        for (k, (a, b)) in self.teeth.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "({a},{b})")?;
        }
        Ok(())
    }
}

/// Choi state of a multi-wire channel, normalised to unit trace. Input wires
/// carry the reference halves of the maximally entangled probes.
#[derive(Clone, Debug, PartialEq)]
pub struct ChoiState {
    op: Op,
}

impl ChoiState {
    /// Wraps a density operator after checking the Choi invariants: unit
    /// trace, Hermitian, PSD and maximally mixed marginal on the inputs.
    pub fn new(op: Op, tol: f64) -> Result<Self> {
        op.check_density(tol)?;
        let state = Self { op: op.canonical() };
        let inputs = state.inputs();
        let marginal = state.op.partial_trace(&inputs)?;
        let mixed = Op::maximally_mixed(marginal.space().clone());
        let dev = marginal.sub(&mixed)?.trace_norm()?;
        if dev > tol {
            return Err(Error::InvalidArgument(alloc::format!(
                "input marginal deviates from maximally mixed by {dev:e}"
            )));
        }
        Ok(state)
    }

    pub(crate) fn from_op_unchecked(op: Op) -> Self {
        Self { op: op.canonical() }
    }

    pub fn op(&self) -> &Op {
        &self.op
    }

    pub fn inputs(&self) -> Vec<Wire> {
        self.op.wires().iter().copied().filter(|w| w.is_input()).collect()
    }

    pub fn outputs(&self) -> Vec<Wire> {
        self.op.wires().iter().copied().filter(|w| w.is_output()).collect()
    }

    pub fn dim_of(&self, wire: Wire) -> Option<usize> {
        self.op.space().dim_of(wire)
    }

    pub fn marginal(&self, wires: &[Wire]) -> Result<Op> {
        self.op.partial_trace(wires)
    }

    /// `chi_1(C_{A_i B_j})`.
    pub fn pair_chi1(&self, input: Wire, output: Wire) -> Result<f64> {
        let m = self.marginal(&[input, output])?;
        chi1(&m, &[input])
    }
}

/// Builds the Choi state of a comb spec by feeding halves of maximally
/// entangled pairs into every input and threading the memory through the
/// teeth in their true order.
pub fn build_choi(spec: &CombSpec, dim_cap: usize) -> Result<ChoiState> {
    spec.validate()?;
    let n = spec.n;
    let d = spec.d_a;
    let big = spec.d_a.checked_pow(n as u32).ok_or(Error::DimensionCap {
        dim: usize::MAX,
        cap: dim_cap,
    })?;
    let choi_dim = big.checked_mul(big).ok_or(Error::DimensionCap {
        dim: usize::MAX,
        cap: dim_cap,
    })?;
    if choi_dim > dim_cap {
        return Err(Error::DimensionCap {
            dim: choi_dim,
            cap: dim_cap,
        });
    }

    // slots: references R_1..R_n, channel wires W_1..W_n, memory
    let mut dims = vec![d; 2 * n];
    dims.push(spec.d_m);
    let mut amps = vec![ZERO; choi_dim * spec.d_m];
    let scale = 1.0 / libm::sqrt(big as f64);
    for r in 0..big {
        for (m, &c) in spec.psi0.iter().enumerate() {
            amps[(r * big + r) * spec.d_m + m] = c * scale;
        }
    }
    let mut state = StateVector::new(dims, amps)?;
    for (t, u) in spec.unitaries.iter().enumerate() {
        let wire_slot = n + spec.sigma_true[t] - 1;
        state.apply(&[wire_slot, 2 * n], u)?;
    }

    let g = Matrix::from_row_slice(choi_dim, spec.d_m, state.amplitudes());
    let rho = &g * g.adjoint();

    let mut wires: Vec<Wire> = (1..=n).map(Wire::Input).collect();
    let mut slot_out = vec![0usize; n];
    for t in 0..n {
        slot_out[spec.sigma_true[t] - 1] = spec.pi_true[t];
    }
    wires.extend(slot_out.iter().map(|&b| Wire::Output(b)));
    let space = tensor::WireSpace::new(wires, vec![d; 2 * n])?;
    Ok(ChoiState::from_op_unchecked(Op::new(space, tensor::hermitize(&rho))?))
}

/// Outcome of [`check_comb_condition`]; `deviations[k]` is the trace-norm
/// violation of the `k`-th equality.
#[derive(Clone, Debug, PartialEq)]
pub struct CombCheck {
    pub ok: bool,
    pub worst_deviation: f64,
    pub deviations: Vec<f64>,
}

/// Tests whether `choi` is compatible with `order`: for every `k` the marginal
/// on all inputs and the first `k` outputs must equal the marginal on the
/// first `k` teeth times the maximally mixed state on the later inputs.
pub fn check_comb_condition(choi: &ChoiState, order: &CausalOrder, tol: f64) -> Result<CombCheck> {
    let mut order_in = order.inputs();
    let mut order_out = order.outputs();
    let mut ins = choi.inputs();
    let mut outs = choi.outputs();
    order_in.sort();
    order_out.sort();
    ins.sort();
    outs.sort();
    if order_in != ins || order_out != outs {
        return Err(Error::InvalidOrder(alloc::format!(
            "order {order} does not match the Choi wires"
        )));
    }
    let teeth = order.teeth();
    let n = teeth.len();
    let mut deviations = Vec::with_capacity(n);
    for k in 0..n {
        let early_in: Vec<Wire> = teeth[..k].iter().map(|t| t.0).collect();
        let late_in: Vec<Wire> = teeth[k..].iter().map(|t| t.0).collect();
        let early_out: Vec<Wire> = teeth[..k].iter().map(|t| t.1).collect();

        let mut lhs_wires = ins.clone();
        lhs_wires.extend_from_slice(&early_out);
        let lhs = choi.marginal(&lhs_wires)?;

        let mut head_wires = early_in.clone();
        head_wires.extend_from_slice(&early_out);
        let head = choi.marginal(&head_wires)?;
        let tail = Op::maximally_mixed(choi.op().space().select(&late_in)?);
        let rhs = head.tensor(&tail)?;
        deviations.push(lhs.sub(&rhs)?.trace_norm()?);
    }
    let worst = deviations.iter().copied().fold(0.0f64, f64::max);
    Ok(CombCheck {
        ok: worst <= tol,
        worst_deviation: worst,
        deviations,
    })
}

/// Choi state of the reduced channel `rho -> Tr_out[ C(rho (x) I/d) ]`.
pub fn trace_out_tooth(choi: &ChoiState, input: Wire, output: Wire) -> Result<ChoiState> {
    if !input.is_input() || choi.dim_of(input).is_none() {
        return Err(Error::UnknownWire(input));
    }
    if !output.is_output() || choi.dim_of(output).is_none() {
        return Err(Error::UnknownWire(output));
    }
    Ok(ChoiState::from_op_unchecked(choi.op.trace_out(&[input, output])?))
}

/// `C = (x)_i C_{A_i B_pi(i)}` for the pairing of `order`, in canonical
/// wire order. Used as the memoryless comb induced by a pairing.
pub fn product_of_pair_marginals(choi: &ChoiState, order: &CausalOrder) -> Result<Op> {
    let mut acc = Op::scalar(ONE);
    for &(a, b) in order.teeth() {
        acc = acc.tensor(&choi.marginal(&[a, b])?)?;
    }
    Ok(acc.canonical())
}

fn random_permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut p: Vec<usize> = (1..=n).collect();
    p.shuffle(rng);
    p
}

fn basis_state(dim: usize, k: usize) -> Vec<Complex64> {
    let mut v = vec![ZERO; dim];
    v[k] = ONE;
    v
}

/// Permutation matrix `|perm(i)><i|`.
fn permutation_matrix(perm: &[usize]) -> Matrix {
    let d = perm.len();
    let mut m = Matrix::zeros(d, d);
    for (i, &j) in perm.iter().enumerate() {
        m[(j, i)] = ONE;
    }
    m
}

/// Random comb with Haar unitaries, a Haar memory state and random hidden
/// permutations.
pub fn gen_unitary_comb<R: Rng + ?Sized>(n: usize, d_a: usize, d_m: usize, rng: &mut R) -> Result<CombSpec> {
    if n == 0 || d_a == 0 || d_m == 0 {
        return Err(Error::InvalidArgument("n, d_a and d_m must be positive".into()));
    }
    let psi0 = haar_state(d_m, rng);
    let unitaries = (0..n)
        .map(|_| haar_unitary(d_a * d_m, rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(CombSpec {
        n,
        d_a,
        d_m,
        psi0,
        unitaries,
        sigma_true: random_permutation(n, rng),
        pi_true: random_permutation(n, rng),
        metadata: CombMetadata {
            generator: "unitary".into(),
            ..Default::default()
        },
    })
}

/// Tensor product of `n` Haar-random single-wire unitary channels with a
/// random input-output pairing. The memory is trivial (`d_m = 1`).
pub fn gen_memoryless_comb<R: Rng + ?Sized>(n: usize, d_a: usize, rng: &mut R) -> Result<CombSpec> {
    let mut spec = gen_unitary_comb(n, d_a, 1, rng)?;
    spec.psi0 = vec![ONE];
    spec.metadata.generator = "memoryless".into();
    Ok(spec)
}

/// Memoryless comb in which the tooth at `constant_position` discards its
/// input and emits `|0>`. The discarded input is parked in a `d_a`-dimensional
/// memory that no other tooth touches, so the channel is still a product of
/// single-wire channels.
pub fn gen_memoryless_with_constant_tooth<R: Rng + ?Sized>(
    n: usize,
    d_a: usize,
    constant_position: usize,
    rng: &mut R,
) -> Result<CombSpec> {
    if constant_position >= n {
        return Err(Error::InvalidArgument("constant tooth position out of range".into()));
    }
    let base = gen_memoryless_comb(n, d_a, rng)?;
    let id_m = Matrix::identity(d_a, d_a);
    let swap: Vec<usize> = (0..d_a * d_a).map(|i| (i % d_a) * d_a + i / d_a).collect();
    let unitaries = base
        .unitaries
        .iter()
        .enumerate()
        .map(|(t, u)| {
            if t == constant_position {
                permutation_matrix(&swap)
            } else {
                u.kronecker(&id_m)
            }
        })
        .collect();
    Ok(CombSpec {
        d_m: d_a,
        psi0: basis_state(d_a, 0),
        unitaries,
        metadata: CombMetadata {
            generator: "memoryless-constant".into(),
            ..Default::default()
        },
        ..base
    })
}

/// Qubit comb with genuine signalling through a one-qubit memory: the first
/// tooth copies its input into memory with a CNOT, every later tooth applies
/// a memory-controlled NOT to its wire and then copies the wire back into
/// memory. Each tooth is dressed with Haar-random single-qubit unitaries on
/// its input and output, and the wire labels are randomly permuted.
pub fn gen_cnot_memory_comb<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<CombSpec> {
    if n < 2 {
        return Err(Error::InvalidArgument("signalling comb needs n >= 2".into()));
    }
    // index = wire * 2 + memory
    let cnot_wire_to_mem = permutation_matrix(&[0, 1, 3, 2]);
    let cnot_mem_to_wire = permutation_matrix(&[0, 3, 2, 1]);
    let id2 = Matrix::identity(2, 2);
    let mut unitaries = Vec::with_capacity(n);
    for t in 0..n {
        let core = if t == 0 {
            cnot_wire_to_mem.clone()
        } else {
            &cnot_wire_to_mem * &cnot_mem_to_wire
        };
        let pre = haar_unitary(2, rng)?.kronecker(&id2);
        let post = haar_unitary(2, rng)?.kronecker(&id2);
        unitaries.push(post * core * pre);
    }
    Ok(CombSpec {
        n,
        d_a: 2,
        d_m: 2,
        psi0: basis_state(2, 0),
        unitaries,
        sigma_true: random_permutation(n, rng),
        pi_true: random_permutation(n, rng),
        metadata: CombMetadata {
            generator: "cnot-memory".into(),
            ..Default::default()
        },
    })
}

/// Pairwise `chi_1` table of a comb in true-order coordinates:
/// `table[i][j] = chi_1(C_{A_sigma(i) B_pi(j)})`.
pub fn true_order_chi_table(spec: &CombSpec, choi: &ChoiState) -> Result<Vec<Vec<f64>>> {
    let mut table = vec![vec![0.0; spec.n]; spec.n];
    for i in 0..spec.n {
        for j in 0..spec.n {
            table[i][j] = choi.pair_chi1(Wire::Input(spec.sigma_true[i]), Wire::Output(spec.pi_true[j]))?;
        }
    }
    Ok(table)
}

/// Rejection-samples random memory-unitary combs until every pair with the
/// output at or after the input has `chi_1 >= chi_floor_target` (pairs with
/// the output before the input are independent by causality). The achieved
/// minimum is stored in the metadata.
pub fn gen_totalorder_comb<R: Rng + ?Sized>(
    n: usize,
    d_a: usize,
    d_m: usize,
    chi_floor_target: f64,
    budget: usize,
    rng: &mut R,
) -> Result<CombSpec> {
    let mut best = f64::NEG_INFINITY;
    for _ in 0..budget {
        let mut spec = gen_unitary_comb(n, d_a, d_m, rng)?;
        let choi = build_choi(&spec, usize::MAX)?;
        let table = true_order_chi_table(&spec, &choi)?;
        let mut chi_min = f64::INFINITY;
        let mut causal_zero = true;
        for i in 0..n {
            for j in 0..n {
                if j >= i {
                    chi_min = chi_min.min(table[i][j]);
                } else if table[i][j] >= 1e-9 {
                    causal_zero = false;
                }
            }
        }
        if causal_zero && chi_min > best {
            best = chi_min;
        }
        if causal_zero && chi_min >= chi_floor_target {
            spec.metadata = CombMetadata {
                generator: "totalorder".into(),
                seed: None,
                achieved_chi_min: Some(chi_min),
            };
            return Ok(spec);
        }
    }
    Err(Error::BudgetExhausted {
        tries: budget,
        best_chi_min: best,
    })
}

/// Three-qubit comb whose pairwise input-output marginals are all products:
/// the first two teeth emit fresh maximally mixed qubits and store their
/// inputs, which then control an `X` and a `Z` on the third tooth's wire.
///
/// Memory layout (4 qubits, `d_m = 16`): `q1 e1 q2 e2`, starting in
/// `|Phi+>_{q1 e1} |Phi+>_{q2 e2}`. Tooth 1 swaps its wire with `q1`, tooth 2
/// swaps its wire with `q2`, tooth 3 applies `CX(q1 -> wire)` then
/// `CZ(q2 -> wire)`.
pub fn gen_pairwise_blind_comb() -> CombSpec {
    const Q1: usize = 1;
    const Q2: usize = 3;
    let dims = [2usize; 5]; // wire, q1, e1, q2, e2
    let bits = |idx: usize| -> [usize; 5] {
        let mut b = [0; 5];
        for (k, slot) in b.iter_mut().enumerate() {
            *slot = (idx >> (4 - k)) & 1;
        }
        b
    };
    let index = |b: &[usize; 5]| -> usize { b.iter().fold(0, |acc, &x| acc * 2 + x) };
    let total: usize = dims.iter().product();
    let swap_with = |slot: usize| -> Matrix {
        let perm: Vec<usize> = (0..total)
            .map(|i| {
                let mut b = bits(i);
                b.swap(0, slot);
                index(&b)
            })
            .collect();
        permutation_matrix(&perm)
    };
    let cx: Vec<usize> = (0..total)
        .map(|i| {
            let mut b = bits(i);
            b[0] ^= b[Q1];
            index(&b)
        })
        .collect();
    let mut cz = Matrix::identity(total, total);
    for i in 0..total {
        let b = bits(i);
        if b[0] == 1 && b[Q2] == 1 {
            cz[(i, i)] = -ONE;
        }
    }
    let u3 = cz * permutation_matrix(&cx);

    let mut psi0 = vec![ZERO; 16];
    for a in 0..2 {
        for b in 0..2 {
            // q1 e1 q2 e2 = a a b b
            psi0[(a << 3) | (a << 2) | (b << 1) | b] = Complex64::from(0.5);
        }
    }
    CombSpec {
        n: 3,
        d_a: 2,
        d_m: 16,
        psi0,
        unitaries: vec![swap_with(Q1), swap_with(Q2), u3],
        sigma_true: vec![1, 2, 3],
        pi_true: vec![1, 2, 3],
        metadata: CombMetadata {
            generator: "pairwise-blind".into(),
            ..Default::default()
        },
    }
}
