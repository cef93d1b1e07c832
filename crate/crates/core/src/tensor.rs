//! Dense complex linear algebra over labelled multi-wire Hilbert spaces.
//!
//! An [`Op`] is a square matrix together with the [`WireSpace`] it acts on.
//! The order of the wires in the space fixes the Kronecker order of the
//! matrix: the first wire is the most significant index. Operations that
//! combine two operators on the same set of wires permute the second operand
//! into the wire order of the first before touching matrix entries.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<Complex64>;

/// Relative tolerance used for rank and Hermiticity decisions.
pub const RANK_TOL: f64 = 1e-10;

/// Eigenvalues of a density estimate below this are rejected, not clamped.
pub const NEGATIVE_EIGEN_TOL: f64 = 1e-8;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

/// A wire label. Inputs `A_i` and outputs `B_i` of a comb, plus ancilla
/// (reference) wires `R_i` created when inputs are fed with halves of
/// maximally entangled pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Wire {
    Input(usize),
    Output(usize),
    Ancilla(usize),
}

impl Wire {
    pub fn index(self) -> usize {
        match self {
            Wire::Input(i) | Wire::Output(i) | Wire::Ancilla(i) => i,
        }
    }

    pub fn is_input(self) -> bool {
        matches!(self, Wire::Input(_))
    }

    pub fn is_output(self) -> bool {
        matches!(self, Wire::Output(_))
    }
}

impl fmt::Display for Wire {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Wire::Input(i) => write!(f, "A{i}"),
            Wire::Output(i) => write!(f, "B{i}"),
            Wire::Ancilla(i) => write!(f, "R{i}"),
        }
    }
}

impl FromStr for Wire {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(alloc::format!("bad wire label {s:?}"));
        let mut chars = s.chars();
        let kind = chars.next().ok_or_else(bad)?;
        let index: usize = chars.as_str().parse().map_err(|_| bad())?;
        match kind {
            'A' => Ok(Wire::Input(index)),
            'B' => Ok(Wire::Output(index)),
            'R' => Ok(Wire::Ancilla(index)),
            _ => Err(bad()),
        }
    }
}

/// Ordered list of wires with their dimensions.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct WireSpace {
    wires: Vec<Wire>,
    dims: Vec<usize>,
}

impl WireSpace {
    pub fn new(wires: Vec<Wire>, dims: Vec<usize>) -> Result<Self> {
        if wires.len() != dims.len() {
            return Err(Error::DimensionMismatch {
                expected: wires.len(),
                found: dims.len(),
            });
        }
        for (k, w) in wires.iter().enumerate() {
            if wires[..k].contains(w) {
                return Err(Error::DuplicateWire(*w));
            }
        }
        if let Some(&d) = dims.iter().find(|&&d| d == 0) {
            return Err(Error::DimensionMismatch { expected: 1, found: d });
        }
        Ok(Self { wires, dims })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn single(wire: Wire, dim: usize) -> Result<Self> {
        Self::new(vec![wire], vec![dim])
    }

    pub fn wires(&self) -> &[Wire] {
        &self.wires
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.wires.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wires.is_empty()
    }

    pub fn total_dim(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn position(&self, wire: Wire) -> Option<usize> {
        self.wires.iter().position(|&w| w == wire)
    }

    pub fn contains(&self, wire: Wire) -> bool {
        self.wires.contains(&wire)
    }

    pub fn dim_of(&self, wire: Wire) -> Option<usize> {
        self.position(wire).map(|p| self.dims[p])
    }

    pub fn iter(&self) -> impl Iterator<Item = (Wire, usize)> + '_ {
        self.wires.iter().copied().zip(self.dims.iter().copied())
    }

    /// Kronecker strides: index = sum of digit * stride.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.dims.len()];
        for k in (0..self.dims.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * self.dims[k + 1];
        }
        strides
    }

    pub fn concat(&self, other: &WireSpace) -> Result<WireSpace> {
        if let Some(&w) = other.wires.iter().find(|w| self.contains(**w)) {
            return Err(Error::LabelCollision(w));
        }
        let mut wires = self.wires.clone();
        wires.extend_from_slice(&other.wires);
        let mut dims = self.dims.clone();
        dims.extend_from_slice(&other.dims);
        Ok(WireSpace { wires, dims })
    }

    /// Sub-space made of `wires`, in the order given.
    pub fn select(&self, wires: &[Wire]) -> Result<WireSpace> {
        let dims = wires
            .iter()
            .map(|&w| self.dim_of(w).ok_or(Error::UnknownWire(w)))
            .collect::<Result<Vec<_>>>()?;
        WireSpace::new(wires.to_vec(), dims)
    }

    /// Wires not in `wires`, preserving order.
    pub fn complement(&self, wires: &[Wire]) -> Vec<Wire> {
        self.wires.iter().copied().filter(|w| !wires.contains(w)).collect()
    }

    pub fn sorted(&self) -> WireSpace {
        let mut pairs: Vec<(Wire, usize)> = self.iter().collect();
        pairs.sort();
        WireSpace {
            wires: pairs.iter().map(|p| p.0).collect(),
            dims: pairs.iter().map(|p| p.1).collect(),
        }
    }

    fn same_set(&self, other: &WireSpace) -> bool {
        self.len() == other.len() && self.iter().all(|(w, d)| other.dim_of(w) == Some(d))
    }

    /// Digits of a flat index, one per wire.
    fn digits(&self, mut index: usize, out: &mut [usize]) {
        for k in (0..self.dims.len()).rev() {
            out[k] = index % self.dims[k];
            index /= self.dims[k];
        }
    }
}

/// A square operator on a labelled wire space.
#[derive(Clone, Debug, PartialEq)]
pub struct Op {
    space: WireSpace,
    matrix: Matrix,
}

impl Op {
    pub fn new(space: WireSpace, matrix: Matrix) -> Result<Self> {
        let d = space.total_dim();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: matrix.nrows().max(matrix.ncols()),
            });
        }
        Ok(Self { space, matrix })
    }

    pub fn scalar(value: Complex64) -> Self {
        Self {
            space: WireSpace::empty(),
            matrix: Matrix::from_element(1, 1, value),
        }
    }

    pub fn on_wire(wire: Wire, matrix: Matrix) -> Result<Self> {
        Self::new(WireSpace::single(wire, matrix.nrows())?, matrix)
    }

    pub fn identity(space: WireSpace) -> Self {
        let d = space.total_dim();
        Self {
            space,
            matrix: Matrix::identity(d, d),
        }
    }

    pub fn maximally_mixed(space: WireSpace) -> Self {
        let d = space.total_dim();
        let mut op = Self::identity(space);
        op.matrix /= Complex64::from(d as f64);
        op
    }

    /// `|psi><psi|` for an amplitude vector in the space's Kronecker order.
    pub fn pure(space: WireSpace, amplitudes: &[Complex64]) -> Result<Self> {
        let d = space.total_dim();
        if amplitudes.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: amplitudes.len(),
            });
        }
        let matrix = Matrix::from_fn(d, d, |i, j| amplitudes[i] * amplitudes[j].conj());
        Ok(Self { space, matrix })
    }

    pub fn space(&self) -> &WireSpace {
        &self.space
    }

    pub fn wires(&self) -> &[Wire] {
        self.space.wires()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> Matrix {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> Complex64 {
        self.matrix.trace()
    }

    pub fn scale(&self, factor: f64) -> Op {
        Op {
            space: self.space.clone(),
            matrix: &self.matrix * Complex64::from(factor),
        }
    }

    /// Kronecker product; the result lists the wires of `self` first.
    pub fn tensor(&self, other: &Op) -> Result<Op> {
        let space = self.space.concat(&other.space)?;
        Ok(Op {
            space,
            matrix: self.matrix.kronecker(&other.matrix),
        })
    }

    /// Marginal on `keep`. Kept wires retain their relative order in `self`.
    pub fn partial_trace(&self, keep: &[Wire]) -> Result<Op> {
        for (k, w) in keep.iter().enumerate() {
            if !self.space.contains(*w) {
                return Err(Error::UnknownWire(*w));
            }
            if keep[..k].contains(w) {
                return Err(Error::DuplicateWire(*w));
            }
        }
        let kept: Vec<Wire> = self.wires().iter().copied().filter(|w| keep.contains(w)).collect();
        let traced = self.space.complement(&kept);
        let kept_space = self.space.select(&kept)?;
        let traced_space = self.space.select(&traced)?;
        let dk = kept_space.total_dim();
        let dt = traced_space.total_dim();

        // groups[t] lists (kept index, full index) pairs sharing traced index t
        let mut groups: Vec<Vec<(usize, usize)>> = vec![Vec::with_capacity(dk); dt];
        let nw = self.space.len();
        let mut digits = vec![0usize; nw];
        let kept_strides = kept_space.strides();
        let traced_strides = traced_space.strides();
        let kept_pos: Vec<Option<usize>> = self.wires().iter().map(|w| kept.iter().position(|k| k == w)).collect();
        let traced_pos: Vec<Option<usize>> = self
            .wires()
            .iter()
            .map(|w| traced.iter().position(|k| k == w))
            .collect();
        for full in 0..self.dim() {
            self.space.digits(full, &mut digits);
            let mut k_idx = 0;
            let mut t_idx = 0;
            for w in 0..nw {
                if let Some(p) = kept_pos[w] {
                    k_idx += digits[w] * kept_strides[p];
                } else if let Some(p) = traced_pos[w] {
                    t_idx += digits[w] * traced_strides[p];
                }
            }
            groups[t_idx].push((k_idx, full));
        }

        let mut out = Matrix::zeros(dk, dk);
        for group in &groups {
            for &(kr, fr) in group {
                for &(kc, fc) in group {
                    out[(kr, kc)] += self.matrix[(fr, fc)];
                }
            }
        }
        Ok(Op {
            space: kept_space,
            matrix: out,
        })
    }

    /// Traces out the listed wires.
    pub fn trace_out(&self, wires: &[Wire]) -> Result<Op> {
        for &w in wires {
            if !self.space.contains(w) {
                return Err(Error::UnknownWire(w));
            }
        }
        self.partial_trace(&self.space.complement(wires))
    }

    /// Reorders the wires (and the matrix) to `order`, which must be a
    /// permutation of the current wires.
    pub fn permuted(&self, order: &[Wire]) -> Result<Op> {
        if order.len() != self.space.len() {
            return Err(Error::DimensionMismatch {
                expected: self.space.len(),
                found: order.len(),
            });
        }
        let new_space = self.space.select(order)?;
        if order == self.wires() {
            return Ok(self.clone());
        }
        let old_strides = self.space.strides();
        let old_pos: Vec<usize> = order
            .iter()
            .map(|w| self.space.position(*w).expect("selected above"))
            .collect();
        let d = self.dim();
        let mut digits = vec![0usize; order.len()];
        let map: Vec<usize> = (0..d)
            .map(|i| {
                new_space.digits(i, &mut digits);
                digits
                    .iter()
                    .zip(&old_pos)
                    .map(|(&digit, &p)| digit * old_strides[p])
                    .sum()
            })
            .collect();
        let matrix = Matrix::from_fn(d, d, |i, j| self.matrix[(map[i], map[j])]);
        Ok(Op {
            space: new_space,
            matrix,
        })
    }

    /// Same operator with wires sorted (inputs, then outputs, then ancillas).
    pub fn canonical(&self) -> Op {
        let sorted = self.space.sorted();
        self.permuted(sorted.wires()).expect("sorted is a permutation")
    }

    /// Renames wires; dimensions are kept.
    pub fn relabel(&self, rename: impl Fn(Wire) -> Wire) -> Result<Op> {
        let wires = self.wires().iter().map(|&w| rename(w)).collect();
        let space = WireSpace::new(wires, self.space.dims().to_vec())?;
        Ok(Op {
            space,
            matrix: self.matrix.clone(),
        })
    }

    /// Contracts the listed wires against `state`:
    /// `sum_{a,a'} state[a,a'] X[(a,r),(a',r')]`. The result lives on the
    /// remaining wires in their original order.
    pub fn contract(&self, wires: &[Wire], state: &Matrix) -> Result<Op> {
        let sub = self.space.select(wires)?;
        let ds = sub.total_dim();
        if state.nrows() != ds || state.ncols() != ds {
            return Err(Error::DimensionMismatch {
                expected: ds,
                found: state.nrows(),
            });
        }
        let rest = self.space.complement(wires);
        let mut order = wires.to_vec();
        order.extend_from_slice(&rest);
        let x = self.permuted(&order)?;
        let rest_space = self.space.select(&rest)?;
        let r = rest_space.total_dim();
        let mut out = Matrix::zeros(r, r);
        for a in 0..ds {
            for b in 0..ds {
                let s = state[(a, b)];
                if s == ZERO {
                    continue;
                }
                let block = x.matrix.view((a * r, b * r), (r, r));
                out.zip_apply(&block, |o, v| *o += s * v);
            }
        }
        Ok(Op {
            space: rest_space,
            matrix: out,
        })
    }

    fn aligned(&self, other: &Op) -> Result<Matrix> {
        if !self.space.same_set(&other.space) {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(other.permuted(self.wires())?.matrix)
    }

    /// `self - other`, with `other` permuted into `self`'s wire order.
    pub fn sub(&self, other: &Op) -> Result<Op> {
        let m = self.aligned(other)?;
        Ok(Op {
            space: self.space.clone(),
            matrix: &self.matrix - m,
        })
    }

    pub fn add(&self, other: &Op) -> Result<Op> {
        let m = self.aligned(other)?;
        Ok(Op {
            space: self.space.clone(),
            matrix: &self.matrix + m,
        })
    }

    /// `Tr[self * other]`.
    pub fn overlap(&self, other: &Op) -> Result<Complex64> {
        let m = self.aligned(other)?;
        Ok(trace_product(&self.matrix, &m))
    }

    pub fn hermitian_deviation(&self) -> f64 {
        hermitian_deviation(&self.matrix)
    }

    pub fn hermitize(&self) -> Op {
        Op {
            space: self.space.clone(),
            matrix: hermitize(&self.matrix),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.matrix.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_eigenvalues(&self.matrix)
    }

    pub fn trace_norm(&self) -> Result<f64> {
        trace_norm_matrix(&self.matrix)
    }

    pub fn hs_norm(&self) -> Result<f64> {
        hs_norm_matrix(&self.matrix)
    }

    pub fn numerical_rank(&self, tol: f64) -> usize {
        numerical_rank_matrix(&self.matrix, tol)
    }

    pub fn purity(&self) -> f64 {
        trace_product(&self.matrix, &self.matrix).re
    }

    /// Checks the density-matrix invariants (Hermitian, PSD, unit trace).
    pub fn check_density(&self, tol: f64) -> Result<()> {
        if !self.is_finite() {
            return Err(Error::NonFinite);
        }
        let dev = self.hermitian_deviation();
        if dev > tol {
            return Err(Error::NotHermitian { deviation: dev });
        }
        let tr = self.trace();
        if (tr.re - 1.0).abs() > tol || tr.im.abs() > tol {
            return Err(Error::BadTrace { trace: tr.re });
        }
        let min = self.eigenvalues().first().copied().unwrap_or(0.0);
        if min < -tol {
            return Err(Error::NotPositive { min_eigenvalue: min });
        }
        Ok(())
    }

    /// Projects a near-density operator onto the density matrices: negative
    /// eigenvalues in (-1e-8, 0) are zeroed and the trace renormalised;
    /// anything more negative is an error.
    pub fn clamp_density(&self) -> Result<Op> {
        if !self.is_finite() {
            return Err(Error::NonFinite);
        }
        let eig = hermitize(&self.matrix).symmetric_eigen();
        let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        if min < -NEGATIVE_EIGEN_TOL {
            return Err(Error::NotPositive { min_eigenvalue: min });
        }
        let clipped: Vec<f64> = eig.eigenvalues.iter().map(|&v| v.max(0.0)).collect();
        let total: f64 = clipped.iter().sum();
        if total <= 0.0 {
            return Err(Error::BadTrace { trace: total });
        }
        let d = self.dim();
        let mut m = Matrix::zeros(d, d);
        for (k, &v) in clipped.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let col = eig.eigenvectors.column(k);
            m += (col * col.adjoint()) * Complex64::from(v / total);
        }
        Ok(Op {
            space: self.space.clone(),
            matrix: m,
        })
    }
}

/// Kronecker product of two operators on disjoint wires.
pub fn tensor(a: &Op, b: &Op) -> Result<Op> {
    a.tensor(b)
}

pub fn partial_trace(x: &Op, keep: &[Wire]) -> Result<Op> {
    x.partial_trace(keep)
}

pub fn trace_norm(x: &Op) -> Result<f64> {
    x.trace_norm()
}

pub fn hs_norm(x: &Op) -> Result<f64> {
    x.hs_norm()
}

pub fn numerical_rank(x: &Op, tol: f64) -> usize {
    x.numerical_rank(tol)
}

/// `chi_1(rho) = || rho_AB - rho_A (x) rho_B ||_1` for the bipartition
/// `group_a` versus every other wire of `rho`.
pub fn chi1(rho: &Op, group_a: &[Wire]) -> Result<f64> {
    if group_a.is_empty() || group_a.len() >= rho.space().len() {
        return Err(Error::InvalidArgument("bipartition needs two non-empty sides".into()));
    }
    let group_b = rho.space().complement(group_a);
    let rho_a = rho.partial_trace(group_a)?;
    let rho_b = rho.partial_trace(&group_b)?;
    let product = rho_a.tensor(&rho_b)?;
    rho.sub(&product)?.trace_norm()
}

pub fn trace_product(a: &Matrix, b: &Matrix) -> Complex64 {
    let mut acc = ZERO;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

pub fn hermitize(m: &Matrix) -> Matrix {
    (m + m.adjoint()) * Complex64::from(0.5)
}

pub fn hermitian_deviation(m: &Matrix) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in i..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

fn is_hermitian(m: &Matrix) -> bool {
    let scale = m.iter().map(|z| z.norm()).fold(1.0f64, f64::max);
    hermitian_deviation(m) <= RANK_TOL * scale
}

pub fn hermitian_eigenvalues(m: &Matrix) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut values: Vec<f64> = hermitize(m).symmetric_eigenvalues().iter().copied().collect();
    values.sort_by(|a, b| a.total_cmp(b));
    values
}

/// `f(M)` for Hermitian `M`, applied through its eigendecomposition.
pub fn hermitian_apply(m: &Matrix, f: impl Fn(f64) -> f64) -> Matrix {
    let eig = hermitize(m).symmetric_eigen();
    let mut v = eig.eigenvectors.clone();
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        let s = Complex64::from(f(lambda));
        for r in 0..v.nrows() {
            v[(r, k)] *= s;
        }
    }
    v * eig.eigenvectors.adjoint()
}

fn check_finite(m: &Matrix) -> Result<()> {
    if m.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

/// Singular values (absolute eigenvalues for Hermitian input).
pub fn singular_values(m: &Matrix) -> Vec<f64> {
    if is_hermitian(m) {
        hermitian_eigenvalues(m).into_iter().map(f64::abs).collect()
    } else {
        m.clone().svd(false, false).singular_values.iter().copied().collect()
    }
}

pub fn trace_norm_matrix(m: &Matrix) -> Result<f64> {
    check_finite(m)?;
    Ok(singular_values(m).iter().sum())
}

pub fn hs_norm_matrix(m: &Matrix) -> Result<f64> {
    check_finite(m)?;
    Ok(libm::sqrt(m.iter().map(|z| z.norm_sqr()).sum::<f64>()))
}

/// Number of singular values above `tol` times the largest one.
pub fn numerical_rank_matrix(m: &Matrix, tol: f64) -> usize {
    let sv = singular_values(m);
    let max = sv.iter().copied().fold(0.0f64, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol * max).count()
}

/// `max |U^dagger U - I|` entrywise.
pub fn unitary_deviation(u: &Matrix) -> f64 {
    let prod = u.adjoint() * u;
    let d = u.nrows();
    let mut worst = 0.0f64;
    for i in 0..d {
        for j in 0..d {
            let target = if i == j { ONE } else { ZERO };
            worst = worst.max((prod[(i, j)] - target).norm());
        }
    }
    worst
}

fn ginibre<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let s = core::f64::consts::FRAC_1_SQRT_2;
    Matrix::from_fn(rows, cols, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        Complex64::new(re * s, im * s)
    })
}

/// Haar-random unitary via QR of a Ginibre matrix with the phases of
/// `diag(R)` absorbed into `Q`.
pub fn haar_unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<Matrix> {
    if dim < 1 {
        return Err(Error::InvalidArgument("unitary dimension must be >= 1".into()));
    }
    let z = ginibre(dim, dim, rng);
    let qr = z.qr();
    let q = qr.q();
    let r = qr.r();
    let mut u = q;
    for k in 0..dim {
        let rkk = r[(k, k)];
        let phase = if rkk.norm() > 0.0 { rkk / rkk.norm() } else { ONE };
        let mut col = u.column_mut(k);
        col *= phase;
    }
    Ok(u)
}

/// Haar-random unit vector.
pub fn haar_state<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<Complex64> {
    let g = ginibre(dim, 1, rng);
    let norm = g.norm();
    g.iter().map(|z| z / norm).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Spectrum {
    /// Ginibre-induced random spectrum.
    Random,
    /// All non-zero eigenvalues equal to `1/rank`.
    Flat,
}

/// Random density matrix of exact rank `rank`.
pub fn random_density<R: Rng + ?Sized>(dim: usize, rank: usize, spectrum: Spectrum, rng: &mut R) -> Result<Matrix> {
    if rank < 1 || rank > dim {
        return Err(Error::RankOutOfRange { rank, dim });
    }
    let m = match spectrum {
        Spectrum::Random => {
            let g = ginibre(dim, rank, rng);
            let m = &g * g.adjoint();
            let tr = m.trace();
            m / tr
        }
        Spectrum::Flat => {
            let u = haar_unitary(dim, rng)?;
            let cols = u.columns(0, rank);
            (cols * cols.adjoint()) * Complex64::from(1.0 / rank as f64)
        }
    };
    Ok(hermitize(&m))
}

/// Row-major vectorisation `|X>> = sum_ij X_ij |i>|j>`.
pub fn vec_row_major(m: &Matrix) -> Vec<Complex64> {
    let (r, c) = m.shape();
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            out.push(m[(i, j)]);
        }
    }
    out
}

pub fn unvec_row_major(v: &[Complex64], dim: usize) -> Matrix {
    Matrix::from_fn(dim, dim, |i, j| v[i * dim + j])
}

/// A pure state over a list of slots, used to thread unitaries through a
/// circuit before forming density matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    dims: Vec<usize>,
    amps: Vec<Complex64>,
}

impl StateVector {
    pub fn new(dims: Vec<usize>, amps: Vec<Complex64>) -> Result<Self> {
        let d: usize = dims.iter().product();
        if amps.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: amps.len(),
            });
        }
        Ok(Self { dims, amps })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.amps.iter().map(|z| z.norm_sqr()).sum())
    }

    fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.dims.len()];
        for k in (0..self.dims.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * self.dims[k + 1];
        }
        strides
    }

    /// Applies `u` to the listed slots; the first slot is the most
    /// significant index of `u`.
    pub fn apply(&mut self, slots: &[usize], u: &Matrix) -> Result<()> {
        let sub_dims: Vec<usize> = slots
            .iter()
            .map(|&s| {
                self.dims
                    .get(s)
                    .copied()
                    .ok_or_else(|| Error::InvalidArgument(alloc::format!("slot {s} out of range")))
            })
            .collect::<Result<_>>()?;
        let ds: usize = sub_dims.iter().product();
        if u.nrows() != ds || u.ncols() != ds {
            return Err(Error::DimensionMismatch {
                expected: ds,
                found: u.nrows(),
            });
        }
        for (k, s) in slots.iter().enumerate() {
            if slots[..k].contains(s) {
                return Err(Error::InvalidArgument("repeated slot".into()));
            }
        }
        let strides = self.strides();
        // offsets of the sub-register basis states
        let mut offsets = vec![0usize; ds];
        for (idx, off) in offsets.iter_mut().enumerate() {
            let mut rem = idx;
            for k in (0..slots.len()).rev() {
                *off += (rem % sub_dims[k]) * strides[slots[k]];
                rem /= sub_dims[k];
            }
        }
        let rest: Vec<usize> = (0..self.dims.len()).filter(|k| !slots.contains(k)).collect();
        let rest_total: usize = rest.iter().map(|&k| self.dims[k]).product();
        let mut buf = vec![ZERO; ds];
        for r in 0..rest_total {
            let mut base = 0;
            let mut rem = r;
            for &k in rest.iter().rev() {
                base += (rem % self.dims[k]) * strides[k];
                rem /= self.dims[k];
            }
            for (i, b) in buf.iter_mut().enumerate() {
                *b = (0..ds).map(|j| u[(i, j)] * self.amps[base + offsets[j]]).sum();
            }
            for (i, b) in buf.iter().enumerate() {
                self.amps[base + offsets[i]] = *b;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn qubit(w: Wire, m: Matrix) -> Op {
        Op::on_wire(w, m).unwrap()
    }

    fn phi_plus() -> Op {
        let s = core::f64::consts::FRAC_1_SQRT_2;
        let amps = [Complex64::from(s), ZERO, ZERO, Complex64::from(s)];
        let space = WireSpace::new(vec![Wire::Input(1), Wire::Output(1)], vec![2, 2]).unwrap();
        Op::pure(space, &amps).unwrap()
    }

    fn random_op(wires: &[Wire], rng: &mut ChaCha8Rng) -> Op {
        let space = WireSpace::new(wires.to_vec(), vec![2; wires.len()]).unwrap();
        let m = random_density(space.total_dim(), 2, Spectrum::Random, rng).unwrap();
        Op::new(space, m).unwrap()
    }

    /// Brute-force partial trace by explicit index loops over three qubits.
    fn trace_last_two_direct(rho: &Op) -> Matrix {
        let m = rho.matrix();
        Matrix::from_fn(2, 2, |a, b| {
            let mut acc = ZERO;
            for k in 0..4 {
                acc += m[(a * 4 + k, b * 4 + k)];
            }
            acc
        })
    }

    #[test]
    fn tensor_of_maximally_mixed_is_maximally_mixed() {
        let a = Op::maximally_mixed(WireSpace::single(Wire::Input(1), 2).unwrap());
        let b = Op::maximally_mixed(WireSpace::single(Wire::Input(2), 2).unwrap());
        let ab = a.tensor(&b).unwrap();
        assert_eq!(ab.wires(), &[Wire::Input(1), Wire::Input(2)]);
        let expected = Matrix::identity(4, 4) / Complex64::from(4.0);
        assert!((ab.matrix() - expected).norm() < 1e-15);
    }

    #[test]
    fn tensor_of_basis_states() {
        let zero = Matrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, ZERO]);
        let one = Matrix::from_row_slice(2, 2, &[ZERO, ZERO, ZERO, ONE]);
        let ab = qubit(Wire::Input(1), zero).tensor(&qubit(Wire::Input(2), one)).unwrap();
        // |01><01| has its single 1 at index 1
        assert_eq!(ab.matrix()[(1, 1)], ONE);
        assert!((ab.trace() - ONE).norm() < 1e-15);
    }

    #[test]
    fn tensor_rejects_label_collision() {
        let a = Op::maximally_mixed(WireSpace::single(Wire::Input(1), 2).unwrap());
        assert_eq!(a.tensor(&a), Err(Error::LabelCollision(Wire::Input(1))));
    }

    #[test]
    fn tensor_trace_is_product_of_traces() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Op::on_wire(Wire::Input(1), ginibre(2, 2, &mut rng)).unwrap();
        let b = Op::on_wire(Wire::Input(2), ginibre(2, 2, &mut rng)).unwrap();
        let ab = a.tensor(&b).unwrap();
        // direct multiplication oracle: sum_i sum_j a_ii b_jj
        let mut expected = ZERO;
        for i in 0..2 {
            for j in 0..2 {
                expected += a.matrix()[(i, i)] * b.matrix()[(j, j)];
            }
        }
        assert!((ab.trace() - expected).norm() < 1e-13);
    }

    #[test]
    fn marginal_of_phi_plus_is_maximally_mixed() {
        let m = phi_plus().partial_trace(&[Wire::Input(1)]).unwrap();
        let expected = Matrix::identity(2, 2) / Complex64::from(2.0);
        assert!((m.matrix() - expected).norm() < 1e-15);
    }

    #[test]
    fn partial_trace_unknown_label() {
        assert_eq!(
            phi_plus().partial_trace(&[Wire::Input(7)]),
            Err(Error::UnknownWire(Wire::Input(7)))
        );
    }

    #[test]
    fn partial_trace_matches_direct_contraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let wires = [Wire::Input(1), Wire::Input(2), Wire::Input(3)];
        let rho = random_op(&wires, &mut rng);
        let direct = trace_last_two_direct(&rho);
        let nested = rho
            .partial_trace(&[Wire::Input(1), Wire::Input(2)])
            .unwrap()
            .partial_trace(&[Wire::Input(1)])
            .unwrap();
        let joint = rho.partial_trace(&[Wire::Input(1)]).unwrap();
        assert!((nested.matrix() - &direct).norm() < 1e-14);
        assert!((joint.matrix() - &direct).norm() < 1e-14);
    }

    #[test]
    fn partial_trace_of_middle_wire() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_op(&[Wire::Input(1)], &mut rng);
        let b = random_op(&[Wire::Input(2)], &mut rng);
        let c = random_op(&[Wire::Input(3)], &mut rng);
        let abc = a.tensor(&b).unwrap().tensor(&c).unwrap();
        let ac = abc.partial_trace(&[Wire::Input(1), Wire::Input(3)]).unwrap();
        let expected = a.tensor(&c).unwrap();
        assert!((ac.matrix() - expected.matrix()).norm() < 1e-14);
    }

    #[test]
    fn permutation_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_op(&[Wire::Input(1)], &mut rng);
        let b = random_op(&[Wire::Output(1)], &mut rng);
        let ab = a.tensor(&b).unwrap();
        let ba = b.tensor(&a).unwrap();
        let permuted = ba.permuted(ab.wires()).unwrap();
        assert!((permuted.matrix() - ab.matrix()).norm() < 1e-15);
        assert_eq!(ab.sub(&ba).unwrap().hs_norm().unwrap(), 0.0);
    }

    #[test]
    fn contract_reproduces_partial_trace_with_identity() {
        let rho = phi_plus();
        let id = Matrix::identity(2, 2);
        let c = rho.contract(&[Wire::Input(1)], &id).unwrap();
        let pt = rho.partial_trace(&[Wire::Output(1)]).unwrap();
        assert!((c.matrix() - pt.matrix()).norm() < 1e-15);
    }

    #[test]
    fn trace_norm_examples() {
        let id = Op::identity(WireSpace::single(Wire::Input(1), 2).unwrap());
        assert!((id.trace_norm().unwrap() - 2.0).abs() < 1e-14);
        let mixed = Op::maximally_mixed(phi_plus().space().clone());
        let diff = phi_plus().sub(&mixed).unwrap();
        assert!((diff.trace_norm().unwrap() - 1.5).abs() < 1e-12);
        assert!((id.hs_norm().unwrap() - libm::sqrt(2.0)).abs() < 1e-14);
    }

    #[test]
    fn norms_reject_non_finite() {
        let mut m = Matrix::identity(2, 2);
        m[(0, 1)] = Complex64::new(f64::NAN, 0.0);
        let op = Op::on_wire(Wire::Input(1), m).unwrap();
        assert_eq!(op.trace_norm(), Err(Error::NonFinite));
        assert_eq!(op.hs_norm(), Err(Error::NonFinite));
    }

    #[test]
    fn trace_norm_of_non_hermitian_uses_svd() {
        let m = Matrix::from_row_slice(2, 2, &[ZERO, Complex64::from(3.0), ZERO, ZERO]);
        assert!((trace_norm_matrix(&m).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn rank_examples() {
        let zero = Matrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, ZERO]);
        assert_eq!(numerical_rank_matrix(&zero, 1e-10), 1);
        let mixed = Matrix::identity(4, 4) / Complex64::from(4.0);
        assert_eq!(numerical_rank_matrix(&mixed, 1e-10), 4);
        assert_eq!(numerical_rank_matrix(&Matrix::zeros(3, 3), 1e-10), 0);
    }

    #[test]
    fn haar_unitaries_are_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let u = haar_unitary(4, &mut rng).unwrap();
            assert!(unitary_deviation(&u) < 1e-12);
        }
        let phase = haar_unitary(1, &mut rng).unwrap();
        assert!((phase[(0, 0)].norm() - 1.0).abs() < 1e-14);
        assert!(haar_unitary(0, &mut rng).is_err());
    }

    #[test]
    fn haar_first_moment() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let draws = 10_000;
        let mean: f64 = (0..draws)
            .map(|_| haar_unitary(2, &mut rng).unwrap()[(0, 0)].norm_sqr())
            .sum::<f64>()
            / draws as f64;
        assert!((mean - 0.5).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn random_density_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pure = random_density(4, 1, Spectrum::Random, &mut rng).unwrap();
        assert!((trace_product(&pure, &pure).re - 1.0).abs() < 1e-12);
        let flat = random_density(3, 3, Spectrum::Flat, &mut rng).unwrap();
        assert!((flat - Matrix::identity(3, 3) / Complex64::from(3.0)).norm() < 1e-12);
        let r2 = random_density(5, 2, Spectrum::Random, &mut rng).unwrap();
        let eig = hermitian_eigenvalues(&r2);
        assert!((eig.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(numerical_rank_matrix(&r2, 1e-10), 2);
        assert!(random_density(2, 3, Spectrum::Random, &mut rng).is_err());
        assert!(random_density(2, 0, Spectrum::Random, &mut rng).is_err());
    }

    #[test]
    fn clamp_density_zeroes_tiny_negatives() {
        let m = Matrix::from_row_slice(2, 2, &[Complex64::from(1.0 + 1e-9), ZERO, ZERO, Complex64::from(-1e-9)]);
        let op = Op::on_wire(Wire::Input(1), m).unwrap();
        let clamped = op.clamp_density().unwrap();
        assert!(clamped.check_density(1e-12).is_ok());
        let bad = Matrix::from_row_slice(2, 2, &[Complex64::from(1.1), ZERO, ZERO, Complex64::from(-0.1)]);
        let op = Op::on_wire(Wire::Input(1), bad).unwrap();
        assert!(matches!(op.clamp_density(), Err(Error::NotPositive { .. })));
    }

    #[test]
    fn chi1_examples() {
        let phi = phi_plus();
        assert!((chi1(&phi, &[Wire::Input(1)]).unwrap() - 1.5).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_op(&[Wire::Input(1)], &mut rng);
        let b = random_op(&[Wire::Output(1)], &mut rng);
        let prod = a.tensor(&b).unwrap();
        assert!(chi1(&prod, &[Wire::Input(1)]).unwrap() < 1e-12);
        assert!(chi1(&prod, &[]).is_err());
    }

    #[test]
    fn wire_labels_parse() {
        assert_eq!("A3".parse::<Wire>().unwrap(), Wire::Input(3));
        assert_eq!("B12".parse::<Wire>().unwrap(), Wire::Output(12));
        assert!("C1".parse::<Wire>().is_err());
        assert_eq!(alloc::format!("{}", Wire::Ancilla(2)), "R2");
    }

    #[test]
    fn state_vector_apply_matches_kronecker() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let psi = haar_state(8, &mut rng);
        let u = haar_unitary(4, &mut rng).unwrap();
        // apply u on slots (2, 0): reorder check against explicit permutation
        let mut sv = StateVector::new(vec![2, 2, 2], psi.clone()).unwrap();
        sv.apply(&[0, 1], &u).unwrap();
        let full = u.kronecker(&Matrix::identity(2, 2));
        let v = nalgebra::DVector::from_vec(psi);
        let expected = full * v;
        for (a, b) in sv.amplitudes().iter().zip(expected.iter()) {
            assert!((a - b).norm() < 1e-13);
        }
        assert!((sv.norm() - 1.0).abs() < 1e-12);
    }
}
