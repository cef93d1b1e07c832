//! Informationally complete POVMs and state sets, their frame operators, and
//! linear-inversion reconstruction through the dual frame.
//!
//! Operators are vectorised row-major, `|X>> = sum_ij X_ij |i>|j>`, so that
//! `<<P|X>> = Tr[P^dagger X]`.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{
    self, haar_state, hermitian_eigenvalues, hermitize, trace_product, unvec_row_major, vec_row_major, Matrix,
};

/// Completeness / PSD tolerance for constructor outputs.
pub const POVM_TOL: f64 = 1e-10;

/// Frames with `lambda_min` at or below this are reported as not IC.
pub const IC_TOL: f64 = 1e-12;

/// Minimum frame eigenvalue accepted for randomized IC POVMs.
pub const RANDOM_IC_LAMBDA_FLOOR: f64 = 1e-6;

/// Redraw budget for randomized IC POVMs.
pub const RANDOM_IC_BUDGET: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PovmKind {
    Povm,
    StateSet,
}

/// Frame operator `F = sum_a |P_a>><<P_a|` with its cached inverse and dual
/// frame `|D_a>> = F^{-1}|P_a>>`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameOperator {
    pub matrix: Matrix,
    pub inverse: Option<Matrix>,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub duals: Vec<Matrix>,
}

impl FrameOperator {
    pub fn of(elements: &[Matrix]) -> Result<FrameOperator> {
        let d = elements.first().map(|e| e.nrows()).ok_or(Error::NoSamples)?;
        let d2 = d * d;
        let mut s = Matrix::zeros(d2, elements.len());
        for (a, p) in elements.iter().enumerate() {
            if p.nrows() != d || p.ncols() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: p.nrows(),
                });
            }
            for (k, v) in vec_row_major(p).into_iter().enumerate() {
                s[(k, a)] = v;
            }
        }
        let matrix = hermitize(&(&s * s.adjoint()));
        let eig = hermitian_eigenvalues(&matrix);
        let lambda_min = eig[0];
        let lambda_max = eig[eig.len() - 1];
        let (inverse, duals) = if lambda_min > IC_TOL * lambda_max.max(1.0) {
            let inv = tensor::hermitian_apply(&matrix, |x| 1.0 / x);
            let dual_cols = &inv * &s;
            let duals = (0..elements.len())
                .map(|a| {
                    let col: Vec<Complex64> = dual_cols.column(a).iter().copied().collect();
                    unvec_row_major(&col, d)
                })
                .collect();
            (Some(inv), duals)
        } else {
            (None, Vec::new())
        };
        Ok(FrameOperator {
            matrix,
            inverse,
            lambda_min,
            lambda_max,
            duals,
        })
    }

    pub fn is_ic(&self) -> bool {
        self.inverse.is_some()
    }
}

/// An informationally complete POVM `{P_a}` or state set `{psi_a}`.
#[derive(Clone, Debug, PartialEq)]
pub struct IcPovm {
    elements: Vec<Matrix>,
    dim: usize,
    kind: PovmKind,
    frame: FrameOperator,
}

impl IcPovm {
    pub fn new(elements: Vec<Matrix>, kind: PovmKind) -> Result<IcPovm> {
        let frame = FrameOperator::of(&elements)?;
        let dim = elements[0].nrows();
        for p in &elements {
            let dev = tensor::hermitian_deviation(p);
            if dev > POVM_TOL {
                return Err(Error::NotHermitian { deviation: dev });
            }
            let min = hermitian_eigenvalues(p)[0];
            if min < -POVM_TOL {
                return Err(Error::NotPositive { min_eigenvalue: min });
            }
            if kind == PovmKind::StateSet {
                let tr = p.trace().re;
                if (tr - 1.0).abs() > POVM_TOL {
                    return Err(Error::BadTrace { trace: tr });
                }
            }
        }
        if kind == PovmKind::Povm {
            let sum = elements.iter().fold(Matrix::zeros(dim, dim), |acc, p| acc + p);
            let dev = (sum - Matrix::identity(dim, dim))
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max);
            if dev > POVM_TOL {
                return Err(Error::InvalidArgument(alloc::format!(
                    "POVM elements do not sum to identity (deviation {dev:e})"
                )));
            }
        }
        if !frame.is_ic() {
            return Err(Error::SingularFrame {
                lambda_min: frame.lambda_min,
            });
        }
        Ok(IcPovm {
            elements,
            dim,
            kind,
            frame,
        })
    }

    pub fn elements(&self) -> &[Matrix] {
        &self.elements
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn kind(&self) -> PovmKind {
        self.kind
    }

    pub fn frame(&self) -> &FrameOperator {
        &self.frame
    }

    pub fn duals(&self) -> &[Matrix] {
        &self.frame.duals
    }

    /// `Tr[P_a rho]` for every element.
    pub fn born(&self, rho: &Matrix) -> Vec<f64> {
        self.elements.iter().map(|p| trace_product(p, rho).re).collect()
    }

    /// The Hermitian `X` with `Tr[P_a X] = probs[a]`, by dual-frame inversion.
    pub fn reconstruct(&self, probs: &[f64]) -> Result<Matrix> {
        if probs.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: probs.len(),
            });
        }
        if probs.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite);
        }
        let mut x = Matrix::zeros(self.dim, self.dim);
        for (p, dual) in probs.iter().zip(&self.frame.duals) {
            x += dual * Complex64::from(*p);
        }
        Ok(hermitize(&x))
    }

    /// Normalised state set `psi_a = P_a / Tr[P_a]`.
    pub fn state_set(&self) -> Result<IcPovm> {
        let states = self
            .elements
            .iter()
            .map(|p| p * Complex64::from(1.0 / p.trace().re))
            .collect();
        IcPovm::new(states, PovmKind::StateSet)
    }

    /// Input states `P_a^T / Tr[P_a]` for prepare-and-measure sampling.
    pub fn transposed_inputs(&self) -> Vec<Matrix> {
        self.elements
            .iter()
            .map(|p| p.transpose() * Complex64::from(1.0 / p.trace().re))
            .collect()
    }

    /// Sampling weights `Tr[P_a] / d` of the prepare-and-measure inputs.
    pub fn input_weights(&self) -> Vec<f64> {
        let d = self.dim as f64;
        self.elements.iter().map(|p| p.trace().re / d).collect()
    }

    pub fn tensor(&self, other: &IcPovm) -> Result<IcPovm> {
        let mut elements = Vec::with_capacity(self.len() * other.len());
        for p in &self.elements {
            for q in &other.elements {
                elements.push(p.kronecker(q));
            }
        }
        IcPovm::new(elements, self.kind)
    }
}

/// Qubit SIC POVM: `P_k = (I + r_k . sigma) / 4` with tetrahedral Bloch
/// vectors.
pub fn sic_qubit() -> IcPovm {
    let s2 = core::f64::consts::SQRT_2;
    let s23 = libm::sqrt(2.0 / 3.0);
    let bloch = [
        [0.0, 0.0, 1.0],
        [2.0 * s2 / 3.0, 0.0, -1.0 / 3.0],
        [-s2 / 3.0, s23, -1.0 / 3.0],
        [-s2 / 3.0, -s23, -1.0 / 3.0],
    ];
    let elements = bloch
        .iter()
        .map(|r| bloch_projector(r) * Complex64::from(0.5))
        .collect();
    IcPovm::new(elements, PovmKind::Povm).expect("tetrahedral SIC is a valid IC POVM")
}

/// Pure qubit state `(I + r . sigma) / 2` for a unit Bloch vector.
pub fn bloch_projector(r: &[f64; 3]) -> Matrix {
    let c = |re: f64, im: f64| Complex64::new(re, im);
    Matrix::from_row_slice(
        2,
        2,
        &[
            c((1.0 + r[2]) / 2.0, 0.0),
            c(r[0] / 2.0, -r[1] / 2.0),
            c(r[0] / 2.0, r[1] / 2.0),
            c((1.0 - r[2]) / 2.0, 0.0),
        ],
    )
}

/// `k`-fold tensor power of the qubit SIC (`k >= 1`).
pub fn sic_qubit_power(k: usize) -> Result<IcPovm> {
    if k == 0 {
        return Err(Error::InvalidArgument("tensor power must be at least 1".into()));
    }
    let base = sic_qubit();
    let mut acc = base.clone();
    for _ in 1..k {
        acc = acc.tensor(&base)?;
    }
    Ok(acc)
}

/// Rank-1 IC POVM from `d^2` Haar-random pure states: with
/// `S = sum_k |phi_k><phi_k|`, `P_k = S^{-1/2} |phi_k><phi_k| S^{-1/2}`.
/// Redraws until the frame's `lambda_min` exceeds the floor.
pub fn random_ic_povm<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<IcPovm> {
    if d == 0 {
        return Err(Error::InvalidArgument("dimension must be positive".into()));
    }
    let mut best = 0.0f64;
    for _ in 0..RANDOM_IC_BUDGET {
        let projectors: Vec<Matrix> = (0..d * d)
            .map(|_| {
                let v = Matrix::from_column_slice(d, 1, &haar_state(d, rng));
                &v * v.adjoint()
            })
            .collect();
        let s = projectors.iter().fold(Matrix::zeros(d, d), |acc, p| acc + p);
        if hermitian_eigenvalues(&s)[0] <= 1e-12 {
            continue;
        }
        let s_inv_half = tensor::hermitian_apply(&s, |x| 1.0 / libm::sqrt(x));
        let elements: Vec<Matrix> = projectors
            .iter()
            .map(|p| hermitize(&(&s_inv_half * p * &s_inv_half)))
            .collect();
        let frame = FrameOperator::of(&elements)?;
        best = best.max(frame.lambda_min);
        if frame.lambda_min > RANDOM_IC_LAMBDA_FLOOR {
            return IcPovm::new(elements, PovmKind::Povm);
        }
    }
    Err(Error::SingularFrame { lambda_min: best })
}

/// SIC tensor power for `d = 2^k`, a randomized IC POVM otherwise.
pub fn ic_povm_for_dim<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<IcPovm> {
    if d >= 2 && d.is_power_of_two() {
        sic_qubit_power(d.trailing_zeros() as usize)
    } else {
        random_ic_povm(d, rng)
    }
}

/// Sandwich on `||rho - sigma||_2^2` from Born-probability differences.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormBounds {
    pub lower: f64,
    pub upper: f64,
    pub hs: f64,
}

impl NormBounds {
    pub fn holds(&self, tol: f64) -> bool {
        self.lower <= self.hs + tol && self.hs <= self.upper + tol
    }
}

pub fn frame_norm_bounds(povm: &IcPovm, rho: &Matrix, sigma: &Matrix) -> Result<NormBounds> {
    let p = povm.born(rho);
    let q = povm.born(sigma);
    let sq: f64 = p.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum();
    let hs = tensor::hs_norm_matrix(&(rho - sigma))?;
    Ok(NormBounds {
        lower: sq / povm.frame().lambda_max,
        upper: sq / povm.frame().lambda_min,
        hs: hs * hs,
    })
}

/// Two-system linear-inversion estimate
/// `rho_hat = sum_{ab} p[a][b] D_a (x) E_b`, Hermitised but not projected.
/// `probs` is row-major over `(a, b)`.
pub fn reconstruct_bipartite(povm_a: &IcPovm, povm_b: &IcPovm, probs: &[f64]) -> Result<Matrix> {
    let (ma, mb) = (povm_a.len(), povm_b.len());
    if probs.len() != ma * mb {
        return Err(Error::DimensionMismatch {
            expected: ma * mb,
            found: probs.len(),
        });
    }
    if probs.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite);
    }
    let db = povm_b.dim();
    let mut out = Matrix::zeros(povm_a.dim() * db, povm_a.dim() * db);
    for (a, da) in povm_a.duals().iter().enumerate() {
        let mut row = Matrix::zeros(db, db);
        for (b, eb) in povm_b.duals().iter().enumerate() {
            row += eb * Complex64::from(probs[a * mb + b]);
        }
        out += da.kronecker(&row);
    }
    Ok(hermitize(&out))
}

/// Joint Born probabilities `Tr[(P_a (x) Q_b) rho]`, row-major over `(a, b)`.
pub fn born_bipartite(povm_a: &IcPovm, povm_b: &IcPovm, rho: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; povm_a.len() * povm_b.len()];
    for (a, p) in povm_a.elements().iter().enumerate() {
        for (b, q) in povm_b.elements().iter().enumerate() {
            out[a * povm_b.len() + b] = trace_product(&p.kronecker(q), rho).re;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{random_density, Spectrum};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_dev(m: &Matrix) -> f64 {
        (m - Matrix::identity(m.nrows(), m.ncols())).norm()
    }

    #[test]
    fn sic_is_complete_and_rank_one() {
        let sic = sic_qubit();
        let sum = sic.elements().iter().fold(Matrix::zeros(2, 2), |a, p| a + p);
        assert!(identity_dev(&sum) < 1e-12);
        for p in sic.elements() {
            assert!((p.trace().re - 0.5).abs() < 1e-15);
            assert_eq!(tensor::numerical_rank_matrix(p, 1e-10), 1);
        }
        // equiangular: Tr[P_j P_k] = 1/12 for j != k
        for j in 0..4 {
            for k in 0..4 {
                let t = trace_product(&sic.elements()[j], &sic.elements()[k]).re;
                let expect = if j == k { 0.25 } else { 1.0 / 12.0 };
                assert!((t - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn sic_frame_extremes() {
        let sic = sic_qubit();
        assert!((sic.frame().lambda_min - 1.0 / 6.0).abs() < 1e-12);
        assert!((sic.frame().lambda_max - 0.5).abs() < 1e-12);
        let states = sic.state_set().unwrap();
        assert_eq!(states.kind(), PovmKind::StateSet);
        assert!((states.frame().lambda_min - 2.0 / 3.0).abs() < 1e-12);
        let f = &sic.frame().matrix;
        let inv = sic.frame().inverse.as_ref().unwrap();
        assert!(identity_dev(&(inv * f)) < 1e-9);
    }

    #[test]
    fn identity_only_frame_is_not_ic() {
        let frame = FrameOperator::of(&[Matrix::identity(2, 2)]).unwrap();
        assert!(!frame.is_ic());
        assert!(frame.lambda_max >= frame.lambda_min);
        assert!(matches!(
            IcPovm::new(vec![Matrix::identity(2, 2)], PovmKind::Povm),
            Err(Error::SingularFrame { .. })
        ));
    }

    #[test]
    fn tensor_sic_frame_multiplies() {
        let sic2 = sic_qubit_power(2).unwrap();
        assert_eq!(sic2.len(), 16);
        let sum = sic2.elements().iter().fold(Matrix::zeros(4, 4), |a, p| a + p);
        assert!(identity_dev(&sum) < 1e-12);
        assert!((sic2.frame().lambda_min - 1.0 / 36.0).abs() < 1e-12);
    }

    #[test]
    fn random_ic_in_dimension_three() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let povm = ic_povm_for_dim(3, &mut rng).unwrap();
        assert_eq!(povm.len(), 9);
        let sum = povm.elements().iter().fold(Matrix::zeros(3, 3), |a, p| a + p);
        assert!(identity_dev(&sum) < 1e-10);
        assert!(povm.frame().lambda_min > RANDOM_IC_LAMBDA_FLOOR);
        assert_eq!(tensor::numerical_rank_matrix(&povm.frame().matrix, 1e-12), 9);
    }

    #[test]
    fn reconstruct_inverts_born() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let sic = sic_qubit();
        for _ in 0..20 {
            let rho = random_density(2, 2, Spectrum::Random, &mut rng).unwrap();
            let back = sic.reconstruct(&sic.born(&rho)).unwrap();
            assert!((back - &rho).norm() < 1e-10);
        }
        let half = sic.reconstruct(&[0.25; 4]).unwrap();
        assert!((half - Matrix::identity(2, 2) * Complex64::from(0.5)).norm() < 1e-14);
    }

    #[test]
    fn reconstruct_is_linear() {
        let sic = sic_qubit();
        let p = [0.1, 0.2, 0.3, 0.4];
        let q = [0.4, -0.1, 0.05, 0.2];
        let pq: Vec<f64> = p.iter().zip(&q).map(|(a, b)| a + b).collect();
        let lhs = sic.reconstruct(&pq).unwrap();
        let rhs = sic.reconstruct(&p).unwrap() + sic.reconstruct(&q).unwrap();
        assert!((lhs - rhs).norm() < 1e-14);
    }

    #[test]
    fn norm_bounds_bloch_example() {
        let sic = sic_qubit();
        // pure states with Bloch vectors z and x: ||rho - sigma||_2^2 = |r1 - r2|^2 / 2 = 1
        let rho = bloch_projector(&[0.0, 0.0, 1.0]);
        let sigma = bloch_projector(&[1.0, 0.0, 0.0]);
        let b = frame_norm_bounds(&sic, &rho, &sigma).unwrap();
        assert!((b.hs - 1.0).abs() < 1e-12);
        assert!(b.holds(1e-12));
        let same = frame_norm_bounds(&sic, &rho, &rho).unwrap();
        assert_eq!((same.lower, same.upper), (0.0, 0.0));
        assert!(same.hs < 1e-30);
    }

    #[test]
    fn bipartite_reconstruction_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let sic = sic_qubit();
        let rho = random_density(4, 3, Spectrum::Random, &mut rng).unwrap();
        let p = born_bipartite(&sic, &sic, &rho);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let back = reconstruct_bipartite(&sic, &sic, &p).unwrap();
        assert!((back - rho).norm() < 1e-10);
    }

    #[test]
    fn transposed_inputs_are_states_with_uniform_weights_for_sic() {
        let sic = sic_qubit();
        let w = sic.input_weights();
        assert!(w.iter().all(|&x| (x - 0.25).abs() < 1e-15));
        for psi in sic.transposed_inputs() {
            assert!((psi.trace().re - 1.0).abs() < 1e-14);
            assert!((psi.clone() * &psi - &psi).norm() < 1e-14);
        }
    }
}
