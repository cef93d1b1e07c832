use num_complex::Complex64;
use proptest::prelude::*;
use qcausal_core::comb::{build_choi, check_comb_condition, gen_unitary_comb, CausalOrder, ChoiState, DEFAULT_DIM_CAP};
use qcausal_core::discovery::discover_general;
use qcausal_core::oracle::{CombOracle, OracleSession, SessionConfig};
use qcausal_core::povm::{frame_norm_bounds, ic_povm_for_dim, sic_qubit};
use qcausal_core::tensor::{self, random_density, Matrix, Op, Spectrum, Wire, WireSpace};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_hermitian(d: usize, seed: u64) -> Matrix {
    let mut r = rng(seed);
    let a = random_density(d, d, Spectrum::Random, &mut r).unwrap();
    let b = random_density(d, d, Spectrum::Random, &mut r).unwrap();
    a * Complex64::from(1.7) - b * Complex64::from(0.4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn partial_trace_of_product_recovers_factor(seed in any::<u64>(), da in 1usize..4, db in 1usize..4) {
        let mut r = rng(seed);
        let a = random_density(da, 1.max(da / 2), Spectrum::Random, &mut r).unwrap();
        let b = random_density(db, db, Spectrum::Random, &mut r).unwrap();
        let x = Op::on_wire(Wire::Input(1), a.clone()).unwrap();
        let y = Op::on_wire(Wire::Output(2), b).unwrap();
        let xy = x.tensor(&y).unwrap();
        prop_assert!((xy.trace().re - 1.0).abs() < 1e-12);
        let back = xy.partial_trace(&[Wire::Input(1)]).unwrap();
        prop_assert!((back.matrix() - a).norm() < 1e-12);
        prop_assert!(tensor::chi1(&xy, &[Wire::Input(1)]).unwrap() < 1e-12);
    }

    #[test]
    fn permutation_round_trip(seed in any::<u64>()) {
        let mut r = rng(seed);
        let rho = random_density(12, 4, Spectrum::Random, &mut r).unwrap();
        let space = WireSpace::new(vec![Wire::Input(1), Wire::Output(1), Wire::Input(2)], vec![2, 3, 2]).unwrap();
        let op = Op::new(space, rho).unwrap();
        let p = op.permuted(&[Wire::Input(2), Wire::Input(1), Wire::Output(1)]).unwrap();
        let back = p.permuted(op.wires()).unwrap();
        prop_assert!((back.matrix() - op.matrix()).norm() < 1e-15);
        prop_assert!((p.trace_norm().unwrap() - op.trace_norm().unwrap()).abs() < 1e-10);
    }

    #[test]
    fn reconstruction_inverts_born_rule(seed in any::<u64>(), d in 2usize..5) {
        let povm = ic_povm_for_dim(d, &mut rng(seed ^ 0xabc)).unwrap();
        let x = random_hermitian(d, seed);
        let back = povm.reconstruct(&povm.born(&x)).unwrap();
        prop_assert!((back - x).norm() < 1e-9);
        let sum = povm.elements().iter().fold(Matrix::zeros(d, d), |acc, p| acc + p);
        prop_assert!((sum - Matrix::identity(d, d)).norm() < 1e-10);
        for psi in povm.state_set().unwrap().elements() {
            prop_assert!(psi.check_density_like());
        }
    }

    #[test]
    fn frame_sandwich_holds(seed in any::<u64>()) {
        let mut r = rng(seed);
        let sic = sic_qubit();
        let rho = random_density(2, 1 + (seed % 2) as usize, Spectrum::Random, &mut r).unwrap();
        let sigma = random_density(2, 2, Spectrum::Random, &mut r).unwrap();
        let b = frame_norm_bounds(&sic, &rho, &sigma).unwrap();
        prop_assert!(b.holds(1e-12), "{:?}", b);
    }

    #[test]
    fn trace_and_hs_norm_chain(seed in any::<u64>(), d in 2usize..6) {
        let mut r = rng(seed);
        let rho = random_density(d, 1 + (seed as usize) % d, Spectrum::Random, &mut r).unwrap();
        let sigma = random_density(d, 1 + (seed as usize / 7) % d, Spectrum::Random, &mut r).unwrap();
        let diff = &rho - &sigma;
        let t = tensor::trace_norm_matrix(&diff).unwrap();
        let h = tensor::hs_norm_matrix(&diff).unwrap();
        let rank = tensor::numerical_rank_matrix(&diff, 1e-10) as f64;
        let ranks = (tensor::numerical_rank_matrix(&rho, 1e-10) + tensor::numerical_rank_matrix(&sigma, 1e-10)) as f64;
        prop_assert!(t * t <= rank * h * h + 1e-10);
        prop_assert!(rank * h * h <= ranks * h * h + 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generated_combs_satisfy_their_true_order(seed in any::<u64>(), n in 1usize..4, dm_pow in 0u32..3) {
        let spec = gen_unitary_comb(n, 2, 1 << dm_pow, &mut rng(seed)).unwrap();
        let choi = build_choi(&spec, DEFAULT_DIM_CAP).unwrap();
        prop_assert!(ChoiState::new(choi.op().clone(), 1e-9).is_ok());
        let check = check_comb_condition(&choi, &spec.true_order(), 1e-9).unwrap();
        prop_assert!(check.ok, "{:?}", check.deviations);
        prop_assert!(choi.op().numerical_rank(1e-10) <= 1 << dm_pow);
    }

    #[test]
    fn exact_general_discovery_is_sound(seed in any::<u64>(), n in 1usize..4, dm_pow in 0u32..3) {
        let spec = gen_unitary_comb(n, 2, 1 << dm_pow, &mut rng(seed)).unwrap();
        let session = OracleSession::new(&spec, SessionConfig::exact(seed)).unwrap();
        let choi = session.audit_choi().clone();
        let report = discover_general(session, 1e-6, 0.05).unwrap();
        let order = report.order.expect("valid comb never fails");
        prop_assert!(check_comb_condition(&choi, &order, 1e-8).unwrap().ok);
    }

    #[test]
    fn discovery_is_equivariant_under_relabelling(seed in any::<u64>(), n in 2usize..4) {
        // with memory the causal order is generically unique, so relabelled
        // runs must return the relabelled order
        let spec = gen_unitary_comb(n, 2, 2, &mut rng(seed)).unwrap();
        let base = OracleSession::new(&spec, SessionConfig::exact(seed)).unwrap();
        let choi = base.audit_choi().clone();
        let report = discover_general(base, 1e-6, 0.05).unwrap();
        let order = report.order.unwrap();

        let mut perm: Vec<usize> = (1..=n).collect();
        perm.rotate_left(1);
        let rename = |w: Wire| match w {
            Wire::Input(k) => Wire::Input(perm[k - 1]),
            Wire::Output(k) => Wire::Output(perm[n - k]),
            other => other,
        };
        let relabelled = ChoiState::new(choi.op().relabel(rename).unwrap(), 1e-9).unwrap();
        let session = OracleSession::from_choi(relabelled, SessionConfig::exact(seed));
        prop_assert_eq!(session.inputs().len(), n);
        let permuted = discover_general(session, 1e-6, 0.05).unwrap().order.unwrap();
        let expected = CausalOrder::new(order.teeth().iter().map(|&(a, b)| (rename(a), rename(b))).collect()).unwrap();
        prop_assert_eq!(permuted, expected);
    }
}

trait DensityLike {
    fn check_density_like(&self) -> bool;
}

impl DensityLike for Matrix {
    fn check_density_like(&self) -> bool {
        let eig = tensor::hermitian_eigenvalues(self);
        (self.trace().re - 1.0).abs() < 1e-10 && eig[0] > -1e-10 && tensor::hermitian_deviation(self) < 1e-12
    }
}
