mod common;

use num_complex::Complex64;
use proptest::prelude::*;
use qrkd::qsim::{encode_features, pauli_expectations, reduced_density_matrix, EncodingSpec, StateVector};
use qrkd::Error;

fn features(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, 1..=max_len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn encoder_matches_kronecker_oracle(n in 1usize..=4, layers in 1usize..=3, normalize: bool, seed: u64) {
        let mut rng = common::rng(seed);
        let len = 1 + (seed as usize) % (n * layers);
        let x = common::normal_vec(&mut rng, len, 1.2);
        let spec = EncodingSpec { normalize, ..EncodingSpec::raw(n, layers) };
        let got = encode_features(&x, &spec).unwrap();
        let want = common::oracle_state(&x, n, layers, normalize);
        for (a, b) in got.amplitudes().iter().zip(&want) {
            prop_assert!((a - b).norm() <= 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn gate_sequences_preserve_norm(
        n in 1usize..=6,
        gates in prop::collection::vec((0usize..6, 0usize..6, -7.0f64..7.0, any::<bool>()), 0..40),
    ) {
        let mut s = StateVector::zero_state(n).unwrap();
        for (a, b, theta, is_ry) in gates {
            let (a, b) = (a % n, b % n);
            if is_ry {
                s = s.apply_ry(a, theta).unwrap();
            } else if a != b {
                s = s.apply_cnot(a, b).unwrap();
            }
            prop_assert!((s.norm_sqr() - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn reduced_states_are_valid(x in features(12), n in 1usize..=4) {
        let spec = EncodingSpec::fitting(n, x.len(), false);
        let state = encode_features(&x, &spec).unwrap();
        let dense: Vec<Complex64> = state.amplitudes().to_vec();
        for q in 0..n {
            let rho = reduced_density_matrix(&state, q).unwrap();
            prop_assert!(rho.is_hermitian(1e-12));
            prop_assert!((rho.trace() - Complex64::new(1.0, 0.0)).norm() <= 1e-10);
            prop_assert!(rho.eigenvalues()[0] >= -1e-10);
            let p = rho.purity();
            prop_assert!((0.5 - 1e-10..=1.0 + 1e-10).contains(&p));

            let oracle = common::oracle_rdm(&dense, n, q);
            let bloch = pauli_expectations(&state, q).unwrap().to_density_matrix();
            for i in 0..2 {
                for j in 0..2 {
                    prop_assert!((rho.entries[i][j] - oracle[i][j]).norm() <= 1e-10);
                    prop_assert!((rho.entries[i][j] - bloch.entries[i][j]).norm() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn normalization_makes_encoding_scale_free(x in features(8), scale in 0.01f64..100.0) {
        let spec = EncodingSpec::normalized(2, 4);
        prop_assume!(x.iter().any(|v| v.abs() > 1e-6));
        let scaled: Vec<f64> = x.iter().map(|v| v * scale).collect();
        let a = encode_features(&x, &spec).unwrap();
        let b = encode_features(&scaled, &spec).unwrap();
        for (p, q) in a.amplitudes().iter().zip(b.amplitudes()) {
            prop_assert!((p - q).norm() <= 1e-10);
        }
    }
}

#[test]
fn bloch_vectors_of_known_states() {
    let z = pauli_expectations(&StateVector::zero_state(1).unwrap(), 0).unwrap();
    assert_eq!(z.as_array(), [0.0, 0.0, 1.0]);

    let plus = StateVector::zero_state(1).unwrap().apply_ry(0, std::f64::consts::FRAC_PI_2).unwrap();
    let b = pauli_expectations(&plus, 0).unwrap().as_array();
    for (got, want) in b.iter().zip([1.0, 0.0, 0.0]) {
        assert!((got - want).abs() < 1e-12);
    }

    let r = std::f64::consts::FRAC_1_SQRT_2;
    let bell = StateVector::from_amplitudes(vec![Complex64::new(r, 0.0), Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(r, 0.0)]).unwrap();
    for q in 0..2 {
        let b = pauli_expectations(&bell, q).unwrap().as_array();
        assert!(b.iter().all(|v| v.abs() < 1e-12));
        assert!((reduced_density_matrix(&bell, q).unwrap().purity() - 0.5).abs() < 1e-12);
    }
}

#[test]
fn capacity_and_padding() {
    assert!(matches!(StateVector::zero_state(21), Err(Error::Capacity(_))));
    let spec = EncodingSpec::raw(2, 2);
    assert!(matches!(encode_features(&[0.1; 5], &spec), Err(Error::Capacity(_))));
    // Padding with zero angles changes nothing.
    let short = encode_features(&[0.4, -0.3], &spec).unwrap();
    let padded = encode_features(&[0.4, -0.3, 0.0, 0.0], &spec).unwrap();
    assert_eq!(short, padded);
}
