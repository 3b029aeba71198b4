use arw::field::{
    evaluate_point, make_coefficients, make_family, parseval_functionals, read_grid_dump,
    synthesize_grid, write_grid_dump,
};
use arw::lattice::enumerate_frequencies;
use num_complex::Complex64;
use proptest::prelude::*;

#[test]
fn coefficients_are_deterministic_and_hermitian() {
    let freq = enumerate_frequencies(26).unwrap();
    let a = make_coefficients(&freq, 7, 3, None).unwrap();
    let b = make_coefficients(&freq, 7, 3, None).unwrap();
    assert_eq!(a, b);
    assert_ne!(
        a.fingerprint(),
        make_coefficients(&freq, 7, 4, None).unwrap().fingerprint()
    );
    for (i, &j) in freq.antipodes().iter().enumerate() {
        assert_eq!(a.a[j], a.a[i].conj());
    }
}

#[test]
fn family_members_differ() {
    let freq = enumerate_frequencies(17).unwrap();
    let family = make_family(&freq, 1, 0, 3);
    assert_ne!(family[0].a, family[1].a);
    assert_ne!(family[1].a, family[2].a);
}

#[test]
fn asymmetric_override_is_rejected() {
    let freq = enumerate_frequencies(5).unwrap();
    let mut v = vec![Complex64::new(1.0, 0.0); freq.cardinality()];
    v[0] = Complex64::new(0.0, 1.0);
    assert!(make_coefficients(&freq, 0, 0, Some(&v)).is_err());
    assert!(make_coefficients(&freq, 0, 0, Some(&v[1..])).is_err());
}

#[test]
fn grid_matches_pointwise_evaluation() {
    let freq = enumerate_frequencies(29).unwrap();
    let coeffs = make_coefficients(&freq, 11, 0, None).unwrap();
    let m = 24;
    let grid = synthesize_grid(&freq, &coeffs, m).unwrap();
    let gradients = grid.gradients.as_ref().unwrap();
    for &(i, j, k) in &[(0, 0, 0), (3, 17, 5), (23, 1, 12), (10, 10, 10)] {
        let x = [
            i as f64 / m as f64,
            j as f64 / m as f64,
            k as f64 / m as f64,
        ];
        let (v, g) = evaluate_point(&freq, &coeffs, x);
        let idx = grid.index(i, j, k);
        assert!((grid.values[idx] - v).abs() < 1e-10);
        for d in 0..3 {
            assert!((gradients[d][idx] - g[d]).abs() < 1e-10);
        }
    }
}

#[test]
fn grid_mean_square_matches_parseval() {
    let freq = enumerate_frequencies(41).unwrap();
    let coeffs = make_coefficients(&freq, 2, 0, None).unwrap();
    let grid = synthesize_grid(&freq, &coeffs, 32).unwrap();
    let mean_square = grid.values.iter().map(|v| v * v).sum::<f64>() / grid.values.len() as f64;
    let p = parseval_functionals(&freq, &coeffs);
    assert!((mean_square - 1.0 - p.centred_energy).abs() < 1e-10);
    assert!(p.mean.abs() < 1e-12);
}

#[test]
fn dump_round_trips() {
    let freq = enumerate_frequencies(6).unwrap();
    let coeffs = make_coefficients(&freq, 0, 0, None).unwrap();
    let grid = synthesize_grid(&freq, &coeffs, 8).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("grid.bin");
    write_grid_dump(&path, &grid, 0).unwrap();
    let (n, m, channel, values) = read_grid_dump(&path).unwrap();
    assert_eq!((n, m, channel), (6, 8, 0));
    assert_eq!(values, grid.values);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn translation_shifts_the_field(
        seed in 0u64..1000,
        t in prop::array::uniform3(-1.0f64..1.0),
        x in prop::array::uniform3(0.0f64..1.0),
    ) {
        let freq = enumerate_frequencies(14).unwrap();
        let coeffs = make_coefficients(&freq, seed, 0, None).unwrap();
        let shifted = coeffs.translated(&freq, t);
        let (a, _) = evaluate_point(&freq, &shifted, x);
        let (b, _) = evaluate_point(&freq, &coeffs, [x[0] + t[0], x[1] + t[1], x[2] + t[2]]);
        prop_assert!((a - b).abs() < 1e-10);
        let (c, _) = evaluate_point(&freq, &coeffs.negated(), x);
        let (d, _) = evaluate_point(&freq, &coeffs, x);
        prop_assert_eq!(c, -d);
    }
}
