use arw::chaos::gramian::{abs_det, phi_star};
use arw::kacrice::{
    chi_moment, conditional_jacobian_law, gramian_mean_check, nondegeneracy_radius,
    two_point_upper_bound, DEFAULT_C0,
};
use arw::lattice::enumerate_frequencies;
use proptest::prelude::*;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

fn lag(freq_n: u64, direction: [f64; 3], c: f64) -> [f64; 3] {
    let norm = direction.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale =
        c / (4.0 * std::f64::consts::PI * std::f64::consts::PI * freq_n as f64).sqrt() / norm;
    direction.map(|x| x * scale)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn two_point_bound_is_even(
        d in prop::array::uniform3(-1.0f64..1.0),
        c in 0.05f64..0.5,
        u in 0.0f64..3.0,
        ell in 1usize..=3,
    ) {
        prop_assume!(d.iter().map(|x| x * x).sum::<f64>() > 1e-3);
        let freq = enumerate_frequencies(17).unwrap();
        let z = lag(17, d, c);
        let minus = z.map(|x| -x);
        let a = two_point_upper_bound(&freq, z, u, ell).unwrap().q_value;
        let b = two_point_upper_bound(&freq, minus, u, ell).unwrap().q_value;
        prop_assert!(close(a, b, 1e-10));
    }

    #[test]
    fn omega_blocks_and_mean(
        d in prop::array::uniform3(-1.0f64..1.0),
        c in 0.05f64..2.0,
        u in -3.0f64..3.0,
    ) {
        prop_assume!(d.iter().map(|x| x * x).sum::<f64>() > 1e-3);
        let freq = enumerate_frequencies(5).unwrap();
        let law = conditional_jacobian_law(&freq, lag(5, d, c), u).unwrap();
        let (o1, o2) = (law.omega1(), law.omega2());
        for a in 0..3 {
            prop_assert!(close(law.mean[a], -law.mean[3 + a], 1e-14));
            for b in 0..3 {
                prop_assert!(close(o1[a][b], o1[b][a], 1e-12));
                prop_assert!(close(o2[a][b], o2[b][a], 1e-12));
                prop_assert!(close(law.covariance[3 + a][3 + b], o1[a][b], 1e-14));
            }
        }
        let at_zero = conditional_jacobian_law(&freq, law.z, 0.0).unwrap();
        prop_assert!(at_zero.mean.iter().all(|m| *m == 0.0));
    }

    #[test]
    fn chi_even_moments_are_products(k in 1usize..8, m in 0usize..6) {
        let product: f64 = (0..m).map(|i| (k + 2 * i) as f64).product();
        prop_assert!(close(chi_moment(k, 2 * m), product, 1e-12));
    }

    #[test]
    fn phi_star_is_abs_det_for_square_matrices(x in prop::array::uniform9(-3.0f64..3.0)) {
        let rows: Vec<&[f64]> = x.chunks(3).collect();
        prop_assert!(close(phi_star(&rows), abs_det(&rows), 1e-10));
    }
}

#[test]
fn omega1_is_isotropic_where_gradient_vanishes() {
    // r is even, so ∇r vanishes at every half-period point
    let freq = enumerate_frequencies(1).unwrap();
    let e = freq.energy() / 3.0;
    for z in [[0.5, 0.0, 0.0], [0.5, 0.5, 0.0], [0.0, 0.0, 0.5]] {
        let law = conditional_jacobian_law(&freq, z, 1.0).unwrap();
        let o1 = law.omega1();
        for a in 0..3 {
            assert!(law.mean[a].abs() < 1e-9);
            for b in 0..3 {
                let want = if a == b { e } else { 0.0 };
                assert!((o1[a][b] - want).abs() < 1e-9 * e, "{z:?}");
            }
        }
    }
}

#[test]
fn nondegeneracy_radius_holds_for_small_n() {
    for n in [1, 2, 5, 17] {
        let freq = enumerate_frequencies(n).unwrap();
        let radius = nondegeneracy_radius(&freq, DEFAULT_C0, 1000, n).unwrap();
        assert!(close(radius, DEFAULT_C0 / freq.energy().sqrt(), 1e-15));
    }
}

#[test]
fn gramian_law_matches_chi_product() {
    let check = gramian_mean_check(2, 3, 100_000, 4);
    assert!(check.ks_statistic < 0.01, "KS {}", check.ks_statistic);
    let check = gramian_mean_check(1, 3, 1_000_000, 5);
    assert!(
        (check.mc_mean - check.alpha_prediction).abs() < 0.01 * check.alpha_prediction,
        "{} vs {}",
        check.mc_mean,
        check.alpha_prediction
    );
}
