use arw::chaos::projection::variance_constant;
use arw::chaos::{compute_rv1, hermite, proj4, proj4_contracted, LimitLawSpec, PairBuckets};
use arw::field::make_family;
use arw::lattice::enumerate_frequencies;
use proptest::prelude::*;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

#[test]
fn pair_buckets_agree_with_streaming() {
    for (n, ell) in [(5, 1), (17, 2), (26, 3), (41, 2)] {
        let freq = enumerate_frequencies(n).unwrap();
        let buckets = PairBuckets::new(&freq);
        for rep in 0..3 {
            let sets = make_family(&freq, 99, rep, ell);
            let streamed = proj4(&compute_rv1(&sets, &freq).unwrap());
            let bucketed = proj4_contracted(&buckets.contracted_statistics(&sets, &freq).unwrap());
            assert!(
                close(streamed, bucketed, 1e-9),
                "n = {n}: {streamed} vs {bucketed}"
            );
        }
    }
}

#[test]
fn limit_law_variance_matches_constant() {
    for ell in 1..=3 {
        let law = LimitLawSpec::new(ell);
        assert!(close(
            law.weighted_variance(),
            variance_constant(ell),
            1e-12
        ));
    }
    assert!(close(variance_constant(1), 1.0 / 250.0, 1e-15));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn proj4_is_translation_and_sign_invariant(
        seed in 0u64..10_000,
        ell in 1usize..=3,
        t in prop::array::uniform3(0.0f64..1.0),
        flip in 0usize..3,
    ) {
        let freq = enumerate_frequencies(21).unwrap();
        let sets = make_family(&freq, seed, 0, ell);
        let base = proj4(&compute_rv1(&sets, &freq).unwrap());

        let moved: Vec<_> = sets.iter().map(|s| s.translated(&freq, t)).collect();
        let translated = proj4(&compute_rv1(&moved, &freq).unwrap());
        prop_assert!(close(base, translated, 1e-9));

        let mut flipped = sets.clone();
        let i = flip % ell;
        flipped[i] = flipped[i].negated();
        let negated = proj4(&compute_rv1(&flipped, &freq).unwrap());
        prop_assert!(close(base, negated, 1e-12));
    }

    #[test]
    fn proj4_is_symmetric_in_the_waves(seed in 0u64..10_000) {
        let freq = enumerate_frequencies(14).unwrap();
        let sets = make_family(&freq, seed, 0, 3);
        let base = proj4(&compute_rv1(&sets, &freq).unwrap());
        let permuted = vec![sets[2].clone(), sets[0].clone(), sets[1].clone()];
        prop_assert!(close(base, proj4(&compute_rv1(&permuted, &freq).unwrap()), 1e-10));
    }

    #[test]
    fn hermite_recurrence(x in -5.0f64..5.0, j in 1usize..8) {
        let lhs = hermite(j + 1, x);
        let rhs = x * hermite(j, x) - j as f64 * hermite(j - 1, x);
        prop_assert!(close(lhs, rhs, 1e-12));
    }
}
