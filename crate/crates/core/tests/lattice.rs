use arw::lattice::{
    correlation_census, correlation_census_streaming, decode_frequency_set, encode_frequency_set,
    enumerate_frequencies, is_admissible, is_canonical, lattice_moments, load_or_enumerate,
};
use proptest::prelude::*;

fn brute_force(n: u64) -> Vec<[i32; 3]> {
    let r = (n as f64).sqrt().ceil() as i32;
    let mut out = Vec::new();
    for a in -r..=r {
        for b in -r..=r {
            for c in -r..=r {
                if (a * a + b * b + c * c) as u64 == n {
                    out.push([a, b, c]);
                }
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn enumeration_matches_brute_force(n in 1u64..600) {
        match enumerate_frequencies(n) {
            Ok(freq) => {
                prop_assert_eq!(&freq.points, &brute_force(n));
                prop_assert_eq!(freq.admissible, is_admissible(n));
            }
            Err(_) => prop_assert!(brute_force(n).is_empty()),
        }
    }

    #[test]
    fn closed_under_negation(n in 1u64..2000) {
        if let Ok(freq) = enumerate_frequencies(n) {
            let anti = freq.antipodes();
            for (i, &j) in anti.iter().enumerate() {
                prop_assert_eq!(anti[j], i);
                prop_assert_ne!(is_canonical(freq.points[i]), is_canonical(freq.points[j]));
            }
        }
    }

    #[test]
    fn second_moment_is_isotropic(n in 1u64..2000) {
        if let Ok(freq) = enumerate_frequencies(n) {
            let count = freq.cardinality() as f64;
            for j in 0..3 {
                for k in 0..3 {
                    let s: f64 = freq.points.iter().map(|p| (p[j] * p[k]) as f64).sum::<f64>() / count / n as f64;
                    let want = if j == k { 1.0 / 3.0 } else { 0.0 };
                    prop_assert!((s - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn cache_encoding_round_trips(n in 1u64..3000) {
        if let Ok(freq) = enumerate_frequencies(n) {
            prop_assert_eq!(decode_frequency_set(&encode_frequency_set(&freq)).unwrap(), freq);
        }
    }
}

#[test]
fn truncated_cache_is_rejected() {
    let bytes = encode_frequency_set(&enumerate_frequencies(17).unwrap());
    assert!(decode_frequency_set(&bytes[..bytes.len() - 1]).is_err());
    assert!(decode_frequency_set(b"nope").is_err());
}

#[test]
fn cache_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let first = load_or_enumerate(dir.path(), 101).unwrap();
    let second = load_or_enumerate(dir.path(), 101).unwrap();
    assert_eq!(first, second);
    assert_eq!(first, enumerate_frequencies(101).unwrap());
}

#[test]
fn census_paths_agree_and_match_identity() {
    for n in [3, 9, 17, 26, 74] {
        let freq = enumerate_frequencies(n).unwrap();
        let bucketed = correlation_census(&freq, 4).unwrap();
        let streamed = correlation_census_streaming(&freq, 4).unwrap();
        assert_eq!(bucketed.card_c, streamed.card_c, "n = {n}");
        let count = freq.cardinality() as u64;
        assert_eq!(
            bucketed.card_x4,
            Some(bucketed.card_c + 3 * count - 3 * count * count)
        );
    }
}

#[test]
fn fourth_moment_deviation_is_small_for_large_n() {
    let freq = enumerate_frequencies(4826).unwrap();
    assert!(lattice_moments(&freq).fourth_moment_deviation() < 0.1);
}
