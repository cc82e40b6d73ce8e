use num_bigint::BigUint;
use proptest::prelude::*;

use vcbench_core::nets::{round_simplex, softmax};
use vcbench_core::outputguard::{alphabet_size, entropy_bound};

/// Counts vectors of `n` non-negative integers summing to `total` by
/// walking every prefix.
fn enumerate(total: u64, n: usize) -> u64 {
    fn walk(left: u64, slots: usize) -> u64 {
        if slots == 1 {
            return 1;
        }
        (0..=left).map(|v| walk(left - v, slots - 1)).sum()
    }
    walk(total, n)
}

#[test]
fn worked_alphabet_sizes_match_enumeration() {
    for (q, n, expected) in [(1u32, 2usize, 11u64), (1, 3, 66), (2, 2, 101)] {
        let got = alphabet_size(q, n).unwrap();
        assert_eq!(got, BigUint::from(expected));
        assert_eq!(enumerate(10u64.pow(q), n), expected);
    }
}

#[test]
fn small_alphabets_match_enumeration_exhaustively() {
    for n in 2..=4 {
        assert_eq!(alphabet_size(1, n).unwrap(), BigUint::from(enumerate(10, n)), "q=1 n={n}");
    }
    for n in 2..=3 {
        assert_eq!(alphabet_size(2, n).unwrap(), BigUint::from(enumerate(100, n)), "q=2 n={n}");
    }
}

#[test]
fn entropy_bound_is_monotone() {
    let grid: Vec<Vec<f64>> = (1..=5u32).map(|q| (2..=6).map(|n| entropy_bound(q, n).unwrap()).collect()).collect();
    for q in 0..5 {
        for n in 0..5 {
            if q + 1 < 5 {
                assert!(grid[q + 1][n] > grid[q][n], "q monotone at ({q}, {n})");
            }
            if n + 1 < 5 {
                assert!(grid[q][n + 1] > grid[q][n], "n monotone at ({q}, {n})");
            }
        }
    }
}

#[test]
fn large_alphabets_stay_exact() {
    // C(10^6 + 9, 9) for a ten-class softmax at six decimals
    let a = alphabet_size(6, 10).unwrap();
    let mut expect = BigUint::from(1u32);
    for i in 1..=9u64 {
        expect = expect * BigUint::from(1_000_000u64 + i) / BigUint::from(i);
    }
    assert_eq!(a, expect);
    let bits = entropy_bound(6, 10).unwrap();
    assert!((bits - (a.to_string().len() as f64 - 1.0) * 10f64.log2()).abs() < 4.0);
}

#[test]
fn invalid_alphabets_are_rejected() {
    assert!(alphabet_size(0, 3).is_err());
    assert!(alphabet_size(2, 1).is_err());
    assert!(entropy_bound(1, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// Rounded softmax vectors always land in the counted alphabet: entries
    /// are non-negative multiples of 10^-q summing to one.
    #[test]
    fn rounded_vectors_are_alphabet_members(
        z in prop::collection::vec(-8.0f64..8.0, 2..6),
        q in 1u32..4,
    ) {
        let scale = 10f64.powi(q as i32);
        let r = round_simplex(&softmax(&z), q);
        let counts: Vec<i64> = r.iter().map(|v| (v * scale).round() as i64).collect();
        prop_assert!(counts.iter().all(|&c| c >= 0));
        prop_assert_eq!(counts.iter().sum::<i64>(), 10i64.pow(q));
        for (v, c) in r.iter().zip(&counts) {
            prop_assert!((v * scale - *c as f64).abs() < 1e-6);
        }
    }
}
