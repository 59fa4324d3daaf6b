//! Randomized invariants of tensors, metrics, splitting and the tape.

use std::collections::HashSet;

use proptest::prelude::*;
use tattnet::data::{split, synthetic::generate_synthetic, synthetic::SyntheticConfig};
use tattnet::metrics::{auprc, auroc, auroc_trapezoid};
use tattnet::tensor::MASKED;
use tattnet::{Tape, Tensor};

fn matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Tensor> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(m, n)| {
        prop::collection::vec(-20.0f64..20.0, m * n).prop_map(move |d| Tensor::new(&[m, n], d).unwrap())
    })
}

/// Scores drawn from a small grid so that ties are common, with at least
/// one label of each class.
fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..80).prop_flat_map(|n| {
        (
            prop::collection::vec((0i32..12).prop_map(|k| k as f64 / 4.0), n),
            prop::collection::vec(0u8..=1, n),
        )
            .prop_map(|(s, mut l)| {
                l[0] = 1;
                l[1] = 0;
                (s, l)
            })
    })
}

proptest! {
    #[test]
    fn softmax_slices_sum_to_one(x in matrix(6, 6), axis in 0usize..2) {
        let s = x.softmax(axis).unwrap();
        let (m, n) = (x.shape()[0], x.shape()[1]);
        let (outer, inner) = if axis == 0 { (n, m) } else { (m, n) };
        for o in 0..outer {
            let total: f64 = (0..inner).map(|k| if axis == 0 { s.at2(k, o) } else { s.at2(o, k) }).sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
        }
        prop_assert!(s.data().iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn masked_entries_get_exactly_zero(x in matrix(1, 8), keep in 0usize..8) {
        let n = x.shape()[1];
        let keep = keep % n;
        let mut d = x.data().to_vec();
        for (k, v) in d.iter_mut().enumerate() {
            if k % 2 == 1 && k != keep {
                *v = MASKED;
            }
        }
        let s = Tensor::new(&[1, n], d.clone()).unwrap().softmax(1).unwrap();
        for k in 0..n {
            if d[k] == MASKED {
                prop_assert_eq!(s.at2(0, k), 0.0);
            }
        }
        prop_assert!((s.sum() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn softmax_ignores_a_common_shift(x in matrix(4, 5), c in -50.0f64..50.0) {
        let a = x.softmax(1).unwrap();
        let b = x.map(|v| v + c).softmax(1).unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            prop_assert!((p - q).abs() <= 1e-12);
        }
    }

    #[test]
    fn segment_ops_agree_with_per_segment_softmax(x in matrix(3, 9), cut in 1usize..9) {
        let n = x.shape()[1];
        let lens = if cut < n { vec![cut, n - cut] } else { vec![n] };
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let s = tape.segment_softmax(v, lens.clone()).unwrap();
        let sums = tape.segment_sum(s, lens.clone()).unwrap();
        let out = tape.value(s).clone();
        for p in tape.value(sums).data() {
            prop_assert!((p - 1.0).abs() <= 1e-12);
        }
        let mut start = 0;
        for len in lens {
            for i in 0..x.shape()[0] {
                let part = Tensor::vector(x.row(i)[start..start + len].to_vec()).softmax(0).unwrap();
                for k in 0..len {
                    prop_assert!((out.at2(i, start + k) - part.data()[k]).abs() <= 1e-12);
                }
            }
            start += len;
        }
    }

    #[test]
    fn auroc_is_a_rank_statistic((s, l) in scored(), shift in -3.0f64..3.0, gain in 0.1f64..5.0) {
        let base = auroc(&s, &l).unwrap();
        let moved: Vec<f64> = s.iter().map(|x| (gain * x + shift).exp()).collect();
        prop_assert!((auroc(&moved, &l).unwrap() - base).abs() <= 1e-12);
        prop_assert!((auprc(&moved, &l).unwrap() - auprc(&s, &l).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn flipping_labels_mirrors_auroc((s, l) in scored()) {
        let flipped: Vec<u8> = l.iter().map(|&y| 1 - y).collect();
        let sum = auroc(&s, &l).unwrap() + auroc(&s, &flipped).unwrap();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn trapezoid_matches_rank_formula((s, l) in scored()) {
        let a = auroc(&s, &l).unwrap();
        let b = auroc_trapezoid(&s, &l).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn average_precision_is_a_probability((s, l) in scored()) {
        let ap = auprc(&s, &l).unwrap();
        prop_assert!(ap > 0.0 && ap <= 1.0);
        // A perfect ranking reaches one.
        let perfect: Vec<f64> = l.iter().map(|&y| y as f64).collect();
        prop_assert_eq!(auprc(&perfect, &l).unwrap(), 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn split_partitions_the_ids(journeys in 10usize..120, seed in 0u64..1000) {
        let cfg = SyntheticConfig { journeys, n_features: 2, t_min: 2, t_max: 4, g_c: 2, g_d: 2, ..Default::default() };
        let data = generate_synthetic(&cfg, seed).unwrap();
        let s = split(&data, seed).unwrap();
        let all: Vec<&String> = s.train.iter().chain(&s.valid).chain(&s.test).collect();
        prop_assert_eq!(all.len(), journeys);
        let unique: HashSet<&String> = all.iter().copied().collect();
        prop_assert_eq!(unique.len(), journeys);
        prop_assert_eq!(s.clone(), split(&data, seed).unwrap());
        prop_assert!(s.train.len() >= s.test.len() && s.test.len() >= s.valid.len());
    }
}
