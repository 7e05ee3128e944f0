mod common;

use gdgm::metrics::{auc, compute_metrics, decide};
use gdgm::wavelet::threshold_labels;
use proptest::prelude::*;

fn brute_auc(s: &[f64], y: &[u8]) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if y[i] == 1 && y[j] == 0 {
                den += 1.0;
                num += if s[i] > s[j] { 1.0 } else if s[i] == s[j] { 0.5 } else { 0.0 };
            }
        }
    }
    (den > 0.0).then(|| num / den)
}

proptest! {
    #[test]
    fn auc_matches_pairwise_count(pts in prop::collection::vec((0u8..8, 0u8..2), 1..100)) {
        let s: Vec<f64> = pts.iter().map(|p| f64::from(p.0) / 8.0).collect();
        let y: Vec<u8> = pts.iter().map(|p| p.1).collect();
        prop_assert_eq!(auc(&s, &y).unwrap(), brute_auc(&s, &y));
    }

    #[test]
    fn confusion_metrics_match_hand_counts(pts in prop::collection::vec((0.0f64..1.0, 0u8..2), 1..100), z in 0.01f64..0.99) {
        let s: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let y: Vec<u8> = pts.iter().map(|p| p.1).collect();
        let d: Vec<u8> = s.iter().map(|&p| decide(p, z)).collect();
        let m = compute_metrics(&s, &d, &y, z).unwrap();
        let tp = d.iter().zip(&y).filter(|&(&a, &b)| a == 1 && b == 1).count();
        let fp = d.iter().zip(&y).filter(|&(&a, &b)| a == 1 && b == 0).count();
        let fn_ = d.iter().zip(&y).filter(|&(&a, &b)| a == 0 && b == 1).count();
        let hamming = d.iter().zip(&y).filter(|&(a, b)| a != b).count();
        prop_assert_eq!(m.n_tp + m.n_fp + m.n_tn + m.n_fn, s.len());
        prop_assert_eq!(m.accuracy, (s.len() - hamming) as f64 / s.len() as f64);
        if tp + fp > 0 { prop_assert_eq!(m.precision, tp as f64 / (tp + fp) as f64); }
        if tp + fn_ > 0 { prop_assert_eq!(m.recall, tp as f64 / (tp + fn_) as f64); }
        if m.precision + m.recall > 0.0 {
            prop_assert_eq!(m.f1, 2.0 * m.precision * m.recall / (m.precision + m.recall));
        }
    }

    #[test]
    fn decide_monotone(p in 0.0f64..1.0, q in 0.0f64..1.0, z in 0.01f64..0.99, w in 0.01f64..0.99) {
        let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
        prop_assert!(decide(lo, z) <= decide(hi, z));
        let (zl, zh) = if z <= w { (z, w) } else { (w, z) };
        prop_assert!(decide(p, zh) <= decide(p, zl));
    }

    #[test]
    fn pseudo_labels_keep_known(ps in prop::collection::vec((0.0f64..1.0, prop::option::of(0u8..2)), 1..200), z in 0.01f64..0.99) {
        let p: Vec<f64> = ps.iter().map(|x| x.0).collect();
        let known: Vec<Option<u8>> = ps.iter().map(|x| x.1).collect();
        let out = threshold_labels(&p, z, &known);
        for i in 0..p.len() {
            match known[i] {
                Some(l) => prop_assert_eq!(out[i], l),
                None => prop_assert_eq!(out[i], u8::from(p[i] > z)),
            }
        }
    }
}

#[test]
fn random_scores_near_half() {
    use rand::Rng;
    let mut r = common::rng(99);
    let s: Vec<f64> = (0..1000).map(|_| r.random()).collect();
    let y: Vec<u8> = (0..1000).map(|i| (i % 2) as u8).collect();
    let a = auc(&s, &y).unwrap().unwrap();
    assert!((0.45..=0.55).contains(&a), "{a}");
}

#[test]
fn wavelet_kernels_sum_to_scaled_identity() {
    for order in 0..=4 {
        for seed in 0..5 {
            let err = common::wavelet_identity_error(10 + 8 * seed as usize, order, 0.15, seed);
            assert!(err <= 1e-8, "C={order} seed={seed}: {err:e}");
        }
    }
}

#[test]
fn attention_weights_are_simplices() {
    for seed in 0..10 {
        let err = common::simplex_error(20, seed);
        assert!(err <= 1e-9, "seed {seed}: {err:e}");
    }
}

#[test]
fn attention_stack_is_permutation_equivariant() {
    for seed in 0..5 {
        assert!(common::equivariance_trial(20, seed), "seed {seed}");
    }
}
