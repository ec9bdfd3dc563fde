use hofmtl_core::metrics::{confusion_k, report};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Per-class P/R/F1 straight from the label lists, no matrix involved.
fn brute(gold: &[usize], pred: &[usize], k: usize) -> (Vec<(f64, f64, f64)>, f64) {
    let per: Vec<(f64, f64, f64)> = (0..k)
        .map(|c| {
            let tp = gold.iter().zip(pred).filter(|(g, p)| **g == c && **p == c).count() as f64;
            let predicted = pred.iter().filter(|p| **p == c).count() as f64;
            let actual = gold.iter().filter(|g| **g == c).count() as f64;
            let p = if predicted > 0.0 { tp / predicted } else { 0.0 };
            let r = if actual > 0.0 { tp / actual } else { 0.0 };
            let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
            (p, r, f)
        })
        .collect();
    let macro_f1 = per.iter().map(|x| x.2).sum::<f64>() / k as f64;
    (per, macro_f1)
}

#[test]
fn random_matrices_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..200 {
        let k = rng.random_range(2..=14);
        let n = rng.random_range(1..300);
        let gold: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let r = report(&confusion_k(&gold, &pred, k).unwrap(), "t");
        let (per, macro_f1) = brute(&gold, &pred, k);
        for (c, (p, rc, f)) in per.iter().enumerate() {
            let s = r.per_class[c].scores;
            assert!((s.precision - p).abs() < 1e-12);
            assert!((s.recall - rc).abs() < 1e-12);
            assert!((s.f1 - f).abs() < 1e-12);
        }
        assert!((r.macro_avg.f1 - macro_f1).abs() < 1e-12);
        let acc = gold.iter().zip(&pred).filter(|(g, p)| g == p).count() as f64 / n as f64;
        assert!((r.accuracy - acc).abs() < 1e-12);
    }
}

fn pairs() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (2usize..10).prop_flat_map(|k| (Just(k), prop::collection::vec((0..k, 0..k), 1..1000)))
}

proptest! {
    #[test]
    fn row_sums_are_gold_counts((k, pairs) in pairs()) {
        let (gold, pred): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let cm = confusion_k(&gold, &pred, k).unwrap();
        prop_assert_eq!(cm.total(), pairs.len() as u64);
        for c in 0..k {
            prop_assert_eq!(cm.row_sum(c), gold.iter().filter(|&&g| g == c).count() as u64);
            prop_assert_eq!(cm.col_sum(c), pred.iter().filter(|&&p| p == c).count() as u64);
        }
    }

    #[test]
    fn relabeling_permutes_per_class_scores((k, pairs) in pairs(), seed in any::<u64>()) {
        let (gold, pred): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let mut perm: Vec<usize> = (0..k).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..k).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let pg: Vec<usize> = gold.iter().map(|&g| perm[g]).collect();
        let pp: Vec<usize> = pred.iter().map(|&p| perm[p]).collect();
        let a = report(&confusion_k(&gold, &pred, k).unwrap(), "t");
        let b = report(&confusion_k(&pg, &pp, k).unwrap(), "t");
        for c in 0..k {
            prop_assert_eq!(a.per_class[c].scores, b.per_class[perm[c]].scores);
        }
        prop_assert!((a.macro_avg.f1 - b.macro_avg.f1).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a.macro_avg.f1));
    }
}
