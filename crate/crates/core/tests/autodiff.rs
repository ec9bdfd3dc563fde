use hofmtl_core::autodiff::{grad_check, OpKind, Op, Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn every_kind_matches_finite_differences() {
    for kind in OpKind::ALL {
        for seed in 0..10 {
            let err = grad_check(kind, seed).unwrap();
            assert!(err < 1e-4, "{kind} seed {seed}: relative error {err}");
        }
    }
}

/// Independent triple-loop oracle.
fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = s;
        }
    }
    out
}

#[test]
fn matmul_2x3_by_3x4_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let a: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..1.0)).collect();
    let b: Vec<f64> = (0..12).map(|_| rng.random_range(0.0..1.0)).collect();
    let expected = naive_matmul(&a, &b, 2, 3, 4);
    let mut tape = Tape::new();
    let va = tape.constant(Tensor::new(vec![2, 3], a).unwrap());
    let vb = tape.constant(Tensor::new(vec![3, 4], b).unwrap());
    let out = tape.matmul(va, vb).unwrap();
    assert_eq!(tape.value(out).shape(), &[2, 4]);
    for (x, y) in tape.value(out).data().iter().zip(&expected) {
        assert!((x - y).abs() < 1e-6);
    }
}

#[test]
fn repeated_backward_is_identical() {
    let run = || {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![2, 3], vec![0.1, 0.2, -0.3, 0.4, 1.0, -2.0]).unwrap(), true);
        let w = tape.leaf(Tensor::new(vec![3, 2], vec![0.5, -0.1, 0.3, 0.2, -0.7, 0.9]).unwrap(), true);
        let h = tape.matmul(x, w).unwrap();
        let h = tape.gelu(h).unwrap();
        let l = tape.cross_entropy(h, vec![0, 1]).unwrap();
        let g = tape.backward(l).unwrap();
        (g.get(x).unwrap().clone(), g.get(w).unwrap().clone())
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(vals in prop::collection::vec(-30.0f64..30.0, 12)) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![3, 4], vals).unwrap());
        let y = tape.softmax(x, None).unwrap();
        for row in tape.value(y).data().chunks(4) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn cross_entropy_is_nonnegative(vals in prop::collection::vec(-50.0f64..50.0, 6), label in 0usize..3) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![2, 3], vals).unwrap());
        let l = tape.apply(Op::CrossEntropy { labels: vec![label, 2 - label] }, &[x]).unwrap();
        prop_assert!(tape.value(l).item().unwrap() >= 0.0);
    }
}
