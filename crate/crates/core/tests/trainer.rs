mod common;

use std::collections::BTreeMap;

use hofmtl_core::autodiff::{Tape, Tensor};
use hofmtl_core::checkpoint::to_bytes;
use hofmtl_core::corpus::{synth_fixture, Dataset, SynthSpec};
use hofmtl_core::trainer::{adamw_update, plan_epoch, train, AdamWConfig, Moments, TrainConfig};
use hofmtl_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{four_task_model, normalizer, vocab_for};

#[test]
fn head_only_toy_problem_converges() {
    // Two separable clusters, frozen features, a linear head trained with AdamW.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (n, h) = (32, 4);
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let y = i % 2;
        let sign = if y == 1 { 1.0 } else { -1.0 };
        for _ in 0..h {
            feats.push(sign + rng.random_range(-0.3..0.3));
        }
        labels.push(y);
    }
    let mut w = vec![0f32; h * 2];
    let mut b = vec![0f32; 2];
    let (mut mw, mut mb) = (Moments::zeros(w.len()), Moments::zeros(b.len()));
    let cfg = AdamWConfig::default();
    let mut loss = f64::INFINITY;
    for _ in 0..100 {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![n, h], feats.clone()).unwrap());
        let vw = tape.leaf(Tensor::from_f32(&[h, 2], &w).unwrap(), true);
        let vb = tape.leaf(Tensor::from_f32(&[2], &b).unwrap(), true);
        let logits = tape.matmul(x, vw).unwrap();
        let logits = tape.add(logits, vb).unwrap();
        let l = tape.cross_entropy(logits, labels.clone()).unwrap();
        loss = tape.value(l).item().unwrap();
        let g = tape.backward(l).unwrap();
        adamw_update(&mut w, g.get(vw).unwrap().data(), &mut mw, 0.05, &cfg);
        adamw_update(&mut b, g.get(vb).unwrap().data(), &mut mb, 0.05, &cfg);
    }
    assert!(loss < 0.05, "loss {loss}");
    assert!(loss < std::f64::consts::LN_2);
}

#[test]
fn plan_mixes_tasks_in_proportion() {
    let sizes: Vec<(String, usize)> = ["hof", "sentiment", "emotion", "target"]
        .iter()
        .map(|t| (t.to_string(), 10_000))
        .collect();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let window = 50;
    for seed in 0..200 {
        let plan = plan_epoch(&sizes, 32, seed).unwrap();
        assert_eq!(plan.len(), 4 * 10_000usize.div_ceil(32));
        for (task, _) in &plan[..window] {
            *counts.entry(task.clone()).or_default() += 1;
        }
    }
    for (task, c) in counts {
        let f = c as f64 / (200 * window) as f64;
        assert!((f - 0.25).abs() < 0.02, "{task}: {f}");
    }
}

#[test]
fn plan_covers_every_batch_once() {
    let sizes = vec![("hof".to_string(), 70), ("target".to_string(), 33), ("emotion".to_string(), 16)];
    let plan = plan_epoch(&sizes, 16, 5).unwrap();
    for (task, n) in &sizes {
        let mut idx: Vec<usize> = plan.iter().filter(|(t, _)| t == task).map(|(_, b)| *b).collect();
        idx.sort();
        assert_eq!(idx, (0..n.div_ceil(16)).collect::<Vec<_>>());
    }
    let empty = vec![("hof".to_string(), 5), ("sentiment".to_string(), 0)];
    assert!(matches!(plan_epoch(&empty, 4, 0), Err(Error::Data(m)) if m.contains("sentiment")));
}

struct Setup {
    data: BTreeMap<String, Dataset>,
    validation: Dataset,
}

fn setup(seed: u64) -> Setup {
    let spec = SynthSpec::new(&[("hof", 96), ("sentiment", 48), ("emotion", 48), ("target", 48)], 0.9);
    let data = synth_fixture(&spec, seed).unwrap();
    let held = synth_fixture(&SynthSpec::new(&[("hof", 40)], 0.9), seed + 100).unwrap();
    Setup {
        data,
        validation: held["hof"].clone(),
    }
}

fn quick(preset: &str, seed: u64, epochs: usize) -> TrainConfig {
    let mut c = TrainConfig::preset(preset).unwrap();
    c.seed = seed;
    c.epochs = epochs;
    c
}

#[test]
fn training_is_deterministic() {
    let s = setup(1);
    let vocab = vocab_for(&s.data.values().collect::<Vec<_>>(), 200);
    let run = |seed: u64| {
        let mut model = four_task_model(vocab.clone(), seed);
        let hist = train(&mut model, &s.data, &quick("all", seed, 1), &s.validation, &normalizer()).unwrap();
        (to_bytes(&model).unwrap(), hist)
    };
    let a = run(2);
    assert_eq!(a, run(2));
    assert_ne!(a.0, run(3).0);
    let steps: usize = [96usize, 48, 48, 48].iter().map(|n| n.div_ceil(16)).sum();
    assert_eq!(a.1[0].steps, steps);
    assert_eq!(a.1[0].task_loss.len(), 4);
}

#[test]
fn zero_epochs_leave_model_untouched() {
    let s = setup(2);
    let vocab = vocab_for(&s.data.values().collect::<Vec<_>>(), 200);
    let mut model = four_task_model(vocab, 0);
    let before = model.clone();
    let hist = train(&mut model, &s.data, &quick("all", 0, 0), &s.validation, &normalizer()).unwrap();
    assert!(hist.is_empty());
    assert_eq!(model, before);
}

#[test]
fn bad_validation_or_missing_task_data_is_rejected() {
    let s = setup(3);
    let vocab = vocab_for(&s.data.values().collect::<Vec<_>>(), 200);
    let mut model = four_task_model(vocab, 0);
    let mut empty = s.validation.clone();
    empty.examples.clear();
    let err = train(&mut model, &s.data, &quick("all", 0, 1), &empty, &normalizer()).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
    let mut partial = s.data.clone();
    partial.remove("emotion");
    let err = train(&mut model, &partial, &quick("all", 0, 1), &s.validation, &normalizer()).unwrap_err();
    assert!(matches!(err, Error::Data(ref m) if m.contains("emotion")), "{err}");
}

#[test]
fn non_finite_loss_reports_divergence() {
    let s = setup(4);
    let vocab = vocab_for(&s.data.values().collect::<Vec<_>>(), 200);
    let mut model = four_task_model(vocab, 0);
    model.tasks[0].head.bias.data[0] = f32::NAN;
    let err = train(&mut model, &s.data, &quick("baseline", 0, 1), &s.validation, &normalizer()).unwrap_err();
    match err {
        Error::Divergence { step, task, loss } => {
            assert_eq!(step, 1);
            assert_eq!(task, "hof");
            assert!(!loss.is_finite());
        }
        other => panic!("expected divergence, got {other}"),
    }
}

#[test]
fn training_loss_falls_across_seeds() {
    for seed in 0..5 {
        let s = setup(10 + seed);
        let vocab = vocab_for(&s.data.values().collect::<Vec<_>>(), 200);
        let mut model = four_task_model(vocab, seed);
        let mut cfg = quick("baseline", seed, 6);
        cfg.batch_size = 16;
        let hist = train(&mut model, &s.data, &cfg, &s.validation, &normalizer()).unwrap();
        let first = hist.first().unwrap().mean_loss;
        let last = hist.last().unwrap().mean_loss;
        assert!(last < first, "seed {seed}: {first} -> {last}");
        assert!(hist.iter().all(|h| (0.0..=1.0).contains(&h.val_macro_f1)));
    }
}
