//! Shared encoder plus one affine classification head per task.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::encoder::{self, DropoutSeeds, EncoderConfig, EncoderParams, EncoderWeights, Param, TokenBatch, INIT_STD};
use crate::error::{Error, Result};
use crate::normalize::Normalizer;
use crate::tokenizer::{self, Vocab};

pub const HOF: &str = "hof";
pub const SENTIMENT: &str = "sentiment";
pub const EMOTION: &str = "emotion";
pub const TARGET: &str = "target";

pub const HOF_LABELS: [&str; 2] = ["NOT", "HOF"];
pub const SENTIMENT_LABELS: [&str; 3] = ["negative", "positive", "neutral"];
pub const EMOTION_LABELS: [&str; 14] = [
    "anger", "disgust", "fear", "joy", "sadness", "surprise", "enthusiasm", "fun", "hate",
    "neutral", "love", "boredom", "relief", "none",
];
pub const TARGET_LABELS: [&str; 4] = ["NONE", "IND", "GRP", "OTH"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub labels: Vec<String>,
}

impl TaskSpec {
    pub fn new(name: impl Into<String>, labels: &[&str]) -> Result<Self> {
        let spec = TaskSpec {
            name: name.into(),
            labels: labels.iter().map(|s| s.to_string()).collect(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Config("task name is empty".into()));
        }
        if self.labels.is_empty() {
            return Err(Error::Config(format!("task `{}` has no labels", self.name)));
        }
        for (i, l) in self.labels.iter().enumerate() {
            if self.labels[..i].contains(l) {
                return Err(Error::Config(format!(
                    "task `{}` repeats label `{l}`",
                    self.name
                )));
            }
        }
        Ok(())
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Default label inventory for the four built-in tasks.
    pub fn default_for(name: &str) -> Option<TaskSpec> {
        let labels: &[&str] = match name {
            HOF => &HOF_LABELS,
            SENTIMENT => &SENTIMENT_LABELS,
            EMOTION => &EMOTION_LABELS,
            TARGET => &TARGET_LABELS,
            _ => return None,
        };
        Some(TaskSpec::new(name, labels).expect("built-in label sets are valid"))
    }

    pub fn defaults() -> Vec<TaskSpec> {
        [HOF, SENTIMENT, EMOTION, TARGET]
            .iter()
            .filter_map(|t| TaskSpec::default_for(t))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskHead {
    /// `[hidden, labels]`
    pub weight: Param,
    /// `[labels]`
    pub bias: Param,
}

impl TaskHead {
    pub fn init(hidden: usize, labels: usize, rng: &mut ChaCha8Rng) -> Self {
        TaskHead {
            weight: Param::normal(&[hidden, labels], INIT_STD, rng),
            bias: Param::zeros(&[labels]),
        }
    }

    pub fn zeros(hidden: usize, labels: usize) -> Self {
        TaskHead {
            weight: Param::zeros(&[hidden, labels]),
            bias: Param::zeros(&[labels]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub spec: TaskSpec,
    pub head: TaskHead,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MtlModel {
    pub config: EncoderConfig,
    pub encoder: EncoderParams,
    pub tasks: Vec<Task>,
    pub vocab: Vocab,
}

/// Encoder and head handles for one task on a tape.
pub struct BoundTask {
    pub encoder: EncoderWeights<Var>,
    pub head_w: Var,
    pub head_b: Var,
}

impl MtlModel {
    /// Fresh model: encoder from `config.seed`, heads from a derived stream.
    pub fn new(config: EncoderConfig, vocab: Vocab, specs: Vec<TaskSpec>) -> Result<Self> {
        config.validate()?;
        if config.vocab_size != vocab.len() {
            return Err(Error::Config(format!(
                "encoder vocab_size {} does not match vocabulary of {} tokens",
                config.vocab_size,
                vocab.len()
            )));
        }
        if specs.is_empty() {
            return Err(Error::Config("model needs at least one task".into()));
        }
        for (i, s) in specs.iter().enumerate() {
            s.validate()?;
            if specs[..i].iter().any(|o| o.name == s.name) {
                return Err(Error::Config(format!("duplicate task `{}`", s.name)));
            }
        }
        let encoder = encoder::init_params(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(encoder::splitmix64(config.seed ^ 0x4ead));
        let tasks = specs
            .into_iter()
            .map(|spec| Task {
                head: TaskHead::init(config.hidden_dim, spec.num_labels(), &mut rng),
                spec,
            })
            .collect();
        Ok(MtlModel {
            config,
            encoder,
            tasks,
            vocab,
        })
    }

    pub fn task_names(&self) -> Vec<&str> {
        self.tasks.iter().map(|t| t.spec.name.as_str()).collect()
    }

    pub fn task_index(&self, name: &str) -> Result<usize> {
        self.tasks
            .iter()
            .position(|t| t.spec.name == name)
            .ok_or_else(|| Error::TaskLookup(name.to_string()))
    }

    pub fn task(&self, name: &str) -> Result<&Task> {
        Ok(&self.tasks[self.task_index(name)?])
    }

    /// Leaves for the encoder and the named head only.
    pub fn bind(&self, tape: &mut Tape, task: &str, grad_enabled: bool) -> Result<BoundTask> {
        let t = self.task(task)?;
        let encoder = encoder::bind(&self.encoder, tape, grad_enabled);
        let head_w = tape.leaf(t.head.weight.to_tensor(), grad_enabled);
        let head_b = tape.leaf(t.head.bias.to_tensor(), grad_enabled);
        Ok(BoundTask {
            encoder,
            head_w,
            head_b,
        })
    }

    /// Records `pooled · W + b` for `task`; returns the `[B, labels]` logits.
    pub fn record_logits(
        &self,
        tape: &mut Tape,
        bound: &BoundTask,
        batch: &TokenBatch,
        dropout: Option<&mut DropoutSeeds>,
    ) -> Result<Var> {
        let (_, pooled) = encoder::forward(&self.config, &bound.encoder, tape, batch, dropout)?;
        let logits = tape.matmul(pooled, bound.head_w)?;
        tape.add(logits, bound.head_b)
    }

    /// Logits `[B, labels(task)]` without recording gradients. In train mode
    /// dropout is drawn from `config.seed`.
    pub fn forward_task(&self, batch: &TokenBatch, task: &str, train_mode: bool) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, task, false)?;
        let mut seeds = DropoutSeeds::new(self.config.seed);
        let logits = self.record_logits(&mut tape, &bound, batch, train_mode.then_some(&mut seeds))?;
        Ok(tape.value(logits).clone())
    }

    /// Tokenizes already-normalized texts into a trimmed batch.
    pub fn batch_texts<S: AsRef<str>>(&self, texts: &[S]) -> Result<TokenBatch> {
        let encoded = texts
            .iter()
            .map(|t| tokenizer::encode(t.as_ref(), &self.vocab, self.config.max_len))
            .collect::<Result<Vec<_>>>()?;
        Ok(TokenBatch::from_rows(encoded.iter().map(|e| (&e.ids[..], &e.mask[..])))?.trimmed())
    }

    /// Normalizes and tokenizes `text`, then predicts every task.
    pub fn predict_all(&self, text: &str, normalizer: &Normalizer) -> Result<Vec<Prediction>> {
        let normalized = normalizer.normalize(text);
        let batch = self.batch_texts(&[normalized])?;
        let mut tape = Tape::new();
        let enc = encoder::bind(&self.encoder, &mut tape, false);
        let (_, pooled) = encoder::forward(&self.config, &enc, &mut tape, &batch, None)?;
        let pooled = tape.value(pooled).clone();
        self.tasks
            .iter()
            .map(|t| {
                let logits = head_logits(&pooled, &t.head);
                let probs = softmax(&logits);
                let best = argmax(&probs);
                Ok(Prediction {
                    task: t.spec.name.clone(),
                    label: t.spec.labels[best].clone(),
                    probabilities: probs,
                })
            })
            .collect()
    }

    /// Predicted label indices for `task` over normalized texts.
    pub fn predict_task<S: AsRef<str>>(&self, texts: &[S], task: &str, batch_size: usize) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(batch_size.max(1)) {
            let batch = self.batch_texts(chunk)?;
            let logits = self.forward_task(&batch, task, false)?;
            let k = logits.shape()[1];
            out.extend(logits.data().chunks(k).map(argmax));
        }
        Ok(out)
    }

    /// Total number of scalar parameters.
    pub fn num_parameters(&self) -> usize {
        self.encoder.named().iter().map(|(_, p)| p.numel()).sum::<usize>()
            + self
                .tasks
                .iter()
                .map(|t| t.head.weight.numel() + t.head.bias.numel())
                .sum::<usize>()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub task: String,
    pub label: String,
    pub probabilities: Vec<f64>,
}

fn head_logits(pooled: &Tensor, head: &TaskHead) -> Vec<f64> {
    let k = head.bias.numel();
    let h = pooled.numel();
    (0..k)
        .map(|j| {
            f64::from(head.bias.data[j])
                + (0..h)
                    .map(|i| pooled.data()[i] * f64::from(head.weight.data[i * k + j]))
                    .sum::<f64>()
        })
        .collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// First index of the maximum.
pub fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::normalize::NormalizerConfig;
    use crate::tokenizer::build_vocab;

    pub(crate) fn tiny_model() -> MtlModel {
        let corpus = vec!["you are awful".to_string(), "what a great day".to_string()];
        let vocab = build_vocab(&corpus, 40, &["<user>".to_string()]).unwrap();
        let mut cfg = EncoderConfig::desk(vocab.len());
        cfg.hidden_dim = 16;
        cfg.num_heads = 2;
        cfg.ffn_dim = 24;
        cfg.max_len = 16;
        cfg.seed = 3;
        MtlModel::new(cfg, vocab, TaskSpec::defaults()).unwrap()
    }

    #[test]
    fn zero_head_gives_uniform_probabilities() {
        let mut m = tiny_model();
        for t in &mut m.tasks {
            t.head = TaskHead::zeros(m.config.hidden_dim, t.spec.num_labels());
        }
        let n = Normalizer::new(NormalizerConfig::default()).unwrap();
        let preds = m.predict_all("@user you are awful", &n).unwrap();
        assert_eq!(preds.len(), 4);
        assert_eq!(preds[0].probabilities, vec![0.5, 0.5]);
        let batch = m.batch_texts(&["great day", "awful", "you"]).unwrap();
        let logits = m.forward_task(&batch, EMOTION, false).unwrap();
        assert_eq!(logits.shape(), &[3, 14]);
        assert!(logits.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unknown_task_lookup() {
        let m = tiny_model();
        let batch = m.batch_texts(&["great"]).unwrap();
        assert!(matches!(m.forward_task(&batch, "stance", false), Err(Error::TaskLookup(_))));
    }

    #[test]
    fn duplicate_tasks_and_labels_rejected() {
        assert!(TaskSpec::new("x", &["a", "a"]).is_err());
        assert!(TaskSpec::new("x", &[]).is_err());
        let m = tiny_model();
        let specs = vec![TaskSpec::default_for(HOF).unwrap(), TaskSpec::default_for(HOF).unwrap()];
        assert!(MtlModel::new(m.config.clone(), m.vocab.clone(), specs).is_err());
    }

    #[test]
    fn probabilities_sum_to_one() {
        let m = tiny_model();
        let n = Normalizer::new(NormalizerConfig::default()).unwrap();
        for p in m.predict_all("what a great day #Sunday 😂", &n).unwrap() {
            assert!((p.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn argmax_shift_invariant() {
        let l = [0.3, 2.0, -1.0];
        let shifted: Vec<f64> = l.iter().map(|v| v + 1e3).collect();
        assert_eq!(argmax(&softmax(&l)), argmax(&softmax(&shifted)));
    }
}
