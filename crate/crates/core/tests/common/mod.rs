#![allow(dead_code)]

use std::collections::BTreeMap;

use hofmtl_core::corpus::Dataset;
use hofmtl_core::encoder::EncoderConfig;
use hofmtl_core::model::{MtlModel, TaskSpec};
use hofmtl_core::normalize::{Normalizer, NormalizerConfig};
use hofmtl_core::tokenizer::{build_vocab, Vocab};

pub fn normalizer() -> Normalizer {
    Normalizer::new(NormalizerConfig::default()).unwrap()
}

pub fn vocab_for(datasets: &[&Dataset], size: usize) -> Vocab {
    let n = normalizer();
    let corpus: Vec<String> = datasets
        .iter()
        .flat_map(|d| d.texts().into_iter().map(|t| n.normalize(t)))
        .collect();
    build_vocab(&corpus, size, &n.config().atomic_tokens()).unwrap()
}

pub fn small_config(vocab: usize, seed: u64) -> EncoderConfig {
    EncoderConfig {
        num_layers: 2,
        hidden_dim: 32,
        num_heads: 4,
        ffn_dim: 64,
        vocab_size: vocab,
        max_len: 32,
        dropout_rate: 0.1,
        seed,
    }
}

pub fn four_task_model(vocab: Vocab, seed: u64) -> MtlModel {
    let cfg = small_config(vocab.len(), seed);
    MtlModel::new(cfg, vocab, TaskSpec::defaults()).unwrap()
}

pub fn all_datasets(map: &BTreeMap<String, Dataset>) -> Vec<&Dataset> {
    map.values().collect()
}
