//! Miniature post-layer-norm transformer encoder with a tanh pooler over
//! the first position.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var, MASK_NEG};
use crate::error::{Error, Result};

pub const INIT_STD: f64 = 0.02;
pub const LAYER_NORM_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl EncoderConfig {
    /// Desk-scale defaults: 2 layers, hidden 64, 4 heads, FFN 128, max_len 64.
    pub fn desk(vocab_size: usize) -> Self {
        EncoderConfig {
            num_layers: 2,
            hidden_dim: 64,
            num_heads: 4,
            ffn_dim: 128,
            vocab_size,
            max_len: 64,
            dropout_rate: 0.1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_layers", self.num_layers),
            ("hidden_dim", self.hidden_dim),
            ("num_heads", self.num_heads),
            ("ffn_dim", self.ffn_dim),
            ("vocab_size", self.vocab_size),
            ("max_len", self.max_len),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("encoder {name} must be positive")));
        }
        if self.hidden_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "hidden_dim {} is not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate {} not in [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }
}

/// A named parameter array stored in single precision.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Param {
    pub fn zeros(shape: &[usize]) -> Self {
        Param {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], v: f32) -> Self {
        Param {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn normal(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Self {
        let dist = Normal::new(0.0, std).expect("positive std");
        Param {
            shape: shape.to_vec(),
            data: (0..shape.iter().product())
                .map(|_| dist.sample(rng) as f32)
                .collect(),
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_f32(&self.shape, &self.data).expect("param shape matches data")
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Per-layer weights, generic over storage (`Param`) or tape handles (`Var`).
#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights<T> {
    pub query_w: T,
    pub query_b: T,
    pub key_w: T,
    pub key_b: T,
    pub value_w: T,
    pub value_b: T,
    pub out_w: T,
    pub out_b: T,
    pub attn_ln_gain: T,
    pub attn_ln_shift: T,
    pub ffn_in_w: T,
    pub ffn_in_b: T,
    pub ffn_out_w: T,
    pub ffn_out_b: T,
    pub ffn_ln_gain: T,
    pub ffn_ln_shift: T,
}

impl<T> LayerWeights<T> {
    fn fields(&self) -> [(&'static str, &T); 16] {
        [
            ("query.weight", &self.query_w),
            ("query.bias", &self.query_b),
            ("key.weight", &self.key_w),
            ("key.bias", &self.key_b),
            ("value.weight", &self.value_w),
            ("value.bias", &self.value_b),
            ("attn_out.weight", &self.out_w),
            ("attn_out.bias", &self.out_b),
            ("attn_ln.gain", &self.attn_ln_gain),
            ("attn_ln.shift", &self.attn_ln_shift),
            ("ffn_in.weight", &self.ffn_in_w),
            ("ffn_in.bias", &self.ffn_in_b),
            ("ffn_out.weight", &self.ffn_out_w),
            ("ffn_out.bias", &self.ffn_out_b),
            ("ffn_ln.gain", &self.ffn_ln_gain),
            ("ffn_ln.shift", &self.ffn_ln_shift),
        ]
    }

    fn fields_mut(&mut self) -> [&mut T; 16] {
        [
            &mut self.query_w,
            &mut self.query_b,
            &mut self.key_w,
            &mut self.key_b,
            &mut self.value_w,
            &mut self.value_b,
            &mut self.out_w,
            &mut self.out_b,
            &mut self.attn_ln_gain,
            &mut self.attn_ln_shift,
            &mut self.ffn_in_w,
            &mut self.ffn_in_b,
            &mut self.ffn_out_w,
            &mut self.ffn_out_b,
            &mut self.ffn_ln_gain,
            &mut self.ffn_ln_shift,
        ]
    }

    fn map<U>(&self, prefix: &str, f: &mut impl FnMut(&str, &T) -> U) -> LayerWeights<U> {
        let mut g = |name: &str, t: &T| f(&format!("{prefix}.{name}"), t);
        LayerWeights {
            query_w: g("query.weight", &self.query_w),
            query_b: g("query.bias", &self.query_b),
            key_w: g("key.weight", &self.key_w),
            key_b: g("key.bias", &self.key_b),
            value_w: g("value.weight", &self.value_w),
            value_b: g("value.bias", &self.value_b),
            out_w: g("attn_out.weight", &self.out_w),
            out_b: g("attn_out.bias", &self.out_b),
            attn_ln_gain: g("attn_ln.gain", &self.attn_ln_gain),
            attn_ln_shift: g("attn_ln.shift", &self.attn_ln_shift),
            ffn_in_w: g("ffn_in.weight", &self.ffn_in_w),
            ffn_in_b: g("ffn_in.bias", &self.ffn_in_b),
            ffn_out_w: g("ffn_out.weight", &self.ffn_out_w),
            ffn_out_b: g("ffn_out.bias", &self.ffn_out_b),
            ffn_ln_gain: g("ffn_ln.gain", &self.ffn_ln_gain),
            ffn_ln_shift: g("ffn_ln.shift", &self.ffn_ln_shift),
        }
    }
}

/// Shared trunk weights.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderWeights<T> {
    pub token_emb: T,
    pub pos_emb: T,
    pub emb_ln_gain: T,
    pub emb_ln_shift: T,
    pub layers: Vec<LayerWeights<T>>,
    pub pooler_w: T,
    pub pooler_b: T,
}

pub type EncoderParams = EncoderWeights<Param>;

impl<T> EncoderWeights<T> {
    /// All arrays with stable names, in canonical order.
    pub fn named(&self) -> Vec<(String, &T)> {
        let mut out = vec![
            ("embeddings.token".to_string(), &self.token_emb),
            ("embeddings.position".to_string(), &self.pos_emb),
            ("embeddings.ln.gain".to_string(), &self.emb_ln_gain),
            ("embeddings.ln.shift".to_string(), &self.emb_ln_shift),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            out.extend(
                layer
                    .fields()
                    .into_iter()
                    .map(|(n, t)| (format!("layer{i}.{n}"), t)),
            );
        }
        out.push(("pooler.weight".to_string(), &self.pooler_w));
        out.push(("pooler.bias".to_string(), &self.pooler_b));
        out
    }

    /// Same order as [`EncoderWeights::named`].
    pub fn values_mut(&mut self) -> Vec<&mut T> {
        let mut out = vec![
            &mut self.token_emb,
            &mut self.pos_emb,
            &mut self.emb_ln_gain,
            &mut self.emb_ln_shift,
        ];
        for layer in &mut self.layers {
            out.extend(layer.fields_mut());
        }
        out.push(&mut self.pooler_w);
        out.push(&mut self.pooler_b);
        out
    }

    pub fn map<U>(&self, mut f: impl FnMut(&str, &T) -> U) -> EncoderWeights<U> {
        EncoderWeights {
            token_emb: f("embeddings.token", &self.token_emb),
            pos_emb: f("embeddings.position", &self.pos_emb),
            emb_ln_gain: f("embeddings.ln.gain", &self.emb_ln_gain),
            emb_ln_shift: f("embeddings.ln.shift", &self.emb_ln_shift),
            layers: self
                .layers
                .iter()
                .enumerate()
                .map(|(i, l)| l.map(&format!("layer{i}"), &mut f))
                .collect(),
            pooler_w: f("pooler.weight", &self.pooler_w),
            pooler_b: f("pooler.bias", &self.pooler_b),
        }
    }
}

/// Expected shape of every named encoder array for `config`.
pub fn param_shapes(config: &EncoderConfig) -> EncoderWeights<Vec<usize>> {
    let h = config.hidden_dim;
    let f = config.ffn_dim;
    let layer = LayerWeights {
        query_w: vec![h, h],
        query_b: vec![h],
        key_w: vec![h, h],
        key_b: vec![h],
        value_w: vec![h, h],
        value_b: vec![h],
        out_w: vec![h, h],
        out_b: vec![h],
        attn_ln_gain: vec![h],
        attn_ln_shift: vec![h],
        ffn_in_w: vec![h, f],
        ffn_in_b: vec![f],
        ffn_out_w: vec![f, h],
        ffn_out_b: vec![h],
        ffn_ln_gain: vec![h],
        ffn_ln_shift: vec![h],
    };
    EncoderWeights {
        token_emb: vec![config.vocab_size, h],
        pos_emb: vec![config.max_len, h],
        emb_ln_gain: vec![h],
        emb_ln_shift: vec![h],
        layers: vec![layer; config.num_layers],
        pooler_w: vec![h, h],
        pooler_b: vec![h],
    }
}

/// Weights ~ N(0, 0.02); biases and shifts 0; layer-norm gains 1.
pub fn init_params(config: &EncoderConfig) -> Result<EncoderParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let shapes = param_shapes(config);
    Ok(shapes.map(|name, shape| {
        if name.ends_with(".gain") {
            Param::filled(shape, 1.0)
        } else if name.ends_with(".bias") || name.ends_with(".shift") {
            Param::zeros(shape)
        } else {
            Param::normal(shape, INIT_STD, &mut rng)
        }
    }))
}

/// Puts every encoder array on `tape` as a leaf.
pub fn bind(params: &EncoderParams, tape: &mut Tape, grad_enabled: bool) -> EncoderWeights<Var> {
    params.map(|_, p| tape.leaf(p.to_tensor(), grad_enabled))
}

/// Token ids and attention mask for a `batch × len` block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenBatch {
    pub ids: Vec<u32>,
    pub mask: Vec<u8>,
    pub batch: usize,
    pub len: usize,
}

impl TokenBatch {
    pub fn new(ids: Vec<u32>, mask: Vec<u8>, batch: usize, len: usize) -> Result<Self> {
        if batch == 0 || len == 0 || ids.len() != batch * len || mask.len() != batch * len {
            return Err(Error::Contract(format!(
                "token batch {batch}x{len} given {} ids and {} mask entries",
                ids.len(),
                mask.len()
            )));
        }
        Ok(TokenBatch {
            ids,
            mask,
            batch,
            len,
        })
    }

    /// Stacks equal-length rows.
    pub fn from_rows<'a>(rows: impl IntoIterator<Item = (&'a [u32], &'a [u8])>) -> Result<Self> {
        let mut ids = Vec::new();
        let mut mask = Vec::new();
        let mut batch = 0;
        let mut len = None;
        for (i, m) in rows {
            if *len.get_or_insert(i.len()) != i.len() || i.len() != m.len() {
                return Err(Error::Contract("ragged token batch".into()));
            }
            ids.extend_from_slice(i);
            mask.extend_from_slice(m);
            batch += 1;
        }
        TokenBatch::new(ids, mask, batch, len.unwrap_or(0))
    }

    /// Drops trailing columns that are padding in every row.
    pub fn trimmed(&self) -> TokenBatch {
        let used = (0..self.batch)
            .map(|b| {
                self.mask[b * self.len..(b + 1) * self.len]
                    .iter()
                    .rposition(|&m| m == 1)
                    .map_or(1, |p| p + 1)
            })
            .max()
            .unwrap_or(1);
        if used == self.len {
            return self.clone();
        }
        let mut ids = Vec::with_capacity(self.batch * used);
        let mut mask = Vec::with_capacity(self.batch * used);
        for b in 0..self.batch {
            ids.extend_from_slice(&self.ids[b * self.len..b * self.len + used]);
            mask.extend_from_slice(&self.mask[b * self.len..b * self.len + used]);
        }
        TokenBatch {
            ids,
            mask,
            batch: self.batch,
            len: used,
        }
    }
}

/// Per-step source of dropout seeds: one distinct seed per dropout site.
#[derive(Clone, Debug)]
pub struct DropoutSeeds {
    base: u64,
    next: u64,
}

impl DropoutSeeds {
    pub fn new(base: u64) -> Self {
        DropoutSeeds { base, next: 0 }
    }

    fn take(&mut self) -> u64 {
        self.next += 1;
        splitmix64(self.base ^ splitmix64(self.next))
    }
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Records the encoder forward pass on `tape`. Returns the sequence output
/// `[B, L, H]` and the pooled output `[B, H]`. Dropout is active only when
/// `dropout` is given.
pub fn forward(
    config: &EncoderConfig,
    w: &EncoderWeights<Var>,
    tape: &mut Tape,
    batch: &TokenBatch,
    mut dropout: Option<&mut DropoutSeeds>,
) -> Result<(Var, Var)> {
    let (b, l, h) = (batch.batch, batch.len, config.hidden_dim);
    let (nh, dh) = (config.num_heads, config.head_dim());
    if l > config.max_len {
        return Err(Error::Length {
            len: l,
            max_len: config.max_len,
        });
    }
    if let Some(&bad) = batch.ids.iter().find(|&&id| id as usize >= config.vocab_size) {
        return Err(Error::Vocabulary {
            id: bad as usize,
            size: config.vocab_size,
        });
    }
    let rate = config.dropout_rate;
    let mut drop = |tape: &mut Tape, x: Var| -> Result<Var> {
        match dropout.as_deref_mut() {
            Some(seeds) if rate > 0.0 => tape.dropout(x, rate, seeds.take()),
            _ => Ok(x),
        }
    };

    let ids: Vec<usize> = batch.ids.iter().map(|&i| i as usize).collect();
    let tok = tape.embedding(w.token_emb, ids, vec![b, l])?;
    let positions: Vec<usize> = (0..b).flat_map(|_| 0..l).collect();
    let pos = tape.embedding(w.pos_emb, positions, vec![b, l])?;
    let x = tape.add(tok, pos)?;
    let mut x = tape.layer_norm(x, w.emb_ln_gain, w.emb_ln_shift, LAYER_NORM_EPS)?;
    x = drop(tape, x)?;

    // Additive key mask, expanded to [B * heads, L, L].
    let mut mask = Vec::with_capacity(b * nh * l * l);
    for bi in 0..b {
        let row: Vec<f64> = batch.mask[bi * l..(bi + 1) * l]
            .iter()
            .map(|&m| if m == 1 { 0.0 } else { MASK_NEG })
            .collect();
        for _ in 0..nh * l {
            mask.extend_from_slice(&row);
        }
    }
    let scale = 1.0 / (dh as f64).sqrt();

    for layer in &w.layers {
        let split_heads = |tape: &mut Tape, t: Var| -> Result<Var> {
            let t = tape.reshape(t, vec![b, l, nh, dh])?;
            let t = tape.permute(t, vec![0, 2, 1, 3])?;
            tape.reshape(t, vec![b * nh, l, dh])
        };
        let q = tape.matmul(x, layer.query_w)?;
        let q = tape.add(q, layer.query_b)?;
        let k = tape.matmul(x, layer.key_w)?;
        let k = tape.add(k, layer.key_b)?;
        let v = tape.matmul(x, layer.value_w)?;
        let v = tape.add(v, layer.value_b)?;
        let q = split_heads(tape, q)?;
        let k = split_heads(tape, k)?;
        let v = split_heads(tape, v)?;
        let kt = tape.permute(k, vec![0, 2, 1])?;
        let scores = tape.matmul(q, kt)?;
        let scores = tape.scale(scores, scale)?;
        let probs = tape.softmax(scores, Some(mask.clone()))?;
        let probs = drop(tape, probs)?;
        let ctx = tape.matmul(probs, v)?;
        let ctx = tape.reshape(ctx, vec![b, nh, l, dh])?;
        let ctx = tape.permute(ctx, vec![0, 2, 1, 3])?;
        let ctx = tape.reshape(ctx, vec![b, l, h])?;
        let attn = tape.matmul(ctx, layer.out_w)?;
        let attn = tape.add(attn, layer.out_b)?;
        let attn = drop(tape, attn)?;
        let res = tape.add(x, attn)?;
        x = tape.layer_norm(res, layer.attn_ln_gain, layer.attn_ln_shift, LAYER_NORM_EPS)?;

        let f = tape.matmul(x, layer.ffn_in_w)?;
        let f = tape.add(f, layer.ffn_in_b)?;
        let f = tape.gelu(f)?;
        let f = tape.matmul(f, layer.ffn_out_w)?;
        let f = tape.add(f, layer.ffn_out_b)?;
        let f = drop(tape, f)?;
        let res = tape.add(x, f)?;
        x = tape.layer_norm(res, layer.ffn_ln_gain, layer.ffn_ln_shift, LAYER_NORM_EPS)?;
    }

    // First position via a one-hot contraction over the sequence axis.
    let xt = tape.permute(x, vec![0, 2, 1])?;
    let mut onehot = vec![0.0; l];
    onehot[0] = 1.0;
    let select = tape.constant(Tensor::new(vec![l, 1], onehot)?);
    let first = tape.matmul(xt, select)?;
    let first = tape.reshape(first, vec![b, h])?;
    let pooled = tape.matmul(first, w.pooler_w)?;
    let pooled = tape.add(pooled, w.pooler_b)?;
    let pooled = tape.tanh(pooled)?;
    Ok((x, pooled))
}

/// Gradient-free forward pass; returns `(sequence [B, L, H], pooled [B, H])`.
/// With `train_mode`, dropout is seeded from `config.seed`.
pub fn encode_batch(
    config: &EncoderConfig,
    params: &EncoderParams,
    batch: &TokenBatch,
    train_mode: bool,
) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::new();
    let w = bind(params, &mut tape, false);
    let mut seeds = DropoutSeeds::new(config.seed);
    let (seq, pooled) = forward(config, &w, &mut tape, batch, train_mode.then_some(&mut seeds))?;
    Ok((tape.value(seq).clone(), tape.value(pooled).clone()))
}
