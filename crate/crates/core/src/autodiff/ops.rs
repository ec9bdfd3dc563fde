use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Additive value placed on masked attention logits before the softmax.
pub const MASK_NEG: f64 = -1e9;

/// The closed set of differentiable operations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    MatMul,
    Add,
    Scale,
    Embedding,
    LayerNorm,
    Softmax,
    Gelu,
    Tanh,
    Dropout,
    Reshape,
    Permute,
    Mean,
    CrossEntropy,
}

impl OpKind {
    pub const ALL: [OpKind; 13] = [
        OpKind::MatMul,
        OpKind::Add,
        OpKind::Scale,
        OpKind::Embedding,
        OpKind::LayerNorm,
        OpKind::Softmax,
        OpKind::Gelu,
        OpKind::Tanh,
        OpKind::Dropout,
        OpKind::Reshape,
        OpKind::Permute,
        OpKind::Mean,
        OpKind::CrossEntropy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Scale => "mul-by-scalar",
            OpKind::Embedding => "embedding-lookup",
            OpKind::LayerNorm => "layer-norm",
            OpKind::Softmax => "softmax",
            OpKind::Gelu => "gelu",
            OpKind::Tanh => "tanh",
            OpKind::Dropout => "dropout",
            OpKind::Reshape => "reshape",
            OpKind::Permute => "transpose",
            OpKind::Mean => "mean",
            OpKind::CrossEntropy => "cross-entropy-with-logits",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OpKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .or(match s {
                "permute" => Some(OpKind::Permute),
                "scale" => Some(OpKind::Scale),
                "cross-entropy" => Some(OpKind::CrossEntropy),
                _ => None,
            })
            .ok_or_else(|| Error::Unsupported(s.to_string()))
    }
}

/// An operation kind together with its non-differentiable attributes.
#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    /// `[.., m, k] x [k, n]` or batched `[b, m, k] x [b, k, n]`.
    MatMul,
    /// Same-shape add, or bias-add of a vector over the last axis.
    Add,
    Scale(f64),
    /// Rows of a `[V, H]` table; output shape is `shape ++ [H]`.
    Embedding { ids: Vec<usize>, shape: Vec<usize> },
    /// Inputs: x `[.., H]`, gain `[H]`, shift `[H]`.
    LayerNorm { eps: f64 },
    /// Softmax over the last axis. The optional mask is added to the
    /// logits first and must have the same number of elements.
    Softmax { mask: Option<Vec<f64>> },
    Gelu,
    Tanh,
    Dropout { rate: f64, seed: u64 },
    Reshape(Vec<usize>),
    Permute(Vec<usize>),
    /// Mean over all elements, producing a scalar.
    Mean,
    /// Mean cross-entropy of `[B, K]` logits against `B` label indices.
    CrossEntropy { labels: Vec<usize> },
}

impl Op {
    pub fn kind(&self) -> OpKind {
        match self {
            Op::MatMul => OpKind::MatMul,
            Op::Add => OpKind::Add,
            Op::Scale(_) => OpKind::Scale,
            Op::Embedding { .. } => OpKind::Embedding,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::Gelu => OpKind::Gelu,
            Op::Tanh => OpKind::Tanh,
            Op::Dropout { .. } => OpKind::Dropout,
            Op::Reshape(_) => OpKind::Reshape,
            Op::Permute(_) => OpKind::Permute,
            Op::Mean => OpKind::Mean,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
        }
    }

    pub(crate) fn arity(&self) -> usize {
        match self {
            Op::MatMul | Op::Add => 2,
            Op::LayerNorm { .. } => 3,
            _ => 1,
        }
    }
}

pub(crate) fn dim_err(kind: OpKind, shapes: &[&[usize]]) -> Error {
    Error::Dimension {
        kind: kind.name(),
        shapes: shapes
            .iter()
            .map(|s| format!("{s:?}"))
            .collect::<Vec<_>>()
            .join(", "),
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * x * (1.0 + t)
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// `out[m, n] += a[m, k] * b[k, n]`, all row-major slices.
pub(crate) fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m, k] += g[m, n] * b[k, n]^T`.
pub(crate) fn gemm_nt_acc(g: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut s = 0.0;
            for (&gv, &bv) in grow.iter().zip(brow) {
                s += gv * bv;
            }
            out[i * k + p] += s;
        }
    }
}

/// `out[k, n] += a[m, k]^T * g[m, n]`.
pub(crate) fn gemm_tn_acc(a: &[f64], g: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

/// Generic axis permutation: `out.shape[i] = shape[perm[i]]`.
pub(crate) fn permute(data: &[f64], shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let rank = shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..data.len() {
        out.push(data[offset]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            offset += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            offset -= strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    (out_shape, out)
}

pub(crate) fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}
