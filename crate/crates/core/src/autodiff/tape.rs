use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ops::{self, dim_err, Op};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

struct Node {
    value: Tensor,
    grad_enabled: bool,
    /// Recorded only when some input is grad-enabled.
    op: Option<Recorded>,
}

struct Recorded {
    op: Op,
    inputs: Vec<Var>,
    /// Forward by-products the backward rule needs (normalized rows,
    /// dropout mask, softmax probabilities, ...).
    saved: Vec<f64>,
}

/// Linear record of one forward pass. Node ids are assigned in creation
/// order, so inputs always precede the nodes that consume them.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every grad-enabled leaf.
#[derive(Debug, Default)]
pub struct Gradients {
    map: HashMap<Var, Tensor>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.map.get(&var)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Var, &Tensor)> {
        self.map.iter()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input. Grad-enabled leaves receive gradients in [`Tape::backward`].
    pub fn leaf(&mut self, value: Tensor, grad_enabled: bool) -> Var {
        self.push(value, grad_enabled, None)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn grad_enabled(&self, var: Var) -> bool {
        self.nodes[var.0].grad_enabled
    }

    fn push(&mut self, value: Tensor, grad_enabled: bool, op: Option<Recorded>) -> Var {
        self.nodes.push(Node {
            value,
            grad_enabled,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Runs `op` forward on `inputs` and records it if any input needs a gradient.
    pub fn apply(&mut self, op: Op, inputs: &[Var]) -> Result<Var> {
        let kind = op.kind();
        if inputs.len() != op.arity() {
            return Err(Error::Contract(format!(
                "{kind} expects {} inputs, got {}",
                op.arity(),
                inputs.len()
            )));
        }
        if let Some(bad) = inputs.iter().find(|v| v.0 >= self.nodes.len()) {
            return Err(Error::Contract(format!("{kind}: unknown variable {bad:?}")));
        }
        let vals: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let (out, saved) = forward(&op, &vals)?;
        let grad_enabled = inputs.iter().any(|v| self.nodes[v.0].grad_enabled);
        let rec = grad_enabled.then(|| Recorded {
            op,
            inputs: inputs.to_vec(),
            saved,
        });
        Ok(self.push(out, grad_enabled, rec))
    }

    // Convenience wrappers used by the model code.

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Add, &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.apply(Op::Scale(s), &[a])
    }

    pub fn embedding(&mut self, table: Var, ids: Vec<usize>, shape: Vec<usize>) -> Result<Var> {
        self.apply(Op::Embedding { ids, shape }, &[table])
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var, eps: f64) -> Result<Var> {
        self.apply(Op::LayerNorm { eps }, &[x, gain, shift])
    }

    pub fn softmax(&mut self, x: Var, mask: Option<Vec<f64>>) -> Result<Var> {
        self.apply(Op::Softmax { mask }, &[x])
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::Gelu, &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::Tanh, &[x])
    }

    pub fn dropout(&mut self, x: Var, rate: f64, seed: u64) -> Result<Var> {
        self.apply(Op::Dropout { rate, seed }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        self.apply(Op::Reshape(shape), &[x])
    }

    pub fn permute(&mut self, x: Var, perm: Vec<usize>) -> Result<Var> {
        self.apply(Op::Permute(perm), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.apply(Op::Mean, &[x])
    }

    pub fn cross_entropy(&mut self, logits: Var, labels: Vec<usize>) -> Result<Var> {
        self.apply(Op::CrossEntropy { labels }, &[logits])
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::Contract("backward on an empty tape".into()));
        }
        let loss_node = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| Error::Contract(format!("unknown loss variable {loss:?}")))?;
        if !loss_node.value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_node.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::default();

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.grad_enabled {
                continue;
            }
            match &node.op {
                None => {
                    out.map
                        .insert(Var(id), Tensor::from_parts(node.value.shape().to_vec(), g));
                }
                Some(rec) => {
                    let input_vals: Vec<&Tensor> =
                        rec.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                    let wanted: Vec<bool> = rec
                        .inputs
                        .iter()
                        .map(|v| self.nodes[v.0].grad_enabled)
                        .collect();
                    let input_grads = backward_rule(rec, &input_vals, &node.value, &g, &wanted);
                    for ((var, ig), want) in rec.inputs.iter().zip(input_grads).zip(wanted) {
                        if !want {
                            continue;
                        }
                        let Some(ig) = ig else { continue };
                        match &mut grads[var.0] {
                            Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                            slot @ None => *slot = Some(ig),
                        }
                    }
                }
            }
        }
        // Grad-enabled leaves the loss does not depend on get explicit zeros.
        for (id, node) in self.nodes.iter().enumerate().take(loss.0 + 1) {
            if node.grad_enabled && node.op.is_none() && !out.map.contains_key(&Var(id)) {
                out.map.insert(Var(id), Tensor::zeros(node.value.shape()));
            }
        }
        Ok(out)
    }
}

fn forward(op: &Op, x: &[&Tensor]) -> Result<(Tensor, Vec<f64>)> {
    let kind = op.kind();
    match op {
        Op::MatMul => {
            let (a, b) = (x[0], x[1]);
            let (sa, sb) = (a.shape(), b.shape());
            if sa.len() >= 2 && sb.len() == 2 && sa[sa.len() - 1] == sb[0] {
                let k = sb[0];
                let n = sb[1];
                let m = a.numel() / k;
                let mut out = vec![0.0; m * n];
                ops::gemm_acc(a.data(), b.data(), &mut out, m, k, n);
                let mut shape = sa[..sa.len() - 1].to_vec();
                shape.push(n);
                Ok((Tensor::from_parts(shape, out), Vec::new()))
            } else if sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0] && sa[2] == sb[1] {
                let (bt, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
                let mut out = vec![0.0; bt * m * n];
                for i in 0..bt {
                    ops::gemm_acc(
                        &a.data()[i * m * k..(i + 1) * m * k],
                        &b.data()[i * k * n..(i + 1) * k * n],
                        &mut out[i * m * n..(i + 1) * m * n],
                        m,
                        k,
                        n,
                    );
                }
                Ok((Tensor::from_parts(vec![bt, m, n], out), Vec::new()))
            } else {
                Err(dim_err(kind, &[sa, sb]))
            }
        }
        Op::Add => {
            let (a, b) = (x[0], x[1]);
            if a.shape() == b.shape() {
                let out = a.data().iter().zip(b.data()).map(|(p, q)| p + q).collect();
                Ok((Tensor::from_parts(a.shape().to_vec(), out), Vec::new()))
            } else if b.rank() == 1 && a.rank() >= 1 && a.shape()[a.rank() - 1] == b.shape()[0] {
                let n = b.numel();
                let out = a
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, p)| p + b.data()[i % n])
                    .collect();
                Ok((Tensor::from_parts(a.shape().to_vec(), out), Vec::new()))
            } else {
                Err(dim_err(kind, &[a.shape(), b.shape()]))
            }
        }
        Op::Scale(s) => {
            let out = x[0].data().iter().map(|v| v * s).collect();
            Ok((Tensor::from_parts(x[0].shape().to_vec(), out), Vec::new()))
        }
        Op::Embedding { ids, shape } => {
            let table = x[0];
            if table.rank() != 2 || shape.iter().product::<usize>() != ids.len() {
                return Err(dim_err(kind, &[table.shape(), shape]));
            }
            let (v, h) = (table.shape()[0], table.shape()[1]);
            let mut out = Vec::with_capacity(ids.len() * h);
            for &id in ids {
                if id >= v {
                    return Err(Error::Vocabulary { id, size: v });
                }
                out.extend_from_slice(&table.data()[id * h..(id + 1) * h]);
            }
            let mut s = shape.clone();
            s.push(h);
            Ok((Tensor::from_parts(s, out), Vec::new()))
        }
        Op::LayerNorm { eps } => {
            let (xv, gain, shift) = (x[0], x[1], x[2]);
            let h = *xv.shape().last().unwrap_or(&0);
            if xv.rank() == 0 || gain.shape() != [h] || shift.shape() != [h] {
                return Err(dim_err(kind, &[xv.shape(), gain.shape(), shift.shape()]));
            }
            let rows = xv.numel() / h;
            let mut out = vec![0.0; xv.numel()];
            // saved: normalized values followed by per-row inverse std.
            let mut saved = vec![0.0; xv.numel() + rows];
            for r in 0..rows {
                let row = &xv.data()[r * h..(r + 1) * h];
                let mean = row.iter().sum::<f64>() / h as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / h as f64;
                let rstd = 1.0 / (var + eps).sqrt();
                for j in 0..h {
                    let xh = (row[j] - mean) * rstd;
                    saved[r * h + j] = xh;
                    out[r * h + j] = xh * gain.data()[j] + shift.data()[j];
                }
                saved[xv.numel() + r] = rstd;
            }
            Ok((Tensor::from_parts(xv.shape().to_vec(), out), saved))
        }
        Op::Softmax { mask } => {
            let xv = x[0];
            if xv.rank() == 0 {
                return Err(dim_err(kind, &[xv.shape()]));
            }
            if let Some(m) = mask {
                if m.len() != xv.numel() {
                    return Err(dim_err(kind, &[xv.shape(), &[m.len()]]));
                }
            }
            let n = xv.shape()[xv.rank() - 1];
            let mut out = vec![0.0; xv.numel()];
            for (r, chunk) in out.chunks_mut(n).enumerate() {
                let base = r * n;
                let logit = |j: usize| {
                    xv.data()[base + j] + mask.as_ref().map_or(0.0, |m| m[base + j])
                };
                let max = (0..n).map(logit).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for (j, o) in chunk.iter_mut().enumerate() {
                    *o = (logit(j) - max).exp();
                    sum += *o;
                }
                chunk.iter_mut().for_each(|o| *o /= sum);
            }
            Ok((Tensor::from_parts(xv.shape().to_vec(), out), Vec::new()))
        }
        Op::Gelu => {
            let out = x[0].data().iter().map(|&v| ops::gelu(v)).collect();
            Ok((Tensor::from_parts(x[0].shape().to_vec(), out), Vec::new()))
        }
        Op::Tanh => {
            let out = x[0].data().iter().map(|v| v.tanh()).collect();
            Ok((Tensor::from_parts(x[0].shape().to_vec(), out), Vec::new()))
        }
        Op::Dropout { rate, seed } => {
            if !(0.0..1.0).contains(rate) {
                return Err(Error::Contract(format!("dropout rate {rate} not in [0, 1)")));
            }
            if *rate == 0.0 {
                return Ok((x[0].clone(), vec![1.0; x[0].numel()]));
            }
            let keep = 1.0 / (1.0 - rate);
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mask: Vec<f64> = (0..x[0].numel())
                .map(|_| if rng.random::<f64>() < *rate { 0.0 } else { keep })
                .collect();
            let out = x[0].data().iter().zip(&mask).map(|(v, m)| v * m).collect();
            Ok((Tensor::from_parts(x[0].shape().to_vec(), out), mask))
        }
        Op::Reshape(shape) => {
            if shape.iter().any(|&d| d == 0) || shape.iter().product::<usize>() != x[0].numel() {
                return Err(dim_err(kind, &[x[0].shape(), shape]));
            }
            Ok((
                Tensor::from_parts(shape.clone(), x[0].data().to_vec()),
                Vec::new(),
            ))
        }
        Op::Permute(perm) => {
            let mut seen = vec![false; perm.len()];
            let valid = perm.len() == x[0].rank()
                && perm.iter().all(|&p| p < seen.len() && !std::mem::replace(&mut seen[p], true));
            if !valid {
                return Err(dim_err(kind, &[x[0].shape(), perm]));
            }
            let (shape, out) = ops::permute(x[0].data(), x[0].shape(), perm);
            Ok((Tensor::from_parts(shape, out), Vec::new()))
        }
        Op::Mean => {
            let m = x[0].data().iter().sum::<f64>() / x[0].numel() as f64;
            Ok((Tensor::scalar(m), Vec::new()))
        }
        Op::CrossEntropy { labels } => {
            let logits = x[0];
            if logits.rank() != 2 || logits.shape()[0] != labels.len() {
                return Err(dim_err(kind, &[logits.shape(), &[labels.len()]]));
            }
            let (b, k) = (logits.shape()[0], logits.shape()[1]);
            if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
                return Err(Error::Contract(format!(
                    "{kind}: label {bad} out of range for {k} classes"
                )));
            }
            let mut probs = vec![0.0; b * k];
            let mut total = 0.0;
            for r in 0..b {
                let row = &logits.data()[r * k..(r + 1) * k];
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
                let lse = max + sum.ln();
                for j in 0..k {
                    probs[r * k + j] = (row[j] - lse).exp();
                }
                total += lse - row[labels[r]];
            }
            // Rounding can leave a hair below zero when the margin is huge;
            // NaN must pass through so divergence stays visible.
            let mean = total / b as f64;
            Ok((Tensor::scalar(if mean < 0.0 { 0.0 } else { mean }), probs))
        }
    }
}

/// Returns one optional gradient per input (None where not wanted).
fn backward_rule(
    rec: &Recorded,
    x: &[&Tensor],
    out: &Tensor,
    g: &[f64],
    wanted: &[bool],
) -> Vec<Option<Vec<f64>>> {
    match &rec.op {
        Op::MatMul => {
            let (a, b) = (x[0], x[1]);
            let (sa, sb) = (a.shape(), b.shape());
            let mut ga = wanted[0].then(|| vec![0.0; a.numel()]);
            let mut gb = wanted[1].then(|| vec![0.0; b.numel()]);
            if sb.len() == 2 {
                let (k, n) = (sb[0], sb[1]);
                let m = a.numel() / k;
                if let Some(ga) = ga.as_mut() {
                    ops::gemm_nt_acc(g, b.data(), ga, m, k, n);
                }
                if let Some(gb) = gb.as_mut() {
                    ops::gemm_tn_acc(a.data(), g, gb, m, k, n);
                }
            } else {
                let (bt, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
                for i in 0..bt {
                    let gi = &g[i * m * n..(i + 1) * m * n];
                    if let Some(ga) = ga.as_mut() {
                        ops::gemm_nt_acc(
                            gi,
                            &b.data()[i * k * n..(i + 1) * k * n],
                            &mut ga[i * m * k..(i + 1) * m * k],
                            m,
                            k,
                            n,
                        );
                    }
                    if let Some(gb) = gb.as_mut() {
                        ops::gemm_tn_acc(
                            &a.data()[i * m * k..(i + 1) * m * k],
                            gi,
                            &mut gb[i * k * n..(i + 1) * k * n],
                            m,
                            k,
                            n,
                        );
                    }
                }
            }
            vec![ga, gb]
        }
        Op::Add => {
            let ga = wanted[0].then(|| g.to_vec());
            let gb = wanted[1].then(|| {
                if x[1].shape() == x[0].shape() {
                    g.to_vec()
                } else {
                    let n = x[1].numel();
                    let mut acc = vec![0.0; n];
                    for (i, v) in g.iter().enumerate() {
                        acc[i % n] += v;
                    }
                    acc
                }
            });
            vec![ga, gb]
        }
        Op::Scale(s) => vec![Some(g.iter().map(|v| v * s).collect())],
        Op::Embedding { ids, .. } => {
            let h = x[0].shape()[1];
            let mut gt = vec![0.0; x[0].numel()];
            for (r, &id) in ids.iter().enumerate() {
                let dst = &mut gt[id * h..(id + 1) * h];
                for (d, v) in dst.iter_mut().zip(&g[r * h..(r + 1) * h]) {
                    *d += v;
                }
            }
            vec![Some(gt)]
        }
        Op::LayerNorm { .. } => {
            let xv = x[0];
            let gain = x[1].data();
            let h = gain.len();
            let rows = xv.numel() / h;
            let xhat = &rec.saved[..xv.numel()];
            let rstd = &rec.saved[xv.numel()..];
            let mut gx = wanted[0].then(|| vec![0.0; xv.numel()]);
            let mut gg = wanted[1].then(|| vec![0.0; h]);
            let mut gs = wanted[2].then(|| vec![0.0; h]);
            for r in 0..rows {
                let gr = &g[r * h..(r + 1) * h];
                let xr = &xhat[r * h..(r + 1) * h];
                if let Some(gg) = gg.as_mut() {
                    for j in 0..h {
                        gg[j] += gr[j] * xr[j];
                    }
                }
                if let Some(gs) = gs.as_mut() {
                    for j in 0..h {
                        gs[j] += gr[j];
                    }
                }
                if let Some(gx) = gx.as_mut() {
                    let mut sum_d = 0.0;
                    let mut sum_dx = 0.0;
                    for j in 0..h {
                        let d = gr[j] * gain[j];
                        sum_d += d;
                        sum_dx += d * xr[j];
                    }
                    let hf = h as f64;
                    for j in 0..h {
                        let d = gr[j] * gain[j];
                        gx[r * h + j] = rstd[r] / hf * (hf * d - sum_d - xr[j] * sum_dx);
                    }
                }
            }
            vec![gx, gg, gs]
        }
        Op::Softmax { .. } => {
            let y = out.data();
            let n = out.shape()[out.rank() - 1];
            let mut gx = vec![0.0; y.len()];
            for r in 0..y.len() / n {
                let yr = &y[r * n..(r + 1) * n];
                let gr = &g[r * n..(r + 1) * n];
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for j in 0..n {
                    gx[r * n + j] = yr[j] * (gr[j] - dot);
                }
            }
            vec![Some(gx)]
        }
        Op::Gelu => vec![Some(
            x[0].data()
                .iter()
                .zip(g)
                .map(|(&v, gv)| gv * ops::gelu_grad(v))
                .collect(),
        )],
        Op::Tanh => vec![Some(
            out.data()
                .iter()
                .zip(g)
                .map(|(y, gv)| gv * (1.0 - y * y))
                .collect(),
        )],
        Op::Dropout { .. } => vec![Some(
            rec.saved.iter().zip(g).map(|(m, gv)| m * gv).collect(),
        )],
        Op::Reshape(_) => vec![Some(g.to_vec())],
        Op::Permute(perm) => {
            let inv = ops::inverse_perm(perm);
            let (_, gx) = ops::permute(g, out.shape(), &inv);
            vec![Some(gx)]
        }
        Op::Mean => {
            let n = x[0].numel();
            vec![Some(vec![g[0] / n as f64; n])]
        }
        Op::CrossEntropy { labels } => {
            let k = x[0].shape()[1];
            let b = labels.len() as f64;
            let mut gx: Vec<f64> = rec.saved.iter().map(|p| p * g[0] / b).collect();
            for (r, &l) in labels.iter().enumerate() {
                gx[r * k + l] -= g[0] / b;
            }
            vec![Some(gx)]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::OpKind;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2], &[0.0, 0.0]));
        let y = tape.softmax(x, None).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn uniform_logits_cross_entropy_is_ln_k() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 4], &[0.3; 4]));
        for label in 0..4 {
            let l = tape.cross_entropy(x, vec![label]).unwrap();
            let v = tape.value(l).item().unwrap();
            assert!((v - 4f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn gelu_fixed_point_at_zero() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1], &[0.0]));
        let y = tape.gelu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0]);
    }

    #[test]
    fn square_has_derivative_six_at_three() {
        // x*x expressed as matmul of [1,1] x [1,1]
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 1], &[3.0]), true);
        let y = tape.matmul(x, x).unwrap();
        let l = tape.mean(y).unwrap();
        let grads = tape.backward(l).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn sum_of_softmax_has_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[4], &[0.1, -2.0, 1.5, 0.7]), true);
        let y = tape.softmax(x, None).unwrap();
        let l = tape.mean(y).unwrap();
        let grads = tape.backward(l).unwrap();
        for g in grads.get(x).unwrap().data() {
            assert!(g.abs() < 1e-15);
        }
    }

    #[test]
    fn masked_positions_get_negligible_probability() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 3], &[5.0, 0.0, -1.0]));
        let y = tape
            .softmax(x, Some(vec![ops::MASK_NEG, 0.0, 0.0]))
            .unwrap();
        let p = tape.value(y).data();
        assert!(p[0] < 1e-9);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dropout_rate_zero_is_identity() {
        let mut tape = Tape::new();
        let data = [1.0, -2.0, 3.5];
        let x = tape.constant(t(&[3], &data));
        let y = tape.dropout(x, 0.0, 99).unwrap();
        assert_eq!(tape.value(y).data(), &data);
    }

    #[test]
    fn dropout_is_seeded() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[64], &[1.0; 64]));
        let a = tape.dropout(x, 0.5, 7).unwrap();
        let b = tape.dropout(x, 0.5, 7).unwrap();
        let c = tape.dropout(x, 0.5, 8).unwrap();
        assert_eq!(tape.value(a), tape.value(b));
        assert_ne!(tape.value(a), tape.value(c));
    }

    #[test]
    fn shape_mismatch_names_the_kind() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2, 3], &[0.0; 6]));
        let b = tape.constant(t(&[2, 3], &[0.0; 6]));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[2], &[1.0, 2.0]), true);
        let b = tape.tanh(a).unwrap();
        assert!(matches!(tape.backward(b), Err(Error::Contract(_))));
    }

    #[test]
    fn cross_entropy_label_out_of_range() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[1, 2], &[0.0, 0.0]));
        assert!(tape.cross_entropy(a, vec![2]).is_err());
    }

    #[test]
    fn unknown_kind_is_unsupported() {
        let e = "conv2d".parse::<OpKind>().unwrap_err();
        assert!(matches!(e, Error::Unsupported(_)));
        assert_eq!("layer-norm".parse::<OpKind>().unwrap(), OpKind::LayerNorm);
    }

    #[test]
    fn no_record_without_grad() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2], &[1.0, 2.0]));
        let b = tape.tanh(a).unwrap();
        assert!(!tape.grad_enabled(b));
    }

    #[test]
    fn permute_roundtrip() {
        let data: Vec<f64> = (0..24).map(f64::from).collect();
        let (s, p) = ops::permute(&data, &[2, 3, 4], &[2, 0, 1]);
        assert_eq!(s, vec![4, 2, 3]);
        // element [i,j,k] moves to [k,i,j]
        assert_eq!(p[(3 * 2 + 1) * 3 + 2], data[12 + 2 * 4 + 3]);
        let (s2, back) = ops::permute(&p, &s, &ops::inverse_perm(&[2, 0, 1]));
        assert_eq!(s2, vec![2, 3, 4]);
        assert_eq!(back, data);
    }
}
