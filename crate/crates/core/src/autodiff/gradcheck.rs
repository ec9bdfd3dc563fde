//! Central finite-difference check of the analytic backward rules.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ops::{Op, OpKind, MASK_NEG};
use super::tape::Tape;
use super::tensor::Tensor;
use crate::error::Result;

/// Step used for the central differences.
pub const FD_STEP: f64 = 1e-4;

/// A seeded operation instance: the op with its attributes, its inputs, and
/// which inputs are differentiable.
#[derive(Clone, Debug)]
pub struct Probe {
    pub op: Op,
    pub inputs: Vec<Tensor>,
    pub differentiable: Vec<bool>,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_parts(shape.to_vec(), data)
}

impl Probe {
    /// Small random instance of `kind` drawn from `seed`.
    pub fn seeded(kind: OpKind, seed: u64) -> Probe {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let rng = &mut rng;
        match kind {
            OpKind::MatMul => {
                if seed % 2 == 0 {
                    Probe {
                        op: Op::MatMul,
                        inputs: vec![uniform(rng, &[3, 3], -1.0, 1.0), uniform(rng, &[3, 3], -1.0, 1.0)],
                        differentiable: vec![true, true],
                    }
                } else {
                    Probe {
                        op: Op::MatMul,
                        inputs: vec![
                            uniform(rng, &[2, 3, 4], -1.0, 1.0),
                            uniform(rng, &[2, 4, 3], -1.0, 1.0),
                        ],
                        differentiable: vec![true, true],
                    }
                }
            }
            OpKind::Add => {
                let b = if seed % 2 == 0 { vec![2, 3] } else { vec![3] };
                Probe {
                    op: Op::Add,
                    inputs: vec![uniform(rng, &[2, 3], -1.0, 1.0), uniform(rng, &b, -1.0, 1.0)],
                    differentiable: vec![true, true],
                }
            }
            OpKind::Scale => Probe {
                op: Op::Scale(rng.random_range(-2.0..2.0)),
                inputs: vec![uniform(rng, &[2, 3], -1.0, 1.0)],
                differentiable: vec![true],
            },
            OpKind::Embedding => {
                let ids = (0..6).map(|_| rng.random_range(0..5)).collect();
                Probe {
                    op: Op::Embedding {
                        ids,
                        shape: vec![2, 3],
                    },
                    inputs: vec![uniform(rng, &[5, 4], -1.0, 1.0)],
                    differentiable: vec![true],
                }
            }
            OpKind::LayerNorm => Probe {
                op: Op::LayerNorm { eps: 1e-12 },
                inputs: vec![
                    uniform(rng, &[3, 5], -2.0, 2.0),
                    uniform(rng, &[5], 0.5, 1.5),
                    uniform(rng, &[5], -0.5, 0.5),
                ],
                differentiable: vec![true, true, true],
            },
            OpKind::Softmax => {
                let mask = (0..12)
                    .map(|i| if i % 4 == 3 && rng.random_bool(0.5) { MASK_NEG } else { 0.0 })
                    .collect();
                Probe {
                    op: Op::Softmax { mask: Some(mask) },
                    inputs: vec![uniform(rng, &[3, 4], -2.0, 2.0)],
                    differentiable: vec![true],
                }
            }
            OpKind::Gelu => Probe {
                op: Op::Gelu,
                inputs: vec![uniform(rng, &[2, 4], -3.0, 3.0)],
                differentiable: vec![true],
            },
            OpKind::Tanh => Probe {
                op: Op::Tanh,
                inputs: vec![uniform(rng, &[2, 4], -2.0, 2.0)],
                differentiable: vec![true],
            },
            OpKind::Dropout => Probe {
                op: Op::Dropout {
                    rate: 0.3,
                    seed: rng.random(),
                },
                inputs: vec![uniform(rng, &[2, 5], -1.0, 1.0)],
                differentiable: vec![true],
            },
            OpKind::Reshape => Probe {
                op: Op::Reshape(vec![3, 2, 2]),
                inputs: vec![uniform(rng, &[2, 6], -1.0, 1.0)],
                differentiable: vec![true],
            },
            OpKind::Permute => Probe {
                op: Op::Permute(vec![1, 2, 0]),
                inputs: vec![uniform(rng, &[2, 3, 4], -1.0, 1.0)],
                differentiable: vec![true],
            },
            OpKind::Mean => Probe {
                op: Op::Mean,
                inputs: vec![uniform(rng, &[3, 4], -1.0, 1.0)],
                differentiable: vec![true],
            },
            OpKind::CrossEntropy => {
                let (b, k) = (3, 2 + (seed as usize % 4));
                let labels = (0..b).map(|_| rng.random_range(0..k)).collect();
                Probe {
                    op: Op::CrossEntropy { labels },
                    inputs: vec![uniform(rng, &[b, k], -2.0, 2.0)],
                    differentiable: vec![true],
                }
            }
        }
    }

    /// Scalar objective: the op output contracted with a fixed random
    /// cotangent (or the op output itself when it is already scalar).
    fn objective(&self, inputs: &[Tensor], analytic: bool) -> Result<(f64, Vec<Option<Tensor>>)> {
        let mut tape = Tape::new();
        let vars: Vec<_> = inputs
            .iter()
            .zip(&self.differentiable)
            .map(|(t, &d)| tape.leaf(t.clone(), d && analytic))
            .collect();
        let out = tape.apply(self.op.clone(), &vars)?;
        let n = tape.value(out).numel();
        let loss = if n == 1 {
            out
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(0xc0ffee);
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let flat = tape.reshape(out, vec![1, n])?;
            let w = tape.constant(Tensor::from_parts(vec![n, 1], w));
            tape.matmul(flat, w)?
        };
        let value = tape.value(loss).item()?;
        if !analytic {
            return Ok((value, Vec::new()));
        }
        let grads = tape.backward(loss)?;
        let gs = vars.iter().map(|v| grads.get(*v).cloned()).collect();
        Ok((value, gs))
    }

    /// Max over elements of `|a - n| / max(1e-8, |a| + |n|)`.
    pub fn max_relative_error(&self) -> Result<f64> {
        let (_, analytic) = self.objective(&self.inputs, true)?;
        let mut worst: f64 = 0.0;
        for (i, input) in self.inputs.iter().enumerate() {
            if !self.differentiable[i] {
                continue;
            }
            let a = analytic[i]
                .as_ref()
                .map(|t| t.data().to_vec())
                .unwrap_or_else(|| vec![0.0; input.numel()]);
            for j in 0..input.numel() {
                let mut probe = self.inputs.clone();
                let mut bumped = probe[i].data().to_vec();
                let x0 = bumped[j];
                bumped[j] = x0 + FD_STEP;
                probe[i] = Tensor::from_parts(input.shape().to_vec(), bumped.clone());
                let (fp, _) = self.objective(&probe, false)?;
                bumped[j] = x0 - FD_STEP;
                probe[i] = Tensor::from_parts(input.shape().to_vec(), bumped);
                let (fm, _) = self.objective(&probe, false)?;
                let numeric = (fp - fm) / (2.0 * FD_STEP);
                let err = (a[j] - numeric).abs() / (a[j].abs() + numeric.abs()).max(1e-8);
                worst = worst.max(err);
            }
        }
        Ok(worst)
    }
}

/// Max relative error between analytic and central-difference gradients
/// for a seeded instance of `kind`.
pub fn grad_check(kind: OpKind, seed: u64) -> Result<f64> {
    Probe::seeded(kind, seed).max_relative_error()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_3x3_passes() {
        for seed in [0, 2, 4] {
            let e = grad_check(OpKind::MatMul, seed).unwrap();
            assert!(e < 1e-4, "seed {seed}: {e}");
        }
    }

    #[test]
    fn layer_norm_constant_input_is_shift_invariant() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 4], vec![0.7; 4]).unwrap(), true);
        let g = tape.constant(Tensor::new(vec![4], vec![1.0, 2.0, -1.0, 0.5]).unwrap());
        let b = tape.constant(Tensor::new(vec![4], vec![0.1; 4]).unwrap());
        let y = tape.layer_norm(x, g, b, 1e-12).unwrap();
        let flat = tape.reshape(y, vec![1, 4]).unwrap();
        let w = tape.constant(Tensor::new(vec![4, 1], vec![0.3, -1.2, 0.8, 2.0]).unwrap());
        let l = tape.matmul(flat, w).unwrap();
        let grads = tape.backward(l).unwrap();
        let along_shift: f64 = grads.get(x).unwrap().data().iter().sum();
        assert!(along_shift.abs() < 1e-6);
    }

    #[test]
    fn binary_cross_entropy_gradient_is_softmax_minus_onehot() {
        let logits = [0.4, -1.3];
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 2], logits.to_vec()).unwrap(), true);
        let l = tape.cross_entropy(x, vec![1]).unwrap();
        let grads = tape.backward(l).unwrap();
        let z = logits[0].exp() + logits[1].exp();
        let expected = [logits[0].exp() / z, logits[1].exp() / z - 1.0];
        for (g, e) in grads.get(x).unwrap().data().iter().zip(expected) {
            assert!((g - e).abs() < 1e-6);
        }
    }
}
