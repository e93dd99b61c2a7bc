//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its output value and enough
//! context to run its backward rule. Operands always precede the node that
//! consumes them, so a single reverse sweep visits nodes in a valid order.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::{Shape, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    },
    Deconv2d {
        input: Var,
        kernel: Var,
        stride: usize,
        pad: usize,
    },
    LeakyRelu {
        input: Var,
        slope: f32,
    },
    L2Normalize {
        input: Var,
    },
    MaxFuse {
        inputs: Vec<Var>,
        argmax: Vec<u32>,
    },
    AvgFuse {
        inputs: Vec<Var>,
    },
    ConcatChannels {
        inputs: Vec<Var>,
    },
    ConcatBatch {
        inputs: Vec<Var>,
    },
    BatchItem {
        input: Var,
        index: usize,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Sum {
        input: Var,
    },
    WeightedSum {
        input: Var,
        weights: Tensor,
    },
    CosineLoss {
        pred: Var,
        target: Tensor,
        mask: Vec<bool>,
        count: usize,
    },
}

impl Op {
    fn operands(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d {
                input, kernel, bias, ..
            } => {
                let mut v = vec![*input, *kernel];
                v.extend(bias.iter().copied());
                v
            }
            Op::Deconv2d { input, kernel, .. } => vec![*input, *kernel],
            Op::LeakyRelu { input, .. }
            | Op::L2Normalize { input }
            | Op::BatchItem { input, .. }
            | Op::Sum { input }
            | Op::WeightedSum { input, .. } => vec![*input],
            Op::CosineLoss { pred, .. } => vec![*pred],
            Op::MaxFuse { inputs, .. }
            | Op::AvgFuse { inputs }
            | Op::ConcatChannels { inputs }
            | Op::ConcatBatch { inputs } => inputs.clone(),
            Op::Add { a, b } | Op::Mul { a, b } => vec![*a, *b],
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Single-owner recording of a computation.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<&Tensor> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::ForeignVariable);
        }
        Ok(&self.nodes[v.index].value)
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        self.check(v)
    }

    /// Records an input or parameter.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let b = match bias {
            Some(b) => Some(self.check(b)?),
            None => None,
        };
        let value = ops::conv2d(self.check(input)?, self.check(kernel)?, b, stride, pad)?;
        Ok(self.push(
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                pad,
            },
            value,
        ))
    }

    pub fn deconv2d(&mut self, input: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        let value = ops::deconv2d(self.check(input)?, self.check(kernel)?, stride, pad)?;
        Ok(self.push(
            Op::Deconv2d {
                input,
                kernel,
                stride,
                pad,
            },
            value,
        ))
    }

    pub fn leaky_relu(&mut self, input: Var, slope: f32) -> Result<Var> {
        let value = ops::leaky_relu(self.check(input)?, slope)?;
        Ok(self.push(Op::LeakyRelu { input, slope }, value))
    }

    pub fn l2_normalize_channels(&mut self, input: Var) -> Result<Var> {
        let value = ops::l2_normalize_channels(self.check(input)?)?;
        Ok(self.push(Op::L2Normalize { input }, value))
    }

    fn values(&self, inputs: &[Var]) -> Result<Vec<Tensor>> {
        inputs.iter().map(|&v| self.check(v).cloned()).collect()
    }

    pub fn max_fuse(&mut self, inputs: &[Var]) -> Result<Var> {
        let (value, argmax) = ops::max_fuse(&self.values(inputs)?)?;
        Ok(self.push(
            Op::MaxFuse {
                inputs: inputs.to_vec(),
                argmax,
            },
            value,
        ))
    }

    pub fn avg_fuse(&mut self, inputs: &[Var]) -> Result<Var> {
        let value = ops::avg_fuse(&self.values(inputs)?)?;
        Ok(self.push(
            Op::AvgFuse {
                inputs: inputs.to_vec(),
            },
            value,
        ))
    }

    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let value = ops::concat_channels(&self.values(inputs)?)?;
        Ok(self.push(
            Op::ConcatChannels {
                inputs: inputs.to_vec(),
            },
            value,
        ))
    }

    pub fn concat_batch(&mut self, inputs: &[Var]) -> Result<Var> {
        let value = ops::concat_batch(&self.values(inputs)?)?;
        Ok(self.push(
            Op::ConcatBatch {
                inputs: inputs.to_vec(),
            },
            value,
        ))
    }

    pub fn batch_item(&mut self, input: Var, index: usize) -> Result<Var> {
        let value = ops::batch_item(self.check(input)?, index)?;
        Ok(self.push(Op::BatchItem { input, index }, value))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(Tensor, Tensor)> {
        let (ta, tb) = (self.check(a)?.clone(), self.check(b)?.clone());
        if ta.shape() != tb.shape() {
            return Err(Error::shape(op, format!("{} vs {}", ta.shape(), tb.shape())));
        }
        Ok((ta, tb))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = self.same_shape("add", a, b)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(ta.shape(), data)?;
        Ok(self.push(Op::Add { a, b }, value))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = self.same_shape("mul", a, b)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(ta.shape(), data)?;
        Ok(self.push(Op::Mul { a, b }, value))
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let value = Tensor::scalar(self.check(input)?.sum() as f32);
        Ok(self.push(Op::Sum { input }, value))
    }

    /// `Σ input ⊙ weights`, with constant weights.
    pub fn weighted_sum(&mut self, input: Var, weights: Tensor) -> Result<Var> {
        let x = self.check(input)?;
        if x.shape() != weights.shape() {
            return Err(Error::shape(
                "weighted_sum",
                format!("{} vs {}", x.shape(), weights.shape()),
            ));
        }
        let value = Tensor::scalar(x.dot(&weights) as f32);
        Ok(self.push(Op::WeightedSum { input, weights }, value))
    }

    /// Mean of `1 − pred·target` over masked pixels. `pred` and `target` are
    /// N×3×H×W; `mask` has one flag per (n, y, x).
    pub fn cosine_loss(&mut self, pred: Var, target: Tensor, mask: Vec<bool>) -> Result<Var> {
        let p = self.check(pred)?;
        let s = p.shape();
        if s != target.shape() || s.c() != 3 {
            return Err(Error::shape(
                "cosine_loss",
                format!("prediction {s} vs target {}", target.shape()),
            ));
        }
        if mask.len() != s.n() * s.plane_len() {
            return Err(Error::shape(
                "cosine_loss",
                format!("mask has {} entries for {s}", mask.len()),
            ));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::NoValidPixels);
        }
        let plane = s.plane_len();
        let mut total = 0.0f64;
        for b in 0..s.n() {
            let (pi, ti) = (p.item(b), target.item(b));
            for px in 0..plane {
                if mask[b * plane + px] {
                    let dot: f64 = (0..3)
                        .map(|c| pi[c * plane + px] as f64 * ti[c * plane + px] as f64)
                        .sum();
                    total += 1.0 - dot;
                }
            }
        }
        let value = Tensor::scalar((total / count as f64) as f32);
        Ok(self.push(
            Op::CosineLoss {
                pred,
                target,
                mask,
                count,
            },
            value,
        ))
    }

    /// Gradients of the scalar `loss` with respect to every value it depends on.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let value = self.check(loss)?;
        if value.numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must hold one element, got {}", value.shape()),
            ));
        }
        let mut reachable = vec![false; loss.index + 1];
        reachable[loss.index] = true;
        for i in (0..=loss.index).rev() {
            if reachable[i] {
                for v in self.nodes[i].op.operands() {
                    reachable[v.index] = true;
                }
            }
        }

        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        grads[loss.index] = Some(vec![1.0]);
        for i in (0..=loss.index).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let g = Tensor::new(node.value.shape(), g)?;
            for (var, contribution) in self.node_backward(node, &g)? {
                accumulate(&mut grads[var.index], contribution);
            }
            grads[i] = Some(g.into_vec());
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .zip(reachable.iter().chain(std::iter::repeat(&false)))
            .map(|((g, node), &reach)| match g {
                Some(d) => Some(Tensor::new(node.value.shape(), d).expect("gradient shape")),
                None if reach => Some(Tensor::zeros(node.value.shape())),
                None => None,
            })
            .collect();
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }

    fn node_backward(&self, node: &Node, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let val = |v: Var| &self.nodes[v.index].value;
        Ok(match &node.op {
            Op::Leaf => vec![],
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                pad,
            } => {
                let gr = ops::conv2d_backward(val(*input), val(*kernel), g, *stride, *pad)?;
                let mut out = vec![(*input, gr.input), (*kernel, gr.kernel)];
                if let Some(b) = bias {
                    out.push((*b, gr.bias.reshape(val(*b).shape())?));
                }
                out
            }
            Op::Deconv2d {
                input,
                kernel,
                stride,
                pad,
            } => {
                let gr = ops::deconv2d_backward(val(*input), val(*kernel), g, *stride, *pad)?;
                vec![(*input, gr.input), (*kernel, gr.kernel)]
            }
            Op::LeakyRelu { input, slope } => {
                vec![(*input, ops::leaky_relu_backward(val(*input), g, *slope)?)]
            }
            Op::L2Normalize { input } => {
                vec![(*input, ops::l2_normalize_backward(val(*input), g)?)]
            }
            Op::MaxFuse { inputs, argmax } => inputs
                .iter()
                .copied()
                .zip(ops::max_fuse_backward(g, argmax, inputs.len()))
                .collect(),
            Op::AvgFuse { inputs } => {
                let share = ops::avg_fuse_backward(g, inputs.len());
                inputs.iter().map(|&v| (v, share.clone())).collect()
            }
            Op::ConcatChannels { inputs } => {
                let channels: Vec<usize> = inputs.iter().map(|&v| val(v).shape().c()).collect();
                inputs
                    .iter()
                    .copied()
                    .zip(ops::split_channels(g, &channels)?)
                    .collect()
            }
            Op::ConcatBatch { inputs } => {
                let mut offset = 0;
                let mut out = Vec::with_capacity(inputs.len());
                for &v in inputs {
                    let len = val(v).numel();
                    let part = Tensor::new(val(v).shape(), g.data()[offset..offset + len].to_vec())?;
                    offset += len;
                    out.push((v, part));
                }
                out
            }
            Op::BatchItem { input, index } => {
                let s = val(*input).shape();
                let mut data = vec![0.0f32; s.numel()];
                let len = s.item_len();
                data[index * len..(index + 1) * len].copy_from_slice(g.data());
                vec![(*input, Tensor::new(s, data)?)]
            }
            Op::Add { a, b } => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Mul { a, b } => {
                let (ta, tb) = (val(*a), val(*b));
                let ga = tb.data().iter().zip(g.data()).map(|(y, d)| y * d).collect();
                let gb = ta.data().iter().zip(g.data()).map(|(x, d)| x * d).collect();
                vec![
                    (*a, Tensor::new(ta.shape(), ga)?),
                    (*b, Tensor::new(tb.shape(), gb)?),
                ]
            }
            Op::Sum { input } => {
                vec![(*input, Tensor::full(val(*input).shape(), g.data()[0]))]
            }
            Op::WeightedSum { input, weights } => {
                let d = g.data()[0];
                let data = weights.data().iter().map(|w| w * d).collect();
                vec![(*input, Tensor::new(weights.shape(), data)?)]
            }
            Op::CosineLoss {
                pred,
                target,
                mask,
                count,
            } => {
                let s: Shape = target.shape();
                let plane = s.plane_len();
                let scale = -(g.data()[0] as f64) / *count as f64;
                let mut data = vec![0.0f32; s.numel()];
                for b in 0..s.n() {
                    let t = target.item(b);
                    let dst = &mut data[b * 3 * plane..(b + 1) * 3 * plane];
                    for px in 0..plane {
                        if mask[b * plane + px] {
                            for c in 0..3 {
                                dst[c * plane + px] = (t[c * plane + px] as f64 * scale) as f32;
                            }
                        }
                    }
                }
                vec![(*pred, Tensor::new(s, data)?)]
            }
        })
    }
}

fn accumulate(slot: &mut Option<Vec<f32>>, contribution: Tensor) {
    match slot {
        Some(acc) => {
            for (a, c) in acc.iter_mut().zip(contribution.data()) {
                *a += c;
            }
        }
        None => *slot = Some(contribution.into_vec()),
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index).and_then(Option::as_ref)
    }
}

/// Free-function form of [`Tape::backward`].
pub fn backward(tape: &Tape, loss: Var) -> Result<Gradients> {
    tape.backward(loss)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: Shape) -> Tensor {
        Tensor::from_fn(shape, |i| (i as f32 * 0.37).sin())
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(ramp(Shape::new(1, 2, 3, 3)));
        let loss = tape.sum(x).unwrap();
        let g = backward(&tape, loss).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 1.0));
        assert_eq!(g.get(loss).unwrap().data(), &[1.0]);
    }

    #[test]
    fn half_square_gradient_is_input() {
        let mut tape = Tape::new();
        let xv = ramp(Shape::new(2, 1, 2, 2));
        let x = tape.leaf(xv.clone());
        let sq = tape.mul(x, x).unwrap();
        let loss = tape
            .weighted_sum(sq, Tensor::full(xv.shape(), 0.5))
            .unwrap();
        let g = tape.backward(loss).unwrap();
        assert!(g.get(x).unwrap().max_abs_diff(&xv) < 1e-7);
    }

    #[test]
    fn foreign_and_non_scalar_losses_fail() {
        let mut a = Tape::new();
        let mut b = Tape::new();
        let xa = a.leaf(Tensor::scalar(1.0));
        let _ = b.leaf(Tensor::scalar(1.0));
        assert!(matches!(b.backward(xa), Err(Error::ForeignVariable)));
        let big = a.leaf(Tensor::zeros(Shape::new(1, 1, 1, 2)));
        assert!(a.backward(big).is_err());
    }

    #[test]
    fn unrelated_values_get_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let y = tape.leaf(Tensor::scalar(3.0));
        let loss = tape.sum(x).unwrap();
        let g = tape.backward(loss).unwrap();
        assert!(g.get(y).is_none());
        assert!(g.get(x).is_some());
    }

    #[test]
    fn cosine_loss_requires_mask() {
        let mut tape = Tape::new();
        let t = Tensor::full(Shape::new(1, 3, 1, 1), 1.0);
        let p = tape.leaf(t.clone());
        assert!(matches!(
            tape.cosine_loss(p, t, vec![false]),
            Err(Error::NoValidPixels)
        ));
    }
}
