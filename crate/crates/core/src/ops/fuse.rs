//! Order-agnostic fusion of a variable number of feature maps.
//!
//! Both reductions are available as one-shot functions over a slice and as
//! streaming accumulators. The two forms share the same arithmetic, so a
//! streamed fusion is bit-identical to the slice version.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

fn check_same_shape(op: &'static str, expected: Shape, got: Shape) -> Result<()> {
    if expected != got {
        return Err(Error::shape(
            op,
            format!("feature map {got} does not match {expected}"),
        ));
    }
    Ok(())
}

/// Running elementwise maximum. Ties keep the earliest source.
#[derive(Debug, Clone)]
pub struct MaxAccumulator {
    shape: Shape,
    values: Vec<f32>,
    argmax: Vec<u32>,
    count: u32,
}

impl MaxAccumulator {
    pub fn new(first: &Tensor) -> Self {
        MaxAccumulator {
            shape: first.shape(),
            values: first.data().to_vec(),
            argmax: vec![0; first.numel()],
            count: 1,
        }
    }

    pub fn push(&mut self, next: &Tensor) -> Result<()> {
        check_same_shape("max_fuse", self.shape, next.shape())?;
        let index = self.count;
        for ((v, a), &x) in self
            .values
            .iter_mut()
            .zip(self.argmax.iter_mut())
            .zip(next.data())
        {
            if x > *v {
                *v = x;
                *a = index;
            }
        }
        self.count += 1;
        Ok(())
    }

    pub fn finish(self) -> (Tensor, Vec<u32>) {
        (
            Tensor::new(self.shape, self.values).expect("accumulator shape"),
            self.argmax,
        )
    }
}

/// Elementwise maximum across `features`, plus the index of the input that
/// supplied each element (lowest index on ties).
pub fn max_fuse(features: &[Tensor]) -> Result<(Tensor, Vec<u32>)> {
    let (first, rest) = features.split_first().ok_or(Error::EmptyFusion)?;
    let mut acc = MaxAccumulator::new(first);
    for f in rest {
        acc.push(f)?;
    }
    Ok(acc.finish())
}

/// Running elementwise mean. Sums are kept in f64; for f32 inputs of
/// comparable magnitude the sum is exact, which makes the result independent
/// of input order.
#[derive(Debug, Clone)]
pub struct MeanAccumulator {
    shape: Shape,
    sums: Vec<f64>,
    count: usize,
}

impl MeanAccumulator {
    pub fn new(first: &Tensor) -> Self {
        MeanAccumulator {
            shape: first.shape(),
            sums: first.data().iter().map(|&v| v as f64).collect(),
            count: 1,
        }
    }

    pub fn push(&mut self, next: &Tensor) -> Result<()> {
        check_same_shape("avg_fuse", self.shape, next.shape())?;
        for (s, &x) in self.sums.iter_mut().zip(next.data()) {
            *s += x as f64;
        }
        self.count += 1;
        Ok(())
    }

    pub fn finish(self) -> Tensor {
        let n = self.count as f64;
        let data = self.sums.into_iter().map(|s| (s / n) as f32).collect();
        Tensor::new(self.shape, data).expect("accumulator shape")
    }
}

pub fn avg_fuse(features: &[Tensor]) -> Result<Tensor> {
    let (first, rest) = features.split_first().ok_or(Error::EmptyFusion)?;
    let mut acc = MeanAccumulator::new(first);
    for f in rest {
        acc.push(f)?;
    }
    Ok(acc.finish())
}

/// Routes `grad` back to the inputs recorded in `argmax`.
pub fn max_fuse_backward(grad: &Tensor, argmax: &[u32], count: usize) -> Vec<Tensor> {
    let mut out = vec![vec![0.0f32; grad.numel()]; count];
    for (i, (&g, &a)) in grad.data().iter().zip(argmax).enumerate() {
        out[a as usize][i] = g;
    }
    out.into_iter()
        .map(|d| Tensor::new(grad.shape(), d).expect("grad shape"))
        .collect()
}

pub fn avg_fuse_backward(grad: &Tensor, count: usize) -> Tensor {
    let scale = 1.0 / count as f64;
    let data = grad.data().iter().map(|&g| (g as f64 * scale) as f32).collect();
    Tensor::new(grad.shape(), data).expect("grad shape")
}
