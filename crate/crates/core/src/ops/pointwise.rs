use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Floor on the per-pixel norm in [`l2_normalize_channels`].
pub const NORMALIZE_EPS: f32 = 1e-12;

pub fn leaky_relu(input: &Tensor, slope: f32) -> Result<Tensor> {
    if !(0.0..1.0).contains(&slope) {
        return Err(Error::InvalidArgument(format!(
            "leaky_relu slope must lie in [0, 1), got {slope}"
        )));
    }
    let data = input
        .data()
        .iter()
        .map(|&x| if x >= 0.0 { x } else { slope * x })
        .collect();
    Tensor::new(input.shape(), data)
}

pub fn leaky_relu_backward(input: &Tensor, grad_out: &Tensor, slope: f32) -> Result<Tensor> {
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x >= 0.0 { g } else { slope * g })
        .collect();
    Tensor::new(input.shape(), data)
}

fn check_three_channels(op: &'static str, shape: Shape) -> Result<()> {
    if shape.c() != 3 {
        return Err(Error::shape(
            op,
            format!("expected 3 channels per pixel, got {shape}"),
        ));
    }
    Ok(())
}

fn pixel_norm(v: [f32; 3]) -> f32 {
    let s: f64 = v.iter().map(|&x| x as f64 * x as f64).sum();
    s.sqrt() as f32
}

/// Scales every per-pixel 3-vector to unit length: `x / max(‖x‖, ε)`.
pub fn l2_normalize_channels(input: &Tensor) -> Result<Tensor> {
    let s = input.shape();
    check_three_channels("l2_normalize_channels", s)?;
    let plane = s.plane_len();
    let mut out = vec![0.0f32; input.numel()];
    for b in 0..s.n() {
        let src = input.item(b);
        let dst = &mut out[b * 3 * plane..(b + 1) * 3 * plane];
        for p in 0..plane {
            let v = [src[p], src[plane + p], src[2 * plane + p]];
            let norm = pixel_norm(v).max(NORMALIZE_EPS);
            for c in 0..3 {
                dst[c * plane + p] = v[c] / norm;
            }
        }
    }
    Tensor::new(s, out)
}

pub fn l2_normalize_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    let s = input.shape();
    check_three_channels("l2_normalize_channels backward", s)?;
    let plane = s.plane_len();
    let mut out = vec![0.0f32; input.numel()];
    for b in 0..s.n() {
        let src = input.item(b);
        let g = grad_out.item(b);
        let dst = &mut out[b * 3 * plane..(b + 1) * 3 * plane];
        for p in 0..plane {
            let v = [src[p], src[plane + p], src[2 * plane + p]];
            let gv = [g[p], g[plane + p], g[2 * plane + p]];
            let norm = pixel_norm(v);
            if norm > NORMALIZE_EPS {
                let y = v.map(|x| x / norm);
                let proj: f32 = (0..3).map(|c| y[c] * gv[c]).sum();
                for c in 0..3 {
                    dst[c * plane + p] = (gv[c] - y[c] * proj) / norm;
                }
            } else {
                for c in 0..3 {
                    dst[c * plane + p] = gv[c] / NORMALIZE_EPS;
                }
            }
        }
    }
    Tensor::new(s, out)
}

/// Concatenates tensors along the channel axis; batch and spatial sizes must agree.
pub fn concat_channels(parts: &[Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidArgument("concat_channels of an empty list".into()))?
        .shape();
    for p in parts {
        let s = p.shape();
        if s.n() != first.n() || s.h() != first.h() || s.w() != first.w() {
            return Err(Error::shape(
                "concat_channels",
                format!("{s} is incompatible with {first}"),
            ));
        }
    }
    let c_total: usize = parts.iter().map(|p| p.shape().c()).sum();
    let mut out = Vec::with_capacity(first.n() * c_total * first.plane_len());
    for b in 0..first.n() {
        for p in parts {
            out.extend_from_slice(p.item(b));
        }
    }
    Tensor::new(Shape::new(first.n(), c_total, first.h(), first.w()), out)
}

/// Splits a gradient of [`concat_channels`] back into per-part tensors.
pub fn split_channels(grad: &Tensor, channels: &[usize]) -> Result<Vec<Tensor>> {
    let s = grad.shape();
    if channels.iter().sum::<usize>() != s.c() {
        return Err(Error::shape("split_channels", format!("{channels:?} vs {s}")));
    }
    let plane = s.plane_len();
    let mut parts: Vec<Vec<f32>> = channels
        .iter()
        .map(|&c| Vec::with_capacity(s.n() * c * plane))
        .collect();
    for b in 0..s.n() {
        let item = grad.item(b);
        let mut offset = 0;
        for (part, &c) in parts.iter_mut().zip(channels) {
            part.extend_from_slice(&item[offset * plane..(offset + c) * plane]);
            offset += c;
        }
    }
    parts
        .into_iter()
        .zip(channels)
        .map(|(data, &c)| Tensor::new(Shape::new(s.n(), c, s.h(), s.w()), data))
        .collect()
}

/// Stacks tensors along the batch axis.
pub fn concat_batch(parts: &[Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidArgument("concat_batch of an empty list".into()))?
        .shape();
    let mut n = 0;
    let mut out = Vec::new();
    for p in parts {
        let s = p.shape();
        if s.c() != first.c() || s.h() != first.h() || s.w() != first.w() {
            return Err(Error::shape("concat_batch", format!("{s} is incompatible with {first}")));
        }
        n += s.n();
        out.extend_from_slice(p.data());
    }
    Tensor::new(Shape::new(n, first.c(), first.h(), first.w()), out)
}

/// Batch item `index` as a 1×C×H×W tensor.
pub fn batch_item(input: &Tensor, index: usize) -> Result<Tensor> {
    let s = input.shape();
    if index >= s.n() {
        return Err(Error::shape(
            "batch_item",
            format!("index {index} out of range for {s}"),
        ));
    }
    Tensor::new(Shape::new(1, s.c(), s.h(), s.w()), input.item(index).to_vec())
}
