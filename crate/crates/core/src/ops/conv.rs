//! Convolution and transposed convolution.
//!
//! The fast path lowers each batch item to a column matrix (im2col) and
//! runs a single-precision GEMM. [`conv2d_direct`] is the plain nested-loop
//! form of the same operator and is kept as a cross-check.
//!
//! Kernel layouts follow the usual convention: a convolution kernel is
//! `Cout×Cin×k×k`; a transposed-convolution kernel is `Cin×Cout×k×k`, i.e.
//! the same tensor a convolution from `Cout` back to `Cin` channels would
//! use. With that layout `⟨conv2d(x, K), y⟩ = ⟨x, deconv2d(y, K)⟩`.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Output length of a strided, padded convolution along one axis.
pub fn conv_out_len(len: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 {
        return None;
    }
    (len + 2 * pad).checked_sub(k).map(|span| span / stride + 1)
}

/// Output length of the transposed convolution along one axis.
pub fn deconv_out_len(len: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || len == 0 {
        return None;
    }
    ((len - 1) * stride + k)
        .checked_sub(2 * pad)
        .filter(|&n| n > 0)
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn col_rows(&self) -> usize {
        self.c * self.k * self.k
    }
    fn col_cols(&self) -> usize {
        self.ho * self.wo
    }
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col(img: &[f32], g: &Geometry, cols: &mut [f32]) {
    let n_out = g.col_cols();
    for c in 0..g.c {
        let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * n_out..(row + 1) * n_out];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f32], g: &Geometry, img: &mut [f32]) {
    let n_out = g.col_cols();
    for c in 0..g.c {
        let plane = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * n_out..(row + 1) * n_out];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Row-major matrix operand: `rows×cols` as stored, optionally transposed.
#[derive(Clone, Copy)]
struct Mat<'a> {
    data: &'a [f32],
    rows: usize,
    cols: usize,
    transposed: bool,
}

impl<'a> Mat<'a> {
    fn new(data: &'a [f32], rows: usize, cols: usize) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Mat {
            data,
            rows,
            cols,
            transposed: false,
        }
    }
    fn t(self) -> Self {
        Mat {
            transposed: !self.transposed,
            ..self
        }
    }
    fn logical(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }
    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `out = a·b + beta·out` with `out` row-major.
fn gemm(a: Mat, b: Mat, out: &mut [f32], beta: f32) {
    let (m, k) = a.logical();
    let (k2, n) = b.logical();
    assert_eq!(k, k2, "gemm inner dimension");
    assert_eq!(out.len(), m * n, "gemm output size");
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: every operand slice was checked to hold exactly the element
    // count implied by its dimensions and strides.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn square_kernel(op: &'static str, kernel: &Tensor) -> Result<usize> {
    let ks = kernel.shape();
    if ks.h() != ks.w() {
        return Err(Error::shape(op, format!("kernel must be square, got {ks}")));
    }
    Ok(ks.h())
}

fn check_stride(op: &'static str, stride: usize) -> Result<()> {
    if stride == 0 {
        return Err(Error::InvalidArgument(format!("{op}: stride must be ≥ 1")));
    }
    Ok(())
}

fn conv_geometry(input: Shape, kernel: &Tensor, stride: usize, pad: usize) -> Result<Geometry> {
    check_stride("conv2d", stride)?;
    let k = square_kernel("conv2d", kernel)?;
    let ks = kernel.shape();
    if input.c() != ks.c() {
        return Err(Error::shape(
            "conv2d",
            format!(
                "input has {} channels but kernel {ks} expects Cin = {}",
                input.c(),
                ks.c()
            ),
        ));
    }
    let ho = conv_out_len(input.h(), k, stride, pad);
    let wo = conv_out_len(input.w(), k, stride, pad);
    match (ho, wo) {
        (Some(ho), Some(wo)) => Ok(Geometry {
            c: input.c(),
            h: input.h(),
            w: input.w(),
            k,
            stride,
            pad,
            ho,
            wo,
        }),
        _ => Err(Error::shape(
            "conv2d",
            format!("kernel {k}×{k} with pad {pad} does not fit input {input}"),
        )),
    }
}

fn check_bias(op: &'static str, bias: Option<&Tensor>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.numel() != channels {
            return Err(Error::shape(
                op,
                format!("bias has {} entries, expected Cout = {channels}", b.numel()),
            ));
        }
    }
    Ok(())
}

/// Cross-correlation of `input` (N×Cin×H×W) with `kernel` (Cout×Cin×k×k).
pub fn conv2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let g = conv_geometry(input.shape(), kernel, stride, pad)?;
    let cout = kernel.shape().n();
    check_bias("conv2d", bias, cout)?;
    let n = input.shape().n();
    let out_len = cout * g.col_cols();
    let mut out = vec![0.0f32; n * out_len];
    let kmat = Mat::new(kernel.data(), cout, g.col_rows());
    let mut cols = vec![0.0f32; if g.is_pointwise() { 0 } else { g.col_rows() * g.col_cols() }];
    for b in 0..n {
        let img = input.item(b);
        let dst = &mut out[b * out_len..(b + 1) * out_len];
        let colmat = if g.is_pointwise() {
            Mat::new(img, g.col_rows(), g.col_cols())
        } else {
            im2col(img, &g, &mut cols);
            Mat::new(&cols, g.col_rows(), g.col_cols())
        };
        gemm(kmat, colmat, dst, 0.0);
        if let Some(bias) = bias {
            for (co, &bv) in bias.data().iter().enumerate() {
                for v in &mut dst[co * g.col_cols()..(co + 1) * g.col_cols()] {
                    *v += bv;
                }
            }
        }
    }
    Tensor::new(Shape::new(n, cout, g.ho, g.wo), out)
}

/// Nested-loop convolution with the same contract as [`conv2d`].
pub fn conv2d_direct(
    input: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let g = conv_geometry(input.shape(), kernel, stride, pad)?;
    let cout = kernel.shape().n();
    check_bias("conv2d", bias, cout)?;
    let n = input.shape().n();
    let out_shape = Shape::new(n, cout, g.ho, g.wo);
    let mut out = Vec::with_capacity(out_shape.numel());
    for b in 0..n {
        for co in 0..cout {
            for oy in 0..g.ho {
                for ox in 0..g.wo {
                    let mut acc = bias.map_or(0.0, |t| t.data()[co] as f64);
                    for ci in 0..g.c {
                        for ki in 0..g.k {
                            let iy = (oy * stride + ki) as isize - pad as isize;
                            if iy < 0 || iy >= g.h as isize {
                                continue;
                            }
                            for kj in 0..g.k {
                                let ix = (ox * stride + kj) as isize - pad as isize;
                                if ix < 0 || ix >= g.w as isize {
                                    continue;
                                }
                                acc += input.at(b, ci, iy as usize, ix as usize) as f64
                                    * kernel.at(co, ci, ki, kj) as f64;
                            }
                        }
                    }
                    out.push(acc as f32);
                }
            }
        }
    }
    Tensor::new(out_shape, out)
}

/// Gradients of [`conv2d`] with respect to its operands.
pub struct ConvGrads {
    pub input: Tensor,
    pub kernel: Tensor,
    pub bias: Tensor,
}

pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<ConvGrads> {
    let g = conv_geometry(input.shape(), kernel, stride, pad)?;
    let cout = kernel.shape().n();
    let n = input.shape().n();
    let expected = Shape::new(n, cout, g.ho, g.wo);
    if grad_out.shape() != expected {
        return Err(Error::shape(
            "conv2d backward",
            format!("gradient is {}, output was {expected}", grad_out.shape()),
        ));
    }
    let kmat = Mat::new(kernel.data(), cout, g.col_rows());
    let mut grad_kernel = vec![0.0f32; kernel.numel()];
    let mut grad_bias = vec![0.0f64; cout];
    let mut grad_input = vec![0.0f32; input.numel()];
    let mut cols = vec![0.0f32; g.col_rows() * g.col_cols()];
    for b in 0..n {
        let gout = Mat::new(grad_out.item(b), cout, g.col_cols());
        for (co, acc) in grad_bias.iter_mut().enumerate() {
            *acc += gout.data[co * g.col_cols()..(co + 1) * g.col_cols()]
                .iter()
                .map(|&v| v as f64)
                .sum::<f64>();
        }
        let dst = &mut grad_input[b * input.shape().item_len()..(b + 1) * input.shape().item_len()];
        if g.is_pointwise() {
            let img = Mat::new(input.item(b), g.col_rows(), g.col_cols());
            gemm(gout, img.t(), &mut grad_kernel, 1.0);
            gemm(kmat.t(), gout, dst, 0.0);
        } else {
            im2col(input.item(b), &g, &mut cols);
            gemm(gout, Mat::new(&cols, g.col_rows(), g.col_cols()).t(), &mut grad_kernel, 1.0);
            gemm(kmat.t(), gout, &mut cols, 0.0);
            col2im(&cols, &g, dst);
        }
    }
    Ok(ConvGrads {
        input: Tensor::new(input.shape(), grad_input)?,
        kernel: Tensor::new(kernel.shape(), grad_kernel)?,
        bias: Tensor::new(
            Shape::new(1, cout, 1, 1),
            grad_bias.into_iter().map(|v| v as f32).collect(),
        )?,
    })
}

fn deconv_geometry(input: Shape, kernel: &Tensor, stride: usize, pad: usize) -> Result<Geometry> {
    check_stride("deconv2d", stride)?;
    let k = square_kernel("deconv2d", kernel)?;
    let ks = kernel.shape();
    if input.c() != ks.n() {
        return Err(Error::shape(
            "deconv2d",
            format!(
                "input has {} channels but kernel {ks} expects Cin = {}",
                input.c(),
                ks.n()
            ),
        ));
    }
    let ho = deconv_out_len(input.h(), k, stride, pad);
    let wo = deconv_out_len(input.w(), k, stride, pad);
    match (ho, wo) {
        // Geometry of the forward convolution whose adjoint this is: it maps
        // the (ho, wo) output back onto the (h, w) input.
        (Some(ho), Some(wo)) => Ok(Geometry {
            c: ks.c(),
            h: ho,
            w: wo,
            k,
            stride,
            pad,
            ho: input.h(),
            wo: input.w(),
        }),
        _ => Err(Error::shape(
            "deconv2d",
            format!("kernel {k}×{k} with pad {pad} yields an empty output for {input}"),
        )),
    }
}

/// Transposed convolution of `input` (N×Cin×H×W) with `kernel` (Cin×Cout×k×k).
pub fn deconv2d(input: &Tensor, kernel: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let g = deconv_geometry(input.shape(), kernel, stride, pad)?;
    let cin = input.shape().c();
    let n = input.shape().n();
    let out_item = g.c * g.h * g.w;
    let mut out = vec![0.0f32; n * out_item];
    let kmat = Mat::new(kernel.data(), cin, g.col_rows());
    let mut cols = vec![0.0f32; g.col_rows() * g.col_cols()];
    for b in 0..n {
        let x = Mat::new(input.item(b), cin, g.col_cols());
        gemm(kmat.t(), x, &mut cols, 0.0);
        col2im(&cols, &g, &mut out[b * out_item..(b + 1) * out_item]);
    }
    Tensor::new(Shape::new(n, g.c, g.h, g.w), out)
}

pub struct DeconvGrads {
    pub input: Tensor,
    pub kernel: Tensor,
}

pub fn deconv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<DeconvGrads> {
    let g = deconv_geometry(input.shape(), kernel, stride, pad)?;
    let cin = input.shape().c();
    let n = input.shape().n();
    let expected = Shape::new(n, g.c, g.h, g.w);
    if grad_out.shape() != expected {
        return Err(Error::shape(
            "deconv2d backward",
            format!("gradient is {}, output was {expected}", grad_out.shape()),
        ));
    }
    let grad_input = conv2d(grad_out, kernel, None, stride, pad)?;
    let mut grad_kernel = vec![0.0f32; kernel.numel()];
    let mut cols = vec![0.0f32; g.col_rows() * g.col_cols()];
    for b in 0..n {
        im2col(grad_out.item(b), &g, &mut cols);
        let x = Mat::new(input.item(b), cin, g.col_cols());
        gemm(
            x,
            Mat::new(&cols, g.col_rows(), g.col_cols()).t(),
            &mut grad_kernel,
            1.0,
        );
    }
    Ok(DeconvGrads {
        input: grad_input,
        kernel: Tensor::new(kernel.shape(), grad_kernel)?,
    })
}
