//! Surface integration of normal maps (Frankot–Chellappa) and depth output.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::geometry::NormalMap;

/// Masked normals with n_z at or below this are rejected.
pub const NZ_EPS: f32 = 1e-3;

/// Surface gradients p = ∂z/∂x, q = ∂z/∂y (x right, y up), row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub height: usize,
    pub width: usize,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub mask: Vec<bool>,
}

impl GradientField {
    pub fn new(height: usize, width: usize, p: Vec<f64>, q: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        let n = height * width;
        if p.len() != n || q.len() != n || mask.len() != n {
            return Err(Error::shape(
                "gradient field",
                format!(
                    "{height}×{width} needs {n} entries, got p {}, q {}, mask {}",
                    p.len(),
                    q.len(),
                    mask.len()
                ),
            ));
        }
        Ok(GradientField { height, width, p, q, mask })
    }
}

/// p = −n_x/n_z, q = −n_y/n_z on the mask, zero elsewhere.
pub fn normals_to_gradients(normals: &NormalMap) -> Result<GradientField> {
    let steep = normals
        .normals
        .iter()
        .zip(&normals.mask)
        .filter(|(n, &m)| m && !(n[2] > NZ_EPS))
        .count();
    if steep > 0 {
        return Err(Error::InvalidArgument(format!(
            "{steep} masked pixels have n_z ≤ {NZ_EPS}; cannot convert to gradients"
        )));
    }
    let (mut p, mut q) = (vec![0.0; normals.len()], vec![0.0; normals.len()]);
    for (i, (n, &m)) in normals.normals.iter().zip(&normals.mask).enumerate() {
        if m {
            p[i] = -(n[0] as f64) / n[2] as f64;
            q[i] = -(n[1] as f64) / n[2] as f64;
        }
    }
    GradientField::new(normals.height, normals.width, p, q, normals.mask.clone())
}

/// Row-then-column 2-D FFT of a `rows × cols` row-major grid; `inverse`
/// applies the conjugate transform scaled by 1/(rows·cols).
fn fft2(data: &mut [Complex<f64>], rows: usize, cols: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let plan = |n: usize, planner: &mut FftPlanner<f64>| {
        if inverse {
            planner.plan_fft_inverse(n)
        } else {
            planner.plan_fft_forward(n)
        }
    };
    plan(cols, &mut planner).process(data);
    let mut column = vec![Complex::new(0.0, 0.0); rows];
    let by_column = plan(rows, &mut planner);
    for c in 0..cols {
        for r in 0..rows {
            column[r] = data[r * cols + c];
        }
        by_column.process(&mut column);
        for r in 0..rows {
            data[r * cols + c] = column[r];
        }
    }
    if inverse {
        let scale = 1.0 / (rows * cols) as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }
}

/// Index into the even (half-sample) reflection of length `2n`, then edge
/// replication up to the padded length. Returns (source index, sign of the
/// derivative along this axis, whether the sample lies in the replicated
/// pad where that derivative vanishes).
fn extend_index(i: usize, n: usize) -> (usize, f64, bool) {
    if i < n {
        (i, 1.0, false)
    } else if i < 2 * n {
        (2 * n - 1 - i, -1.0, false)
    } else {
        (0, 1.0, true)
    }
}

/// Depth with an arbitrary additive constant removed (zero mean on the mask).
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub height: usize,
    pub width: usize,
    pub depth: Vec<f32>,
    pub mask: Vec<bool>,
}

/// Least-squares integrable surface for the gradient field, solved in the
/// Fourier domain. Each axis is mirrored to twice its length and then
/// padded to a power of two by edge replication, which keeps the extended
/// surface continuous across every wrap.
pub fn frankot_chellappa(g: &GradientField) -> Result<DepthMap> {
    let (h, w) = (g.height, g.width);
    if h * w <= 1 {
        return Err(Error::InvalidArgument(format!(
            "cannot integrate a {h}×{w} gradient field"
        )));
    }
    let (rows, cols) = ((2 * h).next_power_of_two(), (2 * w).next_power_of_two());
    // Row axis points down, so ∂z/∂row = −q.
    let mut pf = vec![Complex::new(0.0, 0.0); rows * cols];
    let mut qf = pf.clone();
    for r in 0..rows {
        let (sr, sign_r, pad_r) = extend_index(r, h);
        for c in 0..cols {
            let (sc, sign_c, pad_c) = extend_index(c, w);
            let i = sr * w + sc;
            let dcol = if pad_c { 0.0 } else { sign_c * g.p[i] };
            let drow = if pad_r { 0.0 } else { -sign_r * g.q[i] };
            pf[r * cols + c] = Complex::new(dcol, 0.0);
            qf[r * cols + c] = Complex::new(drow, 0.0);
        }
    }
    fft2(&mut pf, rows, cols, false);
    fft2(&mut qf, rows, cols, false);
    let freq = |k: usize, n: usize| {
        let k = if k < n / 2 { k as f64 } else { k as f64 - n as f64 };
        2.0 * std::f64::consts::PI * k / n as f64
    };
    let mut z = vec![Complex::new(0.0, 0.0); rows * cols];
    for r in 0..rows {
        let wr = freq(r, rows);
        for c in 0..cols {
            let wc = freq(c, cols);
            let denom = wc * wc + wr * wr;
            if denom == 0.0 {
                continue;
            }
            let i = r * cols + c;
            let j = Complex::new(0.0, 1.0);
            z[i] = -(j * wc * pf[i] + j * wr * qf[i]) / denom;
        }
    }
    fft2(&mut z, rows, cols, true);

    let mut depth: Vec<f64> = (0..h * w).map(|i| z[(i / w) * cols + i % w].re).collect();
    let any = g.mask.contains(&true);
    let selected = |i: usize| !any || g.mask[i];
    let (sum, count) = (0..h * w)
        .filter(|&i| selected(i))
        .fold((0.0, 0usize), |(s, n), i| (s + depth[i], n + 1));
    let mean = sum / count as f64;
    for (i, d) in depth.iter_mut().enumerate() {
        *d = if selected(i) { *d - mean } else { 0.0 };
    }
    Ok(DepthMap {
        height: h,
        width: w,
        depth: depth.into_iter().map(|d| d as f32).collect(),
        mask: if any { g.mask.clone() } else { vec![true; h * w] },
    })
}

pub const DEPTH_MAGIC: &str = "PSDZ";

/// `PSDZ <width> <height>\n` followed by row-major little-endian f32;
/// background pixels are NaN.
pub fn encode_depth(d: &DepthMap) -> Vec<u8> {
    let mut out = format!("{DEPTH_MAGIC} {} {}\n", d.width, d.height).into_bytes();
    for (v, &m) in d.depth.iter().zip(&d.mask) {
        out.extend_from_slice(&(if m { *v } else { f32::NAN }).to_le_bytes());
    }
    out
}

pub fn decode_depth(bytes: &[u8], path: &Path) -> Result<DepthMap> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format(path, "missing header line"))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| Error::format(path, "header is not UTF-8"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let (width, height) = match fields.as_slice() {
        [magic, w, h] if *magic == DEPTH_MAGIC => (
            w.parse::<usize>().map_err(|e| Error::format(path, e.to_string()))?,
            h.parse::<usize>().map_err(|e| Error::format(path, e.to_string()))?,
        ),
        _ => return Err(Error::format(path, format!("bad header {header:?}"))),
    };
    let body = &bytes[nl + 1..];
    if body.len() != 4 * width * height {
        return Err(Error::format(
            path,
            format!("expected {} data bytes, got {}", 4 * width * height, body.len()),
        ));
    }
    let depth: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let mask = depth.iter().map(|v| !v.is_nan()).collect();
    Ok(DepthMap {
        height,
        width,
        depth: depth.into_iter().map(|v| if v.is_nan() { 0.0 } else { v }).collect(),
        mask,
    })
}

pub fn write_depth(d: &DepthMap, path: &Path) -> Result<()> {
    fs::write(path, encode_depth(d)).map_err(|e| Error::io(path, e))
}

pub fn read_depth(path: &Path) -> Result<DepthMap> {
    decode_depth(&fs::read(path).map_err(|e| Error::io(path, e))?, path)
}

/// 8-bit gray preview: foreground depth mapped linearly to 1..=255,
/// background 0.
pub fn depth_preview_png(d: &DepthMap) -> Vec<u8> {
    let (lo, hi) = d
        .depth
        .iter()
        .zip(&d.mask)
        .filter(|(_, &m)| m)
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), (&v, _)| (lo.min(v), hi.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let buf = image::GrayImage::from_fn(d.width as u32, d.height as u32, |x, y| {
        let i = y as usize * d.width + x as usize;
        image::Luma([if d.mask[i] {
            1 + ((d.depth[i] - lo) / span * 254.0).round() as u8
        } else {
            0
        }])
    });
    let mut out = std::io::Cursor::new(Vec::new());
    buf.write_to(&mut out, image::ImageFormat::Png)
        .expect("PNG encoding into memory cannot fail");
    out.into_inner()
}

/// Grid triangulation of the foreground: one vertex per masked pixel at
/// (x, y, z) with x = col, y = −row; two triangles per fully masked quad.
pub fn write_obj(d: &DepthMap, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    let mut vertex = vec![0usize; d.depth.len()];
    let mut next = 1;
    for row in 0..d.height {
        for col in 0..d.width {
            let i = row * d.width + col;
            if d.mask[i] {
                writeln!(out, "v {} {} {}", col, -(row as i64), d.depth[i]).expect("write to Vec");
                vertex[i] = next;
                next += 1;
            }
        }
    }
    for row in 0..d.height.saturating_sub(1) {
        for col in 0..d.width.saturating_sub(1) {
            let a = row * d.width + col;
            let (b, c, e) = (a + 1, a + d.width, a + d.width + 1);
            if [a, b, c, e].iter().all(|&k| d.mask[k]) {
                writeln!(out, "f {} {} {}", vertex[a], vertex[c], vertex[b]).expect("write to Vec");
                writeln!(out, "f {} {} {}", vertex[b], vertex[c], vertex[e]).expect("write to Vec");
            }
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
