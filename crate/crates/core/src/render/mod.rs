//! Procedural photometric-stereo renderer.
//!
//! Shapes are height fields seen by a fixed orthographic camera looking down
//! −z; lights are directional. Each pixel receives
//! `brdf(n, ℓ, v) · max(n·ℓ, 0)` unless a cast shadow blocks ℓ.

mod brdf;
mod dataset;
mod shape;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{check_unit_light, dot, Image, LightSet, Vec3};

pub use brdf::{brdf_grid, BrdfParams, Material, DARK_ALBEDO};
pub use dataset::{
    derive_seed, render_dataset, render_sample, render_samples, BrdfChoice, DatasetManifest,
    ManifestEntry, RenderJob, RenderedSample, ShapeKind, read_manifest, MANIFEST_FILE, NOISE_AMPLITUDE,
    REFERENCE_RECIPE,
};
pub use shape::{
    from_bumps, from_lobes, make_blobby, make_ellipsoids, make_sphere, Bump, HeightField, Lobe, BLOBBY_MASK_FRACTION,
    LOBE_MASK_MARGIN, LOBE_UNION_POWER,
};

pub const VIEW: Vec3 = [0.0, 0.0, 1.0];

/// Ray-march step, in pixels of lateral travel.
pub const SHADOW_STEP: f64 = 0.5;
/// Height by which the surface must rise above the ray to count as a blocker.
pub const SHADOW_BIAS: f64 = 1e-2;

/// Pixels whose light ray toward `light` hits the height field before
/// leaving the grid. Background pixels are never marked.
pub fn cast_shadow_mask(shape: &HeightField, light: Vec3) -> Vec<bool> {
    let mut out = vec![false; shape.depth.len()];
    let lateral = (light[0] as f64).hypot(light[1] as f64);
    if lateral <= 1e-9 {
        return out;
    }
    // Per step: 0.5 px across the grid, dz upward.
    let dcol = SHADOW_STEP * light[0] as f64 / lateral;
    let drow = -SHADOW_STEP * light[1] as f64 / lateral;
    let dz = SHADOW_STEP * light[2] as f64 / lateral;
    let top = shape.max_depth() as f64;
    for row in 0..shape.height {
        for col in 0..shape.width {
            let i = shape.index(row, col);
            if !shape.mask[i] {
                continue;
            }
            let (mut r, mut c, mut z) = (row as f64, col as f64, shape.depth[i] as f64);
            loop {
                r += drow;
                c += dcol;
                z += dz;
                if z > top {
                    break;
                }
                match shape.depth_at(r, c) {
                    Some(d) if d > z + SHADOW_BIAS => {
                        out[i] = true;
                        break;
                    }
                    Some(_) => {}
                    None => break,
                }
            }
        }
    }
    out
}

/// Renders `shape` under one directional light. Values are linear and not
/// clamped; background pixels are zero.
pub fn shade(shape: &HeightField, brdf: &BrdfParams, light: Vec3) -> Result<Image> {
    check_unit_light(light).map_err(Error::InvalidArgument)?;
    let shadow = cast_shadow_mask(shape, light);
    let mut img = Image::zeros(shape.height, shape.width);
    let plane = img.plane_len();
    for i in 0..plane {
        if !shape.mask[i] || shadow[i] {
            continue;
        }
        let n = shape.normals[i];
        let ndl = dot(n, light);
        if ndl <= 0.0 {
            continue;
        }
        let rho = brdf.eval(n, light, VIEW);
        for c in 0..3 {
            img.data[c * plane + i] = rho[c] * ndl;
        }
    }
    Ok(img)
}

/// Draws `q` directions with azimuth and elevation uniform in centered
/// ranges of `az_span_deg` and `el_span_deg` degrees around the view axis.
pub fn sample_lights<R: Rng>(rng: &mut R, q: usize, az_span_deg: f64, el_span_deg: f64) -> Result<LightSet> {
    for span in [az_span_deg, el_span_deg] {
        if !(span > 0.0 && span <= 180.0) {
            return Err(Error::InvalidArgument(format!(
                "light span must lie in (0°, 180°], got {span}°"
            )));
        }
    }
    let (ha, he) = (az_span_deg.to_radians() / 2.0, el_span_deg.to_radians() / 2.0);
    let dirs = (0..q)
        .map(|_| {
            let az = rng.gen_range(-ha..=ha);
            let el = rng.gen_range(-he..=he);
            let d = [az.sin() * el.cos(), el.sin(), az.cos() * el.cos()];
            [d[0] as f32, d[1] as f32, (d[2] as f32).max(f32::MIN_POSITIVE)]
        })
        .collect();
    LightSet::new(dirs)
}

/// `round(clamp(v, 0, 1) · 255)`.
pub fn quantize_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Image after an 8-bit round trip; highlights above 1 clip.
pub fn quantize_image(img: &Image) -> Image {
    Image {
        data: img.data.iter().map(|&v| quantize_u8(v) as f32 / 255.0).collect(),
        ..img.clone()
    }
}
