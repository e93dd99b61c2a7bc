//! Least-squares photometric stereo and radiometric preprocessing.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{dot, Image, NormalMap, Sample, Vec3};

/// Largest accepted condition number of Σ ℓℓᵀ.
pub const MAX_CONDITION: f64 = 1e6;

/// Images with their light directions and a foreground mask.
#[derive(Debug, Clone)]
pub struct ObservationStack {
    pub images: Vec<Image>,
    pub lights: Vec<Vec3>,
    pub mask: Vec<bool>,
}

impl ObservationStack {
    pub fn new(images: Vec<Image>, lights: Vec<Vec3>, mask: Vec<bool>) -> Result<Self> {
        if images.len() != lights.len() {
            return Err(Error::InvalidArgument(format!(
                "{} images for {} lights",
                images.len(),
                lights.len()
            )));
        }
        if let Some(first) = images.first() {
            if images.iter().any(|i| i.height != first.height || i.width != first.width) {
                return Err(Error::InvalidArgument("mixed image sizes".into()));
            }
            if mask.len() != first.plane_len() {
                return Err(Error::InvalidArgument("mask size mismatch".into()));
            }
        }
        Ok(ObservationStack { images, lights, mask })
    }

    /// Stack of a sample's images as stored (already intensity-normalized).
    pub fn from_sample(sample: &Sample) -> Self {
        ObservationStack {
            images: sample.images.clone(),
            lights: sample.lights.directions.clone(),
            mask: sample.mask.clone(),
        }
    }
}

/// Divides each image, per channel, by its light's RGB intensity.
pub fn normalize_by_intensity(images: &[Image], intensities: &[Vec3]) -> Result<Vec<Image>> {
    if images.len() != intensities.len() {
        return Err(Error::InvalidArgument(format!(
            "{} images for {} intensities",
            images.len(),
            intensities.len()
        )));
    }
    images
        .iter()
        .zip(intensities)
        .enumerate()
        .map(|(k, (img, e))| {
            if e.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::InvalidArgument(format!(
                    "intensity {k} must be positive, got {e:?}"
                )));
            }
            let p = img.plane_len();
            let mut out = img.clone();
            for c in 0..3 {
                for v in &mut out.data[c * p..(c + 1) * p] {
                    *v /= e[c];
                }
            }
            Ok(out)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct L2Solution {
    pub normals: NormalMap,
    /// ‖b‖ per pixel; zero in the background.
    pub albedo: Vec<f32>,
}

/// Σ ℓℓᵀ inverse, rejected when the lights are (nearly) coplanar.
fn light_gram_inverse(lights: &[Vec3]) -> Result<Matrix3<f64>> {
    let mut a = Matrix3::<f64>::zeros();
    for l in lights {
        let v = Vector3::new(l[0] as f64, l[1] as f64, l[2] as f64);
        a += v * v.transpose();
    }
    let sv = a.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::LightsCoplanar { condition });
    }
    a.try_inverse().ok_or(Error::LightsCoplanar { condition })
}

/// Per masked pixel, b = argmin ‖I − Lᵀb‖² on the channel-averaged
/// intensities; normal = b/‖b‖, albedo = ‖b‖. All observations are used,
/// shadowed ones included.
pub fn l2_solve(stack: &ObservationStack) -> Result<L2Solution> {
    if stack.images.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "least squares needs ≥ 3 images, got {}",
            stack.images.len()
        )));
    }
    if !stack.mask.contains(&true) {
        return Err(Error::NoValidPixels);
    }
    let inv = light_gram_inverse(&stack.lights)?;
    let (h, w) = (stack.images[0].height, stack.images[0].width);
    let solved: Vec<(Vec3, f32)> = (0..h * w)
        .into_par_iter()
        .map(|i| {
            if !stack.mask[i] {
                return ([0.0; 3], 0.0);
            }
            let mut rhs = Vector3::<f64>::zeros();
            for (img, l) in stack.images.iter().zip(&stack.lights) {
                let g = img.gray(i) as f64;
                rhs += Vector3::new(l[0] as f64, l[1] as f64, l[2] as f64) * g;
            }
            let b = inv * rhs;
            let rho = b.norm();
            if rho > 0.0 {
                let n = b / rho;
                ([n.x as f32, n.y as f32, n.z as f32], rho as f32)
            } else {
                ([0.0, 0.0, 1.0], 0.0)
            }
        })
        .collect();
    let (normals, albedo): (Vec<Vec3>, Vec<f32>) = solved.into_iter().unzip();
    Ok(L2Solution {
        normals: NormalMap::new(h, w, normals, stack.mask.clone())?,
        albedo,
    })
}

/// Foreground pixels lit by every light (n·ℓ > 0 for all ℓ), where a
/// Lambertian model without shadows holds exactly.
pub fn fully_lit_mask(normals: &NormalMap, lights: &[Vec3]) -> Vec<bool> {
    normals
        .normals
        .iter()
        .zip(&normals.mask)
        .map(|(&n, &m)| m && lights.iter().all(|&l| dot(n, l) > 0.0))
        .collect()
}
