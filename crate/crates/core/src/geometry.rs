//! Images, normal maps, light sets and photometric-stereo samples.
//!
//! Directions live in camera coordinates: x to the right, y up, z toward
//! the viewer. Pixel (row, col) maps to x = col, y = −row.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub type Vec3 = [f32; 3];

pub fn dot(a: Vec3, b: Vec3) -> f32 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm(a: Vec3) -> f32 {
    let s: f64 = a.iter().map(|&v| v as f64 * v as f64).sum();
    s.sqrt() as f32
}

/// Unit vector along `a`; the zero vector maps to itself.
pub fn normalize(a: Vec3) -> Vec3 {
    let n = norm(a);
    if n > 0.0 {
        a.map(|v| v / n)
    } else {
        a
    }
}

/// Angle between two directions in degrees, computed in f64.
///
/// Uses `atan2(|a × b|, a · b)`, which stays accurate for nearly parallel
/// vectors where `acos` of the dot product loses most of its digits.
pub fn angle_deg(a: Vec3, b: Vec3) -> f64 {
    let [a0, a1, a2] = a.map(f64::from);
    let [b0, b1, b2] = b.map(f64::from);
    let cross = [a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0];
    let sin = cross.iter().map(|c| c * c).sum::<f64>().sqrt();
    let cos = a0 * b0 + a1 * b1 + a2 * b2;
    sin.atan2(cos).to_degrees()
}

/// Planar RGB image with values nominally in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    /// Channel-planar: all red, then green, then blue.
    pub data: Vec<f32>,
}

impl Image {
    pub fn zeros(height: usize, width: usize) -> Self {
        Image {
            height,
            width,
            data: vec![0.0; 3 * height * width],
        }
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn get(&self, c: usize, row: usize, col: usize) -> f32 {
        self.data[(c * self.height + row) * self.width + col]
    }

    pub fn set(&mut self, c: usize, row: usize, col: usize, v: f32) {
        self.data[(c * self.height + row) * self.width + col] = v;
    }

    pub fn rgb(&self, pixel: usize) -> Vec3 {
        let p = self.plane_len();
        [self.data[pixel], self.data[p + pixel], self.data[2 * p + pixel]]
    }

    /// Mean of the three channels at `pixel`.
    pub fn gray(&self, pixel: usize) -> f32 {
        let [r, g, b] = self.rgb(pixel);
        (r + g + b) / 3.0
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(Shape::new(1, 3, self.height, self.width), self.data.clone())
            .expect("image dimensions")
    }

    pub fn scaled(&self, factor: f32) -> Image {
        Image {
            data: self.data.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }
}

/// Per-pixel unit normals with a foreground mask.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap {
    pub height: usize,
    pub width: usize,
    pub normals: Vec<Vec3>,
    pub mask: Vec<bool>,
}

impl NormalMap {
    pub fn new(height: usize, width: usize, normals: Vec<Vec3>, mask: Vec<bool>) -> Result<Self> {
        if normals.len() != height * width || mask.len() != height * width {
            return Err(Error::shape(
                "normal map",
                format!(
                    "{height}×{width} needs {} entries, got {} normals and {} mask flags",
                    height * width,
                    normals.len(),
                    mask.len()
                ),
            ));
        }
        Ok(NormalMap {
            height,
            width,
            normals,
            mask,
        })
    }

    pub fn len(&self) -> usize {
        self.normals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// 1×3×H×W tensor, background zeroed.
    pub fn to_tensor(&self) -> Tensor {
        let p = self.height * self.width;
        let mut data = vec![0.0f32; 3 * p];
        for (i, (n, &m)) in self.normals.iter().zip(&self.mask).enumerate() {
            if m {
                for c in 0..3 {
                    data[c * p + i] = n[c];
                }
            }
        }
        Tensor::new(Shape::new(1, 3, self.height, self.width), data).expect("normal map dims")
    }

    /// Builds a map from batch item `item` of an N×3×H×W tensor.
    pub fn from_tensor(t: &Tensor, item: usize, mask: Vec<bool>) -> Result<Self> {
        let s = t.shape();
        if s.c() != 3 {
            return Err(Error::shape("normal map", format!("expected 3 channels, got {s}")));
        }
        let p = s.plane_len();
        let src = t.item(item);
        let normals = (0..p)
            .map(|i| {
                if mask.get(i).copied().unwrap_or(false) {
                    [src[i], src[p + i], src[2 * p + i]]
                } else {
                    [0.0; 3]
                }
            })
            .collect();
        NormalMap::new(s.h(), s.w(), normals, mask)
    }

    pub fn same_layout(&self, other: &NormalMap) -> Result<()> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::shape(
                "normal map",
                format!(
                    "{}×{} vs {}×{}",
                    self.height, self.width, other.height, other.width
                ),
            ));
        }
        if self.mask != other.mask {
            return Err(Error::shape("normal map", "masks differ"));
        }
        Ok(())
    }
}

/// Tolerance on ‖ℓ‖ − 1 for light directions supplied by callers.
pub const LIGHT_NORM_TOL: f32 = 1e-3;

/// Directional lights, optionally with per-light RGB intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct LightSet {
    pub directions: Vec<Vec3>,
    pub intensities: Option<Vec<Vec3>>,
}

impl LightSet {
    /// Validates unit length (within [`LIGHT_NORM_TOL`]) and front-facing z.
    pub fn new(directions: Vec<Vec3>) -> Result<Self> {
        for (i, &d) in directions.iter().enumerate() {
            check_unit_light(d).map_err(|e| Error::InvalidArgument(format!("light {i}: {e}")))?;
        }
        Ok(LightSet {
            directions,
            intensities: None,
        })
    }

    pub fn with_intensities(mut self, intensities: Vec<Vec3>) -> Result<Self> {
        if intensities.len() != self.directions.len() {
            return Err(Error::InvalidArgument(format!(
                "{} intensities for {} lights",
                intensities.len(),
                self.directions.len()
            )));
        }
        self.intensities = Some(intensities);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> LightSet {
        LightSet {
            directions: indices.iter().map(|&i| self.directions[i]).collect(),
            intensities: self
                .intensities
                .as_ref()
                .map(|v| indices.iter().map(|&i| v[i]).collect()),
        }
    }
}

pub(crate) fn check_unit_light(d: Vec3) -> std::result::Result<(), String> {
    let n = norm(d);
    if (n - 1.0).abs() > LIGHT_NORM_TOL {
        return Err(format!("direction {d:?} has norm {n}, expected 1"));
    }
    if d[2] <= 0.0 {
        return Err(format!("direction {d:?} does not face the camera (z ≤ 0)"));
    }
    Ok(())
}

/// One photometric-stereo observation set.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub images: Vec<Image>,
    pub lights: LightSet,
    pub mask: Vec<bool>,
    pub normals: Option<NormalMap>,
}

impl Sample {
    pub fn new(
        id: impl Into<String>,
        images: Vec<Image>,
        lights: LightSet,
        mask: Vec<bool>,
        normals: Option<NormalMap>,
    ) -> Result<Self> {
        let id = id.into();
        let first = images
            .first()
            .ok_or_else(|| Error::InvalidArgument(format!("sample {id} has no images")))?;
        let (h, w) = (first.height, first.width);
        if images.iter().any(|im| im.height != h || im.width != w) {
            return Err(Error::InvalidArgument(format!("sample {id}: mixed image sizes")));
        }
        if lights.len() != images.len() {
            return Err(Error::InvalidArgument(format!(
                "sample {id}: {} images but {} lights",
                images.len(),
                lights.len()
            )));
        }
        if mask.len() != h * w {
            return Err(Error::InvalidArgument(format!("sample {id}: mask size mismatch")));
        }
        if let Some(n) = &normals {
            if n.height != h || n.width != w {
                return Err(Error::InvalidArgument(format!(
                    "sample {id}: normal map size mismatch"
                )));
            }
        }
        Ok(Sample {
            id,
            images,
            lights,
            mask,
            normals,
        })
    }

    pub fn height(&self) -> usize {
        self.images[0].height
    }

    pub fn width(&self) -> usize {
        self.images[0].width
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Sample restricted to the image-light pairs at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Sample {
        Sample {
            id: self.id.clone(),
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            lights: self.lights.subset(indices),
            mask: self.mask.clone(),
            normals: self.normals.clone(),
        }
    }
}
