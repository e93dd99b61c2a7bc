//! Parametric reflectance: Lambertian diffuse plus a normalized Blinn lobe.

use serde::{Deserialize, Serialize};

use crate::geometry::{dot, normalize, Vec3};

/// Reflectance parameters. Shading uses the unnormalized convention
/// `I = (albedo + specular) · max(n·ℓ, 0)`, so a white Lambertian surface lit
/// head-on has intensity 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrdfParams {
    pub diffuse_albedo: Vec3,
    pub specular_strength: f32,
    pub shininess: f32,
}

impl BrdfParams {
    pub fn lambertian(albedo: Vec3) -> Self {
        BrdfParams {
            diffuse_albedo: albedo,
            specular_strength: 0.0,
            shininess: 1.0,
        }
    }

    /// Reflectance factor for normal `n`, light `l` and view `v` (per channel).
    /// Symmetric in `l` and `v`.
    pub fn eval(&self, n: Vec3, l: Vec3, v: Vec3) -> Vec3 {
        let spec = if self.specular_strength > 0.0 {
            let h = normalize([l[0] + v[0], l[1] + v[1], l[2] + v[2]]);
            let nh = dot(n, h).max(0.0);
            self.specular_strength * (self.shininess + 8.0) / 8.0 * nh.powf(self.shininess)
        } else {
            0.0
        };
        self.diffuse_albedo.map(|a| a + spec)
    }

    /// Peak specular gain; orders materials from matte to mirror-like.
    pub fn specularity(&self) -> f32 {
        self.specular_strength * (self.shininess + 8.0) / 8.0
    }

    pub fn mean_albedo(&self) -> f32 {
        self.diffuse_albedo.iter().sum::<f32>() / 3.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub name: String,
    pub params: BrdfParams,
}

/// Mean albedo below which a material counts as dark.
pub const DARK_ALBEDO: f32 = 0.2;

const ALBEDOS: [(&str, Vec3); 4] = [
    ("white", [0.85, 0.85, 0.85]),
    ("red", [0.8, 0.3, 0.2]),
    ("blue", [0.2, 0.35, 0.8]),
    ("dark", [0.1, 0.1, 0.12]),
];
const STRENGTHS: [f32; 5] = [0.0, 0.15, 0.4, 0.8, 1.6];
const SHININESS: [f32; 5] = [8.0, 24.0, 64.0, 160.0, 400.0];

/// The 100 materials (4 albedos × 5 strengths × 5 lobe exponents).
/// Entries with zero strength are Lambertian.
pub fn brdf_grid() -> Vec<Material> {
    let mut out = Vec::with_capacity(100);
    for (albedo_name, albedo) in ALBEDOS {
        for ks in STRENGTHS {
            for s in SHININESS {
                out.push(Material {
                    name: format!("{albedo_name}-ks{ks}-n{s}"),
                    params: BrdfParams {
                        diffuse_albedo: albedo,
                        specular_strength: ks,
                        shininess: s,
                    },
                });
            }
        }
    }
    out
}
