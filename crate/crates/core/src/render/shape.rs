use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{normalize, Vec3};

/// Depth map under an orthographic camera, with analytic normals.
///
/// Depth and lateral coordinates share pixel units. Pixel (row, col) sits at
/// x = col − W/2, y = H/2 − row (integer halves), so the pixel at
/// (H/2, W/2) is the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightField {
    pub height: usize,
    pub width: usize,
    pub depth: Vec<f32>,
    pub normals: Vec<Vec3>,
    pub mask: Vec<bool>,
}

impl HeightField {
    pub fn center(&self) -> (usize, usize) {
        (self.height / 2, self.width / 2)
    }

    /// World (x, y) of pixel (row, col).
    pub fn world_xy(&self, row: usize, col: usize) -> (f64, f64) {
        let (cr, cc) = self.center();
        (col as f64 - cc as f64, cr as f64 - row as f64)
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    pub fn max_depth(&self) -> f32 {
        self.depth.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    /// Bilinear depth at fractional pixel coordinates, `None` outside the grid.
    pub fn depth_at(&self, row: f64, col: f64) -> Option<f64> {
        if row < 0.0 || col < 0.0 {
            return None;
        }
        let (r0, c0) = (row.floor() as usize, col.floor() as usize);
        if r0 >= self.height || c0 >= self.width {
            return None;
        }
        let r1 = (r0 + 1).min(self.height - 1);
        let c1 = (c0 + 1).min(self.width - 1);
        let (fr, fc) = (row - r0 as f64, col - c0 as f64);
        let d = |r: usize, c: usize| self.depth[r * self.width + c] as f64;
        let top = d(r0, c0) * (1.0 - fc) + d(r0, c1) * fc;
        let bottom = d(r1, c0) * (1.0 - fc) + d(r1, c1) * fc;
        Some(top * (1.0 - fr) + bottom * fr)
    }
}

/// Hemisphere of radius `radius_frac · min(h, w) / 2` pixels centered in a
/// `height × width` grid. The mask is the open disk.
pub fn make_sphere(radius_frac: f64, height: usize, width: usize) -> HeightField {
    assert!(
        radius_frac > 0.0 && radius_frac <= 1.0,
        "radius_frac must lie in (0, 1]"
    );
    let radius = radius_frac * height.min(width) as f64 / 2.0;
    let mut field = HeightField {
        height,
        width,
        depth: vec![0.0; height * width],
        normals: vec![[0.0, 0.0, 1.0]; height * width],
        mask: vec![false; height * width],
    };
    for row in 0..height {
        for col in 0..width {
            let (x, y) = field.world_xy(row, col);
            let r2 = x * x + y * y;
            if r2 < radius * radius {
                let z = (radius * radius - r2).sqrt();
                let i = field.index(row, col);
                field.depth[i] = z as f32;
                field.normals[i] = [(x / radius) as f32, (y / radius) as f32, (z / radius) as f32];
                field.mask[i] = true;
            }
        }
    }
    field
}

/// One Gaussian bump `a · exp(−((x−cx)² + (y−cy)²) / (2σ²))` in world units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bump {
    pub cx: f64,
    pub cy: f64,
    pub sigma: f64,
    pub amplitude: f64,
}

/// Fraction of the tallest point below which a blobby pixel is background.
pub const BLOBBY_MASK_FRACTION: f64 = 0.08;

/// Height field summing `bumps`; foreground is where depth exceeds
/// [`BLOBBY_MASK_FRACTION`] of the peak. Normals come from the closed-form
/// gradient.
pub fn from_bumps(bumps: &[Bump], height: usize, width: usize) -> HeightField {
    let mut field = HeightField {
        height,
        width,
        depth: vec![0.0; height * width],
        normals: vec![[0.0, 0.0, 1.0]; height * width],
        mask: vec![false; height * width],
    };
    let mut peak = 0.0f64;
    for row in 0..height {
        for col in 0..width {
            let (x, y) = field.world_xy(row, col);
            let (mut z, mut dzdx, mut dzdy) = (0.0f64, 0.0f64, 0.0f64);
            for b in bumps {
                let (dx, dy) = (x - b.cx, y - b.cy);
                let s2 = b.sigma * b.sigma;
                let g = b.amplitude * (-(dx * dx + dy * dy) / (2.0 * s2)).exp();
                z += g;
                dzdx -= g * dx / s2;
                dzdy -= g * dy / s2;
            }
            let i = field.index(row, col);
            field.depth[i] = z as f32;
            let n = normalize([-dzdx as f32, -dzdy as f32, 1.0]);
            field.normals[i] = n;
            peak = peak.max(z);
        }
    }
    let threshold = BLOBBY_MASK_FRACTION * peak;
    for (m, &d) in field.mask.iter_mut().zip(&field.depth) {
        *m = d as f64 > threshold;
    }
    field
}

/// Random sum of `n_bumps` Gaussian bumps, deterministic in `seed`.
pub fn make_blobby(seed: u64, n_bumps: usize, height: usize, width: usize) -> HeightField {
    assert!(n_bumps >= 1, "n_bumps must be ≥ 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let span = height.min(width) as f64;
    let bumps: Vec<Bump> = (0..n_bumps)
        .map(|_| {
            let sigma = span * rng.gen_range(0.1..0.2);
            Bump {
                cx: width as f64 * rng.gen_range(-0.25..0.25),
                cy: height as f64 * rng.gen_range(-0.25..0.25),
                sigma,
                amplitude: sigma * rng.gen_range(0.6..1.8),
            }
        })
        .collect();
    from_bumps(&bumps, height, width)
}

/// Rotated ellipsoid `z = c·√(1 − u²/a² − v²/b²)` in world units, with
/// (u, v) the offset from (cx, cy) rotated by `angle` radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lobe {
    pub cx: f64,
    pub cy: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub angle: f64,
}

/// Exponent of the smooth union `z = (Σ zᵢᵖ)^(1/p)`.
pub const LOBE_UNION_POWER: f64 = 4.0;

/// Inside-ness `1 − u²/a² − v²/b²` below which a pixel is background;
/// on a sphere this keeps normals up to about 88° from the view axis.
pub const LOBE_MASK_MARGIN: f64 = 1e-3;

/// Height field from the smooth union of `lobes`, with normals from the
/// closed-form gradient. Silhouettes reach near-grazing normals.
pub fn from_lobes(lobes: &[Lobe], height: usize, width: usize) -> HeightField {
    let p = LOBE_UNION_POWER;
    let mut field = HeightField {
        height,
        width,
        depth: vec![0.0; height * width],
        normals: vec![[0.0, 0.0, 1.0]; height * width],
        mask: vec![false; height * width],
    };
    for row in 0..height {
        for col in 0..width {
            let (x, y) = field.world_xy(row, col);
            let (mut sum, mut gx, mut gy) = (0.0f64, 0.0f64, 0.0f64);
            let mut inside = false;
            for l in lobes {
                let (sin, cos) = l.angle.sin_cos();
                let (dx, dy) = (x - l.cx, y - l.cy);
                let (u, v) = (cos * dx + sin * dy, -sin * dx + cos * dy);
                let e = 1.0 - u * u / (l.a * l.a) - v * v / (l.b * l.b);
                if e <= 0.0 {
                    continue;
                }
                inside |= e > LOBE_MASK_MARGIN;
                let z = l.c * e.sqrt();
                // ∂z/∂u and ∂z/∂v, rotated back to x and y.
                let (zu, zv) = (-l.c * u / (l.a * l.a * e.sqrt()), -l.c * v / (l.b * l.b * e.sqrt()));
                let (zx, zy) = (cos * zu - sin * zv, sin * zu + cos * zv);
                let w = z.powf(p - 1.0);
                sum += w * z;
                gx += w * zx;
                gy += w * zy;
            }
            if sum == 0.0 {
                continue;
            }
            let z = sum.powf(1.0 / p);
            let scale = z.powf(1.0 - p);
            let i = field.index(row, col);
            field.depth[i] = z as f32;
            field.normals[i] = normalize([(-gx * scale) as f32, (-gy * scale) as f32, 1.0]);
            field.mask[i] = inside;
        }
    }
    field
}

/// Random smooth union of `n_lobes` ellipsoids, deterministic in `seed`.
pub fn make_ellipsoids(seed: u64, n_lobes: usize, height: usize, width: usize) -> HeightField {
    assert!(n_lobes >= 1, "n_lobes must be ≥ 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let span = height.min(width) as f64;
    let lobes: Vec<Lobe> = (0..n_lobes)
        .map(|_| {
            let a = span * rng.gen_range(0.15..0.35);
            let b = span * rng.gen_range(0.15..0.35);
            Lobe {
                cx: width as f64 * rng.gen_range(-0.2..0.2),
                cy: height as f64 * rng.gen_range(-0.2..0.2),
                a,
                b,
                c: 0.5 * (a + b) * rng.gen_range(0.5..1.5),
                angle: rng.gen_range(0.0..std::f64::consts::PI),
            }
        })
        .collect();
    from_lobes(&lobes, height, width)
}
