use std::fs;
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{brdf_grid, make_blobby, make_ellipsoids, make_sphere, quantize_image, sample_lights, shade, HeightField, Material};
use crate::error::{Error, Result};
use crate::geometry::{NormalMap, Sample};
use crate::io::write_native_sample;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Full-scale recipe this generator scales down from.
pub const REFERENCE_RECIPE: &str =
    "10 shapes × 1296 views (36 × 36) × 2 BRDFs = 25,920 samples of 32 images each";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ShapeKind {
    Sphere { radius_frac: f64 },
    Blobby { n_bumps: usize },
    /// Smooth union of random ellipsoids, a stand-in for sculpted shapes.
    Ellipsoids { n_lobes: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BrdfChoice {
    /// Every shape under every material of [`brdf_grid`].
    Grid,
    /// `per_shape` distinct grid materials drawn per shape.
    Random { per_shape: usize },
    /// Every shape under each listed material.
    Fixed { materials: Vec<Material> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderJob {
    pub seed: u64,
    pub shape: ShapeKind,
    pub shapes: usize,
    pub brdf: BrdfChoice,
    /// Lights per sample.
    pub lights: usize,
    pub azimuth_span_deg: f64,
    pub elevation_span_deg: f64,
    pub height: usize,
    pub width: usize,
    /// Uniform ±[`NOISE_AMPLITUDE`] noise before quantization.
    pub noise: bool,
    /// Round images through 8 bits, as on disk.
    pub quantize: bool,
}

pub const NOISE_AMPLITUDE: f32 = 0.05;

impl Default for RenderJob {
    fn default() -> Self {
        RenderJob {
            seed: 0,
            shape: ShapeKind::Blobby { n_bumps: 4 },
            shapes: 10,
            brdf: BrdfChoice::Random { per_shape: 2 },
            lights: 32,
            azimuth_span_deg: 180.0,
            elevation_span_deg: 180.0,
            height: 64,
            width: 64,
            noise: false,
            quantize: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RenderedSample {
    pub sample: Sample,
    pub material: Material,
    pub shape_index: usize,
    pub shape_seed: u64,
    pub sample_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub shape_index: usize,
    pub shape_seed: u64,
    pub sample_seed: u64,
    pub material: Material,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub reference_recipe: String,
    pub job: RenderJob,
    pub count: usize,
    pub samples: Vec<ManifestEntry>,
}

/// SplitMix64 over (seed, stream, index): independent per-purpose streams.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03)
        ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const SHAPE_STREAM: u64 = 1;
const MATERIAL_STREAM: u64 = 2;
const SAMPLE_STREAM: u64 = 3;

impl RenderJob {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.lights == 0 {
            return bad("light count must be ≥ 1".into());
        }
        if self.shapes == 0 {
            return bad("shape count must be ≥ 1".into());
        }
        if self.height == 0 || self.width == 0 {
            return bad("image size must be positive".into());
        }
        for span in [self.azimuth_span_deg, self.elevation_span_deg] {
            if !(span > 0.0 && span <= 180.0) {
                return bad(format!("light span must lie in (0°, 180°], got {span}°"));
            }
        }
        match &self.shape {
            ShapeKind::Sphere { radius_frac } if !(*radius_frac > 0.0 && *radius_frac <= 1.0) => {
                return bad(format!("sphere radius fraction {radius_frac} outside (0, 1]"));
            }
            ShapeKind::Blobby { n_bumps: 0 } => return bad("n_bumps must be ≥ 1".into()),
            ShapeKind::Ellipsoids { n_lobes: 0 } => return bad("n_lobes must be ≥ 1".into()),
            _ => {}
        }
        match &self.brdf {
            BrdfChoice::Random { per_shape } if *per_shape == 0 || *per_shape > 100 => {
                bad(format!("per-shape material count {per_shape} outside 1..=100"))
            }
            BrdfChoice::Fixed { materials } if materials.is_empty() => {
                bad("material list is empty".into())
            }
            _ => Ok(()),
        }
    }

    pub fn materials_per_shape(&self) -> usize {
        match &self.brdf {
            BrdfChoice::Grid => 100,
            BrdfChoice::Random { per_shape } => *per_shape,
            BrdfChoice::Fixed { materials } => materials.len(),
        }
    }

    pub fn sample_count(&self) -> usize {
        self.shapes * self.materials_per_shape()
    }

    fn shape_seed(&self, shape: usize) -> u64 {
        derive_seed(self.seed, SHAPE_STREAM, shape as u64)
    }

    fn make_shape(&self, shape: usize) -> HeightField {
        match self.shape {
            ShapeKind::Sphere { radius_frac } => make_sphere(radius_frac, self.height, self.width),
            ShapeKind::Blobby { n_bumps } => {
                make_blobby(self.shape_seed(shape), n_bumps, self.height, self.width)
            }
            ShapeKind::Ellipsoids { n_lobes } => {
                make_ellipsoids(self.shape_seed(shape), n_lobes, self.height, self.width)
            }
        }
    }

    fn materials_for(&self, shape: usize) -> Vec<Material> {
        match &self.brdf {
            BrdfChoice::Grid => brdf_grid(),
            BrdfChoice::Fixed { materials } => materials.clone(),
            BrdfChoice::Random { per_shape } => {
                let grid = brdf_grid();
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, MATERIAL_STREAM, shape as u64));
                sample_indices(&mut rng, grid.len(), *per_shape)
                    .into_iter()
                    .map(|i| grid[i].clone())
                    .collect()
            }
        }
    }
}

fn sample_id(shape: usize, slot: usize) -> String {
    format!("s{shape:04}_b{slot:03}")
}

fn render_one(job: &RenderJob, shape_index: usize, field: &HeightField, slot: usize, material: Material) -> Result<RenderedSample> {
    let index = shape_index * job.materials_per_shape() + slot;
    let sample_seed = derive_seed(job.seed, SAMPLE_STREAM, index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    let lights = sample_lights(&mut rng, job.lights, job.azimuth_span_deg, job.elevation_span_deg)?;
    let images = lights
        .directions
        .iter()
        .map(|&l| {
            let mut img = shade(field, &material.params, l)?;
            if job.noise {
                for v in &mut img.data {
                    *v += rng.gen_range(-NOISE_AMPLITUDE..=NOISE_AMPLITUDE);
                }
            }
            Ok(if job.quantize { quantize_image(&img) } else { img })
        })
        .collect::<Result<Vec<_>>>()?;
    let normals = NormalMap::new(field.height, field.width, field.normals.clone(), field.mask.clone())?;
    let id = sample_id(shape_index, slot);
    let sample = Sample::new(id, images, lights, field.mask.clone(), Some(normals))?;
    Ok(RenderedSample {
        sample,
        material,
        shape_index,
        shape_seed: job.shape_seed(shape_index),
        sample_seed,
    })
}

/// Renders sample `index` (shape-major order). Output depends only on the
/// job and the index.
pub fn render_sample(job: &RenderJob, index: usize) -> Result<RenderedSample> {
    job.validate()?;
    if index >= job.sample_count() {
        return Err(Error::InvalidArgument(format!(
            "sample index {index} out of range for {} samples",
            job.sample_count()
        )));
    }
    let per = job.materials_per_shape();
    let (shape, slot) = (index / per, index % per);
    let field = job.make_shape(shape);
    let material = job.materials_for(shape).swap_remove(slot);
    render_one(job, shape, &field, slot, material)
}

/// Renders every sample of `job` in parallel; order and bytes match a
/// serial run.
pub fn render_samples(job: &RenderJob) -> Result<Vec<RenderedSample>> {
    job.validate()?;
    let per_shape: Vec<Vec<RenderedSample>> = (0..job.shapes)
        .into_par_iter()
        .map(|shape| {
            let field = job.make_shape(shape);
            job.materials_for(shape)
                .into_par_iter()
                .enumerate()
                .map(|(slot, m)| render_one(job, shape, &field, slot, m))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(per_shape.into_iter().flatten().collect())
}

/// Renders `job` into `out` in the native layout and writes the manifest.
pub fn render_dataset(job: &RenderJob, out: &Path) -> Result<DatasetManifest> {
    let samples = render_samples(job)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    samples.par_iter().try_for_each(|r| {
        write_native_sample(&r.sample, out)
            .map(|_| ())
            .map_err(|e| Error::Sample {
                sample: r.sample.id.clone(),
                source: Box::new(e),
            })
    })?;
    let manifest = DatasetManifest {
        format_version: 1,
        reference_recipe: REFERENCE_RECIPE.to_string(),
        job: job.clone(),
        count: samples.len(),
        samples: samples
            .iter()
            .map(|r| ManifestEntry {
                id: r.sample.id.clone(),
                shape_index: r.shape_index,
                shape_seed: r.shape_seed,
                sample_seed: r.sample_seed,
                material: r.material.clone(),
            })
            .collect(),
    };
    let path = out.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Reads the manifest written by [`render_dataset`].
pub fn read_manifest(root: &Path) -> Result<DatasetManifest> {
    let path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_job() -> RenderJob {
        RenderJob {
            seed: 5,
            shapes: 2,
            brdf: BrdfChoice::Random { per_shape: 2 },
            lights: 3,
            height: 16,
            width: 16,
            ..RenderJob::default()
        }
    }

    #[test]
    fn counts_and_ids() {
        let job = small_job();
        let all = render_samples(&job).unwrap();
        assert_eq!(all.len(), 4);
        assert_eq!(all[3].sample.id, "s0001_b001");
        assert!(all.iter().all(|r| r.sample.len() == 3));
    }

    #[test]
    fn single_sample_matches_batch() {
        let job = small_job();
        let all = render_samples(&job).unwrap();
        let one = render_sample(&job, 2).unwrap();
        assert_eq!(one.sample.images, all[2].sample.images);
        assert_eq!(one.material, all[2].material);
        assert!(render_sample(&job, 4).is_err());
    }

    #[test]
    fn quantized_values_lie_on_the_8_bit_grid() {
        let job = RenderJob { noise: true, ..small_job() };
        for r in render_samples(&job).unwrap() {
            for img in &r.sample.images {
                for &v in &img.data {
                    let k = v * 255.0;
                    assert!((k - k.round()).abs() < 1e-3 && (0.0..=1.0).contains(&v));
                }
            }
        }
    }

    #[test]
    fn invalid_jobs_are_rejected() {
        for job in [
            RenderJob { lights: 0, ..small_job() },
            RenderJob { azimuth_span_deg: 190.0, ..small_job() },
            RenderJob { brdf: BrdfChoice::Random { per_shape: 0 }, ..small_job() },
        ] {
            assert!(matches!(render_samples(&job), Err(Error::InvalidArgument(_))));
        }
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, 1, 0), derive_seed(1, 1, 1));
        assert_ne!(derive_seed(1, 1, 0), derive_seed(1, 2, 0));
        assert_eq!(derive_seed(7, 3, 9), derive_seed(7, 3, 9));
    }
}
