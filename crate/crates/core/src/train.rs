//! Patch augmentation and the training loop.

use std::fmt::Write as _;

use rand::seq::index::sample as sample_indices;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adam::AdamState;
use crate::error::{Error, Result};
use crate::geometry::{normalize, Image, NormalMap, Sample, Vec3};
use crate::net::{Network, Observations};
use crate::render::derive_seed;
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Independent output width and height range, inclusive; `None` keeps
    /// the original size.
    pub rescale: Option<(usize, usize)>,
    pub noise_amplitude: f32,
    pub crop: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            rescale: Some((32, 128)),
            noise_amplitude: 0.05,
            crop: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub base_lr: f32,
    pub lr_halving_period: usize,
    pub q_train: usize,
    pub seed: u64,
    /// `None` trains on whole samples with the first `q_train` lights.
    pub augment: Option<AugmentConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            epochs: 20,
            base_lr: 1e-3,
            lr_halving_period: 10,
            q_train: 8,
            seed: 0,
            augment: Some(AugmentConfig::default()),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch size must be ≥ 1");
        }
        if self.q_train == 0 {
            return bad("q_train must be ≥ 1");
        }
        if self.lr_halving_period == 0 {
            return bad("learning-rate halving period must be ≥ 1");
        }
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return bad("learning rate must be finite and non-negative");
        }
        if let Some(a) = &self.augment {
            if a.crop == 0 || a.crop % 4 != 0 {
                return bad("crop size must be a positive multiple of 4");
            }
            if let Some((lo, hi)) = a.rescale {
                if lo > hi || lo < a.crop {
                    return bad("rescale range must satisfy crop ≤ min ≤ max");
                }
            }
            if !(a.noise_amplitude >= 0.0) {
                return bad("noise amplitude must be non-negative");
            }
        }
        Ok(())
    }

    /// `base_lr / 2^(epoch / period)`, epochs counted from 0.
    pub fn learning_rate(&self, epoch: usize) -> f32 {
        let halvings = (epoch / self.lr_halving_period).min(1000) as i32;
        self.base_lr * 0.5f32.powi(halvings)
    }
}

/// Training input: `q` images and lights with the normal target.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub images: Vec<Image>,
    pub lights: Vec<Vec3>,
    pub normals: NormalMap,
}

/// Bilinear resampling with pixel-center alignment and edge clamping.
fn bilinear_taps(out: usize, src: usize) -> Vec<(usize, usize, f32)> {
    let scale = src as f64 / out as f64;
    (0..out)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, (s - lo as f64) as f32)
        })
        .collect()
}

fn resample_planes(data: &[f32], planes: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
    let (rows, cols) = (bilinear_taps(oh, h), bilinear_taps(ow, w));
    let mut out = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let src = &data[p * h * w..(p + 1) * h * w];
        for &(r0, r1, fr) in &rows {
            for &(c0, c1, fc) in &cols {
                let top = src[r0 * w + c0] * (1.0 - fc) + src[r0 * w + c1] * fc;
                let bottom = src[r1 * w + c0] * (1.0 - fc) + src[r1 * w + c1] * fc;
                out.push(top * (1.0 - fr) + bottom * fr);
            }
        }
    }
    out
}

pub fn resize_image(img: &Image, height: usize, width: usize) -> Image {
    if (img.height, img.width) == (height, width) {
        return img.clone();
    }
    Image {
        height,
        width,
        data: resample_planes(&img.data, 3, img.height, img.width, height, width),
    }
}

/// Normals resampled bilinearly and renormalized; mask by nearest neighbor.
pub fn resize_normals(n: &NormalMap, height: usize, width: usize) -> NormalMap {
    if (n.height, n.width) == (height, width) {
        return n.clone();
    }
    let plane = n.height * n.width;
    let mut planar = vec![0.0f32; 3 * plane];
    for (i, v) in n.normals.iter().enumerate() {
        for c in 0..3 {
            planar[c * plane + i] = v[c];
        }
    }
    let res = resample_planes(&planar, 3, n.height, n.width, height, width);
    let out_plane = height * width;
    let nearest = |i: usize, out: usize, src: usize| ((i * 2 + 1) * src / (2 * out)).min(src - 1);
    let mut normals = Vec::with_capacity(out_plane);
    let mut mask = Vec::with_capacity(out_plane);
    for r in 0..height {
        for c in 0..width {
            let i = r * width + c;
            let m = n.mask[nearest(r, height, n.height) * n.width + nearest(c, width, n.width)];
            let v = normalize([res[i], res[out_plane + i], res[2 * out_plane + i]]);
            let valid = m && v[2].is_finite() && v != [0.0; 3];
            normals.push(if valid { v } else { [0.0; 3] });
            mask.push(valid);
        }
    }
    NormalMap {
        height,
        width,
        normals,
        mask,
    }
}

fn crop_image(img: &Image, top: usize, left: usize, size: usize) -> Image {
    let mut out = Image::zeros(size, size);
    for c in 0..3 {
        for r in 0..size {
            for k in 0..size {
                out.set(c, r, k, img.get(c, top + r, left + k));
            }
        }
    }
    out
}

fn crop_normals(n: &NormalMap, top: usize, left: usize, size: usize) -> NormalMap {
    let idx = |r: usize, k: usize| (top + r) * n.width + left + k;
    NormalMap {
        height: size,
        width: size,
        normals: (0..size * size).map(|i| n.normals[idx(i / size, i % size)]).collect(),
        mask: (0..size * size).map(|i| n.mask[idx(i / size, i % size)]).collect(),
    }
}

const CROP_ATTEMPTS: usize = 64;

/// Training patch from `sample`: `q` lights drawn without replacement,
/// independent rescale of width and height, uniform noise clamped to
/// [0, 1], then one aligned square crop containing foreground.
pub fn augment<R: Rng>(sample: &Sample, q: usize, cfg: &AugmentConfig, rng: &mut R) -> Result<Patch> {
    let gt = sample
        .normals
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument(format!("sample {} has no ground-truth normals", sample.id)))?;
    if q > sample.len() {
        return Err(Error::InvalidArgument(format!(
            "sample {} has {} images, {q} requested",
            sample.id,
            sample.len()
        )));
    }
    let (h, w) = (sample.height(), sample.width());
    let (oh, ow) = match cfg.rescale {
        Some((lo, hi)) => (rng.gen_range(lo..=hi), rng.gen_range(lo..=hi)),
        None => (h, w),
    };
    if oh < cfg.crop || ow < cfg.crop {
        return Err(Error::InvalidArgument(format!(
            "sample {} is {oh}×{ow}, smaller than the {c}×{c} crop",
            sample.id,
            c = cfg.crop
        )));
    }
    let chosen: Vec<usize> = sample_indices(rng, sample.len(), q).into_vec();
    let mut images: Vec<Image> = chosen
        .iter()
        .map(|&i| resize_image(&sample.images[i], oh, ow))
        .collect();
    if cfg.noise_amplitude > 0.0 {
        let a = cfg.noise_amplitude;
        for img in &mut images {
            for v in &mut img.data {
                *v = (*v + rng.gen_range(-a..=a)).clamp(0.0, 1.0);
            }
        }
    }
    let normals = resize_normals(&NormalMap { mask: sample.mask.clone(), ..gt.clone() }, oh, ow);
    let mut window = None;
    for _ in 0..CROP_ATTEMPTS {
        let (top, left) = (rng.gen_range(0..=oh - cfg.crop), rng.gen_range(0..=ow - cfg.crop));
        let n = crop_normals(&normals, top, left, cfg.crop);
        if n.mask.contains(&true) {
            window = Some((top, left, n));
            break;
        }
    }
    let (top, left, normals) = window.ok_or_else(|| {
        Error::InvalidArgument(format!("sample {}: no crop with foreground found", sample.id))
    })?;
    Ok(Patch {
        images: images.iter().map(|im| crop_image(im, top, left, cfg.crop)).collect(),
        lights: chosen.iter().map(|&i| sample.lights.directions[i]).collect(),
        normals,
    })
}

/// Whole sample restricted to its first `q` image-light pairs.
fn whole_patch(sample: &Sample, q: usize) -> Result<Patch> {
    let gt = sample
        .normals
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument(format!("sample {} has no ground-truth normals", sample.id)))?;
    if q > sample.len() {
        return Err(Error::InvalidArgument(format!(
            "sample {} has {} images, {q} requested",
            sample.id,
            sample.len()
        )));
    }
    Ok(Patch {
        images: sample.images[..q].to_vec(),
        lights: sample.lights.directions[..q].to_vec(),
        normals: NormalMap { mask: sample.mask.clone(), ..gt.clone() },
    })
}

/// Loss and parameter gradients of one patch.
pub struct PatchGradient {
    pub loss: f64,
    pub pixels: usize,
    pub grads: Vec<Tensor>,
}

/// Cosine loss of `net` on `patch`, with gradients in [`Network::params`] order.
pub fn patch_gradient(net: &Network, patch: &Patch) -> Result<PatchGradient> {
    let mut tape = Tape::new();
    let vars = net.params_on_tape(&mut tape);
    let obs = Observations {
        images: &patch.images,
        lights: Some(&patch.lights),
    };
    let out = net.forward_on_tape(&mut tape, &vars, &[obs])?;
    let pixels = patch.normals.valid_count();
    let loss = tape.cosine_loss(out, patch.normals.to_tensor(), patch.normals.mask.clone())?;
    let value = tape.value(loss)?.data()[0] as f64;
    let grads = tape.backward(loss)?;
    let grads = vars
        .iter()
        .zip(net.params())
        .map(|(&v, p)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(p.tensor.shape())))
        .collect();
    Ok(PatchGradient {
        loss: value,
        pixels,
        grads,
    })
}

/// Loss and gradient of the batch objective, the pixel-weighted mean of the
/// per-patch losses. Patches run in parallel; reduction order is fixed.
pub fn batch_gradient(net: &Network, patches: &[Patch]) -> Result<(f64, Vec<Tensor>)> {
    let parts: Vec<PatchGradient> = patches
        .par_iter()
        .map(|p| patch_gradient(net, p))
        .collect::<Result<_>>()?;
    let total: usize = parts.iter().map(|p| p.pixels).sum();
    if total == 0 {
        return Err(Error::NoValidPixels);
    }
    let mut acc: Vec<Vec<f32>> = net.params().iter().map(|p| vec![0.0; p.tensor.numel()]).collect();
    let mut loss = 0.0f64;
    for part in &parts {
        let weight = part.pixels as f64 / total as f64;
        loss += weight * part.loss;
        for (a, g) in acc.iter_mut().zip(&part.grads) {
            for (x, &y) in a.iter_mut().zip(g.data()) {
                *x += weight as f32 * y;
            }
        }
    }
    let grads = acc
        .into_iter()
        .zip(net.params())
        .map(|(d, p)| Tensor::new(p.tensor.shape(), d))
        .collect::<Result<_>>()?;
    Ok((loss, grads))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    /// One `epoch mean_loss lr` line per epoch.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in &self.epochs {
            writeln!(s, "{} {:.6} {:e}", r.epoch, r.mean_loss, r.lr).expect("write to String");
        }
        s
    }
}

const SHUFFLE_STREAM: u64 = 11;
const AUGMENT_STREAM: u64 = 12;

/// Trains `net` in place with Adam on the cosine loss. Deterministic given
/// the config seed; the thread count does not change the result.
pub fn train(net: &mut Network, data: &[Sample], cfg: &TrainConfig) -> Result<TrainLog> {
    train_with(net, data, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    net: &mut Network,
    data: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainLog> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let mut params = net.param_tensors();
    let mut adam = AdamState::new(&params, cfg.base_lr);
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate(epoch);
        adam.learning_rate = lr;
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, SHUFFLE_STREAM, epoch as u64)));
        let (mut loss_sum, mut batches) = (0.0f64, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let patches: Vec<Patch> = chunk
                .par_iter()
                .enumerate()
                .map(|(k, &i)| {
                    let sample = &data[i];
                    let patch = match &cfg.augment {
                        Some(a) => {
                            let slot = (epoch * data.len() + b * cfg.batch_size + k) as u64;
                            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, AUGMENT_STREAM, slot));
                            augment(sample, cfg.q_train, a, &mut rng)
                        }
                        None => whole_patch(sample, cfg.q_train),
                    };
                    patch.map_err(|e| Error::Sample {
                        sample: sample.id.clone(),
                        source: Box::new(e),
                    })
                })
                .collect::<Result<_>>()?;
            let (loss, grads) = batch_gradient(net, &patches)?;
            if !loss.is_finite() || grads.iter().any(|g| g.data().iter().any(|v| !v.is_finite())) {
                return Err(Error::Numerical(format!(
                    "non-finite loss or gradient at epoch {epoch}, batch {b}"
                )));
            }
            adam.step(&mut params, &grads)?;
            net.set_param_tensors(params.clone())?;
            loss_sum += loss;
            batches += 1;
        }
        let record = EpochRecord {
            epoch,
            mean_loss: loss_sum / batches as f64,
            lr,
        };
        log::info!("epoch {} loss {:.5} lr {:e}", record.epoch, record.mean_loss, record.lr);
        on_epoch(&record);
        log.epochs.push(record);
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_halves_every_period() {
        let cfg = TrainConfig { lr_halving_period: 5, ..TrainConfig::default() };
        assert_eq!(cfg.learning_rate(0), 1e-3);
        assert_eq!(cfg.learning_rate(4), 1e-3);
        assert_eq!(cfg.learning_rate(5), 1e-3 / 2.0);
        assert_eq!(cfg.learning_rate(10), 1e-3 / 4.0);
    }

    #[test]
    fn bilinear_identity_and_constant() {
        let img = Image {
            height: 2,
            width: 3,
            data: (0..18).map(|v| v as f32).collect(),
        };
        assert_eq!(resize_image(&img, 2, 3), img);
        let flat = Image {
            height: 4,
            width: 4,
            data: vec![0.25; 48],
        };
        let up = resize_image(&flat, 7, 9);
        assert!(up.data.iter().all(|&v| (v - 0.25).abs() < 1e-7));
    }

    #[test]
    fn resized_normals_stay_unit() {
        let normals: Vec<Vec3> = (0..64)
            .map(|i| normalize([(i % 8) as f32 * 0.1 - 0.4, (i / 8) as f32 * 0.1 - 0.4, 1.0]))
            .collect();
        let n = NormalMap::new(8, 8, normals, vec![true; 64]).unwrap();
        let r = resize_normals(&n, 13, 5);
        for v in &r.normals {
            assert!((crate::geometry::norm(*v) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { q_train: 0, ..TrainConfig::default() },
            TrainConfig {
                augment: Some(AugmentConfig { crop: 30, ..AugmentConfig::default() }),
                ..TrainConfig::default()
            },
        ] {
            assert!(cfg.validate().is_err());
        }
    }
}
