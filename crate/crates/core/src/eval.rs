//! Angular-error metrics and evaluation protocols.

use std::fmt::Write as _;

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classic::{fully_lit_mask, l2_solve, ObservationStack};
use crate::error::{Error, Result};
use crate::geometry::{angle_deg, Image, NormalMap, Sample};
use crate::net::{Network, Observations};
use crate::render::{derive_seed, Material, DARK_ALBEDO};

/// Per-pixel angle in degrees between `pred` and `gt` on the shared mask;
/// zero in the background.
pub fn angular_errors(pred: &NormalMap, gt: &NormalMap) -> Result<Vec<f64>> {
    pred.same_layout(gt)?;
    Ok(pred
        .normals
        .iter()
        .zip(&gt.normals)
        .zip(&gt.mask)
        .map(|((a, b), &m)| {
            if !m {
                return 0.0;
            }
            if *a == [0.0; 3] || *b == [0.0; 3] {
                // arccos of a zero dot product.
                return 90.0;
            }
            angle_deg(*a, *b)
        })
        .collect())
}

/// Mean angular error in degrees over the mask.
pub fn mae(pred: &NormalMap, gt: &NormalMap) -> Result<f64> {
    let errs = angular_errors(pred, gt)?;
    let count = gt.valid_count();
    if count == 0 {
        return Err(Error::NoValidPixels);
    }
    Ok(errs.iter().zip(&gt.mask).filter(|(_, &m)| m).map(|(e, _)| e).sum::<f64>() / count as f64)
}

/// Anything that maps an observation set to a normal map on its mask.
pub trait Estimator: Sync {
    fn name(&self) -> String;
    fn estimate(&self, sample: &Sample) -> Result<NormalMap>;
}

/// Zero-pads images up to multiples of 4 so any size fits the network.
fn pad_to_multiple_of_4(images: &[Image]) -> (Vec<Image>, usize, usize) {
    let (h, w) = (images[0].height, images[0].width);
    let (ph, pw) = (h.div_ceil(4) * 4, w.div_ceil(4) * 4);
    if (ph, pw) == (h, w) {
        return (images.to_vec(), ph, pw);
    }
    let padded = images
        .iter()
        .map(|img| {
            let mut out = Image::zeros(ph, pw);
            for c in 0..3 {
                for r in 0..h {
                    for k in 0..w {
                        out.set(c, r, k, img.get(c, r, k));
                    }
                }
            }
            out
        })
        .collect();
    (padded, ph, pw)
}

impl Estimator for Network {
    fn name(&self) -> String {
        if self.config().calibrated {
            "PS-FCN".into()
        } else {
            "UPS-FCN".into()
        }
    }

    fn estimate(&self, sample: &Sample) -> Result<NormalMap> {
        let (h, w) = (sample.height(), sample.width());
        let (images, ph, pw) = pad_to_multiple_of_4(&sample.images);
        let obs = Observations {
            images: &images,
            lights: Some(&sample.lights.directions),
        };
        let out = self.forward(&obs)?;
        let plane = ph * pw;
        let data = out.data();
        let mut normals = Vec::with_capacity(h * w);
        for r in 0..h {
            for k in 0..w {
                let i = r * pw + k;
                let j = r * w + k;
                normals.push(if sample.mask[j] {
                    [data[i], data[plane + i], data[2 * plane + i]]
                } else {
                    [0.0; 3]
                });
            }
        }
        NormalMap::new(h, w, normals, sample.mask.clone())
    }
}

/// Least-squares baseline.
pub struct L2Baseline;

impl Estimator for L2Baseline {
    fn name(&self) -> String {
        "L2".into()
    }

    fn estimate(&self, sample: &Sample) -> Result<NormalMap> {
        Ok(l2_solve(&ObservationStack::from_sample(sample))?.normals)
    }
}

/// Pixels over which errors are averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Foreground,
    /// Foreground pixels facing every light of the evaluated subset.
    FullyLit,
}

fn ground_truth(sample: &Sample) -> Result<NormalMap> {
    let gt = sample
        .normals
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument(format!("sample {} has no ground-truth normals", sample.id)))?;
    let mut gt = gt.clone();
    for (i, &m) in sample.mask.iter().enumerate() {
        if !m {
            gt.normals[i] = [0.0; 3];
        }
    }
    gt.mask = sample.mask.clone();
    Ok(gt)
}

/// MAE of `estimator` on `sample` over `region`.
pub fn evaluate_sample(estimator: &dyn Estimator, sample: &Sample, region: Region) -> Result<f64> {
    let gt = ground_truth(sample)?;
    let mut pred = estimator.estimate(sample)?;
    let mut gt = gt;
    if region == Region::FullyLit {
        let lit = fully_lit_mask(&gt, &sample.lights.directions);
        pred.mask = lit.clone();
        gt.mask = lit;
    }
    mae(&pred, &gt)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectResult {
    pub id: String,
    pub mae: f64,
    /// Per-trial MAE, in trial order.
    pub trials: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub estimator: String,
    pub label: String,
    pub q_test: usize,
    pub trials: usize,
    pub seed: u64,
    pub region: Region,
    pub objects: Vec<ObjectResult>,
    pub mean_mae: f64,
    /// Free-form description of the evaluated configuration.
    pub fingerprint: String,
}

impl EvalReport {
    /// Tab-separated table: one row per object, then the mean.
    pub fn to_tsv(&self) -> String {
        let mut s = format!("# {}\tq_test={}\ttrials={}\n", self.label, self.q_test, self.trials);
        s.push_str("object\tmae_deg\n");
        for o in &self.objects {
            writeln!(s, "{}\t{:.4}", o.id, o.mae).expect("write to String");
        }
        writeln!(s, "mean\t{:.4}", self.mean_mae).expect("write to String");
        s
    }
}

/// Averages MAE over `trials` random subsets of `q_test` image-light pairs
/// per object, then over objects. Subsets depend only on (seed, object,
/// trial). With `q_test` equal to an object's image count a single trial runs.
pub fn random_trial_eval(
    estimator: &dyn Estimator,
    dataset: &[Sample],
    q_test: usize,
    trials: usize,
    seed: u64,
    region: Region,
) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("evaluation set is empty".into()));
    }
    if trials == 0 || q_test == 0 {
        return Err(Error::InvalidArgument("trials and q_test must be ≥ 1".into()));
    }
    for s in dataset {
        if q_test > s.len() {
            return Err(Error::InvalidArgument(format!(
                "q_test {q_test} exceeds the {} images of {}",
                s.len(),
                s.id
            )));
        }
    }
    let jobs: Vec<(usize, usize)> = dataset
        .iter()
        .enumerate()
        .flat_map(|(o, s)| {
            let n = if q_test == s.len() { 1 } else { trials };
            (0..n).map(move |t| (o, t))
        })
        .collect();
    let results: Vec<f64> = jobs
        .par_iter()
        .map(|&(o, t)| {
            let s = &dataset[o];
            let subset = if q_test == s.len() {
                s.clone()
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, o as u64, t as u64));
                s.subset(&sample_indices(&mut rng, s.len(), q_test).into_vec())
            };
            evaluate_sample(estimator, &subset, region).map_err(|e| Error::Sample {
                sample: s.id.clone(),
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let mut objects: Vec<ObjectResult> = dataset
        .iter()
        .map(|s| ObjectResult {
            id: s.id.clone(),
            mae: 0.0,
            trials: Vec::new(),
        })
        .collect();
    for (&(o, _), &m) in jobs.iter().zip(&results) {
        objects[o].trials.push(m);
    }
    for o in &mut objects {
        o.mae = o.trials.iter().sum::<f64>() / o.trials.len() as f64;
    }
    let mean_mae = objects.iter().map(|o| o.mae).sum::<f64>() / objects.len() as f64;
    Ok(EvalReport {
        estimator: estimator.name(),
        label: format!("{} (q_test {q_test})", estimator.name()),
        q_test,
        trials,
        seed,
        region,
        objects,
        mean_mae,
        fingerprint: String::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub material: String,
    pub specularity: f32,
    pub mae_model: f64,
    pub mae_l2: f64,
    pub dark: bool,
}

/// Evaluates `model` and the L2 baseline on identical inputs, one row per
/// (sample, material) pair.
pub fn per_material_sweep(
    model: &dyn Estimator,
    samples: &[(Sample, Material)],
    region: Region,
) -> Result<Vec<SweepRow>> {
    samples
        .par_iter()
        .map(|(s, m)| {
            let wrap = |e: Error| Error::Sample {
                sample: s.id.clone(),
                source: Box::new(e),
            };
            Ok(SweepRow {
                material: m.name.clone(),
                specularity: m.params.specularity(),
                mae_model: evaluate_sample(model, s, region).map_err(wrap)?,
                mae_l2: evaluate_sample(&L2Baseline, s, region).map_err(wrap)?,
                dark: m.params.mean_albedo() < DARK_ALBEDO,
            })
        })
        .collect()
}

/// `material  specularity  mae_model  mae_l2  dark` table.
pub fn sweep_to_tsv(rows: &[SweepRow]) -> String {
    let mut s = String::from("material\tspecularity\tmae_model\tmae_l2\tdark\n");
    for r in rows {
        writeln!(
            s,
            "{}\t{:.3}\t{:.4}\t{:.4}\t{}",
            r.material,
            r.specularity,
            r.mae_model,
            r.mae_l2,
            if r.dark { "dark" } else { "" }
        )
        .expect("write to String");
    }
    s
}

/// The `fraction` of rows with the highest specularity (at least one).
pub fn most_specular(rows: &[SweepRow], fraction: f64) -> Vec<&SweepRow> {
    let mut sorted: Vec<&SweepRow> = rows.iter().collect();
    sorted.sort_by(|a, b| b.specularity.total_cmp(&a.specularity).then_with(|| a.material.cmp(&b.material)));
    let n = ((rows.len() as f64 * fraction).round() as usize).max(1).min(rows.len());
    sorted.truncate(n);
    sorted
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;

    fn field(n: Vec3, len: usize) -> NormalMap {
        NormalMap::new(1, len, vec![n; len], vec![true; len]).unwrap()
    }

    #[test]
    fn identical_and_orthogonal() {
        let up = field([0.0, 0.0, 1.0], 4);
        assert_eq!(mae(&up, &up).unwrap(), 0.0);
        let side = field([1.0, 0.0, 0.0], 4);
        assert!((mae(&side, &up).unwrap() - 90.0).abs() < 1e-12);
    }

    #[test]
    fn empty_mask_and_layout_errors() {
        let a = NormalMap::new(1, 2, vec![[0.0, 0.0, 1.0]; 2], vec![false; 2]).unwrap();
        assert!(matches!(mae(&a, &a), Err(Error::NoValidPixels)));
        let b = field([0.0, 0.0, 1.0], 2);
        assert!(mae(&a, &b).is_err());
    }

    #[test]
    fn top_decile_selection() {
        let rows: Vec<SweepRow> = (0..20)
            .map(|i| SweepRow {
                material: format!("m{i:02}"),
                specularity: i as f32,
                mae_model: 0.0,
                mae_l2: 0.0,
                dark: false,
            })
            .collect();
        let top = most_specular(&rows, 0.1);
        assert_eq!(top.iter().map(|r| r.material.as_str()).collect::<Vec<_>>(), ["m19", "m18"]);
    }
}
