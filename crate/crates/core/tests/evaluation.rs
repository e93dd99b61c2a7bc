use psfcn::eval::{
    evaluate_sample, mae, most_specular, per_material_sweep, random_trial_eval, Estimator, L2Baseline, Region,
};
use psfcn::geometry::{normalize, NormalMap, Sample, Vec3};
use psfcn::net::{build_psfcn, cosine_loss, NetConfig};
use psfcn::render::{brdf_grid, render_samples, BrdfChoice, BrdfParams, Material, RenderJob, ShapeKind};
use psfcn::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Rodrigues rotation in f64.
fn rotate(v: Vec3, axis: [f64; 3], deg: f64) -> Vec3 {
    let (s, c) = deg.to_radians().sin_cos();
    let v = v.map(f64::from);
    let k = axis;
    let kv = k[0] * v[0] + k[1] * v[1] + k[2] * v[2];
    let cross = [k[1] * v[2] - k[2] * v[1], k[2] * v[0] - k[0] * v[2], k[0] * v[1] - k[1] * v[0]];
    [0, 1, 2].map(|i| (v[i] * c + cross[i] * s + k[i] * kv * (1.0 - c)) as f32)
}

fn random_field(seed: u64, len: usize) -> NormalMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (0..len)
        .map(|_| normalize([rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.1..1.0)]))
        .collect();
    NormalMap::new(1, len, n, vec![true; len]).unwrap()
}

fn rotated(field: &NormalMap, axis: [f64; 3], deg: f64) -> NormalMap {
    NormalMap { normals: field.normals.iter().map(|&n| rotate(n, axis, deg)).collect(), ..field.clone() }
}

const AXIS: [f64; 3] = [0.48, -0.6, 0.64];

#[test]
fn planted_rotation_is_measured_exactly() {
    let gt = random_field(1, 500);
    let pred = rotated(&gt, AXIS, 10.0);
    // Rotation about an axis moves each vector by 10° only if it is
    // perpendicular to the axis; project the field onto that plane first.
    let planar = NormalMap {
        normals: gt
            .normals
            .iter()
            .map(|n| {
                let d = (0..3).map(|i| n[i] as f64 * AXIS[i]).sum::<f64>();
                normalize([0, 1, 2].map(|i| (n[i] as f64 - d * AXIS[i]) as f32))
            })
            .collect(),
        ..gt.clone()
    };
    let e = mae(&rotated(&planar, AXIS, 10.0), &planar).unwrap();
    assert!((e - 10.0).abs() < 1e-4, "{e}");
    // Off-plane vectors move by less, never more.
    assert!(mae(&pred, &gt).unwrap() <= 10.0 + 1e-4);
}

#[test]
fn joint_rotation_leaves_error_unchanged() {
    let gt = random_field(2, 300);
    let pred = random_field(3, 300);
    let base = mae(&pred, &gt).unwrap();
    let turned = mae(&rotated(&pred, AXIS, 37.0), &rotated(&gt, AXIS, 37.0)).unwrap();
    assert!((base - turned).abs() < 1e-3, "{base} vs {turned}");
}

#[test]
fn trivial_error_values() {
    let up = NormalMap::new(1, 4, vec![[0.0, 0.0, 1.0]; 4], vec![true; 4]).unwrap();
    let side = NormalMap { normals: vec![[1.0, 0.0, 0.0]; 4], ..up.clone() };
    let down = NormalMap { normals: vec![[0.0, 0.0, -1.0]; 4], ..up.clone() };
    assert_eq!(mae(&up, &up).unwrap(), 0.0);
    assert!((mae(&side, &up).unwrap() - 90.0).abs() < 1e-12);
    assert_eq!(cosine_loss(&up, &up).unwrap(), 0.0);
    assert_eq!(cosine_loss(&side, &up).unwrap(), 1.0);
    assert_eq!(cosine_loss(&down, &up).unwrap(), 2.0);
    let empty = NormalMap { mask: vec![false; 4], ..up.clone() };
    assert!(mae(&up, &empty).is_err());
}

/// Returns the ground truth rotated by a fixed angle, whatever the input.
struct Planted(f64);

impl Estimator for Planted {
    fn name(&self) -> String {
        "planted".into()
    }

    fn estimate(&self, sample: &Sample) -> Result<NormalMap> {
        Ok(rotated(sample.normals.as_ref().unwrap(), [0.0, 0.0, 1.0], self.0))
    }
}

fn spheres(materials: Vec<Material>, lights: usize, quantize: bool) -> Vec<(Sample, Material)> {
    let job = RenderJob {
        seed: 8,
        shape: ShapeKind::Sphere { radius_frac: 0.9 },
        shapes: 1,
        brdf: BrdfChoice::Fixed { materials },
        lights,
        height: 32,
        width: 32,
        quantize,
        ..RenderJob::default()
    };
    render_samples(&job).unwrap().into_iter().map(|r| (r.sample, r.material)).collect()
}

fn matte() -> Material {
    Material { name: "matte".into(), params: BrdfParams::lambertian([0.8, 0.8, 0.8]) }
}

#[test]
fn single_trial_over_all_images_is_deterministic() {
    let data: Vec<Sample> = spheres(vec![matte()], 12, true).into_iter().map(|(s, _)| s).collect();
    let a = random_trial_eval(&L2Baseline, &data, 12, 100, 1, Region::Foreground).unwrap();
    let b = random_trial_eval(&L2Baseline, &data, 12, 1, 2, Region::Foreground).unwrap();
    assert_eq!(a.objects[0].trials.len(), 1);
    assert_eq!(a.mean_mae, b.mean_mae);
    assert_eq!(a.mean_mae, evaluate_sample(&L2Baseline, &data[0], Region::Foreground).unwrap());
}

#[test]
fn seeded_trials_are_reproducible() {
    let data: Vec<Sample> = spheres(vec![matte()], 12, true).into_iter().map(|(s, _)| s).collect();
    let a = random_trial_eval(&L2Baseline, &data, 4, 10, 5, Region::Foreground).unwrap();
    let b = random_trial_eval(&L2Baseline, &data, 4, 10, 5, Region::Foreground).unwrap();
    let c = random_trial_eval(&L2Baseline, &data, 4, 10, 6, Region::Foreground).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.objects[0].trials, c.objects[0].trials);
    assert_eq!(a.objects[0].trials.len(), 10);
    let mean = a.objects[0].trials.iter().sum::<f64>() / 10.0;
    assert!((a.mean_mae - mean).abs() < 1e-12);
    assert!(random_trial_eval(&L2Baseline, &data, 13, 1, 0, Region::Foreground).is_err());
}

#[test]
fn planted_estimator_scores_its_angle() {
    // Rotation about the view axis moves a normal by its tilt-dependent
    // angle; the oracle recomputes that per pixel.
    let (sample, _) = spheres(vec![matte()], 4, true).remove(0);
    let gt = sample.normals.clone().unwrap();
    let expected: f64 = gt
        .normals
        .iter()
        .zip(&sample.mask)
        .filter(|(_, &m)| m)
        .map(|(n, _)| {
            let r = rotate(*n, [0.0, 0.0, 1.0], 10.0);
            let chord = (0..3).map(|i| (n[i] as f64 - r[i] as f64).powi(2)).sum::<f64>().sqrt();
            2.0 * (chord / 2.0).asin().to_degrees()
        })
        .sum::<f64>()
        / sample.mask.iter().filter(|&&m| m).count() as f64;
    let got = evaluate_sample(&Planted(10.0), &sample, Region::Foreground).unwrap();
    assert!((got - expected).abs() < 1e-3, "{got} vs {expected}");
}

#[test]
fn lambertian_sweep_row_is_exact_for_least_squares() {
    let net = build_psfcn(&NetConfig { width_scale: 0.25, ..NetConfig::default() }, 0).unwrap();
    let grid = brdf_grid();
    let picks: Vec<Material> = ["white-ks0-n8", "dark-ks1.6-n400"]
        .iter()
        .map(|name| grid.iter().find(|m| m.name == *name).unwrap().clone())
        .collect();
    let rows = per_material_sweep(&net, &spheres(picks, 16, false), Region::FullyLit).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].mae_l2 < 0.1, "{:?}", rows[0]);
    assert!(!rows[0].dark && rows[1].dark);
    assert!(rows[1].mae_l2 > rows[0].mae_l2);
    assert_eq!(most_specular(&rows, 0.5)[0].material, "dark-ks1.6-n400");
}
