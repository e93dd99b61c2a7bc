use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde_json::json;

use psfcn::eval::{
    angular_errors, mae, most_specular, per_material_sweep, random_trial_eval, sweep_to_tsv, Estimator,
    L2Baseline, Region,
};
use psfcn::geometry::Sample;
use psfcn::io::{encode_normal_png, load_diligent_dir, load_native_sample, decode_normal_png};
use psfcn::net::{
    build_psfcn, load_weights, read_weights_manifest, save_weights_labeled, Fusion, NetConfig, Network,
};
use psfcn::recon::{depth_preview_png, frankot_chellappa, normals_to_gradients, write_depth, write_obj};
use psfcn::render::{brdf_grid, read_manifest, render_dataset, BrdfChoice, RenderJob, ShapeKind};
use psfcn::train::{train_with, AugmentConfig, TrainConfig};
use psfcn::viz::{encode_rgb_png, render_error_map};

use crate::manifest::RunManifest;
use crate::{Cli, Command, EvalArgs, FusionArg, KindArg, PredictArgs, ReconArgs, RenderArgs, SweepArgs, TrainArgs};

pub const WEIGHTS_FILE: &str = "weights.psfw";
pub const LOSS_LOG: &str = "loss.log";

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Render(a) => render(cli, a),
        Command::Train(a) => train(cli, a),
        Command::Predict(a) => predict(cli, a),
        Command::Eval(a) => eval(cli, a),
        Command::Sweep(a) => sweep(cli, a),
        Command::Recon(a) => recon(cli, a),
    }
}

fn create_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(path.to_path_buf())
}

fn render(cli: &Cli, a: &RenderArgs) -> Result<()> {
    let shape = match a.kind {
        KindArg::Sphere => ShapeKind::Sphere { radius_frac: a.radius },
        KindArg::Blobby => ShapeKind::Blobby { n_bumps: a.bumps },
        KindArg::Ellipsoids => ShapeKind::Ellipsoids { n_lobes: a.bumps },
    };
    let brdf = match a.brdf_grid {
        Some(100) => BrdfChoice::Grid,
        Some(n) if (1..100).contains(&n) => BrdfChoice::Fixed {
            materials: brdf_grid()[..n].to_vec(),
        },
        Some(n) => bail!("--brdf-grid takes 1..=100 materials, got {n}"),
        None => BrdfChoice::Random {
            per_shape: a.brdfs_per_shape,
        },
    };
    let job = RenderJob {
        seed: cli.seed,
        shape,
        shapes: a.samples,
        brdf,
        lights: a.q,
        azimuth_span_deg: a.span,
        elevation_span_deg: a.span,
        height: a.size,
        width: a.size,
        noise: a.noise,
        quantize: true,
    };
    create_out(&a.out)?;
    let dataset = render_dataset(&job, &a.out)?;
    println!("rendered {} samples into {}", dataset.count, a.out.display());
    let mut m = RunManifest::new("render", cli.seed, cli.threads, serde_json::to_value(&job)?);
    m.outputs = vec![a.out.join(psfcn::render::MANIFEST_FILE)];
    m.outputs.extend(dataset.samples.iter().map(|s| a.out.join(&s.id)));
    m.write(&a.out)
}

fn fusion(f: FusionArg) -> Fusion {
    match f {
        FusionArg::Max => Fusion::Max,
        FusionArg::Avg => Fusion::Average,
        FusionArg::Conv => Fusion::ConcatConv,
    }
}

/// Native dataset root, a single native sample, a DiLiGenT object, or a
/// directory of DiLiGenT objects.
fn load_dataset(root: &Path) -> Result<Vec<Sample>> {
    if root.join("filenames.txt").is_file() {
        return Ok(vec![load_diligent_dir(root)?]);
    }
    if root.join(psfcn::io::LIGHTS_FILE).is_file() {
        return Ok(vec![load_native_sample(root)?]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .with_context(|| format!("reading {}", root.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let mut out = Vec::new();
    for d in dirs {
        if d.join("filenames.txt").is_file() {
            out.push(load_diligent_dir(&d)?);
        } else if d.join(psfcn::io::LIGHTS_FILE).is_file() {
            out.push(load_native_sample(&d)?);
        }
    }
    if out.is_empty() {
        return Err(anyhow!(psfcn::Error::Format {
            path: root.to_path_buf(),
            reason: "no samples found".into(),
        }));
    }
    Ok(out)
}

fn train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let mut data = Vec::new();
    for root in &a.data {
        data.extend(load_dataset(root)?);
    }
    let net_cfg = NetConfig {
        calibrated: !a.uncalibrated,
        width_scale: a.width_scale,
        fusion: fusion(a.fusion),
        concat_capacity: a.q,
    };
    let train_cfg = TrainConfig {
        batch_size: a.batch_size,
        epochs: a.epochs,
        base_lr: a.lr,
        lr_halving_period: a.lr_period,
        q_train: a.q,
        seed: cli.seed,
        augment: (!a.no_augment).then(AugmentConfig::default),
    };
    let mut net = build_psfcn(&net_cfg, cli.seed)?;
    create_out(&a.out)?;
    let log_path = a.out.join(LOSS_LOG);
    let mut log_file = OpenOptions::new()
        .create(true)
        .write(true)
        .truncate(true)
        .open(&log_path)
        .with_context(|| format!("opening {}", log_path.display()))?;
    let mut log_error = None;
    let log = train_with(&mut net, &data, &train_cfg, |r| {
        if log_error.is_none() {
            if let Err(e) = writeln!(log_file, "{} {:.6} {:e}", r.epoch, r.mean_loss, r.lr) {
                log_error = Some(e);
            }
        }
        eprintln!("epoch {:>3}  loss {:.5}  lr {:e}", r.epoch, r.mean_loss, r.lr);
    })?;
    if let Some(e) = log_error {
        return Err(e).with_context(|| format!("writing {}", log_path.display()));
    }
    let label = format!("{}+{}", a.data_tag, a.q);
    let weights = a.out.join(WEIGHTS_FILE);
    save_weights_labeled(&net, &weights, Some(&label))?;
    println!(
        "trained {} ({} parameters) on {} samples; final loss {:.5}",
        net.name(),
        net.parameter_count(),
        data.len(),
        log.epochs.last().map_or(f64::NAN, |r| r.mean_loss)
    );
    let mut m = RunManifest::new(
        "train",
        cli.seed,
        cli.threads,
        json!({
            "data": a.data,
            "network": net_cfg,
            "training": train_cfg,
            "label": label,
            "samples": data.len(),
        }),
    );
    m.outputs = vec![weights.clone(), psfcn::net::manifest_path(&weights), log_path];
    m.write(&a.out)
}

fn load_model(weights: &Path, uncalibrated_input: bool) -> Result<Network> {
    let net = load_weights(weights)?;
    match (net.config().calibrated, uncalibrated_input) {
        (true, true) => bail!(
            "{} is a calibrated model and needs light directions; drop --uncalibrated",
            weights.display()
        ),
        (false, false) => bail!(
            "{} is an uncalibrated model; pass --uncalibrated to run it without lights",
            weights.display()
        ),
        _ => Ok(net),
    }
}

fn predict(cli: &Cli, a: &PredictArgs) -> Result<()> {
    let net = load_model(&a.weights, a.uncalibrated)?;
    let mut sample = if a.input.join("filenames.txt").is_file() {
        load_diligent_dir(&a.input)?
    } else {
        load_native_sample(&a.input)?
    };
    if let Some(sel) = &a.select {
        if let Some(&bad) = sel.iter().find(|&&i| i >= sample.len()) {
            bail!("--select index {bad} out of range for {} images", sample.len());
        }
        sample = sample.subset(sel);
    }
    let pred = net.estimate(&sample)?;
    create_out(&a.out)?;
    let mut m = RunManifest::new(
        "predict",
        cli.seed,
        cli.threads,
        json!({
            "weights": a.weights,
            "input": a.input,
            "select": a.select,
            "uncalibrated": a.uncalibrated,
            "images": sample.len(),
        }),
    );
    m.outputs.push(write_file(&a.out.join("normal.png"), encode_normal_png(&pred))?);
    if let Some(gt) = &sample.normals {
        let mut gt = gt.clone();
        gt.mask = sample.mask.clone();
        let err = mae(&pred, &gt)?;
        let map = render_error_map(&pred, &gt)?;
        m.outputs.push(write_file(&a.out.join("error_map.png"), encode_rgb_png(&map))?);
        let max = angular_errors(&pred, &gt)?.into_iter().fold(0.0f64, f64::max);
        println!("MAE {err:.3}° (max {max:.1}°)");
        m.outputs.push(write_file(&a.out.join("mae.txt"), format!("{err:.6}\n"))?);
    }
    m.write(&a.out)
}

fn run_label(weights: Option<&Path>, name: &str, q_test: usize) -> String {
    let train_label = weights
        .and_then(|w| read_weights_manifest(w).ok())
        .and_then(|m| m.label);
    match train_label {
        Some(l) => format!("{name} ({l}, {q_test})"),
        None => format!("{name} ({q_test})"),
    }
}

fn eval(cli: &Cli, a: &EvalArgs) -> Result<()> {
    let data = load_dataset(&a.data)?;
    let net;
    let estimator: &dyn Estimator = match &a.weights {
        Some(w) => {
            net = load_model(w, a.uncalibrated)?;
            &net
        }
        None => &L2Baseline,
    };
    let q_test = a.q_test.unwrap_or_else(|| data.iter().map(Sample::len).min().unwrap_or(0));
    let region = if a.fully_lit { Region::FullyLit } else { Region::Foreground };
    let mut report = random_trial_eval(estimator, &data, q_test, a.trials, cli.seed, region)?;
    report.label = run_label(a.weights.as_deref(), &estimator.name(), q_test);
    report.fingerprint = format!(
        "data={} weights={} region={region:?}",
        a.data.display(),
        a.weights.as_deref().map_or("-".into(), |w| w.display().to_string())
    );
    create_out(&a.out)?;
    let mut m = RunManifest::new(
        "eval",
        cli.seed,
        cli.threads,
        json!({
            "data": a.data,
            "weights": a.weights,
            "l2": a.l2,
            "q_test": q_test,
            "trials": a.trials,
            "region": region,
        }),
    );
    m.outputs.push(write_file(&a.out.join("report.tsv"), report.to_tsv())?);
    m.outputs.push(write_file(
        &a.out.join("report.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?);
    println!("{}: mean MAE {:.3}° over {} objects", report.label, report.mean_mae, report.objects.len());
    m.write(&a.out)
}

fn sweep(cli: &Cli, a: &SweepArgs) -> Result<()> {
    let manifest = read_manifest(&a.data)?;
    let materials: HashMap<String, psfcn::render::Material> = manifest
        .samples
        .into_iter()
        .map(|e| (e.id, e.material))
        .collect();
    let pairs = load_dataset(&a.data)?
        .into_iter()
        .map(|s| {
            let m = materials
                .get(&s.id)
                .cloned()
                .ok_or_else(|| anyhow!("sample {} is not listed in the dataset manifest", s.id))?;
            Ok((s, m))
        })
        .collect::<Result<Vec<_>>>()?;
    let net = load_model(&a.weights, false)?;
    let region = if a.fully_lit { Region::FullyLit } else { Region::Foreground };
    let rows = per_material_sweep(&net, &pairs, region)?;
    create_out(&a.out)?;
    let mut m = RunManifest::new(
        "sweep",
        cli.seed,
        cli.threads,
        json!({ "data": a.data, "weights": a.weights, "region": region }),
    );
    m.outputs.push(write_file(&a.out.join("sweep.tsv"), sweep_to_tsv(&rows))?);
    m.outputs.push(write_file(
        &a.out.join("sweep.json"),
        serde_json::to_string_pretty(&rows)? + "\n",
    )?);
    let mean = |f: fn(&psfcn::eval::SweepRow) -> f64, rs: &[&psfcn::eval::SweepRow]| {
        rs.iter().map(|r| f(r)).sum::<f64>() / rs.len().max(1) as f64
    };
    let all: Vec<_> = rows.iter().collect();
    let top = most_specular(&rows, 0.1);
    println!(
        "all materials: model {:.3}°, L2 {:.3}°; top-decile specular: model {:.3}°, L2 {:.3}°",
        mean(|r| r.mae_model, &all),
        mean(|r| r.mae_l2, &all),
        mean(|r| r.mae_model, &top),
        mean(|r| r.mae_l2, &top)
    );
    m.write(&a.out)
}

fn recon(cli: &Cli, a: &ReconArgs) -> Result<()> {
    let bytes = fs::read(&a.normals).with_context(|| format!("reading {}", a.normals.display()))?;
    let normals = decode_normal_png(&bytes, &a.normals)?;
    let depth = frankot_chellappa(&normals_to_gradients(&normals)?)?;
    create_out(&a.out)?;
    let mut m = RunManifest::new("recon", cli.seed, cli.threads, json!({ "normals": a.normals }));
    let depth_path = a.out.join("depth.psdz");
    write_depth(&depth, &depth_path)?;
    m.outputs.push(depth_path);
    m.outputs.push(write_file(&a.out.join("depth_preview.png"), depth_preview_png(&depth))?);
    let obj = a.out.join("surface.obj");
    write_obj(&depth, &obj)?;
    m.outputs.push(obj);
    m.write(&a.out)
}
