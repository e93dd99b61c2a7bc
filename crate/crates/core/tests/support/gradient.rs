//! Finite-difference gradient checks shared by the gradient tests and the
//! acceptance run. Step 1e-3, relative tolerance 1e-3.
#![allow(dead_code)]

use psfcn::geometry::{normalize, Image, Vec3};
use psfcn::net::{build_psfcn, Fusion, Layer, LayerKind, NetConfig, Observations, LEAKY_SLOPE};
use psfcn::tape::{Tape, Var};
use psfcn::{Result, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f32 = 1e-3;
pub const TOL: f64 = 1e-3;

fn random(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Scalar head applied to the built output. The finite-difference side
/// evaluates it in f64 so the f32 loss scalar does not limit precision.
enum Head {
    Weighted(Tensor),
    Cosine { target: Tensor, mask: Vec<bool> },
}

impl Head {
    fn on_tape(&self, tape: &mut Tape, out: Var) -> Result<Var> {
        match self {
            Head::Weighted(w) => tape.weighted_sum(out, w.clone()),
            Head::Cosine { target, mask } => tape.cosine_loss(out, target.clone(), mask.clone()),
        }
    }

    fn eval(&self, out: &Tensor) -> f64 {
        match self {
            Head::Weighted(w) => out.dot(w),
            Head::Cosine { target, mask } => {
                let s = out.shape();
                let plane = s.plane_len();
                let (mut total, mut count) = (0.0f64, 0usize);
                for b in 0..s.n() {
                    let (o, t) = (out.item(b), target.item(b));
                    for px in 0..plane {
                        if mask[b * plane + px] {
                            let dot: f64 = (0..3).map(|c| o[c * plane + px] as f64 * t[c * plane + px] as f64).sum();
                            total += 1.0 - dot;
                            count += 1;
                        }
                    }
                }
                total / count as f64
            }
        }
    }
}

/// Relative error ‖fd − ad‖ / max(‖fd‖, ‖ad‖) over sampled coordinates of
/// every input, for the loss Σ w ⊙ build(inputs) with fixed random w.
fn check(inputs: Vec<Tensor>, samples_per_input: usize, build: impl Fn(&mut Tape, &[Var]) -> Result<Var>) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let weights = random(&mut rng, tape.value(out).unwrap().shape());
    check_with(inputs, samples_per_input, &Head::Weighted(weights), build)
}

fn check_with(
    inputs: Vec<Tensor>,
    samples_per_input: usize,
    head: &Head,
    build: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars).unwrap();
    let loss = head.on_tape(&mut tape, out).unwrap();
    let grads = tape.backward(loss).unwrap();

    let eval = |inputs: &[Tensor]| -> f64 {
        let mut t = Tape::new();
        let vs: Vec<Var> = inputs.iter().map(|x| t.leaf(x.clone())).collect();
        let o = build(&mut t, &vs).unwrap();
        head.eval(t.value(o).unwrap())
    };

    let mut worst = 0.0f64;
    for (k, input) in inputs.iter().enumerate() {
        let ad_full = grads.get(vars[k]).expect("gradient for every input");
        let coords: Vec<usize> = if input.numel() <= samples_per_input {
            (0..input.numel()).collect()
        } else {
            (0..samples_per_input).map(|_| rng.gen_range(0..input.numel())).collect()
        };
        let (mut diff, mut n_fd, mut n_ad) = (0.0f64, 0.0f64, 0.0f64);
        for &i in &coords {
            let bump = |delta: f32| {
                let mut v = input.data().to_vec();
                v[i] += delta;
                let mut xs = inputs.clone();
                xs[k] = Tensor::new(input.shape(), v).unwrap();
                eval(&xs)
            };
            let fd = (bump(H) - bump(-H)) / (2.0 * H as f64);
            let ad = ad_full.data()[i] as f64;
            diff += (fd - ad).powi(2);
            n_fd += fd * fd;
            n_ad += ad * ad;
        }
        let scale = n_fd.sqrt().max(n_ad.sqrt()).max(1e-6);
        worst = worst.max(diff.sqrt() / scale);
    }
    worst
}

pub fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(5)
}

/// Distinct values spaced well beyond the step, so no argmax flips.
fn separated(r: &mut ChaCha8Rng, shape: Shape, offset: usize, count: usize) -> Tensor {
    Tensor::from_fn(shape, |i| ((i * count + offset) as f32) * 0.01 + r.gen_range(0.0..0.002))
}

/// Worst relative error of every differentiable op, by name.
pub fn op_errors() -> Vec<(String, f64)> {
    let mut out = Vec::new();
    let mut r = rng();

    let x = random(&mut r, Shape::new(2, 6, 8, 8));
    let k = random(&mut r, Shape::new(4, 6, 3, 3));
    let b = random(&mut r, Shape::new(1, 4, 1, 1));
    for (stride, pad) in [(1, 1), (2, 1), (1, 0)] {
        let e = check(vec![x.clone(), k.clone(), b.clone()], 64, |t, v| t.conv2d(v[0], v[1], Some(v[2]), stride, pad));
        out.push((format!("conv2d 3×3 stride {stride} pad {pad}"), e));
    }
    let k1 = random(&mut r, Shape::new(3, 6, 1, 1));
    out.push(("conv2d 1×1".into(), check(vec![x.clone(), k1], 64, |t, v| t.conv2d(v[0], v[1], None, 1, 0))));

    let xs = random(&mut r, Shape::new(2, 6, 4, 4));
    let kd = random(&mut r, Shape::new(6, 3, 4, 4));
    out.push(("deconv2d 4×4 stride 2".into(), check(vec![xs, kd], 64, |t, v| t.deconv2d(v[0], v[1], 2, 1))));

    // Inputs kept away from the kink.
    let xr = Tensor::from_fn(Shape::new(2, 6, 8, 8), |_| {
        let v: f32 = r.gen_range(0.05..1.0);
        if r.gen_bool(0.5) { v } else { -v }
    });
    out.push(("leaky_relu".into(), check(vec![xr], 200, |t, v| t.leaky_relu(v[0], 0.1))));

    let x3 = random(&mut r, Shape::new(2, 3, 8, 8));
    out.push(("l2_normalize_channels".into(), check(vec![x3.clone()], 200, |t, v| t.l2_normalize_channels(v[0]))));

    let s = Shape::new(1, 6, 8, 8);
    let mut parts: Vec<Tensor> = (0..3).map(|j| separated(&mut r, s, j, 3)).collect();
    parts.swap(0, 2);
    out.push(("max_fuse".into(), check(parts.clone(), 64, |t, v| t.max_fuse(v))));
    out.push(("avg_fuse".into(), check(parts, 64, |t, v| t.avg_fuse(v))));

    let a = random(&mut r, Shape::new(2, 2, 8, 8));
    let b4 = random(&mut r, Shape::new(2, 4, 8, 8));
    out.push(("concat_channels".into(), check(vec![a.clone(), b4], 64, |t, v| t.concat_channels(v))));
    let c = random(&mut r, Shape::new(1, 2, 8, 8));
    out.push(("concat_batch".into(), check(vec![a.clone(), c], 64, |t, v| t.concat_batch(v))));
    out.push(("batch_item".into(), check(vec![a.clone()], 64, |t, v| t.batch_item(v[0], 1))));
    let d = random(&mut r, Shape::new(2, 2, 8, 8));
    out.push(("add".into(), check(vec![a.clone(), d.clone()], 64, |t, v| t.add(v[0], v[1]))));
    out.push(("mul".into(), check(vec![a.clone(), d], 64, |t, v| t.mul(v[0], v[1]))));
    out.push(("sum".into(), check(vec![a], 64, |t, v| t.sum(v[0]))));

    let target = random(&mut r, Shape::new(2, 3, 8, 8));
    let mask: Vec<bool> = (0..128).map(|i| i % 5 != 0).collect();
    let head = Head::Cosine { target, mask };
    out.push(("cosine_loss".into(), check_with(vec![x3], 200, &head, |t, v| t.l2_normalize_channels(v[0]))));
    out
}

fn images(r: &mut ChaCha8Rng, q: usize) -> (Vec<Image>, Vec<Vec3>) {
    let imgs = (0..q)
        .map(|_| Image {
            height: 8,
            width: 8,
            data: (0..192).map(|_| r.gen_range(0.0..1.0)).collect(),
        })
        .collect();
    let lights = (0..q)
        .map(|_| normalize([r.gen_range(-0.5..0.5), r.gen_range(-0.5..0.5), 1.0]))
        .collect();
    (imgs, lights)
}

/// Feature map in f64, channel-major.
#[derive(Clone)]
struct Map {
    c: usize,
    h: usize,
    w: usize,
    v: Vec<f64>,
}

impl Map {
    fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.v[(c * self.h + y) * self.w + x]
    }
}

/// Naive f64 forward of the same architecture, written from the layer
/// descriptions only. It shares no code with the tape.
struct Reference<'a> {
    net: &'a psfcn::net::Network,
    /// Activation signs and fusion winners of the last forward pass.
    pattern: std::cell::RefCell<Vec<u32>>,
    /// Per-pixel output length before normalization, last forward pass.
    norms: std::cell::RefCell<Vec<f64>>,
}

impl Reference<'_> {
    fn layer(&self, params: &[Vec<f64>], layer: &Layer, x: &Map) -> Map {
        let w = &params[layer.weight_index()];
        let (k, s, p) = (layer.kernel, layer.stride, layer.pad as isize);
        let cout = layer.out_channels;
        let mut y = match layer.kind {
            LayerKind::Conv => {
                let (h, wd) = ((x.h + 2 * layer.pad - k) / s + 1, (x.w + 2 * layer.pad - k) / s + 1);
                let mut v = vec![0.0; cout * h * wd];
                for o in 0..cout {
                    for oy in 0..h {
                        for ox in 0..wd {
                            let mut acc = layer.bias_index().map_or(0.0, |b| params[b][o]);
                            for i in 0..x.c {
                                for ky in 0..k {
                                    for kx in 0..k {
                                        let iy = (oy * s + ky) as isize - p;
                                        let ix = (ox * s + kx) as isize - p;
                                        if iy >= 0 && ix >= 0 && (iy as usize) < x.h && (ix as usize) < x.w {
                                            acc += w[((o * x.c + i) * k + ky) * k + kx] * x.at(i, iy as usize, ix as usize);
                                        }
                                    }
                                }
                            }
                            v[(o * h + oy) * wd + ox] = acc;
                        }
                    }
                }
                Map { c: cout, h, w: wd, v }
            }
            LayerKind::Deconv => {
                let (h, wd) = ((x.h - 1) * s + k - 2 * layer.pad, (x.w - 1) * s + k - 2 * layer.pad);
                let mut v = vec![0.0; cout * h * wd];
                for i in 0..x.c {
                    for iy in 0..x.h {
                        for ix in 0..x.w {
                            let xv = x.at(i, iy, ix);
                            for o in 0..cout {
                                for ky in 0..k {
                                    for kx in 0..k {
                                        let oy = (iy * s + ky) as isize - p;
                                        let ox = (ix * s + kx) as isize - p;
                                        if oy >= 0 && ox >= 0 && (oy as usize) < h && (ox as usize) < wd {
                                            v[(o * h + oy as usize) * wd + ox as usize] +=
                                                xv * w[((i * cout + o) * k + ky) * k + kx];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                Map { c: cout, h, w: wd, v }
            }
        };
        if layer.activation {
            let mut pattern = self.pattern.borrow_mut();
            for a in y.v.iter_mut() {
                pattern.push((*a > 0.0) as u32);
                if *a <= 0.0 {
                    *a *= LEAKY_SLOPE as f64;
                }
            }
        }
        y
    }

    fn input(images: &Image, light: Option<Vec3>) -> Map {
        let mut v: Vec<f64> = images.data.iter().map(|&a| a as f64).collect();
        let plane = images.height * images.width;
        if let Some(l) = light {
            for c in l {
                v.extend(std::iter::repeat(c as f64).take(plane));
            }
        }
        Map { c: v.len() / plane, h: images.height, w: images.width, v }
    }

    fn forward(&self, params: &[Vec<f64>], obs: &[(Vec<Image>, Vec<Vec3>)]) -> Vec<Map> {
        let cfg = self.net.config();
        obs.iter()
            .map(|(imgs, lights)| {
                let feats: Vec<Map> = imgs
                    .iter()
                    .zip(lights)
                    .map(|(img, &l)| {
                        let mut x = Self::input(img, cfg.calibrated.then_some(l));
                        for layer in self.net.extractor() {
                            x = self.layer(params, layer, &x);
                        }
                        x
                    })
                    .collect();
                let mut f = feats[0].clone();
                match cfg.fusion {
                    Fusion::Max => {
                        let mut winner = vec![0u32; f.v.len()];
                        for (j, g) in feats.iter().enumerate().skip(1) {
                            for ((a, &b), w) in f.v.iter_mut().zip(&g.v).zip(&mut winner) {
                                if b > *a {
                                    *a = b;
                                    *w = j as u32;
                                }
                            }
                        }
                        self.pattern.borrow_mut().extend(winner);
                    }
                    Fusion::Average => {
                        for g in &feats[1..] {
                            f.v.iter_mut().zip(&g.v).for_each(|(a, &b)| *a += b);
                        }
                        f.v.iter_mut().for_each(|a| *a /= feats.len() as f64);
                    }
                    Fusion::ConcatConv => {
                        f.c *= feats.len();
                        f.v = feats.iter().flat_map(|g| g.v.iter().copied()).collect();
                        f = self.layer(params, self.net.fusion_layer().unwrap(), &f);
                    }
                }
                for layer in self.net.regressor() {
                    f = self.layer(params, layer, &f);
                }
                let plane = f.h * f.w;
                for px in 0..plane {
                    let n = (0..3).map(|c| f.v[c * plane + px].powi(2)).sum::<f64>().sqrt();
                    self.norms.borrow_mut().push(n);
                    (0..3).for_each(|c| f.v[c * plane + px] /= n);
                }
                f
            })
            .collect()
    }

    /// Loss and the activation pattern it was evaluated under.
    fn loss(&self, params: &[Vec<f64>], obs: &[(Vec<Image>, Vec<Vec3>)], target: &Tensor, mask: &[bool]) -> (f64, Vec<u32>) {
        self.pattern.borrow_mut().clear();
        self.norms.borrow_mut().clear();
        let out = self.forward(params, obs);
        let mut total = 0.0;
        let mut count = 0;
        for (b, m) in out.iter().enumerate() {
            let t = target.item(b);
            let plane = m.h * m.w;
            for px in (0..plane).filter(|&px| mask[b * plane + px]) {
                total += 1.0 - (0..3).map(|c| m.v[c * plane + px] * t[c * plane + px] as f64).sum::<f64>();
                count += 1;
            }
        }
        (total / count as f64, self.pattern.take())
    }
}

pub struct NetworkCheck {
    pub checked: usize,
    pub kinked: usize,
    pub worst: f64,
}

/// Cosine loss through the whole desk-scale network on `batch` samples of
/// `q` images each. Analytic gradients come from the tape in f32; central
/// differences come from the f64 reference, so round-off does not swamp the
/// step. Coordinates whose ±h moves change an activation sign or a fusion
/// winner are not differentiable at that scale; they are counted and
/// skipped. Pixels whose raw output is shorter than `MIN_OUTPUT_NORM` are
/// left out of the loss, since normalization there is too curved for h.
pub fn network_check(fusion: Fusion, calibrated: bool, batch: usize, q: usize) -> NetworkCheck {
    const MIN_OUTPUT_NORM: f64 = 0.1;
    const PER_TENSOR: usize = 3;
    const MAX_DRAWS: usize = 60;
    let cfg = NetConfig {
        width_scale: 0.25,
        fusion,
        calibrated,
        concat_capacity: q,
    };
    let net = build_psfcn(&cfg, 3).unwrap();
    let mut r = rng();
    let obs: Vec<_> = (0..batch).map(|_| images(&mut r, q)).collect();
    let target = Tensor::from_fn(Shape::new(batch, 3, 8, 8), |_| r.gen_range(-1.0..1.0));

    let params = net.param_tensors();
    let reference = Reference { net: &net, pattern: Default::default(), norms: Default::default() };
    let mut p64: Vec<Vec<f64>> = params.iter().map(|p| p.data().iter().map(|&v| v as f64).collect()).collect();
    let all = vec![true; batch * 64];
    reference.loss(&p64, &obs, &target, &all);
    let mask: Vec<bool> = reference.norms.borrow().iter().map(|&n| n >= MIN_OUTPUT_NORM).collect();
    assert!(mask.iter().filter(|&&m| m).count() * 2 > mask.len());
    let (base, base_pattern) = reference.loss(&p64, &obs, &target, &mask);

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let batch_obs: Vec<Observations> = obs
        .iter()
        .map(|(i, l)| Observations { images: i, lights: calibrated.then_some(l.as_slice()) })
        .collect();
    let out = net.forward_on_tape(&mut tape, &vars, &batch_obs).unwrap();
    let loss = tape.cosine_loss(out, target.clone(), mask.clone()).unwrap();
    let tape_loss = tape.value(loss).unwrap().data()[0] as f64;
    assert!((base - tape_loss).abs() < 1e-5, "reference loss {base} vs tape {tape_loss}");
    let grads = tape.backward(loss).unwrap();

    let h = H as f64;
    let mut pick = ChaCha8Rng::seed_from_u64(29);
    let mut result = NetworkCheck { checked: 0, kinked: 0, worst: 0.0 };
    for (k, p) in params.iter().enumerate() {
        let g = grads.get(vars[k]).unwrap();
        let mut done = 0;
        for _ in 0..MAX_DRAWS {
            if done == PER_TENSOR {
                break;
            }
            let i = pick.gen_range(0..p.numel());
            let orig = p64[k][i];
            p64[k][i] = orig + h;
            let (up, up_pattern) = reference.loss(&p64, &obs, &target, &mask);
            p64[k][i] = orig - h;
            let (down, down_pattern) = reference.loss(&p64, &obs, &target, &mask);
            p64[k][i] = orig;
            if up_pattern != base_pattern || down_pattern != base_pattern {
                result.kinked += 1;
                continue;
            }
            let fd = (up - down) / (2.0 * h);
            let ad = g.data()[i] as f64;
            let e = (fd - ad).abs() / fd.abs().max(ad.abs()).max(1e-6);
            done += 1;
            result.checked += 1;
            result.worst = result.worst.max(e);
        }
    }
    result
}

/// The four network configurations checked: name, fusion, calibrated,
/// images per sample.
pub const NETWORK_CASES: [(&str, Fusion, bool, usize); 4] = [
    ("single image", Fusion::Max, true, 1),
    ("max fusion", Fusion::Max, true, 2),
    ("average fusion, uncalibrated", Fusion::Average, false, 2),
    ("concat fusion", Fusion::ConcatConv, true, 2),
];

/// 20 parameter tensors; at least 50 smooth coordinates must be checked.
pub const MIN_CHECKED: usize = 50;

impl NetworkCheck {
    pub fn passed(&self) -> bool {
        self.checked >= MIN_CHECKED && self.worst < TOL
    }
}
