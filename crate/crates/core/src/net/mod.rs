//! The order-agnostic photometric stereo network.
//!
//! Each image (optionally with its light direction tiled into three extra
//! channels) passes through a shared-weight feature extractor; the per-input
//! feature maps are fused into one, and a regression network turns the fused
//! map into a unit normal map at input resolution.
//!
//! Two execution paths share the same kernels and therefore produce
//! bit-identical outputs: [`Network::forward`] streams inputs through the
//! extractor one at a time (constant memory in the number of inputs), and
//! [`Network::forward_on_tape`] records everything for training.

mod loss;
mod persist;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::NamedTensor;
use crate::error::{Error, Result};
use crate::geometry::{check_unit_light, Image, NormalMap, Vec3};
use crate::ops::{self, MaxAccumulator, MeanAccumulator};
use crate::tape::{Tape, Var};
use crate::tensor::{Shape, Tensor};

pub use loss::cosine_loss;
pub use persist::{
    load_weights, manifest_path, read_weights_manifest, save_weights, save_weights_labeled, WeightsManifest,
};

/// Negative slope of every hidden activation.
pub const LEAKY_SLOPE: f32 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    Max,
    Average,
    /// Channel concatenation in input order followed by a 1×1 convolution.
    /// Order-sensitive and limited to a fixed number of inputs.
    ConcatConv,
}

impl std::str::FromStr for Fusion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Fusion::Max),
            "avg" | "average" => Ok(Fusion::Average),
            "conv" | "concat_conv" => Ok(Fusion::ConcatConv),
            other => Err(Error::InvalidArgument(format!(
                "unknown fusion {other:?} (expected max, avg or conv)"
            ))),
        }
    }
}

impl std::fmt::Display for Fusion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Fusion::Max => "max",
            Fusion::Average => "avg",
            Fusion::ConcatConv => "conv",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Light directions are part of the input (6 channels instead of 3).
    pub calibrated: bool,
    /// Multiplier on every hidden channel count.
    pub width_scale: f64,
    pub fusion: Fusion,
    /// Number of inputs accepted by [`Fusion::ConcatConv`].
    pub concat_capacity: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            calibrated: true,
            width_scale: 1.0,
            fusion: Fusion::Max,
            concat_capacity: 1,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.width_scale > 0.0 && self.width_scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "width_scale must be positive, got {}",
                self.width_scale
            )));
        }
        if self.fusion == Fusion::ConcatConv && self.concat_capacity == 0 {
            return Err(Error::InvalidArgument(
                "concat_capacity must be ≥ 1 for conv fusion".into(),
            ));
        }
        Ok(())
    }

    pub fn input_channels(&self) -> usize {
        if self.calibrated {
            6
        } else {
            3
        }
    }

    fn width(&self, base: usize) -> usize {
        ((base as f64 * self.width_scale).round() as usize).max(1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Deconv,
}

#[derive(Clone, Debug)]
pub struct Layer {
    pub name: String,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub activation: bool,
    weight: usize,
    bias: Option<usize>,
}

impl Layer {
    /// Position of this layer's kernel in [`Network::params`].
    pub fn weight_index(&self) -> usize {
        self.weight
    }

    pub fn bias_index(&self) -> Option<usize> {
        self.bias
    }

    fn weight_shape(&self) -> Shape {
        match self.kind {
            LayerKind::Conv => Shape::new(self.out_channels, self.in_channels, self.kernel, self.kernel),
            LayerKind::Deconv => Shape::new(self.in_channels, self.out_channels, self.kernel, self.kernel),
        }
    }

    fn fan_in(&self) -> usize {
        let taps = self.kernel * self.kernel;
        match self.kind {
            LayerKind::Conv => self.in_channels * taps,
            // Each output pixel of a stride-s transposed conv sees k²/s² taps per channel.
            LayerKind::Deconv => (self.in_channels * taps / (self.stride * self.stride)).max(1),
        }
    }
}

struct LayerSpec {
    name: &'static str,
    kind: LayerKind,
    out: usize,
    stride: usize,
    activation: bool,
}

const fn conv(name: &'static str, out: usize, stride: usize) -> LayerSpec {
    LayerSpec {
        name,
        kind: LayerKind::Conv,
        out,
        stride,
        activation: true,
    }
}

const fn deconv(name: &'static str, out: usize) -> LayerSpec {
    LayerSpec {
        name,
        kind: LayerKind::Deconv,
        out,
        stride: 2,
        activation: true,
    }
}

/// Extractor: 7 layers, down-sampled twice and up-sampled once.
const EXTRACTOR: [LayerSpec; 7] = [
    conv("conv1", 64, 1),
    conv("conv2", 128, 2),
    conv("conv3", 128, 1),
    conv("conv4", 256, 2),
    conv("conv5", 256, 1),
    deconv("conv6", 128),
    conv("conv7", 128, 1),
];

/// Regressor: 4 layers, up-sampled once back to input resolution.
const REGRESSOR: [LayerSpec; 4] = [
    conv("conv1", 128, 1),
    conv("conv2", 128, 1),
    deconv("conv3", 64),
    LayerSpec {
        name: "conv4",
        kind: LayerKind::Conv,
        out: 3,
        stride: 1,
        activation: false,
    },
];

/// Input for one forward pass. `lights` is required by calibrated networks
/// and ignored by uncalibrated ones.
#[derive(Clone, Copy, Debug)]
pub struct Observations<'a> {
    pub images: &'a [Image],
    pub lights: Option<&'a [Vec3]>,
}

#[derive(Clone, Debug)]
pub struct Network {
    config: NetConfig,
    seed: u64,
    extractor: Vec<Layer>,
    fusion_layer: Option<Layer>,
    regressor: Vec<Layer>,
    params: Vec<NamedTensor>,
}

/// Builds a freshly initialized network. Weights are drawn from a
/// fan-in-scaled uniform distribution seeded by `seed`; biases start at zero.
pub fn build_psfcn(config: &NetConfig, seed: u64) -> Result<Network> {
    config.validate()?;
    let mut params = Vec::new();
    let (extractor, feat_ch) =
        make_layers(config, "extractor", &EXTRACTOR, config.input_channels(), &mut params);
    let fusion_layer = (config.fusion == Fusion::ConcatConv).then(|| {
        let mut layer = Layer {
            name: "fusion.conv".into(),
            kind: LayerKind::Conv,
            in_channels: feat_ch * config.concat_capacity,
            out_channels: feat_ch,
            kernel: 1,
            stride: 1,
            pad: 0,
            activation: true,
            weight: 0,
            bias: None,
        };
        push_params(&mut layer, &mut params);
        layer
    });
    let (regressor, _) = make_layers(config, "regressor", &REGRESSOR, feat_ch, &mut params);

    let mut net = Network {
        config: config.clone(),
        seed,
        extractor,
        fusion_layer,
        regressor,
        params,
    };
    net.initialize(seed);
    Ok(net)
}

fn make_layers(
    config: &NetConfig,
    prefix: &str,
    specs: &[LayerSpec],
    mut in_ch: usize,
    params: &mut Vec<NamedTensor>,
) -> (Vec<Layer>, usize) {
    let mut layers = Vec::new();
    for spec in specs {
        let out = if spec.activation {
            config.width(spec.out)
        } else {
            spec.out
        };
        let (kernel, pad) = match spec.kind {
            LayerKind::Conv => (3, 1),
            LayerKind::Deconv => (4, 1),
        };
        let mut layer = Layer {
            name: format!("{prefix}.{}", spec.name),
            kind: spec.kind,
            in_channels: in_ch,
            out_channels: out,
            kernel,
            stride: spec.stride,
            pad,
            activation: spec.activation,
            weight: 0,
            bias: None,
        };
        push_params(&mut layer, params);
        in_ch = out;
        layers.push(layer);
    }
    (layers, in_ch)
}

fn push_params(layer: &mut Layer, params: &mut Vec<NamedTensor>) {
    layer.weight = params.len();
    params.push(NamedTensor {
        name: format!("{}.weight", layer.name),
        tensor: Tensor::zeros(layer.weight_shape()),
    });
    if layer.kind == LayerKind::Conv {
        layer.bias = Some(params.len());
        params.push(NamedTensor {
            name: format!("{}.bias", layer.name),
            tensor: Tensor::zeros(Shape::new(1, layer.out_channels, 1, 1)),
        });
    }
}

fn divisible_by_four(h: usize, w: usize) -> Result<()> {
    if h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
        return Err(Error::InvalidArgument(format!(
            "image size {h}×{w} must be a positive multiple of 4 in both dimensions"
        )));
    }
    Ok(())
}

/// Tiles a unit light direction into three constant planes after the image
/// channels: 3×h×w image → 1×6×h×w tensor.
pub fn concat_light(image: &Image, light: Vec3) -> Result<Tensor> {
    check_unit_light(light).map_err(Error::InvalidArgument)?;
    let plane = image.plane_len();
    let mut data = Vec::with_capacity(6 * plane);
    data.extend_from_slice(&image.data);
    for c in light {
        data.extend(std::iter::repeat(c).take(plane));
    }
    Tensor::new(Shape::new(1, 6, image.height, image.width), data)
}

impl Network {
    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn extractor(&self) -> &[Layer] {
        &self.extractor
    }

    pub fn fusion_layer(&self) -> Option<&Layer> {
        self.fusion_layer.as_ref()
    }

    pub fn regressor(&self) -> &[Layer] {
        &self.regressor
    }

    pub fn params(&self) -> &[NamedTensor] {
        &self.params
    }

    pub fn param_tensors(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.tensor.clone()).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Replaces all parameter values; shapes must match the current ones.
    pub fn set_param_tensors(&mut self, tensors: Vec<Tensor>) -> Result<()> {
        if tensors.len() != self.params.len() {
            return Err(Error::shape(
                "set_param_tensors",
                format!("{} tensors for {} parameters", tensors.len(), self.params.len()),
            ));
        }
        for (p, t) in self.params.iter().zip(&tensors) {
            if p.tensor.shape() != t.shape() {
                return Err(Error::shape(
                    "set_param_tensors",
                    format!("{} is {}, got {}", p.name, p.tensor.shape(), t.shape()),
                ));
            }
        }
        for (p, t) in self.params.iter_mut().zip(tensors) {
            p.tensor = t;
        }
        Ok(())
    }

    fn initialize(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers: Vec<Layer> = self
            .extractor
            .iter()
            .chain(&self.fusion_layer)
            .chain(&self.regressor)
            .cloned()
            .collect();
        for layer in layers {
            let gain = 2.0 / (1.0 + (LEAKY_SLOPE as f64).powi(2));
            let bound = (3.0 * gain / layer.fan_in() as f64).sqrt() as f32;
            let shape = layer.weight_shape();
            let data = (0..shape.numel())
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            self.params[layer.weight].tensor = Tensor::new(shape, data).expect("weight shape");
        }
    }

    fn layer_param(&self, idx: usize) -> &Tensor {
        &self.params[idx].tensor
    }

    fn apply_layer(&self, layer: &Layer, x: &Tensor) -> Result<Tensor> {
        let w = self.layer_param(layer.weight);
        let y = match layer.kind {
            LayerKind::Conv => ops::conv2d(
                x,
                w,
                layer.bias.map(|b| self.layer_param(b)),
                layer.stride,
                layer.pad,
            )?,
            LayerKind::Deconv => ops::deconv2d(x, w, layer.stride, layer.pad)?,
        };
        if layer.activation {
            ops::leaky_relu(&y, LEAKY_SLOPE)
        } else {
            Ok(y)
        }
    }

    fn apply_layer_tape(&self, tape: &mut Tape, vars: &[Var], layer: &Layer, x: Var) -> Result<Var> {
        let w = vars[layer.weight];
        let y = match layer.kind {
            LayerKind::Conv => {
                tape.conv2d(x, w, layer.bias.map(|b| vars[b]), layer.stride, layer.pad)?
            }
            LayerKind::Deconv => tape.deconv2d(x, w, layer.stride, layer.pad)?,
        };
        if layer.activation {
            tape.leaky_relu(y, LEAKY_SLOPE)
        } else {
            Ok(y)
        }
    }

    /// Validates `obs` and returns (q, h, w).
    fn check_observations(&self, obs: &Observations) -> Result<(usize, usize, usize)> {
        let q = obs.images.len();
        if q == 0 {
            return Err(Error::InvalidArgument(
                "at least one image is required".into(),
            ));
        }
        let (h, w) = (obs.images[0].height, obs.images[0].width);
        if obs.images.iter().any(|im| im.height != h || im.width != w) {
            return Err(Error::InvalidArgument("mixed image sizes".into()));
        }
        divisible_by_four(h, w)?;
        if self.config.calibrated {
            match obs.lights {
                Some(l) if l.len() == q => {}
                Some(l) => {
                    return Err(Error::InvalidArgument(format!(
                        "{q} images but {} light directions",
                        l.len()
                    )))
                }
                None => {
                    return Err(Error::InvalidArgument(
                        "calibrated network needs light directions".into(),
                    ))
                }
            }
        }
        if self.config.fusion == Fusion::ConcatConv && q != self.config.concat_capacity {
            return Err(Error::FixedCapacity {
                expected: self.config.concat_capacity,
                got: q,
            });
        }
        Ok((q, h, w))
    }

    fn input_tensor(&self, obs: &Observations, i: usize) -> Result<Tensor> {
        match (self.config.calibrated, obs.lights) {
            (true, Some(lights)) => concat_light(&obs.images[i], lights[i]),
            _ => Ok(obs.images[i].to_tensor()),
        }
    }

    fn extract(&self, x: &Tensor) -> Result<Tensor> {
        let mut x = x.clone();
        for layer in &self.extractor {
            x = self.apply_layer(layer, &x)?;
        }
        Ok(x)
    }

    /// Fused feature map for `obs` (1×C×h/2×w/2).
    pub fn fused_features(&self, obs: &Observations) -> Result<Tensor> {
        let (q, _, _) = self.check_observations(obs)?;
        let first = self.extract(&self.input_tensor(obs, 0)?)?;
        match self.config.fusion {
            Fusion::Max => {
                let mut acc = MaxAccumulator::new(&first);
                for i in 1..q {
                    acc.push(&self.extract(&self.input_tensor(obs, i)?)?)?;
                }
                Ok(acc.finish().0)
            }
            Fusion::Average => {
                let mut acc = MeanAccumulator::new(&first);
                for i in 1..q {
                    acc.push(&self.extract(&self.input_tensor(obs, i)?)?)?;
                }
                Ok(acc.finish())
            }
            Fusion::ConcatConv => {
                let mut feats = vec![first];
                for i in 1..q {
                    feats.push(self.extract(&self.input_tensor(obs, i)?)?);
                }
                let cat = ops::concat_channels(&feats)?;
                let layer = self.fusion_layer.as_ref().expect("conv fusion layer");
                self.apply_layer(layer, &cat)
            }
        }
    }

    /// Unit normals (1×3×h×w) for one observation set.
    pub fn forward(&self, obs: &Observations) -> Result<Tensor> {
        let mut x = self.fused_features(obs)?;
        for layer in &self.regressor {
            x = self.apply_layer(layer, &x)?;
        }
        ops::l2_normalize_channels(&x)
    }

    /// Normal map for `obs`, with background pixels zeroed.
    pub fn predict(&self, obs: &Observations, mask: &[bool]) -> Result<NormalMap> {
        let out = self.forward(obs)?;
        if mask.len() != out.shape().plane_len() {
            return Err(Error::InvalidArgument(format!(
                "mask has {} entries for a {}×{} image",
                mask.len(),
                out.shape().h(),
                out.shape().w()
            )));
        }
        NormalMap::from_tensor(&out, 0, mask.to_vec())
    }

    /// Registers every parameter on `tape`, in [`Network::params`] order.
    pub fn params_on_tape(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(p.tensor.clone())).collect()
    }

    /// Recorded forward pass over a batch of observation sets of equal size.
    /// Returns an N×3×h×w variable of unit normals.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        param_vars: &[Var],
        batch: &[Observations],
    ) -> Result<Var> {
        if param_vars.len() != self.params.len() {
            return Err(Error::shape(
                "forward_on_tape",
                format!("{} variables for {} parameters", param_vars.len(), self.params.len()),
            ));
        }
        let mut fused = Vec::with_capacity(batch.len());
        let mut size = None;
        for obs in batch {
            let (q, h, w) = self.check_observations(obs)?;
            if *size.get_or_insert((h, w)) != (h, w) {
                return Err(Error::InvalidArgument("mixed image sizes in batch".into()));
            }
            let inputs: Vec<Tensor> = (0..q)
                .map(|i| self.input_tensor(obs, i))
                .collect::<Result<_>>()?;
            let mut x = tape.leaf(ops::concat_batch(&inputs)?);
            for layer in &self.extractor {
                x = self.apply_layer_tape(tape, param_vars, layer, x)?;
            }
            let feats: Vec<Var> = (0..q)
                .map(|i| tape.batch_item(x, i))
                .collect::<Result<_>>()?;
            let f = match self.config.fusion {
                Fusion::Max => tape.max_fuse(&feats)?,
                Fusion::Average => tape.avg_fuse(&feats)?,
                Fusion::ConcatConv => {
                    let cat = tape.concat_channels(&feats)?;
                    let layer = self.fusion_layer.as_ref().expect("conv fusion layer");
                    self.apply_layer_tape(tape, param_vars, layer, cat)?
                }
            };
            fused.push(f);
        }
        let mut x = if fused.len() == 1 {
            fused[0]
        } else {
            tape.concat_batch(&fused)?
        };
        for layer in &self.regressor {
            x = self.apply_layer_tape(tape, param_vars, layer, x)?;
        }
        tape.l2_normalize_channels(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quarter() -> NetConfig {
        NetConfig {
            width_scale: 0.25,
            ..NetConfig::default()
        }
    }

    fn image(seed: usize, h: usize, w: usize) -> Image {
        Image {
            height: h,
            width: w,
            data: (0..3 * h * w)
                .map(|i| (((i + 7 * seed) * 2654435761usize % 1000) as f32) / 1000.0)
                .collect(),
        }
    }

    fn lights(q: usize) -> Vec<Vec3> {
        (0..q)
            .map(|i| {
                let a = i as f32 * 0.7;
                crate::geometry::normalize([0.4 * a.cos(), 0.4 * a.sin(), 1.0])
            })
            .collect()
    }

    #[test]
    fn layer_counts_and_strides() {
        let net = build_psfcn(&NetConfig::default(), 0).unwrap();
        assert_eq!(net.extractor().len(), 7);
        assert_eq!(net.regressor().len(), 4);
        let down = net.extractor().iter().filter(|l| l.kind == LayerKind::Conv && l.stride == 2).count();
        let up = net.extractor().iter().filter(|l| l.kind == LayerKind::Deconv).count();
        assert_eq!((down, up), (2, 1));
        assert_eq!(net.regressor().last().unwrap().out_channels, 3);
        assert!(!net.regressor().last().unwrap().activation);
    }

    #[test]
    fn full_width_parameter_count() {
        let n = build_psfcn(&NetConfig::default(), 0).unwrap().parameter_count();
        assert_eq!(n, 2_210_051);
    }

    #[test]
    fn quarter_width_is_about_a_sixteenth() {
        let full = build_psfcn(&NetConfig::default(), 0).unwrap().parameter_count() as f64;
        let q = build_psfcn(&quarter(), 0).unwrap().parameter_count() as f64;
        let ratio = q / (full / 16.0);
        assert!((0.8..=1.2).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn same_seed_same_weights() {
        let a = build_psfcn(&quarter(), 42).unwrap();
        let b = build_psfcn(&quarter(), 42).unwrap();
        let c = build_psfcn(&quarter(), 43).unwrap();
        assert!(a.params().iter().zip(b.params()).all(|(x, y)| x.tensor.bit_eq(&y.tensor)));
        assert!(!a.params()[0].tensor.bit_eq(&c.params()[0].tensor));
    }

    #[test]
    fn concat_light_planes() {
        let img = image(1, 4, 4);
        let t = concat_light(&img, [0.0, 0.0, 1.0]).unwrap();
        assert_eq!(t.shape(), Shape::new(1, 6, 4, 4));
        assert_eq!(&t.data()[..48], &img.data[..]);
        assert!(t.data()[48..80].iter().all(|&v| v == 0.0));
        assert!(t.data()[80..].iter().all(|&v| v == 1.0));
        assert!(concat_light(&img, [0.0, 0.0, 1.1]).is_err());
    }

    #[test]
    fn output_matches_input_size_and_is_unit() {
        let net = build_psfcn(&quarter(), 1).unwrap();
        let imgs: Vec<Image> = (0..3).map(|i| image(i, 8, 12)).collect();
        let l = lights(3);
        let out = net
            .forward(&Observations { images: &imgs, lights: Some(&l) })
            .unwrap();
        assert_eq!(out.shape(), Shape::new(1, 3, 8, 12));
        let p = 96;
        for i in 0..p {
            let n = crate::geometry::norm([out.data()[i], out.data()[p + i], out.data()[2 * p + i]]);
            assert!((n - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn input_validation() {
        let net = build_psfcn(&quarter(), 1).unwrap();
        let l = lights(2);
        let none: Vec<Image> = vec![];
        assert!(net.forward(&Observations { images: &none, lights: Some(&l[..0]) }).is_err());
        let mixed = vec![image(0, 8, 8), image(1, 8, 12)];
        assert!(net.forward(&Observations { images: &mixed, lights: Some(&l) }).is_err());
        let odd = vec![image(0, 6, 8), image(1, 6, 8)];
        assert!(net.forward(&Observations { images: &odd, lights: Some(&l) }).is_err());
        let ok = vec![image(0, 8, 8), image(1, 8, 8)];
        assert!(net.forward(&Observations { images: &ok, lights: None }).is_err());
    }

    #[test]
    fn conv_fusion_has_fixed_capacity() {
        let cfg = NetConfig {
            fusion: Fusion::ConcatConv,
            concat_capacity: 2,
            ..quarter()
        };
        let net = build_psfcn(&cfg, 0).unwrap();
        let imgs: Vec<Image> = (0..3).map(|i| image(i, 8, 8)).collect();
        let l = lights(3);
        let err = net
            .forward(&Observations { images: &imgs, lights: Some(&l) })
            .unwrap_err();
        assert!(err.to_string().contains("fixed-capacity fusion"), "{err}");
        assert!(net
            .forward(&Observations { images: &imgs[..2], lights: Some(&l[..2]) })
            .is_ok());
    }

    #[test]
    fn tape_and_streaming_paths_agree_bitwise() {
        for fusion in [Fusion::Max, Fusion::Average] {
            let net = build_psfcn(&NetConfig { fusion, ..quarter() }, 5).unwrap();
            let imgs: Vec<Image> = (0..4).map(|i| image(i, 8, 8)).collect();
            let l = lights(4);
            let obs = Observations { images: &imgs, lights: Some(&l) };
            let eager = net.forward(&obs).unwrap();
            let mut tape = Tape::new();
            let vars = net.params_on_tape(&mut tape);
            let out = net.forward_on_tape(&mut tape, &vars, &[obs]).unwrap();
            assert!(tape.value(out).unwrap().bit_eq(&eager), "{fusion}");
        }
    }

    #[test]
    fn uncalibrated_uses_three_channels() {
        let cfg = NetConfig { calibrated: false, ..quarter() };
        let net = build_psfcn(&cfg, 0).unwrap();
        assert_eq!(net.extractor()[0].in_channels, 3);
        let imgs: Vec<Image> = (0..2).map(|i| image(i, 8, 8)).collect();
        assert!(net.forward(&Observations { images: &imgs, lights: None }).is_ok());
    }
}
