//! A small inference engine for VGG-style networks: 3x3 same-padding
//! convolutions with ReLU, 2x2 max pooling, dense layers and a softmax head.
//!
//! Weights and activations are `f32`; every dot product accumulates in `f64`.
//! Collected activations are handed to the analysis code as `f64`.

use std::collections::HashSet;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activations::{ActivationError, LayerActivations};
use crate::augment::{Image, CHANNELS};
use crate::rng;

/// Default probability the seed image and its augmentations must exceed.
pub const DEFAULT_CONFIDENCE: f64 = 0.99;

const KERNEL: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForwardError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("weights do not match the network: {0}")]
    WeightMismatch(String),
    #[error("image {index} is {got_h}x{got_w}, network expects {want_h}x{want_w}")]
    ImageShape { index: usize, got_h: usize, got_w: usize, want_h: usize, want_w: usize },
    #[error("unknown layer '{0}'")]
    UnknownLayer(String),
    #[error("network has no softmax head")]
    MissingSoftmax,
    #[error("class index {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error("confidence threshold must lie in [0, 1) (got {0})")]
    InvalidThreshold(f64),
    #[error("seed image rejected: P(class {class}) = {probability:.6} does not exceed {threshold}")]
    SeedRejected { class: usize, probability: f64, threshold: f64 },
    #[error("no images to evaluate")]
    NoImages,
    #[error(transparent)]
    Activation(#[from] ActivationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerKind {
    /// 3x3 kernel, stride 1, padding 1, followed by ReLU.
    Conv { filters: usize },
    /// 2x2 window, stride 2.
    Maxpool,
    Dense {
        units: usize,
        #[serde(default = "default_true")]
        relu: bool,
    },
    Softmax,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
}

/// Output extent of a layer, `channels x height x width`. Flat layers use
/// `channels = 1, height = units, width = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn size(&self) -> usize {
        self.channels * self.height * self.width
    }

    fn flat(units: usize) -> Self {
        Self { channels: 1, height: units, width: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub input: InputShape,
    pub layers: Vec<LayerSpec>,
}

fn conv(name: &str, filters: usize) -> LayerSpec {
    LayerSpec { name: name.into(), kind: LayerKind::Conv { filters } }
}

fn pool(name: &str) -> LayerSpec {
    LayerSpec { name: name.into(), kind: LayerKind::Maxpool }
}

fn dense(name: &str, units: usize, relu: bool) -> LayerSpec {
    LayerSpec { name: name.into(), kind: LayerKind::Dense { units, relu } }
}

impl NetworkSpec {
    /// VGG19 with one name per layer: `conv1_1` … `conv5_4`,
    /// `maxpooling1` … `maxpooling5`, `fc6`, `fc7`, `fc8` and a `prob` head.
    pub fn vgg19() -> Self {
        let mut layers = Vec::new();
        for (block, (convs, filters)) in [(2, 64), (2, 128), (4, 256), (4, 512), (4, 512)]
            .into_iter()
            .enumerate()
        {
            for i in 1..=convs {
                layers.push(conv(&format!("conv{}_{i}", block + 1), filters));
            }
            layers.push(pool(&format!("maxpooling{}", block + 1)));
        }
        layers.push(dense("fc6", 4096, true));
        layers.push(dense("fc7", 4096, true));
        layers.push(dense("fc8", 1000, false));
        layers.push(LayerSpec { name: "prob".into(), kind: LayerKind::Softmax });
        Self {
            name: Some("vgg19".into()),
            input: InputShape { height: 224, width: 224, channels: 3 },
            layers,
        }
    }

    /// Three convolutions and two dense layers on a 16x16 RGB input.
    pub fn tiny() -> Self {
        Self {
            name: Some("tiny".into()),
            input: InputShape { height: 16, width: 16, channels: 3 },
            layers: vec![
                conv("conv1", 8),
                pool("pool1"),
                conv("conv2", 16),
                conv("conv3", 16),
                pool("pool2"),
                dense("fc1", 64, true),
                dense("fc2", 10, false),
                LayerSpec { name: "prob".into(), kind: LayerKind::Softmax },
            ],
        }
    }

    /// Output shape of every layer, validating the chain.
    pub fn shapes(&self) -> Result<Vec<Shape>, ForwardError> {
        let bad = |msg: String| Err(ForwardError::InvalidSpec(msg));
        let InputShape { height, width, channels } = self.input;
        if height == 0 || width == 0 || channels == 0 {
            return bad("input extents must be positive".into());
        }
        if self.layers.is_empty() {
            return bad("network has no layers".into());
        }
        let mut names = HashSet::new();
        let mut shape = Shape { channels, height, width };
        let mut flat = false;
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.name.is_empty() || !names.insert(layer.name.as_str()) {
                return bad(format!("layer {i}: name '{}' is empty or repeated", layer.name));
            }
            shape = match layer.kind {
                LayerKind::Conv { filters } => {
                    if flat {
                        return bad(format!("{}: convolution after a flat layer", layer.name));
                    }
                    if filters == 0 {
                        return bad(format!("{}: zero filters", layer.name));
                    }
                    Shape { channels: filters, ..shape }
                }
                LayerKind::Maxpool => {
                    if flat || shape.height < 2 || shape.width < 2 {
                        return bad(format!("{}: nothing to pool", layer.name));
                    }
                    Shape { height: shape.height / 2, width: shape.width / 2, ..shape }
                }
                LayerKind::Dense { units, .. } => {
                    if units == 0 {
                        return bad(format!("{}: zero units", layer.name));
                    }
                    flat = true;
                    Shape::flat(units)
                }
                LayerKind::Softmax => {
                    if i + 1 != self.layers.len() {
                        return bad(format!("{}: softmax must be the last layer", layer.name));
                    }
                    flat = true;
                    Shape::flat(shape.size())
                }
            };
            shapes.push(shape);
        }
        Ok(shapes)
    }

    pub fn has_softmax(&self) -> bool {
        matches!(self.layers.last(), Some(LayerSpec { kind: LayerKind::Softmax, .. }))
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    pub fn from_json(text: &str) -> Result<Self, ForwardError> {
        let spec: Self = serde_json::from_str(text).map_err(|e| ForwardError::InvalidSpec(e.to_string()))?;
        spec.shapes()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("network spec serializes")
    }
}

/// Parameters of one layer.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerWeights {
    /// `kernel[f][in][ky][kx]`, one bias per filter.
    Conv { kernel: Vec<f32>, bias: Vec<f32> },
    /// `matrix[unit][input]`, one bias per unit.
    Dense { matrix: Vec<f32>, bias: Vec<f32> },
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub layers: Vec<LayerWeights>,
}

impl Weights {
    pub fn zeros(net: &NetworkSpec) -> Result<Self, ForwardError> {
        Self::build(net, |_, len, _| vec![0.0; len], |len| vec![0.0; len])
    }

    fn build(
        net: &NetworkSpec,
        mut kernel: impl FnMut(usize, usize, usize) -> Vec<f32>,
        mut bias: impl FnMut(usize) -> Vec<f32>,
    ) -> Result<Self, ForwardError> {
        let shapes = net.shapes()?;
        let mut in_shape = Shape { channels: net.input.channels, height: net.input.height, width: net.input.width };
        let mut layers = Vec::with_capacity(shapes.len());
        for (i, (layer, out)) in net.layers.iter().zip(&shapes).enumerate() {
            layers.push(match layer.kind {
                LayerKind::Conv { filters } => {
                    let fan_in = in_shape.channels * KERNEL * KERNEL;
                    LayerWeights::Conv { kernel: kernel(i, filters * fan_in, fan_in), bias: bias(filters) }
                }
                LayerKind::Dense { units, .. } => {
                    let fan_in = in_shape.size();
                    LayerWeights::Dense { matrix: kernel(i, units * fan_in, fan_in), bias: bias(units) }
                }
                _ => LayerWeights::None,
            });
            in_shape = *out;
        }
        Ok(Self { layers })
    }

    /// Checks every tensor against the shapes `net` implies.
    pub fn validate(&self, net: &NetworkSpec) -> Result<(), ForwardError> {
        let expected = Self::zeros(net)?;
        if expected.layers.len() != self.layers.len() {
            return Err(ForwardError::WeightMismatch(format!(
                "{} layer entries for {} layers",
                self.layers.len(),
                expected.layers.len()
            )));
        }
        for ((got, want), spec) in self.layers.iter().zip(&expected.layers).zip(&net.layers) {
            let ok = match (got, want) {
                (LayerWeights::Conv { kernel: a, bias: b }, LayerWeights::Conv { kernel: c, bias: d })
                | (LayerWeights::Dense { matrix: a, bias: b }, LayerWeights::Dense { matrix: c, bias: d }) => {
                    a.len() == c.len()
                        && b.len() == d.len()
                        && a.iter().chain(b).all(|v| v.is_finite())
                }
                (LayerWeights::None, LayerWeights::None) => true,
                _ => false,
            };
            if !ok {
                return Err(ForwardError::WeightMismatch(format!("layer '{}'", spec.name)));
            }
        }
        Ok(())
    }
}

/// Deterministic Gaussian weights with fan-in scaling: `2/fan_in` variance
/// ahead of a ReLU, `1/fan_in` for linear outputs. Biases are zero.
pub fn seeded_random_weights(net: &NetworkSpec, seed: u64) -> Result<Weights, ForwardError> {
    Weights::build(
        net,
        |i, len, fan_in| {
            let gain = match net.layers[i].kind {
                LayerKind::Dense { relu: false, .. } => 1.0,
                _ => 2.0,
            };
            let std = (gain / fan_in as f64).sqrt();
            let mut r = rng::substream(seed, i as u64);
            (0..len).map(|_| (std * r.sample::<f64, _>(StandardNormal)) as f32).collect()
        },
        |len| vec![0.0; len],
    )
}

/// Same-padding 3x3 convolution, stride 1, no activation.
/// `input` is planar `[channel][row][col]`.
pub fn conv3x3(input: &[f32], shape: Shape, kernel: &[f32], bias: Option<&[f32]>, filters: usize) -> Vec<f32> {
    let Shape { channels, height: h, width: w } = shape;
    let mut out = vec![0.0f32; filters * h * w];
    let mut acc = vec![0.0f64; h * w];
    for f in 0..filters {
        acc.iter_mut().for_each(|a| *a = bias.map_or(0.0, |b| f64::from(b[f])));
        for c in 0..channels {
            let plane = &input[c * h * w..(c + 1) * h * w];
            let k = &kernel[(f * channels + c) * 9..(f * channels + c + 1) * 9];
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let weight = f64::from(k[ky * KERNEL + kx]);
                    if weight == 0.0 {
                        continue;
                    }
                    // output (y, x) reads input (y + ky - 1, x + kx - 1)
                    let y_lo = 1usize.saturating_sub(ky);
                    let y_hi = (h + 1 - ky).min(h);
                    let x_lo = 1usize.saturating_sub(kx);
                    let x_hi = (w + 1 - kx).min(w);
                    for y in y_lo..y_hi {
                        let src_row = &plane[(y + ky - 1) * w..(y + ky) * w];
                        let dst_row = &mut acc[y * w..(y + 1) * w];
                        for x in x_lo..x_hi {
                            dst_row[x] += weight * f64::from(src_row[x + kx - 1]);
                        }
                    }
                }
            }
        }
        for (o, a) in out[f * h * w..(f + 1) * h * w].iter_mut().zip(&acc) {
            *o = *a as f32;
        }
    }
    out
}

pub fn relu(values: &mut [f32]) {
    values.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// 2x2 max pooling with stride 2 (odd trailing rows/columns are dropped).
pub fn maxpool2x2(input: &[f32], shape: Shape) -> Vec<f32> {
    let Shape { channels, height: h, width: w } = shape;
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(channels * oh * ow);
    for c in 0..channels {
        let plane = &input[c * h * w..(c + 1) * h * w];
        for y in 0..oh {
            for x in 0..ow {
                let a = plane[2 * y * w + 2 * x];
                let b = plane[2 * y * w + 2 * x + 1];
                let cc = plane[(2 * y + 1) * w + 2 * x];
                let d = plane[(2 * y + 1) * w + 2 * x + 1];
                out.push(a.max(b).max(cc.max(d)));
            }
        }
    }
    out
}

fn dense_forward(input: &[f32], matrix: &[f32], bias: &[f32]) -> Vec<f64> {
    matrix
        .chunks_exact(input.len())
        .zip(bias)
        .map(|(row, b)| {
            row.iter()
                .zip(input)
                .fold(f64::from(*b), |acc, (w, x)| acc + f64::from(*w) * f64::from(*x))
        })
        .collect()
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Result of one forward pass: selected layer outputs plus the softmax
/// probabilities when the network has a head.
struct Pass {
    outputs: Vec<Vec<f32>>,
    probabilities: Option<Vec<f64>>,
}

fn run(net: &NetworkSpec, shapes: &[Shape], w: &Weights, img: &Image, keep: &[bool]) -> Pass {
    let mut state = img.to_planar();
    let mut shape = Shape { channels: CHANNELS, height: img.height(), width: img.width() };
    let mut outputs = Vec::new();
    let mut probabilities = None;
    for (i, layer) in net.layers.iter().enumerate() {
        match (&layer.kind, &w.layers[i]) {
            (LayerKind::Conv { filters }, LayerWeights::Conv { kernel, bias }) => {
                state = conv3x3(&state, shape, kernel, Some(bias), *filters);
                relu(&mut state);
            }
            (LayerKind::Maxpool, _) => state = maxpool2x2(&state, shape),
            (LayerKind::Dense { relu: apply_relu, .. }, LayerWeights::Dense { matrix, bias }) => {
                let mut v = dense_forward(&state, matrix, bias);
                if *apply_relu {
                    v.iter_mut().for_each(|x| *x = x.max(0.0));
                }
                state = v.into_iter().map(|x| x as f32).collect();
            }
            (LayerKind::Softmax, _) => {
                let logits: Vec<f64> = state.iter().map(|&x| f64::from(x)).collect();
                let p = softmax(&logits);
                state = p.iter().map(|&x| x as f32).collect();
                probabilities = Some(p);
            }
            _ => unreachable!("weights validated against the network"),
        }
        shape = shapes[i];
        if keep[i] {
            outputs.push(state.clone());
        }
    }
    Pass { outputs, probabilities }
}

fn check_inputs(net: &NetworkSpec, w: &Weights, imgs: &[Image]) -> Result<Vec<Shape>, ForwardError> {
    let shapes = net.shapes()?;
    w.validate(net)?;
    if net.input.channels != CHANNELS {
        return Err(ForwardError::InvalidSpec(format!(
            "input must have {CHANNELS} channels to take RGB images"
        )));
    }
    if imgs.is_empty() {
        return Err(ForwardError::NoImages);
    }
    for (index, img) in imgs.iter().enumerate() {
        if img.height() != net.input.height || img.width() != net.input.width {
            return Err(ForwardError::ImageShape {
                index,
                got_h: img.height(),
                got_w: img.width(),
                want_h: net.input.height,
                want_w: net.input.width,
            });
        }
    }
    Ok(shapes)
}

/// Runs every image through the network and returns the activations of the
/// named layers, in network order. Conv and dense outputs are taken after
/// their ReLU.
pub fn forward_collect(
    net: &NetworkSpec,
    w: &Weights,
    imgs: &[Image],
    layers: &[String],
) -> Result<Vec<LayerActivations>, ForwardError> {
    let shapes = check_inputs(net, w, imgs)?;
    let mut keep = vec![false; net.layers.len()];
    for name in layers {
        let i = net.layer_index(name).ok_or_else(|| ForwardError::UnknownLayer(name.clone()))?;
        keep[i] = true;
    }
    let passes: Vec<Vec<Vec<f32>>> = imgs
        .par_iter()
        .map(|img| run(net, &shapes, w, img, &keep).outputs)
        .collect();

    let n = imgs.len();
    let mut collected = Vec::new();
    for (slot, i) in keep.iter().enumerate().filter(|(_, k)| **k).map(|(i, _)| i).enumerate() {
        let s = shapes[i];
        let mut data = Vec::with_capacity(n * s.size());
        for pass in &passes {
            data.extend(pass[slot].iter().map(|&v| f64::from(v)));
        }
        collected.push(LayerActivations::new(
            net.layers[i].name.clone(),
            n,
            s.channels,
            s.height,
            s.width,
            data,
        )?);
    }
    Ok(collected)
}

/// Class probabilities of one image.
pub fn classify(net: &NetworkSpec, w: &Weights, img: &Image) -> Result<Vec<f64>, ForwardError> {
    if !net.has_softmax() {
        return Err(ForwardError::MissingSoftmax);
    }
    let shapes = check_inputs(net, w, std::slice::from_ref(img))?;
    let keep = vec![false; net.layers.len()];
    Ok(run(net, &shapes, w, img, &keep).probabilities.expect("softmax head present"))
}

/// Per-sample probabilities for a cluster, with the class and threshold the
/// confidence filter applies.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterProbabilities {
    pub probabilities: Vec<Vec<f64>>,
    pub class_index: usize,
    pub threshold: f64,
}

impl ClusterProbabilities {
    pub fn compute(
        net: &NetworkSpec,
        w: &Weights,
        imgs: &[Image],
        class_index: Option<usize>,
        threshold: f64,
    ) -> Result<Self, ForwardError> {
        if !(0.0..1.0).contains(&threshold) {
            return Err(ForwardError::InvalidThreshold(threshold));
        }
        if !net.has_softmax() {
            return Err(ForwardError::MissingSoftmax);
        }
        let shapes = check_inputs(net, w, imgs)?;
        let keep = vec![false; net.layers.len()];
        let probabilities: Vec<Vec<f64>> = imgs
            .par_iter()
            .map(|img| run(net, &shapes, w, img, &keep).probabilities.expect("softmax head present"))
            .collect();
        let classes = probabilities[0].len();
        let class_index = match class_index {
            Some(c) if c >= classes => return Err(ForwardError::ClassOutOfRange { class: c, classes }),
            Some(c) => c,
            None => argmax(&probabilities[0]),
        };
        Ok(Self { probabilities, class_index, threshold })
    }

    pub fn probability(&self, sample: usize) -> f64 {
        self.probabilities[sample][self.class_index]
    }

    /// Samples whose class probability exceeds the threshold. Fails when the
    /// seed image (sample 0) does not.
    pub fn kept(&self) -> Result<Vec<usize>, ForwardError> {
        let p0 = self.probability(0);
        if p0 <= self.threshold {
            return Err(ForwardError::SeedRejected {
                class: self.class_index,
                probability: p0,
                threshold: self.threshold,
            });
        }
        Ok((0..self.probabilities.len())
            .filter(|&i| self.probability(i) > self.threshold)
            .collect())
    }
}

fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Indices of the images classified as `class_index` with probability above
/// `threshold`; errors if the seed image itself falls short.
pub fn filter_by_confidence(
    net: &NetworkSpec,
    w: &Weights,
    imgs: &[Image],
    class_index: usize,
    threshold: f64,
) -> Result<Vec<usize>, ForwardError> {
    ClusterProbabilities::compute(net, w, imgs, Some(class_index), threshold)?.kept()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_image(h: usize, w: usize, seed: u64) -> Image {
        let mut r = rng::seeded(seed);
        let pixels = (0..h * w * 3).map(|_| r.random::<f32>()).collect();
        Image::new(h, w, pixels).unwrap()
    }

    fn small_net() -> NetworkSpec {
        NetworkSpec {
            name: None,
            input: InputShape { height: 16, width: 16, channels: 3 },
            layers: vec![
                conv("c1", 8),
                pool("p1"),
                conv("c2", 4),
                pool("p2"),
                conv("c3", 4),
                dense("d1", 12, true),
                dense("d2", 10, false),
                LayerSpec { name: "prob".into(), kind: LayerKind::Softmax },
            ],
        }
    }

    #[test]
    fn shape_arithmetic() {
        let shapes = small_net().shapes().unwrap();
        assert_eq!(shapes[0], Shape { channels: 8, height: 16, width: 16 });
        assert_eq!(shapes[1], Shape { channels: 8, height: 8, width: 8 });
        assert_eq!(shapes[5], Shape { channels: 1, height: 12, width: 1 });
        assert_eq!(shapes[7].size(), 10);
    }

    #[test]
    fn vgg19_matches_reference_table() {
        let net = NetworkSpec::vgg19();
        let shapes = net.shapes().unwrap();
        let dim = |name: &str| shapes[net.layer_index(name).unwrap()].size();
        let table = [
            ("conv1_1", 3_211_264),
            ("conv1_2", 3_211_264),
            ("maxpooling1", 802_816),
            ("conv2_2", 1_605_632),
            ("maxpooling2", 401_408),
            ("conv3_4", 802_816),
            ("maxpooling3", 200_704),
            ("conv4_1", 401_408),
            ("maxpooling4", 100_352),
            ("conv5_1", 100_352),
            ("maxpooling5", 25_088),
            ("fc6", 4096),
            ("fc7", 4096),
            ("fc8", 1000),
        ];
        for (name, d) in table {
            assert_eq!(dim(name), d, "{name}");
        }
        let p5 = shapes[net.layer_index("maxpooling5").unwrap()];
        assert_eq!(p5, Shape { channels: 512, height: 7, width: 7 });
        let conv_names = net.layers.iter().filter(|l| matches!(l.kind, LayerKind::Conv { .. })).count();
        assert_eq!(conv_names, 16);
    }

    #[test]
    fn spec_json_round_trip_and_validation() {
        let net = NetworkSpec::vgg19();
        assert_eq!(NetworkSpec::from_json(&net.to_json()).unwrap(), net);
        let text = r#"{"input":{"height":4,"width":4,"channels":3},
            "layers":[{"name":"a","type":"dense","units":3},{"name":"b","type":"conv","filters":2}]}"#;
        assert!(matches!(NetworkSpec::from_json(text), Err(ForwardError::InvalidSpec(_))));
        let text = r#"{"input":{"height":4,"width":4,"channels":3},
            "layers":[{"name":"s","type":"softmax"},{"name":"d","type":"dense","units":3}]}"#;
        assert!(NetworkSpec::from_json(text).is_err());
        let text = r#"{"input":{"height":4,"width":4,"channels":3},
            "layers":[{"name":"a","type":"maxpool"},{"name":"a","type":"maxpool"}]}"#;
        assert!(NetworkSpec::from_json(text).is_err());
        // dense relu defaults on
        let text = r#"{"input":{"height":2,"width":2,"channels":3},"layers":[{"name":"d","type":"dense","units":3}]}"#;
        let net = NetworkSpec::from_json(text).unwrap();
        assert_eq!(net.layers[0].kind, LayerKind::Dense { units: 3, relu: true });
    }

    #[test]
    fn zero_weights_give_zero_activations() {
        let net = small_net();
        let w = Weights::zeros(&net).unwrap();
        let imgs: Vec<Image> = (0..3).map(|s| test_image(16, 16, s)).collect();
        let names: Vec<String> = net.layers.iter().take(7).map(|l| l.name.clone()).collect();
        let acts = forward_collect(&net, &w, &imgs, &names).unwrap();
        assert_eq!(acts.len(), 7);
        for a in &acts {
            assert!(a.data().iter().all(|&v| v == 0.0), "{}", a.layer_name());
        }
        assert_eq!((acts[0].channels(), acts[0].height(), acts[0].width()), (8, 16, 16));
        assert_eq!((acts[1].channels(), acts[1].height(), acts[1].width()), (8, 8, 8));
        // zero logits: uniform
        let p = classify(&net, &w, &imgs[0]).unwrap();
        assert!(p.iter().all(|&x| (x - 0.1).abs() < 1e-12));
    }

    #[test]
    fn unknown_layer_and_shape_errors() {
        let net = small_net();
        let w = Weights::zeros(&net).unwrap();
        let img = test_image(16, 16, 0);
        assert_eq!(
            forward_collect(&net, &w, std::slice::from_ref(&img), &["nope".into()]).unwrap_err(),
            ForwardError::UnknownLayer("nope".into())
        );
        let wrong = test_image(8, 16, 0);
        assert!(matches!(
            forward_collect(&net, &w, &[img, wrong], &["c1".into()]),
            Err(ForwardError::ImageShape { index: 1, .. })
        ));
        let mut no_head = small_net();
        no_head.layers.pop();
        let w2 = Weights::zeros(&no_head).unwrap();
        assert_eq!(classify(&no_head, &w2, &test_image(16, 16, 0)).unwrap_err(), ForwardError::MissingSoftmax);
    }

    #[test]
    fn weight_seeding() {
        let net = small_net();
        let a = seeded_random_weights(&net, 5).unwrap();
        let b = seeded_random_weights(&net, 5).unwrap();
        let c = seeded_random_weights(&net, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.validate(&net).is_ok());
        let mut broken = a.clone();
        broken.layers[0] = LayerWeights::None;
        assert!(broken.validate(&net).is_err());
    }

    #[test]
    fn seeded_net_activations_are_finite_and_alive() {
        let net = NetworkSpec::tiny();
        let w = seeded_random_weights(&net, 1).unwrap();
        let names: Vec<String> = net.layers.iter().map(|l| l.name.clone()).collect();
        let acts = forward_collect(&net, &w, &[test_image(16, 16, 2)], &names).unwrap();
        for a in &acts {
            assert!(a.data().iter().all(|v| v.is_finite()));
            let rms = (a.data().iter().map(|v| v * v).sum::<f64>() / a.data().len() as f64).sqrt();
            assert!(rms > 1e-3 && rms < 1e3, "{}: rms {rms}", a.layer_name());
        }
    }

    #[test]
    fn softmax_cases() {
        let p = softmax(&[0.0; 10]);
        assert!(p.iter().all(|&x| (x - 0.1).abs() < 1e-15));
        let mut logits = vec![0.0; 10];
        logits[3] = 1000.0;
        let p = softmax(&logits);
        assert!(p[3] >= 1.0 - 1e-12);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    /// A net whose last dense layer puts a huge logit on class 2 whatever the
    /// input, via its bias.
    fn saturated() -> (NetworkSpec, Weights) {
        let net = small_net();
        let mut w = seeded_random_weights(&net, 3).unwrap();
        if let LayerWeights::Dense { matrix, bias } = &mut w.layers[6] {
            matrix.iter_mut().for_each(|v| *v = 0.0);
            bias[2] = 1000.0;
        }
        (net, w)
    }

    #[test]
    fn confidence_filter() {
        let (net, w) = saturated();
        let imgs: Vec<Image> = (0..4).map(|s| test_image(16, 16, s)).collect();
        assert_eq!(filter_by_confidence(&net, &w, &imgs, 2, DEFAULT_CONFIDENCE).unwrap(), vec![0, 1, 2, 3]);
        assert!(matches!(
            filter_by_confidence(&net, &w, &imgs, 1, DEFAULT_CONFIDENCE),
            Err(ForwardError::SeedRejected { class: 1, .. })
        ));
        let zero = Weights::zeros(&net).unwrap();
        assert_eq!(filter_by_confidence(&net, &zero, &imgs, 7, 0.0).unwrap(), vec![0, 1, 2, 3]);
        assert!(filter_by_confidence(&net, &zero, &imgs, 7, 1.0).is_err());
        assert!(matches!(
            filter_by_confidence(&net, &zero, &imgs, 10, 0.5),
            Err(ForwardError::ClassOutOfRange { .. })
        ));
        let auto = ClusterProbabilities::compute(&net, &w, &imgs, None, 0.99).unwrap();
        assert_eq!(auto.class_index, 2);
    }

    #[test]
    fn conv_is_linear_without_bias() {
        let shape = Shape { channels: 3, height: 7, width: 6 };
        let mut r = rng::seeded(8);
        let x: Vec<f32> = (0..shape.size()).map(|_| r.random::<f32>() - 0.5).collect();
        let k: Vec<f32> = (0..4 * 3 * 9).map(|_| r.random::<f32>() - 0.5).collect();
        let base = conv3x3(&x, shape, &k, None, 4);
        for a in [2.0f32, 10.0] {
            let scaled: Vec<f32> = x.iter().map(|v| v * a).collect();
            let out = conv3x3(&scaled, shape, &k, None, 4);
            // relative to the output magnitude: single outputs may cancel
            let scale = base.iter().map(|b| (a * b).abs()).fold(0.0f32, f32::max);
            for (o, b) in out.iter().zip(&base) {
                assert!((o - a * b).abs() <= 1e-6 * scale);
            }
        }
    }

    #[test]
    fn conv_matches_direct_sum() {
        let shape = Shape { channels: 2, height: 4, width: 5 };
        let mut r = rng::seeded(1);
        let x: Vec<f32> = (0..shape.size()).map(|_| r.random::<f32>()).collect();
        let k: Vec<f32> = (0..3 * 2 * 9).map(|_| r.random::<f32>() - 0.5).collect();
        let bias = [0.1f32, -0.2, 0.3];
        let out = conv3x3(&x, shape, &k, Some(&bias), 3);
        for f in 0..3 {
            for y in 0..4i64 {
                for xx in 0..5i64 {
                    let mut s = f64::from(bias[f]);
                    for c in 0..2 {
                        for ky in 0..3i64 {
                            for kx in 0..3i64 {
                                let (iy, ix) = (y + ky - 1, xx + kx - 1);
                                if (0..4).contains(&iy) && (0..5).contains(&ix) {
                                    let v = x[c * 20 + (iy * 5 + ix) as usize];
                                    let kw = k[(f * 2 + c) * 9 + (ky * 3 + kx) as usize];
                                    s += f64::from(v) * f64::from(kw);
                                }
                            }
                        }
                    }
                    let got = out[f * 20 + (y * 5 + xx) as usize];
                    assert!((f64::from(got) - s).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn relu_idempotent_and_pool_is_max() {
        let mut v = vec![-1.0f32, 0.5, -0.0, 3.0];
        relu(&mut v);
        let once = v.clone();
        relu(&mut v);
        assert_eq!(v, once);

        let shape = Shape { channels: 1, height: 4, width: 4 };
        let x: Vec<f32> = (0..16).map(|i| ((i * 5) % 7) as f32).collect();
        let p = maxpool2x2(&x, shape);
        assert_eq!(p.len(), 4);
        for y in 0..2 {
            for xx in 0..2 {
                let window = [
                    x[2 * y * 4 + 2 * xx],
                    x[2 * y * 4 + 2 * xx + 1],
                    x[(2 * y + 1) * 4 + 2 * xx],
                    x[(2 * y + 1) * 4 + 2 * xx + 1],
                ];
                let max = window.iter().copied().fold(f32::MIN, f32::max);
                let min = window.iter().copied().fold(f32::MAX, f32::min);
                assert_eq!(p[y * 2 + xx], max);
                assert!(p[y * 2 + xx] >= min);
            }
        }
    }

    #[test]
    fn collection_is_deterministic_across_pool_sizes() {
        let net = NetworkSpec::tiny();
        let w = seeded_random_weights(&net, 4).unwrap();
        let imgs: Vec<Image> = (0..9).map(|s| test_image(16, 16, s)).collect();
        let names = vec!["conv2".to_string(), "fc1".to_string()];
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| forward_collect(&net, &w, &imgs, &names).unwrap());
        let b = four.install(|| forward_collect(&net, &w, &imgs, &names).unwrap());
        assert_eq!(a, b);
    }
}
