//! Toy LocUNet: a UNet-style encoder/decoder producing a one-channel
//! quasi-heat-map, reduced to a position by the center-of-mass layer.
//!
//! The layer schedule follows the 256x256 reference design (29 convolutions,
//! average pooling on the way down, bilinear upsampling on the way up, skip
//! concatenations, and the input stack concatenated into the last two
//! layers), with resolutions scaled to `N` and channel widths divided by
//! `width_divisor`.
//!
//! Layer `k + 1` is computed from the (possibly concatenated) tensor `x_k` as
//! `resample(leaky(conv_k(x_k)))`, where `resample` is a 2x2 average pool if
//! the resolution halves, bilinear 2x upsampling if it doubles, and the
//! identity otherwise. The output layer keeps the LeakyReLU, so the heat map
//! can take (small) negative values.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Point};
use crate::heatloc::com::{center_of_mass, center_of_mass_backward, HeatMap};
use crate::heatloc::encode::{encode_inputs, InputStack};
use crate::heatloc::nn::{self, Tensor};
use crate::heatloc::Sample;
use crate::rng;

const REF_SIZE: usize = 256;
const REF_RES: [usize; 30] = [
    256, 256, 128, 64, 64, 32, 32, 16, 16, 16, 8, 8, 4, 4, 2, 4, 4, 8, 8, 16, 16, 16, 32, 32, 64,
    64, 128, 256, 256, 256,
];
const REF_CHANNELS: [usize; 30] = [
    16, 20, 50, 60, 70, 90, 100, 120, 120, 135, 150, 225, 300, 400, 500, 400, 300, 225, 150, 135,
    120, 120, 100, 90, 70, 60, 50, 20, 20, 1,
];
const REF_FILTERS: [usize; 29] = [
    3, 5, 5, 5, 5, 5, 5, 3, 5, 5, 5, 5, 5, 5, 4, 5, 4, 5, 4, 5, 3, 6, 5, 6, 5, 6, 6, 5, 5,
];

/// Layers whose output tensor is concatenated onto layer `m` before the next
/// convolution. Layer 0 is the input stack.
fn skip_sources(m: usize) -> Vec<usize> {
    match m {
        15..=26 => vec![28 - m],
        27 => vec![1, 0],
        28 => vec![0],
        _ => Vec::new(),
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LUN1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Activation of the output layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    /// Same LeakyReLU as the hidden layers; the heat map may go negative.
    Leaky,
    /// Strictly positive heat map. Its center of mass stays inside the grid;
    /// with signed heat, positive and negative mass can nearly cancel and
    /// throw the estimate far off the grid.
    Softplus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    /// Input resolution; a power of two.
    pub n: usize,
    pub n_bs: usize,
    pub width_divisor: f64,
    pub min_channels: usize,
    pub leaky_slope: f64,
    pub output: OutputActivation,
    /// Initial bias of the output layer (sets the initial heat-map level).
    pub output_bias: f64,
    pub seed: u64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            n: 64,
            n_bs: 5,
            width_divisor: 5.0,
            min_channels: 8,
            leaky_slope: 0.01,
            output: OutputActivation::Leaky,
            output_bias: 1.0,
            seed: 0,
        }
    }
}

impl ArchConfig {
    pub fn input_channels(&self) -> usize {
        3 * self.n_bs + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || !self.n.is_power_of_two() || self.n > REF_SIZE {
            return Err(Error::invalid(format!(
                "resolution must be a power of two in [2, 256], got {}",
                self.n
            )));
        }
        if self.n_bs == 0 {
            return Err(Error::invalid("n_bs must be positive"));
        }
        if !(self.width_divisor >= 1.0) || self.min_channels == 0 {
            return Err(Error::invalid(
                "width_divisor must be >= 1 and min_channels positive",
            ));
        }
        if !(self.output_bias > 0.0) {
            return Err(Error::invalid("output_bias must be positive"));
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return Err(Error::invalid(format!(
                "leaky slope {} outside [0, 1)",
                self.leaky_slope
            )));
        }
        Ok(())
    }

    fn resolutions(&self) -> [usize; 30] {
        REF_RES.map(|r| (r * self.n / REF_SIZE).max(1))
    }

    fn own_channels(&self) -> [usize; 30] {
        let mut c = REF_CHANNELS
            .map(|c| ((c as f64 / self.width_divisor).round() as usize).max(self.min_channels));
        c[0] = self.input_channels();
        c[29] = 1;
        c
    }

    pub fn layers(&self) -> Vec<LayerSpec> {
        let res = self.resolutions();
        let own = self.own_channels();
        (0..29)
            .map(|k| LayerSpec {
                index: k,
                in_channels: own[k] + skip_sources(k).iter().map(|&s| own[s]).sum::<usize>(),
                out_channels: own[k + 1],
                kernel: REF_FILTERS[k],
                res_in: res[k],
                res_out: res[k + 1],
                skips_after: skip_sources(k + 1),
            })
            .collect()
    }
}

/// Convolution `k`: reads `x_k` at `res_in`, writes layer `k + 1` at `res_out`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub index: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub res_in: usize,
    pub res_out: usize,
    /// Layers concatenated onto this layer's output before the next conv.
    pub skips_after: Vec<usize>,
}

impl LayerSpec {
    fn n_weights(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
    }

    /// Multiply-accumulates of one forward pass.
    pub fn macs(&self) -> usize {
        self.n_weights() * self.res_in * self.res_in
    }
}

/// JSON architecture descriptor stored next to the binary weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchDescriptor {
    pub version: u32,
    pub config: ArchConfig,
    pub layers: Vec<LayerSpec>,
}

/// Gradients (or any parameter-shaped buffer).
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Params {
    fn zeros_like(layers: &[LayerSpec]) -> Self {
        Self {
            weights: layers.iter().map(|l| vec![0.0; l.n_weights()]).collect(),
            biases: layers.iter().map(|l| vec![0.0; l.out_channels]).collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.biases).flatten()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(&mut self.biases).flatten()
    }

    pub fn len(&self) -> usize {
        self.iter().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn scale(&mut self, s: f64) {
        self.iter_mut().for_each(|v| *v *= s);
    }

    pub fn add(&mut self, other: &Params) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocNetModel {
    config: ArchConfig,
    layers: Vec<LayerSpec>,
    pub params: Params,
}

struct Trace {
    /// `x_k`: input of convolution `k`.
    xs: Vec<Tensor>,
    /// Pre-activation output of convolution `k`.
    pres: Vec<Tensor>,
    heat: Tensor,
}

impl LocNetModel {
    /// Kaiming-uniform init for the hidden layers; the output layer starts
    /// near a constant positive map so the initial estimate is the grid
    /// center and the center-of-mass denominator is well away from zero.
    pub fn new(config: ArchConfig) -> Result<Self> {
        config.validate()?;
        let layers = config.layers();
        let mut params = Params::zeros_like(&layers);
        let mut r = rng::seeded(rng::derive(config.seed, "locnet-init", 0));
        let last = layers.len() - 1;
        for (i, l) in layers.iter().enumerate() {
            let taps = effective_taps(l.kernel, l.res_in);
            let fan_in = l.in_channels as f64 * taps * taps;
            let gain = (2.0 / (1.0 + config.leaky_slope.powi(2))).sqrt();
            let mut bound = gain * (3.0 / fan_in).sqrt();
            if i == last {
                bound *= 0.1;
            }
            for w in &mut params.weights[i] {
                *w = r.random_range(-bound..bound);
            }
            if i == last {
                params.biases[i].fill(config.output_bias);
            }
        }
        Ok(Self {
            config,
            layers,
            params,
        })
    }

    pub fn config(&self) -> &ArchConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn forward_macs(&self) -> usize {
        self.layers.iter().map(LayerSpec::macs).sum()
    }

    pub fn zero_grads(&self) -> Params {
        Params::zeros_like(&self.layers)
    }

    fn check_input(&self, input: &InputStack) -> Result<()> {
        if input.channels() != self.config.input_channels() || input.size() != self.config.n {
            return Err(Error::Shape(format!(
                "model expects {}x{}x{}, input is {}x{}x{}",
                self.config.input_channels(),
                self.config.n,
                self.config.n,
                input.channels(),
                input.size(),
                input.size()
            )));
        }
        Ok(())
    }

    fn softplus_at(&self, layer: usize) -> bool {
        self.config.output == OutputActivation::Softplus && layer + 1 == self.layers.len()
    }

    fn activate(&self, layer: usize, pre: &Tensor) -> Tensor {
        if self.softplus_at(layer) {
            nn::softplus(pre)
        } else {
            nn::leaky_relu(pre, self.config.leaky_slope)
        }
    }

    fn run(&self, input: &InputStack) -> Trace {
        let mut own: Vec<Tensor> = vec![input.tensor.clone()];
        let mut xs = Vec::with_capacity(self.layers.len());
        let mut pres = Vec::with_capacity(self.layers.len());
        let mut x = input.tensor.clone();
        for (k, l) in self.layers.iter().enumerate() {
            let pre = nn::conv2d(
                &x,
                &self.params.weights[k],
                &self.params.biases[k],
                l.kernel,
            );
            let act = resample(self.activate(k, &pre), l.res_in, l.res_out);
            let next = if l.skips_after.is_empty() {
                act.clone()
            } else {
                let mut parts = vec![&act];
                parts.extend(l.skips_after.iter().map(|&s| &own[s]));
                Tensor::concat(&parts)
            };
            xs.push(std::mem::replace(&mut x, next));
            pres.push(pre);
            own.push(act);
        }
        Trace {
            xs,
            pres,
            heat: own.pop().expect("output layer"),
        }
    }

    pub fn forward_heat(&self, input: &InputStack) -> Result<HeatMap> {
        self.check_input(input)?;
        let heat = self.run(input).heat;
        Ok(HeatMap::new(Grid::from_vec(heat.n, heat.data)?))
    }

    pub fn forward(&self, input: &InputStack) -> Result<(HeatMap, Point)> {
        let heat = self.forward_heat(input)?;
        let est = center_of_mass(&heat)?;
        Ok((heat, est))
    }

    pub fn localize(&self, sample: &Sample) -> Result<Point> {
        Ok(self.forward(&encode_inputs(sample)?)?.1)
    }

    /// Euclidean error `‖μ - truth‖` (pixels) and its gradient, accumulated
    /// into `grads` with weight `scale`.
    pub fn loss_and_grad(
        &self,
        input: &InputStack,
        truth: Point,
        scale: f64,
        grads: &mut Params,
    ) -> Result<f64> {
        self.check_input(input)?;
        let trace = self.run(input);
        let heat = HeatMap::new(Grid::from_vec(trace.heat.n, trace.heat.data.clone())?);
        let est = center_of_mass(&heat)?;
        let diff = est - truth;
        let loss = diff.norm();
        if loss == 0.0 {
            return Ok(0.0);
        }
        let g_mu = diff.scale(scale / loss);
        let g_heat = center_of_mass_backward(&heat, g_mu)?;
        self.backward(
            &trace,
            Tensor::from_vec(1, trace.heat.n, g_heat.into_vec()),
            grads,
        );
        Ok(loss)
    }

    fn backward(&self, trace: &Trace, grad_heat: Tensor, grads: &mut Params) {
        let n_layers = self.layers.len();
        // grad_own[m]: gradient w.r.t. the own output of layer m.
        let mut grad_own: Vec<Option<Tensor>> = vec![None; n_layers + 1];
        grad_own[n_layers] = Some(grad_heat);
        for k in (0..n_layers).rev() {
            let l = &self.layers[k];
            let g_act = grad_own[k + 1]
                .take()
                .expect("gradient of every layer output is reached");
            let mut g = resample_backward(g_act, l.res_in, l.res_out);
            if self.softplus_at(k) {
                nn::softplus_backward(&trace.pres[k], &mut g);
            } else {
                nn::leaky_relu_backward(&trace.pres[k], self.config.leaky_slope, &mut g);
            }
            let need_input = k > 0;
            let gx = nn::conv2d_backward(
                &trace.xs[k],
                &self.params.weights[k],
                l.kernel,
                &g,
                &mut grads.weights[k],
                &mut grads.biases[k],
                need_input,
            );
            let Some(gx) = gx else { continue };
            let own_k = self.layers[k - 1].out_channels;
            accumulate(&mut grad_own[k], gx.slice_channels(0, own_k));
            let mut offset = own_k;
            for &s in &skip_sources(k) {
                let c = if s == 0 {
                    self.config.input_channels()
                } else {
                    self.layers[s - 1].out_channels
                };
                if s > 0 {
                    accumulate(&mut grad_own[s], gx.slice_channels(offset, c));
                }
                offset += c;
            }
        }
    }

    pub fn descriptor(&self) -> ArchDescriptor {
        ArchDescriptor {
            version: CHECKPOINT_VERSION,
            config: self.config,
            layers: self.layers.clone(),
        }
    }

    /// Writes `path` (binary weights) and `path.json` (descriptor).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(16 + 8 * self.n_params());
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.n_params() as u64).to_le_bytes());
        for v in self.params.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        crate::io::write_json(&descriptor_path(path), &self.descriptor())?;
        fs::File::create(path)?.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let desc: ArchDescriptor = crate::io::read_json(&descriptor_path(path))?;
        let bad = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        if desc.version != CHECKPOINT_VERSION {
            return Err(bad(format!(
                "descriptor version {} unsupported",
                desc.version
            )));
        }
        let mut model = Self::new(desc.config)?;
        if model.layers != desc.layers {
            return Err(bad(
                "descriptor layers do not match the configured architecture".into(),
            ));
        }
        let mut bytes = Vec::new();
        fs::File::open(path)
            .map_err(|e| crate::io::missing_or_io(path, e))?
            .read_to_end(&mut bytes)?;
        if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("checkpoint version {version} unsupported")));
        }
        let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        if count != model.n_params() || bytes.len() != 16 + 8 * count {
            return Err(bad(format!(
                "expected {} parameters, header says {count}",
                model.n_params()
            )));
        }
        for (v, chunk) in model.params.iter_mut().zip(bytes[16..].chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        Ok(model)
    }
}

pub fn descriptor_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Mean number of in-bounds kernel taps per axis for a "same" convolution at
/// resolution `res`. At the bottleneck most taps fall on zero padding, so the
/// nominal `k * k` fan-in would shrink activations layer after layer.
fn effective_taps(k: usize, res: usize) -> f64 {
    let (before, _) = nn::same_padding(k);
    let total: usize = (0..res)
        .map(|o| {
            (0..k)
                .filter(|&t| (o + t).checked_sub(before).is_some_and(|i| i < res))
                .count()
        })
        .sum();
    total as f64 / res as f64
}

fn resample(t: Tensor, from: usize, to: usize) -> Tensor {
    match to.cmp(&from) {
        std::cmp::Ordering::Less => nn::avg_pool2(&t),
        std::cmp::Ordering::Greater => nn::upsample2(&t),
        std::cmp::Ordering::Equal => t,
    }
}

fn resample_backward(g: Tensor, from: usize, to: usize) -> Tensor {
    match to.cmp(&from) {
        std::cmp::Ordering::Less => nn::avg_pool2_backward(&g),
        std::cmp::Ordering::Greater => nn::upsample2_backward(&g),
        std::cmp::Ordering::Equal => g,
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(t) => t.add_assign(&g),
        None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heatloc::encode::tests_support::random_stack;

    fn toy(n: usize, n_bs: usize) -> LocNetModel {
        LocNetModel::new(ArchConfig {
            n,
            n_bs,
            seed: 3,
            ..ArchConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn schedule_mirrors_and_ends_in_one_channel() {
        let cfg = ArchConfig::default();
        let layers = cfg.layers();
        assert_eq!(layers.len(), 29);
        assert_eq!(layers[0].in_channels, 16);
        assert_eq!(layers.last().unwrap().out_channels, 1);
        assert_eq!(layers.last().unwrap().res_out, 64);
        let res = cfg.resolutions();
        for m in 15..=26 {
            assert_eq!(res[m], res[28 - m]);
        }
        // input stack concatenated into the last two layers
        assert_eq!(
            layers[27].in_channels,
            layers[26].out_channels + layers[0].out_channels + 16
        );
        assert_eq!(layers[28].in_channels, layers[27].out_channels + 16);
        assert!(layers.iter().all(|l| l.res_in == l.res_out
            || l.res_in == 2 * l.res_out
            || 2 * l.res_in == l.res_out));
    }

    #[test]
    fn output_shape_and_determinism() {
        let m = toy(16, 2);
        let x = random_stack(2, 16, 1);
        let (h1, e1) = m.forward(&x).unwrap();
        let (h2, e2) = m.forward(&x).unwrap();
        assert_eq!(h1.h.size(), 16);
        assert_eq!(h1, h2);
        assert_eq!(e1, e2);
        assert!((1.0..=16.0).contains(&e1.x) && (1.0..=16.0).contains(&e1.y));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let m = toy(16, 2);
        assert!(m.forward(&random_stack(3, 16, 1)).is_err());
        assert!(m.forward(&random_stack(2, 32, 1)).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = toy(16, 1);
        let path = dir.path().join("ckpt/model.bin");
        m.save(&path).unwrap();
        assert_eq!(LocNetModel::load(&path).unwrap(), m);
        fs::write(&path, b"garbage").unwrap();
        assert!(LocNetModel::load(&path).is_err());
    }

    fn loss(m: &LocNetModel, x: &InputStack, truth: Point) -> f64 {
        m.forward(x).unwrap().1.dist(truth)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        check_gradient(toy(16, 1));
    }

    #[test]
    fn softplus_output_gradient_matches_finite_differences() {
        let m = LocNetModel::new(ArchConfig {
            n: 16,
            n_bs: 1,
            seed: 3,
            output: OutputActivation::Softplus,
            ..ArchConfig::default()
        })
        .unwrap();
        let x = random_stack(1, 16, 2);
        assert!(m
            .forward_heat(&x)
            .unwrap()
            .h
            .as_slice()
            .iter()
            .all(|&v| v > 0.0));
        check_gradient(m);
    }

    fn check_gradient(mut m: LocNetModel) {
        let x = random_stack(1, 16, 9);
        let truth = Point::new(4.0, 11.0);
        let mut g = m.zero_grads();
        m.loss_and_grad(&x, truth, 1.0, &mut g).unwrap();
        let eps = 1e-5;
        // largest-gradient weight of every layer
        for layer in 0..m.layers.len() {
            let (i, &an) = g.weights[layer]
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .unwrap();
            let orig = m.params.weights[layer][i];
            m.params.weights[layer][i] = orig + eps;
            let up = loss(&m, &x, truth);
            m.params.weights[layer][i] = orig - eps;
            let down = loss(&m, &x, truth);
            m.params.weights[layer][i] = orig;
            let fd = (up - down) / (2.0 * eps);
            let rel = (fd - an).abs() / fd.abs().max(an.abs());
            assert!(rel < 1e-3, "layer {layer} w{i}: fd {fd} vs {an}");
        }
        // random directions through all parameters
        let mut r = rng::seeded(17);
        for _ in 0..3 {
            let dir: Vec<f64> = (0..m.n_params())
                .map(|_| r.random_range(-1.0..1.0))
                .collect();
            let an: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
            let shifted = |t: f64| {
                let mut mm = m.clone();
                mm.params
                    .iter_mut()
                    .zip(&dir)
                    .for_each(|(p, d)| *p += t * d);
                loss(&mm, &x, truth)
            };
            let fd = (shifted(eps) - shifted(-eps)) / (2.0 * eps);
            assert!(
                (fd - an).abs() / fd.abs().max(an.abs()) < 1e-3,
                "directional: fd {fd} vs {an}"
            );
        }
    }
}
