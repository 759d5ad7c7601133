use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::heatmap::{
    decode_backward, normalize_heatmap, soft_argmax, stage1_loss_grad, Heatmap3D, HeatmapGrid, LossMode,
};
use crate::error::{Error, Result};
use crate::nn::{
    apply_mask, read_blob, relu_dropout, write_blob, Adam, BatchNorm, BnCache, Conv2d, ConvTranspose2d, Param,
};
use crate::pose::PoseObservation;

/// An `H x W x 3` image with values in `[0, 1]`, stored row-major HWC.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl ImageTensor {
    pub fn zeros(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            data: vec![0.0; h * w * 3],
        }
    }

    pub fn new(h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != h * w * 3 {
            return Err(Error::Shape(format!("{} values for a {h}x{w}x3 image", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image".into()));
        }
        Ok(Self { h, w, data })
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.w + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneStage {
    pub channels: usize,
    pub stride: usize,
}

/// Backbone of 3x3 conv stages followed by three kernel-4 stride-2
/// transposed convolutions emitting `joints * d` heatmap channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Config {
    pub image_w: usize,
    pub image_h: usize,
    pub backbone: Vec<BackboneStage>,
    pub head_channels: [usize; 2],
    pub joints: usize,
    pub root_index: usize,
    pub grid: HeatmapGrid,
}

pub const HEAD_KERNEL: usize = 4;
pub const HEAD_STRIDE: usize = 2;
pub const HEAD_LAYERS: usize = 3;

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            image_w: 64,
            image_h: 64,
            backbone: [16, 32, 64, 64]
                .iter()
                .map(|&channels| BackboneStage { channels, stride: 2 })
                .collect(),
            head_channels: [64, 64],
            joints: 17,
            root_index: 0,
            grid: HeatmapGrid {
                w: 32,
                h: 32,
                d: 16,
                depth_range_mm: 1500.0,
                image_w: 64,
                image_h: 64,
            },
        }
    }
}

impl Stage1Config {
    /// Spatial size after the backbone.
    pub fn feature_size(&self) -> (usize, usize) {
        self.backbone.iter().fold((self.image_h, self.image_w), |(h, w), s| {
            ((h + 2 - 3) / s.stride + 1, (w + 2 - 3) / s.stride + 1)
        })
    }

    pub fn head_output_size(&self) -> (usize, usize) {
        let (h, w) = self.feature_size();
        let up = HEAD_STRIDE.pow(HEAD_LAYERS as u32);
        (h * up, w * up)
    }

    pub fn output_channels(&self) -> usize {
        self.joints * self.grid.d
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.image_w == 0 || self.image_h == 0 {
            return Err(Error::InvalidConfig("image size must be positive".into()));
        }
        if self.joints == 0 || self.root_index >= self.joints {
            return Err(Error::InvalidConfig("joint count / root index out of range".into()));
        }
        if self.backbone.iter().any(|s| s.channels == 0 || s.stride == 0) || self.head_channels.contains(&0) {
            return Err(Error::InvalidConfig("layer widths and strides must be positive".into()));
        }
        if (self.grid.image_w, self.grid.image_h) != (self.image_w, self.image_h) {
            return Err(Error::InvalidConfig("heatmap grid must cover the input image".into()));
        }
        let (h, w) = self.head_output_size();
        if (w, h) != (self.grid.w, self.grid.h) {
            return Err(Error::InvalidConfig(format!(
                "head emits {w}x{h} but the grid is {}x{}",
                self.grid.w, self.grid.h
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ConvBlock {
    conv: Conv2d,
    bn: BatchNorm,
}

#[derive(Debug, Clone, PartialEq)]
struct DeconvBlock {
    deconv: ConvTranspose2d,
    bn: BatchNorm,
}

/// First-stage network: image in, per-joint 3D heatmap logits out.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Model {
    config: Stage1Config,
    backbone: Vec<ConvBlock>,
    head: Vec<DeconvBlock>,
    out: ConvTranspose2d,
}

enum LayerCache {
    Conv(crate::nn::conv2d::Conv2dCache, BnCache, Vec<f64>),
    Deconv(Vec<f64>, (usize, usize), BnCache, Vec<f64>),
}

/// Activations kept from a training forward pass.
pub struct Stage1Tape {
    batch: usize,
    layers: Vec<LayerCache>,
    out_input: Vec<f64>,
    out_size: (usize, usize),
}

impl Stage1Model {
    pub fn new(config: Stage1Config, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cin = 3;
        let mut backbone = Vec::new();
        for s in &config.backbone {
            backbone.push(ConvBlock {
                conv: Conv2d::new(cin, s.channels, 3, s.stride, 1, false, &mut rng),
                bn: BatchNorm::new(s.channels),
            });
            cin = s.channels;
        }
        let mut head = Vec::new();
        for &c in &config.head_channels {
            head.push(DeconvBlock {
                deconv: ConvTranspose2d::new(cin, c, HEAD_KERNEL, HEAD_STRIDE, 1, false, &mut rng),
                bn: BatchNorm::new(c),
            });
            cin = c;
        }
        let mut out = ConvTranspose2d::new(cin, config.output_channels(), HEAD_KERNEL, HEAD_STRIDE, 1, true, &mut rng);
        // near-uniform heatmaps at initialization
        out.weight = Param::uniform(out.weight.len(), 1e-3, &mut rng);
        Ok(Self {
            config,
            backbone,
            head,
            out,
        })
    }

    pub fn config(&self) -> &Stage1Config {
        &self.config
    }

    pub fn num_params(&self) -> usize {
        self.backbone.iter().map(|b| b.conv.num_params() + b.bn.num_params()).sum::<usize>()
            + self.head.iter().map(|b| b.deconv.num_params() + b.bn.num_params()).sum::<usize>()
            + self.out.num_params()
    }

    fn check_images(&self, images: &[&ImageTensor]) -> Result<Vec<f64>> {
        let mut x = Vec::with_capacity(images.len() * self.config.image_h * self.config.image_w * 3);
        for img in images {
            if (img.h, img.w) != (self.config.image_h, self.config.image_w) {
                return Err(Error::Shape(format!(
                    "image is {}x{}, model expects {}x{}",
                    img.h, img.w, self.config.image_h, self.config.image_w
                )));
            }
            if img.data.len() != img.h * img.w * 3 || img.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("image".into()));
            }
            x.extend_from_slice(&img.data);
        }
        Ok(x)
    }

    /// Inference-mode logits, NHWC with `joints * d` channels.
    pub fn infer_logits(&self, images: &[&ImageTensor]) -> Result<Vec<f64>> {
        let mut x = self.check_images(images)?;
        let n = images.len();
        let (mut h, mut w) = (self.config.image_h, self.config.image_w);
        for b in &self.backbone {
            let (mut y, _) = b.conv.forward(&x, n, h, w);
            (h, w) = b.conv.out_size(h, w);
            b.bn.forward_infer(&mut y);
            relu_dropout::<ChaCha8Rng>(&mut y, 0.0, None);
            x = y;
        }
        for b in &self.head {
            let mut y = b.deconv.forward(&x, n, h, w);
            (h, w) = b.deconv.out_size(h, w);
            b.bn.forward_infer(&mut y);
            relu_dropout::<ChaCha8Rng>(&mut y, 0.0, None);
            x = y;
        }
        Ok(self.out.forward(&x, n, h, w))
    }

    pub fn forward_train(&mut self, images: &[&ImageTensor]) -> Result<(Vec<f64>, Stage1Tape)> {
        let mut x = self.check_images(images)?;
        let n = images.len();
        let (mut h, mut w) = (self.config.image_h, self.config.image_w);
        let mut layers = Vec::new();
        for b in &mut self.backbone {
            let (mut y, cache) = b.conv.forward(&x, n, h, w);
            (h, w) = b.conv.out_size(h, w);
            let bn = b.bn.forward_train(&mut y);
            let mask = relu_dropout::<ChaCha8Rng>(&mut y, 0.0, None);
            layers.push(LayerCache::Conv(cache, bn, mask));
            x = y;
        }
        for b in &mut self.head {
            let mut y = b.deconv.forward(&x, n, h, w);
            let input = std::mem::take(&mut x);
            let in_size = (h, w);
            (h, w) = b.deconv.out_size(h, w);
            let bn = b.bn.forward_train(&mut y);
            let mask = relu_dropout::<ChaCha8Rng>(&mut y, 0.0, None);
            layers.push(LayerCache::Deconv(input, in_size, bn, mask));
            x = y;
        }
        let logits = self.out.forward(&x, n, h, w);
        Ok((
            logits,
            Stage1Tape {
                batch: n,
                layers,
                out_input: x,
                out_size: (h, w),
            },
        ))
    }

    pub fn backward(&mut self, tape: Stage1Tape, d_logits: &[f64]) {
        let n = tape.batch;
        let (h, w) = tape.out_size;
        let mut g = self.out.backward(&tape.out_input, n, h, w, d_logits);
        let mut caches = tape.layers;
        for b in self.head.iter_mut().rev() {
            let Some(LayerCache::Deconv(input, (ih, iw), bn, mask)) = caches.pop() else {
                unreachable!("tape layout matches the head");
            };
            apply_mask(&mut g, &mask);
            let gb = b.bn.backward(&bn, &g);
            g = b.deconv.backward(&input, n, ih, iw, &gb);
        }
        for b in self.backbone.iter_mut().rev() {
            let Some(LayerCache::Conv(cache, bn, mask)) = caches.pop() else {
                unreachable!("tape layout matches the backbone");
            };
            apply_mask(&mut g, &mask);
            let gb = b.bn.backward(&bn, &g);
            g = b.conv.backward(&cache, &gb);
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::new();
        for b in &mut self.backbone {
            v.push(&mut b.conv.weight);
            v.push(&mut b.bn.gamma);
            v.push(&mut b.bn.beta);
        }
        for b in &mut self.head {
            v.push(&mut b.deconv.weight);
            v.push(&mut b.bn.gamma);
            v.push(&mut b.bn.beta);
        }
        v.push(&mut self.out.weight);
        v.extend(self.out.bias.as_mut());
        v
    }

    /// Every stored tensor in checkpoint order: per layer weight, then
    /// batch-norm gamma, beta, running mean, running variance; the output
    /// layer's weight and bias last.
    fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut v = Vec::new();
        for b in &mut self.backbone {
            v.push(&mut b.conv.weight.value);
            v.extend([&mut b.bn.gamma.value, &mut b.bn.beta.value, &mut b.bn.running_mean, &mut b.bn.running_var]);
        }
        for b in &mut self.head {
            v.push(&mut b.deconv.weight.value);
            v.extend([&mut b.bn.gamma.value, &mut b.bn.beta.value, &mut b.bn.running_mean, &mut b.bn.running_var]);
        }
        v.push(&mut self.out.weight.value);
        if let Some(b) = self.out.bias.as_mut() {
            v.push(&mut b.value);
        }
        v
    }

    pub fn weights_blob(&self) -> Vec<u8> {
        let mut copy = self.clone();
        let tensors: Vec<Vec<f64>> = copy.tensors_mut().into_iter().map(|t| t.clone()).collect();
        write_blob(tensors.iter().map(Vec::as_slice))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.weights_blob()).map_err(|e| Error::io(path, e))?;
        let sidecar = Stage1Sidecar {
            format: "stage1ckpt".into(),
            version: 1,
            config: self.config.clone(),
            tensor_order: TENSOR_ORDER.into(),
        };
        let side = sidecar_path(path);
        std::fs::write(&side, serde_json::to_string_pretty(&sidecar)?).map_err(|e| Error::io(&side, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let side = sidecar_path(path);
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let sidecar: Stage1Sidecar = serde_json::from_str(&text)?;
        if sidecar.format != "stage1ckpt" {
            return Err(Error::Malformed {
                line: 1,
                msg: format!("not a stage-1 checkpoint: {}", sidecar.format),
            });
        }
        if sidecar.version != 1 {
            return Err(Error::SchemaVersion {
                format: "stage1ckpt".into(),
                found: sidecar.version,
                expected: 1,
            });
        }
        let blob = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut model = Self::new(sidecar.config, 0)?;
        read_blob(&blob, model.tensors_mut()).map_err(Error::InvalidConfig)?;
        Ok(model)
    }
}

const TENSOR_ORDER: &str = "little-endian f64; for each backbone stage then each of the first two head layers: \
weight, bn.gamma, bn.beta, bn.running_mean, bn.running_var; then output weight, output bias";

#[derive(Serialize, Deserialize)]
struct Stage1Sidecar {
    format: String,
    version: u64,
    config: Stage1Config,
    tensor_order: String,
}

/// `<path>.json` next to a weight blob.
pub fn sidecar_path(blob: &Path) -> std::path::PathBuf {
    let mut s = blob.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Reorders one image's NHWC logits (`channel = joint * d + k`) into a
/// `J x d x h x w` heatmap.
pub fn logits_to_heatmap(logits: &[f64], joints: usize, grid: &HeatmapGrid) -> Heatmap3D {
    let (d, h, w) = (grid.d, grid.h, grid.w);
    let ch = joints * d;
    let mut values = vec![0.0; joints * d * h * w];
    for y in 0..h {
        for x in 0..w {
            let px = &logits[(y * w + x) * ch..(y * w + x + 1) * ch];
            for j in 0..joints {
                for k in 0..d {
                    values[((j * d + k) * h + y) * w + x] = px[j * d + k];
                }
            }
        }
    }
    Heatmap3D {
        joints,
        d,
        h,
        w,
        values,
    }
}

fn heatmap_grad_to_logits(grad: &[f64], joints: usize, grid: &HeatmapGrid, out: &mut [f64]) {
    let (d, h, w) = (grid.d, grid.h, grid.w);
    let ch = joints * d;
    for y in 0..h {
        for x in 0..w {
            for j in 0..joints {
                for k in 0..d {
                    out[(y * w + x) * ch + j * d + k] = grad[((j * d + k) * h + y) * w + x];
                }
            }
        }
    }
}

/// Makes decoded depths relative to the decoded root depth.
pub fn to_root_relative(mut obs: PoseObservation, root: usize) -> PoseObservation {
    let zr = obs.depth_mm[root];
    for (j, d) in obs.depth_mm.iter_mut().enumerate() {
        *d = if j == root { 0.0 } else { *d - zr };
    }
    obs
}

/// Runs the first stage on one image: heatmap and root-relative decode.
pub fn stage1_forward(model: &Stage1Model, img: &ImageTensor) -> Result<(Heatmap3D, PoseObservation)> {
    let cfg = model.config();
    let logits = model.infer_logits(&[img])?;
    let hm = normalize_heatmap(&logits_to_heatmap(&logits, cfg.joints, &cfg.grid))?;
    let obs = soft_argmax(&hm, &cfg.grid)?;
    Ok((hm, to_root_relative(obs, cfg.root_index)))
}

/// Loss on root-relative decoded coordinates and its gradient with respect
/// to the raw logits of one image (`J x d x h x w` layout).
pub fn decode_loss_grad(
    logits: &Heatmap3D,
    grid: &HeatmapGrid,
    root: usize,
    target: &PoseObservation,
    mode: LossMode,
    scale: [f64; 3],
) -> Result<(f64, Vec<f64>, PoseObservation)> {
    let probs = normalize_heatmap(logits)?;
    let decoded = to_root_relative(soft_argmax(&probs, grid)?, root);
    let (loss, mut g) = stage1_loss_grad(&decoded, target, mode, scale)?;
    let total_dz: f64 = g.iter().map(|r| r[2]).sum();
    g[root][2] -= total_dz;
    Ok((loss, decode_backward(&probs, grid, &g), decoded))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stage1TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub seed: u64,
}

impl Default for Stage1TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 10,
            learning_rate: 1e-3,
            lr_decay: 0.99,
            seed: 0,
        }
    }
}

/// One training example: the target decode and which channels it supervises.
#[derive(Debug, Clone)]
pub struct Stage1Sample {
    pub image: ImageTensor,
    pub target: PoseObservation,
    pub mode: LossMode,
}

/// Trains with L1 loss measured in heatmap-bin units, mixing 3D and
/// 2D-only samples as given. Returns the mean loss per epoch.
pub fn train_stage1(model: &mut Stage1Model, samples: &[Stage1Sample], cfg: &Stage1TrainConfig) -> Result<Vec<f64>> {
    if samples.is_empty() || cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::InvalidConfig("need samples, a positive batch size and epochs".into()));
    }
    let grid = model.config.grid;
    let joints = model.config.joints;
    let root = model.config.root_index;
    for s in samples {
        if s.target.num_joints() != joints {
            return Err(Error::Shape("target joint count differs from model".into()));
        }
    }
    let scale = [grid.x_bin_px(), grid.y_bin_px(), grid.z_bin_mm()];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.learning_rate);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let per_image = grid.voxels() * joints;
    let mut curve = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let images: Vec<&ImageTensor> = batch.iter().map(|&i| &samples[i].image).collect();
            let (logits, tape) = model.forward_train(&images)?;
            let mut d_logits = vec![0.0; logits.len()];
            for (b, &i) in batch.iter().enumerate() {
                let chunk = &logits[b * per_image..(b + 1) * per_image];
                let hm = logits_to_heatmap(chunk, joints, &grid);
                let (loss, g, _) = decode_loss_grad(&hm, &grid, root, &samples[i].target, samples[i].mode, scale)?;
                if !loss.is_finite() {
                    return Err(Error::Numerical("stage-1 loss diverged".into()));
                }
                total += loss;
                let scaled: Vec<f64> = g.iter().map(|v| v / batch.len() as f64).collect();
                heatmap_grad_to_logits(&scaled, joints, &grid, &mut d_logits[b * per_image..(b + 1) * per_image]);
            }
            let mut params = model.params_mut();
            params.iter_mut().for_each(|p| p.zero_grad());
            drop(params);
            model.backward(tape, &d_logits);
            adam.step(&mut model.params_mut());
        }
        adam.lr *= cfg.lr_decay;
        curve.push(total / samples.len() as f64);
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny_config() -> Stage1Config {
        Stage1Config {
            image_w: 16,
            image_h: 16,
            backbone: vec![BackboneStage { channels: 4, stride: 2 }, BackboneStage { channels: 4, stride: 2 }],
            head_channels: [4, 4],
            joints: 2,
            root_index: 0,
            grid: HeatmapGrid::new(32, 32, 4, 1500.0, 16, 16).unwrap(),
        }
    }

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ImageTensor {
        ImageTensor::new(h, w, (0..h * w * 3).map(|_| rng.random()).collect()).unwrap()
    }

    #[test]
    fn default_config_geometry() {
        let c = Stage1Config::default();
        c.validate().unwrap();
        assert_eq!(c.feature_size(), (4, 4));
        assert_eq!(c.head_output_size(), (32, 32));
        assert_eq!(c.output_channels(), 17 * 16);
        let mut bad = c.clone();
        bad.grid.w = 16;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn forward_is_deterministic_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = Stage1Model::new(tiny_config(), 3).unwrap();
        let img = random_image(&mut rng, 16, 16);
        let (hm1, o1) = stage1_forward(&model, &img).unwrap();
        let (hm2, o2) = stage1_forward(&model, &img).unwrap();
        assert_eq!(hm1, hm2);
        assert_eq!(o1, o2);
        let g = model.config().grid;
        for (uv, d) in o1.uv.iter().zip(&o1.depth_mm) {
            assert!(uv[0] >= 0.0 && uv[0] <= 16.0 && uv[1] >= 0.0 && uv[1] <= 16.0);
            assert!(d.abs() <= 1500.0 + g.z_bin_mm());
        }
        assert_eq!(o1.depth_mm[0], 0.0);
        assert!(matches!(
            stage1_forward(&model, &ImageTensor::zeros(8, 16)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn backward_matches_finite_differences_through_the_network() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut model = Stage1Model::new(tiny_config(), 5).unwrap();
        // larger output weights so the decode actually depends on them
        model.out.weight = Param::uniform(model.out.weight.len(), 0.5, &mut rng);
        let imgs = [random_image(&mut rng, 16, 16), random_image(&mut rng, 16, 16)];
        let refs: Vec<&ImageTensor> = imgs.iter().collect();
        let r: Vec<f64> = (0..2 * 32 * 32 * 8).map(|_| rng.random::<f64>() - 0.5).collect();
        let loss = |m: &Stage1Model| -> f64 {
            let mut m = m.clone();
            let (y, _) = m.forward_train(&refs).unwrap();
            y.iter().zip(&r).map(|(a, b)| a * b).sum()
        };
        let mut m = model.clone();
        let (_, tape) = m.forward_train(&refs).unwrap();
        m.backward(tape, &r);
        let h = 1e-5;
        for (layer, idx) in [(0usize, 3usize), (0, 40), (1, 7)] {
            let analytic = m.backbone[layer].conv.weight.grad[idx];
            let (mut p, mut q) = (model.clone(), model.clone());
            p.backbone[layer].conv.weight.value[idx] += h;
            q.backbone[layer].conv.weight.value[idx] -= h;
            let num = (loss(&p) - loss(&q)) / (2.0 * h);
            assert!((analytic - num).abs() <= 1e-5 * num.abs().max(1e-3), "{analytic} vs {num}");
        }
        let analytic = m.head[1].deconv.weight.grad[11];
        let (mut p, mut q) = (model.clone(), model.clone());
        p.head[1].deconv.weight.value[11] += h;
        q.head[1].deconv.weight.value[11] -= h;
        let num = (loss(&p) - loss(&q)) / (2.0 * h);
        assert!((analytic - num).abs() <= 1e-5 * num.abs().max(1e-3));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s1.bin");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut model = Stage1Model::new(tiny_config(), 9).unwrap();
        let imgs = [random_image(&mut rng, 16, 16)];
        // touch running statistics
        model.forward_train(&[&imgs[0]]).unwrap();
        model.save(&p).unwrap();
        let back = Stage1Model::load(&p).unwrap();
        assert_eq!(back.weights_blob(), model.weights_blob());
        assert_eq!(stage1_forward(&back, &imgs[0]).unwrap(), stage1_forward(&model, &imgs[0]).unwrap());
    }

    #[test]
    fn training_reduces_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut model = Stage1Model::new(tiny_config(), 1).unwrap();
        let samples: Vec<Stage1Sample> = (0..4)
            .map(|i| Stage1Sample {
                image: random_image(&mut rng, 16, 16),
                target: PoseObservation::new(vec![[8.0, 8.0], [4.0 + i as f64, 12.0]], vec![0.0, 200.0]).unwrap(),
                mode: if i == 3 { LossMode::XyOnly } else { LossMode::Full3d },
            })
            .collect();
        let cfg = Stage1TrainConfig {
            epochs: 30,
            batch_size: 2,
            learning_rate: 3e-3,
            lr_decay: 1.0,
            seed: 0,
        };
        let curve = train_stage1(&mut model, &samples, &cfg).unwrap();
        assert!(curve.last().unwrap() < &(curve[0] * 0.7), "{curve:?}");
    }
}
