//! Second stage: a dilated residual temporal convolution network mapping
//! per-frame `(u, v[, depth])` sequences to root-relative 3D poses.
//!
//! Layout: an input convolution (kernel `W`), then `B` residual blocks whose
//! first convolution has kernel `W` and dilation `W^b` for block `b = 1..B`
//! followed by a kernel-1 convolution, then a kernel-1 output layer with
//! `3J` channels. Every convolution but the last is followed by batch
//! norm, ReLU and dropout. The receptive field is `W^(B+1)` frames.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{apply_mask, relu_dropout, BatchNorm, BnCache, Conv1d, Mode, Param};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// `(u, v)` per joint: `2J` channels.
    Pose2d,
    /// `(u, v, depth)` per joint: `3J` channels.
    Pose2dDepth,
}

impl InputMode {
    pub fn channels_per_joint(self) -> usize {
        match self {
            InputMode::Pose2d => 2,
            InputMode::Pose2dDepth => 3,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            InputMode::Pose2d => "2d",
            InputMode::Pose2dDepth => "2d+depth",
        }
    }
}

impl std::str::FromStr for InputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "2d" | "pose2d" => Ok(InputMode::Pose2d),
            "2d+depth" | "pose2d_depth" => Ok(InputMode::Pose2dDepth),
            other => Err(Error::InvalidConfig(format!("unknown input mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaddingMode {
    /// No padding: `T' = T - RF + 1`.
    Valid,
    /// Repeat the first/last frame `(RF - 1) / 2` times so `T' = T`.
    ReplicateEdges,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalModelConfig {
    pub kernel_width: usize,
    pub blocks: usize,
    pub channels: usize,
    pub dropout: f64,
    pub input_mode: InputMode,
    pub joints: usize,
    pub root_index: usize,
    pub padding: PaddingMode,
    /// Millimetres per unit of network output.
    pub output_scale_mm: f64,
}

impl Default for TemporalModelConfig {
    fn default() -> Self {
        Self {
            kernel_width: 3,
            blocks: 4,
            channels: 1024,
            dropout: 0.25,
            input_mode: InputMode::Pose2dDepth,
            joints: 17,
            root_index: 0,
            padding: PaddingMode::ReplicateEdges,
            output_scale_mm: 1000.0,
        }
    }
}

impl TemporalModelConfig {
    pub fn with_wb(kernel_width: usize, blocks: usize) -> Self {
        Self {
            kernel_width,
            blocks,
            ..Self::default()
        }
    }

    pub fn in_channels(&self) -> usize {
        self.joints * self.input_mode.channels_per_joint()
    }

    pub fn out_channels(&self) -> usize {
        3 * self.joints
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.kernel_width == 0 || self.kernel_width.is_multiple_of(2) {
            problems.push(format!("kernel width must be odd and >= 1, got {}", self.kernel_width));
        }
        if self.blocks == 0 {
            problems.push("need at least one residual block".to_string());
        }
        if self.channels == 0 {
            problems.push("channel count must be positive".to_string());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            problems.push(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if self.joints == 0 || self.root_index >= self.joints {
            problems.push("joint count / root index out of range".to_string());
        }
        if !(self.output_scale_mm.is_finite() && self.output_scale_mm > 0.0) {
            problems.push("output scale must be positive".to_string());
        }
        if self.kernel_width > 1
            && (self.kernel_width as u64).checked_pow(self.blocks as u32 + 1).is_none_or(|rf| rf > 1 << 24)
        {
            problems.push("receptive field is unreasonably large".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("; ")))
        }
    }

    /// Closed-form count of trainable parameters.
    pub fn num_params(&self) -> usize {
        let (w, c) = (self.kernel_width, self.channels);
        let input = w * self.in_channels() * c + 2 * c;
        let block = w * c * c + 2 * c + c * c + 2 * c;
        let output = c * self.out_channels() + self.out_channels();
        input + self.blocks * block + output
    }
}

/// Frames seen by one output frame: `W^(B+1)`.
pub fn receptive_field(cfg: &TemporalModelConfig) -> usize {
    cfg.kernel_width.pow(cfg.blocks as u32 + 1)
}

#[derive(Debug, Clone, PartialEq)]
struct ResidualBlock {
    dilated: Conv1d,
    bn1: BatchNorm,
    pointwise: Conv1d,
    bn2: BatchNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalModel {
    config: TemporalModelConfig,
    input: Conv1d,
    input_bn: BatchNorm,
    blocks: Vec<ResidualBlock>,
    output: Conv1d,
}

struct BlockTape {
    x: Vec<f64>,
    len: usize,
    bn1: BnCache,
    mask1: Vec<f64>,
    h1: Vec<f64>,
    bn2: BnCache,
    mask2: Vec<f64>,
}

/// Activations retained by [`TemporalModel::forward`] for the backward pass.
pub struct TemporalTape {
    batch: usize,
    x: Vec<f64>,
    t_in: usize,
    input_bn: BnCache,
    input_mask: Vec<f64>,
    blocks: Vec<BlockTape>,
    last: Vec<f64>,
    t_out: usize,
}

impl TemporalModel {
    /// Fan-in scaled uniform weights, identity batch norm, zero output bias.
    pub fn new(config: TemporalModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, c) = (config.kernel_width, config.channels);
        let input = Conv1d::new(config.in_channels(), c, w, 1, false, &mut rng);
        let blocks = (1..=config.blocks)
            .map(|b| ResidualBlock {
                dilated: Conv1d::new(c, c, w, w.pow(b as u32), false, &mut rng),
                bn1: BatchNorm::new(c),
                pointwise: Conv1d::new(c, c, 1, 1, false, &mut rng),
                bn2: BatchNorm::new(c),
            })
            .collect();
        let mut output = Conv1d::new(c, config.out_channels(), 1, 1, true, &mut rng);
        output.bias = Some(Param::zeros(config.out_channels()));
        Ok(Self {
            input_bn: BatchNorm::new(c),
            config,
            input,
            blocks,
            output,
        })
    }

    pub fn config(&self) -> &TemporalModelConfig {
        &self.config
    }

    pub fn receptive_field(&self) -> usize {
        receptive_field(&self.config)
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn input_conv(&self) -> &Conv1d {
        &self.input
    }

    /// Zeroes every block's kernel-1 convolution.
    pub fn zero_pointwise(&mut self) {
        for b in &mut self.blocks {
            b.pointwise.weight.value.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    fn params(&self) -> Vec<&Param> {
        let mut v = vec![&self.input.weight, &self.input_bn.gamma, &self.input_bn.beta];
        for b in &self.blocks {
            v.extend([&b.dilated.weight, &b.bn1.gamma, &b.bn1.beta, &b.pointwise.weight, &b.bn2.gamma, &b.bn2.beta]);
        }
        v.push(&self.output.weight);
        v.extend(self.output.bias.as_ref());
        v
    }

    /// Trainable parameters in a fixed order.
    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = vec![&mut self.input.weight, &mut self.input_bn.gamma, &mut self.input_bn.beta];
        for b in &mut self.blocks {
            v.extend([
                &mut b.dilated.weight,
                &mut b.bn1.gamma,
                &mut b.bn1.beta,
                &mut b.pointwise.weight,
                &mut b.bn2.gamma,
                &mut b.bn2.beta,
            ]);
        }
        v.push(&mut self.output.weight);
        v.extend(self.output.bias.as_mut());
        v
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    /// All stored tensors (parameters and batch-norm running statistics) in
    /// checkpoint order.
    pub(crate) fn tensors(&self) -> Vec<&Vec<f64>> {
        fn bn(b: &BatchNorm) -> [&Vec<f64>; 4] {
            [&b.gamma.value, &b.beta.value, &b.running_mean, &b.running_var]
        }
        let mut v: Vec<&Vec<f64>> = vec![&self.input.weight.value];
        v.extend(bn(&self.input_bn));
        for b in &self.blocks {
            v.push(&b.dilated.weight.value);
            v.extend(bn(&b.bn1));
            v.push(&b.pointwise.weight.value);
            v.extend(bn(&b.bn2));
        }
        v.push(&self.output.weight.value);
        v.extend(self.output.bias.as_ref().map(|p| &p.value));
        v
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut v: Vec<&mut Vec<f64>> = vec![&mut self.input.weight.value];
        fn bn(b: &mut BatchNorm) -> [&mut Vec<f64>; 4] {
            [&mut b.gamma.value, &mut b.beta.value, &mut b.running_mean, &mut b.running_var]
        }
        v.extend(bn(&mut self.input_bn));
        for b in &mut self.blocks {
            v.push(&mut b.dilated.weight.value);
            v.extend(bn(&mut b.bn1));
            v.push(&mut b.pointwise.weight.value);
            v.extend(bn(&mut b.bn2));
        }
        v.push(&mut self.output.weight.value);
        if let Some(p) = self.output.bias.as_mut() {
            v.push(&mut p.value);
        }
        v
    }

    /// Valid-mode forward over a batch of equal-length windows laid out
    /// `[batch][t_in][in_channels]`. Returns `[batch][t_out][3J]` in mm with
    /// the root pinned to zero. Train mode uses batch statistics (and
    /// updates the running ones) and applies dropout drawn from `rng`.
    pub fn forward(
        &mut self,
        x: &[f64],
        batch: usize,
        t_in: usize,
        mode: Mode,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Vec<f64>, TemporalTape)> {
        let cin = self.config.in_channels();
        if x.len() != batch * t_in * cin || batch == 0 {
            return Err(Error::Shape(format!(
                "expected {batch} x {t_in} x {cin} inputs, got {} values",
                x.len()
            )));
        }
        let rf = self.receptive_field();
        if t_in < rf {
            return Err(Error::TooShort { len: t_in, need: rf });
        }
        let p = self.config.dropout;
        let mut rng = rng;
        let bn_fwd = |bn: &mut BatchNorm, y: &mut [f64]| match mode {
            Mode::Train => bn.forward_train(y),
            Mode::TrainFrozenStats | Mode::Infer => bn.forward_infer(y),
        };
        let act = |y: &mut [f64], rng: &mut Option<&mut ChaCha8Rng>| match mode {
            Mode::Train | Mode::TrainFrozenStats => relu_dropout(y, p, rng.as_deref_mut()),
            Mode::Infer => relu_dropout::<ChaCha8Rng>(y, 0.0, None),
        };

        let mut len = t_in - self.input.span();
        let mut h = self.input.forward(x, batch, t_in);
        let input_bn = bn_fwd(&mut self.input_bn, &mut h);
        let input_mask = act(&mut h, &mut rng);

        let c = self.config.channels;
        let mut tapes = Vec::with_capacity(self.blocks.len());
        for b in &mut self.blocks {
            let out_len = len - b.dilated.span();
            let mut h1 = b.dilated.forward(&h, batch, len);
            let bn1 = bn_fwd(&mut b.bn1, &mut h1);
            let mask1 = act(&mut h1, &mut rng);
            let mut h2 = b.pointwise.forward(&h1, batch, out_len);
            let bn2 = bn_fwd(&mut b.bn2, &mut h2);
            let mask2 = act(&mut h2, &mut rng);
            let off = b.dilated.span() / 2;
            for n in 0..batch {
                for t in 0..out_len {
                    let src = (n * len + off + t) * c;
                    let dst = (n * out_len + t) * c;
                    for k in 0..c {
                        h2[dst + k] += h[src + k];
                    }
                }
            }
            tapes.push(BlockTape {
                x: std::mem::replace(&mut h, h2),
                len,
                bn1,
                mask1,
                h1,
                bn2,
                mask2,
            });
            len = out_len;
        }
        let mut y = self.output.forward(&h, batch, len);
        let scale = self.config.output_scale_mm;
        let root = self.config.root_index;
        for row in y.chunks_exact_mut(3 * self.config.joints) {
            row.iter_mut().for_each(|v| *v *= scale);
            row[3 * root..3 * root + 3].fill(0.0);
        }
        Ok((
            y,
            TemporalTape {
                batch,
                x: x.to_vec(),
                t_in,
                input_bn,
                input_mask,
                blocks: tapes,
                last: h,
                t_out: len,
            },
        ))
    }

    /// Accumulates parameter gradients for `dy` (gradient w.r.t. the mm
    /// output) and returns the input gradient.
    pub fn backward(&mut self, tape: TemporalTape, dy: &[f64]) -> Vec<f64> {
        let batch = tape.batch;
        let j3 = 3 * self.config.joints;
        assert_eq!(dy.len(), batch * tape.t_out * j3, "output gradient size");
        let scale = self.config.output_scale_mm;
        let root = self.config.root_index;
        let mut g: Vec<f64> = dy.to_vec();
        for row in g.chunks_exact_mut(j3) {
            row.iter_mut().for_each(|v| *v *= scale);
            row[3 * root..3 * root + 3].fill(0.0);
        }
        let mut g = self.output.backward(&tape.last, batch, tape.t_out, &g);
        let c = self.config.channels;
        for (b, bt) in self.blocks.iter_mut().zip(tape.blocks).rev() {
            let out_len = bt.len - b.dilated.span();
            let off = b.dilated.span() / 2;
            let mut dx = vec![0.0; bt.x.len()];
            for n in 0..batch {
                for t in 0..out_len {
                    let src = (n * out_len + t) * c;
                    let dst = (n * bt.len + off + t) * c;
                    for k in 0..c {
                        dx[dst + k] += g[src + k];
                    }
                }
            }
            apply_mask(&mut g, &bt.mask2);
            let g2 = b.bn2.backward(&bt.bn2, &g);
            let mut g1 = b.pointwise.backward(&bt.h1, batch, out_len, &g2);
            apply_mask(&mut g1, &bt.mask1);
            let g1 = b.bn1.backward(&bt.bn1, &g1);
            let gx = b.dilated.backward(&bt.x, batch, bt.len, &g1);
            dx.iter_mut().zip(&gx).for_each(|(a, b)| *a += b);
            g = dx;
        }
        apply_mask(&mut g, &tape.input_mask);
        let g = self.input_bn.backward(&tape.input_bn, &g);
        self.input.backward(&tape.x, batch, tape.t_in, &g)
    }

    /// Infer-mode forward over one whole sequence (`[T][in_channels]`),
    /// honouring the configured padding. Returns `[T'][3J]` in mm.
    pub fn infer(&self, x: &[f64], t: usize) -> Result<Vec<f64>> {
        let (y, _) = temporal_forward_impl(&mut self.clone(), x, t, Mode::Infer, None)?;
        Ok(y)
    }
}

/// Pads a `[T][C]` sequence by repeating its edge frames `pad` times per side.
pub fn replicate_pad(x: &[f64], t: usize, channels: usize, pad: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity((t + 2 * pad) * channels);
    let first = &x[..channels];
    let last = &x[(t - 1) * channels..t * channels];
    for _ in 0..pad {
        out.extend_from_slice(first);
    }
    out.extend_from_slice(&x[..t * channels]);
    for _ in 0..pad {
        out.extend_from_slice(last);
    }
    out
}

fn temporal_forward_impl(
    model: &mut TemporalModel,
    inputs: &[f64],
    t: usize,
    mode: Mode,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(Vec<f64>, usize)> {
    let cin = model.config.in_channels();
    if t == 0 || inputs.len() != t * cin {
        return Err(Error::Shape(format!(
            "expected {t} frames x {cin} channels, got {} values",
            inputs.len()
        )));
    }
    let rf = model.receptive_field();
    match model.config.padding {
        PaddingMode::Valid => {
            let (y, tape) = model.forward(inputs, 1, t, mode, rng)?;
            Ok((y, tape.t_out))
        }
        PaddingMode::ReplicateEdges => {
            let padded = replicate_pad(inputs, t, cin, (rf - 1) / 2);
            let (y, _) = model.forward(&padded, 1, t + rf - 1, mode, rng)?;
            Ok((y, t))
        }
    }
}

/// Runs the model on one sequence of normalized inputs (`[T][in_channels]`).
/// Returns the `[T'][3J]` root-relative output in mm and `T'`.
pub fn temporal_forward(
    model: &mut TemporalModel,
    inputs: &[f64],
    t: usize,
    mode: Mode,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(Vec<f64>, usize)> {
    temporal_forward_impl(model, inputs, t, mode, rng)
}

/// Analytic gradients of `loss_scale * 0.5 * |y - target|^2` in infer mode
/// (running batch-norm statistics, no dropout).
pub struct GradientReport {
    pub loss: f64,
    pub input_grad: Vec<f64>,
    pub param_grads: Vec<Vec<f64>>,
}

pub fn l2_gradients(
    model: &TemporalModel,
    x: &[f64],
    t_in: usize,
    target: &[f64],
    loss_scale: f64,
) -> Result<GradientReport> {
    let mut m = model.clone();
    m.zero_grad();
    let (y, tape) = m.forward(x, 1, t_in, Mode::Infer, None)?;
    if y.len() != target.len() {
        return Err(Error::Shape("target size differs from output".into()));
    }
    let diff: Vec<f64> = y.iter().zip(target).map(|(a, b)| a - b).collect();
    let loss = 0.5 * loss_scale * diff.iter().map(|d| d * d).sum::<f64>();
    let dy: Vec<f64> = diff.iter().map(|d| loss_scale * d).collect();
    let input_grad = m.backward(tape, &dy);
    let param_grads = m.params_mut().into_iter().map(|p| p.grad.clone()).collect();
    Ok(GradientReport {
        loss,
        input_grad,
        param_grads,
    })
}

fn l2_loss(model: &TemporalModel, x: &[f64], t_in: usize, target: &[f64]) -> f64 {
    let mut m = model.clone();
    let (y, _) = m.forward(x, 1, t_in, Mode::Infer, None).expect("shapes checked by caller");
    0.5 * y.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
}

/// Compares analytic input and weight gradients against central finite
/// differences on a random instance and returns the worst relative error.
///
/// Batch norm runs on (randomized) running statistics and dropout is off.
/// Every input entry and up to `max_weight_checks` entries of every
/// parameter tensor are probed.
pub fn model_gradient_check(cfg: &TemporalModelConfig, seed: u64, max_weight_checks: usize) -> Result<f64> {
    let mut model = TemporalModel::new(cfg.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    for bn in model.batch_norms_mut() {
        bn.running_mean.iter_mut().for_each(|v| *v = rng.random::<f64>() * 0.2 - 0.1);
        bn.running_var.iter_mut().for_each(|v| *v = 0.5 + rng.random::<f64>());
        bn.beta.value.iter_mut().for_each(|v| *v = rng.random::<f64>() * 0.2);
    }
    let rf = model.receptive_field();
    let t_in = rf + 3;
    let x: Vec<f64> = (0..t_in * cfg.in_channels()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let t_out = t_in - rf + 1;
    let target: Vec<f64> = (0..t_out * cfg.out_channels()).map(|_| rng.random::<f64>() * 200.0 - 100.0).collect();

    let report = l2_gradients(&model, &x, t_in, &target, 1.0)?;
    let h = 1e-6;
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for i in 0..x.len() {
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp[i] += h;
        xm[i] -= h;
        analytic.push(report.input_grad[i]);
        numeric.push((l2_loss(&model, &xp, t_in, &target) - l2_loss(&model, &xm, t_in, &target)) / (2.0 * h));
    }
    let n_params = report.param_grads.len();
    for pi in 0..n_params {
        let len = report.param_grads[pi].len();
        let stride = (len / max_weight_checks.max(1)).max(1);
        for idx in (0..len).step_by(stride) {
            let mut mp = model.clone();
            mp.params_mut()[pi].value[idx] += h;
            let mut mm = model.clone();
            mm.params_mut()[pi].value[idx] -= h;
            analytic.push(report.param_grads[pi][idx]);
            numeric.push((l2_loss(&mp, &x, t_in, &target) - l2_loss(&mm, &x, t_in, &target)) / (2.0 * h));
        }
    }
    let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-6 * scale).max(1e-12);
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max))
}

impl TemporalModel {
    fn batch_norms_mut(&mut self) -> Vec<&mut BatchNorm> {
        let mut v = vec![&mut self.input_bn];
        for b in &mut self.blocks {
            v.push(&mut b.bn1);
            v.push(&mut b.bn2);
        }
        v
    }
}
