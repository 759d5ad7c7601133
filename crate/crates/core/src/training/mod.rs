//! Second-stage training with Gaussian input-noise augmentation,
//! checkpointing, evaluation and the input-mode x receptive-field grid.

mod checkpoint;
mod grid;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::camera::{normalize_observation, CameraIntrinsics, NormalizationSpec};
use crate::error::{Error, Result};
use crate::metrics::{make_report, mpjpe, EvalReport};
use crate::nn::{Adam, Mode};
use crate::pose::{Pose3D, PoseSequence};
use crate::stage2::{receptive_field, replicate_pad, InputMode, TemporalModel, TemporalModelConfig};

pub use checkpoint::{Checkpoint, EpochRecord};
pub use grid::{run_ablation_grid, AblationCell, AblationRow, AblationTable, GridSpec, STANDARD_WB};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationConfig {
    /// Standard deviation in normalized input units.
    pub sigma: f64,
    pub enabled: bool,
}

impl AugmentationConfig {
    pub fn off() -> Self {
        Self {
            sigma: 0.0,
            enabled: false,
        }
    }

    pub fn gaussian(sigma: f64) -> Self {
        Self {
            sigma,
            enabled: sigma > 0.0,
        }
    }

    pub fn is_active(&self) -> bool {
        self.enabled && self.sigma > 0.0
    }
}

/// Adds i.i.d. `Normal(0, sigma)` to every channel of a `[T][joints * cpj]`
/// block except the root's depth channel.
pub fn augment<R: Rng + ?Sized>(
    inputs: &[f64],
    joints: usize,
    input_mode: InputMode,
    root: usize,
    cfg: &AugmentationConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let cpj = input_mode.channels_per_joint();
    let frame = joints * cpj;
    if frame == 0 || !inputs.len().is_multiple_of(frame) || root >= joints {
        return Err(Error::Shape(format!("{} values is not a whole number of {frame}-channel frames", inputs.len())));
    }
    let mut out = inputs.to_vec();
    if !cfg.is_active() {
        return Ok(out);
    }
    let normal = Normal::new(0.0, cfg.sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let pinned = (cpj == 3).then_some(root * 3 + 2);
    for (i, v) in out.iter_mut().enumerate() {
        if Some(i % frame) != pinned {
            *v += normal.sample(rng);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Windows per optimizer step.
    pub batch_size: usize,
    /// Input frames per training window; at least the receptive field.
    pub window_length: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub seed: u64,
    pub augmentation: AugmentationConfig,
    pub input_mode: InputMode,
    /// Epochs that normalize with batch statistics; afterwards batch norm
    /// runs on its frozen running statistics.
    pub bn_warmup_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 80,
            batch_size: 8,
            window_length: 243 + 63,
            learning_rate: 1e-3,
            lr_decay: 0.95,
            seed: 0,
            augmentation: AugmentationConfig::off(),
            input_mode: InputMode::Pose2dDepth,
            bn_warmup_epochs: 5,
        }
    }
}

impl TrainConfig {
    /// Defaults with a window of `rf + 63` input frames.
    pub fn for_model(mcfg: &TemporalModelConfig) -> Self {
        Self {
            window_length: receptive_field(mcfg) + 63,
            input_mode: mcfg.input_mode,
            ..Self::default()
        }
    }

    pub fn validate(&self, mcfg: &TemporalModelConfig) -> Result<()> {
        let mut problems = Vec::new();
        if self.epochs == 0 || self.batch_size == 0 {
            problems.push("epochs and batch size must be positive".to_string());
        }
        if !(self.learning_rate > 0.0 && self.lr_decay > 0.0) {
            problems.push("learning rate and decay must be positive".to_string());
        }
        if self.augmentation.sigma < 0.0 || !self.augmentation.sigma.is_finite() {
            problems.push("augmentation sigma must be >= 0".to_string());
        }
        let rf = receptive_field(mcfg);
        if self.window_length < rf {
            problems.push(format!("window length {} is below the receptive field {rf}", self.window_length));
        }
        if self.input_mode != mcfg.input_mode {
            problems.push("training and model input modes differ".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("; ")))
        }
    }
}

/// Normalized network inputs of a sequence, `[T][J * cpj]`.
pub fn sequence_inputs(
    seq: &PoseSequence,
    cam: &CameraIntrinsics,
    norm: &NormalizationSpec,
    mode: InputMode,
) -> Result<Vec<f64>> {
    let cpj = mode.channels_per_joint();
    let mut out = Vec::with_capacity(seq.len() * seq.num_joints() * cpj);
    for (t, obs) in seq.observations()?.into_iter().enumerate() {
        let block = normalize_observation(obs, cam, norm).map_err(|e| Error::at_frame(t, e))?;
        for r in block {
            out.extend_from_slice(&r[..cpj]);
        }
    }
    Ok(out)
}

fn sequence_targets(seq: &PoseSequence) -> Result<Vec<f64>> {
    Ok(seq.gt_poses()?.into_iter().flat_map(|p| p.coords_mm.iter().flatten().copied()).collect())
}

/// Mean per-joint Euclidean distance and its gradient w.r.t. `pred`.
pub fn mpjpe_loss(pred: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let n = (pred.len() / 3) as f64;
    let mut grad = vec![0.0; pred.len()];
    let mut loss = 0.0;
    for ((p, g), d) in pred.chunks_exact(3).zip(target.chunks_exact(3)).zip(grad.chunks_exact_mut(3)) {
        let e = [p[0] - g[0], p[1] - g[1], p[2] - g[2]];
        let r = (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt();
        loss += r;
        if r > 0.0 {
            for k in 0..3 {
                d[k] = e[k] / (r * n);
            }
        }
    }
    (loss / n, grad)
}

struct Prepared {
    /// Replicate-padded inputs.
    inputs: Vec<f64>,
    targets: Vec<f64>,
    frames: usize,
}

fn prepare(
    seqs: &[PoseSequence],
    cam: &CameraIntrinsics,
    norm: &NormalizationSpec,
    mcfg: &TemporalModelConfig,
) -> Result<Vec<Prepared>> {
    let cin = mcfg.in_channels();
    let pad = (receptive_field(mcfg) - 1) / 2;
    seqs.iter()
        .map(|s| {
            if s.num_joints() != mcfg.joints {
                return Err(Error::SkeletonMismatch(format!(
                    "sequence has {} joints, model expects {}",
                    s.num_joints(),
                    mcfg.joints
                )));
            }
            let x = sequence_inputs(s, cam, norm, mcfg.input_mode)?;
            Ok(Prepared {
                inputs: replicate_pad(&x, s.len(), cin, pad),
                targets: sequence_targets(s)?,
                frames: s.len(),
            })
        })
        .collect()
}

/// Infer-mode root-relative predictions for a whole sequence.
pub fn predict_sequence(
    model: &TemporalModel,
    seq: &PoseSequence,
    cam: &CameraIntrinsics,
    norm: &NormalizationSpec,
) -> Result<Vec<Pose3D>> {
    let mcfg = model.config();
    if seq.num_joints() != mcfg.joints {
        return Err(Error::SkeletonMismatch(format!(
            "sequence has {} joints, model expects {}",
            seq.num_joints(),
            mcfg.joints
        )));
    }
    let x = sequence_inputs(seq, cam, norm, mcfg.input_mode)?;
    let pad = (model.receptive_field() - 1) / 2;
    let padded = replicate_pad(&x, seq.len(), mcfg.in_channels(), pad);
    let mut m = model.clone();
    let (y, _) = m.forward(&padded, 1, seq.len() + 2 * pad, Mode::Infer, None)?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("model produced non-finite output".into()));
    }
    Ok(y.chunks_exact(3 * mcfg.joints)
        .map(|r| Pose3D {
            coords_mm: r.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        })
        .collect())
}

fn val_mpjpe(model: &TemporalModel, val: &[PoseSequence], cam: &CameraIntrinsics, norm: &NormalizationSpec) -> Result<Option<f64>> {
    if val.is_empty() {
        return Ok(None);
    }
    let (mut total, mut frames) = (0.0, 0usize);
    for s in val {
        let pred = predict_sequence(model, s, cam, norm)?;
        let gt: Vec<Pose3D> = s.gt_poses()?.into_iter().cloned().collect();
        total += mpjpe(&pred, &gt)? * s.len() as f64;
        frames += s.len();
    }
    Ok(Some(total / frames as f64))
}

/// Trains a fresh model (seeded by `tcfg.seed`) on random windows of the
/// training sequences and returns the checkpoint with the best validation
/// MPJPE (or the last epoch when `val` is empty).
pub fn train_second_stage(
    train: &[PoseSequence],
    val: &[PoseSequence],
    cam: &CameraIntrinsics,
    mcfg: &TemporalModelConfig,
    tcfg: &TrainConfig,
) -> Result<Checkpoint> {
    train_with_progress(train, val, cam, mcfg, tcfg, |_| {})
}

/// [`train_second_stage`] with a per-epoch callback.
pub fn train_with_progress(
    train: &[PoseSequence],
    val: &[PoseSequence],
    cam: &CameraIntrinsics,
    mcfg: &TemporalModelConfig,
    tcfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Checkpoint> {
    mcfg.validate()?;
    tcfg.validate(mcfg)?;
    if train.is_empty() {
        return Err(Error::Missing("no training sequences".into()));
    }
    let norm = NormalizationSpec::default();
    let data = prepare(train, cam, &norm, mcfg)?;
    let rf = receptive_field(mcfg);
    let out_len = tcfg.window_length - rf + 1;
    if let Some(p) = data.iter().find(|p| p.frames < out_len) {
        return Err(Error::TooShort {
            len: p.frames,
            need: out_len,
        });
    }
    let cin = mcfg.in_channels();
    let j3 = mcfg.out_channels();

    let mut model = TemporalModel::new(mcfg.clone(), tcfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    rng.set_stream(1);
    let mut adam = Adam::new(tcfg.learning_rate);
    let mut history = Vec::with_capacity(tcfg.epochs);
    let mut best: Option<(f64, usize, TemporalModel)> = None;

    for epoch in 0..tcfg.epochs {
        adam.lr = tcfg.learning_rate * tcfg.lr_decay.powi(epoch as i32);
        let mut windows: Vec<(usize, usize)> = Vec::new();
        for (si, p) in data.iter().enumerate() {
            for _ in 0..p.frames.div_ceil(out_len) {
                windows.push((si, rng.random_range(0..=p.frames - out_len)));
            }
        }
        windows.shuffle(&mut rng);
        let (mut loss_sum, mut steps) = (0.0, 0usize);
        for batch in windows.chunks(tcfg.batch_size) {
            let mut x = Vec::with_capacity(batch.len() * tcfg.window_length * cin);
            let mut target = Vec::with_capacity(batch.len() * out_len * j3);
            for &(si, start) in batch {
                let p = &data[si];
                x.extend_from_slice(&p.inputs[start * cin..(start + tcfg.window_length) * cin]);
                target.extend_from_slice(&p.targets[start * j3..(start + out_len) * j3]);
            }
            let x = augment(&x, mcfg.joints, mcfg.input_mode, mcfg.root_index, &tcfg.augmentation, &mut rng)?;
            model.zero_grad();
            let mode = if epoch < tcfg.bn_warmup_epochs { Mode::Train } else { Mode::TrainFrozenStats };
            let (y, tape) = model.forward(&x, batch.len(), tcfg.window_length, mode, Some(&mut rng))?;
            let (loss, dy) = mpjpe_loss(&y, &target);
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("non-finite loss at epoch {epoch}")));
            }
            model.backward(tape, &dy);
            adam.step(&mut model.params_mut());
            loss_sum += loss;
            steps += 1;
        }
        let train_loss = loss_sum / steps as f64;
        let val_mm = val_mpjpe(&model, val, cam, &norm)?;
        let rec = EpochRecord {
            epoch,
            learning_rate: adam.lr,
            train_loss_mm: train_loss,
            val_mpjpe_mm: val_mm,
        };
        on_epoch(&rec);
        history.push(rec);
        let score = val_mm.unwrap_or(train_loss);
        let improve = match &best {
            None => true,
            Some((b, _, _)) => val_mm.is_none() || score < *b,
        };
        if improve {
            best = Some((score, epoch, model.clone()));
        }
    }
    let (_, best_epoch, mut model) = best.expect("at least one epoch");
    model.zero_grad();
    Ok(Checkpoint {
        model,
        train_config: tcfg.clone(),
        camera: *cam,
        normalization: norm,
        loss_curve: history.iter().map(|r| r.train_loss_mm).collect(),
        history,
        best_epoch,
    })
}

/// Infer-mode evaluation under both protocols.
pub fn evaluate_model(ckpt: &Checkpoint, test: &[PoseSequence]) -> Result<EvalReport> {
    let (names, preds, gts) = predict_all(ckpt, test)?;
    let joints = test.first().map(|s| s.skeleton.joint_names.clone()).unwrap_or_default();
    make_report(&names, &joints, &preds, &gts)
}

type Predictions = (Vec<String>, Vec<Vec<Pose3D>>, Vec<Vec<Pose3D>>);

fn predict_all(ckpt: &Checkpoint, test: &[PoseSequence]) -> Result<Predictions> {
    let mut names = Vec::new();
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for (i, s) in test.iter().enumerate() {
        names.push(format!("seq{i:03}"));
        preds.push(predict_sequence(&ckpt.model, s, &ckpt.camera, &ckpt.normalization)?);
        gts.push(s.gt_poses()?.into_iter().cloned().collect());
    }
    Ok((names, preds, gts))
}

/// Writes each frame's refined pose into `pred`.
pub fn refine_sequence(ckpt: &Checkpoint, seq: &PoseSequence) -> Result<PoseSequence> {
    let pred = predict_sequence(&ckpt.model, seq, &ckpt.camera, &ckpt.normalization)?;
    let mut out = seq.clone();
    for (f, p) in out.frames.iter_mut().zip(pred) {
        f.pred = Some(p);
    }
    Ok(out)
}
