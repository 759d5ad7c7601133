//! Python bindings: sequences, the synthetic data generator, metrics and
//! second-stage training. Poses cross the boundary as nested lists,
//! `[frames][joints][3]` in millimetres.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use posedepth::datagen::{backproject_observations, generate_motion, simulate_stage1, MotionGenConfig, Stage1NoiseModel};
use posedepth::stage2::{InputMode, TemporalModelConfig};
use posedepth::training::{evaluate_model, refine_sequence, train_second_stage, AugmentationConfig, Checkpoint, TrainConfig};
use posedepth::{CameraIntrinsics, Error, Pose3D, PoseSequence, SkeletonSpec};

type Frames = Vec<Vec<[f64; 3]>>;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn poses(frames: Frames) -> Vec<Pose3D> {
    frames.into_iter().map(|coords_mm| Pose3D { coords_mm }).collect()
}

/// A pose sequence: ground truth, simulated observations and refined predictions.
#[pyclass(name = "Sequence", module = "posedepth_py", skip_from_py_object)]
#[derive(Clone)]
pub struct PySequence {
    inner: PoseSequence,
}

#[pymethods]
impl PySequence {
    /// Synthetic 17-joint motion of `frames` frames at `fps`.
    #[staticmethod]
    #[pyo3(signature = (frames=600, seed=0, fps=50.0))]
    fn synth(frames: usize, seed: u64, fps: f64) -> PyResult<Self> {
        let cfg = MotionGenConfig {
            frames,
            fps,
            seed,
            ..Default::default()
        };
        let inner = generate_motion(&SkeletonSpec::h36m17(), &cfg).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: posedepth::read_sequence(path).map_err(py_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        posedepth::write_sequence(&self.inner, path).map_err(py_err)
    }

    /// Copy with simulated first-stage observations under the benchmark camera.
    #[pyo3(signature = (seed=0, sigma_uv_px=4.0, sigma_depth_mm=46.7, outlier_rate=0.02, outlier_scale=3.0, rho=0.0))]
    fn simulate(
        &self,
        seed: u64,
        sigma_uv_px: f64,
        sigma_depth_mm: f64,
        outlier_rate: f64,
        outlier_scale: f64,
        rho: f64,
    ) -> PyResult<Self> {
        let nm = Stage1NoiseModel {
            sigma_uv_px,
            sigma_depth_mm,
            outlier_rate,
            outlier_scale,
            rho,
            seed,
        };
        let inner = simulate_stage1(&self.inner, &CameraIntrinsics::benchmark(), &nm).map_err(py_err)?;
        Ok(Self { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn joint_names(&self) -> Vec<String> {
        self.inner.skeleton.joint_names.clone()
    }

    /// Root-relative ground truth.
    fn gt(&self) -> PyResult<Frames> {
        Ok(self.inner.gt_poses().map_err(py_err)?.into_iter().map(|p| p.coords_mm.clone()).collect())
    }

    /// Observations back-projected to root-relative 3D with the true root depth.
    fn observed(&self) -> PyResult<Frames> {
        let p = backproject_observations(&self.inner, &CameraIntrinsics::benchmark()).map_err(py_err)?;
        Ok(p.into_iter().map(|p| p.coords_mm).collect())
    }

    /// Refined predictions, or None if any frame lacks one.
    fn pred(&self) -> Option<Frames> {
        self.inner.frames.iter().map(|f| f.pred.as_ref().map(|p| p.coords_mm.clone())).collect()
    }

    fn __repr__(&self) -> String {
        format!("Sequence(frames={}, joints={})", self.inner.len(), self.inner.num_joints())
    }
}

/// A trained temporal refiner.
#[pyclass(name = "Model", module = "posedepth_py")]
pub struct PyModel {
    inner: Checkpoint,
}

fn unwrap_seqs(seqs: &[PyRef<'_, PySequence>]) -> Vec<PoseSequence> {
    seqs.iter().map(|s| s.inner.clone()).collect()
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    #[pyo3(signature = (train, val=Vec::new(), kernel_width=3, blocks=2, channels=64, dropout=0.0, input_mode="2d+depth",
        epochs=20, sigma=0.0, learning_rate=1e-3, lr_decay=0.95, batch_size=8, window_margin=31, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        train: Vec<PyRef<'_, PySequence>>,
        val: Vec<PyRef<'_, PySequence>>,
        kernel_width: usize,
        blocks: usize,
        channels: usize,
        dropout: f64,
        input_mode: &str,
        epochs: usize,
        sigma: f64,
        learning_rate: f64,
        lr_decay: f64,
        batch_size: usize,
        window_margin: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let mode: InputMode = input_mode.parse().map_err(py_err)?;
        let mcfg = TemporalModelConfig {
            kernel_width,
            blocks,
            channels,
            dropout,
            input_mode: mode,
            ..TemporalModelConfig::default()
        };
        let tcfg = TrainConfig {
            epochs,
            batch_size,
            window_length: posedepth::stage2::receptive_field(&mcfg) + window_margin,
            learning_rate,
            lr_decay,
            seed,
            augmentation: AugmentationConfig::gaussian(sigma),
            ..TrainConfig::for_model(&mcfg)
        };
        let ck = train_second_stage(&unwrap_seqs(&train), &unwrap_seqs(&val), &CameraIntrinsics::benchmark(), &mcfg, &tcfg)
            .map_err(py_err)?;
        Ok(Self { inner: ck })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: Checkpoint::load(path).map_err(py_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(py_err)
    }

    #[getter]
    fn receptive_field(&self) -> usize {
        self.inner.model.receptive_field()
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.model.num_params()
    }

    #[getter]
    fn loss_curve(&self) -> Vec<f64> {
        self.inner.loss_curve.clone()
    }

    /// `(protocol1_mm, protocol2_mm)` over the given sequences.
    fn evaluate(&self, seqs: Vec<PyRef<'_, PySequence>>) -> PyResult<(f64, f64)> {
        let r = evaluate_model(&self.inner, &unwrap_seqs(&seqs)).map_err(py_err)?;
        Ok((r.protocol1_mm, r.protocol2_mm))
    }

    fn refine(&self, seq: &PySequence) -> PyResult<PySequence> {
        Ok(PySequence {
            inner: refine_sequence(&self.inner, &seq.inner).map_err(py_err)?,
        })
    }
}

#[pyfunction]
fn receptive_field(kernel_width: usize, blocks: usize) -> usize {
    posedepth::stage2::receptive_field(&TemporalModelConfig::with_wb(kernel_width, blocks))
}

/// Mean per-joint position error in mm.
#[pyfunction]
fn mpjpe(pred: Frames, gt: Frames) -> PyResult<f64> {
    posedepth::metrics::mpjpe(&poses(pred), &poses(gt)).map_err(py_err)
}

/// MPJPE after per-frame similarity alignment.
#[pyfunction]
fn p_mpjpe(pred: Frames, gt: Frames) -> PyResult<f64> {
    posedepth::metrics::p_mpjpe(&poses(pred), &poses(gt)).map_err(py_err)
}

/// `(scale, rotation rows, translation, aligned points)` mapping `pred` onto `gt`.
#[pyfunction]
#[allow(clippy::type_complexity)]
fn procrustes_align(pred: Vec<[f64; 3]>, gt: Vec<[f64; 3]>) -> PyResult<(f64, [[f64; 3]; 3], [f64; 3], Vec<[f64; 3]>)> {
    let (t, aligned) = posedepth::metrics::procrustes_align(&pred, &gt).map_err(py_err)?;
    let r = t.rotation;
    let rows = [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]);
    Ok((t.scale, rows, [t.translation.x, t.translation.y, t.translation.z], aligned))
}

#[pymodule]
fn posedepth_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySequence>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(receptive_field, m)?)?;
    m.add_function(wrap_pyfunction!(mpjpe, m)?)?;
    m.add_function(wrap_pyfunction!(p_mpjpe, m)?)?;
    m.add_function(wrap_pyfunction!(procrustes_align, m)?)?;
    Ok(())
}
