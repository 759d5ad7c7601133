use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::PoseObservation;

/// Voxel grid of a per-joint 3D heatmap.
///
/// The x/y bins tile the input image uniformly; the z bins tile
/// `[-D/2, D/2]` millimetres around the root. Coordinates refer to bin
/// centres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatmapGrid {
    pub w: usize,
    pub h: usize,
    pub d: usize,
    pub depth_range_mm: f64,
    pub image_w: usize,
    pub image_h: usize,
}

impl HeatmapGrid {
    pub fn new(w: usize, h: usize, d: usize, depth_range_mm: f64, image_w: usize, image_h: usize) -> Result<Self> {
        let g = Self {
            w,
            h,
            d,
            depth_range_mm,
            image_w,
            image_h,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.w == 0 || self.h == 0 || self.d == 0 {
            return Err(Error::InvalidConfig("heatmap grid dimensions must be at least 1".into()));
        }
        if !(self.depth_range_mm.is_finite() && self.depth_range_mm > 0.0) {
            return Err(Error::InvalidConfig("depth range must be positive".into()));
        }
        if self.image_w == 0 || self.image_h == 0 {
            return Err(Error::InvalidConfig("image size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn x_bin_px(&self) -> f64 {
        self.image_w as f64 / self.w as f64
    }

    pub fn y_bin_px(&self) -> f64 {
        self.image_h as f64 / self.h as f64
    }

    pub fn z_bin_mm(&self) -> f64 {
        self.depth_range_mm / self.d as f64
    }

    pub fn x_center(&self, col: usize) -> f64 {
        (col as f64 + 0.5) * self.x_bin_px()
    }

    pub fn y_center(&self, row: usize) -> f64 {
        (row as f64 + 0.5) * self.y_bin_px()
    }

    pub fn z_center(&self, k: usize) -> f64 {
        -self.depth_range_mm / 2.0 + (k as f64 + 0.5) * self.z_bin_mm()
    }

    pub fn voxels(&self) -> usize {
        self.w * self.h * self.d
    }
}

/// Per-joint values on a `J x d x h x w` grid (row-major in that order).
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap3D {
    pub joints: usize,
    pub d: usize,
    pub h: usize,
    pub w: usize,
    pub values: Vec<f64>,
}

impl Heatmap3D {
    pub fn new(joints: usize, d: usize, h: usize, w: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != joints * d * h * w {
            return Err(Error::Shape(format!(
                "{} heatmap values for {joints}x{d}x{h}x{w}",
                values.len()
            )));
        }
        Ok(Self {
            joints,
            d,
            h,
            w,
            values,
        })
    }

    pub fn voxels(&self) -> usize {
        self.d * self.h * self.w
    }

    pub fn joint(&self, j: usize) -> &[f64] {
        let n = self.voxels();
        &self.values[j * n..(j + 1) * n]
    }

    fn check_grid(&self, grid: &HeatmapGrid) -> Result<()> {
        if (self.d, self.h, self.w) != (grid.d, grid.h, grid.w) {
            return Err(Error::Shape(format!(
                "heatmap {}x{}x{} vs grid {}x{}x{}",
                self.d, self.h, self.w, grid.d, grid.h, grid.w
            )));
        }
        Ok(())
    }
}

/// Per-joint softmax over all voxels, computed with max subtraction.
pub fn normalize_heatmap(logits: &Heatmap3D) -> Result<Heatmap3D> {
    if logits.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("heatmap logits".into()));
    }
    let n = logits.voxels();
    let mut values = logits.values.clone();
    for block in values.chunks_exact_mut(n) {
        let max = block.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in block.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        block.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(Heatmap3D { values, ..*logits })
}

/// Probability-weighted centroid of each joint's heatmap. Depths are
/// returned as decoded (relative to the grid centre, not yet to the root).
pub fn soft_argmax(hm: &Heatmap3D, grid: &HeatmapGrid) -> Result<PoseObservation> {
    hm.check_grid(grid)?;
    let mut uv = Vec::with_capacity(hm.joints);
    let mut depth = Vec::with_capacity(hm.joints);
    for j in 0..hm.joints {
        let p = hm.joint(j);
        let sum: f64 = p.iter().sum();
        if !((sum - 1.0).abs() <= 1e-4) || p.iter().any(|v| *v < 0.0) {
            return Err(Error::Unnormalized { joint: j, sum });
        }
        // marginalize then take expectations along each axis
        let (mut ex, mut ey, mut ez) = (0.0, 0.0, 0.0);
        for k in 0..grid.d {
            let slab = &p[k * grid.h * grid.w..(k + 1) * grid.h * grid.w];
            let mut slab_mass = 0.0;
            for y in 0..grid.h {
                let row = &slab[y * grid.w..(y + 1) * grid.w];
                let mut row_mass = 0.0;
                for (x, v) in row.iter().enumerate() {
                    ex += v * grid.x_center(x);
                    row_mass += v;
                }
                ey += row_mass * grid.y_center(y);
                slab_mass += row_mass;
            }
            ez += slab_mass * grid.z_center(k);
        }
        uv.push([ex, ey]);
        depth.push(ez);
    }
    Ok(PoseObservation { uv, depth_mm: depth })
}

/// Gradient of a scalar with respect to the heatmap logits, given its
/// gradient with respect to each decoded `(u, v, z)` and the softmax
/// probabilities.
pub fn decode_backward(probs: &Heatmap3D, grid: &HeatmapGrid, d_obs: &[[f64; 3]]) -> Vec<f64> {
    let n = probs.voxels();
    let mut out = vec![0.0; probs.values.len()];
    for (j, g) in d_obs.iter().enumerate() {
        let p = probs.joint(j);
        let dst = &mut out[j * n..(j + 1) * n];
        // dL/dp_i = g . c_i ; dL/dlogit_i = p_i (dL/dp_i - sum_k p_k dL/dp_k)
        let mut mean = 0.0;
        for k in 0..grid.d {
            let gz = g[2] * grid.z_center(k);
            for y in 0..grid.h {
                let gy = g[1] * grid.y_center(y) + gz;
                for x in 0..grid.w {
                    let i = (k * grid.h + y) * grid.w + x;
                    let gp = g[0] * grid.x_center(x) + gy;
                    dst[i] = gp;
                    mean += p[i] * gp;
                }
            }
        }
        for (d, pi) in dst.iter_mut().zip(p) {
            *d = pi * (*d - mean);
        }
    }
    out
}

/// Which decoded channels a loss supervises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// u, v and root-relative depth.
    Full3d,
    /// Image coordinates only, for 2D-annotated data.
    XyOnly,
}

/// Mean absolute error over supervised channels and joints, in the raw
/// units of the observations (pixels and millimetres).
pub fn stage1_loss(pred: &PoseObservation, target: &PoseObservation, mode: LossMode) -> Result<f64> {
    Ok(stage1_loss_grad(pred, target, mode, [1.0; 3])?.0)
}

/// L1 loss with each channel divided by `scale` first, and its gradient
/// with respect to the prediction `(u, v, depth)`.
pub fn stage1_loss_grad(
    pred: &PoseObservation,
    target: &PoseObservation,
    mode: LossMode,
    scale: [f64; 3],
) -> Result<(f64, Vec<[f64; 3]>)> {
    let j = pred.num_joints();
    if target.num_joints() != j || pred.depth_mm.len() != j {
        return Err(Error::Shape(format!(
            "prediction has {j} joints, target has {}",
            target.num_joints()
        )));
    }
    let channels = match mode {
        LossMode::Full3d => 3,
        LossMode::XyOnly => 2,
    };
    let count = (channels * j) as f64;
    let mut loss = 0.0;
    let mut grad = vec![[0.0; 3]; j];
    for i in 0..j {
        let p = [pred.uv[i][0], pred.uv[i][1], pred.depth_mm[i]];
        let t = [target.uv[i][0], target.uv[i][1], target.depth_mm[i]];
        for c in 0..channels {
            let diff = (p[c] - t[c]) / scale[c];
            loss += diff.abs();
            grad[i][c] = diff.signum() * (diff != 0.0) as u8 as f64 / (scale[c] * count);
        }
    }
    Ok((loss / count, grad))
}
