//! Evaluation protocols: MPJPE (protocol 1) and per-frame Procrustes-aligned
//! MPJPE (protocol 2).

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::Pose3D;

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn check_pair(pred: &[Pose3D], gt: &[Pose3D]) -> Result<usize> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::Shape(format!(
            "pred has {} frames, gt has {}",
            pred.len(),
            gt.len()
        )));
    }
    let j = gt[0].num_joints();
    for (t, (p, g)) in pred.iter().zip(gt).enumerate() {
        if p.num_joints() != j || g.num_joints() != j {
            return Err(Error::Shape(format!("frame {t}: joint count differs from {j}")));
        }
    }
    Ok(j)
}

/// Per-joint distances of one frame.
pub fn joint_errors(pred: &Pose3D, gt: &Pose3D) -> Vec<f64> {
    pred.coords_mm.iter().zip(&gt.coords_mm).map(|(a, b)| dist(a, b)).collect()
}

/// Mean Euclidean distance over all frames and joints, in mm.
pub fn mpjpe(pred: &[Pose3D], gt: &[Pose3D]) -> Result<f64> {
    let j = check_pair(pred, gt)?;
    let total: f64 = pred.iter().zip(gt).flat_map(|(p, g)| joint_errors(p, g)).sum();
    Ok(total / (pred.len() * j) as f64)
}

/// `x -> s * R * x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &[f64; 3]) -> [f64; 3] {
        let y = self.scale * (self.rotation * Vector3::from(*p)) + self.translation;
        [y.x, y.y, y.z]
    }

    pub fn apply_all(&self, pts: &[[f64; 3]]) -> Vec<[f64; 3]> {
        pts.iter().map(|p| self.apply(p)).collect()
    }
}

/// Sum of squared distances between two point sets.
pub fn sum_sq_residual(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    a.iter().zip(b).map(|(p, q)| dist(p, q).powi(2)).sum()
}

fn centroid(pts: &[[f64; 3]]) -> Vector3<f64> {
    pts.iter().fold(Vector3::zeros(), |acc, p| acc + Vector3::from(*p)) / pts.len() as f64
}

fn variance(pts: &[[f64; 3]], mu: &Vector3<f64>) -> f64 {
    pts.iter().map(|p| (Vector3::from(*p) - mu).norm_squared()).sum::<f64>() / pts.len() as f64
}

/// Least-squares similarity transform mapping `pred` onto `gt`, restricted
/// to proper rotations. Returns the transform and the aligned prediction.
pub fn procrustes_align(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> Result<(SimilarityTransform, Vec<[f64; 3]>)> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::Shape(format!("{} vs {} points", pred.len(), gt.len())));
    }
    if pred.iter().chain(gt).flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("procrustes input".into()));
    }
    let (mu_p, mu_g) = (centroid(pred), centroid(gt));
    let (var_p, var_g) = (variance(pred, &mu_p), variance(gt, &mu_g));
    let tiny = |var: f64, mu: &Vector3<f64>| var <= 1e-20 * (1.0 + mu.norm_squared());
    if tiny(var_g, &mu_g) {
        return Err(Error::Degenerate("ground-truth points coincide".into()));
    }
    if tiny(var_p, &mu_p) {
        return Err(Error::Degenerate("predicted points coincide; scale undefined".into()));
    }
    let mut cov = Matrix3::zeros();
    for (p, g) in pred.iter().zip(gt) {
        cov += (Vector3::from(*g) - mu_g) * (Vector3::from(*p) - mu_p).transpose();
    }
    cov /= pred.len() as f64;
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut sign = Vector3::new(1.0, 1.0, 1.0);
    if (u * v_t).determinant() < 0.0 {
        sign.z = -1.0;
    }
    // singular values are sorted in decreasing order
    let rotation = u * Matrix3::from_diagonal(&sign) * v_t;
    let trace: f64 = svd.singular_values.component_mul(&sign).sum();
    if !(trace > 0.0) {
        return Err(Error::Degenerate("cross-covariance has no positive scale solution".into()));
    }
    let scale = trace / var_p;
    let translation = mu_g - scale * rotation * mu_p;
    let tf = SimilarityTransform {
        scale,
        rotation,
        translation,
    };
    let aligned = tf.apply_all(pred);
    Ok((tf, aligned))
}

/// Per-frame aligned joint errors.
fn aligned_errors(pred: &Pose3D, gt: &Pose3D) -> Result<Vec<f64>> {
    let (_, aligned) = procrustes_align(&pred.coords_mm, &gt.coords_mm)?;
    Ok(aligned.iter().zip(&gt.coords_mm).map(|(a, b)| dist(a, b)).collect())
}

/// MPJPE after per-frame similarity alignment, in mm.
pub fn p_mpjpe(pred: &[Pose3D], gt: &[Pose3D]) -> Result<f64> {
    let j = check_pair(pred, gt)?;
    let mut total = 0.0;
    for (t, (p, g)) in pred.iter().zip(gt).enumerate() {
        total += aligned_errors(p, g).map_err(|e| Error::at_frame(t, e))?.iter().sum::<f64>();
    }
    Ok(total / (pred.len() * j) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceScore {
    pub name: String,
    pub frames: usize,
    pub protocol1_mm: f64,
    pub protocol2_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format: String,
    pub version: u32,
    pub frames: usize,
    pub protocol1_mm: f64,
    pub protocol2_mm: f64,
    pub joint_names: Vec<String>,
    pub per_joint_protocol1_mm: Vec<f64>,
    pub per_joint_protocol2_mm: Vec<f64>,
    pub per_sequence: Vec<SequenceScore>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn write(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    /// Fixed-width text table: overall, per sequence, per joint.
    pub fn table(&self) -> String {
        let mut s = format!(
            "protocol1: {:.2} mm, protocol2: {:.2} mm ({} frames)\n",
            self.protocol1_mm, self.protocol2_mm, self.frames
        );
        s += &format!("{:<24} {:>8} {:>12} {:>12}\n", "sequence", "frames", "p1 (mm)", "p2 (mm)");
        for q in &self.per_sequence {
            s += &format!("{:<24} {:>8} {:>12.2} {:>12.2}\n", q.name, q.frames, q.protocol1_mm, q.protocol2_mm);
        }
        s += &format!("{:<24} {:>12} {:>12}\n", "joint", "p1 (mm)", "p2 (mm)");
        for (i, name) in self.joint_names.iter().enumerate() {
            s += &format!(
                "{:<24} {:>12.2} {:>12.2}\n",
                name, self.per_joint_protocol1_mm[i], self.per_joint_protocol2_mm[i]
            );
        }
        s
    }
}

/// Aggregates both protocols over a set of sequences. Overall numbers are
/// frame-weighted means of the per-sequence ones.
pub fn make_report(
    names: &[String],
    joint_names: &[String],
    preds: &[Vec<Pose3D>],
    gts: &[Vec<Pose3D>],
) -> Result<EvalReport> {
    if preds.len() != gts.len() || names.len() != gts.len() || gts.is_empty() {
        return Err(Error::Shape(format!(
            "{} names, {} predicted and {} ground-truth sequences",
            names.len(),
            preds.len(),
            gts.len()
        )));
    }
    let j = joint_names.len();
    let mut p1j = vec![0.0; j];
    let mut p2j = vec![0.0; j];
    let mut per_sequence = Vec::with_capacity(gts.len());
    let mut frames = 0;
    for ((name, pred), gt) in names.iter().zip(preds).zip(gts) {
        if check_pair(pred, gt)? != j {
            return Err(Error::SkeletonMismatch(format!("sequence {name}: expected {j} joints")));
        }
        let (mut s1, mut s2) = (0.0, 0.0);
        for (t, (p, g)) in pred.iter().zip(gt).enumerate() {
            let e1 = joint_errors(p, g);
            let e2 = aligned_errors(p, g).map_err(|e| Error::at_frame(t, e))?;
            for k in 0..j {
                p1j[k] += e1[k];
                p2j[k] += e2[k];
            }
            s1 += e1.iter().sum::<f64>();
            s2 += e2.iter().sum::<f64>();
        }
        let n = (gt.len() * j) as f64;
        frames += gt.len();
        per_sequence.push(SequenceScore {
            name: name.clone(),
            frames: gt.len(),
            protocol1_mm: s1 / n,
            protocol2_mm: s2 / n,
        });
    }
    p1j.iter_mut().chain(p2j.iter_mut()).for_each(|v| *v /= frames as f64);
    Ok(EvalReport {
        format: "evalreport".into(),
        version: 1,
        frames,
        protocol1_mm: p1j.iter().sum::<f64>() / j as f64,
        protocol2_mm: p2j.iter().sum::<f64>() / j as f64,
        joint_names: joint_names.to_vec(),
        per_joint_protocol1_mm: p1j,
        per_joint_protocol2_mm: p2j,
        per_sequence,
    })
}
