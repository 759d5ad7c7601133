use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::PoseObservation;

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub image_w: u32,
    pub image_h: u32,
}

impl CameraIntrinsics {
    /// A 1000x1000 camera with Human3.6M-like focal length.
    pub fn benchmark() -> Self {
        Self {
            fx: 1145.0,
            fy: 1145.0,
            cx: 500.0,
            cy: 500.0,
            image_w: 1000,
            image_h: 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "focal lengths must be positive and finite: {self:?}"
            )));
        }
        if self.image_w == 0 || self.image_h == 0 {
            return Err(Error::InvalidConfig("image size must be at least 1x1".into()));
        }
        Ok(())
    }

    /// Projects absolute camera-frame joints and makes depths root-relative.
    pub fn project(&self, abs_pose_mm: &[[f64; 3]], root: usize) -> Result<PoseObservation> {
        if root >= abs_pose_mm.len() {
            return Err(Error::Shape(format!("root {root} out of range")));
        }
        let mut uv = Vec::with_capacity(abs_pose_mm.len());
        for (j, p) in abs_pose_mm.iter().enumerate() {
            if !(p[2] > 0.0) {
                return Err(Error::BehindCamera { joint: j, z: p[2] });
            }
            uv.push([self.cx + self.fx * p[0] / p[2], self.cy + self.fy * p[1] / p[2]]);
        }
        let zr = abs_pose_mm[root][2];
        let depth_mm = abs_pose_mm
            .iter()
            .enumerate()
            .map(|(j, p)| if j == root { 0.0 } else { p[2] - zr })
            .collect();
        Ok(PoseObservation { uv, depth_mm })
    }

    /// Inverse of [`project`](Self::project) given the absolute root depth.
    pub fn back_project(&self, obs: &PoseObservation, root_z_mm: f64) -> Vec<[f64; 3]> {
        obs.uv
            .iter()
            .zip(&obs.depth_mm)
            .map(|(uv, d)| {
                let z = root_z_mm + d;
                [(uv[0] - self.cx) * z / self.fx, (uv[1] - self.cy) * z / self.fy, z]
            })
            .collect()
    }
}

/// Maps observations to network units: pixels to roughly `[-1, 1]` around
/// the principal point, depth divided by `depth_scale_mm`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub depth_scale_mm: f64,
}

impl Default for NormalizationSpec {
    fn default() -> Self {
        Self {
            depth_scale_mm: 750.0,
        }
    }
}

impl NormalizationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.depth_scale_mm.is_finite() && self.depth_scale_mm > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "depth_scale_mm must be positive, got {}",
                self.depth_scale_mm
            )));
        }
        Ok(())
    }
}

pub fn normalize_observation(
    obs: &PoseObservation,
    cam: &CameraIntrinsics,
    spec: &NormalizationSpec,
) -> Result<Vec<[f64; 3]>> {
    cam.validate()?;
    spec.validate()?;
    if !obs.is_finite() {
        return Err(Error::NonFinite("observation passed to normalize".into()));
    }
    if obs.uv.len() != obs.depth_mm.len() {
        return Err(Error::Shape("uv/depth length mismatch".into()));
    }
    let (hw, hh) = (cam.image_w as f64 / 2.0, cam.image_h as f64 / 2.0);
    Ok(obs
        .uv
        .iter()
        .zip(&obs.depth_mm)
        .map(|(uv, d)| [(uv[0] - cam.cx) / hw, (uv[1] - cam.cy) / hh, d / spec.depth_scale_mm])
        .collect())
}

pub fn denormalize_observation(
    block: &[[f64; 3]],
    cam: &CameraIntrinsics,
    spec: &NormalizationSpec,
) -> Result<PoseObservation> {
    cam.validate()?;
    spec.validate()?;
    if block.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("normalized block".into()));
    }
    let (hw, hh) = (cam.image_w as f64 / 2.0, cam.image_h as f64 / 2.0);
    Ok(PoseObservation {
        uv: block.iter().map(|r| [r[0] * hw + cam.cx, r[1] * hh + cam.cy]).collect(),
        depth_mm: block.iter().map(|r| r[2] * spec.depth_scale_mm).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics {
            fx: 1000.0,
            fy: 1000.0,
            cx: 500.0,
            cy: 500.0,
            image_w: 1000,
            image_h: 1000,
        }
    }

    #[test]
    fn principal_point_maps_to_origin() {
        let obs = PoseObservation::new(vec![[500.0, 500.0]], vec![0.0]).unwrap();
        let n = normalize_observation(&obs, &cam(), &NormalizationSpec::default()).unwrap();
        assert_eq!(n, vec![[0.0, 0.0, 0.0]]);
    }

    #[test]
    fn image_edge_maps_to_one() {
        let obs = PoseObservation::new(vec![[1000.0, 0.0]], vec![750.0]).unwrap();
        let n = normalize_observation(&obs, &cam(), &NormalizationSpec::default()).unwrap();
        assert_eq!(n, vec![[1.0, -1.0, 1.0]]);
    }

    #[test]
    fn non_finite_rejected() {
        let obs = PoseObservation::new(vec![[f64::NAN, 0.0]], vec![0.0]).unwrap();
        assert!(matches!(
            normalize_observation(&obs, &cam(), &NormalizationSpec::default()),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn projection_examples() {
        let c = cam();
        let obs = c
            .project(&[[0.0, 0.0, 2000.0], [100.0, 0.0, 2000.0], [0.0, -50.0, 2500.0]], 0)
            .unwrap();
        assert_eq!(obs.uv[0], [500.0, 500.0]);
        assert_eq!(obs.uv[1][0], 550.0);
        assert_eq!(obs.depth_mm, vec![0.0, 0.0, 500.0]);
        assert!(matches!(
            c.project(&[[0.0, 0.0, 2000.0], [0.0, 0.0, -1.0]], 0),
            Err(Error::BehindCamera { joint: 1, .. })
        ));
    }

    proptest! {
        #[test]
        fn normalize_round_trip(
            rows in prop::collection::vec((-2000.0f64..3000.0, -2000.0f64..3000.0, -900.0f64..900.0), 1..20),
            cx in 100.0f64..900.0,
            depth_scale in 1.0f64..2000.0,
        ) {
            let c = CameraIntrinsics { cx, cy: 1000.0 - cx, ..cam() };
            let spec = NormalizationSpec { depth_scale_mm: depth_scale };
            let obs = PoseObservation::new(
                rows.iter().map(|r| [r.0, r.1]).collect(),
                rows.iter().map(|r| r.2).collect(),
            ).unwrap();
            let back = denormalize_observation(&normalize_observation(&obs, &c, &spec).unwrap(), &c, &spec).unwrap();
            for (a, b) in obs.uv.iter().flatten().chain(&obs.depth_mm).zip(back.uv.iter().flatten().chain(&back.depth_mm)) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }

        #[test]
        fn back_projection_inverts_projection(
            pts in prop::collection::vec((-800.0f64..800.0, -900.0f64..900.0, -600.0f64..600.0), 2..17),
            z0 in 2500.0f64..6000.0,
        ) {
            let abs: Vec<[f64; 3]> = pts.iter().map(|p| [p.0, p.1, z0 + p.2]).collect();
            let c = cam();
            let obs = c.project(&abs, 0).unwrap();
            let back = c.back_project(&obs, abs[0][2]);
            for (a, b) in abs.iter().zip(&back) {
                for k in 0..3 {
                    prop_assert!((a[k] - b[k]).abs() < 1e-6);
                }
            }
        }
    }
}
