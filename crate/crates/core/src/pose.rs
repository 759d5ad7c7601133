use crate::error::{Error, Result};
use crate::skeleton::SkeletonSpec;

/// Root-relative camera-space joint positions in millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose3D {
    pub coords_mm: Vec<[f64; 3]>,
}

impl Pose3D {
    /// Builds a pose and checks that it is finite with the root row at zero.
    pub fn new(coords_mm: Vec<[f64; 3]>, root: usize) -> Result<Self> {
        let p = Self { coords_mm };
        p.validate(root)?;
        Ok(p)
    }

    /// Subtracts the root row from absolute coordinates.
    pub fn from_absolute(abs_mm: &[[f64; 3]], root: usize) -> Self {
        let r = abs_mm[root];
        let coords_mm = abs_mm
            .iter()
            .enumerate()
            .map(|(j, p)| {
                if j == root {
                    [0.0; 3]
                } else {
                    [p[0] - r[0], p[1] - r[1], p[2] - r[2]]
                }
            })
            .collect();
        Self { coords_mm }
    }

    pub fn zeros(j: usize) -> Self {
        Self {
            coords_mm: vec![[0.0; 3]; j],
        }
    }

    pub fn num_joints(&self) -> usize {
        self.coords_mm.len()
    }

    pub fn validate(&self, root: usize) -> Result<()> {
        if self.coords_mm.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("pose coordinates".into()));
        }
        match self.coords_mm.get(root) {
            Some(r) if *r == [0.0; 3] => Ok(()),
            Some(r) => Err(Error::InvalidConfig(format!("root row must be zero, got {r:?}"))),
            None => Err(Error::Shape(format!("root {root} out of range"))),
        }
    }
}

/// Per-joint image coordinates (pixels) and root-relative depth (mm).
#[derive(Debug, Clone, PartialEq)]
pub struct PoseObservation {
    pub uv: Vec<[f64; 2]>,
    pub depth_mm: Vec<f64>,
}

impl PoseObservation {
    pub fn new(uv: Vec<[f64; 2]>, depth_mm: Vec<f64>) -> Result<Self> {
        if uv.len() != depth_mm.len() {
            return Err(Error::Shape(format!(
                "{} uv rows vs {} depths",
                uv.len(),
                depth_mm.len()
            )));
        }
        Ok(Self { uv, depth_mm })
    }

    pub fn num_joints(&self) -> usize {
        self.uv.len()
    }

    pub fn is_finite(&self) -> bool {
        self.uv.iter().flatten().chain(&self.depth_mm).all(|v| v.is_finite())
    }

    pub fn validate(&self, root: usize) -> Result<()> {
        if self.uv.len() != self.depth_mm.len() {
            return Err(Error::Shape("uv/depth length mismatch".into()));
        }
        if !self.is_finite() {
            return Err(Error::NonFinite("observation".into()));
        }
        match self.depth_mm.get(root) {
            Some(&d) if d == 0.0 => Ok(()),
            Some(&d) => Err(Error::InvalidConfig(format!("root depth must be zero, got {d}"))),
            None => Err(Error::Shape(format!("root {root} out of range"))),
        }
    }
}

/// One time step of a [`PoseSequence`]. Every field is optional.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Frame {
    pub root_abs_mm: Option<[f64; 3]>,
    pub gt: Option<Pose3D>,
    pub obs: Option<PoseObservation>,
    /// Refined estimate written by the second stage.
    pub pred: Option<Pose3D>,
}

impl Frame {
    /// Absolute camera-frame joint positions, if both gt and root are known.
    pub fn absolute_gt(&self) -> Option<Vec<[f64; 3]>> {
        let r = self.root_abs_mm?;
        let gt = self.gt.as_ref()?;
        Some(
            gt.coords_mm
                .iter()
                .map(|p| [p[0] + r[0], p[1] + r[1], p[2] + r[2]])
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence {
    pub skeleton: SkeletonSpec,
    pub fps: f64,
    pub frames: Vec<Frame>,
}

impl PoseSequence {
    pub fn new(skeleton: SkeletonSpec, fps: f64, frames: Vec<Frame>) -> Result<Self> {
        let s = Self {
            skeleton,
            fps,
            frames,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn num_joints(&self) -> usize {
        self.skeleton.num_joints()
    }

    pub fn validate(&self) -> Result<()> {
        self.skeleton.validate()?;
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::InvalidConfig(format!("fps must be positive, got {}", self.fps)));
        }
        if self.frames.is_empty() {
            return Err(Error::InvalidConfig("sequence has no frames".into()));
        }
        let j = self.num_joints();
        for (t, f) in self.frames.iter().enumerate() {
            let check = |what: &str, n: usize| {
                if n == j {
                    Ok(())
                } else {
                    Err(Error::SkeletonMismatch(format!(
                        "frame {t}: {what} has {n} joints, skeleton has {j}"
                    )))
                }
            };
            if let Some(g) = &f.gt {
                check("gt", g.num_joints())?;
            }
            if let Some(o) = &f.obs {
                check("obs", o.num_joints())?;
                check("obs depth", o.depth_mm.len())?;
            }
            if let Some(p) = &f.pred {
                check("pred", p.num_joints())?;
            }
        }
        Ok(())
    }

    /// Ground-truth poses for every frame, or an error naming the first gap.
    pub fn gt_poses(&self) -> Result<Vec<&Pose3D>> {
        self.frames
            .iter()
            .enumerate()
            .map(|(t, f)| f.gt.as_ref().ok_or_else(|| Error::Missing(format!("gt at frame {t}"))))
            .collect()
    }

    pub fn observations(&self) -> Result<Vec<&PoseObservation>> {
        self.frames
            .iter()
            .enumerate()
            .map(|(t, f)| {
                f.obs
                    .as_ref()
                    .ok_or_else(|| Error::Missing(format!("observation at frame {t}")))
            })
            .collect()
    }
}
