use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kinematic tree of a skeleton.
///
/// `parents[root_index]` is `-1`; every other entry points at the parent
/// joint. `bone_lengths_mm` holds one length per non-root joint, in joint
/// order with the root skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonSpec {
    pub joint_names: Vec<String>,
    pub parents: Vec<i64>,
    pub root_index: usize,
    pub bone_lengths_mm: Vec<f64>,
}

const H36M_JOINTS: [&str; 17] = [
    "hip",
    "right_hip",
    "right_knee",
    "right_foot",
    "left_hip",
    "left_knee",
    "left_foot",
    "spine",
    "thorax",
    "neck",
    "head",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
];

const H36M_PARENTS: [i64; 17] = [-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15];

// Average Human3.6M subject proportions.
const H36M_BONES_MM: [f64; 16] = [
    132.9, 442.9, 454.2, 132.9, 442.9, 454.2, 233.4, 257.1, 121.1, 115.0, 151.0, 278.9, 251.7,
    151.0, 278.9, 251.7,
];

impl SkeletonSpec {
    pub fn new(
        joint_names: Vec<String>,
        parents: Vec<i64>,
        root_index: usize,
        bone_lengths_mm: Vec<f64>,
    ) -> Result<Self> {
        let s = Self {
            joint_names,
            parents,
            root_index,
            bone_lengths_mm,
        };
        s.validate()?;
        Ok(s)
    }

    /// The 17-joint Human3.6M-style skeleton rooted at the hip.
    pub fn h36m17() -> Self {
        Self {
            joint_names: H36M_JOINTS.iter().map(|s| s.to_string()).collect(),
            parents: H36M_PARENTS.to_vec(),
            root_index: 0,
            bone_lengths_mm: H36M_BONES_MM.to_vec(),
        }
    }

    pub fn num_joints(&self) -> usize {
        self.joint_names.len()
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        let p = self.parents[joint];
        (p >= 0).then_some(p as usize)
    }

    /// Length of the bone ending at `joint`; `None` for the root.
    pub fn bone_length(&self, joint: usize) -> Option<f64> {
        if joint == self.root_index {
            return None;
        }
        let idx = if joint > self.root_index { joint - 1 } else { joint };
        self.bone_lengths_mm.get(idx).copied()
    }

    /// `(parent, child)` pairs in joint order.
    pub fn bones(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_joints()).filter_map(|j| self.parent(j).map(|p| (p, j)))
    }

    /// Joints ordered so that every parent precedes its children.
    pub fn topological_order(&self) -> Vec<usize> {
        let j = self.num_joints();
        let mut children = vec![Vec::new(); j];
        for (p, c) in self.bones() {
            children[p].push(c);
        }
        let mut order = Vec::with_capacity(j);
        let mut stack = vec![self.root_index];
        while let Some(n) = stack.pop() {
            order.push(n);
            for &c in children[n].iter().rev() {
                stack.push(c);
            }
        }
        order
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.joint_names.len();
        if j < 2 {
            return Err(Error::InvalidSkeleton(format!("need at least 2 joints, got {j}")));
        }
        if self.parents.len() != j {
            return Err(Error::InvalidSkeleton(format!(
                "{} parents for {j} joints",
                self.parents.len()
            )));
        }
        if self.root_index >= j {
            return Err(Error::InvalidSkeleton(format!("root index {} out of range", self.root_index)));
        }
        if self.bone_lengths_mm.len() != j - 1 {
            return Err(Error::InvalidSkeleton(format!(
                "{} bone lengths for {j} joints",
                self.bone_lengths_mm.len()
            )));
        }
        if let Some(b) = self.bone_lengths_mm.iter().find(|b| !(b.is_finite() && **b > 0.0)) {
            return Err(Error::InvalidSkeleton(format!("bone length {b} is not positive")));
        }
        for (i, &p) in self.parents.iter().enumerate() {
            if i == self.root_index {
                if p != -1 {
                    return Err(Error::InvalidSkeleton("root must have parent -1".into()));
                }
            } else if p < 0 || p as usize >= j || p as usize == i {
                return Err(Error::InvalidSkeleton(format!("joint {i} has invalid parent {p}")));
            }
        }
        // every joint must reach the root without revisiting a node
        for start in 0..j {
            let mut cur = start;
            let mut steps = 0;
            while cur != self.root_index {
                cur = self.parents[cur] as usize;
                steps += 1;
                if steps > j {
                    return Err(Error::InvalidSkeleton(format!("joint {start} is on a cycle")));
                }
            }
        }
        Ok(())
    }
}

impl Default for SkeletonSpec {
    fn default() -> Self {
        Self::h36m17()
    }
}
