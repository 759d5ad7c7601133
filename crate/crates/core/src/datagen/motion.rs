use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{Frame, Pose3D, PoseSequence};
use crate::skeleton::SkeletonSpec;

/// Band-limited random motion: every non-root joint rotates its bone by a
/// sum of sinusoids about three axes, the root translates and turns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionGenConfig {
    pub frames: usize,
    pub fps: f64,
    /// Sinusoids per joint angle.
    pub harmonics: usize,
    /// Peak joint-angle amplitude in radians, summed over harmonics.
    pub angle_amplitude_rad: f64,
    pub min_freq_hz: f64,
    pub max_freq_hz: f64,
    /// Peak in-plane and depth excursion of the root.
    pub root_amplitude_mm: f64,
    /// Peak yaw of the whole body about the vertical axis.
    pub yaw_amplitude_rad: f64,
    /// Mean distance of the root from the camera.
    pub root_depth_mm: f64,
    pub seed: u64,
}

impl Default for MotionGenConfig {
    fn default() -> Self {
        Self {
            frames: 600,
            fps: 50.0,
            harmonics: 3,
            angle_amplitude_rad: 0.6,
            min_freq_hz: 0.2,
            max_freq_hz: 1.5,
            root_amplitude_mm: 300.0,
            yaw_amplitude_rad: 0.8,
            root_depth_mm: 4500.0,
            seed: 0,
        }
    }
}

impl MotionGenConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.frames >= 1
            && self.fps > 0.0
            && self.angle_amplitude_rad >= 0.0
            && self.root_amplitude_mm >= 0.0
            && self.yaw_amplitude_rad >= 0.0
            && 0.0 <= self.min_freq_hz
            && self.min_freq_hz <= self.max_freq_hz
            && self.root_depth_mm > self.root_amplitude_mm + 2500.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("motion config out of range: {self:?}")))
        }
    }
}

/// Unit rest direction of the bone ending at a joint, in the camera frame
/// (x right, y down, z away from the camera).
pub fn rest_direction(name: &str) -> [f64; 3] {
    let n = name.to_ascii_lowercase();
    let side = if n.contains("left") {
        1.0
    } else if n.contains("right") {
        -1.0
    } else {
        0.0
    };
    if (n.contains("hip") || n.contains("shoulder")) && side != 0.0 {
        [side, 0.0, 0.0]
    } else if ["spine", "thorax", "neck", "head", "nose"].iter().any(|k| n.contains(k)) {
        [0.0, -1.0, 0.0]
    } else {
        [0.0, 1.0, 0.0]
    }
}

struct Harmonic {
    amp: f64,
    omega: f64,
    phase: f64,
}

fn draw_harmonics(rng: &mut ChaCha8Rng, cfg: &MotionGenConfig, peak: f64) -> Vec<Harmonic> {
    let per = if cfg.harmonics == 0 { 0.0 } else { peak / cfg.harmonics as f64 };
    (0..cfg.harmonics)
        .map(|_| Harmonic {
            amp: per * rng.random_range(0.3..=1.0),
            omega: 2.0 * std::f64::consts::PI * rng.random_range(cfg.min_freq_hz..=cfg.max_freq_hz),
            phase: rng.random_range(0.0..2.0 * std::f64::consts::PI),
        })
        .collect()
}

fn eval(h: &[Harmonic], t: f64) -> f64 {
    h.iter().map(|h| h.amp * (h.omega * t + h.phase).sin()).sum()
}

/// Forward kinematics over the skeleton tree with harmonic joint angles.
/// Fills `gt` and `root_abs_mm` for every frame.
pub fn generate_motion(skeleton: &SkeletonSpec, cfg: &MotionGenConfig) -> Result<PoseSequence> {
    skeleton.validate()?;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let j = skeleton.num_joints();
    let root = skeleton.root_index;
    let angles: Vec<[Vec<Harmonic>; 3]> = (0..j)
        .map(|_| std::array::from_fn(|_| draw_harmonics(&mut rng, cfg, cfg.angle_amplitude_rad)))
        .collect();
    let root_path: [Vec<Harmonic>; 3] = std::array::from_fn(|_| draw_harmonics(&mut rng, cfg, cfg.root_amplitude_mm));
    let yaw = draw_harmonics(&mut rng, cfg, cfg.yaw_amplitude_rad);
    let rest: Vec<Vector3<f64>> = skeleton.joint_names.iter().map(|n| Vector3::from(rest_direction(n))).collect();
    let order = skeleton.topological_order();

    let mut frames = Vec::with_capacity(cfg.frames);
    for f in 0..cfg.frames {
        let t = f as f64 / cfg.fps;
        let mut global = vec![Matrix3::identity(); j];
        let mut pos = vec![Vector3::zeros(); j];
        global[root] = *Rotation3::from_axis_angle(&Vector3::y_axis(), eval(&yaw, t)).matrix();
        for &c in &order {
            let Some(p) = skeleton.parent(c) else { continue };
            let a = &angles[c];
            let local = Rotation3::from_euler_angles(eval(&a[0], t), eval(&a[1], t), eval(&a[2], t));
            global[c] = global[p] * local.matrix();
            let len = skeleton.bone_length(c).expect("non-root joint has a bone");
            pos[c] = pos[p] + global[c] * rest[c] * len;
        }
        let root_abs = [
            eval(&root_path[0], t),
            0.3 * eval(&root_path[1], t),
            cfg.root_depth_mm + eval(&root_path[2], t),
        ];
        let coords: Vec<[f64; 3]> = pos.iter().map(|p| [p.x, p.y, p.z]).collect();
        frames.push(Frame {
            root_abs_mm: Some(root_abs),
            gt: Some(Pose3D { coords_mm: coords }),
            ..Frame::default()
        });
    }
    PoseSequence::new(skeleton.clone(), cfg.fps, frames)
}

/// Seed of the `index`-th sequence of a dataset generated from `seed`.
pub fn sequence_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index + 1);
    rng.random()
}

/// `n` independent motion sequences sharing every setting but the seed.
pub fn generate_dataset(skeleton: &SkeletonSpec, cfg: &MotionGenConfig, n: usize) -> Result<Vec<PoseSequence>> {
    (0..n as u64)
        .map(|i| {
            generate_motion(
                skeleton,
                &MotionGenConfig {
                    seed: sequence_seed(cfg.seed, i),
                    ..cfg.clone()
                },
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bone_error(seq: &PoseSequence) -> f64 {
        let s = &seq.skeleton;
        let mut worst: f64 = 0.0;
        for f in &seq.frames {
            let c = &f.gt.as_ref().unwrap().coords_mm;
            for (p, ch) in s.bones() {
                let d = ((c[ch][0] - c[p][0]).powi(2) + (c[ch][1] - c[p][1]).powi(2) + (c[ch][2] - c[p][2]).powi(2)).sqrt();
                worst = worst.max((d - s.bone_length(ch).unwrap()).abs());
            }
        }
        worst
    }

    #[test]
    fn bone_lengths_are_preserved() {
        let seq = generate_motion(&SkeletonSpec::h36m17(), &MotionGenConfig { frames: 200, ..Default::default() }).unwrap();
        assert!(bone_error(&seq) < 1e-9);
        assert!(seq.frames.iter().all(|f| f.gt.as_ref().unwrap().coords_mm[0] == [0.0; 3]));
    }

    #[test]
    fn zero_amplitudes_give_static_rest_pose() {
        let cfg = MotionGenConfig {
            frames: 5,
            angle_amplitude_rad: 0.0,
            root_amplitude_mm: 0.0,
            yaw_amplitude_rad: 0.0,
            ..Default::default()
        };
        let seq = generate_motion(&SkeletonSpec::h36m17(), &cfg).unwrap();
        for f in &seq.frames {
            assert_eq!(f, &seq.frames[0]);
        }
        let head = seq.frames[0].gt.as_ref().unwrap().coords_mm[10];
        assert!(head[1] < -600.0 && head[0] == 0.0);
    }

    #[test]
    fn same_seed_same_sequence() {
        let cfg = MotionGenConfig { frames: 50, seed: 9, ..Default::default() };
        let s = SkeletonSpec::h36m17();
        assert_eq!(generate_motion(&s, &cfg).unwrap(), generate_motion(&s, &cfg).unwrap());
        let other = MotionGenConfig { seed: 10, ..cfg.clone() };
        assert_ne!(generate_motion(&s, &cfg).unwrap(), generate_motion(&s, &other).unwrap());
    }

    #[test]
    fn dataset_sequences_differ() {
        let cfg = MotionGenConfig { frames: 10, ..Default::default() };
        let d = generate_dataset(&SkeletonSpec::h36m17(), &cfg, 3).unwrap();
        assert_ne!(d[0], d[1]);
        assert_ne!(sequence_seed(1, 0), sequence_seed(1, 1));
    }

    #[test]
    fn body_stays_in_front_of_camera_and_in_view() {
        let cfg = MotionGenConfig { seed: 3, ..Default::default() };
        let seq = generate_motion(&SkeletonSpec::h36m17(), &cfg).unwrap();
        let cam = crate::camera::CameraIntrinsics::benchmark();
        for f in &seq.frames {
            let obs = cam.project(&f.absolute_gt().unwrap(), 0).unwrap();
            assert!(obs.uv.iter().all(|p| (0.0..1000.0).contains(&p[0]) && (0.0..1000.0).contains(&p[1])));
        }
    }
}
