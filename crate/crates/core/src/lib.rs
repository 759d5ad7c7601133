//! Two-stage 3D human pose estimation for video.
//!
//! The first stage regresses per-frame joint image coordinates and
//! root-relative depths from 3D heatmaps by soft-argmax. The second stage
//! is a dilated temporal convolution network that refines the per-frame
//! estimates into root-relative 3D poses. Supporting modules generate
//! synthetic motion, simulate first-stage errors, train and evaluate.

pub mod camera;
pub mod datagen;
pub mod error;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod plot;
pub mod pose;
pub mod skeleton;
pub mod stage1;
pub mod stage2;
pub mod training;

pub use camera::{denormalize_observation, normalize_observation, CameraIntrinsics, NormalizationSpec};
pub use error::{Error, Result};
pub use io::{read_sequence, write_sequence, DatasetManifest};
pub use pose::{Frame, Pose3D, PoseObservation, PoseSequence};
pub use skeleton::SkeletonSpec;
