//! Synthetic motion, a first-stage error simulator and a stick-figure
//! renderer for desk-scale experiments.

mod motion;
mod noise;
mod render;

pub use motion::{generate_dataset, generate_motion, rest_direction, sequence_seed, MotionGenConfig};
pub use noise::{backproject_observations, simulate_stage1, Stage1NoiseModel};
pub use render::{render_sequence, render_stick_figure, write_ppm, RenderStyle};
