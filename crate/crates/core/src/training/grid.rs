use serde::{Deserialize, Serialize};

use crate::camera::CameraIntrinsics;
use crate::pose::PoseSequence;
use crate::stage2::{receptive_field, InputMode, TemporalModelConfig};

use super::{evaluate_model, train_second_stage, AugmentationConfig, TrainConfig};

/// `(W, B)` pairs with receptive fields 1, 27, 81 and 243.
pub const STANDARD_WB: [(usize, usize); 4] = [(1, 2), (3, 2), (3, 3), (3, 4)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub input_modes: Vec<InputMode>,
    /// Augmentation sigmas; 0 means off.
    pub sigmas: Vec<f64>,
    pub wb: Vec<(usize, usize)>,
    /// Template for every cell; `kernel_width`, `blocks` and `input_mode`
    /// are overridden.
    pub model: TemporalModelConfig,
    /// Template for every cell; the window is set to `rf + window_margin`.
    pub train: TrainConfig,
    pub window_margin: usize,
}

impl GridSpec {
    pub fn standard(model: TemporalModelConfig, train: TrainConfig) -> Self {
        Self {
            input_modes: vec![InputMode::Pose2d, InputMode::Pose2dDepth],
            sigmas: vec![0.0, 0.1],
            wb: STANDARD_WB.to_vec(),
            model,
            train,
            window_margin: 63,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub kernel_width: usize,
    pub blocks: usize,
    pub receptive_field: usize,
    pub protocol1_mm: Option<f64>,
    pub protocol2_mm: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub input_mode: InputMode,
    pub sigma: f64,
    pub cells: Vec<AblationCell>,
}

impl AblationRow {
    pub fn label(&self) -> String {
        if self.sigma > 0.0 {
            format!("{} (sigma = {})", self.input_mode.label(), self.sigma)
        } else {
            self.input_mode.label().to_string()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub receptive_fields: Vec<usize>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Protocol-1 table with one column per receptive field.
    pub fn render(&self) -> String {
        let mut s = format!("{:<28}", "input");
        for rf in &self.receptive_fields {
            s += &format!(" {:>9}", rf);
        }
        s.push('\n');
        for r in &self.rows {
            s += &format!("{:<28}", r.label());
            for c in &r.cells {
                match c.protocol1_mm {
                    Some(v) => s += &format!(" {:>9.1}", v),
                    None => s += &format!(" {:>9}", "failed"),
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn cell_count(&self) -> usize {
        self.rows.iter().map(|r| r.cells.len()).sum()
    }
}

/// Trains and evaluates one model per (input mode, sigma, W/B) cell with
/// the template seed. A failing cell records its error and the grid
/// continues.
pub fn run_ablation_grid(
    train: &[PoseSequence],
    val: &[PoseSequence],
    test: &[PoseSequence],
    cam: &CameraIntrinsics,
    spec: &GridSpec,
    mut on_cell: impl FnMut(&AblationRow, &AblationCell),
) -> AblationTable {
    let mut rows = Vec::new();
    for &mode in &spec.input_modes {
        for &sigma in &spec.sigmas {
            let mut row = AblationRow {
                input_mode: mode,
                sigma,
                cells: Vec::new(),
            };
            for &(w, b) in &spec.wb {
                let mcfg = TemporalModelConfig {
                    kernel_width: w,
                    blocks: b,
                    input_mode: mode,
                    ..spec.model.clone()
                };
                let rf = receptive_field(&mcfg);
                let tcfg = TrainConfig {
                    window_length: rf + spec.window_margin,
                    input_mode: mode,
                    augmentation: AugmentationConfig::gaussian(sigma),
                    ..spec.train.clone()
                };
                let result = train_second_stage(train, val, cam, &mcfg, &tcfg).and_then(|ck| evaluate_model(&ck, test));
                let cell = match result {
                    Ok(r) => AblationCell {
                        kernel_width: w,
                        blocks: b,
                        receptive_field: rf,
                        protocol1_mm: Some(r.protocol1_mm),
                        protocol2_mm: Some(r.protocol2_mm),
                        error: None,
                    },
                    Err(e) => AblationCell {
                        kernel_width: w,
                        blocks: b,
                        receptive_field: rf,
                        protocol1_mm: None,
                        protocol2_mm: None,
                        error: Some(format!("{} W={w} B={b} sigma={sigma}: {e}", mode.label())),
                    },
                };
                on_cell(&row, &cell);
                row.cells.push(cell);
            }
            rows.push(row);
        }
    }
    AblationTable {
        receptive_fields: spec.wb.iter().map(|&(w, b)| w.pow(b as u32 + 1)).collect(),
        rows,
    }
}
