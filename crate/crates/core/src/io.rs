//! On-disk formats: `poseseq` v1 sequence files and `posemanifest` v1
//! dataset manifests. Both are JSON; sequence files hold one header line
//! followed by one line per frame. Floats are written in shortest
//! round-trip form so a write/read cycle is bit-exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::pose::{Frame, Pose3D, PoseObservation, PoseSequence};
use crate::skeleton::SkeletonSpec;

pub const POSESEQ_VERSION: u64 = 1;
pub const MANIFEST_VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
struct SeqHeader {
    format: String,
    version: u64,
    skeleton: SkeletonSpec,
    fps: f64,
    count: usize,
}

#[derive(Serialize, Deserialize)]
struct FrameRecord {
    t: usize,
    root_abs_mm: Option<[f64; 3]>,
    gt_rel_mm: Option<Vec<[f64; 3]>>,
    obs: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pred: Option<Vec<[f64; 3]>>,
}

impl FrameRecord {
    fn from_frame(t: usize, f: &Frame) -> Self {
        Self {
            t,
            root_abs_mm: f.root_abs_mm,
            gt_rel_mm: f.gt.as_ref().map(|p| p.coords_mm.clone()),
            obs: f.obs.as_ref().map(|o| {
                o.uv.iter().zip(&o.depth_mm).map(|(uv, d)| [uv[0], uv[1], *d]).collect()
            }),
            pred: f.pred.as_ref().map(|p| p.coords_mm.clone()),
        }
    }

    fn into_frame(self) -> Frame {
        Frame {
            root_abs_mm: self.root_abs_mm,
            gt: self.gt_rel_mm.map(|c| Pose3D { coords_mm: c }),
            obs: self.obs.map(|rows| PoseObservation {
                uv: rows.iter().map(|r| [r[0], r[1]]).collect(),
                depth_mm: rows.iter().map(|r| r[2]).collect(),
            }),
            pred: self.pred.map(|c| Pose3D { coords_mm: c }),
        }
    }
}

pub fn write_sequence(seq: &PoseSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    seq.validate()?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = SeqHeader {
        format: "poseseq".into(),
        version: POSESEQ_VERSION,
        skeleton: seq.skeleton.clone(),
        fps: seq.fps,
        count: seq.frames.len(),
    };
    let io = |e| Error::io(path, e);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n").map_err(io)?;
    for (t, f) in seq.frames.iter().enumerate() {
        serde_json::to_writer(&mut w, &FrameRecord::from_frame(t, f))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_sequence(path: impl AsRef<Path>) -> Result<PoseSequence> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();

    let first = lines
        .next()
        .ok_or(Error::Malformed {
            line: 1,
            msg: "empty file".into(),
        })?
        .map_err(|e| Error::io(path, e))?;
    let header: SeqHeader = parse_json(&first, 1, "poseseq", POSESEQ_VERSION)?;
    header.skeleton.validate()?;
    let j = header.skeleton.num_joints();
    let root = header.skeleton.root_index;

    let mut frames = Vec::with_capacity(header.count);
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: FrameRecord = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            line: lineno,
            msg: e.to_string(),
        })?;
        if rec.t != frames.len() {
            return Err(Error::Malformed {
                line: lineno,
                msg: format!("expected t = {}, found {}", frames.len(), rec.t),
            });
        }
        for (what, n) in [
            ("gt_rel_mm", rec.gt_rel_mm.as_ref().map(Vec::len)),
            ("obs", rec.obs.as_ref().map(Vec::len)),
            ("pred", rec.pred.as_ref().map(Vec::len)),
        ] {
            if let Some(n) = n.filter(|&n| n != j) {
                return Err(Error::SkeletonMismatch(format!(
                    "line {lineno}: {what} has {n} joints, skeleton has {j}"
                )));
            }
        }
        let frame = rec.into_frame();
        let bad = |e: Error| Error::Malformed {
            line: lineno,
            msg: e.to_string(),
        };
        if let Some(g) = &frame.gt {
            g.validate(root).map_err(bad)?;
        }
        if let Some(o) = &frame.obs {
            o.validate(root).map_err(bad)?;
        }
        frames.push(frame);
    }
    if frames.len() != header.count {
        return Err(Error::Malformed {
            line: frames.len() + 1,
            msg: format!("header declares {} frames, found {}", header.count, frames.len()),
        });
    }
    PoseSequence::new(header.skeleton, header.fps, frames)
}

fn parse_json<T: serde::de::DeserializeOwned>(
    text: &str,
    line: usize,
    format: &str,
    version: u64,
) -> Result<T> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Malformed {
        line,
        msg: e.to_string(),
    })?;
    let found_format = value.get("format").and_then(|f| f.as_str()).unwrap_or_default();
    if found_format != format {
        return Err(Error::Malformed {
            line,
            msg: format!("expected format \"{format}\", found \"{found_format}\""),
        });
    }
    let found = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0);
    if found != version {
        return Err(Error::SchemaVersion {
            format: format.into(),
            found,
            expected: version,
        });
    }
    serde_json::from_value(value).map_err(|e| Error::Malformed {
        line,
        msg: e.to_string(),
    })
}

/// Train/test split plus the camera shared by every sequence.
///
/// Paths are stored as written; relative paths resolve against the
/// directory containing the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u64,
    pub train: Vec<PathBuf>,
    pub test: Vec<PathBuf>,
    pub camera: CameraIntrinsics,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(train: Vec<PathBuf>, test: Vec<PathBuf>, camera: CameraIntrinsics) -> Self {
        Self {
            format: "posemanifest".into(),
            version: MANIFEST_VERSION,
            train,
            test,
            camera,
            base_dir: PathBuf::new(),
        }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Self = parse_json(&text, 1, "posemanifest", MANIFEST_VERSION)?;
        m.camera.validate()?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn load_train(&self) -> Result<Vec<PoseSequence>> {
        self.train.iter().map(|p| read_sequence(self.resolve(p))).collect()
    }

    pub fn load_test(&self) -> Result<Vec<PoseSequence>> {
        self.test.iter().map(|p| read_sequence(self.resolve(p))).collect()
    }
}
