use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::pose::PoseSequence;
use crate::skeleton::SkeletonSpec;
use crate::stage1::ImageTensor;

/// Stroke sizes in output pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderStyle {
    pub line_radius_px: f64,
    pub joint_radius_px: f64,
}

impl RenderStyle {
    pub fn for_width(w: usize) -> Self {
        let s = (w as f64 / 64.0).max(0.5);
        Self {
            line_radius_px: s,
            joint_radius_px: 1.6 * s,
        }
    }
}

fn limb_colour(name: &str) -> [f64; 3] {
    let n = name.to_ascii_lowercase();
    if n.contains("left") {
        [1.0, 0.35, 0.2]
    } else if n.contains("right") {
        [0.2, 0.5, 1.0]
    } else {
        [0.3, 1.0, 0.3]
    }
}

fn seg_dist(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let l2 = dx * dx + dy * dy;
    let s = if l2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / l2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ((p[0] - a[0] - s * dx).powi(2) + (p[1] - a[1] - s * dy).powi(2)).sqrt()
}

/// Anti-aliased bones and joint discs on black, coloured by body side and
/// darkened with depth behind the root. The camera image is rescaled to
/// `width x height`.
pub fn render_stick_figure(
    cam: &CameraIntrinsics,
    skeleton: &SkeletonSpec,
    abs_pose_mm: &[[f64; 3]],
    width: usize,
    height: usize,
    style: RenderStyle,
) -> Result<ImageTensor> {
    if abs_pose_mm.len() != skeleton.num_joints() {
        return Err(Error::SkeletonMismatch(format!(
            "pose has {} joints, skeleton {}",
            abs_pose_mm.len(),
            skeleton.num_joints()
        )));
    }
    let root = skeleton.root_index;
    let obs = cam.project(abs_pose_mm, root)?;
    let (sx, sy) = (width as f64 / cam.image_w as f64, height as f64 / cam.image_h as f64);
    let pts: Vec<[f64; 2]> = obs.uv.iter().map(|p| [p[0] * sx, p[1] * sy]).collect();
    let shade: Vec<f64> = obs.depth_mm.iter().map(|d| (1.0 - 0.4 * d / 750.0).clamp(0.4, 1.0)).collect();

    struct Prim {
        a: [f64; 2],
        b: [f64; 2],
        r: f64,
        colour: [f64; 3],
    }
    let mut prims = Vec::new();
    for (p, c) in skeleton.bones() {
        let k = 0.5 * (shade[p] + shade[c]);
        let col = limb_colour(&skeleton.joint_names[c]).map(|v| v * k);
        prims.push(Prim { a: pts[p], b: pts[c], r: style.line_radius_px, colour: col });
    }
    if style.joint_radius_px > 0.0 {
        for (j, p) in pts.iter().enumerate() {
            prims.push(Prim { a: *p, b: *p, r: style.joint_radius_px, colour: [shade[j]; 3] });
        }
    }

    let mut img = ImageTensor::zeros(height, width);
    for pr in &prims {
        let reach = pr.r + 1.0;
        let x0 = (pr.a[0].min(pr.b[0]) - reach).floor().max(0.0) as usize;
        let y0 = (pr.a[1].min(pr.b[1]) - reach).floor().max(0.0) as usize;
        let x1 = ((pr.a[0].max(pr.b[0]) + reach).ceil().max(0.0) as usize).min(width);
        let y1 = ((pr.a[1].max(pr.b[1]) + reach).ceil().max(0.0) as usize).min(height);
        for y in y0..y1 {
            for x in x0..x1 {
                let d = seg_dist([x as f64 + 0.5, y as f64 + 0.5], pr.a, pr.b);
                let cov = (pr.r + 0.5 - d).clamp(0.0, 1.0);
                if cov > 0.0 {
                    let i = (y * width + x) * 3;
                    for k in 0..3 {
                        img.data[i + k] = img.data[i + k].max(cov * pr.colour[k]);
                    }
                }
            }
        }
    }
    Ok(img)
}

/// Binary 8-bit PPM.
pub fn write_ppm(img: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = format!("P6\n{} {}\n255\n", img.w, img.h).into_bytes();
    buf.extend(img.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| Error::io(path, e))
}

/// Renders every frame with ground truth to `dir/frame_%06d.ppm`.
pub fn render_sequence(
    seq: &PoseSequence,
    cam: &CameraIntrinsics,
    dir: impl AsRef<Path>,
    width: usize,
    height: usize,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let style = RenderStyle::for_width(width);
    let mut paths = Vec::new();
    for (t, f) in seq.frames.iter().enumerate() {
        let abs = f.absolute_gt().ok_or_else(|| Error::Missing(format!("frame {t}: ground truth")))?;
        let img = render_stick_figure(cam, &seq.skeleton, &abs, width, height, style).map_err(|e| Error::at_frame(t, e))?;
        let p = dir.join(format!("frame_{t:06}.ppm"));
        write_ppm(&img, &p)?;
        paths.push(p);
    }
    Ok(paths)
}
