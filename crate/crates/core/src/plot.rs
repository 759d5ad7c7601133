//! Standalone SVG figures: loss curves, error-vs-receptive-field bars and
//! 2D skeleton overlays.

use std::fmt::Write;

use crate::camera::CameraIntrinsics;
use crate::pose::PoseObservation;
use crate::skeleton::SkeletonSpec;
use crate::training::AblationTable;

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn header(out: &mut String, w: f64, h: f64, title: &str) {
    let _ = write!(
        out,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">
<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>
<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>
"#,
        w / 2.0,
        escape(title)
    );
}

fn nice_range(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    if (hi - lo).abs() < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn axes(out: &mut String, xlabel: &str, ylabel: &str, ylo: f64, yhi: f64) {
    let (x0, y0, x1, y1) = (MARGIN, H - MARGIN, W - 20.0, 36.0);
    let _ = writeln!(out, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(out, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    for i in 0..=4 {
        let v = ylo + (yhi - ylo) * i as f64 / 4.0;
        let y = y0 - (y0 - y1) * i as f64 / 4.0;
        let _ = writeln!(out, r#"<text x="{}" y="{:.1}" text-anchor="end">{:.1}</text>"#, x0 - 4.0, y + 4.0, v);
    }
    let _ = writeln!(out, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, H - 14.0, escape(xlabel));
    let _ = writeln!(
        out,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(ylabel)
    );
}

/// One polyline per named series, x = epoch index.
pub fn loss_curve_svg(title: &str, series: &[(String, Vec<f64>)]) -> String {
    let mut out = String::new();
    header(&mut out, W, H, title);
    let vals = series.iter().flat_map(|(_, v)| v.iter().copied()).filter(|v| v.is_finite());
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = nice_range(lo, hi);
    axes(&mut out, "epoch", "loss (mm)", lo, hi);
    let n = series.iter().map(|(_, v)| v.len()).max().unwrap_or(1).max(2);
    let sx = (W - 20.0 - MARGIN) / (n - 1) as f64;
    let sy = (H - MARGIN - 36.0) / (hi - lo);
    for (k, (name, v)) in series.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = v
            .iter()
            .enumerate()
            .filter(|(_, y)| y.is_finite())
            .map(|(i, y)| format!("{:.2},{:.2}", MARGIN + i as f64 * sx, H - MARGIN - (y - lo) * sy))
            .collect();
        let _ = writeln!(out, r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" fill="{colour}">{}</text>"#,
            W - 180.0,
            44.0 + 16.0 * k as f64,
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Grouped bars of protocol-1 error per receptive field, one bar per row.
pub fn rf_error_svg(title: &str, table: &AblationTable) -> String {
    let mut out = String::new();
    header(&mut out, W, H, title);
    let hi = table
        .rows
        .iter()
        .flat_map(|r| r.cells.iter().filter_map(|c| c.protocol1_mm))
        .fold(0.0f64, f64::max)
        .max(1.0)
        * 1.1;
    axes(&mut out, "receptive field (frames)", "MPJPE (mm)", 0.0, hi);
    let groups = table.receptive_fields.len().max(1);
    let gw = (W - 20.0 - MARGIN) / groups as f64;
    let nrows = table.rows.len().max(1);
    let bw = 0.8 * gw / nrows as f64;
    let sy = (H - MARGIN - 36.0) / hi;
    for (g, rf) in table.receptive_fields.iter().enumerate() {
        let gx = MARGIN + g as f64 * gw;
        let _ = writeln!(out, r#"<text x="{:.1}" y="{}" text-anchor="middle">{rf}</text>"#, gx + gw / 2.0, H - MARGIN + 16.0);
        for (r, row) in table.rows.iter().enumerate() {
            let Some(v) = row.cells.get(g).and_then(|c| c.protocol1_mm) else { continue };
            let x = gx + 0.1 * gw + r as f64 * bw;
            let _ = writeln!(
                out,
                r#"<rect x="{x:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"><title>{} RF {rf}: {v:.1} mm</title></rect>"#,
                H - MARGIN - v * sy,
                bw * 0.9,
                v * sy,
                PALETTE[r % PALETTE.len()],
                escape(&row.label())
            );
        }
    }
    for (r, row) in table.rows.iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" fill="{}">{}</text>"#,
            MARGIN + 10.0,
            44.0 + 16.0 * r as f64,
            PALETTE[r % PALETTE.len()],
            escape(&row.label())
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Image-plane skeletons for a few frames side by side; each frame draws
/// every named layer (e.g. ground truth, observation) in its own colour.
pub fn skeleton_overlay_svg(
    title: &str,
    skeleton: &SkeletonSpec,
    cam: &CameraIntrinsics,
    frames: &[(usize, Vec<(String, PoseObservation)>)],
) -> String {
    let panel = 240.0;
    let w = panel * frames.len().max(1) as f64;
    let h = panel + 60.0;
    let mut out = String::new();
    header(&mut out, w, h, title);
    let s = (panel - 20.0) / cam.image_w.max(cam.image_h) as f64;
    for (i, (t, layers)) in frames.iter().enumerate() {
        let ox = i as f64 * panel + 10.0;
        let oy = 40.0;
        let _ = writeln!(
            out,
            r##"<rect x="{ox}" y="{oy}" width="{:.1}" height="{:.1}" fill="none" stroke="#bbb"/>"##,
            cam.image_w as f64 * s,
            cam.image_h as f64 * s
        );
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">frame {t}</text>"#, ox + panel / 2.0 - 10.0, h - 8.0);
        for (k, (_, obs)) in layers.iter().enumerate() {
            let colour = PALETTE[k % PALETTE.len()];
            for (p, c) in skeleton.bones() {
                let (a, b) = (obs.uv[p], obs.uv[c]);
                let _ = writeln!(
                    out,
                    r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{colour}" stroke-width="1.5"/>"#,
                    ox + a[0] * s,
                    oy + a[1] * s,
                    ox + b[0] * s,
                    oy + b[1] * s
                );
            }
        }
    }
    if let Some((_, layers)) = frames.first() {
        for (k, (name, _)) in layers.iter().enumerate() {
            let _ = writeln!(out, r#"<text x="{}" y="{}" fill="{}">{}</text>"#, 12.0 + 110.0 * k as f64, 34.0, PALETTE[k % PALETTE.len()], escape(name));
        }
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stage2::InputMode;
    use crate::training::{AblationCell, AblationRow};

    fn parses(svg: &str) -> roxmltree::Document<'_> {
        roxmltree::Document::parse(svg).expect("well-formed svg")
    }

    #[test]
    fn two_point_loss_curve_is_well_formed() {
        let svg = loss_curve_svg("loss <train & val>", &[("train".into(), vec![10.0, 5.0]), ("val".into(), vec![12.0, f64::NAN])]);
        let doc = parses(&svg);
        assert_eq!(doc.root_element().tag_name().name(), "svg");
        assert_eq!(doc.descendants().filter(|n| n.has_tag_name("polyline")).count(), 2);
    }

    #[test]
    fn flat_and_empty_series_still_render() {
        parses(&loss_curve_svg("flat", &[("a".into(), vec![3.0, 3.0, 3.0])]));
        parses(&loss_curve_svg("empty", &[]));
    }

    #[test]
    fn rf_bars_have_one_rect_per_successful_cell() {
        let cell = |rf: usize, v: Option<f64>| AblationCell {
            kernel_width: 3,
            blocks: 2,
            receptive_field: rf,
            protocol1_mm: v,
            protocol2_mm: v,
            error: None,
        };
        let table = AblationTable {
            receptive_fields: vec![1, 27, 81, 243],
            rows: vec![AblationRow {
                input_mode: InputMode::Pose2d,
                sigma: 0.1,
                cells: vec![cell(1, Some(50.0)), cell(27, Some(48.0)), cell(81, None), cell(243, Some(45.0))],
            }],
        };
        let svg = rf_error_svg("grid", &table);
        let doc = parses(&svg);
        assert_eq!(doc.descendants().filter(|n| n.has_tag_name("rect")).count(), 1 + 3);
        for rf in ["1", "27", "81", "243"] {
            assert!(doc.descendants().any(|n| n.has_tag_name("text") && n.text() == Some(rf)));
        }
    }

    #[test]
    fn overlay_draws_every_bone_per_layer() {
        let sk = SkeletonSpec::h36m17();
        let obs = PoseObservation { uv: vec![[500.0, 500.0]; 17], depth_mm: vec![0.0; 17] };
        let frames = vec![(0, vec![("gt".to_string(), obs.clone()), ("obs".to_string(), obs)])];
        let svg = skeleton_overlay_svg("overlay", &sk, &CameraIntrinsics::benchmark(), &frames);
        let doc = parses(&svg);
        assert_eq!(doc.descendants().filter(|n| n.has_tag_name("line")).count(), 2 * 16);
    }
}
