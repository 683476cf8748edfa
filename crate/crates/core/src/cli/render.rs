//! Stick-figure SVG frames: orthographic x–y projection (z dropped), one
//! bounding box shared by every frame of the sequence so figures stay put.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{skeleton_edges, PoseSequence, JOINTS};
use crate::error::{Result, SignError};

const CANVAS: f64 = 400.0;
const PAD: f64 = 20.0;

#[derive(Clone, Copy, Debug)]
struct Frame {
    min_x: f64,
    min_y: f64,
    scale: f64,
}

impl Frame {
    fn of(seq: &PoseSequence) -> Frame {
        let (mut lo_x, mut hi_x, mut lo_y, mut hi_y) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for t in 0..seq.len() {
            for j in 0..JOINTS {
                let [x, y, _] = seq.joint(t, j);
                lo_x = lo_x.min(x);
                hi_x = hi_x.max(x);
                lo_y = lo_y.min(y);
                hi_y = hi_y.max(y);
            }
        }
        let span = (hi_x - lo_x).max(hi_y - lo_y);
        let scale = if span > 1e-12 { (CANVAS - 2.0 * PAD) / span } else { 1.0 };
        Frame {
            min_x: lo_x,
            min_y: lo_y,
            scale,
        }
    }

    /// Pose y points up, SVG y points down.
    fn map(&self, x: f64, y: f64, height: f64) -> (f64, f64) {
        let px = PAD + (x - self.min_x) * self.scale;
        let py = PAD + height - (y - self.min_y) * self.scale;
        (px, py)
    }
}

fn frame_svg(seq: &PoseSequence, t: usize, box_: Frame) -> String {
    let height = CANVAS - 2.0 * PAD;
    let pts: Vec<(f64, f64)> = (0..JOINTS)
        .map(|j| {
            let [x, y, _] = seq.joint(t, j);
            box_.map(x, y, height)
        })
        .collect();
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{CANVAS}" height="{CANVAS}" viewBox="0 0 {CANVAS} {CANVAS}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<g stroke="black" stroke-width="2" stroke-linecap="round">"#);
    for (a, b) in skeleton_edges() {
        let _ = writeln!(
            s,
            r#"<line x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}"/>"#,
            pts[a].0, pts[a].1, pts[b].0, pts[b].1
        );
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g fill="crimson">"#);
    for (j, (x, y)) in pts.iter().enumerate() {
        let _ = writeln!(s, r#"<circle id="j{j}" cx="{x:.3}" cy="{y:.3}" r="2.5"/>"#);
    }
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    s
}

/// SVG text of frame `t`, scaled by the bounding box of the whole sequence.
pub fn render_frame_svg(seq: &PoseSequence, t: usize) -> Result<String> {
    if t >= seq.len() {
        return Err(SignError::invalid("frame", format!("{t} out of range for {} frames", seq.len())));
    }
    Ok(frame_svg(seq, t, Frame::of(seq)))
}

/// Writes `frame_{t:04}.svg` for t = 0, stride, 2·stride, …
pub fn render_svgs(seq: &PoseSequence, out_dir: &Path, stride: usize) -> Result<Vec<PathBuf>> {
    if stride == 0 {
        return Err(SignError::invalid("stride", "must be at least 1"));
    }
    fs::create_dir_all(out_dir).map_err(|e| SignError::io(out_dir, e))?;
    let box_ = Frame::of(seq);
    let mut written = Vec::new();
    for t in (0..seq.len()).step_by(stride) {
        let path = out_dir.join(format!("frame_{t:04}.svg"));
        fs::write(&path, frame_svg(seq, t, box_)).map_err(|e| SignError::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
