//! SVG frames of an episode: the scene, the current patch, and which triads
//! still have support inside it.

use crate::env::EpisodeTrace;
use crate::geometry::BBox;
use crate::scene::Scene;
use std::fmt::Write;

const SCALE: f64 = 4.0;
const PANEL: f64 = 180.0;

fn rect(out: &mut String, b: &BBox, stroke: &str, width: f64, extra: &str) {
    let _ = writeln!(
        out,
        r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="{stroke}" stroke-width="{width}" {extra}/>"#,
        b.x_tl() * SCALE,
        b.y_tl() * SCALE,
        b.width() * SCALE,
        b.height() * SCALE,
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Frame `k` shows the patch after `k` actions (frame 0 is the whole image).
pub fn render_frame(scene: &Scene, trace: &EpisodeTrace, k: usize) -> String {
    let w = scene.frame.width() * SCALE;
    let h = scene.frame.height() * SCALE;
    let (patch, active, caption) = if k == 0 {
        (trace.initial_patch, trace.initial_active.as_slice(), "start".to_string())
    } else {
        let s = &trace.steps[k - 1];
        (
            s.patch,
            s.active.as_slice(),
            format!("step {k}: {:?}  reward {}  IoU {:.3}", s.action, s.reward, s.iou),
        )
    };
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}" font-family="monospace" font-size="12">"#,
        w + PANEL,
        h + 40.0
    );
    let _ = writeln!(out, r#"<rect width="{w:.0}" height="{h:.0}" fill="white" stroke="black"/>"#);
    for o in &scene.objects {
        let target = o.id == trace.target_id;
        rect(&mut out, &o.bbox, if target { "#2a9d2a" } else { "#888" }, if target { 2.0 } else { 1.0 }, "");
        let label: Vec<&str> = std::iter::once(o.category.as_str()).chain(o.attributes.iter().map(String::as_str)).collect();
        let _ = writeln!(
            out,
            r##"<text x="{:.2}" y="{:.2}" fill="#444">{}</text>"##,
            o.bbox.x_tl() * SCALE + 2.0,
            o.bbox.y_tl() * SCALE + 12.0,
            escape(&label.join(" "))
        );
    }
    rect(&mut out, &patch, "#1f5fbf", 3.0, r#"stroke-dasharray="6 3""#);
    if k == trace.steps.len() {
        if let Some(r) = &trace.refined_box {
            rect(&mut out, r, "#d07a00", 2.0, "");
        }
    }
    let _ = writeln!(out, r#"<text x="4" y="{:.0}">{}</text>"#, h + 16.0, escape(&trace.query));
    let _ = writeln!(out, r#"<text x="4" y="{:.0}">{}</text>"#, h + 32.0, escape(&caption));
    for (i, (t, on)) in trace.triads.iter().zip(active).enumerate() {
        let _ = writeln!(
            out,
            r#"<text x="{:.0}" y="{:.0}" fill="{}">({}, {}, {})</text>"#,
            w + 8.0,
            16.0 + 16.0 * i as f64,
            if *on { "black" } else { "#bbb" },
            escape(&t.target),
            escape(&t.reference),
            escape(&t.discriminative)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// All frames of an episode, the start frame first.
pub fn render_frames(scene: &Scene, trace: &EpisodeTrace) -> Vec<String> {
    (0..=trace.steps.len()).map(|k| render_frame(scene, trace, k)).collect()
}
