//! Self-contained SVG strip of the keypoint skeletons along a latent walk.

use std::fmt::Write;

use xmvae_core::hand::skeleton::parent;
use xmvae_core::hand::NUM_JOINTS;
use xmvae_core::latent::WalkResult;
use xmvae_core::{Error, Modality, Result};

const PANEL: f64 = 120.0;
const MARGIN: f64 = 10.0;
const FINGER_COLORS: [&str; 5] = ["#d62728", "#ff7f0e", "#2ca02c", "#1f77b4", "#9467bd"];

/// x, y of every joint: 2D decodings when present, otherwise the x, y
/// components of 3D decodings.
fn planar(walk: &WalkResult) -> Result<(Modality, Vec<Vec<[f64; 2]>>)> {
    let mods = walk.modalities();
    let m = if mods.contains(&Modality::Keypoints2d) {
        Modality::Keypoints2d
    } else if mods.contains(&Modality::Joints3d) {
        Modality::Joints3d
    } else {
        return Err(Error::InvalidArgument("walk has no decoded keypoints".into()));
    };
    let c = m.coords();
    let frames = walk
        .steps
        .iter()
        .map(|s| s.outputs[&m].chunks_exact(c).map(|p| [p[0], p[1]]).collect())
        .collect();
    Ok((m, frames))
}

/// One panel per walk step, left to right, sharing a common scale. Image y
/// points down, so keypoint y is flipped.
pub fn walk_svg(walk: &WalkResult) -> Result<String> {
    let (m, frames) = planar(walk)?;
    let pts = frames.iter().flatten();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in pts {
        for c in 0..2 {
            lo[c] = lo[c].min(p[c]);
            hi[c] = hi[c].max(p[c]);
        }
    }
    if !(lo[0].is_finite() && hi[0].is_finite() && lo[1].is_finite() && hi[1].is_finite()) {
        return Err(Error::InvalidArgument("walk keypoints are not finite".into()));
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-12);
    let s = (PANEL - 2.0 * MARGIN) / span;
    let width = PANEL * frames.len() as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{h}" viewBox="0 0 {width} {h}">"#,
        h = PANEL + 20.0
    );
    let _ = writeln!(out, r#"<title>latent walk ({m} decoder)</title>"#);
    let _ = writeln!(out, r#"<rect width="{width}" height="{}" fill="white"/>"#, PANEL + 20.0);
    for (i, (frame, step)) in frames.iter().zip(&walk.steps).enumerate() {
        let ox = PANEL * i as f64;
        let xy = |p: [f64; 2]| (ox + MARGIN + (p[0] - lo[0]) * s, MARGIN + (hi[1] - p[1]) * s);
        let _ = writeln!(out, r#"<g id="step{i}">"#);
        for j in 1..NUM_JOINTS {
            let (x1, y1) = xy(frame[parent(j)]);
            let (x2, y2) = xy(frame[j]);
            let color = FINGER_COLORS[(j - 1) / 4];
            let _ = writeln!(
                out,
                r#"<line x1="{x1:.3}" y1="{y1:.3}" x2="{x2:.3}" y2="{y2:.3}" stroke="{color}" stroke-width="2"/>"#
            );
        }
        let (px, py) = xy(frame[0]);
        let _ = writeln!(out, r#"<circle cx="{px:.3}" cy="{py:.3}" r="3" fill="black"/>"#);
        let _ = writeln!(
            out,
            r#"<text x="{:.3}" y="{:.3}" font-size="11" text-anchor="middle">λ={:.2}</text>"#,
            ox + PANEL / 2.0,
            PANEL + 12.0,
            step.lambda
        );
        let _ = writeln!(out, "</g>");
    }
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;
    use xmvae_core::latent::WalkStep;

    fn walk(m: Modality, steps: usize) -> WalkResult {
        WalkResult {
            steps: (0..steps)
                .map(|i| {
                    let v: Vec<f64> = (0..m.flat_dim()).map(|k| (k + i) as f64 * 0.1).collect();
                    WalkStep {
                        lambda: i as f64 / (steps - 1) as f64,
                        z: vec![0.0],
                        outputs: BTreeMap::from([(m, v)]),
                    }
                })
                .collect(),
        }
    }

    #[test]
    fn one_group_per_step() {
        let svg = walk_svg(&walk(Modality::Keypoints2d, 3)).unwrap();
        assert_eq!(svg.matches("<g ").count(), 3);
        assert_eq!(svg.matches("<line ").count(), 3 * 20);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn falls_back_to_3d() {
        let svg = walk_svg(&walk(Modality::Joints3d, 2)).unwrap();
        assert!(svg.contains("3d decoder"));
        let empty = WalkResult { steps: vec![] };
        assert!(walk_svg(&empty).is_err());
    }
}
