use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::embed::LatentEmbedding;
use super::scores::{PropertyScores, PROPERTIES};
use crate::error::{Error, Result};
use crate::models::LATENT;

const SIZE: f64 = 480.0;
const MARGIN: f64 = 50.0;

/// Fill colour for a marker; `t` in [0, 1] is the score's position between
/// the smallest and largest score. Known materials are red, unknown blue;
/// the shared channel darkens as the score grows.
pub fn marker_fill(known: bool, t: f64) -> (u8, u8, u8) {
    let t = t.clamp(0.0, 1.0);
    let shade = (225.0 - 200.0 * t).round() as u8;
    let hue = (255.0 - 80.0 * t).round() as u8;
    if known {
        (hue, shade, shade)
    } else {
        (shade, shade, hue)
    }
}

fn base_name(i: usize, j: usize, property: &str) -> String {
    format!("scatter_z{}{}_{property}", i + 1, j + 1)
}

fn scale(v: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        (v - lo) / (hi - lo)
    } else {
        0.5
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Writes `scatter_z{i}{j}_{property}.csv` and `.svg` into `out` for latent
/// axes `i`, `j` (0-based) and property column `property` of
/// [`PROPERTIES`]. Returns the two paths.
pub fn emit_scatter(
    embeddings: &[LatentEmbedding],
    scores: &BTreeMap<usize, PropertyScores>,
    axes: (usize, usize),
    property: usize,
    out: &Path,
) -> Result<[PathBuf; 2]> {
    let (i, j) = axes;
    if i >= LATENT || j >= LATENT || property >= PROPERTIES.len() {
        return Err(Error::InvalidArgument(format!(
            "axes ({i}, {j}) or property {property} out of range"
        )));
    }
    let name = PROPERTIES[property];
    let rows = embeddings
        .iter()
        .map(|e| {
            let s = scores
                .get(&e.material_id)
                .ok_or_else(|| Error::InvalidArgument(format!("no scores for material {}", e.material_id)))?;
            Ok((e, s.get(property)))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut csv = format!("material_id,known,z_{},z_{},score\n", i + 1, j + 1);
    for (e, s) in &rows {
        writeln!(csv, "{},{},{:.9},{:.9},{:.9}", e.material_id, e.known, e.z[i], e.z[j], s).expect("string");
    }

    let (xlo, xhi) = range(rows.iter().map(|(e, _)| e.z[i]));
    let (ylo, yhi) = range(rows.iter().map(|(e, _)| e.z[j]));
    let (slo, shi) = range(rows.iter().map(|(_, s)| *s));
    let span = SIZE - 2.0 * MARGIN;
    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    )
    .expect("string");
    writeln!(svg, r#"<rect width="{SIZE}" height="{SIZE}" fill="white"/>"#).expect("string");
    writeln!(
        svg,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{span}" height="{span}" fill="none" stroke="black"/>"#
    )
    .expect("string");
    writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="14">z{}</text>"#,
        SIZE / 2.0,
        SIZE - 15.0,
        i + 1
    )
    .expect("string");
    writeln!(
        svg,
        r#"<text x="15" y="{}" text-anchor="middle" font-size="14" transform="rotate(-90 15 {})">z{}</text>"#,
        SIZE / 2.0,
        SIZE / 2.0,
        j + 1
    )
    .expect("string");
    writeln!(
        svg,
        r#"<text x="{}" y="30" text-anchor="middle" font-size="14">{name}: {slo:.3} to {shi:.3}</text>"#,
        SIZE / 2.0
    )
    .expect("string");
    for (e, s) in &rows {
        let x = MARGIN + 10.0 + scale(e.z[i], xlo, xhi) * (span - 20.0);
        let y = SIZE - MARGIN - 10.0 - scale(e.z[j], ylo, yhi) * (span - 20.0);
        let (r, g, b) = marker_fill(e.known, scale(*s, slo, shi));
        writeln!(
            svg,
            r##"<circle cx="{x:.2}" cy="{y:.2}" r="7" fill="#{r:02x}{g:02x}{b:02x}" stroke="black"/><text x="{:.2}" y="{:.2}" font-size="10">{}</text>"##,
            x + 9.0,
            y - 9.0,
            e.material_id
        )
        .expect("string");
    }
    svg.push_str("</svg>\n");

    let base = out.join(base_name(i, j, name));
    let csv_path = base.with_extension("csv");
    let svg_path = base.with_extension("svg");
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;
    std::fs::write(&svg_path, svg).map_err(|e| Error::io(&svg_path, e))?;
    Ok([csv_path, svg_path])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs() -> (Vec<LatentEmbedding>, BTreeMap<usize, PropertyScores>) {
        let mut embs = Vec::new();
        let mut scores = BTreeMap::new();
        for m in 0..25 {
            let v = m as f64;
            embs.push(LatentEmbedding {
                material_id: m,
                known: m < 15,
                z: [v.sin(), v.cos(), v, -v],
                samples: 3,
            });
            scores.insert(
                m,
                PropertyScores {
                    roughness: v,
                    hardness: 0.1,
                    friction: 0.2,
                    combined: 0.1 * v,
                },
            );
        }
        (embs, scores)
    }

    #[test]
    fn rows_and_deterministic_bytes() {
        let (embs, scores) = inputs();
        let dir = tempfile::tempdir().unwrap();
        let [csv, svg] = emit_scatter(&embs, &scores, (0, 1), 0, dir.path()).unwrap();
        assert!(csv.ends_with("scatter_z12_combined.csv"));
        let text = std::fs::read_to_string(&csv).unwrap();
        assert_eq!(text.lines().count(), 26);
        assert_eq!(text.lines().next().unwrap(), "material_id,known,z_1,z_2,score");
        let first = std::fs::read(&svg).unwrap();
        let other = tempfile::tempdir().unwrap();
        let [_, svg2] = emit_scatter(&embs, &scores, (0, 1), 0, other.path()).unwrap();
        assert_eq!(first, std::fs::read(svg2).unwrap());
        assert_eq!(String::from_utf8(first).unwrap().matches("<circle").count(), 25);
    }

    #[test]
    fn shading_darkens_with_score() {
        for known in [true, false] {
            let mut last = u8::MAX;
            for k in 0..=10 {
                let (r, g, b) = marker_fill(known, k as f64 / 10.0);
                assert_eq!(g, if known { b } else { r });
                assert!(g < last || k == 0);
                last = g;
            }
        }
    }

    #[test]
    fn bad_axes_rejected() {
        let (embs, scores) = inputs();
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_scatter(&embs, &scores, (0, 4), 0, dir.path()).is_err());
        assert!(emit_scatter(&embs, &scores, (0, 1), 3, dir.path()).is_err());
    }
}
