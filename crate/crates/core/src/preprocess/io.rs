//! Manifest, tactile CSV and record-file formats.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::tactile::{AXES, TAXELS};

/// One raw recording: a surface image and the tactile sequence of a stroke.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub material_id: usize,
    pub stroke_id: usize,
    pub image: PathBuf,
    pub tactile: PathBuf,
}

/// Reads `material_id, stroke_id, image, tactile` lines. Relative paths are
/// resolved against the manifest's directory; blank lines and `#` comments
/// are skipped.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |m: &str| Error::format(path, format!("line {}: {m}", n + 1));
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [m, s, img, tac] = fields[..] else {
            return Err(bad("expected 4 comma-separated fields"));
        };
        out.push(ManifestEntry {
            material_id: m.parse().map_err(|_| bad("bad material id"))?,
            stroke_id: s.parse().map_err(|_| bad("bad stroke id"))?,
            image: base.join(img),
            tactile: base.join(tac),
        });
    }
    Ok(out)
}

/// Writes a manifest; paths are stored relative to its directory when
/// possible.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new(""));
    let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
    let mut text = String::from("# material_id, stroke_id, image, tactile\n");
    for e in entries {
        writeln!(
            text,
            "{}, {}, {}, {}",
            e.material_id,
            e.stroke_id,
            rel(&e.image),
            rel(&e.tactile)
        )
        .unwrap();
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub const CSV_HEADER: &str = "step,taxel,fx,fy,fz";

/// Serializes a raw `[3, 4, 4, T]` sequence, one row per step and taxel.
pub fn tactile_csv(seq: &Tensor) -> String {
    let t = seq.shape()[3];
    let mut text = String::with_capacity(t * TAXELS * 24);
    text.push_str(CSV_HEADER);
    text.push('\n');
    let d = seq.data();
    for step in 0..t {
        for taxel in 0..TAXELS {
            let v = |axis: usize| d[(axis * TAXELS + taxel) * t + step];
            writeln!(text, "{step},{taxel},{},{},{}", v(0), v(1), v(2)).unwrap();
        }
    }
    text
}

pub fn write_tactile_csv(path: &Path, seq: &Tensor) -> Result<()> {
    fs::write(path, tactile_csv(seq)).map_err(|e| Error::io(path, e))
}

/// Parses a tactile CSV into a `[3, 4, 4, T]` tensor. Every (step, taxel)
/// pair must appear exactly once.
pub fn read_tactile_csv(path: &Path) -> Result<Tensor> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(CSV_HEADER) {
        return Err(Error::format(path, format!("expected header `{CSV_HEADER}`")));
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::format(path, format!("row {}: malformed `{line}`", n + 1));
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 5 {
            return Err(bad());
        }
        let step: usize = f[0].parse().map_err(|_| bad())?;
        let taxel: usize = f[1].parse().map_err(|_| bad())?;
        let mut v = [0.0; AXES];
        for a in 0..AXES {
            v[a] = f[2 + a].parse().map_err(|_| bad())?;
        }
        if taxel >= TAXELS {
            return Err(bad());
        }
        rows.push((step, taxel, v));
    }
    if rows.is_empty() || rows.len() % TAXELS != 0 {
        return Err(Error::format(path, format!("{} rows is not a whole number of steps", rows.len())));
    }
    let t = rows.len() / TAXELS;
    let mut data = vec![0.0; AXES * TAXELS * t];
    let mut seen = vec![false; TAXELS * t];
    for (step, taxel, v) in rows {
        if step >= t || std::mem::replace(&mut seen[step * TAXELS + taxel], true) {
            return Err(Error::format(path, format!("step {step}, taxel {taxel}: out of range or repeated")));
        }
        for a in 0..AXES {
            data[(a * TAXELS + taxel) * t + step] = v[a];
        }
    }
    Tensor::new(vec![AXES, 4, 4, t], data)
}

/// One paired example: edge image `[1, 200, 200]` and normalized tactile
/// sequence `[3, 4, 4, 90]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub material_id: usize,
    pub stroke_id: usize,
    pub augmentation_id: usize,
    pub image: Tensor,
    pub tactile: Tensor,
}

impl SampleRecord {
    pub fn key(&self) -> String {
        format!("{}/{}/{}", self.material_id, self.stroke_id, self.augmentation_id)
    }
}

pub fn write_records(path: &Path, records: &[SampleRecord]) -> Result<()> {
    let mut entries = Vec::with_capacity(records.len() * 2);
    for r in records {
        entries.push((format!("image/{}", r.key()), r.image.clone()));
        entries.push((format!("tactile/{}", r.key()), r.tactile.clone()));
    }
    checkpoint::write(path, &entries)
}

pub fn read_records(path: &Path) -> Result<Vec<SampleRecord>> {
    let entries = checkpoint::read(path)?;
    if entries.len() % 2 != 0 {
        return Err(Error::format(path, "unpaired record entries"));
    }
    entries
        .chunks_exact(2)
        .map(|pair| {
            let (ni, image) = &pair[0];
            let (nt, tactile) = &pair[1];
            let key = ni
                .strip_prefix("image/")
                .filter(|k| nt.strip_prefix("tactile/") == Some(k))
                .ok_or_else(|| Error::format(path, format!("unexpected entries `{ni}`, `{nt}`")))?;
            let ids: Vec<usize> = key
                .split('/')
                .map(|s| s.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::format(path, format!("bad record key `{key}`")))?;
            let [m, s, a] = ids[..] else {
                return Err(Error::format(path, format!("bad record key `{key}`")));
            };
            Ok(SampleRecord {
                material_id: m,
                stroke_id: s,
                augmentation_id: a,
                image: image.clone(),
                tactile: tactile.clone(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.txt");
        let entries = vec![ManifestEntry {
            material_id: 3,
            stroke_id: 9,
            image: dir.path().join("img/m3_s9.png"),
            tactile: dir.path().join("tac/m3_s9.csv"),
        }];
        write_manifest(&path, &entries).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains("3, 9, img/m3_s9.png, tac/m3_s9.csv"));
        assert_eq!(read_manifest(&path).unwrap(), entries);
        fs::write(&path, "1, 2, a.png\n").unwrap();
        assert!(read_manifest(&path).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let seq = Tensor::from_fn(&[3, 4, 4, 900], |i| (i % 65536) as f64);
        write_tactile_csv(&path, &seq).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1 + 900 * 16);
        assert_eq!(read_tactile_csv(&path).unwrap(), seq);
    }

    #[test]
    fn csv_rejects_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let mut text = String::from("step,taxel,fx,fy,fz\n");
        for taxel in 0..16 {
            text.push_str(&format!("0,{},1,2,3\n", taxel.min(14)));
        }
        fs::write(&path, text).unwrap();
        assert!(read_tactile_csv(&path).is_err());
    }

    #[test]
    fn records_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.vtl");
        let rec = |m, a| SampleRecord {
            material_id: m,
            stroke_id: 2,
            augmentation_id: a,
            image: Tensor::filled(&[1, 200, 200], m as f64 / 10.0),
            tactile: Tensor::filled(&[3, 4, 4, 90], -0.5),
        };
        let recs = vec![rec(0, 63), rec(14, 0)];
        write_records(&path, &recs).unwrap();
        assert_eq!(read_records(&path).unwrap(), recs);
    }
}
