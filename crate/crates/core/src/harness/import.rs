//! Conversion of an externally recorded dataset into the manifest layout.
//!
//! Expected source layout: one directory per material directly under the
//! source root. Directories are sorted by name and numbered from 0, so the
//! first `known_materials` names become the training materials. Inside each,
//! `*.png` images and `*.csv` tactile recordings are sorted by file name and
//! paired in order; the n-th pair becomes stroke n.
//!
//! Tactile files may already be in the `step,taxel,fx,fy,fz` format, or be
//! "wide": one row per time step with 48 numbers, taxel-major with x, y, z per
//! taxel, taxels numbered row-major over the 4x4 grid. A first line that does
//! not parse as numbers is treated as a header and skipped.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::preprocess::io::{read_tactile_csv, write_manifest, write_tactile_csv, CSV_HEADER};
use crate::preprocess::tactile::{AXES, TAXELS};
use crate::preprocess::ManifestEntry;
use crate::tensor::Tensor;

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    v.sort();
    Ok(v)
}

fn with_ext(files: &[PathBuf], ext: &str) -> Vec<PathBuf> {
    files
        .iter()
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext)))
        .cloned()
        .collect()
}

/// Reads a wide-format recording into `[3, 4, 4, T]`.
pub fn read_wide_csv(path: &Path) -> Result<Tensor> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let width = AXES * TAXELS;
    let mut steps: Vec<Vec<f64>> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            line.split([',', ';', '\t']).map(|f| f.trim().parse::<f64>()).collect();
        match parsed {
            Ok(row) if row.len() == width => steps.push(row),
            Err(_) if n == 0 => continue,
            _ => {
                return Err(Error::format(
                    path,
                    format!("line {}: expected {width} numeric columns", n + 1),
                ))
            }
        }
    }
    if steps.is_empty() {
        return Err(Error::format(path, "no samples"));
    }
    let t = steps.len();
    let mut data = vec![0.0; width * t];
    for (step, row) in steps.iter().enumerate() {
        for taxel in 0..TAXELS {
            for axis in 0..AXES {
                data[(axis * TAXELS + taxel) * t + step] = row[taxel * AXES + axis];
            }
        }
    }
    Tensor::new(vec![AXES, 4, 4, t], data)
}

fn read_any(path: &Path) -> Result<Tensor> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.lines().next().map(str::trim) == Some(CSV_HEADER) {
        read_tactile_csv(path)
    } else {
        read_wide_csv(path)
    }
}

/// Converts `source` into `out/images`, `out/tactile` and
/// `out/manifest.txt`. Returns the manifest entries and the material
/// directory name behind each id.
pub fn import_dataset(source: &Path, out: &Path) -> Result<(Vec<ManifestEntry>, Vec<String>)> {
    let materials: Vec<PathBuf> = sorted_entries(source)?.into_iter().filter(|p| p.is_dir()).collect();
    if materials.is_empty() {
        return Err(Error::format(source, "no material directories found"));
    }
    for sub in ["images", "tactile"] {
        let d = out.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut entries = Vec::new();
    let mut names = Vec::new();
    for (material_id, dir) in materials.iter().enumerate() {
        let files = sorted_entries(dir)?;
        let images = with_ext(&files, "png");
        let tactile = with_ext(&files, "csv");
        if images.is_empty() || images.len() != tactile.len() {
            return Err(Error::format(
                dir,
                format!("{} png and {} csv files; need equal nonzero counts", images.len(), tactile.len()),
            ));
        }
        for (stroke_id, (img, tac)) in images.iter().zip(&tactile).enumerate() {
            let image = out.join("images").join(format!("m{material_id:03}_s{stroke_id:02}.png"));
            std::fs::copy(img, &image).map_err(|e| Error::io(img, e))?;
            let seq = read_any(tac)?;
            let tac_out = out.join("tactile").join(format!("m{material_id:03}_s{stroke_id:02}.csv"));
            write_tactile_csv(&tac_out, &seq)?;
            entries.push(ManifestEntry {
                material_id,
                stroke_id,
                image,
                tactile: tac_out,
            });
        }
        names.push(dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
    }
    write_manifest(&out.join("manifest.txt"), &entries)?;
    let names_path = out.join("material_names.txt");
    let listing: String = names.iter().enumerate().map(|(i, n)| format!("{i},{n}\n")).collect();
    std::fs::write(&names_path, listing).map_err(|e| Error::io(&names_path, e))?;
    Ok((entries, names))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::io::read_manifest;
    use crate::preprocess::RawImage;

    #[test]
    fn wide_csv_maps_columns_to_axes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.csv");
        let mut text = String::from("header,stuff\n");
        for step in 0..3 {
            let row: Vec<String> = (0..48).map(|c| (step * 100 + c).to_string()).collect();
            text.push_str(&row.join(","));
            text.push('\n');
        }
        std::fs::write(&path, text).unwrap();
        let t = read_wide_csv(&path).unwrap();
        assert_eq!(t.shape(), &[3, 4, 4, 3]);
        // taxel 5, axis z (2), step 2 -> column 17
        assert_eq!(t.data()[(2 * 16 + 5) * 3 + 2], 217.0);
    }

    #[test]
    fn imports_material_directories() {
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let img = RawImage::from_fn(8, 8, |x, y| [x as u8 * 10, y as u8, 0]);
        for name in ["b_wood", "a_felt"] {
            let d = src.path().join(name);
            std::fs::create_dir(&d).unwrap();
            for s in 0..2 {
                img.write_png(&d.join(format!("img{s}.png"))).unwrap();
                let seq = Tensor::from_fn(&[3, 4, 4, 5], |i| i as f64);
                write_tactile_csv(&d.join(format!("tac{s}.csv")), &seq).unwrap();
            }
        }
        let (entries, names) = import_dataset(src.path(), out.path()).unwrap();
        assert_eq!(names, vec!["a_felt", "b_wood"]);
        assert_eq!(entries.len(), 4);
        let back = read_manifest(&out.path().join("manifest.txt")).unwrap();
        assert_eq!(back.len(), 4);
        assert_eq!(RawImage::read_png(&back[3].image).unwrap(), img);
        assert_eq!(read_tactile_csv(&back[0].tactile).unwrap().shape(), &[3, 4, 4, 5]);
    }

    #[test]
    fn unpaired_files_rejected() {
        let src = tempfile::tempdir().unwrap();
        let d = src.path().join("m");
        std::fs::create_dir(&d).unwrap();
        std::fs::write(d.join("x.csv"), "1").unwrap();
        let out = tempfile::tempdir().unwrap();
        assert!(import_dataset(src.path(), out.path()).is_err());
    }
}
