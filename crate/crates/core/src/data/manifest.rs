//! Plain-text dataset manifest, one sample per line:
//!
//! ```text
//! <id> <modality> <image-path> <label-path>
//! ```
//!
//! Relative paths resolve against the manifest's directory. Blank lines and
//! lines starting with `#` are skipped. Images may be `.galt` tensors or
//! `.pgm`/`.ppm` rasters; labels `.pgm`/`.ppm` (nonzero = pothole) or `.galt`
//! (positive = pothole).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{load_galt, load_label_raster, load_raster, ClassMask, Modality, SegSample};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub modality: Modality,
    pub image: PathBuf,
    pub label: PathBuf,
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut entries = Vec::new();
    let mut offset = 0u64;
    for (lineno, line) in text.lines().enumerate() {
        let here = offset;
        offset += line.len() as u64 + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [id, modality, image, label] = fields[..] else {
            return Err(Error::format(
                here,
                format!("line {}: expected `<id> <modality> <image> <label>`", lineno + 1),
            ));
        };
        let modality = modality.parse()?;
        entries.push(ManifestEntry {
            id: id.to_string(),
            modality,
            image: base.join(image),
            label: base.join(label),
        });
    }
    if entries.is_empty() {
        return Err(Error::Value(format!("{}: manifest lists no samples", path.display())));
    }
    Ok(entries)
}

/// Writes entries with paths exactly as given (relative paths stay relative).
pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for e in entries {
        writeln!(out, "{} {} {} {}", e.id, e.modality, e.image.display(), e.label.display()).unwrap();
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn extension(p: &Path) -> String {
    p.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase()
}

fn load_entry(e: &ManifestEntry) -> Result<SegSample> {
    let image = match extension(&e.image).as_str() {
        "galt" => load_galt(&e.image)?,
        "pgm" | "ppm" | "pnm" => load_raster(&e.image)?,
        other => return Err(Error::Unsupported(format!("image extension `{other}` ({})", e.image.display()))),
    };
    if image.rank() != 3 {
        return Err(Error::Shape(format!("{}: image must be HxWxC, got {:?}", e.image.display(), image.shape())));
    }
    if image.last_dim() != e.modality.channels() {
        return Err(Error::Shape(format!(
            "{}: {} images have {} channel(s), got {}",
            e.image.display(),
            e.modality,
            e.modality.channels(),
            image.last_dim()
        )));
    }
    let label = match extension(&e.label).as_str() {
        "galt" => {
            let t = load_galt(&e.label)?;
            let s = t.shape();
            if s.len() < 2 || t.len() != s[0] * s[1] {
                return Err(Error::Shape(format!("{}: label must be HxW", e.label.display())));
            }
            ClassMask::new(s[0], s[1], t.data().iter().map(|&v| (v > 0.0) as u8).collect())?
        }
        "pgm" | "ppm" | "pnm" => load_label_raster(&e.label)?,
        other => return Err(Error::Unsupported(format!("label extension `{other}` ({})", e.label.display()))),
    };
    SegSample::new(e.id.clone(), e.modality, image, label)
}

/// Reads a manifest and every sample it lists.
pub fn load_samples(path: impl AsRef<Path>) -> Result<Vec<SegSample>> {
    load_manifest(path)?.iter().map(load_entry).collect()
}
