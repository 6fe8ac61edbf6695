//! Dataset manifest: CSV with header `path,mos`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub path: String,
    pub mos: f64,
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::path_io(path, e))?;
    Ok(())
}

/// Reads a manifest; relative video paths are resolved against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<(PathBuf, f64)>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["path", "mos"] {
        return Err(Error::Format(format!(
            "{}: manifest header must be `path,mos`",
            path.display()
        )));
    }
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for row in r.deserialize() {
        let row: ManifestRow = row?;
        let p = PathBuf::from(&row.path);
        out.push((if p.is_relative() { dir.join(p) } else { p }, row.mos));
    }
    Ok(out)
}
