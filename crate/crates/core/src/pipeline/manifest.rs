use std::fmt::Write as _;
use std::path::Path;

use super::Label;
use crate::error::{Error, Result};

/// One manifest line: `<relative-path>\t<label>`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: String,
    pub label: Label,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Ingestion {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| Error::Ingestion {
            path: path.to_path_buf(),
            reason: format!("line {}: {reason}", lineno + 1),
        };
        let (rel, label) = line
            .split_once('\t')
            .ok_or_else(|| bad("expected <path>\\t<label>".into()))?;
        let label: Label = label.trim().parse().map_err(bad)?;
        if label == Label::Unknown {
            return Err(bad("manifest labels must be normal or anomalous".into()));
        }
        out.push(ManifestEntry {
            path: rel.to_string(),
            label,
        });
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut s = String::new();
    for e in entries {
        writeln!(s, "{}\t{}", e.path, e.label.as_str()).unwrap();
    }
    std::fs::write(path, s)?;
    Ok(())
}
