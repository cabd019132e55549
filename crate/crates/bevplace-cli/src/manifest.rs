use std::collections::HashMap;
use std::path::{Path, PathBuf};

use bevplace::retrieval::Pose;

use crate::error::{CliError, CliResult};

/// One manifest row: a place with its capture files. View and cloud paths
/// are resolved relative to the manifest's directory.
#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub id: u64,
    pub pose: Pose,
    pub views: Vec<PathBuf>,
    pub cloud: Option<PathBuf>,
    /// 1-based line in the manifest, for error messages.
    pub line: usize,
}

fn line_err(path: &Path, line: usize, message: impl std::fmt::Display) -> CliError {
    CliError::data(format!("{} line {line}: {message}", path.display()))
}

/// Parses a whitespace-separated manifest: `id x y yaw view_0 ...
/// view_{n-1} [cloud]` per line, `#` comments and blank lines ignored.
pub fn parse_manifest(path: &Path, expected_views: usize) -> CliResult<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::in_file(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut entries = Vec::new();
    let mut seen: HashMap<u64, usize> = HashMap::new();
    for (index, raw) in text.lines().enumerate() {
        let line = index + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = content.split_whitespace().collect();
        let min = 4 + expected_views;
        if tokens.len() < min || tokens.len() > min + 1 {
            return Err(line_err(
                path,
                line,
                format!(
                    "expected {min} or {} fields (id x y yaw {expected_views} views [cloud]), got {}",
                    min + 1,
                    tokens.len()
                ),
            ));
        }
        let id: u64 = tokens[0]
            .parse()
            .map_err(|_| line_err(path, line, format!("bad id {:?}", tokens[0])))?;
        if let Some(previous) = seen.insert(id, line) {
            return Err(line_err(
                path,
                line,
                format!("duplicate id {id} (first used on line {previous})"),
            ));
        }
        let mut coords = [0.0f64; 3];
        for (k, name) in ["x", "y", "yaw"].iter().enumerate() {
            let value: f64 = tokens[1 + k]
                .parse()
                .map_err(|_| line_err(path, line, format!("bad {name} {:?}", tokens[1 + k])))?;
            if !value.is_finite() {
                return Err(line_err(path, line, format!("non-finite {name}")));
            }
            coords[k] = value;
        }
        let views = tokens[4..4 + expected_views]
            .iter()
            .map(|token| base.join(token))
            .collect();
        let cloud = tokens.get(min).map(|token| base.join(token));
        entries.push(ManifestEntry {
            id,
            pose: Pose {
                x: coords[0],
                y: coords[1],
                yaw_deg: coords[2],
            },
            views,
            cloud,
            line,
        });
    }
    if entries.is_empty() {
        return Err(CliError::in_file(path, "manifest has no entries"));
    }
    Ok(entries)
}
