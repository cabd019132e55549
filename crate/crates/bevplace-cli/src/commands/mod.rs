pub mod build_db;
pub mod eval;
pub mod query;
pub mod synth;

use std::path::{Path, PathBuf};

use bevplace::bev::rgb_to_array;
use bevplace::pipeline::{config_hash, place_descriptor, PipelineParams, PlaceSummary};
use bevplace::{CameraRig, PlaceDatabase, PointCloud};

use crate::error::{CliError, CliResult};
use crate::manifest::ManifestEntry;

/// Stored descriptors are only comparable to ones computed with the same
/// settings, so refuse to query a database whose records carry a different
/// config hash.
fn check_provenance(
    db: &PlaceDatabase,
    params: &PipelineParams,
    db_path: &Path,
) -> CliResult<()> {
    let expected = config_hash(params);
    if db.records().iter().any(|r| r.feature.provenance != expected) {
        return Err(CliError::data(format!(
            "{}: database was built with different descriptor settings; \
             rebuild it or pass the config it was built with",
            db_path.display()
        )));
    }
    Ok(())
}

/// Computes the descriptor for one manifest entry. Cloud files are only
/// touched when the pipeline actually fuses; a fusing pipeline with no
/// cloud column is a manifest error.
fn describe_entry(
    rig: &CameraRig,
    params: &PipelineParams,
    manifest: &Path,
    entry: &ManifestEntry,
) -> CliResult<PlaceSummary> {
    let mut images = Vec::with_capacity(entry.views.len());
    for view in &entry.views {
        let image = image::open(view)
            .map_err(|e| CliError::in_file(view, e))?
            .to_rgb8();
        images.push(rgb_to_array(&image));
    }
    let cloud = if params.fusion.is_some() {
        let Some(path) = &entry.cloud else {
            return Err(CliError::data(format!(
                "{} line {}: entry {} has no cloud path but fusion is enabled",
                manifest.display(),
                entry.line,
                entry.id
            )));
        };
        Some(PointCloud::load(path).map_err(|e| CliError::in_file(path, e))?)
    } else {
        None
    };
    place_descriptor(rig, &images, cloud.as_ref(), params).map_err(|e| {
        CliError::data(format!(
            "{} line {}: entry {}: {e}",
            manifest.display(),
            entry.line,
            entry.id
        ))
    })
}

/// Running mean of the three pipeline stages, printed after batch jobs.
#[derive(Default)]
struct TimingLog {
    image_feature_ms: f64,
    bev_feature_ms: f64,
    aggregation_ms: f64,
    count: usize,
}

impl TimingLog {
    fn add(&mut self, summary: &PlaceSummary) {
        self.image_feature_ms += summary.timings.image_feature_ms;
        self.bev_feature_ms += summary.timings.bev_feature_ms;
        self.aggregation_ms += summary.timings.aggregation_ms;
        self.count += 1;
    }

    fn print(&self) {
        if self.count == 0 {
            return;
        }
        let n = self.count as f64;
        println!("Stage timings over {} descriptors:", self.count);
        println!("  Image Feature: {:.2} ms", self.image_feature_ms / n);
        println!("  BEV Feature: {:.2} ms", self.bev_feature_ms / n);
        println!("  Aggregation: {:.2} ms", self.aggregation_ms / n);
    }
}

/// Directory holding the per-place polar grids next to a database file.
fn sidecar_dir(db_path: &Path) -> PathBuf {
    let mut name = db_path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".polar");
    db_path.with_file_name(name)
}

fn sidecar_path(db_path: &Path, id: u64) -> PathBuf {
    sidecar_dir(db_path).join(format!("{id}.bevt"))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::in_file(path, e))
}
