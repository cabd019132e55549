use std::path::Path;

use bevplace::retrieval::{dedup_by_spacing, PlaceRecord, MIN_PLACE_SPACING};
use bevplace::tensor_io::write_array3;
use bevplace::PlaceDatabase;

use crate::config::{load_config, ModeArg};
use crate::error::{CliError, CliResult};
use crate::manifest::parse_manifest;

use super::{describe_entry, sidecar_dir, sidecar_path, TimingLog};

pub fn run(
    config: &Path,
    manifest: &Path,
    db_path: &Path,
    mode: Option<ModeArg>,
    fuse: bool,
) -> CliResult<()> {
    let loaded = load_config(config, mode, fuse)?;
    let entries = parse_manifest(manifest, loaded.rig.views().len())?;

    let kept = dedup_by_spacing(&entries, |e| (e.pose.x, e.pose.y), MIN_PLACE_SPACING)
        .map_err(|e| CliError::in_file(manifest, e))?;
    println!(
        "Keeping {} of {} places (min spacing {MIN_PLACE_SPACING} m)",
        kept.len(),
        entries.len()
    );

    let polar_dir = sidecar_dir(db_path);
    std::fs::create_dir_all(&polar_dir).map_err(|e| CliError::in_file(&polar_dir, e))?;

    let mut db = PlaceDatabase::new();
    let mut timings = TimingLog::default();
    for index in kept {
        let entry = &entries[index];
        let summary = describe_entry(&loaded.rig, &loaded.params, manifest, entry)?;
        timings.add(&summary);
        let polar_path = sidecar_path(db_path, entry.id);
        write_array3(&polar_path, summary.polar.data())
            .map_err(|e| CliError::in_file(&polar_path, e))?;
        db.insert(PlaceRecord {
            id: entry.id,
            pose: entry.pose,
            feature: summary.feature,
            polar: Some(summary.polar),
        })
        .map_err(|e| {
            CliError::data(format!(
                "{} line {}: {e}",
                manifest.display(),
                entry.line
            ))
        })?;
    }
    db.save(db_path).map_err(|e| CliError::in_file(db_path, e))?;
    timings.print();
    println!("Wrote {} places to {}", db.len(), db_path.display());
    Ok(())
}
