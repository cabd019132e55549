use std::fmt::Write as _;
use std::path::Path;

use bevplace::spectral::{estimate_yaw, PolarBev};
use bevplace::tensor_io::read_array3;
use bevplace::PlaceDatabase;

use crate::config::{load_config, ModeArg};
use crate::error::{CliError, CliResult};
use crate::manifest::parse_manifest;

use super::{describe_entry, sidecar_path, write_text, TimingLog};

/// Polar grid of a database place, restored from its sidecar file.
pub(super) fn load_sidecar(db_path: &Path, id: u64, r_max: f64) -> CliResult<PolarBev> {
    let path = sidecar_path(db_path, id);
    let data = read_array3(&path).map_err(|e| CliError::in_file(&path, e))?;
    PolarBev::new(data, r_max).map_err(|e| CliError::in_file(&path, e))
}

pub fn run(
    config: &Path,
    db_path: &Path,
    manifest: &Path,
    out: &Path,
    top_n: Option<usize>,
    mode: Option<ModeArg>,
    fuse: bool,
) -> CliResult<()> {
    let loaded = load_config(config, mode, fuse)?;
    let top_n = top_n.unwrap_or(loaded.top_n);
    if top_n == 0 {
        return Err(CliError::usage("--topn must be at least 1"));
    }
    let entries = parse_manifest(manifest, loaded.rig.views().len())?;
    let db = PlaceDatabase::load(db_path).map_err(|e| CliError::in_file(db_path, e))?;
    super::check_provenance(&db, &loaded.params, db_path)?;

    let mut csv = String::from("query_id,rank,match_id,distance,match_x,match_y,yaw_deg\n");
    let mut timings = TimingLog::default();
    for entry in &entries {
        let summary = describe_entry(&loaded.rig, &loaded.params, manifest, entry)?;
        timings.add(&summary);
        let hits = db
            .query_top_n(&summary.feature, top_n)
            .map_err(|e| CliError::in_file(db_path, e))?;
        for (rank, hit) in hits.iter().enumerate() {
            let yaw = if rank == 0 {
                let best = load_sidecar(db_path, hit.id, summary.polar.r_max())?;
                let estimate = estimate_yaw(&summary.polar, &best)
                    .map_err(|e| CliError::in_file(db_path, e))?;
                format!("{:.1}", estimate.argmax_angle_deg)
            } else {
                String::new()
            };
            writeln!(
                csv,
                "{},{},{},{:.6},{:.3},{:.3},{yaw}",
                entry.id,
                rank + 1,
                hit.id,
                hit.distance,
                hit.pose.x,
                hit.pose.y
            )
            .expect("write to string");
        }
    }
    write_text(out, &csv)?;
    timings.print();
    println!("Wrote {} queries to {}", entries.len(), out.display());
    Ok(())
}
