use std::fmt::Write as _;
use std::path::Path;

use bevplace::retrieval::{evaluate_retrieval, yaw_error_deg, QuerySample};
use bevplace::spectral::estimate_yaw;
use bevplace::PlaceDatabase;

use crate::config::{load_config, ModeArg};
use crate::error::{CliError, CliResult};
use crate::manifest::parse_manifest;

use super::{describe_entry, write_text, TimingLog};

pub fn run(
    config: &Path,
    db_path: &Path,
    manifest: &Path,
    out_dir: &Path,
    criterion_meters: Option<f64>,
    mode: Option<ModeArg>,
    fuse: bool,
) -> CliResult<()> {
    let loaded = load_config(config, mode, fuse)?;
    let mut eval_config = loaded.eval;
    if let Some(meters) = criterion_meters {
        if !(meters > 0.0) || !meters.is_finite() {
            return Err(CliError::usage("--criterion-meters must be positive"));
        }
        eval_config.criterion_meters = meters;
    }
    let entries = parse_manifest(manifest, loaded.rig.views().len())?;
    let db = PlaceDatabase::load(db_path).map_err(|e| CliError::in_file(db_path, e))?;
    super::check_provenance(&db, &loaded.params, db_path)?;

    let mut queries = Vec::with_capacity(entries.len());
    let mut yaw_errors = Vec::with_capacity(entries.len());
    let mut per_query = String::from(
        "query_id,top1_id,distance,planar_error_m,correct,yaw_est_deg,yaw_error_deg\n",
    );
    let mut timings = TimingLog::default();
    for entry in &entries {
        let summary = describe_entry(&loaded.rig, &loaded.params, manifest, entry)?;
        timings.add(&summary);
        let top = db
            .query_top_n(&summary.feature, 1)
            .map_err(|e| CliError::in_file(db_path, e))?;
        let hit = top.first().expect("database is never empty after load");
        let best = super::query::load_sidecar(db_path, hit.id, summary.polar.r_max())?;
        let estimate =
            estimate_yaw(&summary.polar, &best).map_err(|e| CliError::in_file(db_path, e))?;
        // The estimator reports how far the query heading is rotated away
        // from the matched capture.
        let truth = (hit.pose.yaw_deg - entry.pose.yaw_deg).rem_euclid(360.0);
        let yaw_error = yaw_error_deg(estimate.argmax_angle_deg, truth);
        yaw_errors.push(yaw_error);
        let planar = hit.pose.planar_distance(&entry.pose);
        let correct = planar <= eval_config.criterion_meters;
        writeln!(
            per_query,
            "{},{},{:.6},{:.3},{},{:.1},{:.2}",
            entry.id,
            hit.id,
            hit.distance,
            planar,
            u8::from(correct),
            estimate.argmax_angle_deg,
            yaw_error
        )
        .expect("write to string");
        queries.push(QuerySample {
            feature: summary.feature,
            pose: entry.pose,
        });
    }

    let report = evaluate_retrieval(&db, &queries, &eval_config, Some(&yaw_errors))
        .map_err(|e| CliError::in_file(db_path, e))?;

    std::fs::create_dir_all(out_dir).map_err(|e| CliError::in_file(out_dir, e))?;

    let mut recall = String::from("n,recall\n");
    for (index, value) in report.recall_at_n.iter().enumerate() {
        writeln!(recall, "{},{value:.6}", index + 1).expect("write to string");
    }
    write_text(&out_dir.join("recall.csv"), &recall)?;

    let mut sweep = String::from("meters,recall\n");
    for (meters, value) in &report.recall_vs_distance {
        writeln!(sweep, "{meters:.1},{value:.6}").expect("write to string");
    }
    write_text(&out_dir.join("recall_vs_d.csv"), &sweep)?;

    let (q25, q50, q75) = report
        .yaw_quartiles
        .expect("yaw errors were supplied for every query");
    let quartiles = format!(
        "quantile,degrees\n0.25,{q25:.3}\n0.50,{q50:.3}\n0.75,{q75:.3}\n"
    );
    write_text(&out_dir.join("yaw_quartiles.csv"), &quartiles)?;

    write_text(&out_dir.join("per_query.csv"), &per_query)?;

    timings.print();
    println!(
        "Recall@1 at {} m: {:.3} over {} queries; results in {}",
        eval_config.criterion_meters,
        report.recall_at_n.first().copied().unwrap_or(0.0),
        report.queries,
        out_dir.display()
    );
    Ok(())
}
