//! Index nine synthetic places, then look one up again from a jittered
//! revisit pose and recover the relative heading.

use bevplace::geometry::{CameraIntrinsics, CameraRig};
use bevplace::pipeline::{place_descriptor, PipelineParams};
use bevplace::retrieval::{PlaceDatabase, PlaceRecord, Pose};
use bevplace::spectral::estimate_yaw;
use bevplace::synth::{make_revisit_set, render_view_arrays, RevisitConfig, Scene, SceneConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // A procedural world and a four-camera surround rig, pitched 10° down.
    let scene = Scene::generate(7, SceneConfig::default())?;
    let intrinsics = CameraIntrinsics::new(70.0, 70.0, 80.0, 48.0, 160, 96)?;
    let rig = CameraRig::ring(4, intrinsics, 10.0, 0.1, 0.0)?;
    let params = PipelineParams::default_vanilla();

    // Visit nine places, then revisit each from a jittered position and an
    // arbitrary new heading.
    let config = RevisitConfig { places: 9, ..RevisitConfig::default() };
    let visits = make_revisit_set(11, &config)?;

    let mut db = PlaceDatabase::new();
    for (id, pose) in visits.database.iter().enumerate() {
        let views = render_view_arrays(&scene, &rig, pose)?;
        let summary = place_descriptor(&rig, &views, None, &params)?;
        db.insert(PlaceRecord {
            id: id as u64,
            pose: Pose { x: pose.x, y: pose.y, yaw_deg: pose.yaw_deg },
            feature: summary.feature,
            polar: Some(summary.polar),
        })?;
    }

    let views = render_view_arrays(&scene, &rig, &visits.queries[4])?;
    let query = place_descriptor(&rig, &views, None, &params)?;
    let hit = db.query_top_n(&query.feature, 1)?[0];
    let stored = db.get(hit.id).and_then(|r| r.polar.as_ref()).unwrap();
    let yaw = estimate_yaw(&query.polar, stored)?;
    println!(
        "best match: place {} (distance {:.1}), {:.0}° off the stored heading",
        hit.id, hit.distance, yaw.argmax_angle_deg
    );
    Ok(())
}
