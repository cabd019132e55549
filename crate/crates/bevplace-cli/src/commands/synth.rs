use std::fmt::Write as _;
use std::path::Path;

use bevplace::geometry::save_rig;
use bevplace::synth::{
    make_revisit_set, render_views, revisit_grid_points, sample_lidar, LidarConfig,
    RevisitConfig, RigPose, Scene, SceneConfig,
};
use bevplace::{CameraIntrinsics, CameraRig};

use crate::config::{
    ConfigFile, ExtractorSection, LidarSection, PipelineSection, PolarSection,
    RetrievalSection, RigSection, VolumeSection,
};
use crate::error::{CliError, CliResult};

use super::write_text;

/// Four outward cameras on a ring, pitched slightly down, mounted 1.8 m
/// above the ground so they see over most obstacles.
fn demo_rig() -> CameraRig {
    let intrinsics = CameraIntrinsics::new(70.0, 70.0, 80.0, 48.0, 160, 96).unwrap();
    CameraRig::ring(4, intrinsics, 10.0, 0.1, 0.0).unwrap()
}

const RIG_HEIGHT: f64 = 1.8;

fn demo_lidar() -> LidarConfig {
    LidarConfig {
        azimuth_steps: 180,
        elevation_steps: 14,
        elevation_min_deg: -30.0,
        elevation_max_deg: 4.0,
        max_range: 45.0,
    }
}

fn demo_config() -> ConfigFile {
    ConfigFile {
        rig: RigSection {
            path: "rig.toml".to_owned(),
        },
        volume: VolumeSection {
            x_min: -25.0,
            x_max: 25.0,
            y_min: -25.0,
            y_max: 25.0,
            cell: 0.5,
            heights: vec![-1.8, -0.8, 0.2, 1.2],
        },
        polar: PolarSection {
            theta_bins: 120,
            r_bins: 40,
        },
        extractor: ExtractorSection {
            downsample: 2,
            include_gradients: true,
        },
        pipeline: PipelineSection::default(),
        lidar: Some(LidarSection {
            z_bins: 3,
            z_min: -2.0,
            z_max: 2.4,
            normalize_modalities: true,
        }),
        retrieval: RetrievalSection {
            top_n: 5,
            max_n: 10,
            criterion_meters: 2.0,
            ..RetrievalSection::default()
        },
    }
}

struct PlaceFiles {
    images: Vec<String>,
    cloud: String,
}

fn write_place(
    out: &Path,
    scene: &Scene,
    rig: &CameraRig,
    pose: &RigPose,
    prefix: &str,
    id: usize,
) -> CliResult<PlaceFiles> {
    let views = render_views(scene, rig, pose)
        .map_err(|e| CliError::data(format!("rendering {prefix}{id}: {e}")))?;
    let mut images = Vec::with_capacity(views.len());
    for (view_index, view) in views.iter().enumerate() {
        let rel = format!("images/{prefix}{id:03}_{view_index}.png");
        let path = out.join(&rel);
        view.save(&path).map_err(|e| CliError::in_file(&path, e))?;
        images.push(rel);
    }
    let cloud = sample_lidar(scene, pose, &demo_lidar())
        .map_err(|e| CliError::data(format!("sampling cloud {prefix}{id}: {e}")))?;
    let rel = format!("clouds/{prefix}{id:03}.pcxyz");
    let path = out.join(&rel);
    cloud.save(&path).map_err(|e| CliError::in_file(&path, e))?;
    Ok(PlaceFiles { images, cloud: rel })
}

fn manifest_line(id: usize, pose: &RigPose, files: &PlaceFiles) -> String {
    let mut line = format!("{id} {:.6} {:.6} {:.6}", pose.x, pose.y, pose.yaw_deg);
    for image in &files.images {
        write!(line, " {image}").expect("write to string");
    }
    write!(line, " {}", files.cloud).expect("write to string");
    line.push('\n');
    line
}

/// Generates a self-contained demo world: rig + pipeline config, database
/// and query manifests, rendered views and LiDAR clouds.
pub fn run(out: &Path, seed: u64, places: usize) -> CliResult<()> {
    if places == 0 {
        return Err(CliError::usage("--places must be at least 1"));
    }
    let revisit_config = RevisitConfig {
        places,
        grid_spacing: 7.0,
        translation_jitter: 1.0,
        yaw_range_deg: 360.0,
        rig_height: RIG_HEIGHT,
    };
    let side = (places as f64).sqrt().ceil();
    let half_extent = 0.5 * side * revisit_config.grid_spacing + 27.0;
    let area = (2.0 * half_extent) * (2.0 * half_extent);
    let clearings = revisit_grid_points(&revisit_config)
        .map_err(|e| CliError::usage(format!("bad revisit layout: {e}")))?
        .into_iter()
        .map(|point| (point, 3.0))
        .collect();
    let scene = Scene::generate(
        seed,
        SceneConfig {
            half_extent,
            landmarks: (area / 30.0) as usize,
            radius_range: (0.4, 2.0),
            clearings,
            ..SceneConfig::default()
        },
    )
    .map_err(|e| CliError::usage(format!("bad scene parameters: {e}")))?;
    let revisit = make_revisit_set(seed.wrapping_add(1), &revisit_config)
        .map_err(|e| CliError::usage(format!("bad revisit parameters: {e}")))?;
    let rig = demo_rig();

    for sub in ["images", "clouds"] {
        let dir = out.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| CliError::in_file(&dir, e))?;
    }
    save_rig(&rig, &out.join("rig.toml"))
        .map_err(|e| CliError::in_file(&out.join("rig.toml"), e))?;
    demo_config().write(&out.join("config.toml"))?;

    let mut db_manifest =
        String::from("# id x y yaw view_0 view_1 view_2 view_3 cloud\n");
    let mut query_manifest = db_manifest.clone();
    for (id, (db_pose, query_pose)) in revisit
        .database
        .iter()
        .zip(&revisit.queries)
        .enumerate()
    {
        let files = write_place(out, &scene, &rig, db_pose, "db_", id)?;
        db_manifest.push_str(&manifest_line(id, db_pose, &files));
        let files = write_place(out, &scene, &rig, query_pose, "q_", id)?;
        query_manifest.push_str(&manifest_line(id, query_pose, &files));
    }
    write_text(&out.join("db_manifest.txt"), &db_manifest)?;
    write_text(&out.join("query_manifest.txt"), &query_manifest)?;
    println!(
        "Wrote a {places}-place world with {} landmarks to {}",
        scene.landmarks().len(),
        out.display()
    );
    Ok(())
}
