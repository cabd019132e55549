//! End-to-end acceptance checks for the whole library, one per criterion.
//! Each test prints a single summary line straight to stdout (bypassing
//! test capture) so a plain `cargo test` run shows the scoreboard.

use std::io::Write as _;
use std::time::Instant;

use ndarray::{Array2, Array3};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use bevplace::bev::{
    build_vanilla_bev, compress_height, extract_features_simple, HeightCompression,
    SimpleExtractorConfig,
};
use bevplace::deform::{build_deformable_bev, BevQueryGrid, DeformableWeights};
use bevplace::geometry::{CameraIntrinsics, CameraRig, FeatureMap};
use bevplace::objectives::{
    batch_hard_mine, joint_loss, kld_yaw_loss, triplet_margin_loss, triplet_margin_loss_grad,
    MiningConfig, TrainingSample,
};
use bevplace::pipeline::{place_descriptor, FusionParams, PipelineParams};
use bevplace::retrieval::{
    brute_force_top_n, dedup_by_spacing, evaluate_retrieval, EvalConfig, PlaceDatabase,
    PlaceRecord, Pose, QuerySample, MIN_PLACE_SPACING,
};
use bevplace::spectral::{
    cycle_rows, estimate_yaw, feature_distance, place_feature, polar_transform, PlaceFeature,
    PolarBev,
};
use bevplace::synth::{
    make_revisit_set, render_view_arrays, revisit_grid_points, sample_lidar, LidarConfig,
    RevisitConfig, RigPose, Scene, SceneConfig,
};
use bevplace::{BevFeature, VolumeSpec};

/// Writes directly to stdout so the line is visible without --nocapture.
fn report(line: &str) {
    let mut out = std::io::stdout();
    writeln!(out, "{line}").ok();
    out.flush().ok();
}

fn random_polar(rng: &mut StdRng, theta: usize, r: usize) -> PolarBev {
    let data = Array3::from_shape_fn((theta, r, 1), |_| rng.random_range(-1.0..1.0f32));
    PolarBev::new(data, 20.0).unwrap()
}

#[test]
fn criterion_01_descriptor_invariant_under_every_polar_shift() {
    let mut rng = StdRng::seed_from_u64(0xACCE_0001);
    let start = Instant::now();
    let mut max_diff = 0.0f64;
    for _ in 0..100 {
        let polar = random_polar(&mut rng, 120, 40);
        let base = place_feature(&polar, 0).unwrap();
        for k in 0..120 {
            let shifted = cycle_rows(&polar, k);
            let desc = place_feature(&shifted, 0).unwrap();
            for (a, b) in desc.values.iter().zip(&base.values) {
                max_diff = max_diff.max((a - b).abs());
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = max_diff < 1e-9 && elapsed < 10.0;
    report(&format!(
        "ACCEPTANCE 1 descriptor invariant under all 120 polar shifts: {} (max component diff {max_diff:.3e}, {elapsed:.1} s)",
        if pass { "PASS" } else { "FAIL" }
    ));
    assert!(pass, "max diff {max_diff:.3e}, elapsed {elapsed:.1} s");
}

/// Sum of isotropic Gaussian bumps, evaluable at any world point and any
/// rotation without resampling error.
struct BlobField {
    blobs: Vec<(f64, f64, f64, f64)>,
}

impl BlobField {
    fn random(rng: &mut StdRng) -> Self {
        let count = rng.random_range(8..=16);
        let blobs = (0..count)
            .map(|_| {
                // Uniform areal density keeps mass away from the grid
                // center, where every field looks rotation-symmetric.
                let radius = rng.random_range(0.02f64..1.0).sqrt() * 16.0;
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                (
                    radius * angle.cos(),
                    radius * angle.sin(),
                    rng.random_range(1.0..3.0),
                    rng.random_range(0.2..1.0),
                )
            })
            .collect();
        Self { blobs }
    }

    fn value(&self, x: f64, y: f64) -> f64 {
        self.blobs
            .iter()
            .map(|(cx, cy, sigma, amp)| {
                let d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                amp * (-d2 / (2.0 * sigma * sigma)).exp()
            })
            .sum()
    }

    /// The field rotated by `alpha`, sampled exactly on the BEV lattice.
    fn bev(&self, alpha_deg: f64) -> BevFeature {
        let spec = VolumeSpec::new(-20.0, 20.0, -20.0, 20.0, 0.5, vec![0.0]).unwrap();
        let (sin, cos) = alpha_deg.to_radians().sin_cos();
        let data = Array3::from_shape_fn((80, 80, 1), |(i, j, _)| {
            let x = spec.x_center(i);
            let y = spec.y_center(j);
            self.value(cos * x + sin * y, -sin * x + cos * y) as f32
        });
        BevFeature {
            data,
            spec,
            coverage: Array2::from_elem((80, 80), 1),
        }
    }
}

fn blob_descriptor(bev: &BevFeature) -> (PlaceFeature, PolarBev) {
    let polar = polar_transform(bev, 120, 40).unwrap();
    (place_feature(&polar, 0).unwrap(), polar)
}

#[test]
fn criterion_02_descriptor_stable_under_continuous_rotation() {
    let mut rng = StdRng::seed_from_u64(0xACCE_0002);
    let total = 500usize;
    let mut within = 0usize;
    let mut worst = 0.0f64;
    for _ in 0..total {
        let field = BlobField::random(&mut rng);
        let alpha = rng.random_range(0.0..360.0);
        let (a, _) = blob_descriptor(&field.bev(0.0));
        let (b, _) = blob_descriptor(&field.bev(alpha));
        let norm_a: f64 = a.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        let norm_b: f64 = b.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        let rel = feature_distance(&a, &b) / norm_a.max(norm_b);
        worst = worst.max(rel);
        if rel < 0.05 {
            within += 1;
        }
    }
    let frac = within as f64 / total as f64;
    let pass = frac >= 0.99;
    report(&format!(
        "ACCEPTANCE 2 descriptor stable under continuous rotation: {} ({within}/{total} below 5% relative distance, worst {worst:.3})",
        if pass { "PASS" } else { "FAIL" }
    ));
    assert!(pass, "only {within}/{total} under tolerance");
}

#[test]
fn criterion_03_yaw_recovery_on_shifts_and_rotations() {
    let mut rng = StdRng::seed_from_u64(0xACCE_0003);
    // Exact recovery of pure row shifts.
    let mut exact = 0usize;
    let shift_total = 200usize;
    for _ in 0..shift_total {
        let polar = random_polar(&mut rng, 120, 40);
        let k = rng.random_range(0..120usize);
        let est = estimate_yaw(&polar, &cycle_rows(&polar, k as isize)).unwrap();
        if est.argmax_bin == k {
            exact += 1;
        }
    }
    // Continuous rotations recovered within 2 bins (6 degrees).
    let rot_total = 500usize;
    let mut close = 0usize;
    for _ in 0..rot_total {
        let field = BlobField::random(&mut rng);
        let alpha = rng.random_range(0.0..360.0);
        let (_, reference) = blob_descriptor(&field.bev(0.0));
        let (_, rotated) = blob_descriptor(&field.bev(alpha));
        let est = estimate_yaw(&rotated, &reference).unwrap();
        let expected = (alpha / 3.0).round() as i64 % 120;
        let got = est.argmax_bin as i64;
        let raw = (got - expected).rem_euclid(120);
        let bins = raw.min(120 - raw);
        if bins <= 2 {
            close += 1;
        }
    }
    let rot_frac = close as f64 / rot_total as f64;
    let pass = exact == shift_total && rot_frac >= 0.95;
    report(&format!(
        "ACCEPTANCE 3 yaw recovery: {} (shift exact {exact}/{shift_total}, rotations within 2 bins {close}/{rot_total})",
        if pass { "PASS" } else { "FAIL" }
    ));
    assert!(pass, "exact {exact}/{shift_total}, close {close}/{rot_total}");
}

#[test]
fn criterion_04_degenerate_deformable_equals_vanilla() {
    // Horizontal ring and nearly coincident sample heights: every cell is
    // seen at all heights through the same views, which the test asserts
    // before comparing the two builders.
    let intr = CameraIntrinsics::new(40.0, 40.0, 40.0, 30.0, 80, 60).unwrap();
    let rig = CameraRig::ring(4, intr, 0.0, 0.1, 0.0).unwrap();
    let spec = VolumeSpec::new(-5.0, 5.0, -5.0, 5.0, 0.5, vec![-0.1, 0.1]).unwrap();
    let channels = 2usize;
    let weights = DeformableWeights::identity_passthrough(channels, 3).unwrap();
    let mut max_diff = 0.0f64;
    let mut uniform = true;
    for seed in 0..20u64 {
        let mut rng = StdRng::seed_from_u64(0xACCE_0004 + seed);
        let feats: Vec<FeatureMap> = (0..4)
            .map(|_| {
                let data =
                    Array3::from_shape_fn((60, 80, channels), |_| rng.random_range(-1.0..1.0f32));
                FeatureMap::new(data, 1.0).unwrap()
            })
            .collect();
        let volume = build_vanilla_bev(&rig, &feats, &spec).unwrap();
        let mean = compress_height(&volume, &HeightCompression::Mean).unwrap();
        let grid = BevQueryGrid::random(spec.clone(), 3, seed).unwrap();
        let deformable = build_deformable_bev(&rig, &feats, &grid, &weights).unwrap();
        for i in 0..spec.x_cells() {
            for j in 0..spec.y_cells() {
                uniform &= volume.coverage[(i, j, 0)] == volume.coverage[(i, j, 1)];
                for c in 0..channels {
                    let summed = 2.0 * mean.data[(i, j, c)];
                    let diff = (deformable.data[(i, j, c)] - summed).abs() as f64;
                    max_diff = max_diff.max(diff);
                }
            }
        }
    }
    let pass = uniform && max_diff < 1e-6;
    report(&format!(
        "ACCEPTANCE 4 degenerate deformable equals vanilla: {} (max cell diff {max_diff:.3e}, height-uniform visibility: {uniform})",
        if pass { "PASS" } else { "FAIL" }
    ));
    assert!(pass, "max diff {max_diff:.3e}, uniform {uniform}");
}

#[test]
fn criterion_05_index_matches_brute_force() {
    let mut rng = StdRng::seed_from_u64(0xACCE_0005);
    let start = Instant::now();
    let mut mismatches = 0usize;
    let dbs = 1000usize;
    for db_index in 0..dbs {
        let size = rng.random_range(20..=1000usize);
        let mut db = PlaceDatabase::new();
        let mut features: Vec<Vec<f64>> = Vec::with_capacity(size);
        for id in 0..size as u64 {
            // Every 40th database gets runs of duplicated descriptors so
            // distance ties are actually exercised.
            let values: Vec<f64> = if db_index % 40 == 0 && id >= 5 && id % 7 == 0 {
                features[(id as usize) / 2].clone()
            } else {
                (0..256).map(|_| rng.random_range(-1.0..1.0)).collect()
            };
            features.push(values.clone());
            db.insert(PlaceRecord {
                id,
                pose: Pose { x: 0.0, y: 0.0, yaw_deg: 0.0 },
                feature: PlaceFeature::new(values, 0),
                polar: None,
            })
            .unwrap();
        }
        for q in 0..10 {
            let query = if q == 0 {
                PlaceFeature::new(features[size / 2].clone(), 0)
            } else {
                PlaceFeature::new(
                    (0..256).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    0,
                )
            };
            let fast = db.query_top_n(&query, 10).unwrap();
            let slow = brute_force_top_n(db.records(), &query, 10).unwrap();
            let same = fast.len() == slow.len()
                && fast.iter().zip(&slow).all(|(a, b)| {
                    a.id == b.id && a.distance.to_bits() == b.distance.to_bits()
                });
            if !same {
                mismatches += 1;
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = mismatches == 0 && elapsed < 30.0;
    report(&format!(
        "ACCEPTANCE 5 index matches brute force: {} ({dbs} databases x 10 queries, {mismatches} mismatches, {elapsed:.1} s)",
        if pass { "PASS" } else { "FAIL" }
    ));
    assert!(pass, "{mismatches} mismatches, {elapsed:.1} s");
}

/// Roof-mounted surround rig: four cameras, mild down-pitch, high enough
/// to see over most obstacles.
fn world_rig() -> CameraRig {
    let intr = CameraIntrinsics::new(105.0, 105.0, 120.0, 72.0, 240, 144).unwrap();
    CameraRig::ring(4, intr, 10.0, 0.1, 0.0).unwrap()
}

/// BEV configuration used in the synthetic worlds: 25 m reach, height
/// slices from the ground plane upward (the rig origin sits 1.8 m up).
fn world_params() -> PipelineParams {
    let mut params = PipelineParams::default_vanilla();
    params.volume = VolumeSpec::new(
        -25.0,
        25.0,
        -25.0,
        25.0,
        0.5,
        vec![-1.8, -0.8, 0.2, 1.2],
    )
    .unwrap();
    params
}

fn world_scene(seed: u64, places: usize, amplitude: f64, contrast: f64) -> (Scene, RevisitConfig) {
    let revisit = RevisitConfig {
        places,
        grid_spacing: 7.0,
        translation_jitter: 1.0,
        yaw_range_deg: 360.0,
        rig_height: 1.8,
    };
    let side = (places as f64).sqrt().ceil();
    let half_extent = 0.5 * side * revisit.grid_spacing + 27.0;
    let area = (2.0 * half_extent) * (2.0 * half_extent);
    // The rig drives on open ground, so the places it can actually occupy
    // are kept free of obstacles.
    let clearings = revisit_grid_points(&revisit)
        .unwrap()
        .into_iter()
        .map(|point| (point, 3.0))
        .collect();
    let scene = Scene::generate(
        seed,
        SceneConfig {
            half_extent,
            landmarks: (area / 30.0) as usize,
            radius_range: (0.4, 2.0),
            texture_amplitude: amplitude,
            texture_scale: 1.5,
            landmark_contrast: contrast,
            clearings,
        },
    )
    .unwrap();
    (scene, revisit)
}

fn recall_at_1(
    db_features: &[(PlaceFeature, RigPose)],
    query_features: &[(PlaceFeature, RigPose)],
    criterion_m: f64,
) -> f64 {
    let mut db = PlaceDatabase::new();
    for (id, (feature, pose)) in db_features.iter().enumerate() {
        db.insert(PlaceRecord {
            id: id as u64,
            pose: Pose { x: pose.x, y: pose.y, yaw_deg: pose.yaw_deg },
            feature: feature.clone(),
            polar: None,
        })
        .unwrap();
    }
    let queries: Vec<QuerySample> = query_features
        .iter()
        .map(|(feature, pose)| QuerySample {
            feature: feature.clone(),
            pose: Pose { x: pose.x, y: pose.y, yaw_deg: pose.yaw_deg },
        })
        .collect();
    let config = EvalConfig {
        max_n: 1,
        criterion_meters: criterion_m,
        sweep_n: 1,
        sweep_meters: (2, 2),
    };
    evaluate_retrieval(&db, &queries, &config, None).unwrap().recall_at_n[0]
}

#[test]
fn criterion_06_synthetic_world_recall_beats_pooled_baseline() {
    let rig = world_rig();
    let (scene, revisit_cfg) = world_scene(0xC6, 100, 0.25, 1.0);
    let revisit = make_revisit_set(0x6EED, &revisit_cfg).unwrap();
    let params = world_params();
    let extractor = SimpleExtractorConfig::default();
    let channels = extractor.channels();

    // Global-average-pooled per-channel image statistics: the trivial
    // baseline the BEV descriptor has to beat.
    let pooled = |images: &[Array3<f32>]| -> Vec<f64> {
        let mut acc = vec![0.0f64; channels];
        for image in images {
            let map = extract_features_simple(image, &extractor).unwrap();
            let (h, w, _) = map.data().dim();
            for c in 0..channels {
                let mut total = 0.0f64;
                for y in 0..h {
                    for x in 0..w {
                        total += map.data()[(y, x, c)] as f64;
                    }
                }
                acc[c] += total / (h * w) as f64;
            }
        }
        acc.iter().map(|v| v / images.len() as f64).collect()
    };

    let describe = |pose: &RigPose| {
        let images = render_view_arrays(&scene, &rig, pose).unwrap();
        let summary = place_descriptor(&rig, &images, None, &params).unwrap();
        (summary.feature, pooled(&images))
    };
    let mut db_bev = Vec::new();
    let mut db_gap = Vec::new();
    for pose in &revisit.database {
        let (feature, gap) = describe(pose);
        db_bev.push((feature, *pose));
        db_gap.push((gap, *pose));
    }
    let mut q_bev = Vec::new();
    let mut q_gap = Vec::new();
    for pose in &revisit.queries {
        let (feature, gap) = describe(pose);
        q_bev.push((feature, *pose));
        q_gap.push((gap, *pose));
    }
    let bev_recall = recall_at_1(&db_bev, &q_bev, 2.0);
    let mut gap_hits = 0usize;
    for (gap, pose) in &q_gap {
        let best = db_gap
            .iter()
            .min_by(|a, b| {
                let da: f64 = a.0.iter().zip(gap).map(|(x, y)| (x - y) * (x - y)).sum();
                let db_: f64 = b.0.iter().zip(gap).map(|(x, y)| (x - y) * (x - y)).sum();
                da.total_cmp(&db_)
            })
            .unwrap();
        let d = (best.1.x - pose.x).hypot(best.1.y - pose.y);
        if d <= 2.0 {
            gap_hits += 1;
        }
    }
    let gap_recall = gap_hits as f64 / q_gap.len() as f64;
    let pass = bev_recall >= 0.90 && bev_recall > gap_recall;
    report(&format!(
        "ACCEPTANCE 6 synthetic-world recall@1: {} (descriptor {bev_recall:.2}, pooled baseline {gap_recall:.2}, 100 places)",
        if pass { "PASS" } else { "FAIL" }
    ));
    assert!(pass, "recall {bev_recall}, baseline {gap_recall}");
}

fn fused_params() -> PipelineParams {
    let mut params = world_params();
    let channels = params.extractor.channels();
    // Cloud points arrive in the rig frame: the ground plane sits at
    // -1.8 m and the tallest obstacles reach about +2.2 m.
    params.fusion = Some(FusionParams {
        z_bins: 3,
        z_min: -2.0,
        z_max: 2.4,
        normalize_modalities: true,
    });
    params.reduce_weights = vec![1.0 / (channels + 2) as f32; channels + 2];
    params
}

fn dual_recalls(scene: &Scene, rig: &CameraRig, revisit_cfg: &RevisitConfig, seed: u64) -> (f64, f64) {
    let revisit = make_revisit_set(seed, revisit_cfg).unwrap();
    let visual_params = world_params();
    let fusion_params = fused_params();
    let lidar_cfg = LidarConfig {
        azimuth_steps: 180,
        elevation_steps: 14,
        elevation_min_deg: -30.0,
        elevation_max_deg: 4.0,
        max_range: 45.0,
    };
    let describe = |pose: &RigPose| {
        let images = render_view_arrays(scene, rig, pose).unwrap();
        let cloud = sample_lidar(scene, pose, &lidar_cfg).unwrap();
        let visual = place_descriptor(rig, &images, None, &visual_params).unwrap();
        let fused = place_descriptor(rig, &images, Some(&cloud), &fusion_params).unwrap();
        (visual.feature, fused.feature)
    };
    let mut db_visual = Vec::new();
    let mut db_fused = Vec::new();
    for pose in &revisit.database {
        let (v, f) = describe(pose);
        db_visual.push((v, *pose));
        db_fused.push((f, *pose));
    }
    let mut q_visual = Vec::new();
    let mut q_fused = Vec::new();
    for pose in &revisit.queries {
        let (v, f) = describe(pose);
        q_visual.push((v, *pose));
        q_fused.push((f, *pose));
    }
    (
        recall_at_1(&db_visual, &q_visual, 2.0),
        recall_at_1(&db_fused, &q_fused, 2.0),
    )
}

#[test]
fn criterion_07_lidar_fusion_helps() {
    let rig = world_rig();
    // Standard world: fusion must not hurt.
    let (scene_a, revisit_a) = world_scene(0xC6, 100, 0.25, 1.0);
    let (visual_a, fused_a) = dual_recalls(&scene_a, &rig, &revisit_a, 0x6EED);
    // Nearly textureless world with camera-invisible landmarks: fusion must
    // win outright.
    let (scene_b, revisit_b) = world_scene(0xC7, 64, 0.02, 0.0);
    let (visual_b, fused_b) = dual_recalls(&scene_b, &rig, &revisit_b, 0x7EED);
    let pass = fused_a >= visual_a && fused_b > visual_b;
    report(&format!(
        "ACCEPTANCE 7 LiDAR fusion: {} (standard world visual {visual_a:.2} vs fused {fused_a:.2}; degraded world visual {visual_b:.2} vs fused {fused_b:.2})",
        if pass { "PASS" } else { "FAIL" }
    ));
    assert!(
        pass,
        "standard {visual_a}/{fused_a}, degraded {visual_b}/{fused_b}"
    );
}

#[test]
fn criterion_08_training_objectives() {
    // Hand-mined hard triplet scores exactly 0.3.
    let samples = vec![
        TrainingSample { feature: vec![0.0], position: (0.0, 0.0) },
        TrainingSample { feature: vec![0.1], position: (1.0, 0.0) },
        TrainingSample { feature: vec![0.4], position: (0.0, 1.5) },
        TrainingSample { feature: vec![0.3], position: (10.0, 0.0) },
        TrainingSample { feature: vec![0.9], position: (0.0, 12.0) },
    ];
    let batch = batch_hard_mine(&samples, &MiningConfig::default()).unwrap();
    let t = batch.triplets.iter().find(|t| t.anchor == 0).unwrap();
    let hand = triplet_margin_loss(
        &[samples[t.anchor].feature.clone()],
        &[samples[t.positive].feature.clone()],
        &[samples[t.negative].feature.clone()],
        0.2,
    )
    .unwrap();
    let hand_ok = (hand - 0.3).abs() < 1e-12 && (t.positive, t.negative) == (2, 3);

    // Analytic subgradient against central differences.
    let mut rng = StdRng::seed_from_u64(0xACCE_0008);
    let dim = 6;
    let mut anchors = Vec::new();
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    while anchors.len() < 4 {
        let a: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let d = |x: &[f64], y: &[f64]| {
            x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt()
        };
        if d(&a, &p) - d(&a, &n) + 0.2 > 0.05 {
            anchors.push(a);
            positives.push(p);
            negatives.push(n);
        }
    }
    let grads = triplet_margin_loss_grad(&anchors, &positives, &negatives, 0.2).unwrap();
    let h = 1e-4;
    let mut max_fd_err = 0.0f64;
    for t in 0..anchors.len() {
        for c in 0..dim {
            let mut plus = anchors.clone();
            let mut minus = anchors.clone();
            plus[t][c] += h;
            minus[t][c] -= h;
            let lp = triplet_margin_loss(&plus, &positives, &negatives, 0.2).unwrap();
            let lm = triplet_margin_loss(&minus, &positives, &negatives, 0.2).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            max_fd_err = max_fd_err.max((fd - grads.anchors[t][c]).abs());
        }
    }
    let grad_ok = max_fd_err < 1e-4;

    // Yaw loss sanity: uniform distribution and the fixed joint weight.
    let uniform = vec![1.0 / 120.0; 120];
    let kld = kld_yaw_loss(&uniform, 17).unwrap();
    let kld_ok = (kld - 120.0f64.ln()).abs() < 1e-9;
    let joint_ok = (joint_loss(0.3, 2.0) - 0.302).abs() < 1e-15;

    let pass = hand_ok && grad_ok && kld_ok && joint_ok;
    report(&format!(
        "ACCEPTANCE 8 training objectives: {} (hand triplet {hand:.3}, max gradient error {max_fd_err:.2e}, uniform yaw loss ln(120))",
        if pass { "PASS" } else { "FAIL" }
    ));
    assert!(pass, "hand {hand_ok}, grad {grad_ok}, kld {kld_ok}, joint {joint_ok}");
}

#[test]
fn criterion_09_retrieval_metrics_and_spacing() {
    // Spacing filter on the documented trajectory.
    let xs = [0.0, 0.1, 0.25, 0.30, 0.55];
    let kept = dedup_by_spacing(&xs, |&x| (x, 0.0), MIN_PLACE_SPACING).unwrap();
    let dedup_ok = kept == vec![0, 2, 4];

    // Recall-vs-distance on a noisy planted embedding: strictly gains from
    // larger criteria and never decreases.
    let mut rng = StdRng::seed_from_u64(0xACCE_0009);
    let embed = |x: f64, y: f64, rng: &mut StdRng| {
        let mut values = vec![0.0f64; 256];
        values[0] = x / 4.0 + rng.random_range(-0.8..0.8);
        values[1] = y / 4.0 + rng.random_range(-0.8..0.8);
        PlaceFeature::new(values, 0)
    };
    let mut db = PlaceDatabase::new();
    let mut queries = Vec::new();
    for i in 0..225usize {
        let x = (i % 15) as f64 * 3.0;
        let y = (i / 15) as f64 * 3.0;
        db.insert(PlaceRecord {
            id: i as u64,
            pose: Pose { x, y, yaw_deg: 0.0 },
            feature: embed(x, y, &mut rng),
            polar: None,
        })
        .unwrap();
        queries.push(QuerySample {
            feature: embed(x, y, &mut rng),
            pose: Pose { x, y, yaw_deg: 0.0 },
        });
    }
    let config = EvalConfig {
        max_n: 25,
        criterion_meters: 5.0,
        sweep_n: 1,
        sweep_meters: (2, 20),
    };
    let repo = evaluate_retrieval(&db, &queries, &config, None).unwrap();
    let n_monotone = repo.recall_at_n.windows(2).all(|w| w[1] >= w[0]);
    let d_monotone = repo
        .recall_vs_distance
        .windows(2)
        .all(|w| w[1].1 >= w[0].1);
    let first = repo.recall_vs_distance.first().unwrap().1;
    let last = repo.recall_vs_distance.last().unwrap().1;
    let grows = last > first;
    let pass = dedup_ok && n_monotone && d_monotone && grows;
    report(&format!(
        "ACCEPTANCE 9 retrieval metrics: {} (dedup kept {kept:?}; recall@1 {first:.2} at 2 m -> {last:.2} at 20 m, monotone)",
        if pass { "PASS" } else { "FAIL" }
    ));
    assert!(pass, "dedup {dedup_ok}, n {n_monotone}, d {d_monotone}, grows {grows}");
}

#[test]
fn criterion_10_descriptor_latency() {
    // Full-size configuration: four 384x224 views, an 80x80x4 BEV volume.
    let intr = CameraIntrinsics::new(160.0, 160.0, 192.0, 112.0, 384, 224).unwrap();
    let rig = CameraRig::ring(4, intr, 20.0, 0.1, 0.0).unwrap();
    let scene = Scene::generate(
        0xC10,
        SceneConfig {
            half_extent: 45.0,
            landmarks: 120,
            ..SceneConfig::default()
        },
    )
    .unwrap();
    let pose = RigPose { x: 0.0, y: 0.0, z: 1.0, yaw_deg: 30.0 };
    let images = render_view_arrays(&scene, &rig, &pose).unwrap();
    let params = PipelineParams::default_vanilla();
    let mut best_total = f64::INFINITY;
    let mut best_agg = f64::INFINITY;
    for _ in 0..3 {
        let start = Instant::now();
        let summary = place_descriptor(&rig, &images, None, &params).unwrap();
        let total = start.elapsed().as_secs_f64() * 1e3;
        best_total = best_total.min(total);
        best_agg = best_agg.min(summary.timings.aggregation_ms);
        assert_eq!(summary.feature.values.len(), 256);
    }
    let pass = best_total < 250.0 && best_agg < 10.0;
    report(&format!(
        "ACCEPTANCE 10 descriptor latency: {} (best end-to-end {best_total:.1} ms < 250 ms, best aggregation {best_agg:.2} ms < 10 ms)",
        if pass { "PASS" } else { "FAIL" }
    ));
    assert!(pass, "total {best_total:.1} ms, aggregation {best_agg:.2} ms");
}
