//! The full descriptor pipeline: images (and optionally a point cloud) in,
//! rotation-invariant place descriptor out, with per-stage wall-clock
//! timings.
//!
//! Stages:
//! 1. image features — per-view feature maps from the simple extractor;
//! 2. BEV feature — vanilla projection plus height compression, or the
//!    deformable-attention builder;
//! 3. aggregation — channel reduction, polar resampling, optional LiDAR
//!    fusion, then the spectral descriptor.
//!
//! The descriptor's provenance field is an FNV-1a hash of the parameters,
//! so mixing descriptors produced under different configurations is
//! detectable downstream.

use ndarray::Array3;
use std::time::Instant;
use thiserror::Error;

use crate::bev::{
    build_vanilla_bev, compress_height, extract_features_simple, reduce_channels, BevError,
    HeightCompression, SimpleExtractorConfig, VolumeSpec,
};
use crate::deform::{build_deformable_bev, BevQueryGrid, DeformError, DeformableWeights};
use crate::geometry::{CameraRig, FeatureMap, GeometryError};
use crate::lidar::{
    compress_height_lidar, cylindrical_binning, fuse_concat, CylGridSpec, LidarError, PointCloud,
};
use crate::spectral::{place_feature, polar_transform, PlaceFeature, PolarBev, SpectralError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("fusion is configured but no point cloud was supplied")]
    MissingCloud,
    #[error("a point cloud was supplied but fusion is not configured")]
    UnexpectedCloud,
    #[error("reduction weights have length {got}, the grid has {expected} channels")]
    ReduceWeightLength { expected: usize, got: usize },
    #[error(transparent)]
    Bev(#[from] BevError),
    #[error(transparent)]
    Deform(#[from] DeformError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Lidar(#[from] LidarError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// How the BEV grid is filled from the per-view feature maps.
#[derive(Debug, Clone)]
pub enum BevMode {
    /// Project-and-average, then compress the height axis.
    Vanilla { compression: HeightCompression },
    /// Learnable per-cell queries with deformable attention.
    Deformable {
        weights: DeformableWeights,
        queries: BevQueryGrid,
    },
}

/// Cylindrical binning of the point cloud and how it joins the visual
/// channels. Azimuth/range bins and radial extent are tied to the polar
/// grid of the visual branch.
#[derive(Debug, Clone)]
pub struct FusionParams {
    pub z_bins: usize,
    pub z_min: f64,
    pub z_max: f64,
    /// Scale every polar channel to unit RMS before concatenation so one
    /// modality cannot drown out the other in the reduction.
    pub normalize_modalities: bool,
}

/// Everything that determines a descriptor apart from the rig and the
/// input data.
#[derive(Debug, Clone)]
pub struct PipelineParams {
    pub volume: VolumeSpec,
    pub theta_bins: usize,
    pub r_bins: usize,
    pub extractor: SimpleExtractorConfig,
    pub mode: BevMode,
    /// Affine map collapsing the channel axis to one channel; must match
    /// the channel count at the point of reduction (visual channels, plus
    /// two LiDAR channels when fusing).
    pub reduce_weights: Vec<f32>,
    pub reduce_bias: f32,
    pub fusion: Option<FusionParams>,
}

impl PipelineParams {
    /// A vanilla pipeline over the default urban volume with mean height
    /// compression and a uniform channel reduction.
    pub fn default_vanilla() -> Self {
        let extractor = SimpleExtractorConfig::default();
        let channels = extractor.channels();
        Self {
            volume: VolumeSpec::default_urban(),
            theta_bins: 120,
            r_bins: 40,
            extractor,
            mode: BevMode::Vanilla {
                compression: HeightCompression::Mean,
            },
            reduce_weights: vec![1.0 / channels as f32; channels],
            reduce_bias: 0.0,
            fusion: None,
        }
    }
}

/// Wall-clock time spent in each stage, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageTimings {
    pub image_feature_ms: f64,
    pub bev_feature_ms: f64,
    pub aggregation_ms: f64,
}

/// Output of one pipeline run: the descriptor, the single-channel polar
/// grid it was computed from (the input to yaw estimation), and timings.
#[derive(Debug, Clone)]
pub struct PlaceSummary {
    pub feature: PlaceFeature,
    pub polar: PolarBev,
    pub timings: StageTimings,
}

/// Scales each channel of a polar grid to unit root-mean-square over all
/// bins; all-zero channels are left untouched. RMS is unchanged by row
/// cycling, so this keeps the rotation-equivariance of the grid.
pub fn normalize_polar_channels(polar: &PolarBev) -> PolarBev {
    let (theta, r, channels) = polar.data().dim();
    let mut data = polar.data().clone();
    for c in 0..channels {
        let mut sum_sq = 0.0f64;
        for t in 0..theta {
            for s in 0..r {
                let v = data[(t, s, c)] as f64;
                sum_sq += v * v;
            }
        }
        let rms = (sum_sq / (theta * r) as f64).sqrt();
        if rms > 0.0 {
            for t in 0..theta {
                for s in 0..r {
                    data[(t, s, c)] = (data[(t, s, c)] as f64 / rms) as f32;
                }
            }
        }
    }
    PolarBev::new(data, polar.r_max()).expect("shape preserved")
}

fn fnv1a(bytes: &[u8], hash: &mut u64) {
    for &b in bytes {
        *hash ^= b as u64;
        *hash = hash.wrapping_mul(0x100000001b3);
    }
}

/// FNV-1a hash over the canonical byte layout of the parameters; used as
/// the descriptor provenance.
pub fn config_hash(params: &PipelineParams) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    let f64s = |values: &[f64], hash: &mut u64| {
        for v in values {
            fnv1a(&v.to_bits().to_le_bytes(), hash);
        }
    };
    let spec = &params.volume;
    f64s(&[spec.x_min, spec.x_max, spec.y_min, spec.y_max, spec.cell], &mut hash);
    f64s(&spec.heights, &mut hash);
    fnv1a(&(params.theta_bins as u64).to_le_bytes(), &mut hash);
    fnv1a(&(params.r_bins as u64).to_le_bytes(), &mut hash);
    fnv1a(&(params.extractor.downsample as u64).to_le_bytes(), &mut hash);
    fnv1a(&[params.extractor.include_gradients as u8], &mut hash);
    match &params.mode {
        BevMode::Vanilla { compression } => {
            fnv1a(&[0u8], &mut hash);
            match compression {
                HeightCompression::Mean => fnv1a(&[0u8], &mut hash),
                HeightCompression::Affine { weights, bias } => {
                    fnv1a(&[1u8], &mut hash);
                    for w in weights {
                        fnv1a(&w.to_bits().to_le_bytes(), &mut hash);
                    }
                    fnv1a(&bias.to_bits().to_le_bytes(), &mut hash);
                }
            }
        }
        BevMode::Deformable { weights, queries } => {
            fnv1a(&[1u8], &mut hash);
            let d = weights.dims();
            for n in [d.n_head, d.n_key, d.c_query, d.c_in, d.c_value, d.c_out] {
                fnv1a(&(n as u64).to_le_bytes(), &mut hash);
            }
            fnv1a(&weights.rho_max().to_bits().to_le_bytes(), &mut hash);
            let (qx, qy, qc) = queries.queries.dim();
            for n in [qx, qy, qc] {
                fnv1a(&(n as u64).to_le_bytes(), &mut hash);
            }
        }
    }
    for w in &params.reduce_weights {
        fnv1a(&w.to_bits().to_le_bytes(), &mut hash);
    }
    fnv1a(&params.reduce_bias.to_bits().to_le_bytes(), &mut hash);
    match &params.fusion {
        None => fnv1a(&[0u8], &mut hash),
        Some(fusion) => {
            fnv1a(&[1u8], &mut hash);
            fnv1a(&(fusion.z_bins as u64).to_le_bytes(), &mut hash);
            f64s(&[fusion.z_min, fusion.z_max], &mut hash);
            fnv1a(&[fusion.normalize_modalities as u8], &mut hash);
        }
    }
    hash
}

/// Runs the full pipeline on one capture. `cloud` must be present exactly
/// when fusion is configured.
pub fn place_descriptor(
    rig: &CameraRig,
    images: &[Array3<f32>],
    cloud: Option<&PointCloud>,
    params: &PipelineParams,
) -> Result<PlaceSummary, PipelineError> {
    match (&params.fusion, cloud) {
        (Some(_), None) => return Err(PipelineError::MissingCloud),
        (None, Some(_)) => return Err(PipelineError::UnexpectedCloud),
        _ => {}
    }
    let provenance = config_hash(params);

    let start = Instant::now();
    let mut maps: Vec<FeatureMap> = Vec::with_capacity(images.len());
    for image in images {
        maps.push(extract_features_simple(image, &params.extractor)?);
    }
    let image_feature_ms = start.elapsed().as_secs_f64() * 1e3;

    let start = Instant::now();
    let bev = match &params.mode {
        BevMode::Vanilla { compression } => {
            let volume = build_vanilla_bev(rig, &maps, &params.volume)?;
            compress_height(&volume, compression)?
        }
        BevMode::Deformable { weights, queries } => {
            build_deformable_bev(rig, &maps, queries, weights)?
        }
    };
    let bev_feature_ms = start.elapsed().as_secs_f64() * 1e3;

    let start = Instant::now();
    let channels = bev.data.dim().2;
    let polar = match &params.fusion {
        None => {
            if params.reduce_weights.len() != channels {
                return Err(PipelineError::ReduceWeightLength {
                    expected: channels,
                    got: params.reduce_weights.len(),
                });
            }
            let reduced = reduce_channels(&bev, &params.reduce_weights, params.reduce_bias)?;
            polar_transform(&reduced, params.theta_bins, params.r_bins)?
        }
        Some(fusion) => {
            let cloud = cloud.expect("checked above");
            if params.reduce_weights.len() != channels + 2 {
                return Err(PipelineError::ReduceWeightLength {
                    expected: channels + 2,
                    got: params.reduce_weights.len(),
                });
            }
            let visual = polar_transform(&bev, params.theta_bins, params.r_bins)?;
            let cyl = CylGridSpec::new(
                params.theta_bins,
                params.r_bins,
                fusion.z_bins,
                visual.r_max(),
                fusion.z_min,
                fusion.z_max,
            )?;
            let ranges = compress_height_lidar(&cylindrical_binning(cloud, &cyl), &cyl)?;
            let (visual, ranges) = if fusion.normalize_modalities {
                (normalize_polar_channels(&visual), normalize_polar_channels(&ranges))
            } else {
                (visual, ranges)
            };
            let fused = fuse_concat(&visual, &ranges)?;
            let reduced = crate::bev::affine_reduce(
                fused.data(),
                &params.reduce_weights,
                params.reduce_bias,
            )?;
            PolarBev::new(reduced, fused.r_max())?
        }
    };
    let feature = place_feature(&polar, provenance)?;
    let aggregation_ms = start.elapsed().as_secs_f64() * 1e3;

    Ok(PlaceSummary {
        feature,
        polar,
        timings: StageTimings {
            image_feature_ms,
            bev_feature_ms,
            aggregation_ms,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CameraIntrinsics;
    use crate::spectral::feature_distance;
    use crate::synth::{render_view_arrays, sample_lidar, LidarConfig, RigPose, Scene, SceneConfig};

    fn test_rig() -> CameraRig {
        let intr = CameraIntrinsics::new(60.0, 60.0, 48.0, 36.0, 96, 72).unwrap();
        CameraRig::ring(4, intr, 20.0, 0.1, 0.0).unwrap()
    }

    fn test_scene() -> Scene {
        Scene::generate(
            5,
            SceneConfig {
                half_extent: 40.0,
                landmarks: 30,
                ..SceneConfig::default()
            },
        )
        .unwrap()
    }

    fn small_params() -> PipelineParams {
        PipelineParams {
            volume: VolumeSpec::new(-12.0, 12.0, -12.0, 12.0, 0.6, vec![-1.0, 0.0, 1.0]).unwrap(),
            theta_bins: 60,
            r_bins: 20,
            ..PipelineParams::default_vanilla()
        }
    }

    #[test]
    fn vanilla_pipeline_produces_a_descriptor_and_timings() {
        let rig = test_rig();
        let scene = test_scene();
        let pose = RigPose { x: 2.0, y: 1.0, z: 1.0, yaw_deg: 25.0 };
        let images = render_view_arrays(&scene, &rig, &pose).unwrap();
        let params = small_params();
        let summary = place_descriptor(&rig, &images, None, &params).unwrap();
        assert_eq!(summary.feature.values.len(), 256);
        assert_eq!(summary.polar.theta_bins(), 60);
        assert_eq!(summary.polar.r_bins(), 20);
        assert_eq!(summary.polar.channels(), 1);
        assert!(summary.timings.image_feature_ms > 0.0);
        assert!(summary.timings.bev_feature_ms > 0.0);
        assert!(summary.timings.aggregation_ms > 0.0);
        assert_eq!(summary.feature.provenance, config_hash(&params));

        // Bit-identical on a rerun.
        let again = place_descriptor(&rig, &images, None, &params).unwrap();
        assert_eq!(summary.feature.values, again.feature.values);
    }

    #[test]
    fn config_hash_separates_configurations() {
        let a = small_params();
        let mut b = small_params();
        b.theta_bins = 120;
        assert_ne!(config_hash(&a), config_hash(&b));
        let mut c = small_params();
        c.reduce_bias = 0.125;
        assert_ne!(config_hash(&a), config_hash(&c));
        assert_eq!(config_hash(&a), config_hash(&small_params()));
    }

    #[test]
    fn fusion_requires_a_cloud_and_rejects_unexpected_ones() {
        let rig = test_rig();
        let scene = test_scene();
        let pose = RigPose { x: 0.0, y: 0.0, z: 1.0, yaw_deg: 0.0 };
        let images = render_view_arrays(&scene, &rig, &pose).unwrap();
        let cloud = sample_lidar(
            &scene,
            &pose,
            &LidarConfig { azimuth_steps: 60, elevation_steps: 6, ..LidarConfig::default() },
        )
        .unwrap();
        let mut fused = small_params();
        fused.fusion = Some(FusionParams {
            z_bins: 3,
            z_min: -1.5,
            z_max: 4.5,
            normalize_modalities: true,
        });
        let channels = fused.extractor.channels();
        fused.reduce_weights = vec![0.2; channels + 2];
        assert!(matches!(
            place_descriptor(&rig, &images, None, &fused),
            Err(PipelineError::MissingCloud)
        ));
        let plain = small_params();
        assert!(matches!(
            place_descriptor(&rig, &images, Some(&cloud), &plain),
            Err(PipelineError::UnexpectedCloud)
        ));
        let summary = place_descriptor(&rig, &images, Some(&cloud), &fused).unwrap();
        assert_eq!(summary.feature.values.len(), 256);
        assert_eq!(summary.polar.channels(), 1);
        // The fused descriptor is not the visual-only one.
        let mut visual_only = small_params();
        visual_only.reduce_weights = vec![0.2; channels];
        let visual = place_descriptor(&rig, &images, None, &visual_only).unwrap();
        assert!(feature_distance(&summary.feature, &visual.feature) > 0.0);
    }

    #[test]
    fn reduce_weight_length_is_validated() {
        let rig = test_rig();
        let scene = test_scene();
        let pose = RigPose { x: 0.0, y: 0.0, z: 1.0, yaw_deg: 0.0 };
        let images = render_view_arrays(&scene, &rig, &pose).unwrap();
        let mut params = small_params();
        params.reduce_weights = vec![1.0; 2];
        assert!(matches!(
            place_descriptor(&rig, &images, None, &params),
            Err(PipelineError::ReduceWeightLength { got: 2, .. })
        ));
    }

    #[test]
    fn degenerate_deformable_matches_vanilla_summed_heights() {
        let rig = test_rig();
        let scene = test_scene();
        let pose = RigPose { x: -1.0, y: 3.0, z: 1.0, yaw_deg: 70.0 };
        let images = render_view_arrays(&scene, &rig, &pose).unwrap();
        // Heights close together so every cell sees all heights through the
        // same views; the builders then agree exactly (up to f32 rounding).
        let volume = VolumeSpec::new(-10.0, 10.0, -10.0, 10.0, 0.5, vec![-0.95, -1.0]).unwrap();
        let channels = SimpleExtractorConfig::default().channels();
        let mut vanilla = small_params();
        vanilla.volume = volume.clone();
        vanilla.mode = BevMode::Vanilla {
            compression: HeightCompression::Affine {
                weights: vec![1.0; 2],
                bias: 0.0,
            },
        };
        let mut deformable = small_params();
        deformable.volume = volume.clone();
        deformable.mode = BevMode::Deformable {
            weights: DeformableWeights::identity_passthrough(channels, 2).unwrap(),
            queries: BevQueryGrid::constant(volume, &[0.0, 0.0]).unwrap(),
        };
        let a = place_descriptor(&rig, &images, None, &vanilla).unwrap();
        let b = place_descriptor(&rig, &images, None, &deformable).unwrap();
        let scale: f64 = a.feature.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        let distance = feature_distance(&a.feature, &b.feature);
        assert!(
            distance / scale < 1e-4,
            "relative distance {}",
            distance / scale
        );
    }

    #[test]
    fn channel_normalization_reaches_unit_rms_and_skips_empty_channels() {
        let mut data = Array3::<f32>::zeros((20, 16, 3));
        for t in 0..20 {
            for s in 0..16 {
                data[(t, s, 0)] = (t as f32 * 0.37 + s as f32 * 0.11).sin() * 8.0;
                data[(t, s, 1)] = 0.001 * (t + s) as f32;
            }
        }
        let polar = PolarBev::new(data, 10.0).unwrap();
        let normalized = normalize_polar_channels(&polar);
        for c in 0..2 {
            let mut sum_sq = 0.0f64;
            for t in 0..20 {
                for s in 0..16 {
                    let v = normalized.data()[(t, s, c)] as f64;
                    sum_sq += v * v;
                }
            }
            let rms = (sum_sq / 320.0).sqrt();
            assert!((rms - 1.0).abs() < 1e-5, "channel {c} rms {rms}");
        }
        for t in 0..20 {
            for s in 0..16 {
                assert_eq!(normalized.data()[(t, s, 2)], 0.0);
            }
        }
    }
}
