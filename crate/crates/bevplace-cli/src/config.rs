use std::path::Path;

use serde::{Deserialize, Serialize};

use bevplace::bev::HeightCompression;
use bevplace::deform::{BevQueryGrid, DeformableWeights};
use bevplace::geometry::load_rig;
use bevplace::pipeline::{BevMode, FusionParams, PipelineParams};
use bevplace::retrieval::EvalConfig;
use bevplace::{CameraRig, SimpleExtractorConfig, VolumeSpec};

use crate::error::{CliError, CliResult};

/// Which BEV builder the pipeline runs; mirrors [`BevMode`] without the
/// loaded weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ModeArg {
    Vanilla,
    Deformable,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigSection {
    /// Rig description file, relative to this config file.
    pub path: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeSection {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub cell: f64,
    pub heights: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolarSection {
    pub theta_bins: usize,
    pub r_bins: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractorSection {
    pub downsample: usize,
    pub include_gradients: bool,
}

fn default_mode() -> String {
    "vanilla".to_owned()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineSection {
    #[serde(default = "default_mode")]
    pub mode: String,
    /// Per-channel weights collapsing the polar grid to one channel;
    /// uniform when omitted.
    pub reduce_weights: Option<Vec<f32>>,
    pub reduce_bias: Option<f32>,
    /// Height-compression weights for the vanilla builder; mean when
    /// omitted.
    pub compression_weights: Option<Vec<f32>>,
    pub compression_bias: Option<f32>,
    /// Deformable attention weight file, relative to this config file.
    pub deform_weights: Option<String>,
    pub deform_query_seed: Option<u64>,
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self {
            mode: default_mode(),
            reduce_weights: None,
            reduce_bias: None,
            compression_weights: None,
            compression_bias: None,
            deform_weights: None,
            deform_query_seed: None,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LidarSection {
    pub z_bins: usize,
    pub z_min: f64,
    pub z_max: f64,
    pub normalize_modalities: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalSection {
    pub top_n: usize,
    pub max_n: usize,
    pub criterion_meters: f64,
    pub sweep_n: usize,
    pub sweep_min_meters: u32,
    pub sweep_max_meters: u32,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        Self {
            top_n: 10,
            max_n: 25,
            criterion_meters: 5.0,
            sweep_n: 1,
            sweep_min_meters: 2,
            sweep_max_meters: 20,
        }
    }
}

/// On-disk pipeline description; see the README for a worked example.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub rig: RigSection,
    pub volume: VolumeSection,
    pub polar: PolarSection,
    pub extractor: ExtractorSection,
    #[serde(default)]
    pub pipeline: PipelineSection,
    pub lidar: Option<LidarSection>,
    #[serde(default)]
    pub retrieval: RetrievalSection,
}

/// A parsed config joined with its rig and resolved into runnable
/// pipeline parameters.
pub struct LoadedConfig {
    pub rig: CameraRig,
    pub params: PipelineParams,
    pub top_n: usize,
    pub eval: EvalConfig,
}

impl ConfigFile {
    pub fn read(path: &Path) -> CliResult<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::in_file(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::in_file(path, e))
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let text = toml::to_string_pretty(self).expect("config serializes");
        std::fs::write(path, text).map_err(|e| CliError::in_file(path, e))
    }
}

/// Loads the config file and everything it references. `mode` overrides
/// the file's pipeline mode; `fuse` asks for LiDAR fusion, which requires
/// a `[lidar]` section.
pub fn load_config(path: &Path, mode: Option<ModeArg>, fuse: bool) -> CliResult<LoadedConfig> {
    let file = ConfigFile::read(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));

    let rig_path = base.join(&file.rig.path);
    let rig = load_rig(&rig_path).map_err(|e| CliError::in_file(&rig_path, e))?;

    let volume = VolumeSpec::new(
        file.volume.x_min,
        file.volume.x_max,
        file.volume.y_min,
        file.volume.y_max,
        file.volume.cell,
        file.volume.heights.clone(),
    )
    .map_err(|e| CliError::in_file(path, format!("[volume]: {e}")))?;

    let extractor = SimpleExtractorConfig {
        downsample: file.extractor.downsample,
        include_gradients: file.extractor.include_gradients,
    };

    let mode_name = match mode {
        Some(ModeArg::Vanilla) => "vanilla",
        Some(ModeArg::Deformable) => "deformable",
        None => file.pipeline.mode.as_str(),
    };
    let mode = match mode_name {
        "vanilla" => {
            let compression = match (&file.pipeline.compression_weights, file.pipeline.compression_bias)
            {
                (None, None) => HeightCompression::Mean,
                (Some(weights), bias) => HeightCompression::Affine {
                    weights: weights.clone(),
                    bias: bias.unwrap_or(0.0),
                },
                (None, Some(_)) => {
                    return Err(CliError::in_file(
                        path,
                        "[pipeline]: compression_bias requires compression_weights",
                    ))
                }
            };
            BevMode::Vanilla { compression }
        }
        "deformable" => {
            let Some(rel) = &file.pipeline.deform_weights else {
                return Err(CliError::in_file(
                    path,
                    "[pipeline]: mode \"deformable\" requires deform_weights",
                ));
            };
            let weights_path = base.join(rel);
            let weights = DeformableWeights::load(&weights_path)
                .map_err(|e| CliError::in_file(&weights_path, e))?;
            let seed = file.pipeline.deform_query_seed.unwrap_or(0);
            let queries = BevQueryGrid::random(volume.clone(), weights.dims().c_query, seed)
                .map_err(|e| CliError::in_file(path, format!("[pipeline]: {e}")))?;
            BevMode::Deformable { weights, queries }
        }
        other => {
            return Err(CliError::in_file(
                path,
                format!("[pipeline]: unknown mode {other:?} (expected \"vanilla\" or \"deformable\")"),
            ))
        }
    };

    let fusion = match (fuse, &file.lidar) {
        (false, _) => None,
        (true, Some(lidar)) => Some(FusionParams {
            z_bins: lidar.z_bins,
            z_min: lidar.z_min,
            z_max: lidar.z_max,
            normalize_modalities: lidar.normalize_modalities,
        }),
        (true, None) => {
            return Err(CliError::in_file(
                path,
                "--fuse requires a [lidar] section",
            ))
        }
    };

    let channels = match &mode {
        BevMode::Vanilla { .. } => extractor.channels(),
        BevMode::Deformable { weights, .. } => weights.dims().c_out,
    } + if fusion.is_some() { 2 } else { 0 };
    let reduce_weights = match &file.pipeline.reduce_weights {
        Some(weights) => weights.clone(),
        None => vec![1.0 / channels as f32; channels],
    };

    let params = PipelineParams {
        volume,
        theta_bins: file.polar.theta_bins,
        r_bins: file.polar.r_bins,
        extractor,
        mode,
        reduce_weights,
        reduce_bias: file.pipeline.reduce_bias.unwrap_or(0.0),
        fusion,
    };

    let retrieval = &file.retrieval;
    let eval = EvalConfig {
        max_n: retrieval.max_n,
        criterion_meters: retrieval.criterion_meters,
        sweep_n: retrieval.sweep_n,
        sweep_meters: (retrieval.sweep_min_meters, retrieval.sweep_max_meters),
    };

    Ok(LoadedConfig {
        rig,
        params,
        top_n: retrieval.top_n,
        eval,
    })
}
