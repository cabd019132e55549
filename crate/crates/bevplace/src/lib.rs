//! Rotation-invariant place recognition from surround-view cameras.
//!
//! A multi-camera rig is projected into a bird's-eye-view (BEV) feature grid,
//! the grid is resampled onto a polar lattice, and the magnitude spectrum of
//! its 2-D DFT yields a compact place descriptor that is invariant to the
//! yaw of the rig. Phase correlation over the polar angle recovers the
//! relative yaw between two visits. Optional LiDAR height/density channels
//! can be fused into the polar grid before aggregation.
//!
//! Modules follow the processing order: [`geometry`] (cameras and sampling),
//! [`bev`] (vanilla BEV construction), [`deform`] (deformable-attention BEV
//! construction), [`spectral`] (polar transform, descriptor, yaw), [`lidar`]
//! (point-cloud channels and fusion), [`retrieval`] (database, KD-tree,
//! evaluation), [`objectives`] (training losses), [`synth`] (synthetic
//! worlds for end-to-end tests) and [`pipeline`] (image-to-descriptor
//! wiring used by the CLI).

pub mod bev;
pub mod deform;
pub mod geometry;
pub mod lidar;
pub mod objectives;
pub mod pipeline;
pub mod retrieval;
pub mod spectral;
pub mod synth;
pub mod tensor_io;

mod interp;

pub use bev::{BevFeature, BevVolume, HeightCompression, SimpleExtractorConfig, VolumeSpec};
pub use deform::{BevQueryGrid, DeformDims, DeformableWeights};
pub use geometry::{CameraExtrinsics, CameraIntrinsics, CameraRig, CameraView, FeatureMap};
pub use lidar::{CylGridSpec, PointCloud};
pub use pipeline::{place_descriptor, BevMode, PipelineParams, PlaceSummary, StageTimings};
pub use retrieval::{EvalReport, PlaceDatabase, PlaceRecord, Pose};
pub use spectral::{PlaceFeature, PolarBev, YawEstimate};
pub use synth::{RigPose, Scene, SceneConfig};
