//! Vanilla bird's-eye-view feature construction.
//!
//! A [`VolumeSpec`] pins a horizontal grid of cells and a list of sample
//! heights. Every 3-D grid center is projected into each camera; views whose
//! projection lands in the frustum contribute a bilinear feature sample, and
//! the cell stores the average over contributing views (zero where no view
//! sees the point). Height compression and channel reduction collapse the
//! volume to a single-channel map ready for the polar transform.

use ndarray::{Array2, Array3, Array4};
use std::path::Path;
use thiserror::Error;

use crate::geometry::{project_point, CameraRig, FeatureMap, GeometryError};
use crate::interp::bilinear_clamped;
use crate::tensor_io::{self, TensorIoError};

#[derive(Debug, Error)]
pub enum BevError {
    #[error("volume spec invalid: {reason}")]
    InvalidVolume { reason: String },
    #[error("rig has {expected} views but {got} feature maps were supplied")]
    ViewCountMismatch { expected: usize, got: usize },
    #[error("feature maps disagree on channel count ({first} vs {other})")]
    ChannelMismatch { first: usize, other: usize },
    #[error("input image is empty")]
    EmptyImage,
    #[error("expected an RGB image with 3 channels, got {got}")]
    BadImageChannels { got: usize },
    #[error("downsample factor must be at least 1")]
    ZeroDownsample,
    #[error("downsample {downsample} leaves no pixels for a {height}x{width} image")]
    DownsampleTooLarge {
        downsample: usize,
        height: usize,
        width: usize,
    },
    #[error("expected {expected} weights, got {got}")]
    WeightLength { expected: usize, got: usize },
    #[error("tensor dims {got:?} do not match the volume spec grid {expected:?}")]
    SpecShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    TensorIo(#[from] TensorIoError),
}

/// Horizontal extent, cell size and sample heights of the BEV volume, in
/// rig-frame meters.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub cell: f64,
    pub heights: Vec<f64>,
}

impl VolumeSpec {
    pub fn new(
        x_min: f64,
        x_max: f64,
        y_min: f64,
        y_max: f64,
        cell: f64,
        heights: Vec<f64>,
    ) -> Result<Self, BevError> {
        let invalid = |reason: &str| BevError::InvalidVolume {
            reason: reason.to_string(),
        };
        if !(cell.is_finite() && cell > 0.0) {
            return Err(invalid("cell size must be positive"));
        }
        if !(x_min < x_max && y_min < y_max) {
            return Err(invalid("extent must be ordered"));
        }
        if heights.is_empty() || heights.iter().any(|h| !h.is_finite()) {
            return Err(invalid("heights must be nonempty and finite"));
        }
        for (span, name) in [(x_max - x_min, "x"), (y_max - y_min, "y")] {
            let cells = span / cell;
            if (cells - cells.round()).abs() > 1e-6 || cells.round() < 1.0 {
                return Err(invalid(&format!("{name} extent is not a whole number of cells")));
            }
        }
        Ok(Self {
            x_min,
            x_max,
            y_min,
            y_max,
            cell,
            heights,
        })
    }

    /// 40 m x 40 m centered on the rig, 0.5 m cells (80 x 80), four sample
    /// heights between -1 m and 2 m.
    pub fn default_urban() -> Self {
        Self::new(-20.0, 20.0, -20.0, 20.0, 0.5, vec![-1.0, 0.0, 1.0, 2.0]).unwrap()
    }

    pub fn x_cells(&self) -> usize {
        ((self.x_max - self.x_min) / self.cell).round() as usize
    }

    pub fn y_cells(&self) -> usize {
        ((self.y_max - self.y_min) / self.cell).round() as usize
    }

    pub fn n_heights(&self) -> usize {
        self.heights.len()
    }

    /// Center of cell column `i` along x.
    pub fn x_center(&self, i: usize) -> f64 {
        self.x_min + (i as f64 + 0.5) * self.cell
    }

    /// Center of cell row `j` along y.
    pub fn y_center(&self, j: usize) -> f64 {
        self.y_min + (j as f64 + 0.5) * self.cell
    }

    /// Fractional grid index of metric x (cell center i maps to exactly i).
    pub fn x_index(&self, x: f64) -> f64 {
        (x - self.x_min) / self.cell - 0.5
    }

    pub fn y_index(&self, y: f64) -> f64 {
        (y - self.y_min) / self.cell - 0.5
    }

    /// True when the grid is square and centered on the rig origin, the
    /// precondition for the polar transform.
    pub fn is_centered_square(&self) -> bool {
        self.x_cells() == self.y_cells()
            && (self.x_min + self.x_max).abs() < 1e-9
            && (self.y_min + self.y_max).abs() < 1e-9
            && (self.x_max - self.y_max).abs() < 1e-9
    }
}

/// BEV features before height compression: (X, Y, N_h, C) with per-(cell,
/// height) contributing-view counts.
#[derive(Debug, Clone)]
pub struct BevVolume {
    pub data: Array4<f32>,
    pub spec: VolumeSpec,
    pub coverage: Array3<u32>,
}

/// Height-compressed BEV features: (X, Y, C) plus per-cell view counts
/// (maximum over heights).
#[derive(Debug, Clone)]
pub struct BevFeature {
    pub data: Array3<f32>,
    pub spec: VolumeSpec,
    pub coverage: Array2<u32>,
}

impl BevFeature {
    /// Writes the feature tensor (coverage and spec are config-derived and
    /// not part of the tensor format).
    pub fn save(&self, path: &Path) -> Result<(), BevError> {
        Ok(tensor_io::write_array3(path, &self.data)?)
    }

    /// Reads a feature tensor saved by [`BevFeature::save`]; coverage is not
    /// persisted and loads as zero.
    pub fn load(path: &Path, spec: VolumeSpec) -> Result<Self, BevError> {
        let data = tensor_io::read_array3(path)?;
        let (x, y, _) = data.dim();
        if (x, y) != (spec.x_cells(), spec.y_cells()) {
            return Err(BevError::SpecShapeMismatch {
                expected: (spec.x_cells(), spec.y_cells()),
                got: (x, y),
            });
        }
        let coverage = Array2::zeros((x, y));
        Ok(Self { data, spec, coverage })
    }
}

/// Configuration of the training-free feature extractor: box-downsampled RGB
/// with optional central-difference luminance gradients (one channel per
/// gradient axis, so 5 channels with gradients, 3 without).
#[derive(Debug, Clone, PartialEq)]
pub struct SimpleExtractorConfig {
    pub downsample: usize,
    pub include_gradients: bool,
}

impl Default for SimpleExtractorConfig {
    fn default() -> Self {
        Self {
            downsample: 2,
            include_gradients: true,
        }
    }
}

impl SimpleExtractorConfig {
    pub fn channels(&self) -> usize {
        if self.include_gradients {
            5
        } else {
            3
        }
    }
}

/// Turns an RGB image (H, W, 3), values finite, into a [`FeatureMap`] with
/// `scale = 1 / downsample`. Trailing rows/columns that do not fill a whole
/// box are dropped.
pub fn extract_features_simple(
    image: &Array3<f32>,
    cfg: &SimpleExtractorConfig,
) -> Result<FeatureMap, BevError> {
    let (h, w, c) = image.dim();
    if h == 0 || w == 0 {
        return Err(BevError::EmptyImage);
    }
    if c != 3 {
        return Err(BevError::BadImageChannels { got: c });
    }
    let d = cfg.downsample;
    if d == 0 {
        return Err(BevError::ZeroDownsample);
    }
    let (oh, ow) = (h / d, w / d);
    if oh == 0 || ow == 0 {
        return Err(BevError::DownsampleTooLarge {
            downsample: d,
            height: h,
            width: w,
        });
    }
    let channels = cfg.channels();
    let mut out = Array3::<f32>::zeros((oh, ow, channels));
    let norm = 1.0 / (d * d) as f64;
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..3 {
                let mut acc = 0.0f64;
                for dy in 0..d {
                    for dx in 0..d {
                        acc += image[(oy * d + dy, ox * d + dx, ch)] as f64;
                    }
                }
                out[(oy, ox, ch)] = (acc * norm) as f32;
            }
        }
    }
    if cfg.include_gradients {
        let luma_grid = Array2::from_shape_fn((oh, ow), |(y, x)| {
            (out[(y, x, 0)] as f64 + out[(y, x, 1)] as f64 + out[(y, x, 2)] as f64) / 3.0
        });
        let luma = |y: usize, x: usize| -> f64 { luma_grid[(y, x)] };
        for y in 0..oh {
            for x in 0..ow {
                let xl = x.saturating_sub(1);
                let xr = (x + 1).min(ow - 1);
                let yu = y.saturating_sub(1);
                let yd = (y + 1).min(oh - 1);
                out[(y, x, 3)] = ((luma(y, xr) - luma(y, xl)) / 2.0) as f32;
                out[(y, x, 4)] = ((luma(yd, x) - luma(yu, x)) / 2.0) as f32;
            }
        }
    }
    Ok(FeatureMap::new(out, 1.0 / d as f64)?)
}

/// Builds the BEV volume by projecting every (cell, height) grid center into
/// every view and averaging the bilinear samples of contributing views.
///
/// Projection happens at image resolution; the scaled sample coordinate is
/// clamped into the feature grid's bilinear domain (a pixel just inside the
/// right image edge can scale past `width_f - 1` after downsampling).
pub fn build_vanilla_bev(
    rig: &CameraRig,
    feats: &[FeatureMap],
    spec: &VolumeSpec,
) -> Result<BevVolume, BevError> {
    if feats.len() != rig.view_count() {
        return Err(BevError::ViewCountMismatch {
            expected: rig.view_count(),
            got: feats.len(),
        });
    }
    let channels = feats[0].channels();
    for f in feats {
        if f.channels() != channels {
            return Err(BevError::ChannelMismatch {
                first: channels,
                other: f.channels(),
            });
        }
    }
    let (xc, yc, nh) = (spec.x_cells(), spec.y_cells(), spec.n_heights());
    let mut data = Array4::<f32>::zeros((xc, yc, nh, channels));
    let mut coverage = Array3::<u32>::zeros((xc, yc, nh));
    let mut sample = vec![0.0f64; channels];
    let mut gathered: Vec<Vec<f64>> = vec![Vec::with_capacity(feats.len()); channels];
    for i in 0..xc {
        let x = spec.x_center(i);
        for j in 0..yc {
            let y = spec.y_center(j);
            for (hi, &z) in spec.heights.iter().enumerate() {
                for buf in gathered.iter_mut() {
                    buf.clear();
                }
                let point = nalgebra::Vector3::new(x, y, z);
                let mut count = 0u32;
                for (k, map) in feats.iter().enumerate() {
                    if let Some((u, v)) = project_point(rig, &point, k)? {
                        bilinear_clamped(
                            &map.data().view(),
                            v * map.scale(),
                            u * map.scale(),
                            &mut sample,
                        );
                        for (buf, &val) in gathered.iter_mut().zip(sample.iter()) {
                            buf.push(val);
                        }
                        count += 1;
                    }
                }
                coverage[(i, j, hi)] = count;
                if count > 0 {
                    for (c, buf) in gathered.iter_mut().enumerate() {
                        // Summed in value order so permuting the views (and
                        // their maps together) cannot change the float result.
                        buf.sort_unstable_by(f64::total_cmp);
                        let sum: f64 = buf.iter().sum();
                        data[(i, j, hi, c)] = (sum / count as f64) as f32;
                    }
                }
            }
        }
    }
    Ok(BevVolume {
        data,
        spec: spec.clone(),
        coverage,
    })
}

/// How [`compress_height`] collapses the height axis.
#[derive(Debug, Clone, PartialEq)]
pub enum HeightCompression {
    /// Arithmetic mean over the height axis (default).
    Mean,
    /// `sum_h weights[h] * v_h + bias`, per channel; weights length must be
    /// the number of heights.
    Affine { weights: Vec<f32>, bias: f32 },
}

impl Default for HeightCompression {
    fn default() -> Self {
        Self::Mean
    }
}

/// Collapses (X, Y, N_h, C) to (X, Y, C). Feature coverage is the maximum
/// view count over the cell's heights.
pub fn compress_height(vol: &BevVolume, mode: &HeightCompression) -> Result<BevFeature, BevError> {
    let (xc, yc, nh, channels) = vol.data.dim();
    if let HeightCompression::Affine { weights, .. } = mode {
        if weights.len() != nh {
            return Err(BevError::WeightLength {
                expected: nh,
                got: weights.len(),
            });
        }
    }
    let mut data = Array3::<f32>::zeros((xc, yc, channels));
    let mut coverage = Array2::<u32>::zeros((xc, yc));
    for i in 0..xc {
        for j in 0..yc {
            for c in 0..channels {
                let acc: f64 = match mode {
                    HeightCompression::Mean => {
                        let sum: f64 = (0..nh).map(|h| vol.data[(i, j, h, c)] as f64).sum();
                        sum / nh as f64
                    }
                    HeightCompression::Affine { weights, bias } => {
                        let sum: f64 = (0..nh)
                            .map(|h| weights[h] as f64 * vol.data[(i, j, h, c)] as f64)
                            .sum();
                        sum + *bias as f64
                    }
                };
                data[(i, j, c)] = acc as f32;
            }
            coverage[(i, j)] = (0..nh).map(|h| vol.coverage[(i, j, h)]).max().unwrap_or(0);
        }
    }
    Ok(BevFeature {
        data,
        spec: vol.spec.clone(),
        coverage,
    })
}

/// Affine map over the channel axis of any (A, B, C) grid, yielding (A, B, 1):
/// `out = sum_c weights[c] * v_c + bias`.
pub fn affine_reduce(
    data: &Array3<f32>,
    weights: &[f32],
    bias: f32,
) -> Result<Array3<f32>, BevError> {
    let (a, b, channels) = data.dim();
    if weights.len() != channels {
        return Err(BevError::WeightLength {
            expected: channels,
            got: weights.len(),
        });
    }
    let mut out = Array3::<f32>::zeros((a, b, 1));
    for i in 0..a {
        for j in 0..b {
            let acc: f64 = (0..channels)
                .map(|c| weights[c] as f64 * data[(i, j, c)] as f64)
                .sum::<f64>()
                + bias as f64;
            out[(i, j, 0)] = acc as f32;
        }
    }
    Ok(out)
}

/// Collapses the channel axis of a BEV feature to a single channel with an
/// affine map.
pub fn reduce_channels(
    bev: &BevFeature,
    weights: &[f32],
    bias: f32,
) -> Result<BevFeature, BevError> {
    let data = affine_reduce(&bev.data, weights, bias)?;
    Ok(BevFeature {
        data,
        spec: bev.spec.clone(),
        coverage: bev.coverage.clone(),
    })
}

/// 8-bit RGB image to a (height, width, 3) float array in [0, 1].
pub fn rgb_to_array(image: &image::RgbImage) -> Array3<f32> {
    let (w, h) = image.dimensions();
    Array3::from_shape_fn((h as usize, w as usize, 3), |(y, x, c)| {
        image.get_pixel(x as u32, y as u32)[c] as f32 / 255.0
    })
}

/// Float array in [0, 1] back to 8-bit RGB, clamping out-of-range values.
pub fn array_to_rgb(array: &Array3<f32>) -> Result<image::RgbImage, BevError> {
    let (h, w, c) = array.dim();
    if h == 0 || w == 0 {
        return Err(BevError::EmptyImage);
    }
    if c != 3 {
        return Err(BevError::BadImageChannels { got: c });
    }
    let mut image = image::RgbImage::new(w as u32, h as u32);
    for (y, x, k) in ndarray::indices((h, w, 3)) {
        let value = (array[(y, x, k)].clamp(0.0, 1.0) * 255.0).round() as u8;
        image.get_pixel_mut(x as u32, y as u32)[k] = value;
    }
    Ok(image)
}
