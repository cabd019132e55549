//! Pinhole cameras, rig extrinsics and feature-map sampling.
//!
//! Conventions, used everywhere downstream:
//! - rig frame: x forward, y left, z up; the BEV grid lives in this frame
//! - camera frame: x right, y down, z along the optical axis
//! - extrinsics map rig to camera: `x_cam = R * x_rig + t`
//! - projection: `u = cx + fx * x/z`, `v = cy + fy * y/z`; `u = 0` is the
//!   center of the first pixel column
//! - frustum: strictly positive depth and pixel in `[0, width) x [0, height)`

use nalgebra::{Matrix3, Vector3};
use ndarray::Array3;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

use crate::interp::bilinear_axes01;

/// Errors from camera construction, projection and sampling.
#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("focal lengths must be positive and finite, got fx={fx}, fy={fy}")]
    NonPositiveFocal { fx: f64, fy: f64 },
    #[error("principal point ({cx}, {cy}) outside image {width}x{height}")]
    PrincipalPointOutside {
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    },
    #[error("image dimensions must be nonzero, got {width}x{height}")]
    EmptyImagePlane { width: u32, height: u32 },
    #[error("rotation is not orthonormal with determinant +1 (deviation {deviation:.3e})")]
    NotARotation { deviation: f64 },
    #[error("translation must be finite")]
    NonFiniteTranslation,
    #[error("view index {index} out of range for rig with {view_count} views")]
    ViewIndexOutOfRange { index: usize, view_count: usize },
    #[error("a camera rig needs at least one view")]
    EmptyRig,
    #[error("sample ({u}, {v}) outside feature map domain [0, {max_u}] x [0, {max_v}]")]
    SampleOutOfRange {
        u: f64,
        v: f64,
        max_u: f64,
        max_v: f64,
    },
    #[error("feature map must have nonzero height, width and channels")]
    EmptyFeatureMap,
    #[error("feature map values and scale must be finite, scale positive")]
    NonFiniteFeatureMap,
    #[error("failed to read rig config {path}: {source}")]
    RigConfigIo {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to parse rig config {path}: {message}")]
    RigConfigParse { path: String, message: String },
}

/// Pinhole intrinsics plus the image size they refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::EmptyImagePlane { width, height });
        }
        if !(fx.is_finite() && fy.is_finite() && fx > 0.0 && fy > 0.0) {
            return Err(GeometryError::NonPositiveFocal { fx, fy });
        }
        let inside = cx.is_finite()
            && cy.is_finite()
            && (0.0..width as f64).contains(&cx)
            && (0.0..height as f64).contains(&cy);
        if !inside {
            return Err(GeometryError::PrincipalPointOutside {
                cx,
                cy,
                width,
                height,
            });
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }
}

/// Maximum deviation of `R^T R` from identity (and `det R` from +1)
/// tolerated by [`CameraExtrinsics::new`].
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Rigid transform from the rig frame into a camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraExtrinsics {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl CameraExtrinsics {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let gram = rotation.transpose() * rotation;
        let mut deviation: f64 = 0.0;
        for r in 0..3 {
            for c in 0..3 {
                let target = if r == c { 1.0 } else { 0.0 };
                deviation = deviation.max((gram[(r, c)] - target).abs());
            }
        }
        deviation = deviation.max((rotation.determinant() - 1.0).abs());
        if !deviation.is_finite() || deviation > ROTATION_TOLERANCE {
            return Err(GeometryError::NotARotation { deviation });
        }
        if !translation.iter().all(|t| t.is_finite()) {
            return Err(GeometryError::NonFiniteTranslation);
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Camera center expressed in the rig frame, `-R^T t`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }
}

/// One camera of the rig.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    pub intrinsics: CameraIntrinsics,
    pub extrinsics: CameraExtrinsics,
}

/// A fixed multi-camera rig.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraRig {
    views: Vec<CameraView>,
}

impl CameraRig {
    pub fn new(views: Vec<CameraView>) -> Result<Self, GeometryError> {
        if views.is_empty() {
            return Err(GeometryError::EmptyRig);
        }
        Ok(Self { views })
    }

    pub fn views(&self) -> &[CameraView] {
        &self.views
    }

    pub fn view_count(&self) -> usize {
        self.views.len()
    }

    pub fn view(&self, index: usize) -> Result<&CameraView, GeometryError> {
        self.views.get(index).ok_or(GeometryError::ViewIndexOutOfRange {
            index,
            view_count: self.views.len(),
        })
    }

    /// Symmetric outward-looking ring of `n` identical cameras, view `k` at
    /// azimuth `k * 360/n` degrees, pitched down by `pitch_deg`, mounted
    /// `radial_offset` meters from the rig axis at height `mount_z`.
    pub fn ring(
        n: usize,
        intrinsics: CameraIntrinsics,
        pitch_deg: f64,
        radial_offset: f64,
        mount_z: f64,
    ) -> Result<Self, GeometryError> {
        if n == 0 {
            return Err(GeometryError::EmptyRig);
        }
        let mut views = Vec::with_capacity(n);
        for k in 0..n {
            let yaw = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            let pitch = pitch_deg.to_radians();
            let (sy, cy) = yaw.sin_cos();
            let (sp, cp) = pitch.sin_cos();
            let forward = Vector3::new(cy * cp, sy * cp, -sp);
            let right = Vector3::new(sy, -cy, 0.0);
            let down = forward.cross(&right);
            let rotation =
                Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
            let center = Vector3::new(radial_offset * cy, radial_offset * sy, mount_z);
            let translation = -(rotation * center);
            views.push(CameraView {
                intrinsics: intrinsics.clone(),
                extrinsics: CameraExtrinsics::new(rotation, translation)?,
            });
        }
        Ok(Self { views })
    }
}

/// Projects a rig-frame point into view `view_index`.
///
/// `Ok(None)` when the point is outside the view frustum (non-positive depth
/// or pixel out of `[0, width) x [0, height)`); the pixel is at image
/// resolution regardless of any feature-map downsampling.
pub fn project_point(
    rig: &CameraRig,
    point: &Vector3<f64>,
    view_index: usize,
) -> Result<Option<(f64, f64)>, GeometryError> {
    let view = rig.view(view_index)?;
    let cam = view.extrinsics.rotation * point + view.extrinsics.translation;
    if cam.z <= 0.0 {
        return Ok(None);
    }
    let intr = &view.intrinsics;
    let u = intr.cx + intr.fx * cam.x / cam.z;
    let v = intr.cy + intr.fy * cam.y / cam.z;
    if (0.0..intr.width as f64).contains(&u) && (0.0..intr.height as f64).contains(&v) {
        Ok(Some((u, v)))
    } else {
        Ok(None)
    }
}

/// Inverse of [`project_point`] up to depth: the rig-frame ray through pixel
/// (`u`, `v`) of view `view_index`, returned as (origin, unit direction).
pub fn backproject_ray(
    rig: &CameraRig,
    view_index: usize,
    u: f64,
    v: f64,
) -> Result<(Vector3<f64>, Vector3<f64>), GeometryError> {
    let view = rig.view(view_index)?;
    let intr = &view.intrinsics;
    let dir_cam = Vector3::new((u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0);
    let rot_t = view.extrinsics.rotation.transpose();
    let dir = (rot_t * dir_cam).normalize();
    let origin = view.extrinsics.center();
    Ok((origin, dir))
}

/// Dense per-view feature grid with the scale tying it back to image pixels.
///
/// `data` is (height, width, channels); `scale` is feature pixels per image
/// pixel (0.5 when the extractor halves the resolution). Samplers multiply
/// image-resolution coordinates by `scale` before interpolating.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    data: Array3<f32>,
    scale: f64,
}

impl FeatureMap {
    pub fn new(data: Array3<f32>, scale: f64) -> Result<Self, GeometryError> {
        let (h, w, c) = data.dim();
        if h == 0 || w == 0 || c == 0 {
            return Err(GeometryError::EmptyFeatureMap);
        }
        if !(scale.is_finite() && scale > 0.0) || data.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFiniteFeatureMap);
        }
        Ok(Self { data, scale })
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }
}

/// Bilinear sample at feature-resolution coordinates; strict domain
/// `[0, width-1] x [0, height-1]`, anything outside is an error. Callers
/// holding image-resolution pixels apply [`FeatureMap::scale`] first.
pub fn bilinear_sample(map: &FeatureMap, u: f64, v: f64) -> Result<Vec<f64>, GeometryError> {
    let max_u = (map.width() - 1) as f64;
    let max_v = (map.height() - 1) as f64;
    if !(u.is_finite() && v.is_finite()) || u < 0.0 || u > max_u || v < 0.0 || v > max_v {
        return Err(GeometryError::SampleOutOfRange { u, v, max_u, max_v });
    }
    let mut out = vec![0.0; map.channels()];
    bilinear_axes01(&map.data.view(), v, u, &mut out);
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct RigConfigView {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
    /// Row-major 3x3 rotation, rig to camera.
    rotation: Vec<f64>,
    translation: [f64; 3],
}

#[derive(Debug, Serialize, Deserialize)]
struct RigConfigFile {
    view: Vec<RigConfigView>,
}

/// Loads a rig from a TOML document with one `[[view]]` table per camera;
/// every view is validated like the in-code constructors.
pub fn load_rig(path: &Path) -> Result<CameraRig, GeometryError> {
    let text = std::fs::read_to_string(path).map_err(|source| GeometryError::RigConfigIo {
        path: path.display().to_string(),
        source,
    })?;
    let parsed: RigConfigFile =
        toml::from_str(&text).map_err(|e| GeometryError::RigConfigParse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
    let mut views = Vec::with_capacity(parsed.view.len());
    for (i, v) in parsed.view.iter().enumerate() {
        if v.rotation.len() != 9 {
            return Err(GeometryError::RigConfigParse {
                path: path.display().to_string(),
                message: format!("view {i}: rotation must have 9 entries, got {}", v.rotation.len()),
            });
        }
        let rotation = Matrix3::from_row_slice(&v.rotation);
        let translation = Vector3::new(v.translation[0], v.translation[1], v.translation[2]);
        views.push(CameraView {
            intrinsics: CameraIntrinsics::new(v.fx, v.fy, v.cx, v.cy, v.width, v.height)?,
            extrinsics: CameraExtrinsics::new(rotation, translation)?,
        });
    }
    CameraRig::new(views)
}

/// Writes a rig as the TOML document accepted by [`load_rig`].
pub fn save_rig(rig: &CameraRig, path: &Path) -> Result<(), GeometryError> {
    let file = RigConfigFile {
        view: rig
            .views()
            .iter()
            .map(|v| RigConfigView {
                fx: v.intrinsics.fx,
                fy: v.intrinsics.fy,
                cx: v.intrinsics.cx,
                cy: v.intrinsics.cy,
                width: v.intrinsics.width,
                height: v.intrinsics.height,
                rotation: v.extrinsics.rotation.transpose().as_slice().to_vec(),
                translation: [
                    v.extrinsics.translation.x,
                    v.extrinsics.translation.y,
                    v.extrinsics.translation.z,
                ],
            })
            .collect(),
    };
    let text = toml::to_string(&file).expect("rig config serializes");
    std::fs::write(path, text).map_err(|source| GeometryError::RigConfigIo {
        path: path.display().to_string(),
        source,
    })
}
