//! LiDAR point clouds, cylindrical occupancy grids and cross-modal fusion.
//!
//! Points are binned straight into a cylindrical grid around the sensor —
//! azimuth wraps, range and height are half-open — so a yaw rotation of the
//! cloud is a pure row cycle of the grid, the same invariance the polar
//! visual BEV enjoys. The height axis is then compressed to two channels
//! (point density and normalized highest occupied layer) that concatenate
//! behind the visual channels in the polar domain.

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array3;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

use crate::spectral::{PolarBev, SpectralError};

#[derive(Debug, Error)]
pub enum LidarError {
    #[error("intensity has {got} values for {points} points")]
    IntensityLengthMismatch { points: usize, got: usize },
    #[error("point {index} has a non-finite coordinate or intensity")]
    NonFinitePoint { index: usize },
    #[error("cylindrical grid needs positive bin counts, r_max > 0 and z_min < z_max")]
    BadGridSpec,
    #[error("grid is {got:?}, spec expects {expected:?}")]
    GridShapeMismatch {
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },
    #[error("polar grids disagree: {0} bins/range vs {1}")]
    FusionMismatch(String, String),
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: bad magic, not a point cloud file")]
    BadMagic { path: String },
    #[error("{path}: unknown flag bits {flags:#04x}")]
    BadFlags { path: String, flags: u8 },
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

pub const CLOUD_MAGIC: &[u8; 5] = b"PCXYZ";

/// A point cloud in the rig frame (x forward, y left, z up), with optional
/// per-point intensity.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<[f32; 3]>,
    intensity: Option<Vec<f32>>,
}

impl PointCloud {
    pub fn new(points: Vec<[f32; 3]>, intensity: Option<Vec<f32>>) -> Result<Self, LidarError> {
        if let Some(values) = &intensity {
            if values.len() != points.len() {
                return Err(LidarError::IntensityLengthMismatch {
                    points: points.len(),
                    got: values.len(),
                });
            }
        }
        for (index, p) in points.iter().enumerate() {
            if !p.iter().all(|c| c.is_finite()) {
                return Err(LidarError::NonFinitePoint { index });
            }
        }
        if let Some(values) = &intensity {
            if let Some(index) = values.iter().position(|v| !v.is_finite()) {
                return Err(LidarError::NonFinitePoint { index });
            }
        }
        Ok(Self { points, intensity })
    }

    pub fn points(&self) -> &[[f32; 3]] {
        &self.points
    }

    pub fn intensity(&self) -> Option<&[f32]> {
        self.intensity.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Writes the cloud: magic `PCXYZ`, flags u8 (bit 0 = intensity
    /// present), count u64, xyz f32 triples, then the optional intensity
    /// block. Little-endian throughout.
    pub fn save(&self, path: &Path) -> Result<(), LidarError> {
        let io_err = |source| LidarError::Io {
            path: path.display().to_string(),
            source,
        };
        let file = std::fs::File::create(path).map_err(io_err)?;
        let mut w = BufWriter::new(file);
        w.write_all(CLOUD_MAGIC).map_err(io_err)?;
        w.write_u8(u8::from(self.intensity.is_some())).map_err(io_err)?;
        w.write_u64::<LittleEndian>(self.points.len() as u64).map_err(io_err)?;
        for p in &self.points {
            for &c in p {
                w.write_f32::<LittleEndian>(c).map_err(io_err)?;
            }
        }
        if let Some(values) = &self.intensity {
            for &v in values {
                w.write_f32::<LittleEndian>(v).map_err(io_err)?;
            }
        }
        w.flush().map_err(io_err)
    }

    pub fn load(path: &Path) -> Result<Self, LidarError> {
        let io_err = |source| LidarError::Io {
            path: path.display().to_string(),
            source,
        };
        let file = std::fs::File::open(path).map_err(io_err)?;
        let mut r = BufReader::new(file);
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic).map_err(io_err)?;
        if &magic != CLOUD_MAGIC {
            return Err(LidarError::BadMagic {
                path: path.display().to_string(),
            });
        }
        let flags = r.read_u8().map_err(io_err)?;
        if flags & !1 != 0 {
            return Err(LidarError::BadFlags {
                path: path.display().to_string(),
                flags,
            });
        }
        let count = r.read_u64::<LittleEndian>().map_err(io_err)? as usize;
        let mut points = Vec::with_capacity(count);
        for _ in 0..count {
            let x = r.read_f32::<LittleEndian>().map_err(io_err)?;
            let y = r.read_f32::<LittleEndian>().map_err(io_err)?;
            let z = r.read_f32::<LittleEndian>().map_err(io_err)?;
            points.push([x, y, z]);
        }
        let intensity = if flags & 1 != 0 {
            let mut values = Vec::with_capacity(count);
            for _ in 0..count {
                values.push(r.read_f32::<LittleEndian>().map_err(io_err)?);
            }
            Some(values)
        } else {
            None
        };
        Self::new(points, intensity)
    }
}

/// Bin layout of the cylindrical occupancy grid: azimuth wraps over
/// `theta_bins`, range covers `[0, r_max)` and height `[z_min, z_max)`,
/// both half-open.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CylGridSpec {
    pub theta_bins: usize,
    pub r_bins: usize,
    pub z_bins: usize,
    pub r_max: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl CylGridSpec {
    pub fn new(
        theta_bins: usize,
        r_bins: usize,
        z_bins: usize,
        r_max: f64,
        z_min: f64,
        z_max: f64,
    ) -> Result<Self, LidarError> {
        let finite = r_max.is_finite() && z_min.is_finite() && z_max.is_finite();
        if theta_bins == 0 || r_bins == 0 || z_bins == 0 || !finite || r_max <= 0.0 || z_min >= z_max
        {
            return Err(LidarError::BadGridSpec);
        }
        Ok(Self {
            theta_bins,
            r_bins,
            z_bins,
            r_max,
            z_min,
            z_max,
        })
    }
}

/// Counts points per (azimuth, range, height) bin. Points at or beyond
/// `r_max`, or outside `[z_min, z_max)`, are dropped; azimuth wraps.
pub fn cylindrical_binning(cloud: &PointCloud, spec: &CylGridSpec) -> Array3<f32> {
    let mut grid = Array3::<f32>::zeros((spec.theta_bins, spec.r_bins, spec.z_bins));
    let two_pi = std::f64::consts::TAU;
    for p in cloud.points() {
        let (x, y, z) = (p[0] as f64, p[1] as f64, p[2] as f64);
        let r = x.hypot(y);
        if r >= spec.r_max || z < spec.z_min || z >= spec.z_max {
            continue;
        }
        let mut theta = y.atan2(x);
        if theta < 0.0 {
            theta += two_pi;
        }
        // atan2 can return exactly -0.0 -> 2*pi after the wrap; fold it back.
        let t = ((theta / two_pi * spec.theta_bins as f64) as usize).min(spec.theta_bins - 1);
        let s = ((r / spec.r_max * spec.r_bins as f64) as usize).min(spec.r_bins - 1);
        let z_span = spec.z_max - spec.z_min;
        let k = (((z - spec.z_min) / z_span * spec.z_bins as f64) as usize).min(spec.z_bins - 1);
        grid[(t, s, k)] += 1.0;
    }
    grid
}

/// Collapses the height axis of a cylindrical occupancy grid into a
/// two-channel polar map: channel 0 is the point count summed over height,
/// channel 1 the highest occupied layer index normalized to [0, 1] (zero
/// when the column is empty or there is only one layer).
pub fn compress_height_lidar(
    grid: &Array3<f32>,
    spec: &CylGridSpec,
) -> Result<PolarBev, LidarError> {
    let got = grid.dim();
    let expected = (spec.theta_bins, spec.r_bins, spec.z_bins);
    if got != expected {
        return Err(LidarError::GridShapeMismatch { expected, got });
    }
    let mut out = Array3::<f32>::zeros((spec.theta_bins, spec.r_bins, 2));
    for t in 0..spec.theta_bins {
        for s in 0..spec.r_bins {
            let mut density = 0.0f64;
            let mut top: Option<usize> = None;
            for k in 0..spec.z_bins {
                let count = grid[(t, s, k)];
                density += count as f64;
                if count > 0.0 {
                    top = Some(k);
                }
            }
            out[(t, s, 0)] = density as f32;
            out[(t, s, 1)] = match top {
                Some(k) if spec.z_bins > 1 => (k as f64 / (spec.z_bins - 1) as f64) as f32,
                _ => 0.0,
            };
        }
    }
    Ok(PolarBev::new(out, spec.r_max)?)
}

/// Concatenates visual and LiDAR polar grids along the channel axis, visual
/// channels first. Bin counts and radial extent must match exactly.
pub fn fuse_concat(visual: &PolarBev, lidar: &PolarBev) -> Result<PolarBev, LidarError> {
    let same = visual.theta_bins() == lidar.theta_bins()
        && visual.r_bins() == lidar.r_bins()
        && visual.r_max() == lidar.r_max();
    if !same {
        return Err(LidarError::FusionMismatch(
            format!(
                "{}x{}/{}",
                visual.theta_bins(),
                visual.r_bins(),
                visual.r_max()
            ),
            format!("{}x{}/{}", lidar.theta_bins(), lidar.r_bins(), lidar.r_max()),
        ));
    }
    let (theta, r) = (visual.theta_bins(), visual.r_bins());
    let (cv, cl) = (visual.channels(), lidar.channels());
    let mut data = Array3::<f32>::zeros((theta, r, cv + cl));
    for t in 0..theta {
        for s in 0..r {
            for c in 0..cv {
                data[(t, s, c)] = visual.data()[(t, s, c)];
            }
            for c in 0..cl {
                data[(t, s, cv + c)] = lidar.data()[(t, s, c)];
            }
        }
    }
    Ok(PolarBev::new(data, visual.r_max())?)
}
