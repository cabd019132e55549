//! Deformable-attention BEV construction.
//!
//! Instead of sampling one pixel per projected grid center, each BEV cell
//! carries a learnable query vector. The query predicts, per attention head
//! and sampling key, a pixel offset and a softmax attention weight; the
//! attended feature is
//!
//! ```text
//! psi(q, p, F) = sum_i W_i * sum_j A_ij * W'_i * F(p + dp_ij)
//! ```
//!
//! with offsets radially clamped to `rho_max` pixels and samples clamped to
//! the feature-map border. The BEV variant sums psi over the cell's sample
//! heights and averages over views with at least one in-frustum height.
//!
//! With one head, one key, zero offsets and identity transforms the
//! construction degenerates to plain bilinear sampling, which ties it back
//! to the vanilla builder.

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

use crate::bev::{BevFeature, VolumeSpec};
use crate::geometry::{project_point, CameraRig, FeatureMap, GeometryError};
use crate::interp::bilinear_clamped;

#[derive(Debug, Error)]
pub enum DeformError {
    #[error("deformable dimensions must all be nonzero")]
    ZeroDimension,
    #[error("weights must be finite, rho_max non-negative")]
    NonFiniteWeights,
    #[error("query has {got} channels, weights expect {expected}")]
    QueryLengthMismatch { expected: usize, got: usize },
    #[error("feature map has {got} channels, weights expect {expected}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("rig has {expected} views but {got} feature maps were supplied")]
    ViewCountMismatch { expected: usize, got: usize },
    #[error("base point ({u}, {v}) lies outside the feature map")]
    BasePointOutside { u: f64, v: f64 },
    #[error("query grid is {got:?} but the volume spec needs {expected:?}")]
    QueryGridShape {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: bad magic, not a weight file")]
    BadMagic { path: String },
    #[error("{path}: unsupported weight file version {found}")]
    UnsupportedVersion { path: String, found: u16 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Channel and head counts of a deformable attention block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeformDims {
    pub n_head: usize,
    pub n_key: usize,
    pub c_query: usize,
    pub c_in: usize,
    pub c_value: usize,
    pub c_out: usize,
}

impl DeformDims {
    fn validate(&self) -> Result<(), DeformError> {
        let all = [
            self.n_head,
            self.n_key,
            self.c_query,
            self.c_in,
            self.c_value,
            self.c_out,
        ];
        if all.iter().any(|&d| d == 0) {
            return Err(DeformError::ZeroDimension);
        }
        Ok(())
    }
}

/// Learnable parameters of the deformable sampler. Per head `i`:
/// `w_out[i]` (c_out x c_value), `w_value[i]` (c_value x c_in), attention
/// logits `attn_w[i] * q + attn_b[i]` (n_key), and offsets
/// `offset_w[i] * q + offset_b[i]` laid out as n_key (du, dv) pairs,
/// radially clamped to `rho_max` pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformableWeights {
    dims: DeformDims,
    rho_max: f32,
    w_out: Vec<Array2<f32>>,
    w_value: Vec<Array2<f32>>,
    attn_w: Vec<Array2<f32>>,
    attn_b: Vec<Array1<f32>>,
    offset_w: Vec<Array2<f32>>,
    offset_b: Vec<Array1<f32>>,
}

pub const WEIGHTS_MAGIC: &[u8; 4] = b"BEVW";
pub const WEIGHTS_VERSION: u16 = 1;

impl DeformableWeights {
    pub fn dims(&self) -> DeformDims {
        self.dims
    }

    pub fn rho_max(&self) -> f32 {
        self.rho_max
    }

    /// One head, one key, zero offsets, unit attention and identity value /
    /// output transforms: attending equals bilinear sampling.
    pub fn identity_passthrough(channels: usize, c_query: usize) -> Result<Self, DeformError> {
        let dims = DeformDims {
            n_head: 1,
            n_key: 1,
            c_query,
            c_in: channels,
            c_value: channels,
            c_out: channels,
        };
        dims.validate()?;
        Ok(Self {
            dims,
            rho_max: 8.0,
            w_out: vec![Array2::eye(channels)],
            w_value: vec![Array2::eye(channels)],
            attn_w: vec![Array2::zeros((1, c_query))],
            attn_b: vec![Array1::zeros(1)],
            offset_w: vec![Array2::zeros((2, c_query))],
            offset_b: vec![Array1::zeros(2)],
        })
    }

    /// Seed-deterministic random weights, uniform in [-0.5, 0.5).
    pub fn random(seed: u64, dims: DeformDims, rho_max: f32) -> Result<Self, DeformError> {
        dims.validate()?;
        if !(rho_max.is_finite() && rho_max >= 0.0) {
            return Err(DeformError::NonFiniteWeights);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mat = |r: usize, c: usize| {
            Array2::from_shape_fn((r, c), |_| rng.random_range(-0.5..0.5f32))
        };
        let w_out: Vec<_> = (0..dims.n_head).map(|_| mat(dims.c_out, dims.c_value)).collect();
        let w_value: Vec<_> = (0..dims.n_head).map(|_| mat(dims.c_value, dims.c_in)).collect();
        let attn_w: Vec<_> = (0..dims.n_head).map(|_| mat(dims.n_key, dims.c_query)).collect();
        let offset_w: Vec<_> = (0..dims.n_head)
            .map(|_| mat(2 * dims.n_key, dims.c_query))
            .collect();
        let mut rng2 = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        let attn_b: Vec<_> = (0..dims.n_head)
            .map(|_| Array1::from_shape_fn(dims.n_key, |_| rng2.random_range(-0.5..0.5f32)))
            .collect();
        let offset_b: Vec<_> = (0..dims.n_head)
            .map(|_| Array1::from_shape_fn(2 * dims.n_key, |_| rng2.random_range(-0.5..0.5f32)))
            .collect();
        Ok(Self {
            dims,
            rho_max,
            w_out,
            w_value,
            attn_w,
            attn_b,
            offset_w,
            offset_b,
        })
    }

    fn check_query(&self, q: &[f32]) -> Result<(), DeformError> {
        if q.len() != self.dims.c_query {
            return Err(DeformError::QueryLengthMismatch {
                expected: self.dims.c_query,
                got: q.len(),
            });
        }
        Ok(())
    }

    /// Per-head softmax attention over keys; rows sum to 1 by construction.
    pub fn attention(&self, q: &[f32]) -> Result<Vec<Vec<f64>>, DeformError> {
        self.check_query(q)?;
        let mut out = Vec::with_capacity(self.dims.n_head);
        for i in 0..self.dims.n_head {
            let mut logits = vec![0.0f64; self.dims.n_key];
            for (j, logit) in logits.iter_mut().enumerate() {
                let mut acc = self.attn_b[i][j] as f64;
                for (cq, &qv) in q.iter().enumerate() {
                    acc += self.attn_w[i][(j, cq)] as f64 * qv as f64;
                }
                *logit = acc;
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let total: f64 = weights.iter().sum();
            for w in weights.iter_mut() {
                *w /= total;
            }
            out.push(weights);
        }
        Ok(out)
    }

    /// Per-(head, key) pixel offsets, radially clamped to `rho_max`.
    pub fn offsets(&self, q: &[f32]) -> Result<Vec<Vec<(f64, f64)>>, DeformError> {
        self.check_query(q)?;
        let rho = self.rho_max as f64;
        let mut out = Vec::with_capacity(self.dims.n_head);
        for i in 0..self.dims.n_head {
            let mut head = Vec::with_capacity(self.dims.n_key);
            for j in 0..self.dims.n_key {
                let mut du = self.offset_b[i][2 * j] as f64;
                let mut dv = self.offset_b[i][2 * j + 1] as f64;
                for (cq, &qv) in q.iter().enumerate() {
                    du += self.offset_w[i][(2 * j, cq)] as f64 * qv as f64;
                    dv += self.offset_w[i][(2 * j + 1, cq)] as f64 * qv as f64;
                }
                let norm = (du * du + dv * dv).sqrt();
                if norm > rho && norm > 0.0 {
                    let shrink = rho / norm;
                    du *= shrink;
                    dv *= shrink;
                }
                head.push((du, dv));
            }
            out.push(head);
        }
        Ok(out)
    }

    /// Writes the weight file: magic `BEVW`, version u16, the six dimension
    /// counts as u32, rho_max f32, then f32 blocks in declared field order
    /// (w_out, w_value, attn_w, attn_b, offset_w, offset_b), heads in order,
    /// matrices row-major. Little-endian throughout.
    pub fn save(&self, path: &Path) -> Result<(), DeformError> {
        let io_err = |source| DeformError::Io {
            path: path.display().to_string(),
            source,
        };
        let file = std::fs::File::create(path).map_err(io_err)?;
        let mut w = BufWriter::new(file);
        w.write_all(WEIGHTS_MAGIC).map_err(io_err)?;
        w.write_u16::<LittleEndian>(WEIGHTS_VERSION).map_err(io_err)?;
        for d in [
            self.dims.n_head,
            self.dims.n_key,
            self.dims.c_query,
            self.dims.c_in,
            self.dims.c_value,
            self.dims.c_out,
        ] {
            w.write_u32::<LittleEndian>(d as u32).map_err(io_err)?;
        }
        w.write_f32::<LittleEndian>(self.rho_max).map_err(io_err)?;
        let blocks: [&dyn Fn(usize) -> Vec<f32>; 6] = [
            &|i| self.w_out[i].iter().cloned().collect(),
            &|i| self.w_value[i].iter().cloned().collect(),
            &|i| self.attn_w[i].iter().cloned().collect(),
            &|i| self.attn_b[i].iter().cloned().collect(),
            &|i| self.offset_w[i].iter().cloned().collect(),
            &|i| self.offset_b[i].iter().cloned().collect(),
        ];
        for block in blocks {
            for i in 0..self.dims.n_head {
                for value in block(i) {
                    w.write_f32::<LittleEndian>(value).map_err(io_err)?;
                }
            }
        }
        w.flush().map_err(io_err)
    }

    /// Reads a weight file written by [`DeformableWeights::save`].
    pub fn load(path: &Path) -> Result<Self, DeformError> {
        let io_err = |source| DeformError::Io {
            path: path.display().to_string(),
            source,
        };
        let file = std::fs::File::open(path).map_err(io_err)?;
        let mut r = BufReader::new(file);
        let mut magic = [0u8; 4];
        std::io::Read::read_exact(&mut r, &mut magic).map_err(io_err)?;
        if &magic != WEIGHTS_MAGIC {
            return Err(DeformError::BadMagic {
                path: path.display().to_string(),
            });
        }
        let version = r.read_u16::<LittleEndian>().map_err(io_err)?;
        if version != WEIGHTS_VERSION {
            return Err(DeformError::UnsupportedVersion {
                path: path.display().to_string(),
                found: version,
            });
        }
        let mut dim = || -> Result<usize, DeformError> {
            Ok(r.read_u32::<LittleEndian>().map_err(io_err)? as usize)
        };
        let dims = DeformDims {
            n_head: dim()?,
            n_key: dim()?,
            c_query: dim()?,
            c_in: dim()?,
            c_value: dim()?,
            c_out: dim()?,
        };
        dims.validate()?;
        let rho_max = r.read_f32::<LittleEndian>().map_err(io_err)?;
        if !(rho_max.is_finite() && rho_max >= 0.0) {
            return Err(DeformError::NonFiniteWeights);
        }
        let mut read_mat = |rows: usize, cols: usize| -> Result<Array2<f32>, DeformError> {
            let mut values = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                let v = r.read_f32::<LittleEndian>().map_err(io_err)?;
                if !v.is_finite() {
                    return Err(DeformError::NonFiniteWeights);
                }
                values.push(v);
            }
            Ok(Array2::from_shape_vec((rows, cols), values).expect("shape matches"))
        };
        let mut per_head2 = |rows: usize, cols: usize| -> Result<Vec<Array2<f32>>, DeformError> {
            (0..dims.n_head).map(|_| read_mat(rows, cols)).collect()
        };
        let w_out = per_head2(dims.c_out, dims.c_value)?;
        let w_value = per_head2(dims.c_value, dims.c_in)?;
        let attn_w = per_head2(dims.n_key, dims.c_query)?;
        let attn_b_mat = per_head2(dims.n_key, 1)?;
        let offset_w = per_head2(2 * dims.n_key, dims.c_query)?;
        let offset_b_mat = per_head2(2 * dims.n_key, 1)?;
        let attn_b = attn_b_mat
            .into_iter()
            .map(|m| Array1::from_iter(m.into_iter()))
            .collect();
        let offset_b = offset_b_mat
            .into_iter()
            .map(|m| Array1::from_iter(m.into_iter()))
            .collect();
        Ok(Self {
            dims,
            rho_max,
            w_out,
            w_value,
            attn_w,
            attn_b,
            offset_w,
            offset_b,
        })
    }
}

/// Attends the feature map around base pixel `p = (u, v)` at image
/// resolution: offsets are predicted from `q`, added in image pixels, the
/// sum is scaled into the feature grid and clamped to its border. The base
/// point itself must lie within one pixel of the grid.
pub fn deformable_attend(
    q: &[f32],
    p: (f64, f64),
    map: &FeatureMap,
    weights: &DeformableWeights,
) -> Result<Vec<f64>, DeformError> {
    let dims = weights.dims;
    if map.channels() != dims.c_in {
        return Err(DeformError::ChannelMismatch {
            expected: dims.c_in,
            got: map.channels(),
        });
    }
    let (u, v) = p;
    let scale = map.scale();
    let (su, sv) = (u * scale, v * scale);
    let in_fringe = |x: f64, n: usize| x.is_finite() && x >= -1.0 && x < n as f64 + 1.0;
    if !in_fringe(su, map.width() - 1) || !in_fringe(sv, map.height() - 1) {
        return Err(DeformError::BasePointOutside { u, v });
    }
    let attention = weights.attention(q)?;
    let offsets = weights.offsets(q)?;
    attend_with(map, (u, v), weights, &attention, &offsets)
}

/// Core of psi once attention and offsets are known; shared with the BEV
/// builder, which reuses them across views and heights of the same cell.
fn attend_with(
    map: &FeatureMap,
    (u, v): (f64, f64),
    weights: &DeformableWeights,
    attention: &[Vec<f64>],
    offsets: &[Vec<(f64, f64)>],
) -> Result<Vec<f64>, DeformError> {
    let dims = weights.dims;
    let scale = map.scale();
    let view = map.data().view();
    let mut sample = vec![0.0f64; dims.c_in];
    let mut out = vec![0.0f64; dims.c_out];
    let mut value = vec![0.0f64; dims.c_value];
    let mut head_acc = vec![0.0f64; dims.c_value];
    for i in 0..dims.n_head {
        head_acc.iter_mut().for_each(|x| *x = 0.0);
        for j in 0..dims.n_key {
            let (du, dv) = offsets[i][j];
            bilinear_clamped(&view, (v + dv) * scale, (u + du) * scale, &mut sample);
            for (cv, slot) in value.iter_mut().enumerate() {
                let mut acc = 0.0f64;
                for (ci, &s) in sample.iter().enumerate() {
                    acc += weights.w_value[i][(cv, ci)] as f64 * s;
                }
                *slot = acc;
            }
            let a = attention[i][j];
            for (slot, &val) in head_acc.iter_mut().zip(value.iter()) {
                *slot += a * val;
            }
        }
        for (co, slot) in out.iter_mut().enumerate() {
            let mut acc = 0.0f64;
            for (cv, &hv) in head_acc.iter().enumerate() {
                acc += weights.w_out[i][(co, cv)] as f64 * hv;
            }
            *slot += acc;
        }
    }
    Ok(out)
}

/// One learnable query vector per BEV cell.
#[derive(Debug, Clone, PartialEq)]
pub struct BevQueryGrid {
    pub spec: VolumeSpec,
    /// (x_cells, y_cells, c_query).
    pub queries: Array3<f32>,
}

impl BevQueryGrid {
    /// Seed-deterministic random queries, uniform in [-0.5, 0.5).
    pub fn random(spec: VolumeSpec, c_query: usize, seed: u64) -> Result<Self, DeformError> {
        if c_query == 0 {
            return Err(DeformError::ZeroDimension);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let queries = Array3::from_shape_fn(
            (spec.x_cells(), spec.y_cells(), c_query),
            |_| rng.random_range(-0.5..0.5f32),
        );
        Ok(Self { spec, queries })
    }

    /// The same query vector for every cell.
    pub fn constant(spec: VolumeSpec, query: &[f32]) -> Result<Self, DeformError> {
        if query.is_empty() {
            return Err(DeformError::ZeroDimension);
        }
        let queries = Array3::from_shape_fn(
            (spec.x_cells(), spec.y_cells(), query.len()),
            |(_, _, c)| query[c],
        );
        Ok(Self { spec, queries })
    }
}

/// Builds the BEV by deformable attention: per cell, psi is evaluated at the
/// projection of every in-frustum (view, height) pair, summed over heights
/// and averaged over views that see at least one height. Attention and
/// offsets depend only on the cell query and are computed once per cell.
pub fn build_deformable_bev(
    rig: &CameraRig,
    feats: &[FeatureMap],
    grid: &BevQueryGrid,
    weights: &DeformableWeights,
) -> Result<BevFeature, DeformError> {
    if feats.len() != rig.view_count() {
        return Err(DeformError::ViewCountMismatch {
            expected: rig.view_count(),
            got: feats.len(),
        });
    }
    let dims = weights.dims;
    for map in feats {
        if map.channels() != dims.c_in {
            return Err(DeformError::ChannelMismatch {
                expected: dims.c_in,
                got: map.channels(),
            });
        }
    }
    let spec = &grid.spec;
    let (xc, yc, cq) = grid.queries.dim();
    if (xc, yc) != (spec.x_cells(), spec.y_cells()) {
        return Err(DeformError::QueryGridShape {
            expected: (spec.x_cells(), spec.y_cells()),
            got: (xc, yc),
        });
    }
    if cq != dims.c_query {
        return Err(DeformError::QueryLengthMismatch {
            expected: dims.c_query,
            got: cq,
        });
    }
    let mut data = Array3::<f32>::zeros((xc, yc, dims.c_out));
    let mut coverage = ndarray::Array2::<u32>::zeros((xc, yc));
    let mut query = vec![0.0f32; cq];
    for i in 0..xc {
        let x = spec.x_center(i);
        for j in 0..yc {
            let y = spec.y_center(j);
            for (slot, &qv) in query.iter_mut().zip(grid.queries.slice(ndarray::s![i, j, ..])) {
                *slot = qv;
            }
            let attention = weights.attention(&query)?;
            let offsets = weights.offsets(&query)?;
            let mut acc = vec![0.0f64; dims.c_out];
            let mut valid_views = 0u32;
            for (k, map) in feats.iter().enumerate() {
                let mut seen = false;
                for &z in &spec.heights {
                    let point = nalgebra::Vector3::new(x, y, z);
                    if let Some((u, v)) = project_point(rig, &point, k)? {
                        let psi = attend_with(map, (u, v), weights, &attention, &offsets)?;
                        for (slot, value) in acc.iter_mut().zip(psi) {
                            *slot += value;
                        }
                        seen = true;
                    }
                }
                if seen {
                    valid_views += 1;
                }
            }
            coverage[(i, j)] = valid_views;
            if valid_views > 0 {
                for (c, slot) in acc.iter().enumerate() {
                    data[(i, j, c)] = (slot / valid_views as f64) as f32;
                }
            }
        }
    }
    Ok(BevFeature {
        data,
        spec: spec.clone(),
        coverage,
    })
}
