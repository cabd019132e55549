//! Rotation-invariant descriptor and yaw recovery.
//!
//! A centered square BEV is resampled onto a polar lattice; a yaw of the rig
//! then appears as a cyclic shift along the angle axis. The magnitude of the
//! 2-D DFT is invariant to cyclic shifts, so the centered 16x16 block of the
//! zero-frequency-shifted magnitude spectrum serves as the place descriptor.
//! Phase correlation along the angle axis recovers the shift itself, i.e.
//! the relative yaw between two visits.
//!
//! Shift convention used throughout: `cycle_rows(b, k)` reads ahead,
//! `out[t] = b[(t + k) mod theta]`, and `estimate_yaw(query, m)` returns the
//! `k` for which `cycle_rows(query, k)` best aligns with `m`; for
//! `m = cycle_rows(query, 17)` the argmax lands on bin 17.

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array3;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

use crate::bev::BevFeature;
use crate::interp::bilinear_axes01;

/// Place descriptors are the flattened 16x16 spectrum crop.
pub const PLACE_FEATURE_DIM: usize = 256;
/// Side length of the centered crop of the shifted magnitude spectrum.
pub const SPECTRUM_CROP: usize = 16;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("polar transform needs a square BEV centered on the rig")]
    NonCenteredSquareBev,
    #[error("polar bins must be nonzero, got theta={theta}, r={r}")]
    EmptyPolarGrid { theta: usize, r: usize },
    #[error("polar grid values and r_max must be finite and positive")]
    NonFinitePolarGrid,
    #[error("place feature needs even theta >= 16 and even r >= 16, got {theta}x{r}")]
    GridTooSmall { theta: usize, r: usize },
    #[error("place feature needs a single-channel polar BEV, got {channels} channels")]
    MultiChannelPlaceFeature { channels: usize },
    #[error("polar grids disagree: {a:?} vs {b:?}")]
    PolarShapeMismatch {
        a: (usize, usize, usize),
        b: (usize, usize, usize),
    },
    #[error("softmax scale w must be finite and positive, got {w}")]
    BadSoftmaxScale { w: f64 },
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: place feature file must be exactly {expected} bytes, got {got}")]
    BadFeatureFile {
        path: String,
        expected: u64,
        got: u64,
    },
}

/// BEV features resampled on a polar lattice: (theta, r, channels) with the
/// outer sampling radius in meters. Angle bin `t` samples `t * 2pi/theta`,
/// radius bin `s` samples `(s + 0.5) * r_max / r_bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarBev {
    data: Array3<f32>,
    r_max: f64,
}

impl PolarBev {
    pub fn new(data: Array3<f32>, r_max: f64) -> Result<Self, SpectralError> {
        let (theta, r, c) = data.dim();
        if theta == 0 || r == 0 || c == 0 {
            return Err(SpectralError::EmptyPolarGrid { theta, r });
        }
        if !(r_max.is_finite() && r_max > 0.0) || data.iter().any(|v| !v.is_finite()) {
            return Err(SpectralError::NonFinitePolarGrid);
        }
        Ok(Self { data, r_max })
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn theta_bins(&self) -> usize {
        self.data.dim().0
    }

    pub fn r_bins(&self) -> usize {
        self.data.dim().1
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }

    /// Degrees spanned by one angle bin.
    pub fn degrees_per_bin(&self) -> f64 {
        360.0 / self.theta_bins() as f64
    }
}

/// Cyclic shift along the angle axis, `out[t] = b[(t + k) mod theta]`.
pub fn cycle_rows(b: &PolarBev, k: isize) -> PolarBev {
    let theta = b.theta_bins() as isize;
    let shifted = Array3::from_shape_fn(b.data.dim(), |(t, s, c)| {
        let src = (t as isize + k).rem_euclid(theta) as usize;
        b.data[(src, s, c)]
    });
    PolarBev {
        data: shifted,
        r_max: b.r_max,
    }
}

/// Resamples a centered square BEV onto the polar lattice with bilinear
/// interpolation; the outer radius is the half-extent of the grid, so every
/// sample stays inside the square for any yaw.
pub fn polar_transform(
    bev: &BevFeature,
    theta_bins: usize,
    r_bins: usize,
) -> Result<PolarBev, SpectralError> {
    if !bev.spec.is_centered_square() {
        return Err(SpectralError::NonCenteredSquareBev);
    }
    if theta_bins == 0 || r_bins == 0 {
        return Err(SpectralError::EmptyPolarGrid {
            theta: theta_bins,
            r: r_bins,
        });
    }
    let r_max = bev.spec.x_max;
    let channels = bev.data.dim().2;
    let n = bev.spec.x_cells();
    let max_index = (n - 1) as f64;
    let mut data = Array3::<f32>::zeros((theta_bins, r_bins, channels));
    let mut sample = vec![0.0f64; channels];
    let view = bev.data.view();
    for t in 0..theta_bins {
        let angle = 2.0 * std::f64::consts::PI * t as f64 / theta_bins as f64;
        let (sin_a, cos_a) = angle.sin_cos();
        for s in 0..r_bins {
            let radius = (s as f64 + 0.5) * r_max / r_bins as f64;
            let gx = bev.spec.x_index(radius * cos_a).clamp(0.0, max_index);
            let gy = bev.spec.y_index(radius * sin_a).clamp(0.0, max_index);
            bilinear_axes01(&view, gx, gy, &mut sample);
            for (c, &v) in sample.iter().enumerate() {
                data[(t, s, c)] = v as f32;
            }
        }
    }
    Ok(PolarBev { data, r_max })
}

/// The 256-dimensional rotation-invariant place descriptor plus the hash of
/// the configuration that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaceFeature {
    pub values: Vec<f64>,
    pub provenance: u64,
}

impl PlaceFeature {
    pub fn new(values: Vec<f64>, provenance: u64) -> Self {
        assert_eq!(values.len(), PLACE_FEATURE_DIM);
        Self { values, provenance }
    }

    /// Writes the wire format: provenance `u64` then 256 `f32`, little-endian.
    pub fn save(&self, path: &Path) -> Result<(), SpectralError> {
        let io_err = |source| SpectralError::Io {
            path: path.display().to_string(),
            source,
        };
        let file = std::fs::File::create(path).map_err(io_err)?;
        let mut w = BufWriter::new(file);
        w.write_u64::<LittleEndian>(self.provenance).map_err(io_err)?;
        for v in &self.values {
            w.write_f32::<LittleEndian>(*v as f32).map_err(io_err)?;
        }
        w.flush().map_err(io_err)
    }

    pub fn load(path: &Path) -> Result<Self, SpectralError> {
        let io_err = |source| SpectralError::Io {
            path: path.display().to_string(),
            source,
        };
        let expected = 8 + PLACE_FEATURE_DIM as u64 * 4;
        let got = std::fs::metadata(path).map_err(io_err)?.len();
        if got != expected {
            return Err(SpectralError::BadFeatureFile {
                path: path.display().to_string(),
                expected,
                got,
            });
        }
        let file = std::fs::File::open(path).map_err(io_err)?;
        let mut r = BufReader::new(file);
        let provenance = r.read_u64::<LittleEndian>().map_err(io_err)?;
        let mut values = Vec::with_capacity(PLACE_FEATURE_DIM);
        for _ in 0..PLACE_FEATURE_DIM {
            values.push(r.read_f32::<LittleEndian>().map_err(io_err)? as f64);
        }
        Ok(Self { values, provenance })
    }
}

fn fft_lines<F>(len: usize, count: usize, fetch: F, fft: &dyn rustfft::Fft<f64>) -> Vec<Complex64>
where
    F: Fn(usize, usize) -> Complex64,
{
    let mut out = vec![Complex64::new(0.0, 0.0); len * count];
    for line in 0..count {
        let slot = &mut out[line * len..(line + 1) * len];
        for (i, value) in slot.iter_mut().enumerate() {
            *value = fetch(line, i);
        }
        fft.process(slot);
    }
    out
}

/// Full 2-D DFT magnitude of a single-channel polar grid, f64 precision.
fn dft2_magnitude(polar: &PolarBev) -> Vec<f64> {
    let theta = polar.theta_bins();
    let r = polar.r_bins();
    let mut planner = FftPlanner::<f64>::new();
    let fft_r = planner.plan_fft_forward(r);
    let fft_t = planner.plan_fft_forward(theta);
    // Rows first (along r), then columns (along theta).
    let rows = fft_lines(
        r,
        theta,
        |t, s| Complex64::new(polar.data[(t, s, 0)] as f64, 0.0),
        fft_r.as_ref(),
    );
    let mut spectrum = vec![Complex64::new(0.0, 0.0); theta * r];
    let mut col = vec![Complex64::new(0.0, 0.0); theta];
    for s in 0..r {
        for t in 0..theta {
            col[t] = rows[t * r + s];
        }
        fft_t.process(&mut col);
        for t in 0..theta {
            spectrum[t * r + s] = col[t];
        }
    }
    spectrum.iter().map(|c| c.norm()).collect()
}

/// Computes the place descriptor: 2-D DFT magnitude of the single-channel
/// polar grid, zero frequency shifted to the center, centered 16x16 block
/// flattened row-major. Cyclic shifts along theta leave it unchanged.
pub fn place_feature(polar: &PolarBev, provenance: u64) -> Result<PlaceFeature, SpectralError> {
    let (theta, r, channels) = polar.data.dim();
    if channels != 1 {
        return Err(SpectralError::MultiChannelPlaceFeature { channels });
    }
    if theta < SPECTRUM_CROP || r < SPECTRUM_CROP || theta % 2 != 0 || r % 2 != 0 {
        return Err(SpectralError::GridTooSmall { theta, r });
    }
    let magnitude = dft2_magnitude(polar);
    // fftshift puts frequency 0 at index n/2; crop 16x16 around it.
    let mut values = Vec::with_capacity(PLACE_FEATURE_DIM);
    let half = SPECTRUM_CROP / 2;
    for row in 0..SPECTRUM_CROP {
        // shifted row index = theta/2 - 8 + row, which reads unshifted index
        // (shifted + theta/2) mod theta.
        let tj = (theta / 2 - half + row + theta / 2) % theta;
        for col in 0..SPECTRUM_CROP {
            let sk = (r / 2 - half + col + r / 2) % r;
            values.push(magnitude[tj * r + sk]);
        }
    }
    Ok(PlaceFeature { values, provenance })
}

/// Euclidean distance between place descriptors.
pub fn feature_distance(a: &PlaceFeature, b: &PlaceFeature) -> f64 {
    debug_assert_eq!(a.values.len(), b.values.len());
    a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Relative-yaw estimate: a probability over the theta bins plus its argmax.
#[derive(Debug, Clone)]
pub struct YawEstimate {
    /// Softmax distribution over cyclic shifts, sums to 1.
    pub distribution: Vec<f64>,
    /// Most probable shift in bins (ties resolve to the smallest bin).
    pub argmax_bin: usize,
    /// The same shift in degrees, `argmax_bin * 360 / theta`.
    pub argmax_angle_deg: f64,
}

/// Phase correlation with default softmax parameters (w = 1, b = 0).
pub fn estimate_yaw(query: &PolarBev, reference: &PolarBev) -> Result<YawEstimate, SpectralError> {
    estimate_yaw_with(query, reference, 1.0, 0.0)
}

/// Phase correlation along the angle axis. Per channel and radius bin the
/// 1-D cross-power spectrum `F(query) * conj(F(reference))` is normalized to
/// unit modulus per frequency (zero-magnitude bins become 1+0i), the unit
/// spectra are summed over radius bins and channels, and one inverse
/// transform yields correlation scores, mapped through `softmax(w*s + b)`.
pub fn estimate_yaw_with(
    query: &PolarBev,
    reference: &PolarBev,
    w: f64,
    b: f64,
) -> Result<YawEstimate, SpectralError> {
    if query.data.dim() != reference.data.dim() {
        return Err(SpectralError::PolarShapeMismatch {
            a: query.data.dim(),
            b: reference.data.dim(),
        });
    }
    if !(w.is_finite() && w > 0.0) {
        return Err(SpectralError::BadSoftmaxScale { w });
    }
    let (theta, r, channels) = query.data.dim();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(theta);
    let ifft = planner.plan_fft_inverse(theta);
    let mut acc = vec![Complex64::new(0.0, 0.0); theta];
    let mut line_q = vec![Complex64::new(0.0, 0.0); theta];
    let mut line_m = vec![Complex64::new(0.0, 0.0); theta];
    for c in 0..channels {
        for s in 0..r {
            for t in 0..theta {
                line_q[t] = Complex64::new(query.data[(t, s, c)] as f64, 0.0);
                line_m[t] = Complex64::new(reference.data[(t, s, c)] as f64, 0.0);
            }
            fft.process(&mut line_q);
            fft.process(&mut line_m);
            for j in 0..theta {
                let cross = line_q[j] * line_m[j].conj();
                let magnitude = cross.norm();
                acc[j] += if magnitude > 0.0 {
                    cross / magnitude
                } else {
                    Complex64::new(1.0, 0.0)
                };
            }
        }
    }
    ifft.process(&mut acc);
    let scores: Vec<f64> = acc.iter().map(|v| v.re / theta as f64).collect();

    // Numerically stable softmax over w * score + b (b cancels but is kept
    // for fidelity to the estimator definition).
    let max_logit = scores
        .iter()
        .map(|s| w * s + b)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut distribution: Vec<f64> = scores.iter().map(|s| (w * s + b - max_logit).exp()).collect();
    let total: f64 = distribution.iter().sum();
    for p in distribution.iter_mut() {
        *p /= total;
    }
    let mut argmax_bin = 0usize;
    for (i, &p) in distribution.iter().enumerate() {
        if p > distribution[argmax_bin] {
            argmax_bin = i;
        }
    }
    Ok(YawEstimate {
        argmax_angle_deg: argmax_bin as f64 * 360.0 / theta as f64,
        argmax_bin,
        distribution,
    })
}
