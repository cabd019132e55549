//! Shared bilinear interpolation over the first two axes of a channel grid.

use ndarray::ArrayView3;

/// Bilinear sample of `data` at fractional index (`a0`, `a1`) over axes 0
/// and 1, one output per channel (axis 2). Callers guarantee
/// `0 <= a0 <= dim0 - 1` and `0 <= a1 <= dim1 - 1`.
pub(crate) fn bilinear_axes01(data: &ArrayView3<'_, f32>, a0: f64, a1: f64, out: &mut [f64]) {
    let (n0, n1, channels) = data.dim();
    debug_assert_eq!(out.len(), channels);
    let i0 = (a0.floor() as usize).min(n0 - 1);
    let j0 = (a1.floor() as usize).min(n1 - 1);
    let i1 = (i0 + 1).min(n0 - 1);
    let j1 = (j0 + 1).min(n1 - 1);
    let fi = a0 - i0 as f64;
    let fj = a1 - j0 as f64;
    let w00 = (1.0 - fi) * (1.0 - fj);
    let w01 = (1.0 - fi) * fj;
    let w10 = fi * (1.0 - fj);
    let w11 = fi * fj;
    for (c, slot) in out.iter_mut().enumerate() {
        *slot = w00 * data[(i0, j0, c)] as f64
            + w01 * data[(i0, j1, c)] as f64
            + w10 * data[(i1, j0, c)] as f64
            + w11 * data[(i1, j1, c)] as f64;
    }
}

/// Clamps (`a0`, `a1`) into the valid bilinear domain of `data` and samples.
pub(crate) fn bilinear_clamped(data: &ArrayView3<'_, f32>, a0: f64, a1: f64, out: &mut [f64]) {
    let (n0, n1, _) = data.dim();
    let a0 = a0.clamp(0.0, (n0 - 1) as f64);
    let a1 = a1.clamp(0.0, (n1 - 1) as f64);
    bilinear_axes01(data, a0, a1, out);
}
