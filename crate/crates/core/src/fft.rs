//! Multidimensional FFT helpers built on `rustfft`: axis-by-axis transforms,
//! physically normalized Fourier modes on the half-offset velocity grid, and
//! zero-padded linear convolution.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

pub type C64 = Complex<f64>;

/// Unnormalized forward/inverse FFT along every axis of a row-major
/// multidimensional array (first dimension slowest).
pub struct FftNd {
    dims: Vec<usize>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
}

impl FftNd {
    pub fn new(dims: &[usize]) -> Self {
        let mut planner = FftPlanner::new();
        let forward = dims
            .iter()
            .map(|&n| planner.plan_fft_forward(n))
            .collect();
        let inverse = dims
            .iter()
            .map(|&n| planner.plan_fft_inverse(n))
            .collect();
        FftNd {
            dims: dims.to_vec(),
            forward,
            inverse,
        }
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Forward DFT along every axis: `X_k = Σ_j x_j e^{-2πi jk/n}` per axis.
    pub fn forward(&self, data: &mut [C64]) {
        self.transform(data, true);
    }

    /// Inverse DFT along every axis, unnormalized: applying
    /// `forward` then `inverse` multiplies the data by `len()`.
    pub fn inverse(&self, data: &mut [C64]) {
        self.transform(data, false);
    }

    fn transform(&self, data: &mut [C64], fwd: bool) {
        let total: usize = self.len();
        assert_eq!(data.len(), total, "FftNd data length mismatch");
        let mut line: Vec<C64> = Vec::new();
        for axis in 0..self.dims.len() {
            let n = self.dims[axis];
            let inner: usize = self.dims[axis + 1..].iter().product();
            let outer: usize = total / (n * inner);
            let plan = if fwd {
                &self.forward[axis]
            } else {
                &self.inverse[axis]
            };
            line.resize(n, C64::new(0.0, 0.0));
            for o in 0..outer {
                let base_o = o * n * inner;
                for i in 0..inner {
                    let start = base_o + i;
                    for j in 0..n {
                        line[j] = data[start + j * inner];
                    }
                    plan.process(&mut line);
                    for j in 0..n {
                        data[start + j * inner] = line[j];
                    }
                }
            }
        }
    }
}

/// Physical Fourier modes on the node set `v_j = -L + (j+1/2)h` per axis,
/// with frequencies `ξ_l = πl/L`, `l ∈ {-n/2, …, n/2-1}` stored at the
/// wrapped index `l mod n`.
///
/// `forward_modes` returns coefficients `f̂_l = n^{-d} Σ_j f_j e^{-iξ_l·v_j}`,
/// so that `f_j = Σ_l f̂_l e^{iξ_l·v_j}` is recovered by `inverse_modes`.
pub struct ModeTransform {
    n: usize,
    d: usize,
    lmax: f64,
    fft: FftNd,
    /// Product twiddle e^{+iπ(1-1/n)Σl_axis} / n^d per flat wrapped index.
    twiddle_fwd: Vec<C64>,
    /// Product twiddle e^{-iπ(1-1/n)Σl_axis} per flat wrapped index.
    twiddle_inv: Vec<C64>,
    /// Signed mode integers per axis index.
    signed: Vec<i64>,
}

impl ModeTransform {
    pub fn new(d: usize, n: usize, lmax: f64) -> Self {
        let dims = vec![n; d];
        let fft = FftNd::new(&dims);
        let total = fft.len();
        let signed: Vec<i64> = (0..n)
            .map(|k| if k < n / 2 { k as i64 } else { k as i64 - n as i64 })
            .collect();
        // Per-axis twiddles at wrapped index k, for signed l = signed[k]:
        // forward c_l = e^{iπl(1-1/n)} / n, inverse conj (no 1/n).
        let phase = std::f64::consts::PI * (1.0 - 1.0 / n as f64);
        let axis_fwd: Vec<C64> = signed
            .iter()
            .map(|&l| C64::from_polar(1.0 / n as f64, phase * l as f64))
            .collect();
        let axis_inv: Vec<C64> = signed
            .iter()
            .map(|&l| C64::from_polar(1.0, -phase * l as f64))
            .collect();
        let mut twiddle_fwd = vec![C64::new(1.0, 0.0); total];
        let mut twiddle_inv = vec![C64::new(1.0, 0.0); total];
        for (flat, (tf, ti)) in twiddle_fwd.iter_mut().zip(twiddle_inv.iter_mut()).enumerate() {
            let mut rem = flat;
            for axis in (0..d).rev() {
                let k = rem % n;
                rem /= n;
                let _ = axis;
                *tf *= axis_fwd[k];
                *ti *= axis_inv[k];
            }
        }
        ModeTransform {
            n,
            d,
            lmax,
            fft,
            twiddle_fwd,
            twiddle_inv,
            signed,
        }
    }

    pub fn len(&self) -> usize {
        self.fft.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Signed mode integer for a wrapped axis index.
    pub fn signed_mode(&self, k: usize) -> i64 {
        self.signed[k]
    }

    /// Frequency step π/L.
    pub fn dxi(&self) -> f64 {
        std::f64::consts::PI / self.lmax
    }

    pub fn forward_modes(&self, field: &[f64]) -> Vec<C64> {
        assert_eq!(field.len(), self.len());
        let mut data: Vec<C64> = field.iter().map(|&x| C64::new(x, 0.0)).collect();
        self.fft.forward(&mut data);
        for (x, t) in data.iter_mut().zip(&self.twiddle_fwd) {
            *x *= *t;
        }
        data
    }

    /// Inverse of [`Self::forward_modes`]; returns the real part.
    pub fn inverse_modes(&self, modes: &[C64]) -> Vec<f64> {
        assert_eq!(modes.len(), self.len());
        let mut data: Vec<C64> = modes
            .iter()
            .zip(&self.twiddle_inv)
            .map(|(&m, &t)| m * t)
            .collect();
        self.fft.inverse(&mut data);
        data.iter().map(|c| c.re).collect()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }
}

/// Zero-padded (linear, non-circular) convolution of grid fields against a
/// set of translation-invariant kernels:
/// `(K ⋆ f)(v_i) = h^d Σ_j K(v_i - v_j) f(v_j)`.
///
/// Each axis is padded to `2n`, which makes the circular convolution on the
/// padded box agree exactly with the linear sum for all source offsets.
pub struct PaddedConv {
    n: usize,
    d: usize,
    dims_p: Vec<usize>,
    fft: FftNd,
    kernel_hats: Vec<Vec<C64>>,
}

impl PaddedConv {
    /// Build a convolution plan for `kernels`, each evaluated at lattice
    /// offsets `z = (j_1 h, …, j_d h)`, `j ∈ [-(n-1), n-1]`.
    pub fn new(d: usize, n: usize, h: f64, kernels: &[&dyn Fn(&[f64]) -> f64]) -> Self {
        let p = 2 * n;
        let dims_p = vec![p; d];
        let fft = FftNd::new(&dims_p);
        let total_p: usize = fft.len();
        // Fold the quadrature factor h^d and the inverse-FFT normalization
        // into the kernel transform.
        let scale = h.powi(d as i32) / total_p as f64;
        let mut kernel_hats = Vec::with_capacity(kernels.len());
        let mut z = vec![0.0; d];
        for kern in kernels {
            let mut arr = vec![C64::new(0.0, 0.0); total_p];
            for (flat, slot) in arr.iter_mut().enumerate() {
                let mut rem = flat;
                for axis in (0..d).rev() {
                    let o = rem % p;
                    rem /= p;
                    let so = if o <= n { o as isize } else { o as isize - p as isize };
                    z[axis] = so as f64 * h;
                }
                *slot = C64::new(kern(&z) * scale, 0.0);
            }
            fft.forward(&mut arr);
            kernel_hats.push(arr);
        }
        PaddedConv {
            n,
            d,
            dims_p,
            fft,
            kernel_hats,
        }
    }

    pub fn kernel_count(&self) -> usize {
        self.kernel_hats.len()
    }

    /// Convolve `field` (length n^d, row-major) against the selected kernels,
    /// sharing a single forward transform.
    pub fn apply_some(&self, field: &[f64], which: &[usize]) -> Vec<Vec<f64>> {
        let n = self.n;
        let d = self.d;
        assert_eq!(field.len(), n.pow(d as u32), "PaddedConv field length");
        let p = 2 * n;
        let total_p = self.fft.len();
        let mut src = vec![C64::new(0.0, 0.0); total_p];
        for (flat, &x) in field.iter().enumerate() {
            // Map source index (i_1..i_d) into the padded box.
            let mut rem = flat;
            let mut flat_p = 0;
            for _axis in 0..d {
                // Row-major decomposition from the slowest axis requires
                // working with explicit per-axis indices.
                let stride: usize = n.pow((d - 1 - _axis) as u32);
                let i = rem / stride;
                rem %= stride;
                flat_p = flat_p * p + i;
            }
            src[flat_p] = C64::new(x, 0.0);
        }
        self.fft.forward(&mut src);
        let mut out = Vec::with_capacity(which.len());
        let mut buf = vec![C64::new(0.0, 0.0); total_p];
        for &w in which {
            let hat = &self.kernel_hats[w];
            for i in 0..total_p {
                buf[i] = src[i] * hat[i];
            }
            self.fft.inverse(&mut buf);
            let mut res = vec![0.0; field.len()];
            for (flat, slot) in res.iter_mut().enumerate() {
                let mut rem = flat;
                let mut flat_p = 0;
                for _axis in 0..d {
                    let stride: usize = n.pow((d - 1 - _axis) as u32);
                    let i = rem / stride;
                    rem %= stride;
                    flat_p = flat_p * p + i;
                }
                *slot = buf[flat_p].re;
            }
            out.push(res);
        }
        out
    }

    pub fn apply_all(&self, field: &[f64]) -> Vec<Vec<f64>> {
        let which: Vec<usize> = (0..self.kernel_count()).collect();
        self.apply_some(field, &which)
    }

    pub fn apply_one(&self, field: &[f64], which: usize) -> Vec<f64> {
        self.apply_some(field, &[which]).pop().unwrap()
    }

    pub fn dims_padded(&self) -> &[usize] {
        &self.dims_p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fftnd_roundtrip_recovers_input() {
        let dims = [4usize, 6, 8];
        let total: usize = dims.iter().product();
        let orig: Vec<C64> = (0..total)
            .map(|i| C64::new((i as f64).sin(), (i as f64 * 0.7).cos()))
            .collect();
        let fft = FftNd::new(&dims);
        let mut data = orig.clone();
        fft.forward(&mut data);
        fft.inverse(&mut data);
        let scale = total as f64;
        for (a, b) in data.iter().zip(&orig) {
            assert!((a.re / scale - b.re).abs() < 1e-12);
            assert!((a.im / scale - b.im).abs() < 1e-12);
        }
    }

    #[test]
    fn fftnd_matches_direct_dft_on_small_2d() {
        let dims = [3usize, 4];
        let total = 12usize;
        let orig: Vec<C64> = (0..total)
            .map(|i| C64::new(0.3 * i as f64, (i as f64).cos()))
            .collect();
        let fft = FftNd::new(&dims);
        let mut data = orig.clone();
        fft.forward(&mut data);
        for k0 in 0..dims[0] {
            for k1 in 0..dims[1] {
                let mut acc = C64::new(0.0, 0.0);
                for j0 in 0..dims[0] {
                    for j1 in 0..dims[1] {
                        let ph = -2.0 * std::f64::consts::PI
                            * (k0 as f64 * j0 as f64 / dims[0] as f64
                                + k1 as f64 * j1 as f64 / dims[1] as f64);
                        acc += orig[j0 * dims[1] + j1] * C64::from_polar(1.0, ph);
                    }
                }
                let got = data[k0 * dims[1] + k1];
                assert!((got - acc).norm() < 1e-10, "k=({k0},{k1})");
            }
        }
    }

    #[test]
    fn mode_transform_roundtrip() {
        let d = 3;
        let n = 8;
        let lmax = 4.0;
        let mt = ModeTransform::new(d, n, lmax);
        let h = 2.0 * lmax / n as f64;
        let field: Vec<f64> = (0..n * n * n)
            .map(|flat| {
                let i1 = flat / (n * n);
                let i2 = (flat / n) % n;
                let i3 = flat % n;
                let v1 = -lmax + (i1 as f64 + 0.5) * h;
                let v2 = -lmax + (i2 as f64 + 0.5) * h;
                let v3 = -lmax + (i3 as f64 + 0.5) * h;
                (-0.3 * (v1 * v1 + v2 * v2 + v3 * v3)).exp() + 0.1 * v1
            })
            .collect();
        let modes = mt.forward_modes(&field);
        let back = mt.inverse_modes(&modes);
        for (a, b) in back.iter().zip(&field) {
            assert!((a - b).abs() < 1e-11);
        }
    }

    #[test]
    fn mode_transform_isolates_single_plane_wave() {
        // f(v) = cos(ξ_2 · v_x) should put weight 1/2 on l = (±2, 0, 0).
        let d = 3;
        let n = 8;
        let lmax = 2.0;
        let mt = ModeTransform::new(d, n, lmax);
        let h = 2.0 * lmax / n as f64;
        let xi = 2.0 * std::f64::consts::PI / lmax; // l = 2
        let field: Vec<f64> = (0..n * n * n)
            .map(|flat| {
                let i1 = flat / (n * n);
                let v1 = -lmax + (i1 as f64 + 0.5) * h;
                (xi * v1).cos()
            })
            .collect();
        let modes = mt.forward_modes(&field);
        // Wrapped index for l = +2 on axis 1 (slowest): (2, 0, 0).
        let idx_p = 2 * n * n;
        // l = -2 wraps to k = n - 2.
        let idx_m = (n - 2) * n * n;
        assert!((modes[idx_p].re - 0.5).abs() < 1e-12);
        assert!((modes[idx_m].re - 0.5).abs() < 1e-12);
        let energy: f64 = modes.iter().map(|c| c.norm_sqr()).sum();
        assert!((energy - 0.5).abs() < 1e-12, "all other modes vanish");
    }

    #[test]
    fn padded_conv_matches_direct_sum() {
        let d = 2;
        let n = 6;
        let h = 0.5;
        let kern = |z: &[f64]| (-(z[0] * z[0] + z[1] * z[1])).exp() + 0.2;
        let conv = PaddedConv::new(d, n, h, &[&kern]);
        let field: Vec<f64> = (0..n * n).map(|i| ((i * 7 % 11) as f64) * 0.1).collect();
        let got = conv.apply_one(&field, 0);
        for i1 in 0..n {
            for i2 in 0..n {
                let mut acc = 0.0;
                for j1 in 0..n {
                    for j2 in 0..n {
                        let z = [
                            (i1 as f64 - j1 as f64) * h,
                            (i2 as f64 - j2 as f64) * h,
                        ];
                        acc += kern(&z) * field[j1 * n + j2];
                    }
                }
                acc *= h * h;
                let g = got[i1 * n + i2];
                assert!((g - acc).abs() < 1e-10, "({i1},{i2}): {g} vs {acc}");
            }
        }
    }

    #[test]
    fn padded_conv_shares_forward_transform_across_kernels() {
        let d = 3;
        let n = 4;
        let h = 1.0;
        let k0 = |z: &[f64]| z[0] * z[0] + 1.0;
        let k1 = |z: &[f64]| (z[0] + z[1] + z[2]).abs();
        let conv = PaddedConv::new(d, n, h, &[&k0, &k1]);
        let field: Vec<f64> = (0..n * n * n).map(|i| (i as f64 * 0.37).sin().abs()).collect();
        let both = conv.apply_all(&field);
        let one0 = conv.apply_one(&field, 0);
        let one1 = conv.apply_one(&field, 1);
        assert_eq!(both[0], one0);
        assert_eq!(both[1], one1);
    }
}
