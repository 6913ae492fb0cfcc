//! Internal separable FFT helpers on tensor grids.
//!
//! Fourier convention throughout: ordinary frequency,
//! `F[g](xi) = integral g(x) exp(-2 pi i x . xi) dx`, approximated on a
//! midpoint grid by `h^d sum_j g(x_j) exp(-2 pi i x_j . xi_k)` at the
//! frequency lattice `xi_k = k / (2L)` per axis.

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

use crate::grid::Grid;
use crate::kernels::KernelSpec;

/// In-place complex FFT along every axis of a row-major `[n; d]` tensor.
pub(crate) fn transform_axes(buf: &mut [Complex64], n: usize, d: usize, fft: &Arc<dyn Fft<f64>>) {
    debug_assert_eq!(buf.len(), n.pow(d as u32));
    let total = buf.len();
    let mut scratch = vec![Complex64::new(0.0, 0.0); n];
    for axis in 0..d {
        let stride = n.pow((d - 1 - axis) as u32);
        let n_lines = total / n;
        for line in 0..n_lines {
            let outer = line / stride;
            let inner = line % stride;
            let base = outer * stride * n + inner;
            if stride == 1 {
                fft.process(&mut buf[base..base + n]);
            } else {
                for i in 0..n {
                    scratch[i] = buf[base + i * stride];
                }
                fft.process(&mut scratch);
                for i in 0..n {
                    buf[base + i * stride] = scratch[i];
                }
            }
        }
    }
}

/// Signed frequency index for FFT bin `i` of `n` (`i <= n/2` maps to `i`).
pub(crate) fn signed_bin(i: usize, n: usize) -> i64 {
    if i <= n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// Approximate continuous Fourier transform of node values on `grid`.
///
/// Returns `h^d sum_j v_j exp(-2 pi i x_j . xi_k)` for every lattice
/// frequency, in row-major FFT bin order; bin `i` along an axis carries
/// frequency `signed_bin(i, M) / (2L)`.
pub(crate) fn dft_midpoint(grid: &Grid, values: &[f64]) -> Vec<Complex64> {
    let m = grid.points_per_axis();
    let d = grid.dimension();
    let n = grid.node_count();
    debug_assert_eq!(values.len(), n);
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(m);
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform_axes(&mut buf, m, d, &fft);
    // Midpoint phase: x_j = -L + (j + 1/2) h, so
    // x_j xi_k = j k / M + k (1 - M) / (2M) per axis.
    let mut axis_phase = vec![Complex64::new(0.0, 0.0); m];
    for (k, p) in axis_phase.iter_mut().enumerate() {
        let kk = signed_bin(k, m) as f64;
        let angle = -std::f64::consts::PI * kk * (1.0 - m as f64) / m as f64;
        *p = Complex64::new(angle.cos(), angle.sin());
    }
    let scale = grid.node_volume();
    let mut multi = vec![0usize; d];
    for (flat, value) in buf.iter_mut().enumerate() {
        grid.multi_index(flat, &mut multi);
        let mut phase = Complex64::new(scale, 0.0);
        for &k in &multi {
            phase *= axis_phase[k];
        }
        *value *= phase;
    }
    buf
}

/// Frequency coordinates of row-major FFT bin `flat` on `grid`.
pub(crate) fn bin_frequency(grid: &Grid, flat: usize, out: &mut [f64]) {
    let m = grid.points_per_axis();
    let dx = 1.0 / (2.0 * grid.half_width());
    let mut rem = flat;
    for axis in (0..grid.dimension()).rev() {
        out[axis] = signed_bin(rem % m, m) as f64 * dx;
        rem /= m;
    }
}

/// Discrete convolution of grid measures with an interaction kernel.
///
/// Positions live on the midpoint grid, so every pairwise offset `x_i - x_j`
/// is an integer multiple of the spacing with each axis component in
/// `(-M, M)`.  Zero-padding each axis to `2M` therefore makes the circular
/// convolution below *exactly* equal to the linear sum
/// `f_i = sum_j g(x_i - x_j) w_j` for in-box weights, independent of how far
/// the kernel tail reaches.
///
/// The kernel transform is planned once per (grid, kernel) pair; `apply`
/// costs two FFTs of size `(2M)^d`.
pub(crate) struct Convolver {
    dimension: usize,
    points_per_axis: usize,
    padded_per_axis: usize,
    kernel_hat: Vec<Complex64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    zero_kernel: bool,
}

impl Convolver {
    pub fn new(grid: &Grid, kernel: &KernelSpec) -> Convolver {
        let d = grid.dimension();
        let m = grid.points_per_axis();
        let p = 2 * m;
        let h = grid.spacing();
        let total = p.pow(d as u32);

        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(p);
        let inverse = planner.plan_fft_inverse(p);

        let zero_kernel = kernel.is_zero();
        let kernel_hat = if zero_kernel {
            vec![Complex64::new(0.0, 0.0); total]
        } else {
            // Sample the kernel at every signed padded offset, then transform.
            let mut samples = vec![Complex64::new(0.0, 0.0); total];
            let mut idx = vec![0usize; d];
            let mut offset = vec![0.0f64; d];
            for (flat, slot) in samples.iter_mut().enumerate() {
                let mut rem = flat;
                for axis in (0..d).rev() {
                    idx[axis] = rem % p;
                    rem /= p;
                }
                for axis in 0..d {
                    offset[axis] = signed_bin(idx[axis], p) as f64 * h;
                }
                *slot = Complex64::new(kernel.eval(&offset), 0.0);
            }
            transform_axes(&mut samples, p, d, &forward);
            samples
        };

        Convolver {
            dimension: d,
            points_per_axis: m,
            padded_per_axis: p,
            kernel_hat,
            forward,
            inverse,
            zero_kernel,
        }
    }

    /// `weights[j]` sits at grid node `j`; returns `f_i = sum_j g(x_i - x_j) weights[j]`.
    pub fn apply(&self, weights: &[f64]) -> Vec<f64> {
        let d = self.dimension;
        let m = self.points_per_axis;
        let p = self.padded_per_axis;
        let node_count = m.pow(d as u32);
        assert_eq!(weights.len(), node_count, "weight vector does not match grid");
        if self.zero_kernel {
            return vec![0.0; node_count];
        }

        let total = p.pow(d as u32);
        let mut buf = vec![Complex64::new(0.0, 0.0); total];
        let mut idx = vec![0usize; d];
        for (flat, &w) in weights.iter().enumerate() {
            let mut rem = flat;
            for axis in (0..d).rev() {
                idx[axis] = rem % m;
                rem /= m;
            }
            let mut padded_flat = 0usize;
            for axis in 0..d {
                padded_flat = padded_flat * p + idx[axis];
            }
            buf[padded_flat] = Complex64::new(w, 0.0);
        }

        transform_axes(&mut buf, p, d, &self.forward);
        for (b, k) in buf.iter_mut().zip(self.kernel_hat.iter()) {
            *b *= k;
        }
        transform_axes(&mut buf, p, d, &self.inverse);

        let scale = 1.0 / total as f64;
        let mut out = vec![0.0f64; node_count];
        for (flat, slot) in out.iter_mut().enumerate() {
            let mut rem = flat;
            for axis in (0..d).rev() {
                idx[axis] = rem % m;
                rem /= m;
            }
            let mut padded_flat = 0usize;
            for axis in 0..d {
                padded_flat = padded_flat * p + idx[axis];
            }
            *slot = buf[padded_flat].re * scale;
        }
        out
    }
}

/// Frequency-side interaction energy of a grid measure with node masses
/// `masses[j]`: `sum_k |mhat(xi_k)|^2 ghat(xi_k) dxi^d` over the zero-padded
/// frequency lattice (`2M` bins per axis, spacing `1/(4L)`), using the
/// kernel's closed-form transform.  The measure transform picks up only a
/// unimodular phase per axis from the midpoint offsets, so `|mhat|` is the
/// plain padded-DFT modulus.
pub(crate) fn spectral_energy(grid: &Grid, masses: &[f64], kernel: &KernelSpec) -> f64 {
    let d = grid.dimension();
    let m = grid.points_per_axis();
    let p = 2 * m;
    let total = p.pow(d as u32);
    let dxi = 1.0 / (p as f64 * grid.spacing());

    let mut buf = vec![Complex64::new(0.0, 0.0); total];
    let mut idx = vec![0usize; d];
    for (flat, &w) in masses.iter().enumerate() {
        let mut rem = flat;
        for axis in (0..d).rev() {
            idx[axis] = rem % m;
            rem /= m;
        }
        let mut padded_flat = 0usize;
        for axis in 0..d {
            padded_flat = padded_flat * p + idx[axis];
        }
        buf[padded_flat] = Complex64::new(w, 0.0);
    }
    let fft = FftPlanner::new().plan_fft_forward(p);
    transform_axes(&mut buf, p, d, &fft);

    let mut xi = vec![0.0f64; d];
    let mut acc = 0.0;
    for (flat, value) in buf.iter().enumerate() {
        let mut rem = flat;
        for axis in (0..d).rev() {
            xi[axis] = signed_bin(rem % p, p) as f64 * dxi;
            rem /= p;
        }
        acc += value.norm_sqr() * kernel.fourier_eval(&xi);
    }
    acc * dxi.powi(d as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Oracle: direct O(M^2) evaluation of the midpoint transform.
    fn dft_direct(grid: &Grid, values: &[f64]) -> Vec<Complex64> {
        let n = grid.node_count();
        let d = grid.dimension();
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        let mut x = vec![0.0; d];
        let mut xi = vec![0.0; d];
        for (k, o) in out.iter_mut().enumerate() {
            bin_frequency(grid, k, &mut xi);
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..n {
                grid.node_coords(j, &mut x);
                let dot: f64 = x.iter().zip(&xi).map(|(a, b)| a * b).sum();
                let ang = -2.0 * std::f64::consts::PI * dot;
                acc += values[j] * Complex64::new(ang.cos(), ang.sin());
            }
            *o = acc * grid.node_volume();
        }
        out
    }

    #[test]
    fn midpoint_dft_matches_direct_sum_d1() {
        let grid = Grid::new(1, 1.7, 16).unwrap();
        let values: Vec<f64> = (0..16).map(|i| ((i * 7 + 3) % 11) as f64 * 0.1 - 0.4).collect();
        let fast = dft_midpoint(&grid, &values);
        let slow = dft_direct(&grid, &values);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).norm() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn midpoint_dft_matches_direct_sum_d2() {
        let grid = Grid::new(2, 0.9, 6).unwrap();
        let values: Vec<f64> = (0..36).map(|i| ((i * 5 + 1) % 13) as f64 * 0.07).collect();
        let fast = dft_midpoint(&grid, &values);
        let slow = dft_direct(&grid, &values);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).norm() < 1e-12, "{a} vs {b}");
        }
    }

    /// Direct O(n^2) double sum the padded-FFT convolution must reproduce.
    fn convolve_direct(grid: &Grid, kernel: &KernelSpec, weights: &[f64]) -> Vec<f64> {
        let n = grid.node_count();
        let d = grid.dimension();
        let mut xi = vec![0.0; d];
        let mut xj = vec![0.0; d];
        let mut diff = vec![0.0; d];
        let mut out = vec![0.0; n];
        for i in 0..n {
            grid.node_coords(i, &mut xi);
            let mut acc = 0.0;
            for j in 0..n {
                grid.node_coords(j, &mut xj);
                for a in 0..d {
                    diff[a] = xi[a] - xj[a];
                }
                acc += kernel.eval(&diff) * weights[j];
            }
            out[i] = acc;
        }
        out
    }

    #[test]
    fn padded_convolution_matches_double_sum() {
        // Deliberately tiny box: the kernel tail is nowhere near decayed at
        // the boundary, which is exactly the case the zero padding must handle.
        let cases = [
            (Grid::new(1, 0.8, 24).unwrap(), crate::kernels::make_gaussian_kernel(1, 1.3, 0.9).unwrap()),
            (Grid::new(1, 1.1, 20).unwrap(), crate::kernels::make_matern_kernel(1, 0.7, 1.4).unwrap()),
            (Grid::new(2, 0.6, 10).unwrap(), crate::kernels::make_gaussian_kernel(2, 0.8, 1.1).unwrap()),
        ];
        for (grid, kernel) in cases {
            let n = grid.node_count();
            let weights: Vec<f64> =
                (0..n).map(|i| ((i * 13 + 5) % 17) as f64 * 0.031 - 0.2).collect();
            let fast = Convolver::new(&grid, &kernel).apply(&weights);
            let slow = convolve_direct(&grid, &kernel, &weights);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-11, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn zero_kernel_convolution_is_zero() {
        let grid = Grid::new(1, 2.0, 32).unwrap();
        let conv = Convolver::new(&grid, &crate::kernels::zero_kernel(1));
        let out = conv.apply(&vec![1.0; 32]);
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gaussian_transform_is_gaussian() {
        // g(x) = exp(-pi x^2) is its own transform under this convention.
        let grid = Grid::new(1, 8.0, 256).unwrap();
        let mut values = vec![0.0; grid.node_count()];
        grid.for_each_node(|i, x| values[i] = (-std::f64::consts::PI * x[0] * x[0]).exp());
        let hat = dft_midpoint(&grid, &values);
        let mut xi = [0.0];
        for k in 0..grid.node_count() {
            bin_frequency(&grid, k, &mut xi);
            let expect = (-std::f64::consts::PI * xi[0] * xi[0]).exp();
            assert!((hat[k].re - expect).abs() < 1e-12);
            assert!(hat[k].im.abs() < 1e-12);
        }
    }
}
