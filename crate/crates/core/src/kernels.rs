//! Interaction kernels and confining potentials.
//!
//! A kernel is admissible for the solvers in this crate when it is even,
//! nonnegative, and has a strictly positive integrable Fourier transform
//! (ordinary-frequency convention, `ghat(xi) = integral g(x) e^{-2 pi i x.xi} dx`,
//! so `g(0) = integral ghat`). The zero kernel is provided as a degenerate
//! control for the non-interacting system; it deliberately fails validation.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fft;
use crate::grid::Grid;

type PointFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Relative tolerance for the closed-form vs discrete transform check.
pub const CONVENTION_TOL: f64 = 1e-6;
/// Relative tolerance for `integral ghat = g(0)`.
pub const MASS_TOL: f64 = 1e-6;
/// Kernel and transform must decay below this relative level at the box and
/// frequency boundaries, otherwise validation is inconclusive.
pub const TAIL_TOL: f64 = 1e-6;
/// Evenness or sign violations larger than this (relative to `g(0)`) are
/// definite kernel defects even on an inadequate grid.
const GROSS_VIOLATION: f64 = 1e-3;
/// Transform values below `-GROSS_INDEFINITE * max` cannot be produced by
/// box truncation of an admissible kernel once it is sampled at all.
const GROSS_INDEFINITE: f64 = 0.05;
/// Spurious negativity floor for the discrete transform of an admissible
/// kernel on an adequate grid (FFT roundoff plus tail aliasing).
const NOISE_FLOOR: f64 = 1e-9;

#[derive(Clone)]
enum KernelForm {
    Gaussian { amplitude: f64, width: f64 },
    Matern { amplitude: f64, width: f64 },
    Zero,
    Custom { eval: PointFn, fourier: PointFn },
}

/// An interaction kernel: pointwise values, closed-form transform, `g(0)`.
#[derive(Clone)]
pub struct KernelSpec {
    dimension: usize,
    name: String,
    g0: f64,
    form: KernelForm,
}

impl fmt::Debug for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KernelSpec")
            .field("dimension", &self.dimension)
            .field("name", &self.name)
            .field("g0", &self.g0)
            .finish()
    }
}

fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|c| c * c).sum()
}

impl KernelSpec {
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// `g(0)`, the self-interaction value.
    pub fn g0(&self) -> f64 {
        self.g0
    }

    /// Whether this is the degenerate non-interacting control.
    pub fn is_zero(&self) -> bool {
        matches!(self.form, KernelForm::Zero)
    }

    /// Kernel value `g(x)`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dimension);
        match &self.form {
            KernelForm::Gaussian { amplitude, width } => {
                amplitude * (-std::f64::consts::PI * norm_sq(x) / (width * width)).exp()
            }
            KernelForm::Matern { amplitude, width } => {
                let r = norm_sq(x).sqrt();
                let t = 2.0 * std::f64::consts::PI * r / width;
                amplitude * (1.0 + t) * (-t).exp()
            }
            KernelForm::Zero => 0.0,
            KernelForm::Custom { eval, .. } => eval(x),
        }
    }

    /// Closed-form transform `ghat(xi)` in the ordinary-frequency convention.
    pub fn fourier_eval(&self, xi: &[f64]) -> f64 {
        debug_assert_eq!(xi.len(), self.dimension);
        match &self.form {
            KernelForm::Gaussian { amplitude, width } => {
                let d = self.dimension as i32;
                amplitude
                    * width.powi(d)
                    * (-std::f64::consts::PI * width * width * norm_sq(xi)).exp()
            }
            KernelForm::Matern { amplitude, width } => {
                // Transform of (1 + b|x|) e^{-b|x|} with b = 2 pi / width:
                // (d+1) Gamma((d+1)/2) / pi^{(d+1)/2} * u^3 / (u^2 + |xi|^2)^{(d+3)/2},
                // u = 1 / width.
                let d = self.dimension as f64;
                let u = 1.0 / width;
                let a = 0.5 * (d + 1.0);
                let c = (d + 1.0) * statrs::function::gamma::gamma(a)
                    / std::f64::consts::PI.powf(a);
                amplitude * c * u.powi(3) / (u * u + norm_sq(xi)).powf(a + 1.0)
            }
            KernelForm::Zero => 0.0,
            KernelForm::Custom { fourier, .. } => fourier(xi),
        }
    }
}

/// `g(x) = amplitude * exp(-pi |x/width|^2)`; self-dual at unit parameters.
pub fn make_gaussian_kernel(dimension: usize, amplitude: f64, width: f64) -> Result<KernelSpec> {
    check_kernel_params(dimension, amplitude, width)?;
    Ok(KernelSpec {
        dimension,
        name: "gaussian".into(),
        g0: amplitude,
        form: KernelForm::Gaussian { amplitude, width },
    })
}

/// `g(x) = amplitude * (1 + 2 pi |x|/width) exp(-2 pi |x|/width)`, a kernel
/// with polynomially decaying transform, structurally unlike the Gaussian.
pub fn make_matern_kernel(dimension: usize, amplitude: f64, width: f64) -> Result<KernelSpec> {
    check_kernel_params(dimension, amplitude, width)?;
    Ok(KernelSpec {
        dimension,
        name: "matern".into(),
        g0: amplitude,
        form: KernelForm::Matern { amplitude, width },
    })
}

/// Degenerate `g = 0` control (non-interacting system). Fails validation.
pub fn zero_kernel(dimension: usize) -> KernelSpec {
    KernelSpec {
        dimension,
        name: "zero".into(),
        g0: 0.0,
        form: KernelForm::Zero,
    }
}

/// Wrap caller-supplied evaluators. `g0` must equal `eval(0)`.
pub fn custom_kernel(
    dimension: usize,
    name: impl Into<String>,
    eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    fourier: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
) -> KernelSpec {
    let origin = vec![0.0; dimension];
    let eval: PointFn = Arc::new(eval);
    let g0 = eval(&origin);
    KernelSpec {
        dimension,
        name: name.into(),
        g0,
        form: KernelForm::Custom {
            eval,
            fourier: Arc::new(fourier),
        },
    }
}

fn check_kernel_params(dimension: usize, amplitude: f64, width: f64) -> Result<()> {
    if dimension == 0 {
        return Err(Error::parameter("dimension", "must be at least 1"));
    }
    if !(amplitude.is_finite() && amplitude > 0.0) {
        return Err(Error::parameter("amplitude", "must be finite and positive"));
    }
    if !(width.is_finite() && width > 0.0) {
        return Err(Error::parameter("width", "must be finite and positive"));
    }
    Ok(())
}

/// Outcome of the admissibility checks for one kernel on one grid.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ValidationReport {
    pub kernel: String,
    /// max |g(x) - g(-x)| / g(0) over sampled pairs
    pub evenness_err: f64,
    pub even_pass: bool,
    /// min of g over the grid (must be >= 0)
    pub min_value: f64,
    pub nonneg_pass: bool,
    /// min of the discrete transform of sampled g, relative to its max
    pub fourier_min_rel: f64,
    pub fourier_positive_pass: bool,
    /// max |discrete transform - fourier_eval| / ghat(0)
    pub convention_err: f64,
    pub convention_pass: bool,
    /// |quadrature of fourier_eval - g0| / g0
    pub mass_err: f64,
    pub mass_pass: bool,
    pub pass: bool,
}

/// Check evenness, nonnegativity, transform positivity and integrability,
/// the Fourier convention, and `integral ghat = g(0)` on the given grid.
///
/// Returns an inconclusive error when the grid cannot support a clean
/// verdict (kernel not decayed at the box boundary, or its transform not
/// decayed at the frequency boundary). Gross violations are reported as
/// failures even on an inadequate grid: truncation cannot manufacture them.
pub fn validate_weak_interaction(kernel: &KernelSpec, grid: &Grid) -> Result<ValidationReport> {
    if kernel.dimension() != grid.dimension() {
        return Err(Error::ShapeMismatch(format!(
            "kernel dimension {} vs grid dimension {}",
            kernel.dimension(),
            grid.dimension()
        )));
    }
    let d = grid.dimension();
    let g0 = kernel.g0();
    if !(g0.is_finite() && g0 > 0.0) {
        return Err(Error::parameter(
            "kernel",
            format!("g(0) = {g0} is not strictly positive"),
        ));
    }

    // Evenness and nonnegativity over all nodes. Midpoint nodes come in +/-
    // pairs: the mirror of a flat index reflects each axis index.
    let n = grid.node_count();
    let mut samples = vec![0.0; n];
    grid.for_each_node(|i, x| samples[i] = kernel.eval(x));
    let mut evenness_err: f64 = 0.0;
    let mut min_value = f64::INFINITY;
    {
        let m = grid.points_per_axis();
        let mut multi = vec![0usize; d];
        for i in 0..n {
            grid.multi_index(i, &mut multi);
            let mut mirrored = multi.clone();
            for c in mirrored.iter_mut() {
                *c = m - 1 - *c;
            }
            let j = grid.flat_index(&mirrored);
            evenness_err = evenness_err.max((samples[i] - samples[j]).abs() / g0);
            min_value = min_value.min(samples[i]);
        }
    }
    let even_pass = evenness_err <= 1e-12;
    let nonneg_pass = min_value >= 0.0;

    // Discrete transform of the samples: positivity, convention, mass.
    let l = grid.half_width();
    let hat = fft::dft_midpoint(grid, &samples);
    let mut fourier_min = f64::INFINITY;
    let mut hat_max: f64 = 0.0;
    let mut convention_err: f64 = 0.0;
    let mut xi = vec![0.0; d];
    let mut mass = 0.0;
    let dxi_vol = (1.0 / (2.0 * l)).powi(d as i32);
    let mut hat_nyquist: f64 = 0.0;
    let m = grid.points_per_axis();
    let mut multi = vec![0usize; d];
    for (k, hk) in hat.iter().enumerate() {
        fft::bin_frequency(grid, k, &mut xi);
        let closed = kernel.fourier_eval(&xi);
        convention_err = convention_err.max((hk.re - closed).abs());
        fourier_min = fourier_min.min(hk.re);
        hat_max = hat_max.max(hk.re);
        mass += closed * dxi_vol;
        grid.multi_index(k, &mut multi);
        if multi.iter().any(|&i| i == m / 2) {
            hat_nyquist = hat_nyquist.max(hk.re.abs());
        }
    }
    let hat_scale = hat_max.max(f64::MIN_POSITIVE);
    let fourier_min_rel = fourier_min / hat_scale;
    let fourier_positive_pass = fourier_min_rel >= -NOISE_FLOOR;
    let convention_err = convention_err / hat_scale;
    let convention_pass = convention_err <= CONVENTION_TOL;
    let mass_err = (mass - g0).abs() / g0;
    let mass_pass = mass_err <= MASS_TOL;

    let report = ValidationReport {
        kernel: kernel.name().to_string(),
        evenness_err,
        even_pass,
        min_value,
        nonneg_pass,
        fourier_min_rel,
        fourier_positive_pass,
        convention_err,
        convention_pass,
        mass_err,
        mass_pass,
        pass: even_pass && nonneg_pass && fourier_positive_pass && convention_pass && mass_pass,
    };

    // Definite defects survive grid inadequacy.
    let gross = evenness_err > GROSS_VIOLATION
        || min_value < -GROSS_VIOLATION * g0
        || fourier_min_rel < -GROSS_INDEFINITE;

    // Space-side adequacy: kernel decayed at the box boundary (axis extreme
    // and far corner).
    let mut axis_pt = vec![0.0; d];
    axis_pt[0] = l;
    let corner = vec![l; d];
    let g_tail = kernel.eval(&axis_pt).abs().max(kernel.eval(&corner).abs());
    if g_tail > TAIL_TOL * g0 && !gross {
        return Err(Error::Inconclusive(format!(
            "kernel value {g_tail:.3e} at the box boundary exceeds {TAIL_TOL:.0e} * g(0); \
             enlarge the box"
        )));
    }
    // Frequency-side adequacy: sampled transform decayed at the Nyquist shell.
    if hat_nyquist > TAIL_TOL * hat_scale && !gross {
        return Err(Error::Inconclusive(format!(
            "discrete transform magnitude {hat_nyquist:.3e} at the frequency boundary exceeds \
             {TAIL_TOL:.0e} of its peak; refine the grid"
        )));
    }

    Ok(report)
}

/// A confining potential: nonnegative, growing at infinity.
#[derive(Clone)]
pub struct PotentialSpec {
    dimension: usize,
    name: String,
    alpha0: f64,
    form: PotentialForm,
}

#[derive(Clone)]
enum PotentialForm {
    Quadratic { stiffness: f64 },
    Custom { eval: PointFn },
}

impl fmt::Debug for PotentialSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PotentialSpec")
            .field("dimension", &self.dimension)
            .field("name", &self.name)
            .field("alpha0", &self.alpha0)
            .finish()
    }
}

impl PotentialSpec {
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Rate for which `exp(-alpha0 V)` is integrable outside the unit ball.
    pub fn alpha0(&self) -> f64 {
        self.alpha0
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dimension);
        match &self.form {
            PotentialForm::Quadratic { stiffness } => stiffness * norm_sq(x),
            PotentialForm::Custom { eval } => eval(x),
        }
    }

    /// Values of the potential at every node of a grid.
    pub fn values_on(&self, grid: &Grid) -> Result<Vec<f64>> {
        if grid.dimension() != self.dimension {
            return Err(Error::ShapeMismatch(format!(
                "potential is {}-dimensional but the grid is {}-dimensional",
                self.dimension,
                grid.dimension()
            )));
        }
        let mut coords = vec![0.0; self.dimension];
        let mut values = vec![0.0; grid.node_count()];
        for (i, slot) in values.iter_mut().enumerate() {
            grid.node_coords(i, &mut coords);
            let v = self.eval(&coords);
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("potential value at node {i}")));
            }
            *slot = v;
        }
        Ok(values)
    }

    /// Smallest radius `r` along the first axis with `V(r e_1) >= level`.
    ///
    /// Used to size truncation boxes; assumes growth along the axis.
    pub fn radius_for_level(&self, level: f64) -> Result<f64> {
        match &self.form {
            PotentialForm::Quadratic { stiffness } => Ok((level / stiffness).sqrt()),
            PotentialForm::Custom { .. } => {
                let eval_r = |r: f64| {
                    let mut x = vec![0.0; self.dimension];
                    x[0] = r;
                    self.eval(&x)
                };
                let mut hi = 1.0;
                let mut doublings = 0;
                while eval_r(hi) < level {
                    hi *= 2.0;
                    doublings += 1;
                    if doublings > 200 {
                        return Err(Error::parameter(
                            "potential",
                            "does not reach the requested level along the first axis",
                        ));
                    }
                }
                let mut lo = 0.0;
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if eval_r(mid) < level {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                Ok(hi)
            }
        }
    }
}

/// `V(x) = stiffness * |x|^2`.
pub fn make_quadratic_potential(dimension: usize, stiffness: f64) -> Result<PotentialSpec> {
    if dimension == 0 {
        return Err(Error::parameter("dimension", "must be at least 1"));
    }
    if !(stiffness.is_finite() && stiffness > 0.0) {
        return Err(Error::parameter("stiffness", "must be finite and positive"));
    }
    Ok(PotentialSpec {
        dimension,
        name: "quadratic".into(),
        alpha0: stiffness.min(1.0),
        form: PotentialForm::Quadratic { stiffness },
    })
}

/// Wrap a caller-supplied potential. The evaluator must be nonnegative,
/// lower semicontinuous, and grow at infinity; `alpha0 > 0` is the rate for
/// which `exp(-alpha0 V)` is integrable outside the unit ball.
pub fn custom_potential(
    dimension: usize,
    name: impl Into<String>,
    alpha0: f64,
    eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
) -> Result<PotentialSpec> {
    if dimension == 0 {
        return Err(Error::parameter("dimension", "must be at least 1"));
    }
    if !(alpha0.is_finite() && alpha0 > 0.0) {
        return Err(Error::parameter("alpha0", "must be finite and positive"));
    }
    Ok(PotentialSpec {
        dimension,
        name: name.into(),
        alpha0,
        form: PotentialForm::Custom {
            eval: Arc::new(eval),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid1(l: f64, m: usize) -> Grid {
        Grid::new(1, l, m).unwrap()
    }

    #[test]
    fn constructor_rejects_bad_parameters() {
        assert!(make_gaussian_kernel(1, 0.0, 1.0).is_err());
        assert!(make_gaussian_kernel(1, 1.0, -1.0).is_err());
        assert!(make_gaussian_kernel(0, 1.0, 1.0).is_err());
        assert!(make_matern_kernel(1, f64::NAN, 1.0).is_err());
        assert!(make_quadratic_potential(1, 0.0).is_err());
    }

    #[test]
    fn unit_gaussian_is_self_dual() {
        let k = make_gaussian_kernel(1, 1.0, 1.0).unwrap();
        for t in [0.0, 0.3, 1.1, 2.7] {
            assert!((k.eval(&[t]) - k.fourier_eval(&[t])).abs() < 1e-15);
        }
        assert_eq!(k.g0(), 1.0);
    }

    #[test]
    fn gaussian_transform_mass_matches_g0_d1() {
        // integral ghat = g(0) by direct quadrature, no FFT involved
        let k = make_gaussian_kernel(1, 1.7, 0.8).unwrap();
        let (lo, hi, n) = (-40.0, 40.0, 80_000);
        let dx = (hi - lo) / n as f64;
        let mass: f64 = (0..n)
            .map(|i| k.fourier_eval(&[lo + (i as f64 + 0.5) * dx]) * dx)
            .sum();
        assert!(
            (mass - k.g0()).abs() / k.g0() < 1e-10,
            "quadrature {mass} vs g0 {}",
            k.g0()
        );
    }

    #[test]
    fn gaussian_transform_mass_matches_g0_d2() {
        let k = make_gaussian_kernel(2, 2.0, 1.0).unwrap();
        let (half, n) = (8.0, 400);
        let dx = 2.0 * half / n as f64;
        let mut mass = 0.0;
        for i in 0..n {
            for j in 0..n {
                let xi = [-half + (i as f64 + 0.5) * dx, -half + (j as f64 + 0.5) * dx];
                mass += k.fourier_eval(&xi) * dx * dx;
            }
        }
        assert!((mass - 2.0).abs() < 1e-6, "mass {mass}");
    }

    #[test]
    fn matern_transform_mass_matches_g0() {
        // d = 1 and d = 2 closed forms against direct quadrature of ghat
        let k1 = make_matern_kernel(1, 1.3, 0.9).unwrap();
        let (lo, hi, n) = (-3000.0, 3000.0, 6_000_000);
        let dx = (hi - lo) / n as f64;
        let mass: f64 = (0..n)
            .map(|i| k1.fourier_eval(&[lo + (i as f64 + 0.5) * dx]) * dx)
            .sum();
        assert!(
            (mass - k1.g0()).abs() / k1.g0() < 1e-7,
            "d=1 mass {mass} vs {}",
            k1.g0()
        );

        let k2 = make_matern_kernel(2, 2.0, 1.0).unwrap();
        // radial quadrature: integral ghat = int_0^inf ghat(r) 2 pi r dr
        let (rmax, nr) = (4000.0, 4_000_000);
        let dr = rmax / nr as f64;
        let mass2: f64 = (0..nr)
            .map(|i| {
                let r = (i as f64 + 0.5) * dr;
                k2.fourier_eval(&[r, 0.0]) * 2.0 * std::f64::consts::PI * r * dr
            })
            .sum();
        assert!(
            (mass2 - k2.g0()).abs() / k2.g0() < 1e-6,
            "d=2 mass {mass2} vs {}",
            k2.g0()
        );
    }

    #[test]
    fn matern_transform_matches_space_quadrature_pointwise() {
        // ghat(xi) = integral g(x) cos(2 pi x xi) dx in d = 1
        let k = make_matern_kernel(1, 1.0, 1.0).unwrap();
        let (lo, hi, n) = (-30.0, 30.0, 600_000);
        let dx = (hi - lo) / n as f64;
        for xi in [0.0, 0.17, 0.8, 2.5] {
            let direct: f64 = (0..n)
                .map(|i| {
                    let x = lo + (i as f64 + 0.5) * dx;
                    k.eval(&[x]) * (2.0 * std::f64::consts::PI * x * xi).cos() * dx
                })
                .sum();
            let closed = k.fourier_eval(&[xi]);
            assert!(
                (direct - closed).abs() < 1e-9,
                "xi={xi}: {direct} vs {closed}"
            );
        }
    }

    #[test]
    fn validation_passes_for_shipped_kernels() {
        let k = make_gaussian_kernel(1, 1.0, 1.0).unwrap();
        let rep = validate_weak_interaction(&k, &grid1(6.0, 2048)).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert!(rep.convention_err <= 1e-6);
        assert!(rep.mass_err <= 1e-6);

        let k = make_matern_kernel(1, 1.0, 1.0).unwrap();
        let rep = validate_weak_interaction(&k, &grid1(6.0, 8192)).unwrap();
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn validation_passes_for_gaussian_d2() {
        let k = make_gaussian_kernel(2, 2.0, 1.0).unwrap();
        let rep = validate_weak_interaction(&k, &Grid::new(2, 6.0, 128).unwrap()).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert!(rep.mass_err <= 1e-6, "mass err {}", rep.mass_err);
    }

    #[test]
    fn small_box_is_inconclusive() {
        let k = make_gaussian_kernel(1, 1.0, 1.0).unwrap();
        match validate_weak_interaction(&k, &grid1(1.0, 256)) {
            Err(Error::Inconclusive(_)) => {}
            other => panic!("expected inconclusive, got {other:?}"),
        }
    }

    #[test]
    fn oscillating_kernel_fails_validation() {
        // cos goes negative in space and is not positive definite once
        // windowed; a gross defect must be reported even though cos never
        // decays at any box boundary.
        let k = custom_kernel(1, "cosine", |x| x[0].cos(), |_| 0.0);
        let rep = validate_weak_interaction(&k, &grid1(20.0, 1024)).unwrap();
        assert!(!rep.nonneg_pass);
        assert!(!rep.pass);
    }

    #[test]
    fn indicator_kernel_fails_transform_positivity() {
        // nonnegative and even, but the sampled sequence is indefinite (its
        // discrete transform has large negative lobes)
        let k = custom_kernel(
            1,
            "indicator",
            |x| if x[0].abs() <= 1.0 { 1.0 } else { 0.0 },
            |xi| {
                let t = 2.0 * std::f64::consts::PI * xi[0];
                if t.abs() < 1e-12 {
                    2.0
                } else {
                    2.0 * t.sin() / t
                }
            },
        );
        let rep = validate_weak_interaction(&k, &grid1(4.0, 512)).unwrap();
        assert!(rep.nonneg_pass && rep.even_pass);
        assert!(rep.fourier_min_rel < -0.05, "min {}", rep.fourier_min_rel);
        assert!(!rep.fourier_positive_pass);
        assert!(!rep.pass);
    }

    #[test]
    fn odd_kernel_fails_evenness() {
        let k = custom_kernel(
            1,
            "skewed",
            |x| ((-x[0] * x[0]).exp()) * (1.0 + 0.2 * x[0].tanh()),
            |_| 1.0,
        );
        let rep = validate_weak_interaction(&k, &grid1(8.0, 512)).unwrap();
        assert!(!rep.even_pass);
        assert!(!rep.pass);
    }

    #[test]
    fn quadratic_potential_basics() {
        let v = make_quadratic_potential(2, 1.5).unwrap();
        assert_eq!(v.eval(&[1.0, 2.0]), 7.5);
        assert!((v.radius_for_level(6.0).unwrap() - 2.0).abs() < 1e-12);
        assert!(v.alpha0() > 0.0);
    }

    #[test]
    fn custom_potential_radius_by_bisection() {
        let v = custom_potential(1, "quartic", 1.0, |x| x[0].powi(4)).unwrap();
        let r = v.radius_for_level(16.0).unwrap();
        assert!((r - 2.0).abs() < 1e-9, "r = {r}");
    }
}
