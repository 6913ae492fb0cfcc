//! Equilibrium structure of the mean-field energies: the positive-temperature
//! fixed point, zero-temperature constrained minimization, and the
//! variational diagnostics built on both.
//!
//! The thermal state at scale `theta` is the self-consistent Gibbs density
//! `mu = exp(-theta (2 g*mu + V)) / L`, found here by damped fixed-point
//! iteration.  The zero-temperature state minimizes
//! `E(mu) + int V dmu` over probability densities, found by projected
//! gradient descent in node masses with Barzilai-Borwein steps.  Both report
//! residuals that are recomputed for the exact field returned.

use crate::error::{Error, Result};
use crate::fft::Convolver;
use crate::fields::{self, kahan_sum, DensityField};
use crate::grid::Grid;
use crate::kernels::{KernelSpec, PotentialSpec};

/// Controls for the damped fixed-point iteration at positive temperature.
#[derive(Debug, Clone)]
pub struct ThermalOptions {
    /// L1 fixed-point residual to reach.
    pub tol: f64,
    /// Initial (and maximal) damping weight on the fixed-point update.
    pub damping: f64,
    pub max_iter: usize,
}

impl Default for ThermalOptions {
    fn default() -> Self {
        ThermalOptions { tol: 1e-12, damping: 0.5, max_iter: 200_000 }
    }
}

impl ThermalOptions {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::parameter("tol", "must be positive and finite"));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::parameter("damping", "must lie in (0, 1]"));
        }
        if self.max_iter == 0 {
            return Err(Error::parameter("max_iter", "must be at least 1"));
        }
        Ok(())
    }
}

/// Converged thermal state.
#[derive(Debug, Clone)]
pub struct ThermalSolution {
    pub density: DensityField,
    pub theta: f64,
    /// Natural log of the normalization integral; always finite.
    pub log_l_theta: f64,
    /// The normalization integral itself.  Underflows to zero for large
    /// `theta`; use `log_l_theta` for anything quantitative.
    pub l_theta: f64,
    pub iterations: usize,
    /// L1 distance between the returned density and its own fixed-point map.
    pub residual: f64,
}

/// One fixed-point map evaluation: given the interaction field of the current
/// iterate, produce `Normalize(exp(-theta (2 field + V)))` and the log of the
/// unnormalized integral, both in max-shifted arithmetic.
fn gibbs_map(field: &[f64], v: &[f64], theta: f64, node_volume: f64) -> (Vec<f64>, f64) {
    let mut s_min = f64::INFINITY;
    let mut s = vec![0.0; v.len()];
    for i in 0..v.len() {
        s[i] = theta * (2.0 * field[i] + v[i]);
        if s[i] < s_min {
            s_min = s[i];
        }
    }
    let mut w = s;
    for x in &mut w {
        *x = (-(*x - s_min)).exp();
    }
    let z = kahan_sum(w.iter().copied()) * node_volume;
    let log_l = -s_min + z.ln();
    for x in &mut w {
        *x /= z;
    }
    (w, log_l)
}

/// Solves the self-consistency equation
/// `mu = exp(-theta (2 g*mu + V)) / L_theta` on the given grid by damped
/// iteration, halving the damping whenever the residual grows.
///
/// Fails with an underflow error when `theta` times the potential-plus-field
/// spread across the box exceeds the exponent range of f64 — the returned
/// density would have exact zeros.  Shrink the box (or use
/// [`solve_thermal_auto`]) in that case.
pub fn solve_thermal_equilibrium(
    kernel: &KernelSpec,
    potential: &PotentialSpec,
    theta: f64,
    grid: &Grid,
    opts: &ThermalOptions,
) -> Result<ThermalSolution> {
    if kernel.dimension() != grid.dimension() || potential.dimension() != grid.dimension() {
        return Err(Error::ShapeMismatch(
            "kernel, potential, and grid dimensions must agree".into(),
        ));
    }
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::parameter("theta", "must be positive and finite"));
    }
    if theta < potential.alpha0() {
        return Err(Error::parameter(
            "theta",
            "must be at least the potential's integrability rate alpha0",
        ));
    }
    opts.validate()?;

    let v = potential.values_on(grid)?;
    let h_d = grid.node_volume();

    // Interaction-free Gibbs profile as the starting iterate.
    let v_min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let mut mu: Vec<f64> = v.iter().map(|&x| (-theta * (x - v_min)).exp()).collect();
    if mu.iter().any(|&x| x == 0.0) {
        return Err(Error::Underflow(format!(
            "exp(-theta V) underflows at the box edge (theta {theta}); shrink the box"
        )));
    }
    let z0 = kahan_sum(mu.iter().copied()) * h_d;
    for x in &mut mu {
        *x /= z0;
    }

    let convolver = Convolver::new(grid, kernel);
    let mut alpha = opts.damping;
    let mut prev_residual = f64::INFINITY;
    let mut masses = vec![0.0; mu.len()];
    let mut last_residual = f64::INFINITY;

    for iter in 0..opts.max_iter {
        for (w, &m) in masses.iter_mut().zip(&mu) {
            *w = m * h_d;
        }
        let field = convolver.apply(&masses);
        let (phi, log_l) = gibbs_map(&field, &v, theta, h_d);
        let residual = kahan_sum(mu.iter().zip(&phi).map(|(a, b)| (a - b).abs())) * h_d;
        if !residual.is_finite() {
            return Err(Error::NonFinite("fixed-point residual".into()));
        }
        if residual <= opts.tol {
            // `residual`, `field`, and `log_l` all belong to the iterate
            // being returned, so the certificate is exact.
            if mu.iter().any(|&x| x <= 0.0) {
                return Err(Error::Underflow(
                    "converged density has zero nodes; shrink the box".into(),
                ));
            }
            let density = DensityField::new(grid.clone(), mu)?;
            return Ok(ThermalSolution {
                density,
                theta,
                log_l_theta: log_l,
                l_theta: log_l.exp(),
                iterations: iter,
                residual,
            });
        }
        if residual > prev_residual {
            alpha = (alpha * 0.5).max(1e-4);
        } else {
            alpha = (alpha * 1.02).min(opts.damping);
        }
        prev_residual = residual;
        last_residual = residual;
        for (m, p) in mu.iter_mut().zip(&phi) {
            *m = (1.0 - alpha) * *m + alpha * p;
        }
    }
    Err(Error::NonConvergence { iterations: opts.max_iter, residual: last_residual })
}

/// Exponent budget used to size truncation boxes: the box edge should sit
/// where the interaction-free density has decayed by about `e^-40`.
const BOX_TAIL_LOG: f64 = 40.0;

/// Largest admissible relative density at the box edge.  Above this the box
/// clips visible mass; far below it the exponent range of f64 is at risk for
/// stiff states.
const EDGE_REL_TOL: f64 = 1e-16;

/// First-guess half-width for a thermal solve at scale `theta`: the radius at
/// which `theta V` alone spends the exponent budget.
pub fn suggest_half_width(potential: &PotentialSpec, theta: f64) -> Result<f64> {
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::parameter("theta", "must be positive and finite"));
    }
    potential.radius_for_level(BOX_TAIL_LOG / theta)
}

/// Largest node value on the box boundary relative to the peak.
fn edge_ratio(density: &DensityField) -> f64 {
    let grid = density.grid();
    let d = grid.dimension();
    let m = grid.points_per_axis();
    let mut idx = vec![0usize; d];
    let mut edge_max: f64 = 0.0;
    for (flat, &value) in density.values().iter().enumerate() {
        grid.multi_index(flat, &mut idx);
        if idx.iter().any(|&i| i == 0 || i == m - 1) {
            edge_max = edge_max.max(value);
        }
    }
    edge_max / density.max_value()
}

/// Thermal solve with automatic box sizing.
///
/// The admissible half-widths form an interval: too small a box clips the
/// density (boundary values above [`EDGE_REL_TOL`] of the peak), too large a
/// box underflows `exp(-theta(2h+V))` at the edge.  Starting from
/// [`suggest_half_width`], cheap coarse-grid probes classify each candidate
/// and a geometric bracket-and-bisect walks into the interval; the final
/// solve then runs at the requested resolution.
pub fn solve_thermal_auto(
    kernel: &KernelSpec,
    potential: &PotentialSpec,
    theta: f64,
    points_per_axis: usize,
    opts: &ThermalOptions,
) -> Result<ThermalSolution> {
    let mut half_width = suggest_half_width(potential, theta)?;
    let probe_points = points_per_axis.min(256);
    let probe_opts =
        ThermalOptions { tol: opts.tol.max(1e-8), damping: opts.damping, max_iter: opts.max_iter };
    let dimension = potential.dimension();

    let mut too_small: Option<f64> = None;
    let mut too_large: Option<f64> = None;
    for _ in 0..48 {
        let probe_grid = Grid::new(dimension, half_width, probe_points)?;
        match solve_thermal_equilibrium(kernel, potential, theta, &probe_grid, &probe_opts) {
            Err(Error::Underflow(_)) => too_large = Some(half_width),
            Err(other) => return Err(other),
            Ok(sol) => {
                if edge_ratio(&sol.density) > EDGE_REL_TOL {
                    too_small = Some(half_width);
                } else {
                    let grid = Grid::new(dimension, half_width, points_per_axis)?;
                    return solve_thermal_equilibrium(kernel, potential, theta, &grid, opts);
                }
            }
        }
        half_width = match (too_small, too_large) {
            (Some(lo), Some(hi)) => (lo * hi).sqrt(),
            (Some(lo), None) => lo * 1.5,
            (None, Some(hi)) => hi * 0.65,
            (None, None) => unreachable!("every probe classifies the half-width"),
        };
    }
    Err(Error::Domain(format!(
        "no admissible box found for theta {theta}; the potential may be too flat or too stiff \
         for this resolution"
    )))
}

/// Controls for the zero-temperature constrained minimization.
#[derive(Debug, Clone, Default)]
pub struct EquilibriumOptions {
    /// Sup-norm tolerance on the optimality (Euler-Lagrange) residual.
    pub tol: f64,
    pub max_iter: usize,
    /// Nodes with mass above this fraction of the peak count as support.
    pub support_threshold: f64,
    /// Optional warm start; resampled onto the solve grid.
    pub init: Option<DensityField>,
}

impl EquilibriumOptions {
    pub fn new() -> EquilibriumOptions {
        EquilibriumOptions {
            tol: 1e-7,
            max_iter: 100_000,
            support_threshold: 1e-6,
            init: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::parameter("tol", "must be positive and finite"));
        }
        if self.max_iter == 0 {
            return Err(Error::parameter("max_iter", "must be at least 1"));
        }
        if !(self.support_threshold > 0.0 && self.support_threshold < 1.0) {
            return Err(Error::parameter("support_threshold", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Converged zero-temperature state.
#[derive(Debug, Clone)]
pub struct EquilibriumSolution {
    pub density: DensityField,
    /// `E(mu) + (1/2) int V dmu`, the constant the field-plus-half-potential
    /// takes on the support at optimality.
    pub c_infinity: f64,
    /// Sup-norm optimality residual, recomputed for the returned density.
    pub el_residual: f64,
    pub iterations: usize,
}

/// Euclidean projection onto the probability simplex `{m >= 0, sum m = 1}`.
///
/// Sort-based exact algorithm: the projection is `max(v - tau, 0)` for the
/// unique threshold `tau` making the result sum to one.
pub fn project_onto_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("non-finite value in simplex projection"));
    let mut cumulative = 0.0;
    let mut tau = 0.0;
    let mut active = 0usize;
    for (k, &x) in sorted.iter().enumerate() {
        cumulative += x;
        let candidate = (cumulative - 1.0) / (k + 1) as f64;
        if x - candidate > 0.0 {
            tau = candidate;
            active = k + 1;
        } else {
            break;
        }
    }
    debug_assert!(active > 0, "projection always keeps at least one coordinate");
    v.iter().map(|&x| (x - tau).max(0.0)).collect()
}

fn kahan_dot(a: &[f64], b: &[f64]) -> f64 {
    kahan_sum(a.iter().zip(b).map(|(&x, &y)| x * y))
}

/// Optimality constant and residual for node masses `m` with interaction
/// field `field` (in mass units) and potential values `v`.
fn optimality_residual(
    m: &[f64],
    field: &[f64],
    v: &[f64],
    support_threshold: f64,
) -> (f64, f64) {
    let c = kahan_dot(m, field) + 0.5 * kahan_dot(m, v);
    let peak = m.iter().copied().fold(0.0f64, f64::max);
    let threshold = support_threshold * peak;
    let mut lower_violation = 0.0f64;
    let mut support_flatness = 0.0f64;
    for i in 0..m.len() {
        let slack = field[i] + 0.5 * v[i] - c;
        lower_violation = lower_violation.max(-slack);
        if m[i] > threshold {
            support_flatness = support_flatness.max(slack.abs());
        }
    }
    (c, lower_violation.max(support_flatness))
}

const STEP_MIN: f64 = 1e-12;
const STEP_MAX: f64 = 1e12;

/// Minimizes `E(mu) + int V dmu` over probability densities on the grid.
///
/// Works in node masses on the simplex with projected gradient steps,
/// Barzilai-Borwein step initialization, and exact quadratic Armijo
/// backtracking (the objective is quadratic, so one convolution per trial
/// evaluates it exactly).  Terminates on the Euler-Lagrange residual: the
/// field plus half potential must be flat on the support and no lower
/// anywhere else.
pub fn solve_equilibrium(
    kernel: &KernelSpec,
    potential: &PotentialSpec,
    grid: &Grid,
    opts: EquilibriumOptions,
) -> Result<EquilibriumSolution> {
    if kernel.dimension() != grid.dimension() || potential.dimension() != grid.dimension() {
        return Err(Error::ShapeMismatch(
            "kernel, potential, and grid dimensions must agree".into(),
        ));
    }
    opts.validate()?;
    let v = potential.values_on(grid)?;
    let n = grid.node_count();
    let h_d = grid.node_volume();

    let mut m: Vec<f64> = match &opts.init {
        Some(density) => density.resample_onto(grid.clone())?.masses(),
        None => vec![1.0 / n as f64; n],
    };
    // Warm starts can carry tiny normalization drift; project it away.
    m = project_onto_simplex(&m);

    let convolver = Convolver::new(grid, kernel);

    // Gershgorin bound on the interaction Hessian (entries are nonnegative):
    // the largest row sum of the Gram matrix caps its spectrum, which gives a
    // step the exact-quadratic Armijo test below provably accepts.  The
    // Barzilai-Borwein proposals are clamped to no less than this, so the
    // backtracking loop always terminates even though the Gram matrix is
    // numerically rank-deficient for smooth kernels.
    let row_max = convolver.apply(&vec![1.0; n]).into_iter().fold(0.0f64, f64::max);
    let guaranteed_step =
        if row_max > 0.0 { (1.0 - 1e-4) / (2.0 * row_max) } else { STEP_MAX };

    let mut field = convolver.apply(&m);
    let mut grad: Vec<f64> = (0..n).map(|i| 2.0 * field[i] + v[i]).collect();
    let mut objective = kahan_dot(&m, &field) + kahan_dot(&m, &v);
    let mut step = 1.0f64.max(guaranteed_step.min(STEP_MAX));

    let mut trial = vec![0.0f64; n];
    let mut iterations = 0usize;
    // A line-search stall near the optimum is sometimes a trajectory
    // artifact rather than the precision floor; a handful of restarts from
    // fresh gradients is allowed as long as each stall still improves the
    // residual markedly.
    let mut restarts_left = 8usize;
    let mut last_stall_residual = f64::INFINITY;
    while iterations < opts.max_iter {
        iterations += 1;

        let (_, residual) = optimality_residual(&m, &field, &v, opts.support_threshold);
        if residual <= opts.tol {
            // Resynchronize from scratch before certifying: the incremental
            // field update drifts over thousands of iterations.
            field = convolver.apply(&m);
            let (c, fresh) = optimality_residual(&m, &field, &v, opts.support_threshold);
            if fresh <= opts.tol {
                let values: Vec<f64> = m.iter().map(|&w| w / h_d).collect();
                let density = DensityField::new(grid.clone(), values)?;
                return Ok(EquilibriumSolution {
                    density,
                    c_infinity: c,
                    el_residual: fresh,
                    iterations,
                });
            }
            grad = (0..n).map(|i| 2.0 * field[i] + v[i]).collect();
            objective = kahan_dot(&m, &field) + kahan_dot(&m, &v);
        }

        // Backtracking over the projection arc with exact quadratic updates.
        // Halving stops at the guaranteed step, which satisfies the test up
        // to roundoff; a rejection there means machine-precision stall.
        let mut accepted = false;
        let mut at_floor = false;
        // Near the optimum the true descent drops below the roundoff of the
        // dot products; a small noise allowance keeps the guaranteed step
        // from being rejected spuriously (termination still rests on the
        // residual checks, not on these micro-steps).
        let noise = 1e-15 * (objective.abs() + 1.0);
        for _ in 0..128 {
            for i in 0..n {
                trial[i] = m[i] - step * grad[i];
            }
            let y = project_onto_simplex(&trial);
            let direction: Vec<f64> = (0..n).map(|i| y[i] - m[i]).collect();
            let descent = kahan_dot(&grad, &direction);
            if descent <= noise {
                let field_direction = convolver.apply(&direction);
                let curvature = kahan_dot(&direction, &field_direction);
                let candidate_objective = objective + descent + curvature;
                if candidate_objective <= objective + 1e-4 * descent + noise {
                    m = y;
                    for i in 0..n {
                        field[i] += field_direction[i];
                        grad[i] += 2.0 * field_direction[i];
                    }
                    objective = candidate_objective;
                    let norm_sq = kahan_dot(&direction, &direction);
                    step = if curvature > 0.0 {
                        (norm_sq / (2.0 * curvature)).clamp(guaranteed_step, STEP_MAX)
                    } else {
                        STEP_MAX
                    };
                    accepted = true;
                    break;
                }
            }
            if at_floor {
                break;
            }
            step *= 0.5;
            if step <= guaranteed_step || step < STEP_MIN {
                step = guaranteed_step.max(STEP_MIN);
                at_floor = true;
            }
        }
        if !accepted {
            // No acceptable step: either converged to roundoff or stuck.
            field = convolver.apply(&m);
            let (c, fresh) = optimality_residual(&m, &field, &v, opts.support_threshold);
            if fresh <= opts.tol {
                let values: Vec<f64> = m.iter().map(|&w| w / h_d).collect();
                let density = DensityField::new(grid.clone(), values)?;
                return Ok(EquilibriumSolution {
                    density,
                    c_infinity: c,
                    el_residual: fresh,
                    iterations,
                });
            }
            if restarts_left > 0 && fresh < 0.9 * last_stall_residual {
                restarts_left -= 1;
                last_stall_residual = fresh;
                for i in 0..n {
                    grad[i] = 2.0 * field[i] + v[i];
                }
                objective = kahan_dot(&m, &field) + kahan_dot(&m, &v);
                step = guaranteed_step.clamp(STEP_MIN, STEP_MAX);
                continue;
            }
            return Err(Error::NonConvergence { iterations, residual: fresh });
        }

        // Periodic from-scratch resync against incremental drift.
        if iterations % 256 == 0 {
            field = convolver.apply(&m);
            for i in 0..n {
                grad[i] = 2.0 * field[i] + v[i];
            }
            objective = kahan_dot(&m, &field) + kahan_dot(&m, &v);
        }
    }
    field = convolver.apply(&m);
    let (_, residual) = optimality_residual(&m, &field, &v, opts.support_threshold);
    Err(Error::NonConvergence { iterations, residual })
}

/// Independent optimality certificate for a candidate minimizer.
#[derive(Debug, Clone)]
pub struct EquilibriumCertificate {
    pub c_infinity: f64,
    /// How far below `c_infinity` the field-plus-half-potential dips anywhere.
    pub lower_violation: f64,
    /// Sup-norm deviation from `c_infinity` on the support.
    pub support_flatness: f64,
    pub support_nodes: usize,
}

impl EquilibriumCertificate {
    pub fn residual(&self) -> f64 {
        self.lower_violation.max(self.support_flatness)
    }
}

/// Recomputes the Euler-Lagrange certificate for a density from scratch:
/// fresh convolution, fresh energies, no solver state.
pub fn certify_equilibrium(
    density: &DensityField,
    kernel: &KernelSpec,
    potential: &PotentialSpec,
    support_threshold: f64,
) -> Result<EquilibriumCertificate> {
    if !(support_threshold > 0.0 && support_threshold < 1.0) {
        return Err(Error::parameter("support_threshold", "must lie in (0, 1)"));
    }
    let field = fields::convolve_field(density, kernel)?;
    let energy = fields::interaction_energy_with_field(density, &field)?;
    let c_infinity = energy + 0.5 * fields::potential_integral(density, potential)?;
    let v = potential.values_on(density.grid())?;
    let threshold = support_threshold * density.max_value();
    let mut lower_violation = 0.0f64;
    let mut support_flatness = 0.0f64;
    let mut support_nodes = 0usize;
    for (i, &mu) in density.values().iter().enumerate() {
        let slack = field.value(i) + 0.5 * v[i] - c_infinity;
        lower_violation = lower_violation.max(-slack);
        if mu > threshold {
            support_flatness = support_flatness.max(slack.abs());
            support_nodes += 1;
        }
    }
    Ok(EquilibriumCertificate { c_infinity, lower_violation, support_flatness, support_nodes })
}

fn check_signed_measure(grid: &Grid, masses: &[f64], kernel: &KernelSpec) -> Result<()> {
    if kernel.dimension() != grid.dimension() {
        return Err(Error::ShapeMismatch("kernel and grid dimensions must agree".into()));
    }
    if masses.len() != grid.node_count() {
        return Err(Error::ShapeMismatch(format!(
            "expected {} node masses, got {}",
            grid.node_count(),
            masses.len()
        )));
    }
    if masses.iter().any(|m| !m.is_finite()) {
        return Err(Error::NonFinite("signed measure mass".into()));
    }
    Ok(())
}

/// Interaction field of a signed grid measure (arbitrary node masses) at
/// every node.  Signed measures arise in the variational mass-bound checks;
/// probability densities should go through the field types instead.
pub fn signed_measure_field(
    grid: &Grid,
    masses: &[f64],
    kernel: &KernelSpec,
) -> Result<Vec<f64>> {
    check_signed_measure(grid, masses, kernel)?;
    Ok(Convolver::new(grid, kernel).apply(masses))
}

/// Interaction energy of a signed grid measure: `sum_ij g(x_i - x_j) m_i m_j`.
/// Nonnegative for kernels with nonnegative transform, whatever the signs of
/// the masses.
pub fn signed_measure_energy(grid: &Grid, masses: &[f64], kernel: &KernelSpec) -> Result<f64> {
    check_signed_measure(grid, masses, kernel)?;
    let field = Convolver::new(grid, kernel).apply(masses);
    Ok(kahan_dot(masses, &field))
}

/// Witness report for the lower bound `1/g(0)` on the mass of measures whose
/// interaction field stays at or below one.
#[derive(Debug, Clone)]
pub struct MassBoundReport {
    /// The bound itself: `1/g(0)`.
    pub mass_lower_bound: f64,
    /// Interaction energy of the witness measure; attains the bound.
    pub achieved_energy: f64,
    /// Node carrying the witness point mass (nearest node to the origin).
    pub witness_node: usize,
    /// Interaction field of the witness at its own node; equals one exactly.
    pub field_at_witness: f64,
    /// Largest field value anywhere on the grid; at most one for kernels
    /// peaked at the origin.
    pub field_max: f64,
}

/// Builds the extremal witness for the mass bound: a single point mass
/// `1/g(0)` at the node nearest the origin saturates the unit-field
/// constraint exactly, proving the bound is attained.
pub fn mass_bound_witness(kernel: &KernelSpec, grid: &Grid) -> Result<MassBoundReport> {
    if kernel.dimension() != grid.dimension() {
        return Err(Error::ShapeMismatch("kernel and grid dimensions must agree".into()));
    }
    let g0 = kernel.g0();
    if !(g0 > 0.0 && g0.is_finite()) {
        return Err(Error::parameter("kernel", "kernel value at the origin must be positive"));
    }
    let d = grid.dimension();
    let witness_node = grid.flat_index(&vec![grid.points_per_axis() / 2; d]);
    let mut weights = vec![0.0; grid.node_count()];
    weights[witness_node] = 1.0 / g0;
    let field = Convolver::new(grid, kernel).apply(&weights);
    let field_max = field.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let achieved_energy = kahan_dot(&weights, &field);
    Ok(MassBoundReport {
        mass_lower_bound: 1.0 / g0,
        achieved_energy,
        witness_node,
        field_at_witness: field[witness_node],
        field_max,
    })
}

/// One scale in a normalization-asymptotics table.
#[derive(Debug, Clone)]
pub struct LThetaRow {
    pub theta: f64,
    /// `-(1/theta) log L_theta`.
    pub scaled_log: f64,
    /// Distance of the scaled log to twice the zero-temperature constant.
    pub gap: f64,
}

/// Trend of the normalization integrals against the zero-temperature limit.
#[derive(Debug, Clone)]
pub struct LThetaTrend {
    pub rows: Vec<LThetaRow>,
    /// Whether the gaps shrink strictly as `theta` grows.
    pub gaps_strictly_shrink: bool,
}

/// Tabulates `-(1/theta) log L_theta` against `2 c_infinity` for a family of
/// scales, reporting whether the gaps shrink monotonically.
pub fn l_theta_asymptotics(
    scales: &[(f64, f64)],
    c_infinity: f64,
) -> Result<LThetaTrend> {
    if scales.len() < 2 {
        return Err(Error::parameter("scales", "need at least two scales to see a trend"));
    }
    if !c_infinity.is_finite() {
        return Err(Error::NonFinite("c_infinity".into()));
    }
    let mut rows = Vec::with_capacity(scales.len());
    let mut previous_theta = 0.0;
    for &(theta, log_l) in scales {
        if !(theta > 0.0 && theta.is_finite()) || !log_l.is_finite() {
            return Err(Error::parameter("scales", "scales must be positive with finite logs"));
        }
        if theta <= previous_theta {
            return Err(Error::parameter("scales", "scales must be strictly increasing"));
        }
        previous_theta = theta;
        let scaled_log = -log_l / theta;
        rows.push(LThetaRow { theta, scaled_log, gap: (scaled_log - 2.0 * c_infinity).abs() });
    }
    let gaps_strictly_shrink = rows.windows(2).all(|w| w[1].gap < w[0].gap);
    Ok(LThetaTrend { rows, gaps_strictly_shrink })
}
