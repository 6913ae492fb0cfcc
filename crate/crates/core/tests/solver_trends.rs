//! Cross-solver trend checks through the public API: the finite-temperature
//! states must approach the zero-temperature equilibrium as the inverse
//! temperature grows, and the normalization constants must follow suit.

use plab_core::equilibrium::{
    certify_equilibrium, l_theta_asymptotics, solve_equilibrium, solve_thermal_auto,
    EquilibriumOptions, ThermalOptions,
};
use plab_core::fields::{entropy, free_energy, l1_distance, local_average_error};
use plab_core::grid::Grid;
use plab_core::kernels::{make_gaussian_kernel, make_quadratic_potential};

const THETAS: [f64; 3] = [10.0, 100.0, 1000.0];

#[test]
fn thermal_states_approach_the_zero_temperature_limit() {
    let kernel = make_gaussian_kernel(1, 1.0, 1.0).unwrap();
    let potential = make_quadratic_potential(1, 1.0).unwrap();

    let grid = Grid::new(1, 2.0, 512).unwrap();
    let equilibrium =
        solve_equilibrium(&kernel, &potential, &grid, EquilibriumOptions::new()).unwrap();

    let opts = ThermalOptions::default();
    let mut l1_gaps = Vec::new();
    let mut local_gaps = Vec::new();
    let mut objectives = Vec::new();
    let mut entropies = Vec::new();
    for &theta in THETAS.iter() {
        let thermal = solve_thermal_auto(&kernel, &potential, theta, 1024, &opts).unwrap();
        let resampled = thermal.density.resample_onto(grid.clone()).unwrap();
        l1_gaps.push(l1_distance(&resampled, &equilibrium.density).unwrap());
        // Shrinking-ball averages around a generic interior point, compared
        // against the pointwise equilibrium value there.
        let radius = theta.powf(-0.5);
        let center = [0.25];
        let reference = equilibrium.density.interpolate_at(&center).unwrap();
        local_gaps.push(local_average_error(&resampled, reference, &center, radius).unwrap());
        objectives.push(free_energy(&resampled, &kernel, &potential, f64::INFINITY).unwrap());
        entropies.push(entropy(&thermal.density));
    }

    for pair in l1_gaps.windows(2) {
        assert!(pair[1] < pair[0], "L1 distance to the equilibrium state must shrink: {l1_gaps:?}");
    }
    for pair in local_gaps.windows(2) {
        assert!(pair[1] < pair[0], "local average error must shrink: {local_gaps:?}");
    }

    // The zero-temperature objective decreases toward its minimum value.
    let best = free_energy(&equilibrium.density, &kernel, &potential, f64::INFINITY).unwrap();
    for pair in objectives.windows(2) {
        assert!(pair[1] < pair[0], "objective must decrease along theta: {objectives:?}");
    }
    for &f in &objectives {
        assert!(f >= best - 1e-9, "thermal objective {f} undercuts the minimum {best}");
    }

    // Entropy integral of the thermal state grows toward the equilibrium one.
    for pair in entropies.windows(2) {
        assert!(pair[1] > pair[0], "entropy integral must grow with theta: {entropies:?}");
    }
}

#[test]
fn scaled_log_normalizations_shrink_toward_twice_the_constant() {
    let kernel = make_gaussian_kernel(1, 1.0, 1.0).unwrap();
    let potential = make_quadratic_potential(1, 1.0).unwrap();
    let grid = Grid::new(1, 2.0, 512).unwrap();
    let equilibrium =
        solve_equilibrium(&kernel, &potential, &grid, EquilibriumOptions::new()).unwrap();

    let opts = ThermalOptions::default();
    let mut scales = Vec::new();
    for &theta in THETAS.iter() {
        let thermal = solve_thermal_auto(&kernel, &potential, theta, 1024, &opts).unwrap();
        scales.push((theta, thermal.log_l_theta));
    }
    let trend = l_theta_asymptotics(&scales, equilibrium.c_infinity).unwrap();
    assert!(
        trend.gaps_strictly_shrink,
        "|-(1/theta) log L_theta - 2 c_infinity| must shrink along theta: {:?}",
        trend.rows
    );
}

#[test]
fn stiff_thermal_state_warm_starts_the_equilibrium_solver() {
    // Cross-check initialization: a very cold thermal state is already close
    // to the zero-temperature minimizer, so starting the projected-gradient
    // solve from it must certify at the same tolerance and land on the same
    // multiplier as the cold start.
    let kernel = make_gaussian_kernel(1, 1.0, 1.0).unwrap();
    let potential = make_quadratic_potential(1, 1.0).unwrap();
    let grid = Grid::new(1, 2.0, 512).unwrap();

    let cold = solve_equilibrium(&kernel, &potential, &grid, EquilibriumOptions::new()).unwrap();

    // theta = 1e3 is the coldest state the damped fixed-point solver reaches
    // with its damping floor; it is also the zero-temperature proxy used for
    // the entropy comparison, so it is the natural warm-start source.
    let thermal =
        solve_thermal_auto(&kernel, &potential, 1.0e3, 1024, &ThermalOptions::default()).unwrap();
    let mut opts = EquilibriumOptions::new();
    opts.init = Some(thermal.density.resample_onto(grid.clone()).unwrap());
    let warm = solve_equilibrium(&kernel, &potential, &grid, opts).unwrap();

    assert!(warm.el_residual <= 1e-7);
    let cert = certify_equilibrium(&warm.density, &kernel, &potential, 1e-6).unwrap();
    assert!((cert.residual() - warm.el_residual).abs() <= 1e-12);
    assert!(
        (warm.c_infinity - cold.c_infinity).abs() <= 1e-7,
        "multiplier moved between inits: {} vs {}",
        warm.c_infinity,
        cold.c_infinity
    );
}
