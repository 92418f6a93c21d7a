use approx::assert_relative_eq;
use phonon_core::material::{reduce_interface_coefficients, temperature_deviation, InterfaceError, Law};
use phonon_core::measurement::{loss, measurement_functional, TestFunction};
use phonon_core::reflection::eta_tanh;
use phonon_core::solver::{solve, Coupling, SolverConfig};
use phonon_core::{GridSpec, MaterialModel, PhaseSpaceGrid, ReflectionModel, SourceSpec};
use proptest::prelude::*;

fn small_grid(eps: f64) -> PhaseSpaceGrid {
    GridSpec { n_mu: 8, n_omega: 4, omega_min: 0.6, d_omega: 0.3, dx_cap: 0.05, ..GridSpec::desk() }
        .build(eps, 1.5)
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn interface_net_flux_vanishes(eta_t in 0.0f64..=1.0, c in 0.05f64..=1.0, nu_t in 0.05f64..10.0, nu_s in 0.05f64..10.0) {
        // independent evaluation of the derived coefficients
        let zeta_t = (1.0 - eta_t) / c;
        let zeta_s = nu_t / nu_s * (1.0 - eta_t);
        let eta_s = 1.0 - nu_t / nu_s * zeta_t;
        let valid = [zeta_t, zeta_s, eta_s].iter().all(|v| (0.0..=1.0).contains(v));
        match reduce_interface_coefficients(eta_t, nu_t, nu_s, c) {
            Ok(k) => {
                prop_assert!(valid);
                let scale = nu_t + nu_s;
                prop_assert!((nu_t - nu_t * k.eta_t - nu_s * k.zeta_s).abs() <= 1e-12 * scale);
                prop_assert!((nu_s - nu_s * k.eta_s - nu_t * k.zeta_t).abs() <= 1e-12 * scale);
            }
            Err(InterfaceError::OutOfRange { value, .. }) => {
                prop_assert!(!valid);
                prop_assert!(!(0.0..=1.0).contains(&value));
            }
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }

    #[test]
    fn tanh_reflection_stays_in_unit_interval(omega in 0.0f64..5.0, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let v = eta_tanh(omega, a, b);
        prop_assert!((0.0..=1.0).contains(&v));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn c_tau_scales_with_heat_capacity(k in 0.01f64..100.0, p in -1.5f64..1.5) {
        let grid = small_grid(1.0);
        let base = MaterialModel { c_omega: Law::PowerLaw { coeff: 1.0, exponent: p }, ..MaterialModel::default() };
        let scaled = MaterialModel { c_omega: Law::PowerLaw { coeff: k, exponent: p }, ..MaterialModel::default() };
        let a = base.on_grid(&grid).unwrap().c_tau;
        let b = scaled.on_grid(&grid).unwrap().c_tau;
        prop_assert!((b - k * a).abs() <= 1e-12 * b.abs());
    }

    #[test]
    fn temperature_is_linear_in_the_field(seed in prop::collection::vec(-1.0f64..1.0, 32), alpha in -3.0f64..3.0) {
        let grid = small_grid(1.0);
        let nodal = MaterialModel::default().on_grid(&grid).unwrap();
        let ones = vec![1.0; grid.n_channels()];
        let scaled: Vec<f64> = seed.iter().map(|v| alpha * v).collect();
        let sum: Vec<f64> = seed.iter().zip(&ones).map(|(a, b)| a + b).collect();
        let t = |r: &[f64]| temperature_deviation(r, &nodal, &grid, nodal.c_tau);
        prop_assert!((t(&scaled) - alpha * t(&seed)).abs() <= 1e-12 * (1.0 + t(&seed).abs() * alpha.abs()));
        prop_assert!((t(&sum) - t(&seed) - t(&ones)).abs() <= 1e-12 * (1.0 + t(&ones).abs()));
    }

    #[test]
    fn loss_is_a_nonnegative_mean_square(d in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..5), shift in -1.0f64..1.0) {
        let m: Vec<Vec<f64>> = d.iter().map(|r| r.iter().map(|v| v + shift).collect()).collect();
        let l = loss(&m, &d).unwrap();
        prop_assert!(l >= 0.0);
        prop_assert!((l - shift * shift).abs() <= 1e-12);
        prop_assert_eq!(loss(&d, &d).unwrap(), 0.0);
    }

    #[test]
    fn measurement_is_linear_in_trace(a in prop::collection::vec(-2.0f64..2.0, 101), alpha in -3.0f64..3.0, theta in 0.05f64..0.4) {
        let t: Vec<f64> = (0..101).map(|k| k as f64 * 0.01).collect();
        let b: Vec<f64> = t.iter().map(|x| x * x).collect();
        let combo: Vec<f64> = a.iter().zip(&b).map(|(x, y)| alpha * x + y).collect();
        for test in [TestFunction::Smooth { t1: 0.5, theta }, TestFunction::GridDelta { t1: 0.437 }] {
            let m = |v: &[f64]| measurement_functional(&t, v, &test).unwrap();
            prop_assert!((m(&combo) - alpha * m(&a) - m(&b)).abs() <= 1e-12 * (1.0 + m(&a).abs() * alpha.abs() + m(&b).abs()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn response_is_linear_in_source_amplitude(alpha in 0.1f64..10.0, eps in 0.3f64..2.0) {
        let grid = small_grid(eps);
        let source = SourceSpec::smooth(0.5, 0.7, 0.5);
        let base = solve(&SolverConfig::new(eps, ReflectionModel::default(), source.clone(), 0.5), &grid, &MaterialModel::default()).unwrap();
        let cfg = SolverConfig::new(eps, ReflectionModel::default(), source.with_amplitude(alpha), 0.5);
        let scaled = solve(&cfg, &grid, &MaterialModel::default()).unwrap();
        let peak = base.delta_t.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (x, y) in base.delta_t.iter().zip(&scaled.delta_t) {
            prop_assert!((y - alpha * x).abs() <= 1e-12 * alpha * peak);
        }
    }

    #[test]
    fn field_stays_between_zero_and_source_bound(eta in 0.5f64..=1.0, eps in 0.2f64..2.0, coupled in any::<bool>()) {
        let grid = small_grid(eps);
        let mut cfg = SolverConfig::new(eps, ReflectionModel::Constant { value: eta }, SourceSpec::smooth(0.5, 0.7, 0.5), 1.0);
        if coupled {
            cfg.coupling = Coupling::coupled_default();
        }
        cfg.probes.check_invariants = true;
        let d = solve(&cfg, &grid, &MaterialModel::default()).unwrap().diagnostics;
        prop_assert!(d.min_value >= 0.0);
        prop_assert!(d.max_over_c_omega <= d.c_m * (1.0 + 1e-12));
        prop_assert!(d.max_conservation_ratio <= 1e-12);
    }
}

#[test]
fn c_tau_of_paper_materials() {
    // 2 · Σ_i Δω · ω_i over 40 nodes with Δω = 0.05
    let grid = GridSpec::paper().build(1.0, 2.0).unwrap();
    let nodal = MaterialModel::default().on_grid(&grid).unwrap();
    let oracle: f64 = (1..=40).map(|i| 2.0 * 0.05 * (0.05 * i as f64)).sum();
    assert_relative_eq!(nodal.c_tau, oracle, epsilon = 1e-12);
}

#[test]
fn narrow_smooth_tests_approach_the_grid_delta_reading() {
    use phonon_core::measurement::round_trip_time;
    let eps = 1.0;
    let grid = GridSpec::desk().build(eps, 2.0).unwrap();
    let material = MaterialModel::default();
    let dt = grid.dt;
    let mut worst = [0.0f64; 2];
    for &omega in &grid.omega {
        let t1 = round_trip_time(grid.x_max, eps, 0.925, omega);
        let cfg = SolverConfig::new(eps, ReflectionModel::default(), SourceSpec::grid_delta(0.925, omega), 1.5 * t1);
        let out = solve(&cfg, &grid, &material).unwrap();
        let m = |test| measurement_functional(&out.times, &out.delta_t, &test).unwrap();
        let delta = m(TestFunction::GridDelta { t1 });
        for (w, k) in worst.iter_mut().zip([4.0, 2.0]) {
            let theta = k * dt;
            *w = w.max((m(TestFunction::Smooth { t1, theta }) / theta - delta).abs());
        }
    }
    assert!(worst[1] < worst[0], "{worst:?}");
}
