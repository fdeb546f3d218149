use nalgebra::DVector;
use nonlocal_core::discretization::*;
use nonlocal_core::kernelcore::{ConstantIsotropic, KernelSpec, ScalarModulated};
use nonlocal_core::operators::ScalarField;
use nonlocal_core::quadrature::QuadratureBudget;
use nonlocal_core::solvers::*;
use proptest::prelude::*;

fn budget() -> QuadratureBudget {
    QuadratureBudget::new(4, 12, 1e-9).unwrap()
}

fn plume_system(h: f64, drift: f64) -> (Grid, DiscreteSystem) {
    let grid = build_grid(&[(-1.0, 1.0)], h, 0.25).unwrap();
    let spec = KernelSpec::new(1, 0.6).unwrap();
    let v = move |_: f64| drift;
    let sys = assemble_system(
        &grid,
        &spec,
        &ConstantIsotropic::identity(1),
        Some(&v),
        &|_| 0.0,
        &budget(),
        Execution::Serial,
    )
    .unwrap();
    (grid, sys)
}

fn plume_moments(h: f64) -> Vec<(f64, f64)> {
    let (grid, sys) = plume_system(h, 0.8);
    let plume = ScalarField::truncated_gaussian(0.15, 0.45).unwrap().shifted(-0.5);
    let u0 = DiscreteFunction::interpolate(&grid, |x| plume.at(x)).unwrap();
    let zero = DVector::zeros(grid.dofs());
    let cfg = TimeSteppingConfig::backward_euler(0.5, 0.01).unwrap();
    let (traj, _) = solve_transport(&sys, &u0, &|_| zero.clone(), &cfg).unwrap();
    traj.states
        .iter()
        .map(|u| {
            let (m, first) = mass_and_first_moment(&grid, u);
            (m, first / m)
        })
        .collect()
}

#[test]
fn plume_drifts_and_decays_like_the_fine_run() {
    let coarse = plume_moments(1.0 / 32.0);
    let fine = plume_moments(1.0 / 128.0);
    for w in coarse.windows(2).chain(fine.windows(2)) {
        assert!(w[1].1 > w[0].1, "centre of mass must advance: {:?}", w);
        assert!(w[1].0 < w[0].0, "mass must decay: {:?}", w);
    }
    let (c, f) = (coarse.last().unwrap(), fine.last().unwrap());
    assert!((c.1 - f.1).abs() < 2e-2, "centre {} vs {}", c.1, f.1);
    assert!((c.0 - f.0).abs() < 2e-2 * f.0, "mass {} vs {}", c.0, f.0);
}

#[test]
fn zero_drift_transport_matches_parabolic_bitwise() {
    let (grid, sys) = plume_system(1.0 / 32.0, 0.0);
    let plume = ScalarField::truncated_gaussian(0.15, 0.45).unwrap().shifted(-0.5);
    let u0 = DiscreteFunction::interpolate(&grid, |x| plume.at(x)).unwrap();
    let zero = DVector::zeros(grid.dofs());
    let cfg = TimeSteppingConfig::new(0.3, 0.02, 0.5, 3).unwrap();
    let a = solve_transport(&sys, &u0, &|_| zero.clone(), &cfg).unwrap();
    let b = solve_parabolic(&sys, &u0, &|_| zero.clone(), &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn transport_is_implicitly_stable_for_any_step() {
    let (grid, sys) = plume_system(1.0 / 32.0, 0.8);
    let plume = ScalarField::truncated_gaussian(0.15, 0.45).unwrap().shifted(-0.5);
    let u0 = DiscreteFunction::interpolate(&grid, |x| plume.at(x)).unwrap();
    let zero = DVector::zeros(grid.dofs());
    for dt in [0.001, 0.1, 2.0] {
        let cfg = TimeSteppingConfig::backward_euler(4.0 * dt, dt).unwrap();
        let (traj, _) = solve_transport(&sys, &u0, &|_| zero.clone(), &cfg).unwrap();
        assert!(traj.l2_sq_per_step.windows(2).all(|w| w[1] <= w[0]));
    }
}

#[test]
fn crank_nicolson_is_second_order_in_time() {
    let grid = build_grid(&[(-1.0, 1.0)], 1.0 / 16.0, 0.25).unwrap();
    let spec = KernelSpec::new(1, 0.5).unwrap();
    let sys = assemble_system(
        &grid,
        &spec,
        &ConstantIsotropic::identity(1),
        None,
        &|_| 0.0,
        &budget(),
        Execution::Serial,
    )
    .unwrap();
    let u0 = DiscreteFunction::interpolate(&grid, |x| (1.0 - x * x).powi(2)).unwrap();
    let zero = DVector::zeros(grid.dofs());
    let run = |dt: f64, theta: f64| {
        let cfg = TimeSteppingConfig::new(0.5, dt, theta, 1).unwrap();
        solve_parabolic(&sys, &u0, &|_| zero.clone(), &cfg)
            .unwrap()
            .0
            .last()
            .coeffs
    };
    let reference = run(0.5 / 1024.0, 0.5);
    let err = |dt: f64, theta: f64| (run(dt, theta) - &reference).amax();
    let cn = err(0.05, 0.5) / err(0.025, 0.5);
    let be = err(0.05, 1.0) / err(0.025, 1.0);
    assert!(cn > 3.5, "Crank–Nicolson ratio {cn}");
    assert!(be > 1.8 && be < 2.3, "backward Euler ratio {be}");
}

#[test]
fn serial_runs_are_bit_reproducible() {
    let grid = build_grid(&[(-1.0, 1.0)], 1.0 / 16.0, 0.25).unwrap();
    let spec = KernelSpec::new(1, 0.5).unwrap();
    let field = ScalarModulated::sinusoidal(1, 2.0, 1.0).unwrap();
    let run = || {
        let sys = assemble_system(&grid, &spec, &field, None, &|_| 1.0, &budget(), Execution::Serial).unwrap();
        let u0 = DiscreteFunction::interpolate(&grid, |x| 1.0 - x.abs()).unwrap();
        let load = sys.load.clone();
        solve_parabolic(
            &sys,
            &u0,
            &|_| load.clone(),
            &TimeSteppingConfig::backward_euler(0.2, 0.02).unwrap(),
        )
        .unwrap()
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn implicit_steps_never_increase_l2(dt in 1e-3f64..1.0, seed in 0u64..1000) {
        let grid = build_grid(&[(-1.0, 1.0)], 0.125, 0.25).unwrap();
        let spec = KernelSpec::new(1, 0.5).unwrap();
        let sys = assemble_system(&grid, &spec, &ScalarModulated::sinusoidal(1, 2.0, 1.0).unwrap(), None, &|_| 0.0, &budget(), Execution::Serial).unwrap();
        let u0 = DiscreteFunction::interpolate(&grid, |x| ((seed as f64 + 1.0) * x).sin()).unwrap();
        let zero = DVector::zeros(grid.dofs());
        let (traj, ledger) = solve_parabolic(&sys, &u0, &|_| zero.clone(), &TimeSteppingConfig::backward_euler(5.0 * dt, dt).unwrap()).unwrap();
        prop_assert!(traj.l2_sq_per_step.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(ledger.all_finite());
    }

    #[test]
    fn elliptic_solve_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let grid = build_grid(&[(-1.0, 1.0)], 0.125, 0.25).unwrap();
        let spec = KernelSpec::new(1, 0.4).unwrap();
        let field = ConstantIsotropic::identity(1);
        let mut sys = assemble_system(&grid, &spec, &field, None, &|x| x.cos(), &budget(), Execution::Serial).unwrap();
        let f1 = sys.load.clone();
        let f2 = assemble_load(&grid, &|x| x * x).unwrap();
        let u1 = { sys.load = f1.clone(); solve_elliptic(&sys).unwrap().coeffs };
        let u2 = { sys.load = f2.clone(); solve_elliptic(&sys).unwrap().coeffs };
        sys.load = &f1 * a + &f2 * b;
        let u = solve_elliptic(&sys).unwrap().coeffs;
        prop_assert!((u - (u1 * a + u2 * b)).amax() < 1e-10 * (1.0 + a.abs() + b.abs()));
    }
}
