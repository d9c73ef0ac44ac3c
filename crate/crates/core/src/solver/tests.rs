use std::f64::consts::PI;
use std::ops::ControlFlow;

use nalgebra::{DMatrix, DVector};

use super::*;
use crate::energy::EnergyReport;

fn cfg(n_x: usize, n_z: usize) -> SolverConfig {
    SolverConfig {
        n_x,
        n_z,
        ..SolverConfig::default()
    }
}

fn solver(c: SolverConfig) -> Solver {
    Solver::new(c).unwrap()
}

#[test]
fn temperature_step_keeps_zero_and_flat_states() {
    let s = solver(cfg(16, 17));
    let g = s.grid().clone();
    let zero = InterfaceField::zeros(&g);
    for level in [0.0, 0.1] {
        let rho = InterfaceField::constant(&g, level);
        let u = s.temperature_step(&rho, &zero, &BulkField::zeros(&g)).unwrap();
        assert!(u.max_abs() < 1e-14);
    }
}

#[test]
fn temperature_step_matches_dense_direct_solve() {
    let n_z = 33;
    let dt = 1e-2;
    let s = solver(SolverConfig { dt, ..cfg(8, n_z) });
    let g = s.grid().clone();
    let zero = InterfaceField::zeros(&g);
    let u_old = BulkField::from_fn(&g, |_, z| (PI * z).cos());
    let u = s.temperature_step(&zero, &zero, &u_old).unwrap();

    // Independent assembly: (I/dt − ∂zz) u = u_old/dt, u(0) = 0, ghost-node walls.
    let h = 2.0 / (n_z - 1) as f64;
    let c = (n_z - 1) / 2;
    let mut m = DMatrix::<f64>::zeros(n_z, n_z);
    let mut b = DVector::<f64>::zeros(n_z);
    for j in 0..n_z {
        let z = -1.0 + j as f64 * h;
        if j == c {
            m[(j, j)] = 1.0;
            continue;
        }
        m[(j, j)] = 1.0 / dt + 2.0 / (h * h);
        let (lo, hi) = match j {
            0 => (None, Some(1)),
            j if j == n_z - 1 => (Some(n_z - 2), None),
            j => (Some(j - 1), Some(j + 1)),
        };
        let wall = lo.is_none() || hi.is_none();
        for nb in [lo, hi].into_iter().flatten() {
            m[(j, nb)] -= if wall { 2.0 } else { 1.0 } / (h * h);
        }
        b[j] = (PI * z).cos() / dt;
    }
    let expect = m.lu().solve(&b).unwrap();
    for j in 0..n_z {
        for i in 0..g.n_x() {
            assert!((u.get(i, j) - expect[j]).abs() < 1e-11, "row {j}");
        }
    }
    // Far from z = 0 the step is close to the pure heat decay.
    let far = u.get(0, 0);
    assert!((far - (-1.0) / (1.0 + PI * PI * dt)).abs() < 0.05);
}

#[test]
fn interface_step_examples() {
    let g = Grid::new(16, 17).unwrap();
    let u = BulkField::zeros(&g);
    let rho = InterfaceField::zeros(&g);
    let s = solver(SolverConfig { epsilon: 1.0, ..cfg(16, 17) });
    let r = InterfaceField::from_fn(&g, f64::sin);
    let rate = s.regularized_rate(&r);
    for (a, x) in rate.values().iter().zip(g.tangential.nodes()) {
        assert!((a - x.sin() / 2.0).abs() < 1e-14);
    }
    let rate = s.regularized_rate(&InterfaceField::constant(&g, 0.3));
    assert!(rate.values().iter().all(|v| (v - 0.3).abs() < 1e-15));
    let s0 = solver(cfg(16, 17));
    assert_eq!(s0.regularized_rate(&r), r);
    assert_eq!(s0.interface_step(&rho, &u, &rho).unwrap(), rho);
}

#[test]
fn interface_step_moves_with_the_jump() {
    let c = SolverConfig { dt: 0.1, ..cfg(16, 33) };
    let s = solver(c);
    let g = s.grid().clone();
    // u = |z| has [u_n]⁻₊ = −1 − 1 = −2.
    let u = BulkField::from_fn(&g, |_, z| z.abs());
    let rho = InterfaceField::zeros(&g);
    let next = s.interface_step(&rho, &u, &rho).unwrap();
    assert!(next.values().iter().all(|v| (v + 0.2).abs() < 1e-12));
}

#[test]
fn flat_steady_state_is_a_one_iteration_fixed_point() {
    for coupling in [Coupling::Linearized, Coupling::Picard] {
        let s = solver(SolverConfig { coupling, ..cfg(16, 17) });
        let g = s.grid().clone();
        let st = s
            .initial_state(BulkField::zeros(&g), InterfaceField::constant(&g, 0.1))
            .unwrap();
        let next = s.fixed_point_step(&st).unwrap();
        assert_eq!(next.step.inner_iters, 1);
        assert_eq!(next.u, st.u);
        assert_eq!(next.rho, st.rho);
        assert!((next.t - 1e-3).abs() < 1e-18);
    }
}

fn small_state(s: &Solver, amp: f64) -> State {
    let g = s.grid().clone();
    let rho = InterfaceField::from_fn(&g, |x| amp * (x.sin() + 0.3 * (2.0 * x).cos()));
    let u = s.compatible_temperature(&rho).unwrap();
    s.initial_state(u, rho).unwrap()
}

#[test]
fn inner_iteration_contracts_on_small_data() {
    let s = solver(SolverConfig { epsilon: 1e-2, ..cfg(32, 33) });
    let mut st = small_state(&s, 1e-3);
    for _ in 0..3 {
        st = s.fixed_point_step(&st).unwrap();
        let ratios = st.step.ratios();
        assert!(!ratios.is_empty());
        assert!(ratios.iter().all(|&r| r < 1.0), "{ratios:?}");
    }
}

#[test]
fn both_couplings_reach_the_same_fixed_point() {
    let base = SolverConfig {
        epsilon: 0.5,
        dt: 1e-3,
        fp_tol: 1e-13,
        ..cfg(16, 17)
    };
    let lin = solver(base.clone());
    let pic = solver(SolverConfig { coupling: Coupling::Picard, ..base });
    let st = small_state(&lin, 1e-2);
    let a = lin.fixed_point_step(&st).unwrap();
    let b = pic.fixed_point_step(&st).unwrap();
    assert!(a.u.sub(&b.u).max_abs() < 1e-10);
    assert!(a.rho.sub(&b.rho).max_abs() < 1e-12);
    assert!(a.step.inner_iters <= b.step.inner_iters);
}

#[test]
fn huge_step_exhausts_the_inner_iteration() {
    let s = solver(SolverConfig {
        dt: 10.0,
        coupling: Coupling::Picard,
        fp_max_iter: 20,
        ..cfg(32, 65)
    });
    let st = small_state(&s, 1e-2);
    match s.fixed_point_step(&st) {
        Err(StefanError::FixedPoint { ratio, .. }) => assert!(!(ratio < 1.0)),
        other => panic!("expected a fixed-point failure, got {other:?}"),
    }
}

#[test]
fn halving_retry_recovers_a_failed_step() {
    let base = SolverConfig {
        dt: 0.05,
        coupling: Coupling::Picard,
        epsilon: 1e-3,
        fp_max_iter: 40,
        ..cfg(16, 17)
    };
    let plain = solver(base.clone());
    let st = small_state(&plain, 1e-3);
    assert!(matches!(plain.advance(&st), Err(StefanError::FixedPoint { .. })));
    let retry = solver(SolverConfig { max_halvings: 6, ..base });
    let next = retry.advance(&st).unwrap();
    assert!(next.step.halvings >= 1);
    assert!((next.t - 0.05).abs() < 1e-15);
    assert_eq!(next.rho_prev, st.rho);
}

#[test]
fn compatible_temperature_solves_the_steady_problem() {
    let s = solver(cfg(32, 33));
    let g = s.grid().clone();
    let rho = InterfaceField::from_fn(&g, |x| 0.05 * x.cos());
    let u = s.compatible_temperature(&rho).unwrap();
    let kappa = crate::hanzawa::curvature(&rho, &g).unwrap();
    assert_eq!(u.row(g.center()), kappa.values());
    let co = crate::hanzawa::coefficients(&rho, &InterfaceField::zeros(&g), s.cutoff(), &g).unwrap();
    let r = apply_spatial(&u, &co, &g);
    assert!(r.max_abs() < 1e-9 * (2.0 / (g.dz() * g.dz())));
}

#[test]
fn accepted_steps_satisfy_the_trace_condition() {
    let s = solver(SolverConfig { epsilon: 1e-2, ..cfg(32, 33) });
    let mut st = small_state(&s, 1e-3);
    for _ in 0..5 {
        st = s.fixed_point_step(&st).unwrap();
        let kappa = crate::hanzawa::curvature(&st.rho, s.grid()).unwrap();
        assert_eq!(st.u.row(s.grid().center()), kappa.values());
        assert!(st.step.trace_defect < 1e-9);
    }
}

#[test]
fn crank_nicolson_takes_a_step() {
    let s = solver(SolverConfig {
        scheme: TimeScheme::CrankNicolson,
        epsilon: 1e-2,
        ..cfg(16, 17)
    });
    let mut st = small_state(&s, 1e-3);
    for _ in 0..3 {
        st = s.fixed_point_step(&st).unwrap();
    }
    assert!(st.rho.max_abs() < 1.3e-3);
}

#[test]
fn run_with_no_time_reports_only_the_initial_state() {
    let s = solver(cfg(16, 17));
    let st = small_state(&s, 1e-3);
    let out = s.run(st.clone(), 0.0, &mut NoObserver).unwrap();
    assert_eq!(out.reports.len(), 1);
    assert!(out.steps.is_empty());
    assert_eq!(out.final_state, st);
}

#[test]
fn run_attaches_identity_to_the_previous_report() {
    let s = solver(SolverConfig { epsilon: 1e-2, ..cfg(16, 17) });
    let st = small_state(&s, 1e-3);
    let mut seen = 0;
    let mut obs = |_: &State, _: &EnergyReport| {
        seen += 1;
        ControlFlow::Continue(())
    };
    let out = s.run(st, 5e-3, &mut obs).unwrap();
    assert_eq!(seen, 6);
    assert_eq!(out.reports.len(), 6);
    assert!(out.reports[0].identity_residual.is_none());
    assert!(out.reports[1..5].iter().all(|r| r.identity_residual.is_some()));
    assert!(out.reports[5].identity_residual.is_none());
}

#[test]
fn config_round_trips_and_rejects_unknown_keys() {
    let c = SolverConfig {
        epsilon: 1e-4,
        scheme: TimeScheme::CrankNicolson,
        ..SolverConfig::default()
    };
    let text = toml::to_string(&c).unwrap();
    assert!(text.contains("crank-nicolson"));
    let back: SolverConfig = toml::from_str(&text).unwrap();
    assert_eq!(back, c);
    assert_eq!(back.hash(), c.hash());
    assert_ne!(SolverConfig::default().hash(), c.hash());
    assert!(toml::from_str::<SolverConfig>("epsilonn = 1.0").is_err());
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        SolverConfig { epsilon: -1.0, ..SolverConfig::default() },
        SolverConfig { dt: 0.0, ..SolverConfig::default() },
        SolverConfig { fp_tol: 0.0, ..SolverConfig::default() },
        SolverConfig { fp_max_iter: 0, ..SolverConfig::default() },
        SolverConfig { n_z: 64, ..SolverConfig::default() },
        SolverConfig { k_diag: 4, ..SolverConfig::default() },
    ];
    for c in bad {
        assert!(matches!(Solver::new(c), Err(StefanError::Config(_))));
    }
}
