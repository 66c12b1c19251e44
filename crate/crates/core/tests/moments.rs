mod common;

use std::sync::Arc;

use common::*;
use lasalt::config::{RunConfig, Scheme};
use lasalt::expectation::ExpectationTrajectory;
use lasalt::fields::{ScalarField, Tensor2Field, VectorField};
use lasalt::grid::TorusGrid;
use lasalt::moments::*;
use lasalt::montecarlo::run_ensemble;
use lasalt::noise::{build_noise_basis, NoiseBasis, NoiseSpec};
use lasalt::run::Setup;
use lasalt::spde::SpdeContext;

fn basis(g: &Arc<TorusGrid>, json: &str) -> NoiseBasis {
    build_noise_basis(g, &serde_json::from_str::<NoiseSpec>(json).unwrap()).unwrap()
}

fn still_sine(g: &Arc<TorusGrid>, dt: f64, n: usize) -> ExpectationTrajectory {
    frozen_trajectory(ScalarField::from_fn(g.clone(), |x, _| x.sin()), &VectorField::zeros(g.clone()), dt, n)
}

#[test]
fn variance_of_a_shifted_sine_has_a_closed_form() {
    // Theta = sin x held fixed, xi = (eps, 0):
    //   d_t T = eps^2/2 T_xx + eps^2 cos^2 x,
    // so T = eps^2 t / 2 + a(t) cos 2x with a = (1 - exp(-2 eps^2 t)) / 4.
    let g = grid(32);
    let (eps, dt, n) = (0.5, 1e-3, 100);
    let traj = still_sine(&g, dt, n);
    let b = basis(&g, &format!(r#"[{{"const": [{eps}, 0.0]}}]"#));
    let sys = MomentSystem::new(&traj, &b, 0.0, dt, false).unwrap();
    let run = run_moments(&sys, MomentState::zeros(&g, 2), n, n).unwrap();
    let t = run.last().t;
    assert!((t - 0.1).abs() < 1e-12);
    let a = 0.25 * (1.0 - (-2.0 * eps * eps * t).exp());
    let exact = ScalarField::from_fn(g.clone(), |x, _| 0.5 * eps * eps * t + a * (2.0 * x).cos());
    assert!(run.last().theta2.rel_l2_error(&exact) < 1e-4);
    assert!(run.last().a(2).rel_l2_error(&exact) < 1e-4);
}

#[test]
fn second_moment_agrees_with_the_dedicated_stepper() {
    let g = grid(24);
    let dt = 1e-3;
    let u = VectorField::from_components(
        g.clone(),
        ScalarField::from_fn(g.clone(), |_, y| 0.5 * y.cos()).values().to_vec(),
        vec![0.1; g.nodes()],
    );
    let traj = frozen_trajectory(Trig::random(6, 0, 3).field(&g), &u, dt, 10);
    let b = basis(&g, r#"[{"const": [0.2, 0.0]}, {"modes": [{"component": 2, "kx": 1, "ky": 0, "amp_sin": 0.2}]}]"#);
    let sys = MomentSystem::new(&traj, &b, 0.0, dt, false).unwrap();
    let mut s = MomentState::zeros(&g, 3);
    let mut alone = s.theta2.clone();
    for step in 0..10 {
        alone = sys.step_theta_covariance(&alone, s.t).unwrap();
        s = sys.step(&s, step).unwrap();
    }
    assert!(s.theta2.max_abs() > 1e-4);
    assert!(s.theta2.max_abs_diff(&alone) < 1e-14);
    assert!(s.a(2).max_abs_diff(&alone) < 1e-14);
}

#[test]
fn zero_moments_stay_zero_without_noise() {
    let g = grid(16);
    let traj = still_sine(&g, 1e-2, 5);
    let b = build_noise_basis(&g, &NoiseSpec::zero()).unwrap();
    let sys = MomentSystem::new(&traj, &b, 1.0, 1e-2, true).unwrap();
    let run = run_moments(&sys, MomentState::zeros(&g, 4), 5, 1).unwrap();
    for s in &run.states {
        assert_eq!(s.theta2.max_abs(), 0.0);
        assert_eq!(s.dtheta2.max_abs() + s.u2.max_abs() + s.cross.max_abs(), 0.0);
        assert!(s.ap.iter().all(|a| a.max_abs() == 0.0));
    }
}

// At n = 32 truncated products leave small negative lobes in the even
// moments (about 1e-4 relative for A2, 1e-1 for A4); n = 64 resolves them.
fn desk_run(t_end: f64) -> (RunConfig, Setup, ExpectationTrajectory) {
    let mut cfg = RunConfig::desk_default();
    cfg.grid.n = 64;
    cfg.solver.t_end = t_end;
    let setup = Setup::new(&cfg).unwrap();
    let traj = setup.expectation().unwrap();
    (cfg, setup, traj)
}

#[test]
fn tensor_moments_stay_symmetric() {
    let (cfg, setup, traj) = desk_run(0.02);
    let sys = MomentSystem::new(&traj, &setup.basis, cfg.physics.g, cfg.solver.dt, true).unwrap();
    let run = run_moments(&sys, MomentState::zeros(&setup.grid, 2), cfg.n_steps(), 10).unwrap();
    let s = run.last();
    for t in [&s.dtheta2, &s.u2, &s.cross] {
        assert!(t.max_abs() > 0.0);
        assert!(max_abs_diff(t.entry(0, 1), t.entry(1, 0)) < 1e-10);
        assert!(t.is_symmetric());
    }
    // Covariances have nonnegative diagonals.
    for t in [&s.dtheta2, &s.u2] {
        for a in 0..2 {
            let lo = t.entry(a, a).iter().copied().fold(f64::INFINITY, f64::min);
            let hi = t.entry(a, a).iter().copied().fold(0.0, f64::max);
            assert!(lo >= -1e-6 * hi, "diagonal {lo:e} against {hi:e}");
        }
    }
}

#[test]
fn velocity_covariance_decays_under_constant_noise() {
    // g = 0, U = 0 and constant xi: the u covariance only diffuses.
    let g = grid(24);
    let dt = 1e-3;
    let traj = frozen_trajectory(ScalarField::zeros(g.clone()), &VectorField::zeros(g.clone()), dt, 50);
    let b = basis(&g, r#"[{"const": [0.3, 0.0]}, {"const": [0.0, 0.3]}]"#);
    let sys = MomentSystem::new(&traj, &b, 0.0, dt, true).unwrap();
    let (p, q) = (Trig::random(12, 0, 3), Trig::random(12, 1, 3));
    let mut s = MomentState::zeros(&g, 2);
    s.u2 = Tensor2Field::from_fn(g.clone(), |x, y| {
        let (a, c) = (p.value(x, y), q.value(x, y));
        [a * a, a * c, a * c, c * c]
    });
    s.u2.project();
    s.u2.set_symmetric(true);
    let mut norm = s.u2.l2_norm();
    for step in 0..50 {
        s = sys.step(&s, step).unwrap();
        let next = s.u2.l2_norm();
        assert!(next <= norm * (1.0 + 1e-12));
        norm = next;
    }
    assert!(norm > 0.0);
}

#[test]
fn sampled_fourth_moment_dominates_the_squared_variance() {
    let mut cfg = RunConfig::desk_default();
    cfg.solver.t_end = 0.05;
    cfg.solver.scheme = Scheme::Strat;
    cfg.ensemble.members = 64;
    cfg.ensemble.batches = 8;
    cfg.ensemble.moments_p = 4;
    let setup = Setup::new(&cfg).unwrap();
    let traj = setup.expectation().unwrap();
    let ctx = SpdeContext::new(&traj, &setup.basis, None, cfg.physics.g, cfg.solver.dt).unwrap();
    let result = run_ensemble(&setup.ensemble_spec(), &ctx).unwrap();
    let obs = result.stats.observations.last().unwrap();
    let (a2, a4) = (obs.theta.central_moment(2), obs.theta.central_moment(4));
    // The variance is unbiased; Cauchy-Schwarz holds for the 1/M moments.
    let m = obs.theta.count as f64;
    assert!(a2.iter().zip(&a4).all(|(v, f)| {
        let biased = v * (m - 1.0) / m;
        *f >= biased * biased * (1.0 - 1e-12)
    }));
    assert!(a2.iter().any(|v| *v > 0.0));
}

#[test]
fn even_moments_of_the_moment_system_are_nonnegative() {
    let (cfg, setup, traj) = desk_run(0.05);
    let sys = MomentSystem::new(&traj, &setup.basis, cfg.physics.g, cfg.solver.dt, false).unwrap();
    let run = run_moments(&sys, MomentState::zeros(&setup.grid, 4), cfg.n_steps(), 50).unwrap();
    let report = even_moment_positivity_check(&run.last().ap);
    assert!(report.within(1e-6), "{report:?}");
}
