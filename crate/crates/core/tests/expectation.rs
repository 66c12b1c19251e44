mod common;

use std::sync::Arc;

use common::*;
use lasalt::expectation::*;
use lasalt::fields::{ConstantVector, ScalarField, VectorField};
use lasalt::grid::{biot_savart, laplacian, SpectralField, TorusGrid};
use lasalt::noise::{build_noise_basis, NoiseBasis, NoiseSpec};

fn run(g: f64, dt: f64, n_steps: usize) -> ExpectationRun {
    ExpectationRun { g, dt, n_steps, save_every: 1, config_hash: String::new(), initial_spec: serde_json::Value::Null }
}

fn state(omega: ScalarField, theta: ScalarField) -> ExpectationState {
    let grid = theta.grid().clone();
    let mut s = ExpectationState::zeros(&grid);
    s.omega = omega;
    s.theta = theta;
    s
}

fn mean_free(mut f: ScalarField) -> ScalarField {
    f.project();
    let m = f.mean();
    f.values_mut().iter_mut().for_each(|v| *v -= m);
    f
}

fn smooth_initial(g: &Arc<TorusGrid>) -> ExpectationState {
    let omega = ScalarField::from_fn(g.clone(), |x, y| x.sin() * y.sin() + 0.3 * (x + 2.0 * y).cos());
    let theta = ScalarField::from_fn(g.clone(), |x, y| (x.cos()).exp() * y.sin() + 0.2 * (2.0 * x).cos());
    state(omega, theta)
}

fn shear_basis(g: &Arc<TorusGrid>, eps: f64) -> NoiseBasis {
    let spec: NoiseSpec = serde_json::from_str(&format!(
        r#"[{{"const": [{eps}, 0.0]}}, {{"const": [0.0, {eps}]}},
            {{"modes": [{{"component": 1, "kx": 0, "ky": 1, "amp_sin": {eps}}}]}}]"#
    ))
    .unwrap();
    build_noise_basis(g, &spec).unwrap()
}

#[test]
fn zero_is_a_fixed_point() {
    let g = grid(16);
    let basis = shear_basis(&g, 0.2);
    let traj = run_expectation(ExpectationState::zeros(&g), &basis, &run(1.0, 0.01, 20)).unwrap();
    for s in &traj.states {
        assert_eq!(s.omega.max_abs() + s.theta.max_abs() + s.ubar.norm(), 0.0);
    }
    assert!(traj.ptilde.iter().all(|p| p.max_abs() == 0.0));
}

#[test]
fn frozen_rest_state_decays_like_the_heat_kernel() {
    let g = grid(64);
    let eps = 0.1;
    let basis = build_noise_basis(&g, &NoiseSpec::canonical(eps)).unwrap();
    let theta0 = ScalarField::from_fn(g.clone(), |x, y| x.sin() + 0.5 * (2.0 * x - 3.0 * y).cos());
    let still = VectorField::zeros(g.clone());
    let traj = run_expectation_mode(
        state(ScalarField::zeros(g.clone()), theta0.clone()),
        &basis,
        &run(0.0, 0.01, 10),
        VelocityMode::Frozen(&still),
    )
    .unwrap();
    let t = 0.1;
    let oracle = |x: f64, y: f64| {
        (-0.5 * eps * eps * t).exp() * x.sin() + 0.5 * (-0.5 * eps * eps * 13.0 * t).exp() * (2.0 * x - 3.0 * y).cos()
    };
    let exact = ScalarField::from_fn(g.clone(), oracle);
    assert!(traj.states[10].theta.rel_l2_error(&exact) < 1e-6);
}

#[test]
fn variance_of_theta_never_grows_without_buoyancy() {
    let g = grid(24);
    let basis = build_noise_basis(&g, &NoiseSpec::canonical(0.2)).unwrap();
    for id in 0..10 {
        let omega = mean_free(Trig::random(77, 2 * id, 3).field(&g));
        let theta = Trig::random(77, 2 * id + 1, 4).field(&g);
        let traj = run_expectation(state(omega, theta), &basis, &run(0.0, 0.01, 30)).unwrap();
        for w in traj.states.windows(2) {
            let (a, b) = (w[0].theta.l2_norm(), w[1].theta.l2_norm());
            assert!(b <= a * (1.0 + 1e-12), "member {id}: {a} -> {b}");
        }
    }
}

#[test]
fn constant_noise_conserves_the_mean_and_keeps_vorticity_mean_free() {
    let g = grid(32);
    let basis = build_noise_basis(&g, &NoiseSpec::canonical(0.1)).unwrap();
    let init = smooth_initial(&g);
    let i0 = init.theta.integral();
    let traj = run_expectation(init, &basis, &run(1.0, 0.01, 50)).unwrap();
    let scale = traj.states[0].theta.max_abs() * g.area();
    for s in &traj.states[1..] {
        assert!((s.theta.integral() - i0).abs() / s.t < 1e-10 * scale);
        assert!(s.omega.mean().abs() < 1e-12);
    }
}

#[test]
fn reconstructed_velocity_matches_biot_savart_plus_mean() {
    let g = grid(16);
    let basis = shear_basis(&g, 0.2);
    let traj = run_expectation(smooth_initial(&g), &basis, &run(1.0, 0.01, 5)).unwrap();
    for (s, u) in traj.states.iter().zip(&traj.velocity) {
        let k = biot_savart(&s.omega).unwrap().add_constant(s.ubar);
        assert!(u.max_abs_diff(&k) < 1e-14);
    }
}

#[test]
fn mean_velocity_ode() {
    let g = grid(16);
    let basis = build_noise_basis(&g, &NoiseSpec::canonical(0.3)).unwrap();
    let zero_v = VectorField::zeros(g.clone());
    let u0 = ConstantVector::new(0.4, -0.2);
    let still = evolve_mean(u0, &ScalarField::zeros(g.clone()), &zero_v, &basis, 1.5, 0.1);
    assert_eq!(still, u0);

    // Theta = c: dUbar/dt = g c y-hat, with the integral taken over the
    // unit-normalized torus.
    let (c, gv, dt) = (0.7, 2.0, 0.05);
    let theta = ScalarField::constant(g.clone(), c);
    let mut u = u0;
    for _ in 0..8 {
        u = evolve_mean(u, &theta, &zero_v, &basis, gv, dt);
    }
    assert!((u.x - u0.x).abs() < 1e-15);
    assert!((u.y - (u0.y + gv * c * 8.0 * dt)).abs() < 1e-13);

    // Buoyancy quadrature equals the spectral zero mode.
    let theta = Trig::random(5, 5, 4).field(&g).add(&ScalarField::constant(g.clone(), 0.3));
    let f = mean_forcing(ConstantVector::ZERO, &theta, &zero_v, &basis, gv);
    let c0 = SpectralField::from_field(&theta).coeff(0, 0).re / g.nodes() as f64;
    assert!((f.buoyancy.y - gv * c0).abs() < 1e-12);
}

#[test]
fn pressure_of_a_stratified_rest_state() {
    let g = grid(32);
    let basis = build_noise_basis(&g, &NoiseSpec::canonical(0.1)).unwrap();
    let gv = 1.3;
    let theta = ScalarField::from_fn(g.clone(), |_, y| y.sin());
    let p = recover_pressure(&VectorField::zeros(g.clone()), &theta, &basis, gv).unwrap();
    let exact = ScalarField::from_fn(g.clone(), |_, y| -gv * y.cos());
    assert!(p.max_abs_diff(&exact) < 1e-13);
    let zero = recover_pressure(&VectorField::zeros(g.clone()), &ScalarField::zeros(g.clone()), &basis, gv).unwrap();
    assert_eq!(zero.max_abs(), 0.0);
}

#[test]
fn pressure_residual_against_an_independent_source() {
    // For canonical noise and divergence-free U the source reduces to
    //   div(U . grad U) + 1/2 lap |U|^2 - g d_y Theta,
    // assembled here from pointwise products of low-mode fields.
    let g = grid(48);
    let gv = 0.8;
    let basis = build_noise_basis(&g, &NoiseSpec::canonical(0.25)).unwrap();
    let omega = mean_free(Trig::random(31, 0, 2).field(&g));
    let u = biot_savart(&omega).unwrap().add_constant(ConstantVector::new(0.3, -0.1));
    let theta = Trig::random(31, 1, 3).field(&g);
    let sol = recover_pressure_full(&u, &theta, &basis, gv).unwrap();

    let d = |v: &[f64], axis| g.derivative(v, axis);
    let m = g.nodes();
    let mut adv = [vec![0.0; m], vec![0.0; m]];
    for i in 0..2 {
        let (dx, dy) = (d(u.component(i), 0), d(u.component(i), 1));
        for k in 0..m {
            adv[i][k] = u.x()[k] * dx[k] + u.y()[k] * dy[k];
        }
    }
    let div_adv: Vec<f64> = d(&adv[0], 0).iter().zip(d(&adv[1], 1)).map(|(a, b)| a + b).collect();
    let ke = ScalarField::from_values(g.clone(), (0..m).map(|k| 0.5 * (u.x()[k].powi(2) + u.y()[k].powi(2))).collect()).unwrap();
    let lap_ke = laplacian(&ke);
    let dyth = d(theta.values(), 1);
    let src: Vec<f64> = (0..m).map(|k| div_adv[k] + lap_ke.values()[k] - gv * dyth[k]).collect();
    let mean = src.iter().sum::<f64>() / m as f64;
    let src = ScalarField::from_values(g.clone(), src.iter().map(|s| s - mean).collect()).unwrap();

    assert!(laplacian(&sol.ptilde).scaled(-1.0).rel_l2_error(&src) < 1e-10);
    assert!((sol.source_mean - mean).abs() < 1e-10);
}

#[test]
fn degenerate_noise_is_refused_for_the_coupled_solve() {
    let g = grid(16);
    let spec: NoiseSpec = serde_json::from_str(r#"[{"modes": [{"component": 1, "kx": 0, "ky": 1, "amp_sin": 1.0}]}]"#).unwrap();
    let basis = build_noise_basis(&g, &spec).unwrap();
    let err = run_expectation(smooth_initial(&g), &basis, &run(1.0, 0.01, 2)).unwrap_err();
    assert!(matches!(err, lasalt::Error::EllipticityViolation { .. }));
}

#[test]
fn oversized_steps_are_rejected() {
    let g = grid(32);
    let basis = shear_basis(&g, 0.5);
    let err = run_expectation(smooth_initial(&g), &basis, &run(1.0, 0.5, 2)).unwrap_err();
    assert!(matches!(err, lasalt::Error::StepTooLarge { .. }));
}

#[test]
fn time_stepping_is_fourth_order() {
    let g = grid(24);
    let basis = shear_basis(&g, 0.2);
    let solve = |dt: f64| {
        let n = (0.4 / dt).round() as usize;
        let traj = run_expectation(smooth_initial(&g), &basis, &run(1.0, dt, n)).unwrap();
        traj.states.last().unwrap().theta.clone()
    };
    let (a, b, c) = (solve(0.04), solve(0.02), solve(0.01));
    let order = (a.sub(&b).l2_norm() / b.sub(&c).l2_norm()).log2();
    assert!((order - 4.0).abs() < 0.3, "order {order}");
}

#[test]
fn grid_refinement_converges_spectrally() {
    let solve = |n: usize| {
        let g = grid(n);
        let basis = build_noise_basis(&g, &NoiseSpec::canonical(0.2)).unwrap();
        let traj = run_expectation(smooth_initial(&g), &basis, &run(1.0, 0.01, 50)).unwrap();
        traj.states.last().unwrap().theta.clone()
    };
    let (a, b, c) = (solve(24), solve(48), solve(96));
    // Compare on the nodes shared by all three grids.
    let on_coarse = |f: &ScalarField, stride: usize| -> Vec<f64> {
        let n = f.grid().n();
        (0..24 * 24).map(|k| f.values()[(k / 24) * stride * n + (k % 24) * stride]).collect()
    };
    let (ca, cb, cc) = (on_coarse(&a, 1), on_coarse(&b, 2), on_coarse(&c, 4));
    let (ea, eb) = (max_abs_diff(&ca, &cc), max_abs_diff(&cb, &cc));
    assert!(ea / eb >= 10.0, "errors {ea:e} {eb:e}");
}

#[test]
fn trajectory_round_trips_and_detects_tampering() {
    let g = grid(16);
    let basis = shear_basis(&g, 0.2);
    let mut r = run(1.0, 0.01, 4);
    r.save_every = 2;
    r.config_hash = "abc".into();
    let traj = run_expectation(smooth_initial(&g), &basis, &r).unwrap();
    assert_eq!(traj.len(), 3);
    let dir = tempfile::tempdir().unwrap();
    traj.save(dir.path()).unwrap();
    let back = ExpectationTrajectory::load(dir.path()).unwrap();
    assert_eq!(back.meta.config_hash, "abc");
    for (a, b) in traj.states.iter().zip(&back.states) {
        assert_eq!(a.theta.values(), b.theta.values());
        assert_eq!(a.omega.values(), b.omega.values());
        assert_eq!(a.ubar, b.ubar);
    }
    let victim = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "lsf1"))
        .unwrap();
    let mut bytes = std::fs::read(&victim).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    std::fs::write(&victim, bytes).unwrap();
    assert!(matches!(ExpectationTrajectory::load(dir.path()), Err(lasalt::Error::HashMismatch(_))));
}

#[test]
fn interpolation_between_snapshots_is_linear() {
    let g = grid(16);
    let basis = shear_basis(&g, 0.2);
    let traj = run_expectation(smooth_initial(&g), &basis, &run(1.0, 0.01, 3)).unwrap();
    let mid = traj.theta_at(0.015).unwrap();
    let expected = traj.states[1].theta.scaled(0.5).add(&traj.states[2].theta.scaled(0.5));
    assert!(mid.max_abs_diff(&expected) < 1e-14);
    assert!(matches!(traj.theta_at(0.05), Err(lasalt::Error::TrajectoryExhausted { .. })));
}
