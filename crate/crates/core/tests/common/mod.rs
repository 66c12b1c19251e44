#![allow(dead_code)]

use std::f64::consts::PI;
use std::sync::Arc;

use lasalt::expectation::{run_expectation_mode, ExpectationRun, ExpectationState, ExpectationTrajectory, VelocityMode};
use lasalt::fields::{ScalarField, VectorField};
use lasalt::grid::TorusGrid;
use lasalt::noise::{build_noise_basis, keyed_normal, NoiseSpec};

pub const TWO_PI: f64 = 2.0 * PI;

pub fn grid(n: usize) -> Arc<TorusGrid> {
    TorusGrid::new(n).unwrap()
}

/// Trigonometric polynomial with wavenumbers up to `kmax`, as a closure
/// together with its exact partial derivatives.
#[derive(Clone, Debug)]
pub struct Trig {
    terms: Vec<(f64, f64, f64, f64)>,
}

impl Trig {
    pub fn random(seed: u64, id: u64, kmax: i64) -> Self {
        let mut terms = Vec::new();
        let mut c = 0;
        for kx in -kmax..=kmax {
            for ky in 0..=kmax {
                if ky == 0 && kx <= 0 {
                    continue;
                }
                let a = keyed_normal(seed, id, c);
                let b = keyed_normal(seed, id, c + 1);
                c += 2;
                terms.push((kx as f64, ky as f64, a, b));
            }
        }
        Self { terms }
    }

    pub fn from_coeffs(coeffs: &[f64], kmax: i64) -> Self {
        let mut terms = Vec::new();
        let mut it = coeffs.iter().cycle();
        for kx in -kmax..=kmax {
            for ky in 0..=kmax {
                if ky == 0 && kx <= 0 {
                    continue;
                }
                terms.push((kx as f64, ky as f64, *it.next().unwrap(), *it.next().unwrap()));
            }
        }
        Self { terms }
    }

    pub fn value(&self, x: f64, y: f64) -> f64 {
        self.terms.iter().map(|(kx, ky, a, b)| a * (kx * x + ky * y).cos() + b * (kx * x + ky * y).sin()).sum()
    }

    pub fn d(&self, x: f64, y: f64, axis: usize) -> f64 {
        self.terms
            .iter()
            .map(|(kx, ky, a, b)| {
                let k = if axis == 0 { *kx } else { *ky };
                let p = kx * x + ky * y;
                k * (b * p.cos() - a * p.sin())
            })
            .sum()
    }

    pub fn field(&self, grid: &Arc<TorusGrid>) -> ScalarField {
        ScalarField::from_fn(grid.clone(), |x, y| self.value(x, y))
    }
}

pub fn vector(grid: &Arc<TorusGrid>, a: &Trig, b: &Trig) -> VectorField {
    VectorField::from_components(
        grid.clone(),
        a.field(grid).values().to_vec(),
        b.field(grid).values().to_vec(),
    )
}

/// Eighth-order central difference along `axis` on the grid nodes.
pub fn fd_derivative(grid: &TorusGrid, values: &[f64], axis: usize) -> Vec<f64> {
    const C: [f64; 4] = [4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0];
    let n = grid.n() as isize;
    let h = grid.spacing();
    let at = |i: isize, j: isize| values[(j.rem_euclid(n) * n + i.rem_euclid(n)) as usize];
    let mut out = vec![0.0; values.len()];
    for j in 0..n {
        for i in 0..n {
            let mut s = 0.0;
            for (m, c) in C.iter().enumerate() {
                let m = m as isize + 1;
                s += c * if axis == 0 { at(i + m, j) - at(i - m, j) } else { at(i, j + m) - at(i, j - m) };
            }
            out[(j * n + i) as usize] = s / h;
        }
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn rel_l2(a: &[f64], reference: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(reference).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = reference.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

/// Noise-free trajectory transported by a frozen velocity, with `g = 0`.
pub fn frozen_trajectory(
    theta0: ScalarField,
    velocity: &VectorField,
    dt: f64,
    n_steps: usize,
) -> ExpectationTrajectory {
    let grid = theta0.grid().clone();
    let zero = build_noise_basis(&grid, &NoiseSpec::zero()).unwrap();
    let mut init = ExpectationState::zeros(&grid);
    init.theta = theta0;
    let run = ExpectationRun {
        g: 0.0,
        dt,
        n_steps,
        save_every: 1,
        config_hash: String::new(),
        initial_spec: serde_json::Value::Null,
    };
    run_expectation_mode(init, &zero, &run, VelocityMode::Frozen(velocity)).unwrap()
}
