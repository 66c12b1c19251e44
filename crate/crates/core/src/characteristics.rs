//! Stochastic characteristics: node trajectories of
//! `dX = U(t, X) dt + sum_k xi_k(X) o dW^k`, and solutions rebuilt from
//! them by pullback and pushforward.
//!
//! Off-grid values come from bicubic Hermite interpolation with spectral
//! node derivatives. Positions are kept unwrapped, so the displacement
//! `X - x` is periodic and its spectral derivative gives the Jacobian.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::expectation::ExpectationTrajectory;
use crate::fields::{OneFormField, ScalarField, VectorField};
use crate::grid::TorusGrid;
use crate::lsf1::Snapshot;
use crate::noise::{BrownianPath, NoiseBasis};
use crate::spde::ForcingCache;

/// Periodic bicubic Hermite interpolant of one grid array.
#[derive(Clone, Debug)]
pub struct Interpolant {
    grid: Arc<TorusGrid>,
    f: Vec<f64>,
    fx: Vec<f64>,
    fy: Vec<f64>,
    fxy: Vec<f64>,
}

fn hermite(s: f64) -> [f64; 4] {
    let s2 = s * s;
    let s3 = s2 * s;
    [2.0 * s3 - 3.0 * s2 + 1.0, -2.0 * s3 + 3.0 * s2, s3 - 2.0 * s2 + s, s3 - s2]
}

impl Interpolant {
    pub fn new(grid: &Arc<TorusGrid>, values: &[f64]) -> Self {
        let fx = grid.derivative(values, 0);
        let fy = grid.derivative(values, 1);
        let fxy = grid.derivative(&fx, 1);
        Self { grid: grid.clone(), f: values.to_vec(), fx, fy, fxy }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let n = self.grid.n();
        let h = self.grid.spacing();
        let l = self.grid.length();
        let (x, y) = (x.rem_euclid(l) / h, y.rem_euclid(l) / h);
        let (i0, j0) = (x.floor() as usize % n, y.floor() as usize % n);
        let (s, t) = (x - x.floor(), y - y.floor());
        let (i1, j1) = ((i0 + 1) % n, (j0 + 1) % n);
        let hs = hermite(s);
        let ht = hermite(t);
        let mut out = 0.0;
        for (a, i) in [(0, i0), (1, i1)] {
            for (b, j) in [(0, j0), (1, j1)] {
                let k = j * n + i;
                out += hs[a] * ht[b] * self.f[k]
                    + h * (hs[a + 2] * ht[b] * self.fx[k] + hs[a] * ht[b + 2] * self.fy[k])
                    + h * h * hs[a + 2] * ht[b + 2] * self.fxy[k];
            }
        }
        out
    }
}

/// Interpolants of the transporting fields.
pub struct FlowField<'a> {
    traj: &'a ExpectationTrajectory,
    velocity: Vec<[Interpolant; 2]>,
    noise: Vec<[Interpolant; 2]>,
}

fn vector_interp(grid: &Arc<TorusGrid>, v: &VectorField) -> [Interpolant; 2] {
    [Interpolant::new(grid, v.x()), Interpolant::new(grid, v.y())]
}

impl<'a> FlowField<'a> {
    pub fn new(traj: &'a ExpectationTrajectory, basis: &NoiseBasis) -> Result<Self> {
        let grid = traj.grid();
        basis.check_grid(grid)?;
        Ok(Self {
            traj,
            velocity: traj.velocity.iter().map(|v| vector_interp(grid, v)).collect(),
            noise: (0..basis.len()).map(|k| vector_interp(grid, basis.xi(k))).collect(),
        })
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        self.traj.grid()
    }

    fn velocity(&self, i: usize, w: f64, x: f64, y: f64) -> [f64; 2] {
        let at = |m: usize| [self.velocity[m][0].eval(x, y), self.velocity[m][1].eval(x, y)];
        if w == 0.0 {
            at(i)
        } else if w == 1.0 {
            at(i + 1)
        } else {
            let (a, b) = (at(i), at(i + 1));
            [(1.0 - w) * a[0] + w * b[0], (1.0 - w) * a[1] + w * b[1]]
        }
    }

    /// `sum_k xi_k(X) dw_k`.
    fn noise(&self, dw: &[f64], x: f64, y: f64) -> [f64; 2] {
        let mut out = [0.0; 2];
        for (xi, w) in self.noise.iter().zip(dw) {
            out[0] += w * xi[0].eval(x, y);
            out[1] += w * xi[1].eval(x, y);
        }
        out
    }

    /// Heun step of one point from `t0` to `t0 + h` (`h` may be negative).
    fn heun(&self, p: [f64; 2], a0: (usize, f64), a1: (usize, f64), h: f64, dw: &[f64]) -> [f64; 2] {
        let u0 = self.velocity(a0.0, a0.1, p[0], p[1]);
        let n0 = self.noise(dw, p[0], p[1]);
        let q = [p[0] + h * u0[0] + n0[0], p[1] + h * u0[1] + n0[1]];
        let u1 = self.velocity(a1.0, a1.1, q[0], q[1]);
        let n1 = self.noise(dw, q[0], q[1]);
        [
            p[0] + 0.5 * h * (u0[0] + u1[0]) + 0.5 * (n0[0] + n1[0]),
            p[1] + 0.5 * h * (u0[1] + u1[1]) + 0.5 * (n0[1] + n1[1]),
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// Images `phi_{s,t}(x)` of the nodes.
    Forward,
    /// Preimages `phi_{s,t}^{-1}(x)` of the nodes.
    Inverse,
}

/// Unwrapped node images under a flow map.
#[derive(Clone, Debug)]
pub struct FlowMap {
    grid: Arc<TorusGrid>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub s: f64,
    pub t: f64,
    pub direction: Direction,
}

impl FlowMap {
    pub fn identity(grid: &Arc<TorusGrid>, s: f64, t: f64, direction: Direction) -> Self {
        Self { grid: grid.clone(), x: grid.x_field(), y: grid.y_field(), s, t, direction }
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    /// Position of node `k` reduced to `[0, L)^2`.
    pub fn wrapped(&self, k: usize) -> (f64, f64) {
        let l = self.grid.length();
        (self.x[k].rem_euclid(l), self.y[k].rem_euclid(l))
    }

    /// Number of periods crossed by node `k` in each direction.
    pub fn winding(&self, k: usize) -> (i64, i64) {
        let l = self.grid.length();
        ((self.x[k] / l).floor() as i64, (self.y[k] / l).floor() as i64)
    }

    /// Periodic displacement `X - x` as a vector field.
    pub fn displacement(&self) -> VectorField {
        let (x0, y0) = (self.grid.x_field(), self.grid.y_field());
        VectorField::from_components(
            self.grid.clone(),
            self.x.iter().zip(&x0).map(|(a, b)| a - b).collect(),
            self.y.iter().zip(&y0).map(|(a, b)| a - b).collect(),
        )
    }

    /// `J[i][j] = d X^i / d x^j` at every node.
    pub fn jacobian(&self) -> [[Vec<f64>; 2]; 2] {
        let d = self.displacement();
        let g = &self.grid;
        let mut jac = [
            [g.derivative(d.x(), 0), g.derivative(d.x(), 1)],
            [g.derivative(d.y(), 0), g.derivative(d.y(), 1)],
        ];
        for i in 0..2 {
            jac[i][i].iter_mut().for_each(|v| *v += 1.0);
        }
        jac
    }

    pub fn determinant(&self) -> Vec<f64> {
        let j = self.jacobian();
        (0..self.grid.nodes()).map(|k| j[0][0][k] * j[1][1][k] - j[0][1][k] * j[1][0][k]).collect()
    }

    /// Largest node distance to `other`'s images, on the torus.
    pub fn max_distance(&self, other: &FlowMap) -> f64 {
        let l = self.grid.length();
        let wrap = |d: f64| {
            let r = d.rem_euclid(l);
            r.min(l - r)
        };
        (0..self.grid.nodes())
            .map(|k| wrap(self.x[k] - other.x[k]).hypot(wrap(self.y[k] - other.y[k])))
            .fold(0.0, f64::max)
    }

    /// Displacement as a two-component LSF1 snapshot.
    pub fn to_snapshot(&self, step_index: u64) -> Snapshot {
        Snapshot::from_field(&self.displacement(), step_index, self.t)
    }
}

fn step_index(t: f64, dt: f64) -> Result<usize> {
    let i = (t / dt).round();
    if (t - i * dt).abs() > 1e-9 * dt.max(t.abs()) || i < 0.0 {
        return Err(Error::TimeMisaligned(format!("time {t} is not on the step lattice of dt = {dt}")));
    }
    Ok(i as usize)
}

/// Integrates node trajectories between `s` and `t` on the path's step
/// lattice. `record` sees the node positions at each reached step index.
fn sweep(
    field: &FlowField,
    path: &BrownianPath,
    s: f64,
    t: f64,
    direction: Direction,
    mut record: impl FnMut(usize, &[f64], &[f64]) -> Result<()>,
) -> Result<FlowMap> {
    let grid = field.grid().clone();
    if t < s {
        return Err(Error::InvalidArgument(format!("flow interval [{s}, {t}] is reversed")));
    }
    let dt = path.dt;
    let (i0, i1) = (step_index(s, dt)?, step_index(t, dt)?);
    if i1 > path.n_steps {
        return Err(Error::TrajectoryExhausted { requested: t, available: path.n_steps as f64 * dt });
    }
    field.traj.locate(t)?;
    let mut map = FlowMap::identity(&grid, s, t, direction);
    let steps: Vec<usize> = match direction {
        Direction::Forward => (i0..i1).collect(),
        Direction::Inverse => (i0..i1).rev().collect(),
    };
    record(if direction == Direction::Forward { i0 } else { i1 }, &map.x, &map.y)?;
    for step in steps {
        let (ta, tb, h, sign, reached) = match direction {
            Direction::Forward => (step as f64 * dt, (step + 1) as f64 * dt, dt, 1.0, step + 1),
            Direction::Inverse => ((step + 1) as f64 * dt, step as f64 * dt, -dt, -1.0, step),
        };
        let a0 = field.traj.locate(ta)?;
        let a1 = field.traj.locate(tb)?;
        let dw: Vec<f64> = path.row(step).iter().map(|w| sign * w).collect();
        let moved: Vec<[f64; 2]> = map
            .x
            .par_iter()
            .zip(map.y.par_iter())
            .map(|(&x, &y)| field.heun([x, y], a0, a1, h, &dw))
            .collect();
        for (k, p) in moved.into_iter().enumerate() {
            map.x[k] = p[0];
            map.y[k] = p[1];
        }
        if map.x.iter().chain(&map.y).any(|v| !v.is_finite()) {
            return Err(Error::Instability { step: reached as u64, detail: "non-finite characteristic".into() });
        }
        record(reached, &map.x, &map.y)?;
    }
    Ok(map)
}

/// Forward images or inverse preimages of the nodes between `s` and `t`.
pub fn integrate_flow(
    traj: &ExpectationTrajectory,
    basis: &NoiseBasis,
    path: &BrownianPath,
    s: f64,
    t: f64,
    direction: Direction,
) -> Result<FlowMap> {
    let field = FlowField::new(traj, basis)?;
    integrate_flow_with(&field, path, s, t, direction)
}

/// As [`integrate_flow`] with prepared interpolants.
pub fn integrate_flow_with(field: &FlowField, path: &BrownianPath, s: f64, t: f64, direction: Direction) -> Result<FlowMap> {
    sweep(field, path, s, t, direction, |_, _, _| Ok(()))
}

/// `theta_0` sampled at the preimages of an inverse map.
pub fn theta_by_pullback(theta0: &ScalarField, inverse: &FlowMap) -> Result<ScalarField> {
    theta0.grid().same_as(inverse.grid()).then_some(()).ok_or_else(|| Error::GridMismatch("pullback grid".into()))?;
    let interp = Interpolant::new(theta0.grid(), theta0.values());
    let values = (0..inverse.grid.nodes()).map(|k| interp.eval(inverse.x[k], inverse.y[k])).collect();
    ScalarField::from_values(theta0.grid().clone(), values)
}

/// `(phi_* alpha)_j(x) = alpha_i(phi^{-1}(x)) d(phi^{-1})^i / dx^j`, from
/// the inverse map.
pub fn pushforward_oneform(alpha: &OneFormField, inverse: &FlowMap) -> Result<OneFormField> {
    if inverse.direction != Direction::Inverse {
        return Err(Error::InvalidArgument("pushforward needs the inverse map".into()));
    }
    let grid = alpha.grid();
    if !grid.same_as(inverse.grid()) {
        return Err(Error::GridMismatch("pushforward grid".into()));
    }
    let jac = inverse.jacobian();
    let n = grid.n();
    let mut worst = (f64::INFINITY, 0usize);
    for k in 0..grid.nodes() {
        let det = jac[0][0][k] * jac[1][1][k] - jac[0][1][k] * jac[1][0][k];
        if det < worst.0 {
            worst = (det, k);
        }
    }
    if worst.0 < 1e-6 {
        return Err(Error::JacobianDegenerate { det: worst.0, i: worst.1 % n, j: worst.1 / n });
    }
    let ia = Interpolant::new(grid, alpha.x());
    let ib = Interpolant::new(grid, alpha.y());
    let m = grid.nodes();
    let (mut ox, mut oy) = (vec![0.0; m], vec![0.0; m]);
    for k in 0..m {
        let (px, py) = (inverse.x[k], inverse.y[k]);
        let a = [ia.eval(px, py), ib.eval(px, py)];
        ox[k] = a[0] * jac[0][0][k] + a[1] * jac[1][0][k];
        oy[k] = a[0] * jac[0][1][k] + a[1] * jac[1][1][k];
    }
    Ok(OneFormField::from_components(grid.clone(), ox, oy))
}

/// Inputs of [`u_by_characteristics`].
pub struct CharacteristicsInput<'a> {
    pub u0: &'a OneFormField,
    pub theta0: &'a ScalarField,
    pub traj: &'a ExpectationTrajectory,
    pub basis: &'a NoiseBasis,
    pub path: &'a BrownianPath,
    /// Momentum forcing `F`, entering with a plus sign.
    pub forcing: &'a ForcingCache,
    pub g: f64,
}

/// Pathwise circulation one-form at time `t`:
///
/// ```text
/// u(t) = (phi_t)_* u_0 + int_0^t (phi_{s,t})_* (F - g y d theta)(s) ds
/// ```
///
/// `(phi_{s,t})_*(y d theta(s))` equals `y(phi_{s,t}^{-1} x) d theta(t)`,
/// so only `F` is pushed forward at every level. The time integrals use
/// the trapezoid rule over every step of the path.
pub fn u_by_characteristics(input: &CharacteristicsInput, t: f64) -> Result<OneFormField> {
    let field = FlowField::new(input.traj, input.basis)?;
    let grid = field.grid().clone();
    let dt = input.path.dt;
    let i_end = step_index(t, dt)?;
    let l = grid.length();
    let m = grid.nodes();
    let mut y_integral = vec![0.0; m];
    let mut force = OneFormField::zeros(grid.clone());
    let map0 = sweep(&field, input.path, 0.0, t, Direction::Inverse, |step, xs, ys| {
        let w = if step == 0 || step == i_end { 0.5 * dt } else { dt };
        if i_end == 0 {
            return Ok(());
        }
        for (acc, y) in y_integral.iter_mut().zip(ys) {
            *acc += w * y.rem_euclid(l);
        }
        let level = FlowMap { grid: grid.clone(), x: xs.to_vec(), y: ys.to_vec(), s: step as f64 * dt, t, direction: Direction::Inverse };
        let f = input.forcing.momentum_at(step as f64 * dt)?;
        force.axpy(w, &pushforward_oneform(&f, &level)?);
        Ok(())
    })?;
    let mut u = pushforward_oneform(input.u0, &map0)?;
    u.axpy(1.0, &force);
    let dtheta0 = crate::grid::gradient(input.theta0);
    let dtheta_t = pushforward_oneform(&dtheta0, &map0)?;
    let data = u.data_mut();
    for c in 0..2 {
        let d = dtheta_t.component(c);
        for k in 0..m {
            data[c * m + k] -= input.g * y_integral[k] * d[k];
        }
    }
    Ok(u)
}
