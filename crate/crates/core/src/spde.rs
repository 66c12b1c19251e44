//! Linear stochastic transport of `theta`, `omega` and (optionally) the
//! circulation one-form `u`, driven by a stored expectation trajectory.
//!
//! Drift and noise coefficients:
//!
//! ```text
//! a(theta) = -L_U theta                b_k(theta) = -L_k theta
//! a(omega) = -L_U omega + g d_x theta   b_k(omega) = -L_k omega
//! a(u)     = -L_U u + F - g y d theta   b_k(u)     = -L_k u
//! ```
//!
//! with `F = -d p~ + g Theta y^ + g y d Theta`, so that the `y` terms only
//! see `d(theta - Theta)`. The Ito form adds `1/2 sum_k L_k^2` to the drift.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::expectation::ExpectationTrajectory;
use crate::fields::{LieTransport, OneFormField, ScalarField, Transporter};
use crate::grid::{gradient, TorusGrid};
use crate::noise::{BrownianPath, NoiseBasis};

/// Forcing one-forms per trajectory snapshot.
#[derive(Clone, Debug)]
pub struct ForcingCache {
    snapshot_dt: f64,
    /// `-d p~ + g y d Theta + g Theta dy + g Theta y^`, with `dy = y^` off
    /// the seam. Kept as a regression pin.
    pub f_snapshots: Vec<OneFormField>,
    /// `F = f - g Theta y^`, the forcing that enters the momentum equation.
    pub momentum: Vec<OneFormField>,
}

impl ForcingCache {
    /// The same forcing at every time.
    pub fn uniform(force: OneFormField, snapshot_dt: f64, count: usize) -> Self {
        Self {
            snapshot_dt,
            f_snapshots: vec![force.clone(); count],
            momentum: vec![force; count],
        }
    }

    pub fn momentum_at(&self, t: f64) -> Result<OneFormField> {
        let x = t / self.snapshot_dt;
        let last = (self.momentum.len() - 1) as f64;
        if x < -1e-9 || x > last + 1e-9 {
            return Err(Error::TrajectoryExhausted { requested: t, available: last * self.snapshot_dt });
        }
        let x = x.clamp(0.0, last);
        let i = (x.floor() as usize).min(self.momentum.len().saturating_sub(2));
        let w = x - i as f64;
        if w < 1e-9 {
            Ok(self.momentum[i].clone())
        } else if w > 1.0 - 1e-9 {
            Ok(self.momentum[i + 1].clone())
        } else {
            Ok(OneFormField::combine(&[(1.0 - w, &self.momentum[i]), (w, &self.momentum[i + 1])]))
        }
    }
}

/// Forcing one-forms for every snapshot of `traj`.
pub fn assemble_forcing(traj: &ExpectationTrajectory, g: f64) -> ForcingCache {
    let grid = traj.grid();
    let y = grid.y_field();
    let m = grid.nodes();
    let mut f_snapshots = Vec::with_capacity(traj.len());
    let mut momentum = Vec::with_capacity(traj.len());
    for (state, p) in traj.states.iter().zip(&traj.ptilde) {
        let th = state.theta.values();
        let dp = gradient(p);
        let dth = gradient(&state.theta);
        let mut f = dp.scaled(-1.0);
        let mut mom = dp.scaled(-1.0);
        {
            let data = f.data_mut();
            for k in 0..m {
                data[k] += g * y[k] * dth.x()[k];
                data[m + k] += g * y[k] * dth.y()[k] + 2.0 * g * th[k];
            }
        }
        {
            let data = mom.data_mut();
            for k in 0..m {
                data[k] += g * y[k] * dth.x()[k];
                data[m + k] += g * y[k] * dth.y()[k] + g * th[k];
            }
        }
        f_snapshots.push(f);
        momentum.push(mom);
    }
    ForcingCache { snapshot_dt: traj.snapshot_dt(), f_snapshots, momentum }
}

/// State of one ensemble member.
#[derive(Clone, Debug)]
pub struct SpdeState {
    pub theta: ScalarField,
    pub omega: ScalarField,
    pub u: Option<OneFormField>,
    pub t: f64,
    pub step_index: u64,
}

impl SpdeState {
    /// Deterministic initial data taken from the trajectory's first state.
    pub fn from_expectation(traj: &ExpectationTrajectory, with_u: bool) -> Self {
        let s = &traj.states[0];
        Self {
            theta: s.theta.clone(),
            omega: s.omega.clone(),
            u: with_u.then(|| traj.velocity[0].to_one_form()),
            t: 0.0,
            step_index: 0,
        }
    }
}

/// Expectation-derived fields needed at one time level.
#[derive(Clone, Debug)]
pub struct Drive {
    transporter: Transporter,
    dtheta_mean: OneFormField,
    momentum: Option<OneFormField>,
}

impl Drive {
    pub fn velocity(&self) -> &Transporter {
        &self.transporter
    }
}

/// Shared, immutable inputs of the stochastic steppers.
pub struct SpdeContext<'a> {
    pub traj: &'a ExpectationTrajectory,
    pub basis: &'a NoiseBasis,
    pub forcing: Option<&'a ForcingCache>,
    pub g: f64,
    pub dt: f64,
    cache: Vec<Arc<Drive>>,
    y: Vec<f64>,
}

impl<'a> SpdeContext<'a> {
    pub fn new(
        traj: &'a ExpectationTrajectory,
        basis: &'a NoiseBasis,
        forcing: Option<&'a ForcingCache>,
        g: f64,
        dt: f64,
    ) -> Result<Self> {
        basis.check_grid(traj.grid())?;
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        let mut ctx = Self { traj, basis, forcing, g, dt, cache: Vec::new(), y: traj.grid().y_field() };
        ctx.cache = (0..traj.len())
            .map(|i| ctx.build_drive(i as f64 * traj.snapshot_dt()).map(Arc::new))
            .collect::<Result<_>>()?;
        Ok(ctx)
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        self.traj.grid()
    }

    fn build_drive(&self, t: f64) -> Result<Drive> {
        let u = self.traj.velocity_at(t)?;
        let theta_mean = self.traj.theta_at(t)?;
        Ok(Drive {
            transporter: Transporter::new(&u),
            dtheta_mean: gradient(&theta_mean),
            momentum: match self.forcing {
                Some(f) => Some(f.momentum_at(t)?),
                None => None,
            },
        })
    }

    /// Drive fields at `t`, from the snapshot cache when `t` is a snapshot time.
    pub fn drive(&self, t: f64) -> Result<Arc<Drive>> {
        let (i, w) = self.traj.locate(t)?;
        if w == 0.0 {
            Ok(self.cache[i].clone())
        } else if w == 1.0 {
            Ok(self.cache[i + 1].clone())
        } else {
            Ok(Arc::new(self.build_drive(t)?))
        }
    }
}

#[derive(Clone)]
struct Fields {
    theta: ScalarField,
    omega: ScalarField,
    u: Option<OneFormField>,
}

impl Fields {
    fn axpy(&mut self, a: f64, o: &Fields) {
        self.theta.axpy(a, &o.theta);
        self.omega.axpy(a, &o.omega);
        if let (Some(u), Some(v)) = (self.u.as_mut(), o.u.as_ref()) {
            u.axpy(a, v);
        }
    }

    fn lie(t: &Transporter, x: &Fields) -> Fields {
        Fields::lie_combination(&[(1.0, t)], x)
    }

    fn lie_combination(terms: &[(f64, &Transporter)], x: &Fields) -> Fields {
        Fields {
            theta: ScalarField::lie_combination(terms, &x.theta),
            omega: ScalarField::lie_combination(terms, &x.omega),
            u: x.u.as_ref().map(|u| OneFormField::lie_combination(terms, u)),
        }
    }
}

impl SpdeContext<'_> {
    /// `dt a(x) + sum_k dw_k b_k(x)`, with all transport terms of a field
    /// assembled before a single projection.
    fn increment(&self, x: &Fields, d: &Drive, dt: f64, dw: &[f64]) -> Result<Fields> {
        let grid = x.theta.grid();
        let mut terms = Vec::with_capacity(dw.len() + 1);
        terms.push((-dt, &d.transporter));
        for (t, w) in self.basis.transporters().iter().zip(dw) {
            terms.push((-w, t));
        }
        let mut out = Fields::lie_combination(&terms, x);
        let dx = grid.derivative(x.theta.values(), 0);
        let g = self.g;
        out.omega.values_mut().iter_mut().zip(&dx).for_each(|(o, d)| *o += dt * g * d);
        if let Some(du) = out.u.as_mut() {
            let force = d.momentum.as_ref().ok_or_else(|| {
                Error::InvalidArgument("the u equation needs a forcing cache".into())
            })?;
            // -g y d(theta - Theta), projected onto the band.
            let dth = gradient(&x.theta);
            let m = grid.nodes();
            let mut ysrc = [vec![0.0; m], vec![0.0; m]];
            for c in 0..2 {
                let (a, b) = (dth.component(c), d.dtheta_mean.component(c));
                for k in 0..m {
                    ysrc[c][k] = -g * self.y[k] * (a[k] - b[k]);
                }
                grid.project(&mut ysrc[c]);
            }
            // F - g y dTheta is smooth; the seam-sensitive part is the
            // projected fluctuation term above.
            let data = du.data_mut();
            let f = force.data();
            for c in 0..2 {
                let dm = d.dtheta_mean.component(c);
                for k in 0..m {
                    let idx = c * m + k;
                    data[idx] += dt * (f[idx] - g * self.y[k] * dm[k] + ysrc[c][k]);
                }
            }
        }
        Ok(out)
    }

    fn check_increments(&self, increments: &[f64]) -> Result<()> {
        if increments.len() != self.basis.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} increments, got {}",
                self.basis.len(),
                increments.len()
            )));
        }
        Ok(())
    }

    fn finish(&self, state: &SpdeState, next: Fields) -> Result<SpdeState> {
        let step = state.step_index + 1;
        let pairs = [
            ("theta", state.theta.l2_norm(), &next.theta),
            ("omega", state.omega.l2_norm(), &next.omega),
        ];
        for (name, n0, f) in pairs {
            guard(name, n0, f.l2_norm(), f.is_finite(), step)?;
        }
        if let (Some(u0), Some(u1)) = (&state.u, &next.u) {
            guard("u", u0.l2_norm(), u1.l2_norm(), u1.is_finite(), step)?;
        }
        Ok(SpdeState {
            theta: next.theta,
            omega: next.omega,
            u: next.u,
            t: step as f64 * self.dt,
            step_index: step,
        })
    }
}

fn guard(name: &str, n0: f64, n1: f64, finite: bool, step: u64) -> Result<()> {
    if !finite || (n0 > 1e-300 && n1 > 10.0 * n0) {
        return Err(Error::Instability { step, detail: format!("{name} norm {n0:e} -> {n1:e}") });
    }
    Ok(())
}

fn unpack(state: &SpdeState) -> Fields {
    Fields { theta: state.theta.clone(), omega: state.omega.clone(), u: state.u.clone() }
}

/// Stochastic Heun step (Stratonovich).
pub fn step_stratonovich(state: &SpdeState, ctx: &SpdeContext, increments: &[f64]) -> Result<SpdeState> {
    ctx.check_increments(increments)?;
    let t = state.t;
    let x = unpack(state);
    let inc0 = ctx.increment(&x, &*ctx.drive(t)?, ctx.dt, increments)?;
    let mut pred = x.clone();
    pred.axpy(1.0, &inc0);
    let inc1 = ctx.increment(&pred, &*ctx.drive(t + ctx.dt)?, ctx.dt, increments)?;
    let mut next = x;
    next.axpy(0.5, &inc0);
    next.axpy(0.5, &inc1);
    ctx.finish(state, next)
}

/// Euler-Maruyama step of the Ito form.
pub fn step_ito(state: &SpdeState, ctx: &SpdeContext, increments: &[f64]) -> Result<SpdeState> {
    ctx.check_increments(increments)?;
    let x = unpack(state);
    let mut next = x.clone();
    next.axpy(1.0, &ctx.increment(&x, &*ctx.drive(state.t)?, ctx.dt, increments)?);
    for t in ctx.basis.transporters() {
        let once = Fields::lie(t, &x);
        next.axpy(0.5 * ctx.dt, &Fields::lie(t, &once));
    }
    ctx.finish(state, next)
}

/// Integrate one member from `state` for `n_steps` steps of `path`.
pub fn integrate(
    mut state: SpdeState,
    ctx: &SpdeContext,
    path: &BrownianPath,
    scheme: crate::config::Scheme,
    n_steps: usize,
    mut observe: impl FnMut(&SpdeState) -> Result<()>,
) -> Result<SpdeState> {
    let first = state.step_index as usize;
    if first + n_steps > path.n_steps {
        return Err(Error::InvalidArgument(format!(
            "path has {} steps, {} requested",
            path.n_steps,
            first + n_steps
        )));
    }
    for s in first..first + n_steps {
        let row = path.row(s);
        state = match scheme {
            crate::config::Scheme::Strat => step_stratonovich(&state, ctx, row)?,
            crate::config::Scheme::Ito => step_ito(&state, ctx, row)?,
        };
        observe(&state)?;
    }
    Ok(state)
}

/// Deviations from the expectation at the state's time.
#[derive(Clone, Debug)]
pub struct Fluctuations {
    pub u: Option<OneFormField>,
    pub theta: ScalarField,
}

pub fn fluctuations(state: &SpdeState, traj: &ExpectationTrajectory) -> Result<Fluctuations> {
    traj.locate(state.t).map_err(|_| {
        Error::TimeMisaligned(format!(
            "state time {} lies outside the trajectory [0, {}]",
            state.t,
            traj.t_end()
        ))
    })?;
    let theta = state.theta.sub(&traj.theta_at(state.t)?);
    let u = match &state.u {
        Some(u) => Some(u.sub(&traj.velocity_at(state.t)?.to_one_form())),
        None => None,
    };
    Ok(Fluctuations { u, theta })
}

/// Largest `|f|` within `L/8` of the `y` seam, relative to `max |f|`.
pub fn seam_contamination(f: &ScalarField) -> f64 {
    let grid = f.grid();
    let n = grid.n();
    let l = grid.length();
    let total = f.max_abs();
    if total == 0.0 {
        return 0.0;
    }
    let mut near = 0.0f64;
    for j in 0..n {
        let y = grid.coord(j);
        if y < l / 8.0 || y > 7.0 * l / 8.0 {
            for i in 0..n {
                near = near.max(f.values()[j * n + i].abs());
            }
        }
    }
    near / total
}
