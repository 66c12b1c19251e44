//! Closed deterministic equations for second moments and scalar central
//! moments, driven by a stored expectation trajectory.
//!
//! Every equation has the form
//!
//! ```text
//! d_t M = -L_U M + 1/2 sum_k L_k^2 M + S
//! ```
//!
//! with sources built from `L_k Theta`, `L_k dTheta` and `L_k U` (`U` read as
//! a one-form). Pointwise products are evaluated on the grid and projected
//! onto the band.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expectation::ExpectationTrajectory;
use crate::fields::{Field, Kind, LieTransport, OneFormField, ScalarField, Tensor2Field, Transporter};
use crate::grid::{gradient, TorusGrid};
use crate::lsf1::{self, Snapshot};
use crate::noise::NoiseBasis;

/// Moment fields at one time level.
#[derive(Clone, Debug)]
pub struct MomentState {
    pub theta2: ScalarField,
    pub dtheta2: Tensor2Field,
    pub u2: Tensor2Field,
    pub cross: Tensor2Field,
    /// `A^(p)` for `p = 2..=p_max`, index `p - 2`.
    pub ap: Vec<ScalarField>,
    pub t: f64,
}

impl MomentState {
    pub fn zeros(grid: &Arc<TorusGrid>, p_max: usize) -> Self {
        let sym = || {
            let mut t = Tensor2Field::zeros(grid.clone());
            t.set_symmetric(true);
            t
        };
        Self {
            theta2: ScalarField::zeros(grid.clone()),
            dtheta2: sym(),
            u2: sym(),
            cross: sym(),
            ap: (2..=p_max).map(|_| ScalarField::zeros(grid.clone())).collect(),
            t: 0.0,
        }
    }

    pub fn p_max(&self) -> usize {
        self.ap.len() + 1
    }

    /// `A^(p)` for `p >= 2`.
    pub fn a(&self, p: usize) -> &ScalarField {
        &self.ap[p - 2]
    }

    fn combine(&self, terms: &[(f64, &MomentState)]) -> MomentState {
        let mut out = self.clone();
        for (w, s) in terms {
            out.theta2.axpy(*w, &s.theta2);
            out.dtheta2.axpy(*w, &s.dtheta2);
            out.u2.axpy(*w, &s.u2);
            out.cross.axpy(*w, &s.cross);
            for (a, b) in out.ap.iter_mut().zip(&s.ap) {
                a.axpy(*w, b);
            }
        }
        out
    }

    fn is_finite(&self) -> bool {
        self.theta2.is_finite()
            && self.dtheta2.is_finite()
            && self.u2.is_finite()
            && self.cross.is_finite()
            && self.ap.iter().all(|a| a.is_finite())
    }

    /// Named fields for output.
    pub fn named_fields(&self) -> Vec<(String, &[f64], u32)> {
        let mut out: Vec<(String, &[f64], u32)> = vec![
            ("theta2".into(), self.theta2.data(), 1),
            ("dtheta2".into(), self.dtheta2.data(), 4),
            ("u2".into(), self.u2.data(), 4),
            ("cross".into(), self.cross.data(), 4),
        ];
        for (i, a) in self.ap.iter().enumerate() {
            out.push((format!("a{}", i + 2), a.data(), 1));
        }
        out
    }
}

/// Expectation-derived quantities at one time.
#[derive(Clone, Debug)]
pub struct MomentDrive {
    velocity: Transporter,
    /// `L_k Theta` per noise field.
    pub lk_theta: Vec<ScalarField>,
    /// `sum_k (L_k Theta)^2`.
    pub theta_source: ScalarField,
    /// `sum_k (L_k dTheta)^2`.
    pub dtheta_source: Option<Tensor2Field>,
    /// `sum_k (L_k U) (x) (L_k dTheta) + transpose`.
    pub cross_source: Option<Tensor2Field>,
    /// `sum_k (L_k U)^2`.
    pub u_source: Option<Tensor2Field>,
}

/// Which equations to step and with which inputs.
pub struct MomentSystem<'a> {
    pub traj: &'a ExpectationTrajectory,
    pub basis: &'a NoiseBasis,
    pub g: f64,
    pub dt: f64,
    pub tensors: bool,
    y: Vec<f64>,
}

fn product(grid: &TorusGrid, a: &[f64], b: &[f64]) -> Vec<f64> {
    grid.product_in_band(a, b)
}

fn scalar(grid: &Arc<TorusGrid>, v: Vec<f64>) -> ScalarField {
    ScalarField::from_values(grid.clone(), v).expect("grid-sized")
}

impl<'a> MomentSystem<'a> {
    pub fn new(
        traj: &'a ExpectationTrajectory,
        basis: &'a NoiseBasis,
        g: f64,
        dt: f64,
        tensors: bool,
    ) -> Result<Self> {
        basis.check_grid(traj.grid())?;
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        Ok(Self { traj, basis, g, dt, tensors, y: traj.grid().y_field() })
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        self.traj.grid()
    }

    pub fn drive(&self, t: f64) -> Result<MomentDrive> {
        let grid = self.grid();
        let u = self.traj.velocity_at(t)?;
        let theta = self.traj.theta_at(t)?;
        let ts = self.basis.transporters();
        let lk_theta: Vec<ScalarField> = ts.iter().map(|k| ScalarField::lie_with(k, &theta)).collect();
        let mut src = vec![0.0; grid.nodes()];
        for l in &lk_theta {
            for (s, v) in src.iter_mut().zip(l.values()) {
                *s += v * v;
            }
        }
        grid.project(&mut src);
        let mut drive = MomentDrive {
            velocity: Transporter::new(&u),
            lk_theta,
            theta_source: scalar(grid, src),
            dtheta_source: None,
            cross_source: None,
            u_source: None,
        };
        if self.tensors {
            let dtheta = gradient(&theta);
            let uf = u.to_one_form();
            let mut sd = Tensor2Field::zeros(grid.clone());
            let mut sc = Tensor2Field::zeros(grid.clone());
            let mut su = Tensor2Field::zeros(grid.clone());
            for k in ts {
                let ld = OneFormField::lie_with(k, &dtheta);
                let lu = OneFormField::lie_with(k, &uf);
                sd.axpy(1.0, &Tensor2Field::outer(&ld, &ld));
                let c = Tensor2Field::outer(&lu, &ld);
                sc.axpy(1.0, &c);
                sc.axpy(1.0, &c.transpose());
                su.axpy(1.0, &Tensor2Field::outer(&lu, &lu));
            }
            for t in [&mut sd, &mut sc, &mut su] {
                t.project();
                t.set_symmetric(true);
            }
            drive.dtheta_source = Some(sd);
            drive.cross_source = Some(sc);
            drive.u_source = Some(su);
        }
        Ok(drive)
    }

    /// `-L_U f + 1/2 sum_k L_k^2 f`.
    fn transport<K: Kind>(&self, d: &MomentDrive, f: &Field<K>) -> Field<K>
    where
        Field<K>: LieTransport,
    {
        let mut out = Field::<K>::lie_combination(&[(-1.0, &d.velocity)], f);
        for k in self.basis.transporters() {
            let once = Field::<K>::lie_with(k, f);
            out.axpy(0.5, &Field::<K>::lie_with(k, &once));
        }
        out.set_symmetric(f.is_symmetric());
        out
    }

    /// Projected `c y T`.
    fn y_times(&self, c: f64, t: &Tensor2Field) -> Tensor2Field {
        let mut out = t.clone();
        for (v, y) in out.data_mut().iter_mut().zip(self.y.iter().cycle()) {
            *v *= c * y;
        }
        out.project();
        out
    }

    fn rhs_theta2(&self, d: &MomentDrive, theta2: &ScalarField) -> ScalarField {
        let mut out = self.transport(d, theta2);
        out.axpy(1.0, &d.theta_source);
        out
    }

    /// Right-hand side of the `p`-th central moment; `lower` holds
    /// `A^(p-1)` and `A^(p-2)` (ignored for `p = 2`, where they are 0 and 1).
    fn rhs_pth(&self, d: &MomentDrive, p: usize, ap: &ScalarField, lower: [&ScalarField; 2]) -> ScalarField {
        if p == 2 {
            return self.rhs_theta2(d, ap);
        }
        let grid = self.grid();
        let pf = p as f64;
        let mut out = self.transport(d, ap);
        let mut src = vec![0.0; grid.nodes()];
        for (k, lt) in self.basis.transporters().iter().zip(&d.lk_theta) {
            let la = ScalarField::lie_with(k, lower[0]);
            let prod = product(grid, la.values(), lt.values());
            for (s, v) in src.iter_mut().zip(&prod) {
                *s += pf * v;
            }
        }
        if p > 3 {
            let prod = product(grid, lower[1].values(), d.theta_source.values());
            let c = 0.5 * pf * (pf - 1.0);
            for (s, v) in src.iter_mut().zip(&prod) {
                *s += c * v;
            }
        }
        out.axpy(1.0, &scalar(grid, src));
        out
    }

    fn rhs_dtheta2(&self, d: &MomentDrive, t: &Tensor2Field) -> Tensor2Field {
        let mut out = self.transport(d, t);
        out.axpy(1.0, d.dtheta_source.as_ref().expect("tensor drive"));
        out
    }

    fn rhs_cross(&self, d: &MomentDrive, cross: &Tensor2Field, dtheta2: &Tensor2Field) -> Tensor2Field {
        let mut out = self.transport(d, cross);
        out.axpy(1.0, d.cross_source.as_ref().expect("tensor drive"));
        out.axpy(1.0, &self.y_times(-2.0 * self.g, dtheta2));
        out
    }

    fn rhs_u2(&self, d: &MomentDrive, u2: &Tensor2Field, cross: &Tensor2Field) -> Tensor2Field {
        let mut out = self.transport(d, u2);
        out.axpy(1.0, d.u_source.as_ref().expect("tensor drive"));
        out.axpy(1.0, &self.y_times(-self.g, cross));
        out
    }

    fn rhs(&self, d: &MomentDrive, s: &MomentState) -> MomentState {
        let mut ap = Vec::with_capacity(s.ap.len());
        for (i, a) in s.ap.iter().enumerate() {
            let p = i + 2;
            let lower = match p {
                2 => [a, a],
                3 => [&s.ap[0], a],
                _ => [&s.ap[i - 1], &s.ap[i - 2]],
            };
            ap.push(self.rhs_pth(d, p, a, lower));
        }
        let (dtheta2, cross, u2) = if self.tensors {
            (
                self.rhs_dtheta2(d, &s.dtheta2),
                self.rhs_cross(d, &s.cross, &s.dtheta2),
                self.rhs_u2(d, &s.u2, &s.cross),
            )
        } else {
            let z = Tensor2Field::zeros(self.grid().clone());
            (z.clone(), z.clone(), z)
        };
        MomentState { theta2: self.rhs_theta2(d, &s.theta2), dtheta2, u2, cross, ap, t: s.t }
    }

    fn drives(&self, t: f64) -> Result<[MomentDrive; 3]> {
        Ok([self.drive(t)?, self.drive(t + 0.5 * self.dt)?, self.drive(t + self.dt)?])
    }

    /// One RK4 step of every moment equation in lockstep.
    pub fn step(&self, s: &MomentState, step: u64) -> Result<MomentState> {
        let [d0, dh, d1] = self.drives(s.t)?;
        let h = self.dt;
        let k1 = self.rhs(&d0, s);
        let k2 = self.rhs(&dh, &s.combine(&[(0.5 * h, &k1)]));
        let k3 = self.rhs(&dh, &s.combine(&[(0.5 * h, &k2)]));
        let k4 = self.rhs(&d1, &s.combine(&[(h, &k3)]));
        let mut next = s.combine(&[(h / 6.0, &k1), (h / 3.0, &k2), (h / 3.0, &k3), (h / 6.0, &k4)]);
        next.t = (step + 1) as f64 * h;
        for t in [&mut next.dtheta2, &mut next.u2, &mut next.cross] {
            t.set_symmetric(true);
        }
        guard(s, &next, step + 1)?;
        Ok(next)
    }

    fn rk4<K: Kind>(
        &self,
        f: &Field<K>,
        t: f64,
        rhs: impl Fn(&MomentDrive, &Field<K>) -> Field<K>,
    ) -> Result<Field<K>> {
        let [d0, dh, d1] = self.drives(t)?;
        let h = self.dt;
        let k1 = rhs(&d0, f);
        let k2 = rhs(&dh, &Field::combine(&[(1.0, f), (0.5 * h, &k1)]));
        let k3 = rhs(&dh, &Field::combine(&[(1.0, f), (0.5 * h, &k2)]));
        let k4 = rhs(&d1, &Field::combine(&[(1.0, f), (h, &k3)]));
        let mut out = Field::combine(&[(1.0, f), (h / 6.0, &k1), (h / 3.0, &k2), (h / 3.0, &k3), (h / 6.0, &k4)]);
        out.set_symmetric(f.is_symmetric());
        let (n0, n1) = (f.l2_norm(), out.l2_norm());
        if !out.is_finite() || (n0 > 1e-300 && n1 > 1e6 * n0) {
            return Err(Error::Instability { step: (t / h).round() as u64 + 1, detail: format!("norm {n0:e} -> {n1:e}") });
        }
        Ok(out)
    }

    /// One step of the `theta` variance equation from time `t`.
    pub fn step_theta_covariance(&self, theta2: &ScalarField, t: f64) -> Result<ScalarField> {
        self.rk4(theta2, t, |d, f| self.rhs_theta2(d, f))
    }

    /// One step of the `d theta` covariance equation.
    pub fn step_dtheta_covariance(&self, dtheta2: &Tensor2Field, t: f64) -> Result<Tensor2Field> {
        self.require_tensors()?;
        self.rk4(dtheta2, t, |d, f| self.rhs_dtheta2(d, f))
    }

    /// One step of the cross-covariance equation with `dtheta2` held fixed.
    pub fn step_cross_covariance(&self, cross: &Tensor2Field, dtheta2: &Tensor2Field, t: f64) -> Result<Tensor2Field> {
        self.require_tensors()?;
        self.rk4(cross, t, |d, f| self.rhs_cross(d, f, dtheta2))
    }

    /// One step of the `u` covariance equation with `cross` held fixed.
    pub fn step_u_covariance(&self, u2: &Tensor2Field, cross: &Tensor2Field, t: f64) -> Result<Tensor2Field> {
        self.require_tensors()?;
        self.rk4(u2, t, |d, f| self.rhs_u2(d, f, cross))
    }

    /// One step of `A^(p)` with the lower moments held fixed. `ap[i]` is
    /// `A^(i+2)`.
    pub fn step_pth_moment(&self, ap: &[ScalarField], p: usize, t: f64) -> Result<ScalarField> {
        if p < 2 || p > ap.len() + 1 {
            return Err(Error::InvalidArgument(format!("no A^({p}) among {} moments", ap.len())));
        }
        let lower = match p {
            2 | 3 => [&ap[0], &ap[0]],
            _ => [&ap[p - 3], &ap[p - 4]],
        };
        self.rk4(&ap[p - 2], t, |d, f| self.rhs_pth(d, p, f, lower))
    }

    fn require_tensors(&self) -> Result<()> {
        if self.tensors {
            Ok(())
        } else {
            Err(Error::InvalidArgument("tensor moments are disabled for this system".into()))
        }
    }
}

fn guard(prev: &MomentState, next: &MomentState, step: u64) -> Result<()> {
    if !next.is_finite() {
        return Err(Error::Instability { step, detail: "non-finite moment field".into() });
    }
    let pairs = [
        ("theta2", prev.theta2.l2_norm(), next.theta2.l2_norm()),
        ("dtheta2", prev.dtheta2.l2_norm(), next.dtheta2.l2_norm()),
        ("u2", prev.u2.l2_norm(), next.u2.l2_norm()),
        ("cross", prev.cross.l2_norm(), next.cross.l2_norm()),
    ];
    for (name, n0, n1) in pairs {
        if n0 > 1e-300 && n1 > 1e6 * n0 {
            return Err(Error::Instability { step, detail: format!("{name} norm {n0:e} -> {n1:e}") });
        }
    }
    Ok(())
}

/// Minimum of one even moment and where it occurs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PositivityEntry {
    pub p: usize,
    pub min: f64,
    pub max: f64,
    /// `(i, j)` node of the minimum (`x` index, `y` index).
    pub min_node: (usize, usize),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PositivityReport {
    pub entries: Vec<PositivityEntry>,
}

impl PositivityReport {
    /// True when every reported minimum is at least `-rel * max(|max|, floor)`.
    pub fn within(&self, rel: f64) -> bool {
        self.entries.iter().all(|e| e.min >= -rel * e.max.abs())
    }
}

/// Minima of the even moments among `ap` (`ap[i]` is `A^(i+2)`).
pub fn even_moment_positivity_check(ap: &[ScalarField]) -> PositivityReport {
    let entries = ap
        .iter()
        .enumerate()
        .filter(|(i, _)| i % 2 == 0)
        .map(|(i, a)| {
            let n = a.grid().n();
            let (idx, min) = a
                .values()
                .iter()
                .copied()
                .enumerate()
                .fold((0, f64::INFINITY), |acc, (k, v)| if v < acc.1 { (k, v) } else { acc });
            PositivityEntry { p: i + 2, min, max: a.max_value(), min_node: (idx % n, idx / n) }
        })
        .collect();
    PositivityReport { entries }
}

/// `(t, ||Theta2||^2 + 1/2 int ||grad Theta2||^2, int ||grad Theta||^2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct L2IdentitySample {
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
}

fn grad_norm_sq(f: &ScalarField) -> f64 {
    gradient(f).l2_norm().powi(2)
}

/// One diagnostics row.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FieldStats {
    pub t: f64,
    pub field: String,
    pub l2: f64,
    pub min: f64,
    pub max: f64,
}

fn stats_rows(s: &MomentState, grid: &TorusGrid) -> Vec<FieldStats> {
    let dv = grid.cell_area();
    s.named_fields()
        .into_iter()
        .map(|(name, data, _)| FieldStats {
            t: s.t,
            l2: (data.iter().map(|v| v * v).sum::<f64>() * dv).sqrt(),
            min: data.iter().copied().fold(f64::INFINITY, f64::min),
            max: data.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            field: name,
        })
        .collect()
}

/// Result of integrating the moment system.
#[derive(Clone, Debug)]
pub struct MomentRun {
    /// States at step 0, every `observe_every` steps and the final step.
    pub states: Vec<MomentState>,
    pub steps: Vec<u64>,
    pub diagnostics: Vec<FieldStats>,
    pub identity: Vec<L2IdentitySample>,
}

impl MomentRun {
    pub fn last(&self) -> &MomentState {
        self.states.last().expect("at least the initial state")
    }

    /// State recorded at `step`, if any.
    pub fn at_step(&self, step: u64) -> Option<&MomentState> {
        self.steps.iter().position(|s| *s == step).map(|i| &self.states[i])
    }

    /// Writes `<name>_<step>.lsf1` per field and `moments.csv`, `identity.csv`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (state, step) in self.states.iter().zip(&self.steps) {
            let n = state.theta2.grid().n() as u32;
            for (name, data, comps) in state.named_fields() {
                let snap = Snapshot { grid_n: n, n_components: comps, step_index: *step, time: state.t, values: data.to_vec() };
                lsf1::write_file(&dir.join(format!("{name}_{step:06}.lsf1")), &snap)?;
            }
        }
        let mut w = csv::Writer::from_path(dir.join("moments.csv"))?;
        for row in &self.diagnostics {
            w.serialize(row)?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("identity.csv"))?;
        for row in &self.identity {
            w.serialize(row)?;
        }
        w.flush()?;
        std::fs::File::create(dir.join("positivity.json"))?.write_all(
            serde_json::to_string_pretty(&even_moment_positivity_check(&self.last().ap))?.as_bytes(),
        )?;
        Ok(())
    }
}

/// Integrates the lockstep system for `n_steps` from `initial`.
pub fn run_moments(sys: &MomentSystem, initial: MomentState, n_steps: usize, observe_every: usize) -> Result<MomentRun> {
    let grid = sys.grid().clone();
    let observe_every = observe_every.max(1);
    let mut run = MomentRun { states: vec![initial.clone()], steps: vec![0], diagnostics: stats_rows(&initial, &grid), identity: Vec::new() };
    let mut state = initial;
    let mut theta_prev = grad_norm_sq(&sys.traj.theta_at(0.0)?);
    let mut t2_prev = grad_norm_sq(&state.theta2);
    let (mut int_t2, mut int_theta) = (0.0, 0.0);
    run.identity.push(L2IdentitySample { t: 0.0, lhs: state.theta2.l2_norm().powi(2), rhs: 0.0 });
    for step in 0..n_steps {
        state = sys.step(&state, step as u64)?;
        let theta_now = grad_norm_sq(&sys.traj.theta_at(state.t)?);
        let t2_now = grad_norm_sq(&state.theta2);
        int_theta += 0.5 * sys.dt * (theta_prev + theta_now);
        int_t2 += 0.5 * sys.dt * (t2_prev + t2_now);
        (theta_prev, t2_prev) = (theta_now, t2_now);
        run.identity.push(L2IdentitySample { t: state.t, lhs: state.theta2.l2_norm().powi(2) + 0.5 * int_t2, rhs: int_theta });
        let done = step + 1;
        if done % observe_every == 0 || done == n_steps {
            run.diagnostics.extend(stats_rows(&state, &grid));
            run.states.push(state.clone());
            run.steps.push(done as u64);
        }
    }
    Ok(run)
}
