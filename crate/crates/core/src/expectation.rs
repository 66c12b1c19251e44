//! Deterministic expectation system in vorticity form.
//!
//! State `(Omega, Theta, Ubar)` with `U = K Omega + Ubar`:
//!
//! ```text
//! dOmega/dt = -L_U Omega + g d_x Theta + 1/2 sum_k L_k^2 Omega
//! dTheta/dt = -L_U Theta + 1/2 sum_k L_k^2 Theta
//! dUbar/dt  = g <Theta> y^ + 1/2 sum_k <L_k^2 V> + 1/2 sum_k <L_k^2 Ubar>
//! ```
//!
//! where `<.>` is the spatial mean. Stepping is RK4; with constant noise
//! fields the diffusion is integrated exactly by an integrating factor.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fields::{
    double_lie, ConstantVector, LieTransport, OneFormField, ScalarField, Transporter, VectorField,
};
use crate::grid::{biot_savart, divergence, poisson_solve, TorusGrid};
use crate::lsf1::Snapshot;
use crate::noise::{hex, NoiseBasis};

#[derive(Clone, Debug)]
pub struct ExpectationState {
    pub omega: ScalarField,
    pub theta: ScalarField,
    pub ubar: ConstantVector,
    pub t: f64,
}

impl ExpectationState {
    pub fn zeros(grid: &Arc<TorusGrid>) -> Self {
        Self {
            omega: ScalarField::zeros(grid.clone()),
            theta: ScalarField::zeros(grid.clone()),
            ubar: ConstantVector::ZERO,
            t: 0.0,
        }
    }

    /// `U = K Omega + Ubar`.
    pub fn velocity(&self) -> Result<VectorField> {
        Ok(biot_savart(&self.omega)?.add_constant(self.ubar))
    }
}

/// The pieces of the mean-velocity right-hand side.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanForcing {
    pub buoyancy: ConstantVector,
    pub fluctuation_diffusion: ConstantVector,
    /// `1/2 sum <L^2 Ubar>` with `Ubar` read as a vector field (used).
    pub mean_diffusion_vector: ConstantVector,
    /// The same term with `Ubar` read as a one-form (diagnostic only).
    pub mean_diffusion_oneform: ConstantVector,
}

impl MeanForcing {
    pub fn total(&self) -> ConstantVector {
        self.buoyancy
            .axpy(1.0, self.fluctuation_diffusion)
            .axpy(1.0, self.mean_diffusion_vector)
    }
}

/// Right-hand side of the mean-velocity ODE.
pub fn mean_forcing(
    ubar: ConstantVector,
    theta: &ScalarField,
    v: &VectorField,
    basis: &NoiseBasis,
    g: f64,
) -> MeanForcing {
    let grid = theta.grid();
    let mut out = MeanForcing {
        buoyancy: ConstantVector::new(0.0, g * theta.mean()),
        ..Default::default()
    };
    if basis.all_constant() {
        // Every term is a derivative of something periodic.
        return out;
    }
    let vf = v.to_one_form();
    let uv = VectorField::constant(grid.clone(), ubar);
    let uf = uv.to_one_form();
    for t in basis.transporters() {
        let lv = OneFormField::lie_with(t, &OneFormField::lie_with(t, &vf)).mean();
        out.fluctuation_diffusion = out.fluctuation_diffusion.axpy(0.5, lv);
        let lu = VectorField::lie_with(t, &VectorField::lie_with(t, &uv)).mean();
        out.mean_diffusion_vector = out.mean_diffusion_vector.axpy(0.5, lu);
        let lf = OneFormField::lie_with(t, &OneFormField::lie_with(t, &uf)).mean();
        out.mean_diffusion_oneform = out.mean_diffusion_oneform.axpy(0.5, lf);
    }
    out
}

/// One RK4 step of the mean ODE with `Theta` and `V` held fixed.
pub fn evolve_mean(
    ubar: ConstantVector,
    theta: &ScalarField,
    v: &VectorField,
    basis: &NoiseBasis,
    g: f64,
    dt: f64,
) -> ConstantVector {
    let f = |u: ConstantVector| mean_forcing(u, theta, v, basis, g).total();
    let k1 = f(ubar);
    let k2 = f(ubar.axpy(0.5 * dt, k1));
    let k3 = f(ubar.axpy(0.5 * dt, k2));
    let k4 = f(ubar.axpy(dt, k3));
    ubar.axpy(dt / 6.0, k1)
        .axpy(dt / 3.0, k2)
        .axpy(dt / 3.0, k3)
        .axpy(dt / 6.0, k4)
}

/// Modified pressure and the mean that was removed from its source.
#[derive(Clone, Debug)]
pub struct PressureSolution {
    pub ptilde: ScalarField,
    pub source_mean: f64,
}

/// Solve `-lap p = div(L_U U) - g d_y Theta - 1/2 sum div(L_k^2 U)` with
/// `U` read as a one-form.
pub fn recover_pressure_full(
    u: &VectorField,
    theta: &ScalarField,
    basis: &NoiseBasis,
    g: f64,
) -> Result<PressureSolution> {
    u.check_grid(theta)?;
    basis.check_grid(u.grid())?;
    let grid = u.grid();
    let uf = u.to_one_form();
    let mut flux = OneFormField::lie_with(&Transporter::new(u), &uf);
    let dyth = grid.derivative(theta.values(), 1);
    flux.axpy(-0.5, &double_lie(basis, &uf)?);
    let mut src = divergence(&flux.to_vector());
    src.values_mut().iter_mut().zip(&dyth).for_each(|(s, d)| *s -= g * d);
    let source_mean = src.mean();
    src.values_mut().iter_mut().for_each(|s| *s -= source_mean);
    Ok(PressureSolution { ptilde: poisson_solve(&src)?, source_mean })
}

pub fn recover_pressure(u: &VectorField, theta: &ScalarField, basis: &NoiseBasis, g: f64) -> Result<ScalarField> {
    Ok(recover_pressure_full(u, theta, basis, g)?.ptilde)
}

/// Where the transporting velocity comes from.
#[derive(Clone, Copy, Debug)]
pub enum VelocityMode<'a> {
    /// `U = K Omega + Ubar` rebuilt at every stage.
    Coupled,
    /// A fixed velocity field (test mode).
    Frozen(&'a VectorField),
    /// Velocity interpolated from a stored trajectory.
    Prescribed(&'a ExpectationTrajectory),
}

/// Exact propagator of the constant-coefficient diffusion on the band.
#[derive(Clone, Debug)]
struct HeatFactor {
    half: Vec<f64>,
    full: Vec<f64>,
}

impl HeatFactor {
    fn new(basis: &NoiseBasis, dt: f64) -> Self {
        let grid = basis.grid();
        let n = grid.n();
        let consts: Vec<ConstantVector> = (0..basis.len()).map(|k| basis.xi(k).mean()).collect();
        let mut half = vec![1.0; n * n];
        let mut full = vec![1.0; n * n];
        for j in 0..n {
            for i in 0..n {
                if !grid.in_band(i, j) {
                    continue;
                }
                let (kx, ky) = (grid.deriv_wavenumber(i), grid.deriv_wavenumber(j));
                let sym: f64 = consts.iter().map(|c| (c.x * kx + c.y * ky).powi(2)).sum::<f64>() * -0.5;
                half[j * n + i] = (0.5 * dt * sym).exp();
                full[j * n + i] = (dt * sym).exp();
            }
        }
        Self { half, full }
    }

    fn apply(&self, f: &ScalarField, full: bool) -> ScalarField {
        let grid = f.grid();
        let fac = if full { &self.full } else { &self.half };
        let mut c = grid.forward(f.values());
        c.iter_mut().zip(fac).for_each(|(c, m)| *c *= *m);
        ScalarField::from_values(grid.clone(), grid.inverse(c)).expect("grid-sized")
    }
}

#[derive(Clone)]
struct Stage {
    omega: ScalarField,
    theta: ScalarField,
    ubar: ConstantVector,
}

impl Stage {
    fn axpy(&self, a: f64, d: &Stage) -> Stage {
        let mut s = self.clone();
        s.omega.axpy(a, &d.omega);
        s.theta.axpy(a, &d.theta);
        s.ubar = s.ubar.axpy(a, d.ubar);
        s
    }
}

/// Time stepper for the expectation system.
pub struct ExpectationSolver<'a> {
    basis: &'a NoiseBasis,
    g: f64,
    dt: f64,
    mode: VelocityMode<'a>,
    heat: Option<HeatFactor>,
}

impl<'a> ExpectationSolver<'a> {
    pub fn new(basis: &'a NoiseBasis, g: f64, dt: f64, mode: VelocityMode<'a>) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        if matches!(mode, VelocityMode::Coupled) {
            basis.ensure_elliptic()?;
        }
        let heat = basis.all_constant().then(|| HeatFactor::new(basis, dt));
        Ok(Self { basis, g, dt, mode, heat })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    fn velocity(&self, s: &Stage, t: f64) -> Result<VectorField> {
        match self.mode {
            VelocityMode::Coupled => Ok(biot_savart(&s.omega)?.add_constant(s.ubar)),
            VelocityMode::Frozen(u) => Ok(u.clone()),
            VelocityMode::Prescribed(traj) => traj.velocity_at(t),
        }
    }

    fn rhs(&self, s: &Stage, t: f64) -> Result<Stage> {
        let u = self.velocity(s, t)?;
        let tr = Transporter::new(&u);
        let grid = s.theta.grid();
        let mut omega = ScalarField::lie_with(&tr, &s.omega).scaled(-1.0);
        let dx = grid.derivative(s.theta.values(), 0);
        omega.values_mut().iter_mut().zip(&dx).for_each(|(o, d)| *o += self.g * d);
        let mut theta = ScalarField::lie_with(&tr, &s.theta).scaled(-1.0);
        if self.heat.is_none() {
            omega.axpy(0.5, &double_lie(self.basis, &s.omega)?);
            theta.axpy(0.5, &double_lie(self.basis, &s.theta)?);
        }
        let ubar = match self.mode {
            VelocityMode::Coupled => {
                let v = u.add_constant(ConstantVector::new(-s.ubar.x, -s.ubar.y));
                mean_forcing(s.ubar, &s.theta, &v, self.basis, self.g).total()
            }
            _ => ConstantVector::ZERO,
        };
        Ok(Stage { omega, theta, ubar })
    }

    fn propagate(&self, s: &Stage, full: bool) -> Stage {
        match &self.heat {
            None => s.clone(),
            Some(h) => Stage { omega: h.apply(&s.omega, full), theta: h.apply(&s.theta, full), ubar: s.ubar },
        }
    }

    /// Transporting velocity for `state`.
    pub fn state_velocity(&self, state: &ExpectationState) -> Result<VectorField> {
        let s = Stage { omega: state.omega.clone(), theta: state.theta.clone(), ubar: state.ubar };
        self.velocity(&s, state.t)
    }

    /// Largest stable step for the current state.
    pub fn stability_bound(&self, state: &ExpectationState) -> Result<f64> {
        let s = Stage { omega: state.omega.clone(), theta: state.theta.clone(), ubar: state.ubar };
        let umax = self.velocity(&s, state.t)?.max_abs();
        let h = state.theta.grid().spacing();
        let mut bound = if umax > 0.0 { 0.5 * h / umax } else { f64::INFINITY };
        if self.heat.is_none() && self.basis.a_max() > 0.0 {
            bound = bound.min(0.25 * h * h / self.basis.a_max());
        }
        Ok(bound)
    }

    /// One step; `step` labels errors.
    pub fn step(&self, state: &ExpectationState, step: u64) -> Result<ExpectationState> {
        let bound = self.stability_bound(state)?;
        if self.dt > bound {
            return Err(Error::StepTooLarge { dt: self.dt, bound });
        }
        let dt = self.dt;
        let t = state.t;
        let u0 = Stage { omega: state.omega.clone(), theta: state.theta.clone(), ubar: state.ubar };
        let a = self.rhs(&u0, t)?;
        let eu = self.propagate(&u0, false);
        let u1 = self.propagate(&u0.axpy(0.5 * dt, &a), false);
        let b = self.rhs(&u1, t + 0.5 * dt)?;
        let u2 = eu.axpy(0.5 * dt, &b);
        let c = self.rhs(&u2, t + 0.5 * dt)?;
        let efu = self.propagate(&u0, true);
        let u3 = efu.axpy(dt, &self.propagate(&c, false));
        let d = self.rhs(&u3, t + dt)?;
        let mut bc = b.axpy(1.0, &c);
        bc = self.propagate(&bc, false);
        let ea = self.propagate(&a, true);
        let next = efu.axpy(dt / 6.0, &ea).axpy(dt / 3.0, &bc).axpy(dt / 6.0, &d);

        for (name, old, new) in [("Omega", &state.omega, &next.omega), ("Theta", &state.theta, &next.theta)] {
            let (n0, n1) = (old.l2_norm(), new.l2_norm());
            if !new.is_finite() || (n0 > 0.0 && n1 > 1e6 * n0) {
                return Err(Error::Instability {
                    step,
                    detail: format!("{name} norm {n0:e} -> {n1:e}"),
                });
            }
        }
        Ok(ExpectationState { omega: next.omega, theta: next.theta, ubar: next.ubar, t: t + dt })
    }
}

/// One coupled step of the expectation system.
pub fn step_expectation(
    state: &ExpectationState,
    basis: &NoiseBasis,
    g: f64,
    dt: f64,
) -> Result<ExpectationState> {
    ExpectationSolver::new(basis, g, dt, VelocityMode::Coupled)?.step(state, 0)
}

/// Descriptive metadata persisted with a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub n: usize,
    pub length: f64,
    pub dealias_fraction: f64,
    pub dt: f64,
    pub save_every: usize,
    pub g: f64,
    pub noise_hash: String,
    pub config_hash: String,
    pub initial: serde_json::Value,
}

/// Per-snapshot diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotInfo {
    pub step: u64,
    pub t: f64,
    pub ubar: ConstantVector,
    pub pressure_source_mean: f64,
    pub mean_forcing: MeanForcing,
}

/// Stored expectation history: states, velocities and pressures at every
/// saved step.
#[derive(Clone, Debug)]
pub struct ExpectationTrajectory {
    grid: Arc<TorusGrid>,
    pub meta: TrajectoryMeta,
    pub states: Vec<ExpectationState>,
    pub velocity: Vec<VectorField>,
    pub ptilde: Vec<ScalarField>,
    pub info: Vec<SnapshotInfo>,
}

impl ExpectationTrajectory {
    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Time between stored snapshots.
    pub fn snapshot_dt(&self) -> f64 {
        self.meta.dt * self.meta.save_every as f64
    }

    pub fn t_end(&self) -> f64 {
        self.states.last().map_or(0.0, |s| s.t)
    }

    /// Bracketing snapshot index and weight of the later one.
    pub fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let h = self.snapshot_dt();
        let x = t / h;
        let last = (self.len() - 1) as f64;
        if x < -1e-9 || x > last + 1e-9 {
            return Err(Error::TrajectoryExhausted { requested: t, available: self.t_end() });
        }
        let x = x.clamp(0.0, last);
        if self.len() == 1 {
            return Ok((0, 0.0));
        }
        let i = (x.floor() as usize).min(self.len() - 2);
        let mut w = x - i as f64;
        if w < 1e-9 {
            w = 0.0;
        } else if w > 1.0 - 1e-9 {
            w = 1.0;
        }
        Ok((i, w))
    }

    fn lerp<K: crate::fields::Kind>(
        list: &[crate::fields::Field<K>],
        (i, w): (usize, f64),
    ) -> crate::fields::Field<K> {
        if w == 0.0 {
            list[i].clone()
        } else if w == 1.0 {
            list[i + 1].clone()
        } else {
            crate::fields::Field::combine(&[(1.0 - w, &list[i]), (w, &list[i + 1])])
        }
    }

    pub fn velocity_at(&self, t: f64) -> Result<VectorField> {
        Ok(Self::lerp(&self.velocity, self.locate(t)?))
    }

    pub fn ptilde_at(&self, t: f64) -> Result<ScalarField> {
        Ok(Self::lerp(&self.ptilde, self.locate(t)?))
    }

    pub fn theta_at(&self, t: f64) -> Result<ScalarField> {
        let (i, w) = self.locate(t)?;
        Ok(if w == 0.0 {
            self.states[i].theta.clone()
        } else if w == 1.0 {
            self.states[i + 1].theta.clone()
        } else {
            ScalarField::combine(&[(1.0 - w, &self.states[i].theta), (w, &self.states[i + 1].theta)])
        })
    }

    pub fn omega_at(&self, t: f64) -> Result<ScalarField> {
        let (i, w) = self.locate(t)?;
        Ok(if w == 0.0 {
            self.states[i].omega.clone()
        } else if w == 1.0 {
            self.states[i + 1].omega.clone()
        } else {
            ScalarField::combine(&[(1.0 - w, &self.states[i].omega), (w, &self.states[i + 1].omega)])
        })
    }

    fn file_names(index: usize) -> [(String, &'static str); 4] {
        [
            (format!("omega_{index:06}.lsf1"), "omega"),
            (format!("theta_{index:06}.lsf1"), "theta"),
            (format!("u_{index:06}.lsf1"), "u"),
            (format!("ptilde_{index:06}.lsf1"), "ptilde"),
        ]
    }

    /// Write `meta.json` plus one LSF1 file per field and snapshot.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        for (idx, st) in self.states.iter().enumerate() {
            let step = self.info[idx].step;
            let snaps = [
                Snapshot::from_field(&st.omega, step, st.t),
                Snapshot::from_field(&st.theta, step, st.t),
                Snapshot::from_field(&self.velocity[idx], step, st.t),
                Snapshot::from_field(&self.ptilde[idx], step, st.t),
            ];
            let mut entry = serde_json::Map::new();
            for ((name, key), snap) in Self::file_names(idx).into_iter().zip(snaps) {
                let bytes = snap.to_bytes();
                std::fs::write(dir.join(&name), &bytes)?;
                entry.insert(
                    key.to_string(),
                    serde_json::json!({ "file": name, "sha256": hex(&Sha256::digest(&bytes)) }),
                );
            }
            files.push(serde_json::Value::Object(entry));
        }
        let doc = serde_json::json!({
            "format": "lasalt-trajectory-1",
            "meta": self.meta,
            "snapshots": self.info,
            "files": files,
        });
        std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&doc)?)?;
        Ok(())
    }

    /// Load a trajectory written by [`save`](Self::save), verifying every
    /// file checksum.
    pub fn load(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join("meta.json"))?;
        let doc: serde_json::Value = serde_json::from_str(&text)?;
        let meta: TrajectoryMeta = serde_json::from_value(doc["meta"].clone())?;
        let info: Vec<SnapshotInfo> = serde_json::from_value(doc["snapshots"].clone())?;
        let files = doc["files"]
            .as_array()
            .ok_or_else(|| Error::Format("meta.json lacks a file list".into()))?;
        if files.len() != info.len() {
            return Err(Error::Format("meta.json file list and snapshots disagree".into()));
        }
        let grid = TorusGrid::with_params(meta.n, meta.length, meta.dealias_fraction)?;
        let read = |entry: &serde_json::Value, key: &str| -> Result<Snapshot> {
            let name = entry[key]["file"]
                .as_str()
                .ok_or_else(|| Error::Format(format!("missing {key} entry")))?;
            let path: PathBuf = dir.join(name);
            let bytes = std::fs::read(&path)?;
            let want = entry[key]["sha256"].as_str().unwrap_or_default();
            if hex(&Sha256::digest(&bytes)) != want {
                return Err(Error::HashMismatch(format!("{} does not match its recorded checksum", path.display())));
            }
            Snapshot::from_bytes(&bytes)
        };
        let mut states = Vec::new();
        let mut velocity = Vec::new();
        let mut ptilde = Vec::new();
        for (entry, inf) in files.iter().zip(&info) {
            states.push(ExpectationState {
                omega: read(entry, "omega")?.to_field(&grid)?,
                theta: read(entry, "theta")?.to_field(&grid)?,
                ubar: inf.ubar,
                t: inf.t,
            });
            velocity.push(read(entry, "u")?.to_field(&grid)?);
            ptilde.push(read(entry, "ptilde")?.to_field(&grid)?);
        }
        Ok(Self { grid, meta, states, velocity, ptilde, info })
    }
}

/// Parameters of an expectation run.
#[derive(Clone, Debug)]
pub struct ExpectationRun {
    pub g: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub save_every: usize,
    pub config_hash: String,
    pub initial_spec: serde_json::Value,
}

fn snapshot(
    solver: &ExpectationSolver,
    state: &ExpectationState,
    step: u64,
    basis: &NoiseBasis,
    g: f64,
) -> Result<(VectorField, ScalarField, SnapshotInfo)> {
    let u = solver.state_velocity(state)?;
    let p = recover_pressure_full(&u, &state.theta, basis, g)?;
    let v = biot_savart(&state.omega)?;
    let info = SnapshotInfo {
        step,
        t: state.t,
        ubar: state.ubar,
        pressure_source_mean: p.source_mean,
        mean_forcing: mean_forcing(state.ubar, &state.theta, &v, basis, g),
    };
    Ok((u, p.ptilde, info))
}

/// Integrate the coupled system and record every `save_every`-th step.
pub fn run_expectation(
    initial: ExpectationState,
    basis: &NoiseBasis,
    run: &ExpectationRun,
) -> Result<ExpectationTrajectory> {
    run_expectation_mode(initial, basis, run, VelocityMode::Coupled)
}

/// As [`run_expectation`] with a chosen velocity source. The recorded
/// velocity is the one that transported the fields.
pub fn run_expectation_mode(
    initial: ExpectationState,
    basis: &NoiseBasis,
    run: &ExpectationRun,
    mode: VelocityMode,
) -> Result<ExpectationTrajectory> {
    if run.save_every == 0 {
        return Err(Error::Config("save_every must be positive".into()));
    }
    let grid = initial.theta.grid().clone();
    basis.check_grid(&grid)?;
    let solver = ExpectationSolver::new(basis, run.g, run.dt, mode)?;
    let meta = TrajectoryMeta {
        n: grid.n(),
        length: grid.length(),
        dealias_fraction: grid.dealias_fraction(),
        dt: run.dt,
        save_every: run.save_every,
        g: run.g,
        noise_hash: basis.spec_hash().to_string(),
        config_hash: run.config_hash.clone(),
        initial: run.initial_spec.clone(),
    };
    let mut traj = ExpectationTrajectory {
        grid,
        meta,
        states: vec![],
        velocity: vec![],
        ptilde: vec![],
        info: vec![],
    };
    let mut state = initial;
    state.t = 0.0;
    let record = |traj: &mut ExpectationTrajectory, state: &ExpectationState, step: u64| -> Result<()> {
        let (u, p, info) = snapshot(&solver, state, step, basis, run.g)?;
        traj.states.push(state.clone());
        traj.velocity.push(u);
        traj.ptilde.push(p);
        traj.info.push(info);
        Ok(())
    };
    record(&mut traj, &state, 0)?;
    for step in 1..=run.n_steps {
        state = solver.step(&state, step as u64)?;
        // Keep times on the exact lattice.
        state.t = step as f64 * run.dt;
        if step % run.save_every == 0 {
            record(&mut traj, &state, step as u64)?;
        }
    }
    Ok(traj)
}
