//! Orchestration behind the command-line verbs: build inputs from a
//! configuration, run a stage, and write its outputs.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;

use crate::characteristics::{integrate_flow, theta_by_pullback, u_by_characteristics, CharacteristicsInput, Direction};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::expectation::{run_expectation, ExpectationRun, ExpectationState, ExpectationTrajectory};
use crate::fields::{Field, Kind};
use crate::grid::TorusGrid;
use crate::lsf1::{self, Snapshot};
use crate::moments::{run_moments, MomentRun, MomentState, MomentSystem};
use crate::montecarlo::{closure_compare, mean_check, run_ensemble, ClosureReport, ClosureTolerances, EnsembleResult, EnsembleSpec, Quantities};
use crate::noise::{build_noise_basis, sample_path, NoiseBasis};
use crate::spde::{assemble_forcing, integrate, ForcingCache, SpdeContext, SpdeState};

/// Grid and noise basis built from a configuration.
pub struct Setup {
    pub cfg: RunConfig,
    pub grid: Arc<TorusGrid>,
    pub basis: NoiseBasis,
}

impl Setup {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = cfg.build_grid()?;
        let basis = build_noise_basis(&grid, &cfg.noise)?;
        Ok(Self { cfg: cfg.clone(), grid, basis })
    }

    pub fn initial_state(&self) -> Result<ExpectationState> {
        let mut s = ExpectationState::zeros(&self.grid);
        s.omega = self.cfg.initial.omega.build(&self.grid)?;
        s.theta = self.cfg.initial.theta.build(&self.grid)?;
        s.ubar = self.cfg.ubar0();
        Ok(s)
    }

    pub fn expectation_run(&self) -> Result<ExpectationRun> {
        let c = &self.cfg;
        Ok(ExpectationRun {
            g: c.physics.g,
            dt: c.solver.dt,
            n_steps: c.n_steps(),
            save_every: c.solver.save_every,
            config_hash: c.expectation_hash()?,
            initial_spec: serde_json::to_value(&c.initial)?,
        })
    }

    pub fn expectation(&self) -> Result<ExpectationTrajectory> {
        run_expectation(self.initial_state()?, &self.basis, &self.expectation_run()?)
    }

    pub fn forcing(&self, traj: &ExpectationTrajectory) -> Option<ForcingCache> {
        self.cfg.solver.enable_u_equation.then(|| assemble_forcing(traj, self.cfg.physics.g))
    }

    pub fn ensemble_spec(&self) -> EnsembleSpec {
        let c = &self.cfg;
        let n = c.n_steps();
        EnsembleSpec {
            members: c.ensemble.members,
            seed: c.ensemble.seed,
            batches: c.ensemble.batches.min(c.ensemble.members),
            p_max: c.ensemble.moments_p,
            scheme: c.solver.scheme,
            n_steps: n,
            observe_steps: EnsembleSpec::observation_steps(n, c.ensemble.observe_every),
            with_u: c.solver.enable_u_equation,
            retain_members: c.ensemble.retain_members,
            config_hash: c.expectation_hash().unwrap_or_default(),
        }
    }
}

/// One row of a diagnostics CSV.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagnosticRow {
    pub t: f64,
    pub field: String,
    pub l2: f64,
    pub min: f64,
    pub max: f64,
    /// Domain integral of the first component.
    pub integral: f64,
}

impl DiagnosticRow {
    pub fn of<K: Kind>(t: f64, name: &str, f: &Field<K>) -> Self {
        let first: f64 = f.component(0).iter().sum::<f64>() * f.grid().cell_area();
        Self { t, field: name.into(), l2: f.l2_norm(), min: f.min_value(), max: f.max_value(), integral: first }
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn write_field<K: Kind>(dir: &Path, name: &str, f: &Field<K>, step: u64, t: f64) -> Result<()> {
    lsf1::write_file(&dir.join(format!("{name}_{step:06}.lsf1")), &Snapshot::from_field(f, step, t))
}

/// Creates `dir`. An existing non-empty directory is only reused with
/// `force`, in which case the files this crate writes are removed first.
pub fn prepare_output(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let entries: Vec<PathBuf> = std::fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
        if !entries.is_empty() {
            if !force {
                return Err(Error::Config(format!("{} is not empty; pass --force to overwrite", dir.display())));
            }
            for p in entries {
                let ours = matches!(p.extension().and_then(|e| e.to_str()), Some("lsf1" | "csv" | "json"));
                if ours && p.is_file() {
                    std::fs::remove_file(&p)?;
                }
            }
        }
    }
    std::fs::create_dir_all(dir)?;
    Ok(())
}

/// Runs the expectation solve and writes the trajectory directory.
pub fn cmd_expectation(setup: &Setup, out: &Path, force: bool) -> Result<ExpectationTrajectory> {
    let traj = setup.expectation()?;
    prepare_output(out, force)?;
    traj.save(out)?;
    let mut rows = Vec::new();
    for (s, u) in traj.states.iter().zip(&traj.velocity) {
        rows.push(DiagnosticRow::of(s.t, "Omega", &s.omega));
        rows.push(DiagnosticRow::of(s.t, "Theta", &s.theta));
        rows.push(DiagnosticRow::of(s.t, "U", u));
    }
    write_csv(&out.join("diagnostics.csv"), &rows)?;
    Ok(traj)
}

/// Loads a trajectory and checks that it was produced by `setup`'s configuration.
pub fn load_trajectory(setup: &Setup, dir: &Path) -> Result<ExpectationTrajectory> {
    if !dir.join("meta.json").is_file() {
        return Err(Error::Config(format!("no trajectory at {}; run `expectation` first", dir.display())));
    }
    let traj = ExpectationTrajectory::load(dir)?;
    let want = setup.cfg.expectation_hash()?;
    if traj.meta.config_hash != want {
        return Err(Error::HashMismatch(format!(
            "trajectory {} was produced by config {}, current config is {}",
            dir.display(),
            traj.meta.config_hash,
            want
        )));
    }
    Ok(traj)
}

/// Integrates one ensemble member and writes its snapshots.
pub fn cmd_spde(setup: &Setup, traj: &ExpectationTrajectory, member: u64, out: &Path, force: bool) -> Result<SpdeState> {
    let c = &setup.cfg;
    let forcing = setup.forcing(traj);
    let ctx = SpdeContext::new(traj, &setup.basis, forcing.as_ref(), c.physics.g, c.solver.dt)?;
    let n = c.n_steps();
    let path = sample_path(c.ensemble.seed, member, n, c.solver.dt, setup.basis.len())?;
    prepare_output(out, force)?;
    let every = c.solver.save_every as u64;
    let mut rows = Vec::new();
    let save = |s: &SpdeState, rows: &mut Vec<DiagnosticRow>| -> Result<()> {
        write_field(out, "theta", &s.theta, s.step_index, s.t)?;
        write_field(out, "omega", &s.omega, s.step_index, s.t)?;
        rows.push(DiagnosticRow::of(s.t, "theta", &s.theta));
        rows.push(DiagnosticRow::of(s.t, "omega", &s.omega));
        if let Some(u) = &s.u {
            write_field(out, "u", u, s.step_index, s.t)?;
            rows.push(DiagnosticRow::of(s.t, "u", u));
        }
        Ok(())
    };
    let start = SpdeState::from_expectation(traj, forcing.is_some());
    save(&start, &mut rows)?;
    let last = integrate(start, &ctx, &path, c.solver.scheme, n, |s| {
        if s.step_index % every == 0 {
            save(s, &mut rows)?;
        }
        Ok(())
    })?;
    write_csv(&out.join("diagnostics.csv"), &rows)?;
    Ok(last)
}

fn moment_run(setup: &Setup, traj: &ExpectationTrajectory) -> Result<MomentRun> {
    let c = &setup.cfg;
    let sys = MomentSystem::new(traj, &setup.basis, c.physics.g, c.solver.dt, c.solver.enable_u_equation)?;
    let init = MomentState::zeros(&setup.grid, c.ensemble.moments_p);
    run_moments(&sys, init, c.n_steps(), c.ensemble.observe_every)
}

/// Integrates the closed moment equations and writes them.
pub fn cmd_moments(setup: &Setup, traj: &ExpectationTrajectory, out: &Path, force: bool) -> Result<MomentRun> {
    let run = moment_run(setup, traj)?;
    prepare_output(out, force)?;
    run.save(out)?;
    Ok(run)
}

/// Outputs of the `ensemble` verb.
pub struct EnsembleOutcome {
    pub result: EnsembleResult,
    pub moments: MomentRun,
    pub report: ClosureReport,
}

/// Runs the ensemble, compares it with the moment equations and writes
/// statistics snapshots plus the closure report.
pub fn cmd_ensemble(setup: &Setup, traj: &ExpectationTrajectory, out: &Path, force: bool) -> Result<EnsembleOutcome> {
    let c = &setup.cfg;
    let forcing = setup.forcing(traj);
    let ctx = SpdeContext::new(traj, &setup.basis, forcing.as_ref(), c.physics.g, c.solver.dt)?;
    let spec = setup.ensemble_spec();
    let moments = moment_run(setup, traj)?;
    let result = run_ensemble(&spec, &ctx)?;
    let which = Quantities::all(c.ensemble.moments_p, c.solver.enable_u_equation);
    let report = closure_compare(&result, &moments, &which, ClosureTolerances::from_base(c.ensemble.closure_tolerance))?;
    prepare_output(out, force)?;
    let mut checks = Vec::new();
    for obs in &result.stats.observations {
        let mean = Field::from_data(setup.grid.clone(), obs.theta.mean.clone())?;
        let var = Field::from_data(setup.grid.clone(), obs.theta.variance())?;
        write_field::<crate::fields::Scalar>(out, "theta_mean", &mean, obs.step, obs.t)?;
        write_field::<crate::fields::Scalar>(out, "theta_var", &var, obs.step, obs.t)?;
        for p in 3..=obs.theta.p_max {
            let a = Field::from_data(setup.grid.clone(), obs.theta.central_moment(p))?;
            write_field::<crate::fields::Scalar>(out, &format!("theta_a{p}"), &a, obs.step, obs.t)?;
        }
        if obs.tensors.is_some() {
            for (name, data) in [("dtheta2", obs.dtheta2()), ("cross", obs.cross()), ("u2", obs.u2())] {
                let f = Field::from_data(setup.grid.clone(), data)?;
                write_field::<crate::fields::Tensor2>(out, name, &f, obs.step, obs.t)?;
            }
        }
        checks.push(mean_check(obs, &traj.theta_at(obs.t)?));
    }
    report.write_json(&out.join("closure_report.json"))?;
    report.write_csv(&out.join("closure.csv"))?;
    write_csv(&out.join("mean_check.csv"), &checks)?;
    Ok(EnsembleOutcome { result, moments, report })
}

/// Comparison of the characteristics reconstruction with the spectral solver.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CharacteristicsReport {
    pub member: u64,
    pub t: f64,
    pub theta_rel_l2: f64,
    pub u_rel_l2: Option<f64>,
    pub det_min: f64,
    pub det_max: f64,
}

/// Reconstructs member `member` along characteristics and compares it with
/// the spectral solution on the same path.
pub fn cmd_characteristics(
    setup: &Setup,
    traj: &ExpectationTrajectory,
    member: u64,
    out: &Path,
    force: bool,
) -> Result<CharacteristicsReport> {
    let c = &setup.cfg;
    let forcing = setup.forcing(traj);
    let ctx = SpdeContext::new(traj, &setup.basis, forcing.as_ref(), c.physics.g, c.solver.dt)?;
    let n = c.n_steps();
    let t = traj.t_end();
    let path = sample_path(c.ensemble.seed, member, n, c.solver.dt, setup.basis.len())?;
    let spde = integrate(SpdeState::from_expectation(traj, forcing.is_some()), &ctx, &path, c.solver.scheme, n, |_| Ok(()))?;
    let inverse = integrate_flow(traj, &setup.basis, &path, 0.0, t, Direction::Inverse)?;
    let theta0 = &traj.states[0].theta;
    let theta = theta_by_pullback(theta0, &inverse)?;
    let u = match (&forcing, &spde.u) {
        (Some(f), Some(_)) => {
            let u0 = traj.velocity[0].to_one_form();
            let input = CharacteristicsInput { u0: &u0, theta0, traj, basis: &setup.basis, path: &path, forcing: f, g: c.physics.g };
            Some(u_by_characteristics(&input, t)?)
        }
        _ => None,
    };
    let det = inverse.determinant();
    let report = CharacteristicsReport {
        member,
        t,
        theta_rel_l2: theta.rel_l2_error(&spde.theta),
        u_rel_l2: match (&u, &spde.u) {
            (Some(a), Some(b)) => Some(a.rel_l2_error(b)),
            _ => None,
        },
        det_min: det.iter().copied().fold(f64::INFINITY, f64::min),
        det_max: det.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    };
    prepare_output(out, force)?;
    let step = n as u64;
    lsf1::write_file(&out.join(format!("inverse_displacement_{step:06}.lsf1")), &inverse.to_snapshot(step))?;
    write_field(out, "theta_characteristics", &theta, step, t)?;
    write_field(out, "theta_spectral", &spde.theta, step, t)?;
    if let Some(u) = &u {
        write_field(out, "u_characteristics", u, step, t)?;
    }
    write_json(&out.join("characteristics_report.json"), &report)?;
    Ok(report)
}
