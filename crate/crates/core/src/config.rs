//! Run configuration: JSON schema, validation, defaults and
//! initial-condition presets.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fields::{ConstantVector, ScalarField};
use crate::grid::TorusGrid;
use crate::lsf1;
use crate::noise::{hex, ModeSpec, NoiseSpec, XiSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridConfig,
    #[serde(default)]
    pub physics: PhysicsConfig,
    pub noise: NoiseSpec,
    pub initial: InitialConfig,
    pub solver: SolverConfig,
    pub ensemble: EnsembleConfig,
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifyConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
    #[serde(default = "default_length")]
    pub length: f64,
    #[serde(default = "default_dealias")]
    pub dealias_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsConfig {
    #[serde(default = "default_g")]
    pub g: f64,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        Self { g: default_g() }
    }
}

/// Initial field: a preset expression or an LSF1 file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldInit {
    Preset(String),
    File { lsf1: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub omega: FieldInit,
    pub theta: FieldInit,
    #[serde(default)]
    pub ubar: [f64; 2],
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    #[default]
    Strat,
    Ito,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub dt: f64,
    pub t_end: f64,
    #[serde(default = "default_save_every")]
    pub save_every: usize,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub enable_u_equation: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub members: usize,
    pub seed: u64,
    #[serde(default = "default_moments_p")]
    pub moments_p: usize,
    #[serde(default = "default_batches")]
    pub batches: usize,
    #[serde(default = "default_closure_tolerance")]
    pub closure_tolerance: f64,
    #[serde(default)]
    pub retain_members: bool,
    /// Steps between ensemble observations (the final step is always observed).
    #[serde(default = "default_observe_every")]
    pub observe_every: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<String>,
}

/// Optional controls for the `verify` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    /// Restrict the ladder to these criterion ids (all when absent).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub criteria: Option<Vec<String>>,
    /// Multiplies every ensemble size in the ladder.
    #[serde(default = "default_scale")]
    pub member_scale: f64,
}

fn default_length() -> f64 {
    TorusGrid::DEFAULT_LENGTH
}
fn default_dealias() -> f64 {
    TorusGrid::DEFAULT_DEALIAS
}
fn default_g() -> f64 {
    1.0
}
fn default_save_every() -> usize {
    1
}
fn default_moments_p() -> usize {
    4
}
fn default_batches() -> usize {
    16
}
fn default_closure_tolerance() -> f64 {
    0.05
}
fn default_observe_every() -> usize {
    25
}
fn default_formats() -> Vec<String> {
    vec!["lsf1".into(), "csv".into()]
}
fn default_scale() -> f64 {
    1.0
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let g = &self.grid;
        if g.n < 8 || g.n % 2 != 0 {
            return bad(format!("grid.n must be even and >= 8, got {}", g.n));
        }
        if !(g.length > 0.0 && g.length.is_finite()) {
            return bad(format!("grid.length must be positive, got {}", g.length));
        }
        if !(g.dealias_fraction > 0.0 && g.dealias_fraction <= 1.0) {
            return bad(format!("grid.dealias_fraction must lie in (0, 1], got {}", g.dealias_fraction));
        }
        if !self.physics.g.is_finite() {
            return bad("physics.g must be finite".into());
        }
        let s = &self.solver;
        if !(s.dt > 0.0 && s.dt.is_finite()) {
            return bad(format!("solver.dt must be positive, got {}", s.dt));
        }
        if !(s.t_end > 0.0 && s.t_end.is_finite()) {
            return bad(format!("solver.t_end must be positive, got {}", s.t_end));
        }
        let steps = s.t_end / s.dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return bad(format!("solver.t_end {} is not a multiple of dt {}", s.t_end, s.dt));
        }
        if s.save_every == 0 || (steps.round() as usize) % s.save_every != 0 {
            return bad(format!(
                "solver.save_every {} must be positive and divide the step count {}",
                s.save_every,
                steps.round()
            ));
        }
        let e = &self.ensemble;
        if e.members < 1 {
            return bad("ensemble.members must be >= 1".into());
        }
        if e.moments_p < 2 || e.moments_p > 6 {
            return bad(format!("ensemble.moments_p must lie in 2..=6, got {}", e.moments_p));
        }
        if e.batches < 1 {
            return bad("ensemble.batches must be >= 1".into());
        }
        if e.observe_every == 0 {
            return bad("ensemble.observe_every must be positive".into());
        }
        if !(e.closure_tolerance >= 0.0) {
            return bad("ensemble.closure_tolerance must be non-negative".into());
        }
        for f in &self.output.formats {
            if f != "lsf1" && f != "csv" {
                return bad(format!("unknown output format {f:?}"));
            }
        }
        if let Some(v) = &self.verify {
            if !(v.member_scale > 0.0) {
                return bad("verify.member_scale must be positive".into());
            }
        }
        self.noise.expand()?;
        for init in [&self.initial.omega, &self.initial.theta] {
            if let FieldInit::Preset(p) = init {
                check_preset(p)?;
            }
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.solver.t_end / self.solver.dt).round() as usize
    }

    pub fn build_grid(&self) -> Result<Arc<TorusGrid>> {
        TorusGrid::with_params(self.grid.n, self.grid.length, self.grid.dealias_fraction)
    }

    pub fn ubar0(&self) -> ConstantVector {
        ConstantVector::new(self.initial.ubar[0], self.initial.ubar[1])
    }

    /// Hash of everything that determines the expectation trajectory.
    pub fn expectation_hash(&self) -> Result<String> {
        let key = serde_json::json!({
            "grid": self.grid,
            "g": self.physics.g,
            "noise": self.noise.expand()?,
            "initial": self.initial,
            "dt": self.solver.dt,
            "t_end": self.solver.t_end,
            "save_every": self.solver.save_every,
        });
        Ok(hex(&Sha256::digest(key.to_string().as_bytes())))
    }

    /// Desk-scale configuration used by `verify` when none is given.
    pub fn desk_default() -> Self {
        Self {
            grid: GridConfig { n: 32, length: default_length(), dealias_fraction: default_dealias() },
            physics: PhysicsConfig::default(),
            noise: acceptance_noise(0.1),
            initial: InitialConfig {
                omega: FieldInit::Preset("taylor_green(0.5)".into()),
                theta: FieldInit::Preset("theta_blob(3.141592653589793,3.141592653589793,0.6,1)".into()),
                ubar: [0.0, 0.0],
            },
            solver: SolverConfig {
                dt: 1e-3,
                t_end: 0.25,
                save_every: 1,
                scheme: Scheme::Strat,
                enable_u_equation: false,
            },
            ensemble: EnsembleConfig {
                members: 200,
                seed: 20240531,
                moments_p: 4,
                batches: default_batches(),
                closure_tolerance: default_closure_tolerance(),
                retain_members: false,
                observe_every: default_observe_every(),
            },
            output: OutputConfig { directory: PathBuf::from("lasalt-out"), formats: default_formats() },
            verify: None,
        }
    }
}

/// Divergence-free, uniformly elliptic basis `{(e,0), (0,e), (e sin y, 0)}`.
pub fn acceptance_noise(eps: f64) -> NoiseSpec {
    NoiseSpec::Fields(vec![
        XiSpec { constant: [eps, 0.0], modes: vec![] },
        XiSpec { constant: [0.0, eps], modes: vec![] },
        XiSpec {
            constant: [0.0, 0.0],
            modes: vec![ModeSpec { component: 1, kx: 0, ky: 1, amp_cos: 0.0, amp_sin: eps }],
        },
    ])
}

/// Split `"name(a, b, c)"` into the name and numeric arguments.
pub fn parse_call(text: &str) -> Result<(String, Vec<f64>)> {
    let t = text.trim();
    let Some(open) = t.find('(') else {
        return Ok((t.to_string(), vec![]));
    };
    if !t.ends_with(')') {
        return Err(Error::Config(format!("malformed expression {text:?}")));
    }
    let name = t[..open].trim().to_string();
    let inner = &t[open + 1..t.len() - 1];
    let args = if inner.trim().is_empty() {
        vec![]
    } else {
        inner
            .split(',')
            .map(|a| {
                a.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad argument {a:?} in {text:?}")))
            })
            .collect::<Result<Vec<_>>>()?
    };
    Ok((name, args))
}

fn check_preset(p: &str) -> Result<()> {
    let (name, args) = parse_call(p)?;
    match (name.as_str(), args.len()) {
        ("zero", 0) | ("taylor_green", 1) | ("theta_blob", 4) => Ok(()),
        _ => Err(Error::Config(format!("unknown initial-condition preset {p:?}"))),
    }
}

/// Evaluate a preset on the grid (without band projection).
pub fn preset_field(grid: &Arc<TorusGrid>, preset: &str) -> Result<ScalarField> {
    check_preset(preset)?;
    let (name, a) = parse_call(preset)?;
    let l = grid.length();
    let k = 2.0 * std::f64::consts::PI / l;
    Ok(match name.as_str() {
        "zero" => ScalarField::zeros(grid.clone()),
        "taylor_green" => {
            let amp = a[0];
            ScalarField::from_fn(grid.clone(), |x, y| amp * ((k * x).cos() + (k * y).cos()))
        }
        "theta_blob" => {
            let (cx, cy, r, amp) = (a[0], a[1], a[2], a[3]);
            if !(r > 0.0) {
                return Err(Error::Config(format!("theta_blob radius must be positive, got {r}")));
            }
            ScalarField::from_fn(grid.clone(), |x, y| {
                let mut s = 0.0;
                for p in -1..=1 {
                    for q in -1..=1 {
                        let dx = x - cx + p as f64 * l;
                        let dy = y - cy + q as f64 * l;
                        s += (-(dx * dx + dy * dy) / (2.0 * r * r)).exp();
                    }
                }
                amp * s
            })
        }
        _ => unreachable!("validated preset"),
    })
}

impl FieldInit {
    /// Materialize on the grid, projected onto the dealiased band.
    pub fn build(&self, grid: &Arc<TorusGrid>) -> Result<ScalarField> {
        let mut f = match self {
            FieldInit::Preset(p) => preset_field(grid, p)?,
            FieldInit::File { lsf1: path } => {
                let snap = lsf1::read_file(path)?;
                if snap.grid_n as usize != grid.n() || snap.n_components != 1 {
                    return Err(Error::Config(format!(
                        "{} holds a {}-component field on n = {}, expected a scalar on n = {}",
                        path.display(),
                        snap.n_components,
                        snap.grid_n,
                        grid.n()
                    )));
                }
                ScalarField::from_values(grid.clone(), snap.values)?
            }
        };
        f.project();
        Ok(f)
    }
}
