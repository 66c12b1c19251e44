//! Noise vector fields, their ellipticity constant, and reproducible
//! Brownian increments.

use std::sync::Arc;

use rand_chacha::ChaCha12Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fields::{ScalarField, Transporter, VectorField};
use crate::grid::{divergence, TorusGrid};

/// One Fourier term of a noise field component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    /// 1 for the x component, 2 for y.
    pub component: u8,
    pub kx: i32,
    pub ky: i32,
    #[serde(default)]
    pub amp_cos: f64,
    #[serde(default)]
    pub amp_sin: f64,
}

/// One noise field: a constant plus a finite Fourier series.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XiSpec {
    #[serde(rename = "const", default)]
    pub constant: [f64; 2],
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub modes: Vec<ModeSpec>,
}

/// Noise description as it appears in a run configuration: either a preset
/// name such as `"canonical(0.1)"` or an explicit list of fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseSpec {
    Preset(String),
    Fields(Vec<XiSpec>),
}

impl NoiseSpec {
    pub fn canonical(eps: f64) -> Self {
        NoiseSpec::Preset(format!("canonical({eps})"))
    }

    /// A single identically zero field.
    pub fn zero() -> Self {
        NoiseSpec::Fields(vec![XiSpec::default()])
    }

    /// Explicit list of fields this spec stands for.
    pub fn expand(&self) -> Result<Vec<XiSpec>> {
        match self {
            NoiseSpec::Fields(list) => {
                if list.is_empty() {
                    return Err(Error::Config("noise spec lists no fields".into()));
                }
                for xi in list {
                    for m in &xi.modes {
                        if m.component != 1 && m.component != 2 {
                            return Err(Error::Config(format!(
                                "noise mode component must be 1 or 2, got {}",
                                m.component
                            )));
                        }
                    }
                }
                Ok(list.clone())
            }
            NoiseSpec::Preset(name) => {
                let (head, args) = crate::config::parse_call(name)?;
                match (head.as_str(), args.as_slice()) {
                    ("canonical", [eps]) => Ok(vec![
                        XiSpec { constant: [*eps, 0.0], modes: vec![] },
                        XiSpec { constant: [0.0, *eps], modes: vec![] },
                    ]),
                    ("zero", []) => Ok(vec![XiSpec::default()]),
                    _ => Err(Error::Config(format!("unknown noise preset {name:?}"))),
                }
            }
        }
    }

    /// SHA-256 of the expanded spec, hex encoded.
    pub fn hash(&self) -> Result<String> {
        let text = serde_json::to_string(&self.expand()?)?;
        Ok(hex(&Sha256::digest(text.as_bytes())))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Materialized noise fields with their derived quantities.
#[derive(Clone, Debug)]
pub struct NoiseBasis {
    grid: Arc<TorusGrid>,
    transporters: Vec<Transporter>,
    ito_drift: VectorField,
    lambda_min: f64,
    a_max: f64,
    divergence_free: bool,
    all_constant: bool,
    spec_hash: String,
}

/// Smallest and largest eigenvalue of the symmetric matrix `[[a, b], [b, d]]`.
pub fn sym2_eigenvalues(a: f64, b: f64, d: f64) -> (f64, f64) {
    if b == 0.0 {
        return (a.min(d), a.max(d));
    }
    let mean = 0.5 * (a + d);
    let r = (0.5 * (a - d)).hypot(b);
    let hi = mean + r;
    let lo = if hi > 0.0 { (a * d - b * b) / hi } else { mean - r };
    (lo, hi)
}

pub fn build_noise_basis(grid: &Arc<TorusGrid>, spec: &NoiseSpec) -> Result<NoiseBasis> {
    let list = spec.expand()?;
    let base = 2.0 * std::f64::consts::PI / grid.length();
    let xis: Vec<VectorField> = list
        .iter()
        .map(|xi| {
            let mut v = VectorField::from_fn(grid.clone(), |x, y| {
                let mut c = xi.constant;
                for m in &xi.modes {
                    let phase = base * (m.kx as f64 * x + m.ky as f64 * y);
                    c[(m.component - 1) as usize] += m.amp_cos * phase.cos() + m.amp_sin * phase.sin();
                }
                (c[0], c[1])
            });
            let beyond = xi.modes.iter().any(|m| {
                m.kx.unsigned_abs() as usize > grid.cutoff() || m.ky.unsigned_abs() as usize > grid.cutoff()
            });
            if beyond {
                log::warn!("noise modes beyond the dealiased band are truncated");
                v.project();
            }
            v
        })
        .collect();
    NoiseBasis::from_fields(xis, spec.hash()?)
}

impl NoiseBasis {
    /// Basis from explicit fields (all on the same grid).
    pub fn from_fields(xis: Vec<VectorField>, spec_hash: String) -> Result<Self> {
        let grid = xis
            .first()
            .ok_or_else(|| Error::Config("noise basis needs at least one field".into()))?
            .grid()
            .clone();
        for xi in &xis {
            crate::grid::check_grids(&grid, xi.grid(), "noise basis")?;
        }
        let transporters: Vec<Transporter> = xis.iter().map(Transporter::new).collect();
        let m = grid.nodes();

        let (mut axx, mut axy, mut ayy) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);
        for xi in &xis {
            let (x, y) = (xi.component(0), xi.component(1));
            for k in 0..m {
                axx[k] += x[k] * x[k];
                axy[k] += x[k] * y[k];
                ayy[k] += y[k] * y[k];
            }
        }
        let mut lambda_min = f64::INFINITY;
        let mut a_max = 0.0f64;
        for k in 0..m {
            let (lo, hi) = sym2_eigenvalues(axx[k], axy[k], ayy[k]);
            lambda_min = lambda_min.min(lo);
            a_max = a_max.max(hi);
        }

        let divergence_free = xis.iter().all(|xi| divergence(xi).max_abs() < 1e-8);
        let all_constant = transporters.iter().all(|t| t.is_constant());

        // 1/2 sum_k (xi_k . grad) xi_k, as the transport part of each bracket.
        let mut ito_drift = VectorField::zeros(grid.clone());
        if !all_constant {
            for t in &transporters {
                let xi = t.field();
                let mut comps = Vec::with_capacity(2);
                for i in 0..2 {
                    let (d0, d1) = (t.derivative(i, 0), t.derivative(i, 1));
                    let mut c: Vec<f64> =
                        (0..m).map(|k| xi.component(0)[k] * d0[k] + xi.component(1)[k] * d1[k]).collect();
                    grid.project(&mut c);
                    comps.push(c);
                }
                let term = VectorField::from_data(grid.clone(), comps.concat())?;
                ito_drift.axpy(0.5, &term);
            }
        }

        Ok(Self {
            grid,
            transporters,
            ito_drift,
            lambda_min,
            a_max,
            divergence_free,
            all_constant,
            spec_hash,
        })
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.transporters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transporters.is_empty()
    }

    pub fn transporters(&self) -> &[Transporter] {
        &self.transporters
    }

    pub fn xi(&self, k: usize) -> &VectorField {
        self.transporters[k].field()
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    /// Largest spectral radius of `sum_k xi_k ⊗ xi_k` over the grid.
    pub fn a_max(&self) -> f64 {
        self.a_max
    }

    pub fn divergence_free(&self) -> bool {
        self.divergence_free
    }

    pub fn all_constant(&self) -> bool {
        self.all_constant
    }

    pub fn spec_hash(&self) -> &str {
        &self.spec_hash
    }

    /// Fails unless the basis is uniformly elliptic.
    pub fn ensure_elliptic(&self) -> Result<()> {
        if self.lambda_min > 0.0 {
            Ok(())
        } else {
            Err(Error::EllipticityViolation { lambda_min: self.lambda_min })
        }
    }

    pub fn check_grid(&self, other: &TorusGrid) -> Result<()> {
        crate::grid::check_grids(&self.grid, other, "noise basis")
    }

    /// Smallest eigenvalue of `sum_k xi_k ⊗ xi_k` at every node.
    pub fn min_eigenvalue_field(&self) -> ScalarField {
        let m = self.grid.nodes();
        let vals = (0..m)
            .map(|k| {
                let (mut a, mut b, mut d) = (0.0, 0.0, 0.0);
                for t in &self.transporters {
                    let (x, y) = (t.field().component(0)[k], t.field().component(1)[k]);
                    a += x * x;
                    b += x * y;
                    d += y * y;
                }
                sym2_eigenvalues(a, b, d).0
            })
            .collect();
        ScalarField::from_values(self.grid.clone(), vals).expect("grid-sized")
    }
}

/// `1/2 sum_k (xi_k . grad) xi_k`.
pub fn ito_correction_vector(basis: &NoiseBasis) -> VectorField {
    basis.ito_drift.clone()
}

/// Table of Brownian increments for one ensemble member.
#[derive(Clone, Debug, PartialEq)]
pub struct BrownianPath {
    pub seed: u64,
    pub member_id: u64,
    pub n_steps: usize,
    pub n_noise: usize,
    pub dt: f64,
    increments: Vec<f64>,
}

impl BrownianPath {
    /// Path with prescribed increments, laid out step-major.
    pub fn from_increments(n_noise: usize, dt: f64, increments: Vec<f64>) -> Result<Self> {
        if n_noise == 0 || increments.len() % n_noise != 0 {
            return Err(Error::InvalidArgument("increment table shape".into()));
        }
        Ok(Self {
            seed: 0,
            member_id: 0,
            n_steps: increments.len() / n_noise,
            n_noise,
            dt,
            increments,
        })
    }

    pub fn zeros(n_noise: usize, n_steps: usize, dt: f64) -> Self {
        Self { seed: 0, member_id: 0, n_steps, n_noise, dt, increments: vec![0.0; n_noise * n_steps] }
    }

    /// Increments of all noise fields over step `step`.
    pub fn row(&self, step: usize) -> &[f64] {
        &self.increments[step * self.n_noise..(step + 1) * self.n_noise]
    }

    pub fn increment(&self, step: usize, k: usize) -> f64 {
        self.increments[step * self.n_noise + k]
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// Cumulative `W_k` at the end of step `step - 1` (so `w(0) = 0`).
    pub fn w(&self, step: usize, k: usize) -> f64 {
        (0..step).map(|s| self.increment(s, k)).sum()
    }

    /// The same Brownian path on a grid `factor` times coarser.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.n_steps % factor != 0 {
            return Err(Error::InvalidArgument(format!(
                "cannot coarsen {} steps by {factor}",
                self.n_steps
            )));
        }
        let steps = self.n_steps / factor;
        let mut inc = vec![0.0; steps * self.n_noise];
        for s in 0..steps {
            for k in 0..self.n_noise {
                inc[s * self.n_noise + k] =
                    (0..factor).map(|q| self.increment(s * factor + q, k)).sum();
            }
        }
        Ok(Self {
            seed: self.seed,
            member_id: self.member_id,
            n_steps: steps,
            n_noise: self.n_noise,
            dt: self.dt * factor as f64,
            increments: inc,
        })
    }
}

fn seed_key(seed: u64) -> [u8; 32] {
    let digest = Sha256::digest(seed.to_le_bytes());
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    key
}

/// Standard normal variate keyed by `(seed, member, counter)`.
pub fn keyed_normal(seed: u64, member_id: u64, counter: u64) -> f64 {
    let mut rng = ChaCha12Rng::from_seed(seed_key(seed));
    rng.set_stream(member_id);
    rng.set_word_pos(counter as u128 * 4);
    to_normal(rng.next_u64(), rng.next_u64())
}

fn to_normal(a: u64, b: u64) -> f64 {
    // Box-Muller on two 53-bit uniforms, u1 in (0, 1].
    let u1 = ((a >> 11) as f64 + 1.0) / (1u64 << 53) as f64;
    let u2 = (b >> 11) as f64 / (1u64 << 53) as f64;
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Increments `Delta W_k` for every step, keyed by `(seed, member_id, step, k)`.
pub fn sample_path(seed: u64, member_id: u64, n_steps: usize, dt: f64, n_noise: usize) -> Result<BrownianPath> {
    if n_steps == 0 || !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sample_path needs n_steps >= 1 and dt > 0 (got {n_steps}, {dt})"
        )));
    }
    // Entries are consumed in counter order, so one generator positioned
    // at counter 0 reproduces `keyed_normal` for every entry.
    let mut rng = ChaCha12Rng::from_seed(seed_key(seed));
    rng.set_stream(member_id);
    let sd = dt.sqrt();
    let increments = (0..n_steps * n_noise)
        .map(|_| sd * to_normal(rng.next_u64(), rng.next_u64()))
        .collect();
    Ok(BrownianPath { seed, member_id, n_steps, n_noise, dt, increments })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_preset() {
        let g = TorusGrid::new(16).unwrap();
        let b = build_noise_basis(&g, &NoiseSpec::canonical(0.1)).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b.lambda_min(), 0.1 * 0.1);
        assert!(b.all_constant());
        assert_eq!(ito_correction_vector(&b).max_abs(), 0.0);
        b.ensure_elliptic().unwrap();
    }

    #[test]
    fn shear_alone_is_degenerate() {
        let g = TorusGrid::new(16).unwrap();
        let spec = NoiseSpec::Fields(vec![XiSpec {
            constant: [0.0, 0.0],
            modes: vec![ModeSpec { component: 1, kx: 0, ky: 1, amp_cos: 0.0, amp_sin: 1.0 }],
        }]);
        let b = build_noise_basis(&g, &spec).unwrap();
        assert_eq!(b.lambda_min(), 0.0);
        assert!(b.divergence_free());
        assert!(matches!(b.ensure_elliptic(), Err(Error::EllipticityViolation { .. })));
        assert!(ito_correction_vector(&b).max_abs() < 1e-15);
    }

    #[test]
    fn preset_parse_errors() {
        assert!(NoiseSpec::Preset("canonical(a)".into()).expand().is_err());
        assert!(NoiseSpec::Preset("bogus(1)".into()).expand().is_err());
        assert!(NoiseSpec::Fields(vec![]).expand().is_err());
    }

    #[test]
    fn sample_path_matches_keyed_entries() {
        let p = sample_path(7, 3, 5, 0.01, 2).unwrap();
        for step in 0..5 {
            for k in 0..2 {
                let direct = 0.1 * keyed_normal(7, 3, (step * 2 + k) as u64);
                assert_eq!(p.increment(step, k), direct);
            }
        }
    }

    #[test]
    fn coarsen_sums_increments() {
        let p = sample_path(1, 0, 8, 0.01, 2).unwrap();
        let c = p.coarsen(4).unwrap();
        assert_eq!(c.n_steps, 2);
        assert!((c.increment(1, 1) - (4..8).map(|s| p.increment(s, 1)).sum::<f64>()).abs() < 1e-15);
        assert!((c.dt - 0.04).abs() < 1e-15);
        assert!(p.coarsen(3).is_err());
    }
}
