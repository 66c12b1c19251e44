//! Ensemble runs and streaming statistics.
//!
//! Members are split into contiguous batches by id. Each batch is absorbed
//! sequentially in id order, batches run concurrently, and the batch
//! accumulators are merged in a fixed pairwise tree, so results do not
//! depend on the thread count. Batch-to-batch spread gives the standard
//! error of any estimator.

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::Scheme;
use crate::error::{Error, Result};
use crate::fields::{OneFormField, ScalarField};
use crate::grid::{gradient, TorusGrid};
use crate::moments::MomentRun;
use crate::noise::sample_path;
use crate::spde::{integrate, SpdeContext, SpdeState};

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Merge one node's central sums (`m[p - 2]` is `M_p`) with another's.
fn merge_central(na: f64, mean_a: &mut f64, ma: &mut [f64], nb: f64, mean_b: f64, mb: &[f64]) {
    let n = na + nb;
    let delta = mean_b - *mean_a;
    let p_max = ma.len() + 1;
    let mut out = vec![0.0; ma.len()];
    for p in 2..=p_max {
        let mut s = ma[p - 2] + mb[p - 2];
        for k in 1..=p.saturating_sub(2) {
            let (lower_a, lower_b) = if p - k >= 2 { (ma[p - k - 2], mb[p - k - 2]) } else { (0.0, 0.0) };
            s += binomial(p, k)
                * delta.powi(k as i32)
                * ((-nb / n).powi(k as i32) * lower_a + (na / n).powi(k as i32) * lower_b);
        }
        s += (na * nb * delta / n).powi(p as i32)
            * (1.0 / nb.powi(p as i32 - 1) - (-1.0 / na).powi(p as i32 - 1));
        out[p - 2] = s;
    }
    ma.copy_from_slice(&out);
    *mean_a += delta * nb / n;
}

/// Per-node central sums `M_2..M_P` of a scalar.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarMoments {
    pub count: u64,
    pub p_max: usize,
    pub mean: Vec<f64>,
    /// Node-major: `sums[node * (p_max - 1) + p - 2] = M_p`.
    pub sums: Vec<f64>,
}

impl ScalarMoments {
    pub fn new(nodes: usize, p_max: usize) -> Self {
        assert!(p_max >= 2);
        Self { count: 0, p_max, mean: vec![0.0; nodes], sums: vec![0.0; nodes * (p_max - 1)] }
    }

    pub fn nodes(&self) -> usize {
        self.mean.len()
    }

    pub fn push(&mut self, sample: &[f64]) {
        let w = self.p_max - 1;
        let zeros = vec![0.0; w];
        let na = self.count as f64;
        for (k, x) in sample.iter().enumerate() {
            let m = &mut self.sums[k * w..(k + 1) * w];
            if self.count == 0 {
                self.mean[k] = *x;
            } else {
                merge_central(na, &mut self.mean[k], m, 1.0, *x, &zeros);
            }
        }
        self.count += 1;
    }

    pub fn merge(&self, other: &Self) -> Result<Self> {
        if self.p_max != other.p_max || self.nodes() != other.nodes() {
            return Err(Error::ConfigMismatch(format!(
                "moment accumulators differ: order {} vs {}, {} vs {} nodes",
                self.p_max,
                other.p_max,
                self.nodes(),
                other.nodes()
            )));
        }
        if other.count == 0 {
            return Ok(self.clone());
        }
        if self.count == 0 {
            return Ok(other.clone());
        }
        let mut out = self.clone();
        let w = self.p_max - 1;
        let (na, nb) = (self.count as f64, other.count as f64);
        for k in 0..self.nodes() {
            merge_central(
                na,
                &mut out.mean[k],
                &mut out.sums[k * w..(k + 1) * w],
                nb,
                other.mean[k],
                &other.sums[k * w..(k + 1) * w],
            );
        }
        out.count += other.count;
        Ok(out)
    }

    /// `M_p / (count - 1)` for `p = 2`, `M_p / count` otherwise.
    pub fn central_moment(&self, p: usize) -> Vec<f64> {
        assert!((2..=self.p_max).contains(&p));
        let w = self.p_max - 1;
        let denom = if p == 2 { self.count as f64 - 1.0 } else { self.count as f64 };
        (0..self.nodes()).map(|k| self.sums[k * w + p - 2] / denom).collect()
    }

    pub fn variance(&self) -> Vec<f64> {
        self.central_moment(2)
    }

    /// `sqrt(variance / count)` per node.
    pub fn stderr_of_mean(&self) -> Vec<f64> {
        let c = self.count as f64;
        self.variance().into_iter().map(|v| (v.max(0.0) / c).sqrt()).collect()
    }
}

/// Per-node means and co-moments of a `dim`-vector.
#[derive(Clone, Debug, PartialEq)]
pub struct CoMoments {
    pub count: u64,
    pub dim: usize,
    /// `mean[node * dim + i]`.
    pub mean: Vec<f64>,
    /// `c[node * dim^2 + i * dim + j] = sum (x_i - mean_i)(x_j - mean_j)`.
    pub c: Vec<f64>,
}

impl CoMoments {
    pub fn new(nodes: usize, dim: usize) -> Self {
        Self { count: 0, dim, mean: vec![0.0; nodes * dim], c: vec![0.0; nodes * dim * dim] }
    }

    pub fn nodes(&self) -> usize {
        self.mean.len() / self.dim
    }

    /// `components[i]` holds component `i` over all nodes.
    pub fn push(&mut self, components: &[&[f64]]) {
        assert_eq!(components.len(), self.dim);
        let d = self.dim;
        let n = (self.count + 1) as f64;
        let mut delta = vec![0.0; d];
        for node in 0..self.nodes() {
            for i in 0..d {
                delta[i] = components[i][node] - self.mean[node * d + i];
                self.mean[node * d + i] += delta[i] / n;
            }
            // C += (n-1)/n delta delta^T
            let f = (n - 1.0) / n;
            for i in 0..d {
                for j in 0..d {
                    self.c[node * d * d + i * d + j] += f * delta[i] * delta[j];
                }
            }
        }
        self.count += 1;
    }

    pub fn merge(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim || self.nodes() != other.nodes() {
            return Err(Error::ConfigMismatch("co-moment accumulators differ in shape".into()));
        }
        if other.count == 0 {
            return Ok(self.clone());
        }
        if self.count == 0 {
            return Ok(other.clone());
        }
        let d = self.dim;
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let mut out = self.clone();
        let mut delta = vec![0.0; d];
        for node in 0..self.nodes() {
            for i in 0..d {
                delta[i] = other.mean[node * d + i] - self.mean[node * d + i];
                out.mean[node * d + i] += delta[i] * nb / n;
            }
            for i in 0..d {
                for j in 0..d {
                    let k = node * d * d + i * d + j;
                    out.c[k] = self.c[k] + other.c[k] + na * nb / n * delta[i] * delta[j];
                }
            }
        }
        out.count += other.count;
        Ok(out)
    }

    /// Sample covariance `C_ij / (count - 1)` over all nodes.
    pub fn covariance(&self, i: usize, j: usize) -> Vec<f64> {
        let d = self.dim;
        let denom = self.count as f64 - 1.0;
        (0..self.nodes()).map(|node| self.c[node * d * d + i * d + j] / denom).collect()
    }

    pub fn mean_component(&self, i: usize) -> Vec<f64> {
        (0..self.nodes()).map(|node| self.mean[node * self.dim + i]).collect()
    }
}

/// Statistics at one observation time.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub step: u64,
    pub t: f64,
    pub theta: ScalarMoments,
    /// Components `(d_x theta, d_y theta, u_x, u_y)` when the `u` equation runs.
    pub tensors: Option<CoMoments>,
}

impl Observation {
    fn merge(&self, other: &Self) -> Result<Self> {
        if self.step != other.step {
            return Err(Error::ConfigMismatch(format!(
                "observation steps differ: {} vs {}",
                self.step, other.step
            )));
        }
        let tensors = match (&self.tensors, &other.tensors) {
            (Some(a), Some(b)) => Some(a.merge(b)?),
            (None, None) => None,
            _ => return Err(Error::ConfigMismatch("tensor statistics present on one side only".into())),
        };
        Ok(Self { step: self.step, t: self.t, theta: self.theta.merge(&other.theta)?, tensors })
    }

    /// Sample tensor `E[a' (x) b']` with `a`, `b` in `{dtheta, u}`.
    fn tensor(&self, a: usize, b: usize) -> Vec<f64> {
        let c = self.tensors.as_ref().expect("tensor statistics");
        let m = c.nodes();
        let mut out = Vec::with_capacity(4 * m);
        for i in 0..2 {
            for j in 0..2 {
                out.extend(c.covariance(2 * a + i, 2 * b + j));
            }
        }
        out
    }

    pub fn dtheta2(&self) -> Vec<f64> {
        self.tensor(0, 0)
    }

    pub fn u2(&self) -> Vec<f64> {
        self.tensor(1, 1)
    }

    /// `E[u' (x) dtheta' + dtheta' (x) u']`.
    pub fn cross(&self) -> Vec<f64> {
        let a = self.tensor(1, 0);
        let b = self.tensor(0, 1);
        a.iter().zip(&b).map(|(x, y)| x + y).collect()
    }
}

/// Statistics of one set of members.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleStats {
    pub grid: Arc<TorusGrid>,
    /// Hash of everything the members depend on; merging requires equality.
    pub config_hash: String,
    pub count: u64,
    pub observations: Vec<Observation>,
}

impl EnsembleStats {
    pub fn empty(grid: Arc<TorusGrid>, config_hash: String, plan: &[(u64, f64)], p_max: usize, tensors: bool) -> Self {
        let m = grid.nodes();
        let observations = plan
            .iter()
            .map(|&(step, t)| Observation {
                step,
                t,
                theta: ScalarMoments::new(m, p_max),
                tensors: tensors.then(|| CoMoments::new(m, 4)),
            })
            .collect();
        Self { grid, config_hash, count: 0, observations }
    }

    pub fn observation(&self, step: u64) -> Option<&Observation> {
        self.observations.iter().find(|o| o.step == step)
    }

    pub fn last(&self) -> &Observation {
        self.observations.last().expect("at least one observation")
    }
}

/// Pairwise merge of two accumulators.
pub fn merge(a: &EnsembleStats, b: &EnsembleStats) -> Result<EnsembleStats> {
    if !a.grid.same_as(&b.grid) || a.config_hash != b.config_hash {
        return Err(Error::ConfigMismatch(format!(
            "cannot merge statistics of different runs ({} vs {})",
            a.config_hash, b.config_hash
        )));
    }
    if a.observations.len() != b.observations.len() {
        return Err(Error::ConfigMismatch("observation schedules differ".into()));
    }
    let observations = a
        .observations
        .iter()
        .zip(&b.observations)
        .map(|(x, y)| x.merge(y))
        .collect::<Result<_>>()?;
    Ok(EnsembleStats { grid: a.grid.clone(), config_hash: a.config_hash.clone(), count: a.count + b.count, observations })
}

/// Merges in a fixed balanced tree: `((0 1) (2 3)) ...`.
pub fn merge_tree(mut parts: Vec<EnsembleStats>) -> Result<EnsembleStats> {
    if parts.is_empty() {
        return Err(Error::InvalidArgument("nothing to merge".into()));
    }
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(merge(&a, &b)?),
                None => next.push(a),
            }
        }
        parts = next;
    }
    Ok(parts.pop().expect("one part left"))
}

/// Ensemble parameters.
#[derive(Clone, Debug)]
pub struct EnsembleSpec {
    pub members: usize,
    pub seed: u64,
    pub batches: usize,
    pub p_max: usize,
    pub scheme: Scheme,
    pub n_steps: usize,
    /// Steps at which statistics are taken (ascending, each in `1..=n_steps`).
    pub observe_steps: Vec<u64>,
    pub with_u: bool,
    pub retain_members: bool,
    pub config_hash: String,
}

impl EnsembleSpec {
    /// Every `every`-th step plus the final one.
    pub fn observation_steps(n_steps: usize, every: usize) -> Vec<u64> {
        let every = every.max(1);
        let mut out: Vec<u64> = (1..=n_steps).filter(|s| s % every == 0).map(|s| s as u64).collect();
        if out.last() != Some(&(n_steps as u64)) {
            out.push(n_steps as u64);
        }
        out
    }
}

/// Final fields of one member, kept in the debug mode.
#[derive(Clone, Debug)]
pub struct MemberRecord {
    pub member_id: u64,
    pub theta: ScalarField,
    pub u: Option<OneFormField>,
}

/// Output of [`run_ensemble`].
#[derive(Clone, Debug)]
pub struct EnsembleResult {
    pub stats: EnsembleStats,
    /// Per-batch statistics, in batch order.
    pub batches: Vec<EnsembleStats>,
    pub members: Vec<MemberRecord>,
}

/// Member id ranges of each batch.
pub fn batch_ranges(members: usize, batches: usize) -> Vec<std::ops::Range<u64>> {
    (0..batches)
        .map(|b| (b * members / batches) as u64..((b + 1) * members / batches) as u64)
        .collect()
}

fn run_batch(
    spec: &EnsembleSpec,
    ctx: &SpdeContext,
    ids: std::ops::Range<u64>,
) -> Result<(EnsembleStats, Vec<MemberRecord>)> {
    let grid = ctx.grid().clone();
    let plan: Vec<(u64, f64)> = spec.observe_steps.iter().map(|&s| (s, s as f64 * ctx.dt)).collect();
    let mut stats = EnsembleStats::empty(grid, spec.config_hash.clone(), &plan, spec.p_max, spec.with_u);
    let mut kept = Vec::new();
    for id in ids {
        let tag = |e: Error| Error::Member { member_id: id, source: Box::new(e) };
        let path = sample_path(spec.seed, id, spec.n_steps, ctx.dt, ctx.basis.len()).map_err(tag)?;
        let state = SpdeState::from_expectation(ctx.traj, spec.with_u);
        let mut next_obs = 0;
        let observations = &mut stats.observations;
        let last = integrate(state, ctx, &path, spec.scheme, spec.n_steps, |s| {
            if next_obs < observations.len() && observations[next_obs].step == s.step_index {
                absorb(&mut observations[next_obs], s);
                next_obs += 1;
            }
            Ok(())
        })
        .map_err(tag)?;
        stats.count += 1;
        if spec.retain_members {
            kept.push(MemberRecord { member_id: id, theta: last.theta, u: last.u });
        }
    }
    Ok((stats, kept))
}

fn absorb(obs: &mut Observation, s: &SpdeState) {
    obs.theta.push(s.theta.values());
    if let (Some(acc), Some(u)) = (obs.tensors.as_mut(), s.u.as_ref()) {
        let dth = gradient(&s.theta);
        acc.push(&[dth.x(), dth.y(), u.x(), u.y()]);
    }
}

/// Runs all members and merges their statistics deterministically.
pub fn run_ensemble(spec: &EnsembleSpec, ctx: &SpdeContext) -> Result<EnsembleResult> {
    if spec.members < 2 {
        return Err(Error::InvalidArgument(format!("an ensemble needs at least 2 members, got {}", spec.members)));
    }
    if spec.batches < 2 || spec.batches > spec.members {
        return Err(Error::InvalidArgument(format!(
            "batch count {} must lie in 2..={}",
            spec.batches, spec.members
        )));
    }
    if spec.observe_steps.is_empty()
        || spec.observe_steps.windows(2).any(|w| w[0] >= w[1])
        || spec.observe_steps.iter().any(|&s| s == 0 || s as usize > spec.n_steps)
    {
        return Err(Error::InvalidArgument("observation steps must be ascending within 1..=n_steps".into()));
    }
    if spec.with_u && ctx.forcing.is_none() {
        return Err(Error::InvalidArgument("the u equation needs a forcing cache".into()));
    }
    let results: Vec<Result<(EnsembleStats, Vec<MemberRecord>)>> = batch_ranges(spec.members, spec.batches)
        .into_par_iter()
        .map(|ids| run_batch(spec, ctx, ids))
        .collect();
    let mut batches = Vec::with_capacity(results.len());
    let mut members = Vec::new();
    for r in results {
        let (s, kept) = r?;
        batches.push(s);
        members.extend(kept);
    }
    let stats = merge_tree(batches.clone())?;
    Ok(EnsembleResult { stats, batches, members })
}

/// Result of a pointwise mean check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeanCheck {
    pub step: u64,
    pub t: f64,
    /// Fraction of nodes with `|mean - Theta| <= 3 stderr`.
    pub fraction_within: f64,
    /// Largest `|mean - Theta| / stderr` over all nodes.
    pub worst_ratio: f64,
}

/// Compares the sample mean of `theta` with an expected field.
pub fn mean_check(obs: &Observation, expected: &ScalarField) -> MeanCheck {
    let se = obs.theta.stderr_of_mean();
    let scale = expected.max_abs().max(1.0);
    let mut within = 0usize;
    let mut worst = 0.0f64;
    for ((m, e), s) in obs.theta.mean.iter().zip(expected.values()).zip(&se) {
        let diff = (m - e).abs();
        let bound = 3.0 * s + 1e-12 * scale;
        if diff <= bound {
            within += 1;
        }
        if *s > 0.0 {
            worst = worst.max(diff / s);
        }
    }
    MeanCheck { step: obs.step, t: obs.t, fraction_within: within as f64 / se.len() as f64, worst_ratio: worst }
}

/// Discretization tolerances for the closure gate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClosureTolerances {
    pub theta2: f64,
    pub tensors: f64,
    pub higher: f64,
}

impl ClosureTolerances {
    /// `base` for the scalar variance and twice that for the other moments.
    pub fn from_base(base: f64) -> Self {
        Self { theta2: base, tensors: 2.0 * base, higher: 2.0 * base }
    }
}

/// One quantity at one time.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClosureEntry {
    pub quantity: String,
    pub step: u64,
    pub t: f64,
    pub rel_l2_error: f64,
    pub rel_stderr: f64,
    pub tolerance: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClosureReport {
    pub members: u64,
    pub entries: Vec<ClosureEntry>,
    pub pass: bool,
}

impl ClosureReport {
    /// Entries for `quantity` at the last compared time.
    pub fn final_entry(&self, quantity: &str) -> Option<&ClosureEntry> {
        self.entries.iter().filter(|e| e.quantity == quantity).last()
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Error-vs-time series, one row per entry.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for e in &self.entries {
            w.serialize(e)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Relative L2 comparison of an estimate with a closure solution.
pub fn compare_fields(
    quantity: &str,
    step: u64,
    t: f64,
    estimate: &[f64],
    stderr: &[f64],
    closure: &[f64],
    tolerance: f64,
) -> ClosureEntry {
    let diff: Vec<f64> = estimate.iter().zip(closure).map(|(a, b)| a - b).collect();
    let norm = l2(closure);
    let denom = if norm > 0.0 { norm } else { 1.0 };
    let rel_l2_error = l2(&diff) / denom;
    let rel_stderr = l2(stderr) / denom;
    let threshold = (3.0 * rel_stderr).max(tolerance);
    ClosureEntry {
        quantity: quantity.to_string(),
        step,
        t,
        rel_l2_error,
        rel_stderr,
        tolerance,
        threshold,
        pass: rel_l2_error <= threshold,
    }
}

/// Standard error of a per-node estimator from the spread over batches.
pub fn batch_stderr(per_batch: &[Vec<f64>]) -> Vec<f64> {
    let b = per_batch.len() as f64;
    let m = per_batch[0].len();
    (0..m)
        .map(|k| {
            let mean = per_batch.iter().map(|v| v[k]).sum::<f64>() / b;
            let var = per_batch.iter().map(|v| (v[k] - mean).powi(2)).sum::<f64>() / (b - 1.0);
            (var / b).sqrt()
        })
        .collect()
}

/// Which quantities a comparison covers.
#[derive(Clone, Debug, PartialEq)]
pub struct Quantities {
    pub theta2: bool,
    /// Orders `p >= 3` of the scalar central moments.
    pub higher: Vec<usize>,
    pub tensors: bool,
}

impl Quantities {
    pub fn all(p_max: usize, tensors: bool) -> Self {
        Self { theta2: true, higher: (3..=p_max).collect(), tensors }
    }
}

/// Compares ensemble estimates with the moment equations at every
/// observation time.
pub fn closure_compare(
    result: &EnsembleResult,
    moments: &MomentRun,
    which: &Quantities,
    tol: ClosureTolerances,
) -> Result<ClosureReport> {
    let stats = &result.stats;
    if !stats.grid.same_as(moments.last().theta2.grid()) {
        return Err(Error::GridMismatch("ensemble and moment grids differ".into()));
    }
    let mut entries = Vec::new();
    for (oi, obs) in stats.observations.iter().enumerate() {
        let ms = moments.at_step(obs.step).ok_or_else(|| {
            Error::TimeMisaligned(format!("no moment state at step {} (t = {})", obs.step, obs.t))
        })?;
        if (ms.t - obs.t).abs() > 1e-9 * obs.t.abs().max(1.0) {
            return Err(Error::TimeMisaligned(format!("moment time {} vs ensemble time {}", ms.t, obs.t)));
        }
        let per_batch = |f: &dyn Fn(&Observation) -> Vec<f64>| -> Vec<Vec<f64>> {
            result.batches.iter().map(|b| f(&b.observations[oi])).collect()
        };
        let mut add = |name: &str, est: Vec<f64>, se: Vec<f64>, closure: &[f64], tolerance: f64| {
            entries.push(compare_fields(name, obs.step, obs.t, &est, &se, closure, tolerance));
        };
        if which.theta2 {
            let se = batch_stderr(&per_batch(&|o| o.theta.variance()));
            add("theta2", obs.theta.variance(), se, ms.theta2.values(), tol.theta2);
        }
        for &p in &which.higher {
            if p > obs.theta.p_max || p > ms.p_max() {
                return Err(Error::InvalidArgument(format!("moment order {p} was not tracked")));
            }
            let se = batch_stderr(&per_batch(&|o| o.theta.central_moment(p)));
            add(&format!("a{p}"), obs.theta.central_moment(p), se, ms.a(p).values(), tol.higher);
        }
        if which.tensors {
            if obs.tensors.is_none() {
                return Err(Error::InvalidArgument("tensor statistics were not collected".into()));
            }
            let se = batch_stderr(&per_batch(&|o| o.dtheta2()));
            add("dtheta2", obs.dtheta2(), se, ms.dtheta2.data(), tol.tensors);
            let se = batch_stderr(&per_batch(&|o| o.cross()));
            add("cross", obs.cross(), se, ms.cross.data(), tol.tensors);
            let se = batch_stderr(&per_batch(&|o| o.u2()));
            add("u2", obs.u2(), se, ms.u2.data(), tol.tensors);
        }
    }
    let pass = entries.iter().all(|e| e.pass);
    Ok(ClosureReport { members: stats.count, entries, pass })
}
