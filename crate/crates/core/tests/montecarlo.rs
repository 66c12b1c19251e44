mod common;

use lasalt::config::RunConfig;
use lasalt::montecarlo::*;
use lasalt::noise::{build_noise_basis, keyed_normal};
use lasalt::run::Setup;
use lasalt::spde::SpdeContext;
use proptest::prelude::*;

/// Skewed, heavy-tailed samples over a few nodes.
fn samples(seed: u64, count: usize, nodes: usize) -> Vec<Vec<f64>> {
    (0..count as u64)
        .map(|i| {
            (0..nodes as u64)
                .map(|k| {
                    let z = keyed_normal(seed, i, k);
                    1.0 + k as f64 + 0.5 * z + 0.3 * z * z
                })
                .collect()
        })
        .collect()
}

/// Two-pass central moments of one node, normalized as the accumulator does.
fn two_pass(data: &[Vec<f64>], node: usize, p: usize) -> f64 {
    let n = data.len() as f64;
    let mean = data.iter().map(|s| s[node]).sum::<f64>() / n;
    let sum: f64 = data.iter().map(|s| (s[node] - mean).powi(p as i32)).sum();
    if p == 2 {
        sum / (n - 1.0)
    } else {
        sum / n
    }
}

fn accumulate(data: &[Vec<f64>], p_max: usize) -> ScalarMoments {
    let mut acc = ScalarMoments::new(data[0].len(), p_max);
    for s in data {
        acc.push(s);
    }
    acc
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

#[test]
fn streaming_moments_match_two_pass() {
    let data = samples(1, 1000, 4);
    let acc = accumulate(&data, 6);
    for node in 0..4 {
        let mean = data.iter().map(|s| s[node]).sum::<f64>() / 1000.0;
        assert!(rel(acc.mean[node], mean) < 1e-12);
        for p in 2..=6 {
            assert!(rel(acc.central_moment(p)[node], two_pass(&data, node, p)) < 1e-10, "p = {p}");
        }
    }
}

#[test]
fn sharded_merge_matches_a_single_pass() {
    let data = samples(2, 1000, 3);
    let whole = accumulate(&data, 4);
    let shards: Vec<ScalarMoments> = [0..137, 137..500, 500..501, 501..1000]
        .into_iter()
        .map(|r| accumulate(&data[r], 4))
        .collect();
    let merged = shards[0].merge(&shards[1]).unwrap().merge(&shards[2].merge(&shards[3]).unwrap()).unwrap();
    assert_eq!(merged.count, 1000);
    for p in 2..=4 {
        for (a, b) in merged.central_moment(p).iter().zip(whole.central_moment(p)) {
            assert!(rel(*a, b) < 1e-10);
        }
    }
}

#[test]
fn merge_is_commutative_and_empty_is_neutral() {
    let data = samples(3, 200, 2);
    let (a, b) = (accumulate(&data[..70], 4), accumulate(&data[70..], 4));
    let (ab, ba) = (a.merge(&b).unwrap(), b.merge(&a).unwrap());
    for p in 2..=4 {
        for (x, y) in ab.central_moment(p).iter().zip(ba.central_moment(p)) {
            assert!(rel(*x, y) < 1e-12);
        }
    }
    let empty = ScalarMoments::new(2, 4);
    assert_eq!(a.merge(&empty).unwrap(), a);
    assert_eq!(empty.merge(&a).unwrap(), a);
    assert!(a.merge(&ScalarMoments::new(2, 3)).is_err());
}

#[test]
fn comoments_match_two_pass_covariances() {
    let data = samples(4, 500, 6);
    // Three correlated components on two nodes: component i at node k is data[.][2i + k].
    let mut acc = CoMoments::new(2, 3);
    for s in &data {
        let comps: Vec<Vec<f64>> = (0..3).map(|i| vec![s[2 * i], s[2 * i + 1] + 0.5 * s[0]]).collect();
        let refs: Vec<&[f64]> = comps.iter().map(|c| c.as_slice()).collect();
        acc.push(&refs);
    }
    let value = |s: &Vec<f64>, i: usize, k: usize| if k == 0 { s[2 * i] } else { s[2 * i + 1] + 0.5 * s[0] };
    let n = data.len() as f64;
    for k in 0..2 {
        for i in 0..3 {
            let mi = data.iter().map(|s| value(s, i, k)).sum::<f64>() / n;
            assert!(rel(acc.mean_component(i)[k], mi) < 1e-12);
            for j in 0..3 {
                let mj = data.iter().map(|s| value(s, j, k)).sum::<f64>() / n;
                let cov = data.iter().map(|s| (value(s, i, k) - mi) * (value(s, j, k) - mj)).sum::<f64>() / (n - 1.0);
                assert!((acc.covariance(i, j)[k] - cov).abs() < 1e-10 * cov.abs().max(1.0));
            }
        }
    }
    // Splitting and merging gives the same co-moments.
    let mut a = CoMoments::new(2, 3);
    let mut b = CoMoments::new(2, 3);
    for (idx, s) in data.iter().enumerate() {
        let comps: Vec<Vec<f64>> = (0..3).map(|i| vec![value(s, i, 0), value(s, i, 1)]).collect();
        let refs: Vec<&[f64]> = comps.iter().map(|c| c.as_slice()).collect();
        if idx < 123 { a.push(&refs) } else { b.push(&refs) }
    }
    let merged = a.merge(&b).unwrap();
    for (x, y) in merged.c.iter().zip(&acc.c) {
        assert!((x - y).abs() < 1e-10 * y.abs().max(1.0));
    }
}

#[test]
fn closure_comparison_detects_a_corrupted_field() {
    let truth: Vec<f64> = (0..64).map(|k| 1.0 + (k as f64 * 0.3).sin()).collect();
    let stderr = vec![1e-3; 64];
    assert!(compare_fields("theta2", 10, 0.1, &truth, &stderr, &truth, 0.05).pass);
    let bad: Vec<f64> = truth.iter().map(|v| 1.5 * v).collect();
    let entry = compare_fields("theta2", 10, 0.1, &bad, &stderr, &truth, 0.05);
    assert!(!entry.pass);
    assert!((entry.rel_l2_error - 0.5).abs() < 1e-12);
    // A noisy estimate widens the threshold.
    let wide = compare_fields("theta2", 10, 0.1, &bad, &vec![1.0; 64], &truth, 0.05);
    assert!(wide.pass && wide.threshold > 0.5);
}

fn small_config(members: usize) -> RunConfig {
    let mut cfg = RunConfig::desk_default();
    cfg.grid.n = 16;
    cfg.solver.t_end = 0.02;
    cfg.ensemble.members = members;
    cfg.ensemble.batches = 8;
    cfg.ensemble.observe_every = 10;
    cfg
}

fn ensemble(cfg: &RunConfig) -> EnsembleResult {
    let setup = Setup::new(cfg).unwrap();
    let traj = setup.expectation().unwrap();
    let ctx = SpdeContext::new(&traj, &setup.basis, None, cfg.physics.g, cfg.solver.dt).unwrap();
    run_ensemble(&setup.ensemble_spec(), &ctx).unwrap()
}

#[test]
fn noiseless_members_have_zero_variance() {
    // The expectation needs elliptic noise; the members get none.
    let mut cfg = small_config(2);
    cfg.ensemble.batches = 2;
    let setup = Setup::new(&cfg).unwrap();
    let traj = setup.expectation().unwrap();
    let silent = build_noise_basis(&setup.grid, &serde_json::from_str(r#"[{"const": [0.0, 0.0]}]"#).unwrap()).unwrap();
    let ctx = SpdeContext::new(&traj, &silent, None, cfg.physics.g, cfg.solver.dt).unwrap();
    let r = run_ensemble(&setup.ensemble_spec(), &ctx).unwrap();
    assert!(r.stats.last().theta.variance().iter().all(|v| v.abs() < 1e-24));
}

#[test]
fn ensembles_are_reproducible_from_the_seed() {
    let cfg = small_config(16);
    let (a, b) = (ensemble(&cfg), ensemble(&cfg));
    assert_eq!(a.stats.last().theta, b.stats.last().theta);
    let mut other = cfg.clone();
    other.ensemble.seed += 1;
    assert_ne!(ensemble(&other).stats.last().theta.mean, a.stats.last().theta.mean);
}

#[test]
fn standard_error_halves_with_four_times_the_members() {
    let mean_se = |m| {
        let r = ensemble(&small_config(m));
        let se = r.stats.last().theta.stderr_of_mean();
        se.iter().sum::<f64>() / se.len() as f64
    };
    let ratio = mean_se(200) / mean_se(800);
    assert!((ratio - 2.0).abs() < 0.4, "ratio {ratio}");
}

#[test]
fn invalid_ensembles_are_rejected() {
    let cfg = small_config(16);
    let setup = Setup::new(&cfg).unwrap();
    let traj = setup.expectation().unwrap();
    let ctx = SpdeContext::new(&traj, &setup.basis, None, cfg.physics.g, cfg.solver.dt).unwrap();
    let good = setup.ensemble_spec();
    let mut one = good.clone();
    one.members = 1;
    let mut late = good.clone();
    late.observe_steps = vec![good.n_steps as u64 + 1];
    let mut with_u = good.clone();
    with_u.with_u = true;
    for spec in [one, late, with_u] {
        assert!(run_ensemble(&spec, &ctx).is_err());
    }
}

#[test]
fn batch_spread_recovers_a_known_standard_error() {
    // Batch means of N(0, 1) samples with 50 per batch: stderr of the grand
    // mean is 1 / sqrt(50 * 40).
    let per_batch: Vec<Vec<f64>> = (0..40u64)
        .map(|b| vec![(0..50u64).map(|i| keyed_normal(9, b, i)).sum::<f64>() / 50.0])
        .collect();
    let se = batch_stderr(&per_batch)[0];
    let expected = 1.0 / (2000f64).sqrt();
    assert!((se / expected - 1.0).abs() < 0.35, "{se} vs {expected}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn merge_is_associative(seed in any::<u64>(), cut1 in 1usize..60, cut2 in 1usize..60) {
        let data = samples(seed, 120, 2);
        let (i, j) = (cut1.min(cut2), cut1.max(cut2) + 60);
        let a = accumulate(&data[..i], 4);
        let b = accumulate(&data[i..j], 4);
        let c = accumulate(&data[j..], 4);
        let left = a.merge(&b).unwrap().merge(&c).unwrap();
        let right = a.merge(&b.merge(&c).unwrap()).unwrap();
        for p in 2..=4 {
            for (x, y) in left.central_moment(p).iter().zip(right.central_moment(p)) {
                prop_assert!((x - y).abs() <= 1e-10 * y.abs().max(1e-6));
            }
        }
    }

    #[test]
    fn batch_ranges_partition_the_members(members in 2usize..500, batches in 1usize..40) {
        let batches = batches.min(members);
        let ranges = batch_ranges(members, batches);
        prop_assert_eq!(ranges.len(), batches);
        prop_assert_eq!(ranges[0].start, 0);
        prop_assert_eq!(ranges.last().unwrap().end, members as u64);
        for w in ranges.windows(2) {
            prop_assert_eq!(w[0].end, w[1].start);
        }
        let (lo, hi) = ranges.iter().map(|r| r.end - r.start).fold((u64::MAX, 0), |(a, b), n| (a.min(n), b.max(n)));
        prop_assert!(hi - lo <= 1 && lo >= 1);
    }
}
