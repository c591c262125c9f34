// Copyright 2026 The qjump Authors
// SPDX-License-Identifier: Apache-2.0

use proptest::prelude::*;
use qjump::params::JumpRates;
use qjump::telegraph::*;
use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, DiscreteCDF, Poisson};

fn rates() -> JumpRates {
    JumpRates::observed()
}

#[test]
fn stationary_fraction_and_mean_dwell() {
    // 2·10⁴ s of continuous record
    let path = sample_spin_path(&rates(), 2.0e7, SpinState::F4, 11);
    let occ = path.to_coupling();
    let mut in_f4 = 0.0;
    for (k, &(t, c)) in occ.segments.iter().enumerate() {
        let end = occ.segments.get(k + 1).map_or(occ.duration_ms, |s| s.0);
        in_f4 += f64::from(c) * (end - t);
    }
    let frac = in_f4 / occ.duration_ms;
    assert!((frac - 42.0 / 148.0).abs() < 0.005, "{frac}");
    let dwells = path.complete_dwells(SpinState::F4);
    let mean = dwells.iter().sum::<f64>() / dwells.len() as f64;
    assert!((mean - 1000.0 / 106.0).abs() < 0.1, "{mean}");
}

#[test]
fn dwell_rate_estimates_within_three_sigma() {
    // about 10⁶ dwells in each state
    let path = sample_spin_path(&rates(), 3.4e7, SpinState::F3, 12);
    for (state, truth) in [(SpinState::F4, 106.0), (SpinState::F3, 42.0)] {
        let d = path.complete_dwells(state);
        assert!(d.len() > 900_000, "{}", d.len());
        let n = d.len() as f64;
        let rate = 1000.0 * n / d.iter().sum::<f64>();
        let se = rate / n.sqrt();
        assert!((rate - truth).abs() < 3.0 * se, "{state:?}: {rate} ± {se}");
    }
}

#[test]
fn constant_path_counts_are_poisson() {
    let level = LevelModel::new(20.0, 2.0, 2.0, 0.0).unwrap();
    let path = CouplingPath::constant(2.0e5, 0);
    let trace = bin_counts(&path, &level, 1.0, 2.0, 5).unwrap();
    assert_eq!(trace.len(), 100_000);
    let n = trace.len() as f64;
    let mean = trace.counts.iter().sum::<u64>() as f64 / n;
    let var = trace.counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!((mean - 40.0).abs() < 0.1, "{mean}");
    assert!((var - 40.0).abs() < 1.0, "{var}");

    // chi-square goodness of fit, cells pooled so each expects >= 5 counts
    let pois = Poisson::new(40.0).unwrap();
    let max = *trace.counts.iter().max().unwrap() as usize;
    let mut observed = vec![0.0; max + 1];
    for &c in &trace.counts {
        observed[c as usize] += 1.0;
    }
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut o_acc, mut e_acc) = (0.0, 0.0);
    for (k, &o) in observed.iter().enumerate().take(max + 1) {
        o_acc += o;
        e_acc += n * pois.pmf(k as u64);
        if e_acc >= 5.0 && n * (1.0 - pois.cdf(k as u64)) >= 5.0 {
            cells.push((o_acc, e_acc));
            o_acc = 0.0;
            e_acc = 0.0;
        }
    }
    cells.push((o_acc, e_acc + n * (1.0 - pois.cdf(max as u64))));
    let stat: f64 = cells.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let dof = (cells.len() - 1) as f64;
    let p_value = 1.0 - ChiSquared::new(dof).unwrap().cdf(stat);
    assert!(p_value > 0.01, "chi2 = {stat}, dof = {dof}, p = {p_value}");
}

#[test]
fn ensembles_are_seed_deterministic() {
    let spec = EnsembleSpec {
        n_traces: 12,
        padding_ms: 20.0,
        ..EnsembleSpec::observed()
    };
    let a = simulate_ensemble(&spec, 99).unwrap();
    let b = simulate_ensemble(&spec, 99).unwrap();
    let c = simulate_ensemble(&spec, 100).unwrap();
    assert_eq!(a, b);
    assert_ne!(a[0].trace.counts, c[0].trace.counts);
    // trace i is independent of the ensemble size
    let single = simulate_trace(&spec, derive_seed(99, 3)).unwrap();
    assert_eq!(single, a[3]);
    assert_eq!(a[0].trace.meta.presence, Some((10, 209)));
    assert_eq!(a[0].trace.len(), 220);
}

/// RK4 integration of the three-configuration master equation.
fn ode_populations(r1: f64, r2: f64, t_ms: f64) -> [f64; 3] {
    let f = |p: [f64; 3]| {
        let a = 2.0 * r2 * 1e-3 * p[0];
        let b = r1 * 1e-3 * p[1];
        [-a, a - b, b]
    };
    let steps = 20_000;
    let h = t_ms / steps as f64;
    let mut p = [1.0, 0.0, 0.0];
    for _ in 0..steps {
        let add = |p: [f64; 3], k: [f64; 3], s: f64| [p[0] + s * k[0], p[1] + s * k[1], p[2] + s * k[2]];
        let k1 = f(p);
        let k2 = f(add(p, k1, h / 2.0));
        let k3 = f(add(p, k2, h / 2.0));
        let k4 = f(add(p, k3, h));
        for i in 0..3 {
            p[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    p
}

#[test]
fn two_atom_paths_follow_master_equation() {
    let n = 20_000;
    let t = 20.0;
    let mut counts = [0usize; 3];
    for i in 0..n {
        let path = sample_two_atom_path(68.0, 28.0, 120.0, derive_seed(8, i));
        counts[2 - path.at(t) as usize] += 1;
    }
    let oracle = ode_populations(68.0, 28.0, t);
    assert!((oracle[0] - (-1.12f64).exp()).abs() < 1e-10);
    for k in 0..3 {
        let p = counts[k] as f64 / n as f64;
        let se = (oracle[k] * (1.0 - oracle[k]) / n as f64).sqrt();
        assert!((p - oracle[k]).abs() < 4.0 * se, "{k}: {p} vs {}", oracle[k]);
    }
}

#[test]
fn two_atom_ensemble_average_tracks_populations() {
    let level = LevelModel::from_transmissions(1000.0, 0.487, 0.200, 0.0).unwrap();
    let spec = TwoAtomEnsembleSpec {
        r1: 68.0,
        r2: 28.0,
        level,
        det_eff: 0.045,
        bin_ms: 1.0,
        n_traces: 169,
        duration_ms: 120.0,
    };
    let traces = simulate_two_atom_ensemble(&spec, 21).unwrap();
    assert_eq!(traces.len(), 169);
    let (mean, se) = normalized_average(&traces, &level, spec.det_eff);
    assert_eq!(mean.len(), 120);
    // first bin mostly both coupled
    let p = ode_populations(68.0, 28.0, 0.5);
    let expect = 0.2 * p[0] + 0.487 * p[1] + p[2];
    assert!((mean[0] - expect).abs() < 4.0 * se[0] + 0.01, "{} vs {expect}", mean[0]);
    // Monte-Carlo error of order 1/√169 per bin
    assert!(se.iter().all(|&s| s < 0.06));
}

proptest! {
    #[test]
    fn bin_average_preserves_occupancy(
        jumps in prop::collection::vec(0.0f64..50.0, 0..12),
        bin in 0.5f64..5.0,
    ) {
        let mut times = jumps.clone();
        times.sort_by(f64::total_cmp);
        times.dedup();
        let mut segments = vec![(0.0, 0u8)];
        for (k, t) in times.iter().enumerate() {
            if *t > 0.0 {
                segments.push((*t, ((k + 1) % 2) as u8));
            }
        }
        let path = CouplingPath { duration_ms: 50.0, segments };
        let n = (50.0 / bin).floor() as usize;
        let occ = path.bin_average(bin, n, f64::from);
        prop_assert!(occ.iter().all(|&o| (-1e-12..=1.0 + 1e-12).contains(&o)));
        // integral over the binned window
        let window = n as f64 * bin;
        let mut exact = 0.0;
        for (k, &(t, c)) in path.segments.iter().enumerate() {
            let end = path.segments.get(k + 1).map_or(path.duration_ms, |s| s.0).min(window);
            if end > t {
                exact += f64::from(c) * (end - t);
            }
        }
        let total: f64 = occ.iter().sum::<f64>() * bin;
        prop_assert!((total - exact).abs() < 1e-9);
    }

    #[test]
    fn bin_counts_is_reproducible(seed in any::<u64>(), hi in 1.0f64..40.0) {
        let level = LevelModel::new(hi, hi / 10.0, 0.0, 0.1).unwrap();
        let path = sample_spin_path(&rates(), 200.0, SpinState::F4, seed);
        let a = bin_counts(&path.to_coupling(), &level, 1.0, 2.0, seed).unwrap();
        let b = bin_counts(&path.to_coupling(), &level, 1.0, 2.0, seed).unwrap();
        prop_assert_eq!(a, b);
    }
}
