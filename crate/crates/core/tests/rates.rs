// Copyright 2026 The qjump Authors
// SPDX-License-Identifier: Apache-2.0

use qjump::params::JumpRates;
use qjump::rates::*;
use qjump::reconstruct::{classify, fit_histogram, SpinTrace};
use qjump::telegraph::*;

/// Noise-free binary signal: the true state at each bin centre.
fn sampled(rates: &JumpRates, n: usize, duration_ms: f64, bin_ms: f64, seed: u64) -> Vec<SpinTrace> {
    let spec = EnsembleSpec {
        rates: *rates,
        n_traces: n,
        duration_ms,
        bin_ms,
        ..EnsembleSpec::observed()
    };
    simulate_ensemble(&spec, seed)
        .unwrap()
        .into_iter()
        .map(|sim| {
            let path = sim.path.to_coupling();
            let bins = (duration_ms / bin_ms) as usize;
            let states = (0..bins)
                .map(|i| match path.at((i as f64 + 0.5) * bin_ms) {
                    1 => SpinState::F4,
                    _ => SpinState::F3,
                })
                .collect();
            SpinTrace::from_states(bin_ms, states)
        })
        .collect()
}

fn reconstructed(seed: u64) -> Vec<SpinTrace> {
    let traces: Vec<CountTrace> = simulate_ensemble(&EnsembleSpec::observed(), seed)
        .unwrap()
        .into_iter()
        .map(|s| s.trace)
        .collect();
    let fit = fit_histogram(&traces).unwrap();
    traces.iter().map(|t| classify(t, &fit).unwrap()).collect()
}

#[test]
fn autocovariance_matches_ctmc_form() {
    let rates = JumpRates::observed();
    let traces = sampled(&rates, 2000, 400.0, 2.0, 1);
    let c = autocovariance_pooled(&traces, 20.0).unwrap();
    let p = rates.stationary_f4();
    for (t, v) in c.lags_ms.iter().zip(&c.values) {
        let oracle = p * (1.0 - p) * (-148e-3 * t).exp();
        assert!((v - oracle).abs() < 0.006, "lag {t}: {v} vs {oracle}");
    }
    // definition identity at lag 0
    assert!((c.values[0] - c.p4 * (1.0 - c.p4)).abs() < 1e-12);
}

#[test]
fn observed_ensemble_rates() {
    let spins = reconstructed(7);
    let est = correlation_rates(&spins, 40.0).unwrap();
    assert!((est.r_4to3 - 106.0).abs() <= 15.0, "{est:?}");
    assert!((est.r_3to4 - 42.0).abs() <= 8.0, "{est:?}");
    assert!(est.stderr_4to3 > 0.0 && est.stderr_4to3 < 15.0);
}

#[test]
fn binning_bias_of_correlation_method_below_ten_percent() {
    let (mut r43, mut r34) = (0.0, 0.0);
    let seeds = 6;
    for seed in 0..seeds {
        let est = correlation_rates(&reconstructed(100 + seed), 40.0).unwrap();
        r43 += est.r_4to3 / seeds as f64;
        r34 += est.r_3to4 / seeds as f64;
    }
    let (b43, b34) = (r43 / 106.0 - 1.0, r34 / 42.0 - 1.0);
    println!(
        "correlation-method bias on reconstructed traces: r43 {:+.1} %, r34 {:+.1} %",
        100.0 * b43,
        100.0 * b34
    );
    assert!(b43.abs() < 0.10 && b34.abs() < 0.10);
}

#[test]
fn estimators_consistent_at_ten_times_the_data() {
    let rates = JumpRates::observed();
    let traces = sampled(&rates, 1630, 400.0, 2.0, 3);
    let corr = correlation_rates(&traces, 40.0).unwrap();
    let trans = transition_rates(&traces).unwrap();
    for est in [corr, trans] {
        assert!((est.r_4to3 / 106.0 - 1.0).abs() < 0.03, "{est:?}");
        assert!((est.r_3to4 / 42.0 - 1.0).abs() < 0.03, "{est:?}");
    }
}

#[test]
fn correlation_and_dwell_estimators_agree() {
    let traces = sampled(&JumpRates::observed(), 163, 400.0, 2.0, 4);
    let corr = correlation_rates(&traces, 40.0).unwrap();
    let dwell = transition_rates(&traces).unwrap();
    assert_eq!(dwell.method, RateMethod::Dwell);
    let z43 = (corr.r_4to3 - dwell.r_4to3) / corr.stderr_4to3.hypot(dwell.stderr_4to3);
    let z34 = (corr.r_3to4 - dwell.r_3to4) / corr.stderr_3to4.hypot(dwell.stderr_3to4);
    assert!(z43.abs() < 2.0 && z34.abs() < 2.0, "{corr:?} {dwell:?}");
}

#[test]
fn mean_dwell_estimator_shows_predicted_binning_bias() {
    // long records make edge censoring negligible; each observed run ends
    // at the first sample in the other state, so 1/mean = (1−a)/Δ
    let rates = JumpRates::observed();
    let traces = sampled(&rates, 40, 40_000.0, 2.0, 5);
    let est = dwell_time_rates_pooled(&traces).unwrap();
    let lambda = (-148e-3 * 2.0f64).exp();
    let factor = (1.0 - lambda) / (148e-3 * 2.0);
    assert!((est.r_4to3 / (106.0 * factor) - 1.0).abs() < 0.03, "{est:?}");
    assert!((est.r_3to4 / (42.0 * factor) - 1.0).abs() < 0.03, "{est:?}");
    // with fine bins the estimator approaches the generation rates
    let fine = dwell_time_rates_pooled(&sampled(&rates, 10, 40_000.0, 0.05, 6)).unwrap();
    assert!((fine.r_4to3 / 106.0 - 1.0).abs() < 0.03, "{fine:?}");
}

#[test]
fn never_jumping_trace_has_too_few_dwells() {
    let absorbing = JumpRates::new(106.0, 0.0).unwrap();
    let spec = EnsembleSpec {
        rates: absorbing,
        n_traces: 1,
        initial: InitialState::Fixed(SpinState::F3),
        ..EnsembleSpec::observed()
    };
    let sim = &simulate_ensemble(&spec, 1).unwrap()[0];
    assert_eq!(sim.path.jumps.len(), 1);
    let s = SpinTrace::from_states(2.0, vec![SpinState::F3; 200]);
    assert!(matches!(dwell_time_rates(&s), Err(RatesError::TooFewDwells { .. })));
}
