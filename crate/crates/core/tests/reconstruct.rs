// Copyright 2026 The qjump Authors
// SPDX-License-Identifier: Apache-2.0

use proptest::prelude::*;
use qjump::reconstruct::*;
use qjump::telegraph::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal as NormalDist};
use statrs::distribution::{ContinuousCDF, Normal};

fn mixture_traces(seed: u64) -> Vec<CountTrace> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let low = NormalDist::new(4.0f64, 2.0).unwrap();
    let high = NormalDist::new(40.0f64, 6.3).unwrap();
    (0..40)
        .map(|i| {
            let counts = (0..2000)
                .map(|k| {
                    let d = if (k + i) % 3 == 0 { &low } else { &high };
                    Distribution::<f64>::sample(d, &mut rng).round().max(0.0) as u64
                })
                .collect();
            CountTrace::new(2.0, 0.0, counts)
        })
        .collect()
}

#[test]
fn inverse_normal_matches_tables() {
    let z = Normal::new(0.0, 1.0).unwrap();
    for (p, q) in [
        (0.99, 2.326_347_874),
        (0.975, 1.959_963_985),
        (0.95, 1.644_853_627),
        (0.5, 0.0),
    ] {
        assert!((z.inverse_cdf(p) - q).abs() < 1e-9, "{p}");
    }
}

#[test]
fn mixture_fit_recovers_thresholds() {
    let fit = fit_histogram(&mixture_traces(1)).unwrap();
    // rounding to integers adds 1/12 to each variance
    assert!((fit.mu_low - 4.0).abs() < 0.15, "{fit:?}");
    assert!((fit.mu_high - 40.0).abs() < 0.15, "{fit:?}");
    assert!((fit.sigma_high - 6.3).abs() < 0.15, "{fit:?}");
    assert!((fit.theta_f4 - 25.3).abs() < 0.4, "{}", fit.theta_f4);
    assert!((fit.theta_f3 - 8.65).abs() < 0.4, "{}", fit.theta_f3);
    assert!((fit.weight_low - 1.0 / 3.0).abs() < 0.01);
}

#[test]
fn thresholds_cut_exactly_one_percent() {
    let fit = fit_histogram(&mixture_traces(2)).unwrap();
    let high = Normal::new(fit.mu_high, fit.sigma_high).unwrap();
    let low = Normal::new(fit.mu_low, fit.sigma_low).unwrap();
    assert!((high.cdf(fit.theta_f4) - 0.01).abs() < 1e-9);
    assert!((1.0 - low.cdf(fit.theta_f3) - 0.01).abs() < 1e-9);
}

#[test]
fn empirical_thresholds_close_to_fitted() {
    let traces = mixture_traces(3);
    let fitted = fit_histogram(&traces).unwrap();
    let emp = fit_histogram_with(&traces, ThresholdMethod::Empirical).unwrap();
    assert_eq!(emp.method, ThresholdMethod::Empirical);
    assert!(
        (emp.theta_f4 - fitted.theta_f4).abs() <= 1.5,
        "{} {}",
        emp.theta_f4,
        fitted.theta_f4
    );
    assert!(
        (emp.theta_f3 - fitted.theta_f3).abs() <= 1.5,
        "{} {}",
        emp.theta_f3,
        fitted.theta_f3
    );
}

#[test]
fn separated_peaks_leave_nothing_ambiguous() {
    let counts: Vec<u64> = (0..3000)
        .map(|i| if i % 2 == 0 { 3 + i % 3 } else { 99 + i % 3 })
        .collect();
    let traces = vec![CountTrace::new(2.0, 0.0, counts)];
    let fit = fit_histogram(&traces).unwrap();
    assert_eq!(ambiguous_fraction(&traces, &fit), 0.0);
    let s = classify(&traces[0], &fit).unwrap();
    assert_eq!(s.ambiguous_count(), 0);
}

#[test]
fn unimodal_and_small_inputs_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let d = NormalDist::new(30.0f64, 5.0).unwrap();
    let counts = (0..5000)
        .map(|_| Distribution::<f64>::sample(&d, &mut rng).round().max(0.0) as u64)
        .collect();
    let r = fit_histogram(&[CountTrace::new(2.0, 0.0, counts)]);
    assert!(
        matches!(
            r,
            Err(ReconstructError::Unimodal { .. }) | Err(ReconstructError::FitDiverged(_))
        ),
        "{r:?}"
    );
    let tiny = fit_histogram(&[CountTrace::new(2.0, 0.0, vec![1, 40, 2])]);
    assert_eq!(tiny, Err(ReconstructError::TooFewBins(3)));
}

#[test]
fn observed_ensemble_reconstruction() {
    let ensemble = simulate_ensemble(&EnsembleSpec::observed(), 2024).unwrap();
    let traces: Vec<CountTrace> = ensemble.iter().map(|s| s.trace.clone()).collect();
    let fit = fit_histogram(&traces).unwrap();
    let amb = ambiguous_fraction(&traces, &fit);
    assert!((amb - 0.04).abs() <= 0.02, "ambiguous fraction {amb}");

    // a bin is wrong if the atom never occupied the assigned state during it;
    // bins containing a jump hold both states
    let (mut wrong, mut total) = (0usize, 0usize);
    for sim in &ensemble {
        let spins = classify(&sim.trace, &fit).unwrap();
        for (s, occ) in spins.states.iter().zip(sim.f4_occupancy()) {
            let never = match s {
                SpinState::F4 => occ == 0.0,
                SpinState::F3 => occ == 1.0,
            };
            wrong += usize::from(never);
            total += 1;
        }
    }
    let err = wrong as f64 / total as f64;
    assert!(err <= 0.02, "misclassified fraction {err}");
}

#[test]
fn fit_ignores_trace_order() {
    let mut traces: Vec<CountTrace> = simulate_ensemble(
        &EnsembleSpec {
            n_traces: 40,
            ..EnsembleSpec::observed()
        },
        5,
    )
    .unwrap()
    .into_iter()
    .map(|s| s.trace)
    .collect();
    let fit = fit_histogram(&traces).unwrap();
    let first = classify(&traces[0], &fit).unwrap();
    traces.reverse();
    let fit_rev = fit_histogram(&traces).unwrap();
    assert_eq!(fit, fit_rev);
    assert_eq!(classify(traces.last().unwrap(), &fit_rev).unwrap(), first);
}

#[test]
fn presence_matches_generation_metadata() {
    // bright empty cavity so padding bins never leak into the F=4 region
    let spec = EnsembleSpec {
        n_traces: 60,
        padding_ms: 30.0,
        level: LevelModel::from_detected(60.0, 2.0, 2.0, 0.0, 0.013).unwrap(),
        initial: InitialState::Fixed(SpinState::F4),
        ..EnsembleSpec::observed()
    };
    let ensemble = simulate_ensemble(&spec, 77).unwrap();
    let traces: Vec<CountTrace> = ensemble.iter().map(|s| s.trace.clone()).collect();
    let fit = fit_histogram(&traces).unwrap();
    let mut checked = 0;
    for sim in &ensemble {
        let (ins, rem) = sim.trace.meta.presence.unwrap();
        let occ = sim.f4_occupancy();
        // a dark atom looks like an empty cavity, so the boundaries are only
        // observable when the atom is coupled throughout the first and last bins
        let found = detect_presence(&sim.trace, &fit).unwrap();
        assert!(found.0 >= ins && found.1 <= rem);
        if *occ.first().unwrap() == 1.0 && *occ.last().unwrap() == 1.0 {
            assert_eq!(found, (ins, rem));
            checked += 1;
        }
    }
    assert!(checked >= 5, "{checked}");
}

proptest! {
    #[test]
    fn raising_counts_never_moves_toward_f4(
        c in 0u64..80,
        delta in 1u64..20,
        mu_lo in 1.0f64..10.0,
        gap in 5.0f64..40.0,
        s_lo in 0.5f64..4.0,
        s_hi in 0.5f64..8.0,
    ) {
        let fit = HistogramFit::from_peaks(mu_lo, s_lo, mu_lo + gap, s_hi);
        let rank = |s: Option<SpinState>| match s {
            Some(SpinState::F4) => 0,
            None => 1,
            Some(SpinState::F3) => 2,
        };
        prop_assert!(rank(fit.class(c)) <= rank(fit.class(c + delta)));
    }

    #[test]
    fn resolution_covers_every_bin(raw in prop::collection::vec(prop::option::of(prop::bool::ANY), 1..60)) {
        let raw: Vec<Option<SpinState>> = raw
            .into_iter()
            .map(|o| o.map(|b| if b { SpinState::F4 } else { SpinState::F3 }))
            .collect();
        match resolve(&raw) {
            Ok((states, log)) => {
                prop_assert_eq!(states.len(), raw.len());
                prop_assert_eq!(log.len(), raw.len());
                for ((r, s), l) in raw.iter().zip(&states).zip(&log) {
                    if let Some(v) = r {
                        prop_assert_eq!(v, s);
                        prop_assert_eq!(*l, Resolution::Direct);
                    } else {
                        prop_assert_ne!(*l, Resolution::Direct);
                    }
                }
            }
            Err(e) => {
                prop_assert_eq!(e, ReconstructError::AllAmbiguous);
                prop_assert!(raw.iter().all(Option::is_none));
            }
        }
    }
}
