// Copyright 2026 The qjump Authors
// SPDX-License-Identifier: Apache-2.0

//! Jump-rate extraction from reconstructed spin traces.
//!
//! For a two-state Markov process the autocovariance of the F=4 indicator
//! decays as p(1−p)·exp(−(r₄₃ + r₃₄)τ), and the stationary F=4 fraction is
//! p = r₃₄/(r₄₃ + r₃₄). Fitting the decay gives the total rate, the
//! fraction splits it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fit::{levenberg_marquardt, LmOptions};
use crate::reconstruct::SpinTrace;
use crate::telegraph::SpinState;

/// Minimum number of complete dwells per state for the dwell estimator.
pub const MIN_DWELLS: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RatesError {
    #[error("trace of {bins} bins too short for lags up to {max_lag} bins (need > 10x)")]
    TooShort { bins: usize, max_lag: usize },
    #[error("max lag must be at least one bin")]
    BadLag,
    #[error("traces have different bin widths")]
    MixedBins,
    #[error("zero variance at lag 0: the state never changes")]
    ZeroVariance,
    #[error("F=4 fraction must lie in (0, 1), got {0}")]
    BadFraction(f64),
    #[error("fitted decay rate {0} is not positive")]
    NegativeDecay(f64),
    #[error("correlation fit failed: {0}")]
    Fit(String),
    #[error("only {found} complete {state:?} dwells, need {MIN_DWELLS}")]
    TooFewDwells { state: SpinState, found: usize },
}

/// Autocovariance of the F=4 indicator versus lag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCurve {
    pub lags_ms: Vec<f64>,
    pub values: Vec<f64>,
    pub n_pairs: Vec<u64>,
    /// Total number of bins pooled.
    pub n_samples: u64,
    pub bin_ms: f64,
    /// Pooled F=4 fraction used as the mean.
    pub p4: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateMethod {
    Correlation,
    Dwell,
}

/// Jump rates in s⁻¹ with standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub r_4to3: f64,
    pub r_3to4: f64,
    pub stderr_4to3: f64,
    pub stderr_3to4: f64,
    pub method: RateMethod,
}

/// Autocovariance of a single trace.
pub fn autocovariance(s: &SpinTrace, max_lag_ms: f64) -> Result<CorrelationCurve, RatesError> {
    autocovariance_pooled(std::slice::from_ref(s), max_lag_ms)
}

/// Autocovariance pooled over traces: pair products and the mean are summed
/// across the ensemble before normalizing.
pub fn autocovariance_pooled(traces: &[SpinTrace], max_lag_ms: f64) -> Result<CorrelationCurve, RatesError> {
    let bin_ms = traces.first().map_or(1.0, |t| t.bin_ms);
    if traces.iter().any(|t| (t.bin_ms - bin_ms).abs() > 1e-12 * bin_ms) {
        return Err(RatesError::MixedBins);
    }
    let max_lag = (max_lag_ms / bin_ms + 1e-9).floor() as usize;
    if max_lag == 0 {
        return Err(RatesError::BadLag);
    }
    let bins: usize = traces.iter().map(SpinTrace::len).sum();
    if bins <= 10 * max_lag {
        return Err(RatesError::TooShort { bins, max_lag });
    }
    let xs: Vec<Vec<f64>> = traces.iter().map(SpinTrace::indicator).collect();
    let p4 = xs.iter().flatten().sum::<f64>() / bins as f64;
    let mut values = Vec::with_capacity(max_lag + 1);
    let mut n_pairs = Vec::with_capacity(max_lag + 1);
    for lag in 0..=max_lag {
        let (mut sum, mut n) = (0.0, 0u64);
        for x in &xs {
            if x.len() > lag {
                sum += x.iter().zip(&x[lag..]).map(|(a, b)| a * b).sum::<f64>();
                n += (x.len() - lag) as u64;
            }
        }
        values.push(if n > 0 { sum / n as f64 - p4 * p4 } else { 0.0 });
        n_pairs.push(n);
    }
    Ok(CorrelationCurve {
        lags_ms: (0..=max_lag).map(|k| k as f64 * bin_ms).collect(),
        values,
        n_pairs,
        n_samples: bins as u64,
        bin_ms,
        p4,
    })
}

/// Fitted single-exponential decay A·exp(−Rτ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub amplitude: f64,
    /// Total rate R, s⁻¹.
    pub rate_per_s: f64,
    pub stderr_rate_per_s: f64,
    /// Largest lag used, ms.
    pub window_ms: f64,
}

fn fit_window(c: &CorrelationCurve, rate_per_ms: f64) -> Result<(f64, f64, f64), RatesError> {
    let limit = 3.0 / rate_per_ms;
    let mut idx: Vec<usize> = (1..c.lags_ms.len())
        .filter(|&k| c.lags_ms[k] <= limit + 1e-9 && c.n_pairs[k] > 0)
        .collect();
    if idx.len() < 3 {
        idx = (1..c.lags_ms.len().min(4)).filter(|&k| c.n_pairs[k] > 0).collect();
    }
    if idx.len() < 2 {
        return Err(RatesError::Fit("fewer than two usable lags".into()));
    }
    let w: Vec<f64> = idx.iter().map(|&k| (c.n_pairs[k] as f64).sqrt()).collect();
    let eval = |p: &[f64]| -> Result<(DVector<f64>, DMatrix<f64>), std::convert::Infallible> {
        let m = idx.len();
        let mut r = DVector::zeros(m);
        let mut j = DMatrix::zeros(m, 2);
        for (i, &k) in idx.iter().enumerate() {
            let t = c.lags_ms[k];
            let e = (-p[1] * t).exp();
            r[i] = w[i] * (c.values[k] - p[0] * e);
            j[(i, 0)] = -w[i] * e;
            j[(i, 1)] = w[i] * p[0] * t * e;
        }
        Ok((r, j))
    };
    let a0 = c.values[idx[0]] * (rate_per_ms * c.lags_ms[idx[0]]).exp();
    let report = levenberg_marquardt(eval, &[a0, rate_per_ms], None, &LmOptions::default())
        .map_err(|e| RatesError::Fit(e.to_string()))?;
    let scale = report.reduced_chi2();
    let se = report.stderr()[1] * scale.sqrt();
    Ok((report.x[0], report.x[1], se))
}

/// Weighted least-squares fit of A·exp(−Rτ) over lags in (0, 3/R̂].
///
/// R̂ starts from the log-ratio of the first two lags and is refined once by
/// refitting over the window set by the first fit.
pub fn fit_decay(c: &CorrelationCurve) -> Result<DecayFit, RatesError> {
    if c.values.first().is_none_or(|v| *v <= 0.0) {
        return Err(RatesError::ZeroVariance);
    }
    let v = &c.values;
    let guess = match (v.get(1), v.get(2)) {
        (Some(&a), Some(&b)) if a > 0.0 && b > 0.0 && a > b => (a / b).ln() / c.bin_ms,
        (Some(&a), _) if a > 0.0 && a < v[0] => (v[0] / a).ln() / c.bin_ms,
        _ => 1.0 / c.bin_ms,
    };
    let (_, first, _) = fit_window(c, guess)?;
    if first <= 0.0 {
        return Err(RatesError::NegativeDecay(first * 1e3));
    }
    let (amplitude, rate, se) = fit_window(c, first)?;
    if rate <= 0.0 {
        return Err(RatesError::NegativeDecay(rate * 1e3));
    }
    Ok(DecayFit {
        amplitude,
        rate_per_s: rate * 1e3,
        stderr_rate_per_s: se * 1e3,
        window_ms: 3.0 / rate,
    })
}

/// Splits a total relaxation rate with the stationary F=4 fraction.
pub fn split_rate(total_per_s: f64, p4: f64) -> (f64, f64) {
    ((1.0 - p4) * total_per_s, p4 * total_per_s)
}

/// Rates from the correlation decay and the empirical F=4 fraction `p4`.
pub fn fit_rates(c: &CorrelationCurve, p4: f64) -> Result<RateEstimate, RatesError> {
    if !(p4 > 0.0 && p4 < 1.0) {
        return Err(RatesError::BadFraction(p4));
    }
    let decay = fit_decay(c)?;
    let r = decay.rate_per_s;
    let (r43, r34) = split_rate(r, p4);
    // binomial error of p4 with the sample count reduced by the bin-to-bin correlation
    let rho = (-r * 1e-3 * c.bin_ms).exp();
    let n_eff = (c.n_samples as f64 * (1.0 - rho) / (1.0 + rho)).max(1.0);
    let se_p = (p4 * (1.0 - p4) / n_eff).sqrt();
    let se_r = decay.stderr_rate_per_s;
    Ok(RateEstimate {
        r_4to3: r43,
        r_3to4: r34,
        stderr_4to3: ((1.0 - p4) * se_r).hypot(r * se_p),
        stderr_3to4: (p4 * se_r).hypot(r * se_p),
        method: RateMethod::Correlation,
    })
}

/// Pooled F=4 fraction of an ensemble.
pub fn f4_fraction(traces: &[SpinTrace]) -> f64 {
    let (ones, n) = traces.iter().fold((0usize, 0usize), |(o, n), t| {
        (
            o + t.states.iter().filter(|s| **s == SpinState::F4).count(),
            n + t.len(),
        )
    });
    ones as f64 / n.max(1) as f64
}

/// Complete dwell lengths in `state`, ms; runs touching a trace edge are censored.
pub fn complete_dwells(s: &SpinTrace, state: SpinState) -> Vec<f64> {
    let mut out = Vec::new();
    let n = s.states.len();
    let mut i = 0;
    while i < n {
        let start = i;
        while i < n && s.states[i] == s.states[start] {
            i += 1;
        }
        if s.states[start] == state && start > 0 && i < n {
            out.push((i - start) as f64 * s.bin_ms);
        }
    }
    out
}

/// Rates as inverse mean complete dwell times.
pub fn dwell_time_rates(s: &SpinTrace) -> Result<RateEstimate, RatesError> {
    dwell_time_rates_pooled(std::slice::from_ref(s))
}

pub fn dwell_time_rates_pooled(traces: &[SpinTrace]) -> Result<RateEstimate, RatesError> {
    let rate = |state: SpinState| {
        let d: Vec<f64> = traces.iter().flat_map(|t| complete_dwells(t, state)).collect();
        if d.len() < MIN_DWELLS {
            return Err(RatesError::TooFewDwells { state, found: d.len() });
        }
        let n = d.len() as f64;
        let r = 1e3 * n / d.iter().sum::<f64>();
        Ok((r, r / n.sqrt()))
    };
    let (r43, s43) = rate(SpinState::F4)?;
    let (r34, s34) = rate(SpinState::F3)?;
    Ok(RateEstimate {
        r_4to3: r43,
        r_3to4: r34,
        stderr_4to3: s43,
        stderr_3to4: s34,
        method: RateMethod::Dwell,
    })
}

/// Discrete-time maximum-likelihood rates from bin-to-bin transition counts.
///
/// Estimates the per-bin stay probabilities a (F=4) and b (F=3) and inverts
/// the sampled two-state chain: e^(−RΔ) = a + b − 1, r₄₃ = (1−a)/(2−a−b)·R.
/// Unlike dwell means this uses censored runs and accounts for jumps hidden
/// between samples, so it is consistent for a sampled Markov chain.
pub fn transition_rates(traces: &[SpinTrace]) -> Result<RateEstimate, RatesError> {
    let bin_ms = traces.first().map_or(1.0, |t| t.bin_ms);
    if traces.iter().any(|t| (t.bin_ms - bin_ms).abs() > 1e-12 * bin_ms) {
        return Err(RatesError::MixedBins);
    }
    let point = |set: &[&SpinTrace]| -> Result<(f64, f64), RatesError> {
        let mut n = [[0.0f64; 2]; 2];
        for t in set {
            for w in t.states.windows(2) {
                n[usize::from(w[0] == SpinState::F3)][usize::from(w[1] == SpinState::F3)] += 1.0;
            }
        }
        for (state, row) in [(SpinState::F4, n[0]), (SpinState::F3, n[1])] {
            if row[0] + row[1] == 0.0 || row[0].min(row[1]) == 0.0 {
                return Err(RatesError::TooFewDwells { state, found: 0 });
            }
        }
        let a = n[0][0] / (n[0][0] + n[0][1]);
        let b = n[1][1] / (n[1][0] + n[1][1]);
        let lambda = a + b - 1.0;
        if lambda <= 0.0 {
            return Err(RatesError::NegativeDecay(f64::NAN));
        }
        let r = -lambda.ln() / bin_ms * 1e3;
        Ok(((1.0 - a) / (2.0 - a - b) * r, (1.0 - b) / (2.0 - a - b) * r))
    };
    let all: Vec<&SpinTrace> = traces.iter().collect();
    let (r43, r34) = point(&all)?;
    let (s43, s34) = jackknife(traces.len(), |keep| point(&select(traces, keep)))?;
    Ok(RateEstimate {
        r_4to3: r43,
        r_3to4: r34,
        stderr_4to3: s43,
        stderr_3to4: s34,
        method: RateMethod::Dwell,
    })
}

/// Number of delete-a-group jackknife groups for ensemble standard errors.
pub const JACKKNIFE_GROUPS: usize = 20;

fn select<'a>(traces: &'a [SpinTrace], keep: &dyn Fn(usize) -> bool) -> Vec<&'a SpinTrace> {
    traces
        .iter()
        .enumerate()
        .filter(|(i, _)| keep(*i))
        .map(|(_, t)| t)
        .collect()
}

/// Delete-a-group jackknife standard errors of a two-valued statistic.
/// Trace i belongs to group i mod G. Returns NaN errors below two groups.
fn jackknife(
    n: usize,
    stat: impl Fn(&dyn Fn(usize) -> bool) -> Result<(f64, f64), RatesError>,
) -> Result<(f64, f64), RatesError> {
    let g = JACKKNIFE_GROUPS.min(n);
    if g < 2 {
        return Ok((f64::NAN, f64::NAN));
    }
    let mut reps = Vec::with_capacity(g);
    for k in 0..g {
        reps.push(stat(&|i| i % g != k)?);
    }
    let gf = g as f64;
    let spread = |f: fn(&(f64, f64)) -> f64| {
        let m = reps.iter().map(f).sum::<f64>() / gf;
        ((gf - 1.0) / gf * reps.iter().map(|r| (f(r) - m).powi(2)).sum::<f64>()).sqrt()
    };
    Ok((spread(|r| r.0), spread(|r| r.1)))
}

/// Correlation-method rates for an ensemble with jackknife standard errors.
///
/// The fit covariance treats lags as independent, which they are not; the
/// jackknife over traces captures the real scatter of the estimate.
pub fn correlation_rates(traces: &[SpinTrace], max_lag_ms: f64) -> Result<RateEstimate, RatesError> {
    let point = |set: &[&SpinTrace]| -> Result<RateEstimate, RatesError> {
        let owned: Vec<SpinTrace> = set.iter().map(|t| (*t).clone()).collect();
        let c = autocovariance_pooled(&owned, max_lag_ms)?;
        fit_rates(&c, c.p4)
    };
    let all: Vec<&SpinTrace> = traces.iter().collect();
    let mut est = point(&all)?;
    if traces.len() >= 2 {
        let (s43, s34) = jackknife(traces.len(), |keep| {
            point(&select(traces, keep)).map(|e| (e.r_4to3, e.r_3to4))
        })?;
        est.stderr_4to3 = s43;
        est.stderr_3to4 = s34;
    }
    Ok(est)
}
