// Copyright 2026 The qjump Authors
// SPDX-License-Identifier: Apache-2.0

//! Spin-state reconstruction from photon-count traces.
//!
//! A two-Gaussian mixture is fitted to the histogram of all bins. Two
//! thresholds follow from the fitted peaks: counts at or below `theta_f4`
//! are rare (1 %) for a dark atom, counts at or above `theta_f3` are rare
//! for a coupled atom. Bins that fall in both regions or in neither are
//! ambiguous and get resolved from their unambiguous neighbours.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::fit::{levenberg_marquardt, LmOptions};
use crate::telegraph::{CountTrace, SpinState};

/// Misclassification probability defining both thresholds.
pub const MISCLASSIFICATION: f64 = 0.01;

/// Minimum number of pooled bins for a histogram fit.
pub const MIN_BINS: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReconstructError {
    #[error("histogram is unimodal: peaks at {mu_low:.2} and {mu_high:.2} overlap")]
    Unimodal { mu_low: f64, mu_high: f64 },
    #[error("histogram fit diverged: {0}")]
    FitDiverged(String),
    #[error("need at least {MIN_BINS} bins for a histogram fit, got {0}")]
    TooFewBins(usize),
    #[error("every bin of the trace is ambiguous")]
    AllAmbiguous,
    #[error("no coupled atom found in trace")]
    NoAtom,
    #[error("trace does not start and end with at least 3 empty-cavity bins")]
    Unbounded,
}

/// How the two thresholds are derived from the histogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMethod {
    /// Inverse CDF of the fitted Gaussians.
    #[default]
    Fitted,
    /// Quantiles of the histogram, each bin weighted by its posterior component membership.
    Empirical,
}

/// Fitted two-peak histogram and derived thresholds, in counts per bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramFit {
    pub mu_low: f64,
    pub sigma_low: f64,
    pub weight_low: f64,
    pub mu_high: f64,
    pub sigma_high: f64,
    pub weight_high: f64,
    /// Upper edge of the F=4 region: 1 % quantile of the high peak.
    pub theta_f4: f64,
    /// Lower edge of the F=3 region: 99 % quantile of the low peak.
    pub theta_f3: f64,
    pub method: ThresholdMethod,
}

impl HistogramFit {
    /// Thresholds from given peak parameters via the inverse normal CDF.
    pub fn from_peaks(mu_low: f64, sigma_low: f64, mu_high: f64, sigma_high: f64) -> Self {
        let (theta_f4, theta_f3) = gaussian_thresholds(mu_low, sigma_low, mu_high, sigma_high);
        Self {
            mu_low,
            sigma_low,
            weight_low: 0.5,
            mu_high,
            sigma_high,
            weight_high: 0.5,
            theta_f4,
            theta_f3,
            method: ThresholdMethod::Fitted,
        }
    }

    /// Explicit thresholds, e.g. read back from a saved fit.
    pub fn with_thresholds(mut self, theta_f4: f64, theta_f3: f64) -> Self {
        self.theta_f4 = theta_f4;
        self.theta_f3 = theta_f3;
        self
    }

    /// Raw class of a single count; `None` is ambiguous.
    pub fn class(&self, count: u64) -> Option<SpinState> {
        let c = count as f64;
        match (c <= self.theta_f4, c >= self.theta_f3) {
            (true, false) => Some(SpinState::F4),
            (false, true) => Some(SpinState::F3),
            _ => None,
        }
    }

    /// Mixture density at `x`, normalized to unit total weight.
    pub fn density(&self, x: f64) -> f64 {
        let w = self.weight_low + self.weight_high;
        (self.weight_low * gauss(x, self.mu_low, self.sigma_low)
            + self.weight_high * gauss(x, self.mu_high, self.sigma_high))
            / w
    }
}

fn gauss(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

/// (theta_f4, theta_f3) from two Gaussian peaks.
pub fn gaussian_thresholds(mu_low: f64, sigma_low: f64, mu_high: f64, sigma_high: f64) -> (f64, f64) {
    let high = Normal::new(mu_high, sigma_high).expect("valid high peak");
    let low = Normal::new(mu_low, sigma_low).expect("valid low peak");
    (
        high.inverse_cdf(MISCLASSIFICATION),
        low.inverse_cdf(1.0 - MISCLASSIFICATION),
    )
}

/// Pooled histogram with 1-count bins.
pub fn pooled_histogram(traces: &[CountTrace]) -> Vec<u64> {
    let max = traces.iter().flat_map(|t| t.counts.iter()).copied().max().unwrap_or(0) as usize;
    let mut h = vec![0u64; max + 1];
    for c in traces.iter().flat_map(|t| t.counts.iter()) {
        h[*c as usize] += 1;
    }
    h
}

/// Two-cluster split by iterated mean midpoint (isodata).
fn split_means(h: &[u64]) -> Option<[(f64, f64, f64); 2]> {
    let moments = |range: std::ops::Range<usize>| {
        let (mut n, mut s, mut s2) = (0.0, 0.0, 0.0);
        for k in range {
            let w = h[k] as f64;
            n += w;
            s += w * k as f64;
            s2 += w * (k * k) as f64;
        }
        if n == 0.0 {
            return None;
        }
        let m = s / n;
        Some((n, m, (s2 / n - m * m).max(0.25).sqrt()))
    };
    let (_, mean, _) = moments(0..h.len())?;
    let mut cut = mean;
    for _ in 0..100 {
        let k = (cut.floor() as usize + 1).min(h.len());
        let lo = moments(0..k)?;
        let hi = moments(k..h.len())?;
        let next = 0.5 * (lo.1 + hi.1);
        if (next - cut).abs() < 1e-9 {
            return Some([lo, hi]);
        }
        cut = next;
    }
    let k = (cut.floor() as usize + 1).min(h.len());
    Some([moments(0..k)?, moments(k..h.len())?])
}

/// Fits the pooled histogram of `traces` with fitted-Gaussian thresholds.
pub fn fit_histogram(traces: &[CountTrace]) -> Result<HistogramFit, ReconstructError> {
    fit_histogram_with(traces, ThresholdMethod::Fitted)
}

pub fn fit_histogram_with(traces: &[CountTrace], method: ThresholdMethod) -> Result<HistogramFit, ReconstructError> {
    let h = pooled_histogram(traces);
    let total: u64 = h.iter().sum();
    if total < MIN_BINS as u64 {
        return Err(ReconstructError::TooFewBins(total as usize));
    }
    let [lo, hi] = split_means(&h).ok_or(ReconstructError::Unimodal {
        mu_low: f64::NAN,
        mu_high: f64::NAN,
    })?;
    let x0 = [lo.0, lo.1, lo.2, hi.0, hi.1, hi.2];
    let xs: Vec<f64> = (0..h.len()).map(|k| k as f64).collect();
    let sig: Vec<f64> = h.iter().map(|&v| (v.max(1) as f64).sqrt()).collect();
    let eval = |p: &[f64]| -> Result<(DVector<f64>, DMatrix<f64>), std::convert::Infallible> {
        let m = xs.len();
        let mut r = DVector::zeros(m);
        let mut j = DMatrix::zeros(m, 6);
        for (i, &x) in xs.iter().enumerate() {
            let mut model = 0.0;
            for c in 0..2 {
                let (a, mu, s) = (p[3 * c], p[3 * c + 1], p[3 * c + 2]);
                let g = gauss(x, mu, s);
                let z = (x - mu) / s;
                model += a * g;
                j[(i, 3 * c)] = -g / sig[i];
                j[(i, 3 * c + 1)] = -a * g * z / s / sig[i];
                j[(i, 3 * c + 2)] = -a * g * (z * z - 1.0) / s / sig[i];
            }
            r[i] = (h[i] as f64 - model) / sig[i];
        }
        Ok((r, j))
    };
    let big = total as f64 * 10.0;
    let span = h.len() as f64;
    let bounds = [
        (0.0, big),
        (-span, 2.0 * span),
        (0.3, span),
        (0.0, big),
        (-span, 2.0 * span),
        (0.3, span),
    ];
    let report = levenberg_marquardt(eval, &x0, Some(&bounds), &LmOptions::default())
        .map_err(|e| ReconstructError::FitDiverged(e.to_string()))?;
    let p = &report.x;
    let (mut a, mut b) = ((p[0], p[1], p[2]), (p[3], p[4], p[5]));
    if a.1 > b.1 {
        std::mem::swap(&mut a, &mut b);
    }
    if [a.0, a.1, a.2, b.0, b.1, b.2].iter().any(|v| !v.is_finite()) || a.0 <= 0.0 || b.0 <= 0.0 {
        return Err(ReconstructError::FitDiverged(format!("degenerate components {p:?}")));
    }
    if b.1 - a.1 < 2.0 * (a.2 + b.2) {
        return Err(ReconstructError::Unimodal {
            mu_low: a.1,
            mu_high: b.1,
        });
    }
    let weight = a.0 + b.0;
    let mut fit = HistogramFit::from_peaks(a.1, a.2, b.1, b.2);
    fit.weight_low = a.0 / weight;
    fit.weight_high = b.0 / weight;
    if method == ThresholdMethod::Empirical {
        let (t4, t3) = empirical_thresholds(&h, &fit);
        fit = fit.with_thresholds(t4, t3);
        fit.method = ThresholdMethod::Empirical;
    }
    Ok(fit)
}

/// Posterior-weighted 1 % and 99 % quantiles of the high and low populations.
fn empirical_thresholds(h: &[u64], fit: &HistogramFit) -> (f64, f64) {
    let resp: Vec<(f64, f64)> = (0..h.len())
        .map(|k| {
            let x = k as f64;
            let l = fit.weight_low * gauss(x, fit.mu_low, fit.sigma_low);
            let u = fit.weight_high * gauss(x, fit.mu_high, fit.sigma_high);
            let s = (l + u).max(1e-300);
            (h[k] as f64 * l / s, h[k] as f64 * u / s)
        })
        .collect();
    let total_high: f64 = resp.iter().map(|r| r.1).sum();
    let total_low: f64 = resp.iter().map(|r| r.0).sum();
    let mut acc = 0.0;
    let mut theta_f4 = 0.0;
    for (k, r) in resp.iter().enumerate() {
        acc += r.1;
        if acc >= MISCLASSIFICATION * total_high {
            theta_f4 = k as f64;
            break;
        }
    }
    acc = 0.0;
    let mut theta_f3 = (h.len() - 1) as f64;
    for (k, r) in resp.iter().enumerate() {
        acc += r.0;
        if acc >= (1.0 - MISCLASSIFICATION) * total_low {
            theta_f3 = k as f64;
            break;
        }
    }
    (theta_f4, theta_f3)
}

/// Which rule assigned a bin's state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    /// Count inside exactly one state region.
    Direct,
    /// Single ambiguous bin between equal states.
    Noise,
    /// Single ambiguous bin between different states: takes the subsequent state.
    Jump,
    /// Ambiguous run between equal states.
    RunNoise,
    /// First half of an ambiguous run between different states.
    RunBefore,
    /// Second half of an ambiguous run between different states.
    RunAfter,
    /// Ambiguous bins at a trace end, copied from the nearest unambiguous bin.
    Endpoint,
}

impl Resolution {
    pub fn label(self) -> &'static str {
        match self {
            Resolution::Direct => "direct",
            Resolution::Noise => "noise",
            Resolution::Jump => "jump",
            Resolution::RunNoise => "run_noise",
            Resolution::RunBefore => "run_before",
            Resolution::RunAfter => "run_after",
            Resolution::Endpoint => "endpoint",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        [
            Resolution::Direct,
            Resolution::Noise,
            Resolution::Jump,
            Resolution::RunNoise,
            Resolution::RunBefore,
            Resolution::RunAfter,
            Resolution::Endpoint,
        ]
        .into_iter()
        .find(|r| r.label() == s)
    }
}

/// Reconstructed atomic state per bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinTrace {
    pub bin_ms: f64,
    pub t0_ms: f64,
    pub states: Vec<SpinState>,
    pub resolution_log: Vec<Resolution>,
}

impl SpinTrace {
    /// Builds a trace of directly observed states.
    pub fn from_states(bin_ms: f64, states: Vec<SpinState>) -> Self {
        let resolution_log = vec![Resolution::Direct; states.len()];
        Self {
            bin_ms,
            t0_ms: 0.0,
            states,
            resolution_log,
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn ambiguous_count(&self) -> usize {
        self.resolution_log.iter().filter(|r| **r != Resolution::Direct).count()
    }

    /// Binary signal, 1 for F=4.
    pub fn indicator(&self) -> Vec<f64> {
        self.states
            .iter()
            .map(|s| if *s == SpinState::F4 { 1.0 } else { 0.0 })
            .collect()
    }

    pub fn slice(&self, start: usize, end: usize) -> SpinTrace {
        SpinTrace {
            bin_ms: self.bin_ms,
            t0_ms: self.t0_ms + start as f64 * self.bin_ms,
            states: self.states[start..=end].to_vec(),
            resolution_log: self.resolution_log[start..=end].to_vec(),
        }
    }
}

/// Assigns a state to every bin of `trace`.
pub fn classify(trace: &CountTrace, fit: &HistogramFit) -> Result<SpinTrace, ReconstructError> {
    let raw: Vec<Option<SpinState>> = trace.counts.iter().map(|&c| fit.class(c)).collect();
    let (states, resolution_log) = resolve(&raw)?;
    Ok(SpinTrace {
        bin_ms: trace.bin_ms,
        t0_ms: trace.t0_ms,
        states,
        resolution_log,
    })
}

/// Fills ambiguous entries of `raw` from their unambiguous neighbours.
pub fn resolve(raw: &[Option<SpinState>]) -> Result<(Vec<SpinState>, Vec<Resolution>), ReconstructError> {
    if raw.iter().all(Option::is_none) {
        return Err(ReconstructError::AllAmbiguous);
    }
    let n = raw.len();
    let mut states = Vec::with_capacity(n);
    let mut log = Vec::with_capacity(n);
    let mut i = 0;
    while i < n {
        if let Some(s) = raw[i] {
            states.push(s);
            log.push(Resolution::Direct);
            i += 1;
            continue;
        }
        let start = i;
        while i < n && raw[i].is_none() {
            i += 1;
        }
        let k = i - start;
        let prev = start.checked_sub(1).and_then(|j| raw[j]);
        let next = raw.get(i).copied().flatten();
        let fill: Vec<(SpinState, Resolution)> = match (prev, next) {
            (Some(p), Some(q)) if p == q => {
                let rule = if k == 1 {
                    Resolution::Noise
                } else {
                    Resolution::RunNoise
                };
                vec![(p, rule); k]
            }
            (Some(_), Some(q)) if k == 1 => vec![(q, Resolution::Jump)],
            (Some(p), Some(q)) => (0..k)
                .map(|j| {
                    if j < k / 2 {
                        (p, Resolution::RunBefore)
                    } else {
                        (q, Resolution::RunAfter)
                    }
                })
                .collect(),
            (Some(s), None) | (None, Some(s)) => vec![(s, Resolution::Endpoint); k],
            (None, None) => unreachable!("at least one unambiguous bin exists"),
        };
        for (s, r) in fill {
            states.push(s);
            log.push(r);
        }
    }
    Ok((states, log))
}

/// Fraction of bins over all traces that fall in neither or both state regions.
pub fn ambiguous_fraction(traces: &[CountTrace], fit: &HistogramFit) -> f64 {
    let (amb, total) = traces
        .iter()
        .flat_map(|t| t.counts.iter())
        .fold((0usize, 0usize), |(a, n), &c| {
            (a + usize::from(fit.class(c).is_none()), n + 1)
        });
    amb as f64 / total.max(1) as f64
}

/// Number of consecutive bins at the start of a trace that must read empty cavity.
pub const PRESENCE_RUN: usize = 3;

/// First and last bin of the atom-present segment.
///
/// The segment starts at the first unambiguous F=4 bin (moved back over
/// directly preceding ambiguous bins) and ends symmetrically. The trace
/// must open and close with at least three empty-cavity bins.
pub fn detect_presence(trace: &CountTrace, fit: &HistogramFit) -> Result<(usize, usize), ReconstructError> {
    let raw: Vec<Option<SpinState>> = trace.counts.iter().map(|&c| fit.class(c)).collect();
    let first = raw
        .iter()
        .position(|s| *s == Some(SpinState::F4))
        .ok_or(ReconstructError::NoAtom)?;
    let last = raw
        .iter()
        .rposition(|s| *s == Some(SpinState::F4))
        .expect("an F=4 bin exists");
    let mut start = first;
    while start > 0 && raw[start - 1].is_none() {
        start -= 1;
    }
    let mut end = last;
    while end + 1 < raw.len() && raw[end + 1].is_none() {
        end += 1;
    }
    let high = |s: &Option<SpinState>| *s == Some(SpinState::F3);
    let leading = raw[..start].iter().take_while(|s| high(s)).count();
    let trailing = raw[end + 1..].iter().rev().take_while(|s| high(s)).count();
    if leading < PRESENCE_RUN || trailing < PRESENCE_RUN {
        return Err(ReconstructError::Unbounded);
    }
    Ok((start, end))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn observed_fit() -> HistogramFit {
        HistogramFit::from_peaks(4.0, 2.0, 40.0, 6.3)
    }

    #[test]
    fn thresholds_from_inverse_cdf() {
        let f = observed_fit();
        assert!((f.theta_f4 - (40.0 - 2.326_347_874_040_841 * 6.3)).abs() < 1e-9);
        assert!((f.theta_f3 - (4.0 + 2.326_347_874_040_841 * 2.0)).abs() < 1e-9);
    }

    #[test]
    fn unambiguous_sequence() {
        let t = CountTrace::new(2.0, 0.0, vec![40, 41, 3, 2, 39]);
        let s = classify(&t, &observed_fit()).unwrap();
        use SpinState::*;
        assert_eq!(s.states, vec![F3, F3, F4, F4, F3]);
        assert_eq!(s.ambiguous_count(), 0);
    }

    #[test]
    fn single_ambiguous_bins() {
        use SpinState::*;
        let f = observed_fit();
        let noise = classify(&CountTrace::new(2.0, 0.0, vec![40, 17, 41]), &f).unwrap();
        assert_eq!(noise.states, vec![F3, F3, F3]);
        assert_eq!(noise.resolution_log[1], Resolution::Noise);
        let jump = classify(&CountTrace::new(2.0, 0.0, vec![40, 17, 3]), &f).unwrap();
        assert_eq!(jump.states, vec![F3, F4, F4]);
        assert_eq!(jump.resolution_log[1], Resolution::Jump);
    }

    #[test]
    fn ambiguous_runs_and_endpoints() {
        use SpinState::*;
        let f = observed_fit();
        let s = classify(
            &CountTrace::new(2.0, 0.0, vec![15, 40, 15, 16, 17, 3, 2, 20, 20, 1, 20]),
            &f,
        )
        .unwrap();
        assert_eq!(s.states, vec![F3, F3, F3, F4, F4, F4, F4, F4, F4, F4, F4]);
        use Resolution::*;
        assert_eq!(
            s.resolution_log,
            vec![Endpoint, Direct, RunBefore, RunAfter, RunAfter, Direct, Direct, RunNoise, RunNoise, Direct, Endpoint]
        );
        assert_eq!(
            classify(&CountTrace::new(2.0, 0.0, vec![15, 16]), &f),
            Err(ReconstructError::AllAmbiguous)
        );
    }

    #[test]
    fn gap_between_regions_is_ambiguous() {
        // heavily overlapping peaks put theta_f4 below theta_f3
        let f = HistogramFit::from_peaks(10.0, 4.0, 20.0, 4.0);
        assert!(f.theta_f4 < f.theta_f3);
        assert_eq!(f.class(15), None);
        assert_eq!(f.class(5), Some(SpinState::F4));
        assert_eq!(f.class(30), Some(SpinState::F3));
    }

    #[test]
    fn presence_from_constructed_boundaries() {
        let mut counts = vec![40u64; 10];
        counts.extend((0..200).map(|i| if i % 20 < 12 { 3 } else { 41 }));
        counts.extend([40u64; 10]);
        let t = CountTrace::new(2.0, 0.0, counts);
        assert_eq!(detect_presence(&t, &observed_fit()), Ok((10, 209 - 8)));
        let all_high = CountTrace::new(2.0, 0.0, vec![40; 50]);
        assert_eq!(
            detect_presence(&all_high, &observed_fit()),
            Err(ReconstructError::NoAtom)
        );
    }

    #[test]
    fn labels_round_trip() {
        for r in [
            Resolution::Direct,
            Resolution::Jump,
            Resolution::RunAfter,
            Resolution::Endpoint,
        ] {
            assert_eq!(Resolution::from_label(r.label()), Some(r));
        }
    }
}
