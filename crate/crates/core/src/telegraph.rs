// Copyright 2026 The qjump Authors
// SPDX-License-Identifier: Apache-2.0

//! Synthetic photon-count telegraph traces.
//!
//! The atomic state follows a continuous-time Markov chain sampled exactly
//! from exponential waiting times. Photon detection is Poissonian on the
//! time-averaged transmitted flux of each bin; the flux level depends only
//! on how many atoms currently couple to the cavity (are in F=4).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::{per_s_to_per_ms, JumpRates};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TelegraphError {
    #[error("{name} must be {rule}, got {value}")]
    Invalid {
        name: &'static str,
        value: f64,
        rule: &'static str,
    },
    #[error("level model must satisfy rate_high > rate_low >= rate_low2 >= 0 and background >= 0")]
    Levels,
    #[error("path covers {path_ms} ms but {needed_ms} ms are binned")]
    ShortPath { path_ms: f64, needed_ms: f64 },
}

fn positive(name: &'static str, value: f64) -> Result<(), TelegraphError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(TelegraphError::Invalid {
            name,
            value,
            rule: "positive and finite",
        })
    }
}

/// Hyperfine ground state of one atom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpinState {
    /// Dark state, does not couple to the cavity: high transmission.
    F3,
    /// Couples to the cavity: low transmission.
    F4,
}

impl SpinState {
    pub fn flipped(self) -> Self {
        match self {
            SpinState::F3 => SpinState::F4,
            SpinState::F4 => SpinState::F3,
        }
    }

    /// Number of atoms coupled to the cavity for a single atom in this state.
    pub fn coupled(self) -> u8 {
        match self {
            SpinState::F3 => 0,
            SpinState::F4 => 1,
        }
    }
}

/// Mixes a master seed and a stream index into an independent seed (SplitMix64).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Probability of at least one jump within `window_ms` at `rate_per_s`.
pub fn jump_probability(rate_per_s: f64, window_ms: f64) -> f64 {
    -(-per_s_to_per_ms(rate_per_s) * window_ms).exp_m1()
}

/// Piecewise-constant record of how many atoms couple to the cavity.
///
/// `segments[k] = (start_ms, coupled)`; the first segment starts at 0 and the
/// last one extends to `duration_ms`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingPath {
    pub duration_ms: f64,
    pub segments: Vec<(f64, u8)>,
}

impl CouplingPath {
    pub fn constant(duration_ms: f64, coupled: u8) -> Self {
        Self {
            duration_ms,
            segments: vec![(0.0, coupled)],
        }
    }

    /// Number of transitions in the record.
    pub fn n_jumps(&self) -> usize {
        self.segments.len() - 1
    }

    /// Coupled-atom count at time `t_ms`.
    pub fn at(&self, t_ms: f64) -> u8 {
        let idx = self.segments.partition_point(|(start, _)| *start <= t_ms);
        self.segments[idx.saturating_sub(1)].1
    }

    /// Time-weighted mean of `f(coupled)` over each of `n_bins` bins of width `bin_ms`.
    pub fn bin_average(&self, bin_ms: f64, n_bins: usize, f: impl Fn(u8) -> f64) -> Vec<f64> {
        let mut out = vec![0.0; n_bins];
        let end = bin_ms * n_bins as f64;
        for (k, &(start, level)) in self.segments.iter().enumerate() {
            let stop = self.segments.get(k + 1).map_or(self.duration_ms, |s| s.0).min(end);
            let value = f(level);
            let mut t = start;
            let mut bin = ((t / bin_ms) as usize).min(n_bins - 1);
            while t < stop && bin < n_bins {
                let bin_end = ((bin + 1) as f64 * bin_ms).min(stop);
                if bin_end > t {
                    out[bin] += value * (bin_end - t);
                    t = bin_end;
                }
                bin += 1;
            }
        }
        out.iter_mut().for_each(|v| *v /= bin_ms);
        out
    }

    /// Prepends and appends uncoupled stretches (atom absent).
    pub fn padded(&self, before_ms: f64, after_ms: f64) -> Self {
        let mut segments = Vec::with_capacity(self.segments.len() + 2);
        if before_ms > 0.0 {
            segments.push((0.0, 0));
        }
        segments.extend(self.segments.iter().map(|&(t, c)| (t + before_ms, c)));
        if after_ms > 0.0 {
            segments.push((before_ms + self.duration_ms, 0));
        }
        Self {
            duration_ms: before_ms + self.duration_ms + after_ms,
            segments,
        }
    }
}

/// Continuous-time jump record of one atom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinPath {
    pub duration_ms: f64,
    /// `(time_ms, state entered)`; the first entry is the initial state at t = 0.
    pub jumps: Vec<(f64, SpinState)>,
}

impl SpinPath {
    pub fn to_coupling(&self) -> CouplingPath {
        CouplingPath {
            duration_ms: self.duration_ms,
            segments: self.jumps.iter().map(|&(t, s)| (t, s.coupled())).collect(),
        }
    }

    /// Complete dwell times in each state (segments not touching the record ends).
    pub fn complete_dwells(&self, state: SpinState) -> Vec<f64> {
        self.jumps
            .windows(3)
            .filter(|w| w[1].1 == state)
            .map(|w| w[2].0 - w[1].0)
            .collect()
    }
}

/// Exact CTMC sample of one atom's spin.
pub fn sample_spin_path(rates: &JumpRates, duration_ms: f64, initial: SpinState, seed: u64) -> SpinPath {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let exit = |s: SpinState| match s {
        SpinState::F4 => per_s_to_per_ms(rates.r_4to3),
        SpinState::F3 => per_s_to_per_ms(rates.r_3to4),
    };
    let mut jumps = vec![(0.0, initial)];
    let mut t = 0.0;
    let mut state = initial;
    loop {
        let rate = exit(state);
        if rate <= 0.0 {
            break;
        }
        t += Exp::new(rate).expect("positive rate").sample(&mut rng);
        if t >= duration_ms {
            break;
        }
        state = state.flipped();
        jumps.push((t, state));
    }
    SpinPath { duration_ms, jumps }
}

/// Transmitted photon flux for 0, 1 and 2 coupled atoms, before detection losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelModel {
    /// Photons/ms reaching the detector with no atom coupled (F=3 or empty cavity).
    pub rate_high: f64,
    /// Photons/ms with one atom coupled.
    pub rate_low: f64,
    /// Photons/ms with two atoms coupled.
    pub rate_low2: f64,
    /// Dark counts/ms, added after detection.
    pub background: f64,
}

impl LevelModel {
    pub fn new(rate_high: f64, rate_low: f64, rate_low2: f64, background: f64) -> Result<Self, TelegraphError> {
        let m = Self {
            rate_high,
            rate_low,
            rate_low2,
            background,
        };
        m.validate().map(|_| m)
    }

    /// Builds a model from detected count rates at efficiency `det_eff`.
    pub fn from_detected(
        high: f64,
        low: f64,
        low2: f64,
        background: f64,
        det_eff: f64,
    ) -> Result<Self, TelegraphError> {
        positive("det_eff", det_eff)?;
        Self::new(high / det_eff, low / det_eff, low2 / det_eff, background)
    }

    /// Levels from normalized transmissions T₀ = 1 > T₁ ≥ T₂ and the empty-cavity flux.
    pub fn from_transmissions(empty_flux: f64, t1: f64, t2: f64, background: f64) -> Result<Self, TelegraphError> {
        Self::new(empty_flux, empty_flux * t1, empty_flux * t2, background)
    }

    pub fn validate(&self) -> Result<(), TelegraphError> {
        let ok = [self.rate_high, self.rate_low, self.rate_low2, self.background]
            .iter()
            .all(|v| v.is_finite())
            && self.rate_high > self.rate_low
            && self.rate_low >= self.rate_low2
            && self.rate_low2 >= 0.0
            && self.background >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(TelegraphError::Levels)
        }
    }

    pub fn flux(&self, coupled: u8) -> f64 {
        match coupled {
            0 => self.rate_high,
            1 => self.rate_low,
            _ => self.rate_low2,
        }
    }

    /// Expected detected counts/ms for `coupled` atoms.
    pub fn detected(&self, coupled: u8, det_eff: f64) -> f64 {
        self.flux(coupled) * det_eff + self.background
    }

    /// Transmission normalized to the empty cavity.
    pub fn normalized(&self, coupled: u8) -> f64 {
        self.flux(coupled) / self.rate_high
    }
}

/// Generation record stored alongside a trace.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TraceMeta {
    pub seed: Option<u64>,
    pub rates: Option<JumpRates>,
    pub level: Option<LevelModel>,
    pub det_eff: Option<f64>,
    /// First and last bin during which an atom was present, if padded.
    pub presence: Option<(usize, usize)>,
}

/// Binned photon-count time series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountTrace {
    pub bin_ms: f64,
    pub t0_ms: f64,
    pub counts: Vec<u64>,
    #[serde(default)]
    pub meta: TraceMeta,
}

impl CountTrace {
    pub fn new(bin_ms: f64, t0_ms: f64, counts: Vec<u64>) -> Self {
        Self {
            bin_ms,
            t0_ms,
            counts,
            meta: TraceMeta::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn times_ms(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.counts.len()).map(move |i| self.t0_ms + i as f64 * self.bin_ms)
    }

    /// Copy restricted to bins `start..=end`.
    pub fn slice(&self, start: usize, end: usize) -> CountTrace {
        CountTrace {
            bin_ms: self.bin_ms,
            t0_ms: self.t0_ms + start as f64 * self.bin_ms,
            counts: self.counts[start..=end].to_vec(),
            meta: self.meta.clone(),
        }
    }
}

fn poisson_draw(mean: f64, rng: &mut ChaCha8Rng) -> u64 {
    if mean <= 0.0 {
        0
    } else {
        Poisson::new(mean).expect("positive mean").sample(rng) as u64
    }
}

/// Poisson counts per bin on the time-weighted flux along `path`.
pub fn bin_counts(
    path: &CouplingPath,
    level: &LevelModel,
    det_eff: f64,
    bin_ms: f64,
    seed: u64,
) -> Result<CountTrace, TelegraphError> {
    positive("bin_ms", bin_ms)?;
    level.validate()?;
    let n_bins = (path.duration_ms / bin_ms + 1e-9).floor() as usize;
    if n_bins == 0 {
        return Err(TelegraphError::ShortPath {
            path_ms: path.duration_ms,
            needed_ms: bin_ms,
        });
    }
    let mean_rate = path.bin_average(bin_ms, n_bins, |c| level.detected(c, det_eff));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts = mean_rate.iter().map(|r| poisson_draw(r * bin_ms, &mut rng)).collect();
    Ok(CountTrace {
        bin_ms,
        t0_ms: 0.0,
        counts,
        meta: TraceMeta {
            seed: Some(seed),
            level: Some(*level),
            det_eff: Some(det_eff),
            ..TraceMeta::default()
        },
    })
}

/// Starting state of a simulated atom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitialState {
    Fixed(SpinState),
    /// Drawn from the stationary distribution of the jump rates.
    Stationary,
}

/// One simulated single-atom trace and its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedTrace {
    pub trace: CountTrace,
    /// Spin path of the atom while present, in its own time frame.
    pub path: SpinPath,
    /// Bins of padding before the atom arrives.
    pub offset_bins: usize,
}

impl SimulatedTrace {
    /// Fraction of each atom-present bin spent in F=4.
    pub fn f4_occupancy(&self) -> Vec<f64> {
        let n = (self.path.duration_ms / self.trace.bin_ms + 1e-9).floor() as usize;
        self.path.to_coupling().bin_average(self.trace.bin_ms, n, f64::from)
    }
}

/// Settings for a single-atom telegraph ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub rates: JumpRates,
    pub level: LevelModel,
    pub det_eff: f64,
    pub bin_ms: f64,
    pub n_traces: usize,
    /// Time the atom is present, ms.
    pub duration_ms: f64,
    /// Empty-cavity stretches before insertion and after removal, ms.
    pub padding_ms: f64,
    pub initial: InitialState,
}

impl EnsembleSpec {
    /// 163 traces of 400 ms at 106/42 s⁻¹, 20 counts/ms at 1.3 % efficiency, 2 ms bins.
    pub fn observed() -> Self {
        let det_eff = 0.013;
        Self {
            rates: JumpRates::observed(),
            level: LevelModel::from_detected(20.0, 2.0, 2.0, 0.0, det_eff).expect("valid levels"),
            det_eff,
            bin_ms: 2.0,
            n_traces: 163,
            duration_ms: 400.0,
            padding_ms: 0.0,
            initial: InitialState::Stationary,
        }
    }

    pub fn validate(&self) -> Result<(), TelegraphError> {
        positive("det_eff", self.det_eff)?;
        positive("bin_ms", self.bin_ms)?;
        positive("duration_ms", self.duration_ms)?;
        if self.padding_ms < 0.0 || !self.padding_ms.is_finite() {
            return Err(TelegraphError::Invalid {
                name: "padding_ms",
                value: self.padding_ms,
                rule: ">= 0",
            });
        }
        self.level.validate()
    }
}

/// Generates one trace; `seed` fully determines the result.
pub fn simulate_trace(spec: &EnsembleSpec, seed: u64) -> Result<SimulatedTrace, TelegraphError> {
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0));
    let initial = match spec.initial {
        InitialState::Fixed(s) => s,
        InitialState::Stationary => {
            let u: f64 = rand::Rng::gen(&mut init_rng);
            if u < spec.rates.stationary_f4() {
                SpinState::F4
            } else {
                SpinState::F3
            }
        }
    };
    let path = sample_spin_path(&spec.rates, spec.duration_ms, initial, derive_seed(seed, 1));
    let padding_bins = (spec.padding_ms / spec.bin_ms).round() as usize;
    let pad = padding_bins as f64 * spec.bin_ms;
    let coupling = path.to_coupling().padded(pad, pad);
    let mut trace = bin_counts(&coupling, &spec.level, spec.det_eff, spec.bin_ms, derive_seed(seed, 2))?;
    let present_bins = (spec.duration_ms / spec.bin_ms + 1e-9).floor() as usize;
    trace.meta.seed = Some(seed);
    trace.meta.rates = Some(spec.rates);
    if padding_bins > 0 {
        trace.meta.presence = Some((padding_bins, padding_bins + present_bins - 1));
    }
    Ok(SimulatedTrace {
        trace,
        path,
        offset_bins: padding_bins,
    })
}

/// Generates `spec.n_traces` traces; trace i uses seed `derive_seed(master_seed, i)`.
pub fn simulate_ensemble(spec: &EnsembleSpec, master_seed: u64) -> Result<Vec<SimulatedTrace>, TelegraphError> {
    spec.validate()?;
    (0..spec.n_traces)
        .into_par_iter()
        .map(|i| simulate_trace(spec, derive_seed(master_seed, i as u64)))
        .collect()
}

/// Conditional two-atom path: both coupled, each leaves at `r2`; the remaining one leaves at `r1`.
pub fn sample_two_atom_path(r1: f64, r2: f64, duration_ms: f64, seed: u64) -> CouplingPath {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut segments = vec![(0.0, 2u8)];
    let mut t = 0.0;
    for (coupled, rate) in [(1u8, 2.0 * r2), (0u8, r1)] {
        let rate = per_s_to_per_ms(rate);
        if rate <= 0.0 {
            break;
        }
        t += Exp::new(rate).expect("positive rate").sample(&mut rng);
        if t >= duration_ms {
            break;
        }
        segments.push((t, coupled));
    }
    CouplingPath { duration_ms, segments }
}

/// Settings for the two-atom ensemble (repumper off, both atoms start in F=4).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoAtomEnsembleSpec {
    /// Jump rate of a lone coupled atom, s⁻¹.
    pub r1: f64,
    /// Per-atom jump rate with both atoms coupled, s⁻¹.
    pub r2: f64,
    pub level: LevelModel,
    pub det_eff: f64,
    pub bin_ms: f64,
    pub n_traces: usize,
    pub duration_ms: f64,
}

impl TwoAtomEnsembleSpec {
    pub fn validate(&self) -> Result<(), TelegraphError> {
        positive("r1", self.r1)?;
        if !(self.r2 >= 0.0 && self.r2.is_finite()) {
            return Err(TelegraphError::Invalid {
                name: "r2",
                value: self.r2,
                rule: ">= 0",
            });
        }
        positive("det_eff", self.det_eff)?;
        positive("bin_ms", self.bin_ms)?;
        positive("duration_ms", self.duration_ms)?;
        self.level.validate()
    }
}

pub fn simulate_two_atom_ensemble(
    spec: &TwoAtomEnsembleSpec,
    master_seed: u64,
) -> Result<Vec<CountTrace>, TelegraphError> {
    spec.validate()?;
    (0..spec.n_traces)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(master_seed, i as u64);
            let path = sample_two_atom_path(spec.r1, spec.r2, spec.duration_ms, derive_seed(seed, 1));
            let mut trace = bin_counts(&path, &spec.level, spec.det_eff, spec.bin_ms, derive_seed(seed, 2))?;
            trace.meta.seed = Some(seed);
            Ok(trace)
        })
        .collect()
}

/// Per-bin ensemble mean of counts normalized by the empty-cavity detected rate, with its standard error.
pub fn normalized_average(traces: &[CountTrace], level: &LevelModel, det_eff: f64) -> (Vec<f64>, Vec<f64>) {
    let n_bins = traces.iter().map(CountTrace::len).min().unwrap_or(0);
    let n = traces.len() as f64;
    let mut mean = vec![0.0; n_bins];
    let mut stderr = vec![0.0; n_bins];
    for b in 0..n_bins {
        let scale = level.detected(0, det_eff) * traces[0].bin_ms;
        let xs: Vec<f64> = traces
            .iter()
            .map(|t| (t.counts[b] as f64 - level.background * t.bin_ms) / (scale - level.background * t.bin_ms))
            .collect();
        let m = xs.iter().sum::<f64>() / n;
        let var = if n > 1.0 {
            xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        mean[b] = m;
        stderr[b] = (var / n).sqrt();
    }
    (mean, stderr)
}
