// Copyright 2026 The qjump Authors
// SPDX-License-Identifier: Apache-2.0

//! Normal-mode-splitting spectrum measured through optical pumping into F=3.
//!
//! A probe pulse of duration t excites the coupled atom, which scatters
//! photons at R_sc and lands in F=3 with probability `branch` per photon:
//! P₃ = 1 − exp(−branch·R_sc·t). The spectrum averages P₃ over a uniform
//! distribution of couplings g and adds a detection background.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::fit::{levenberg_marquardt, LmOptions};
use crate::params::{angular, default_params, ParamsError, SystemParams};
use crate::qmodel::{
    build_liouvillian, drive_for_photon_number, steady_state_with_tangents, weak, HilbertConfig, QModelError, Tangent,
};
use crate::telegraph::{derive_seed, jump_probability, LevelModel};

/// Photon cutoff for the weak probe; the adaptive solver raises it if needed.
pub const NMS_N_FOCK: usize = 4;

/// Minimum number of detunings for a fit.
pub const MIN_FIT_POINTS: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NmsError {
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error("invalid model parameter: {0}")]
    Invalid(String),
    #[error(transparent)]
    Solver(#[from] QModelError),
    #[error("fit needs at least {MIN_FIT_POINTS} detunings, got {0}")]
    TooFewPoints(usize),
    #[error("spectrum data invalid: {0}")]
    BadData(String),
    #[error("data are consistent with a flat spectrum (p = {p_value:.3}); fit parameters are undetermined")]
    Degenerate { p_value: f64 },
    #[error("spectrum fit did not converge: {0}")]
    NoConvergence(String),
}

/// Model of the mapping measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NmsModelParams {
    /// Empty-cavity photon number of the probe.
    pub n_ph: f64,
    pub delta_ca_mhz: f64,
    pub pulse_us: f64,
    /// Probability that a scattered photon leaves the atom in F=3.
    pub branch_to_f3: f64,
    pub g_low_mhz: f64,
    pub g_high_mhz: f64,
    /// Erroneous F=3 detection probability.
    pub background: f64,
    /// Quadrature nodes over g (odd for Simpson's rule).
    pub g_nodes: usize,
    pub kappa_mhz: f64,
    pub gamma_mhz: f64,
}

impl Default for NmsModelParams {
    fn default() -> Self {
        let p = default_params();
        Self {
            n_ph: 0.062,
            delta_ca_mhz: 10.0,
            pulse_us: 70.0,
            branch_to_f3: 0.5,
            g_low_mhz: 6.0,
            g_high_mhz: 12.0,
            background: 0.13,
            g_nodes: 33,
            kappa_mhz: p.kappa_mhz,
            gamma_mhz: p.gamma_mhz,
        }
    }
}

impl NmsModelParams {
    pub fn validate(&self) -> Result<(), NmsError> {
        let bad = |s: &str| Err(NmsError::Invalid(s.to_string()));
        if !(self.n_ph >= 0.0 && self.n_ph.is_finite()) {
            return bad("n_ph must be finite and >= 0");
        }
        if !self.delta_ca_mhz.is_finite() {
            return bad("delta_ca_mhz must be finite");
        }
        if !(self.pulse_us >= 0.0 && self.pulse_us.is_finite()) {
            return bad("pulse_us must be finite and >= 0");
        }
        if !(self.branch_to_f3 > 0.0 && self.branch_to_f3 < 1.0) {
            return bad("branch_to_f3 must lie in (0, 1)");
        }
        if !(self.g_low_mhz >= 0.0 && self.g_low_mhz <= self.g_high_mhz && self.g_high_mhz.is_finite()) {
            return bad("need 0 <= g_low_mhz <= g_high_mhz");
        }
        if !(0.0..1.0).contains(&self.background) {
            return bad("background must lie in [0, 1)");
        }
        if self.g_nodes < 3 || self.g_nodes.is_multiple_of(2) {
            return bad("g_nodes must be odd and >= 3");
        }
        self.system(self.g_low_mhz, 0.0).validate()?;
        Ok(())
    }

    /// Single-atom parameters at coupling `g_mhz` and probe-cavity detuning `det`.
    pub fn system(&self, g_mhz: f64, det_mhz: f64) -> SystemParams {
        SystemParams {
            g_mhz,
            kappa_mhz: self.kappa_mhz,
            gamma_mhz: self.gamma_mhz,
            delta_ca_mhz: self.delta_ca_mhz,
            delta_pc_mhz: det_mhz,
            n_empty: self.n_ph.max(f64::MIN_POSITIVE),
            n_atoms: 1,
            ..default_params()
        }
    }

    /// Quadrature nodes and weights over the uniform g distribution.
    pub fn g_quadrature(&self) -> Vec<(f64, f64)> {
        simpson(self.g_low_mhz, self.g_high_mhz, self.g_nodes)
    }

    fn pulse_s(&self) -> f64 {
        self.pulse_us * 1e-6
    }
}

/// Composite Simpson nodes on [a, b] normalized to unit total weight; a
/// single node when a = b.
pub fn simpson(a: f64, b: f64, nodes: usize) -> Vec<(f64, f64)> {
    if a == b {
        return vec![(a, 1.0)];
    }
    let n = nodes - 1;
    let h = (b - a) / n as f64;
    (0..=n)
        .map(|i| {
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            (a + i as f64 * h, w / (3.0 * n as f64))
        })
        .collect()
}

/// Population transferred to F=3 by a pulse at scattering rate `r_sc_per_s`.
pub fn transfer_from_rate(r_sc_per_s: f64, pulse_us: f64, branch: f64) -> f64 {
    -(-branch * r_sc_per_s * pulse_us * 1e-6).exp_m1()
}

/// Steady-state scattering rate, s⁻¹, of one atom described by `p` with the
/// drive calibrated to `n_ph` empty-cavity photons.
pub fn scattering_rate(p: &SystemParams, n_ph: f64) -> Result<f64, NmsError> {
    if n_ph == 0.0 {
        return Ok(0.0);
    }
    let h = HilbertConfig::new(NMS_N_FOCK, 1)?;
    let s = crate::qmodel::solve_adaptive(p, &h, drive_for_photon_number(p, n_ph))?;
    Ok(s.scattering_rates()[0])
}

/// F=3 population after a pulse of `pulse_us` at the operating point `p`.
pub fn transfer_probability(p: &SystemParams, n_ph: f64, pulse_us: f64, branch: f64) -> Result<f64, NmsError> {
    Ok(transfer_from_rate(scattering_rate(p, n_ph)?, pulse_us, branch))
}

/// Transfer probability and its derivatives with respect to n_ph and Δ_ca (per MHz).
fn transfer_with_gradient(m: &NmsModelParams, g_mhz: f64, det_mhz: f64) -> Result<(f64, f64, f64, f64), NmsError> {
    if m.n_ph == 0.0 {
        return Ok((0.0, 0.0, 0.0, 0.0));
    }
    let p = m.system(g_mhz, det_mhz);
    let mut h = HilbertConfig::new(NMS_N_FOCK, 1)?;
    let eta = drive_for_photon_number(&p, m.n_ph);
    let (s, tan) = loop {
        let l = build_liouvillian(&p, &h, eta)?;
        match steady_state_with_tangents(&l, &[Tangent::Drive, Tangent::CavityAtomDetuning]) {
            Err(QModelError::TruncationTail { .. })
                if (HilbertConfig {
                    n_fock: h.n_fock + 2,
                    ..h
                })
                .check_cap()
                .is_ok() =>
            {
                h.n_fock += 2;
            }
            other => break other?,
        }
    };
    let two_gamma = 2.0 * angular(m.gamma_mhz) * 1e6;
    let r = two_gamma * s.p_excited[0];
    let t = m.pulse_s();
    let survive = (-m.branch_to_f3 * r * t).exp();
    let dp_dr = m.branch_to_f3 * t * survive;
    // tangents are per angular unit: d/dx_MHz = 2π d/dx_ang
    let deta_dn = m.kappa_mhz / (2.0 * m.n_ph.sqrt());
    let dr_dn = two_gamma * tan[0].p_excited[0] * angular(1.0) * deta_dn;
    let dr_dca = two_gamma * tan[1].p_excited[0] * angular(1.0);
    Ok((1.0 - survive, dp_dr * dr_dn, dp_dr * dr_dca, r))
}

/// Modelled or measured F=3 populations versus probe-cavity detuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumData {
    pub detunings_mhz: Vec<f64>,
    pub p_f3: Vec<f64>,
    /// Repetitions per point; zero for noiseless model output.
    pub n_cycles: Vec<u64>,
}

impl SpectrumData {
    pub fn len(&self) -> usize {
        self.detunings_mhz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detunings_mhz.is_empty()
    }

    pub fn validate(&self) -> Result<(), NmsError> {
        let n = self.detunings_mhz.len();
        if self.p_f3.len() != n || self.n_cycles.len() != n {
            return Err(NmsError::BadData("column lengths differ".into()));
        }
        if let Some(p) = self.p_f3.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(NmsError::BadData(format!("p_f3 = {p} outside [0, 1]")));
        }
        if self.detunings_mhz.iter().any(|d| !d.is_finite()) {
            return Err(NmsError::BadData("non-finite detuning".into()));
        }
        Ok(())
    }

    /// Detunings and values of local maxima, in scan order.
    pub fn peaks(&self) -> Vec<(f64, f64)> {
        let p = &self.p_f3;
        (1..p.len().saturating_sub(1))
            .filter(|&i| p[i] > p[i - 1] && p[i] >= p[i + 1])
            .map(|i| (self.detunings_mhz[i], p[i]))
            .collect()
    }
}

/// Per-detuning model output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelPoint {
    pub detuning_mhz: f64,
    pub p_f3: f64,
    /// g-averaged transfer probability before background.
    pub transfer: f64,
    /// g-averaged scattering rate, s⁻¹.
    pub scattering_rate_per_s: f64,
    /// g-averaged photons scattered during the pulse, R_sc·t.
    pub scattered_photons: f64,
}

fn model_point(m: &NmsModelParams, det: f64) -> Result<ModelPoint, NmsError> {
    let (mut transfer, mut rate) = (0.0, 0.0);
    for (g, w) in m.g_quadrature() {
        let r = scattering_rate(&m.system(g, det), m.n_ph)?;
        transfer += w * transfer_from_rate(r, m.pulse_us, m.branch_to_f3);
        rate += w * r;
    }
    Ok(ModelPoint {
        detuning_mhz: det,
        p_f3: m.background + (1.0 - m.background) * transfer,
        transfer,
        scattering_rate_per_s: rate,
        scattered_photons: rate * m.pulse_s(),
    })
}

/// Full per-detuning model output.
pub fn model_points(m: &NmsModelParams, detunings_mhz: &[f64]) -> Result<Vec<ModelPoint>, NmsError> {
    m.validate()?;
    if detunings_mhz.iter().any(|d| !d.is_finite()) {
        return Err(NmsError::BadData("non-finite detuning".into()));
    }
    detunings_mhz.par_iter().map(|&d| model_point(m, d)).collect()
}

/// Modelled spectrum p = bg + (1 − bg)·⟨P₃⟩_g.
pub fn model_spectrum(m: &NmsModelParams, detunings_mhz: &[f64]) -> Result<SpectrumData, NmsError> {
    let pts = model_points(m, detunings_mhz)?;
    Ok(SpectrumData {
        detunings_mhz: detunings_mhz.to_vec(),
        p_f3: pts.iter().map(|p| p.p_f3).collect(),
        n_cycles: vec![0; pts.len()],
    })
}

/// Binomially sampled spectrum with `n_cycles` repetitions per detuning.
pub fn simulate_spectrum(model: &SpectrumData, n_cycles: u64, seed: u64) -> SpectrumData {
    let p_f3 = model
        .p_f3
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
            let k = Binomial::new(n_cycles, p.clamp(0.0, 1.0))
                .expect("valid binomial")
                .sample(&mut rng);
            k as f64 / n_cycles as f64
        })
        .collect();
    SpectrumData {
        detunings_mhz: model.detunings_mhz.clone(),
        p_f3,
        n_cycles: vec![n_cycles; model.len()],
    }
}

/// Readout of the hyperfine state after the pulse, for the full-cycle simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionModel {
    /// F=4 → F=3 jump rate during readout, s⁻¹ (repumper off).
    pub r_4to3: f64,
    pub level: LevelModel,
    pub det_eff: f64,
    pub window_ms: f64,
    /// Counts at or above which the atom is declared F=3.
    pub threshold_counts: u64,
}

impl Default for DetectionModel {
    fn default() -> Self {
        let det_eff = 0.013;
        Self {
            r_4to3: 106.0,
            level: LevelModel::from_detected(20.0, 2.0, 2.0, 0.0, det_eff).expect("valid levels"),
            det_eff,
            window_ms: 2.0,
            threshold_counts: 22,
        }
    }
}

/// End-to-end Monte-Carlo of the experimental cycle: a random g per cycle,
/// pulse-induced pumping into F=3, then a photon-counting readout during
/// which an F=4 atom may still jump. The background is not a parameter here;
/// it emerges from readout jumps and counting noise.
pub fn simulate_full_cycle(
    m: &NmsModelParams,
    detunings_mhz: &[f64],
    n_cycles: u64,
    detection: &DetectionModel,
    seed: u64,
) -> Result<SpectrumData, NmsError> {
    use rand::Rng;
    use rand_distr::{Exp, Poisson};

    m.validate()?;
    let nodes = m.g_quadrature();
    let rows: Vec<f64> = detunings_mhz
        .par_iter()
        .enumerate()
        .map(|(i, &det)| -> Result<f64, NmsError> {
            // transfer is smooth in g: tabulate on the quadrature nodes and interpolate
            let table: Vec<(f64, f64)> = nodes
                .iter()
                .map(|&(g, _)| {
                    Ok((
                        g,
                        transfer_probability(&m.system(g, det), m.n_ph, m.pulse_us, m.branch_to_f3)?,
                    ))
                })
                .collect::<Result<_, NmsError>>()?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
            let mut hits = 0u64;
            for _ in 0..n_cycles {
                let g = rng.gen_range(m.g_low_mhz..=m.g_high_mhz);
                let transfer = interpolate(&table, g);
                let in_f3 = rng.gen::<f64>() < transfer;
                let t = detection.window_ms;
                let high = detection.level.detected(0, detection.det_eff);
                let low = detection.level.detected(1, detection.det_eff);
                let mean = if in_f3 {
                    high * t
                } else {
                    let jump = Exp::new(detection.r_4to3 * 1e-3)
                        .expect("positive rate")
                        .sample(&mut rng);
                    let coupled = jump.min(t);
                    low * coupled + high * (t - coupled)
                };
                let counts = if mean > 0.0 {
                    Poisson::new(mean).expect("positive mean").sample(&mut rng) as u64
                } else {
                    0
                };
                hits += u64::from(counts >= detection.threshold_counts);
            }
            Ok(hits as f64 / n_cycles as f64)
        })
        .collect::<Result<_, _>>()?;
    Ok(SpectrumData {
        detunings_mhz: detunings_mhz.to_vec(),
        p_f3: rows,
        n_cycles: vec![n_cycles; detunings_mhz.len()],
    })
}

fn interpolate(table: &[(f64, f64)], x: f64) -> f64 {
    if table.len() == 1 {
        return table[0].1;
    }
    let i = table.partition_point(|(g, _)| *g <= x).clamp(1, table.len() - 1);
    let (x0, y0) = table[i - 1];
    let (x1, y1) = table[i];
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Probability that an F=4 atom jumps within the readout window, the
/// bracketing estimate for the detection background.
pub fn readout_jump_probability(r_4to3: f64, window_ms: f64) -> f64 {
    jump_probability(r_4to3, window_ms)
}

/// Fitted photon number and cavity-atom detuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmsFit {
    pub n_ph: f64,
    pub n_ph_err: f64,
    pub delta_ca_mhz: f64,
    pub delta_ca_err: f64,
    /// Covariance of (n_ph, Δ_ca).
    pub covariance: [[f64; 2]; 2],
    pub chi2: f64,
    pub dof: usize,
    pub iterations: usize,
}

fn binomial_sigma(p: f64, n: u64) -> f64 {
    let n = n.max(1) as f64;
    let q = p.clamp(1.0 / n, 1.0 - 1.0 / n);
    (q * (1.0 - q) / n).sqrt()
}

/// Closed-form weak-excitation spectrum, for the starting-point search.
fn weak_spectrum(m: &NmsModelParams, dets: &[f64], nodes: &[(f64, f64)]) -> Vec<f64> {
    dets.iter()
        .map(|&d| {
            let p = m.system(0.0, d);
            let eta = drive_for_photon_number(&p, m.n_ph);
            let transfer: f64 = nodes
                .iter()
                .map(|&(g, w)| {
                    w * transfer_from_rate(weak::scattering_rate(&p.with_g(g), eta), m.pulse_us, m.branch_to_f3)
                })
                .sum();
            m.background + (1.0 - m.background) * transfer
        })
        .collect()
}

/// Weighted least-squares fit of n_ph and Δ_ca; every other field of
/// `fixed` is held constant.
pub fn fit_spectrum(data: &SpectrumData, fixed: &NmsModelParams) -> Result<NmsFit, NmsError> {
    data.validate()?;
    fixed.validate()?;
    let n = data.len();
    if n < MIN_FIT_POINTS {
        return Err(NmsError::TooFewPoints(n));
    }
    let sigma: Vec<f64> = data
        .p_f3
        .iter()
        .zip(&data.n_cycles)
        .map(|(&p, &c)| if c == 0 { 1e-3 } else { binomial_sigma(p, c) })
        .collect();

    // a flat spectrum carries no information on the two parameters
    let wsum: f64 = sigma.iter().map(|s| s.powi(-2)).sum();
    let mean = data.p_f3.iter().zip(&sigma).map(|(p, s)| p / (s * s)).sum::<f64>() / wsum;
    let flat_chi2: f64 = data
        .p_f3
        .iter()
        .zip(&sigma)
        .map(|(p, s)| ((p - mean) / s).powi(2))
        .sum();
    let has_noise = data.n_cycles.iter().any(|&c| c > 0);
    let p_value = if has_noise {
        1.0 - ChiSquared::new((n - 1) as f64).expect("dof >= 5").cdf(flat_chi2)
    } else if flat_chi2 == 0.0 {
        1.0
    } else {
        0.0
    };
    if p_value > 0.01 {
        return Err(NmsError::Degenerate { p_value });
    }

    // coarse start from the closed-form model
    let nodes = simpson(fixed.g_low_mhz, fixed.g_high_mhz, 9.min(fixed.g_nodes));
    let mut best = (f64::INFINITY, fixed.n_ph, fixed.delta_ca_mhz);
    for i in 0..=24 {
        let n_ph = 10f64.powf(-3.0 + 3.0 * i as f64 / 24.0);
        for j in 0..=60 {
            let dca = -30.0 + j as f64;
            let trial = NmsModelParams {
                n_ph,
                delta_ca_mhz: dca,
                ..*fixed
            };
            let model = weak_spectrum(&trial, &data.detunings_mhz, &nodes);
            let chi2: f64 = model
                .iter()
                .zip(&data.p_f3)
                .zip(&sigma)
                .map(|((m, p), s)| ((p - m) / s).powi(2))
                .sum();
            if chi2 < best.0 {
                best = (chi2, n_ph, dca);
            }
        }
    }

    let eval = |x: &[f64]| -> Result<crate::fit::Evaluation, NmsError> {
        let m = NmsModelParams {
            n_ph: x[0],
            delta_ca_mhz: x[1],
            ..*fixed
        };
        let rows: Vec<(f64, f64, f64)> = data
            .detunings_mhz
            .par_iter()
            .map(|&d| {
                let (mut p, mut dn, mut dd) = (0.0, 0.0, 0.0);
                for (g, w) in m.g_quadrature() {
                    let (t, tn, td, _) = transfer_with_gradient(&m, g, d)?;
                    p += w * t;
                    dn += w * tn;
                    dd += w * td;
                }
                let s = 1.0 - m.background;
                Ok((m.background + s * p, s * dn, s * dd))
            })
            .collect::<Result<_, NmsError>>()?;
        let r = nalgebra::DVector::from_iterator(
            n,
            rows.iter().zip(&data.p_f3).zip(&sigma).map(|((m, p), s)| (p - m.0) / s),
        );
        let j = nalgebra::DMatrix::from_fn(n, 2, |i, k| -(if k == 0 { rows[i].1 } else { rows[i].2 }) / sigma[i]);
        Ok((r, j))
    };
    let opts = LmOptions {
        max_iterations: 100,
        ftol: 1e-14,
        xtol: 1e-12,
        gtol: 1e-14,
        initial_lambda: 1e-3,
    };
    let report = levenberg_marquardt(eval, &[best.1, best.2], Some(&[(1e-6, 5.0), (-60.0, 60.0)]), &opts).map_err(
        |e| match e {
            crate::fit::FitError::Model(inner) => inner,
            other => NmsError::NoConvergence(other.to_string()),
        },
    )?;
    let cov = report
        .covariance
        .clone()
        .ok_or_else(|| NmsError::NoConvergence("singular normal matrix at the optimum".into()))?;
    Ok(NmsFit {
        n_ph: report.x[0],
        n_ph_err: cov[(0, 0)].max(0.0).sqrt(),
        delta_ca_mhz: report.x[1],
        delta_ca_err: cov[(1, 1)].max(0.0).sqrt(),
        covariance: [[cov[(0, 0)], cov[(0, 1)]], [cov[(1, 0)], cov[(1, 1)]]],
        chi2: report.chi2,
        dof: report.dof(),
        iterations: report.iterations,
    })
}

/// Model points at the local maxima of the spectrum on `grid`, highest first.
pub fn spectrum_peaks(m: &NmsModelParams, grid: &[f64]) -> Result<Vec<ModelPoint>, NmsError> {
    let pts = model_points(m, grid)?;
    let mut peaks: Vec<ModelPoint> = (1..pts.len().saturating_sub(1))
        .filter(|&i| pts[i].p_f3 > pts[i - 1].p_f3 && pts[i].p_f3 >= pts[i + 1].p_f3)
        .map(|i| pts[i])
        .collect();
    peaks.sort_by(|a, b| b.p_f3.total_cmp(&a.p_f3));
    Ok(peaks)
}

/// Detuning grid used for the recovery study: −24 … 16 MHz in 0.5 MHz steps.
pub fn recovery_grid() -> Vec<f64> {
    (0..=80).map(|i| -24.0 + 0.5 * i as f64).collect()
}
