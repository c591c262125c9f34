// Copyright 2026 The qjump Authors
// SPDX-License-Identifier: Apache-2.0

//! Physical parameters and unit conventions.
//!
//! Every frequency-valued field is an ordinary frequency ν in MHz, so the
//! conventional value "2π × 0.4 MHz" is stored as `0.4`. Conversion to
//! angular units (rad/μs) happens once, inside the solver entry points, via
//! [`angular`]. Quantum-jump rates are kept in s⁻¹.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, KeyValues};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamsError {
    #[error("parameter `{name}` = {value} violates: {rule}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        rule: &'static str,
    },
    #[error("n_atoms must be 1 or 2, got {0}")]
    AtomCount(usize),
}

/// Ordinary frequency in MHz → angular frequency in rad/μs.
#[inline]
pub fn angular(mhz: f64) -> f64 {
    2.0 * PI * mhz
}

/// Rate in s⁻¹ → rate in ms⁻¹.
#[inline]
pub fn per_s_to_per_ms(rate: f64) -> f64 {
    rate * 1e-3
}

/// Rate in ms⁻¹ → rate in s⁻¹.
#[inline]
pub fn per_ms_to_per_s(rate: f64) -> f64 {
    rate * 1e3
}

/// All physical constants of one atom-cavity configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Atom-cavity coupling, MHz. Zero describes an empty cavity.
    pub g_mhz: f64,
    /// Cavity field decay rate (half linewidth), MHz.
    pub kappa_mhz: f64,
    /// Atomic dipole decay rate (half linewidth), MHz.
    pub gamma_mhz: f64,
    /// Cavity-atom detuning (ω_c − ω_a)/2π, MHz. Positive = cavity blue of the atom.
    pub delta_ca_mhz: f64,
    /// Probe-cavity detuning (ω_p − ω_c)/2π, MHz.
    pub delta_pc_mhz: f64,
    /// Empty-cavity on-resonance intra-cavity photon number.
    pub n_empty: f64,
    /// Overall photon detection efficiency.
    pub det_eff: f64,
    /// Binning time, ms.
    pub bin_ms: f64,
    pub n_atoms: usize,
}

impl Default for SystemParams {
    fn default() -> Self {
        default_params()
    }
}

/// Parameters of the single-atom quantum-jump configuration.
///
/// `g` is a midpoint of the 8…13 MHz Zeeman-dependent range.
pub fn default_params() -> SystemParams {
    SystemParams {
        g_mhz: 10.0,
        kappa_mhz: 0.4,
        gamma_mhz: 2.6,
        delta_ca_mhz: 44.0,
        delta_pc_mhz: 0.0,
        n_empty: 0.3,
        det_eff: 0.013,
        bin_ms: 2.0,
        n_atoms: 1,
    }
}

/// Single-atom cooperativity g²/(2κγ).
pub fn cooperativity(p: &SystemParams) -> f64 {
    p.g_mhz * p.g_mhz / (2.0 * p.kappa_mhz * p.gamma_mhz)
}

fn check(name: &'static str, value: f64, ok: bool, rule: &'static str) -> Result<(), ParamsError> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(ParamsError::OutOfRange { name, value, rule })
    }
}

impl SystemParams {
    pub fn validate(&self) -> Result<(), ParamsError> {
        check("g_mhz", self.g_mhz, self.g_mhz >= 0.0, "g >= 0")?;
        check("kappa_mhz", self.kappa_mhz, self.kappa_mhz > 0.0, "kappa > 0")?;
        check("gamma_mhz", self.gamma_mhz, self.gamma_mhz > 0.0, "gamma > 0")?;
        check("delta_ca_mhz", self.delta_ca_mhz, true, "finite")?;
        check("delta_pc_mhz", self.delta_pc_mhz, true, "finite")?;
        check("n_empty", self.n_empty, self.n_empty > 0.0, "n_empty > 0")?;
        check(
            "det_eff",
            self.det_eff,
            self.det_eff > 0.0 && self.det_eff <= 1.0,
            "0 < det_eff <= 1",
        )?;
        check("bin_ms", self.bin_ms, self.bin_ms > 0.0, "bin_ms > 0")?;
        if !(1..=2).contains(&self.n_atoms) {
            return Err(ParamsError::AtomCount(self.n_atoms));
        }
        Ok(())
    }

    /// Returns `self` if valid.
    pub fn validated(self) -> Result<Self, ParamsError> {
        self.validate().map(|_| self)
    }

    pub fn with_g(mut self, g_mhz: f64) -> Self {
        self.g_mhz = g_mhz;
        self
    }

    pub fn with_delta_ca(mut self, delta_ca_mhz: f64) -> Self {
        self.delta_ca_mhz = delta_ca_mhz;
        self
    }

    pub fn with_delta_pc(mut self, delta_pc_mhz: f64) -> Self {
        self.delta_pc_mhz = delta_pc_mhz;
        self
    }

    pub fn with_n_empty(mut self, n_empty: f64) -> Self {
        self.n_empty = n_empty;
        self
    }

    pub fn with_atoms(mut self, n_atoms: usize) -> Self {
        self.n_atoms = n_atoms;
        self
    }

    /// Probe-atom detuning Δ_pa = Δ_pc + Δ_ca, MHz.
    pub fn delta_pa_mhz(&self) -> f64 {
        self.delta_pc_mhz + self.delta_ca_mhz
    }

    /// Photon flux leaving the cavity through the output coupler when the
    /// cavity holds `n_photon` photons: 2κ·n, in photons per ms.
    pub fn output_flux_per_ms(&self, n_photon: f64) -> f64 {
        // angular κ is in rad/μs
        2.0 * angular(self.kappa_mhz) * n_photon * 1e3
    }

    /// Expected detected count rate of the empty, resonantly probed cavity, counts/ms.
    pub fn empty_cavity_counts_per_ms(&self) -> f64 {
        self.output_flux_per_ms(self.n_empty) * self.det_eff
    }

    pub const KEYS: [&'static str; 9] = [
        "g_mhz",
        "kappa_mhz",
        "gamma_mhz",
        "delta_ca_mhz",
        "delta_pc_mhz",
        "n_empty",
        "det_eff",
        "bin_ms",
        "n_atoms",
    ];

    /// Overrides defaults with whichever parameter keys are present, consuming them.
    pub fn take_from(kv: &mut KeyValues, base: SystemParams) -> Result<Self, ConfigError> {
        let mut p = base;
        kv.take_into("g_mhz", &mut p.g_mhz)?;
        kv.take_into("kappa_mhz", &mut p.kappa_mhz)?;
        kv.take_into("gamma_mhz", &mut p.gamma_mhz)?;
        kv.take_into("delta_ca_mhz", &mut p.delta_ca_mhz)?;
        kv.take_into("delta_pc_mhz", &mut p.delta_pc_mhz)?;
        kv.take_into("n_empty", &mut p.n_empty)?;
        kv.take_into("det_eff", &mut p.det_eff)?;
        kv.take_into("bin_ms", &mut p.bin_ms)?;
        kv.take_into("n_atoms", &mut p.n_atoms)?;
        p.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(p)
    }

    /// Parses a flat parameter file. Unknown keys are an error.
    pub fn from_config_str(text: &str) -> Result<Self, ConfigError> {
        let mut kv = KeyValues::parse(text)?;
        let p = Self::take_from(&mut kv, default_params())?;
        kv.ensure_consumed()?;
        Ok(p)
    }
}

/// Quantum-jump rates of a single atom, s⁻¹.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpRates {
    /// F=4 → F=3, driven by off-resonant excitation by the cavity field.
    pub r_4to3: f64,
    /// F=3 → F=4, set by the repumper. Zero means repumper off.
    pub r_3to4: f64,
}

impl JumpRates {
    pub fn new(r_4to3: f64, r_3to4: f64) -> Result<Self, ParamsError> {
        check("r_4to3", r_4to3, r_4to3 > 0.0, "r_4to3 > 0")?;
        check("r_3to4", r_3to4, r_3to4 >= 0.0, "r_3to4 >= 0")?;
        Ok(Self { r_4to3, r_3to4 })
    }

    /// Rates observed in the single-atom telegraph experiment.
    pub fn observed() -> Self {
        Self {
            r_4to3: 106.0,
            r_3to4: 42.0,
        }
    }

    /// Total relaxation rate r_4to3 + r_3to4, s⁻¹.
    pub fn total(&self) -> f64 {
        self.r_4to3 + self.r_3to4
    }

    /// Stationary probability of F=4.
    pub fn stationary_f4(&self) -> f64 {
        self.r_3to4 / self.total()
    }

    /// Probability of at least one F=4 → F=3 jump within `window_ms`.
    pub fn jump_probability_within(&self, window_ms: f64) -> f64 {
        -(-self.r_4to3 * window_ms * 1e-3).exp_m1()
    }
}
