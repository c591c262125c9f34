// Copyright 2026 The qjump Authors
// SPDX-License-Identifier: Apache-2.0

//! Driven, dissipative one- and two-atom cavity model and its steady state.
//!
//! Atoms are two-level systems on the F=4 → F' cycling transition. An atom
//! in F=3 does not couple to the mode and is simply left out of the model.

mod liouvillian;
mod operators;
mod steady;
pub mod weak;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use liouvillian::{
    build_liouvillian, from_hermitian_coords, hermitian_coords, CMatrix, Component, GeneratorBasis, Liouvillian, Rates,
};
pub use operators::Operators;
pub use steady::{
    steady_state, steady_state_with_tangents, ObservableTangent, SteadyState, Tangent, RESIDUAL_TOLERANCE,
    TAIL_TOLERANCE,
};

use crate::params::{ParamsError, SystemParams};

/// Default cap on the Liouville-space dimension d².
pub const DEFAULT_LIOUVILLE_CAP: usize = 4096;

/// Default photon-number cutoff.
pub const DEFAULT_N_FOCK: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QModelError {
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error("photon cutoff must be >= 2, got {0}")]
    Cutoff(usize),
    #[error("Liouville dimension {dim} exceeds cap {cap}")]
    DimensionOverflow { dim: usize, cap: usize },
    #[error("parameters describe {params} atoms but the Hilbert space holds {hilbert}")]
    AtomMismatch { params: usize, hilbert: usize },
    #[error("drive amplitude must be finite and >= 0, got {0}")]
    BadDrive(f64),
    #[error("steady-state linear system is singular")]
    Singular,
    #[error("steady-state residual {0:e} above tolerance")]
    Residual(f64),
    #[error("Fock cutoff {n_fock} too small: top-level population {population:e}")]
    TruncationTail { n_fock: usize, population: f64 },
}

/// Truncated Hilbert space: `n_fock` photon levels times 2^`n_atoms` atomic states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HilbertConfig {
    pub n_fock: usize,
    pub n_atoms: usize,
    /// Largest allowed d².
    pub liouville_cap: usize,
}

impl HilbertConfig {
    pub fn new(n_fock: usize, n_atoms: usize) -> Result<Self, QModelError> {
        if n_fock < 2 {
            return Err(QModelError::Cutoff(n_fock));
        }
        if !(1..=2).contains(&n_atoms) {
            return Err(ParamsError::AtomCount(n_atoms).into());
        }
        Ok(Self {
            n_fock,
            n_atoms,
            liouville_cap: DEFAULT_LIOUVILLE_CAP,
        })
    }

    /// Default cutoff for the atom count of `p`.
    pub fn for_params(p: &SystemParams) -> Result<Self, QModelError> {
        Self::new(DEFAULT_N_FOCK, p.n_atoms)
    }

    pub fn with_cap(mut self, cap: usize) -> Self {
        self.liouville_cap = cap;
        self
    }

    pub fn dimension(&self) -> usize {
        self.n_fock << self.n_atoms
    }

    pub fn liouville_dimension(&self) -> usize {
        self.dimension().pow(2)
    }

    pub fn check_cap(&self) -> Result<(), QModelError> {
        let dim = self.liouville_dimension();
        if dim > self.liouville_cap {
            Err(QModelError::DimensionOverflow {
                dim,
                cap: self.liouville_cap,
            })
        } else {
            Ok(())
        }
    }
}

/// Drive amplitude giving `n_empty` photons in the resonantly driven empty cavity:
/// η = κ√n (same units as κ).
pub fn drive_for_photon_number(p: &SystemParams, n_empty: f64) -> f64 {
    p.kappa_mhz * n_empty.sqrt()
}

/// Drive amplitude calibrated from `p.n_empty`.
pub fn calibrated_drive(p: &SystemParams) -> f64 {
    drive_for_photon_number(p, p.n_empty)
}

/// Solves at the cutoff of `h`, raising it two levels at a time while the
/// truncation-tail check fails and the dimension cap allows.
pub fn solve_adaptive(p: &SystemParams, h: &HilbertConfig, drive_eta_mhz: f64) -> Result<SteadyState, QModelError> {
    let mut cfg = *h;
    loop {
        let l = build_liouvillian(p, &cfg, drive_eta_mhz)?;
        match steady_state(&l) {
            Err(QModelError::TruncationTail { .. })
                if HilbertConfig {
                    n_fock: cfg.n_fock + 2,
                    ..cfg
                }
                .check_cap()
                .is_ok() =>
            {
                cfg.n_fock += 2;
            }
            other => return other,
        }
    }
}

/// Per-atom photon scattering rates 2γ⟨σ⁺σ⁻⟩, s⁻¹.
pub fn scattering_rate(s: &SteadyState) -> Vec<f64> {
    s.scattering_rates()
}

/// One point of a probe-detuning scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumPoint {
    pub detuning_mhz: f64,
    pub transmission: f64,
    /// Excitation probability of the first atom (all atoms are identical).
    pub p_excited: f64,
    /// Scattering rate of the first atom, s⁻¹.
    pub scattering_rate_per_s: f64,
}

/// Steady-state transmission and atomic excitation versus probe-cavity detuning.
pub fn transmission_spectrum(
    p: &SystemParams,
    detunings_mhz: &[f64],
    drive_eta_mhz: f64,
) -> Result<Vec<SpectrumPoint>, QModelError> {
    let h = HilbertConfig::for_params(p)?;
    spectrum_with(p, &h, detunings_mhz, drive_eta_mhz)
}

pub fn spectrum_with(
    p: &SystemParams,
    h: &HilbertConfig,
    detunings_mhz: &[f64],
    drive_eta_mhz: f64,
) -> Result<Vec<SpectrumPoint>, QModelError> {
    use rayon::prelude::*;

    if let Some(bad) = detunings_mhz.iter().find(|d| !d.is_finite()) {
        return Err(ParamsError::OutOfRange {
            name: "detuning_mhz",
            value: *bad,
            rule: "finite",
        }
        .into());
    }
    detunings_mhz
        .par_iter()
        .map(|&det| {
            let s = solve_adaptive(&p.with_delta_pc(det), h, drive_eta_mhz)?;
            let p_exc = s.p_excited.first().copied().unwrap_or(0.0);
            Ok(SpectrumPoint {
                detuning_mhz: det,
                transmission: s.transmission,
                p_excited: p_exc,
                scattering_rate_per_s: s.scattering_rates().first().copied().unwrap_or(0.0),
            })
        })
        .collect()
}

/// Evenly spaced detunings from `-span` to `span` inclusive.
pub fn symmetric_grid(span_mhz: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.0],
        n => (0..n)
            .map(|i| -span_mhz + 2.0 * span_mhz * i as f64 / (n - 1) as f64)
            .collect(),
    }
}
