// Copyright 2026 The qjump Authors
// SPDX-License-Identifier: Apache-2.0

//! Conditional spin dynamics of two atoms sharing the cavity mode.
//!
//! With the repumper off both atoms start in F=4. While both are coupled
//! each leaves at r2, so the pair decays at 2·r2 into the one-coupled class,
//! which decays at r1 into the absorbing (3,3) state.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nms::simpson;
use crate::params::{default_params, SystemParams};
use crate::qmodel::{solve_adaptive, HilbertConfig, QModelError};
use crate::telegraph::{LevelModel, TelegraphError};

/// Coupling at which the qmodel per-atom scattering ratio equals 28/68 for
/// the default detunings and probe strength, MHz. Atoms sit off the cavity
/// axis, so this is well below the maximum coupling.
pub const G_EFF_MHZ: f64 = 4.137_147_300_945_237;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TwoAtomError {
    #[error("rate {name} = {value} must be positive and finite")]
    Rate { name: &'static str, value: f64 },
    #[error("time must be finite and >= 0, got {0}")]
    Time(f64),
    #[error("nonphysical scattering ratio {0}; expected a value in (0, 1]")]
    Nonphysical(f64),
    #[error(transparent)]
    Levels(#[from] TelegraphError),
    #[error(transparent)]
    Solver(#[from] QModelError),
    #[error("calibration failed: {0}")]
    Calibration(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoAtomModel {
    /// Jump rate of a lone coupled atom, s⁻¹.
    pub r1: f64,
    /// Per-atom jump rate with both atoms coupled, s⁻¹.
    pub r2: f64,
    pub levels: LevelModel,
}

/// Populations of (4,4), the one-coupled class and (3,3).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Populations {
    pub p44: f64,
    pub p_one: f64,
    pub p33: f64,
}

/// One row of the comparison table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub t_ms: f64,
    pub coupled: f64,
    pub const_r1: f64,
    pub const_r2: f64,
}

fn check_rate(name: &'static str, value: f64) -> Result<(), TwoAtomError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(TwoAtomError::Rate { name, value })
    }
}

/// expm1(x)/x, continuous through x = 0.
fn phi(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 + x / 2.0 + x * x / 6.0
    } else {
        x.exp_m1() / x
    }
}

impl TwoAtomModel {
    pub fn new(r1: f64, r2: f64, levels: LevelModel) -> Result<Self, TwoAtomError> {
        check_rate("r1", r1)?;
        check_rate("r2", r2)?;
        levels.validate()?;
        Ok(Self { r1, r2, levels })
    }

    /// R₁ = 68 s⁻¹, R₂ = 28 s⁻¹ with levels from [`operating_levels`] at the
    /// default operating point.
    pub fn observed() -> Result<Self, TwoAtomError> {
        let p = two_atom_operating_point();
        let (t1, t2) = operating_levels(&p)?;
        let levels = LevelModel::from_transmissions(p.output_flux_per_ms(p.n_empty), t1, t2, 0.0)?;
        Self::new(68.0, 28.0, levels)
    }

    /// Same chain with both transitions at the per-atom rate `r`.
    pub fn constant_rate(&self, r: f64) -> Self {
        Self { r1: r, r2: r, ..*self }
    }

    pub fn populations(&self, t_ms: f64) -> Result<Populations, TwoAtomError> {
        if !(t_ms >= 0.0 && t_ms.is_finite()) {
            return Err(TwoAtomError::Time(t_ms));
        }
        let t = t_ms * 1e-3;
        let a = 2.0 * self.r2;
        let p44 = (-a * t).exp();
        // a/(r1 − a)·(e^{−at} − e^{−r1 t}) rewritten to stay finite at r1 = a
        let p_one = a * t * p44 * phi((a - self.r1) * t);
        Ok(Populations {
            p44,
            p_one,
            p33: 1.0 - p44 - p_one,
        })
    }

    /// Transmission normalized to the empty cavity.
    pub fn expected_transmission(&self, t_ms: f64) -> Result<f64, TwoAtomError> {
        let p = self.populations(t_ms)?;
        let l = &self.levels;
        Ok(l.normalized(2) * p.p44 + l.normalized(1) * p.p_one + l.normalized(0) * p.p33)
    }

    /// Transmission averaged over consecutive bins starting at t = 0.
    pub fn binned_transmission(&self, bin_ms: f64, n_bins: usize) -> Result<Vec<f64>, TwoAtomError> {
        let nodes = simpson(0.0, bin_ms, 17);
        (0..n_bins)
            .map(|b| {
                let t0 = b as f64 * bin_ms;
                nodes
                    .iter()
                    .map(|&(dt, w)| Ok(w * self.expected_transmission(t0 + dt)?))
                    .sum()
            })
            .collect()
    }
}

/// Constant-rate comparison curve at `times_ms`.
pub fn constant_rate_curve(r: f64, levels: &LevelModel, times_ms: &[f64]) -> Result<Vec<f64>, TwoAtomError> {
    let m = TwoAtomModel::new(r, r, *levels)?;
    times_ms.iter().map(|&t| m.expected_transmission(t)).collect()
}

/// Coupled curve and both constant-rate curves.
pub fn curves(m: &TwoAtomModel, times_ms: &[f64]) -> Result<Vec<CurveRow>, TwoAtomError> {
    let c1 = m.constant_rate(m.r1);
    let c2 = m.constant_rate(m.r2);
    times_ms
        .iter()
        .map(|&t| {
            Ok(CurveRow {
                t_ms: t,
                coupled: m.expected_transmission(t)?,
                const_r1: c1.expected_transmission(t)?,
                const_r2: c2.expected_transmission(t)?,
            })
        })
        .collect()
}

fn ratio_to_r2(ratio: f64, r1: f64) -> Result<f64, TwoAtomError> {
    check_rate("r1", r1)?;
    if ratio > 0.0 && ratio <= 1.0 {
        Ok(r1 * ratio)
    } else {
        Err(TwoAtomError::Nonphysical(ratio))
    }
}

/// r₂ from the initial one- and two-atom transmission levels.
///
/// Each atom is driven by the intracavity field, so at weak excitation its
/// scattering rate, and with it the jump rate, is proportional to the photon
/// number and hence to the transmission: r₂ = r₁·T₂/T₁.
pub fn extract_r2_from_levels(t1: f64, t2: f64, r1: f64) -> Result<f64, TwoAtomError> {
    if !(t1 > 0.0 && t1.is_finite() && t2.is_finite()) || t2 <= 0.0 {
        return Err(TwoAtomError::Nonphysical(if t1 > 0.0 { t2 / t1 } else { f64::NAN }));
    }
    ratio_to_r2(t2 / t1, r1)
}

/// Per-atom scattering with two atoms coupled relative to one, from the
/// master equation at `p` (its `n_atoms` is ignored).
pub fn scattering_ratio(p: &SystemParams) -> Result<f64, TwoAtomError> {
    let one = p.with_atoms(1);
    let two = p.with_atoms(2);
    let s1 = solve_adaptive(
        &one,
        &HilbertConfig::for_params(&one)?,
        crate::qmodel::calibrated_drive(&one),
    )?;
    let s2 = solve_adaptive(
        &two,
        &HilbertConfig::for_params(&two)?,
        crate::qmodel::calibrated_drive(&two),
    )?;
    let per_atom_2 = s2.p_excited.iter().sum::<f64>() / 2.0;
    let per_atom_1 = s1.p_excited[0];
    if per_atom_1 <= 0.0 {
        return Err(TwoAtomError::Nonphysical(f64::NAN));
    }
    Ok(per_atom_2 / per_atom_1)
}

/// r₂ = r₁ × the master-equation scattering ratio at `p`.
pub fn extract_r2_from_model(p: &SystemParams, r1: f64) -> Result<f64, TwoAtomError> {
    ratio_to_r2(scattering_ratio(p)?, r1)
}

/// Normalized single- and two-atom transmissions at `p`.
pub fn operating_levels(p: &SystemParams) -> Result<(f64, f64), TwoAtomError> {
    let one = p.with_atoms(1);
    let two = p.with_atoms(2);
    let s1 = solve_adaptive(
        &one,
        &HilbertConfig::for_params(&one)?,
        crate::qmodel::calibrated_drive(&one),
    )?;
    let s2 = solve_adaptive(
        &two,
        &HilbertConfig::for_params(&two)?,
        crate::qmodel::calibrated_drive(&two),
    )?;
    Ok((s1.transmission, s2.transmission))
}

/// Default parameters with the reduced coupling [`G_EFF_MHZ`] and two atoms.
pub fn two_atom_operating_point() -> SystemParams {
    default_params().with_g(G_EFF_MHZ).with_atoms(2)
}

/// Coupling in [g_lo, g_hi] at which [`scattering_ratio`] equals `target`, by bisection.
pub fn calibrate_coupling(base: &SystemParams, target: f64, g_lo: f64, g_hi: f64) -> Result<f64, TwoAtomError> {
    let f = |g: f64| scattering_ratio(&base.with_g(g)).map(|r| r - target);
    let (mut lo, mut hi) = (g_lo, g_hi);
    let (flo, fhi) = (f(lo)?, f(hi)?);
    if flo.signum() == fhi.signum() {
        return Err(TwoAtomError::Calibration(format!(
            "ratio {target} not bracketed by g in [{g_lo}, {g_hi}]"
        )));
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if f(mid)?.signum() == flo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}
