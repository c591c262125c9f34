// Copyright 2026 The qjump Authors
// SPDX-License-Identifier: Apache-2.0

//! Weak-excitation (linear-response) limit of the cavity model.
//!
//! For N identical atoms and vanishing drive the field and dipole
//! amplitudes obey a linear system whose solution is
//!
//! ```text
//! α = −iη (γ − iΔ_pa) / [(κ − iΔ_pc)(γ − iΔ_pa) + N g²]
//! s = −i g α / (γ − iΔ_pa)
//! ```
//!
//! These closed forms serve as cheap starting points for the spectrum fit
//! and as an independent check on the master-equation solver.

use num_complex::Complex64;

use crate::params::{angular, SystemParams};

fn amplitudes(p: &SystemParams, eta_mhz: f64) -> (Complex64, Complex64) {
    let i = Complex64::i();
    let kappa = angular(p.kappa_mhz);
    let gamma = angular(p.gamma_mhz);
    let g = angular(p.g_mhz);
    let d_pc = angular(p.delta_pc_mhz);
    let d_pa = angular(p.delta_pa_mhz());
    let eta = angular(eta_mhz);
    let atom = Complex64::new(gamma, -d_pa);
    let denom = Complex64::new(kappa, -d_pc) * atom + p.n_atoms as f64 * g * g;
    let alpha = -i * eta * atom / denom;
    let s = -i * g * alpha / atom;
    (alpha, s)
}

/// Transmission relative to the resonant empty cavity, drive-independent.
pub fn transmission(p: &SystemParams) -> f64 {
    let (alpha, _) = amplitudes(p, 1.0);
    alpha.norm_sqr() * (angular(p.kappa_mhz) / angular(1.0)).powi(2)
}

/// Intra-cavity photon number at drive `eta_mhz`.
pub fn photon_number(p: &SystemParams, eta_mhz: f64) -> f64 {
    amplitudes(p, eta_mhz).0.norm_sqr()
}

/// Per-atom excitation probability at drive `eta_mhz`.
pub fn excitation(p: &SystemParams, eta_mhz: f64) -> f64 {
    amplitudes(p, eta_mhz).1.norm_sqr()
}

/// Per-atom scattering rate 2γ|s|², s⁻¹.
pub fn scattering_rate(p: &SystemParams, eta_mhz: f64) -> f64 {
    2.0 * angular(p.gamma_mhz) * excitation(p, eta_mhz) * 1e6
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::default_params;

    #[test]
    fn empty_cavity_is_lorentzian() {
        let p = default_params().with_g(0.0);
        for det in [-1.0, 0.0, 0.25, 3.0] {
            let t = transmission(&p.with_delta_pc(det));
            let k2 = p.kappa_mhz.powi(2);
            assert!((t - k2 / (k2 + det * det)).abs() < 1e-14);
        }
    }

    #[test]
    fn resonant_blocking_is_one_over_one_plus_twice_cooperativity_squared() {
        let p = default_params().with_delta_ca(0.0);
        let c1 = crate::params::cooperativity(&p);
        let t = transmission(&p);
        assert!((t - (1.0 + 2.0 * c1).powi(-2)).abs() < 1e-15);
    }
}
