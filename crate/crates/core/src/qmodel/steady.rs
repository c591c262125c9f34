// Copyright 2026 The qjump Authors
// SPDX-License-Identifier: Apache-2.0

//! Steady state by direct LU solve of the generator, with the ρ₀₀ row
//! replaced by the trace constraint.
//!
//! The same factorization yields parameter tangents dρ/dθ = −L̃⁻¹ (∂L/∂θ) ρ
//! at the cost of one back-substitution each, which is what makes the
//! spectrum fits affordable.

use nalgebra::{DMatrix, DVector};

use super::liouvillian::{from_hermitian_coords, CMatrix, Component, Liouvillian};
use super::operators::Operators;
use super::QModelError;

/// Relative residual ‖Lρ‖∞ / ‖L‖∞ accepted from the solve.
pub const RESIDUAL_TOLERANCE: f64 = 1e-10;

/// Largest population tolerated in the highest Fock level.
pub const TAIL_TOLERANCE: f64 = 1e-6;

/// Density-matrix solution of the driven Lindblad equation with derived observables.
#[derive(Debug, Clone)]
pub struct SteadyState {
    pub rho: CMatrix,
    /// ⟨a†a⟩
    pub n_photon: f64,
    /// ⟨σᵢ⁺σᵢ⁻⟩ per atom
    pub p_excited: Vec<f64>,
    /// n_photon divided by the resonant empty-cavity photon number η²/κ² at the same drive.
    pub transmission: f64,
    /// Population of the highest retained Fock level.
    pub top_fock_population: f64,
    /// ‖Lρ‖∞ / ‖L‖∞
    pub residual: f64,
    /// Atomic population decay rate 2γ, rad/μs.
    pub(crate) gamma_decay: f64,
}

impl SteadyState {
    /// Photon scattering rate of each atom, s⁻¹: 2γ⟨σ⁺σ⁻⟩.
    pub fn scattering_rates(&self) -> Vec<f64> {
        self.p_excited.iter().map(|p| self.gamma_decay * p * 1e6).collect()
    }

    pub fn trace(&self) -> f64 {
        self.rho.trace().re
    }
}

/// Parameter whose tangent is requested from [`steady_state_with_tangents`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tangent {
    /// Drive amplitude η (angular).
    Drive,
    /// Cavity-atom detuning Δ_ca (angular) at fixed probe-cavity detuning.
    CavityAtomDetuning,
}

/// Derivatives of the observables with respect to one parameter, per rad/μs.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservableTangent {
    pub n_photon: f64,
    pub p_excited: Vec<f64>,
}

pub fn steady_state(l: &Liouvillian) -> Result<SteadyState, QModelError> {
    steady_state_with_tangents(l, &[]).map(|(s, _)| s)
}

struct Diagonals {
    photon: Vec<f64>,
    excitation: Vec<Vec<f64>>,
    top: Vec<usize>,
}

fn diagonals(l: &Liouvillian) -> Diagonals {
    let cfg = l.config();
    let ops = l.basis().operators();
    let d = cfg.dimension();
    let photon = ops.photon_number().diagonal().iter().copied().collect();
    let excitation = (0..cfg.n_atoms)
        .map(|i| ops.excitation(i).diagonal().iter().copied().collect())
        .collect();
    let top = (0..d)
        .filter(|&i| Operators::fock_level(cfg, i) == cfg.n_fock - 1)
        .collect();
    Diagonals {
        photon,
        excitation,
        top,
    }
}

fn expectation(diag: &[f64], x: &DVector<f64>, d: usize) -> f64 {
    diag.iter().enumerate().map(|(i, w)| w * x[i * d + i]).sum()
}

pub fn steady_state_with_tangents(
    l: &Liouvillian,
    tangents: &[Tangent],
) -> Result<(SteadyState, Vec<ObservableTangent>), QModelError> {
    let cfg = l.config();
    let d = cfg.dimension();
    let generator = l.matrix();

    let mut system: DMatrix<f64> = generator.clone();
    let mut trace_row = DVector::zeros(d * d);
    for i in 0..d {
        trace_row[i * d + i] = 1.0;
    }
    system.set_row(0, &trace_row.transpose());
    let mut rhs = DVector::zeros(d * d);
    rhs[0] = 1.0;

    let lu = system.lu();
    let x = lu.solve(&rhs).ok_or(QModelError::Singular)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(QModelError::Singular);
    }

    let scale = generator
        .row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let residual = (generator * &x).amax() / scale;
    if residual > RESIDUAL_TOLERANCE {
        return Err(QModelError::Residual(residual));
    }

    let diag = diagonals(l);
    let top_fock_population: f64 = diag.top.iter().map(|&i| x[i * d + i]).sum();
    if top_fock_population > TAIL_TOLERANCE {
        return Err(QModelError::TruncationTail {
            n_fock: cfg.n_fock,
            population: top_fock_population,
        });
    }

    let rates = l.rates();
    let n_photon = expectation(&diag.photon, &x, d);
    let p_excited: Vec<f64> = diag.excitation.iter().map(|e| expectation(e, &x, d)).collect();
    let empty_photons = (rates.eta / rates.kappa).powi(2);
    let transmission = if empty_photons > 0.0 {
        n_photon / empty_photons
    } else {
        0.0
    };

    let mut out = Vec::with_capacity(tangents.len());
    for t in tangents {
        let (component, sign) = match t {
            Tangent::Drive => (Component::Drive, 1.0),
            // Δ_pa = Δ_pc + Δ_ca enters with coefficient −Δ_pa
            Tangent::CavityAtomDetuning => (Component::AtomNumber, -1.0),
        };
        let mut forcing = l.basis().component(component) * &x;
        forcing *= -sign;
        // the trace constraint does not depend on parameters
        forcing[0] = 0.0;
        let dx = lu.solve(&forcing).ok_or(QModelError::Singular)?;
        out.push(ObservableTangent {
            n_photon: expectation(&diag.photon, &dx, d),
            p_excited: diag.excitation.iter().map(|e| expectation(e, &dx, d)).collect(),
        });
    }

    Ok((
        SteadyState {
            rho: from_hermitian_coords(&x, d),
            n_photon,
            p_excited,
            transmission,
            top_fock_population,
            residual,
            gamma_decay: 2.0 * rates.gamma,
        },
        out,
    ))
}
