// Copyright 2026 The qjump Authors
// SPDX-License-Identifier: Apache-2.0

//! Ladder operators on the truncated Fock ⊗ two-level product space.
//!
//! Basis index = n · 2^N + bits, where bit i set means atom i is excited.

use nalgebra::DMatrix;

use super::HilbertConfig;

/// Real matrix representation of the model's operators.
#[derive(Debug, Clone)]
pub struct Operators {
    /// Cavity annihilation operator a.
    pub a: DMatrix<f64>,
    /// Atomic lowering operators σᵢ⁻, one per atom.
    pub sigma: Vec<DMatrix<f64>>,
}

impl Operators {
    pub fn new(cfg: &HilbertConfig) -> Self {
        let d = cfg.dimension();
        let atom_states = 1usize << cfg.n_atoms;
        let mut a = DMatrix::zeros(d, d);
        for n in 1..cfg.n_fock {
            let amp = (n as f64).sqrt();
            for bits in 0..atom_states {
                a[((n - 1) * atom_states + bits, n * atom_states + bits)] = amp;
            }
        }
        let sigma = (0..cfg.n_atoms)
            .map(|i| {
                let mask = 1usize << i;
                let mut s = DMatrix::zeros(d, d);
                for n in 0..cfg.n_fock {
                    for bits in (0..atom_states).filter(|b| b & mask != 0) {
                        s[(n * atom_states + (bits & !mask), n * atom_states + bits)] = 1.0;
                    }
                }
                s
            })
            .collect();
        Self { a, sigma }
    }

    /// Photon number a†a (diagonal).
    pub fn photon_number(&self) -> DMatrix<f64> {
        self.a.transpose() * &self.a
    }

    /// Excitation projector σᵢ⁺σᵢ⁻ of atom `i` (diagonal).
    pub fn excitation(&self, i: usize) -> DMatrix<f64> {
        self.sigma[i].transpose() * &self.sigma[i]
    }

    /// Fock level of each basis index.
    pub fn fock_level(cfg: &HilbertConfig, index: usize) -> usize {
        index >> cfg.n_atoms
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn commutation_relations_below_cutoff() {
        let cfg = HilbertConfig::new(5, 2).unwrap();
        let ops = Operators::new(&cfg);
        let a = &ops.a;
        let comm = a * a.transpose() - a.transpose() * a;
        // [a, a†] = 1 except on the top Fock level
        for i in 0..cfg.dimension() {
            let expected = if Operators::fock_level(&cfg, i) == cfg.n_fock - 1 {
                1.0 - cfg.n_fock as f64
            } else {
                1.0
            };
            assert!((comm[(i, i)] - expected).abs() < 1e-12);
        }
        // atoms commute with the field and with each other
        for s in &ops.sigma {
            assert!((a * s - s * a).abs().max() < 1e-12);
        }
        let (s0, s1) = (&ops.sigma[0], &ops.sigma[1]);
        assert!((s0 * s1 - s1 * s0).abs().max() < 1e-12);
        // σ⁻σ⁻ = 0, σ⁺σ⁻ + σ⁻σ⁺ = 1
        assert!((s0 * s0).abs().max() < 1e-12);
        let anti = s0.transpose() * s0 + s0 * s0.transpose();
        assert!((anti - DMatrix::identity(cfg.dimension(), cfg.dimension())).abs().max() < 1e-12);
    }

    #[test]
    fn dimension_matches_product_space() {
        let cfg = HilbertConfig::new(2, 1).unwrap();
        let ops = Operators::new(&cfg);
        assert_eq!(ops.a.nrows(), 4);
        assert_eq!(ops.sigma.len(), 1);
    }
}
