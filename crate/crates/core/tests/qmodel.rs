// Copyright 2026 The qjump Authors
// SPDX-License-Identifier: Apache-2.0

use std::f64::consts::PI;

use num_complex::Complex64;
use qjump::params::{default_params, SystemParams};
use qjump::qmodel::{
    build_liouvillian, calibrated_drive, drive_for_photon_number, scattering_rate, spectrum_with, steady_state,
    transmission_spectrum, CMatrix, HilbertConfig, QModelError,
};

fn solve(p: &SystemParams, n_fock: usize, eta_mhz: f64) -> qjump::qmodel::SteadyState {
    let h = HilbertConfig::new(n_fock, p.n_atoms).unwrap();
    steady_state(&build_liouvillian(p, &h, eta_mhz).unwrap()).unwrap()
}

/// Linear-response transmission written out independently of the library.
fn oracle_transmission(p: &SystemParams, n_atoms: f64) -> f64 {
    let w = |x: f64| 2.0 * PI * x;
    let (k, gm, g) = (w(p.kappa_mhz), w(p.gamma_mhz), w(p.g_mhz));
    let dpc = w(p.delta_pc_mhz);
    let dpa = w(p.delta_pc_mhz + p.delta_ca_mhz);
    let num = Complex64::new(k, 0.0) * Complex64::new(gm, dpa);
    let den = Complex64::new(k, dpc) * Complex64::new(gm, dpa) + n_atoms * g * g;
    (num / den).norm_sqr()
}

fn oracle_excitation(p: &SystemParams, eta_mhz: f64) -> f64 {
    // |s|² = g²|α|²/(γ² + Δ_pa²), |α|² = (η/κ)² T
    let t = oracle_transmission(p, p.n_atoms as f64);
    let alpha2 = (eta_mhz / p.kappa_mhz).powi(2) * t;
    let dpa = p.delta_pc_mhz + p.delta_ca_mhz;
    p.g_mhz.powi(2) * alpha2 / (p.gamma_mhz.powi(2) + dpa.powi(2))
}

fn local_maxima(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    (1..ys.len() - 1)
        .filter(|&i| ys[i] > ys[i - 1] && ys[i] >= ys[i + 1])
        .map(|i| xs[i])
        .collect()
}

fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| lo + step * i as f64).collect()
}

#[test]
fn undriven_system_relaxes_to_vacuum() {
    let s = solve(&default_params(), 6, 0.0);
    assert!(s.n_photon.abs() < 1e-14);
    assert!(s.p_excited[0].abs() < 1e-14);
    assert_eq!(scattering_rate(&s), vec![0.0]);
    assert!((s.rho[(0, 0)].re - 1.0).abs() < 1e-12);
}

#[test]
fn empty_cavity_matches_coherent_state() {
    let base = default_params().with_g(0.0);
    let eta = 0.1;
    for det in [0.0, 0.2, -0.7, 2.5] {
        let p = base.with_delta_pc(det);
        let s = solve(&p, 8, eta);
        let (k, e, d) = (p.kappa_mhz, eta, det);
        let expected = e * e / (k * k + d * d);
        assert!(
            (s.n_photon / expected - 1.0).abs() < 1e-9,
            "det {det}: {} vs {expected}",
            s.n_photon
        );
        // driven only through the cavity, an uncoupled atom is never excited
        assert!(s.p_excited[0].abs() < 1e-15);
        assert!(scattering_rate(&s)[0].abs() < 1e-6);
    }
}

#[test]
fn zero_coupling_factorizes_field_and_atom() {
    let p = default_params().with_g(0.0).with_delta_pc(0.3);
    let s = solve(&p, 7, 0.15);
    let d = s.rho.nrows();
    // ⟨a†a σ⁺σ⁻⟩ = ⟨a†a⟩⟨σ⁺σ⁻⟩ and the atom stays in its ground state
    let mut joint = 0.0;
    for i in 0..d {
        let n = (i >> 1) as f64;
        let e = (i & 1) as f64;
        joint += n * e * s.rho[(i, i)].re;
    }
    assert!((joint - s.n_photon * s.p_excited[0]).abs() < 1e-14);
    assert!(s.p_excited[0].abs() < 1e-15);
}

#[test]
fn single_atom_weak_drive_matches_linear_response() {
    let eta = drive_for_photon_number(&default_params(), 1e-6);
    for (g, dca, dpc) in [
        (10.0, 44.0, 0.0),
        (10.0, 0.0, 0.0),
        (12.0, 10.0, -8.0),
        (8.0, -5.0, 3.0),
    ] {
        let p = default_params().with_g(g).with_delta_ca(dca).with_delta_pc(dpc);
        let s = solve(&p, 6, eta);
        let expected = oracle_transmission(&p, 1.0);
        assert!(
            (s.transmission / expected - 1.0).abs() < 1e-6,
            "g={g} dca={dca} dpc={dpc}: {} vs {expected}",
            s.transmission
        );
        let pe = oracle_excitation(&p, eta);
        assert!((s.p_excited[0] / pe - 1.0).abs() < 1e-6);
    }
}

#[test]
fn resonant_atom_blocks_transmission() {
    let p = default_params().with_delta_ca(0.0);
    let s = solve(&p, 6, calibrated_drive(&p));
    assert!(s.transmission < 0.01, "{}", s.transmission);
    // 1/(1 + 2C₁)² in the weak-drive limit
    let c1 = qjump::params::cooperativity(&p);
    assert!((s.transmission - (1.0 + 2.0 * c1).powi(-2)).abs() < 0.05 * s.transmission);
}

#[test]
fn two_atom_weak_drive_uses_collective_coupling() {
    let p = default_params()
        .with_atoms(2)
        .with_g(6.0)
        .with_delta_ca(3.0)
        .with_delta_pc(-2.0);
    let eta = drive_for_photon_number(&p, 1e-6);
    let s = solve(&p, 4, eta);
    let expected = oracle_transmission(&p, 2.0);
    assert!((s.transmission / expected - 1.0).abs() < 1e-6);
    assert!((s.p_excited[0] - s.p_excited[1]).abs() < 1e-15);
}

#[test]
fn vacuum_rabi_peaks_single_and_collective() {
    let weak = 1e-4;
    let g = 5.0;
    for (n_atoms, n_fock, expect) in [(1usize, 4usize, g), (2, 3, g * 2f64.sqrt())] {
        let p = default_params().with_g(g).with_delta_ca(0.0).with_atoms(n_atoms);
        let eta = drive_for_photon_number(&p, weak);
        let h = HilbertConfig::new(n_fock, n_atoms).unwrap();
        for sign in [-1.0, 1.0] {
            let dets = grid(sign * expect - 0.5, sign * expect + 0.5, 0.02);
            let pts = spectrum_with(&p, &h, &dets, eta).unwrap();
            let ys: Vec<f64> = pts.iter().map(|q| q.transmission).collect();
            let peak = local_maxima(&dets, &ys);
            assert_eq!(peak.len(), 1, "{n_atoms} atoms: {peak:?}");
            // closed-form peak location by dense search of the oracle
            let fine = grid(sign * expect - 0.5, sign * expect + 0.5, 0.001);
            let best = fine
                .iter()
                .copied()
                .max_by(|a, b| {
                    oracle_transmission(&p.with_delta_pc(*a), n_atoms as f64)
                        .total_cmp(&oracle_transmission(&p.with_delta_pc(*b), n_atoms as f64))
                })
                .unwrap();
            assert!((peak[0] - best).abs() <= 0.02, "{} vs {best}", peak[0]);
            assert!((peak[0] - sign * expect).abs() < 0.1);
        }
    }
}

#[test]
fn empty_cavity_spectrum_is_lorentzian() {
    let p = default_params().with_g(0.0);
    let dets = grid(-2.0, 2.0, 0.25);
    let eta = drive_for_photon_number(&p, 0.01);
    let pts = transmission_spectrum(&p, &dets, eta).unwrap();
    for q in &pts {
        let k2 = p.kappa_mhz.powi(2);
        let expected = k2 / (k2 + q.detuning_mhz.powi(2));
        assert!((q.transmission - expected).abs() < 1e-9);
    }
    let peak = pts
        .iter()
        .max_by(|a, b| a.transmission.total_cmp(&b.transmission))
        .unwrap();
    assert_eq!(peak.detuning_mhz, 0.0);
}

#[test]
fn detuned_atom_excitation_spectrum_is_split() {
    let p = default_params().with_g(12.0).with_delta_ca(10.0);
    let eta = drive_for_photon_number(&p, 0.01);
    let h = HilbertConfig::new(4, 1).unwrap();
    let dets = grid(-25.0, 25.0, 0.1);
    let pts = spectrum_with(&p, &h, &dets, eta).unwrap();
    let ys: Vec<f64> = pts.iter().map(|q| q.p_excited).collect();
    let peaks = local_maxima(&dets, &ys);
    assert_eq!(peaks.len(), 2, "{peaks:?}");
    // dressed states: Δ_pc (Δ_pc + Δ_ca) = g²
    let disc = (10.0f64.powi(2) + 4.0 * 144.0).sqrt();
    let roots = [(-10.0 - disc) / 2.0, (-10.0 + disc) / 2.0];
    for (found, root) in peaks.iter().zip(roots) {
        assert!((found - root).abs() < 0.5, "{found} vs {root}");
    }
}

#[test]
fn far_detuned_uncoupled_atom_barely_scatters() {
    let p = default_params().with_g(0.0);
    let eta = calibrated_drive(&p);
    let s = solve(&p, 8, eta);
    let gamma = 2.0 * PI * p.gamma_mhz;
    let (eta_w, dca) = (2.0 * PI * eta, 2.0 * PI * p.delta_ca_mhz);
    let bound = 2.0 * gamma * eta_w * eta_w / (dca * dca) * 1e6;
    let rate = scattering_rate(&s)[0];
    assert!(rate >= 0.0 && rate < bound);
}

#[test]
fn density_matrix_is_physical() {
    for (n_atoms, n_fock) in [(1usize, 6usize), (2, 4)] {
        let p = default_params().with_atoms(n_atoms).with_delta_pc(0.7);
        let s = solve(&p, n_fock, calibrated_drive(&p));
        assert!((s.trace() - 1.0).abs() < 1e-10);
        let herm = (&s.rho - s.rho.adjoint()).camax();
        assert!(herm < 1e-10);
        let eig = s.rho.clone().symmetric_eigenvalues();
        assert!(eig.iter().all(|&e| e > -1e-9), "{eig:?}");
        assert!(s.residual < 1e-10);
        assert!(s.transmission >= 0.0 && s.transmission <= 1.0 + 1e-9);
    }
}

fn random_matrix(d: usize, seed: u64) -> CMatrix {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    CMatrix::from_fn(d, d, |_, _| {
        Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    })
}

#[test]
fn generator_preserves_trace_and_hermiticity() {
    let p = default_params().with_atoms(2).with_delta_pc(-1.1);
    let h = HilbertConfig::new(4, 2).unwrap();
    let l = build_liouvillian(&p, &h, 0.3).unwrap();
    for seed in 0..8 {
        let m = random_matrix(h.dimension(), seed);
        // arbitrary input: trace of L(X) vanishes
        assert!(l.apply(&m).trace().norm() < 1e-12 * l.matrix().amax().max(1.0));
        let herm = (&m + m.adjoint()) * Complex64::new(0.5, 0.0);
        let image = l.apply(&herm);
        assert!((&image - image.adjoint()).camax() < 1e-12);
    }
    // superoperator form agrees: the trace functional annihilates every column
    let s = l.superoperator();
    let d = h.dimension();
    for col in 0..d * d {
        let tr: Complex64 = (0..d).map(|i| s[(i + i * d, col)]).sum();
        assert!(tr.norm() < 1e-10);
    }
}

#[test]
fn truncation_converges() {
    let p = default_params();
    let eta = drive_for_photon_number(&p, 0.062);
    for k in [4usize, 6] {
        let a = solve(&p, k, eta).n_photon;
        let b = solve(&p, k + 2, eta).n_photon;
        assert!((a - b).abs() < 1e-8, "k={k}: {a} vs {b}");
    }
}

#[test]
fn photon_number_scales_with_drive_squared() {
    let p = default_params();
    let eta = drive_for_photon_number(&p, 0.062);
    let full = solve(&p, 6, eta).n_photon;
    let half = solve(&p, 6, eta / 2.0).n_photon;
    assert!((full / (4.0 * half) - 1.0).abs() < 1e-3);
}

#[test]
fn small_cutoff_reports_truncation() {
    let p = default_params().with_g(0.0);
    let h = HilbertConfig::new(3, 1).unwrap();
    let l = build_liouvillian(&p, &h, calibrated_drive(&p)).unwrap();
    assert!(matches!(
        steady_state(&l),
        Err(QModelError::TruncationTail { n_fock: 3, .. })
    ));
    // the spectrum driver raises the cutoff instead of failing
    let pts = spectrum_with(&p, &h, &[0.0], calibrated_drive(&p)).unwrap();
    assert!((pts[0].transmission - 1.0).abs() < 1e-4, "{}", pts[0].transmission);
}

#[test]
fn non_finite_detuning_rejected() {
    let p = default_params();
    assert!(transmission_spectrum(&p, &[f64::NAN], 0.1).is_err());
}
