// Copyright 2026 The qjump Authors
// SPDX-License-Identifier: Apache-2.0

//! Lindblad generator of the driven Tavis-Cummings model.
//!
//! In the frame rotating at the probe frequency,
//!
//! ```text
//! H = −Δ_pc a†a + Σᵢ [ −Δ_pa σᵢ⁺σᵢ⁻ + g (a†σᵢ⁻ + a σᵢ⁺) ] + η (a + a†)
//! L(ρ) = −i[H, ρ] + 2κ D[a](ρ) + 2γ Σᵢ D[σᵢ⁻](ρ)
//! ```
//!
//! with D[c](ρ) = cρc† − ½{c†c, ρ} and all frequencies angular (rad/μs).
//! κ and γ are amplitude decay rates, so the Lindblad rates are 2κ and 2γ.
//!
//! The generator maps Hermitian matrices to Hermitian matrices, so it is
//! stored as a real d² × d² matrix acting on Hermitian coordinates: entry
//! (i, i) holds ρᵢᵢ, (i, j) with i < j holds Re ρᵢⱼ and (j, i) holds Im ρᵢⱼ.
//! Real LU on this form is several times cheaper than complex LU on the
//! column-stacked density matrix.
//!
//! L is affine in the six model frequencies, so each [`GeneratorBasis`]
//! precomputes the six component matrices once per Hilbert space and
//! [`Liouvillian::assemble`] only forms a linear combination.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::operators::Operators;
use super::{HilbertConfig, QModelError};
use crate::params::{angular, SystemParams};

pub type CMatrix = DMatrix<Complex64>;

const N_COMPONENTS: usize = 6;

/// Generator components in the order their coefficients are stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    /// −i[a†a, ·]
    CavityNumber = 0,
    /// −i[Σ σ⁺σ⁻, ·]
    AtomNumber = 1,
    /// −i[Σ (a†σ⁻ + aσ⁺), ·]
    Coupling = 2,
    /// −i[a + a†, ·]
    Drive = 3,
    /// D[a]
    CavityDecay = 4,
    /// Σ D[σ⁻]
    AtomDecay = 5,
}

/// Component matrices of the generator for one Hilbert space.
#[derive(Debug)]
pub struct GeneratorBasis {
    cfg: HilbertConfig,
    ops: Operators,
    components: Vec<DMatrix<f64>>,
}

fn to_complex(m: &DMatrix<f64>) -> CMatrix {
    m.map(|x| Complex64::new(x, 0.0))
}

/// The exact action of every component on a (possibly non-Hermitian) matrix.
struct ComponentMaps {
    hamiltonian_parts: [CMatrix; 4],
    cavity_jump: CMatrix,
    atom_jumps: Vec<CMatrix>,
}

impl ComponentMaps {
    fn new(ops: &Operators) -> Self {
        let n_a = ops.photon_number();
        let d = n_a.nrows();
        let mut n_s = DMatrix::zeros(d, d);
        let mut coupling = DMatrix::zeros(d, d);
        for s in &ops.sigma {
            n_s += s.transpose() * s;
            coupling += ops.a.transpose() * s + &ops.a * s.transpose();
        }
        let drive = &ops.a + ops.a.transpose();
        Self {
            hamiltonian_parts: [
                to_complex(&n_a),
                to_complex(&n_s),
                to_complex(&coupling),
                to_complex(&drive),
            ],
            cavity_jump: to_complex(&ops.a),
            atom_jumps: ops.sigma.iter().map(to_complex).collect(),
        }
    }

    fn apply(&self, component: usize, rho: &CMatrix) -> CMatrix {
        let minus_i = Complex64::new(0.0, -1.0);
        match component {
            0..=3 => {
                let h = &self.hamiltonian_parts[component];
                (h * rho - rho * h) * minus_i
            }
            4 => dissipator(&self.cavity_jump, rho),
            _ => {
                let mut out = CMatrix::zeros(rho.nrows(), rho.ncols());
                for c in &self.atom_jumps {
                    out += dissipator(c, rho);
                }
                out
            }
        }
    }
}

fn dissipator(c: &CMatrix, rho: &CMatrix) -> CMatrix {
    let c_dag = c.adjoint();
    let c_dag_c = &c_dag * c;
    let half = Complex64::new(0.5, 0.0);
    c * rho * &c_dag - (&c_dag_c * rho + rho * &c_dag_c) * half
}

/// Hermitian basis element for coordinate `k`.
fn basis_element(d: usize, k: usize) -> CMatrix {
    let (i, j) = (k / d, k % d);
    let mut e = CMatrix::zeros(d, d);
    if i == j {
        e[(i, i)] = Complex64::new(1.0, 0.0);
    } else if i < j {
        e[(i, j)] = Complex64::new(1.0, 0.0);
        e[(j, i)] = Complex64::new(1.0, 0.0);
    } else {
        // imaginary part of ρ_ji, j < i
        e[(j, i)] = Complex64::new(0.0, 1.0);
        e[(i, j)] = Complex64::new(0.0, -1.0);
    }
    e
}

/// Hermitian coordinates of `m` (read from the upper triangle).
pub fn hermitian_coords(m: &CMatrix) -> DVector<f64> {
    let d = m.nrows();
    let mut x = DVector::zeros(d * d);
    for i in 0..d {
        x[i * d + i] = m[(i, i)].re;
        for j in i + 1..d {
            x[i * d + j] = m[(i, j)].re;
            x[j * d + i] = m[(i, j)].im;
        }
    }
    x
}

/// Hermitian matrix with coordinates `x`.
pub fn from_hermitian_coords(x: &DVector<f64>, d: usize) -> CMatrix {
    let mut m = CMatrix::zeros(d, d);
    for i in 0..d {
        m[(i, i)] = Complex64::new(x[i * d + i], 0.0);
        for j in i + 1..d {
            let z = Complex64::new(x[i * d + j], x[j * d + i]);
            m[(i, j)] = z;
            m[(j, i)] = z.conj();
        }
    }
    m
}

impl GeneratorBasis {
    pub fn new(cfg: HilbertConfig) -> Self {
        let ops = Operators::new(&cfg);
        let maps = ComponentMaps::new(&ops);
        let d = cfg.dimension();
        let dd = d * d;
        let mut components = vec![DMatrix::zeros(dd, dd); N_COMPONENTS];
        for k in 0..dd {
            let e = basis_element(d, k);
            for (c, comp) in components.iter_mut().enumerate() {
                let image = maps.apply(c, &e);
                comp.set_column(k, &hermitian_coords(&image));
            }
        }
        Self { cfg, ops, components }
    }

    /// Shared basis for `cfg`, built on first use.
    pub fn shared(cfg: HilbertConfig) -> Arc<GeneratorBasis> {
        static CACHE: OnceLock<Mutex<HashMap<HilbertConfig, Arc<GeneratorBasis>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        if let Some(b) = cache.lock().expect("basis cache poisoned").get(&cfg) {
            return Arc::clone(b);
        }
        // built outside the lock; a concurrent duplicate build is harmless
        let built = Arc::new(GeneratorBasis::new(cfg));
        Arc::clone(cache.lock().expect("basis cache poisoned").entry(cfg).or_insert(built))
    }

    pub fn config(&self) -> &HilbertConfig {
        &self.cfg
    }

    pub fn operators(&self) -> &Operators {
        &self.ops
    }

    pub fn component(&self, c: Component) -> &DMatrix<f64> {
        &self.components[c as usize]
    }
}

/// Angular-unit coefficients of the six generator components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    pub delta_pc: f64,
    pub delta_pa: f64,
    pub g: f64,
    pub eta: f64,
    pub kappa: f64,
    pub gamma: f64,
}

impl Rates {
    /// Converts from ordinary-frequency parameters; the only MHz → rad/μs step.
    pub fn from_params(p: &SystemParams, drive_eta_mhz: f64) -> Self {
        Self {
            delta_pc: angular(p.delta_pc_mhz),
            delta_pa: angular(p.delta_pa_mhz()),
            g: angular(p.g_mhz),
            eta: angular(drive_eta_mhz),
            kappa: angular(p.kappa_mhz),
            gamma: angular(p.gamma_mhz),
        }
    }

    fn coefficients(&self) -> [f64; N_COMPONENTS] {
        [
            -self.delta_pc,
            -self.delta_pa,
            self.g,
            self.eta,
            2.0 * self.kappa,
            2.0 * self.gamma,
        ]
    }
}

/// A fully assembled generator.
#[derive(Debug, Clone)]
pub struct Liouvillian {
    basis: Arc<GeneratorBasis>,
    rates: Rates,
    matrix: DMatrix<f64>,
}

impl Liouvillian {
    pub fn assemble(basis: Arc<GeneratorBasis>, rates: Rates) -> Self {
        let coeffs = rates.coefficients();
        let mut matrix = basis.components[0].scale(coeffs[0]);
        for (comp, &c) in basis.components.iter().zip(coeffs.iter()).skip(1) {
            if c != 0.0 {
                matrix.zip_apply(comp, |m, v| *m += c * v);
            }
        }
        Self { basis, rates, matrix }
    }

    pub fn basis(&self) -> &Arc<GeneratorBasis> {
        &self.basis
    }

    pub fn config(&self) -> &HilbertConfig {
        &self.basis.cfg
    }

    pub fn rates(&self) -> &Rates {
        &self.rates
    }

    /// Real generator on Hermitian coordinates.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Exact action on an arbitrary d × d matrix (not restricted to Hermitian input).
    pub fn apply(&self, rho: &CMatrix) -> CMatrix {
        let maps = ComponentMaps::new(&self.basis.ops);
        let mut out = CMatrix::zeros(rho.nrows(), rho.ncols());
        for (c, coeff) in self.rates.coefficients().iter().enumerate() {
            if *coeff != 0.0 {
                out += maps.apply(c, rho) * Complex64::new(*coeff, 0.0);
            }
        }
        out
    }

    /// Column-stacked complex superoperator, vec(ρ)[i + j·d] = ρᵢⱼ.
    pub fn superoperator(&self) -> CMatrix {
        let d = self.config().dimension();
        let mut s = CMatrix::zeros(d * d, d * d);
        for col in 0..d * d {
            let mut e = CMatrix::zeros(d, d);
            e[(col % d, col / d)] = Complex64::new(1.0, 0.0);
            let image = self.apply(&e);
            for row in 0..d * d {
                s[(row, col)] = image[(row % d, row / d)];
            }
        }
        s
    }
}

/// Builds the generator for `p` at drive amplitude `drive_eta_mhz`.
pub fn build_liouvillian(p: &SystemParams, h: &HilbertConfig, drive_eta_mhz: f64) -> Result<Liouvillian, QModelError> {
    p.validate()?;
    if p.n_atoms != h.n_atoms {
        return Err(QModelError::AtomMismatch {
            params: p.n_atoms,
            hilbert: h.n_atoms,
        });
    }
    if !drive_eta_mhz.is_finite() || drive_eta_mhz < 0.0 {
        return Err(QModelError::BadDrive(drive_eta_mhz));
    }
    h.check_cap()?;
    let basis = GeneratorBasis::shared(*h);
    Ok(Liouvillian::assemble(basis, Rates::from_params(p, drive_eta_mhz)))
}
