#![allow(dead_code)]

use std::path::PathBuf;

use cgtns::hamiltonian::{parse_fcidump, IntegralSet};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Fixture {
    pub file: &'static str,
    pub electrons: usize,
    /// FCI energy from PySCF (see fixtures/PROVENANCE.md)
    pub fci: f64,
}

pub const H2: Fixture = Fixture {
    file: "h2.fcidump",
    electrons: 2,
    fci: -1.137283834489,
};
pub const H4: Fixture = Fixture {
    file: "h4_chain.fcidump",
    electrons: 4,
    fci: -1.996150325519,
};
pub const H6: Fixture = Fixture {
    file: "h6_ring.fcidump",
    electrons: 6,
    fci: -3.014648380659,
};
pub const FIXTURES: [Fixture; 3] = [H2, H4, H6];

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

pub fn load(f: &Fixture) -> IntegralSet {
    parse_fcidump(fixture_path(f.file)).unwrap()
}

pub fn random_integrals(n_orb: usize, seed: u64) -> IntegralSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ints = IntegralSet::zeros(n_orb);
    ints.set_core_energy(rng.random_range(-1.0..1.0));
    for p in 0..n_orb {
        for q in 0..=p {
            ints.set_h(p, q, rng.random_range(-1.0..1.0));
        }
    }
    // fill every symmetry class once; set_g stores the canonical element
    for p in 0..n_orb {
        for q in 0..n_orb {
            for r in 0..n_orb {
                for s in 0..n_orb {
                    if ints.g(p, q, r, s) == 0.0 {
                        ints.set_g(p, q, r, s, rng.random_range(-0.5..0.5));
                    }
                }
            }
        }
    }
    ints
}

/// Fock-space operator algebra on `m` spin orbitals, state index = bitstring.
pub struct JordanWigner {
    pub m: usize,
}

impl JordanWigner {
    pub fn dim(&self) -> usize {
        1 << self.m
    }

    fn parity_below(state: usize, i: usize) -> f64 {
        let mut sign = 1.0;
        for j in 0..i {
            if state >> j & 1 == 1 {
                sign = -sign;
            }
        }
        sign
    }

    /// a†_i as a dense matrix: (Π_{j<i} Z_j) σ⁺_i.
    pub fn creation(&self, i: usize) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.dim(), self.dim());
        for state in 0..self.dim() {
            if state >> i & 1 == 0 {
                a[(state | 1 << i, state)] = Self::parity_below(state, i);
            }
        }
        a
    }

    /// Applies a product of ladder operators (rightmost first) to a basis
    /// state; `true` = creation.
    pub fn apply(&self, ops: &[(bool, usize)], state: usize) -> Option<(usize, f64)> {
        let mut s = state;
        let mut coeff = 1.0;
        for &(create, i) in ops.iter().rev() {
            let occupied = s >> i & 1 == 1;
            if create == occupied {
                return None;
            }
            coeff *= Self::parity_below(s, i);
            s ^= 1 << i;
        }
        Some((s, coeff))
    }

    /// Full second-quantized Hamiltonian
    /// `E_core + Σ h_pq a†_pσ a_qσ + ½ Σ (pq|rs) a†_pσ a†_rτ a_sτ a_qσ`.
    pub fn hamiltonian(&self, ints: &IntegralSet) -> DMatrix<f64> {
        let n = ints.n_orbitals();
        assert_eq!(2 * n, self.m);
        let mut h = DMatrix::identity(self.dim(), self.dim()) * ints.core_energy();
        let so = |p: usize, s: usize| 2 * p + s;
        for state in 0..self.dim() {
            for p in 0..n {
                for q in 0..n {
                    for sigma in 0..2 {
                        if let Some((t, c)) = self.apply(&[(true, so(p, sigma)), (false, so(q, sigma))], state) {
                            h[(t, state)] += ints.h(p, q) * c;
                        }
                    }
                }
            }
            for p in 0..n {
                for q in 0..n {
                    for r in 0..n {
                        for s in 0..n {
                            let g = ints.g(p, q, r, s);
                            if g == 0.0 {
                                continue;
                            }
                            for sigma in 0..2 {
                                for tau in 0..2 {
                                    let ops = [
                                        (true, so(p, sigma)),
                                        (true, so(r, tau)),
                                        (false, so(s, tau)),
                                        (false, so(q, sigma)),
                                    ];
                                    if let Some((t, c)) = self.apply(&ops, state) {
                                        h[(t, state)] += 0.5 * g * c;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        h
    }

    /// `S² = S₋S₊ + S_z(S_z + 1)` from matrix products of ladder operators.
    pub fn s_squared(&self) -> DMatrix<f64> {
        let n = self.m / 2;
        let dim = self.dim();
        let mut s_plus = DMatrix::zeros(dim, dim);
        let mut s_z = DMatrix::zeros(dim, dim);
        for p in 0..n {
            let ca = self.creation(2 * p);
            let cb = self.creation(2 * p + 1);
            s_plus += &ca * cb.transpose();
            s_z += (&ca * ca.transpose() - &cb * cb.transpose()) * 0.5;
        }
        let s_minus = s_plus.transpose();
        let id = DMatrix::<f64>::identity(dim, dim);
        &s_minus * &s_plus + &s_z * (&s_z + id)
    }
}
