use num_complex::Complex64;

use super::qubit::QubitHamiltonian;
use super::FermionHamiltonian;
use crate::error::Result;
use crate::pauli::{PauliString, PauliSum};

const COLLECT_TOL: f64 = 1e-14;

fn parity_string(mode: usize) -> u64 {
    (1u64 << mode) - 1
}

/// `c_m = Z_0 ... Z_{m-1} (X_m + i Y_m) / 2`.
pub fn annihilation(n_modes: usize, mode: usize) -> PauliSum {
    ladder(n_modes, mode, Complex64::new(0.0, 0.5))
}

/// `c+_m = Z_0 ... Z_{m-1} (X_m - i Y_m) / 2`.
pub fn creation(n_modes: usize, mode: usize) -> PauliSum {
    ladder(n_modes, mode, Complex64::new(0.0, -0.5))
}

fn ladder(n_modes: usize, mode: usize, y_coeff: Complex64) -> PauliSum {
    assert!(mode < n_modes, "mode {mode} out of range");
    let z = parity_string(mode);
    let bit = 1u64 << mode;
    let mut s = PauliSum::from_string(PauliString::from_masks(
        Complex64::new(0.5, 0.0),
        n_modes,
        bit,
        z,
    ));
    // A Y letter on `mode` sets both masks there.
    s.add_string(&PauliString::from_masks(y_coeff, n_modes, bit, z | bit));
    s
}

/// `sum_m c+_m c_m`.
pub fn number_operator(n_modes: usize) -> PauliSum {
    let mut s = PauliSum::zero(n_modes);
    for m in 0..n_modes {
        s.add(&creation(n_modes, m).mul(&annihilation(n_modes, m)));
    }
    s
}

/// `(N_up - N_down) / 2` under the site-major, spin-minor layout.
pub fn sz_operator(n_modes: usize) -> PauliSum {
    let mut s = PauliSum::zero(n_modes);
    for m in 0..n_modes {
        let mut nm = creation(n_modes, m).mul(&annihilation(n_modes, m));
        let sign = if m % 2 == 0 { 0.5 } else { -0.5 };
        nm.scale(Complex64::new(sign, 0.0));
        s.add(&nm);
    }
    s
}

/// `coeff * c+_a c_b` as a Pauli sum.
pub fn one_body_operator(n_modes: usize, a: usize, b: usize, coeff: Complex64) -> PauliSum {
    let mut s = creation(n_modes, a).mul(&annihilation(n_modes, b));
    s.scale(coeff);
    s
}

/// Jordan-Wigner image of a lattice fermion Hamiltonian.
pub fn jordan_wigner(h: &FermionHamiltonian) -> Result<QubitHamiltonian> {
    let modes = h.n_modes();
    let n = h.n_sites();
    let spins = h.spin().multiplicity();
    let cre: Vec<PauliSum> = (0..modes).map(|m| creation(modes, m)).collect();
    let ann: Vec<PauliSum> = (0..modes).map(|m| annihilation(modes, m)).collect();

    let mut total = PauliSum::zero(modes);
    for s in 0..spins {
        for i in 0..n {
            for j in 0..n {
                let tij = h.t()[(i, j)];
                if tij.norm() == 0.0 {
                    continue;
                }
                let mut term = cre[h.mode(i, s)].mul(&ann[h.mode(j, s)]);
                term.scale(tij);
                total.add(&term);
            }
        }
    }
    for s in 0..spins {
        for s2 in 0..spins {
            for i in 0..n {
                for j in 0..n {
                    let left = cre[h.mode(i, s)].mul(&cre[h.mode(j, s2)]);
                    for k in 0..n {
                        for l in 0..n {
                            let vijkl = h.v(i, j, k, l);
                            if vijkl.norm() == 0.0 {
                                continue;
                            }
                            let right = ann[h.mode(l, s2)].mul(&ann[h.mode(k, s)]);
                            let mut term = left.mul(&right);
                            term.scale(vijkl);
                            total.add(&term);
                        }
                    }
                }
            }
        }
    }
    QubitHamiltonian::from_pauli_sum(&total, COLLECT_TOL)
}
