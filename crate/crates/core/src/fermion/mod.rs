//! Lattice fermion Hamiltonians, their Jordan-Wigner images and the
//! exact-diagonalization oracle.
//!
//! Modes are ordered site-major, spin-minor: for spin-half models site `i`
//! with spin up is mode `2i` and spin down is mode `2i + 1`. Mode `m` is
//! qubit `m`, and Jordan-Wigner parity strings run over qubits `0..m`.

mod exact;
mod jw;
mod qubit;
mod spec_file;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub use exact::{
    exact_diagonalize, exact_diagonalize_with_cap, Sector, Spectrum, DEFAULT_ED_CAP, DEGENERACY_TOL,
};
pub use jw::{
    annihilation, creation, jordan_wigner, number_operator, one_body_operator, sz_operator,
};
pub use qubit::{shift_and_scale, BoundMethod, QubitHamiltonian};
pub use spec_file::HamiltonianSpec;

const HERMITIAN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spin {
    Spinless,
    Half,
}

impl Spin {
    pub fn multiplicity(self) -> usize {
        match self {
            Spin::Spinless => 1,
            Spin::Half => 2,
        }
    }
}

/// `H = sum_{ij s} t_ij c+_{is} c_{js}
///    + sum_{ijkl s s'} V_ijkl c+_{is} c+_{js'} c_{ls'} c_{ks}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FermionHamiltonian {
    n_sites: usize,
    t: DMatrix<Complex64>,
    v: Vec<Complex64>,
    spin: Spin,
}

impl FermionHamiltonian {
    /// Validates hermiticity of `t`, the `V_ijkl = V_jilk` exchange symmetry
    /// and hermiticity of the two-body term (`V_klij = conj(V_ijkl)`).
    pub fn new(t: DMatrix<Complex64>, v: Vec<Complex64>, spin: Spin) -> Result<Self> {
        let n = t.nrows();
        if n == 0 {
            return Err(Error::InvalidInput(
                "a lattice needs at least one site".into(),
            ));
        }
        if t.ncols() != n {
            return Err(Error::Shape {
                expected: n,
                actual: t.ncols(),
            });
        }
        if v.len() != n.pow(4) {
            return Err(Error::Shape {
                expected: n.pow(4),
                actual: v.len(),
            });
        }
        if t.iter()
            .chain(v.iter())
            .any(|c| !c.re.is_finite() || !c.im.is_finite())
        {
            return Err(Error::NonFinite("hamiltonian coefficient".into()));
        }
        for i in 0..n {
            for j in 0..n {
                if (t[(i, j)] - t[(j, i)].conj()).norm() > HERMITIAN_TOL {
                    return Err(Error::InvalidInput(format!(
                        "t is not Hermitian at ({i}, {j})"
                    )));
                }
            }
        }
        let idx = |i: usize, j: usize, k: usize, l: usize| ((i * n + j) * n + k) * n + l;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let a = v[idx(i, j, k, l)];
                        if (a - v[idx(j, i, l, k)]).norm() > HERMITIAN_TOL {
                            return Err(Error::InvalidInput(format!(
                                "V_ijkl != V_jilk at ({i}, {j}, {k}, {l})"
                            )));
                        }
                        if (a - v[idx(k, l, i, j)].conj()).norm() > HERMITIAN_TOL {
                            return Err(Error::InvalidInput(format!(
                                "two-body term is not Hermitian at ({i}, {j}, {k}, {l})"
                            )));
                        }
                    }
                }
            }
        }
        Ok(Self {
            n_sites: n,
            t,
            v,
            spin,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn spin(&self) -> Spin {
        self.spin
    }

    pub fn n_modes(&self) -> usize {
        self.n_sites * self.spin.multiplicity()
    }

    pub fn t(&self) -> &DMatrix<Complex64> {
        &self.t
    }

    pub fn v(&self, i: usize, j: usize, k: usize, l: usize) -> Complex64 {
        let n = self.n_sites;
        self.v[((i * n + j) * n + k) * n + l]
    }

    pub fn v_tensor(&self) -> &[Complex64] {
        &self.v
    }

    /// Mode index of site `i`, spin `s` (0 = up, 1 = down).
    pub fn mode(&self, site: usize, s: usize) -> usize {
        match self.spin {
            Spin::Spinless => site,
            Spin::Half => 2 * site + s,
        }
    }

    /// Same interaction, one-body matrix `t + diag(dv)`.
    pub fn with_potential_shift(&self, dv: &[f64]) -> Result<Self> {
        if dv.len() != self.n_sites {
            return Err(Error::Shape {
                expected: self.n_sites,
                actual: dv.len(),
            });
        }
        let mut t = self.t.clone();
        for (i, d) in dv.iter().enumerate() {
            t[(i, i)] += Complex64::new(*d, 0.0);
        }
        Self::new(t, self.v.clone(), self.spin)
    }

    /// Same one-body part, interaction removed.
    pub fn noninteracting(&self) -> Self {
        Self {
            v: vec![Complex64::new(0.0, 0.0); self.v.len()],
            ..self.clone()
        }
    }

    /// Dense matrix in the occupation-number basis built directly from the
    /// anticommutation algebra (no Pauli strings). Basis state `b` has mode
    /// `m` occupied when bit `m` is set; signs follow the mode ordering.
    pub fn occupation_matrix(&self) -> DMatrix<Complex64> {
        let modes = self.n_modes();
        let dim = 1usize << modes;
        let mut h = DMatrix::<Complex64>::zeros(dim, dim);
        let spins = self.spin.multiplicity();
        let n = self.n_sites;
        for b in 0..dim {
            for s in 0..spins {
                for i in 0..n {
                    for j in 0..n {
                        let tij = self.t[(i, j)];
                        if tij.norm() == 0.0 {
                            continue;
                        }
                        if let Some((sgn, out)) =
                            apply_ladder(&[(self.mode(i, s), true), (self.mode(j, s), false)], b)
                        {
                            h[(out, b)] += tij * sgn;
                        }
                    }
                }
            }
            for s in 0..spins {
                for s2 in 0..spins {
                    for i in 0..n {
                        for j in 0..n {
                            for k in 0..n {
                                for l in 0..n {
                                    let vijkl = self.v(i, j, k, l);
                                    if vijkl.norm() == 0.0 {
                                        continue;
                                    }
                                    let ops = [
                                        (self.mode(i, s), true),
                                        (self.mode(j, s2), true),
                                        (self.mode(l, s2), false),
                                        (self.mode(k, s), false),
                                    ];
                                    if let Some((sgn, out)) = apply_ladder(&ops, b) {
                                        h[(out, b)] += vijkl * sgn;
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
}

/// Applies a product of ladder operators (leftmost acts last) to basis state
/// `b`. `true` marks a creation operator. Returns the sign and the resulting
/// basis state, or `None` when the product annihilates `b`.
fn apply_ladder(ops: &[(usize, bool)], b: usize) -> Option<(f64, usize)> {
    let mut state = b;
    let mut sign = 1.0;
    for &(m, create) in ops.iter().rev() {
        let bit = 1usize << m;
        let occupied = state & bit != 0;
        if occupied == create {
            return None;
        }
        if (state & (bit - 1)).count_ones() % 2 == 1 {
            sign = -sign;
        }
        state ^= bit;
    }
    Some((sign, state))
}

/// Hubbard chain with nearest-neighbour hopping `-t`, on-site repulsion `u`
/// (as `u * n_up * n_down`) and on-site potential `v`.
///
/// In the two-body convention of [`FermionHamiltonian`] the on-site
/// element appears once for each ordered spin pair, so `V_iiii = u / 2`.
pub fn build_hubbard(n_sites: usize, t: f64, u: f64, v: &[f64]) -> Result<FermionHamiltonian> {
    if n_sites == 0 {
        return Err(Error::InvalidInput(
            "a Hubbard chain needs at least one site".into(),
        ));
    }
    if v.len() != n_sites {
        return Err(Error::Shape {
            expected: n_sites,
            actual: v.len(),
        });
    }
    let mut tm = DMatrix::<Complex64>::zeros(n_sites, n_sites);
    for i in 0..n_sites {
        tm[(i, i)] = Complex64::new(v[i], 0.0);
        if i + 1 < n_sites {
            tm[(i, i + 1)] = Complex64::new(-t, 0.0);
            tm[(i + 1, i)] = Complex64::new(-t, 0.0);
        }
    }
    let mut vt = vec![Complex64::new(0.0, 0.0); n_sites.pow(4)];
    for i in 0..n_sites {
        vt[((i * n_sites + i) * n_sites + i) * n_sites + i] = Complex64::new(u / 2.0, 0.0);
    }
    FermionHamiltonian::new(tm, vt, Spin::Half)
}

/// Hopping-only (kinetic) matrix of a Hubbard chain: `-t` on nearest
/// neighbours.
pub fn hopping_matrix(n_sites: usize, t: f64) -> DMatrix<f64> {
    let mut m = DMatrix::<f64>::zeros(n_sites, n_sites);
    for i in 0..n_sites.saturating_sub(1) {
        m[(i, i + 1)] = -t;
        m[(i + 1, i)] = -t;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sym_eigs(m: &DMatrix<f64>) -> Vec<f64> {
        let mut e: Vec<f64> = m
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .collect();
        e.sort_by(|a, b| a.partial_cmp(b).unwrap());
        e
    }

    #[test]
    fn hubbard_single_particle_levels() {
        let h = build_hubbard(2, 1.0, 0.0, &[0.0, 0.0]).unwrap();
        let t = h.t().map(|c| c.re);
        let e = sym_eigs(&t);
        assert!((e[0] + 1.0).abs() < 1e-14 && (e[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn hubbard_rejects_bad_input() {
        assert!(build_hubbard(0, 1.0, 1.0, &[]).is_err());
        assert!(build_hubbard(3, 1.0, 1.0, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn potential_lands_on_diagonal() {
        let h = build_hubbard(3, 1.0, 2.0, &[0.5, -0.25, 1.0]).unwrap();
        assert_eq!(h.t()[(1, 1)].re, -0.25);
        assert_eq!(h.t()[(0, 1)].re, -1.0);
        assert_eq!(h.t()[(0, 2)].re, 0.0);
        assert_eq!(h.v(1, 1, 1, 1).re, 1.0);
    }

    #[test]
    fn rejects_non_hermitian_t() {
        let mut t = DMatrix::<Complex64>::zeros(2, 2);
        t[(0, 1)] = Complex64::new(1.0, 0.5);
        t[(1, 0)] = Complex64::new(1.0, 0.5);
        let v = vec![Complex64::new(0.0, 0.0); 16];
        assert!(FermionHamiltonian::new(t, v, Spin::Spinless).is_err());
    }

    #[test]
    fn rejects_asymmetric_v() {
        let t = DMatrix::<Complex64>::zeros(2, 2);
        let mut v = vec![Complex64::new(0.0, 0.0); 16];
        v[0b0001] = Complex64::new(1.0, 0.0); // V_0001 without V_0010
        assert!(FermionHamiltonian::new(t, v, Spin::Spinless).is_err());
    }

    #[test]
    fn ladder_signs() {
        // c+_1 c_0 on |01> (mode 0 occupied) -> |10>, no sign.
        assert_eq!(
            apply_ladder(&[(1, true), (0, false)], 0b01),
            Some((1.0, 0b10))
        );
        // c+_0 c_1 on |10> -> |01>, no sign.
        assert_eq!(
            apply_ladder(&[(0, true), (1, false)], 0b10),
            Some((1.0, 0b01))
        );
        // c_0 on |11>: no modes below 0 -> +, leaves |10>.
        assert_eq!(apply_ladder(&[(0, false)], 0b11), Some((1.0, 0b10)));
        // c_1 on |11>: mode 0 occupied below -> -.
        assert_eq!(apply_ladder(&[(1, false)], 0b11), Some((-1.0, 0b01)));
        assert_eq!(apply_ladder(&[(1, true)], 0b10), None);
    }
}
