use nalgebra::DMatrix;
use num_complex::Complex64;

use super::qubit::QubitHamiltonian;
use crate::error::{Error, Result};
use crate::sim::Statevector;

/// Largest register the brute-force oracle accepts by default.
pub const DEFAULT_ED_CAP: usize = 14;

/// Levels closer than this are flagged as degenerate.
pub const DEGENERACY_TOL: f64 = 1e-9;

/// Basis-state filter. Spin counts assume the site-major, spin-minor layout
/// (even qubits spin up, odd qubits spin down).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Sector {
    pub particles: Option<usize>,
    pub n_up: Option<usize>,
    pub n_down: Option<usize>,
}

const EVEN_BITS: usize = 0x5555_5555_5555_5555;

impl Sector {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn particles(n: usize) -> Self {
        Self {
            particles: Some(n),
            ..Self::default()
        }
    }

    pub fn spin_resolved(n_up: usize, n_down: usize) -> Self {
        Self {
            particles: Some(n_up + n_down),
            n_up: Some(n_up),
            n_down: Some(n_down),
        }
    }

    pub fn contains(&self, b: usize) -> bool {
        let up = (b & EVEN_BITS).count_ones() as usize;
        let down = (b & !EVEN_BITS).count_ones() as usize;
        self.particles.is_none_or(|n| up + down == n)
            && self.n_up.is_none_or(|n| up == n)
            && self.n_down.is_none_or(|n| down == n)
    }

    pub fn basis(&self, n_qubits: usize) -> Vec<usize> {
        (0..1usize << n_qubits)
            .filter(|&b| self.contains(b))
            .collect()
    }
}

/// Eigen-decomposition of a Hamiltonian restricted to a sector.
#[derive(Debug, Clone)]
pub struct Spectrum {
    n_qubits: usize,
    basis: Vec<usize>,
    eigenvalues: Vec<f64>,
    vectors: DMatrix<Complex64>,
    degenerate: Vec<bool>,
}

impl Spectrum {
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn basis(&self) -> &[usize] {
        &self.basis
    }

    /// Whether level `k` lies within [`DEGENERACY_TOL`] of a neighbour.
    pub fn is_degenerate(&self, k: usize) -> bool {
        self.degenerate[k]
    }

    pub fn degeneracy_flags(&self) -> &[bool] {
        &self.degenerate
    }

    pub fn ground_energy(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn ground_state(&self) -> Statevector {
        self.state(0)
    }

    /// Eigenvector `k` embedded in the full register.
    pub fn state(&self, k: usize) -> Statevector {
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << self.n_qubits];
        for (row, &b) in self.basis.iter().enumerate() {
            amps[b] = self.vectors[(row, k)];
        }
        Statevector::from_amplitudes(amps).expect("eigenvectors are normalized")
    }

    /// Largest residual `||H v - E v||` over all reported pairs.
    pub fn max_residual(&self, h: &QubitHamiltonian) -> f64 {
        (0..self.len())
            .map(|k| {
                let v = self.state(k);
                let hv = h.apply(v.amplitudes());
                hv.iter()
                    .zip(v.amplitudes())
                    .map(|(a, b)| (a - b * self.eigenvalues[k]).norm_sqr())
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }
}

pub fn exact_diagonalize(h: &QubitHamiltonian, sector: &Sector) -> Result<Spectrum> {
    exact_diagonalize_with_cap(h, sector, DEFAULT_ED_CAP)
}

/// Dense Hermitian eigensolve of the effective operator on `sector`.
/// Eigenvalues ascend; each eigenvector is phased so its largest component
/// is real and positive, which makes the output deterministic.
pub fn exact_diagonalize_with_cap(
    h: &QubitHamiltonian,
    sector: &Sector,
    cap: usize,
) -> Result<Spectrum> {
    if h.n_qubits() > cap {
        return Err(Error::QubitCap {
            requested: h.n_qubits(),
            cap,
        });
    }
    let basis = sector.basis(h.n_qubits());
    if basis.is_empty() {
        return Err(Error::InvalidInput(format!("sector {sector:?} is empty")));
    }
    let m = h.dense_in_basis(&basis);
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..basis.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let d = basis.len();
    let mut vectors = DMatrix::<Complex64>::zeros(d, d);
    let mut eigenvalues = Vec::with_capacity(d);
    for (col, &k) in order.iter().enumerate() {
        eigenvalues.push(eig.eigenvalues[k]);
        let v = eig.eigenvectors.column(k);
        let (imax, _) = v.iter().enumerate().fold((0, -1.0), |(bi, bn), (i, c)| {
            if c.norm() > bn + 1e-12 {
                (i, c.norm())
            } else {
                (bi, bn)
            }
        });
        let phase = v[imax].conj() / v[imax].norm();
        for r in 0..d {
            vectors[(r, col)] = v[r] * phase;
        }
    }
    let degenerate = (0..d)
        .map(|k| {
            (k > 0 && (eigenvalues[k] - eigenvalues[k - 1]).abs() < DEGENERACY_TOL)
                || (k + 1 < d && (eigenvalues[k + 1] - eigenvalues[k]).abs() < DEGENERACY_TOL)
        })
        .collect();
    Ok(Spectrum {
        n_qubits: h.n_qubits(),
        basis,
        eigenvalues,
        vectors,
        degenerate,
    })
}
