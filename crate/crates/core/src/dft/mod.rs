//! Lattice density-functional machinery for spin-half Hubbard models:
//! Kohn-Sham solves and inversion, the exact functional by Legendre
//! transform, Euler-Lagrange solves, response and thermal densities.
//!
//! Densities are spin-summed site occupations. Potentials are fixed to the
//! sum-zero gauge unless stated otherwise.

mod functional;
mod ks;
mod response;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fermion::{
    exact_diagonalize, one_body_operator, FermionHamiltonian, QubitHamiltonian, Sector, Spin,
};
use crate::pauli::PauliSum;
use crate::qae::DensityMatrix;
use crate::sim::Statevector;

pub use functional::{
    euler_lagrange_solve, exact_functional_oracle, ks_energy_reconstruction, xc_decomposition,
    DensityFunctional, ElConfig, ElResult, ExactFunctional, LegendreConfig, LegendreResult,
    XcDecomposition,
};
pub use ks::{
    invert_to_ks, invert_to_ks_qga, ks_inversion_gradient, solve_ks, t_psi_objective,
    InversionConfig, InversionResult, InversionTarget, KsOrbitals, TraceRow, KS_DEGENERACY_TOL,
};
pub use response::{chi_s_response, fermi_weighted_density, ResponseFunction, ThermalDensity};

/// Removes the mean so the entries sum to zero.
pub fn gauge_fix(v: &[f64]) -> Vec<f64> {
    let mean = v.iter().sum::<f64>() / v.len().max(1) as f64;
    v.iter().map(|x| x - mean).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Spin-summed site density `n_i = sum_s rho^s_ii`.
pub fn density_from_dm(rho: &DensityMatrix) -> Vec<f64> {
    rho.density()
}

/// `U[n] = (1/4) sum_ij K_ij n_i n_j`; an on-site kernel `K = U I` gives
/// the Hubbard mean-field energy `(U/4) sum n_i^2`.
pub fn hartree_energy(n: &[f64], kernel: &DMatrix<f64>) -> f64 {
    let mut e = 0.0;
    for i in 0..n.len() {
        for j in 0..n.len() {
            e += kernel[(i, j)] * n[i] * n[j];
        }
    }
    e / 4.0
}

/// `v_H = dU/dn = (1/2) K n` for a symmetric kernel.
pub fn hartree_potential(n: &[f64], kernel: &DMatrix<f64>) -> Result<Vec<f64>> {
    let m = n.len();
    if kernel.nrows() != m || kernel.ncols() != m {
        return Err(Error::Shape {
            expected: m,
            actual: kernel.nrows(),
        });
    }
    Ok((0..m)
        .map(|i| 0.5 * (0..m).map(|j| kernel[(i, j)] * n[j]).sum::<f64>())
        .collect())
}

/// Spin-half lattice with real hopping matrix, on-site repulsion `u` and a
/// fixed electron count. The interacting ground state is taken in the
/// `S_z` sector `(ceil(N/2), floor(N/2))`.
#[derive(Debug, Clone)]
pub struct LatticeModel {
    hopping: DMatrix<f64>,
    u: f64,
    n_electrons: usize,
    base: PauliSum,
    kinetic: QubitHamiltonian,
    site_number: Vec<PauliSum>,
}

/// Exact interacting ground state at one external potential.
#[derive(Debug, Clone)]
pub struct InteractingGround {
    pub energy: f64,
    pub density: Vec<f64>,
    /// `<T>`, the hopping energy.
    pub kinetic: f64,
    pub state: Statevector,
    pub hamiltonian: QubitHamiltonian,
    /// Whether the ground level is degenerate within the sector.
    pub degenerate: bool,
}

impl LatticeModel {
    pub fn new(hopping: DMatrix<f64>, u: f64, n_electrons: usize) -> Result<Self> {
        let n = hopping.nrows();
        if n == 0 || hopping.ncols() != n {
            return Err(Error::InvalidInput(
                "hopping matrix must be square and non-empty".into(),
            ));
        }
        if (hopping.clone() - hopping.transpose()).amax() > 1e-12 {
            return Err(Error::InvalidInput(
                "hopping matrix must be symmetric".into(),
            ));
        }
        if n_electrons > 2 * n {
            return Err(Error::InvalidInput(format!(
                "{n_electrons} electrons do not fit on {n} sites"
            )));
        }
        if !u.is_finite() {
            return Err(Error::NonFinite("U".into()));
        }
        let t = hopping.map(|x| Complex64::new(x, 0.0));
        let mut vt = vec![Complex64::new(0.0, 0.0); n.pow(4)];
        for i in 0..n {
            vt[((i * n + i) * n + i) * n + i] = Complex64::new(u / 2.0, 0.0);
        }
        let fh = FermionHamiltonian::new(t, vt, Spin::Half)?;
        let base = pauli_sum_of(&fh)?;
        let kinetic = crate::fermion::jordan_wigner(&fh.noninteracting())?;
        let modes = 2 * n;
        let site_number = (0..n)
            .map(|i| {
                let mut s = one_body_operator(modes, 2 * i, 2 * i, Complex64::new(1.0, 0.0));
                s.add(&one_body_operator(
                    modes,
                    2 * i + 1,
                    2 * i + 1,
                    Complex64::new(1.0, 0.0),
                ));
                s
            })
            .collect();
        Ok(Self {
            hopping,
            u,
            n_electrons,
            base,
            kinetic,
            site_number,
        })
    }

    /// Open chain with hopping `-t`.
    pub fn chain(n_sites: usize, t: f64, u: f64, n_electrons: usize) -> Result<Self> {
        Self::new(crate::fermion::hopping_matrix(n_sites, t), u, n_electrons)
    }

    /// Two-site model at half filling.
    pub fn dimer(t: f64, u: f64) -> Result<Self> {
        Self::chain(2, t, u, 2)
    }

    pub fn n_sites(&self) -> usize {
        self.hopping.nrows()
    }

    pub fn hopping(&self) -> &DMatrix<f64> {
        &self.hopping
    }

    pub fn u(&self) -> f64 {
        self.u
    }

    pub fn n_electrons(&self) -> usize {
        self.n_electrons
    }

    /// On-site Hartree kernel `U I`.
    pub fn hartree_kernel(&self) -> DMatrix<f64> {
        DMatrix::identity(self.n_sites(), self.n_sites()) * self.u
    }

    pub fn sector(&self) -> Sector {
        let up = self.n_electrons.div_ceil(2);
        Sector::spin_resolved(up, self.n_electrons - up)
    }

    /// Same lattice and filling with the interaction switched off.
    pub fn noninteracting(&self) -> Result<Self> {
        Self::new(self.hopping.clone(), 0.0, self.n_electrons)
    }

    /// Qubit Hamiltonian with external potential `v`.
    pub fn hamiltonian(&self, v: &[f64]) -> Result<QubitHamiltonian> {
        self.check_len(v)?;
        let mut sum = self.base.clone();
        for (vi, ni) in v.iter().zip(&self.site_number) {
            if *vi != 0.0 {
                let mut term = ni.clone();
                term.scale(Complex64::new(*vi, 0.0));
                sum.add(&term);
            }
        }
        QubitHamiltonian::from_pauli_sum(&sum, 1e-14)
    }

    /// Exact ground energy `E[v]`, density and state.
    pub fn ground_state(&self, v: &[f64]) -> Result<InteractingGround> {
        let h = self.hamiltonian(v)?;
        let spec = exact_diagonalize(&h, &self.sector())?;
        let state = spec.ground_state();
        let density = site_density(&state, self.n_sites());
        let kinetic = self.kinetic.expectation(state.amplitudes());
        Ok(InteractingGround {
            energy: spec.ground_energy(),
            density,
            kinetic,
            degenerate: spec.is_degenerate(0),
            state,
            hamiltonian: h,
        })
    }

    /// Spin-summed site density of an arbitrary state on this lattice.
    pub fn density(&self, psi: &Statevector) -> Result<Vec<f64>> {
        self.check_state(psi)?;
        Ok(site_density(psi, self.n_sites()))
    }

    /// `<psi|T|psi>` for the hopping part alone.
    pub fn kinetic_expectation(&self, psi: &Statevector) -> Result<f64> {
        self.check_state(psi)?;
        Ok(self.kinetic.expectation(psi.amplitudes()))
    }

    fn check_state(&self, psi: &Statevector) -> Result<()> {
        if psi.n_qubits() != 2 * self.n_sites() {
            return Err(Error::Shape {
                expected: 2 * self.n_sites(),
                actual: psi.n_qubits(),
            });
        }
        Ok(())
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.n_sites() {
            return Err(Error::Shape {
                expected: self.n_sites(),
                actual: v.len(),
            });
        }
        Ok(())
    }
}

fn pauli_sum_of(h: &FermionHamiltonian) -> Result<PauliSum> {
    let q = crate::fermion::jordan_wigner(h)?;
    let mut s = PauliSum::zero(q.n_qubits());
    for t in q.terms() {
        s.add_string(t);
    }
    Ok(s)
}

/// Spin-summed site occupations of a statevector in the site-major layout.
pub fn site_density(psi: &Statevector, n_sites: usize) -> Vec<f64> {
    let mut n = vec![0.0; n_sites];
    for (b, p) in psi.probabilities().into_iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for (i, ni) in n.iter_mut().enumerate() {
            *ni += p * ((b >> (2 * i) & 1) + (b >> (2 * i + 1) & 1)) as f64;
        }
    }
    n
}
