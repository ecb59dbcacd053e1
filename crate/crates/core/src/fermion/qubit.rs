use nalgebra::DMatrix;
use num_complex::Complex64;

use super::exact::{exact_diagonalize, Sector, DEFAULT_ED_CAP};
use crate::error::{Error, Result};
use crate::pauli::{PauliString, PauliSum};

/// Weighted Pauli sum with a recorded affine rescaling.
///
/// As a matrix this is `(sum_k terms_k + shift * 1) / scale`. Unscaled
/// Hamiltonians carry `shift = 0`, `scale = 1`; [`shift_and_scale`] sets
/// both so the spectrum lands in `[0, 1]` and the pair is kept for undoing
/// the map on measured energies.
#[derive(Debug, Clone, PartialEq)]
pub struct QubitHamiltonian {
    n_qubits: usize,
    terms: Vec<PauliString>,
    shift: f64,
    scale: f64,
}

impl QubitHamiltonian {
    /// Collects a Pauli sum into a Hermitian operator. Coefficients with an
    /// imaginary part above `1e-10` (relative to the largest term) are
    /// rejected; the remaining imaginary residue is dropped.
    pub fn from_pauli_sum(sum: &PauliSum, tol: f64) -> Result<Self> {
        let strings = sum.strings(tol);
        let largest = strings
            .iter()
            .map(|p| p.coefficient.norm())
            .fold(1.0, f64::max);
        let mut terms = Vec::with_capacity(strings.len());
        for p in strings {
            if !p.coefficient.re.is_finite() || !p.coefficient.im.is_finite() {
                return Err(Error::NonFinite(format!("coefficient of {}", p.label())));
            }
            if p.coefficient.im.abs() > 1e-10 * largest {
                return Err(Error::InvalidInput(format!(
                    "operator is not Hermitian: {} has coefficient {}",
                    p.label(),
                    p.coefficient
                )));
            }
            if p.coefficient.re.abs() > tol {
                terms.push(p.with_coefficient(Complex64::new(p.coefficient.re, 0.0)));
            }
        }
        Ok(Self {
            n_qubits: sum.n_qubits(),
            terms,
            shift: 0.0,
            scale: 1.0,
        })
    }

    pub fn from_terms(n_qubits: usize, terms: Vec<PauliString>) -> Result<Self> {
        let mut sum = PauliSum::zero(n_qubits);
        for t in &terms {
            if t.n_qubits() != n_qubits {
                return Err(Error::Shape {
                    expected: n_qubits,
                    actual: t.n_qubits(),
                });
            }
            sum.add_string(t);
        }
        Self::from_pauli_sum(&sum, 0.0)
    }

    pub fn zero(n_qubits: usize) -> Self {
        Self {
            n_qubits,
            terms: Vec::new(),
            shift: 0.0,
            scale: 1.0,
        }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    /// Raw (unshifted, unscaled) terms with real coefficients.
    pub fn terms(&self) -> &[PauliString] {
        &self.terms
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Same raw terms under an explicit affine map.
    pub fn with_scaling(&self, shift: f64, scale: f64) -> Result<Self> {
        if !shift.is_finite() || !scale.is_finite() || scale <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "invalid scaling shift={shift}, scale={scale}"
            )));
        }
        Ok(Self {
            shift,
            scale,
            ..self.clone()
        })
    }

    pub fn is_scaled(&self) -> bool {
        self.shift != 0.0 || self.scale != 1.0
    }

    /// Energy of the raw operator corresponding to an eigenvalue of the
    /// scaled one.
    pub fn unscale_energy(&self, scaled: f64) -> f64 {
        scaled * self.scale - self.shift
    }

    pub fn scale_energy(&self, energy: f64) -> f64 {
        (energy + self.shift) / self.scale
    }

    /// Terms of the effective matrix `(raw + shift) / scale`, with the shift
    /// folded into the identity coefficient.
    pub fn effective_terms(&self) -> Vec<PauliString> {
        let mut sum = PauliSum::zero(self.n_qubits);
        for t in &self.terms {
            sum.add_string(&t.with_coefficient(t.coefficient / self.scale));
        }
        if self.shift != 0.0 {
            sum.add_string(
                &PauliString::identity(self.n_qubits)
                    .with_coefficient(Complex64::new(self.shift / self.scale, 0.0)),
            );
        }
        sum.strings(0.0)
    }

    /// Coefficient of the identity string in the raw operator.
    pub fn identity_coefficient(&self) -> f64 {
        self.terms
            .iter()
            .filter(|t| t.is_identity())
            .map(|t| t.coefficient.re)
            .sum()
    }

    /// `a * self + b * other` on the raw operators; the result is unscaled.
    pub fn linear_combination(&self, a: f64, other: &QubitHamiltonian, b: f64) -> Result<Self> {
        if self.n_qubits != other.n_qubits {
            return Err(Error::Shape {
                expected: self.n_qubits,
                actual: other.n_qubits,
            });
        }
        let mut sum = PauliSum::zero(self.n_qubits);
        for t in &self.terms {
            sum.add_string(&t.with_coefficient(t.coefficient * a));
        }
        for t in &other.terms {
            sum.add_string(&t.with_coefficient(t.coefficient * b));
        }
        Self::from_pauli_sum(&sum, 0.0)
    }

    /// `H |psi>` for the effective (shifted, scaled) operator.
    pub fn apply(&self, psi: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); psi.len()];
        for t in &self.terms {
            t.apply_add(psi, &mut out);
        }
        for (o, p) in out.iter_mut().zip(psi) {
            *o = (*o + p * self.shift) / self.scale;
        }
        out
    }

    /// `<psi| H |psi>` for the effective operator (real by hermiticity).
    pub fn expectation(&self, psi: &[Complex64]) -> f64 {
        let raw: f64 = self.terms.iter().map(|t| t.expectation(psi).re).sum();
        let norm: f64 = psi.iter().map(|a| a.norm_sqr()).sum();
        (raw + self.shift * norm) / self.scale
    }

    /// Dense matrix of the effective operator.
    pub fn to_dense(&self) -> DMatrix<Complex64> {
        self.dense_in_basis(&(0..1usize << self.n_qubits).collect::<Vec<_>>())
    }

    /// Matrix of the effective operator restricted to the listed basis
    /// states (rows and columns in the order given).
    pub fn dense_in_basis(&self, basis: &[usize]) -> DMatrix<Complex64> {
        let dim_full = 1usize << self.n_qubits;
        let mut position = vec![usize::MAX; dim_full];
        for (k, &b) in basis.iter().enumerate() {
            position[b] = k;
        }
        let d = basis.len();
        let mut m = DMatrix::<Complex64>::zeros(d, d);
        for (col, &b) in basis.iter().enumerate() {
            for t in &self.terms {
                let (target, f) = t.action(b);
                let row = position[target];
                if row != usize::MAX {
                    m[(row, col)] += f;
                }
            }
            m[(col, col)] += Complex64::new(self.shift, 0.0);
        }
        m / Complex64::new(self.scale, 0.0)
    }

    /// Gershgorin-style bounds on the raw spectrum: identity coefficient
    /// plus or minus the sum of the remaining |coefficients|.
    pub fn gershgorin_bounds(&self) -> (f64, f64) {
        let c0 = self.identity_coefficient();
        let spread: f64 = self
            .terms
            .iter()
            .filter(|t| !t.is_identity())
            .map(|t| t.coefficient.norm())
            .sum();
        (c0 - spread, c0 + spread)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundMethod {
    Gershgorin,
    Exact,
    /// Exact when the register fits the diagonalization cap, Gershgorin
    /// otherwise.
    Auto,
}

/// Picks `shift` and `scale` so every eigenvalue of `(H + shift) / scale`
/// lies in `[0, 1]`, leaving `margin` (energy units) of headroom at both ends.
/// An already-scaled input is rescaled on top of its existing map.
pub fn shift_and_scale(
    h: &QubitHamiltonian,
    margin: f64,
    method: BoundMethod,
) -> Result<QubitHamiltonian> {
    if !(margin >= 0.0) || !margin.is_finite() {
        return Err(Error::InvalidInput(format!(
            "margin must be finite and non-negative, got {margin}"
        )));
    }
    if h.terms
        .iter()
        .any(|t| !t.coefficient.re.is_finite() || !t.coefficient.im.is_finite())
    {
        return Err(Error::NonFinite("term coefficient".into()));
    }
    let use_exact = match method {
        BoundMethod::Exact => true,
        BoundMethod::Gershgorin => false,
        BoundMethod::Auto => h.n_qubits <= DEFAULT_ED_CAP,
    };
    // Bounds of the effective operator as it stands.
    let (lo, hi) = if use_exact {
        let spec = exact_diagonalize(h, &Sector::all())?;
        (spec.eigenvalues()[0], *spec.eigenvalues().last().unwrap())
    } else {
        let (glo, ghi) = h.gershgorin_bounds();
        ((glo + h.shift) / h.scale, (ghi + h.shift) / h.scale)
    };
    // Margin is in raw energy units; express it in the current scale.
    let m = margin / h.scale;
    let shift_here = -lo + m;
    let mut range = hi - lo + 2.0 * m;
    if range <= 0.0 {
        range = 1.0;
    }
    Ok(QubitHamiltonian {
        n_qubits: h.n_qubits,
        terms: h.terms.clone(),
        shift: h.shift + shift_here * h.scale,
        scale: h.scale * range,
    })
}
