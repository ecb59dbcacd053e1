//! Pauli strings and weighted Pauli sums.
//!
//! A string on `n` qubits is stored as two bit masks. Qubit `q` carries
//! `X` when only bit `q` of `x` is set, `Z` when only bit `q` of `z` is set
//! and `Y` when both are set. The operator represented is
//! `coefficient * i^{#Y} * X^x * Z^z`, so applying it to a basis state `|b>`
//! gives `coefficient * i^{#Y} * (-1)^{|b & z|} |b ^ x>`.

use std::collections::HashMap;
use std::fmt;

use num_complex::Complex64;

use crate::error::{Error, Result};

const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub fn from_char(c: char) -> Option<Self> {
        match c {
            'I' | 'i' => Some(Pauli::I),
            'X' | 'x' => Some(Pauli::X),
            'Y' | 'y' => Some(Pauli::Y),
            'Z' | 'z' => Some(Pauli::Z),
            _ => None,
        }
    }

    fn masks(self) -> (bool, bool) {
        match self {
            Pauli::I => (false, false),
            Pauli::X => (true, false),
            Pauli::Y => (true, true),
            Pauli::Z => (false, true),
        }
    }
}

impl fmt::Display for Pauli {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        };
        write!(f, "{c}")
    }
}

/// `i^k` for integer `k`.
fn i_pow(k: u32) -> Complex64 {
    match k % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => I,
        2 => Complex64::new(-1.0, 0.0),
        _ => -I,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PauliString {
    pub coefficient: Complex64,
    n_qubits: usize,
    x: u64,
    z: u64,
}

impl PauliString {
    pub fn identity(n_qubits: usize) -> Self {
        Self::from_masks(Complex64::new(1.0, 0.0), n_qubits, 0, 0)
    }

    pub fn from_masks(coefficient: Complex64, n_qubits: usize, x: u64, z: u64) -> Self {
        assert!(n_qubits <= 64, "pauli strings are limited to 64 qubits");
        let keep = if n_qubits == 64 {
            u64::MAX
        } else {
            (1u64 << n_qubits) - 1
        };
        Self {
            coefficient,
            n_qubits,
            x: x & keep,
            z: z & keep,
        }
    }

    pub fn new(coefficient: Complex64, letters: &[Pauli]) -> Self {
        let mut x = 0;
        let mut z = 0;
        for (q, p) in letters.iter().enumerate() {
            let (bx, bz) = p.masks();
            x |= (bx as u64) << q;
            z |= (bz as u64) << q;
        }
        Self::from_masks(coefficient, letters.len(), x, z)
    }

    /// Parse a label such as `"XIZY"`; the first character acts on qubit 0.
    pub fn parse(coefficient: Complex64, label: &str) -> Result<Self> {
        let letters = label
            .chars()
            .map(|c| {
                Pauli::from_char(c).ok_or_else(|| Error::Parse(format!("bad Pauli letter '{c}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(coefficient, &letters))
    }

    /// Single-qubit letter `p` on qubit `q` of an `n`-qubit register.
    pub fn single(n_qubits: usize, q: usize, p: Pauli) -> Self {
        let (bx, bz) = p.masks();
        Self::from_masks(
            Complex64::new(1.0, 0.0),
            n_qubits,
            (bx as u64) << q,
            (bz as u64) << q,
        )
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn x_mask(&self) -> u64 {
        self.x
    }

    pub fn z_mask(&self) -> u64 {
        self.z
    }

    pub fn letter(&self, q: usize) -> Pauli {
        match ((self.x >> q) & 1, (self.z >> q) & 1) {
            (0, 0) => Pauli::I,
            (1, 0) => Pauli::X,
            (1, 1) => Pauli::Y,
            _ => Pauli::Z,
        }
    }

    pub fn letters(&self) -> Vec<Pauli> {
        (0..self.n_qubits).map(|q| self.letter(q)).collect()
    }

    pub fn label(&self) -> String {
        self.letters().iter().map(|p| p.to_string()).collect()
    }

    pub fn is_identity(&self) -> bool {
        self.x == 0 && self.z == 0
    }

    pub fn weight(&self) -> u32 {
        (self.x | self.z).count_ones()
    }

    fn y_count(&self) -> u32 {
        (self.x & self.z).count_ones()
    }

    /// Same letters, coefficient replaced.
    pub fn with_coefficient(&self, coefficient: Complex64) -> Self {
        Self {
            coefficient,
            ..self.clone()
        }
    }

    pub fn commutes_with(&self, other: &PauliString) -> bool {
        let anti = (self.x & other.z).count_ones() + (self.z & other.x).count_ones();
        anti.is_multiple_of(2)
    }

    /// Operator product `self * other`, phases included.
    pub fn mul(&self, other: &PauliString) -> PauliString {
        assert_eq!(self.n_qubits, other.n_qubits, "qubit count mismatch");
        let x = self.x ^ other.x;
        let z = self.z ^ other.z;
        let ny = (x & z).count_ones();
        // i^{ny1 + ny2 - ny3} (-1)^{|z1 & x2|}, exponents taken mod 4.
        let k = self.y_count() + other.y_count() + 4 * 64 - ny;
        let mut phase = i_pow(k);
        if (self.z & other.x).count_ones() % 2 == 1 {
            phase = -phase;
        }
        Self {
            coefficient: self.coefficient * other.coefficient * phase,
            n_qubits: self.n_qubits,
            x,
            z,
        }
    }

    /// Matrix element data for the action on a basis state:
    /// returns `(target_index, amplitude_factor)` such that
    /// `P |b> = factor |target>`.
    #[inline]
    pub fn action(&self, b: usize) -> (usize, Complex64) {
        let b64 = b as u64;
        let mut factor = self.coefficient * i_pow(self.y_count());
        if (b64 & self.z).count_ones() % 2 == 1 {
            factor = -factor;
        }
        ((b64 ^ self.x) as usize, factor)
    }

    /// `out += P |psi>`.
    pub fn apply_add(&self, psi: &[Complex64], out: &mut [Complex64]) {
        let base = self.coefficient * i_pow(self.y_count());
        let x = self.x as usize;
        let z = self.z;
        for (b, amp) in psi.iter().enumerate() {
            if amp.re == 0.0 && amp.im == 0.0 {
                continue;
            }
            let sign = if ((b as u64) & z).count_ones() % 2 == 1 {
                -1.0
            } else {
                1.0
            };
            out[b ^ x] += base * sign * amp;
        }
    }

    /// `<psi| P |psi>` with the coefficient included.
    pub fn expectation(&self, psi: &[Complex64]) -> Complex64 {
        let base = self.coefficient * i_pow(self.y_count());
        let x = self.x as usize;
        let mut acc = Complex64::new(0.0, 0.0);
        for (b, amp) in psi.iter().enumerate() {
            let sign = if ((b as u64) & self.z).count_ones() % 2 == 1 {
                -1.0
            } else {
                1.0
            };
            acc += psi[b ^ x].conj() * amp * sign;
        }
        acc * base
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}{:+}i) {}",
            self.coefficient.re,
            self.coefficient.im,
            self.label()
        )
    }
}

/// Sum of Pauli strings with like terms collected.
#[derive(Debug, Clone, Default)]
pub struct PauliSum {
    n_qubits: usize,
    terms: HashMap<(u64, u64), Complex64>,
}

impl PauliSum {
    pub fn zero(n_qubits: usize) -> Self {
        Self {
            n_qubits,
            terms: HashMap::new(),
        }
    }

    pub fn from_string(p: PauliString) -> Self {
        let mut s = Self::zero(p.n_qubits);
        s.add_string(&p);
        s
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn add_string(&mut self, p: &PauliString) {
        assert_eq!(p.n_qubits, self.n_qubits, "qubit count mismatch");
        *self
            .terms
            .entry((p.x, p.z))
            .or_insert(Complex64::new(0.0, 0.0)) += p.coefficient;
    }

    pub fn add(&mut self, other: &PauliSum) {
        for (&(x, z), &c) in &other.terms {
            *self.terms.entry((x, z)).or_insert(Complex64::new(0.0, 0.0)) += c;
        }
    }

    pub fn scale(&mut self, factor: Complex64) {
        for c in self.terms.values_mut() {
            *c *= factor;
        }
    }

    pub fn mul(&self, other: &PauliSum) -> PauliSum {
        let mut out = PauliSum::zero(self.n_qubits);
        for (&(x1, z1), &c1) in &self.terms {
            let a = PauliString::from_masks(c1, self.n_qubits, x1, z1);
            for (&(x2, z2), &c2) in &other.terms {
                let b = PauliString::from_masks(c2, self.n_qubits, x2, z2);
                out.add_string(&a.mul(&b));
            }
        }
        out
    }

    pub fn adjoint(&self) -> PauliSum {
        // Every Pauli string is Hermitian, so only coefficients conjugate.
        let mut out = self.clone();
        for c in out.terms.values_mut() {
            *c = c.conj();
        }
        out
    }

    /// Terms with |coefficient| above `tol`, sorted by (x, z) mask so the
    /// output order is deterministic.
    pub fn strings(&self, tol: f64) -> Vec<PauliString> {
        let mut keys: Vec<_> = self
            .terms
            .iter()
            .filter(|(_, c)| c.norm() > tol)
            .map(|(&k, _)| k)
            .collect();
        keys.sort_unstable();
        keys.into_iter()
            .map(|(x, z)| PauliString::from_masks(self.terms[&(x, z)], self.n_qubits, x, z))
            .collect()
    }
}
