use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::io::{Read, Write};
use std::ops::Range;

use num_complex::Complex64;

use super::rng::RandomStream;
use crate::error::{Error, Result};
use crate::pauli::PauliString;

/// Total qubit budget of the dense simulator.
pub const MAX_QUBITS: usize = 24;

/// Probabilities below this are treated as exactly zero when sampling.
pub const ZERO_BRANCH: f64 = 1e-15;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Dense state over `n_qubits` qubits, little-endian: qubit `q` is bit `q`
/// of the basis-state index.
#[derive(Debug, Clone, PartialEq)]
pub struct Statevector {
    n_qubits: usize,
    amps: Vec<Complex64>,
}

/// Gate tally returned by circuit-level routines such as the QFT.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GateCount {
    pub hadamard: usize,
    pub controlled_phase: usize,
    pub swap: usize,
}

impl GateCount {
    pub fn total(&self) -> usize {
        self.hadamard + self.controlled_phase + self.swap
    }
}

impl Statevector {
    /// `|0...0>`.
    pub fn zero(n_qubits: usize) -> Result<Self> {
        Self::basis(n_qubits, 0)
    }

    pub fn basis(n_qubits: usize, index: usize) -> Result<Self> {
        check_cap(n_qubits)?;
        let dim = 1usize << n_qubits;
        if index >= dim {
            return Err(Error::InvalidInput(format!(
                "basis index {index} outside dimension {dim}"
            )));
        }
        let mut amps = vec![ZERO; dim];
        amps[index] = ONE;
        Ok(Self { n_qubits, amps })
    }

    /// Wraps `amps`, normalizing. Fails on a zero or non-finite vector or a
    /// length that is not a power of two.
    pub fn from_amplitudes(amps: Vec<Complex64>) -> Result<Self> {
        let dim = amps.len();
        if dim == 0 || !dim.is_power_of_two() {
            return Err(Error::InvalidInput(format!(
                "amplitude count {dim} is not a power of two"
            )));
        }
        let n_qubits = dim.trailing_zeros() as usize;
        check_cap(n_qubits)?;
        if amps.iter().any(|a| !a.re.is_finite() || !a.im.is_finite()) {
            return Err(Error::NonFinite("statevector amplitude".into()));
        }
        let mut s = Self { n_qubits, amps };
        let norm = s.norm();
        if norm < 1e-300 {
            return Err(Error::InvalidInput(
                "zero vector cannot be normalized".into(),
            ));
        }
        s.scale(1.0 / norm);
        Ok(s)
    }

    /// Tensor product `self ⊗ other` with `self` on the low qubits.
    pub fn tensor(&self, high: &Statevector) -> Result<Self> {
        let n = self.n_qubits + high.n_qubits;
        check_cap(n)?;
        let mut amps = Vec::with_capacity(1 << n);
        for h in &high.amps {
            for l in &self.amps {
                amps.push(l * h);
            }
        }
        Ok(Self { n_qubits: n, amps })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    /// Raw mutable access for routines in this crate that apply structured
    /// unitaries block-wise. Callers must keep the vector normalized.
    pub(crate) fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amps
    }

    pub fn into_amplitudes(self) -> Vec<Complex64> {
        self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    fn scale(&mut self, f: f64) {
        for a in &mut self.amps {
            *a *= f;
        }
    }

    pub(crate) fn renormalize(&mut self) {
        let n = self.norm();
        if n > 0.0 {
            self.scale(1.0 / n);
        }
    }

    pub fn inner(&self, other: &Statevector) -> Result<Complex64> {
        self.same_dim(other)?;
        Ok(self
            .amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    /// `|<self|other>|^2`.
    pub fn fidelity(&self, other: &Statevector) -> Result<f64> {
        Ok(self.inner(other)?.norm_sqr().min(1.0))
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }

    fn same_dim(&self, other: &Statevector) -> Result<()> {
        if self.n_qubits != other.n_qubits {
            return Err(Error::Shape {
                expected: self.n_qubits,
                actual: other.n_qubits,
            });
        }
        Ok(())
    }

    fn check_qubit(&self, q: usize) -> Result<()> {
        if q >= self.n_qubits {
            return Err(Error::QubitOutOfRange {
                index: q,
                n_qubits: self.n_qubits,
            });
        }
        Ok(())
    }

    fn check_range(&self, range: &Range<usize>) -> Result<()> {
        if range.start >= range.end {
            return Err(Error::InvalidInput("empty qubit range".into()));
        }
        self.check_qubit(range.end - 1)
    }

    /// General single-qubit gate `[[m00, m01], [m10, m11]]` on qubit `q`.
    /// The caller is responsible for `m` being unitary.
    pub fn apply_single(&mut self, q: usize, m: [[Complex64; 2]; 2]) -> Result<()> {
        self.check_qubit(q)?;
        let step = 1usize << q;
        for block in self.amps.chunks_mut(2 * step) {
            let (lo, hi) = block.split_at_mut(step);
            for (a0, a1) in lo.iter_mut().zip(hi.iter_mut()) {
                let x0 = *a0;
                let x1 = *a1;
                *a0 = m[0][0] * x0 + m[0][1] * x1;
                *a1 = m[1][0] * x0 + m[1][1] * x1;
            }
        }
        Ok(())
    }

    pub fn apply_hadamard(&mut self, q: usize) -> Result<()> {
        let h = Complex64::new(FRAC_1_SQRT_2, 0.0);
        self.apply_single(q, [[h, h], [h, -h]])
    }

    pub fn apply_x(&mut self, q: usize) -> Result<()> {
        self.apply_single(q, [[ZERO, ONE], [ONE, ZERO]])
    }

    /// Hadamard on every qubit of `range`.
    pub fn apply_hadamard_all(&mut self, range: Range<usize>) -> Result<()> {
        self.check_range(&range)?;
        for q in range {
            self.apply_hadamard(q)?;
        }
        Ok(())
    }

    /// Phase `e^{i angle}` on basis states where both `control` and `target`
    /// are set.
    pub fn apply_controlled_phase_angle(
        &mut self,
        control: usize,
        target: usize,
        angle: f64,
    ) -> Result<()> {
        self.check_qubit(control)?;
        self.check_qubit(target)?;
        if control == target {
            return Err(Error::InvalidInput("control and target coincide".into()));
        }
        let mask = (1usize << control) | (1usize << target);
        let phase = Complex64::from_polar(1.0, angle);
        for (b, a) in self.amps.iter_mut().enumerate() {
            if b & mask == mask {
                *a *= phase;
            }
        }
        Ok(())
    }

    /// Controlled `R_l = diag(1, e^{i pi / 2^l})`.
    pub fn apply_controlled_phase(&mut self, control: usize, target: usize, l: u32) -> Result<()> {
        self.apply_controlled_phase_angle(control, target, PI / 2f64.powi(l as i32))
    }

    pub fn apply_swap(&mut self, a: usize, b: usize) -> Result<()> {
        self.check_qubit(a)?;
        self.check_qubit(b)?;
        if a == b {
            return Ok(());
        }
        let (ma, mb) = (1usize << a, 1usize << b);
        for i in 0..self.amps.len() {
            if i & ma != 0 && i & mb == 0 {
                self.amps.swap(i, (i & !ma) | mb);
            }
        }
        Ok(())
    }

    /// `|psi> <- P |psi>` including the coefficient, which must have unit
    /// modulus for the result to stay normalized.
    pub fn apply_pauli(&mut self, p: &PauliString) -> Result<()> {
        self.check_pauli(p)?;
        let mut out = vec![ZERO; self.amps.len()];
        p.apply_add(&self.amps, &mut out);
        self.amps = out;
        Ok(())
    }

    /// `|psi> <- exp(-i theta P) |psi>` for a coefficient-free Pauli string
    /// (the coefficient of `p` is ignored; fold it into `theta`).
    pub fn apply_pauli_exponential(&mut self, p: &PauliString, theta: f64) -> Result<()> {
        self.check_pauli(p)?;
        if theta == 0.0 {
            return Ok(());
        }
        let (s, c) = theta.sin_cos();
        let bare = p.with_coefficient(ONE);
        if bare.is_identity() {
            let phase = Complex64::new(c, -s);
            for a in &mut self.amps {
                *a *= phase;
            }
            return Ok(());
        }
        let x = bare.x_mask() as usize;
        let minus_i_sin = Complex64::new(0.0, -s);
        // P maps |b> to f_b |b ^ x>, and P^2 = 1 implies f_{b^x} f_b = 1, so
        // each pair (b, b ^ x) transforms independently.
        if x == 0 {
            for (b, a) in self.amps.iter_mut().enumerate() {
                let (_, f) = bare.action(b);
                *a *= c + minus_i_sin * f;
            }
            return Ok(());
        }
        let low = x & x.wrapping_neg();
        for b in 0..self.amps.len() {
            if b & low != 0 {
                continue;
            }
            let b2 = b ^ x;
            let (_, f_b) = bare.action(b);
            let (_, f_b2) = bare.action(b2);
            let a_b = self.amps[b];
            let a_b2 = self.amps[b2];
            // (P psi)_{b2} = f_b a_b ; (P psi)_b = f_b2 a_b2
            self.amps[b] = c * a_b + minus_i_sin * f_b2 * a_b2;
            self.amps[b2] = c * a_b2 + minus_i_sin * f_b * a_b;
        }
        Ok(())
    }

    fn check_pauli(&self, p: &PauliString) -> Result<()> {
        if p.n_qubits() > self.n_qubits {
            return Err(Error::Shape {
                expected: self.n_qubits,
                actual: p.n_qubits(),
            });
        }
        // Shorter strings act on the low qubits of the register.
        Ok(())
    }

    /// Quantum Fourier transform on `range`, mapping the register value `y`
    /// to `2^{-n/2} sum_x exp(i 2 pi x y / 2^n) |x>`. Built from Hadamards,
    /// controlled `R_l` rotations and a final reversal by swaps.
    pub fn qft(&mut self, range: Range<usize>) -> Result<GateCount> {
        self.check_range(&range)?;
        let qubits: Vec<usize> = range.collect();
        let n = qubits.len();
        let mut count = GateCount::default();
        for j in (0..n).rev() {
            self.apply_hadamard(qubits[j])?;
            count.hadamard += 1;
            for k in (0..j).rev() {
                self.apply_controlled_phase(qubits[k], qubits[j], (j - k) as u32)?;
                count.controlled_phase += 1;
            }
        }
        for i in 0..n / 2 {
            self.apply_swap(qubits[i], qubits[n - 1 - i])?;
            count.swap += 1;
        }
        Ok(count)
    }

    /// Exact inverse of [`Statevector::qft`]: the same gates, reversed and
    /// conjugated.
    pub fn inverse_qft(&mut self, range: Range<usize>) -> Result<GateCount> {
        self.check_range(&range)?;
        let qubits: Vec<usize> = range.collect();
        let n = qubits.len();
        let mut count = GateCount::default();
        for i in 0..n / 2 {
            self.apply_swap(qubits[i], qubits[n - 1 - i])?;
            count.swap += 1;
        }
        for j in 0..n {
            for k in 0..j {
                let angle = -PI / 2f64.powi((j - k) as i32);
                self.apply_controlled_phase_angle(qubits[k], qubits[j], angle)?;
                count.controlled_phase += 1;
            }
            self.apply_hadamard(qubits[j])?;
            count.hadamard += 1;
        }
        Ok(count)
    }

    /// Probability that qubit `q` reads 1.
    pub fn probability_one(&self, q: usize) -> Result<f64> {
        self.check_qubit(q)?;
        let mask = 1usize << q;
        Ok(self
            .amps
            .iter()
            .enumerate()
            .filter(|(b, _)| b & mask != 0)
            .map(|(_, a)| a.norm_sqr())
            .sum())
    }

    /// Projects qubit `q` onto `bit` and renormalizes. Fails when the branch
    /// has (numerically) zero probability.
    pub fn project_qubit(&mut self, q: usize, bit: bool) -> Result<f64> {
        let p1 = self.probability_one(q)?;
        let p = if bit { p1 } else { 1.0 - p1 };
        if p < ZERO_BRANCH {
            return Err(Error::InvalidInput(format!(
                "projection of qubit {q} onto {} has zero probability",
                bit as u8
            )));
        }
        let mask = 1usize << q;
        let inv = 1.0 / p.sqrt();
        for (b, a) in self.amps.iter_mut().enumerate() {
            if ((b & mask) != 0) == bit {
                *a *= inv;
            } else {
                *a = ZERO;
            }
        }
        Ok(p)
    }

    /// Born-rule measurement of qubit `q`; the state collapses onto the
    /// outcome and is renormalized.
    pub fn measure(&mut self, q: usize, rng: &mut RandomStream) -> Result<bool> {
        let p1 = self.probability_one(q)?;
        let bit = if p1 < ZERO_BRANCH {
            false
        } else if 1.0 - p1 < ZERO_BRANCH {
            true
        } else {
            rng.uniform() < p1
        };
        self.project_qubit(q, bit)?;
        Ok(bit)
    }

    /// Measures every qubit of `range` (low qubit first) and returns the
    /// little-endian register value.
    pub fn measure_register(
        &mut self,
        range: Range<usize>,
        rng: &mut RandomStream,
    ) -> Result<usize> {
        self.check_range(&range)?;
        let start = range.start;
        let mut value = 0usize;
        for q in range {
            if self.measure(q, rng)? {
                value |= 1 << (q - start);
            }
        }
        Ok(value)
    }

    /// Marginal distribution of a register's value.
    pub fn register_distribution(&self, range: Range<usize>) -> Result<Vec<f64>> {
        self.check_range(&range)?;
        let width = range.end - range.start;
        let mut dist = vec![0.0; 1 << width];
        let mask = (1usize << width) - 1;
        for (b, a) in self.amps.iter().enumerate() {
            dist[(b >> range.start) & mask] += a.norm_sqr();
        }
        Ok(dist)
    }

    /// Dumps amplitudes as little-endian `(re, im)` f64 pairs.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        for a in &self.amps {
            w.write_all(&a.re.to_le_bytes())?;
            w.write_all(&a.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() % 16 != 0 {
            return Err(Error::Parse(
                "amplitude dump length is not a multiple of 16".into(),
            ));
        }
        let amps = bytes
            .chunks_exact(16)
            .map(|c| {
                let re = f64::from_le_bytes(c[..8].try_into().unwrap());
                let im = f64::from_le_bytes(c[8..].try_into().unwrap());
                Complex64::new(re, im)
            })
            .collect();
        Self::from_amplitudes(amps)
    }
}

fn check_cap(n_qubits: usize) -> Result<()> {
    if n_qubits > MAX_QUBITS {
        return Err(Error::QubitCap {
            requested: n_qubits,
            cap: MAX_QUBITS,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pauli::Pauli;

    fn random_state(n: usize, rng: &mut RandomStream) -> Statevector {
        let amps = (0..1 << n)
            .map(|_| Complex64::new(rng.uniform() - 0.5, rng.uniform() - 0.5))
            .collect();
        Statevector::from_amplitudes(amps).unwrap()
    }

    fn close(a: &Statevector, b: &Statevector, tol: f64) -> bool {
        a.amplitudes()
            .iter()
            .zip(b.amplitudes())
            .all(|(x, y)| (x - y).norm() < tol)
    }

    #[test]
    fn hadamard_on_zero() {
        let mut s = Statevector::zero(1).unwrap();
        s.apply_hadamard(0).unwrap();
        let h = FRAC_1_SQRT_2;
        assert!((s.amplitudes()[0].re - h).abs() < 1e-15);
        assert!((s.amplitudes()[1].re - h).abs() < 1e-15);
    }

    #[test]
    fn hadamard_is_involution() {
        let mut rng = RandomStream::new(3);
        let s0 = random_state(3, &mut rng);
        let mut s = s0.clone();
        s.apply_hadamard(1).unwrap();
        s.apply_hadamard(1).unwrap();
        assert!(close(&s, &s0, 1e-12));
    }

    #[test]
    fn hadamard_all_gives_uniform() {
        let mut s = Statevector::zero(5).unwrap();
        s.apply_hadamard_all(0..5).unwrap();
        let expected = 2f64.powf(-2.5);
        for a in s.amplitudes() {
            assert!((a.re - expected).abs() < 1e-14 && a.im.abs() < 1e-14);
        }
        assert!(s.apply_hadamard_all(3..7).is_err());
    }

    #[test]
    fn controlled_phase_semantics() {
        let mut s = Statevector::basis(2, 0b11).unwrap();
        s.apply_controlled_phase(0, 1, 0).unwrap();
        assert!((s.amplitudes()[3] + ONE).norm() < 1e-15);

        let mut t = Statevector::basis(2, 0b10).unwrap();
        t.apply_controlled_phase(0, 1, 0).unwrap();
        assert_eq!(t.amplitudes()[2], ONE);

        assert!(s.apply_controlled_phase(1, 1, 2).is_err());
    }

    #[test]
    fn pauli_exponential_basics() {
        let z = PauliString::single(1, 0, Pauli::Z);
        let mut s = Statevector::zero(1).unwrap();
        s.apply_pauli_exponential(&z, 0.0).unwrap();
        assert_eq!(s.amplitudes()[0], ONE);
        s.apply_pauli_exponential(&z, PI / 2.0).unwrap();
        assert!((s.amplitudes()[0] - Complex64::new(0.0, -1.0)).norm() < 1e-15);
    }

    #[test]
    fn qft_of_zero_is_uniform() {
        let mut s = Statevector::zero(4).unwrap();
        s.qft(0..4).unwrap();
        for a in s.amplitudes() {
            assert!((a - Complex64::new(0.25, 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn qft_gate_count() {
        for n in 1..7 {
            let mut s = Statevector::zero(n).unwrap();
            let c = s.qft(0..n).unwrap();
            assert_eq!(c.hadamard + c.controlled_phase, n * (n + 1) / 2);
            assert_eq!(c.swap, n / 2);
        }
    }

    #[test]
    fn inverse_qft_undoes_qft_on_subrange() {
        let mut rng = RandomStream::new(11);
        let s0 = random_state(6, &mut rng);
        let mut s = s0.clone();
        s.qft(1..5).unwrap();
        s.inverse_qft(1..5).unwrap();
        assert!(close(&s, &s0, 1e-12));
    }

    #[test]
    fn measurement_of_basis_state_is_certain() {
        let mut rng = RandomStream::new(1);
        let mut s = Statevector::zero(1).unwrap();
        assert!(!s.measure(0, &mut rng).unwrap());
    }

    #[test]
    fn post_measurement_state_is_renormalized_projection() {
        let mut rng = RandomStream::new(5);
        let s0 = random_state(3, &mut rng);
        let mut s = s0.clone();
        let bit = s.measure(2, &mut rng).unwrap();
        let mask = 1 << 2;
        let p: f64 = s0
            .amplitudes()
            .iter()
            .enumerate()
            .filter(|(b, _)| ((b & mask) != 0) == bit)
            .map(|(_, a)| a.norm_sqr())
            .sum();
        for (b, a) in s.amplitudes().iter().enumerate() {
            let expect = if ((b & mask) != 0) == bit {
                s0.amplitudes()[b] / p.sqrt()
            } else {
                ZERO
            };
            assert!((a - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn binary_dump_round_trip() {
        let mut rng = RandomStream::new(8);
        let s = random_state(3, &mut rng);
        let mut buf = Vec::new();
        s.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 * 16);
        let back = Statevector::read_binary(&buf[..]).unwrap();
        assert!(close(&s, &back, 1e-15));
    }

    #[test]
    fn fidelity_edge_cases() {
        let a = Statevector::basis(2, 1).unwrap();
        let b = Statevector::basis(2, 2).unwrap();
        assert_eq!(a.fidelity(&a).unwrap(), 1.0);
        assert_eq!(a.fidelity(&b).unwrap(), 0.0);
        let c = Statevector::zero(3).unwrap();
        assert!(a.fidelity(&c).is_err());
    }

    #[test]
    fn rejects_bad_amplitudes() {
        assert!(Statevector::from_amplitudes(vec![ONE; 3]).is_err());
        assert!(Statevector::from_amplitudes(vec![ZERO; 4]).is_err());
        assert!(Statevector::zero(MAX_QUBITS + 1).is_err());
    }
}
