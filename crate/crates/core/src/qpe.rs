//! Ground-state preparation by adiabatic real-time evolution and energy
//! readout by quantum phase estimation.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fermion::{exact_diagonalize, QubitHamiltonian, Sector};
use crate::pauli::PauliString;
use crate::sim::{RandomStream, Statevector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum TrotterOrder {
    First,
    Second,
}

/// Applies `exp(-i H duration)` to `psi` with a product formula of the given
/// order over `steps` equal slices. Shift and scale of `h` are honoured; the
/// shift only contributes a global phase.
pub fn trotter_evolve(
    psi: &mut Statevector,
    h: &QubitHamiltonian,
    duration: f64,
    steps: usize,
    order: TrotterOrder,
) -> Result<()> {
    if steps == 0 {
        return Err(Error::InvalidInput(
            "trotter_evolve needs at least one step".into(),
        ));
    }
    if duration == 0.0 {
        return Ok(());
    }
    let terms = h.effective_terms();
    let dt = duration / steps as f64;
    for _ in 0..steps {
        trotter_step(psi, &terms, dt, order)?;
    }
    Ok(())
}

fn trotter_step(
    psi: &mut Statevector,
    terms: &[PauliString],
    dt: f64,
    order: TrotterOrder,
) -> Result<()> {
    match order {
        TrotterOrder::First => {
            for t in terms {
                psi.apply_pauli_exponential(t, t.coefficient.re * dt)?;
            }
        }
        TrotterOrder::Second => {
            for t in terms {
                psi.apply_pauli_exponential(t, t.coefficient.re * dt / 2.0)?;
            }
            for t in terms.iter().rev() {
                psi.apply_pauli_exponential(t, t.coefficient.re * dt / 2.0)?;
            }
        }
    }
    Ok(())
}

/// Interpolation schedule `lambda(t)` on `[0, t_max]`, piecewise linear
/// through `samples` (`(time, lambda)` pairs).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Schedule {
    samples: Vec<(f64, f64)>,
    steps: usize,
    order: TrotterOrder,
}

impl Schedule {
    pub fn new(samples: Vec<(f64, f64)>, steps: usize, order: TrotterOrder) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InvalidInput(
                "a schedule needs at least two samples".into(),
            ));
        }
        let (t0, l0) = samples[0];
        let (t_max, l_end) = *samples.last().unwrap();
        if t0 != 0.0 || l0 != 0.0 || l_end != 1.0 {
            return Err(Error::InvalidInput(
                "schedule must run from lambda(0) = 0 to lambda(t_max) = 1".into(),
            ));
        }
        if !(t_max >= 0.0) {
            return Err(Error::InvalidInput("t_max must be non-negative".into()));
        }
        for w in samples.windows(2) {
            if w[1].0 < w[0].0 || w[1].1 < w[0].1 {
                return Err(Error::InvalidInput(
                    "schedule samples must be nondecreasing in t and lambda".into(),
                ));
            }
        }
        Ok(Self {
            samples,
            steps,
            order,
        })
    }

    /// `lambda(t) = t / t_max`.
    pub fn linear(t_max: f64, steps: usize, order: TrotterOrder) -> Result<Self> {
        Self::new(vec![(0.0, 0.0), (t_max, 1.0)], steps, order)
    }

    pub fn t_max(&self) -> f64 {
        self.samples.last().unwrap().0
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn order(&self) -> TrotterOrder {
        self.order
    }

    pub fn lambda(&self, t: f64) -> f64 {
        let t_max = self.t_max();
        if t_max == 0.0 || t >= t_max {
            return 1.0;
        }
        if t <= 0.0 {
            return 0.0;
        }
        let i = self.samples.partition_point(|s| s.0 <= t).max(1);
        let (ta, la) = self.samples[i - 1];
        let (tb, lb) = self.samples[i];
        if tb == ta {
            lb
        } else {
            la + (lb - la) * (t - ta) / (tb - ta)
        }
    }
}

/// Terms of `H0 + lambda H1` stored once so the per-step coefficients are a
/// cheap linear update.
struct InterpolatedTerms {
    strings: Vec<PauliString>,
    base: Vec<f64>,
    slope: Vec<f64>,
}

impl InterpolatedTerms {
    fn new(h0: &QubitHamiltonian, h1: &QubitHamiltonian) -> Result<Self> {
        if h0.n_qubits() != h1.n_qubits() {
            return Err(Error::Shape {
                expected: h0.n_qubits(),
                actual: h1.n_qubits(),
            });
        }
        let mut strings: Vec<PauliString> = Vec::new();
        let mut base = Vec::new();
        let mut slope = Vec::new();
        let mut index = std::collections::HashMap::new();
        for (which, h) in [(0, h0), (1, h1)] {
            for t in h.terms() {
                if t.is_identity() {
                    continue;
                }
                let key = (t.x_mask(), t.z_mask());
                let k = *index.entry(key).or_insert_with(|| {
                    strings.push(t.with_coefficient(Complex64::new(1.0, 0.0)));
                    base.push(0.0);
                    slope.push(0.0);
                    strings.len() - 1
                });
                if which == 0 {
                    base[k] += t.coefficient.re;
                } else {
                    slope[k] += t.coefficient.re;
                }
            }
        }
        Ok(Self {
            strings,
            base,
            slope,
        })
    }

    fn step(&self, psi: &mut Statevector, lambda: f64, dt: f64, order: TrotterOrder) -> Result<()> {
        let coeff = |k: usize| self.base[k] + lambda * self.slope[k];
        match order {
            TrotterOrder::First => {
                for (k, s) in self.strings.iter().enumerate() {
                    psi.apply_pauli_exponential(s, coeff(k) * dt)?;
                }
            }
            TrotterOrder::Second => {
                for (k, s) in self.strings.iter().enumerate() {
                    psi.apply_pauli_exponential(s, coeff(k) * dt / 2.0)?;
                }
                for (k, s) in self.strings.iter().enumerate().rev() {
                    psi.apply_pauli_exponential(s, coeff(k) * dt / 2.0)?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RteOutcome {
    pub state: Statevector,
    pub trotter_steps: usize,
    /// Fidelity with the supplied reference ground state, if any.
    pub fidelity: Option<f64>,
    /// Set when the fidelity fell below the requested threshold. The state
    /// is still returned so a caller can warm-start from it.
    pub warning: Option<String>,
}

/// Adiabatic evolution under `H(t) = H0 + lambda(t) H1` from `psi0`.
///
/// Constant identity terms are dropped (global phase). Each slice uses the
/// midpoint value of `lambda`.
pub fn rte_prepare(
    h0: &QubitHamiltonian,
    h1: &QubitHamiltonian,
    schedule: &Schedule,
    psi0: &Statevector,
    reference: Option<&Statevector>,
    fidelity_threshold: f64,
) -> Result<RteOutcome> {
    let terms = InterpolatedTerms::new(h0, h1)?;
    let mut psi = psi0.clone();
    let steps = schedule.steps();
    let t_max = schedule.t_max();
    if steps > 0 && t_max > 0.0 {
        let dt = t_max / steps as f64;
        for n in 0..steps {
            let lambda = schedule.lambda((n as f64 + 0.5) * dt);
            terms.step(&mut psi, lambda, dt, schedule.order())?;
        }
    }
    psi.renormalize();
    let fidelity = reference.map(|r| r.fidelity(&psi)).transpose()?;
    let warning = match fidelity {
        Some(f) if f < fidelity_threshold => Some(format!(
            "prepared state fidelity {f:.6} below threshold {fidelity_threshold}"
        )),
        _ => None,
    };
    Ok(RteOutcome {
        state: psi,
        trotter_steps: steps,
        fidelity,
        warning,
    })
}

/// Smallest number of Trotter slices of width `dt` (linear schedule,
/// `t_max = n dt`) after which the evolved state reaches `threshold`
/// fidelity with `target`. Zero slices means `psi0` already qualifies.
/// Returns `None` if `max_steps` is not enough.
pub fn steps_to_fidelity(
    h0: &QubitHamiltonian,
    h1: &QubitHamiltonian,
    psi0: &Statevector,
    target: &Statevector,
    dt: f64,
    order: TrotterOrder,
    threshold: f64,
    max_steps: usize,
) -> Result<Option<usize>> {
    if target.fidelity(psi0)? >= threshold {
        return Ok(Some(0));
    }
    for n in 1..=max_steps {
        let schedule = Schedule::linear(n as f64 * dt, n, order)?;
        let out = rte_prepare(h0, h1, &schedule, psi0, Some(target), threshold)?;
        if out.fidelity.unwrap_or(0.0) >= threshold {
            return Ok(Some(n));
        }
    }
    Ok(None)
}

/// How the controlled powers of the phase-estimation unitary are realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpeUnitary {
    /// Exact spectral exponential of the system Hamiltonian.
    Exact,
    /// Second-order product formula with the given slices per unit phase
    /// turn; powers `2^j` use `2^j` times as many slices.
    Trotter { slices: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpeConfig {
    pub t_bits: usize,
    /// Odd number of phase-estimation runs; the reported phase is their
    /// median.
    pub repetitions: usize,
    pub unitary: QpeUnitary,
}

impl QpeConfig {
    pub fn new(t_bits: usize) -> Self {
        Self {
            t_bits,
            repetitions: 1,
            unitary: QpeUnitary::Exact,
        }
    }

    pub fn with_repetitions(mut self, r: usize) -> Self {
        self.repetitions = r;
        self
    }
}

/// Evolution time used by phase estimation: the controlled unitary is
/// `exp(+i H_scaled t_evo)` with `t_evo = 2 pi (1 - 2^-t)`, so a scaled
/// spectrum in `[0, 1]` maps to phases in `[0, 1 - 2^-t]` with no
/// wraparound.
pub fn evolution_time(t_bits: usize) -> f64 {
    2.0 * PI * (1.0 - 0.5f64.powi(t_bits as i32))
}

/// Inverts the recorded scaling: `phase -> scaled eigenvalue -> energy`.
pub fn phase_to_energy(phase: f64, shift: f64, scale: f64, t_evo: f64) -> f64 {
    let scaled = 2.0 * PI * phase / t_evo;
    scaled * scale - shift
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseReadout {
    pub t_bits: usize,
    /// Register value of the reported (median) run.
    pub register: usize,
    pub phase: f64,
    pub energy: f64,
    /// Born probability of `register` in the first run.
    pub outcome_probability: f64,
    /// Phases from every repetition, in run order.
    pub phases: Vec<f64>,
    pub shift: f64,
    pub scale: f64,
    pub t_evo: f64,
}

/// Spectral data for applying `exp(i H t)` exactly on the system register.
struct SpectralPropagator {
    vectors: DMatrix<Complex64>,
    values: Vec<f64>,
}

impl SpectralPropagator {
    fn new(h: &QubitHamiltonian) -> Result<Self> {
        let spec = exact_diagonalize(h, &Sector::all())?;
        let dim = 1usize << h.n_qubits();
        let mut vectors = DMatrix::<Complex64>::zeros(dim, dim);
        for k in 0..dim {
            let v = spec.state(k);
            for (r, a) in v.amplitudes().iter().enumerate() {
                vectors[(r, k)] = *a;
            }
        }
        Ok(Self {
            vectors,
            values: spec.eigenvalues().to_vec(),
        })
    }

    /// `block <- V diag(exp(i angle lambda_k)) V^dagger block`.
    fn apply(&self, block: &mut [Complex64], angle: f64) {
        let dim = self.values.len();
        let mut coeffs = vec![Complex64::new(0.0, 0.0); dim];
        for (k, c) in coeffs.iter_mut().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for r in 0..dim {
                acc += self.vectors[(r, k)].conj() * block[r];
            }
            *c = acc * Complex64::from_polar(1.0, angle * self.values[k]);
        }
        for (r, out) in block.iter_mut().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..dim {
                acc += self.vectors[(r, k)] * coeffs[k];
            }
            *out = acc;
        }
    }
}

/// Phase-estimation circuit on `system ⊗ ancilla` for a scaled
/// Hamiltonian. Holds the precomputed propagator so repeated runs reuse it.
pub struct PhaseEstimator {
    h: QubitHamiltonian,
    config: QpeConfig,
    propagator: Option<SpectralPropagator>,
}

impl PhaseEstimator {
    pub fn new(h: &QubitHamiltonian, config: QpeConfig) -> Result<Self> {
        if config.t_bits < 1 {
            return Err(Error::InvalidInput(
                "phase estimation needs t_bits >= 1".into(),
            ));
        }
        if config.repetitions == 0 || config.repetitions.is_multiple_of(2) {
            return Err(Error::InvalidInput(
                "repetitions must be a positive odd number".into(),
            ));
        }
        let propagator = match config.unitary {
            QpeUnitary::Exact => Some(SpectralPropagator::new(h)?),
            QpeUnitary::Trotter { slices } => {
                if slices == 0 {
                    return Err(Error::InvalidInput(
                        "Trotter QPE needs at least one slice".into(),
                    ));
                }
                None
            }
        };
        Ok(Self {
            h: h.clone(),
            config,
            propagator,
        })
    }

    pub fn config(&self) -> &QpeConfig {
        &self.config
    }

    /// Controlled `exp(+i H t_evo)` powers, or their inverse when `sign`
    /// is negative, on `system ⊗ ancilla`.
    fn controlled_evolution(&self, full: &mut Statevector, s: usize, sign: f64) -> Result<()> {
        let t = self.config.t_bits;
        let t_evo = evolution_time(t);
        let block = 1usize << s;
        let mut scratch = Statevector::zero(s)?;
        let mut run_chunk =
            |full: &mut Statevector,
             a: usize,
             f: &mut dyn FnMut(&mut Statevector) -> Result<()>| {
                let range = a * block..(a + 1) * block;
                let chunk = &full.amplitudes()[range.clone()];
                if chunk.iter().all(|c| c.norm_sqr() == 0.0) {
                    return Ok(());
                }
                scratch.amplitudes_mut().copy_from_slice(chunk);
                f(&mut scratch)?;
                full.amplitudes_mut()[range].copy_from_slice(scratch.amplitudes());
                Ok::<(), Error>(())
            };
        match (&self.propagator, self.config.unitary) {
            (Some(p), _) => {
                // The controlled powers commute, so ancilla value a
                // receives U^a in one shot.
                for a in 1..(1usize << t) {
                    run_chunk(full, a, &mut |b: &mut Statevector| {
                        p.apply(b.amplitudes_mut(), sign * t_evo * a as f64);
                        Ok(())
                    })?;
                }
            }
            (None, QpeUnitary::Trotter { slices }) => {
                for j in 0..t {
                    let power = 1usize << j;
                    for a in 0..(1usize << t) {
                        if a & power == 0 {
                            continue;
                        }
                        // exp(+i H t) = exp(-i H (-t))
                        run_chunk(full, a, &mut |b: &mut Statevector| {
                            trotter_evolve(
                                b,
                                &self.h,
                                -sign * t_evo * power as f64,
                                slices * power,
                                TrotterOrder::Second,
                            )
                        })?;
                    }
                }
            }
            (None, QpeUnitary::Exact) => unreachable!("exact propagator is always built"),
        }
        Ok(())
    }

    /// Unitary part of the circuit: Hadamards, controlled powers and the
    /// inverse QFT. The ancilla register occupies the high qubits.
    pub(crate) fn forward(&self, psi: &Statevector) -> Result<Statevector> {
        let s = psi.n_qubits();
        let t = self.config.t_bits;
        let mut full = psi.tensor(&Statevector::zero(t)?)?;
        full.apply_hadamard_all(s..s + t)?;
        self.controlled_evolution(&mut full, s, 1.0)?;
        full.inverse_qft(s..s + t)?;
        Ok(full)
    }

    /// Inverse of [`Self::forward`] applied to an arbitrary joint state.
    pub(crate) fn backward(&self, full: &mut Statevector) -> Result<()> {
        let t = self.config.t_bits;
        let s = full.n_qubits() - t;
        full.qft(s..s + t)?;
        self.controlled_evolution(full, s, -1.0)?;
        full.apply_hadamard_all(s..s + t)?;
        Ok(())
    }

    /// One circuit run. Returns the register value, the register
    /// distribution before measurement and the post-measurement system
    /// state.
    fn run_once(
        &self,
        psi: &Statevector,
        rng: &mut RandomStream,
    ) -> Result<(usize, Vec<f64>, Statevector)> {
        let s = psi.n_qubits();
        let t = self.config.t_bits;
        let block = 1usize << s;
        let mut full = self.forward(psi)?;
        let dist = full.register_distribution(s..s + t)?;
        let k = full.measure_register(s..s + t, rng)?;
        let post =
            Statevector::from_amplitudes(full.amplitudes()[k * block..(k + 1) * block].to_vec())?;
        Ok((k, dist, post))
    }

    /// Runs phase estimation `repetitions` times on the evolving system
    /// state and reports the median phase.
    pub fn estimate(
        &self,
        psi: &Statevector,
        rng: &mut RandomStream,
    ) -> Result<(PhaseReadout, Statevector)> {
        if psi.n_qubits() != self.h.n_qubits() {
            return Err(Error::Shape {
                expected: self.h.n_qubits(),
                actual: psi.n_qubits(),
            });
        }
        let t = self.config.t_bits;
        let mut state = psi.clone();
        let mut registers = Vec::with_capacity(self.config.repetitions);
        let mut first_dist = None;
        for _ in 0..self.config.repetitions {
            let (k, dist, post) = self.run_once(&state, rng)?;
            registers.push(k);
            first_dist.get_or_insert(dist);
            state = post;
        }
        let mut sorted = registers.clone();
        sorted.sort_unstable();
        let k = sorted[sorted.len() / 2];
        let phase = k as f64 / (1usize << t) as f64;
        let t_evo = evolution_time(t);
        let readout = PhaseReadout {
            t_bits: t,
            register: k,
            phase,
            energy: phase_to_energy(phase, self.h.shift(), self.h.scale(), t_evo),
            outcome_probability: first_dist.unwrap()[k],
            phases: registers
                .iter()
                .map(|&r| r as f64 / (1usize << t) as f64)
                .collect(),
            shift: self.h.shift(),
            scale: self.h.scale(),
            t_evo,
        };
        Ok((readout, state))
    }
}

/// One-shot convenience wrapper around [`PhaseEstimator`].
pub fn qpe(
    psi: &Statevector,
    h: &QubitHamiltonian,
    config: QpeConfig,
    rng: &mut RandomStream,
) -> Result<(PhaseReadout, Statevector)> {
    PhaseEstimator::new(h, config)?.estimate(psi, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fermion::{build_hubbard, jordan_wigner, shift_and_scale, BoundMethod};
    use crate::pauli::Pauli;

    fn dimer(u: f64, v: [f64; 2]) -> QubitHamiltonian {
        jordan_wigner(&build_hubbard(2, 1.0, u, &v).unwrap()).unwrap()
    }

    fn dense_expm_apply(h: &QubitHamiltonian, psi: &Statevector, time: f64) -> Statevector {
        let spec = exact_diagonalize(h, &Sector::all()).unwrap();
        let mut out = vec![Complex64::new(0.0, 0.0); psi.dim()];
        for k in 0..spec.len() {
            let v = spec.state(k);
            let overlap = v.inner(psi).unwrap();
            let phase = Complex64::from_polar(1.0, -spec.eigenvalues()[k] * time);
            for (o, a) in out.iter_mut().zip(v.amplitudes()) {
                *o += a * overlap * phase;
            }
        }
        Statevector::from_amplitudes(out).unwrap()
    }

    fn distance(a: &Statevector, b: &Statevector) -> f64 {
        a.amplitudes()
            .iter()
            .zip(b.amplitudes())
            .map(|(x, y)| (x - y).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    #[test]
    fn commuting_terms_are_exact_for_one_step() {
        let h = QubitHamiltonian::from_terms(
            2,
            vec![
                PauliString::parse(Complex64::new(0.3, 0.0), "ZI").unwrap(),
                PauliString::parse(Complex64::new(-0.8, 0.0), "ZZ").unwrap(),
                PauliString::parse(Complex64::new(0.5, 0.0), "IZ").unwrap(),
            ],
        )
        .unwrap();
        let mut psi = Statevector::zero(2).unwrap();
        psi.apply_hadamard_all(0..2).unwrap();
        let exact = dense_expm_apply(&h, &psi, 1.7);
        let mut approx = psi.clone();
        trotter_evolve(&mut approx, &h, 1.7, 1, TrotterOrder::First).unwrap();
        assert!(distance(&exact, &approx) < 1e-12);
    }

    #[test]
    fn zero_duration_is_identity() {
        let h = dimer(4.0, [0.0, 0.0]);
        let psi = Statevector::basis(4, 0b0110).unwrap();
        let mut out = psi.clone();
        trotter_evolve(&mut out, &h, 0.0, 3, TrotterOrder::Second).unwrap();
        assert_eq!(out, psi);
        assert!(trotter_evolve(&mut out, &h, 1.0, 0, TrotterOrder::Second).is_err());
    }

    #[test]
    fn second_order_error_scales_quadratically() {
        let h = dimer(4.0, [0.3, -0.3]);
        let psi = Statevector::basis(4, 0b0110).unwrap();
        let exact = dense_expm_apply(&h, &psi, 1.0);
        let err = |steps| {
            let mut s = psi.clone();
            trotter_evolve(&mut s, &h, 1.0, steps, TrotterOrder::Second).unwrap();
            // compare up to global phase
            let ov = exact.inner(&s).unwrap();
            let phase = ov / ov.norm();
            exact
                .amplitudes()
                .iter()
                .zip(s.amplitudes())
                .map(|(a, b)| (a * phase - b).norm_sqr())
                .sum::<f64>()
                .sqrt()
        };
        let e1 = err(8);
        let e2 = err(16);
        let ratio = e1 / e2;
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn schedule_validation_and_interpolation() {
        let s = Schedule::new(
            vec![(0.0, 0.0), (1.0, 0.2), (3.0, 1.0)],
            10,
            TrotterOrder::Second,
        )
        .unwrap();
        assert!((s.lambda(0.5) - 0.1).abs() < 1e-15);
        assert!((s.lambda(2.0) - 0.6).abs() < 1e-15);
        assert_eq!(s.lambda(5.0), 1.0);
        assert!(Schedule::new(vec![(0.0, 0.1), (1.0, 1.0)], 1, TrotterOrder::First).is_err());
        assert!(Schedule::new(
            vec![(0.0, 0.0), (1.0, 0.7), (2.0, 0.5), (3.0, 1.0)],
            1,
            TrotterOrder::First
        )
        .is_err());
    }

    #[test]
    fn no_interaction_returns_initial_state() {
        let h0 = dimer(0.0, [0.0, 0.0]);
        let gs = exact_diagonalize(&h0, &Sector::spin_resolved(1, 1))
            .unwrap()
            .ground_state();
        let h1 = QubitHamiltonian::zero(4);
        let out = rte_prepare(
            &h0,
            &h1,
            &Schedule::linear(5.0, 50, TrotterOrder::Second).unwrap(),
            &gs,
            Some(&gs),
            0.99,
        )
        .unwrap();
        assert!(out.fidelity.unwrap() > 1.0 - 1e-12);
        assert!(out.warning.is_none());
    }

    #[test]
    fn slow_ramp_reaches_interacting_ground_state() {
        let h0 = dimer(0.0, [0.0, 0.0]);
        let h_full = dimer(4.0, [0.0, 0.0]);
        let h1 = h_full.linear_combination(1.0, &h0, -1.0).unwrap();
        let psi0 = exact_diagonalize(&h0, &Sector::spin_resolved(1, 1))
            .unwrap()
            .ground_state();
        let target = exact_diagonalize(&h_full, &Sector::spin_resolved(1, 1))
            .unwrap()
            .ground_state();
        let out = rte_prepare(
            &h0,
            &h1,
            &Schedule::linear(20.0, 400, TrotterOrder::Second).unwrap(),
            &psi0,
            Some(&target),
            0.99,
        )
        .unwrap();
        assert!(out.fidelity.unwrap() >= 0.99, "{:?}", out.fidelity);
    }

    #[test]
    fn sudden_quench_keeps_initial_overlap() {
        let h0 = dimer(0.0, [0.0, 0.0]);
        let h_full = dimer(4.0, [0.0, 0.0]);
        let h1 = h_full.linear_combination(1.0, &h0, -1.0).unwrap();
        let psi0 = exact_diagonalize(&h0, &Sector::spin_resolved(1, 1))
            .unwrap()
            .ground_state();
        let target = exact_diagonalize(&h_full, &Sector::spin_resolved(1, 1))
            .unwrap()
            .ground_state();
        // A zero-length ramp is a sudden quench: the state is untouched.
        let out = rte_prepare(
            &h0,
            &h1,
            &Schedule::linear(0.0, 1, TrotterOrder::Second).unwrap(),
            &psi0,
            Some(&target),
            0.0,
        )
        .unwrap();
        let overlap = psi0.fidelity(&target).unwrap();
        assert!((out.fidelity.unwrap() - overlap).abs() < 1e-12);
    }

    #[test]
    fn exact_binary_phase_read_with_certainty() {
        // H = (1 - Z)/2 * 5/8 / s has eigenvalue 5/(8 s) on |1>, so the
        // phase is exactly 5/8 with three bits.
        let t = 3;
        let s = 1.0 - 0.5f64.powi(t as i32);
        let c = 5.0 / 8.0 / s;
        let h = QubitHamiltonian::from_terms(
            1,
            vec![
                PauliString::identity(1).with_coefficient(Complex64::new(c / 2.0, 0.0)),
                PauliString::single(1, 0, Pauli::Z).with_coefficient(Complex64::new(-c / 2.0, 0.0)),
            ],
        )
        .unwrap();
        let psi = Statevector::basis(1, 1).unwrap();
        let mut rng = RandomStream::new(1);
        let (r, post) = qpe(&psi, &h, QpeConfig::new(t), &mut rng).unwrap();
        assert_eq!(r.register, 5);
        assert!((r.outcome_probability - 1.0).abs() < 1e-12);
        assert!(post.fidelity(&psi).unwrap() > 1.0 - 1e-12);
    }

    #[test]
    fn trotter_unitary_agrees_on_exact_phase() {
        let t = 3;
        let s = 1.0 - 0.5f64.powi(t as i32);
        let c = 3.0 / 8.0 / s;
        let h = QubitHamiltonian::from_terms(
            1,
            vec![
                PauliString::identity(1).with_coefficient(Complex64::new(c / 2.0, 0.0)),
                PauliString::single(1, 0, Pauli::Z).with_coefficient(Complex64::new(-c / 2.0, 0.0)),
            ],
        )
        .unwrap();
        let cfg = QpeConfig {
            t_bits: t,
            repetitions: 1,
            unitary: QpeUnitary::Trotter { slices: 4 },
        };
        let mut rng = RandomStream::new(2);
        let (r, _) = qpe(&Statevector::basis(1, 1).unwrap(), &h, cfg, &mut rng).unwrap();
        assert_eq!(r.register, 3);
    }

    #[test]
    fn refuses_zero_bits() {
        let h = QubitHamiltonian::zero(1);
        assert!(PhaseEstimator::new(&h, QpeConfig::new(0)).is_err());
        assert!(PhaseEstimator::new(&h, QpeConfig::new(3).with_repetitions(2)).is_err());
    }

    #[test]
    fn phase_energy_conversions() {
        assert_eq!(phase_to_energy(0.0, 1.5, 4.0, 2.0), -1.5);
        let t_evo = evolution_time(6);
        let h = shift_and_scale(&dimer(4.0, [0.0, 0.0]), 0.0, BoundMethod::Exact).unwrap();
        let e = -0.7;
        let phase = h.scale_energy(e) * t_evo / (2.0 * PI);
        assert!((phase_to_energy(phase, h.shift(), h.scale(), t_evo) - e).abs() < 1e-12);
    }

    #[test]
    fn dimer_ground_energy_from_qpe() {
        let raw = dimer(4.0, [0.0, 0.0]);
        let h = shift_and_scale(&raw, 0.0, BoundMethod::Exact).unwrap();
        let spec = exact_diagonalize(&raw, &Sector::spin_resolved(1, 1)).unwrap();
        let gs = spec.ground_state();
        let mut rng = RandomStream::new(17);
        let (r, post) = qpe(&gs, &h, QpeConfig::new(10).with_repetitions(5), &mut rng).unwrap();
        assert!(
            (r.energy - spec.ground_energy()).abs() <= h.scale() / 1024.0,
            "{} vs {}",
            r.energy,
            spec.ground_energy()
        );
        assert!(post.fidelity(&gs).unwrap() > 1.0 - 1e-10);
    }

    #[test]
    fn mixed_eigenstates_split_readout() {
        // Equal superposition of |0> and |1> under H = (1 - Z)/2 scaled to
        // exact phases 0 and 4/8.
        let t = 3;
        let s = 1.0 - 0.5f64.powi(t as i32);
        let c = 0.5 / s;
        let h = QubitHamiltonian::from_terms(
            1,
            vec![
                PauliString::identity(1).with_coefficient(Complex64::new(c / 2.0, 0.0)),
                PauliString::single(1, 0, Pauli::Z).with_coefficient(Complex64::new(-c / 2.0, 0.0)),
            ],
        )
        .unwrap();
        let mut psi = Statevector::zero(1).unwrap();
        psi.apply_hadamard(0).unwrap();
        let est = PhaseEstimator::new(&h, QpeConfig::new(t)).unwrap();
        let mut rng = RandomStream::new(99);
        let shots = 4000;
        let mut zeros = 0;
        for _ in 0..shots {
            let (r, post) = est.estimate(&psi, &mut rng).unwrap();
            match r.register {
                0 => {
                    zeros += 1;
                    assert!(
                        post.fidelity(&Statevector::basis(1, 0).unwrap()).unwrap() > 1.0 - 1e-12
                    );
                }
                4 => {}
                other => panic!("unexpected register {other}"),
            }
        }
        let frac = zeros as f64 / shots as f64;
        assert!(
            (frac - 0.5).abs() < 4.0 * (0.25 / shots as f64).sqrt(),
            "{frac}"
        );
    }
}
