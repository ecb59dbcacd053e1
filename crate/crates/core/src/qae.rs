//! State-preserving expectation counting.
//!
//! Each round measures the two-outcome projector pair `{(1+P)/2, (1-P)/2}`
//! for a Hermitian involution `P`, tallies the `+` outcomes, then checks
//! whether the reference eigenstate survived. If it did not, a repair
//! procedure steers the register back. The acceptance ratio estimates
//! `(<P> + 1)/2`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fermion::{
    exact_diagonalize, one_body_operator, QubitHamiltonian, Sector, Spin, DEGENERACY_TOL,
};
use crate::pauli::{PauliString, PauliSum};
use crate::qpe::{PhaseEstimator, QpeConfig};
use crate::sim::{RandomStream, Statevector};

const C0: Complex64 = Complex64::new(0.0, 0.0);
const C1: Complex64 = Complex64::new(1.0, 0.0);

/// Hermitian operator squaring to the identity.
pub trait Involution {
    fn apply(&self, psi: &Statevector) -> Result<Statevector>;
    fn label(&self) -> String;
}

impl Involution for PauliString {
    fn apply(&self, psi: &Statevector) -> Result<Statevector> {
        let mut out = psi.clone();
        out.apply_pauli(&self.with_coefficient(C1))?;
        Ok(out)
    }

    fn label(&self) -> String {
        PauliString::label(self)
    }
}

/// `G Z_k G^dagger` where `G` is the Fock-space image of a single-particle
/// unitary: the parity of mode `k` of the rotated orbital basis.
#[derive(Debug, Clone)]
pub struct RotatedParity {
    rotation: DMatrix<Complex64>,
    mode: usize,
}

impl RotatedParity {
    /// `rotation` columns are the new orbitals in the old mode basis.
    pub fn new(rotation: DMatrix<Complex64>, mode: usize) -> Result<Self> {
        let n = rotation.nrows();
        if rotation.ncols() != n || mode >= n {
            return Err(Error::InvalidInput(
                "rotation must be square and contain the mode".into(),
            ));
        }
        let defect = (rotation.adjoint() * &rotation - DMatrix::<Complex64>::identity(n, n)).norm();
        if defect > 1e-10 {
            return Err(Error::InvalidInput(format!(
                "orbital rotation is not unitary (defect {defect:.2e})"
            )));
        }
        Ok(Self { rotation, mode })
    }
}

impl Involution for RotatedParity {
    fn apply(&self, psi: &Statevector) -> Result<Statevector> {
        let mut rotated = orbital_rotation(psi, &self.rotation.adjoint())?;
        rotated.apply_pauli(&PauliString::single(
            psi.n_qubits(),
            self.mode,
            crate::pauli::Pauli::Z,
        ))?;
        orbital_rotation(&rotated, &self.rotation)
    }

    fn label(&self) -> String {
        format!("rotated-Z{}", self.mode)
    }
}

/// Applies the Fock-space unitary `G` with `G c+_k G^dagger = sum_i u_ik c+_i`.
pub fn orbital_rotation(psi: &Statevector, u: &DMatrix<Complex64>) -> Result<Statevector> {
    let n = psi.n_qubits();
    if u.nrows() != n || u.ncols() != n {
        return Err(Error::Shape {
            expected: n,
            actual: u.nrows(),
        });
    }
    let dim = psi.dim();
    let mut out = vec![C0; dim];
    let mut cur = vec![C0; dim];
    let mut next = vec![C0; dim];
    for (b, &amp) in psi.amplitudes().iter().enumerate() {
        if amp == C0 {
            continue;
        }
        cur.fill(C0);
        cur[0] = amp;
        // |b> = c+_{m1} c+_{m2} ... |vac> with m1 < m2 < ...; apply the
        // rightmost factor first.
        for m in (0..n).rev().filter(|m| b >> m & 1 == 1) {
            next.fill(C0);
            for (s, &c) in cur.iter().enumerate() {
                if c == C0 {
                    continue;
                }
                for i in 0..n {
                    if s >> i & 1 == 1 {
                        continue;
                    }
                    let w = u[(i, m)];
                    if w == C0 {
                        continue;
                    }
                    let sign = if (s & ((1 << i) - 1)).count_ones() % 2 == 1 {
                        -1.0
                    } else {
                        1.0
                    };
                    next[s | 1 << i] += c * w * sign;
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        for (o, c) in out.iter_mut().zip(&cur) {
            *o += c;
        }
    }
    Statevector::from_amplitudes(out)
}

/// How the "is the register still the reference state?" check is realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum QaeMode {
    /// Direct projective measurement `{|psi><psi|, 1 - |psi><psi|}`.
    Collapse,
    /// Phase estimation of the register onto a `check_bits` register,
    /// compared against the saved energy; a pointer qubit records equality,
    /// then the estimation is uncomputed and the check register discarded.
    Full { check_bits: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QaeConfig {
    pub rounds: usize,
    pub epsilon: f64,
    pub mode: QaeMode,
}

impl QaeConfig {
    pub fn new(rounds: usize, epsilon: f64) -> Self {
        Self {
            rounds,
            epsilon,
            mode: QaeMode::Collapse,
        }
    }

    pub fn with_mode(mut self, mode: QaeMode) -> Self {
        self.mode = mode;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::InvalidInput("rounds must be positive".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidInput(format!(
                "epsilon must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        if let QaeMode::Full { check_bits } = self.mode {
            if check_bits == 0 {
                return Err(Error::InvalidInput("check_bits must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QaeEstimate {
    pub label: String,
    /// `2 accepted / rounds - 1`.
    pub value: f64,
    pub accepted: usize,
    pub rounds: usize,
    /// Standard error of `value` from the binomial variance.
    pub stderr: f64,
    pub repair_iterations: usize,
    pub repair_events: usize,
    pub epsilon: f64,
}

impl QaeEstimate {
    fn new(
        label: String,
        accepted: usize,
        rounds: usize,
        repair_iterations: usize,
        repair_events: usize,
        epsilon: f64,
    ) -> Self {
        let value = 2.0 * (accepted as f64 / rounds as f64) - 1.0;
        Self {
            label,
            value,
            accepted,
            rounds,
            stderr: ((1.0 - value * value).max(0.0) / rounds as f64).sqrt(),
            repair_iterations,
            repair_events,
            epsilon,
        }
    }
}

/// A nondegenerate eigenstate of a recorded Hamiltonian, the state the
/// counting rounds must hand back.
#[derive(Debug, Clone)]
pub struct ReferenceState {
    state: Statevector,
    hamiltonian: QubitHamiltonian,
    energy: f64,
}

impl ReferenceState {
    /// Verifies that `psi` is an eigenstate of `h` whose level is not shared
    /// by any other state of the full register.
    pub fn new(h: &QubitHamiltonian, psi: &Statevector) -> Result<Self> {
        if h.n_qubits() != psi.n_qubits() {
            return Err(Error::Shape {
                expected: h.n_qubits(),
                actual: psi.n_qubits(),
            });
        }
        let energy = h.expectation(psi.amplitudes());
        let hpsi = h.apply(psi.amplitudes());
        let residual: f64 = hpsi
            .iter()
            .zip(psi.amplitudes())
            .map(|(a, b)| (a - b * energy).norm_sqr())
            .sum::<f64>()
            .sqrt();
        if residual > 1e-8 {
            return Err(Error::InvalidInput(format!(
                "reference state is not an eigenstate (residual {residual:.2e})"
            )));
        }
        let spectrum = exact_diagonalize(h, &Sector::all())?;
        let same = spectrum
            .eigenvalues()
            .iter()
            .filter(|e| (*e - energy).abs() < DEGENERACY_TOL.max(1e-8))
            .count();
        if same > 1 {
            return Err(Error::Degenerate(format!(
                "level {energy} has multiplicity {same}; the repair loop needs a unique reference"
            )));
        }
        Ok(Self {
            state: psi.clone(),
            hamiltonian: h.clone(),
            energy,
        })
    }

    pub fn state(&self) -> &Statevector {
        &self.state
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    /// Number of particles, if the reference has a definite one.
    pub fn particle_number(&self) -> Option<usize> {
        let probs = self.state.probabilities();
        let mean: f64 = probs
            .iter()
            .enumerate()
            .map(|(b, p)| p * b.count_ones() as f64)
            .sum();
        let n = mean.round();
        let spread: f64 = probs
            .iter()
            .enumerate()
            .map(|(b, p)| p * (b.count_ones() as f64 - n).powi(2))
            .sum();
        (spread < 1e-9).then_some(n as usize)
    }
}

enum Checker {
    Collapse,
    Full(Box<PhaseEstimator>),
}

/// Counting engine bound to one reference state and configuration.
pub struct Counter<'a> {
    reference: &'a ReferenceState,
    config: QaeConfig,
    checker: Checker,
}

impl<'a> Counter<'a> {
    pub fn new(reference: &'a ReferenceState, config: QaeConfig) -> Result<Self> {
        config.validate()?;
        let checker = match config.mode {
            QaeMode::Collapse => Checker::Collapse,
            QaeMode::Full { check_bits } => {
                // Place the reference level on phase 0 and the top of the
                // spectrum at phase 1/2, so the neighbours of the reference
                // bin on the phase circle are far from every other level.
                let h = &reference.hamiltonian;
                let spec = exact_diagonalize(h, &Sector::all())?;
                let raw = |e: f64| e * h.scale() - h.shift();
                let e_ref = raw(reference.energy);
                let e_top = raw(*spec.eigenvalues().last().unwrap());
                let mut width = 2.0 * (e_top - e_ref);
                if width <= 0.0 {
                    width = 1.0;
                }
                let check = h.with_scaling(-e_ref, width)?;
                Checker::Full(Box::new(PhaseEstimator::new(
                    &check,
                    QpeConfig::new(check_bits),
                )?))
            }
        };
        Ok(Self {
            reference,
            config,
            checker,
        })
    }

    /// Projective test for the reference state. Returns whether it fired and
    /// the post-measurement register.
    fn check(&self, s: &Statevector, rng: &mut RandomStream) -> Result<(bool, Statevector)> {
        match &self.checker {
            Checker::Collapse => {
                let psi = &self.reference.state;
                let ov = psi.inner(s)?;
                if rng.bernoulli(ov.norm_sqr()) {
                    return Ok((true, psi.clone()));
                }
                Ok((false, remove_component(s, psi, ov)?))
            }
            Checker::Full(est) => {
                let n = s.n_qubits();
                let bits = est.config().t_bits;
                let block = 1usize << n;
                let mut full = est.forward(s)?;
                // The saved energy register holds bin 0; the pointer is set
                // when the check register equals it.
                let p_equal: f64 = full.amplitudes()[..block]
                    .iter()
                    .map(|a| a.norm_sqr())
                    .sum();
                let fired = rng.bernoulli(p_equal);
                {
                    let amps = full.amplitudes_mut();
                    if fired {
                        amps[block..].fill(C0);
                    } else {
                        amps[..block].fill(C0);
                    }
                }
                full.renormalize();
                est.backward(&mut full)?;
                let k = full.measure_register(n..n + bits, rng)?;
                let post = Statevector::from_amplitudes(
                    full.amplitudes()[k * block..(k + 1) * block].to_vec(),
                )?;
                Ok((fired, post))
            }
        }
    }

    /// Two-outcome measurement of `(1 +- P)/2`; returns `true` on `+`.
    fn measure_involution<O: Involution + ?Sized>(
        &self,
        op: &O,
        s: &mut Statevector,
        rng: &mut RandomStream,
    ) -> Result<bool> {
        let ps = op.apply(s)?;
        let plus: Vec<Complex64> = s
            .amplitudes()
            .iter()
            .zip(ps.amplitudes())
            .map(|(a, b)| (a + b) * 0.5)
            .collect();
        let p_plus: f64 = plus.iter().map(|a| a.norm_sqr()).sum();
        let accept = rng.bernoulli(p_plus);
        let amps = if accept {
            plus
        } else {
            s.amplitudes()
                .iter()
                .zip(ps.amplitudes())
                .map(|(a, b)| (a - b) * 0.5)
                .collect()
        };
        *s = Statevector::from_amplitudes(amps)?;
        Ok(accept)
    }

    /// Drives `s` back to the reference. First a dragging sweep of
    /// `ceil(1/epsilon)` projections along the great circle from `s` to the
    /// reference, the last of which is the reference check itself; if any
    /// projection misses, alternate the involution measurement with the
    /// check. Returns the number of projections spent.
    fn repair<O: Involution + ?Sized>(
        &self,
        op: &O,
        s: &mut Statevector,
        rng: &mut RandomStream,
    ) -> Result<usize> {
        let eps = self.config.epsilon;
        let limit = (10.0 / eps).ceil() as usize;
        let sweep = (1.0 / eps).ceil() as usize;
        let psi = &self.reference.state;
        let mut iterations = 0;

        let ov = psi.inner(s)?;
        let theta = ov.norm().min(1.0).acos();
        let aligned = if ov.norm() > 0.0 { ov / ov.norm() } else { C1 };
        let chi = if theta > 0.0 {
            Some(remove_component(s, psi, ov)?)
        } else {
            None
        };
        let mut on_track = true;
        for j in 1..sweep {
            iterations += 1;
            let Some(chi) = &chi else { break };
            let angle = theta * (1.0 - j as f64 / sweep as f64);
            let target: Vec<Complex64> = psi
                .amplitudes()
                .iter()
                .zip(chi.amplitudes())
                .map(|(p, c)| p * aligned * angle.cos() + c * angle.sin())
                .collect();
            let target = Statevector::from_amplitudes(target)?;
            let t_ov = target.inner(s)?;
            if rng.bernoulli(t_ov.norm_sqr()) {
                *s = target;
            } else {
                *s = remove_component(s, &target, t_ov)?;
                on_track = false;
                break;
            }
        }
        if on_track {
            iterations += 1;
            let (fired, post) = self.check(s, rng)?;
            *s = post;
            if fired {
                return Ok(iterations);
            }
        }
        while iterations < limit {
            iterations += 1;
            self.measure_involution(op, s, rng)?;
            let (fired, post) = self.check(s, rng)?;
            *s = post;
            if fired {
                return Ok(iterations);
            }
        }
        Err(Error::RepairExhausted {
            limit,
            epsilon: eps,
        })
    }

    /// Counts one involution on the (evolving) register `s`.
    pub fn count<O: Involution + ?Sized>(
        &self,
        op: &O,
        s: &mut Statevector,
        rng: &mut RandomStream,
    ) -> Result<QaeEstimate> {
        let mut accepted = 0;
        let mut repair_iterations = 0;
        let mut repair_events = 0;
        for _ in 0..self.config.rounds {
            if self.measure_involution(op, s, rng)? {
                accepted += 1;
            }
            let (fired, post) = self.check(s, rng)?;
            *s = post;
            if !fired {
                repair_events += 1;
                repair_iterations += self.repair(op, s, rng)?;
            }
        }
        Ok(QaeEstimate::new(
            op.label(),
            accepted,
            self.config.rounds,
            repair_iterations,
            repair_events,
            self.config.epsilon,
        ))
    }
}

/// `(s - ov * psi) / ||...||`, the branch left after a failed projection
/// onto `psi`.
fn remove_component(s: &Statevector, psi: &Statevector, ov: Complex64) -> Result<Statevector> {
    let amps: Vec<Complex64> = s
        .amplitudes()
        .iter()
        .zip(psi.amplitudes())
        .map(|(a, p)| a - p * ov)
        .collect();
    Statevector::from_amplitudes(amps)
}

/// Counts `<psi|P|psi>` for one Pauli string and returns the estimate with
/// the repaired register.
pub fn pauli_expectation_counting(
    reference: &ReferenceState,
    p: &PauliString,
    config: QaeConfig,
    rng: &mut RandomStream,
) -> Result<(QaeEstimate, Statevector)> {
    let counter = Counter::new(reference, config)?;
    let mut s = reference.state.clone();
    let est = counter.count(p, &mut s, rng)?;
    Ok((est, s))
}

/// Real combination of coefficient-free Pauli strings plus a constant.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservablePlan {
    n_qubits: usize,
    terms: Vec<(PauliString, f64)>,
    constant: f64,
}

impl ObservablePlan {
    /// Splits a Hermitian Pauli sum into unit strings and weights.
    pub fn from_pauli_sum(sum: &PauliSum) -> Result<Self> {
        let mut terms = Vec::new();
        let mut constant = 0.0;
        for p in sum.strings(1e-14) {
            if p.coefficient.im.abs() > 1e-12 {
                return Err(Error::InvalidInput(format!(
                    "operator is not Hermitian: {} has coefficient {}",
                    p.label(),
                    p.coefficient
                )));
            }
            if p.is_identity() {
                constant += p.coefficient.re;
            } else {
                terms.push((p.with_coefficient(C1), p.coefficient.re));
            }
        }
        Ok(Self {
            n_qubits: sum.n_qubits(),
            terms,
            constant,
        })
    }

    pub fn terms(&self) -> &[(PauliString, f64)] {
        &self.terms
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    /// Dense matrix of the recombined operator.
    pub fn matrix(&self) -> DMatrix<Complex64> {
        let dim = 1usize << self.n_qubits;
        let mut m = DMatrix::<Complex64>::identity(dim, dim) * Complex64::new(self.constant, 0.0);
        for (p, w) in &self.terms {
            for b in 0..dim {
                let (target, f) = p.action(b);
                m[(target, b)] += f * *w;
            }
        }
        m
    }

    /// Recombines per-string estimates keyed by string label.
    pub fn evaluate(&self, values: &BTreeMap<(u64, u64), f64>) -> f64 {
        self.constant
            + self
                .terms
                .iter()
                .map(|(p, w)| w * values[&(p.x_mask(), p.z_mask())])
                .sum::<f64>()
    }
}

/// Spin-resolved one-body density matrix `rho_ij = <c+_i c_j>` on sites.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    pub spin: Spin,
    /// One `n_sites x n_sites` block per spin channel.
    pub blocks: Vec<DMatrix<Complex64>>,
}

impl DensityMatrix {
    pub fn n_sites(&self) -> usize {
        self.blocks[0].nrows()
    }

    /// Sum over spin channels.
    pub fn spin_summed(&self) -> DMatrix<Complex64> {
        let mut m = self.blocks[0].clone();
        for b in &self.blocks[1..] {
            m += b;
        }
        m
    }

    /// Site occupations summed over spin.
    pub fn density(&self) -> Vec<f64> {
        let m = self.spin_summed();
        (0..m.nrows()).map(|i| m[(i, i)].re).collect()
    }

    pub fn trace(&self) -> f64 {
        self.density().iter().sum()
    }

    /// Exact values for a statevector, from the Jordan-Wigner images.
    pub fn exact(psi: &Statevector, spin: Spin) -> Result<Self> {
        let plans = density_plans(psi.n_qubits(), spin)?;
        let mut blocks =
            vec![DMatrix::<Complex64>::zeros(plans.n_sites, plans.n_sites); spin.multiplicity()];
        for e in &plans.elements {
            let val = |plan: &ObservablePlan| {
                plan.constant
                    + plan
                        .terms
                        .iter()
                        .map(|(p, w)| w * p.expectation(psi.amplitudes()).re)
                        .sum::<f64>()
            };
            e.store(&mut blocks, val(&e.real), e.imag.as_ref().map(val));
        }
        Ok(Self { spin, blocks })
    }
}

struct DensityElement {
    channel: usize,
    i: usize,
    j: usize,
    real: ObservablePlan,
    imag: Option<ObservablePlan>,
}

impl DensityElement {
    fn store(&self, blocks: &mut [DMatrix<Complex64>], re: f64, im: Option<f64>) {
        // The imaginary plan measures i(c+_a c_b - c+_b c_a)/2 = -Im rho_ab.
        let value = Complex64::new(re, -im.unwrap_or(0.0));
        blocks[self.channel][(self.i, self.j)] = value;
        blocks[self.channel][(self.j, self.i)] = value.conj();
    }
}

struct DensityPlans {
    n_sites: usize,
    elements: Vec<DensityElement>,
}

fn density_plans(n_qubits: usize, spin: Spin) -> Result<DensityPlans> {
    let mult = spin.multiplicity();
    if !n_qubits.is_multiple_of(mult) {
        return Err(Error::InvalidInput(format!(
            "{n_qubits} qubits do not split into {mult} spin channels"
        )));
    }
    let n_sites = n_qubits / mult;
    let mode = |site: usize, s: usize| site * mult + s;
    let mut elements = Vec::new();
    for s in 0..mult {
        for i in 0..n_sites {
            for j in i..n_sites {
                let (a, b) = (mode(i, s), mode(j, s));
                let forward = one_body_operator(n_qubits, a, b, C1);
                let backward = one_body_operator(n_qubits, b, a, C1);
                let mut re = forward.clone();
                re.add(&backward);
                re.scale(Complex64::new(0.5, 0.0));
                let imag = if i == j {
                    None
                } else {
                    let mut im = forward;
                    let mut neg = backward;
                    neg.scale(Complex64::new(-1.0, 0.0));
                    im.add(&neg);
                    im.scale(Complex64::new(0.0, 0.5));
                    Some(ObservablePlan::from_pauli_sum(&im)?)
                };
                elements.push(DensityElement {
                    channel: s,
                    i,
                    j,
                    real: ObservablePlan::from_pauli_sum(&re)?,
                    imag,
                });
            }
        }
    }
    Ok(DensityPlans { n_sites, elements })
}

/// Counts every distinct string of `plans` once, in a fixed order, on the
/// evolving register.
fn count_strings<'p>(
    counter: &Counter<'_>,
    plans: impl Iterator<Item = &'p ObservablePlan>,
    s: &mut Statevector,
    rng: &mut RandomStream,
) -> Result<(BTreeMap<(u64, u64), f64>, Vec<QaeEstimate>)> {
    let mut strings = BTreeMap::new();
    for plan in plans {
        for (p, _) in &plan.terms {
            strings
                .entry((p.x_mask(), p.z_mask()))
                .or_insert_with(|| p.clone());
        }
    }
    let mut values = BTreeMap::new();
    let mut estimates = Vec::with_capacity(strings.len());
    for (key, p) in strings {
        let est = counter.count(&p, s, rng)?;
        values.insert(key, est.value);
        estimates.push(est);
    }
    Ok((values, estimates))
}

/// Density-matrix estimate from counted Pauli strings. Returns the matrix,
/// the per-string estimates and the register after the last round.
pub fn estimate_density_matrix(
    reference: &ReferenceState,
    spin: Spin,
    config: QaeConfig,
    rng: &mut RandomStream,
) -> Result<(DensityMatrix, Vec<QaeEstimate>, Statevector)> {
    let plans = density_plans(reference.state.n_qubits(), spin)?;
    let counter = Counter::new(reference, config)?;
    let mut s = reference.state.clone();
    let all = plans
        .elements
        .iter()
        .flat_map(|e| std::iter::once(&e.real).chain(e.imag.as_ref()));
    let (values, estimates) = count_strings(&counter, all, &mut s, rng)?;
    let mut blocks =
        vec![DMatrix::<Complex64>::zeros(plans.n_sites, plans.n_sites); spin.multiplicity()];
    for e in &plans.elements {
        e.store(
            &mut blocks,
            e.real.evaluate(&values),
            e.imag.as_ref().map(|p| p.evaluate(&values)),
        );
    }
    Ok((DensityMatrix { spin, blocks }, estimates, s))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KsEnergyEstimate {
    /// Estimate of `<T + V_s>`.
    pub value: f64,
    /// Orbital energies `h_k`, ascending.
    pub orbital_energies: Vec<f64>,
    /// Counted occupation of each rotated mode, ordered `(k, spin)`.
    pub occupations: Vec<f64>,
    pub estimates: Vec<QaeEstimate>,
}

/// Estimates `<psi| sum_ij (t_ij + v_i delta_ij) c+_i c_j |psi>` by counting
/// the occupations of the orbitals that diagonalize the one-body matrix.
///
/// The total particle number of the reference is used exactly, so the
/// estimate shifts by precisely `c N` when `v` shifts by `c`.
pub fn ks_energy_expectation(
    reference: &ReferenceState,
    spin: Spin,
    hopping: &DMatrix<f64>,
    v_s: &[f64],
    config: QaeConfig,
    rng: &mut RandomStream,
) -> Result<(KsEnergyEstimate, Statevector)> {
    let n_sites = hopping.nrows();
    let mult = spin.multiplicity();
    if hopping.ncols() != n_sites
        || v_s.len() != n_sites
        || n_sites * mult != reference.state.n_qubits()
    {
        return Err(Error::Shape {
            expected: reference.state.n_qubits(),
            actual: n_sites * mult,
        });
    }
    let n_e = reference.particle_number().ok_or_else(|| {
        Error::InvalidInput("reference state has no definite particle number".into())
    })?;
    let mut h = hopping.clone();
    for i in 0..n_sites {
        h[(i, i)] += v_s[i];
    }
    let eig = h.symmetric_eigen();
    let mut order: Vec<usize> = (0..n_sites).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let energies: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let n_modes = n_sites * mult;
    let mut rotation = DMatrix::<Complex64>::zeros(n_modes, n_modes);
    for (col, &k) in order.iter().enumerate() {
        for i in 0..n_sites {
            for s in 0..mult {
                rotation[(i * mult + s, col * mult + s)] =
                    Complex64::new(eig.eigenvectors[(i, k)], 0.0);
            }
        }
    }
    let counter = Counter::new(reference, config)?;
    let mut state = reference.state.clone();
    let mean = energies.iter().sum::<f64>() / n_sites as f64;
    let mut value = mean * n_e as f64;
    let mut occupations = Vec::with_capacity(n_modes);
    let mut estimates = Vec::with_capacity(n_modes);
    for m in 0..n_modes {
        let op = RotatedParity::new(rotation.clone(), m)?;
        let est = counter.count(&op, &mut state, rng)?;
        let occ = (1.0 - est.value) / 2.0;
        value += (energies[m / mult] - mean) * occ;
        occupations.push(occ);
        estimates.push(est);
    }
    Ok((
        KsEnergyEstimate {
            value,
            orbital_energies: energies,
            occupations,
            estimates,
        },
        state,
    ))
}
