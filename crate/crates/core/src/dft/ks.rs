use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{dot, gauge_fix, LatticeModel};
use crate::error::{Error, Result};
use crate::qga::{functional_gradient, GradientJob};
use crate::sim::{RandomStream, Statevector};

/// Gap below which the highest occupied and lowest unoccupied levels count
/// as degenerate.
pub const KS_DEGENERACY_TOL: f64 = 1e-9;

/// Eigenpairs of the single-particle matrix `h + diag(v_s)` with aufbau
/// occupations (spin-summed, so each orbital holds up to two electrons).
#[derive(Debug, Clone)]
pub struct KsOrbitals {
    /// Ascending.
    pub energies: Vec<f64>,
    /// Column `j` is orbital `j` in the site basis.
    pub orbitals: DMatrix<f64>,
    pub occupations: Vec<f64>,
    pub potential: Vec<f64>,
}

impl KsOrbitals {
    pub fn n_sites(&self) -> usize {
        self.orbitals.nrows()
    }

    /// `n_i = sum_j xi_j |phi_j(i)|^2`.
    pub fn density(&self) -> Vec<f64> {
        self.density_with(&self.occupations)
    }

    pub fn density_with(&self, occupations: &[f64]) -> Vec<f64> {
        (0..self.n_sites())
            .map(|i| {
                occupations
                    .iter()
                    .enumerate()
                    .map(|(j, xi)| xi * self.orbitals[(i, j)].powi(2))
                    .sum()
            })
            .collect()
    }

    /// `sum_j xi_j eps_j`.
    pub fn eigenvalue_sum(&self) -> f64 {
        dot(&self.occupations, &self.energies)
    }

    /// `T_s = sum_j xi_j <phi_j|h|phi_j>`.
    pub fn kinetic_energy(&self, hopping: &DMatrix<f64>) -> f64 {
        self.occupations
            .iter()
            .enumerate()
            .filter(|(_, xi)| **xi != 0.0)
            .map(|(j, xi)| {
                let phi = self.orbitals.column(j);
                xi * (phi.transpose() * hopping * phi)[(0, 0)]
            })
            .sum()
    }
}

/// Diagonalizes `h + diag(v_s)` and fills the lowest orbitals.
pub fn solve_ks(
    hopping: &DMatrix<f64>,
    v_s: &[f64],
    n_electrons: usize,
) -> Result<(KsOrbitals, Vec<f64>)> {
    let n = hopping.nrows();
    if v_s.len() != n {
        return Err(Error::Shape {
            expected: n,
            actual: v_s.len(),
        });
    }
    if n_electrons > 2 * n {
        return Err(Error::InvalidInput(format!(
            "{n_electrons} electrons do not fit in {n} orbitals"
        )));
    }
    if v_s.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("KS potential".into()));
    }
    let h = hopping + DMatrix::from_diagonal(&DVector::from_column_slice(v_s));
    let eig = h.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let energies: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut orbitals = DMatrix::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        let mut c = eig.eigenvectors.column(k).into_owned();
        // Fix the sign so the largest component is positive.
        let imax = c.iamax();
        if c[imax] < 0.0 {
            c = -c;
        }
        orbitals.set_column(col, &c);
    }
    let mut occupations = vec![0.0; n];
    let mut left = n_electrons;
    for xi in occupations.iter_mut() {
        let take = left.min(2);
        *xi = take as f64;
        left -= take;
    }
    // The highest partly or fully occupied orbital must be separated from
    // the next one, otherwise the filling is ambiguous.
    if n_electrons > 0 && n_electrons < 2 * n {
        let homo = (n_electrons - 1) / 2;
        let lumo = homo + 1;
        if lumo < n && energies[lumo] - energies[homo] < KS_DEGENERACY_TOL {
            return Err(Error::Degenerate(format!(
                "KS levels {homo} and {lumo} differ by {:.3e}",
                energies[lumo] - energies[homo]
            )));
        }
    }
    let orbs = KsOrbitals {
        energies,
        orbitals,
        occupations,
        potential: v_s.to_vec(),
    };
    let density = orbs.density();
    Ok((orbs, density))
}

/// Interacting reference for the inversion: its density and, when known,
/// its hopping energy `<Psi|T|Psi>`.
#[derive(Debug, Clone, PartialEq)]
pub struct InversionTarget {
    pub density: Vec<f64>,
    pub kinetic: Option<f64>,
}

impl InversionTarget {
    pub fn from_state(model: &LatticeModel, psi: &Statevector) -> Result<Self> {
        Ok(Self {
            density: model.density(psi)?,
            kinetic: Some(model.kinetic_expectation(psi)?),
        })
    }

    /// A density alone fixes the objective up to a constant.
    pub fn from_density(density: Vec<f64>) -> Self {
        Self {
            density,
            kinetic: None,
        }
    }
}

/// `<Psi|T + V_s|Psi> - E_s[v_s]`, with `E_s` the noninteracting ground
/// energy. Without a kinetic term the constant `<Psi|T|Psi>` is dropped.
pub fn t_psi_objective(model: &LatticeModel, target: &InversionTarget, v_s: &[f64]) -> Result<f64> {
    let (orbs, _) = solve_ks(model.hopping(), v_s, model.n_electrons())?;
    Ok(objective_from(target, v_s, &orbs))
}

fn objective_from(target: &InversionTarget, v_s: &[f64], orbs: &KsOrbitals) -> f64 {
    target.kinetic.unwrap_or(0.0) + dot(v_s, &target.density) - orbs.eigenvalue_sum()
}

/// `n_Psi - n_Phi[v_s]`, projected to sum zero.
pub fn ks_inversion_gradient(
    model: &LatticeModel,
    target: &InversionTarget,
    v_s: &[f64],
) -> Result<Vec<f64>> {
    let (_, n_phi) = solve_ks(model.hopping(), v_s, model.n_electrons())?;
    Ok(gradient_from(target, &n_phi))
}

fn gradient_from(target: &InversionTarget, n_phi: &[f64]) -> Vec<f64> {
    let g: Vec<f64> = target
        .density
        .iter()
        .zip(n_phi)
        .map(|(a, b)| a - b)
        .collect();
    gauge_fix(&g)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct InversionConfig {
    pub eta: f64,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            eta: 0.5,
            tol: 1e-6,
            max_iters: 20_000,
        }
    }
}

/// One accepted iterate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub objective: f64,
    pub gradient_norm: f64,
}

#[derive(Debug, Clone)]
pub struct InversionResult {
    /// Sum-zero KS potential.
    pub potential: Vec<f64>,
    pub density: Vec<f64>,
    pub orbitals: KsOrbitals,
    /// Number of gradient evaluations.
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<TraceRow>,
}

impl InversionResult {
    pub fn residual(&self) -> f64 {
        self.trace.last().map_or(f64::INFINITY, |r| r.gradient_norm)
    }

    /// Turns a partial result into an error.
    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NotConverged {
                iterations: self.iterations,
                detail: format!("density residual {:.3e}", self.residual()),
            })
        }
    }

    pub fn write_trace_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for row in &self.trace {
            out.serialize(row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Gradient descent on the KS potential until the KS density matches the
/// target within `tol` in the max norm. The step is halved whenever the
/// objective would increase; rejected steps are not recorded. Hitting
/// `max_iters` yields a partial result with `converged = false`.
pub fn invert_to_ks(
    model: &LatticeModel,
    target: &InversionTarget,
    v0: &[f64],
    config: InversionConfig,
) -> Result<InversionResult> {
    descend(model, target, v0, config, None, |_, n_phi| {
        Ok(gradient_from(target, n_phi))
    })
}

/// Same descent with every gradient read from one phase-kickback query of
/// the objective (`bits` per component). Convergence is judged on the
/// quantum gradient itself.
pub fn invert_to_ks_qga(
    model: &LatticeModel,
    target: &InversionTarget,
    v0: &[f64],
    config: InversionConfig,
    bits: usize,
    rng: &mut RandomStream,
) -> Result<InversionResult> {
    descend(model, target, v0, config, Some(QGA_STALL_LIMIT), |v, _| {
        // The oracle reports values relative to the centre; a constant
        // offset is a global phase and would only eat fixed-point range.
        let f0 = t_psi_objective(model, target, v)?;
        let objective = |x: &[f64]| t_psi_objective(model, target, x).map_or(f64::NAN, |f| f - f0);
        let job = GradientJob::new(vec![0.0; v.len()]).with_bits(bits);
        let g = functional_gradient(&objective, v, None, &job, rng)?.derivative;
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(
                "quantum gradient of the inversion objective".into(),
            ));
        }
        Ok(gauge_fix(&g))
    })
}

/// Accepted steps in a row without a strict decrease before a quantum
/// descent is declared stalled.
const QGA_STALL_LIMIT: usize = 20;

fn descend(
    model: &LatticeModel,
    target: &InversionTarget,
    v0: &[f64],
    config: InversionConfig,
    stall_limit: Option<usize>,
    mut gradient: impl FnMut(&[f64], &[f64]) -> Result<Vec<f64>>,
) -> Result<InversionResult> {
    if target.density.len() != model.n_sites() || v0.len() != model.n_sites() {
        return Err(Error::Shape {
            expected: model.n_sites(),
            actual: if v0.len() != model.n_sites() {
                v0.len()
            } else {
                target.density.len()
            },
        });
    }
    if !(config.eta > 0.0 && config.tol > 0.0) {
        return Err(Error::InvalidInput(
            "inversion needs eta > 0 and tol > 0".into(),
        ));
    }
    let mut v = gauge_fix(v0);
    let (mut orbs, mut n_phi) = solve_ks(model.hopping(), &v, model.n_electrons())?;
    let mut objective = objective_from(target, &v, &orbs);
    let mut grad = gradient(&v, &n_phi)?;
    let mut eta = config.eta;
    let min_eta = config.eta * f64::EPSILON;
    let mut trace = vec![TraceRow {
        iteration: 0,
        objective,
        gradient_norm: inf_norm(&grad),
    }];
    let mut iterations = 0;
    let mut converged = inf_norm(&grad) <= config.tol;
    let mut flat = 0;
    while !converged
        && iterations < config.max_iters
        && eta >= min_eta
        && stall_limit.is_none_or(|l| flat < l)
    {
        iterations += 1;
        let trial: Vec<f64> = v.iter().zip(&grad).map(|(x, g)| x - eta * g).collect();
        let trial = gauge_fix(&trial);
        let (t_orbs, t_n) = match solve_ks(model.hopping(), &trial, model.n_electrons()) {
            Ok(r) => r,
            Err(Error::Degenerate(_)) => {
                eta /= 2.0;
                continue;
            }
            Err(e) => return Err(e),
        };
        let t_obj = objective_from(target, &trial, &t_orbs);
        if t_obj <= objective {
            flat = if t_obj < objective { 0 } else { flat + 1 };
            v = trial;
            orbs = t_orbs;
            n_phi = t_n;
            objective = t_obj;
            grad = gradient(&v, &n_phi)?;
            let gn = inf_norm(&grad);
            trace.push(TraceRow {
                iteration: iterations,
                objective,
                gradient_norm: gn,
            });
            converged = gn <= config.tol;
        } else {
            eta /= 2.0;
        }
    }
    Ok(InversionResult {
        potential: v,
        density: n_phi,
        orbitals: orbs,
        iterations,
        converged,
        trace,
    })
}

pub(crate) fn inf_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::super::max_abs_diff;
    use super::*;

    fn dimer_h() -> DMatrix<f64> {
        crate::fermion::hopping_matrix(2, 1.0)
    }

    #[test]
    fn symmetric_dimer_is_uniform() {
        let (orbs, n) = solve_ks(&dimer_h(), &[0.0, 0.0], 2).unwrap();
        assert!(max_abs_diff(&n, &[1.0, 1.0]) < 1e-14);
        assert!((orbs.energies[0] + 1.0).abs() < 1e-14);
        let o = &orbs.orbitals;
        assert!(((o.transpose() * o) - DMatrix::<f64>::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn asymmetric_dimer_closed_form() {
        for delta in [0.3, 1.0, 2.5] {
            let (_, n) = solve_ks(&dimer_h(), &[-delta / 2.0, delta / 2.0], 2).unwrap();
            let n0 = 1.0 + delta / (delta * delta + 4.0f64).sqrt();
            assert!((n[0] - n0).abs() < 1e-12);
            assert!((n[0] + n[1] - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_shift_is_gauge() {
        let h = crate::fermion::hopping_matrix(3, 1.0);
        let v = [0.2, -0.4, 0.1];
        let (a, na) = solve_ks(&h, &v, 3).unwrap();
        let (b, nb) = solve_ks(&h, &[1.2, 0.6, 1.1], 3).unwrap();
        assert!(max_abs_diff(&na, &nb) < 1e-12);
        for (x, y) in a.energies.iter().zip(&b.energies) {
            assert!((y - x - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_homo_is_an_error() {
        // Two decoupled sites at equal energy.
        let h = DMatrix::zeros(2, 2);
        assert!(matches!(
            solve_ks(&h, &[0.0, 0.0], 1),
            Err(Error::Degenerate(_))
        ));
        assert!(solve_ks(&h, &[0.0, 0.0], 4).is_ok());
    }

    #[test]
    fn objective_vanishes_without_interaction() {
        let model = LatticeModel::dimer(1.0, 0.0).unwrap();
        let v = [-0.4, 0.4];
        let g = model.ground_state(&v).unwrap();
        let target = InversionTarget::from_state(&model, &g.state).unwrap();
        assert!(t_psi_objective(&model, &target, &v).unwrap().abs() < 1e-12);
        let res = invert_to_ks(&model, &target, &v, InversionConfig::default()).unwrap();
        assert!(res.converged);
        assert_eq!(res.iterations, 0);
    }

    #[test]
    fn objective_positive_before_inversion() {
        let model = LatticeModel::dimer(1.0, 4.0).unwrap();
        let v = [-0.5, 0.5];
        let g = model.ground_state(&v).unwrap();
        let target = InversionTarget::from_state(&model, &g.state).unwrap();
        let obj = t_psi_objective(&model, &target, &v).unwrap();
        // Same quantity built from the interacting expectation values.
        let (orbs, _) = solve_ks(model.hopping(), &v, 2).unwrap();
        let direct = g.kinetic + dot(&v, &g.density) - orbs.eigenvalue_sum();
        assert!(obj > 1e-3);
        assert!((obj - direct).abs() < 1e-12);
    }

    #[test]
    fn symmetric_dimer_gradient_is_antisymmetric() {
        let model = LatticeModel::dimer(1.0, 4.0).unwrap();
        let g = model.ground_state(&[0.0, 0.0]).unwrap();
        let target = InversionTarget::from_state(&model, &g.state).unwrap();
        let grad = ks_inversion_gradient(&model, &target, &[0.3, -0.3]).unwrap();
        assert!((grad[0] + grad[1]).abs() < 1e-14);
        assert!(grad[0].abs() > 1e-3);
    }

    #[test]
    fn inversion_matches_interacting_density() {
        let model = LatticeModel::dimer(1.0, 4.0).unwrap();
        let v = [-0.5, 0.5];
        let g = model.ground_state(&v).unwrap();
        let target = InversionTarget::from_state(&model, &g.state).unwrap();
        let res = invert_to_ks(&model, &target, &[0.0, 0.0], InversionConfig::default()).unwrap();
        assert!(res.converged);
        assert!(max_abs_diff(&res.density, &g.density) <= 1e-6);
        assert!(res
            .trace
            .windows(2)
            .all(|w| w[1].objective <= w[0].objective));
        assert!(res.potential.iter().sum::<f64>().abs() < 1e-12);
        let grad = ks_inversion_gradient(&model, &target, &res.potential).unwrap();
        assert!(inf_norm(&grad) <= 1e-6);
    }

    #[test]
    fn warm_start_saves_iterations() {
        let model = LatticeModel::dimer(1.0, 4.0).unwrap();
        let config = InversionConfig::default();
        let prev = model.ground_state(&[-0.5, 0.5]).unwrap();
        let prev_t = InversionTarget::from_state(&model, &prev.state).unwrap();
        let warm = invert_to_ks(&model, &prev_t, &[0.0, 0.0], config)
            .unwrap()
            .potential;
        let g = model.ground_state(&[-0.55, 0.55]).unwrap();
        let t = InversionTarget::from_state(&model, &g.state).unwrap();
        let cold = invert_to_ks(&model, &t, &[0.0, 0.0], config).unwrap();
        let hot = invert_to_ks(&model, &t, &warm, config).unwrap();
        assert!(
            hot.iterations < cold.iterations,
            "{} vs {}",
            hot.iterations,
            cold.iterations
        );
    }

    #[test]
    fn max_iters_gives_partial_result() {
        let model = LatticeModel::dimer(1.0, 8.0).unwrap();
        let g = model.ground_state(&[-1.0, 1.0]).unwrap();
        let t = InversionTarget::from_state(&model, &g.state).unwrap();
        let config = InversionConfig {
            max_iters: 3,
            ..Default::default()
        };
        let res = invert_to_ks(&model, &t, &[0.0, 0.0], config).unwrap();
        assert!(!res.converged);
        assert!(!res.trace.is_empty());
        let mut buf = Vec::new();
        res.write_trace_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("iteration,objective,gradient_norm"));
        assert!(matches!(
            res.require_converged(),
            Err(Error::NotConverged { .. })
        ));
    }

    #[test]
    fn quantum_gradient_inversion_matches_classical() {
        let model = LatticeModel::dimer(1.0, 4.0).unwrap();
        let g = model.ground_state(&[-0.3, 0.3]).unwrap();
        let target = InversionTarget::from_state(&model, &g.state).unwrap();
        let config = InversionConfig {
            tol: 1e-6,
            ..Default::default()
        };
        let classical = invert_to_ks(&model, &target, &[0.0, 0.0], config).unwrap();
        let mut rng = RandomStream::new(3);
        // Below ~1e-6 the objective's rounding noise exceeds the
        // fixed-point resolution of the shrinking window.
        let loose = InversionConfig {
            tol: 1e-5,
            ..config
        };
        let quantum = invert_to_ks_qga(&model, &target, &[0.0, 0.0], loose, 8, &mut rng).unwrap();
        assert!(quantum.converged);
        assert!(max_abs_diff(&quantum.density, &g.density) < 1e-5);
        assert!(max_abs_diff(&quantum.potential, &classical.potential) < 1e-4);
        assert!(quantum
            .trace
            .windows(2)
            .all(|w| w[1].objective <= w[0].objective));
    }
}
