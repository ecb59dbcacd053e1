use num_complex::Complex64;

use super::config::{GradientSource, RwmpConfig, StageMode};
use super::record::{RunRecord, Status};
use crate::dft::{invert_to_ks, invert_to_ks_qga, InversionTarget, LatticeModel};
use crate::error::{Error, Result};
use crate::fermion::{exact_diagonalize, shift_and_scale, BoundMethod, QubitHamiltonian, Spin};
use crate::ml::{Provenance, TrainingSample};
use crate::qae::{estimate_density_matrix, ReferenceState};
use crate::qpe::{qpe, rte_prepare, steps_to_fidelity, QpeConfig, Schedule};
use crate::sim::{RandomStream, Statevector};

/// What the previous system leaves behind for the next one.
#[derive(Clone, Copy)]
pub(crate) struct Warm<'a> {
    pub state: &'a Statevector,
    pub hamiltonian: &'a QubitHamiltonian,
    pub v_s: Option<&'a [f64]>,
}

pub(crate) struct Visit {
    pub record: RunRecord,
    pub state: Statevector,
    pub hamiltonian: QubitHamiltonian,
    pub sample: TrainingSample,
    pub v_s: Option<Vec<f64>>,
    pub rte_steps: usize,
    pub qae_rounds: usize,
    pub repairs: usize,
}

/// Levels closer than this count as one when projecting.
const LEVEL_TOL: f64 = 1e-9;

/// Projects the phase-estimation output onto the eigenspace of the level
/// nearest to the readout. Refuses if that level is not the ground level.
fn collapse_to_level(
    lattice: &LatticeModel,
    h: &QubitHamiltonian,
    post: &Statevector,
    readout: f64,
    ground: f64,
) -> Result<(Statevector, f64)> {
    let spec = exact_diagonalize(h, &lattice.sector())?;
    let eig = spec.eigenvalues();
    let level = eig
        .iter()
        .copied()
        .min_by(|a, b| (a - readout).abs().total_cmp(&(b - readout).abs()))
        .ok_or_else(|| Error::Stage("empty sector".into()))?;
    if (level - ground).abs() > LEVEL_TOL {
        return Err(Error::Stage(format!(
            "phase readout {readout} selected the excited level {level} (ground {ground})"
        )));
    }
    let mut amps = vec![Complex64::new(0.0, 0.0); post.dim()];
    for (k, e) in eig.iter().enumerate() {
        if (e - level).abs() <= LEVEL_TOL {
            let phi = spec.state(k);
            let c = phi.inner(post)?;
            for (a, p) in amps.iter_mut().zip(phi.amplitudes()) {
                *a += c * p;
            }
        }
    }
    let weight: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
    if weight < 1e-12 {
        return Err(Error::Stage(
            "phase-estimation output has no weight on the ground level".into(),
        ));
    }
    let s = weight.sqrt();
    amps.iter_mut().for_each(|a| *a /= s);
    Ok((Statevector::from_amplitudes(amps)?, weight))
}

/// Runs every stage for one potential.
pub(crate) fn visit(
    lattice: &LatticeModel,
    config: &RwmpConfig,
    record: RunRecord,
    warm: Option<Warm<'_>>,
    rng: &mut RandomStream,
) -> Result<Visit> {
    let mut record = record;
    let v = record.v.clone();
    let h = lattice.hamiltonian(&v)?;
    let exact = lattice.ground_state(&v)?;
    if exact.degenerate {
        return Err(Error::Degenerate(format!("ground level at v = {v:?}")));
    }
    record.energy_exact = Some(exact.energy);
    let mut rte_steps = 0;
    let (mut state, energy) = match config.mode {
        StageMode::Oracle => {
            record.initial_fidelity = warm.map(|w| exact.state.fidelity(w.state)).transpose()?;
            (exact.state.clone(), exact.energy)
        }
        StageMode::Quantum => {
            let (psi0, h0) = match warm {
                Some(w) => (w.state.clone(), w.hamiltonian.clone()),
                None => {
                    let free = lattice.noninteracting()?.ground_state(&v)?;
                    (free.state, free.hamiltonian)
                }
            };
            let h1 = h.linear_combination(1.0, &h0, -1.0)?;
            record.initial_fidelity = Some(exact.state.fidelity(&psi0)?);
            let rte = &config.rte;
            let steps = steps_to_fidelity(
                &h0,
                &h1,
                &psi0,
                &exact.state,
                rte.dt,
                rte.order,
                rte.fidelity,
                rte.max_steps,
            )?;
            if steps.is_none() {
                record.status = Status::Unconverged;
                record.message = format!(
                    "preparation below fidelity {} after {} steps",
                    rte.fidelity, rte.max_steps
                );
            }
            rte_steps = steps.unwrap_or(rte.max_steps);
            let schedule = Schedule::linear(rte_steps as f64 * rte.dt, rte_steps, rte.order)?;
            let out = rte_prepare(&h0, &h1, &schedule, &psi0, Some(&exact.state), rte.fidelity)?;
            record.rte_steps = Some(rte_steps);
            record.rte_fidelity = out.fidelity;
            let scaled = shift_and_scale(&h, 0.0, BoundMethod::Auto)?;
            let qpe_config =
                QpeConfig::new(config.qpe.t_bits).with_repetitions(config.qpe.repetitions);
            let (readout, post) = qpe(&out.state, &scaled, qpe_config, rng)?;
            let (state, weight) =
                collapse_to_level(lattice, &h, &post, readout.energy, exact.energy)?;
            record.qpe_register = Some(readout.register);
            record.qpe_weight = Some(weight);
            (state, readout.energy)
        }
    };
    record.energy = Some(energy);

    let mut qae_rounds = 0;
    let mut repairs = 0;
    let measured = config.mode == StageMode::Quantum && config.quantities.density();
    let density = if measured {
        let reference = ReferenceState::new(&h, &state)?;
        let (dm, estimates, after) =
            estimate_density_matrix(&reference, Spin::Half, config.qae.config(), rng)?;
        record.qae_fidelity = Some(state.fidelity(&after)?);
        record.density_stderr = Some(estimates.iter().map(|e| e.stderr).fold(0.0, f64::max));
        repairs = estimates.iter().map(|e| e.repair_iterations).sum();
        qae_rounds = estimates.iter().map(|e| e.rounds).sum();
        record.repair_iterations = Some(repairs);
        state = after;
        dm.density()
    } else {
        lattice.density(&state)?
    };
    record.density = Some(density.clone());

    let mut v_s = None;
    if config.quantities.ks_potential() {
        let target = if measured {
            InversionTarget::from_density(density.clone())
        } else {
            InversionTarget::from_state(lattice, &state)?
        };
        let v0 = warm
            .and_then(|w| w.v_s)
            .map_or_else(|| vec![0.0; lattice.n_sites()], <[f64]>::to_vec);
        let inv = config.inversion.config();
        let res = match config.inversion.gradient {
            GradientSource::Analytic => invert_to_ks(lattice, &target, &v0, inv)?,
            GradientSource::Qga { bits } => {
                invert_to_ks_qga(lattice, &target, &v0, inv, bits, rng)?
            }
        };
        record.ks_residual = Some(res.residual());
        record.v_s = Some(res.potential.clone());
        if res.converged {
            v_s = Some(res.potential);
        } else {
            record.status = Status::Unconverged;
            if !record.message.is_empty() {
                record.message.push_str("; ");
            }
            record.message.push_str(&format!(
                "KS inversion stopped at residual {:e}",
                res.residual()
            ));
        }
    }

    let provenance = match (config.mode, measured) {
        (StageMode::Oracle, _) => Provenance::Oracle,
        (StageMode::Quantum, true) => Provenance::Qae,
        (StageMode::Quantum, false) => Provenance::Qpe,
    };
    let sample = TrainingSample {
        v: Some(v),
        n: Some(density),
        energy: Some(energy),
        v_s: v_s.clone(),
        ..TrainingSample::new(provenance)
    };
    Ok(Visit {
        record,
        state,
        hamiltonian: h,
        sample,
        v_s,
        rte_steps,
        qae_rounds,
        repairs,
    })
}
