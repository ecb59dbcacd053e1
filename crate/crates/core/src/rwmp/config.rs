use std::path::Path;

use serde::{Deserialize, Serialize};

use super::schedule::PotentialSchedule;
use crate::dft::{InversionConfig, LatticeModel};
use crate::error::{Error, Result};
use crate::ml::{Architecture, Quantity, Signature, TrainConfig};
use crate::qae::{QaeConfig, QaeMode};
use crate::qpe::TrotterOrder;
use crate::sim::MAX_QUBITS;

/// Where the per-system quantities come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageMode {
    /// Exact diagonalization stands in for every quantum stage.
    Oracle,
    /// Adiabatic preparation, phase estimation and counting on the
    /// simulated register.
    Quantum,
}

/// Which per-system quantity is extracted after the energy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantities {
    Density,
    KsPotential,
    Both,
}

impl Quantities {
    pub fn density(self) -> bool {
        matches!(self, Self::Density | Self::Both)
    }

    pub fn ks_potential(self) -> bool {
        matches!(self, Self::KsPotential | Self::Both)
    }
}

/// Open Hubbard chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatticeConfig {
    pub sites: usize,
    pub t: f64,
    pub u: f64,
    /// Half filling when absent.
    pub n_electrons: Option<usize>,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        Self {
            sites: 2,
            t: 1.0,
            u: 4.0,
            n_electrons: None,
        }
    }
}

impl LatticeConfig {
    pub fn build(&self) -> Result<LatticeModel> {
        LatticeModel::chain(
            self.sites,
            self.t,
            self.u,
            self.n_electrons.unwrap_or(self.sites),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub from: Vec<f64>,
    pub to: Vec<f64>,
    pub points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ordering {
    Given,
    NearestNeighbor,
}

/// Either explicit potentials or a linear sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub max_step: f64,
    pub ordering: Ordering,
    pub potentials: Vec<Vec<f64>>,
    pub sweep: Option<SweepConfig>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            max_step: 0.25,
            ordering: Ordering::Given,
            potentials: Vec::new(),
            sweep: None,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<PotentialSchedule> {
        match (&self.sweep, self.potentials.is_empty()) {
            (Some(_), false) => Err(Error::InvalidInput(
                "give either explicit potentials or a sweep, not both".into(),
            )),
            (Some(s), true) => {
                let sched = PotentialSchedule::sweep(&s.from, &s.to, s.points, self.max_step)?;
                match self.ordering {
                    Ordering::Given => Ok(sched),
                    Ordering::NearestNeighbor => PotentialSchedule::nearest_neighbor(
                        sched.potentials().to_vec(),
                        self.max_step,
                    ),
                }
            }
            (None, _) => match self.ordering {
                Ordering::Given => PotentialSchedule::new(self.potentials.clone(), self.max_step),
                Ordering::NearestNeighbor => {
                    PotentialSchedule::nearest_neighbor(self.potentials.clone(), self.max_step)
                }
            },
        }
    }
}

/// Adiabatic preparation: slices of width `dt` are added until the state
/// reaches `fidelity` with the target ground state, up to `max_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RteStage {
    pub dt: f64,
    pub max_steps: usize,
    pub fidelity: f64,
    pub order: TrotterOrder,
}

impl Default for RteStage {
    fn default() -> Self {
        Self {
            dt: 0.2,
            max_steps: 200,
            fidelity: 0.99,
            order: TrotterOrder::Second,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QpeStage {
    pub t_bits: usize,
    pub repetitions: usize,
}

impl Default for QpeStage {
    fn default() -> Self {
        Self {
            t_bits: 10,
            repetitions: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QaeStage {
    pub rounds: usize,
    pub epsilon: f64,
    /// Pointer-register width of the phase-estimation check; the direct
    /// projective check is used when absent.
    pub check_bits: Option<usize>,
}

impl Default for QaeStage {
    fn default() -> Self {
        Self {
            rounds: 1000,
            epsilon: 0.01,
            check_bits: None,
        }
    }
}

impl QaeStage {
    pub fn config(&self) -> QaeConfig {
        let mode = match self.check_bits {
            Some(check_bits) => QaeMode::Full { check_bits },
            None => QaeMode::Collapse,
        };
        QaeConfig::new(self.rounds, self.epsilon).with_mode(mode)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GradientSource {
    Analytic,
    Qga { bits: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InversionStage {
    pub eta: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub gradient: GradientSource,
}

impl Default for InversionStage {
    fn default() -> Self {
        let c = InversionConfig::default();
        Self {
            eta: c.eta,
            tol: c.tol,
            max_iters: c.max_iters,
            gradient: GradientSource::Analytic,
        }
    }
}

impl InversionStage {
    pub fn config(&self) -> InversionConfig {
        InversionConfig {
            eta: self.eta,
            tol: self.tol,
            max_iters: self.max_iters,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub inputs: Vec<Quantity>,
    pub output: Quantity,
    #[serde(default)]
    pub architecture: Architecture,
}

impl ModelSpec {
    pub fn signature(&self) -> Signature {
        Signature::new(&self.inputs, self.output)
    }
}

/// Models updated after every system; each update runs `epochs_per_system`
/// epochs over everything collected so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingStage {
    pub epochs_per_system: usize,
    pub models: Vec<ModelSpec>,
    pub train: TrainConfig,
}

impl Default for TrainingStage {
    fn default() -> Self {
        Self {
            epochs_per_system: 50,
            models: vec![ModelSpec {
                inputs: vec![Quantity::Potential],
                output: Quantity::Energy,
                architecture: Architecture::default(),
            }],
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RwmpConfig {
    pub seed: u64,
    pub mode: StageMode,
    pub quantities: Quantities,
    pub warm_start: bool,
    pub lattice: LatticeConfig,
    pub schedule: ScheduleConfig,
    pub rte: RteStage,
    pub qpe: QpeStage,
    pub qae: QaeStage,
    pub inversion: InversionStage,
    pub training: TrainingStage,
}

impl Default for RwmpConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            mode: StageMode::Quantum,
            quantities: Quantities::Both,
            warm_start: true,
            lattice: LatticeConfig::default(),
            schedule: ScheduleConfig::default(),
            rte: RteStage::default(),
            qpe: QpeStage::default(),
            qae: QaeStage::default(),
            inversion: InversionStage::default(),
            training: TrainingStage::default(),
        }
    }
}

impl RwmpConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        Ok(toml::from_str(s)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Checks everything that would otherwise fail on every system.
    pub fn validate(&self) -> Result<(LatticeModel, PotentialSchedule)> {
        let lattice = self.lattice.build()?;
        let schedule = self.schedule.build()?;
        if let Some(v) = schedule.potentials().first() {
            if v.len() != lattice.n_sites() {
                return Err(Error::Shape {
                    expected: lattice.n_sites(),
                    actual: v.len(),
                });
            }
        }
        let rte = &self.rte;
        if !(rte.dt > 0.0 && rte.dt.is_finite()) || !(rte.fidelity > 0.0 && rte.fidelity <= 1.0) {
            return Err(Error::InvalidInput(
                "rte needs dt > 0 and fidelity in (0, 1]".into(),
            ));
        }
        if self.mode == StageMode::Quantum {
            let qubits = 2 * lattice.n_sites() + self.qpe.t_bits;
            if self.qpe.t_bits == 0 || qubits > MAX_QUBITS {
                return Err(Error::InvalidInput(format!(
                    "phase estimation needs 1..={} ancilla bits for this lattice, got {}",
                    MAX_QUBITS - 2 * lattice.n_sites(),
                    self.qpe.t_bits
                )));
            }
            if self.qpe.repetitions.is_multiple_of(2) {
                return Err(Error::InvalidInput(
                    "phase-estimation repetitions must be odd".into(),
                ));
            }
            if self.quantities.density() {
                let q = &self.qae;
                if q.rounds == 0 || !(q.epsilon > 0.0 && q.epsilon < 1.0) || q.check_bits == Some(0)
                {
                    return Err(Error::InvalidInput(
                        "qae needs rounds > 0, epsilon in (0, 1), check_bits > 0".into(),
                    ));
                }
            }
        }
        let inv = &self.inversion;
        if self.quantities.ks_potential() && !(inv.eta > 0.0 && inv.tol > 0.0) {
            return Err(Error::InvalidInput(
                "inversion needs eta > 0 and tol > 0".into(),
            ));
        }
        if let GradientSource::Qga { bits } = inv.gradient {
            if bits < 2 || bits * lattice.n_sites() > MAX_QUBITS {
                return Err(Error::InvalidInput(format!(
                    "QGA bits {bits} unusable on {} sites",
                    lattice.n_sites()
                )));
            }
        }
        for m in &self.training.models {
            if m.inputs.is_empty() || m.inputs.contains(&Quantity::Energy) {
                return Err(Error::InvalidInput(
                    "model inputs must be non-empty and exclude energy".into(),
                ));
            }
            let uses_ks =
                m.inputs.contains(&Quantity::KsPotential) || m.output == Quantity::KsPotential;
            if uses_ks && !self.quantities.ks_potential() {
                return Err(Error::InvalidInput(
                    "a model uses the KS potential but the pipeline does not invert".into(),
                ));
            }
        }
        if self.training.train.batch_size == 0 {
            return Err(Error::InvalidInput("batch size must be positive".into()));
        }
        Ok((lattice, schedule))
    }
}
