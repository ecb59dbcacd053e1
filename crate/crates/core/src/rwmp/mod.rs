//! The recycled-wavefunction loop. Systems of a potential schedule are
//! visited in order; each is prepared from the previous system's state,
//! read out, and fed to the models being trained.

mod batch;
mod config;
mod record;
mod schedule;
mod stages;
mod user;

use std::path::Path;

use crate::error::Result;
use crate::fermion::QubitHamiltonian;
use crate::ml::{Model, Quantity, Signature, TrainConfig, TrainingSample};
use crate::sim::{RandomStream, Statevector};

pub use batch::{batch_dispatch, MergedBatch, SystemJob};
pub use config::{
    GradientSource, InversionStage, LatticeConfig, ModelSpec, Ordering, QaeStage, QpeStage,
    Quantities, RteStage, RwmpConfig, ScheduleConfig, StageMode, SweepConfig, TrainingStage,
};
pub use record::{write_records_csv, RunRecord, Status, RECORD_HEADER};
pub use schedule::PotentialSchedule;
pub use user::{classical_user_solve, ResponseRequest, UserMethod, UserRequest, UserSolution};

/// Stream index reserved for model initialization and training.
const TRAINING_STREAM: u64 = 1 << 40;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub rte_steps: usize,
    pub qae_rounds: usize,
    pub repairs: usize,
    pub systems: usize,
    pub failures: usize,
}

/// Everything carried from one system to the next.
#[derive(Debug, Clone)]
pub struct PipelineState {
    pub state: Option<Statevector>,
    pub hamiltonian: Option<QubitHamiltonian>,
    pub v: Option<Vec<f64>>,
    /// Energy read out for `state`.
    pub energy: Option<f64>,
    pub register: Option<usize>,
    pub v_s: Option<Vec<f64>>,
    pub models: Vec<Model>,
    pub counters: Counters,
    /// Index of the last system that completed.
    pub checkpoint: Option<usize>,
}

impl PipelineState {
    fn new(models: Vec<Model>) -> Self {
        Self {
            state: None,
            hamiltonian: None,
            v: None,
            energy: None,
            register: None,
            v_s: None,
            models,
            counters: Counters::default(),
            checkpoint: None,
        }
    }

    fn warm(&self) -> Option<stages::Warm<'_>> {
        Some(stages::Warm {
            state: self.state.as_ref()?,
            hamiltonian: self.hamiltonian.as_ref()?,
            v_s: self.v_s.as_deref(),
        })
    }

    fn absorb(&mut self, visit: stages::Visit) -> (RunRecord, TrainingSample) {
        let r = &visit.record;
        self.v = Some(r.v.clone());
        self.energy = r.energy;
        self.register = r.qpe_register;
        self.checkpoint = Some(r.k);
        self.state = Some(visit.state);
        self.hamiltonian = Some(visit.hamiltonian);
        if visit.v_s.is_some() {
            self.v_s = visit.v_s;
        }
        self.counters.rte_steps += visit.rte_steps;
        self.counters.qae_rounds += visit.qae_rounds;
        self.counters.repairs += visit.repairs;
        self.counters.systems += 1;
        (visit.record, visit.sample)
    }
}

/// The sample as seen by a model with signature `sig`, or `None` if it
/// lacks a needed field. Density-to-energy models learn `E - n.v`.
pub fn sample_for(sig: &Signature, s: &TrainingSample) -> Option<TrainingSample> {
    s.input(sig).ok()?;
    s.target(sig).ok()?;
    if sig.output == Quantity::Energy && sig.inputs == [Quantity::Density] {
        let n = s.n.as_ref()?;
        let v = s.v.as_ref()?;
        let nv: f64 = n.iter().zip(v).map(|(a, b)| a * b).sum();
        return Some(TrainingSample {
            energy: Some(s.energy? - nv),
            ..s.clone()
        });
    }
    Some(s.clone())
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<RunRecord>,
    pub samples: Vec<TrainingSample>,
    pub state: PipelineState,
}

impl RunOutput {
    pub fn models(&self) -> &[Model] {
        &self.state.models
    }

    pub fn write_records_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        write_records_csv(&self.records, w)
    }

    /// Writes `records.csv` and one `model_<i>.toml` per model into `dir`.
    /// An empty run writes nothing.
    pub fn export(&self, dir: &Path) -> Result<()> {
        if self.records.is_empty() {
            return Ok(());
        }
        std::fs::create_dir_all(dir)?;
        self.write_records_csv(std::fs::File::create(dir.join("records.csv"))?)?;
        for (i, m) in self.state.models.iter().enumerate() {
            m.save(&dir.join(format!("model_{i}.toml")))?;
        }
        Ok(())
    }
}

fn train_models<R: rand::Rng>(
    models: &mut [Model],
    samples: &[TrainingSample],
    config: TrainConfig,
    rng: &mut R,
) -> (Vec<Option<f64>>, Vec<String>) {
    let mut costs = Vec::with_capacity(models.len());
    let mut errors = Vec::new();
    for (i, m) in models.iter_mut().enumerate() {
        let data: Vec<_> = samples
            .iter()
            .filter_map(|s| sample_for(&m.signature, s))
            .collect();
        if data.is_empty() {
            costs.push(None);
            continue;
        }
        match m.train(&data, config, rng) {
            Ok(curve) => costs.push(Some(curve.final_cost)),
            Err(e) => {
                costs.push(None);
                errors.push(format!("model {i}: {e}"));
            }
        }
    }
    (costs, errors)
}

/// Visits every system of the configured schedule. A failing stage skips
/// its system and the loop continues; only configuration errors abort.
pub fn run_rwmp(config: &RwmpConfig) -> Result<RunOutput> {
    let (lattice, schedule) = config.validate()?;
    let root = RandomStream::new(config.seed);
    let mut train_rng = root.fork(TRAINING_STREAM);
    let models = config
        .training
        .models
        .iter()
        .map(|m| {
            Model::with_architecture(
                m.signature(),
                lattice.n_sites(),
                m.architecture,
                &mut train_rng,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let train_config = TrainConfig {
        epochs: config.training.epochs_per_system,
        ..config.training.train
    };
    let mut state = PipelineState::new(models);
    let mut records = Vec::with_capacity(schedule.len());
    let mut samples = Vec::new();
    for (k, v) in schedule.potentials().iter().enumerate() {
        let stream = k as u64;
        let mut rng = root.fork(stream);
        let record = RunRecord::new(k, v, config.seed, stream);
        let warm = if config.warm_start {
            state.warm()
        } else {
            None
        };
        match stages::visit(&lattice, config, record, warm, &mut rng) {
            Ok(visit) => {
                let (mut record, sample) = state.absorb(visit);
                samples.push(sample);
                let (costs, errors) =
                    train_models(&mut state.models, &samples, train_config, &mut train_rng);
                record.costs = costs;
                if !errors.is_empty() {
                    if !record.message.is_empty() {
                        record.message.push_str("; ");
                    }
                    record.message.push_str(&errors.join("; "));
                }
                records.push(record);
            }
            Err(e) => {
                state.counters.failures += 1;
                records.push(RunRecord::failed(k, v, config.seed, stream, e.to_string()));
            }
        }
    }
    Ok(RunOutput {
        records,
        samples,
        state,
    })
}

#[cfg(test)]
mod tests;
