use std::collections::BTreeSet;

use rayon::prelude::*;

use super::config::RwmpConfig;
use super::record::RunRecord;
use super::sample_for;
use super::stages;
use crate::error::{Error, Result};
use crate::ml::{backward, Gradients, Model, TrainingSample};
use crate::sim::RandomStream;

/// One independent system for a worker.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemJob {
    pub index: usize,
    pub v: Vec<f64>,
    pub seed: u64,
}

/// Worker results merged in system-index order.
#[derive(Debug, Clone)]
pub struct MergedBatch {
    /// Every job, failed ones included, sorted by index.
    pub records: Vec<RunRecord>,
    /// Indices that contributed to the gradient.
    pub indices: Vec<usize>,
    pub samples: Vec<TrainingSample>,
    /// Summed cost gradient over the contributing systems.
    pub gradient: Option<Gradients>,
    pub cost: f64,
}

impl MergedBatch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Plain gradient step `w -= eta * g` on `model`.
    pub fn apply(&self, model: &mut Model, eta: f64) {
        if let Some(g) = &self.gradient {
            model.network.apply_update(-eta, g);
        }
    }
}

struct WorkerOutput {
    record: RunRecord,
    contribution: Option<(TrainingSample, f64, Gradients)>,
}

fn work(
    lattice: &crate::dft::LatticeModel,
    config: &RwmpConfig,
    model: &Model,
    job: &SystemJob,
) -> WorkerOutput {
    let mut rng = RandomStream::new(job.seed);
    let record = RunRecord::new(job.index, &job.v, job.seed, 0);
    let visit = match stages::visit(lattice, config, record, None, &mut rng) {
        Ok(v) => v,
        Err(e) => {
            return WorkerOutput {
                record: RunRecord::failed(job.index, &job.v, job.seed, 0, e.to_string()),
                contribution: None,
            }
        }
    };
    let mut record = visit.record;
    let Some(sample) = sample_for(&model.signature, &visit.sample) else {
        record.message = "sample lacks a field the model needs".into();
        return WorkerOutput {
            record,
            contribution: None,
        };
    };
    match backward(
        &model.network,
        std::slice::from_ref(&sample),
        &model.signature,
        &[0],
    ) {
        Ok((cost, g)) => WorkerOutput {
            record,
            contribution: Some((sample, cost.value, g)),
        },
        Err(e) => WorkerOutput {
            record: RunRecord::failed(job.index, &job.v, job.seed, 0, e.to_string()),
            contribution: None,
        },
    }
}

/// Runs each job from a cold start on its own worker, then sums the cost
/// gradients of `model` in index order so the result does not depend on
/// `parallelism`. Failed jobs are recorded and left out of the batch.
pub fn batch_dispatch(
    config: &RwmpConfig,
    model: &Model,
    jobs: &[SystemJob],
    parallelism: usize,
) -> Result<MergedBatch> {
    if parallelism == 0 {
        return Err(Error::InvalidInput("parallelism must be positive".into()));
    }
    let indices: BTreeSet<usize> = jobs.iter().map(|j| j.index).collect();
    let seeds: BTreeSet<u64> = jobs.iter().map(|j| j.seed).collect();
    if indices.len() != jobs.len() || seeds.len() != jobs.len() {
        return Err(Error::InvalidInput(
            "jobs need distinct indices and independent seeds".into(),
        ));
    }
    let lattice = config.lattice.build()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    let mut outputs: Vec<WorkerOutput> = pool.install(|| {
        jobs.par_iter()
            .map(|j| work(&lattice, config, model, j))
            .collect()
    });
    outputs.sort_by_key(|o| o.record.k);

    let mut merged = MergedBatch {
        records: Vec::with_capacity(outputs.len()),
        indices: Vec::new(),
        samples: Vec::new(),
        gradient: None,
        cost: 0.0,
    };
    for out in outputs {
        if let Some((sample, cost, g)) = out.contribution {
            merged.indices.push(out.record.k);
            merged.samples.push(sample);
            merged.cost += cost;
            merged
                .gradient
                .get_or_insert_with(|| Gradients::zeros_like(&model.network.layers))
                .axpy(1.0, &g);
        }
        merged.records.push(out.record);
    }
    Ok(merged)
}
