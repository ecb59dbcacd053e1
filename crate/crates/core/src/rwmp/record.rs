use std::fmt;
use std::io::Write;

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// Kept, but some iterative stage stopped short of its tolerance.
    Unconverged,
    /// A stage failed; the system was skipped.
    Failed,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Ok => "ok",
            Status::Unconverged => "unconverged",
            Status::Failed => "failed",
        })
    }
}

/// One row per visited system.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub k: usize,
    pub v: Vec<f64>,
    pub status: Status,
    /// Phase-estimation energy, or the exact one in oracle mode.
    pub energy: Option<f64>,
    pub energy_exact: Option<f64>,
    pub density: Option<Vec<f64>>,
    /// Largest standard error among the counted strings.
    pub density_stderr: Option<f64>,
    pub v_s: Option<Vec<f64>>,
    pub ks_residual: Option<f64>,
    /// Fidelity of the starting state with the target ground state.
    pub initial_fidelity: Option<f64>,
    pub rte_steps: Option<usize>,
    pub rte_fidelity: Option<f64>,
    pub qpe_register: Option<usize>,
    /// Weight of the phase-estimation output on the selected level.
    pub qpe_weight: Option<f64>,
    /// Fidelity of the register after counting with the one before.
    pub qae_fidelity: Option<f64>,
    pub repair_iterations: Option<usize>,
    /// Full-dataset cost of each model after this system's update.
    pub costs: Vec<Option<f64>>,
    pub seed: u64,
    pub stream: u64,
    pub message: String,
}

impl RunRecord {
    pub fn new(k: usize, v: &[f64], seed: u64, stream: u64) -> Self {
        Self {
            k,
            v: v.to_vec(),
            status: Status::Ok,
            energy: None,
            energy_exact: None,
            density: None,
            density_stderr: None,
            v_s: None,
            ks_residual: None,
            initial_fidelity: None,
            rte_steps: None,
            rte_fidelity: None,
            qpe_register: None,
            qpe_weight: None,
            qae_fidelity: None,
            repair_iterations: None,
            costs: Vec::new(),
            seed,
            stream,
            message: String::new(),
        }
    }

    pub fn failed(k: usize, v: &[f64], seed: u64, stream: u64, message: String) -> Self {
        Self {
            status: Status::Failed,
            message,
            ..Self::new(k, v, seed, stream)
        }
    }
}

pub const RECORD_HEADER: [&str; 20] = [
    "k",
    "status",
    "v",
    "energy",
    "energy_exact",
    "density",
    "density_stderr",
    "v_s",
    "ks_residual",
    "initial_fidelity",
    "rte_steps",
    "rte_fidelity",
    "qpe_register",
    "qpe_weight",
    "qae_fidelity",
    "repair_iterations",
    "costs",
    "seed",
    "stream",
    "message",
];

fn opt<T: ToString>(x: Option<T>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

/// Shortest round-trip decimal, switching to an exponent outside
/// `[1e-5, 1e16)`.
fn real(x: f64) -> String {
    format!("{x:?}")
}

fn opt_real(x: Option<f64>) -> String {
    x.map_or_else(String::new, real)
}

fn vector(x: &[f64]) -> String {
    x.iter().map(|&v| real(v)).collect::<Vec<_>>().join(" ")
}

/// Writes the records as CSV with vector fields space-separated and
/// missing values empty (`-` inside vectors).
pub fn write_records_csv<W: Write>(records: &[RunRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(RECORD_HEADER)?;
    for r in records {
        let costs = r
            .costs
            .iter()
            .map(|c| c.map_or_else(|| "-".to_string(), real))
            .collect::<Vec<_>>()
            .join(" ");
        out.write_record([
            r.k.to_string(),
            r.status.to_string(),
            vector(&r.v),
            opt_real(r.energy),
            opt_real(r.energy_exact),
            opt(r.density.as_deref().map(vector)),
            opt_real(r.density_stderr),
            opt(r.v_s.as_deref().map(vector)),
            opt_real(r.ks_residual),
            opt_real(r.initial_fidelity),
            opt(r.rte_steps),
            opt_real(r.rte_fidelity),
            opt(r.qpe_register),
            opt_real(r.qpe_weight),
            opt_real(r.qae_fidelity),
            opt(r.repair_iterations),
            costs,
            r.seed.to_string(),
            r.stream.to_string(),
            r.message.clone(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
