use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::network::{Gradients, Network, Normalization};
use crate::error::{Error, Result};

/// Physical quantity carried by a model input or output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Potential,
    Density,
    Energy,
    KsPotential,
}

/// Inputs are concatenated in order; the output is one quantity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signature {
    pub inputs: Vec<Quantity>,
    pub output: Quantity,
}

impl Signature {
    pub fn new(inputs: &[Quantity], output: Quantity) -> Self {
        Self {
            inputs: inputs.to_vec(),
            output,
        }
    }

    pub fn input_width(&self, n_sites: usize) -> usize {
        self.inputs.iter().map(|q| width(*q, n_sites)).sum()
    }

    pub fn output_width(&self, n_sites: usize) -> usize {
        width(self.output, n_sites)
    }

    /// Index range of `q` within the concatenated input.
    pub fn input_range(&self, q: Quantity, n_sites: usize) -> Option<std::ops::Range<usize>> {
        let mut start = 0;
        for &p in &self.inputs {
            let w = width(p, n_sites);
            if p == q {
                return Some(start..start + w);
            }
            start += w;
        }
        None
    }
}

fn width(q: Quantity, n_sites: usize) -> usize {
    match q {
        Quantity::Energy => 1,
        _ => n_sites,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Oracle,
    Qae,
    Qpe,
}

/// One labelled system. For density-input models the energy label is the
/// universal part `E - n.v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub v: Option<Vec<f64>>,
    pub n: Option<Vec<f64>>,
    pub energy: Option<f64>,
    pub v_s: Option<Vec<f64>>,
    pub provenance: Provenance,
    pub weight: f64,
}

impl TrainingSample {
    pub fn new(provenance: Provenance) -> Self {
        Self {
            v: None,
            n: None,
            energy: None,
            v_s: None,
            provenance,
            weight: 1.0,
        }
    }

    fn field(&self, q: Quantity) -> Result<Vec<f64>> {
        let f = match q {
            Quantity::Potential => self.v.clone(),
            Quantity::Density => self.n.clone(),
            Quantity::Energy => self.energy.map(|e| vec![e]),
            Quantity::KsPotential => self.v_s.clone(),
        };
        f.ok_or_else(|| Error::InvalidInput(format!("training sample lacks {q:?}")))
    }

    pub fn input(&self, sig: &Signature) -> Result<Vec<f64>> {
        let mut x = Vec::new();
        for q in &sig.inputs {
            x.extend(self.field(*q)?);
        }
        Ok(x)
    }

    pub fn target(&self, sig: &Signature) -> Result<Vec<f64>> {
        self.field(sig.output)
    }
}

/// Batch cost `g = sum_s sum_k r_sk^2` with `r_s = sqrt(w_s) (y_s - t_s)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub value: f64,
    pub residuals: Vec<Vec<f64>>,
    pub batch: Vec<usize>,
    pub eta: f64,
}

fn batch_pass(
    net: &Network,
    data: &[TrainingSample],
    sig: &Signature,
    batch: &[usize],
    with_gradient: bool,
) -> Result<(CostReport, Option<Gradients>)> {
    let mut residuals = Vec::with_capacity(batch.len());
    let mut grads = with_gradient.then(|| Gradients::zeros_like(&net.layers));
    for &i in batch {
        let s = data
            .get(i)
            .ok_or_else(|| Error::InvalidInput(format!("batch index {i} out of range")))?;
        let x = s.input(sig)?;
        let t = s.target(sig)?;
        let trace = net.forward_trace(&x)?;
        let y = net.denormalize(trace.activations.last().expect("at least one layer"));
        if t.len() != y.len() {
            return Err(Error::Shape {
                expected: y.len(),
                actual: t.len(),
            });
        }
        let sw = s.weight.sqrt();
        let r: Vec<f64> = y.iter().zip(&t).map(|(a, b)| sw * (a - b)).collect();
        if let Some(g) = grads.as_mut() {
            let d: Vec<f64> = r.iter().map(|ri| 2.0 * sw * ri).collect();
            let (gi, _) = net.backward(&trace, &d);
            g.axpy(1.0, &gi);
        }
        residuals.push(r);
    }
    let value = residuals.iter().flatten().map(|r| r * r).sum();
    Ok((
        CostReport {
            value,
            residuals,
            batch: batch.to_vec(),
            eta: 0.0,
        },
        grads,
    ))
}

pub fn batch_cost(
    net: &Network,
    data: &[TrainingSample],
    sig: &Signature,
    batch: &[usize],
) -> Result<CostReport> {
    Ok(batch_pass(net, data, sig, batch, false)?.0)
}

/// Cost and its gradient with respect to every parameter.
pub fn backward(
    net: &Network,
    data: &[TrainingSample],
    sig: &Signature,
    batch: &[usize],
) -> Result<(CostReport, Gradients)> {
    let (c, g) = batch_pass(net, data, sig, batch, true)?;
    Ok((c, g.expect("gradient requested")))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepReport {
    pub before: CostReport,
    pub after: f64,
    pub eta_used: f64,
    pub halvings: usize,
    pub accepted: bool,
}

/// Halvings tried before a step is given up.
const MAX_HALVINGS: usize = 60;

/// Gradient step with optional heavy-ball momentum. A step is only kept
/// if it lowers the cost of the same batch; otherwise the rate is halved
/// after dropping the momentum.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub eta: f64,
    pub momentum: f64,
    velocity: Option<Gradients>,
}

impl Sgd {
    pub fn new(eta: f64, momentum: f64) -> Self {
        Self {
            eta,
            momentum,
            velocity: None,
        }
    }

    pub fn step(
        &mut self,
        net: &mut Network,
        data: &[TrainingSample],
        sig: &Signature,
        batch: &[usize],
    ) -> Result<StepReport> {
        if !(self.eta >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "learning rate must be non-negative, got {}",
                self.eta
            )));
        }
        let (mut before, grad) = backward(net, data, sig, batch)?;
        before.eta = self.eta;
        if !grad.is_finite() || !before.value.is_finite() {
            return Err(Error::NonFinite(format!(
                "gradient or cost on batch {:?} (cost {})",
                batch, before.value
            )));
        }
        let no_step = |before: CostReport| StepReport {
            after: before.value,
            before,
            eta_used: 0.0,
            halvings: 0,
            accepted: false,
        };
        if self.eta == 0.0 || grad.max_abs() == 0.0 {
            return Ok(no_step(before));
        }
        let mut eta = self.eta;
        let mut use_momentum = self.momentum > 0.0 && self.velocity.is_some();
        let mut halvings = 0;
        while halvings <= MAX_HALVINGS {
            let mut step = grad.clone();
            step.scale(-eta);
            if use_momentum {
                step.axpy(self.momentum, self.velocity.as_ref().expect("checked"));
            }
            let mut trial = net.clone();
            trial.apply_update(1.0, &step);
            let after = batch_cost(&trial, data, sig, batch)?.value;
            if after < before.value {
                *net = trial;
                self.velocity = Some(step);
                return Ok(StepReport {
                    before,
                    after,
                    eta_used: eta,
                    halvings,
                    accepted: true,
                });
            }
            // A failed momentum step is retried as a plain gradient step
            // before the rate is cut.
            if use_momentum {
                use_momentum = false;
            } else {
                eta /= 2.0;
                halvings += 1;
            }
        }
        self.velocity = None;
        Ok(no_step(before))
    }
}

/// One plain gradient step with the halving line check.
pub fn sgd_step(
    net: &mut Network,
    data: &[TrainingSample],
    sig: &Signature,
    batch: &[usize],
    eta: f64,
) -> Result<StepReport> {
    Sgd::new(eta, 0.0).step(net, data, sig, batch)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub eta: f64,
    pub momentum: f64,
    /// Rate multiplier after a step accepted without halving.
    pub eta_growth: f64,
    pub eta_max: f64,
    /// Epochs without relative improvement above `min_improvement`
    /// before stopping.
    pub patience: usize,
    pub min_improvement: f64,
    /// Stop once the full-dataset cost drops below this.
    pub target_cost: f64,
    /// Fit the input/output normalization to the dataset first.
    pub normalize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            batch_size: 8,
            eta: 0.01,
            momentum: 0.9,
            eta_growth: 1.05,
            eta_max: 1.0,
            patience: 200,
            min_improvement: 1e-4,
            target_cost: 0.0,
            normalize: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub cost: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearningCurve {
    pub rows: Vec<EpochRow>,
    pub final_cost: f64,
    pub stopped_early: bool,
}

impl LearningCurve {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Mini-batch training over shuffled epochs.
pub fn train<R: Rng>(
    net: &mut Network,
    data: &[TrainingSample],
    sig: &Signature,
    config: TrainConfig,
    rng: &mut R,
) -> Result<LearningCurve> {
    if data.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidInput("batch size must be positive".into()));
    }
    if config.normalize {
        let xs = data
            .iter()
            .map(|s| s.input(sig))
            .collect::<Result<Vec<_>>>()?;
        let ts = data
            .iter()
            .map(|s| s.target(sig))
            .collect::<Result<Vec<_>>>()?;
        net.normalization = Normalization::fit(&xs, &ts);
    }
    let all: Vec<usize> = (0..data.len()).collect();
    let mut sgd = Sgd::new(config.eta, config.momentum);
    let mut rows = Vec::new();
    let mut best = batch_cost(net, data, sig, &all)?.value;
    let mut since_best = 0;
    let mut stopped_early = false;
    let mut order = all.clone();
    for epoch in 0..config.epochs {
        order.shuffle(rng);
        for batch in order.chunks(config.batch_size) {
            let r = sgd.step(net, data, sig, batch)?;
            if r.accepted {
                sgd.eta = if r.halvings == 0 {
                    (r.eta_used * config.eta_growth).min(config.eta_max)
                } else {
                    r.eta_used
                };
            }
        }
        let cost = batch_cost(net, data, sig, &all)?.value;
        rows.push(EpochRow {
            epoch,
            cost,
            eta: sgd.eta,
        });
        if cost < best * (1.0 - config.min_improvement) {
            best = cost;
            since_best = 0;
        } else {
            since_best += 1;
        }
        if cost <= config.target_cost || since_best >= config.patience {
            stopped_early = epoch + 1 < config.epochs;
            break;
        }
    }
    let final_cost = batch_cost(net, data, sig, &all)?.value;
    Ok(LearningCurve {
        rows,
        final_cost,
        stopped_early,
    })
}
