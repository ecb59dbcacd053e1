//! Feed-forward models trained by mini-batch gradient descent on lattice
//! data: energies, densities and KS potentials as functions of potentials
//! or densities, with functional derivatives by backpropagation.

mod network;
mod train;

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dft::DensityFunctional;
use crate::error::{Error, Result};

pub use network::{
    Activation, Connectivity, ForwardTrace, Gradients, Layer, Network, Normalization,
};
pub use train::{
    backward, batch_cost, sgd_step, train, CostReport, EpochRow, LearningCurve, Provenance,
    Quantity, Sgd, Signature, StepReport, TrainConfig, TrainingSample,
};

/// Hidden layers per model unless configured otherwise.
pub const DEFAULT_HIDDEN_LAYERS: usize = 2;
/// Hidden width per lattice site.
pub const DEFAULT_WIDTH_PER_SITE: usize = 4;

/// Region of input space covered by the training data, plus the particle
/// content the model was trained for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingManifold {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub n_electrons: Option<usize>,
    pub polarization: Option<[usize; 2]>,
    /// Box spanned by the external potentials of the training systems.
    #[serde(default)]
    pub potential_lower: Option<Vec<f64>>,
    #[serde(default)]
    pub potential_upper: Option<Vec<f64>>,
}

impl TrainingManifold {
    pub fn from_inputs(inputs: &[Vec<f64>]) -> Self {
        let d = inputs.first().map_or(0, |x| x.len());
        let lower = (0..d)
            .map(|k| inputs.iter().map(|x| x[k]).fold(f64::INFINITY, f64::min))
            .collect();
        let upper = (0..d)
            .map(|k| {
                inputs
                    .iter()
                    .map(|x| x[k])
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        Self {
            lower,
            upper,
            n_electrons: None,
            polarization: None,
            potential_lower: None,
            potential_upper: None,
        }
    }

    /// Whether `v` lies in the potential box; `None` if no potentials were
    /// recorded.
    pub fn contains_potential(&self, v: &[f64], slack: f64) -> Option<bool> {
        let (lo, hi) = (
            self.potential_lower.as_ref()?,
            self.potential_upper.as_ref()?,
        );
        let inner = Self::from_inputs(&[lo.clone(), hi.clone()]);
        Some(inner.contains(v, slack))
    }

    /// Componentwise box check with relative slack on each range.
    pub fn contains(&self, x: &[f64], slack: f64) -> bool {
        x.len() == self.lower.len()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| {
                    let pad = slack * (hi - lo).max(1e-12);
                    *v >= lo - pad && *v <= hi + pad
                })
    }
}

/// A network together with what it maps and where it was trained.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub network: Network,
    pub signature: Signature,
    pub n_sites: usize,
    pub manifold: Option<TrainingManifold>,
}

/// Layout options for [`Model::with_architecture`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Architecture {
    pub hidden_layers: usize,
    pub width_per_site: usize,
    pub activation: Activation,
    /// Band half-width for density-output models; `None` means dense.
    pub bandwidth: Option<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            hidden_layers: DEFAULT_HIDDEN_LAYERS,
            width_per_site: DEFAULT_WIDTH_PER_SITE,
            activation: Activation::Tanh,
            bandwidth: Some(1),
        }
    }
}

impl Model {
    pub fn new<R: Rng>(signature: Signature, n_sites: usize, rng: &mut R) -> Result<Self> {
        Self::with_architecture(signature, n_sites, Architecture::default(), rng)
    }

    /// Banded masks apply only to single-input models predicting a
    /// density; everything else is dense.
    pub fn with_architecture<R: Rng>(
        signature: Signature,
        n_sites: usize,
        arch: Architecture,
        rng: &mut R,
    ) -> Result<Self> {
        if n_sites == 0 || signature.inputs.is_empty() {
            return Err(Error::InvalidInput(
                "a model needs sites and at least one input".into(),
            ));
        }
        let n_in = signature.input_width(n_sites);
        let n_out = signature.output_width(n_sites);
        let conn = match arch.bandwidth {
            Some(bandwidth)
                if signature.output == Quantity::Density && signature.inputs.len() == 1 =>
            {
                Connectivity::Band { bandwidth }
            }
            _ => Connectivity::Dense,
        };
        let width = arch.width_per_site * n_sites;
        let mut sizes = vec![n_in];
        sizes.extend(std::iter::repeat_n(width, arch.hidden_layers));
        sizes.push(n_out);
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let act = if l == last {
                    Activation::Identity
                } else {
                    arch.activation
                };
                Layer::random(w[0], w[1], act, conn.mask(w[1], w[0], n_sites), rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            network: Network::new(layers)?,
            signature,
            n_sites,
            manifold: None,
        })
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.network.forward(x)
    }

    pub fn predict(&self, sample: &TrainingSample) -> Result<Vec<f64>> {
        self.forward(&sample.input(&self.signature)?)
    }

    /// Trains on `data` and records the covered input box.
    pub fn train<R: Rng>(
        &mut self,
        data: &[TrainingSample],
        config: TrainConfig,
        rng: &mut R,
    ) -> Result<LearningCurve> {
        let curve = train(&mut self.network, data, &self.signature, config, rng)?;
        let xs = data
            .iter()
            .map(|s| s.input(&self.signature))
            .collect::<Result<Vec<_>>>()?;
        let mut manifold = TrainingManifold::from_inputs(&xs);
        if let Some(n) = data.iter().find_map(|s| s.n.as_ref()) {
            manifold.n_electrons = Some(n.iter().sum::<f64>().round() as usize);
        }
        let vs: Vec<Vec<f64>> = data.iter().filter_map(|s| s.v.clone()).collect();
        if vs.len() == data.len() {
            let b = TrainingManifold::from_inputs(&vs);
            manifold.potential_lower = Some(b.lower);
            manifold.potential_upper = Some(b.upper);
        }
        if let Some(old) = &self.manifold {
            manifold.polarization = old.polarization;
            manifold.n_electrons = manifold.n_electrons.or(old.n_electrons);
        }
        self.manifold = Some(manifold);
        Ok(curve)
    }

    /// `dE/dq` at `x` for a scalar-output model with `q` among its inputs.
    pub fn functional_derivative(&self, x: &[f64], wrt: Quantity) -> Result<Vec<f64>> {
        if self.signature.output_width(self.n_sites) != 1 {
            return Err(Error::InvalidInput(
                "functional derivative needs a scalar output".into(),
            ));
        }
        let range = self
            .signature
            .input_range(wrt, self.n_sites)
            .ok_or_else(|| Error::InvalidInput(format!("model has no {wrt:?} input")))?;
        Ok(self.network.input_gradient(x, 0)?[range].to_vec())
    }

    pub fn in_manifold(&self, x: &[f64]) -> bool {
        self.manifold.as_ref().is_none_or(|m| m.contains(x, 0.0))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(&ModelFile::from(self))?)
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str::<ModelFile>(s)?.try_into()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerFile {
    activation: Activation,
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    mask: Vec<Vec<u8>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    n_sites: usize,
    signature: Signature,
    normalization: Normalization,
    manifold: Option<TrainingManifold>,
    layers: Vec<LayerFile>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != nc) {
        return Err(Error::Parse("ragged matrix in model file".into()));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

impl From<&Model> for ModelFile {
    fn from(m: &Model) -> Self {
        Self {
            n_sites: m.n_sites,
            signature: m.signature.clone(),
            normalization: m.network.normalization.clone(),
            manifold: m.manifold.clone(),
            layers: m
                .network
                .layers
                .iter()
                .map(|l| LayerFile {
                    activation: l.activation,
                    weights: rows(&l.weights),
                    bias: l.bias.iter().copied().collect(),
                    mask: l
                        .mask
                        .row_iter()
                        .map(|r| r.iter().map(|&x| x as u8).collect())
                        .collect(),
                })
                .collect(),
        }
    }
}

impl TryFrom<ModelFile> for Model {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        let layers = f
            .layers
            .into_iter()
            .map(|l| {
                let mask: Vec<Vec<f64>> = l
                    .mask
                    .iter()
                    .map(|r| r.iter().map(|&x| x as f64).collect())
                    .collect();
                Layer::new(
                    matrix(&l.weights)?,
                    DVector::from_vec(l.bias),
                    l.activation,
                    matrix(&mask)?,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let mut network = Network::new(layers)?;
        if network.n_in() != f.signature.input_width(f.n_sites)
            || network.n_out() != f.signature.output_width(f.n_sites)
        {
            return Err(Error::Parse(
                "layer shapes do not match the signature".into(),
            ));
        }
        let nrm = &f.normalization;
        if nrm.in_shift.len() != network.n_in()
            || nrm.in_scale.len() != network.n_in()
            || nrm.out_shift.len() != network.n_out()
            || nrm.out_scale.len() != network.n_out()
        {
            return Err(Error::Parse(
                "normalization widths do not match the network".into(),
            ));
        }
        network.normalization = f.normalization;
        Ok(Self {
            network,
            signature: f.signature,
            n_sites: f.n_sites,
            manifold: f.manifold,
        })
    }
}

/// A trained `F[n]` model (density in, energy out) used as a functional.
#[derive(Debug, Clone)]
pub struct MlFunctional {
    model: Model,
}

impl MlFunctional {
    pub fn new(model: Model) -> Result<Self> {
        if model.signature != Signature::new(&[Quantity::Density], Quantity::Energy) {
            return Err(Error::InvalidInput(
                "an ML functional maps a density to an energy".into(),
            ));
        }
        Ok(Self { model })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }
}

impl DensityFunctional for MlFunctional {
    fn value(&self, n: &[f64]) -> Result<f64> {
        Ok(self.model.forward(n)?[0])
    }

    fn derivative(&self, n: &[f64]) -> Result<Vec<f64>> {
        self.model.functional_derivative(n, Quantity::Density)
    }

    fn in_domain(&self, n: &[f64]) -> bool {
        self.model.in_manifold(n)
    }
}

#[cfg(test)]
mod tests;
