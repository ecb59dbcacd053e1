use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pointwise nonlinearity of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    /// `x / (1 + |x|)`.
    Softsign,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Softsign => x / (1.0 + x.abs()),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - x.tanh().powi(2),
            Activation::Softsign => 1.0 / (1.0 + x.abs()).powi(2),
        }
    }
}

/// Connectivity of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Connectivity {
    Dense,
    /// Units are placed on the lattice coordinate `[0, sites)`; an output
    /// connects to inputs within `bandwidth` sites.
    Band {
        bandwidth: usize,
    },
}

impl Connectivity {
    pub fn mask(self, n_out: usize, n_in: usize, sites: usize) -> DMatrix<f64> {
        match self {
            Connectivity::Dense => DMatrix::from_element(n_out, n_in, 1.0),
            Connectivity::Band { bandwidth } => {
                let site = |k: usize, len: usize| (k * sites / len) as i64;
                DMatrix::from_fn(n_out, n_in, |i, j| {
                    if (site(i, n_out) - site(j, n_in)).unsigned_abs() as usize <= bandwidth {
                        1.0
                    } else {
                        0.0
                    }
                })
            }
        }
    }
}

/// `x -> S(W x + b)` with a fixed 0/1 mask on `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub activation: Activation,
    pub mask: DMatrix<f64>,
}

impl Layer {
    pub fn new(
        weights: DMatrix<f64>,
        bias: DVector<f64>,
        activation: Activation,
        mask: DMatrix<f64>,
    ) -> Result<Self> {
        if bias.len() != weights.nrows() || mask.shape() != weights.shape() {
            return Err(Error::Shape {
                expected: weights.nrows(),
                actual: bias.len(),
            });
        }
        if mask.iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(Error::InvalidInput("mask entries must be 0 or 1".into()));
        }
        let weights = weights.component_mul(&mask);
        Ok(Self {
            weights,
            bias,
            activation,
            mask,
        })
    }

    /// Uniform weights in `±sqrt(6 / (fan_in + fan_out))` on unmasked
    /// entries, zero bias.
    pub fn random<R: Rng>(
        n_in: usize,
        n_out: usize,
        activation: Activation,
        mask: DMatrix<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        let a = (6.0 / (n_in + n_out) as f64).sqrt();
        let weights = DMatrix::from_fn(n_out, n_in, |_, _| rng.gen_range(-a..a));
        Self::new(weights, DVector::zeros(n_out), activation, mask)
    }

    pub fn n_in(&self) -> usize {
        self.weights.ncols()
    }

    pub fn n_out(&self) -> usize {
        self.weights.nrows()
    }
}

/// Per-component affine maps applied before the first layer and after the
/// last: `x' = (x - in_shift) / in_scale`, `y = y' * out_scale + out_shift`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub in_shift: Vec<f64>,
    pub in_scale: Vec<f64>,
    pub out_shift: Vec<f64>,
    pub out_scale: Vec<f64>,
}

impl Normalization {
    pub fn identity(n_in: usize, n_out: usize) -> Self {
        Self {
            in_shift: vec![0.0; n_in],
            in_scale: vec![1.0; n_in],
            out_shift: vec![0.0; n_out],
            out_scale: vec![1.0; n_out],
        }
    }

    /// Mean and standard deviation per component; constant components keep
    /// unit scale.
    pub fn fit(inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Self {
        let stats = |rows: &[Vec<f64>]| -> (Vec<f64>, Vec<f64>) {
            let d = rows[0].len();
            let m = rows.len() as f64;
            let mean: Vec<f64> = (0..d)
                .map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / m)
                .collect();
            let sd = (0..d)
                .map(|k| {
                    let s = (rows.iter().map(|r| (r[k] - mean[k]).powi(2)).sum::<f64>() / m).sqrt();
                    if s > 1e-12 {
                        s
                    } else {
                        1.0
                    }
                })
                .collect();
            (mean, sd)
        };
        let (in_shift, in_scale) = stats(inputs);
        let (out_shift, out_scale) = stats(targets);
        Self {
            in_shift,
            in_scale,
            out_shift,
            out_scale,
        }
    }
}

/// Stored pre-activations and activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `activations[0]` is the normalized input.
    pub activations: Vec<DVector<f64>>,
    pub pre: Vec<DVector<f64>>,
}

/// Gradient of a scalar with respect to every weight and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

impl Gradients {
    pub fn zeros_like(layers: &[Layer]) -> Self {
        Self {
            weights: layers
                .iter()
                .map(|l| DMatrix::zeros(l.n_out(), l.n_in()))
                .collect(),
            biases: layers.iter().map(|l| DVector::zeros(l.n_out())).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.weights
            .iter()
            .map(|w| w.amax())
            .chain(self.biases.iter().map(|b| b.amax()))
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|x| x.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|x| x.is_finite()))
    }

    pub fn axpy(&mut self, a: f64, other: &Gradients) {
        for (w, o) in self.weights.iter_mut().zip(&other.weights) {
            *w += o * a;
        }
        for (b, o) in self.biases.iter_mut().zip(&other.biases) {
            *b += o * a;
        }
    }

    pub fn scale(&mut self, a: f64) {
        for w in &mut self.weights {
            *w *= a;
        }
        for b in &mut self.biases {
            *b *= a;
        }
    }
}

/// Feed-forward stack of masked layers with input/output normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
    pub normalization: Normalization,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidInput(
                "a network needs at least one layer".into(),
            ));
        }
        for w in layers.windows(2) {
            if w[0].n_out() != w[1].n_in() {
                return Err(Error::Shape {
                    expected: w[0].n_out(),
                    actual: w[1].n_in(),
                });
            }
        }
        let normalization =
            Normalization::identity(layers[0].n_in(), layers[layers.len() - 1].n_out());
        Ok(Self {
            layers,
            normalization,
        })
    }

    pub fn n_in(&self) -> usize {
        self.layers[0].n_in()
    }

    pub fn n_out(&self) -> usize {
        self.layers[self.layers.len() - 1].n_out()
    }

    pub fn n_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.mask.iter().filter(|&&m| m != 0.0).count() + l.bias.len())
            .sum()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_in() {
            return Err(Error::Shape {
                expected: self.n_in(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let trace = self.forward_trace(x)?;
        Ok(self.denormalize(trace.activations.last().expect("at least one layer")))
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let nrm = &self.normalization;
        let x0 = DVector::from_iterator(
            x.len(),
            x.iter()
                .enumerate()
                .map(|(k, v)| (v - nrm.in_shift[k]) / nrm.in_scale[k]),
        );
        let mut activations = vec![x0];
        let mut pre = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let z = &layer.weights * activations.last().expect("nonempty") + &layer.bias;
            activations.push(z.map(|v| layer.activation.apply(v)));
            pre.push(z);
        }
        Ok(ForwardTrace { activations, pre })
    }

    /// Maps the last activation of a trace to the model output.
    pub fn denormalize(&self, y: &DVector<f64>) -> Vec<f64> {
        let nrm = &self.normalization;
        y.iter()
            .enumerate()
            .map(|(k, v)| v * nrm.out_scale[k] + nrm.out_shift[k])
            .collect()
    }

    /// Backpropagates `dC/dy` (with respect to the denormalized output)
    /// through a recorded pass. Returns parameter gradients and `dC/dx`.
    pub fn backward(&self, trace: &ForwardTrace, d_out: &[f64]) -> (Gradients, Vec<f64>) {
        let nrm = &self.normalization;
        let mut delta = DVector::from_iterator(
            d_out.len(),
            d_out.iter().enumerate().map(|(k, d)| d * nrm.out_scale[k]),
        );
        let mut grads = Gradients::zeros_like(&self.layers);
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let dz = delta.component_mul(&trace.pre[l].map(|v| layer.activation.derivative(v)));
            grads.weights[l] = (&dz * trace.activations[l].transpose()).component_mul(&layer.mask);
            grads.biases[l] = dz.clone();
            delta = layer.weights.transpose() * dz;
        }
        let dx = delta
            .iter()
            .enumerate()
            .map(|(k, d)| d / nrm.in_scale[k])
            .collect();
        (grads, dx)
    }

    /// `d y_k / d x`.
    pub fn input_gradient(&self, x: &[f64], k: usize) -> Result<Vec<f64>> {
        if k >= self.n_out() {
            return Err(Error::Shape {
                expected: self.n_out(),
                actual: k,
            });
        }
        let trace = self.forward_trace(x)?;
        let mut seed = vec![0.0; self.n_out()];
        seed[k] = 1.0;
        Ok(self.backward(&trace, &seed).1)
    }

    /// `theta += a * g`, keeping masked entries at zero.
    pub fn apply_update(&mut self, a: f64, g: &Gradients) {
        for ((layer, gw), gb) in self.layers.iter_mut().zip(&g.weights).zip(&g.biases) {
            layer.weights += gw.component_mul(&layer.mask) * a;
            layer.bias += gb * a;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::RandomStream;

    #[test]
    fn band_mask_shape() {
        let m = Connectivity::Band { bandwidth: 0 }.mask(4, 2, 2);
        assert_eq!(m.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0]);
        assert_eq!(m.row(3).iter().copied().collect::<Vec<_>>(), vec![0.0, 1.0]);
        assert_eq!(Connectivity::Band { bandwidth: 1 }.mask(4, 2, 2).sum(), 8.0);
    }

    #[test]
    fn single_identity_layer_is_matrix_multiply() {
        let w = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.5, 0.0]);
        let b = DVector::from_column_slice(&[0.1, -0.2]);
        let layer =
            Layer::new(w, b, Activation::Identity, DMatrix::from_element(2, 3, 1.0)).unwrap();
        let net = Network::new(vec![layer]).unwrap();
        let y = net.forward(&[1.0, 1.0, 2.0]).unwrap();
        assert_eq!(y, vec![1.0 + 2.0 + 6.0 + 0.1, -1.0 + 0.5 - 0.2]);
    }

    #[test]
    fn odd_activation_maps_zero_to_zero() {
        let mut rng = RandomStream::new(3);
        let layers = vec![
            Layer::random(
                3,
                5,
                Activation::Tanh,
                DMatrix::from_element(5, 3, 1.0),
                &mut rng,
            )
            .unwrap(),
            Layer::random(
                5,
                2,
                Activation::Softsign,
                DMatrix::from_element(2, 5, 1.0),
                &mut rng,
            )
            .unwrap(),
        ];
        let net = Network::new(layers).unwrap();
        assert_eq!(net.forward(&[0.0; 3]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn mask_zeroes_weights() {
        let mask = Connectivity::Band { bandwidth: 0 }.mask(2, 2, 2);
        let l = Layer::new(
            DMatrix::from_element(2, 2, 1.0),
            DVector::zeros(2),
            Activation::Identity,
            mask,
        )
        .unwrap();
        assert_eq!(l.weights[(0, 1)], 0.0);
        assert_eq!(l.weights[(0, 0)], 1.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let net = Network::new(vec![Layer::new(
            DMatrix::zeros(1, 2),
            DVector::zeros(1),
            Activation::Identity,
            DMatrix::from_element(1, 2, 1.0),
        )
        .unwrap()])
        .unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::Shape { .. })));
    }
}
