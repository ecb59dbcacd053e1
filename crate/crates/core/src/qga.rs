//! Single-query gradient estimation by phase kickback.
//!
//! A uniform superposition over `2^(mN)` displacement points around the
//! centre `c` receives the phase `2 pi round(2^(N+Np) f / (M L)) / 2^Np`
//! from one oracle application; an inverse QFT on each component register
//! then reads `2^N (df/dx_k) / M`. The kickback register is never
//! simulated as qubits: modular addition into its Fourier state is exactly
//! this phase multiplication.

use std::f64::consts::PI;
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sim::{RandomStream, Statevector, MAX_QUBITS};

pub const DEFAULT_BITS: usize = 8;
pub const DEFAULT_KICKBACK_BITS: usize = 16;

/// Black-box real function wrapped with a query counter. One call of
/// [`QuantumOracle::kickback`] is one coherent query, however many grid
/// branches it touches; classical probe evaluations are tallied apart.
pub struct QuantumOracle<'f> {
    f: &'f (dyn Fn(&[f64]) -> f64 + Sync),
    queries: AtomicUsize,
    classical: AtomicUsize,
}

impl<'f> QuantumOracle<'f> {
    pub fn new(f: &'f (dyn Fn(&[f64]) -> f64 + Sync)) -> Self {
        Self {
            f,
            queries: AtomicUsize::new(0),
            classical: AtomicUsize::new(0),
        }
    }

    pub fn queries(&self) -> usize {
        self.queries.load(Ordering::SeqCst)
    }

    pub fn classical_evaluations(&self) -> usize {
        self.classical.load(Ordering::SeqCst)
    }

    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        self.classical.fetch_add(1, Ordering::SeqCst);
        let y = (self.f)(x);
        if !y.is_finite() {
            return Err(Error::NonFinite(format!("oracle value at {x:?}")));
        }
        Ok(y)
    }

    /// Applies the kickback phase to every branch of the displacement
    /// superposition. Returns the per-branch oracle values alongside.
    pub fn kickback(&self, grid: &Grid, amps: &mut [Complex64]) -> Result<Vec<f64>> {
        self.queries.fetch_add(1, Ordering::SeqCst);
        let values: Vec<f64> = (0..grid.size())
            .into_par_iter()
            .map(|idx| (self.f)(&grid.point(idx)))
            .collect();
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "oracle value at {:?}",
                grid.point(i)
            )));
        }
        let modulus = (1u64 << grid.kickback_bits) as f64;
        let factor = grid.fixed_point_factor();
        for (a, &v) in amps.iter_mut().zip(&values) {
            let scaled = (v * factor).round();
            if scaled.abs() >= (1u64 << 52) as f64 {
                return Err(Error::InvalidInput(format!(
                    "oracle value {v} exceeds the fixed-point range; rescale M or L"
                )));
            }
            let w = scaled.rem_euclid(modulus);
            *a *= Complex64::from_polar(1.0, 2.0 * PI * w / modulus);
        }
        Ok(values)
    }
}

/// Displacement grid `c + L (delta - 2^N/2) / 2^N`, component `k` held in
/// qubits `kN..(k+1)N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub center: Vec<f64>,
    pub bits: usize,
    pub kickback_bits: usize,
    pub window: f64,
    pub scale: f64,
}

impl Grid {
    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn size(&self) -> usize {
        1usize << (self.bits * self.dim())
    }

    pub fn offset(&self, delta: usize) -> f64 {
        let half = (1usize << (self.bits - 1)) as f64;
        self.window * (delta as f64 - half) / (1usize << self.bits) as f64
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        let mask = (1usize << self.bits) - 1;
        self.center
            .iter()
            .enumerate()
            .map(|(k, c)| c + self.offset((idx >> (k * self.bits)) & mask))
            .collect()
    }

    /// `2^(N+Np) / (M L)`.
    pub fn fixed_point_factor(&self) -> f64 {
        (1u64 << (self.bits + self.kickback_bits)) as f64 / (self.scale * self.window)
    }

    /// Smallest representable gradient increment, `M / 2^N`.
    pub fn step(&self) -> f64 {
        self.scale / (1usize << self.bits) as f64
    }

    /// Two's-complement decode of a component register.
    pub fn decode(&self, raw: usize) -> f64 {
        let n = 1i64 << self.bits;
        let mut y = raw as i64;
        if y >= n / 2 {
            y -= n;
        }
        y as f64 * self.step()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientJob {
    pub center: Vec<f64>,
    pub bits: usize,
    pub kickback_bits: usize,
    /// Window `L`; chosen from the probe when `None`.
    pub window: Option<f64>,
    /// Output scale `M`; chosen from the probe when `None`.
    pub scale: Option<f64>,
    /// Upper limit on an auto-chosen window.
    pub max_window: f64,
}

impl GradientJob {
    pub fn new(center: Vec<f64>) -> Self {
        Self {
            center,
            bits: DEFAULT_BITS,
            kickback_bits: DEFAULT_KICKBACK_BITS,
            window: None,
            scale: None,
            max_window: 1.0,
        }
    }

    pub fn with_bits(mut self, bits: usize) -> Self {
        self.bits = bits;
        self
    }

    pub fn with_window(mut self, window: f64) -> Self {
        self.window = Some(window);
        self
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = Some(scale);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientResult {
    /// Decoded sampled outcome.
    pub gradient: Vec<f64>,
    /// Sampled register values, one per component.
    pub raw: Vec<usize>,
    /// Decode of the most likely joint outcome.
    pub peak_gradient: Vec<f64>,
    pub peak_raw: Vec<usize>,
    pub peak_probability: f64,
    /// Expected signed decode under each component's marginal.
    pub mean_gradient: Vec<f64>,
    /// Quantization step `M / 2^N`.
    pub step: f64,
    pub window: f64,
    pub scale: f64,
    /// `2 r / L` with `r` the largest residual of a least-squares linear
    /// fit to the oracle over the window.
    pub truncation_estimate: f64,
    /// Set when the fitted slope of some component reaches `M / 2`, where
    /// the signed register wraps.
    pub saturated: bool,
    pub oracle_queries: usize,
}

/// Picks `M` as the power of two at least four times the largest probed
/// slope and `L` so the quadratic phase across the window stays below
/// `pi / 16`.
fn auto_scale(oracle: &QuantumOracle<'_>, job: &GradientJob) -> Result<(f64, f64)> {
    let c = &job.center;
    let h = 1e-4 * c.iter().fold(1.0f64, |a, x| a.max(x.abs()));
    let f0 = oracle.evaluate(c)?;
    let mut slope: f64 = 0.0;
    let mut curvature: f64 = 0.0;
    let mut x = c.clone();
    for k in 0..c.len() {
        x[k] = c[k] + h;
        let fp = oracle.evaluate(&x)?;
        x[k] = c[k] - h;
        let fm = oracle.evaluate(&x)?;
        x[k] = c[k];
        slope = slope.max(((fp - fm) / (2.0 * h)).abs());
        curvature = curvature.max(((fp + fm - 2.0 * f0) / (h * h)).abs());
    }
    let scale = match job.scale {
        Some(m) => m,
        None => {
            let target = (4.0 * slope).max(1e-6);
            2f64.powi(target.log2().ceil() as i32)
        }
    };
    let window = match job.window {
        Some(l) => l,
        None => {
            let n = (1usize << job.bits) as f64;
            if curvature > 0.0 {
                job.max_window.min(scale / (4.0 * n * curvature))
            } else {
                job.max_window
            }
        }
    };
    Ok((scale, window))
}

/// Least-squares linear fit over the grid; returns the fitted slopes and
/// the largest residual.
fn linear_fit(grid: &Grid, values: &[f64]) -> (Vec<f64>, f64) {
    let m = grid.dim();
    let n = 1usize << grid.bits;
    let mean_f = values.iter().sum::<f64>() / values.len() as f64;
    // Offsets are a full product grid, so the components are uncorrelated
    // and each slope is a one-dimensional regression.
    let offs: Vec<f64> = (0..n).map(|d| grid.offset(d)).collect();
    let mean_o = offs.iter().sum::<f64>() / n as f64;
    let var_o = offs.iter().map(|o| (o - mean_o).powi(2)).sum::<f64>() / n as f64;
    let mask = n - 1;
    let mut slopes = vec![0.0; m];
    for (k, s) in slopes.iter_mut().enumerate() {
        let cov: f64 = values
            .iter()
            .enumerate()
            .map(|(idx, v)| (offs[(idx >> (k * grid.bits)) & mask] - mean_o) * (v - mean_f))
            .sum::<f64>()
            / values.len() as f64;
        *s = if var_o > 0.0 { cov / var_o } else { 0.0 };
    }
    let residual = values
        .iter()
        .enumerate()
        .map(|(idx, v)| {
            let fit: f64 = mean_f
                + (0..m)
                    .map(|k| slopes[k] * (offs[(idx >> (k * grid.bits)) & mask] - mean_o))
                    .sum::<f64>();
            (v - fit).abs()
        })
        .fold(0.0, f64::max);
    (slopes, residual)
}

/// Runs the gradient circuit for `job` with one coherent oracle query.
pub fn quantum_gradient(
    oracle: &QuantumOracle<'_>,
    job: &GradientJob,
    rng: &mut RandomStream,
) -> Result<GradientResult> {
    let m = job.center.len();
    if m == 0 {
        return Err(Error::InvalidInput(
            "gradient needs at least one coordinate".into(),
        ));
    }
    if job.bits < 2 || job.kickback_bits == 0 || job.kickback_bits > 40 {
        return Err(Error::InvalidInput(format!(
            "need bits >= 2 and 1 <= kickback_bits <= 40, got {} and {}",
            job.bits, job.kickback_bits
        )));
    }
    let n_qubits = m * job.bits;
    if n_qubits > MAX_QUBITS {
        return Err(Error::QubitCap {
            requested: n_qubits,
            cap: MAX_QUBITS,
        });
    }
    let (scale, window) = auto_scale(oracle, job)?;
    if !(scale > 0.0 && scale.is_finite() && window > 0.0 && window.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "need M > 0 and L > 0, got M={scale}, L={window}"
        )));
    }
    let grid = Grid {
        center: job.center.clone(),
        bits: job.bits,
        kickback_bits: job.kickback_bits,
        window,
        scale,
    };

    let amp = Complex64::new(1.0 / (grid.size() as f64).sqrt(), 0.0);
    let mut amps = vec![amp; grid.size()];
    let queries_before = oracle.queries();
    let values = oracle.kickback(&grid, &mut amps)?;
    let oracle_queries = oracle.queries() - queries_before;

    let mut state = Statevector::from_amplitudes(amps)?;
    let registers: Vec<_> = (0..m).map(|k| k * job.bits..(k + 1) * job.bits).collect();
    for r in &registers {
        state.inverse_qft(r.clone())?;
    }

    let probs = state.probabilities();
    let (peak, peak_probability) =
        probs.iter().enumerate().fold(
            (0, -1.0),
            |(bi, bp), (i, &p)| if p > bp { (i, p) } else { (bi, bp) },
        );
    let mask = (1usize << job.bits) - 1;
    let peak_raw: Vec<usize> = (0..m).map(|k| (peak >> (k * job.bits)) & mask).collect();
    let mean_gradient = registers
        .iter()
        .map(|r| {
            state
                .register_distribution(r.clone())
                .map(|d| d.iter().enumerate().map(|(y, p)| p * grid.decode(y)).sum())
        })
        .collect::<Result<Vec<f64>>>()?;

    let raw = registers
        .iter()
        .map(|r| state.measure_register(r.clone(), rng))
        .collect::<Result<Vec<usize>>>()?;

    let (slopes, residual) = linear_fit(&grid, &values);
    let saturated = slopes.iter().any(|s| s.abs() >= scale / 2.0);

    Ok(GradientResult {
        gradient: raw.iter().map(|&y| grid.decode(y)).collect(),
        raw,
        peak_gradient: peak_raw.iter().map(|&y| grid.decode(y)).collect(),
        peak_raw,
        peak_probability,
        mean_gradient,
        step: grid.step(),
        window,
        scale,
        truncation_estimate: 2.0 * residual / window,
        saturated,
        oracle_queries,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalGradient {
    /// `dF/dg_i` on the grid points.
    pub derivative: Vec<f64>,
    /// Gradient in the test-field coordinates.
    pub result: GradientResult,
}

/// Functional derivative of `functional` at samples `g`. The oracle sees
/// `eta -> F[g + sum_k eta_k Y_k]` for test fields `Y_k` (columns of
/// `directions`, the unit vectors by default); the single-query gradient in
/// `eta` is mapped back through the test fields.
pub fn functional_gradient(
    functional: &(dyn Fn(&[f64]) -> f64 + Sync),
    g: &[f64],
    directions: Option<&DMatrix<f64>>,
    job: &GradientJob,
    rng: &mut RandomStream,
) -> Result<FunctionalGradient> {
    let n = g.len();
    let y = match directions {
        Some(d) => {
            if d.nrows() != n || d.ncols() != n {
                return Err(Error::Shape {
                    expected: n,
                    actual: d.ncols(),
                });
            }
            d.clone()
        }
        None => DMatrix::identity(n, n),
    };
    let lu = y.transpose().lu();
    if lu.determinant().abs() < 1e-12 {
        return Err(Error::Degenerate(
            "test fields are linearly dependent".into(),
        ));
    }
    let g_owned = g.to_vec();
    let y_ref = &y;
    let perturbed = move |eta: &[f64]| {
        let mut x = g_owned.clone();
        for (k, e) in eta.iter().enumerate() {
            for (i, xi) in x.iter_mut().enumerate() {
                *xi += e * y_ref[(i, k)];
            }
        }
        functional(&x)
    };
    let oracle = QuantumOracle::new(&perturbed);
    let eta_job = GradientJob {
        center: vec![0.0; n],
        ..job.clone()
    };
    let result = quantum_gradient(&oracle, &eta_job, rng)?;
    let resolution = result.window / (1usize << job.bits) as f64;
    let magnitude = g.iter().fold(1.0f64, |a, x| a.max(x.abs()));
    if resolution < 4.0 * f64::EPSILON * magnitude {
        return Err(Error::InvalidInput(format!(
            "perturbation step {resolution:e} underflows against samples of size {magnitude:e}"
        )));
    }
    // dF/deta_k = sum_i Y_ik dF/dg_i  =>  Y^T grad = d
    let d = nalgebra::DVector::from_vec(result.peak_gradient.clone());
    let grad = lu
        .solve(&d)
        .ok_or_else(|| Error::Degenerate("test-field system is singular".into()))?;
    Ok(FunctionalGradient {
        derivative: grad.iter().copied().collect(),
        result,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(f: &(dyn Fn(&[f64]) -> f64 + Sync), job: GradientJob, seed: u64) -> GradientResult {
        let oracle = QuantumOracle::new(f);
        let r = quantum_gradient(&oracle, &job, &mut RandomStream::new(seed)).unwrap();
        assert_eq!(oracle.queries(), 1);
        r
    }

    #[test]
    fn linear_function_is_exact() {
        let f = |x: &[f64]| 1.5 * x[0] - 2.25 * x[1] + 0.3;
        let r = run(&f, GradientJob::new(vec![0.2, -0.7]).with_bits(6), 1);
        assert_eq!(r.scale, 16.0);
        assert_eq!(r.gradient, vec![1.5, -2.25]);
        assert_eq!(r.peak_gradient, vec![1.5, -2.25]);
        assert!(r.peak_probability > 1.0 - 1e-6);
        assert!(!r.saturated);
        assert!(r.truncation_estimate < 1e-9);
    }

    #[test]
    fn quadratic_plus_linear() {
        let f = |x: &[f64]| x[0] * x[0] + 3.0 * x[1];
        let r = run(&f, GradientJob::new(vec![1.0, 0.0]).with_bits(6), 2);
        for (g, e) in r.peak_gradient.iter().zip([2.0, 3.0]) {
            assert!((g - e).abs() <= r.step, "{g} vs {e}");
        }
    }

    #[test]
    fn constant_function_gives_zero() {
        let f = |_: &[f64]| 4.2;
        let r = run(&f, GradientJob::new(vec![0.0, 1.0, 2.0]).with_bits(4), 3);
        assert_eq!(r.gradient, vec![0.0; 3]);
        // A constant equal to one fixed-point unit is a global phase.
        let job = GradientJob::new(vec![0.0])
            .with_bits(5)
            .with_scale(2.0)
            .with_window(0.5);
        let unit = 2.0 * 0.5 / 32.0;
        let g = move |_: &[f64]| unit;
        let r = run(&g, job, 4);
        assert_eq!(r.gradient, vec![0.0]);
    }

    #[test]
    fn oracle_rejects_non_finite() {
        let f = |x: &[f64]| if x[0] > 0.1 { f64::NAN } else { 0.0 };
        let oracle = QuantumOracle::new(&f);
        let job = GradientJob::new(vec![0.0])
            .with_bits(4)
            .with_window(1.0)
            .with_scale(1.0);
        assert!(matches!(
            quantum_gradient(&oracle, &job, &mut RandomStream::new(0)),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn refuses_above_cap() {
        let f = |_: &[f64]| 0.0;
        let oracle = QuantumOracle::new(&f);
        let job = GradientJob::new(vec![0.0; 4]).with_bits(8);
        assert!(matches!(
            quantum_gradient(&oracle, &job, &mut RandomStream::new(0)),
            Err(Error::QubitCap { requested: 32, .. })
        ));
    }

    #[test]
    fn negative_slopes_and_saturation_flag() {
        let f = |x: &[f64]| -5.0 * x[0];
        let r = run(
            &f,
            GradientJob::new(vec![0.0])
                .with_bits(6)
                .with_scale(8.0)
                .with_window(0.1),
            5,
        );
        assert!(r.saturated);
        let r = run(
            &f,
            GradientJob::new(vec![0.0])
                .with_bits(6)
                .with_scale(16.0)
                .with_window(0.1),
            5,
        );
        assert!(!r.saturated);
        assert_eq!(r.gradient, vec![-5.0]);
    }

    /// Dense check that modular addition into the Fourier state of 1 is the
    /// kickback phase, on one displacement qubit and two kickback qubits.
    #[test]
    fn kickback_equals_explicit_adder() {
        let ftilde = [1usize, 3usize];
        let modulus = 4usize;
        // |delta> on qubit 0, |w> on qubits 1..3; delta in uniform
        // superposition, w in the inverse-QFT image of |1>.
        let mut start = Statevector::zero(3).unwrap();
        start.apply_hadamard(0).unwrap();
        start.apply_x(1).unwrap();
        start.inverse_qft(1..3).unwrap();
        let mut added = [Complex64::new(0.0, 0.0); 8];
        for (b, a) in start.amplitudes().iter().enumerate() {
            let delta = b & 1;
            let w = ((b >> 1 & 3) + ftilde[delta]) % modulus;
            added[delta | w << 1] += a;
        }
        let mut phased = start.amplitudes().to_vec();
        for (b, a) in phased.iter_mut().enumerate() {
            *a *= Complex64::from_polar(1.0, 2.0 * PI * ftilde[b & 1] as f64 / modulus as f64);
        }
        for (x, y) in added.iter().zip(&phased) {
            assert!((x - y).norm() < 1e-15, "{x} vs {y}");
        }
    }

    #[test]
    fn halving_window_quarters_cubic_bias() {
        let f = |x: &[f64]| x[0].powi(3);
        let bias = |l: f64| {
            let r = run(
                &f,
                GradientJob::new(vec![0.5])
                    .with_bits(10)
                    .with_scale(4.0)
                    .with_window(l),
                6,
            );
            (r.mean_gradient[0] - 0.75).abs()
        };
        let ratio = bias(0.4) / bias(0.2);
        assert!((3.0..5.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn functional_derivatives() {
        let job = GradientJob::new(vec![]).with_bits(6);
        let g = [0.5, -0.25, 1.0];
        let sq = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let d = functional_gradient(&sq, &g, None, &job, &mut RandomStream::new(7)).unwrap();
        for (a, b) in d.derivative.iter().zip(g) {
            assert!(
                (a - 2.0 * b).abs() <= d.result.step + 1e-12,
                "{a} vs {}",
                2.0 * b
            );
        }
        let v = [0.75, -1.5, 0.25];
        let lin = move |x: &[f64]| x.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        // Hadamard-like test fields.
        let y = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 1.0, 1.0, -1.0, 1.0, 1.0, 1.0, -1.0]);
        let d = functional_gradient(&lin, &g, Some(&y), &job, &mut RandomStream::new(8)).unwrap();
        for (a, b) in d.derivative.iter().zip(v) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}
