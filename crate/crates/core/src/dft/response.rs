use nalgebra::DMatrix;
use num_complex::Complex64;

use super::ks::KsOrbitals;
use crate::error::{Error, Result};

/// `chi_s(i, i', omega)` on a frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseFunction {
    pub omegas: Vec<f64>,
    pub eta: f64,
    /// One site-by-site matrix per frequency.
    pub values: Vec<DMatrix<Complex64>>,
}

impl ResponseFunction {
    pub fn n_sites(&self) -> usize {
        self.values.first().map_or(0, |m| m.nrows())
    }

    pub fn at(&self, i: usize, i2: usize, k: usize) -> Complex64 {
        self.values[k][(i, i2)]
    }

    /// CSV rows `omega,i,j,re,im`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["omega", "i", "j", "re", "im"])?;
        for (omega, m) in self.omegas.iter().zip(&self.values) {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    let c = m[(i, j)];
                    out.write_record([
                        omega.to_string(),
                        i.to_string(),
                        j.to_string(),
                        c.re.to_string(),
                        c.im.to_string(),
                    ])?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Lehmann sum
/// `sum_{kj} (xi_k - xi_j) phi_k(i) phi_j(i) phi_j(i') phi_k(i') / (omega - (eps_j - eps_k) + i eta)`
/// with the spin-summed occupations of `orbitals`.
pub fn chi_s_response(orbitals: &KsOrbitals, omegas: &[f64], eta: f64) -> Result<ResponseFunction> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::Refused(format!(
            "broadening must be positive, got {eta}"
        )));
    }
    let n = orbitals.n_sites();
    let phi = &orbitals.orbitals;
    let xi = &orbitals.occupations;
    let eps = &orbitals.energies;
    let mut pairs = Vec::new();
    for k in 0..n {
        for j in 0..n {
            let w = xi[k] - xi[j];
            if w != 0.0 {
                pairs.push((k, j, w));
            }
        }
    }
    let values = omegas
        .iter()
        .map(|&omega| {
            let mut m = DMatrix::<Complex64>::zeros(n, n);
            for &(k, j, w) in &pairs {
                let denom = Complex64::new(omega - (eps[j] - eps[k]), eta);
                let f = w / denom;
                for i in 0..n {
                    let a = phi[(i, k)] * phi[(i, j)];
                    for i2 in 0..n {
                        m[(i, i2)] += f * (a * phi[(i2, j)] * phi[(i2, k)]);
                    }
                }
            }
            m
        })
        .collect();
    Ok(ResponseFunction {
        omegas: omegas.to_vec(),
        eta,
        values,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThermalDensity {
    pub density: Vec<f64>,
    pub mu: f64,
    /// Spin-summed orbital occupations `2 f((eps_j - mu) / tau)`.
    pub occupations: Vec<f64>,
}

fn fermi(x: f64) -> f64 {
    if x > 0.0 {
        let e = (-x).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + x.exp())
    }
}

/// Fermi-Dirac weighted density with `mu` solved by bisection so the
/// occupations sum to `n_electrons`. `tau = 0` uses the aufbau filling of
/// `orbitals` with `mu` at mid-gap.
pub fn fermi_weighted_density(
    orbitals: &KsOrbitals,
    tau: f64,
    n_electrons: usize,
) -> Result<ThermalDensity> {
    let n = orbitals.n_sites();
    let eps = &orbitals.energies;
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "temperature must be finite and non-negative, got {tau}"
        )));
    }
    if n_electrons > 2 * n {
        return Err(Error::Refused(format!(
            "{n_electrons} electrons cannot fit in {n} orbitals"
        )));
    }
    if tau == 0.0 {
        let occ = &orbitals.occupations;
        if occ.iter().sum::<f64>() != n_electrons as f64 {
            return Err(Error::InvalidInput(
                "orbitals were filled for a different electron count".into(),
            ));
        }
        let homo = occ.iter().rposition(|&x| x > 0.0);
        let mu = match homo {
            Some(h) if h + 1 < n => 0.5 * (eps[h] + eps[h + 1]),
            Some(h) => eps[h],
            None => eps[0],
        };
        return Ok(ThermalDensity {
            density: orbitals.density(),
            mu,
            occupations: occ.clone(),
        });
    }
    if n_electrons == 0 || n_electrons == 2 * n {
        return Err(Error::Refused(format!(
            "{n_electrons} electrons is only reached as mu goes to infinity at finite temperature"
        )));
    }
    let target = n_electrons as f64;
    let count = |mu: f64| eps.iter().map(|e| 2.0 * fermi((e - mu) / tau)).sum::<f64>();
    let mut lo = eps[0] - 1.0;
    let mut hi = eps[n - 1] + 1.0;
    while count(lo) > target {
        lo -= hi - lo;
    }
    while count(hi) < target {
        hi += hi - lo;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if count(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 4.0 * f64::EPSILON * mid.abs().max(1.0) {
            break;
        }
    }
    let mu = 0.5 * (lo + hi);
    let occupations: Vec<f64> = eps.iter().map(|e| 2.0 * fermi((e - mu) / tau)).collect();
    Ok(ThermalDensity {
        density: orbitals.density_with(&occupations),
        mu,
        occupations,
    })
}
