use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{FermionHamiltonian, Spin};
use crate::error::{Error, Result};

/// On-disk description of a real lattice Hamiltonian.
///
/// ```toml
/// n_sites = 2
/// spin = "half"
/// t_matrix = [[0.0, -1.0], [-1.0, 0.0]]
/// U = 4.0
/// v = [-0.5, 0.5]
/// ```
///
/// Either `U` (on-site Hubbard repulsion) or `V_tensor` (flattened
/// `V[i][j][k][l]`, row-major, length `n_sites^4`) may be given. `v` is added
/// to the diagonal of `t_matrix`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianSpec {
    pub n_sites: usize,
    pub spin: Spin,
    pub t_matrix: Vec<Vec<f64>>,
    #[serde(rename = "U", default, skip_serializing_if = "Option::is_none")]
    pub u: Option<f64>,
    #[serde(rename = "V_tensor", default, skip_serializing_if = "Option::is_none")]
    pub v_tensor: Option<Vec<f64>>,
    pub v: Vec<f64>,
}

impl HamiltonianSpec {
    /// Hubbard chain description with hopping `t`.
    pub fn hubbard(n_sites: usize, t: f64, u: f64, v: Vec<f64>) -> Self {
        let mut m = vec![vec![0.0; n_sites]; n_sites];
        for i in 0..n_sites.saturating_sub(1) {
            m[i][i + 1] = -t;
            m[i + 1][i] = -t;
        }
        Self {
            n_sites,
            spin: Spin::Half,
            t_matrix: m,
            u: Some(u),
            v_tensor: None,
            v,
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        Ok(toml::from_str(s)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn build(&self) -> Result<FermionHamiltonian> {
        let n = self.n_sites;
        if n == 0 {
            return Err(Error::InvalidInput("n_sites must be at least 1".into()));
        }
        if self.t_matrix.len() != n || self.t_matrix.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidInput(format!("t_matrix must be {n}x{n}")));
        }
        if self.v.len() != n {
            return Err(Error::Shape {
                expected: n,
                actual: self.v.len(),
            });
        }
        let mut t = DMatrix::<Complex64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                t[(i, j)] = Complex64::new(self.t_matrix[i][j], 0.0);
            }
            t[(i, i)] += Complex64::new(self.v[i], 0.0);
        }
        let vt = match (&self.u, &self.v_tensor) {
            (Some(_), Some(_)) => {
                return Err(Error::InvalidInput(
                    "give either U or V_tensor, not both".into(),
                ));
            }
            (Some(u), None) => {
                let mut vt = vec![Complex64::new(0.0, 0.0); n.pow(4)];
                for i in 0..n {
                    vt[((i * n + i) * n + i) * n + i] = Complex64::new(u / 2.0, 0.0);
                }
                vt
            }
            (None, Some(vt)) => {
                if vt.len() != n.pow(4) {
                    return Err(Error::Shape {
                        expected: n.pow(4),
                        actual: vt.len(),
                    });
                }
                vt.iter().map(|&x| Complex64::new(x, 0.0)).collect()
            }
            (None, None) => vec![Complex64::new(0.0, 0.0); n.pow(4)],
        };
        FermionHamiltonian::new(t, vt, self.spin)
    }
}
