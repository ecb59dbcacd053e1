use serde::{Deserialize, Serialize};

use super::config::LatticeConfig;
use crate::dft::{
    chi_s_response, euler_lagrange_solve, fermi_weighted_density, invert_to_ks, solve_ks, ElConfig,
    InversionConfig, InversionTarget, KsOrbitals, ResponseFunction, ThermalDensity,
};
use crate::error::{Error, Result};
use crate::ml::{MlFunctional, Model, Quantity, Signature};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseRequest {
    pub omegas: Vec<f64>,
    pub eta: f64,
}

/// A new system for trained models. `lattice` supplies the hopping needed
/// for KS-potential models, response functions and thermal densities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserRequest {
    pub v: Vec<f64>,
    pub n_electrons: usize,
    #[serde(default)]
    pub lattice: Option<LatticeConfig>,
    #[serde(default)]
    pub el: ElConfig,
    #[serde(default)]
    pub response: Option<ResponseRequest>,
    #[serde(default)]
    pub temperature: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum UserMethod {
    /// Minimization of the learned `F[n] + n.v`.
    EulerLagrange,
    /// KS equations with a learned potential.
    KsPotential,
}

#[derive(Debug, Clone)]
pub struct UserSolution {
    pub method: UserMethod,
    pub density: Vec<f64>,
    pub energy: Option<f64>,
    pub v_s: Option<Vec<f64>>,
    pub response: Option<ResponseFunction>,
    pub thermal: Option<ThermalDensity>,
    pub converged: bool,
    /// False once any warning was raised.
    pub trusted: bool,
    pub warnings: Vec<String>,
}

fn find<'m>(models: &'m [Model], inputs: &[Quantity], output: Quantity) -> Option<&'m Model> {
    let sig = Signature::new(inputs, output);
    models.iter().find(|m| m.signature == sig)
}

/// Solves a new potential with trained models alone. A density-to-energy
/// model is minimized directly; otherwise a potential-to-KS-potential model
/// feeds the KS equations. Models trained for another electron count are
/// refused; leaving the training manifold only raises warnings.
pub fn classical_user_solve(models: &[Model], request: &UserRequest) -> Result<UserSolution> {
    let functional = find(models, &[Quantity::Density], Quantity::Energy);
    let ks_model = find(models, &[Quantity::Potential], Quantity::KsPotential);
    let energy_model = find(models, &[Quantity::Potential], Quantity::Energy);
    let primary = functional.or(ks_model).ok_or_else(|| {
        Error::InvalidInput("need a density-to-energy or potential-to-KS-potential model".into())
    })?;
    if request.v.len() != primary.n_sites {
        return Err(Error::Shape {
            expected: primary.n_sites,
            actual: request.v.len(),
        });
    }
    let mut warnings = Vec::new();
    for m in [functional, ks_model, energy_model].into_iter().flatten() {
        match &m.manifold {
            Some(man) => {
                if let Some(n) = man.n_electrons {
                    if n != request.n_electrons {
                        return Err(Error::Refused(format!(
                            "model trained for {n} electrons, asked for {}",
                            request.n_electrons
                        )));
                    }
                }
                if man.contains_potential(&request.v, 0.0) == Some(false) {
                    warnings.push(format!(
                        "potential {:?} lies outside the training manifold",
                        request.v
                    ));
                }
            }
            None => warnings.push("model carries no training manifold".into()),
        }
    }
    warnings.dedup();
    let lattice = request
        .lattice
        .as_ref()
        .map(LatticeConfig::build)
        .transpose()?;

    let (method, density, mut energy, mut v_s, converged, orbitals) = if let Some(f) = functional {
        let f = MlFunctional::new(f.clone())?;
        let res = euler_lagrange_solve(&f, &request.v, request.n_electrons, None, request.el)?;
        warnings.extend(res.warnings);
        (
            UserMethod::EulerLagrange,
            res.density,
            Some(res.energy),
            None,
            res.converged,
            None,
        )
    } else {
        let m = ks_model.expect("primary model exists");
        let lattice = lattice.as_ref().ok_or_else(|| {
            Error::InvalidInput("a KS-potential model needs the lattice hopping".into())
        })?;
        let v_s = m.forward(&request.v)?;
        let (orbs, n) = solve_ks(lattice.hopping(), &v_s, request.n_electrons)?;
        (
            UserMethod::KsPotential,
            n,
            None,
            Some(v_s),
            true,
            Some(orbs),
        )
    };
    if energy.is_none() {
        if let Some(m) = energy_model {
            energy = Some(m.forward(&request.v)?[0]);
        }
    }

    let wants_orbitals = request.response.is_some() || request.temperature.is_some();
    let orbitals: Option<KsOrbitals> = match (orbitals, wants_orbitals) {
        (Some(o), _) => Some(o),
        (None, false) => None,
        (None, true) => {
            let lattice = lattice.as_ref().ok_or_else(|| {
                Error::InvalidInput("response and thermal densities need the lattice".into())
            })?;
            let target = InversionTarget::from_density(density.clone());
            let zeros = vec![0.0; lattice.n_sites()];
            let inv = invert_to_ks(lattice, &target, &zeros, InversionConfig::default())?;
            if !inv.converged {
                warnings.push(format!(
                    "KS inversion of the solved density stopped at {:e}",
                    inv.residual()
                ));
            }
            v_s = Some(inv.potential.clone());
            Some(inv.orbitals)
        }
    };
    let response = match (&request.response, &orbitals) {
        (Some(r), Some(o)) => Some(chi_s_response(o, &r.omegas, r.eta)?),
        _ => None,
    };
    let thermal = match (request.temperature, &orbitals) {
        (Some(tau), Some(o)) => Some(fermi_weighted_density(o, tau, request.n_electrons)?),
        _ => None,
    };
    Ok(UserSolution {
        method,
        density,
        energy,
        v_s,
        response,
        thermal,
        converged,
        trusted: warnings.is_empty(),
        warnings,
    })
}
