use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use rwmp_core::dft::{
    chi_s_response, fermi_weighted_density, invert_to_ks, invert_to_ks_qga, solve_ks,
    InversionTarget, LatticeModel,
};
use rwmp_core::fermion::{
    exact_diagonalize, jordan_wigner, shift_and_scale, BoundMethod, HamiltonianSpec, Sector, Spin,
};
use rwmp_core::ml::{Model, Provenance, TrainConfig, TrainingSample};
use rwmp_core::qae::{estimate_density_matrix, ReferenceState};
use rwmp_core::qpe::{rte_prepare, steps_to_fidelity, PhaseEstimator, QpeConfig, Schedule};
use rwmp_core::rwmp::{
    classical_user_solve, sample_for, GradientSource, InversionStage, LatticeConfig, ModelSpec,
    QaeStage, QpeStage, RteStage, RwmpConfig, ScheduleConfig, SweepConfig, UserRequest,
};
use rwmp_core::sim::RandomStream;

pub struct Context {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

impl Context {
    fn load<T: DeserializeOwned + Default>(&self) -> Result<T> {
        match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
            }
            None => Ok(T::default()),
        }
    }

    fn seed(&self, configured: u64) -> u64 {
        self.seed.unwrap_or(configured)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn csv(&self, name: &str) -> Result<csv::Writer<BufWriter<File>>> {
        let p = self.path(name);
        let f = File::create(&p).with_context(|| format!("creating {}", p.display()))?;
        Ok(csv::Writer::from_writer(BufWriter::new(f)))
    }

    fn file(&self, name: &str) -> Result<BufWriter<File>> {
        let p = self.path(name);
        Ok(BufWriter::new(
            File::create(&p).with_context(|| format!("creating {}", p.display()))?,
        ))
    }

    fn toml<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        std::fs::write(self.path(name), toml::to_string(value)?)?;
        Ok(())
    }

    /// Resolves `p` against the directory of the config file.
    fn relative(&self, p: &Path) -> PathBuf {
        match self.config.as_deref().and_then(Path::parent) {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_path_buf(),
        }
    }
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")
}

/// The lattice and an external potential defaulting to zero.
fn system(lattice: &LatticeConfig, v: &Option<Vec<f64>>) -> Result<(LatticeModel, Vec<f64>)> {
    let model = lattice.build()?;
    let v = v.clone().unwrap_or_else(|| vec![0.0; model.n_sites()]);
    Ok((model, v))
}

#[derive(Debug, Serialize)]
struct SpectrumRow {
    index: usize,
    energy: f64,
    degenerate: bool,
}

pub fn hamiltonian(ctx: &Context, particles: Option<usize>) -> Result<()> {
    let spec = match &ctx.config {
        Some(p) => HamiltonianSpec::load(p)?,
        None => HamiltonianSpec::hubbard(2, 1.0, 4.0, vec![0.0, 0.0]),
    };
    let h = jordan_wigner(&spec.build()?)?;
    let mut w = ctx.csv("pauli_terms.csv")?;
    w.write_record(["label", "re", "im"])?;
    for t in h.terms() {
        w.write_record([
            t.label(),
            t.coefficient.re.to_string(),
            t.coefficient.im.to_string(),
        ])?;
    }
    w.flush()?;
    let sector = particles.map_or_else(Sector::all, Sector::particles);
    let spectrum = exact_diagonalize(&h, &sector)?;
    let mut w = ctx.csv("spectrum.csv")?;
    for (index, (&energy, &degenerate)) in spectrum
        .eigenvalues()
        .iter()
        .zip(spectrum.degeneracy_flags())
        .enumerate()
    {
        w.serialize(SpectrumRow {
            index,
            energy,
            degenerate,
        })?;
    }
    w.flush()?;
    println!(
        "{} qubits, {} terms, ground energy {}",
        h.n_qubits(),
        h.terms().len(),
        spectrum.ground_energy()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct PhaseRow {
    seed: u64,
    t_bits: usize,
    phase: f64,
    energy: f64,
    fidelity: f64,
    trotter_steps: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RteCommand {
    seed: u64,
    runs: usize,
    lattice: LatticeConfig,
    v: Option<Vec<f64>>,
    rte: RteStage,
    qpe: QpeStage,
}

/// Cold start from the non-interacting ground state; the slice count is
/// the smallest reaching the fidelity threshold, capped at `max_steps`.
pub fn rte(ctx: &Context) -> Result<()> {
    let cfg: RteCommand = ctx.load()?;
    let (lattice, v) = system(&cfg.lattice, &cfg.v)?;
    let exact = lattice.ground_state(&v)?;
    let free = lattice.noninteracting()?.ground_state(&v)?;
    let h1 = exact
        .hamiltonian
        .linear_combination(1.0, &free.hamiltonian, -1.0)?;
    let r = &cfg.rte;
    let steps = steps_to_fidelity(
        &free.hamiltonian,
        &h1,
        &free.state,
        &exact.state,
        r.dt,
        r.order,
        r.fidelity,
        r.max_steps,
    )?;
    let n = steps.unwrap_or(r.max_steps);
    let schedule = Schedule::linear(n as f64 * r.dt, n, r.order)?;
    let prepared = rte_prepare(
        &free.hamiltonian,
        &h1,
        &schedule,
        &free.state,
        Some(&exact.state),
        r.fidelity,
    )?;
    if let Some(w) = &prepared.warning {
        eprintln!("warning: {w}");
    }
    let estimator = estimator(&exact.hamiltonian, cfg.qpe)?;
    let seed = ctx.seed(cfg.seed);
    let root = RandomStream::new(seed);
    let mut w = ctx.csv("rte.csv")?;
    for run in 0..cfg.runs.max(1) {
        let (readout, _) = estimator.estimate(&prepared.state, &mut root.fork(run as u64))?;
        w.serialize(PhaseRow {
            seed,
            t_bits: readout.t_bits,
            phase: readout.phase,
            energy: readout.energy,
            fidelity: prepared.fidelity.unwrap_or(f64::NAN),
            trotter_steps: Some(n),
        })?;
    }
    w.flush()?;
    println!(
        "{n} Trotter slices, fidelity {}",
        prepared.fidelity.unwrap_or(f64::NAN)
    );
    Ok(())
}

fn estimator(h: &rwmp_core::fermion::QubitHamiltonian, stage: QpeStage) -> Result<PhaseEstimator> {
    let scaled = shift_and_scale(h, 0.0, BoundMethod::Auto)?;
    Ok(PhaseEstimator::new(
        &scaled,
        QpeConfig::new(stage.t_bits).with_repetitions(stage.repetitions),
    )?)
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct QpeCommand {
    seed: u64,
    runs: usize,
    lattice: LatticeConfig,
    v: Option<Vec<f64>>,
    qpe: QpeStage,
}

/// The fidelity column compares the system register before and after.
pub fn qpe(ctx: &Context) -> Result<()> {
    let cfg: QpeCommand = ctx.load()?;
    let (lattice, v) = system(&cfg.lattice, &cfg.v)?;
    let exact = lattice.ground_state(&v)?;
    let estimator = estimator(&exact.hamiltonian, cfg.qpe)?;
    let seed = ctx.seed(cfg.seed);
    let root = RandomStream::new(seed);
    let mut w = ctx.csv("qpe.csv")?;
    for run in 0..cfg.runs.max(1) {
        let (readout, post) = estimator.estimate(&exact.state, &mut root.fork(run as u64))?;
        w.serialize(PhaseRow {
            seed,
            t_bits: readout.t_bits,
            phase: readout.phase,
            energy: readout.energy,
            fidelity: post.fidelity(&exact.state)?,
            trotter_steps: None,
        })?;
    }
    w.flush()?;
    println!("exact ground energy {}", exact.energy);
    Ok(())
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct QaeCommand {
    seed: u64,
    lattice: LatticeConfig,
    v: Option<Vec<f64>>,
    qae: QaeStage,
}

#[derive(Debug, Serialize)]
struct QaeRow<'a> {
    label: &'a str,
    rounds: usize,
    accepted: usize,
    value: f64,
    stderr: f64,
    repair_iterations: usize,
}

#[derive(Debug, Serialize)]
struct DensityFile {
    density: Vec<f64>,
    exact: Vec<f64>,
    fidelity: f64,
}

pub fn qae(ctx: &Context) -> Result<()> {
    let cfg: QaeCommand = ctx.load()?;
    let (lattice, v) = system(&cfg.lattice, &cfg.v)?;
    let exact = lattice.ground_state(&v)?;
    let reference = ReferenceState::new(&exact.hamiltonian, &exact.state)?;
    let mut rng = RandomStream::new(ctx.seed(cfg.seed));
    let (dm, estimates, after) =
        estimate_density_matrix(&reference, Spin::Half, cfg.qae.config(), &mut rng)?;
    let mut w = ctx.csv("qae.csv")?;
    for e in &estimates {
        w.serialize(QaeRow {
            label: &e.label,
            rounds: e.rounds,
            accepted: e.accepted,
            value: e.value,
            stderr: e.stderr,
            repair_iterations: e.repair_iterations,
        })?;
    }
    w.flush()?;
    let fidelity = after.fidelity(&exact.state)?;
    ctx.toml(
        "density.toml",
        &DensityFile {
            density: dm.density(),
            exact: exact.density,
            fidelity,
        },
    )?;
    println!(
        "{} strings counted, final fidelity {fidelity}",
        estimates.len()
    );
    Ok(())
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct InvertCommand {
    seed: u64,
    lattice: LatticeConfig,
    v: Option<Vec<f64>>,
    /// Target density; the exact ground-state density at `v` otherwise.
    density: Option<Vec<f64>>,
    start: Option<Vec<f64>>,
    inversion: InversionStage,
}

#[derive(Debug, Serialize)]
struct PotentialFile {
    v_s: Vec<f64>,
    density: Vec<f64>,
    residual: f64,
    iterations: usize,
    converged: bool,
}

pub fn invert_ks(ctx: &Context) -> Result<()> {
    let cfg: InvertCommand = ctx.load()?;
    let (lattice, v) = system(&cfg.lattice, &cfg.v)?;
    let target = match cfg.density {
        Some(n) => InversionTarget::from_density(n),
        None => InversionTarget::from_state(&lattice, &lattice.ground_state(&v)?.state)?,
    };
    let v0 = cfg.start.unwrap_or_else(|| vec![0.0; lattice.n_sites()]);
    let inv = cfg.inversion.config();
    let res = match cfg.inversion.gradient {
        GradientSource::Analytic => invert_to_ks(&lattice, &target, &v0, inv)?,
        GradientSource::Qga { bits } => invert_to_ks_qga(
            &lattice,
            &target,
            &v0,
            inv,
            bits,
            &mut RandomStream::new(ctx.seed(cfg.seed)),
        )?,
    };
    res.write_trace_csv(ctx.file("trace.csv")?)?;
    ctx.toml(
        "potential.toml",
        &PotentialFile {
            v_s: res.potential.clone(),
            density: res.density.clone(),
            residual: res.residual(),
            iterations: res.iterations,
            converged: res.converged,
        },
    )?;
    println!(
        "v_s = [{}], residual {}",
        join(&res.potential),
        res.residual()
    );
    if !res.converged {
        bail!(
            "inversion did not converge in {} iterations",
            res.iterations
        );
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainCommand {
    seed: u64,
    lattice: LatticeConfig,
    schedule: ScheduleConfig,
    model: ModelSpec,
    train: TrainConfig,
    inversion: InversionStage,
}

impl Default for TrainCommand {
    fn default() -> Self {
        let rwmp = RwmpConfig::default();
        Self {
            seed: 0,
            lattice: rwmp.lattice,
            schedule: ScheduleConfig {
                sweep: Some(SweepConfig {
                    from: vec![0.5, -0.5],
                    to: vec![-0.5, 0.5],
                    points: 11,
                }),
                ..rwmp.schedule
            },
            model: rwmp.training.models[0].clone(),
            train: TrainConfig::default(),
            inversion: rwmp.inversion,
        }
    }
}

/// Labels every scheduled potential by exact diagonalization (plus KS
/// inversion when the model needs it) and fits one model.
pub fn train(ctx: &Context) -> Result<()> {
    let cfg: TrainCommand = ctx.load()?;
    let lattice = cfg.lattice.build()?;
    let schedule = cfg.schedule.build()?;
    let sig = cfg.model.signature();
    let needs_ks = sig.output == rwmp_core::ml::Quantity::KsPotential
        || sig.inputs.contains(&rwmp_core::ml::Quantity::KsPotential);
    let mut data = Vec::with_capacity(schedule.len());
    for v in schedule.potentials() {
        let g = lattice.ground_state(v)?;
        let mut s = TrainingSample::new(Provenance::Oracle);
        s.v = Some(v.clone());
        s.energy = Some(g.energy);
        if needs_ks {
            let target = InversionTarget::from_state(&lattice, &g.state)?;
            let zero = vec![0.0; lattice.n_sites()];
            let inv = invert_to_ks(&lattice, &target, &zero, cfg.inversion.config())?
                .require_converged()?;
            s.v_s = Some(inv.potential);
        }
        s.n = Some(g.density);
        data.extend(sample_for(&sig, &s));
    }
    if data.is_empty() {
        bail!("schedule is empty");
    }
    let mut rng = RandomStream::new(ctx.seed(cfg.seed));
    let mut model =
        Model::with_architecture(sig, lattice.n_sites(), cfg.model.architecture, &mut rng)?;
    let curve = model.train(&data, cfg.train, &mut rng)?;
    curve.write_csv(ctx.file("curve.csv")?)?;
    model.save(&ctx.path("model.toml"))?;
    println!("{} samples, final cost {}", data.len(), curve.final_cost);
    Ok(())
}

pub fn run_rwmp(ctx: &Context) -> Result<()> {
    let mut cfg: RwmpConfig = ctx.load()?;
    cfg.seed = ctx.seed(cfg.seed);
    let out = rwmp_core::rwmp::run_rwmp(&cfg)?;
    out.export(&ctx.out)?;
    let c = &out.state.counters;
    println!(
        "{} systems, {} failed, {} samples, {} Trotter slices, {} counting rounds",
        c.systems,
        c.failures,
        out.samples.len(),
        c.rte_steps,
        c.qae_rounds
    );
    Ok(())
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SolveCommand {
    /// Model files, relative to the config file.
    models: Vec<PathBuf>,
    request: Option<UserRequest>,
}

#[derive(Debug, Serialize)]
struct SolutionFile {
    method: rwmp_core::rwmp::UserMethod,
    density: Vec<f64>,
    energy: Option<f64>,
    v_s: Option<Vec<f64>>,
    thermal_density: Option<Vec<f64>>,
    converged: bool,
    trusted: bool,
    warnings: Vec<String>,
}

pub fn solve(ctx: &Context) -> Result<()> {
    let cfg: SolveCommand = ctx.load()?;
    let Some(request) = cfg.request else {
        bail!("the solve config needs a [request] table");
    };
    let models = cfg
        .models
        .iter()
        .map(|p| {
            let p = ctx.relative(p);
            Model::load(&p).with_context(|| format!("loading {}", p.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    let sol = classical_user_solve(&models, &request)?;
    if let Some(r) = &sol.response {
        r.write_csv(ctx.file("response.csv")?)?;
    }
    for w in &sol.warnings {
        eprintln!("warning: {w}");
    }
    ctx.toml(
        "solution.toml",
        &SolutionFile {
            method: sol.method,
            density: sol.density.clone(),
            energy: sol.energy,
            v_s: sol.v_s.clone(),
            thermal_density: sol.thermal.as_ref().map(|t| t.density.clone()),
            converged: sol.converged,
            trusted: sol.trusted,
            warnings: sol.warnings.clone(),
        },
    )?;
    println!("n = [{}], trusted {}", join(&sol.density), sol.trusted);
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RespondCommand {
    lattice: LatticeConfig,
    v_s: Option<Vec<f64>>,
    omegas: Vec<f64>,
    eta: f64,
}

impl Default for RespondCommand {
    fn default() -> Self {
        Self {
            lattice: LatticeConfig::default(),
            v_s: None,
            omegas: vec![0.0],
            eta: 0.05,
        }
    }
}

pub fn respond(ctx: &Context) -> Result<()> {
    let cfg: RespondCommand = ctx.load()?;
    let lattice = cfg.lattice.build()?;
    let v_s = cfg.v_s.unwrap_or_else(|| vec![0.0; lattice.n_sites()]);
    let (orbitals, _) = solve_ks(lattice.hopping(), &v_s, lattice.n_electrons())?;
    let chi = chi_s_response(&orbitals, &cfg.omegas, cfg.eta)?;
    chi.write_csv(ctx.file("response.csv")?)?;
    println!("{} frequencies written", cfg.omegas.len());
    Ok(())
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ThermalCommand {
    lattice: LatticeConfig,
    v_s: Option<Vec<f64>>,
    tau: f64,
}

#[derive(Debug, Serialize)]
struct ThermalFile {
    density: Vec<f64>,
    mu: f64,
    occupations: Vec<f64>,
}

pub fn thermal_density(ctx: &Context) -> Result<()> {
    let cfg: ThermalCommand = ctx.load()?;
    let lattice = cfg.lattice.build()?;
    let v_s = cfg.v_s.unwrap_or_else(|| vec![0.0; lattice.n_sites()]);
    let (orbitals, _) = solve_ks(lattice.hopping(), &v_s, lattice.n_electrons())?;
    let t = fermi_weighted_density(&orbitals, cfg.tau, lattice.n_electrons())?;
    ctx.toml(
        "thermal.toml",
        &ThermalFile {
            density: t.density.clone(),
            mu: t.mu,
            occupations: t.occupations,
        },
    )?;
    println!("n = [{}], mu {}", join(&t.density), t.mu);
    Ok(())
}
