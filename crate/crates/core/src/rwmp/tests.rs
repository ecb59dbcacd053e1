use super::*;
use crate::ml::{Provenance, Quantity};

fn oracle_config(potentials: Vec<Vec<f64>>) -> RwmpConfig {
    RwmpConfig {
        mode: StageMode::Oracle,
        schedule: ScheduleConfig {
            potentials,
            max_step: 1.0,
            ..Default::default()
        },
        training: TrainingStage {
            epochs_per_system: 5,
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn config_round_trips_through_toml() {
    let mut c = oracle_config(vec![vec![-0.1, 0.1]]);
    c.inversion.gradient = GradientSource::Qga { bits: 6 };
    c.qae.check_bits = Some(8);
    let back = RwmpConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
    assert_eq!(back, c);
}

#[test]
fn partial_toml_takes_defaults() {
    let c = RwmpConfig::from_toml_str("seed = 9\n[lattice]\nu = 2.0\n").unwrap();
    assert_eq!(c.seed, 9);
    assert_eq!(c.lattice.u, 2.0);
    assert_eq!(c.lattice.sites, 2);
    assert_eq!(c.qpe, QpeStage::default());
}

#[test]
fn unknown_keys_are_config_errors() {
    assert!(RwmpConfig::from_toml_str("[lattice]\nsitez = 3\n").is_err());
}

#[test]
fn ks_models_need_inversion() {
    let mut c = oracle_config(vec![vec![0.0, 0.0]]);
    c.quantities = Quantities::Density;
    c.training.models = vec![ModelSpec {
        inputs: vec![Quantity::Potential],
        output: Quantity::KsPotential,
        architecture: Default::default(),
    }];
    assert!(run_rwmp(&c).is_err());
}

#[test]
fn mismatched_potential_length_is_fatal() {
    assert!(run_rwmp(&oracle_config(vec![vec![0.0, 0.0, 0.0]])).is_err());
}

#[test]
fn universal_label_for_density_models() {
    let s = TrainingSample {
        v: Some(vec![-0.5, 0.5]),
        n: Some(vec![1.5, 0.5]),
        energy: Some(-2.0),
        ..TrainingSample::new(Provenance::Oracle)
    };
    let f = sample_for(&Signature::new(&[Quantity::Density], Quantity::Energy), &s).unwrap();
    assert_eq!(f.energy, Some(-2.0 - (-0.75 + 0.25)));
    let e = sample_for(
        &Signature::new(&[Quantity::Potential], Quantity::Energy),
        &s,
    )
    .unwrap();
    assert_eq!(e.energy, Some(-2.0));
    assert!(sample_for(
        &Signature::new(&[Quantity::Potential], Quantity::KsPotential),
        &s
    )
    .is_none());
}

#[test]
fn csv_has_one_row_per_system() {
    let out = run_rwmp(&oracle_config(vec![vec![0.0, 0.0], vec![-0.2, 0.2]])).unwrap();
    let mut buf = Vec::new();
    out.write_records_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], RECORD_HEADER.join(","));
    assert!(lines[2].starts_with("1,ok,-0.2 0.2,"));
}

#[test]
fn degenerate_system_is_skipped() {
    // Without hopping the singly occupied configurations are degenerate at
    // zero offset; a large offset favours a unique doubly occupied site.
    let mut c = oracle_config(vec![vec![-1.0, 1.0], vec![0.0, 0.0], vec![-1.0, 1.0]]);
    c.lattice = LatticeConfig {
        t: 0.0,
        u: 1.0,
        ..Default::default()
    };
    c.quantities = Quantities::Density;
    c.schedule.max_step = 2.0;
    let out = run_rwmp(&c).unwrap();
    let status: Vec<Status> = out.records.iter().map(|r| r.status).collect();
    assert_eq!(status, vec![Status::Ok, Status::Failed, Status::Ok]);
    assert!(out.records[1].message.contains("degenerate"));
    assert_eq!(out.state.counters.failures, 1);
    assert_eq!(out.samples.len(), 2);
    assert_eq!(out.state.checkpoint, Some(2));
}
