use super::*;
use crate::sim::RandomStream;

fn sample_xy(x: &[f64], y: &[f64]) -> TrainingSample {
    TrainingSample {
        v: Some(x.to_vec()),
        n: None,
        energy: None,
        v_s: Some(y.to_vec()),
        provenance: Provenance::Oracle,
        weight: 1.0,
    }
}

fn vs_sig() -> Signature {
    Signature::new(&[Quantity::Potential], Quantity::KsPotential)
}

fn random_data(rng: &mut RandomStream, n: usize, d: usize) -> Vec<TrainingSample> {
    (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            sample_xy(&x, &y)
        })
        .collect()
}

fn params(net: &Network) -> Vec<f64> {
    net.layers
        .iter()
        .flat_map(|l| {
            l.weights
                .iter()
                .copied()
                .chain(l.bias.iter().copied())
                .collect::<Vec<_>>()
        })
        .collect()
}

fn flat(g: &Gradients) -> Vec<f64> {
    g.weights
        .iter()
        .zip(&g.biases)
        .flat_map(|(w, b)| {
            w.iter()
                .copied()
                .chain(b.iter().copied())
                .collect::<Vec<_>>()
        })
        .collect()
}

fn set_param(net: &mut Network, k: usize, value: f64) {
    let mut idx = k;
    for l in &mut net.layers {
        let nw = l.weights.len();
        if idx < nw {
            l.weights.as_mut_slice()[idx] = value;
            return;
        }
        idx -= nw;
        if idx < l.bias.len() {
            l.bias[idx] = value;
            return;
        }
        idx -= l.bias.len();
    }
    panic!("parameter index out of range");
}

#[test]
fn backprop_matches_central_differences() {
    for seed in [1u64, 2, 3] {
        let mut rng = RandomStream::new(seed);
        let arch = Architecture {
            bandwidth: None,
            ..Default::default()
        };
        let mut model = Model::with_architecture(vs_sig(), 2, arch, &mut rng).unwrap();
        // Nonzero biases exercise every parameter.
        for l in &mut model.network.layers {
            l.bias = l.bias.map(|_| rng.gen_range(-0.5..0.5));
        }
        let data = random_data(&mut rng, 5, 2);
        let batch: Vec<usize> = (0..5).collect();
        let sig = vs_sig();
        let (_, g) = backward(&model.network, &data, &sig, &batch).unwrap();
        let g = flat(&g);
        let p = params(&model.network);
        let h = 1e-6;
        for k in 0..p.len() {
            let mut plus = model.network.clone();
            set_param(&mut plus, k, p[k] + h);
            let mut minus = model.network.clone();
            set_param(&mut minus, k, p[k] - h);
            let fd = (batch_cost(&plus, &data, &sig, &batch).unwrap().value
                - batch_cost(&minus, &data, &sig, &batch).unwrap().value)
                / (2.0 * h);
            let scale = g[k].abs().max(fd.abs()).max(1e-3);
            assert!(
                (g[k] - fd).abs() / scale < 1e-6,
                "seed {seed} param {k}: {} vs {fd}",
                g[k]
            );
        }
    }
}

#[test]
fn linear_model_gradient_is_normal_equations() {
    let w = DMatrix::from_row_slice(1, 2, &[0.3, -0.7]);
    let layer = Layer::new(
        w.clone(),
        DVector::zeros(1),
        Activation::Identity,
        DMatrix::from_element(1, 2, 1.0),
    )
    .unwrap();
    let net = Network::new(vec![layer]).unwrap();
    let sig = Signature::new(&[Quantity::Density], Quantity::Energy);
    let xs = [[1.0, 2.0], [0.5, -1.0], [2.0, 0.0]];
    let ts = [1.0, -0.5, 0.25];
    let data: Vec<TrainingSample> = xs
        .iter()
        .zip(ts)
        .map(|(x, t)| TrainingSample {
            n: Some(x.to_vec()),
            energy: Some(t),
            ..TrainingSample::new(Provenance::Oracle)
        })
        .collect();
    let (_, g) = backward(&net, &data, &sig, &[0, 1, 2]).unwrap();
    let x = DMatrix::from_row_slice(3, 2, &xs.concat());
    let t = DVector::from_column_slice(&ts);
    let expect = (x.transpose() * (&x * w.transpose() - t)) * 2.0;
    assert!((g.weights[0][(0, 0)] - expect[0]).abs() < 1e-12);
    assert!((g.weights[0][(0, 1)] - expect[1]).abs() < 1e-12);
}

#[test]
fn zero_residual_gives_zero_gradient() {
    let mut rng = RandomStream::new(4);
    let model = Model::new(vs_sig(), 2, &mut rng).unwrap();
    let x = [0.2, -0.4];
    let y = model.forward(&x).unwrap();
    let data = vec![sample_xy(&x, &y)];
    let (c, g) = backward(&model.network, &data, &vs_sig(), &[0]).unwrap();
    assert_eq!(c.value, 0.0);
    assert_eq!(g.max_abs(), 0.0);
}

#[test]
fn cost_is_sum_of_squared_residuals() {
    let mut rng = RandomStream::new(5);
    let model = Model::new(vs_sig(), 2, &mut rng).unwrap();
    let mut data = random_data(&mut rng, 4, 2);
    data[2].weight = 3.0;
    let c = batch_cost(&model.network, &data, &vs_sig(), &[2, 0]).unwrap();
    assert_eq!(c.batch, vec![2, 0]);
    assert_eq!(
        c.value,
        c.residuals.iter().flatten().map(|r| r * r).sum::<f64>()
    );
}

#[test]
fn one_parameter_quadratic_converges_geometrically() {
    let layer = Layer::new(
        DMatrix::from_element(1, 1, 0.0),
        DVector::zeros(1),
        Activation::Identity,
        DMatrix::from_element(1, 1, 1.0),
    )
    .unwrap();
    let mut net = Network::new(vec![layer]).unwrap();
    net.layers[0].mask = DMatrix::from_element(1, 1, 1.0);
    let sig = Signature::new(&[Quantity::Density], Quantity::Energy);
    let data = vec![TrainingSample {
        n: Some(vec![1.0]),
        energy: Some(2.0),
        ..TrainingSample::new(Provenance::Oracle)
    }];
    // Freeze the bias so the cost is (w - 2)^2 in one parameter.
    let mut errs = Vec::new();
    for _ in 0..20 {
        let (_, g) = backward(&net, &data, &sig, &[0]).unwrap();
        let mut gw = g.clone();
        gw.biases[0][0] = 0.0;
        net.apply_update(-0.1, &gw);
        errs.push((net.layers[0].weights[(0, 0)] - 2.0).abs());
    }
    for w in errs.windows(2) {
        assert!((w[1] / w[0] - 0.8).abs() < 1e-9);
    }
}

#[test]
fn zero_rate_leaves_model_unchanged() {
    let mut rng = RandomStream::new(6);
    let model = Model::new(vs_sig(), 2, &mut rng).unwrap();
    let data = random_data(&mut rng, 3, 2);
    let mut net = model.network.clone();
    let r = sgd_step(&mut net, &data, &vs_sig(), &[0, 1, 2], 0.0).unwrap();
    assert!(!r.accepted);
    assert_eq!(net, model.network);
}

#[test]
fn accepted_steps_always_lower_the_batch_cost() {
    let mut rng = RandomStream::new(7);
    let mut model = Model::new(vs_sig(), 2, &mut rng).unwrap();
    let data = random_data(&mut rng, 16, 2);
    let mut sgd = Sgd::new(0.5, 0.9);
    let mut accepted = 0;
    for step in 0..1000 {
        let start = (step * 4) % 16;
        let batch: Vec<usize> = (start..start + 4).collect();
        let r = sgd
            .step(&mut model.network, &data, &vs_sig(), &batch)
            .unwrap();
        if r.accepted {
            accepted += 1;
            assert!(r.after < r.before.value);
            let now = batch_cost(&model.network, &data, &vs_sig(), &batch)
                .unwrap()
                .value;
            assert_eq!(now, r.after);
        }
    }
    assert!(accepted > 900);
}

#[test]
fn nan_gradient_aborts() {
    let mut rng = RandomStream::new(8);
    let mut model = Model::new(vs_sig(), 2, &mut rng).unwrap();
    let data = vec![sample_xy(&[f64::NAN, 0.0], &[0.0, 0.0])];
    let err = sgd_step(&mut model.network, &data, &vs_sig(), &[0], 0.1).unwrap_err();
    assert!(matches!(err, Error::NonFinite(_)));
}

#[test]
fn memorizes_three_samples() {
    let mut rng = RandomStream::new(9);
    let mut model = Model::new(vs_sig(), 2, &mut rng).unwrap();
    let data = random_data(&mut rng, 3, 2);
    let config = TrainConfig {
        epochs: 20_000,
        batch_size: 3,
        eta: 0.05,
        patience: 20_000,
        target_cost: 1e-8,
        ..Default::default()
    };
    let curve = model.train(&data, config, &mut rng).unwrap();
    assert!(curve.final_cost <= 1e-8, "{}", curve.final_cost);
}

#[test]
fn masked_weights_stay_zero() {
    let mut rng = RandomStream::new(10);
    let sig = Signature::new(&[Quantity::Potential], Quantity::Density);
    let arch = Architecture {
        bandwidth: Some(0),
        ..Default::default()
    };
    let mut model = Model::with_architecture(sig.clone(), 3, arch, &mut rng).unwrap();
    let data: Vec<TrainingSample> = (0..6)
        .map(|_| TrainingSample {
            v: Some((0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()),
            n: Some((0..3).map(|_| rng.gen_range(0.0..2.0)).collect()),
            ..TrainingSample::new(Provenance::Oracle)
        })
        .collect();
    model
        .train(
            &data,
            TrainConfig {
                epochs: 50,
                ..Default::default()
            },
            &mut rng,
        )
        .unwrap();
    for l in &model.network.layers {
        assert!(l.mask.iter().any(|&m| m == 0.0));
        for (w, m) in l.weights.iter().zip(l.mask.iter()) {
            if *m == 0.0 {
                assert_eq!(*w, 0.0);
            }
        }
    }
}

#[test]
fn construction_and_forward_are_deterministic() {
    let a = Model::new(vs_sig(), 3, &mut RandomStream::new(11)).unwrap();
    let b = Model::new(vs_sig(), 3, &mut RandomStream::new(11)).unwrap();
    assert_eq!(a, b);
    let x = [0.1, -0.2, 0.3];
    assert_eq!(
        a.forward(&x)
            .unwrap()
            .iter()
            .map(|v| v.to_bits())
            .collect::<Vec<_>>(),
        b.forward(&x)
            .unwrap()
            .iter()
            .map(|v| v.to_bits())
            .collect::<Vec<_>>()
    );
}

#[test]
fn linear_model_derivative_is_its_weights() {
    let layer = Layer::new(
        DMatrix::from_row_slice(1, 3, &[0.5, -1.5, 2.0]),
        DVector::from_element(1, 0.3),
        Activation::Identity,
        DMatrix::from_element(1, 3, 1.0),
    )
    .unwrap();
    let model = Model {
        network: Network::new(vec![layer]).unwrap(),
        signature: Signature::new(&[Quantity::Density], Quantity::Energy),
        n_sites: 3,
        manifold: None,
    };
    for x in [[0.0, 0.0, 0.0], [1.0, 0.5, 0.5]] {
        assert_eq!(
            model.functional_derivative(&x, Quantity::Density).unwrap(),
            vec![0.5, -1.5, 2.0]
        );
    }
    assert!(model
        .functional_derivative(&[0.0; 3], Quantity::Potential)
        .is_err());
}

#[test]
fn derivative_matches_numeric_differentiation() {
    let mut rng = RandomStream::new(12);
    let sig = Signature::new(&[Quantity::Density, Quantity::Potential], Quantity::Energy);
    let model = Model::new(sig, 2, &mut rng).unwrap();
    let x = [1.2, 0.8, -0.3, 0.3];
    let dn = model.functional_derivative(&x, Quantity::Density).unwrap();
    let dv = model
        .functional_derivative(&x, Quantity::Potential)
        .unwrap();
    let full: Vec<f64> = dn.iter().chain(&dv).copied().collect();
    let h = 1e-5;
    for k in 0..4 {
        let mut p = x;
        p[k] += h;
        let mut m = x;
        m[k] -= h;
        let fd = (model.forward(&p).unwrap()[0] - model.forward(&m).unwrap()[0]) / (2.0 * h);
        assert!(
            (full[k] - fd).abs() / fd.abs().max(1e-3) < 1e-5,
            "{k}: {} vs {fd}",
            full[k]
        );
    }
}

#[test]
fn model_file_round_trip_is_exact() {
    let mut rng = RandomStream::new(13);
    let mut model = Model::new(
        Signature::new(&[Quantity::Potential], Quantity::Density),
        3,
        &mut rng,
    )
    .unwrap();
    model.network.normalization.in_scale = vec![0.1, 1.0 / 3.0, 7.0];
    model.manifold = Some(TrainingManifold {
        lower: vec![-1.0; 3],
        upper: vec![1.0; 3],
        n_electrons: Some(3),
        polarization: Some([2, 1]),
        potential_lower: Some(vec![-0.5, -0.25, 0.0]),
        potential_upper: Some(vec![0.5, 0.75, 1.0]),
    });
    let text = model.to_toml_string().unwrap();
    let back = Model::from_toml_str(&text).unwrap();
    assert_eq!(back, model);
}

#[test]
fn corrupt_model_file_is_rejected() {
    let mut rng = RandomStream::new(14);
    let model = Model::new(vs_sig(), 2, &mut rng).unwrap();
    let text = model
        .to_toml_string()
        .unwrap()
        .replace("n_sites = 2", "n_sites = 3");
    assert!(Model::from_toml_str(&text).is_err());
}

#[test]
fn empty_dataset_is_an_error() {
    let mut rng = RandomStream::new(15);
    let mut model = Model::new(vs_sig(), 2, &mut rng).unwrap();
    assert!(model.train(&[], TrainConfig::default(), &mut rng).is_err());
}

#[test]
fn ml_functional_requires_density_to_energy() {
    let mut rng = RandomStream::new(16);
    assert!(MlFunctional::new(Model::new(vs_sig(), 2, &mut rng).unwrap()).is_err());
    let f = Model::new(
        Signature::new(&[Quantity::Density], Quantity::Energy),
        2,
        &mut rng,
    )
    .unwrap();
    assert!(MlFunctional::new(f).is_ok());
}
