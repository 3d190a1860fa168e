use super::*;
use crate::data::{gen_blobs, gen_sinusoid, BlobSpec, SinusoidSpec};
use crate::network::{Activation, Init, Layer};
use crate::noise::NoiseMode;

fn blobs(seed: u64) -> Dataset {
    gen_blobs(&BlobSpec {
        classes: 2,
        per_class: 100,
        dim: 2,
        separation: 4.0,
        cluster_std: 0.5,
        seed,
    })
    .unwrap()
}

fn mlp(dims: &[usize], act: Activation, seed: u64) -> Network {
    Network::random(dims, act, Init::Uniform, &mut RandomSource::new(seed)).unwrap()
}

#[test]
fn zero_steps_returns_initial_network() {
    let net = mlp(&[2, 8, 2], Activation::Relu, 1);
    let cfg = TrainConfig {
        loss: LossKind::CrossEntropy,
        steps: 0,
        ..TrainConfig::default()
    };
    let (out, log) = train(net.clone(), &blobs(0), None, &cfg).unwrap();
    assert_eq!(out, net);
    assert_eq!(log.rows.len(), 1);
    assert_eq!(log.rows[0].step, 0);
}

#[test]
fn baseline_separates_blobs() {
    let ds = blobs(3);
    let cfg = TrainConfig {
        loss: LossKind::CrossEntropy,
        learning_rate: 0.1,
        batch_size: 32,
        steps: 500,
        seed: 3,
        ..TrainConfig::default()
    };
    let (net, _) = train(mlp(&[2, 16, 2], Activation::Relu, 3), &ds, None, &cfg).unwrap();
    let acc = evaluate(&net, &ds, LossKind::CrossEntropy)
        .unwrap()
        .accuracy
        .unwrap();
    assert!(acc >= 0.95, "accuracy {acc}");
}

#[test]
fn zero_variance_gni_is_bitwise_baseline() {
    let ds = gen_sinusoid(&SinusoidSpec {
        points: 64,
        ..SinusoidSpec::default()
    })
    .unwrap();
    let net = mlp(&[1, 16, 16, 1], Activation::Relu, 2);
    let base = TrainConfig {
        learning_rate: 0.01,
        batch_size: 16,
        steps: 40,
        eval_every: 10,
        seed: 11,
        ..TrainConfig::default()
    };
    let gni = TrainConfig {
        mode: TrainMode::Gni,
        noise: NoiseSpec::uniform(3, NoiseMode::Additive, 0.0).unwrap(),
        ..base.clone()
    };
    let (a, la) = train(net.clone(), &ds, None, &base).unwrap();
    let (b, lb) = train(net, &ds, None, &gni).unwrap();
    assert_eq!(a, b);
    assert_eq!(la, lb);
}

#[test]
fn training_is_deterministic() {
    let ds = blobs(5);
    let cfg = TrainConfig {
        mode: TrainMode::Gni,
        loss: LossKind::CrossEntropy,
        noise: NoiseSpec::uniform(2, NoiseMode::Multiplicative, 0.2).unwrap(),
        learning_rate: 0.05,
        batch_size: 20,
        steps: 30,
        eval_every: 5,
        seed: 9,
        ..TrainConfig::default()
    };
    let net = mlp(&[2, 8, 2], Activation::Elu, 4);
    let run = || {
        let (n, log) = train(net.clone(), &ds, Some(&ds), &cfg).unwrap();
        let mut csv = Vec::new();
        log.write_csv(2, &mut csv).unwrap();
        (n, csv)
    };
    assert_eq!(run(), run());
}

#[test]
fn different_seeds_give_different_noise() {
    let ds = blobs(5);
    let mut cfg = TrainConfig {
        mode: TrainMode::Gni,
        loss: LossKind::CrossEntropy,
        noise: NoiseSpec::uniform(2, NoiseMode::Additive, 0.5).unwrap(),
        learning_rate: 0.05,
        batch_size: 20,
        steps: 5,
        ..TrainConfig::default()
    };
    let net = mlp(&[2, 8, 2], Activation::Elu, 4);
    let (a, _) = train(net.clone(), &ds, None, &cfg).unwrap();
    cfg.seed = 1;
    let (b, _) = train(net, &ds, None, &cfg).unwrap();
    assert_ne!(a, b);
}

fn tiny_net(act: Activation, seed: u64) -> Network {
    mlp(&[2, 2, 2], act, seed)
}

fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

#[test]
fn explicit_gradient_matches_finite_differences() {
    let x = Matrix::from_rows(&[[0.3, -0.8], [1.2, 0.4], [-0.5, -0.1]]).unwrap();
    let reg_targets = Matrix::from_rows(&[[0.2, -0.4], [1.0, 0.5], [0.0, 0.3]]).unwrap();
    let class_targets = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]]).unwrap();
    for act in [Activation::Sigmoid, Activation::Elu, Activation::Softplus] {
        for mode in [NoiseMode::Additive, NoiseMode::Multiplicative] {
            for (loss, variant, targets) in [
                (LossKind::Mse, RegVariant::Mse, &reg_targets),
                (LossKind::CrossEntropy, RegVariant::CeDiag, &class_targets),
                (LossKind::CrossEntropy, RegVariant::CeFull, &class_targets),
            ] {
                let net = tiny_net(act, 21);
                let spec = NoiseSpec::uniform(2, mode, 0.5).unwrap();
                let (v, g) = explicit_objective(&net, &x, targets, loss, &spec, variant).unwrap();
                let (vf, gf) =
                    explicit_objective_fd(&net, &x, targets, loss, &spec, variant, 1e-5).unwrap();
                assert!((v - vf).abs() < 1e-14);
                for (i, (a, b)) in g.flatten().iter().zip(gf.flatten()).enumerate() {
                    assert!(
                        relative_gap(*a, b) < 1e-4,
                        "{act} {mode:?} {variant:?} coordinate {i}: {a} vs {b}"
                    );
                }
            }
        }
    }
}

#[test]
fn explicit_modes_train_to_same_trajectory_start() {
    let ds = blobs(1);
    let small =
        Dataset::from_labels(ds.inputs.select_rows(&[0, 1, 150, 151]), &[0, 0, 1, 1], 2).unwrap();
    let base = TrainConfig {
        mode: TrainMode::Explicit,
        loss: LossKind::CrossEntropy,
        noise: NoiseSpec::uniform(2, NoiseMode::Additive, 0.3).unwrap(),
        learning_rate: 0.1,
        batch_size: 4,
        steps: 3,
        ..TrainConfig::default()
    };
    let fd = TrainConfig {
        explicit_grad: ExplicitGrad::FiniteDifference,
        ..base.clone()
    };
    let net = tiny_net(Activation::Sigmoid, 2);
    let (a, _) = train(net.clone(), &small, None, &base).unwrap();
    let (b, _) = train(net, &small, None, &fd).unwrap();
    for (x, y) in a.params().iter().zip(b.params()) {
        assert!((x - y).abs() < 1e-7);
    }
}

#[test]
fn mismatched_variant_is_rejected() {
    let cfg = TrainConfig {
        mode: TrainMode::Explicit,
        loss: LossKind::Mse,
        reg_variant: Some(RegVariant::CeDiag),
        ..TrainConfig::default()
    };
    let net = tiny_net(Activation::Relu, 0);
    assert!(matches!(cfg.validate(&net), Err(Error::Argument(_))));
}

#[test]
fn bad_hyperparameters_are_rejected() {
    let net = tiny_net(Activation::Relu, 0);
    for cfg in [
        TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        },
        TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        },
    ] {
        assert!(matches!(cfg.validate(&net), Err(Error::Argument(_))));
    }
}

#[test]
fn divergence_reports_step() {
    let ds = gen_sinusoid(&SinusoidSpec {
        points: 32,
        ..SinusoidSpec::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e150,
        batch_size: 8,
        steps: 50,
        ..TrainConfig::default()
    };
    match train(mlp(&[1, 8, 1], Activation::Relu, 0), &ds, None, &cfg) {
        Err(Error::Divergence { step, .. }) => assert!((1..=50).contains(&step)),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn perfect_fit_has_zero_loss() {
    let net = Network::new(vec![Layer {
        weights: Matrix::from_rows(&[[2.0]]).unwrap(),
        bias: vec![1.0],
        activation: Activation::Identity,
    }])
    .unwrap();
    let x = Matrix::from_rows(&[[0.0], [1.0], [-2.0]]).unwrap();
    let y = x.map(|v| 2.0 * v + 1.0);
    let ds = Dataset::new(x, y, crate::data::Task::Regression).unwrap();
    let e = evaluate(&net, &ds, LossKind::Mse).unwrap();
    assert_eq!(e.loss, 0.0);
    assert_eq!(e.accuracy, None);
}

#[test]
fn uniform_logits_score_chance() {
    let classes = 10;
    let net = Network::new(vec![Layer {
        weights: Matrix::zeros(classes, 3),
        bias: vec![0.0; classes],
        activation: Activation::Identity,
    }])
    .unwrap();
    let labels: Vec<usize> = (0..200).map(|i| i % classes).collect();
    let mut rs = RandomSource::new(0);
    let x = Matrix::from_vec(200, 3, rs.gaussian(600, 1.0).unwrap()).unwrap();
    let ds = Dataset::from_labels(x, &labels, classes).unwrap();
    let e = evaluate(&net, &ds, LossKind::CrossEntropy).unwrap();
    assert!((e.accuracy.unwrap() - 0.1).abs() < 1e-12);
    assert!((e.loss - (classes as f64).ln()).abs() < 1e-12);
}

#[test]
fn metric_csv_schema() {
    let log = MetricLog {
        rows: vec![MetricRow {
            step: 0,
            train_loss: 1.5,
            test_loss: None,
            r_total: 0.25,
            r_layers: vec![0.0, 0.25],
        }],
    };
    let mut out = Vec::new();
    log.write_csv(2, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(
        text,
        "step,train_loss,test_loss,R_total,r_0,r_1\n0,1.5,,0.25,0,0.25\n"
    );
}

#[test]
fn observer_sees_every_tick() {
    let ds = blobs(2);
    let cfg = TrainConfig {
        loss: LossKind::CrossEntropy,
        learning_rate: 0.05,
        batch_size: 50,
        steps: 25,
        eval_every: 10,
        ..TrainConfig::default()
    };
    let mut seen = Vec::new();
    let (_, log) = train_with_observer(
        mlp(&[2, 4, 2], Activation::Relu, 0),
        &ds,
        None,
        &cfg,
        |s, _| {
            seen.push(s);
            Ok(())
        },
    )
    .unwrap();
    assert_eq!(seen, vec![0, 10, 20, 25]);
    assert_eq!(log.rows.iter().map(|r| r.step).collect::<Vec<_>>(), seen);
}
