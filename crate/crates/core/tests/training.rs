use pointseq::nn::gradcheck::toy_problem;
use pointseq::nn::layers::Params;
use pointseq::nn::{train, Model, ModelConfig, PreparedSample, TrainConfig};

fn flat(model: &Model) -> Vec<f64> {
    model.param_list().iter().flat_map(|p| p.data.iter().copied()).collect()
}

fn quick(epochs: usize, lr: f64) -> TrainConfig {
    TrainConfig { epochs, batch_size: 2, lr, warmup_epochs: 0, ..TrainConfig::desk() }
}

#[test]
fn zero_learning_rate_leaves_parameters_alone() {
    let (mut model, samples) = toy_problem(1).unwrap();
    let before = flat(&model);
    train(&mut model, &samples, &samples, &quick(3, 0.0), |_| Ok(())).unwrap();
    assert_eq!(before, flat(&model));
}

#[test]
fn memorizes_a_single_sample() {
    let (mut model, samples) = toy_problem(2).unwrap();
    let one = &samples[..1];
    let start = model.loss(&[&one[0]]).unwrap();
    let cfg = TrainConfig { weight_decay: 0.0, ..quick(60, 1e-2) };
    train(&mut model, one, one, &cfg, |_| Ok(())).unwrap();
    let end = model.loss(&[&one[0]]).unwrap();
    assert!(end < 1e-2 && end < start, "{start} -> {end}");
}

#[test]
fn duplicated_batch_has_the_same_loss_and_gradient() {
    let (model, samples) = toy_problem(3).unwrap();
    let single: Vec<&PreparedSample> = samples.iter().collect();
    let doubled: Vec<&PreparedSample> = samples.iter().chain(samples.iter()).collect();
    let (l1, g1) = model.loss_and_grad(&single).unwrap();
    let (l2, g2) = model.loss_and_grad(&doubled).unwrap();
    assert!((l1 - l2).abs() < 1e-12);
    for (a, b) in flat(&g1).iter().zip(flat(&g2)) {
        assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
    }
}

#[test]
fn center_encoder_gets_no_gradient_without_positional_embedding() {
    let (mut model, samples) = toy_problem(4).unwrap();
    model.config.use_positional_embedding = false;
    let batch: Vec<&PreparedSample> = samples.iter().collect();
    let (_, grad) = model.loss_and_grad(&batch).unwrap();
    let center: Vec<f64> =
        grad.param_list().iter().filter(|p| p.name.starts_with("center")).flat_map(|p| p.data.to_vec()).collect();
    assert!(!center.is_empty());
    assert!(center.iter().all(|g| *g == 0.0));
    let patch_norm: f64 = grad
        .param_list()
        .iter()
        .filter(|p| p.name.starts_with("patch"))
        .flat_map(|p| p.data.to_vec())
        .map(|g| g * g)
        .sum();
    assert!(patch_norm > 0.0);
}

#[test]
fn training_is_reproducible() {
    let run = || {
        let (mut model, samples) = toy_problem(5).unwrap();
        let report = train(&mut model, &samples, &samples, &quick(4, 5e-3), |_| Ok(())).unwrap();
        (flat(&model), report)
    };
    let (a, ra) = run();
    let (b, rb) = run();
    assert_eq!(a, b);
    assert_eq!(ra, rb);
}

#[test]
fn presets_validate() {
    for name in ["desk", "modelnet40", "scanobjectnn"] {
        ModelConfig::preset(name).unwrap().validate().unwrap();
        TrainConfig::preset(name).unwrap().validate().unwrap();
    }
    assert!(ModelConfig::preset("imagenet").is_err());
    assert!(TrainConfig { batch_size: 0, ..TrainConfig::desk() }.validate().is_err());
}
