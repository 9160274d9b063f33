use std::collections::BTreeMap;

use dropnoise_core::io::{encode_checkpoint, load_mnist_idx, Checkpoint, Dataset};
use dropnoise_core::nn::{Activation, DropoutSpec, Forward, LayerKind, LayerStack, MaskRng, Phase, Probability};
use dropnoise_core::rng::{stream_rng, StreamId};
use dropnoise_core::training::{train_gan_with, OptimizerConfig, TrainConfig, TrainError, TrainState};
use dropnoise_core::Architecture;
use dropnoise_tensor::{Graph, Tensor};
use rand::Rng;

fn p(v: f64) -> Probability {
    Probability::new(v).unwrap()
}

fn mnist() -> Dataset {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist5k");
    load_mnist_idx(&dir.join("train-images-idx3-ubyte"), Some(&dir.join("train-labels-idx1-ubyte"))).unwrap()
}

fn first(ds: &Dataset, n: usize) -> Dataset {
    let idx: Vec<usize> = (0..n).map(|i| i * (ds.len() / n)).collect();
    Dataset { images: ds.gather(&idx), labels: None, provenance: ds.provenance.clone() }
}

#[test]
fn one_desk_step_is_finite_and_moves_every_parameter() {
    let ds = first(&mnist(), 8);
    let mut state = TrainState::<f32>::init(&Architecture::desk(p(0.4)), OptimizerConfig::DCGAN_ADAM, 3).unwrap();
    let (g0, d0) = (state.generator.clone(), state.discriminator.clone());
    let l = state.step(&ds.images).unwrap();
    assert!(l.g_loss.is_finite() && l.d_loss.is_finite());
    for (before, after) in [(&g0, &state.generator), (&d0, &state.discriminator)] {
        for (name, t) in after.params() {
            assert!(t.all_finite(), "{name}");
            assert_ne!(t, &before.params()[name], "{name} did not move");
        }
    }
    assert_ne!(g0.buffers(), state.generator.buffers(), "running stats updated");
    assert!(state.mask_rng.position().unwrap() > 0);
}

#[test]
fn no_training_dropout_consumes_no_mask_randomness() {
    let ds = first(&mnist(), 4);
    let mut state = TrainState::<f32>::init(&Architecture::desk(Probability::ZERO), OptimizerConfig::DCGAN_ADAM, 3).unwrap();
    state.step(&ds.images).unwrap();
    state.step(&ds.images).unwrap();
    assert_eq!(state.mask_rng.position(), Some(0));
}

fn dense_gan(p_train: f64, seed: u64) -> (LayerStack<f64>, LayerStack<f64>) {
    let gen = vec![
        LayerKind::Dense { inputs: 2, outputs: 3, bias: true },
        LayerKind::Activation { activation: Activation::Tanh },
        LayerKind::Dropout { spec: DropoutSpec::inverted(p(p_train)) },
        LayerKind::Dense { inputs: 3, outputs: 4, bias: true },
        LayerKind::Activation { activation: Activation::Tanh },
        LayerKind::Reshape { shape: vec![1, 2, 2] },
    ];
    let disc = vec![
        LayerKind::Reshape { shape: vec![4] },
        LayerKind::Dense { inputs: 4, outputs: 3, bias: true },
        LayerKind::Activation { activation: Activation::LeakyRelu { slope: 0.2 } },
        LayerKind::Dense { inputs: 3, outputs: 1, bias: true },
        LayerKind::Activation { activation: Activation::Sigmoid },
    ];
    let mut init = stream_rng(seed, StreamId::INIT);
    let mut g = LayerStack::new("gen", vec![2], gen, &mut init).unwrap();
    let mut d = LayerStack::new("disc", vec![1, 2, 2], disc, &mut init).unwrap();
    // Larger weights than the DCGAN initialization so gradients are well scaled.
    for t in g.params_mut().values_mut().chain(d.params_mut().values_mut()) {
        for v in t.data_mut() {
            *v = init.random_range(-1.0..1.0);
        }
    }
    (g, d)
}

fn bce(logits: &Tensor<f64>, target: f64) -> f64 {
    let s: f64 = logits.data().iter().map(|&x| x.max(0.0) - x * target + (-x.abs()).exp().ln_1p()).sum();
    s / logits.len() as f64
}

fn logits(stack: &LayerStack<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let mut rng = MaskRng::shared(0, StreamId::TRAIN_MASKS);
    stack.forward(x, &Forward::phase(Phase::Train).logits(), &mut rng).unwrap()
}

fn numeric_grad(
    stack: &LayerStack<f64>,
    loss: impl Fn(&LayerStack<f64>) -> f64,
) -> BTreeMap<String, Vec<f64>> {
    const H: f64 = 1e-6;
    let mut out = BTreeMap::new();
    for (name, t) in stack.params() {
        let mut grads = Vec::with_capacity(t.len());
        for i in 0..t.len() {
            let mut plus = stack.clone();
            plus.params_mut().get_mut(name).unwrap().data_mut()[i] += H;
            let mut minus = stack.clone();
            minus.params_mut().get_mut(name).unwrap().data_mut()[i] -= H;
            grads.push((loss(&plus) - loss(&minus)) / (2.0 * H));
        }
        out.insert(name.clone(), grads);
    }
    out
}

fn assert_update(before: &LayerStack<f64>, after: &LayerStack<f64>, numeric: &BTreeMap<String, Vec<f64>>, lr: f64) {
    for (name, g) in numeric {
        for (i, &gn) in g.iter().enumerate() {
            let analytic = (before.params()[name].data()[i] - after.params()[name].data()[i]) / lr;
            let err = (analytic - gn).abs() / analytic.abs().max(gn.abs()).max(1e-6);
            assert!(err <= 1e-5, "{name}[{i}]: analytic {analytic} numeric {gn}");
        }
    }
}

#[test]
fn dense_gan_step_matches_finite_difference_update() {
    let lr = 0.05;
    let (g0, d0) = dense_gan(0.0, 11);
    let mut rng = stream_rng(12, StreamId::TRAIN);
    let real = Tensor::from_fn(vec![3, 1, 2, 2], |_| rng.random_range(-1.0..1.0)).unwrap();
    let z = Tensor::from_fn(vec![3, 2], |_| rng.random_range(-1.0..1.0)).unwrap();

    let mut state = TrainState::new(g0.clone(), d0.clone(), OptimizerConfig::Sgd { learning_rate: lr }, 0);
    state.step_with_latent(&real, &z).unwrap();

    let fake0 = g0.forward(&z, &Forward::phase(Phase::Train), &mut MaskRng::shared(0, StreamId::TRAIN_MASKS)).unwrap();
    let d_numeric = numeric_grad(&d0, |d| bce(&logits(d, &real), 1.0) + bce(&logits(d, &fake0), 0.0));
    assert_update(&d0, &state.discriminator, &d_numeric, lr);

    let d1 = state.discriminator.clone();
    let g_numeric = numeric_grad(&g0, |g| {
        let fake = g.forward(&z, &Forward::phase(Phase::Train), &mut MaskRng::shared(0, StreamId::TRAIN_MASKS)).unwrap();
        bce(&logits(&d1, &fake), 1.0)
    });
    assert_update(&g0, &state.generator, &g_numeric, lr);
}

#[test]
fn frozen_indifferent_discriminator_still_gives_generator_gradient() {
    let (g, _) = dense_gan(0.0, 21);
    let z = Tensor::new(vec![2, 2], vec![0.3, -0.7, -0.4, 0.9]).unwrap();
    let mut rng = MaskRng::shared(0, StreamId::TRAIN_MASKS);
    let fake = g.forward(&z, &Forward::phase(Phase::Train), &mut rng).unwrap();
    let (a, b) = (&fake.data()[..4], &fake.data()[4..]);
    // w orthogonal to a − b, bias −w·a: logit 0 (D = 0.5) on both fakes.
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let raw = [1.0, -0.5, 0.25, 0.75];
    let proj = raw.iter().zip(&diff).map(|(r, d)| r * d).sum::<f64>() / diff.iter().map(|d| d * d).sum::<f64>();
    let w: Vec<f64> = raw.iter().zip(&diff).map(|(r, d)| r - proj * d).collect();
    let bias = -w.iter().zip(a).map(|(wi, ai)| wi * ai).sum::<f64>();
    let layers = vec![
        LayerKind::Reshape { shape: vec![4] },
        LayerKind::Dense { inputs: 4, outputs: 1, bias: true },
        LayerKind::Activation { activation: Activation::Sigmoid },
    ];
    let tensors = BTreeMap::from([
        ("disc.1.weight".to_owned(), Tensor::new(vec![4, 1], w).unwrap()),
        ("disc.1.bias".to_owned(), Tensor::new(vec![1], vec![bias]).unwrap()),
    ]);
    let d = LayerStack::from_tensors("disc", vec![1, 2, 2], layers, tensors).unwrap();
    let probs = d.forward(&fake, &Forward::phase(Phase::Train), &mut rng).unwrap();
    for &v in probs.data() {
        assert!((v - 0.5).abs() < 1e-12, "{v}");
    }

    let mut graph = Graph::new();
    let zv = graph.input(z.clone());
    let out = g.forward_graph(&mut graph, zv, true, &Forward::phase(Phase::Train), &mut rng).unwrap();
    let frozen = d.bind(&mut graph, false).unwrap();
    let l = d.forward_bound(&mut graph, &frozen, out.output, &Forward::phase(Phase::Train).logits(), &mut rng).unwrap();
    let loss = graph.bce_with_logits(l.output, Tensor::ones(vec![2, 1]).unwrap()).unwrap();
    let grads = graph.backward(loss).unwrap();
    assert!(grads.all_finite());
    assert_eq!(grads.len(), g.params().len(), "frozen discriminator contributes no gradients");
    let norm: f64 = grads.iter().flat_map(|(_, t)| t.data().iter().map(|v| v * v)).sum();
    assert!(norm > 1e-6, "gradient norm² {norm}");
}

fn tiny_config(seed: u64) -> TrainConfig {
    TrainConfig {
        p_train: p(0.4),
        epochs: 2,
        batch_size: 8,
        optimizer: OptimizerConfig::DCGAN_ADAM,
        seed,
        dataset_size: Some(36),
        monitor_every: 2,
        checkpoint_out: None,
    }
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let ds = first(&mnist(), 60);
    let cfg = tiny_config(5);
    let arch = Architecture::desk(cfg.p_train);
    let run = || {
        let o = train_gan_with(&arch, &cfg, &ds, |_| {}).unwrap();
        (encode_checkpoint(&Checkpoint::from_outcome(&o)).unwrap(), o.log)
    };
    let (a, log_a) = run();
    let (b, log_b) = run();
    assert_eq!(a, b);
    assert_eq!(log_a, log_b);
    // 36 images in batches of 8: 4 full batches per epoch.
    assert_eq!(log_a.steps.len(), 8);
    assert!(log_a.steps.iter().all(|s| s.g_loss.is_finite() && s.d_loss.is_finite()));
    // Checks at steps 2 and 6 inside epochs, plus one per epoch end.
    assert_eq!(log_a.monitors.iter().map(|m| m.step).collect::<Vec<_>>(), vec![1, 3, 5, 7]);
    let other = train_gan_with(&arch, &tiny_config(6), &ds, |_| {}).unwrap();
    assert_ne!(encode_checkpoint(&Checkpoint::from_outcome(&other)).unwrap(), a);
}

#[test]
fn progress_reports_each_epoch() {
    let ds = first(&mnist(), 40);
    let cfg = TrainConfig { monitor_every: 0, ..tiny_config(1) };
    let mut seen = Vec::new();
    train_gan_with(&Architecture::desk(cfg.p_train), &cfg, &ds, |pr| seen.push((pr.epoch, pr.step))).unwrap();
    assert_eq!(seen, vec![(1, 4), (2, 8)]);
}

#[test]
fn divergence_aborts_with_the_partial_log() {
    let ds = first(&mnist(), 40);
    let cfg = TrainConfig { optimizer: OptimizerConfig::Sgd { learning_rate: 1e30 }, ..tiny_config(2) };
    match train_gan_with(&Architecture::desk(cfg.p_train), &cfg, &ds, |_| {}) {
        Err(TrainError::Diverged { step, log, .. }) => {
            assert_eq!(log.steps.len() as u64, step);
            assert!(log.steps.iter().all(|s| s.g_loss.is_finite() && s.d_loss.is_finite()));
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn invalid_configurations_are_rejected() {
    let ds = first(&mnist(), 40);
    let arch = Architecture::desk(p(0.2));
    for cfg in [
        TrainConfig { batch_size: 1, ..tiny_config(0) },
        TrainConfig { epochs: 0, ..tiny_config(0) },
        TrainConfig { dataset_size: Some(41), ..tiny_config(0) },
        TrainConfig { dataset_size: Some(4), ..tiny_config(0) },
    ] {
        assert!(matches!(train_gan_with(&arch, &cfg, &ds, |_| {}), Err(TrainError::Config(_))));
    }
}
