use sact::episodes::stream_episode;
use sact::features::{generate_synthetic, FeatureDataset, SynthSpec};
use sact::model::{ModelConfig, SactParams};
use sact::training::{
    count_multiadds, evaluate, grad_check, loss_and_grad, train, CostConfig, GradCheckConfig, MixerCost, PnFsar, Stage,
    TrainConfig,
};
use sact::autodiff::BackwardFault;
use sact::Error;

fn tiny_model() -> ModelConfig {
    ModelConfig {
        frames: 4,
        patches_per_side: 2,
        channels: 4,
        d_k: 4,
        ..ModelConfig::default()
    }
}

fn dataset_for(model: &ModelConfig, object_dim: usize, seed: u64) -> FeatureDataset {
    generate_synthetic(&SynthSpec {
        n_classes: 8,
        videos_per_class: 8,
        frames: model.frames,
        patches_per_side: model.patches_per_side,
        channels: model.channels,
        object_dim,
        seed,
        ..SynthSpec::default()
    })
    .unwrap()
}

fn tiny_train(lr: f64, n: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: lr,
        n_train_tasks: n,
        model: tiny_model(),
        ..TrainConfig::default()
    }
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let cfg = tiny_train(0.0, 5);
    let ds = dataset_for(&cfg.model, 4, 1);
    let before = SactParams::<f32>::init(&cfg.model, cfg.master_seed).unwrap();
    let out = train::<f32>(&ds, None, &cfg).unwrap();
    for ((_, a), (_, b)) in before.store().iter().zip(out.params.store().iter()) {
        let bits = |p: &sact::autodiff::Parameter<f32>| p.value.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b), "{}", a.name);
    }
    assert_eq!(out.loss_curve.len(), 5);
}

#[test]
fn one_step_is_plain_sgd() {
    let lr = 0.125;
    let cfg = tiny_train(lr, 1);
    let ds = dataset_for(&cfg.model, 4, 2);
    let mut reference = SactParams::<f64>::init(&cfg.model, cfg.master_seed).unwrap();
    let episode = stream_episode(&ds, cfg.train_shape(), cfg.master_seed, 0).unwrap();
    let loss = loss_and_grad(&mut reference, &episode).unwrap();
    let out = train::<f64>(&ds, None, &cfg).unwrap();
    assert_eq!(out.loss_curve, vec![loss]);
    for ((_, old), (_, new)) in reference.store().iter().zip(out.params.store().iter()) {
        for ((&o, &g), &n) in old.value.data().iter().zip(old.grad.data()).zip(new.value.data()) {
            assert_eq!(n, o - lr * g, "{}", old.name);
        }
    }
}

#[test]
fn spatial_training_reduces_loss() {
    // desk-scale run: 2000 single-query episodes
    let model = ModelConfig {
        use_tmixer: false,
        d_k: 16,
        frame_norm_exponent: 1,
        ..ModelConfig::default()
    };
    let ds = generate_synthetic(&SynthSpec {
        n_classes: 20,
        seed: 1,
        ..SynthSpec::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.2,
        n_train_tasks: 2000,
        model,
        ..TrainConfig::default()
    };
    let out = train::<f32>(&ds, None, &cfg).unwrap();
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let first = mean(&out.loss_curve[..500]);
    let last = mean(&out.loss_curve[1500..]);
    assert!(last < first, "first {first} last {last}");
}

#[test]
fn untrained_model_is_at_chance_without_signal() {
    let model = ModelConfig {
        frames: 4,
        patches_per_side: 3,
        channels: 8,
        d_k: 8,
        ..ModelConfig::default()
    };
    // a large pool of pure-noise videos; with only a few dozen videos the
    // fixed pairwise distances bias every task the same way
    let ds = generate_synthetic(&SynthSpec {
        n_classes: 50,
        videos_per_class: 20,
        frames: 4,
        patches_per_side: 3,
        channels: 8,
        object_dim: 0,
        seed: 3,
        ..SynthSpec::default()
    })
    .unwrap();
    let params = SactParams::<f32>::init(&model, 0).unwrap();
    let cfg = TrainConfig {
        model,
        eval_queries: 1,
        ..TrainConfig::default()
    };
    let report = evaluate(&ds, &params, &cfg.eval_config(10_000, 9)).unwrap();
    assert!((0.18..=0.22).contains(&report.accuracy), "{}", report.accuracy);
}

#[test]
fn single_class_is_always_right() {
    let cfg = TrainConfig {
        way: 1,
        ..tiny_train(0.0, 1)
    };
    let ds = dataset_for(&cfg.model, 0, 4);
    let params = SactParams::<f32>::init(&cfg.model, 0).unwrap();
    let report = evaluate(&ds, &params, &cfg.eval_config(200, 1)).unwrap();
    assert_eq!(report.accuracy, 1.0);
    assert_eq!(evaluate(&ds, &PnFsar, &cfg.eval_config(50, 1)).unwrap().accuracy, 1.0);
}

#[test]
fn evaluation_is_deterministic_across_thread_counts() {
    let cfg = tiny_train(0.0, 1);
    let ds = dataset_for(&cfg.model, 4, 5);
    let params = SactParams::<f32>::init(&cfg.model, 0).unwrap();
    let mut ec = cfg.eval_config(300, 11);
    ec.threads = 1;
    let a = evaluate(&ds, &params, &ec).unwrap();
    let b = evaluate(&ds, &params, &ec).unwrap();
    ec.threads = 4;
    let c = evaluate(&ds, &params, &ec).unwrap();
    assert_eq!(a.bitmap, b.bitmap);
    assert_eq!(a.bitmap, c.bitmap);
    assert_eq!(a.bitmap.len(), 300 * cfg.eval_queries);
    assert_eq!(a.n_correct, a.bitmap.0.iter().filter(|&&x| x).count());
    let expected_ci = 1.96 * (a.accuracy * (1.0 - a.accuracy) / a.n_predictions as f64).sqrt();
    assert!((a.ci95 - expected_ci).abs() < 1e-15);
}

#[test]
fn training_is_bit_reproducible() {
    let cfg = tiny_train(0.05, 30);
    let ds = dataset_for(&cfg.model, 4, 6);
    let a = train::<f64>(&ds, None, &cfg).unwrap();
    let b = train::<f64>(&ds, None, &cfg).unwrap();
    assert_eq!(a.loss_curve, b.loss_curve);
    for ((_, x), (_, y)) in a.params.store().iter().zip(b.params.store().iter()) {
        let bits = |v: &[f64]| v.iter().map(|z| z.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(x.value.data()), bits(y.value.data()));
    }
    let other = train::<f64>(&ds, None, &TrainConfig { master_seed: 1, ..cfg }).unwrap();
    assert_ne!(other.loss_curve, a.loss_curve);
}

#[test]
fn divergent_training_reports_the_episode() {
    let cfg = tiny_train(1e38, 50);
    let ds = dataset_for(&cfg.model, 4, 7);
    match train::<f32>(&ds, None, &cfg) {
        Err(Error::NonFinite { episode, source }) => {
            assert!(episode < 50);
            assert!(!source.to_string().is_empty());
        }
        other => panic!("expected a non-finite abort, got {:?}", other.map(|o| o.loss_curve.len())),
    }
}

#[test]
fn mismatched_dataset_is_rejected() {
    let cfg = tiny_train(0.1, 1);
    let ds = generate_synthetic(&SynthSpec {
        frames: 6,
        patches_per_side: 2,
        channels: 4,
        object_dim: 2,
        ..SynthSpec::default()
    })
    .unwrap();
    assert!(matches!(train::<f32>(&ds, None, &cfg), Err(Error::Data(_))));
}

#[test]
fn gradients_match_finite_differences_for_every_flag_combination() {
    for use_cpe in [false, true] {
        for use_tmixer in [false, true] {
            for e in [1, 2] {
                let mut cfg = GradCheckConfig::default();
                cfg.model.use_cpe = use_cpe;
                cfg.model.use_tmixer = use_tmixer;
                cfg.model.frame_norm_exponent = e;
                let report = grad_check(&cfg, None).unwrap();
                assert!(
                    report.passed,
                    "cpe={use_cpe} tmixer={use_tmixer} e={e}: {:?}",
                    report.params
                );
            }
        }
    }
}

#[test]
fn flipped_relu_gradient_is_caught() {
    let report = grad_check(&GradCheckConfig::default(), Some(BackwardFault::FlipReluGrad)).unwrap();
    assert!(!report.passed);
    assert!((report.max_rel_error - 2.0).abs() < 0.05, "{}", report.max_rel_error);
}

fn cost_at(frames: u64, mixer: MixerCost) -> sact::training::CostReport {
    count_multiadds(&CostConfig {
        frames,
        patches_per_side: 3,
        channels: 6,
        d_k: 5,
        d_v: 4,
        way: 3,
        shot: 2,
        queries: 2,
        use_cpe: true,
        mixer,
    })
}

#[test]
fn attention_cost_is_linear_in_frames() {
    let r2 = cost_at(2, MixerCost::None);
    let r4 = cost_at(4, MixerCost::None);
    let r8 = cost_at(8, MixerCost::None);
    for ((a, b), c) in r2.components.iter().zip(&r4.components).zip(&r8.components) {
        if a.stage == Stage::Sca && a.linear_in_frames {
            assert_eq!(2 * a.multiadds, b.multiadds, "{}", a.name);
            assert_eq!(2 * b.multiadds, c.multiadds, "{}", a.name);
        } else {
            assert_eq!(a.multiadds, b.multiadds, "{}", a.name);
        }
    }
    // the only non-linear term is the frame-summed distance
    let fixed = r2.component("sca.distance").unwrap().multiadds;
    assert_eq!(r4.sca_total - fixed, 2 * (r2.sca_total - fixed));
    assert_eq!(r8.sca_total - fixed, 2 * (r4.sca_total - fixed));
}

#[test]
fn reducing_mixer_adds_exactly_its_last_two_mlps() {
    let plain = cost_at(8, MixerCost::NonReducing);
    let reducing = cost_at(8, MixerCost::Reducing);
    let extra: u64 = ["tmixer.mlp3", "tmixer.mlp4"]
        .iter()
        .map(|n| reducing.component(n).unwrap().multiadds)
        .sum();
    assert_eq!(reducing.tmixer_total - plain.tmixer_total, extra);
    // V·(L·L/2 + (L/2)²)·P²·D with V = 3·2 + 2
    assert_eq!(reducing.component("tmixer.mlp3").unwrap().multiadds, 8 * (8 * 4 + 16) * 9 * 6);
    assert_eq!(reducing.component("tmixer.mlp4").unwrap().multiadds, 8 * 2 * 4 * 9 * 36);
    assert_eq!(reducing.attended_frames, 4);
    assert_eq!(plain.attended_frames, 8);
}
