use bapn_autodiff::{AdamConfig, BnMode, Tape, Tensor};
use bapn_core::dsp::StftPlan;
use bapn_core::scene::{GeneratorConfig, SceneRecord, Split};
use bapn_model::check::{full_model_grad_check, MODEL_TOLERANCE};
use bapn_model::config::{ExperimentConfig, LossWeights, ModelConfig, Tasks};
use bapn_model::data::{make_batch, Batch, Dataset};
use bapn_model::net::{encoded_shape, Model};
use bapn_model::train::{evaluate, fit_model_config, score, total_loss, train, train_step, TrainOptions};
use bapn_model::ModelError;
use proptest::prelude::*;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn generator(scenes: usize) -> GeneratorConfig {
    GeneratorConfig {
        scenes,
        duration: 0.25,
        min_sources: 1,
        max_sources: 2,
        max_distance: 4.0,
        grid_rows: 8,
        grid_cols: 16,
        ..GeneratorConfig::default()
    }
}

fn small_model() -> ModelConfig {
    ModelConfig {
        base_channels: 4,
        aspp_filters: 8,
        dilation_scale: 0.1,
        decoder_channels: 8,
        output_grid: (8, 16),
        ..ModelConfig::default()
    }
}

fn train_set(scenes: usize) -> Dataset {
    Dataset::synthesize(&generator(scenes), Split::Train).unwrap()
}

fn batch_for(cfg: &ModelConfig, data: &Dataset, n: usize) -> Batch {
    let plan = StftPlan::new(cfg.window, cfg.hop).unwrap();
    let recs: Vec<&SceneRecord> = data.records.iter().take(n).collect();
    make_batch(cfg, &plan, &recs).unwrap()
}

fn params_with_prefix(m: &Model, prefix: &str) -> Vec<(String, Vec<f32>)> {
    m.store
        .params()
        .iter()
        .filter(|p| p.name.starts_with(prefix))
        .map(|p| (p.name.clone(), p.tensor.data().to_vec()))
        .collect()
}

fn random_tensor(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

#[test]
fn full_model_gradient_check_in_f64() {
    let err = full_model_grad_check(21).unwrap();
    assert!(err <= MODEL_TOLERANCE, "max relative error {err}");
}

#[test]
fn encoder_shape_on_a_one_second_clip() {
    assert_eq!(encoded_shape(257, 101), (17, 7));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn encoder_output_follows_the_halving_law(h in 64usize..96, w in 64usize..96, seed in 0u64..1000) {
        let cfg = ModelConfig {
            base_channels: 2,
            aspp_filters: 8,
            dilation_scale: 0.1,
            decoder_channels: 4,
            output_grid: (4, 8),
            spec_shape: (h, w),
            tasks: Tasks::SEMANTIC,
            ..ModelConfig::default()
        };
        let model = Model::new(cfg, seed).unwrap();
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(random_tensor(&[2, 1, h, w], seed, 0.0, 1.0).cast()).unwrap();
        let (branches, fused) = model.encode(&mut tape, x, BnMode::Eval).unwrap();
        // Four stride-2 SAME layers: ceil(n / 16).
        prop_assert_eq!(tape.shape(branches), &[2, 16, h.div_ceil(16), w.div_ceil(16)][..]);
        prop_assert_eq!(tape.shape(fused), &[1, 8, (h + 15) / 16, (w + 15) / 16][..]);
    }

    #[test]
    fn outputs_are_normalized_nonnegative_and_bounded(seed in 0u64..1000, n in 1usize..3) {
        let mut model = Model::new(ModelConfig { spec_shape: (16, 16), ..small_model() }, seed).unwrap();
        // Random heads so the checks are not satisfied by the zero init.
        for (k, p) in model.store.params().to_vec().iter().enumerate() {
            if p.name.contains(".out.") {
                let id = model.store.id(&p.name).unwrap();
                model.store.get_mut(id).tensor = random_tensor(p.tensor.shape(), seed + k as u64, -3.0, 3.0).cast();
            }
        }
        let out = model.predict(random_tensor(&[2 * n, 1, 16, 16], seed, 0.0, 3.0).cast()).unwrap();
        let sem = out.semantic.unwrap();
        let cells = 8 * 16;
        for i in 0..n {
            for c in 0..cells {
                let s: f32 = (0..4).map(|k| sem.data()[(i * 4 + k) * cells + c]).sum();
                prop_assert!((s - 1.0).abs() < 1e-5);
            }
        }
        prop_assert!(out.depth.unwrap().data().iter().all(|&d| d >= 0.0));
        prop_assert!(out.s3r_masks.unwrap().data().iter().all(|&m| (-1.0..=1.0).contains(&m)));
    }
}

#[test]
fn semantic_step_leaves_other_decoders_untouched() {
    let data = train_set(10);
    let full = fit_model_config(&small_model(), &data).unwrap();
    let mut model = Model::new(
        ModelConfig {
            tasks: Tasks::SEMANTIC,
            ..full.clone()
        },
        3,
    )
    .unwrap();
    let before_dep = params_with_prefix(&model, "dep.");
    let before_s3r = params_with_prefix(&model, "s3r.");
    let before_enc = params_with_prefix(&model, "enc0.");
    let batch = batch_for(&model.cfg, &data, 2);
    // The zero-initialized head blocks encoder gradients on the first step.
    for _ in 0..2 {
        train_step(&mut model, &batch, &ExperimentConfig::default(), &AdamConfig::with_lr(1e-3)).unwrap();
    }
    assert_eq!(params_with_prefix(&model, "dep."), before_dep);
    assert_eq!(params_with_prefix(&model, "s3r."), before_s3r);
    assert_ne!(params_with_prefix(&model, "enc0."), before_enc);
}

#[test]
fn shared_encoder_stays_shared_after_training() {
    let data = train_set(10);
    let cfg = fit_model_config(
        &ModelConfig {
            tasks: Tasks::SEMANTIC,
            ..small_model()
        },
        &data,
    )
    .unwrap();
    let mut model = Model::new(cfg.clone(), 4).unwrap();
    let batch = batch_for(&cfg, &data, 2);
    train_step(&mut model, &batch, &ExperimentConfig::default(), &AdamConfig::with_lr(1e-2)).unwrap();
    // Left ear copied into the right branch.
    let mut x = batch.inputs.clone();
    let half = x.len() / 2;
    let left = x.data()[..half].to_vec();
    x.data_mut()[half..].copy_from_slice(&left);
    let mut tape = Tape::<f32>::new();
    let v = tape.constant(x).unwrap();
    let (branches, _) = model.encode(&mut tape, v, BnMode::Eval).unwrap();
    let b = tape.value(branches).data();
    assert_eq!(&b[..b.len() / 2], &b[b.len() / 2..]);
}

#[test]
fn weight_zeroing_reproduces_single_task_losses() {
    let data = train_set(10);
    let cfg = fit_model_config(&small_model(), &data).unwrap();
    let model = Model::new(cfg.clone(), 8).unwrap();
    let batch = batch_for(&cfg, &data, 3);
    let run = |m: &Model, w: LossWeights| {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(batch.inputs.clone()).unwrap();
        let (out, _) = m.forward(&mut tape, x, BnMode::Eval).unwrap();
        let (total, parts) = total_loss(&mut tape, &out, &batch, w, None).unwrap();
        (
            tape.value(total).item(),
            parts.semantic.map(|v| tape.value(v).item()),
            parts.depth.map(|v| tape.value(v).item()),
        )
    };
    let (total, _, _) = run(
        &model,
        LossWeights {
            lambda1: 0.0,
            lambda2: 0.0,
        },
    );
    let mut sem_only = model.clone();
    sem_only.cfg.tasks = Tasks::SEMANTIC;
    let (alone, sem, _) = run(&sem_only, LossWeights::default());
    assert_eq!(total, alone);
    assert_eq!(Some(total), sem);
    // Depth alone, weight 1, against a direct MSE over the predicted depth.
    let mut depth_only = model.clone();
    depth_only.cfg.tasks = Tasks {
        semantic: false,
        depth: true,
        s3r: false,
    };
    let (total, _, depth) = run(
        &depth_only,
        LossWeights {
            lambda1: 1.0,
            lambda2: 0.0,
        },
    );
    assert_eq!(Some(total), depth);
    let pred = depth_only.predict(batch.inputs.clone()).unwrap().depth.unwrap();
    let far = cfg.far_depth;
    let oracle: f64 = pred
        .data()
        .iter()
        .zip(batch.depth.data())
        .map(|(&p, &g)| (p as f64 / far - g as f64).powi(2))
        .sum::<f64>()
        / pred.len() as f64;
    assert!((total as f64 - oracle).abs() < 1e-5 * oracle.max(1e-3), "{total} vs {oracle}");
}

#[test]
fn missing_s3r_target_is_reported() {
    let data = train_set(10);
    let cfg = fit_model_config(&small_model(), &data).unwrap();
    let model = Model::new(cfg.clone(), 1).unwrap();
    let mut batch = batch_for(&cfg, &data, 2);
    batch.s3r_target = None;
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(batch.inputs.clone()).unwrap();
    let (out, _) = model.forward(&mut tape, x, BnMode::Train).unwrap();
    assert!(matches!(
        total_loss(&mut tape, &out, &batch, LossWeights::default(), None),
        Err(ModelError::MissingTarget("s3r"))
    ));
}

fn quick_exp(epochs: usize, lr: f64) -> ExperimentConfig {
    ExperimentConfig {
        epochs,
        lr,
        patience: epochs,
        ..ExperimentConfig::default()
    }
}

#[test]
fn zero_learning_rate_keeps_initial_parameters() {
    let data = train_set(10);
    let out = train(&small_model(), &quick_exp(1, 0.0), &data, None, None, &TrainOptions::default()).unwrap();
    let fresh = Model::new(fit_model_config(&small_model(), &data).unwrap(), 0).unwrap();
    for (a, b) in out.model.store.params().iter().zip(fresh.store.params()) {
        assert_eq!(a.tensor, b.tensor, "{}", a.name);
    }
}

#[test]
fn cross_entropy_falls_over_three_epochs_on_eight_scenes() {
    let data = train_set(10);
    assert_eq!(data.len(), 8);
    let cfg = ModelConfig {
        tasks: Tasks::SEMANTIC,
        ..small_model()
    };
    let out = train(&cfg, &quick_exp(3, 1e-3), &data, None, None, &TrainOptions::default()).unwrap();
    let ce: Vec<f64> = out.record.epochs.iter().map(|e| e.train.semantic).collect();
    assert!(ce[2] < ce[0], "{ce:?}");
    assert!(out.record.epochs.iter().all(|e| e.train.total.is_finite()));
}

#[test]
fn memorizes_eight_scenes_in_two_hundred_steps() {
    let data = train_set(10);
    let cfg = ModelConfig {
        tasks: Tasks::SEMANTIC,
        ..small_model()
    };
    let exp = ExperimentConfig {
        batch: 2,
        ..quick_exp(50, 3e-3)
    };
    let initial = Model::new(fit_model_config(&cfg, &data).unwrap(), exp.seed).unwrap();
    let (before, _) = score(&initial, &data, &exp).unwrap();
    let out = train(&cfg, &exp, &data, None, None, &TrainOptions::default()).unwrap();
    assert_eq!(out.record.steps, 200);
    let (after, _) = score(&out.model, &data, &exp).unwrap();
    assert!(after.total < 0.25 * before.total, "{} -> {}", before.total, after.total);
}

#[test]
fn identical_seeds_give_identical_records_and_checkpoints() {
    let g = generator(20);
    let (tr, va, te) = (
        Dataset::synthesize(&g, Split::Train).unwrap(),
        Dataset::synthesize(&g, Split::Val).unwrap(),
        Dataset::synthesize(&g, Split::Test).unwrap(),
    );
    let dir = tempfile::tempdir().unwrap();
    let opts = TrainOptions {
        out_dir: Some(dir.path().to_path_buf()),
        progress: false,
    };
    let exp = quick_exp(2, 1e-3);
    let a = train(&small_model(), &exp, &tr, Some(&va), Some(&te), &opts).unwrap();
    let ckpt_a = std::fs::read(dir.path().join("best.ckpt")).unwrap();
    let b = train(&small_model(), &exp, &tr, Some(&va), Some(&te), &opts).unwrap();
    assert_eq!(a.record.untimed_json(), b.record.untimed_json());
    assert_eq!(ckpt_a, std::fs::read(dir.path().join("best.ckpt")).unwrap());
    let c = train(
        &small_model(),
        &ExperimentConfig { seed: 1, ..exp },
        &tr,
        Some(&va),
        Some(&te),
        &TrainOptions::default(),
    )
    .unwrap();
    assert_ne!(a.record.epochs, c.record.epochs);
}

#[test]
fn checkpoint_round_trip_and_repeatable_evaluation() {
    let g = generator(20);
    let tr = Dataset::synthesize(&g, Split::Train).unwrap();
    let te = Dataset::synthesize(&g, Split::Test).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let opts = TrainOptions {
        out_dir: Some(dir.path().to_path_buf()),
        progress: false,
    };
    let out = train(&small_model(), &quick_exp(1, 1e-3), &tr, None, None, &opts).unwrap();
    let loaded = Model::load(&dir.path().join("best.ckpt")).unwrap();
    assert_eq!(loaded, out.model);
    let a = serde_json::to_string(&evaluate(&loaded, &te, tr.mean_depth()).unwrap()).unwrap();
    let b = serde_json::to_string(&evaluate(&loaded, &te, tr.mean_depth()).unwrap()).unwrap();
    assert_eq!(a, b);

    let missing = Model::load(&dir.path().join("nope.ckpt")).unwrap_err();
    assert_eq!(missing.kind(), "CheckpointCorrupt");
    let path = dir.path().join("best.ckpt");
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] ^= 0xff;
    std::fs::write(&path, bytes).unwrap();
    assert_eq!(Model::load(&path).unwrap_err().kind(), "CheckpointCorrupt");
}

#[test]
fn untrained_models_score_at_chance() {
    let g = GeneratorConfig {
        scenes: 40,
        ..generator(40)
    };
    let tr = Dataset::synthesize(&g, Split::Train).unwrap();
    let te = Dataset::synthesize(&g, Split::Test).unwrap();
    let cfg = fit_model_config(
        &ModelConfig {
            tasks: Tasks::SEMANTIC,
            ..small_model()
        },
        &tr,
    )
    .unwrap();
    for seed in 0..3 {
        let report = evaluate(&Model::new(cfg.clone(), seed).unwrap(), &te, None).unwrap();
        assert!(report.semantic.unwrap().mean_iou <= 0.15);
    }
}

#[test]
fn untrained_s3r_equals_the_copy_baseline() {
    let g = generator(20);
    let tr = Dataset::synthesize(&g, Split::Train).unwrap();
    let te = Dataset::synthesize(&g, Split::Test).unwrap();
    let cfg = fit_model_config(&small_model(), &tr).unwrap();
    let report = evaluate(&Model::new(cfg, 0).unwrap(), &te, tr.mean_depth()).unwrap();
    let (pred, copy) = (report.s3r.unwrap(), report.baselines.copy_reference.unwrap());
    for (a, b) in pred.mse_per_channel.iter().zip(&copy.mse_per_channel) {
        assert!((a - b).abs() <= 1e-9 * b.max(1e-12), "{a} vs {b}");
    }
    // Depth starts at the far plane, which the mean baseline beats.
    assert!(report.baselines.mean_depth.unwrap().rmse < report.depth.unwrap().rmse);
}
