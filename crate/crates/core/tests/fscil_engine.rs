use ncfscil::etf::make_etf;
use ncfscil::fscil::ablation::init_model;
use ncfscil::fscil::model::{Dense, Parameters};
use ncfscil::fscil::train::{
    accumulate_gradient, apply_gradients, build_memory, evaluate, feature_dump, train_base, train_incremental,
    FeatureKind, Gradients, Input, Optimizers, TrainConfig,
};
use ncfscil::fscil::{
    checkpoint, generate_dataset, run_ablation, run_arm, Arm, Backbone, Classifier, FscilConfig, FscilModel,
    LearnableClassifier, ModelShape, Projection, RunOptions, SessionPlan,
};
use ncfscil::linalg::{norm, Matrix};
use ncfscil::losses::{eval_raw, LossKind};
use ncfscil::nc_metrics::{Scope, Split};
use ncfscil::rng;
use ncfscil::{Dataset, Error};

fn plan(seed: u64) -> SessionPlan {
    SessionPlan { seed, ..SessionPlan::default() }
}

fn dataset(seed: u64) -> Dataset {
    generate_dataset(&plan(seed), 6.0, 1.0).unwrap()
}

fn dense(input: usize, output: usize, r: &mut rng::Rng) -> Dense<f64> {
    Dense {
        weight: Matrix::from_col_major(output, input, rng::gaussian_vec(r, input * output)),
        bias: rng::gaussian_vec::<f64>(r, output).iter().map(|v| 0.3 * v).collect(),
    }
}

fn tiny(classifier: Classifier<f64>, seed: u64) -> FscilModel<f64> {
    let mut r = rng::seeded(seed, 1);
    let backbone = Backbone { l1: dense(3, 4, &mut r), l2: dense(4, 4, &mut r) };
    let projection = Projection { l1: dense(4, 4, &mut r), l2: dense(4, 3, &mut r) };
    let mut m = FscilModel::new(backbone, projection, classifier).unwrap();
    m.active_classes = 3;
    m
}

#[test]
fn clusters_are_separable_by_nearest_mean() {
    let ds: Dataset = generate_dataset(&plan(3), 10.0, 1.0).unwrap();
    let (mut hit, mut total) = (0, 0);
    for s in ds.test_pool(2) {
        let d: Vec<f64> = ds.means.iter().map(|m| norm(&ncfscil::linalg::sub(&s.x, m))).collect();
        hit += (ncfscil::linalg::argmin(&d) == Some(s.label)) as usize;
        total += 1;
    }
    assert!(hit as f64 / total as f64 >= 0.99);
    assert_eq!(total, 10 * 50);
    assert_eq!(ds.train[0].len(), 6 * 50);
    assert_eq!(ds.train[1].len(), 2 * 5);
    assert!(ds.means.iter().all(|m| (norm(m) - 10.0).abs() < 1e-12));
}

#[test]
fn zero_noise_samples_sit_on_their_means() {
    let ds: Dataset = generate_dataset(&plan(0), 6.0, 0.0).unwrap();
    for s in ds.train.iter().chain(&ds.test).flatten() {
        assert_eq!(s.x, ds.means[s.label]);
    }
}

fn model_loss(m: &FscilModel<f64>, x: &[f64], label: usize, loss: LossKind) -> f64 {
    let mut g = Gradients::zeros(m, true);
    accumulate_gradient(m, Input::Raw(x), label, loss, &mut g).unwrap()
}

fn flatten(m: &FscilModel<f64>) -> Vec<f64> {
    let mut v = m.backbone.tensors().concat();
    v.extend(m.projection.tensors().concat());
    if let Classifier::Learnable(l) = &m.classifier {
        v.extend(l.tensors().concat());
    }
    v
}

fn unflatten(m: &mut FscilModel<f64>, v: &[f64]) {
    let mut i = 0;
    let mut fill = |ts: Vec<&mut [f64]>| {
        for t in ts {
            t.copy_from_slice(&v[i..i + t.len()]);
            i += t.len();
        }
    };
    fill(m.backbone.tensors_mut());
    fill(m.projection.tensors_mut());
    if let Classifier::Learnable(l) = &mut m.classifier {
        fill(l.tensors_mut());
    }
}

#[test]
fn full_model_gradient_matches_finite_differences() {
    for seed in 0..20u64 {
        let arms: [(Classifier<f64>, LossKind); 4] = [
            (Classifier::Etf(make_etf(3, 3, seed).unwrap()), LossKind::DotRegression),
            (Classifier::Etf(make_etf(3, 3, seed).unwrap()), LossKind::CrossEntropy { scale: 4.0 }),
            (
                Classifier::Learnable(LearnableClassifier::new(3, 3, true, &mut rng::seeded(seed, 2))),
                LossKind::CrossEntropy { scale: 4.0 },
            ),
            (
                Classifier::Learnable(LearnableClassifier::new(3, 3, false, &mut rng::seeded(seed, 2))),
                LossKind::CrossEntropy { scale: 4.0 },
            ),
        ];
        for (classifier, loss) in arms {
            let mut m = tiny(classifier, seed);
            let x: Vec<f64> = rng::gaussian_vec(&mut rng::seeded(seed, 3), 3);
            let label = (seed % 3) as usize;
            let mut g = Gradients::zeros(&m, true);
            accumulate_gradient(&m, Input::Raw(&x), label, loss, &mut g).unwrap();
            let mut analytic = g.backbone.unwrap().tensors().concat();
            analytic.extend(g.projection.tensors().concat());
            if let Some(c) = &g.classifier {
                analytic.extend(c.tensors().concat());
            }
            let theta = flatten(&m);
            let h = 1e-5;
            let mut fd = Vec::with_capacity(theta.len());
            for i in 0..theta.len() {
                let mut p = theta.clone();
                p[i] += h;
                unflatten(&mut m, &p);
                let up = model_loss(&m, &x, label, loss);
                p[i] -= 2.0 * h;
                unflatten(&mut m, &p);
                let down = model_loss(&m, &x, label, loss);
                fd.push((up - down) / (2.0 * h));
            }
            unflatten(&mut m, &theta);
            let diff: Vec<f64> = analytic.iter().zip(&fd).map(|(a, b)| a - b).collect();
            let rel = norm(&diff) / norm(&analytic).max(norm(&fd)).max(1e-12);
            assert!(rel <= 1e-4, "seed {seed} {loss:?}: {rel}");
        }
    }
}

#[test]
fn forward_hand_check() {
    // Identity-like weights with ReLU: x = (1, -2, 3) → h = relu(relu(x)) = (1, 0, 3).
    let id = |n: usize| Dense { weight: Matrix::identity(n), bias: vec![0.0; n] };
    let backbone = Backbone { l1: id(3), l2: id(3) };
    let projection = Projection { l1: id(3), l2: id(3) };
    let m = FscilModel::new(backbone, projection, Classifier::Etf(make_etf(3, 3, 0).unwrap())).unwrap();
    let (h, mu_hat) = m.forward(&[1.0, -2.0, 3.0]).unwrap();
    assert_eq!(h, vec![1.0, 0.0, 3.0]);
    let n = 10f64.sqrt();
    for (a, b) in mu_hat.iter().zip([1.0 / n, 0.0, 3.0 / n]) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn predict_scores_every_prototype() {
    let e = make_etf::<f64>(16, 10, 0).unwrap();
    let ds = dataset(0);
    let mut m = init_model(&ds, ModelShape::default(), &TrainConfig::default()).unwrap();
    m.active_classes = 6;
    for k in 0..10 {
        assert_eq!(m.predict_feature(e.column(k)), k);
        // argmax inner product = argmin distance for unit vectors.
        let d: Vec<f64> = (0..10).map(|j| norm(&ncfscil::linalg::sub(e.column(k), e.column(j)))).collect();
        assert_eq!(ncfscil::linalg::argmin(&d), Some(k));
    }
    let mid: Vec<f64> = e.column(1).iter().zip(e.column(2)).map(|(a, b)| a + b).collect();
    let (mid, _) = ncfscil::losses::normalize(&mid).unwrap();
    assert_eq!(m.predict_feature(&mid), 1);
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let ds = dataset(1);
    let config = TrainConfig { epochs_base: 1, lr_base: 0.0, ..TrainConfig::default() };
    let mut m = init_model(&ds, ModelShape::default(), &config).unwrap();
    let before = m.clone();
    let curve = train_base(&mut m, &ds, &config).unwrap();
    assert_eq!(curve.len(), 1);
    assert_eq!(m.backbone, before.backbone);
    assert_eq!(m.projection, before.projection);
    assert!(m.backbone_frozen);
}

#[test]
fn zero_iterations_leave_the_model_unchanged() {
    let ds = dataset(1);
    let config = TrainConfig { epochs_base: 2, iters_incremental: 0, ..TrainConfig::default() };
    let mut m = init_model(&ds, ModelShape::default(), &config).unwrap();
    train_base(&mut m, &ds, &config).unwrap();
    build_memory(&mut m, &ds, 1).unwrap();
    let before = m.clone();
    let log = train_incremental(&mut m, &ds, 1, &config).unwrap();
    assert!(log.losses.is_empty());
    assert_eq!(m.backbone, before.backbone);
    assert_eq!(m.projection, before.projection);
    assert_eq!(m.classifier, before.classifier);
}

#[test]
fn base_training_fits_the_separable_dataset() {
    let ds = dataset(0);
    let config = TrainConfig { epochs_base: 200, ..TrainConfig::default() };
    let mut m = init_model(&ds, ModelShape::default(), &config).unwrap();
    let curve = train_base(&mut m, &ds, &config).unwrap();
    assert!(curve.iter().all(|v| v.is_finite()));
    assert!(curve[9] < curve[0]);
    for w in curve[..10].windows(2) {
        assert!(w[1] < w[0], "{:?}", &curve[..10]);
    }
    let hits = ds.train[0].iter().filter(|s| m.predict(&s.x).unwrap() == s.label).count();
    assert!(hits as f64 / ds.train[0].len() as f64 >= 0.99);
}

#[test]
fn memory_holds_class_means_of_backbone_features() {
    let ds = dataset(2);
    let config = TrainConfig { epochs_base: 1, ..TrainConfig::default() };
    let mut m = init_model(&ds, ModelShape::default(), &config).unwrap();
    assert!(matches!(build_memory(&mut m, &ds, 1), Err(Error::InvalidConfig(_))));
    train_base(&mut m, &ds, &config).unwrap();
    for t in 1..3 {
        build_memory(&mut m, &ds, t).unwrap();
        let want: usize = (0..t).map(|j| ds.plan.session_classes(j).len()).sum();
        assert_eq!(m.memory.len(), want);
        for (&c, h) in &m.memory {
            let feats: Vec<Vec<f64>> = ds.train_of_class(c).map(|s| m.backbone.forward(&s.x)).collect();
            assert_eq!(feats.len(), ds.plan.train_per_class(c));
            for j in 0..h.len() {
                let avg = feats.iter().map(|f| f[j]).sum::<f64>() / feats.len() as f64;
                assert!((h[j] - avg).abs() < 1e-12);
            }
        }
        let again = m.memory.clone();
        build_memory(&mut m, &ds, t).unwrap();
        assert_eq!(m.memory, again);
    }
}

#[test]
fn memory_of_two_samples_is_their_average() {
    let small = SessionPlan {
        input_dim: 3,
        base_classes: 2,
        incremental_sessions: 1,
        ways: 1,
        shots: 2,
        base_train_per_class: 2,
        test_per_class: 1,
        seed: 4,
    };
    let ds: Dataset = generate_dataset(&small, 2.0, 1.0).unwrap();
    let mut m = tiny(Classifier::Etf(make_etf(3, 3, 0).unwrap()), 5);
    m.backbone_frozen = true;
    build_memory(&mut m, &ds, 1).unwrap();
    for c in 0..2 {
        let xs: Vec<&Vec<f64>> = ds.train_of_class(c).map(|s| &s.x).collect();
        assert_eq!(xs.len(), 2);
        let (a, b) = (m.backbone.forward(xs[0]), m.backbone.forward(xs[1]));
        for j in 0..4 {
            assert!((m.memory[&c][j] - (a[j] + b[j]) / 2.0).abs() < 1e-15);
        }
    }
    // Identical samples: the mean is the feature itself.
    let mut twin = ds.clone();
    let first = twin.train[0][0].x.clone();
    twin.train[0][1].x = first.clone();
    build_memory(&mut m, &twin, 1).unwrap();
    assert_eq!(m.memory[&0], m.backbone.forward(&first));
    twin.train[0].retain(|s| s.label != 1);
    assert!(matches!(build_memory(&mut m, &twin, 1), Err(Error::EmptyClass(1))));
}

#[test]
fn incremental_loss_uses_the_joint_denominator() {
    // 2 ways × 5 shots = 10 session samples and 6 memory classes.
    let ds = dataset(3);
    let config = TrainConfig { epochs_base: 3, iters_incremental: 5, batch_incremental: 64, ..TrainConfig::default() };
    let mut m = init_model(&ds, ModelShape::default(), &config).unwrap();
    train_base(&mut m, &ds, &config).unwrap();
    build_memory(&mut m, &ds, 1).unwrap();
    let before = m.clone();
    let kind = LossKind::DotRegression;
    let Classifier::Etf(etf) = &before.classifier else { unreachable!() };
    let raw: f64 = ds.train[1]
        .iter()
        .map(|s| eval_raw(kind, &before.projection.forward(&before.backbone.forward(&s.x)), etf, s.label).unwrap().value)
        .sum();
    let mem: f64 = before.memory.iter().map(|(&c, h)| eval_raw(kind, &before.projection.forward(h), etf, c).unwrap().value).sum();
    let log = train_incremental(&mut m, &ds, 1, &config).unwrap();
    assert_eq!(log.denominators, vec![16; 5]);
    assert!((log.losses[0] - (raw + mem) / 16.0).abs() < 1e-9);
    assert_eq!(m.backbone, before.backbone);
    assert_ne!(m.projection, before.projection);
}

#[test]
fn incremental_requires_memory_and_frozen_backbone() {
    let ds = dataset(0);
    let config = TrainConfig { epochs_base: 1, iters_incremental: 1, ..TrainConfig::default() };
    let mut m = init_model(&ds, ModelShape::default(), &config).unwrap();
    assert!(train_incremental(&mut m, &ds, 1, &config).is_err());
    train_base(&mut m, &ds, &config).unwrap();
    assert!(train_incremental(&mut m, &ds, 1, &config).is_err());
    build_memory(&mut m, &ds, 1).unwrap();
    assert!(train_incremental(&mut m, &ds, 2, &config).is_err());
    assert!(train_incremental(&mut m, &ds, 0, &config).is_err());
    assert!(train_base(&mut m, &ds, &config).is_err());

    let grads = Gradients::zeros(&m, true);
    let mut opt = Optimizers::new(0.9);
    assert!(matches!(apply_gradients(&mut m, &grads, &mut opt, 0.1), Err(Error::FrozenViolation)));
}

#[test]
fn backbone_and_etf_stay_frozen_across_sessions() {
    let ds = dataset(4);
    let config = TrainConfig { epochs_base: 5, iters_incremental: 30, ..TrainConfig::default() };
    let options = RunOptions { keep_snapshots: true, ..RunOptions::default() };
    for arm in Arm::ALL {
        let run = run_arm(&ds, ModelShape::default(), &config, arm, options).unwrap();
        let base = &run.snapshots[0].model;
        for snap in &run.snapshots[1..] {
            assert_eq!(snap.model.backbone.to_bytes(), base.backbone.to_bytes());
            if arm != Arm::LearnableCe {
                assert_eq!(snap.model.classifier, base.classifier);
            }
        }
        assert_eq!(run.sessions.len(), 3);
        let mean = run.sessions.iter().map(|s| s.accuracy.all).sum::<f64>() / 3.0;
        assert!((run.average_accuracy() - mean).abs() < 1e-12);
        assert_eq!(run.performance_drop(), run.sessions[0].accuracy.all - run.sessions[2].accuracy.all);
        assert_eq!(run.final_accuracy(), run.sessions[2].accuracy.all);
        assert_eq!(run.metrics.len(), 3 * 6);
    }
}

#[test]
fn freezing_old_prototypes_keeps_their_columns() {
    let ds = dataset(5);
    let config = TrainConfig {
        epochs_base: 3,
        iters_incremental: 20,
        freeze_old_prototypes: true,
        ..Arm::LearnableCe.configure(&TrainConfig::default())
    };
    let options = RunOptions { keep_snapshots: true, ..RunOptions::default() };
    let run = run_arm(&ds, ModelShape::default(), &config, Arm::LearnableCe, options).unwrap();
    let w = |t: usize| run.snapshots[t].model.classifier.prototypes().clone();
    for c in 0..6 {
        assert_eq!(w(1).col(c), w(0).col(c));
        assert_eq!(w(2).col(c), w(0).col(c));
    }
    assert_ne!(w(1).col(6), w(0).col(6));
    assert_eq!(w(2).col(6), w(1).col(6));
}

#[test]
fn session_one_meets_pinned_thresholds() {
    let pinned: serde_json::Value = serde_json::from_str(include_str!("../../../expected/acceptance.json")).unwrap();
    let min_novel = pinned["session_one"]["min_novel_accuracy"].as_f64().unwrap();
    let max_drop = pinned["session_one"]["max_base_drop"].as_f64().unwrap();
    let cfg = FscilConfig::default();
    for seed in 0..5 {
        let ds = cfg.dataset::<f64>(seed).unwrap();
        let (_, train) = cfg.for_seed(seed);
        let mut m = init_model(&ds, cfg.model, &train).unwrap();
        train_base(&mut m, &ds, &train).unwrap();
        let base = evaluate(&m, &ds, 0).unwrap().base;
        build_memory(&mut m, &ds, 1).unwrap();
        train_incremental(&mut m, &ds, 1, &train).unwrap();
        let acc = evaluate(&m, &ds, 1).unwrap();
        assert!(acc.novel >= min_novel, "seed {seed}: novel {}", acc.novel);
        assert!(base - acc.base <= max_drop, "seed {seed}: base {base} -> {}", acc.base);
    }
}

#[test]
fn ablation_is_deterministic_and_shares_data() {
    let ds = dataset(6);
    let config = TrainConfig { epochs_base: 4, iters_incremental: 20, ..TrainConfig::default() };
    let a = run_ablation(&ds, ModelShape::default(), &config, &Arm::ALL, RunOptions::default()).unwrap();
    let b = run_ablation(&dataset(6), ModelShape::default(), &config, &Arm::ALL, RunOptions::default()).unwrap();
    assert_eq!(a.dataset_checksum, b.dataset_checksum);
    assert_eq!(a.dataset_checksum, ds.checksum());
    assert_ne!(a.dataset_checksum, dataset(7).checksum());
    for (x, y) in a.runs.iter().zip(&b.runs) {
        assert_eq!(x.metrics, y.metrics);
        assert_eq!(x.sessions, y.sessions);
        assert_eq!(x.base_loss_curve, y.base_loss_curve);
    }
    let etf = a.run(Arm::EtfDr).unwrap();
    let m = etf.metric(Scope::Accumulate, Split::Test, 2).unwrap();
    assert_eq!(m.num_classes, 10);
}

#[test]
fn checkpoint_round_trip() {
    let ds = dataset(0);
    for arm in Arm::ALL {
        let config = TrainConfig { epochs_base: 1, ..arm.configure(&TrainConfig::default()) };
        let mut m = init_model(&ds, ModelShape::default(), &config).unwrap();
        train_base(&mut m, &ds, &config).unwrap();
        build_memory(&mut m, &ds, 1).unwrap();
        let bytes = checkpoint::to_bytes(&m);
        assert_eq!(&bytes[..4], b"NCFM");
        let back: FscilModel<f64> = checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert!(checkpoint::from_bytes::<f64>(&bytes[..bytes.len() - 8]).is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        checkpoint::save(&m, &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), bytes);
        assert_eq!(checkpoint::load::<f64>(&path).unwrap(), m);
    }
}

#[test]
fn feature_dump_labels_sessions_of_origin() {
    let ds = dataset(0);
    let config = TrainConfig { epochs_base: 1, ..TrainConfig::default() };
    let mut m = init_model(&ds, ModelShape::default(), &config).unwrap();
    train_base(&mut m, &ds, &config).unwrap();
    let dump = feature_dump(&m, &ds, 1, FeatureKind::Normalized).unwrap();
    assert_eq!(dump.records.len(), 300 + 300 + 10 + 100);
    assert!(dump.records.iter().all(|r| r.session == ds.plan.session_of(r.label)));
    assert!(dump.records.iter().all(|r| (norm(&r.vector) - 1.0).abs() < 1e-12));
    let mid = feature_dump(&m, &ds, 0, FeatureKind::Intermediate).unwrap();
    assert_eq!(mid.dim, ModelShape::default().feature_mid);
}

#[test]
fn config_rejects_unknown_fields_and_bad_arms() {
    assert!(FscilConfig::from_json(r#"{"train": {"lr": 1}}"#).is_err());
    assert!(FscilConfig::from_json(r#"{"bogus": {}}"#).is_err());
    assert!(FscilConfig::from_json(r#"{"train": {"loss": "mse"}}"#).is_err());
    let c = FscilConfig::from_json(r#"{"plan": {"shots": 3}}"#).unwrap();
    assert_eq!(c.plan.shots, 3);
    assert_eq!(c.train, TrainConfig::default());
    let learnable_dr = TrainConfig { classifier_mode: ncfscil::fscil::train::ClassifierMode::Learnable, ..TrainConfig::default() };
    assert!(learnable_dr.validate().is_err());
}
