mod common;

use approx::assert_relative_eq;
use common::{World, constant_model, logits_for, record, toy_config};
use ncp::dataset::{SplitManifest, SplitRequest, Variant, augment, split};
use ncp::error::Error;
use ncp::model::ModelState;
use ncp::tokenizer::{CompletionMap, Scheme, Tokenizer};
use ncp::training::{
    LossKind, Optimizer, TrainConfig, grad_check, loss_and_grad, ncp_loss, ntp_loss, train, train_records,
};

fn word_world(lines: &[&str], records: &[&ncp::dataset::ConceptRecord]) -> (Tokenizer, CompletionMap) {
    let tok = Tokenizer::train(lines.iter().copied(), 100, Scheme::Word).unwrap();
    let cmap = CompletionMap::build(&tok, records.iter().copied());
    (tok, cmap)
}

#[test]
fn ntp_probability_examples() {
    let r = record("i ate a cake", (3, 4), &[]);
    let r2 = record("i ate baked goods", (2, 4), &[]);
    let (tok, cmap) = word_world(&["i ate a cake", "i ate baked goods"], &[&r, &r2]);
    let enc = ncp::training::Encoder::new(&tok, &cmap);

    let m = constant_model(&logits_for(&tok, &[("cake", 0.25)]));
    assert_relative_eq!(ntp_loss(&m, &r, &enc).unwrap().total, 1.386294, epsilon = 1e-6);
    assert_relative_eq!(ntp_loss(&m, &r, &enc).unwrap().total, -(0.25f64).ln(), max_relative = 1e-12);

    let m = constant_model(&logits_for(&tok, &[("cake", 1.0)]));
    assert_eq!(ntp_loss(&m, &r, &enc).unwrap().total, 0.0);

    let m = constant_model(&logits_for(&tok, &[("baked", 0.5), ("goods", 0.5)]));
    let loss = ntp_loss(&m, &r2, &enc).unwrap();
    assert_relative_eq!(loss.total, 1.386294, epsilon = 1e-6);
    assert_relative_eq!(loss.total, -2.0 * (0.5f64).ln(), max_relative = 1e-12);
}

#[test]
fn ncp_probability_example() {
    let r = record("i ate a cake", (3, 4), &["pie"]);
    let (tok, cmap) = word_world(&["i ate a cake", "pie"], &[&r]);
    let enc = ncp::training::Encoder::new(&tok, &cmap);
    let m = constant_model(&logits_for(&tok, &[("pie", 0.5), ("cake", 0.25)]));
    let loss = ncp_loss(&m, &r, &enc).unwrap();
    assert_relative_eq!(loss.total, 1.039721, epsilon = 1e-6);
    assert_relative_eq!(loss.total, -((0.5f64).ln() + (0.25f64).ln()) / 2.0, max_relative = 1e-12);
    let mean: f64 = loss.per_position.iter().map(|p| p.1).sum::<f64>() / loss.per_position.len() as f64;
    assert_eq!(loss.total, mean);
    assert_eq!(loss.objective, LossKind::Ncp);
}

#[test]
fn span_beyond_context_is_an_error() {
    let w = World::new(Scheme::Word);
    let m = ModelState::init(toy_config(20, 0)).unwrap();
    let long = format!("{} cake", ["my"; 16].join(" "));
    let r = record(&long, (16, 17), &["pie"]);
    assert!(matches!(ntp_loss(&m, &r, &w.enc()), Err(Error::ContextOverflow { .. })));
    assert!(matches!(ncp_loss(&m, &r, &w.enc()), Err(Error::ContextOverflow { .. })));
}

#[test]
fn sgd_step_is_minus_lr_times_grad() {
    let w = World::new(Scheme::Word);
    let m = ModelState::init(toy_config(20, 3)).unwrap();
    let r = record("my mom baked a cake", (4, 5), &["pie", "tart"]);
    for kind in [LossKind::Ntp, LossKind::Ncp] {
        let (_, g) = loss_and_grad(&m, &r, kind, &w.enc()).unwrap();
        let tc = TrainConfig {
            learning_rate: 0.05,
            batch_size: 1,
            epochs: 1,
            seed: 0,
            optimizer: Optimizer::Sgd,
            grad_clip: None,
        };
        let (trained, _) = train_records(m.clone(), std::slice::from_ref(&r), &[], kind, &w.enc(), &tc).unwrap();
        let mut expected = m.params.clone();
        expected.add_scaled(&g, -0.05);
        assert_eq!(trained.params, expected);
    }
}

#[test]
fn grad_check_examples() {
    let w = World::new(Scheme::Word);
    assert_eq!(w.tok.vocab_size(), 20);
    let m = ModelState::init(toy_config(20, 11)).unwrap();
    let r = record("the kid ate a sweet treat we like", (4, 6), &["pie", "tart"]);
    assert_eq!(r.completions.len(), 3);
    for kind in [LossKind::Ntp, LossKind::Ncp] {
        let report = grad_check(&m, &r, kind, &w.enc()).unwrap();
        assert!(report.max_rel_error < 1e-5, "{kind}: {report:?}");
        assert_eq!(report.checked, m.config.param_count());
    }

    let mut peaked = constant_model(&logits_for(&w.tok, &[("cake", 1.0)]));
    peaked.params.b_out.data.iter_mut().for_each(|b| *b = if *b == 0.0 { 0.0 } else { -30.0 });
    let r = record("my mom baked a cake", (4, 5), &[]);
    let (loss, g) = loss_and_grad(&peaked, &r, LossKind::Ntp, &w.enc()).unwrap();
    assert!(loss.total < 1e-11);
    assert!(g.norm() < 1e-10);
    assert!(grad_check(&peaked, &r, LossKind::Ntp, &w.enc()).unwrap().max_rel_error < 1e-5);
}

fn memorization_run() -> Vec<f64> {
    let lines = [
        "my mom baked a cake",
        "the kid ate a pie",
        "we like the sweet bread",
        "my kid baked a tart",
        "the mom ate a cookie",
    ];
    let recs: Vec<_> = lines.iter().map(|l| record(l, (4, 5), &[])).collect();
    let w = World::new(Scheme::Word);
    let m = ModelState::init(toy_config(20, 5)).unwrap();
    let tc = TrainConfig {
        learning_rate: 0.01,
        batch_size: 5,
        epochs: 200,
        seed: 1,
        optimizer: Optimizer::adam(),
        grad_clip: None,
    };
    let (_, log) = train_records(m, &recs, &[], LossKind::Ntp, &w.enc(), &tc).unwrap();
    log.iter().map(|e| e.loss).collect()
}

#[test]
fn five_sentences_are_memorized_monotonically() {
    let losses = memorization_run();
    assert_eq!(losses.len(), 200);
    let last = *losses.last().unwrap();
    assert!(last < 0.1, "final train loss {last}");
    let windows: Vec<f64> = losses[10..].chunks(5).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    for pair in windows.windows(2) {
        assert!(pair[1] <= pair[0], "smoothed loss rose: {windows:?}");
    }
}

#[test]
fn training_is_deterministic_and_rejects_nan() {
    let w = World::new(Scheme::Word);
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(4);
    let recs: Vec<_> = (0..12).map(|_| common::random_record(&mut rng, 3)).collect();
    let m = ModelState::init(ncp::model::ModelConfig { context_len: 24, ..toy_config(20, 2) }).unwrap();
    let tc = TrainConfig { epochs: 3, batch_size: 4, ..TrainConfig::default() };
    let a = train_records(m.clone(), &recs, &recs[..3], LossKind::Ncp, &w.enc(), &tc).unwrap();
    let b = train_records(m.clone(), &recs, &recs[..3], LossKind::Ncp, &w.enc(), &tc).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.1.iter().filter(|e| e.split == "val").count(), 3);

    let mut broken = m;
    broken.params.b_out.data[5] = f64::NAN;
    let err = train_records(broken, &recs, &[], LossKind::Ntp, &w.enc(), &tc).unwrap_err();
    match err {
        Error::NonFiniteLoss { epoch, .. } => assert_eq!(epoch, 1),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn variant_dispatch_through_manifest() {
    let w = World::new(Scheme::Word);
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(8);
    let recs: Vec<_> = (0..10).map(|_| common::random_record(&mut rng, 2)).collect();
    let dir = tempfile::tempdir().unwrap();
    let req = SplitRequest { train: 6, val: 2, test: 2, seed: 0 };
    let mut manifest = SplitManifest::new("toy", &req);
    let plain = split(&recs, &req).unwrap();
    manifest.add_dataset(dir.path(), "synonym.context_free", &plain).unwrap();
    let aug = ncp::dataset::Splits {
        train: augment(&plain.train),
        val: augment(&plain.val),
        test: augment(&plain.test),
    };
    manifest.add_dataset(dir.path(), "augmented.synonym.context_free", &aug).unwrap();

    let m = ModelState::init(ncp::model::ModelConfig { context_len: 24, ..toy_config(20, 2) }).unwrap();
    let tc = TrainConfig { epochs: 2, ..TrainConfig::default() };
    let (base, log) = train(m.clone(), &manifest, dir.path(), &Variant::Base, &w.enc(), &tc).unwrap();
    assert_eq!(base, m);
    assert!(log.is_empty());

    let v: Variant = "ncp-loss/synonym/context-free/toy".parse().unwrap();
    let (via_manifest, _) = train(m.clone(), &manifest, dir.path(), &v, &w.enc(), &tc).unwrap();
    let (direct, _) = train_records(m.clone(), &plain.train, &plain.val, LossKind::Ncp, &w.enc(), &tc).unwrap();
    assert_eq!(via_manifest, direct);

    let v: Variant = "ncp-augmentation/synonym/context-free/toy".parse().unwrap();
    let (via_manifest, _) = train(m.clone(), &manifest, dir.path(), &v, &w.enc(), &tc).unwrap();
    let (direct, _) = train_records(m.clone(), &aug.train, &aug.val, LossKind::Ntp, &w.enc(), &tc).unwrap();
    assert_eq!(via_manifest, direct);

    let v: Variant = "ncp-loss/synonym/context-free/elsewhere".parse().unwrap();
    assert!(matches!(train(m, &manifest, dir.path(), &v, &w.enc(), &tc), Err(Error::Mismatch(_))));
}
