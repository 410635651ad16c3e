use reefclip_core::alignment::{batch_gradients, batch_loss, epoch_order, train, PairExample, TextContext, Trainer};
use reefclip_core::checkpoint::{load_checkpoint, load_checkpoint_as, save_checkpoint};
use reefclip_core::config::RunConfig;
use reefclip_core::encoders::{ModelParams, Variant, TAU_LOG};
use reefclip_core::pipeline::synthetic_batch;

fn small(seed: u64) -> RunConfig {
    RunConfig {
        d_p: 16,
        n_r: 4,
        image_side: 16,
        latent_dim: 8,
        batch_size: 4,
        epochs: 4,
        seed,
        ..RunConfig::default()
    }
}

fn refs(batch: &[PairExample]) -> Vec<&PairExample> {
    batch.iter().collect()
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let cfg = RunConfig { lr: 0.0, weight_decay: 0.0, ..small(1) };
    let (params, batch) = synthetic_batch(&cfg, 8).unwrap();
    let out = train(params.clone(), &batch, &cfg.train_config(), |_| {}).unwrap();
    assert_eq!(out.params, params);
}

#[test]
fn a_step_lowers_the_batch_loss() {
    let cfg = RunConfig { lr: 1e-3, ..small(2) };
    let (params, batch) = synthetic_batch(&cfg, 6).unwrap();
    let b = refs(&batch);
    let mut trainer = Trainer::new(params, cfg.train_config()).unwrap();
    let before = trainer.step(&b).unwrap().total;
    let after = batch_loss(&trainer.params, &b, cfg.text_context).unwrap().total;
    assert!(after < before, "{after} !< {before}");
}

#[test]
fn temperature_receives_gradient() {
    let (params, batch) = synthetic_batch(&small(3), 4).unwrap();
    for ctx in [TextContext::Paired, TextContext::Pairwise] {
        let (_, grads) = batch_gradients(&params, &refs(&batch), ctx).unwrap();
        assert!(grads[TAU_LOG].item().abs() > 0.0);
        assert!(grads.iter().all(|g| g.is_finite()));
    }
}

#[test]
fn gradients_match_loss() {
    let (params, batch) = synthetic_batch(&small(4), 5).unwrap();
    let b = refs(&batch);
    let (loss, _) = batch_gradients(&params, &b, TextContext::Pairwise).unwrap();
    assert_eq!(loss, batch_loss(&params, &b, TextContext::Pairwise).unwrap());
}

#[test]
fn ablations_train() {
    for variant in [Variant::NoPgve, Variant::NoVgte] {
        let cfg = RunConfig { variant, epochs: 2, ..small(5) };
        let (params, batch) = synthetic_batch(&cfg, 6).unwrap();
        let out = train(params, &batch, &cfg.train_config(), |_| {}).unwrap();
        assert!(out.metrics.iter().all(|m| m.loss.is_finite()));
    }
}

#[test]
fn same_seed_same_run() {
    let cfg = RunConfig { augment_flips: true, ..small(6) };
    let run = || {
        let (params, batch) = synthetic_batch(&cfg, 8).unwrap();
        train(params, &batch, &cfg.train_config(), |_| {}).unwrap()
    };
    let (a, b) = (run(), run());
    assert!(a.metrics.iter().zip(&b.metrics).all(|(x, y)| x.same_values(y)));
    assert_eq!(a.params, b.params);
    assert_eq!(epoch_order(10, 1, 3), epoch_order(10, 1, 3));
    assert_ne!(epoch_order(10, 1, 3), epoch_order(10, 1, 4));
}

#[test]
fn checkpoint_file_round_trip() {
    let cfg = small(7);
    let (params, _) = synthetic_batch(&cfg, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&path, &params, Some(&cfg.train_config())).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.params, params);
    assert_eq!(back.train, Some(cfg.train_config()));

    let other = RunConfig { d_p: 8, ..cfg.clone() }.model_config();
    assert!(load_checkpoint_as(&path, Some(&other)).is_err());

    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    std::fs::write(&path, &bytes).unwrap();
    assert!(load_checkpoint(&path).is_err());
    assert!(load_checkpoint(dir.path().join("missing.ckpt")).is_err());
}

#[test]
fn tokens_round_trip_through_vocab() {
    let (params, batch): (ModelParams, _) = synthetic_batch(&small(8), 3).unwrap();
    for ex in &batch {
        assert!(ex.tokens.iter().all(|&t| t < params.vocab.len()));
        assert!(ex.tokens.len() <= params.config.max_tokens);
    }
}
