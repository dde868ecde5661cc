use editvq::corpus::Vocab;
use editvq::models::{DecodingConfig, ModelConfig, ModelKind};
use editvq::training::{
    evaluate_loss, load_checkpoint, param_fingerprint, save_checkpoint, train, Checkpoint, Example,
    TrainConfig, CHECKPOINT_VERSION,
};
use editvq::Error;

fn vocab() -> Vocab {
    let mut toks: Vec<String> = ["<PAD>", "<BOS>", "<EOS>", "<UNK>", "<SEP>"]
        .map(String::from)
        .to_vec();
    toks.extend((0..11).map(|i| format!("t{i:02}")));
    Vocab::from_tokens(toks).unwrap()
}

fn small(kind: ModelKind) -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            kind,
            d_model: 16,
            d_ff: 32,
            heads: 2,
            dropout: 0.1,
            codebook_size: 4,
            max_len: 64,
            ..ModelConfig::default()
        },
        batch_size: 2,
        epochs: 3,
        peak_lr: 3e-3,
        epoch_pairs: None,
        warmup_steps: 5,
        seed: 13,
        valid_limit: None,
        reseed_dead_codes: false,
        ..TrainConfig::default()
    }
}

fn toy_pairs() -> Vec<Example> {
    (0..6)
        .map(|i| Example {
            x: vec![5 + i, 6, 7, 8 + i % 3],
            y: vec![5 + i, 9, 8 + i % 3],
        })
        .collect()
}

#[test]
fn one_pair_reaches_near_zero_loss() {
    let ex = vec![Example {
        x: vec![5, 6, 7, 8, 9],
        y: vec![5, 10, 9],
    }];
    let cfg = TrainConfig {
        batch_size: 1,
        epochs: 500,
        epoch_pairs: Some(1),
        warmup_steps: 20,
        model: ModelConfig {
            dropout: 0.0,
            ..small(ModelKind::EditVqvae).model
        },
        ..small(ModelKind::EditVqvae)
    };
    let out = train(&ex, &ex, &vocab(), &cfg, |_| {}).unwrap();
    assert_eq!(out.history.len(), 500);
    assert!(out.history.last().unwrap().train_loss < 0.01);
}

#[test]
fn training_is_bitwise_reproducible() {
    let data = toy_pairs();
    for kind in [ModelKind::EditVqvae, ModelKind::EditVae] {
        let a = train(&data, &data[..2], &vocab(), &small(kind), |_| {}).unwrap();
        let b = train(&data, &data[..2], &vocab(), &small(kind), |_| {}).unwrap();
        assert_eq!(a.checkpoint.to_bytes().unwrap(), b.checkpoint.to_bytes().unwrap());
    }
    let c = train(&data, &data[..2], &vocab(), &TrainConfig { seed: 14, ..small(ModelKind::EditVqvae) }, |_| {})
        .unwrap();
    let a = train(&data, &data[..2], &vocab(), &small(ModelKind::EditVqvae), |_| {}).unwrap();
    assert_ne!(a.checkpoint.to_bytes().unwrap(), c.checkpoint.to_bytes().unwrap());
}

#[test]
fn history_tracks_steps_and_usage() {
    let data = toy_pairs();
    let cfg = TrainConfig {
        max_steps: Some(7),
        ..small(ModelKind::EditVqvae)
    };
    let mut seen = Vec::new();
    let out = train(&data, &data, &vocab(), &cfg, |r| seen.push(r.step)).unwrap();
    assert_eq!(seen, vec![3, 6, 7]);
    for r in &out.history {
        let usage = r.codebook_usage.as_ref().unwrap();
        assert_eq!(usage.len(), 4);
        assert!((usage.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let ppl = r.perplexity.unwrap();
        assert!((1.0..=4.0 + 1e-9).contains(&ppl));
        assert!(r.lr > 0.0 && r.train_loss.is_finite());
    }
    let vae = train(&data, &data, &vocab(), &small(ModelKind::EditVae), |_| {}).unwrap();
    assert_eq!(vae.history[0].kl_per_dim.as_ref().unwrap().len(), 16);
    assert!(vae.history[0].codebook_usage.is_none());
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let data = toy_pairs();
    let out = train(&data, &data, &vocab(), &small(ModelKind::VqvaeConcat), |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p1 = dir.path().join("a.ckpt");
    let p2 = dir.path().join("b.ckpt");
    save_checkpoint(&out.checkpoint, &p1).unwrap();
    let loaded = load_checkpoint(&p1).unwrap();
    assert_eq!(loaded, out.checkpoint);
    save_checkpoint(&loaded, &p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
}

#[test]
fn loaded_model_behaves_like_the_trained_one() {
    let data = toy_pairs();
    let out = train(&data, &data, &vocab(), &small(ModelKind::EditVqvae), |_| {}).unwrap();
    let bytes = out.checkpoint.to_bytes().unwrap();
    let a = out.checkpoint.model().unwrap();
    let b = Checkpoint::from_bytes(&bytes).unwrap().model().unwrap();
    for k in 0..4 {
        assert_eq!(
            a.generate(&data[0].x, k, &DecodingConfig::greedy(12)).unwrap(),
            b.generate(&data[0].x, k, &DecodingConfig::greedy(12)).unwrap()
        );
    }
    let before = param_fingerprint(&a.store);
    let s1 = evaluate_loss(&a, &data).unwrap();
    let s2 = evaluate_loss(&a, &data).unwrap();
    assert_eq!(param_fingerprint(&a.store), before);
    assert_eq!(s1.loss, s2.loss);
    assert_eq!(s1.latents, s2.latents);
}

fn corrupt(bytes: &[u8]) -> Error {
    Checkpoint::from_bytes(bytes).unwrap_err()
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let data = toy_pairs();
    let out = train(&data, &data, &vocab(), &small(ModelKind::Seq2seq), |_| {}).unwrap();
    let bytes = out.checkpoint.to_bytes().unwrap();

    let mut flipped = bytes.clone();
    let i = bytes.len() - 20;
    flipped[i] ^= 0x40;
    assert!(corrupt(&flipped).to_string().contains("checksum"));

    assert!(corrupt(&bytes[..bytes.len() - 3]).to_string().contains("truncated"));
    assert!(corrupt(&bytes[..10]).to_string().contains("truncated"));
    let mut longer = bytes.clone();
    longer.push(0);
    assert!(corrupt(&longer).to_string().contains("trailing"));

    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(corrupt(&magic).to_string().contains("magic"));

    let mut version = bytes.clone();
    version[4..8].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
    let msg = corrupt(&version).to_string();
    assert!(msg.contains("version"), "{msg}");
}

#[test]
fn invalid_configs_fail_before_training() {
    let data = toy_pairs();
    let bad = [
        TrainConfig { batch_size: 0, ..small(ModelKind::EditVqvae) },
        TrainConfig { peak_lr: 0.0, ..small(ModelKind::EditVqvae) },
        TrainConfig { max_steps: Some(0), ..small(ModelKind::EditVqvae) },
        TrainConfig { ema_decay: Some(1.0), ..small(ModelKind::EditVqvae) },
    ];
    for cfg in bad {
        assert!(matches!(train(&data, &data, &vocab(), &cfg, |_| {}), Err(Error::Config(_))));
    }
    assert!(matches!(
        train(&[], &data, &vocab(), &small(ModelKind::EditVqvae), |_| {}),
        Err(Error::Data(_))
    ));
}

#[test]
fn ema_codebook_and_reseeding_train_cleanly() {
    let data = toy_pairs();
    let cfg = TrainConfig {
        ema_decay: Some(0.9),
        reseed_dead_codes: true,
        ..small(ModelKind::EditVqvae)
    };
    let out = train(&data, &data, &vocab(), &cfg, |_| {}).unwrap();
    assert!(out.history.iter().all(|r| r.train_loss.is_finite()));
}
