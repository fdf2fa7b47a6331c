use opreason::dataset::{build_vocab, label_all, Instance};
use opreason::eval::{evaluate, DecodeOptions};
use opreason::rules::RuleSet;
use opreason::synth;
use opreason::training::{metrics_csv, train, Checkpoint, TrainConfig};

fn tiny_config() -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.epochs = 2;
    cfg.batch_size = 8;
    cfg.model.d_h = 16;
    cfg
}

fn data(cfg: &TrainConfig) -> (Vec<Instance>, Vec<Instance>, opreason::corpus::Vocab) {
    let (train_raw, dev_raw) = synth::corpus(3, 36, 12);
    let vocab = build_vocab(&train_raw, cfg.min_count);
    let rules = RuleSet::bundled();
    let train = label_all(&train_raw, &vocab, &rules, cfg.model.max_seq_len).unwrap();
    let dev = label_all(&dev_raw, &vocab, &rules, cfg.model.max_seq_len).unwrap();
    (train, dev, vocab)
}

#[test]
fn same_seed_same_metrics_and_parameters() {
    let cfg = tiny_config();
    let (train_set, _, vocab) = data(&cfg);
    let a = train(&train_set, &vocab, &cfg).unwrap();
    let b = train(&train_set, &vocab, &cfg).unwrap();
    assert_eq!(metrics_csv(&a.metrics), metrics_csv(&b.metrics));
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());

    let mut other = cfg.clone();
    other.seed += 1;
    let c = train(&train_set, &vocab, &other).unwrap();
    assert_ne!(metrics_csv(&a.metrics), metrics_csv(&c.metrics));
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let cfg = tiny_config();
    let (train_set, dev, vocab) = data(&cfg);
    let outcome = train(&train_set, &vocab, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    outcome.checkpoint.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.to_bytes(), outcome.checkpoint.to_bytes());
    assert_eq!(loaded.vocab, outcome.checkpoint.vocab);
    assert_eq!(loaded.rng, outcome.checkpoint.rng);
    let state = loaded.optimizer.as_ref().expect("optimizer state saved");
    assert_eq!(state.step, (36usize.div_ceil(8) * 2) as u64);

    let opts = DecodeOptions::default();
    let (r1, p1) = evaluate(&outcome.checkpoint.model, &dev, &opts).unwrap();
    let (r2, p2) = evaluate(&loaded.model, &dev, &opts).unwrap();
    assert_eq!(r1, r2);
    assert_eq!(p1, p2);
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let cfg = tiny_config();
    let (_, _, vocab) = data(&cfg);
    let ckpt = Checkpoint::initial(cfg.model_config(vocab.len()), vocab).unwrap();
    let bytes = ckpt.to_bytes();
    assert!(Checkpoint::from_bytes(&bytes).is_ok());

    for cut in (0..bytes.len()).step_by(97).chain([bytes.len() - 1]) {
        assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err(), "prefix of {cut} bytes accepted");
    }
    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(Checkpoint::from_bytes(&trailing).is_err());

    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(Checkpoint::from_bytes(&bad_magic).is_err());

    let mut bad_version = bytes.clone();
    bad_version[4] = 9;
    let err = Checkpoint::from_bytes(&bad_version).unwrap_err().to_string();
    assert!(err.contains("version 9"), "{err}");

    // The last parameter value sits just before the optimizer flag and rng state.
    let mut nan = bytes.clone();
    let at = bytes.len() - 1 - 8 - 16 - 8;
    nan[at..at + 8].copy_from_slice(&f64::NAN.to_le_bytes());
    assert!(Checkpoint::from_bytes(&nan).unwrap_err().to_string().contains("non-finite"));
}
