use super::*;

fn parse(args: &[&str]) -> Cli {
    Cli::try_parse_from(std::iter::once("signnet").chain(args.iter().copied())).unwrap()
}

#[test]
fn exit_codes_follow_error_kind() {
    let usage: anyhow::Error = UsageError("bad".into()).into();
    let div: anyhow::Error = SignError::Divergence {
        epoch: 1,
        batch: 0,
        reason: "nan".into(),
    }
    .into();
    let data: anyhow::Error = SignError::Empty("x".into()).into();
    assert_eq!(exit_code(&usage), EXIT_USAGE);
    assert_eq!(exit_code(&div), EXIT_DIVERGENCE);
    assert_eq!(exit_code(&data), EXIT_DATA);
}

#[test]
fn train_flags_override_defaults() {
    let Command::TrainT2p(a) = parse(&[
        "train-t2p",
        "--lambda-b",
        "0",
        "--negative-mode",
        "hardest",
        "--grad-clip",
        "0",
        "--early-stop",
        "3",
    ])
    .command
    else {
        panic!("wrong command")
    };
    let cfg = a.train.apply(TrainConfig::text2pose(), 7).unwrap();
    assert_eq!(cfg.seed, 7);
    assert_eq!(cfg.weights.lambda_b, 0.0);
    assert_eq!(cfg.weights.lambda_a, 5.0);
    assert_eq!(cfg.negative_mode, NegativeMode::Hardest);
    assert_eq!(cfg.grad_clip, None);
    assert_eq!(cfg.early_stop_patience, Some(3));
}

#[test]
fn bad_enum_values_are_usage_errors() {
    let Command::TrainP2t(a) = parse(&["train-p2t", "--prob-loss", "cubic"]).command else {
        panic!("wrong command")
    };
    let err = a.train.apply(TrainConfig::pose2text(), 0).unwrap_err();
    assert_eq!(exit_code(&err), EXIT_USAGE);
    let Command::TrainP2t(a) = parse(&["train-p2t", "--batch-size", "1"]).command else {
        panic!("wrong command")
    };
    assert_eq!(exit_code(&a.train.apply(TrainConfig::pose2text(), 0).unwrap_err()), EXIT_USAGE);
}

#[test]
fn model_width_rescales_feed_forward() {
    let flags = ModelFlags {
        embed_dim: Some(32),
        heads: Some(2),
        ..ModelFlags::default()
    };
    let c = flags.apply(ModelConfig::text2pose());
    assert_eq!((c.embed_dim, c.n_heads, c.ff_dim), (32, 2, 128));
}

#[test]
fn config_file_fills_nested_flags() {
    let f = tempfile::NamedTempFile::new().unwrap();
    std::fs::write(f.path(), "seed = 3\n[train-t2p]\nlambda-b = 0.5\nembed-dim = 16\n").unwrap();
    let Command::TrainT2p(a) = parse(&["train-t2p", "--lambda-b", "2"]).command else {
        panic!("wrong command")
    };
    let r: TrainT2pArgs = resolve(&a, Some(f.path()), "train-t2p").unwrap();
    assert_eq!(r.seed, Some(3));
    assert_eq!(r.train.lambda_b, Some(2.0));
    assert_eq!(r.model.embed_dim, Some(16));
}
