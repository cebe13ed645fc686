use offeval::corpus::parse_olid;
use offeval::encoder::{classify, init_params, load_checkpoint, save_checkpoint};
use offeval::synthetic::{generate, to_olid_tsv, GeneratorOptions, PseudoLanguage};
use offeval::tokenizer::build_vocab;
use offeval::training::{evaluate_macro_f1, finetune, FinetuneOptions, LossMode, TrainConfig, TrainingExample};
use offeval::{EncoderConfig, ModelParameters, TaskId, TokenSequence};

#[test]
fn generate_parse_train_checkpoint_predict() {
    let dir = tempfile::tempdir().unwrap();
    let lang = PseudoLanguage::new("xp", "", 40, 3);
    let path = dir.path().join("train.tsv");
    std::fs::write(&path, to_olid_tsv(&generate(&lang, 120, &GeneratorOptions::default(), 5, "p"))).unwrap();
    let data = parse_olid(&path, "xp").unwrap();
    assert_eq!(data.len(), 120);

    let texts: Vec<&str> = data.iter().map(|e| e.text.as_str()).collect();
    let vocab = build_vocab(&texts, 320).unwrap();
    let config = EncoderConfig {
        layers: 1,
        hidden: 16,
        heads: 2,
        ffn: 32,
        vocab_size: vocab.size(),
        max_len: 20,
        tasks: vec![TaskId::A],
        dropout: 0.0,
        tie_mlm: true,
    };
    let examples: Vec<TrainingExample> = data
        .iter()
        .map(|e| TrainingExample::from_labeled(e, TaskId::A, &vocab, config.max_len))
        .collect();
    let train = TrainConfig {
        learning_rate: 3e-3,
        batch_size: 16,
        epochs: 10,
        seed: 9,
        ..TrainConfig::default()
    };
    let init: ModelParameters<f64> = init_params(&config, 9).unwrap();
    let options = FinetuneOptions { validation: None, hard_as_one_hot: true };
    let (params, history) =
        finetune(init, &examples, TaskId::A, &train, LossMode::Hard, &options, |_, _| Ok(())).unwrap();
    assert_eq!(history.to_jsonl().lines().count(), 10);
    let f1 = evaluate_macro_f1(&params, &examples, TaskId::A).unwrap().unwrap();
    assert!(f1 > 0.9, "training macro-F1 {f1}");

    let ckpt = dir.path().join("model.ckpt");
    save_checkpoint(&params, &ckpt).unwrap();
    let loaded: ModelParameters<f64> = load_checkpoint(&ckpt).unwrap();
    let seqs: Vec<TokenSequence> = examples.iter().map(|e| e.tokens.clone()).collect();
    assert_eq!(
        classify(&params, &seqs, TaskId::A).unwrap(),
        classify(&loaded, &seqs, TaskId::A).unwrap()
    );
}
