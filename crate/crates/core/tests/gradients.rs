use std::collections::BTreeMap;

use offeval::encoder::{init_params, EncoderConfig, ModelParameters};
use offeval::training::{grad_check, grad_check_with, mask_tokens, GradCheckOptions, LossSpec, MaskingPolicy};
use offeval::{TaskId, TokenSequence};

fn micro(tie_mlm: bool) -> EncoderConfig {
    EncoderConfig {
        layers: 2,
        hidden: 16,
        heads: 2,
        ffn: 32,
        vocab_size: 300,
        max_len: 16,
        tasks: vec![TaskId::A, TaskId::C],
        dropout: 0.1,
        tie_mlm,
    }
}

fn batch() -> Vec<TokenSequence> {
    vec![
        TokenSequence::from_subwords(&[17, 250, 42, 299, 8], 16),
        TokenSequence::from_subwords(&[100, 101, 102], 16),
        TokenSequence::from_subwords(&[5, 6, 7, 8, 9, 10, 11, 12, 13], 16),
    ]
}

fn params(tie_mlm: bool, seed: u64) -> ModelParameters<f64> {
    // Larger-than-default weights so every path carries a visible gradient.
    let mut p: ModelParameters<f64> = init_params(&micro(tie_mlm), seed).unwrap();
    for t in p.tensors_mut() {
        for x in t.data_mut() {
            if *x != 0.0 && *x != 1.0 {
                *x *= 10.0;
            }
        }
    }
    p
}

fn assert_close(spec: &LossSpec<'_>, tie_mlm: bool) {
    let p = params(tie_mlm, 11);
    let report = grad_check_with(&p, &batch(), spec, &GradCheckOptions::default()).unwrap();
    assert!(report.coordinates >= 200);
    assert!(report.max_relative_error < 1e-4, "{report:?}");
}

#[test]
fn soft_cross_entropy_gradients() {
    let q = vec![vec![0.2, 0.5, 0.3], vec![1.0, 0.0, 0.0], vec![0.6, 0.1, 0.3]];
    assert_close(&LossSpec::Soft { task: TaskId::C, targets: &q }, false);
}

#[test]
fn hard_cross_entropy_gradients() {
    assert_close(&LossSpec::Hard { task: TaskId::A, labels: &[1, 0, 1] }, false);
}

#[test]
fn mlm_gradients_untied_and_tied() {
    let targets: Vec<BTreeMap<usize, u32>> = batch()
        .iter()
        .enumerate()
        .map(|(i, s)| mask_tokens(s, &MaskingPolicy { mask_fraction: 0.4, ..Default::default() }, 300, i as u64).targets)
        .collect();
    let masked: Vec<TokenSequence> = batch()
        .iter()
        .enumerate()
        .map(|(i, s)| mask_tokens(s, &MaskingPolicy { mask_fraction: 0.4, ..Default::default() }, 300, i as u64).tokens)
        .collect();
    for tied in [false, true] {
        let p = params(tied, 3);
        let r = grad_check_with(&p, &masked, &LossSpec::Mlm(&targets), &GradCheckOptions::default()).unwrap();
        assert!(r.max_relative_error < 1e-4, "tied={tied}: {r:?}");
    }
}

#[test]
fn linear_softmax_head_is_near_exact() {
    // Only the classifier head: a single linear layer followed by softmax.
    let p = params(false, 5);
    let opts = GradCheckOptions {
        only: Some("heads.A".into()),
        eps: 1e-5,
        ..Default::default()
    };
    let r = grad_check_with(&p, &batch(), &LossSpec::Hard { task: TaskId::A, labels: &[0, 1, 1] }, &opts).unwrap();
    assert!(r.max_relative_error < 1e-8, "{r:?}");
}

#[test]
fn zero_step_is_rejected() {
    let p = params(false, 0);
    assert!(grad_check(&p, &batch(), &LossSpec::Hard { task: TaskId::A, labels: &[0, 1, 1] }, 0.0).is_err());
}
