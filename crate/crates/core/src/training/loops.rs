use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, OptimizerState};
use super::backprop::{backward, LossSpec};
use super::masking::{mask_tokens, MaskingPolicy};
use super::{TrainConfig, TrainError};
use crate::corpus::{argmax, LabeledExample, TaskId};
use crate::encoder::{classify, forward_sequence, mlm_position_logits, ModelParameters};
use crate::evaluation::{confusion, macro_f1};
use crate::tensor::Real;
use crate::tokenizer::{encode, TokenSequence, Vocabulary};

/// A tokenized example with its labels for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub id: String,
    pub language: String,
    pub tokens: TokenSequence,
    pub hard: Option<usize>,
    pub soft: Option<Vec<f64>>,
}

impl TrainingExample {
    pub fn from_labeled(ex: &LabeledExample, task: TaskId, vocab: &Vocabulary, max_len: usize) -> Self {
        TrainingExample {
            id: ex.id.clone(),
            language: ex.language.clone(),
            tokens: encode(&ex.text, vocab, max_len),
            hard: ex.hard.get(&task).copied(),
            soft: ex.soft.get(&task).map(|s| s.probs().to_vec()),
        }
    }

    /// Gold label for scoring: the hard label, else the soft argmax.
    pub fn gold(&self) -> Option<usize> {
        self.hard.or_else(|| self.soft.as_deref().map(argmax))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    Hard,
    Soft,
}

#[derive(Debug, Clone, Copy)]
pub struct FinetuneOptions<'a> {
    /// Scored by macro-F1 after every epoch when present.
    pub validation: Option<&'a [TrainingExample]>,
    /// In soft mode, train on one-hot targets for examples that only carry a
    /// hard label.
    pub hard_as_one_hot: bool,
}

impl Default for FinetuneOptions<'_> {
    fn default() -> Self {
        FinetuneOptions {
            validation: None,
            hard_as_one_hot: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub val_macro_f1: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }
}

fn resolve_targets(
    data: &[TrainingExample],
    task: TaskId,
    mode: LossMode,
    hard_as_one_hot: bool,
) -> Result<Vec<Vec<f64>>, TrainError> {
    let classes = task.num_classes();
    let mut missing = Vec::new();
    let mut out = Vec::with_capacity(data.len());
    for ex in data {
        let one_hot = |y: usize| {
            let mut q = vec![0.0; classes];
            q[y] = 1.0;
            q
        };
        let target = match mode {
            LossMode::Hard => ex.hard.map(one_hot),
            LossMode::Soft => ex
                .soft
                .clone()
                .or_else(|| ex.hard.filter(|_| hard_as_one_hot).map(one_hot)),
        };
        match target {
            Some(q) => {
                if let Some(y) = ex.hard.filter(|&y| y >= classes) {
                    return Err(TrainError::LabelOutOfRange { label: y, classes });
                }
                if q.len() != classes {
                    return Err(TrainError::DimensionMismatch(q.len(), classes));
                }
                out.push(q)
            }
            None => missing.push(ex.id.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(TrainError::MissingLabels { task, ids: missing });
    }
    Ok(out)
}

fn steps_per_epoch(n: usize, batch_size: usize) -> usize {
    n.div_ceil(batch_size)
}

/// Argmax predictions in eval mode.
pub fn predict_labels<T: Real>(
    params: &ModelParameters<T>,
    examples: &[TrainingExample],
    task: TaskId,
) -> Result<Vec<usize>, TrainError> {
    let seqs: Vec<TokenSequence> = examples.iter().map(|e| e.tokens.clone()).collect();
    if seqs.is_empty() {
        return Ok(Vec::new());
    }
    Ok(classify(params, &seqs, task)?.iter().map(|d| d.argmax()).collect())
}

/// Macro-F1 of `params` on examples that carry a gold label.
pub fn evaluate_macro_f1<T: Real>(
    params: &ModelParameters<T>,
    examples: &[TrainingExample],
    task: TaskId,
) -> Result<Option<f64>, TrainError> {
    let scored: Vec<TrainingExample> = examples.iter().filter(|e| e.gold().is_some()).cloned().collect();
    let golds: Vec<usize> = scored.iter().filter_map(TrainingExample::gold).collect();
    let preds = predict_labels(params, &scored, task)?;
    let m = confusion(&golds, &preds, task).map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
    Ok(macro_f1(&m).ok())
}

/// Fine-tunes `params` on one task.
///
/// Each epoch shuffles the data with a generator seeded from `config.seed`;
/// every step draws its dropout seed from the same generator, so the
/// trajectory is a function of (params, data, config) alone. Hard mode runs
/// through the soft-target path with one-hot targets.
pub fn finetune<T: Real>(
    mut params: ModelParameters<T>,
    data: &[TrainingExample],
    task: TaskId,
    config: &TrainConfig,
    mode: LossMode,
    options: &FinetuneOptions<'_>,
    mut on_epoch: impl FnMut(&EpochRecord, &ModelParameters<T>) -> Result<(), TrainError>,
) -> Result<(ModelParameters<T>, History), TrainError> {
    config.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let targets = resolve_targets(data, task, mode, options.hard_as_one_hot)?;
    let total = config.epochs * steps_per_epoch(data.len(), config.batch_size);
    let step_config = TrainConfig {
        warmup_steps: Some(config.resolved_warmup(total)),
        ..config.clone()
    };
    let mut state = OptimizerState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = History::default();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<TokenSequence> = chunk.iter().map(|&i| data[i].tokens.clone()).collect();
            let q: Vec<Vec<f64>> = chunk.iter().map(|&i| targets[i].clone()).collect();
            let dropout_seed: u64 = rng.random();
            let spec = LossSpec::Soft { task, targets: &q };
            let (loss, grads) = backward(&params, &batch, &spec, Some(dropout_seed))?;
            adam_step(&mut params, &grads, &mut state, &step_config);
            loss_sum += loss * chunk.len() as f64;
        }
        let val_macro_f1 = match options.validation {
            Some(v) => evaluate_macro_f1(&params, v, task)?,
            None => None,
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / data.len() as f64,
            val_macro_f1,
        };
        log::info!(
            "epoch {epoch}: train loss {:.6}{}",
            record.train_loss,
            val_macro_f1.map(|f| format!(", val macro-F1 {f:.4}")).unwrap_or_default()
        );
        on_epoch(&record, &params)?;
        history.epochs.push(record);
    }
    Ok((params, history))
}

/// Masked-language-model pretraining. Returns the mean masked-token loss of
/// every epoch; `on_epoch` sees the parameters after each epoch.
pub fn pretrain_mlm<T: Real>(
    mut params: ModelParameters<T>,
    corpus: &[TokenSequence],
    config: &TrainConfig,
    policy: &MaskingPolicy,
    mut on_epoch: impl FnMut(usize, f64, &ModelParameters<T>) -> Result<(), TrainError>,
) -> Result<(ModelParameters<T>, Vec<f64>), TrainError> {
    config.validate()?;
    policy.validate()?;
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let vocab_size = params.config().vocab_size;
    let total = config.epochs * steps_per_epoch(corpus.len(), config.batch_size);
    let step_config = TrainConfig {
        warmup_steps: Some(config.resolved_warmup(total)),
        ..config.clone()
    };
    let mut state = OptimizerState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut losses = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut targets_seen) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let masked: Vec<_> = chunk
                .iter()
                .map(|&i| mask_tokens(&corpus[i], policy, vocab_size, rng.random()))
                .collect();
            let dropout_seed: u64 = rng.random();
            let count: usize = masked.iter().map(|m| m.targets.len()).sum();
            if count == 0 {
                continue;
            }
            let batch: Vec<TokenSequence> = masked.iter().map(|m| m.tokens.clone()).collect();
            let targets: Vec<_> = masked.into_iter().map(|m| m.targets).collect();
            let (loss, grads) = backward(&params, &batch, &LossSpec::Mlm(&targets), Some(dropout_seed))?;
            adam_step(&mut params, &grads, &mut state, &step_config);
            loss_sum += loss * count as f64;
            targets_seen += count;
        }
        let mean = if targets_seen == 0 { 0.0 } else { loss_sum / targets_seen as f64 };
        log::info!("pretrain epoch {epoch}: masked-token loss {mean:.6}");
        on_epoch(epoch, mean, &params)?;
        losses.push(mean);
    }
    Ok((params, losses))
}

/// Fraction of masked positions whose original token is the argmax of the
/// MLM head, with every selected position replaced by `[MASK]`.
pub fn mlm_accuracy<T: Real>(
    params: &ModelParameters<T>,
    corpus: &[TokenSequence],
    mask_fraction: f64,
    seed: u64,
) -> Result<f64, TrainError> {
    let policy = MaskingPolicy::mask_only(mask_fraction);
    let vocab_size = params.config().vocab_size;
    let d = params.config().hidden;
    let per_seq = corpus
        .par_iter()
        .enumerate()
        .map(|(i, seq)| {
            let m = mask_tokens(seq, &policy, vocab_size, seed.wrapping_add(i as u64));
            let cache = forward_sequence(params, &m.tokens, m.tokens.len(), None)?;
            let hits = m
                .targets
                .iter()
                .filter(|(&pos, &orig)| {
                    let z: Vec<f64> = mlm_position_logits(params, &cache.hidden[pos * d..(pos + 1) * d])
                        .into_iter()
                        .map(Real::as_f64)
                        .collect();
                    argmax(&z) == orig as usize
                })
                .count();
            Ok((hits, m.targets.len()))
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    let (hits, total) = per_seq.iter().fold((0, 0), |(h, t), &(a, b)| (h + a, t + b));
    Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
}
