//! k-fold cross-validation ensembles with probability averaging, and the
//! repeated-seed evaluation protocol.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{argmax, stratified_kfold, CorpusError, DatasetSplit, LabeledExample, SoftDistribution, TaskId};
use crate::encoder::{check_architecture, classify, init_params, CheckpointError, EncoderConfig, EncoderError, ModelParameters};
use crate::evaluation::{confusion, report, EvalError, MetricsReport};
use crate::tensor::Real;
use crate::tokenizer::{TokenSequence, Vocabulary};
use crate::training::{
    finetune, predict_labels, FinetuneOptions, History, LossMode, TrainConfig, TrainError, TrainingExample,
};

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("ensemble has no members")]
    Empty,
    #[error("member {member} does not match member 0: {source}")]
    ArchitectureMismatch {
        member: usize,
        #[source]
        source: CheckpointError,
    },
    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: TrainError,
    },
    #[error("no seeds to sweep")]
    NoSeeds,
    #[error("could not build a thread pool: {0}")]
    ThreadPool(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Everything a cross-validation run needs besides the data.
#[derive(Debug, Clone)]
pub struct CvOptions<T: Real> {
    pub encoder: EncoderConfig,
    /// Starting point for every member (e.g. a pretrained encoder); fresh
    /// initialization with the member's seed when `None`.
    pub init: Option<ModelParameters<T>>,
    pub train: TrainConfig,
    pub mode: LossMode,
    pub hard_as_one_hot: bool,
    /// Maximum number of folds trained at once; 0 lets the pool decide.
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvEnsemble<T: Real> {
    /// Member `i` was trained with fold `i` held out.
    pub members: Vec<ModelParameters<T>>,
    pub split: DatasetSplit,
    /// Validation report of member `i` on fold `i`.
    pub reports: Vec<MetricsReport>,
    pub histories: Vec<History>,
}

/// Label used for stratification: the hard label, else the soft argmax.
fn stratification_view(examples: &[LabeledExample], task: TaskId) -> Vec<LabeledExample> {
    examples
        .iter()
        .map(|e| {
            let mut e = e.clone();
            if !e.hard.contains_key(&task) {
                if let Some(s) = e.soft.get(&task) {
                    let y = s.argmax();
                    e.hard.insert(task, y);
                }
            }
            e
        })
        .collect()
}

/// Trains `k` members; member `i` sees every fold but `i`, uses seed
/// `train.seed + i` and is scored on fold `i`.
pub fn train_cv_ensemble<T: Real>(
    examples: &[LabeledExample],
    vocab: &Vocabulary,
    task: TaskId,
    k: usize,
    options: &CvOptions<T>,
) -> Result<CvEnsemble<T>, EnsembleError> {
    let split = stratified_kfold(&stratification_view(examples, task), task, k, options.train.seed)?;
    let max_len = options.encoder.max_len;
    let data: Vec<TrainingExample> = examples
        .iter()
        .map(|e| TrainingExample::from_labeled(e, task, vocab, max_len))
        .collect();

    let train_fold = |fold: usize| -> Result<(ModelParameters<T>, MetricsReport, History), EnsembleError> {
        let wrap = |source: TrainError| EnsembleError::Fold { fold, source };
        let seed = options.train.seed.wrapping_add(fold as u64);
        let train: Vec<TrainingExample> = split.training(fold).into_iter().map(|i| data[i].clone()).collect();
        let held: Vec<TrainingExample> = split.held_out(fold).into_iter().map(|i| data[i].clone()).collect();
        let init = match &options.init {
            Some(p) => p.clone(),
            None => init_params(&options.encoder, seed)?,
        };
        let config = TrainConfig {
            seed,
            ..options.train.clone()
        };
        let ft = FinetuneOptions {
            validation: None,
            hard_as_one_hot: options.hard_as_one_hot,
        };
        let (params, history) =
            finetune(init, &train, task, &config, options.mode, &ft, |_, _| Ok(())).map_err(wrap)?;
        let scored: Vec<TrainingExample> = held.into_iter().filter(|e| e.gold().is_some()).collect();
        let golds: Vec<usize> = scored.iter().filter_map(TrainingExample::gold).collect();
        let preds = predict_labels(&params, &scored, task).map_err(wrap)?;
        let r = report(&confusion(&golds, &preds, task)?);
        log::info!(
            "fold {fold}: trained on {}, validated on {}, macro-F1 {}",
            train.len(),
            scored.len(),
            r.macro_f1.map_or("-".to_string(), |f| format!("{f:.4}"))
        );
        Ok((params, r, history))
    };

    let run = || (0..k).into_par_iter().map(train_fold).collect::<Result<Vec<_>, _>>();
    let results = if options.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(options.jobs)
            .build()
            .map_err(|e| EnsembleError::ThreadPool(e.to_string()))?
            .install(run)?
    } else {
        run()?
    };

    let mut members = Vec::with_capacity(k);
    let mut reports = Vec::with_capacity(k);
    let mut histories = Vec::with_capacity(k);
    for (p, r, h) in results {
        members.push(p);
        reports.push(r);
        histories.push(h);
    }
    Ok(CvEnsemble {
        members,
        split,
        reports,
        histories,
    })
}

/// Mean member probabilities per example and their argmax (lowest label
/// index on ties). The per-example member vectors are summed in a canonical
/// order, so the result does not depend on member order.
pub fn predict_ensemble<T: Real>(
    members: &[ModelParameters<T>],
    batch: &[TokenSequence],
    task: TaskId,
) -> Result<Vec<(SoftDistribution, usize)>, EnsembleError> {
    let first = members.first().ok_or(EnsembleError::Empty)?;
    for (i, m) in members.iter().enumerate().skip(1) {
        check_architecture(m.config(), first.config())
            .map_err(|source| EnsembleError::ArchitectureMismatch { member: i, source })?;
    }
    if batch.is_empty() {
        return Ok(Vec::new());
    }
    let per_member = members
        .par_iter()
        .map(|m| classify(m, batch, task))
        .collect::<Result<Vec<_>, _>>()?;
    let n = members.len() as f64;
    let mut out = Vec::with_capacity(batch.len());
    for i in 0..batch.len() {
        let mut vectors: Vec<&[f64]> = per_member.iter().map(|p| p[i].probs()).collect();
        vectors.sort_by(|a, b| {
            a.iter()
                .zip(b.iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let mut mean = vec![0.0; task.num_classes()];
        for v in vectors {
            for (m, p) in mean.iter_mut().zip(v) {
                *m += p;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let label = argmax(&mean);
        out.push((SoftDistribution::new(task, mean)?, label));
    }
    Ok(out)
}

/// Mean and sample standard deviation of a metric over repeated runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub seeds: Vec<u64>,
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl SweepSummary {
    pub fn from_values(seeds: Vec<u64>, values: Vec<f64>) -> Result<Self, EnsembleError> {
        if values.is_empty() {
            return Err(EnsembleError::NoSeeds);
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Ok(SweepSummary {
            seeds,
            values,
            mean,
            std,
        })
    }
}

/// Runs `run` once per seed (in parallel) and summarizes the results.
pub fn seed_sweep<F>(seeds: &[u64], run: F) -> Result<SweepSummary, EnsembleError>
where
    F: Fn(u64) -> Result<f64, EnsembleError> + Sync,
{
    let values = seeds.par_iter().map(|&s| run(s)).collect::<Result<Vec<_>, _>>()?;
    SweepSummary::from_values(seeds.to_vec(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::build_vocab;

    fn tiny_config() -> EncoderConfig {
        EncoderConfig {
            layers: 1,
            hidden: 8,
            heads: 2,
            ffn: 16,
            vocab_size: 261,
            max_len: 16,
            tasks: vec![TaskId::A],
            dropout: 0.0,
            tie_mlm: true,
        }
    }

    fn seqs() -> Vec<TokenSequence> {
        vec![
            TokenSequence::from_subwords(&[10, 20], 16),
            TokenSequence::from_subwords(&[30, 40, 50, 60], 16),
        ]
    }

    #[test]
    fn single_member_equals_classify() {
        let p: ModelParameters<f32> = init_params(&tiny_config(), 1).unwrap();
        let single = classify(&p, &seqs(), TaskId::A).unwrap();
        let ens = predict_ensemble(std::slice::from_ref(&p), &seqs(), TaskId::A).unwrap();
        for ((d, y), s) in ens.iter().zip(&single) {
            assert_eq!(d, s);
            assert_eq!(*y, s.argmax());
        }
    }

    #[test]
    fn member_order_is_irrelevant() {
        let members: Vec<ModelParameters<f32>> = (0..4).map(|s| init_params(&tiny_config(), s).unwrap()).collect();
        let a = predict_ensemble(&members, &seqs(), TaskId::A).unwrap();
        let mut rev = members.clone();
        rev.reverse();
        let b = predict_ensemble(&rev, &seqs(), TaskId::A).unwrap();
        assert_eq!(a, b);
        for (d, _) in &a {
            assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn architecture_mismatch_is_rejected() {
        let a: ModelParameters<f32> = init_params(&tiny_config(), 0).unwrap();
        let b: ModelParameters<f32> = init_params(
            &EncoderConfig {
                hidden: 16,
                ffn: 32,
                ..tiny_config()
            },
            0,
        )
        .unwrap();
        assert!(matches!(
            predict_ensemble(&[a, b], &seqs(), TaskId::A),
            Err(EnsembleError::ArchitectureMismatch { member: 1, .. })
        ));
        assert!(matches!(predict_ensemble::<f32>(&[], &seqs(), TaskId::A), Err(EnsembleError::Empty)));
    }

    fn dataset(n: usize) -> Vec<LabeledExample> {
        (0..n)
            .map(|i| {
                let y = i % 2;
                let text = if y == 0 { format!("bad word {i}") } else { format!("nice day {i}") };
                LabeledExample::new(format!("e{i}"), text, "en").with_hard(TaskId::A, y)
            })
            .collect()
    }

    fn options() -> CvOptions<f32> {
        CvOptions {
            encoder: tiny_config(),
            init: None,
            train: TrainConfig {
                epochs: 1,
                batch_size: 4,
                ..Default::default()
            },
            mode: LossMode::Hard,
            hard_as_one_hot: true,
            jobs: 2,
        }
    }

    #[test]
    fn two_fold_split_arithmetic() {
        let data = dataset(10);
        let texts: Vec<&str> = data.iter().map(|e| e.text.as_str()).collect();
        let vocab = build_vocab(&texts, 261).unwrap();
        let ens = train_cv_ensemble(&data, &vocab, TaskId::A, 2, &options()).unwrap();
        assert_eq!(ens.members.len(), 2);
        assert_eq!(ens.reports.len(), 2);
        assert_eq!(ens.split.fold_sizes(), vec![5, 5]);
        for r in &ens.reports {
            assert_eq!(r.classes.iter().map(|c| c.support).sum::<u64>(), 5);
        }
        let again = train_cv_ensemble(&data, &vocab, TaskId::A, 2, &options()).unwrap();
        assert_eq!(ens, again);
        assert!(train_cv_ensemble(&data, &vocab, TaskId::A, 1, &options()).is_err());
    }

    #[test]
    fn sweep_summary() {
        let s = seed_sweep(&[1, 2, 3], |seed| Ok(seed as f64)).unwrap();
        assert_eq!(s.mean, 2.0);
        assert!((s.std - 1.0).abs() < 1e-15);
        assert_eq!(SweepSummary::from_values(vec![7], vec![0.5]).unwrap().std, 0.0);
        assert!(matches!(seed_sweep(&[], |_| Ok(0.0)), Err(EnsembleError::NoSeeds)));
    }
}
