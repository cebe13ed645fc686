//! Teacher ensembles, weighted soft labels and student training.
//!
//! A teacher is anything that maps an example to a probability vector: a
//! trained model, a stored prediction file or a plain function. The soft
//! label of an example is the weighted mean of its teachers' vectors,
//! `Q(c|X) = Σ_i w_i P_i(c|X)`, and the student minimizes the soft-target
//! cross-entropy against it.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::{CorpusError, LabeledExample, SoftDistribution, TaskId};
use crate::encoder::{classify, ModelParameters};
use crate::tensor::Real;
use crate::tokenizer::{encode, TokenSequence, Vocabulary};
use crate::training::{
    finetune, kl_divergence, EpochRecord, FinetuneOptions, History, LossMode, TrainConfig, TrainError,
    TrainingExample,
};
use crate::tsv::parse_table;

#[derive(Debug, Error)]
pub enum DistillError {
    #[error("teacher ensemble is empty")]
    NoTeachers,
    #[error("{weights} weights for {teachers} teachers")]
    WeightCount { teachers: usize, weights: usize },
    #[error("invalid teacher weights: {0}")]
    InvalidWeights(String),
    #[error("duplicate teacher name `{0}`")]
    DuplicateTeacher(String),
    #[error("teacher `{teacher}` has no prediction for example `{id}`")]
    MissingPrediction { teacher: String, id: String },
    #[error("teacher `{teacher}`: {message}")]
    Teacher { teacher: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Format {
        path: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Something that produces a class distribution per example.
pub trait PredictionSource: Send + Sync {
    fn name(&self) -> &str;

    /// One entry per example, in order; `None` where the source has no
    /// prediction for that example.
    fn predict(&self, examples: &[LabeledExample], task: TaskId) -> Result<Vec<Option<Vec<f64>>>, DistillError>;
}

/// A trained encoder used as a teacher.
pub struct ModelTeacher<T: Real> {
    pub name: String,
    pub params: ModelParameters<T>,
    pub vocab: Vocabulary,
}

impl<T: Real> PredictionSource for ModelTeacher<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn predict(&self, examples: &[LabeledExample], task: TaskId) -> Result<Vec<Option<Vec<f64>>>, DistillError> {
        if examples.is_empty() {
            return Ok(Vec::new());
        }
        let max_len = self.params.config().max_len;
        let seqs: Vec<TokenSequence> = examples.iter().map(|e| encode(&e.text, &self.vocab, max_len)).collect();
        let out = classify(&self.params, &seqs, task).map_err(|e| DistillError::Teacher {
            teacher: self.name.clone(),
            message: e.to_string(),
        })?;
        Ok(out.into_iter().map(|d| Some(d.into_probs())).collect())
    }
}

/// Predictions loaded from a soft-label file.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionFileTeacher {
    pub name: String,
    pub task: TaskId,
    pub predictions: HashMap<String, Vec<f64>>,
}

impl PredictionFileTeacher {
    pub fn load(name: impl Into<String>, path: &Path, task: TaskId) -> Result<Self, DistillError> {
        let predictions = read_soft_labels(path, task)?
            .into_iter()
            .map(|(id, d)| (id, d.into_probs()))
            .collect();
        Ok(PredictionFileTeacher {
            name: name.into(),
            task,
            predictions,
        })
    }
}

impl PredictionSource for PredictionFileTeacher {
    fn name(&self) -> &str {
        &self.name
    }

    fn predict(&self, examples: &[LabeledExample], task: TaskId) -> Result<Vec<Option<Vec<f64>>>, DistillError> {
        if task != self.task {
            return Err(DistillError::Teacher {
                teacher: self.name.clone(),
                message: format!("holds task {} predictions, asked for {task}", self.task),
            });
        }
        Ok(examples.iter().map(|e| self.predictions.get(&e.id).cloned()).collect())
    }
}

type OracleFn = dyn Fn(&LabeledExample, TaskId) -> Option<Vec<f64>> + Send + Sync;

/// A teacher backed by a function; handy for synthetic oracles.
pub struct FnTeacher {
    name: String,
    f: Box<OracleFn>,
}

impl FnTeacher {
    pub fn new(
        name: impl Into<String>,
        f: impl Fn(&LabeledExample, TaskId) -> Option<Vec<f64>> + Send + Sync + 'static,
    ) -> Self {
        FnTeacher {
            name: name.into(),
            f: Box::new(f),
        }
    }
}

impl PredictionSource for FnTeacher {
    fn name(&self) -> &str {
        &self.name
    }

    fn predict(&self, examples: &[LabeledExample], task: TaskId) -> Result<Vec<Option<Vec<f64>>>, DistillError> {
        Ok(examples.iter().map(|e| (self.f)(e, task)).collect())
    }
}

/// Teachers with normalized non-negative weights, kept sorted by name so
/// the weighted sum does not depend on the order they were supplied in.
pub struct TeacherEnsemble {
    teachers: Vec<(Box<dyn PredictionSource>, f64)>,
}

impl TeacherEnsemble {
    /// `weights = None` gives every teacher the same weight.
    pub fn new(teachers: Vec<Box<dyn PredictionSource>>, weights: Option<Vec<f64>>) -> Result<Self, DistillError> {
        if teachers.is_empty() {
            return Err(DistillError::NoTeachers);
        }
        let weights = weights.unwrap_or_else(|| vec![1.0; teachers.len()]);
        if weights.len() != teachers.len() {
            return Err(DistillError::WeightCount {
                teachers: teachers.len(),
                weights: weights.len(),
            });
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(DistillError::InvalidWeights(format!("weight {w} is not a non-negative number")));
        }
        let mut teachers: Vec<_> = teachers.into_iter().zip(weights).collect();
        teachers.sort_by(|a, b| a.0.name().cmp(b.0.name()));
        if let Some(w) = teachers.windows(2).find(|w| w[0].0.name() == w[1].0.name()) {
            return Err(DistillError::DuplicateTeacher(w[0].0.name().to_string()));
        }
        let sum: f64 = teachers.iter().map(|(_, w)| w).sum();
        if sum <= 0.0 {
            return Err(DistillError::InvalidWeights("weights sum to zero".into()));
        }
        if (sum - 1.0).abs() > 1e-12 {
            log::info!("teacher weights sum to {sum}; normalizing");
        }
        for (_, w) in &mut teachers {
            *w /= sum;
        }
        Ok(TeacherEnsemble { teachers })
    }

    pub fn len(&self) -> usize {
        self.teachers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.teachers.is_empty()
    }

    /// `(name, normalized weight)` in summation order.
    pub fn weights(&self) -> Vec<(&str, f64)> {
        self.teachers.iter().map(|(t, w)| (t.name(), *w)).collect()
    }

    /// Weighted soft label per example, in input order.
    pub fn soft_labels(&self, examples: &[LabeledExample], task: TaskId) -> Result<Vec<SoftDistribution>, DistillError> {
        let classes = task.num_classes();
        let predictions = self
            .teachers
            .par_iter()
            .map(|(t, _)| {
                let p = t.predict(examples, task)?;
                if p.len() != examples.len() {
                    return Err(DistillError::Teacher {
                        teacher: t.name().to_string(),
                        message: format!("{} predictions for {} examples", p.len(), examples.len()),
                    });
                }
                Ok(p)
            })
            .collect::<Result<Vec<_>, DistillError>>()?;

        let mut out = Vec::with_capacity(examples.len());
        for (i, ex) in examples.iter().enumerate() {
            let mut q = vec![0.0; classes];
            for ((teacher, w), preds) in self.teachers.iter().zip(&predictions) {
                let p = preds[i].as_ref().ok_or_else(|| DistillError::MissingPrediction {
                    teacher: teacher.name().to_string(),
                    id: ex.id.clone(),
                })?;
                if p.len() != classes {
                    return Err(DistillError::Teacher {
                        teacher: teacher.name().to_string(),
                        message: format!("{} probabilities for a {classes}-label task", p.len()),
                    });
                }
                for (qc, pc) in q.iter_mut().zip(p) {
                    *qc += w * pc;
                }
            }
            out.push(SoftDistribution::new(task, q)?);
        }
        Ok(out)
    }
}

/// Copies `dataset` with the ensemble's soft label attached to every example.
pub fn ensemble_soft_labels(
    ensemble: &TeacherEnsemble,
    dataset: &[LabeledExample],
    task: TaskId,
) -> Result<Vec<LabeledExample>, DistillError> {
    let q = ensemble.soft_labels(dataset, task)?;
    Ok(dataset
        .iter()
        .zip(q)
        .map(|(ex, q)| ex.clone().with_soft(q))
        .collect())
}

/// Trains a student on soft labels only; every example must carry one.
pub fn distill_student<T: Real>(
    student: ModelParameters<T>,
    data: &[TrainingExample],
    task: TaskId,
    config: &TrainConfig,
    validation: Option<&[TrainingExample]>,
    on_epoch: impl FnMut(&EpochRecord, &ModelParameters<T>) -> Result<(), TrainError>,
) -> Result<(ModelParameters<T>, History), DistillError> {
    let options = FinetuneOptions {
        validation,
        hard_as_one_hot: false,
    };
    Ok(finetune(student, data, task, config, LossMode::Soft, &options, on_epoch)?)
}

/// Mean `KL(Q ‖ P)` between each example's soft label and the model output.
pub fn mean_kl<T: Real>(params: &ModelParameters<T>, data: &[TrainingExample], task: TaskId) -> Result<f64, DistillError> {
    let labelled: Vec<&TrainingExample> = data.iter().filter(|e| e.soft.is_some()).collect();
    if labelled.is_empty() {
        return Ok(0.0);
    }
    let seqs: Vec<TokenSequence> = labelled.iter().map(|e| e.tokens.clone()).collect();
    let p = classify(params, &seqs, task).map_err(TrainError::from)?;
    let mut total = 0.0;
    for (ex, p) in labelled.iter().zip(&p) {
        total += kl_divergence(ex.soft.as_deref().expect("filtered"), p.probs())?;
    }
    Ok(total / labelled.len() as f64)
}

/// Probability column format: 17 significant digits, so values survive a
/// write/read cycle unchanged.
pub fn format_probability(p: f64) -> String {
    format!("{p:.16e}")
}

/// Soft-label file: `id` then one column per label in schema order.
pub fn soft_labels_to_tsv(rows: &[(String, SoftDistribution)], task: TaskId) -> String {
    let mut out = String::from("id");
    for l in task.labels() {
        out.push('\t');
        out.push_str(l);
    }
    out.push('\n');
    for (id, d) in rows {
        out.push_str(id);
        for &p in d.probs() {
            let _ = write!(out, "\t{}", format_probability(p));
        }
        out.push('\n');
    }
    out
}

pub fn write_soft_labels(path: &Path, rows: &[(String, SoftDistribution)], task: TaskId) -> Result<(), DistillError> {
    fs::write(path, soft_labels_to_tsv(rows, task)).map_err(|source| DistillError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_soft_labels(path: &Path, task: TaskId) -> Result<Vec<(String, SoftDistribution)>, DistillError> {
    let display = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| DistillError::Io {
        path: display.clone(),
        source,
    })?;
    let format_err = |line: usize, message: String| DistillError::Format {
        path: display.clone(),
        line,
        message,
    };
    let table = parse_table(&text).ok_or_else(|| format_err(1, "missing header row".into()))?;
    let id_col = table.column("id").ok_or_else(|| format_err(1, "no `id` column".into()))?;
    let cols = task
        .labels()
        .iter()
        .map(|l| table.column(l).ok_or_else(|| format_err(1, format!("no `{l}` column for task {task}"))))
        .collect::<Result<Vec<_>, _>>()?;
    let mut seen = BTreeMap::new();
    let mut out = Vec::with_capacity(table.rows.len());
    for row in &table.rows {
        let field = |c: usize| {
            row.fields
                .get(c)
                .ok_or_else(|| format_err(row.line, format!("expected {} fields", table.header.len())))
        };
        let id = field(id_col)?.clone();
        let probs = cols
            .iter()
            .map(|&c| {
                let f = field(c)?;
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| format_err(row.line, format!("bad probability `{f}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let d = SoftDistribution::new(task, probs).map_err(|e| format_err(row.line, e.to_string()))?;
        if seen.insert(id.clone(), row.line).is_some() {
            return Err(format_err(row.line, format!("duplicate id `{id}`")));
        }
        out.push((id, d));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::soft_cross_entropy;
    use proptest::prelude::*;

    fn examples(n: usize) -> Vec<LabeledExample> {
        (0..n).map(|i| LabeledExample::new(format!("e{i}"), format!("text {i}"), "en")).collect()
    }

    fn constant(name: &str, p: Vec<f64>) -> Box<dyn PredictionSource> {
        Box::new(FnTeacher::new(name, move |_, _| Some(p.clone())))
    }

    #[test]
    fn single_teacher_is_identity() {
        let p = vec![0.123456789, 0.876543211];
        let e = TeacherEnsemble::new(vec![constant("t", p.clone())], None).unwrap();
        let q = e.soft_labels(&examples(3), TaskId::A).unwrap();
        assert!(q.iter().all(|d| d.probs() == p.as_slice()));
    }

    #[test]
    fn equal_weights_average() {
        let e = TeacherEnsemble::new(
            vec![constant("a", vec![0.9, 0.1]), constant("b", vec![0.5, 0.5])],
            None,
        )
        .unwrap();
        let q = e.soft_labels(&examples(1), TaskId::A).unwrap();
        assert!((q[0].probs()[0] - 0.7).abs() < 1e-15);
        assert!((q[0].probs()[1] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn weights_are_normalized() {
        let e = TeacherEnsemble::new(
            vec![constant("a", vec![0.9, 0.1]), constant("b", vec![0.5, 0.5])],
            Some(vec![2.0, 2.0]),
        )
        .unwrap();
        assert_eq!(e.weights(), vec![("a", 0.5), ("b", 0.5)]);
    }

    #[test]
    fn construction_errors() {
        assert!(matches!(TeacherEnsemble::new(vec![], None), Err(DistillError::NoTeachers)));
        assert!(matches!(
            TeacherEnsemble::new(vec![constant("a", vec![1.0, 0.0])], Some(vec![1.0, 1.0])),
            Err(DistillError::WeightCount { .. })
        ));
        assert!(matches!(
            TeacherEnsemble::new(vec![constant("a", vec![1.0, 0.0])], Some(vec![-1.0])),
            Err(DistillError::InvalidWeights(_))
        ));
        assert!(matches!(
            TeacherEnsemble::new(vec![constant("a", vec![1.0, 0.0])], Some(vec![0.0])),
            Err(DistillError::InvalidWeights(_))
        ));
        assert!(matches!(
            TeacherEnsemble::new(vec![constant("a", vec![1.0, 0.0]), constant("a", vec![0.0, 1.0])], None),
            Err(DistillError::DuplicateTeacher(_))
        ));
    }

    #[test]
    fn missing_prediction_names_teacher_and_id() {
        let partial = Box::new(FnTeacher::new("partial", |e: &LabeledExample, _| {
            (e.id != "e1").then(|| vec![0.5, 0.5])
        }));
        let e = TeacherEnsemble::new(vec![constant("full", vec![1.0, 0.0]), partial], None).unwrap();
        match e.soft_labels(&examples(3), TaskId::A) {
            Err(DistillError::MissingPrediction { teacher, id }) => {
                assert_eq!(teacher, "partial");
                assert_eq!(id, "e1");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn soft_label_file_round_trip() {
        let rows: Vec<(String, SoftDistribution)> = vec![
            ("x".into(), SoftDistribution::new(TaskId::C, vec![0.1, 0.2, 0.7]).unwrap()),
            ("y".into(), SoftDistribution::new(TaskId::C, vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]).unwrap()),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("soft.tsv");
        write_soft_labels(&path, &rows, TaskId::C).unwrap();
        assert_eq!(read_soft_labels(&path, TaskId::C).unwrap(), rows);
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("id\tIND\tGRP\tOTH\n"));

        let teacher = PredictionFileTeacher::load("file", &path, TaskId::C).unwrap();
        let ex = vec![LabeledExample::new("y", "", "en"), LabeledExample::new("z", "", "en")];
        let p = teacher.predict(&ex, TaskId::C).unwrap();
        assert_eq!(p[0].as_deref(), Some(rows[1].1.probs()));
        assert_eq!(p[1], None);
    }

    #[test]
    fn bad_soft_label_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.tsv");
        for text in ["id\tOFF\nx\t0.5\n", "id\tOFF\tNOT\nx\t0.5\t0.6\n", "id\tOFF\tNOT\nx\tabc\t0.5\n", "id\tOFF\tNOT\nx\t1\t0\nx\t0\t1\n"] {
            fs::write(&path, text).unwrap();
            assert!(read_soft_labels(&path, TaskId::A).is_err(), "{text:?}");
        }
    }

    fn dist(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.01f64..1.0, n).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn weighted_average_closure(ps in prop::collection::vec(dist(3), 1..5), ws in prop::collection::vec(0.1f64..5.0, 5)) {
            let teachers: Vec<Box<dyn PredictionSource>> =
                ps.iter().enumerate().map(|(i, p)| constant(&format!("t{i}"), p.clone())).collect();
            let e = TeacherEnsemble::new(teachers, Some(ws[..ps.len()].to_vec())).unwrap();
            let q = e.soft_labels(&examples(1), TaskId::C).unwrap();
            let q = q[0].probs();
            prop_assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for c in 0..3 {
                let lo = ps.iter().map(|p| p[c]).fold(f64::INFINITY, f64::min);
                let hi = ps.iter().map(|p| p[c]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(q[c] >= lo - 1e-12 && q[c] <= hi + 1e-12);
            }
        }

        #[test]
        fn teacher_order_is_irrelevant(ps in prop::collection::vec(dist(2), 2..5), ws in prop::collection::vec(0.1f64..5.0, 5), rot in 0usize..5) {
            let make = |order: &[usize]| {
                let teachers = order.iter().map(|&i| constant(&format!("t{i}"), ps[i].clone())).collect();
                let w = order.iter().map(|&i| ws[i]).collect();
                TeacherEnsemble::new(teachers, Some(w)).unwrap().soft_labels(&examples(1), TaskId::A).unwrap()
            };
            let order: Vec<usize> = (0..ps.len()).collect();
            let mut rotated = order.clone();
            rotated.rotate_left(rot % ps.len());
            let a = make(&order);
            let b = make(&rotated);
            prop_assert_eq!(a[0].probs()[0].to_bits(), b[0].probs()[0].to_bits());
            prop_assert_eq!(a[0].probs()[1].to_bits(), b[0].probs()[1].to_bits());
        }

        #[test]
        fn self_cross_entropy_is_minimal(q in dist(3), p in dist(3)) {
            let h = soft_cross_entropy(&q, &q).unwrap();
            prop_assert!(soft_cross_entropy(&q, &p).unwrap() >= h - 1e-12);
        }
    }
}
