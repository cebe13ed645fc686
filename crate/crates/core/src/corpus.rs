//! OLID/SOLID ingestion, the three-level label schema, soft labels, language
//! mixing and stratified k-fold splitting.
//!
//! Labels are stored as indices into the fixed, ordered label set of their
//! task (see [`TaskId::labels`]).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tsv::{self, Table};

pub use crate::tsv::{Row, Table as TsvTable};

/// Tolerance on the sum of a [`SoftDistribution`].
pub const SOFT_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: missing header row")]
    MissingHeader { path: String },
    #[error("{path}: bad header: {message}")]
    BadHeader { path: String, message: String },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("hierarchy violations in {}: {}", .ids.len(), .ids.join(", "))]
    Hierarchy { ids: Vec<String> },
    #[error("invalid confidence: {0}")]
    Confidence(String),
    #[error("invalid soft distribution: {0}")]
    Distribution(String),
    #[error("duplicate example id `{0}`")]
    DuplicateId(String),
    #[error("dataset for language `{0}` is empty")]
    EmptyDataset(String),
    #[error("cannot split {n} examples into {k} folds")]
    FoldCount { n: usize, k: usize },
    #[error("examples without a {task} label: {}", .ids.join(", "))]
    MissingLabels { task: TaskId, ids: Vec<String> },
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("unknown label `{label}` for task {task}")]
    UnknownLabel { task: TaskId, label: String },
}

/// One of the three OffensEval sub-tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskId {
    /// Offensive (OFF) or not (NOT).
    A,
    /// Targeted insult (TIN) or untargeted profanity (UNT).
    B,
    /// Target is an individual (IND), a group (GRP) or other (OTH).
    C,
}

impl TaskId {
    pub const ALL: [TaskId; 3] = [TaskId::A, TaskId::B, TaskId::C];

    pub fn labels(self) -> &'static [&'static str] {
        match self {
            TaskId::A => &["OFF", "NOT"],
            TaskId::B => &["TIN", "UNT"],
            TaskId::C => &["IND", "GRP", "OTH"],
        }
    }

    pub fn num_classes(self) -> usize {
        self.labels().len()
    }

    pub fn label_index(self, label: &str) -> Option<usize> {
        self.labels().iter().position(|l| *l == label)
    }

    pub fn label_name(self, index: usize) -> &'static str {
        self.labels()[index]
    }

    pub fn parse_label(self, label: &str) -> Result<usize, CorpusError> {
        self.label_index(label).ok_or_else(|| CorpusError::UnknownLabel {
            task: self,
            label: label.to_owned(),
        })
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TaskId::A => "A",
            TaskId::B => "B",
            TaskId::C => "C",
        };
        f.write_str(s)
    }
}

impl FromStr for TaskId {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "A" | "a" => Ok(TaskId::A),
            "B" | "b" => Ok(TaskId::B),
            "C" | "c" => Ok(TaskId::C),
            _ => Err(CorpusError::UnknownTask(s.to_owned())),
        }
    }
}

/// Label indices for the hierarchy rules.
const OFF: usize = 0;
const NOT: usize = 1;
const TIN: usize = 0;
const UNT: usize = 1;

/// A probability vector over a task's ordered label set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftDistribution {
    task: TaskId,
    probs: Vec<f64>,
}

impl SoftDistribution {
    pub fn new(task: TaskId, probs: Vec<f64>) -> Result<Self, CorpusError> {
        if probs.len() != task.num_classes() {
            return Err(CorpusError::Distribution(format!(
                "task {task} has {} labels, got {} probabilities",
                task.num_classes(),
                probs.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(CorpusError::Distribution(format!(
                "probability {p} outside [0, 1]"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SOFT_SUM_TOLERANCE {
            return Err(CorpusError::Distribution(format!(
                "probabilities sum to {sum}"
            )));
        }
        Ok(SoftDistribution { task, probs })
    }

    pub fn one_hot(task: TaskId, label: usize) -> Self {
        let mut probs = vec![0.0; task.num_classes()];
        probs[label] = 1.0;
        SoftDistribution { task, probs }
    }

    pub fn uniform(task: TaskId) -> Self {
        let n = task.num_classes();
        SoftDistribution {
            task,
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn task(&self) -> TaskId {
        self.task
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }

    /// Most probable label; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// One post with its hard and/or soft labels.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: String,
    pub text: String,
    pub language: String,
    pub hard: BTreeMap<TaskId, usize>,
    pub soft: BTreeMap<TaskId, SoftDistribution>,
    /// Per-label standard deviations from SOLID files. Stored, never used.
    pub confidence_std: Option<Vec<f64>>,
}

impl LabeledExample {
    pub fn new(id: impl Into<String>, text: impl Into<String>, language: impl Into<String>) -> Self {
        LabeledExample {
            id: id.into(),
            text: text.into(),
            language: language.into(),
            ..Default::default()
        }
    }

    pub fn with_hard(mut self, task: TaskId, label: usize) -> Self {
        self.hard.insert(task, label);
        self
    }

    pub fn with_soft(mut self, soft: SoftDistribution) -> Self {
        self.soft.insert(soft.task(), soft);
        self
    }

    pub fn has_label(&self, task: TaskId) -> bool {
        self.hard.contains_key(&task) || self.soft.contains_key(&task)
    }
}

/// A broken rule of the A → B → C annotation hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HierarchyViolation {
    /// A=NOT but a B label is present.
    NotOffensiveWithType,
    /// A B label is present without a hard A label.
    TypeWithoutOffensive,
    /// B=UNT but a C label is present.
    UntargetedWithTarget,
    /// A C label is present without a hard B label.
    TargetWithoutTargeted,
}

impl fmt::Display for HierarchyViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::NotOffensiveWithType => "B label requires A=OFF, found A=NOT",
            Self::TypeWithoutOffensive => "B label requires A=OFF, A is absent",
            Self::UntargetedWithTarget => "C label requires B=TIN, found B=UNT",
            Self::TargetWithoutTargeted => "C label requires B=TIN, B is absent",
        };
        f.write_str(s)
    }
}

pub fn validate_hierarchy(example: &LabeledExample) -> Vec<HierarchyViolation> {
    let mut out = Vec::new();
    if example.has_label(TaskId::B) {
        match example.hard.get(&TaskId::A) {
            Some(&NOT) => out.push(HierarchyViolation::NotOffensiveWithType),
            None => out.push(HierarchyViolation::TypeWithoutOffensive),
            _ => {}
        }
    }
    if example.has_label(TaskId::C) {
        match example.hard.get(&TaskId::B) {
            Some(&UNT) => out.push(HierarchyViolation::UntargetedWithTarget),
            None => out.push(HierarchyViolation::TargetWithoutTargeted),
            _ => {}
        }
    }
    out
}

fn check_hierarchy(examples: &[LabeledExample]) -> Result<(), CorpusError> {
    let ids: Vec<String> = examples
        .iter()
        .filter(|e| !validate_hierarchy(e).is_empty())
        .map(|e| e.id.clone())
        .collect();
    if ids.is_empty() {
        Ok(())
    } else {
        Err(CorpusError::Hierarchy { ids })
    }
}

/// Replaces URLs with `URL` and user mentions with `@USER`. Case is kept.
pub fn normalize_text(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while !rest.is_empty() {
        let ws = rest.find(|c: char| !c.is_whitespace()).unwrap_or(rest.len());
        out.push_str(&rest[..ws]);
        rest = &rest[ws..];
        let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
        let word = &rest[..end];
        rest = &rest[end..];
        if word.is_empty() {
            continue;
        }
        if word.starts_with("http://") || word.starts_with("https://") || word.starts_with("www.") {
            out.push_str("URL");
        } else {
            out.push_str(&replace_mentions(word));
        }
    }
    out
}

fn replace_mentions(word: &str) -> String {
    let is_handle = |c: char| c.is_ascii_alphanumeric() || c == '_';
    let mut out = String::with_capacity(word.len());
    let mut chars = word.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        let handle_len = word[i + 1..].find(|c: char| !is_handle(c)).unwrap_or(word.len() - i - 1);
        if c == '@' && handle_len > 0 {
            out.push_str("@USER");
            for _ in 0..handle_len {
                chars.next();
            }
        } else {
            out.push(c);
        }
    }
    out
}

/// Absent labels are written as `NULL` or left empty.
fn optional_label(field: Option<&String>) -> Option<&str> {
    match field.map(String::as_str) {
        None | Some("") | Some("NULL") => None,
        Some(s) => Some(s),
    }
}

fn read(path: &Path) -> Result<Table, CorpusError> {
    let p = path.display().to_string();
    tsv::read_table(path)
        .map_err(|source| CorpusError::Io {
            path: p.clone(),
            source,
        })?
        .ok_or(CorpusError::MissingHeader { path: p })
}

/// Reads a TSV file with one header row.
pub fn read_tsv(path: &Path) -> Result<Table, CorpusError> {
    read(path)
}

/// Parses an OLID-style file: `id  tweet  subtask_a [subtask_b [subtask_c]]`.
pub fn parse_olid(path: &Path, language: &str) -> Result<Vec<LabeledExample>, CorpusError> {
    let table = read(path)?;
    parse_olid_table(&table, &path.display().to_string(), language)
}

pub(crate) fn parse_olid_table(
    table: &Table,
    path: &str,
    language: &str,
) -> Result<Vec<LabeledExample>, CorpusError> {
    const EXPECTED: [&str; 5] = ["id", "tweet", "subtask_a", "subtask_b", "subtask_c"];
    let width = table.header.len();
    if width < 3 || width > 5 || table.header[..] != EXPECTED[..width] {
        return Err(CorpusError::BadHeader {
            path: path.to_owned(),
            message: format!(
                "expected `{}`, found `{}`",
                EXPECTED.join("\\t"),
                table.header.join("\\t")
            ),
        });
    }
    let tasks = &TaskId::ALL[..width - 2];
    let mut out = Vec::with_capacity(table.rows.len());
    for row in &table.rows {
        let parse_err = |message: String| CorpusError::Parse {
            path: path.to_owned(),
            line: row.line,
            message,
        };
        if row.fields.len() != width {
            return Err(parse_err(format!(
                "expected {width} columns, found {}",
                row.fields.len()
            )));
        }
        if row.fields[0].is_empty() {
            return Err(parse_err("empty id".into()));
        }
        let mut ex = LabeledExample::new(&row.fields[0], normalize_text(&row.fields[1]), language);
        for (task, field) in tasks.iter().zip(&row.fields[2..]) {
            if let Some(label) = optional_label(Some(field)) {
                let idx = task.parse_label(label).map_err(|e| parse_err(e.to_string()))?;
                ex.hard.insert(*task, idx);
            }
        }
        out.push(ex);
    }
    check_hierarchy(&out)?;
    Ok(out)
}

/// Confidence input for [`confidence_to_soft`].
#[derive(Debug, Clone, PartialEq)]
pub enum Confidence {
    /// Probability of the first label (OFF for A, TIN for B).
    Scalar(f64),
    /// One confidence per label, in schema order.
    PerLabel(Vec<f64>),
}

pub fn confidence_to_soft(conf: &Confidence, task: TaskId) -> Result<SoftDistribution, CorpusError> {
    let in_range = |c: f64| (0.0..=1.0).contains(&c);
    match (conf, task) {
        (Confidence::Scalar(c), TaskId::A | TaskId::B) => {
            if !in_range(*c) {
                return Err(CorpusError::Confidence(format!("{c} outside [0, 1]")));
            }
            Ok(SoftDistribution {
                task,
                probs: vec![*c, 1.0 - c],
            })
        }
        (Confidence::PerLabel(v), TaskId::C) => {
            if v.len() != task.num_classes() {
                return Err(CorpusError::Confidence(format!(
                    "task C needs {} confidences, got {}",
                    task.num_classes(),
                    v.len()
                )));
            }
            if let Some(c) = v.iter().find(|c| !in_range(**c)) {
                return Err(CorpusError::Confidence(format!("{c} outside [0, 1]")));
            }
            let sum: f64 = v.iter().sum();
            if sum == 0.0 {
                return Err(CorpusError::Confidence(
                    "all-zero confidence vector has no distribution".into(),
                ));
            }
            Ok(SoftDistribution {
                task,
                probs: v.iter().map(|c| c / sum).collect(),
            })
        }
        (Confidence::Scalar(_), TaskId::C) => Err(CorpusError::Confidence(
            "task C needs one confidence per label".into(),
        )),
        (Confidence::PerLabel(_), _) => Err(CorpusError::Confidence(format!(
            "task {task} takes a single confidence"
        ))),
    }
}

/// Parses a SOLID distant-supervision file.
///
/// Tasks A and B use `id text average [std]`. Task C uses one confidence
/// column per label, named `IND GRP OTH` or `average_ind average_grp
/// average_oth`, optionally followed by `std_*` columns. B and C examples come
/// from the offensive subset, so they also receive hard A=OFF (and B=TIN for C)
/// to satisfy the hierarchy.
pub fn parse_solid_distant(path: &Path, task: TaskId) -> Result<Vec<LabeledExample>, CorpusError> {
    let table = read(path)?;
    let p = path.display().to_string();
    let bad_header = |message: String| CorpusError::BadHeader {
        path: p.clone(),
        message,
    };
    if table.header.len() < 2 || table.header[0] != "id" || table.header[1] != "text" {
        return Err(bad_header("first columns must be `id` and `text`".into()));
    }
    let find = |names: &[&str]| names.iter().find_map(|n| table.column(n));
    let (conf_cols, std_cols): (Vec<usize>, Vec<usize>) = match task {
        TaskId::A | TaskId::B => {
            let avg = find(&["average"]).ok_or_else(|| bad_header("missing `average` column".into()))?;
            (vec![avg], find(&["std"]).into_iter().collect())
        }
        TaskId::C => {
            let mut conf = Vec::new();
            let mut std = Vec::new();
            for label in task.labels() {
                let lower = label.to_lowercase();
                let c = find(&[label, &format!("average_{lower}")])
                    .ok_or_else(|| bad_header(format!("missing confidence column for {label}")))?;
                conf.push(c);
                if let Some(s) = find(&[&format!("std_{lower}")]) {
                    std.push(s);
                }
            }
            (conf, std)
        }
    };
    let width = table.header.len();
    let mut out = Vec::with_capacity(table.rows.len());
    for row in &table.rows {
        let parse_err = |message: String| CorpusError::Parse {
            path: p.clone(),
            line: row.line,
            message,
        };
        if row.fields.len() != width {
            return Err(parse_err(format!(
                "expected {width} columns, found {}",
                row.fields.len()
            )));
        }
        let num = |col: usize| -> Result<f64, CorpusError> {
            row.fields[col]
                .trim()
                .parse::<f64>()
                .map_err(|_| parse_err(format!("`{}` is not a number", row.fields[col])))
        };
        let confs = conf_cols.iter().map(|&c| num(c)).collect::<Result<Vec<_>, _>>()?;
        let conf = match task {
            TaskId::C => Confidence::PerLabel(confs),
            _ => Confidence::Scalar(confs[0]),
        };
        let soft = confidence_to_soft(&conf, task).map_err(|e| parse_err(e.to_string()))?;
        let mut ex = LabeledExample::new(&row.fields[0], normalize_text(&row.fields[1]), "en")
            .with_soft(soft);
        if !std_cols.is_empty() {
            ex.confidence_std = Some(std_cols.iter().map(|&c| num(c)).collect::<Result<_, _>>()?);
        }
        if task != TaskId::A {
            ex.hard.insert(TaskId::A, OFF);
        }
        if task == TaskId::C {
            ex.hard.insert(TaskId::B, TIN);
        }
        out.push(ex);
    }
    check_hierarchy(&out)?;
    Ok(out)
}

/// How per-language datasets are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MixStrategy {
    /// Dataset order, then file order.
    #[default]
    Concat,
}

/// Combines per-language datasets into one training set. Ids become
/// `language:id` and each example's language is set to its dataset tag.
pub fn mix_multilingual(
    datasets: Vec<(String, Vec<LabeledExample>)>,
    strategy: MixStrategy,
    allow_empty: bool,
) -> Result<Vec<LabeledExample>, CorpusError> {
    let MixStrategy::Concat = strategy;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(datasets.iter().map(|(_, d)| d.len()).sum());
    for (language, examples) in datasets {
        if examples.is_empty() && !allow_empty {
            return Err(CorpusError::EmptyDataset(language));
        }
        for mut ex in examples {
            ex.id = format!("{language}:{}", ex.id);
            if !seen.insert(ex.id.clone()) {
                return Err(CorpusError::DuplicateId(ex.id));
            }
            ex.language = language.clone();
            out.push(ex);
        }
    }
    Ok(out)
}

/// Pairs of example ids whose normalized text is identical, first occurrence
/// first.
pub fn find_duplicate_texts(examples: &[LabeledExample]) -> Vec<(String, String)> {
    let mut first: HashMap<&str, &str> = HashMap::new();
    let mut out = Vec::new();
    for ex in examples {
        match first.get(ex.text.as_str()) {
            Some(id) => out.push(((*id).to_owned(), ex.id.clone())),
            None => {
                first.insert(&ex.text, &ex.id);
            }
        }
    }
    out
}

/// Fold assignment for a list of examples, aligned with the input order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    k: usize,
    ids: Vec<String>,
    folds: Vec<usize>,
}

impl DatasetSplit {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Fold of the example at position `index` in the split input.
    pub fn fold(&self, index: usize) -> usize {
        self.folds[index]
    }

    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|i| i == id).map(|p| self.folds[p])
    }

    /// Positions held out in fold `fold`.
    pub fn held_out(&self, fold: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.folds[i] == fold).collect()
    }

    /// Positions used for training when `fold` is held out.
    pub fn training(&self, fold: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.folds[i] != fold).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.folds {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Stratified k-fold assignment keyed on (hard label, language).
///
/// Each stratum is shuffled with the seed, strata are laid out in key order
/// and positions are dealt round-robin to the folds. Every stratum and every
/// label therefore occupies a contiguous run, so per-class fold counts differ
/// by at most one.
pub fn stratified_kfold(
    examples: &[LabeledExample],
    task: TaskId,
    k: usize,
    seed: u64,
) -> Result<DatasetSplit, CorpusError> {
    let n = examples.len();
    if k < 2 || k > n {
        return Err(CorpusError::FoldCount { n, k });
    }
    let missing: Vec<String> = examples
        .iter()
        .filter(|e| !e.hard.contains_key(&task))
        .map(|e| e.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(CorpusError::MissingLabels { task, ids: missing });
    }
    let mut strata: BTreeMap<(usize, &str), Vec<usize>> = BTreeMap::new();
    for (i, e) in examples.iter().enumerate() {
        strata.entry((e.hard[&task], e.language.as_str())).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![0; n];
    let mut next = 0;
    for members in strata.values_mut() {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            folds[i] = next % k;
            next += 1;
        }
    }
    Ok(DatasetSplit {
        k,
        ids: examples.iter().map(|e| e.id.clone()).collect(),
        folds,
    })
}

/// Per-label counts for one language.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageCounts {
    pub counts: Vec<usize>,
    pub total: usize,
    /// Examples without a hard label for the task; not part of `total`.
    pub unlabeled: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub task: TaskId,
    pub languages: BTreeMap<String, LanguageCounts>,
}

impl CorpusStats {
    pub fn count(&self, language: &str, label: &str) -> usize {
        let idx = self.task.label_index(label);
        match (self.languages.get(language), idx) {
            (Some(c), Some(i)) => c.counts[i],
            _ => 0,
        }
    }

    pub fn total(&self, language: &str) -> usize {
        self.languages.get(language).map_or(0, |c| c.total)
    }

    /// Counts summed over all languages.
    pub fn overall(&self) -> LanguageCounts {
        let mut all = LanguageCounts {
            counts: vec![0; self.task.num_classes()],
            total: 0,
            unlabeled: 0,
        };
        for c in self.languages.values() {
            for (a, b) in all.counts.iter_mut().zip(&c.counts) {
                *a += b;
            }
            all.total += c.total;
            all.unlabeled += c.unlabeled;
        }
        all
    }

    /// Table layout: `language  <labels...>  TOTAL`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("language");
        for l in self.task.labels() {
            out.push('\t');
            out.push_str(l);
        }
        out.push_str("\tTOTAL\n");
        let overall = self.overall();
        let rows = self.languages.iter().map(|(l, c)| (l.as_str(), c));
        for (lang, c) in rows.chain(std::iter::once(("ALL", &overall))) {
            out.push_str(lang);
            for n in &c.counts {
                out.push_str(&format!("\t{n}"));
            }
            out.push_str(&format!("\t{}\n", c.total));
        }
        out
    }
}

pub fn stats(examples: &[LabeledExample], task: TaskId) -> CorpusStats {
    let mut languages: BTreeMap<String, LanguageCounts> = BTreeMap::new();
    for e in examples {
        let c = languages
            .entry(e.language.clone())
            .or_insert_with(|| LanguageCounts {
                counts: vec![0; task.num_classes()],
                total: 0,
                unlabeled: 0,
            });
        match e.hard.get(&task) {
            Some(&l) => {
                c.counts[l] += 1;
                c.total += 1;
            }
            None => c.unlabeled += 1,
        }
    }
    CorpusStats { task, languages }
}
