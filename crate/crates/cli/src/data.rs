//! Dataset, model and prediction file handling.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use offeval::corpus::{
    mix_multilingual, normalize_text, parse_olid, parse_solid_distant, read_tsv, LabeledExample, MixStrategy,
};
use offeval::distillation::{format_probability, read_soft_labels};
use offeval::encoder::{load_checkpoint, ModelParameters};
use offeval::tokenizer::Vocabulary;
use offeval::{SoftDistribution, TaskId};

use crate::args::PredFormat;
use crate::error::CliError;

pub const VOCAB_FILE: &str = "vocab.bpe";
pub const MODEL_FILE: &str = "model.ckpt";
pub const ENCODER_FILE: &str = "encoder.ckpt";

/// `PATH` or `LANG=PATH`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataSpec {
    pub language: Option<String>,
    pub path: PathBuf,
}

impl DataSpec {
    pub fn parse(s: &str) -> Self {
        if let Some((tag, path)) = s.split_once('=') {
            let is_tag = !tag.is_empty() && tag.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
            if is_tag && !path.is_empty() {
                return DataSpec {
                    language: Some(tag.to_string()),
                    path: PathBuf::from(path),
                };
            }
        }
        DataSpec {
            language: None,
            path: PathBuf::from(s),
        }
    }

    pub fn with_path(&self, path: PathBuf) -> Self {
        DataSpec {
            language: self.language.clone(),
            path,
        }
    }

    /// The explicit tag, else the file stem.
    fn tag(&self) -> String {
        self.language.clone().unwrap_or_else(|| {
            self.path
                .file_stem()
                .map_or_else(|| "und".to_string(), |s| s.to_string_lossy().into_owned())
        })
    }
}

impl fmt::Display for DataSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.language {
            Some(l) => write!(f, "{l}={}", self.path.display()),
            None => write!(f, "{}", self.path.display()),
        }
    }
}

pub fn require_exists(paths: &[PathBuf]) -> Result<(), CliError> {
    for p in paths {
        if !p.exists() {
            return Err(CliError::runtime("io", format!("{}: no such file or directory", p.display())));
        }
    }
    Ok(())
}

fn load_one(spec: &DataSpec, task: TaskId, solid: bool) -> Result<Vec<LabeledExample>, CliError> {
    let language = spec.language.clone().unwrap_or_else(|| "und".to_string());
    if solid {
        let mut data = parse_solid_distant(&spec.path, task)?;
        if spec.language.is_some() {
            for e in &mut data {
                e.language = language.clone();
            }
        }
        return Ok(data);
    }
    let table = read_tsv(&spec.path)?;
    if table.header.len() == 2 && table.header[0] == "id" && matches!(table.header[1].as_str(), "tweet" | "text") {
        // Unlabelled posts.
        return table
            .rows
            .iter()
            .map(|r| match &r.fields[..] {
                [id, text] => Ok(LabeledExample::new(id, normalize_text(text), language.as_str())),
                _ => Err(CliError::runtime(
                    "corpus",
                    format!("{}:{}: expected 2 columns", spec.path.display(), r.line),
                )),
            })
            .collect();
    }
    Ok(parse_olid(&spec.path, &language)?)
}

/// Loads one or more datasets. A single dataset keeps its ids; several are
/// mixed, with ids prefixed by their language tag.
pub fn load_labeled(specs: &[String], task: TaskId, solid: bool) -> Result<Vec<LabeledExample>, CliError> {
    let specs: Vec<DataSpec> = specs.iter().map(|s| DataSpec::parse(s)).collect();
    if let [only] = &specs[..] {
        return load_one(only, task, solid);
    }
    let mut sets = Vec::with_capacity(specs.len());
    for s in &specs {
        sets.push((s.tag(), load_one(s, task, solid)?));
    }
    Ok(mix_multilingual(sets, MixStrategy::Concat, false)?)
}

/// Attaches soft labels (joined on id) to the examples; returns how many
/// examples received one.
pub fn attach_soft_labels(examples: &mut [LabeledExample], path: &Path, task: TaskId) -> Result<usize, CliError> {
    let rows: HashMap<String, SoftDistribution> = read_soft_labels(path, task)?.into_iter().collect();
    let mut attached = 0;
    for e in examples.iter_mut() {
        if let Some(q) = rows.get(&e.id) {
            e.soft.insert(task, q.clone());
            attached += 1;
        }
    }
    Ok(attached)
}

/// Raw documents for vocabulary learning and pretraining: the `tweet` or
/// `text` column of a TSV with such a header, else one document per line.
pub fn load_texts(paths: &[PathBuf]) -> Result<Vec<String>, CliError> {
    let mut out = Vec::new();
    for path in paths {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut lines = text.lines();
        let header: Vec<&str> = lines.clone().next().unwrap_or("").split('\t').collect();
        let column = header.iter().position(|h| *h == "tweet" || *h == "text").filter(|_| header.len() > 1);
        match column {
            Some(c) => {
                lines.next();
                for (i, line) in lines.enumerate() {
                    if line.is_empty() {
                        continue;
                    }
                    let field = line.split('\t').nth(c).ok_or_else(|| {
                        CliError::runtime("corpus", format!("{}:{}: missing text column", path.display(), i + 2))
                    })?;
                    out.push(normalize_text(field));
                }
            }
            None => out.extend(lines.filter(|l| !l.trim().is_empty()).map(normalize_text)),
        }
    }
    if out.is_empty() {
        return Err(CliError::runtime("corpus", "corpus contains no text"));
    }
    Ok(out)
}

/// A vocabulary file, or a directory containing `vocab.bpe`.
pub fn vocab_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(VOCAB_FILE)
    } else {
        path.to_path_buf()
    }
}

pub fn load_vocab(path: &Path) -> Result<Vocabulary, CliError> {
    Ok(Vocabulary::load(&vocab_path(path))?)
}

/// A checkpoint file, or a run directory holding `model.ckpt` or `encoder.ckpt`.
pub fn checkpoint_path(path: &Path) -> Result<PathBuf, CliError> {
    if !path.is_dir() {
        return Ok(path.to_path_buf());
    }
    [MODEL_FILE, ENCODER_FILE]
        .iter()
        .map(|f| path.join(f))
        .find(|p| p.exists())
        .ok_or_else(|| {
            CliError::runtime(
                "io",
                format!("{}: no {MODEL_FILE} or {ENCODER_FILE} in directory", path.display()),
            )
        })
}

/// The explicit vocabulary, else `vocab.bpe` beside the checkpoint.
pub fn vocab_for(checkpoint: &Path, explicit: Option<&Path>) -> Result<PathBuf, CliError> {
    if let Some(v) = explicit {
        return Ok(vocab_path(v));
    }
    let dir = if checkpoint.is_dir() {
        checkpoint.to_path_buf()
    } else {
        checkpoint.parent().map(Path::to_path_buf).unwrap_or_default()
    };
    let v = dir.join(VOCAB_FILE);
    if v.exists() {
        Ok(v)
    } else {
        Err(CliError::Usage(format!(
            "no --vocab given and no {VOCAB_FILE} next to {}",
            checkpoint.display()
        )))
    }
}

pub fn load_model(path: &Path) -> Result<ModelParameters<f64>, CliError> {
    Ok(load_checkpoint(&checkpoint_path(path)?)?)
}

/// `fold-<i>.ckpt` members of an ensemble directory, in fold order.
pub fn ensemble_members(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut members: Vec<(usize, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if let Some(i) = name
            .strip_prefix("fold-")
            .and_then(|r| r.strip_suffix(".ckpt"))
            .and_then(|i| i.parse().ok())
        {
            members.push((i, path));
        }
    }
    if members.is_empty() {
        return Err(CliError::runtime("io", format!("{}: no fold-<i>.ckpt members", dir.display())));
    }
    members.sort();
    Ok(members.into_iter().map(|(_, p)| p).collect())
}

pub struct Prediction {
    pub id: String,
    pub label: usize,
    pub probs: Option<Vec<f64>>,
}

pub fn predictions_to_string(preds: &[Prediction], task: TaskId, format: PredFormat) -> String {
    let mut out = String::new();
    match format {
        PredFormat::Tsv => {
            out.push_str("id\tlabel");
            for l in task.labels() {
                out.push('\t');
                out.push_str(l);
            }
            out.push('\n');
            for p in preds {
                out.push_str(&p.id);
                out.push('\t');
                out.push_str(task.label_name(p.label));
                for &x in p.probs.iter().flatten() {
                    out.push('\t');
                    out.push_str(&format_probability(x));
                }
                out.push('\n');
            }
        }
        PredFormat::Csv => {
            for p in preds {
                out.push_str(&p.id);
                out.push(',');
                out.push_str(task.label_name(p.label));
                out.push('\n');
            }
        }
    }
    out
}

/// `id -> label index` from a prediction file: CSV `id,label` without a
/// header when the extension is `.csv`, else TSV with `id` and `label`
/// columns.
pub fn read_predictions(path: &Path, task: TaskId) -> Result<BTreeMap<String, usize>, CliError> {
    let bad = |line: usize, m: String| CliError::runtime("predictions", format!("{}:{line}: {m}", path.display()));
    let mut out = BTreeMap::new();
    let mut insert = |line: usize, id: &str, label: &str| -> Result<(), CliError> {
        let y = task.label_index(label.trim()).ok_or_else(|| bad(line, format!("unknown {task} label `{label}`")))?;
        if out.insert(id.to_string(), y).is_some() {
            return Err(bad(line, format!("duplicate id `{id}`")));
        }
        Ok(())
    };
    if path.extension().is_some_and(|e| e == "csv") {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
            let (id, label) = line.split_once(',').ok_or_else(|| bad(i + 1, "expected `id,label`".into()))?;
            insert(i + 1, id, label)?;
        }
    } else {
        let table = read_tsv(path)?;
        let (id, label) = match (table.column("id"), table.column("label")) {
            (Some(i), Some(l)) => (i, l),
            _ => return Err(bad(1, "expected `id` and `label` columns".into())),
        };
        for row in &table.rows {
            let get = |c: usize| row.fields.get(c).ok_or_else(|| bad(row.line, "missing column".into()));
            insert(row.line, get(id)?, get(label)?)?;
        }
    }
    Ok(out)
}

/// Gold labels for `task`: an `id label` TSV, or any dataset accepted by
/// [`load_labeled`]. Examples without a label for the task are skipped.
pub fn read_gold(path: &Path, task: TaskId) -> Result<Vec<(String, usize)>, CliError> {
    let table = read_tsv(path)?;
    if table.column("label").is_some() && table.column("tweet").is_none() {
        return Ok(read_predictions(path, task)?.into_iter().collect());
    }
    let data = load_labeled(&[path.display().to_string()], task, false)?;
    Ok(data
        .into_iter()
        .filter_map(|e| e.hard.get(&task).map(|&y| (e.id.clone(), y)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn data_specs() {
        assert_eq!(
            DataSpec::parse("da=/tmp/x=y.tsv"),
            DataSpec {
                language: Some("da".into()),
                path: "/tmp/x=y.tsv".into()
            }
        );
        assert_eq!(DataSpec::parse("/tmp/a=b").language, None);
        assert_eq!(DataSpec::parse("plain.tsv").to_string(), "plain.tsv");
        assert_eq!(DataSpec::parse("en=a.tsv").to_string(), "en=a.tsv");
    }

    #[test]
    fn prediction_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let preds = vec![
            Prediction {
                id: "1".into(),
                label: 0,
                probs: Some(vec![0.75, 0.25]),
            },
            Prediction {
                id: "2".into(),
                label: 1,
                probs: Some(vec![0.5, 0.5]),
            },
        ];
        for (format, name) in [(PredFormat::Tsv, "p.tsv"), (PredFormat::Csv, "p.csv")] {
            let path = dir.path().join(name);
            fs::write(&path, predictions_to_string(&preds, TaskId::A, format)).unwrap();
            let back = read_predictions(&path, TaskId::A).unwrap();
            assert_eq!(back.into_iter().collect::<Vec<_>>(), vec![("1".into(), 0), ("2".into(), 1)]);
        }
        let csv = predictions_to_string(&preds, TaskId::A, PredFormat::Csv);
        assert_eq!(csv, "1,OFF\n2,NOT\n");
    }

    #[test]
    fn texts_from_tsv_and_lines() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.tsv");
        fs::write(&a, "id\ttweet\tsubtask_a\n1\thello there\tNOT\n").unwrap();
        let b = dir.path().join("b.txt");
        fs::write(&b, "one line\n\nanother\n").unwrap();
        assert_eq!(load_texts(&[a, b]).unwrap(), vec!["hello there", "one line", "another"]);
    }
}
