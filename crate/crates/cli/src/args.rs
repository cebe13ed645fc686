use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use offeval::TaskId;
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "offeval", version, about = "Offensive language detection pipeline")]
pub struct Cli {
    /// Settings file (`[section]` headers, `key = value` lines).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one setting, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn a byte-level BPE vocabulary from raw text.
    BuildVocab(BuildVocabArgs),
    /// Masked-language-model pretraining of the encoder.
    Pretrain(PretrainArgs),
    /// Train a classifier head (and encoder) on labelled data.
    Finetune(FinetuneArgs),
    /// Build teacher soft labels and train a student on them.
    Distill(DistillArgs),
    /// k-fold cross-validation ensemble with averaged predictions.
    Crossval(CrossvalArgs),
    /// Label a dataset with a model or an ensemble.
    Predict(PredictArgs),
    /// Score prediction files against gold labels.
    Evaluate(EvaluateArgs),
    /// Label counts per language.
    Stats(StatsArgs),
    /// Repeat a run from its manifest.
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum Task {
    #[value(name = "A", alias = "a")]
    A,
    #[value(name = "B", alias = "b")]
    B,
    #[value(name = "C", alias = "c")]
    C,
}

impl Task {
    pub fn id(self) -> TaskId {
        match self {
            Task::A => TaskId::A,
            Task::B => TaskId::B,
            Task::C => TaskId::C,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    Hard,
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredFormat {
    /// `id label <probabilities>` with a header row.
    #[default]
    Tsv,
    /// `id,label` without a header.
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableArg {
    #[default]
    Text,
    Tsv,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct BuildVocabArgs {
    /// Text files (one document per line) or TSV files with a `tweet`/`text` column.
    #[arg(long, required = true, num_args = 1..)]
    pub corpus: Vec<PathBuf>,
    /// Target vocabulary size (overrides `tokenizer.vocab_size`).
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct PretrainArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub corpus: Vec<PathBuf>,
    /// Vocabulary file or a `build-vocab` run directory.
    #[arg(long)]
    pub vocab: PathBuf,
    /// Continue from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct FinetuneArgs {
    /// Starting checkpoint or run directory (e.g. a pretrain run).
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Defaults to `vocab.bpe` next to the `--init` checkpoint.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Training data, `PATH` or `LANG=PATH`; several are mixed.
    #[arg(long, required = true, num_args = 1..)]
    pub data: Vec<String>,
    /// Validation data, scored after every epoch.
    #[arg(long, num_args = 1..)]
    pub valid: Vec<String>,
    #[arg(long, value_enum)]
    pub task: Task,
    /// Target type (overrides `finetune.loss`).
    #[arg(long, value_enum)]
    pub loss: Option<Loss>,
    /// Soft-label file (`id` plus one column per label) joined on id.
    #[arg(long)]
    pub soft_labels: Option<PathBuf>,
    /// Read `--data` as SOLID distant-supervision files.
    #[arg(long)]
    pub solid: bool,
    /// Repeat with this many consecutive seeds and summarize validation macro-F1.
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct DistillArgs {
    /// Teachers as `PATH` or `NAME=PATH`: a model checkpoint, a run
    /// directory, or a soft-label / prediction TSV.
    #[arg(long, required = true, num_args = 1..)]
    pub teachers: Vec<String>,
    /// Teacher weights in `--teachers` order; normalized to sum to 1.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub weights: Vec<f64>,
    #[arg(long, required = true, num_args = 1..)]
    pub data: Vec<String>,
    #[arg(long, num_args = 1..)]
    pub valid: Vec<String>,
    #[arg(long, value_enum)]
    pub task: Task,
    /// Student vocabulary; defaults to the first model teacher's.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Student starting checkpoint.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Settings file for the student, applied after `--config`.
    #[arg(long)]
    pub student_config: Option<PathBuf>,
    #[arg(long)]
    pub solid: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct CrossvalArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub data: Vec<String>,
    #[arg(long, value_enum)]
    pub task: Task,
    /// Number of folds (overrides `crossval.k`).
    #[arg(long)]
    pub k: Option<usize>,
    /// Folds trained at once (overrides `crossval.jobs`; 0 = all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Data the ensemble predicts; the training data when absent.
    #[arg(long, num_args = 1..)]
    pub test: Vec<String>,
    #[arg(long, value_enum)]
    pub loss: Option<Loss>,
    #[arg(long)]
    pub solid: bool,
    /// Repeat with this many consecutive seeds; needs labelled `--test` data.
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[command(group(ArgGroup::new("source").required(true).args(["model", "ensemble"])))]
pub struct PredictArgs {
    /// Checkpoint or run directory holding `model.ckpt`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Directory of `fold-<i>.ckpt` members (a crossval run).
    #[arg(long)]
    pub ensemble: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, required = true, num_args = 1..)]
    pub data: Vec<String>,
    #[arg(long, value_enum)]
    pub task: Task,
    #[arg(long, value_enum, default_value_t)]
    pub format: PredFormat,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct EvaluateArgs {
    /// OLID-style file or `id label` TSV.
    #[arg(long)]
    pub gold: PathBuf,
    /// Prediction files; several give a comparison table.
    #[arg(long, required = true, num_args = 1..)]
    pub pred: Vec<PathBuf>,
    #[arg(long, value_enum)]
    pub task: Task,
    #[arg(long, value_enum, default_value_t)]
    pub format: TableArg,
    /// Write the table here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct StatsArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub data: Vec<String>,
    #[arg(long, value_enum, default_value = "A")]
    pub task: Task,
    #[arg(long)]
    pub solid: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct RerunArgs {
    /// `manifest.json` or the run directory containing it.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// The commands that produce a run directory, as stored in a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Invocation {
    BuildVocab(BuildVocabArgs),
    Pretrain(PretrainArgs),
    Finetune(FinetuneArgs),
    Distill(DistillArgs),
    Crossval(CrossvalArgs),
    Predict(PredictArgs),
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

fn absolute_opt(p: &mut Option<PathBuf>) {
    if let Some(x) = p {
        *x = absolute(x);
    }
}

fn absolute_specs(specs: &mut [String]) {
    for s in specs {
        let spec = crate::data::DataSpec::parse(s);
        *s = spec.with_path(absolute(&spec.path)).to_string();
    }
}

impl Invocation {
    pub fn name(&self) -> &'static str {
        match self {
            Invocation::BuildVocab(_) => "build-vocab",
            Invocation::Pretrain(_) => "pretrain",
            Invocation::Finetune(_) => "finetune",
            Invocation::Distill(_) => "distill",
            Invocation::Crossval(_) => "crossval",
            Invocation::Predict(_) => "predict",
        }
    }

    pub fn out(&self) -> &Path {
        match self {
            Invocation::BuildVocab(a) => &a.out,
            Invocation::Pretrain(a) => &a.out,
            Invocation::Finetune(a) => &a.out,
            Invocation::Distill(a) => &a.out,
            Invocation::Crossval(a) => &a.out,
            Invocation::Predict(a) => &a.out,
        }
    }

    pub fn set_out(&mut self, out: PathBuf) {
        match self {
            Invocation::BuildVocab(a) => a.out = out,
            Invocation::Pretrain(a) => a.out = out,
            Invocation::Finetune(a) => a.out = out,
            Invocation::Distill(a) => a.out = out,
            Invocation::Crossval(a) => a.out = out,
            Invocation::Predict(a) => a.out = out,
        }
    }

    /// Rewrites every path as an absolute path.
    pub fn absolutize(&mut self) {
        match self {
            Invocation::BuildVocab(a) => {
                a.corpus.iter_mut().for_each(|p| *p = absolute(p));
                a.out = absolute(&a.out);
            }
            Invocation::Pretrain(a) => {
                a.corpus.iter_mut().for_each(|p| *p = absolute(p));
                a.vocab = absolute(&a.vocab);
                absolute_opt(&mut a.init);
                a.out = absolute(&a.out);
            }
            Invocation::Finetune(a) => {
                absolute_opt(&mut a.init);
                absolute_opt(&mut a.vocab);
                absolute_specs(&mut a.data);
                absolute_specs(&mut a.valid);
                absolute_opt(&mut a.soft_labels);
                a.out = absolute(&a.out);
            }
            Invocation::Distill(a) => {
                absolute_specs(&mut a.teachers);
                absolute_specs(&mut a.data);
                absolute_specs(&mut a.valid);
                absolute_opt(&mut a.vocab);
                absolute_opt(&mut a.init);
                absolute_opt(&mut a.student_config);
                a.out = absolute(&a.out);
            }
            Invocation::Crossval(a) => {
                absolute_specs(&mut a.data);
                absolute_specs(&mut a.test);
                absolute_opt(&mut a.init);
                absolute_opt(&mut a.vocab);
                a.out = absolute(&a.out);
            }
            Invocation::Predict(a) => {
                absolute_opt(&mut a.model);
                absolute_opt(&mut a.ensemble);
                absolute_opt(&mut a.vocab);
                absolute_specs(&mut a.data);
                a.out = absolute(&a.out);
            }
        }
    }

    /// Files and directories the run reads, in argument order.
    pub fn inputs(&self) -> Vec<PathBuf> {
        let specs = |s: &[String]| s.iter().map(|x| crate::data::DataSpec::parse(x).path).collect::<Vec<_>>();
        let mut out = Vec::new();
        match self {
            Invocation::BuildVocab(a) => out.extend(a.corpus.iter().cloned()),
            Invocation::Pretrain(a) => {
                out.extend(a.corpus.iter().cloned());
                out.push(a.vocab.clone());
                out.extend(a.init.clone());
            }
            Invocation::Finetune(a) => {
                out.extend(a.init.clone());
                out.extend(a.vocab.clone());
                out.extend(specs(&a.data));
                out.extend(specs(&a.valid));
                out.extend(a.soft_labels.clone());
            }
            Invocation::Distill(a) => {
                out.extend(specs(&a.teachers));
                out.extend(specs(&a.data));
                out.extend(specs(&a.valid));
                out.extend(a.vocab.clone());
                out.extend(a.init.clone());
                out.extend(a.student_config.clone());
            }
            Invocation::Crossval(a) => {
                out.extend(specs(&a.data));
                out.extend(specs(&a.test));
                out.extend(a.init.clone());
                out.extend(a.vocab.clone());
            }
            Invocation::Predict(a) => {
                out.extend(a.model.clone());
                out.extend(a.ensemble.clone());
                out.extend(a.vocab.clone());
                out.extend(specs(&a.data));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn parses_evaluate() {
        let cli = Cli::try_parse_from(["offeval", "evaluate", "--gold", "g.tsv", "--pred", "p.tsv", "--task", "A"]).unwrap();
        match cli.command {
            Command::Evaluate(a) => {
                assert_eq!(a.task, Task::A);
                assert_eq!(a.pred, vec![PathBuf::from("p.tsv")]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn predict_needs_one_source() {
        let base = ["offeval", "predict", "--data", "d.tsv", "--task", "a", "--out", "o"];
        assert!(Cli::try_parse_from(base).is_err());
        let both = [&base[..], &["--model", "m", "--ensemble", "e"]].concat();
        assert!(Cli::try_parse_from(both).is_err());
    }

    #[test]
    fn invocation_round_trips_through_json() {
        let mut inv = Invocation::Crossval(CrossvalArgs {
            data: vec!["da=d.tsv".into()],
            task: Task::A,
            k: Some(3),
            jobs: None,
            init: None,
            vocab: Some("v.bpe".into()),
            test: vec![],
            loss: Some(Loss::Hard),
            solid: false,
            seeds: 1,
            out: "run".into(),
        });
        inv.absolutize();
        assert!(inv.out().is_absolute());
        let json = serde_json::to_string(&inv).unwrap();
        assert!(json.contains("\"command\":\"crossval\""));
        assert_eq!(serde_json::from_str::<Invocation>(&json).unwrap(), inv);
    }
}
