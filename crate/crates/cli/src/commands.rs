use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use offeval::corpus::{stats as corpus_stats, LabeledExample};
use offeval::distillation::{
    distill_student, ensemble_soft_labels, format_probability, mean_kl, soft_labels_to_tsv, ModelTeacher,
    PredictionFileTeacher, PredictionSource, TeacherEnsemble,
};
use offeval::encoder::{check_architecture, init_params, save_checkpoint, EncoderConfig, ModelParameters};
use offeval::ensemble::{predict_ensemble, train_cv_ensemble, CvEnsemble, CvOptions, SweepSummary};
use offeval::evaluation::{compare_runs, confusion, format_score, report, MetricsReport, TableFormat};
use offeval::tokenizer::{build_vocab, encode};
use offeval::training::{
    finetune, pretrain_mlm, FinetuneOptions, History, LossMode, TrainConfig, TrainError, TrainingExample,
};
use offeval::{TaskId, TokenSequence, Vocabulary};
use rayon::prelude::*;
use serde_json::json;

use crate::args::*;
use crate::data::*;
use crate::error::CliError;
use crate::manifest::{digest, InputRecord, RunDir, RunManifest, MANIFEST_FILE, TOOL};
use crate::settings::Settings;

/// Copies command-line flags that shadow settings keys into `settings`.
pub fn apply_flags(inv: &Invocation, settings: &mut Settings) {
    let loss = |l: Loss| match l {
        Loss::Hard => LossMode::Hard,
        Loss::Soft => LossMode::Soft,
    };
    match inv {
        Invocation::BuildVocab(a) => {
            if let Some(n) = a.size {
                settings.vocab_size = n;
            }
        }
        Invocation::Finetune(a) => {
            if let Some(l) = a.loss {
                settings.loss = loss(l);
            }
        }
        Invocation::Crossval(a) => {
            if let Some(l) = a.loss {
                settings.loss = loss(l);
            }
            if let Some(k) = a.k {
                settings.k = k;
            }
            if let Some(j) = a.jobs {
                settings.jobs = j;
            }
        }
        _ => {}
    }
}

/// Runs a run-directory command: checks inputs, stages the directory with
/// its manifest, does the work and publishes the directory.
pub fn run_invocation(mut inv: Invocation, settings: Settings) -> Result<PathBuf, CliError> {
    inv.absolutize();
    let inputs = inv.inputs();
    require_exists(&inputs)?;
    let inputs = inputs
        .into_iter()
        .map(|path| {
            let sha256 = digest(&path)?;
            Ok(InputRecord { path, sha256 })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let manifest = RunManifest {
        tool: TOOL.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: inv.name().to_string(),
        invocation: inv.clone(),
        config: settings.to_map(),
        seed: settings.train.seed,
        inputs,
        outputs: Vec::new(),
    };
    let mut run = RunDir::create(inv.out(), manifest)?;
    run.file(MANIFEST_FILE);
    match &inv {
        Invocation::BuildVocab(a) => build_vocab_cmd(a, &settings, &mut run)?,
        Invocation::Pretrain(a) => pretrain_cmd(a, &settings, &mut run)?,
        Invocation::Finetune(a) => finetune_cmd(a, &settings, &mut run)?,
        Invocation::Distill(a) => distill_cmd(a, &settings, &mut run)?,
        Invocation::Crossval(a) => crossval_cmd(a, &settings, &mut run)?,
        Invocation::Predict(a) => predict_cmd(a, &mut run)?,
    }
    run.commit()
}

/// Reruns a stored invocation with its recorded settings into `out`.
pub fn rerun(a: &RerunArgs) -> Result<PathBuf, CliError> {
    let path = if a.manifest.is_dir() {
        a.manifest.join(MANIFEST_FILE)
    } else {
        a.manifest.clone()
    };
    let m = RunManifest::load(&path)?;
    if m.version != env!("CARGO_PKG_VERSION") {
        warn!("manifest written by version {}, running {}", m.version, env!("CARGO_PKG_VERSION"));
    }
    for input in &m.inputs {
        if !input.path.exists() {
            return Err(CliError::runtime("io", format!("{}: no such file or directory", input.path.display())));
        }
        if digest(&input.path)? != input.sha256 {
            return Err(CliError::runtime(
                "manifest",
                format!("{} changed since the recorded run", input.path.display()),
            ));
        }
    }
    let settings = Settings::from_map(&m.config)
        .map_err(|e| CliError::runtime("manifest", format!("{}: {}", path.display(), e.message())))?;
    let mut inv = m.invocation;
    inv.set_out(a.out.clone());
    run_invocation(inv, settings)
}

fn copy_vocab(vocab: &Vocabulary, run: &mut RunDir) -> Result<(), CliError> {
    Ok(vocab.save(&run.file(VOCAB_FILE))?)
}

fn save_model(params: &ModelParameters<f64>, run: &mut RunDir, name: &str) -> Result<(), CliError> {
    Ok(save_checkpoint(params, &run.file(name))?)
}

/// Parameters to start training from: the checkpoint when given (which
/// then fixes the architecture), else a fresh model from the settings.
fn starting_params(
    init: Option<&Path>,
    settings: &Settings,
    vocab: &Vocabulary,
    seed: u64,
) -> Result<ModelParameters<f64>, CliError> {
    match init {
        Some(path) => {
            let p = load_model(path)?;
            if p.config().vocab_size != vocab.size() {
                return Err(CliError::runtime(
                    "checkpoint",
                    format!(
                        "{} expects a vocabulary of {} tokens, the vocabulary has {}",
                        path.display(),
                        p.config().vocab_size,
                        vocab.size()
                    ),
                ));
            }
            Ok(p)
        }
        None => {
            let config = settings.encoder.to_config(vocab.size());
            Ok(init_params(&config, seed)?)
        }
    }
}

fn model_vocab(init: Option<&Path>, vocab: Option<&Path>) -> Result<Vocabulary, CliError> {
    match (init, vocab) {
        (_, Some(v)) => load_vocab(v),
        (Some(i), None) => load_vocab(&vocab_for(i, None)?),
        (None, None) => Err(CliError::Usage("either --vocab or --init is required".into())),
    }
}

fn training_examples(data: &[LabeledExample], task: TaskId, vocab: &Vocabulary, max_len: usize) -> Vec<TrainingExample> {
    data.iter()
        .map(|e| TrainingExample::from_labeled(e, task, vocab, max_len))
        .collect()
}

/// Examples that yield a target under the loss mode.
fn usable(data: Vec<TrainingExample>, mode: LossMode, hard_as_one_hot: bool) -> Vec<TrainingExample> {
    let before = data.len();
    let kept: Vec<TrainingExample> = data
        .into_iter()
        .filter(|e| match mode {
            LossMode::Hard => e.hard.is_some(),
            LossMode::Soft => e.soft.is_some() || (hard_as_one_hot && e.hard.is_some()),
        })
        .collect();
    if kept.len() < before {
        info!("skipping {} examples without a usable label", before - kept.len());
    }
    kept
}

struct Scored {
    predictions: Vec<Prediction>,
    report: Option<MetricsReport>,
}

/// Averaged predictions of `members` on `data`, scored where gold exists.
fn score(
    members: &[ModelParameters<f64>],
    data: &[TrainingExample],
    task: TaskId,
) -> Result<Scored, CliError> {
    let seqs: Vec<TokenSequence> = data.iter().map(|e| e.tokens.clone()).collect();
    let out = predict_ensemble(members, &seqs, task)?;
    let mut golds = Vec::new();
    let mut preds = Vec::new();
    let predictions = data
        .iter()
        .zip(out)
        .map(|(e, (q, label))| {
            if let Some(g) = e.gold() {
                golds.push(g);
                preds.push(label);
            }
            Prediction {
                id: e.id.clone(),
                label,
                probs: Some(q.into_probs()),
            }
        })
        .collect();
    let report = if golds.is_empty() {
        None
    } else {
        Some(report(&confusion(&golds, &preds, task)?))
    };
    Ok(Scored { predictions, report })
}

/// Per-class precision, recall, F1 and support, then macro-F1.
pub fn render_report(r: &MetricsReport, format: TableArg) -> String {
    let mut rows = vec![vec![
        "label".to_string(),
        "precision".into(),
        "recall".into(),
        "f1".into(),
        "support".into(),
    ]];
    for c in &r.classes {
        rows.push(vec![
            c.label.clone(),
            format_score(c.precision),
            format_score(c.recall),
            format_score(c.f1),
            c.support.to_string(),
        ]);
    }
    let total: u64 = r.classes.iter().map(|c| c.support).sum();
    rows.push(vec![
        "macro_F1".into(),
        String::new(),
        String::new(),
        r.macro_f1.map_or("-".into(), format_score),
        total.to_string(),
    ]);
    let mut out = String::new();
    match format {
        TableArg::Tsv => {
            for row in rows {
                out.push_str(&row.join("\t"));
                out.push('\n');
            }
        }
        TableArg::Text => {
            let widths: Vec<usize> = (0..5).map(|i| rows.iter().map(|r| r[i].len()).max().unwrap_or(0)).collect();
            for row in rows {
                let mut line = format!("{:<w$}", row[0], w = widths[0]);
                for (cell, w) in row.iter().zip(&widths).skip(1) {
                    let _ = write!(line, "  {cell:>w$}");
                }
                out.push_str(line.trim_end());
                out.push('\n');
            }
        }
    }
    out
}

fn table_format(f: TableArg) -> TableFormat {
    match f {
        TableArg::Text => TableFormat::Text,
        TableArg::Tsv => TableFormat::Tsv,
    }
}

fn history_jsonl(history: &History, extra: &[f64], key: &str) -> String {
    let mut out = String::new();
    for (i, r) in history.epochs.iter().enumerate() {
        let mut v = serde_json::to_value(r).expect("record serializes");
        if let Some(x) = extra.get(i) {
            v[key] = json!(x);
        }
        out.push_str(&v.to_string());
        out.push('\n');
    }
    out
}

fn build_vocab_cmd(a: &BuildVocabArgs, s: &Settings, run: &mut RunDir) -> Result<(), CliError> {
    let texts = load_texts(&a.corpus)?;
    let vocab = build_vocab(&texts, s.vocab_size)?;
    info!("learned {} tokens ({} merges) from {} documents", vocab.size(), vocab.merges().len(), texts.len());
    copy_vocab(&vocab, run)
}

fn pretrain_cmd(a: &PretrainArgs, s: &Settings, run: &mut RunDir) -> Result<(), CliError> {
    let vocab = load_vocab(&a.vocab)?;
    let texts = load_texts(&a.corpus)?;
    let params = starting_params(a.init.as_deref(), s, &vocab, s.train.seed)?;
    let max_len = params.config().max_len;
    let corpus: Vec<TokenSequence> = texts.iter().map(|t| encode(t, &vocab, max_len)).collect();
    let config = TrainConfig {
        epochs: s.pretrain_epochs,
        ..s.train.clone()
    };
    let (params, losses) = pretrain_mlm(params, &corpus, &config, &s.masking, |epoch, _, p| {
        save_checkpoint(p, &run.file(&format!("epoch-{epoch}.ckpt"))).map_err(|e| TrainError::Callback(e.to_string()))
    })?;
    save_model(&params, run, ENCODER_FILE)?;
    let history: String = losses
        .iter()
        .enumerate()
        .map(|(i, l)| json!({"epoch": i + 1, "mlm_loss": l}).to_string() + "\n")
        .collect();
    run.write("history.jsonl", history)?;
    copy_vocab(&vocab, run)
}

fn finetune_cmd(a: &FinetuneArgs, s: &Settings, run: &mut RunDir) -> Result<(), CliError> {
    if a.seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    if a.seeds > 1 && a.valid.is_empty() {
        return Err(CliError::Usage("--seeds above 1 needs --valid data to score".into()));
    }
    let task = a.task.id();
    let vocab = model_vocab(a.init.as_deref(), a.vocab.as_deref())?;
    let mut data = load_labeled(&a.data, task, a.solid)?;
    if let Some(path) = &a.soft_labels {
        let n = attach_soft_labels(&mut data, path, task)?;
        info!("attached soft labels to {n} of {} examples", data.len());
    }
    let probe = starting_params(a.init.as_deref(), s, &vocab, s.train.seed)?;
    let max_len = probe.config().max_len;
    drop(probe);
    let train = usable(training_examples(&data, task, &vocab, max_len), s.loss, s.hard_as_one_hot);
    let valid = if a.valid.is_empty() {
        None
    } else {
        Some(training_examples(&load_labeled(&a.valid, task, false)?, task, &vocab, max_len))
    };

    let train_seed = |seed: u64| -> Result<(ModelParameters<f64>, History), CliError> {
        let init = starting_params(a.init.as_deref(), s, &vocab, seed)?;
        let config = TrainConfig {
            seed,
            ..s.train.clone()
        };
        let options = FinetuneOptions {
            validation: valid.as_deref(),
            hard_as_one_hot: s.hard_as_one_hot,
        };
        Ok(finetune(init, &train, task, &config, s.loss, &options, |_, _| Ok(()))?)
    };

    let seeds: Vec<u64> = (0..a.seeds as u64).map(|i| s.train.seed.wrapping_add(i)).collect();
    let results = seeds
        .par_iter()
        .map(|&seed| train_seed(seed))
        .collect::<Result<Vec<_>, _>>()?;

    let mut named_reports = Vec::new();
    for (&seed, (params, history)) in seeds.iter().zip(&results) {
        let prefix = if a.seeds > 1 { format!("seed-{seed}/") } else { String::new() };
        save_model(params, run, &format!("{prefix}{MODEL_FILE}"))?;
        run.write(&format!("{prefix}history.jsonl"), history.to_jsonl())?;
        if let Some(valid) = &valid {
            let scored = score(std::slice::from_ref(params), valid, task)?;
            run.write(
                &format!("{prefix}valid_predictions.tsv"),
                predictions_to_string(&scored.predictions, task, PredFormat::Tsv),
            )?;
            if let Some(r) = scored.report {
                run.write(&format!("{prefix}report.txt"), render_report(&r, TableArg::Text))?;
                named_reports.push((format!("seed-{seed}"), r));
            }
        }
    }
    if a.seeds > 1 {
        write_sweep(run, &seeds, &named_reports)?;
    }
    copy_vocab(&vocab, run)
}

fn write_sweep(run: &mut RunDir, seeds: &[u64], reports: &[(String, MetricsReport)]) -> Result<(), CliError> {
    let values = reports
        .iter()
        .map(|(name, r)| {
            r.macro_f1
                .ok_or_else(|| CliError::runtime("eval", format!("{name}: no class was scored")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let summary = SweepSummary::from_values(seeds.to_vec(), values)?;
    info!("macro-F1 over {} seeds: {:.4} ± {:.4}", seeds.len(), summary.mean, summary.std);
    run.write("sweep.json", serde_json::to_string_pretty(&summary)? + "\n")?;
    run.write("sweep.tsv", compare_runs(reports, TableFormat::Tsv)?)?;
    Ok(())
}

fn load_teacher(spec: &DataSpec, task: TaskId) -> Result<(Box<dyn PredictionSource>, Option<PathBuf>), CliError> {
    let name = spec.language.clone().unwrap_or_else(|| {
        let p = if spec.path.is_dir() {
            spec.path.file_name()
        } else {
            spec.path.file_stem()
        };
        p.map_or_else(|| spec.path.display().to_string(), |n| n.to_string_lossy().into_owned())
    });
    let is_model = spec.path.is_dir() || spec.path.extension().is_some_and(|e| e == "ckpt");
    if is_model {
        let vocab_path = vocab_for(&spec.path, None)?;
        let teacher = ModelTeacher {
            name,
            params: load_model(&spec.path)?,
            vocab: load_vocab(&vocab_path)?,
        };
        Ok((Box::new(teacher), Some(vocab_path)))
    } else {
        Ok((Box::new(PredictionFileTeacher::load(name, &spec.path, task)?), None))
    }
}

fn distill_cmd(a: &DistillArgs, s: &Settings, run: &mut RunDir) -> Result<(), CliError> {
    let task = a.task.id();
    let mut teachers = Vec::with_capacity(a.teachers.len());
    let mut teacher_vocab = None;
    for t in &a.teachers {
        let (teacher, vocab) = load_teacher(&DataSpec::parse(t), task)?;
        teacher_vocab = teacher_vocab.or(vocab);
        teachers.push(teacher);
    }
    let weights = if a.weights.is_empty() { None } else { Some(a.weights.clone()) };
    let ensemble = TeacherEnsemble::new(teachers, weights)?;
    let mut weight_table = String::from("teacher\tweight\n");
    for (name, w) in ensemble.weights() {
        let _ = writeln!(weight_table, "{name}\t{}", format_probability(w));
    }
    run.write("teachers.tsv", weight_table)?;

    let data = load_labeled(&a.data, task, a.solid)?;
    let labelled = ensemble_soft_labels(&ensemble, &data, task)?;
    let rows: Vec<(String, offeval::SoftDistribution)> =
        labelled.iter().map(|e| (e.id.clone(), e.soft[&task].clone())).collect();
    run.write("soft_labels.tsv", soft_labels_to_tsv(&rows, task))?;

    let vocab = match (&a.vocab, &a.init, &teacher_vocab) {
        (Some(v), _, _) => load_vocab(v)?,
        (None, Some(i), _) => load_vocab(&vocab_for(i, None)?)?,
        (None, None, Some(v)) => load_vocab(v)?,
        (None, None, None) => {
            return Err(CliError::Usage(
                "no student vocabulary: pass --vocab, --init or a model teacher".into(),
            ))
        }
    };
    let student = starting_params(a.init.as_deref(), s, &vocab, s.train.seed)?;
    let max_len = student.config().max_len;
    let mut train = training_examples(&labelled, task, &vocab, max_len);
    // The student sees the ensemble distribution only.
    for e in &mut train {
        e.hard = None;
    }
    let valid = if a.valid.is_empty() {
        None
    } else {
        Some(training_examples(&load_labeled(&a.valid, task, false)?, task, &vocab, max_len))
    };
    let mut kls = Vec::new();
    let (student, history) = distill_student(student, &train, task, &s.train, valid.as_deref(), |r, p| {
        let kl = mean_kl(p, &train, task).map_err(|e| TrainError::Callback(e.to_string()))?;
        info!("distill epoch {}: loss {:.6}, mean KL {kl:.6}", r.epoch, r.train_loss);
        kls.push(kl);
        Ok(())
    })?;
    save_model(&student, run, MODEL_FILE)?;
    run.write("history.jsonl", history_jsonl(&history, &kls, "mean_kl"))?;

    let scored = score(std::slice::from_ref(&student), &train, task)?;
    let agree = scored
        .predictions
        .iter()
        .zip(&rows)
        .filter(|(p, (_, q))| p.label == q.argmax())
        .count();
    let agreement = agree as f64 / rows.len().max(1) as f64;
    info!("student agrees with the teacher ensemble on {:.2}% of examples", 100.0 * agreement);
    let summary = json!({
        "examples": rows.len(),
        "agreement": agreement,
        "mean_kl": kls.last(),
    });
    run.write("distill.json", serde_json::to_string_pretty(&summary)? + "\n")?;
    copy_vocab(&vocab, run)
}

fn crossval_cmd(a: &CrossvalArgs, s: &Settings, run: &mut RunDir) -> Result<(), CliError> {
    if a.seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    if a.seeds > 1 && a.test.is_empty() {
        return Err(CliError::Usage("--seeds above 1 needs labelled --test data".into()));
    }
    let task = a.task.id();
    let vocab = model_vocab(a.init.as_deref(), a.vocab.as_deref())?;
    let init = a.init.as_deref().map(load_model).transpose()?;
    let encoder: EncoderConfig = match &init {
        Some(p) => p.config().clone(),
        None => s.encoder.to_config(vocab.size()),
    };
    if let Some(p) = &init {
        if p.config().vocab_size != vocab.size() {
            return Err(CliError::runtime("checkpoint", "initial checkpoint and vocabulary sizes differ"));
        }
    }
    let data: Vec<LabeledExample> = load_labeled(&a.data, task, a.solid)?
        .into_iter()
        .filter(|e| e.hard.contains_key(&task) || e.soft.contains_key(&task))
        .collect();
    let test = if a.test.is_empty() {
        info!("no --test data: predicting the training data with the full ensemble");
        data.clone()
    } else {
        load_labeled(&a.test, task, false)?
    };
    let test = training_examples(&test, task, &vocab, encoder.max_len);

    let seeds: Vec<u64> = (0..a.seeds as u64).map(|i| s.train.seed.wrapping_add(i)).collect();
    let mut named_reports = Vec::new();
    for &seed in &seeds {
        let prefix = if a.seeds > 1 { format!("seed-{seed}/") } else { String::new() };
        let options = CvOptions {
            encoder: encoder.clone(),
            init: init.clone(),
            train: TrainConfig {
                seed,
                ..s.train.clone()
            },
            mode: s.loss,
            hard_as_one_hot: s.hard_as_one_hot,
            jobs: s.jobs,
        };
        let cv = train_cv_ensemble(&data, &vocab, task, s.k, &options)?;
        write_cv(run, &prefix, &cv)?;
        let scored = score(&cv.members, &test, task)?;
        run.write(
            &format!("{prefix}predictions.tsv"),
            predictions_to_string(&scored.predictions, task, PredFormat::Tsv),
        )?;
        if let Some(r) = scored.report {
            run.write(&format!("{prefix}report.txt"), render_report(&r, TableArg::Text))?;
            named_reports.push((format!("seed-{seed}"), r));
        }
    }
    if a.seeds > 1 {
        write_sweep(run, &seeds, &named_reports)?;
    }
    copy_vocab(&vocab, run)
}

fn write_cv(run: &mut RunDir, prefix: &str, cv: &CvEnsemble<f64>) -> Result<(), CliError> {
    let mut split = String::from("id\tfold\n");
    for (i, id) in cv.split.ids().iter().enumerate() {
        let _ = writeln!(split, "{id}\t{}", cv.split.fold(i));
    }
    run.write(&format!("{prefix}split.tsv"), split)?;
    for (i, (m, h)) in cv.members.iter().zip(&cv.histories).enumerate() {
        save_model(m, run, &format!("{prefix}fold-{i}.ckpt"))?;
        run.write(&format!("{prefix}history-fold-{i}.jsonl"), h.to_jsonl())?;
    }
    let folds: Vec<(String, MetricsReport)> = cv
        .reports
        .iter()
        .enumerate()
        .map(|(i, r)| (format!("fold-{i}"), r.clone()))
        .collect();
    run.write(&format!("{prefix}folds.tsv"), compare_runs(&folds, TableFormat::Tsv)?)?;
    Ok(())
}

fn predict_cmd(a: &PredictArgs, run: &mut RunDir) -> Result<(), CliError> {
    let task = a.task.id();
    let (members, vocab) = match (&a.model, &a.ensemble) {
        (Some(m), None) => (vec![load_model(m)?], load_vocab(&vocab_for(m, a.vocab.as_deref())?)?),
        (None, Some(dir)) => {
            let members = ensemble_members(dir)?
                .iter()
                .map(|p| load_model(p))
                .collect::<Result<Vec<_>, _>>()?;
            (members, load_vocab(&vocab_for(dir, a.vocab.as_deref())?)?)
        }
        _ => return Err(CliError::Usage("exactly one of --model and --ensemble is required".into())),
    };
    for (i, m) in members.iter().enumerate() {
        check_architecture(m.config(), members[0].config()).map_err(|e| CliError::runtime("ensemble", format!("member {i}: {e}")))?;
        if m.config().vocab_size != vocab.size() {
            return Err(CliError::runtime("checkpoint", "model and vocabulary sizes differ"));
        }
    }
    let data = load_labeled(&a.data, task, false)?;
    let examples = training_examples(&data, task, &vocab, members[0].config().max_len);
    let scored = score(&members, &examples, task)?;
    let name = match a.format {
        PredFormat::Tsv => "predictions.tsv",
        PredFormat::Csv => "predictions.csv",
    };
    run.write(name, predictions_to_string(&scored.predictions, task, a.format))?;
    if let Some(r) = scored.report {
        run.write("report.txt", render_report(&r, TableArg::Text))?;
    }
    Ok(())
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| CliError::io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn evaluate(a: &EvaluateArgs) -> Result<(), CliError> {
    let mut inputs = vec![a.gold.clone()];
    inputs.extend(a.pred.iter().cloned());
    require_exists(&inputs)?;
    let task = a.task.id();
    let gold = read_gold(&a.gold, task)?;
    let mut reports = Vec::with_capacity(a.pred.len());
    for path in &a.pred {
        let preds = read_predictions(path, task)?;
        let mut golds = Vec::with_capacity(gold.len());
        let mut labels = Vec::with_capacity(gold.len());
        for (id, y) in &gold {
            let p = preds.get(id).ok_or_else(|| {
                CliError::runtime("eval", format!("{}: no prediction for id `{id}`", path.display()))
            })?;
            golds.push(*y);
            labels.push(*p);
        }
        let extra = preds.len() - golds.len();
        if extra > 0 {
            warn!("{}: {extra} predictions have no gold label", path.display());
        }
        reports.push((path.display().to_string(), report(&confusion(&golds, &labels, task)?)));
    }
    let text = if let [(_, r)] = &reports[..] {
        render_report(r, a.format)
    } else {
        compare_runs(&reports, table_format(a.format))?
    };
    emit(&text, a.out.as_deref())
}

pub fn stats(a: &StatsArgs) -> Result<(), CliError> {
    let specs: Vec<PathBuf> = a.data.iter().map(|s| DataSpec::parse(s).path).collect();
    require_exists(&specs)?;
    let data = load_labeled(&a.data, a.task.id(), a.solid)?;
    emit(&corpus_stats(&data, a.task.id()).to_tsv(), a.out.as_deref())
}
