//! Resolved run settings: built-in defaults, then the config file, then
//! command-line overrides.
//!
//! The config file is flat UTF-8 `key = value` lines grouped under
//! `[section]` headers; `#` starts a comment. Keys are addressed as
//! `section.key` on the command line (`--set train.epochs=5`).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use offeval::encoder::EncoderConfig;
use offeval::training::{LossMode, MaskingPolicy, TrainConfig};
use offeval::TaskId;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSettings {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub tie_mlm: bool,
}

impl Default for EncoderSettings {
    fn default() -> Self {
        let d = EncoderConfig::default();
        EncoderSettings {
            layers: d.layers,
            hidden: d.hidden,
            heads: d.heads,
            ffn: d.ffn,
            max_len: d.max_len,
            dropout: d.dropout,
            tie_mlm: d.tie_mlm,
        }
    }
}

impl EncoderSettings {
    pub fn to_config(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            layers: self.layers,
            hidden: self.hidden,
            heads: self.heads,
            ffn: self.ffn,
            vocab_size,
            max_len: self.max_len,
            tasks: TaskId::ALL.to_vec(),
            dropout: self.dropout,
            tie_mlm: self.tie_mlm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub encoder: EncoderSettings,
    pub vocab_size: usize,
    pub train: TrainConfig,
    pub pretrain_epochs: usize,
    pub masking: MaskingPolicy,
    pub loss: LossMode,
    pub hard_as_one_hot: bool,
    pub k: usize,
    pub jobs: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            encoder: EncoderSettings::default(),
            vocab_size: offeval::tokenizer::DEFAULT_VOCAB_SIZE,
            train: TrainConfig::default(),
            pretrain_epochs: 2,
            masking: MaskingPolicy::default(),
            loss: LossMode::Soft,
            hard_as_one_hot: true,
            k: 10,
            jobs: 0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Usage(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(CliError::Usage(format!("invalid value `{value}` for `{key}` (expected true or false)"))),
    }
}

fn parse_optional<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>, CliError> {
    if value == "none" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

pub fn parse_loss(key: &str, value: &str) -> Result<LossMode, CliError> {
    match value {
        "hard" => Ok(LossMode::Hard),
        "soft" => Ok(LossMode::Soft),
        _ => Err(CliError::Usage(format!("invalid value `{value}` for `{key}` (expected hard or soft)"))),
    }
}

impl Settings {
    /// Every recognised key with its current value.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let e = &self.encoder;
        let t = &self.train;
        let m = &self.masking;
        let opt = |v: Option<String>| v.unwrap_or_else(|| "none".into());
        [
            ("encoder.layers", e.layers.to_string()),
            ("encoder.hidden", e.hidden.to_string()),
            ("encoder.heads", e.heads.to_string()),
            ("encoder.ffn", e.ffn.to_string()),
            ("encoder.max_len", e.max_len.to_string()),
            ("encoder.dropout", e.dropout.to_string()),
            ("encoder.tie_mlm", e.tie_mlm.to_string()),
            ("tokenizer.vocab_size", self.vocab_size.to_string()),
            ("train.learning_rate", t.learning_rate.to_string()),
            ("train.beta1", t.beta1.to_string()),
            ("train.beta2", t.beta2.to_string()),
            ("train.epsilon", t.epsilon.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.warmup_steps", opt(t.warmup_steps.map(|w| w.to_string()))),
            ("train.clip_norm", opt(t.clip_norm.map(|c| c.to_string()))),
            ("train.seed", t.seed.to_string()),
            ("pretrain.epochs", self.pretrain_epochs.to_string()),
            ("masking.mask_fraction", m.mask_fraction.to_string()),
            ("masking.mask_prob", m.mask_prob.to_string()),
            ("masking.random_prob", m.random_prob.to_string()),
            ("masking.keep_prob", m.keep_prob.to_string()),
            (
                "finetune.loss",
                match self.loss {
                    LossMode::Hard => "hard".into(),
                    LossMode::Soft => "soft".into(),
                },
            ),
            ("finetune.hard_as_one_hot", self.hard_as_one_hot.to_string()),
            ("crossval.k", self.k.to_string()),
            ("crossval.jobs", self.jobs.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Settings recorded by [`Settings::to_map`]; unknown keys are errors.
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self, CliError> {
        let mut s = Settings::default();
        for (k, v) in map {
            s.set(k, v)?;
        }
        Ok(s)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let v = value.trim();
        match key {
            "encoder.layers" => self.encoder.layers = parse(key, v)?,
            "encoder.hidden" => self.encoder.hidden = parse(key, v)?,
            "encoder.heads" => self.encoder.heads = parse(key, v)?,
            "encoder.ffn" => self.encoder.ffn = parse(key, v)?,
            "encoder.max_len" => self.encoder.max_len = parse(key, v)?,
            "encoder.dropout" => self.encoder.dropout = parse(key, v)?,
            "encoder.tie_mlm" => self.encoder.tie_mlm = parse_bool(key, v)?,
            "tokenizer.vocab_size" => self.vocab_size = parse(key, v)?,
            "train.learning_rate" => self.train.learning_rate = parse(key, v)?,
            "train.beta1" => self.train.beta1 = parse(key, v)?,
            "train.beta2" => self.train.beta2 = parse(key, v)?,
            "train.epsilon" => self.train.epsilon = parse(key, v)?,
            "train.batch_size" => self.train.batch_size = parse(key, v)?,
            "train.epochs" => self.train.epochs = parse(key, v)?,
            "train.warmup_steps" => self.train.warmup_steps = parse_optional(key, v)?,
            "train.clip_norm" => self.train.clip_norm = parse_optional(key, v)?,
            "train.seed" => self.train.seed = parse(key, v)?,
            "pretrain.epochs" => self.pretrain_epochs = parse(key, v)?,
            "masking.mask_fraction" => self.masking.mask_fraction = parse(key, v)?,
            "masking.mask_prob" => self.masking.mask_prob = parse(key, v)?,
            "masking.random_prob" => self.masking.random_prob = parse(key, v)?,
            "masking.keep_prob" => self.masking.keep_prob = parse(key, v)?,
            "finetune.loss" => self.loss = parse_loss(key, v)?,
            "finetune.hard_as_one_hot" => self.hard_as_one_hot = parse_bool(key, v)?,
            "crossval.k" => self.k = parse(key, v)?,
            "crossval.jobs" => self.jobs = parse(key, v)?,
            _ => return Err(CliError::Usage(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Applies a config file on top of the current values.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        self.apply_text(&text)
            .map_err(|e| CliError::Usage(format!("{}: {}", path.display(), e.message())))
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("line {}: expected `key = value`", n + 1)))?;
            let key = key.trim();
            let full = if section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            self.set(&full, value)
                .map_err(|e| CliError::Usage(format!("line {}: {}", n + 1, e.message())))?;
        }
        Ok(())
    }

    /// `key=value` overrides from `--set`.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<(), CliError> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got `{o}`")))?;
            self.set(k.trim(), v).map_err(|e| CliError::Usage(format!("--set: {}", e.message())))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |e: &dyn std::fmt::Display| CliError::Usage(e.to_string());
        self.train.validate().map_err(|e| usage(&e))?;
        self.masking.validate().map_err(|e| usage(&e))?;
        self.encoder.to_config(offeval::tokenizer::MIN_VOCAB_SIZE).validate().map_err(|e| usage(&e))?;
        if self.vocab_size < offeval::tokenizer::MIN_VOCAB_SIZE {
            return Err(CliError::Usage(format!(
                "tokenizer.vocab_size must be at least {}",
                offeval::tokenizer::MIN_VOCAB_SIZE
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_sections_and_comments() {
        let mut s = Settings::default();
        s.apply_text("# run\n[train]\nepochs = 7 # more\nclip_norm = none\n\n[encoder]\ntie_mlm = false\n")
            .unwrap();
        assert_eq!(s.train.epochs, 7);
        assert_eq!(s.train.clip_norm, None);
        assert!(!s.encoder.tie_mlm);
    }

    #[test]
    fn overrides_win() {
        let mut s = Settings::default();
        s.apply_text("[train]\nseed = 3\n").unwrap();
        s.apply_overrides(&["train.seed=9".into()]).unwrap();
        assert_eq!(s.train.seed, 9);
    }

    #[test]
    fn unknown_and_invalid_keys() {
        let mut s = Settings::default();
        assert!(matches!(s.apply_text("[train]\nepoch = 3\n"), Err(CliError::Usage(_))));
        assert!(matches!(s.apply_text("[train]\nepochs = many\n"), Err(CliError::Usage(_))));
        assert!(matches!(s.apply_text("epochs\n"), Err(CliError::Usage(_))));
        assert!(s.apply_overrides(&["train.epochs".into()]).is_err());
    }

    #[test]
    fn map_round_trips() {
        let mut s = Settings::default();
        s.train.warmup_steps = Some(4);
        s.loss = LossMode::Hard;
        let mut t = Settings::default();
        for (k, v) in s.to_map() {
            t.set(&k, &v).unwrap();
        }
        assert_eq!(s, t);
    }
}
