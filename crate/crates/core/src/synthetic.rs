//! Pseudo-language corpora with known labelling rules.
//!
//! Each pseudo-language has its own neutral lexicon of random syllable words.
//! Offensive posts contain a marker word; markers share a stem across
//! languages (`zorg` in one language, `zorgek` in another), so a shared
//! subword vocabulary can carry what one language learns to the other.
//! Offensive posts that also name a target word are targeted (sub-task B),
//! and the target's category decides sub-task C.

use std::fmt::Write as _;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{LabeledExample, SoftDistribution, TaskId};

const OFF: usize = 0;
const NOT: usize = 1;
const TIN: usize = 0;
const UNT: usize = 1;

const SYLLABLES: &[&str] = &[
    "ba", "ke", "lo", "mi", "nu", "pa", "re", "si", "to", "va", "de", "fu", "ga", "hi", "jo", "ku", "la", "me", "no",
    "pi", "ru", "sa", "te", "vo", "wa", "ye", "zi", "bo", "ce", "du",
];

/// Offensive stems shared by every pseudo-language.
pub const MARKER_STEMS: &[&str] = &["zorg", "blat", "kruv", "snek", "grom", "flib", "drak", "wump"];

/// Target words per sub-task C class (IND, GRP, OTH).
pub const TARGET_STEMS: [&[&str]; 3] = [&["yu", "tuo"], &["ihr", "wirr"], &["dat", "ohm"]];

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLanguage {
    pub code: String,
    pub neutral: Vec<String>,
    pub markers: Vec<String>,
    /// Target words indexed by sub-task C label.
    pub targets: [Vec<String>; 3],
}

impl PseudoLanguage {
    /// A language whose neutral words are drawn from `seed` and whose marker
    /// and target words are the shared stems plus `suffix`.
    pub fn new(code: &str, suffix: &str, lexicon_size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut neutral = Vec::with_capacity(lexicon_size);
        while neutral.len() < lexicon_size {
            let n = rng.random_range(2..=3);
            let w: String = (0..n).map(|_| *SYLLABLES.choose(&mut rng).expect("syllables")).collect();
            if !neutral.contains(&w) {
                neutral.push(w);
            }
        }
        let with_suffix = |stems: &[&str]| stems.iter().map(|s| format!("{s}{suffix}")).collect::<Vec<_>>();
        PseudoLanguage {
            code: code.to_string(),
            neutral,
            markers: with_suffix(MARKER_STEMS),
            targets: TARGET_STEMS.map(with_suffix),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorOptions {
    pub offensive_rate: f64,
    /// Share of offensive posts that name a target.
    pub targeted_rate: f64,
    pub min_words: usize,
    pub max_words: usize,
}

impl Default for GeneratorOptions {
    fn default() -> Self {
        GeneratorOptions {
            offensive_rate: 0.4,
            targeted_rate: 0.7,
            min_words: 4,
            max_words: 9,
        }
    }
}

/// `n` labelled posts with ids `{prefix}{i}`. Every post gets an A label;
/// offensive posts get B, targeted ones C, consistent with the hierarchy.
pub fn generate(
    lang: &PseudoLanguage,
    n: usize,
    options: &GeneratorOptions,
    seed: u64,
    prefix: &str,
) -> Vec<LabeledExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let len = rng.random_range(options.min_words..=options.max_words);
            let mut words: Vec<String> = (0..len)
                .map(|_| lang.neutral.choose(&mut rng).expect("lexicon").clone())
                .collect();
            let offensive = rng.random_bool(options.offensive_rate);
            let mut ex = LabeledExample::new(format!("{prefix}{i}"), String::new(), lang.code.as_str());
            if offensive {
                let marker = lang.markers.choose(&mut rng).expect("markers").clone();
                words.insert(rng.random_range(0..=words.len()), marker);
                ex = ex.with_hard(TaskId::A, OFF);
                if rng.random_bool(options.targeted_rate) {
                    let c = rng.random_range(0..3);
                    let target = lang.targets[c].choose(&mut rng).expect("targets").clone();
                    words.insert(rng.random_range(0..=words.len()), target);
                    ex = ex.with_hard(TaskId::B, TIN).with_hard(TaskId::C, c);
                } else {
                    ex = ex.with_hard(TaskId::B, UNT);
                }
            } else {
                ex = ex.with_hard(TaskId::A, NOT);
            }
            ex.text = words.join(" ");
            ex
        })
        .collect()
}

/// Copies with each `task` label replaced by a different class with
/// probability `prob`.
pub fn flip_labels(examples: &[LabeledExample], task: TaskId, prob: f64, seed: u64) -> Vec<LabeledExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = task.num_classes();
    examples
        .iter()
        .map(|e| {
            let mut e = e.clone();
            if let Some(y) = e.hard.get_mut(&task) {
                if rng.random_bool(prob) {
                    *y = (*y + rng.random_range(1..classes)) % classes;
                }
            }
            e
        })
        .collect()
}

/// The distribution a perfectly calibrated teacher assigns when the
/// observed label is wrong with probability `1 - confidence`: `confidence`
/// on `label`, the rest spread evenly.
pub fn calibrated(task: TaskId, label: usize, confidence: f64) -> SoftDistribution {
    let c = task.num_classes();
    let rest = (1.0 - confidence) / (c - 1) as f64;
    let probs = (0..c).map(|k| if k == label { confidence } else { rest }).collect();
    SoftDistribution::new(task, probs).expect("calibrated distribution")
}

/// OLID-style TSV (`id tweet subtask_a subtask_b subtask_c`, `NULL` for
/// absent labels).
pub fn to_olid_tsv(examples: &[LabeledExample]) -> String {
    let mut out = String::from("id\ttweet\tsubtask_a\tsubtask_b\tsubtask_c\n");
    for e in examples {
        let _ = write!(out, "{}\t{}", e.id, e.text);
        for task in TaskId::ALL {
            let label = e.hard.get(&task).map_or("NULL", |&y| task.label_name(y));
            let _ = write!(out, "\t{label}");
        }
        out.push('\n');
    }
    out
}

/// Shuffled copy; used to interleave languages or classes.
pub fn shuffled(examples: &[LabeledExample], seed: u64) -> Vec<LabeledExample> {
    let mut out = examples.to_vec();
    out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    out
}
