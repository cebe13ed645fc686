//! Byte-level BPE shared by all languages.
//!
//! Ids 0..5 are the special tokens, ids 5..261 the 256 single bytes, and every
//! learned merge appends one id. Text is pre-split into chunks that start at a
//! whitespace run, so a chunk like `" word"` keeps its leading space and
//! decoding is the plain concatenation of token bytes.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
pub const MASK: u32 = 4;
pub const NUM_SPECIALS: u32 = 5;
/// Specials plus the 256 byte tokens.
pub const MIN_VOCAB_SIZE: usize = NUM_SPECIALS as usize + 256;
pub const DEFAULT_VOCAB_SIZE: usize = 2048;
pub const DEFAULT_MAX_LEN: usize = 128;

const SPECIAL_NAMES: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];
const FILE_MAGIC: &str = "bpe-v1";

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("vocabulary size {0} is below the minimum of {MIN_VOCAB_SIZE}")]
    SizeTooSmall(usize),
    #[error("token id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: u32, size: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("vocabulary file line {line}: {message}")]
    Format { line: usize, message: String },
}

/// Learned merges and the id table they induce.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    merges: Vec<(u32, u32)>,
    tokens: Vec<Vec<u8>>,
    ranks: HashMap<(u32, u32), u32>,
}

/// An encoded, padded sequence: `[CLS] subwords... [SEP] [PAD]...`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of non-pad positions.
    pub fn content_len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m == 1).count()
    }

    /// Builds a sequence from raw subword ids, adding `[CLS]`, `[SEP]` and
    /// padding the same way [`encode`] does.
    pub fn from_subwords(subwords: &[u32], max_len: usize) -> Self {
        assert!(max_len >= 2, "max_len must be at least 2");
        let keep = subwords.len().min(max_len - 2);
        let mut ids = Vec::with_capacity(max_len);
        ids.push(CLS);
        ids.extend_from_slice(&subwords[..keep]);
        ids.push(SEP);
        let used = ids.len();
        ids.resize(max_len, PAD);
        let mut attention_mask = vec![1u8; used];
        attention_mask.resize(max_len, 0);
        TokenSequence { ids, attention_mask }
    }
}

pub fn is_special(id: u32) -> bool {
    id < NUM_SPECIALS
}

fn byte_id(b: u8) -> u32 {
    NUM_SPECIALS + b as u32
}

/// Splits text into chunks that begin at a whitespace run.
fn pre_tokenize(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut prev_ws = true;
    for (i, c) in text.char_indices() {
        let ws = c.is_whitespace();
        if ws && !prev_ws && i > start {
            out.push(&text[start..i]);
            start = i;
        }
        prev_ws = ws;
    }
    if start < text.len() {
        out.push(&text[start..]);
    }
    out
}

impl Vocabulary {
    /// Vocabulary with the specials and byte tokens only.
    fn base() -> Self {
        let mut tokens: Vec<Vec<u8>> = SPECIAL_NAMES.iter().map(|_| Vec::new()).collect();
        tokens.extend((0..=255u8).map(|b| vec![b]));
        Vocabulary {
            merges: Vec::new(),
            tokens,
            ranks: HashMap::new(),
        }
    }

    fn push_merge(&mut self, pair: (u32, u32)) -> u32 {
        let id = self.tokens.len() as u32;
        let mut bytes = self.tokens[pair.0 as usize].clone();
        bytes.extend_from_slice(&self.tokens[pair.1 as usize]);
        self.tokens.push(bytes);
        self.ranks.insert(pair, self.merges.len() as u32);
        self.merges.push(pair);
        id
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    /// Bytes of a token; empty for specials.
    pub fn token_bytes(&self, id: u32) -> Option<&[u8]> {
        self.tokens.get(id as usize).map(Vec::as_slice)
    }

    /// Id of the token with exactly these bytes.
    pub fn token_id(&self, bytes: &[u8]) -> Option<u32> {
        match bytes {
            [] => None,
            [b] => Some(byte_id(*b)),
            _ => (MIN_VOCAB_SIZE..self.tokens.len())
                .find(|&i| self.tokens[i] == bytes)
                .map(|i| i as u32),
        }
    }

    /// Subword ids for `text`, without specials.
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for chunk in pre_tokenize(text) {
            let mut word: Vec<u32> = chunk.bytes().map(byte_id).collect();
            self.apply_merges(&mut word);
            out.extend(word);
        }
        out
    }

    /// Repeatedly applies the lowest-ranked merge present in `word`.
    fn apply_merges(&self, word: &mut Vec<u32>) {
        while word.len() > 1 {
            let best = word
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| self.ranks.get(&(w[0], w[1])).map(|&r| (r, i)))
                .min();
            let Some((rank, _)) = best else { break };
            let pair = self.merges[rank as usize];
            let new_id = MIN_VOCAB_SIZE as u32 + rank;
            let mut merged = Vec::with_capacity(word.len());
            let mut i = 0;
            while i < word.len() {
                if i + 1 < word.len() && (word[i], word[i + 1]) == pair {
                    merged.push(new_id);
                    i += 2;
                } else {
                    merged.push(word[i]);
                    i += 1;
                }
            }
            *word = merged;
        }
    }

    /// Serializes to the `bpe-v1` text format.
    pub fn to_file_string(&self) -> String {
        let table = byte_to_unicode();
        let render = |id: u32| -> String {
            self.tokens[id as usize]
                .iter()
                .map(|&b| table[b as usize])
                .collect()
        };
        let mut out = format!("{FILE_MAGIC} {}\n", self.size());
        for &(a, b) in &self.merges {
            out.push_str(&render(a));
            out.push(' ');
            out.push_str(&render(b));
            out.push('\n');
        }
        out
    }

    pub fn from_file_string(text: &str) -> Result<Self, TokenizerError> {
        let fmt_err = |line: usize, message: String| TokenizerError::Format { line, message };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, header) = lines.next().ok_or_else(|| fmt_err(1, "missing header".into()))?;
        let size = match header.split_once(' ') {
            Some((FILE_MAGIC, n)) => n
                .parse::<usize>()
                .map_err(|_| fmt_err(1, format!("bad size `{n}`")))?,
            _ => return Err(fmt_err(1, format!("expected `{FILE_MAGIC} <size>`"))),
        };
        let inverse: HashMap<char, u8> = byte_to_unicode()
            .iter()
            .enumerate()
            .map(|(b, &c)| (c, b as u8))
            .collect();
        let mut vocab = Vocabulary::base();
        let mut by_bytes: HashMap<Vec<u8>, u32> = vocab
            .tokens
            .iter()
            .enumerate()
            .skip(NUM_SPECIALS as usize)
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        for (line, l) in lines {
            if l.is_empty() {
                continue;
            }
            let (a, b) = l
                .split_once(' ')
                .ok_or_else(|| fmt_err(line, "expected two tokens".into()))?;
            let id_of = |s: &str| -> Result<u32, TokenizerError> {
                let bytes = s
                    .chars()
                    .map(|c| inverse.get(&c).copied())
                    .collect::<Option<Vec<u8>>>()
                    .ok_or_else(|| fmt_err(line, format!("bad token `{s}`")))?;
                by_bytes
                    .get(&bytes)
                    .copied()
                    .ok_or_else(|| fmt_err(line, format!("token `{s}` is not defined before use")))
            };
            let pair = (id_of(a)?, id_of(b)?);
            let id = vocab.push_merge(pair);
            by_bytes.entry(vocab.tokens[id as usize].clone()).or_insert(id);
        }
        if vocab.size() != size {
            return Err(fmt_err(
                1,
                format!("header declares {size} tokens, merges give {}", vocab.size()),
            ));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        fs::write(path, self.to_file_string()).map_err(|source| TokenizerError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, TokenizerError> {
        let text = fs::read_to_string(path).map_err(|source| TokenizerError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_file_string(&text)
    }
}

/// GPT-2 style printable stand-in for every byte, so tokens never contain
/// spaces or newlines in the vocabulary file.
fn byte_to_unicode() -> [char; 256] {
    let mut table = ['\0'; 256];
    let mut extra = 0u32;
    for b in 0..=255u8 {
        let printable = matches!(b, b'!'..=b'~' | 0xA1..=0xAC | 0xAE..=0xFF);
        table[b as usize] = if printable {
            b as char
        } else {
            let c = char::from_u32(256 + extra).expect("valid code point");
            extra += 1;
            c
        };
    }
    table
}

/// Learns merges greedily: the most frequent adjacent pair wins, ties go to the
/// lexicographically smallest `(left bytes, right bytes)`. Stops at
/// `target_size` tokens or when no pair is left.
pub fn build_vocab<S: AsRef<str>>(corpus: &[S], target_size: usize) -> Result<Vocabulary, TokenizerError> {
    if target_size < MIN_VOCAB_SIZE {
        return Err(TokenizerError::SizeTooSmall(target_size));
    }
    if corpus.iter().all(|s| s.as_ref().is_empty()) {
        return Err(TokenizerError::EmptyCorpus);
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for text in corpus {
        for chunk in pre_tokenize(text.as_ref()) {
            *counts.entry(chunk).or_default() += 1;
        }
    }
    let mut words: Vec<(Vec<u32>, usize)> = counts
        .into_iter()
        .map(|(w, c)| (w.bytes().map(byte_id).collect(), c))
        .collect();
    words.sort_unstable();

    let mut vocab = Vocabulary::base();
    while vocab.size() < target_size {
        let mut pairs: HashMap<(u32, u32), usize> = HashMap::new();
        for (word, count) in &words {
            for w in word.windows(2) {
                *pairs.entry((w[0], w[1])).or_default() += count;
            }
        }
        let best = pairs.into_iter().max_by(|(pa, ca), (pb, cb)| {
            ca.cmp(cb).then_with(|| {
                let key = |p: &(u32, u32)| (vocab.tokens[p.0 as usize].clone(), vocab.tokens[p.1 as usize].clone());
                key(pb).cmp(&key(pa))
            })
        });
        let Some((pair, _)) = best else { break };
        let id = vocab.push_merge(pair);
        for (word, _) in &mut words {
            if word.len() < 2 {
                continue;
            }
            let mut merged = Vec::with_capacity(word.len());
            let mut i = 0;
            while i < word.len() {
                if i + 1 < word.len() && (word[i], word[i + 1]) == pair {
                    merged.push(id);
                    i += 2;
                } else {
                    merged.push(word[i]);
                    i += 1;
                }
            }
            *word = merged;
        }
    }
    Ok(vocab)
}

/// `[CLS]` + subwords + `[SEP]`, truncated to keep `[SEP]`, right-padded.
///
/// Panics if `max_len < 2`.
pub fn encode(text: &str, vocab: &Vocabulary, max_len: usize) -> TokenSequence {
    TokenSequence::from_subwords(&vocab.tokenize(text), max_len)
}

/// Drops specials and decodes the remaining bytes as lossy UTF-8.
pub fn decode(ids: &[u32], vocab: &Vocabulary) -> Result<String, TokenizerError> {
    let mut bytes = Vec::new();
    for &id in ids {
        let token = vocab.token_bytes(id).ok_or(TokenizerError::IdOutOfRange {
            id,
            size: vocab.size(),
        })?;
        bytes.extend_from_slice(token);
    }
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}
