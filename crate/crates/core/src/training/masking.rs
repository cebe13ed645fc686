use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::tokenizer::{is_special, TokenSequence, MASK, NUM_SPECIALS};

/// BERT-style masking: pick a fraction of the content positions, then replace
/// each with `[MASK]`, a random token, or keep it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskingPolicy {
    pub mask_fraction: f64,
    pub mask_prob: f64,
    pub random_prob: f64,
    pub keep_prob: f64,
}

impl Default for MaskingPolicy {
    fn default() -> Self {
        MaskingPolicy {
            mask_fraction: 0.15,
            mask_prob: 0.8,
            random_prob: 0.1,
            keep_prob: 0.1,
        }
    }
}

impl MaskingPolicy {
    /// Every selected position becomes `[MASK]`; used for evaluation.
    pub fn mask_only(mask_fraction: f64) -> Self {
        MaskingPolicy {
            mask_fraction,
            mask_prob: 1.0,
            random_prob: 0.0,
            keep_prob: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let fields = [
            ("mask_fraction", self.mask_fraction),
            ("mask_prob", self.mask_prob),
            ("random_prob", self.random_prob),
            ("keep_prob", self.keep_prob),
        ];
        if let Some((name, v)) = fields.iter().find(|(_, v)| !(0.0..=1.0).contains(v)) {
            return Err(TrainError::InvalidConfig(format!("{name} = {v} outside [0, 1]")));
        }
        let split = self.mask_prob + self.random_prob + self.keep_prob;
        if (split - 1.0).abs() > 1e-9 {
            return Err(TrainError::InvalidConfig(format!(
                "mask/random/keep split sums to {split}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedSequence {
    pub tokens: TokenSequence,
    /// Position → original id for every selected position.
    pub targets: BTreeMap<usize, u32>,
}

/// Masks `round(fraction · eligible)` positions (at least one when the
/// fraction is positive). Only attended, non-special positions are eligible.
pub fn mask_tokens(seq: &TokenSequence, policy: &MaskingPolicy, vocab_size: usize, seed: u64) -> MaskedSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut eligible: Vec<usize> = (0..seq.len())
        .filter(|&i| seq.attention_mask[i] == 1 && !is_special(seq.ids[i]))
        .collect();
    let count = if policy.mask_fraction <= 0.0 || eligible.is_empty() {
        0
    } else {
        ((policy.mask_fraction * eligible.len() as f64).round() as usize).clamp(1, eligible.len())
    };
    eligible.shuffle(&mut rng);
    let mut chosen = eligible[..count].to_vec();
    chosen.sort_unstable();

    let mut tokens = seq.clone();
    let mut targets = BTreeMap::new();
    for pos in chosen {
        targets.insert(pos, seq.ids[pos]);
        let r: f64 = rng.random();
        if r < policy.mask_prob {
            tokens.ids[pos] = MASK;
        } else if r < policy.mask_prob + policy.random_prob && vocab_size > NUM_SPECIALS as usize {
            tokens.ids[pos] = rng.random_range(NUM_SPECIALS..vocab_size as u32);
        }
    }
    MaskedSequence { tokens, targets }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{CLS, PAD, SEP};

    fn seq() -> TokenSequence {
        TokenSequence::from_subwords(&(10..30).collect::<Vec<u32>>(), 32)
    }

    #[test]
    fn zero_fraction_is_identity() {
        let policy = MaskingPolicy {
            mask_fraction: 0.0,
            ..Default::default()
        };
        let m = mask_tokens(&seq(), &policy, 100, 3);
        assert_eq!(m.tokens, seq());
        assert!(m.targets.is_empty());
    }

    #[test]
    fn deterministic_per_seed() {
        let p = MaskingPolicy::default();
        assert_eq!(mask_tokens(&seq(), &p, 100, 5), mask_tokens(&seq(), &p, 100, 5));
        let m = mask_tokens(&seq(), &p, 100, 5);
        assert_eq!(m.targets.len(), 3);
    }

    #[test]
    fn specials_and_padding_never_selected() {
        let policy = MaskingPolicy {
            mask_fraction: 0.5,
            ..Default::default()
        };
        let s = TokenSequence::from_subwords(&[10, 11, 12, 13], 10);
        for seed in 0..10_000u64 {
            let m = mask_tokens(&s, &policy, 50, seed);
            for &pos in m.targets.keys() {
                assert!((1..=4).contains(&pos), "seed {seed} picked {pos}");
            }
            assert_eq!(m.tokens.ids[0], CLS);
            assert_eq!(m.tokens.ids[5], SEP);
            assert!(m.tokens.ids[6..].iter().all(|&i| i == PAD));
        }
    }

    #[test]
    fn action_split_frequencies() {
        let policy = MaskingPolicy {
            mask_fraction: 1.0,
            ..Default::default()
        };
        let s = seq();
        let (mut masked, mut kept, mut total) = (0, 0, 0);
        for seed in 0..500 {
            let m = mask_tokens(&s, &policy, 1000, seed);
            for (&pos, &orig) in &m.targets {
                total += 1;
                match m.tokens.ids[pos] {
                    MASK => masked += 1,
                    id if id == orig => kept += 1,
                    _ => {}
                }
            }
        }
        let frac = |c: usize| c as f64 / total as f64;
        assert!((frac(masked) - 0.8).abs() < 0.02);
        assert!((frac(kept) - 0.1).abs() < 0.02);
    }

    #[test]
    fn policy_validation() {
        assert!(MaskingPolicy::default().validate().is_ok());
        assert!(MaskingPolicy::mask_only(0.15).validate().is_ok());
        let bad = MaskingPolicy {
            keep_prob: 0.2,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = MaskingPolicy {
            mask_fraction: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
