//! Test oracles and fixtures. Enabled by the `testkit` feature.
//!
//! The finite-difference checker only ever calls a scalar loss closure, so it
//! stays independent of the hand-written backward passes it verifies.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::dictgen::{self, Dictionary, Origin, WordCount};
use crate::encoder::Vocab;
use crate::model::{KernelSpec, Model, ModelConfig, ModelParams};
use crate::tagcodec::LabeledSentence;
use crate::wordclf::WordSample;

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor for relative error: `|a−n| / max(|a|, |n|, floor)`.
pub const REL_FLOOR: f64 = 1e-3;

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Worst entry found by [`check_gradients`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub tensor: usize,
    pub entry: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub entries_checked: usize,
}

/// Compares `analytic` against central differences of `loss` at every
/// parameter entry of `model`. The model is restored afterwards.
pub fn check_gradients(
    model: &mut Model,
    analytic: &ModelParams,
    mut loss: impl FnMut(&Model) -> f64,
) -> GradCheck {
    let mut worst = GradCheck {
        max_rel_error: 0.0,
        tensor: 0,
        entry: 0,
        analytic: 0.0,
        numeric: 0.0,
        entries_checked: 0,
    };
    let n_tensors = model.params.tensors().len();
    for t in 0..n_tensors {
        let len = model.params.tensors()[t].len();
        for e in 0..len {
            let orig = model.params.tensors()[t].as_slice()[e];
            model.params.tensors_mut()[t].as_mut_slice()[e] = orig + FD_STEP;
            let up = loss(model);
            model.params.tensors_mut()[t].as_mut_slice()[e] = orig - FD_STEP;
            let down = loss(model);
            model.params.tensors_mut()[t].as_mut_slice()[e] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic.tensors()[t].as_slice()[e];
            let r = rel_error(a, numeric);
            worst.entries_checked += 1;
            if r > worst.max_rel_error || r.is_nan() {
                worst = GradCheck {
                    max_rel_error: r,
                    tensor: t,
                    entry: e,
                    analytic: a,
                    numeric,
                    entries_checked: worst.entries_checked,
                };
            }
        }
    }
    worst
}

/// A tiny random model plus data for gradient checks: vocabulary of at most
/// 10 (including PAD/UNK), D ≤ 4, at most 3 filters per kernel, sentences of
/// at most 5 characters.
pub struct TinyCase {
    pub model: Model,
    pub gold: Vec<LabeledSentence>,
    pub pseudo: Vec<LabeledSentence>,
    pub words: Vec<WordSample>,
}

const TINY_ALPHABET: &[char] = &['一', '二', '三', '四', '五', '六', '七', '八', '九'];

fn random_sentence<R: Rng + ?Sized>(chars: &[char], max_len: usize, rng: &mut R) -> LabeledSentence {
    let len = rng.gen_range(1..=max_len);
    let mut words = Vec::new();
    let mut left = len;
    while left > 0 {
        let w = rng.gen_range(1..=left.min(4));
        words.push((0..w).map(|_| chars[rng.gen_range(0..chars.len())]).collect::<String>());
        left -= w;
    }
    LabeledSentence::from_words(&words).expect("non-empty words")
}

impl TinyCase {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let n_chars = rng.gen_range(2..=8);
        let vocab = Vocab::from_chars(TINY_ALPHABET[..n_chars].iter().copied());
        let dim = rng.gen_range(1..=4);
        let mut sizes: Vec<usize> = (1..=5).collect();
        sizes.shuffle(rng);
        sizes.truncate(rng.gen_range(1..=3));
        sizes.sort_unstable();
        let config = ModelConfig {
            dim,
            kernels: sizes
                .iter()
                .map(|&size| KernelSpec {
                    size,
                    filters: rng.gen_range(1..=3),
                })
                .collect(),
            mask: rng.gen_bool(0.5),
        };
        let mut model = Model::new(config, vocab, rng).expect("valid tiny config");
        // spread all parameters so no gradient is trivially zero
        for t in model.params.tensors_mut() {
            for v in t.as_mut_slice() {
                *v = rng.gen_range(-0.8..0.8);
            }
        }
        // one character outside the vocabulary exercises the UNK row
        let mut chars: Vec<char> = TINY_ALPHABET[..n_chars].to_vec();
        chars.push('十');
        let gold = (0..2).map(|_| random_sentence(&chars, 5, rng)).collect();
        let pseudo = (0..2).map(|_| random_sentence(&chars, 5, rng)).collect();
        let words = (0..3)
            .map(|_| {
                let len = rng.gen_range(1..=4);
                let w: String = (0..len).map(|_| chars[rng.gen_range(0..chars.len())]).collect();
                WordSample::new(&w, if rng.gen_bool(0.5) { 1 } else { -1 }).expect("valid sample")
            })
            .collect();
        Self {
            model,
            gold,
            pseudo,
            words,
        }
    }
}

/// A random artificial language: multi-character words over a fixed
/// alphabet plus single-character words, with sentences formed by
/// concatenating uniformly drawn words.
pub struct SyntheticLanguage {
    pub alphabet: Vec<char>,
    pub dict: Dictionary,
}

impl SyntheticLanguage {
    /// `multi` distinct words of 2 to 4 characters and `single` distinct
    /// one-character words, all over an alphabet of `alphabet` CJK
    /// characters.
    pub fn generate<R: Rng + ?Sized>(alphabet: usize, multi: usize, single: usize, rng: &mut R) -> Self {
        let alphabet: Vec<char> = (0..alphabet as u32)
            .map(|i| char::from_u32(0x4E00 + i * 7).expect("CJK block"))
            .collect();
        let mut dict = Dictionary::new();
        while dict.len() < multi {
            let len = rng.gen_range(2..=4);
            let w: String = (0..len).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect();
            dict.insert(&w, Origin::External);
        }
        let mut singles = alphabet.clone();
        singles.shuffle(rng);
        for c in singles.into_iter().take(single) {
            dict.insert(&c.to_string(), Origin::External);
        }
        Self { alphabet, dict }
    }

    pub fn sentences<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<LabeledSentence> {
        dictgen::gen_pseudo_corpus(&self.dict, n, WordCount::default(), rng)
            .expect("non-empty dictionary")
    }
}
