//! Dictionaries and the two dictionary-driven data generators: pseudo
//! labeled sentences, and positive/negative samples for word classification.

use std::collections::BTreeSet;
use std::path::Path;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tagcodec::LabeledSentence;
use crate::wordclf::WordSample;

/// Where a dictionary entry came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Origin {
    /// Collected from the training corpus.
    Internal,
    /// Supplied as a separate word list.
    External,
}

/// Deduplicated word list, in insertion order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Dictionary {
    words: IndexMap<String, Origin>,
}

impl Dictionary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `word`; returns false if it was empty or already present.
    pub fn insert(&mut self, word: &str, origin: Origin) -> bool {
        if word.is_empty() || self.words.contains_key(word) {
            return false;
        }
        self.words.insert(word.to_owned(), origin);
        true
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains_key(word)
    }

    pub fn origin(&self, word: &str) -> Option<Origin> {
        self.words.get(word).copied()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.words.keys().map(String::as_str)
    }

    pub fn word_at(&self, i: usize) -> &str {
        self.words.get_index(i).expect("index in range").0
    }

    /// Adds every word of `other` not already present, keeping its origin.
    pub fn union_with(&mut self, other: &Dictionary) {
        for (w, &o) in &other.words {
            self.insert(w, o);
        }
    }

    /// Sorted set of characters used by any entry.
    pub fn charset(&self) -> Vec<char> {
        self.words
            .keys()
            .flat_map(|w| w.chars())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Reads a UTF-8 word list, one word per line. Surrounding whitespace
    /// (including a CR from CRLF endings) is trimmed and blank lines are
    /// skipped. Entries are tagged [`Origin::External`].
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut dict = Self::new();
        for (i, line) in bytes.split(|&b| b == b'\n').enumerate() {
            let line = std::str::from_utf8(line).map_err(|_| Error::Encoding {
                path: path.to_owned(),
                line: i + 1,
            })?;
            dict.insert(line.trim(), Origin::External);
        }
        Ok(dict)
    }

    /// All distinct words of a segmented corpus, tagged
    /// [`Origin::Internal`].
    pub fn from_corpus<S: AsRef<str>>(corpus: &[Vec<S>]) -> Self {
        let mut dict = Self::new();
        for sentence in corpus {
            for w in sentence {
                dict.insert(w.as_ref(), Origin::Internal);
            }
        }
        dict
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &str {
        self.word_at(rng.gen_range(0..self.len()))
    }
}

pub fn load_dictionary(path: impl AsRef<Path>) -> Result<Dictionary> {
    Dictionary::load(path)
}

pub fn build_internal_dictionary<S: AsRef<str>>(corpus: &[Vec<S>]) -> Dictionary {
    Dictionary::from_corpus(corpus)
}

/// How many words make up one pseudo sentence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WordCount {
    Fixed(usize),
    /// Uniform over the inclusive range.
    Uniform { min: usize, max: usize },
}

impl Default for WordCount {
    fn default() -> Self {
        WordCount::Uniform { min: 3, max: 8 }
    }
}

impl WordCount {
    fn validate(self) -> Result<()> {
        match self {
            WordCount::Fixed(0) => Err(Error::invalid("word count must be at least 1")),
            WordCount::Uniform { min, max } if min == 0 || min > max => Err(Error::invalid(
                format!("bad word-count range [{min}, {max}]"),
            )),
            _ => Ok(()),
        }
    }

    fn draw<R: Rng + ?Sized>(self, rng: &mut R) -> usize {
        match self {
            WordCount::Fixed(u) => u,
            WordCount::Uniform { min, max } => rng.gen_range(min..=max),
        }
    }
}

/// Concatenates `words` uniformly sampled (with replacement) dictionary
/// words. Tags follow from the known word boundaries.
pub fn gen_pseudo_sentence<R: Rng + ?Sized>(
    dict: &Dictionary,
    words: usize,
    rng: &mut R,
) -> Result<LabeledSentence> {
    Ok(sample_pseudo_words(dict, words, rng)?.1)
}

/// Like [`gen_pseudo_sentence`] but also returns the sampled word list.
pub fn sample_pseudo_words<R: Rng + ?Sized>(
    dict: &Dictionary,
    words: usize,
    rng: &mut R,
) -> Result<(Vec<String>, LabeledSentence)> {
    if dict.is_empty() {
        return Err(Error::invalid("cannot sample from an empty dictionary"));
    }
    if words == 0 {
        return Err(Error::invalid("a pseudo sentence needs at least one word"));
    }
    let sampled: Vec<String> = (0..words).map(|_| dict.sample(rng).to_owned()).collect();
    let sentence = LabeledSentence::from_words(&sampled)?;
    Ok((sampled, sentence))
}

pub fn gen_pseudo_corpus<R: Rng + ?Sized>(
    dict: &Dictionary,
    count: usize,
    policy: WordCount,
    rng: &mut R,
) -> Result<Vec<LabeledSentence>> {
    policy.validate()?;
    if count > 0 && dict.is_empty() {
        return Err(Error::invalid("cannot sample from an empty dictionary"));
    }
    (0..count)
        .map(|_| {
            let u = policy.draw(rng);
            gen_pseudo_sentence(dict, u, rng)
        })
        .collect()
}

/// Default number of proposals tried per negative before giving up.
pub const DEFAULT_RETRY_BUDGET: usize = 100;

/// A corrupted copy of a dictionary word before rejection filtering.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NegativeProposal {
    pub source: String,
    pub word: String,
    /// Positions where a replacement was drawn (the drawn character may
    /// coincide with the original).
    pub replaced: usize,
}

/// Samples a dictionary word and independently replaces each character with
/// a uniform draw from `charset` with probability `p`.
pub fn propose_negative<R: Rng + ?Sized>(
    dict: &Dictionary,
    p: f64,
    charset: &[char],
    rng: &mut R,
) -> NegativeProposal {
    let source = dict.sample(rng).to_owned();
    let mut replaced = 0;
    let word = source
        .chars()
        .map(|c| {
            if rng.gen::<f64>() < p {
                replaced += 1;
                charset[rng.gen_range(0..charset.len())]
            } else {
                c
            }
        })
        .collect();
    NegativeProposal {
        source,
        word,
        replaced,
    }
}

fn check_negative_args(dict: &Dictionary, p: f64, charset: &[char]) -> Result<()> {
    if dict.is_empty() {
        return Err(Error::invalid("cannot sample from an empty dictionary"));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::invalid(format!("replacement probability {p} not in (0, 1]")));
    }
    if charset.is_empty() {
        return Err(Error::invalid("replacement charset is empty"));
    }
    Ok(())
}

/// A character sequence that is not in `dict`, made by corrupting a
/// dictionary word. Unchanged or colliding proposals are rejected.
pub fn gen_negative_word<R: Rng + ?Sized>(
    dict: &Dictionary,
    p: f64,
    charset: &[char],
    rng: &mut R,
) -> Result<String> {
    gen_negative_word_with_budget(dict, p, charset, DEFAULT_RETRY_BUDGET, rng)
}

pub fn gen_negative_word_with_budget<R: Rng + ?Sized>(
    dict: &Dictionary,
    p: f64,
    charset: &[char],
    budget: usize,
    rng: &mut R,
) -> Result<String> {
    check_negative_args(dict, p, charset)?;
    for _ in 0..budget {
        let prop = propose_negative(dict, p, charset, rng);
        if prop.word != prop.source && !dict.contains(&prop.word) {
            return Ok(prop.word);
        }
    }
    Err(Error::Generation(format!(
        "no non-dictionary word found in {budget} attempts"
    )))
}

/// Every dictionary word as a positive plus `n_neg` generated negatives,
/// shuffled.
pub fn gen_classification_set<R: Rng + ?Sized>(
    dict: &Dictionary,
    n_neg: usize,
    p: f64,
    charset: &[char],
    rng: &mut R,
) -> Result<Vec<WordSample>> {
    if dict.is_empty() {
        return Err(Error::invalid("cannot sample from an empty dictionary"));
    }
    let mut samples = Vec::with_capacity(dict.len() + n_neg);
    for w in dict.words() {
        samples.push(WordSample::new(w, 1)?);
    }
    for _ in 0..n_neg {
        let w = gen_negative_word(dict, p, charset, rng)?;
        samples.push(WordSample::new(&w, -1)?);
    }
    samples.shuffle(rng);
    Ok(samples)
}
