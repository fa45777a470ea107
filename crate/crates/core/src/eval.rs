//! Word-level precision/recall/F and OOV rate.

use std::collections::HashSet;
use std::fmt;

use crate::error::{Error, Result};

/// Word-level segmentation score.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
}

impl Score {
    pub fn from_counts(gold: usize, predicted: usize, correct: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(correct, predicted);
        let recall = ratio(correct, gold);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
            gold,
            predicted,
            correct,
        }
    }
}

/// `P\tR\tF\tgold\tpredicted\tcorrect`, ratios with four decimals.
impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:.4}\t{:.4}\t{:.4}\t{}\t{}\t{}",
            self.precision, self.recall, self.f1, self.gold, self.predicted, self.correct
        )
    }
}

/// Half-open character spans of consecutive words.
pub fn word_spans<W: AsRef<str>>(words: &[W]) -> Vec<(usize, usize)> {
    let mut pos = 0;
    words
        .iter()
        .map(|w| {
            let start = pos;
            pos += w.as_ref().chars().count();
            (start, pos)
        })
        .collect()
}

/// Scores one predicted corpus against gold. Sentences are paired by
/// position and must contain the same characters.
pub fn score<G: AsRef<str>, P: AsRef<str>>(gold: &[Vec<G>], predicted: &[Vec<P>]) -> Result<Score> {
    if gold.len() != predicted.len() {
        return Err(Error::Data(format!(
            "gold has {} sentences, prediction has {}",
            gold.len(),
            predicted.len()
        )));
    }
    let (mut n_gold, mut n_pred, mut n_correct) = (0, 0, 0);
    for (i, (g, p)) in gold.iter().zip(predicted).enumerate() {
        let g_chars = g.iter().flat_map(|w| w.as_ref().chars());
        let p_chars = p.iter().flat_map(|w| w.as_ref().chars());
        if !g_chars.eq(p_chars) {
            return Err(Error::Data(format!(
                "sentence {}: gold and prediction differ in characters",
                i + 1
            )));
        }
        let gs: HashSet<_> = word_spans(g).into_iter().collect();
        let ps = word_spans(p);
        n_gold += gs.len();
        n_pred += ps.len();
        n_correct += ps.iter().filter(|s| gs.contains(s)).count();
    }
    Ok(Score::from_counts(n_gold, n_pred, n_correct))
}

/// Fraction of test word tokens whose type never occurs in `train`.
/// Zero for an empty test corpus.
pub fn oov_rate<A: AsRef<str>, B: AsRef<str>>(train: &[Vec<A>], test: &[Vec<B>]) -> f64 {
    let known: HashSet<&str> = train.iter().flatten().map(AsRef::as_ref).collect();
    let (mut total, mut oov) = (0usize, 0usize);
    for w in test.iter().flatten() {
        total += 1;
        if !known.contains(w.as_ref()) {
            oov += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        oov as f64 / total as f64
    }
}
