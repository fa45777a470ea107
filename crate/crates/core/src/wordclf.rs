//! Word/non-word classifier sharing the segmentation encoder.
//!
//! The encoder output is max-pooled over positions and scored by a single
//! linear unit; the logistic loss `log(1 + e^{-y·s})` supplies the sigmoid
//! link, so `s` is the raw pre-sigmoid score.

use rand::Rng;

use crate::encoder::{self, Dropout, EncoderCache};
use crate::error::{Error, Result};
use crate::model::{Model, ModelParams};
use crate::numkit::Matrix;

/// A candidate word with label `+1` (word) or `-1` (non-word).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WordSample {
    pub chars: Vec<char>,
    pub label: i8,
}

impl WordSample {
    pub fn new(word: &str, label: i8) -> Result<Self> {
        if word.is_empty() {
            return Err(Error::invalid("empty word sample"));
        }
        if label != 1 && label != -1 {
            return Err(Error::invalid(format!("label must be +1 or -1, got {label}")));
        }
        Ok(Self {
            chars: word.chars().collect(),
            label,
        })
    }

    pub fn word(&self) -> String {
        self.chars.iter().collect()
    }
}

/// Forward state needed by [`clf_backward`].
#[derive(Clone, Debug)]
pub struct ClfCache {
    pub encoder: EncoderCache,
    pub pooled: Vec<f64>,
    /// Row that won the max for each hidden column.
    pub argmax: Vec<usize>,
    pub score: f64,
}

/// Column-wise max over rows; ties go to the first row.
pub fn max_pool(h: &Matrix) -> (Vec<f64>, Vec<usize>) {
    let mut pooled = h.row(0).to_vec();
    let mut argmax = vec![0; h.cols()];
    for i in 1..h.rows() {
        for (c, &v) in h.row(i).iter().enumerate() {
            if v > pooled[c] {
                pooled[c] = v;
                argmax[c] = i;
            }
        }
    }
    (pooled, argmax)
}

/// `s = uᵀ maxpool(encode(chars)) + c`.
pub fn score_word<R: Rng + ?Sized>(
    chars: &[char],
    model: &Model,
    dropout: Dropout,
    rng: &mut R,
) -> Result<ClfCache> {
    if chars.is_empty() {
        return Err(Error::invalid("cannot score an empty word"));
    }
    let enc = encoder::encode(chars, model, dropout, rng)?;
    let (pooled, argmax) = max_pool(&enc.hidden);
    let u = model.params.clf_u.as_slice();
    let score = u.iter().zip(&pooled).map(|(a, b)| a * b).sum::<f64>() + model.params.clf_c.get(0, 0);
    Ok(ClfCache {
        encoder: enc,
        pooled,
        argmax,
        score,
    })
}

/// `log(1 + exp(-y·s))`, evaluated without overflow.
pub fn clf_loss(score: f64, label: i8) -> f64 {
    softplus(-f64::from(label) * score)
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `dL/ds = -y·σ(-y·s)`.
pub fn clf_loss_grad(score: f64, label: i8) -> f64 {
    let y = f64::from(label);
    -y * sigmoid(-y * score)
}

/// Accumulates `weight · ∂L/∂θ` into `grads` for the head and the shared
/// encoder. Returns the unweighted loss.
pub fn clf_backward(
    cache: &ClfCache,
    label: i8,
    weight: f64,
    model: &Model,
    grads: &mut ModelParams,
) -> Result<f64> {
    let f = model.config.hidden_dim();
    if cache.pooled.len() != f || cache.argmax.len() != f || cache.encoder.hidden.cols() != f {
        return Err(Error::InvalidState(
            "classifier cache does not match this model".into(),
        ));
    }
    let ds = weight * clf_loss_grad(cache.score, label);
    for (g, &p) in grads.clf_u.as_mut_slice().iter_mut().zip(&cache.pooled) {
        *g += ds * p;
    }
    grads.clf_c.as_mut_slice()[0] += ds;

    let m = cache.encoder.hidden.rows();
    let mut d_hidden = Matrix::zeros(m, f);
    for (c, (&row, &u)) in cache.argmax.iter().zip(model.params.clf_u.as_slice()).enumerate() {
        d_hidden.set(row, c, ds * u);
    }
    encoder::hidden_backward(&cache.encoder, &d_hidden, model, grads)?;
    Ok(clf_loss(cache.score, label))
}
