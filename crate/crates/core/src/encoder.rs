//! Character embedding + multi-width convolution encoder and the emission
//! projection, with exact backward passes.
//!
//! For a kernel of width `k`, position `i` sees the window
//! `[i - ceil((k-1)/2), i + floor((k-1)/2)]`; positions outside the sentence
//! read the trainable PAD embedding row, so every width yields exactly `M`
//! output rows.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{Model, ModelParams};
use crate::numkit::{dropout_apply, Matrix};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
const RESERVED: usize = 2;

/// Character ↔ index map. Indices 0 and 1 are PAD and UNK.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    index: HashMap<char, usize>,
    chars: Vec<char>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    /// Vocabulary over `chars` in order of first appearance.
    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Self {
        let mut v = Self::new();
        for c in chars {
            v.insert(c);
        }
        v
    }

    /// Adds `c` if absent and returns its index.
    pub fn insert(&mut self, c: char) -> usize {
        if let Some(&i) = self.index.get(&c) {
            return i;
        }
        let i = self.chars.len() + RESERVED;
        self.chars.push(c);
        self.index.insert(c, i);
        i
    }

    /// Total size including the reserved entries.
    pub fn len(&self) -> usize {
        self.chars.len() + RESERVED
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn get(&self, c: char) -> Option<usize> {
        self.index.get(&c).copied()
    }

    /// Index of `c`, or UNK.
    pub fn lookup(&self, c: char) -> usize {
        self.get(c).unwrap_or(UNK)
    }

    /// Character at a non-reserved index.
    pub fn char_at(&self, i: usize) -> Option<char> {
        i.checked_sub(RESERVED).and_then(|j| self.chars.get(j)).copied()
    }

    /// Non-reserved characters in index order.
    pub fn chars(&self) -> &[char] {
        &self.chars
    }
}

/// Dropout rate and whether it is active.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dropout {
    pub rate: f64,
    pub training: bool,
}

impl Dropout {
    pub const OFF: Dropout = Dropout {
        rate: 0.0,
        training: false,
    };

    pub fn train(rate: f64) -> Self {
        Self {
            rate,
            training: true,
        }
    }
}

/// Forward activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct EncoderCache {
    pub indices: Vec<usize>,
    /// Embeddings after dropout, M × D.
    pub embedded: Matrix,
    pub embed_mask: Matrix,
    /// Per kernel pre-activations, M × n_k.
    pub pre: Vec<Matrix>,
    /// Concatenated hidden layer after dropout, M × F.
    pub hidden: Matrix,
    pub hidden_mask: Matrix,
}

/// Row `i` is the embedding of `chars[i]`; unknown characters read UNK.
pub fn embed(chars: &[char], vocab: &Vocab, params: &ModelParams) -> Matrix {
    let d = params.embedding.cols();
    let mut out = Matrix::zeros(chars.len(), d);
    for (i, &c) in chars.iter().enumerate() {
        out.row_mut(i)
            .copy_from_slice(params.embedding.row(vocab.lookup(c)));
    }
    out
}

/// Window offsets `(left, right)` for a kernel of width `k`.
#[inline]
pub fn window(k: usize) -> (usize, usize) {
    (k / 2, (k - 1) / 2)
}

fn source_row<'a>(emb: &'a Matrix, pad: &'a [f64], pos: isize) -> &'a [f64] {
    if pos >= 0 && (pos as usize) < emb.rows() {
        emb.row(pos as usize)
    } else {
        pad
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Pre-activation convolution output, M × n_k.
pub fn conv_pre(emb: &Matrix, pad: &[f64], kernel: usize, filters: &Matrix, bias: &[f64]) -> Matrix {
    let d = emb.cols();
    let (left, _) = window(kernel);
    let m = emb.rows();
    let mut out = Matrix::zeros(m, filters.rows());
    for i in 0..m {
        let start = i as isize - left as isize;
        let row = out.row_mut(i);
        for (f, o) in row.iter_mut().enumerate() {
            let w = filters.row(f);
            let mut acc = bias[f];
            for j in 0..kernel {
                let src = source_row(emb, pad, start + j as isize);
                acc += dot(&w[j * d..(j + 1) * d], src);
            }
            *o = acc;
        }
    }
    out
}

/// ReLU of [`conv_pre`]: one row per input position.
pub fn conv_forward(emb: &Matrix, pad: &[f64], kernel: usize, filters: &Matrix, bias: &[f64]) -> Matrix {
    crate::numkit::relu(&conv_pre(emb, pad, kernel, filters, bias))
}

/// Embedding → dropout → convolutions (ascending width, concatenated) →
/// dropout.
pub fn encode<R: Rng + ?Sized>(
    chars: &[char],
    model: &Model,
    dropout: Dropout,
    rng: &mut R,
) -> Result<EncoderCache> {
    let params = &model.params;
    let indices: Vec<usize> = chars.iter().map(|&c| model.vocab.lookup(c)).collect();
    let raw = embed(chars, &model.vocab, params);
    let (embedded, embed_mask) = dropout_apply(&raw, dropout.rate, rng, dropout.training)?;
    let pad = params.embedding.row(PAD);

    let m = chars.len();
    let f = model.config.hidden_dim();
    let mut concat = Matrix::zeros(m, f);
    let mut pre = Vec::with_capacity(model.config.kernels.len());
    let mut offset = 0;
    for (ki, spec) in model.config.kernels.iter().enumerate() {
        let p = conv_pre(
            &embedded,
            pad,
            spec.size,
            &params.filters[ki],
            params.filter_bias[ki].as_slice(),
        );
        for i in 0..m {
            let dst = &mut concat.row_mut(i)[offset..offset + spec.filters];
            for (d, &v) in dst.iter_mut().zip(p.row(i)) {
                *d = v.max(0.0);
            }
        }
        offset += spec.filters;
        pre.push(p);
    }
    let (hidden, hidden_mask) = dropout_apply(&concat, dropout.rate, rng, dropout.training)?;
    Ok(EncoderCache {
        indices,
        embedded,
        embed_mask,
        pre,
        hidden,
        hidden_mask,
    })
}

/// `S_i = Wᵀ h_i + b` for every row of `hidden`.
pub fn emission_scores(hidden: &Matrix, params: &ModelParams) -> Matrix {
    let mut s = hidden
        .matmul(&params.proj_w)
        .expect("hidden width matches projection");
    let b = params.proj_b.as_slice();
    for i in 0..s.rows() {
        for (v, bb) in s.row_mut(i).iter_mut().zip(b) {
            *v += bb;
        }
    }
    s
}

/// Backpropagates `d_emissions` through the projection and the encoder,
/// accumulating into `grads`.
pub fn encoder_backward(
    cache: &EncoderCache,
    d_emissions: &Matrix,
    model: &Model,
    grads: &mut ModelParams,
) -> Result<()> {
    let params = &model.params;
    if d_emissions.rows() != cache.hidden.rows() || d_emissions.cols() != params.proj_w.cols() {
        return Err(Error::InvalidState(format!(
            "cached forward pass has {} positions, gradient has shape {:?}",
            cache.hidden.rows(),
            d_emissions.shape()
        )));
    }
    // dW = Hᵀ dS, db = Σ_i dS_i, dH = dS Wᵀ
    let t = params.proj_w.cols();
    for i in 0..d_emissions.rows() {
        let ds = d_emissions.row(i);
        let h = cache.hidden.row(i);
        for (fi, &hv) in h.iter().enumerate() {
            if hv == 0.0 {
                continue;
            }
            let gw = &mut grads.proj_w.row_mut(fi)[..t];
            for (g, &d) in gw.iter_mut().zip(ds) {
                *g += hv * d;
            }
        }
        for (g, &d) in grads.proj_b.as_mut_slice().iter_mut().zip(ds) {
            *g += d;
        }
    }
    let d_hidden = d_emissions.matmul(&params.proj_w.transpose())?;
    hidden_backward(cache, &d_hidden, model, grads)
}

/// Backpropagates a gradient on the (post-dropout) hidden layer down to the
/// filters and embeddings.
pub fn hidden_backward(
    cache: &EncoderCache,
    d_hidden: &Matrix,
    model: &Model,
    grads: &mut ModelParams,
) -> Result<()> {
    let params = &model.params;
    let cfg = &model.config;
    if d_hidden.shape() != cache.hidden.shape()
        || cache.pre.len() != cfg.kernels.len()
        || cache.indices.len() != cache.hidden.rows()
    {
        return Err(Error::InvalidState(
            "encoder cache does not match this gradient or model".into(),
        ));
    }
    let m = d_hidden.rows();
    let d = cfg.dim;
    let d_concat = d_hidden.hadamard(&cache.hidden_mask)?;
    let mut d_embedded = Matrix::zeros(m, d);
    let mut d_pad = vec![0.0; d];
    let pad = params.embedding.row(PAD);

    let mut offset = 0;
    for (ki, spec) in cfg.kernels.iter().enumerate() {
        let k = spec.size;
        let (left, _) = window(k);
        let filt = &params.filters[ki];
        let pre = &cache.pre[ki];
        for i in 0..m {
            let start = i as isize - left as isize;
            for fi in 0..spec.filters {
                if pre.get(i, fi) <= 0.0 {
                    continue;
                }
                let g = d_concat.get(i, offset + fi);
                if g == 0.0 {
                    continue;
                }
                grads.filter_bias[ki].as_mut_slice()[fi] += g;
                let w = filt.row(fi);
                for j in 0..k {
                    let pos = start + j as isize;
                    let src = source_row(&cache.embedded, pad, pos);
                    let gw = &mut grads.filters[ki].row_mut(fi)[j * d..(j + 1) * d];
                    for (gv, &s) in gw.iter_mut().zip(src) {
                        *gv += g * s;
                    }
                    let wj = &w[j * d..(j + 1) * d];
                    let dst: &mut [f64] = if pos >= 0 && (pos as usize) < m {
                        d_embedded.row_mut(pos as usize)
                    } else {
                        &mut d_pad
                    };
                    for (dv, &wv) in dst.iter_mut().zip(wj) {
                        *dv += g * wv;
                    }
                }
            }
        }
        offset += spec.filters;
    }

    for (gv, dv) in grads.embedding.row_mut(PAD).iter_mut().zip(&d_pad) {
        *gv += dv;
    }
    let d_raw = d_embedded.hadamard(&cache.embed_mask)?;
    for (i, &idx) in cache.indices.iter().enumerate() {
        for (gv, dv) in grads.embedding.row_mut(idx).iter_mut().zip(d_raw.row(i)) {
            *gv += dv;
        }
    }
    Ok(())
}

/// Character vectors read from a word2vec text file.
#[derive(Clone, Debug, PartialEq)]
pub struct PretrainedEmbeddings {
    pub dim: usize,
    pub vectors: Vec<(char, Vec<f64>)>,
}

impl PretrainedEmbeddings {
    /// Parses word2vec text: a `count dim` header, then one token followed by
    /// `dim` floats per line. Tokens longer than one character are skipped.
    pub fn parse<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let header = match lines.next() {
            Some((_, line)) => line.map_err(|e| Error::Data(format!("line 1: {e}")))?,
            None => return Err(Error::Data("empty embedding file".into())),
        };
        let fields: Vec<&str> = header.split_whitespace().collect();
        let dim = match fields.as_slice() {
            [_, dim] => dim
                .parse::<usize>()
                .map_err(|_| Error::Data(format!("line 1: bad dimension {dim:?}")))?,
            _ => return Err(Error::Data("line 1: expected \"count dim\"".into())),
        };
        let mut vectors = Vec::new();
        for (i, line) in lines {
            let line = line.map_err(|e| Error::Data(format!("line {}: {e}", i + 1)))?;
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let values = parts
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Data(format!("line {}: {e}", i + 1)))?;
            if values.len() != dim {
                return Err(Error::Data(format!(
                    "line {}: expected {dim} values, found {}",
                    i + 1,
                    values.len()
                )));
            }
            let mut cs = token.chars();
            if let (Some(c), None) = (cs.next(), cs.next()) {
                vectors.push((c, values));
            }
        }
        Ok(Self { dim, vectors })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse(std::io::BufReader::new(file))
    }

    /// Overwrites the embedding rows of characters present in `model`'s
    /// vocabulary. PAD and UNK keep their random rows. Returns the number of
    /// rows replaced.
    pub fn apply(&self, model: &mut Model) -> Result<usize> {
        if self.dim != model.config.dim {
            return Err(Error::invalid(format!(
                "embedding file has dimension {}, model expects {}",
                self.dim, model.config.dim
            )));
        }
        let mut n = 0;
        for (c, v) in &self.vectors {
            if let Some(i) = model.vocab.get(*c) {
                model.params.embedding.row_mut(i).copy_from_slice(v);
                n += 1;
            }
        }
        Ok(n)
    }
}
