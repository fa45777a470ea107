//! Model configuration, the full parameter set, and the [`Model`] bundle.

use rand::Rng;

use crate::encoder::{self, Dropout, Vocab};
use crate::error::{Error, Result};
use crate::numkit::{glorot_scale, init_uniform, Matrix};
use crate::tagcodec::{Tag, NUM_TAGS};

/// One convolution width and how many filters use it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KernelSpec {
    pub size: usize,
    pub filters: usize,
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub dim: usize,
    /// Strictly ascending by `size`.
    pub kernels: Vec<KernelSpec>,
    /// Hard-mask illegal BMES transitions and start tags in the CRF.
    pub mask: bool,
}

impl Default for ModelConfig {
    /// 200-dimensional embeddings, kernel widths 2 to 5 with 100 filters each.
    fn default() -> Self {
        Self::uniform(200, &[2, 3, 4, 5], 100)
    }
}

impl ModelConfig {
    pub fn uniform(dim: usize, sizes: &[usize], filters_per_kernel: usize) -> Self {
        Self {
            dim,
            kernels: sizes
                .iter()
                .map(|&size| KernelSpec {
                    size,
                    filters: filters_per_kernel,
                })
                .collect(),
            mask: true,
        }
    }

    /// Total filter count F.
    pub fn hidden_dim(&self) -> usize {
        self.kernels.iter().map(|k| k.filters).sum()
    }

    pub fn max_kernel(&self) -> usize {
        self.kernels.iter().map(|k| k.size).max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        if self.kernels.is_empty() {
            return Err(Error::invalid("at least one kernel size is required"));
        }
        if self.kernels.iter().any(|k| k.size == 0 || k.filters == 0) {
            return Err(Error::invalid("kernel sizes and filter counts must be positive"));
        }
        if !self.kernels.windows(2).all(|w| w[0].size < w[1].size) {
            return Err(Error::invalid("kernel sizes must be strictly ascending"));
        }
        Ok(())
    }
}

/// Every trainable array. Also used as the gradient container.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// V × D.
    pub embedding: Matrix,
    /// Per kernel, ascending size: n_k × (k·D).
    pub filters: Vec<Matrix>,
    /// Per kernel: 1 × n_k.
    pub filter_bias: Vec<Matrix>,
    /// F × T.
    pub proj_w: Matrix,
    /// 1 × T.
    pub proj_b: Matrix,
    /// T × T, row = from tag.
    pub transitions: Matrix,
    /// 1 × T.
    pub start: Matrix,
    /// 1 × F.
    pub clf_u: Matrix,
    /// 1 × 1.
    pub clf_c: Matrix,
}

impl ModelParams {
    pub fn zeros(cfg: &ModelConfig, vocab_size: usize) -> Self {
        let f = cfg.hidden_dim();
        Self {
            embedding: Matrix::zeros(vocab_size, cfg.dim),
            filters: cfg
                .kernels
                .iter()
                .map(|k| Matrix::zeros(k.filters, k.size * cfg.dim))
                .collect(),
            filter_bias: cfg.kernels.iter().map(|k| Matrix::zeros(1, k.filters)).collect(),
            proj_w: Matrix::zeros(f, NUM_TAGS),
            proj_b: Matrix::zeros(1, NUM_TAGS),
            transitions: Matrix::zeros(NUM_TAGS, NUM_TAGS),
            start: Matrix::zeros(1, NUM_TAGS),
            clf_u: Matrix::zeros(1, f),
            clf_c: Matrix::zeros(1, 1),
        }
    }

    /// Glorot-uniform weights, zero biases, transitions and start scores
    /// uniform in ±0.05.
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, vocab_size: usize, rng: &mut R) -> Self {
        let f = cfg.hidden_dim();
        let d = cfg.dim;
        let embedding = init_uniform(vocab_size, d, glorot_scale(vocab_size, d), rng);
        let filters = cfg
            .kernels
            .iter()
            .map(|k| init_uniform(k.filters, k.size * d, glorot_scale(k.size * d, k.filters), rng))
            .collect();
        let proj_w = init_uniform(f, NUM_TAGS, glorot_scale(f, NUM_TAGS), rng);
        let transitions = init_uniform(NUM_TAGS, NUM_TAGS, 0.05, rng);
        let start = init_uniform(1, NUM_TAGS, 0.05, rng);
        let clf_u = init_uniform(1, f, glorot_scale(f, 1), rng);
        Self {
            embedding,
            filters,
            filter_bias: cfg.kernels.iter().map(|k| Matrix::zeros(1, k.filters)).collect(),
            proj_w,
            proj_b: Matrix::zeros(1, NUM_TAGS),
            transitions,
            start,
            clf_u,
            clf_c: Matrix::zeros(1, 1),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        Self {
            embedding: z(&self.embedding),
            filters: self.filters.iter().map(z).collect(),
            filter_bias: self.filter_bias.iter().map(z).collect(),
            proj_w: z(&self.proj_w),
            proj_b: z(&self.proj_b),
            transitions: z(&self.transitions),
            start: z(&self.start),
            clf_u: z(&self.clf_u),
            clf_c: z(&self.clf_c),
        }
    }

    /// All arrays in canonical order: embedding, filters (ascending k),
    /// filter biases, projection W, projection b, transitions, start, clf u,
    /// clf c. The model file payload uses the same order.
    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut out = vec![&self.embedding];
        out.extend(self.filters.iter());
        out.extend(self.filter_bias.iter());
        out.extend([
            &self.proj_w,
            &self.proj_b,
            &self.transitions,
            &self.start,
            &self.clf_u,
            &self.clf_c,
        ]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.embedding];
        out.extend(self.filters.iter_mut());
        out.extend(self.filter_bias.iter_mut());
        out.extend([
            &mut self.proj_w,
            &mut self.proj_b,
            &mut self.transitions,
            &mut self.start,
            &mut self.clf_u,
            &mut self.clf_c,
        ]);
        out
    }

    /// `self += s * other`; both must come from the same configuration.
    pub fn add_scaled(&mut self, other: &ModelParams, s: f64) -> Result<()> {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_scaled(b, s)?;
        }
        Ok(())
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|m| m.len()).sum()
    }
}

/// A complete segmenter: architecture, character vocabulary, parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: ModelParams,
}

impl Model {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, vocab: Vocab, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(&config, vocab.len(), rng);
        Ok(Self {
            config,
            vocab,
            params,
        })
    }

    /// Emission scores in inference mode.
    pub fn emissions(&self, chars: &[char]) -> Matrix {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let cache = encoder::encode(chars, self, Dropout::OFF, &mut rng)
            .expect("inference-mode encoding cannot fail");
        encoder::emission_scores(&cache.hidden, &self.params)
    }

    /// Viterbi-decoded tags.
    pub fn tag(&self, chars: &[char]) -> Vec<Tag> {
        if chars.is_empty() {
            return Vec::new();
        }
        let s = self.emissions(chars);
        crate::crf::viterbi(&s, &self.transitions())
    }

    pub fn segment(&self, chars: &[char]) -> Vec<String> {
        let tags = self.tag(chars);
        crate::tagcodec::tags_to_words(chars, &tags).expect("one tag per character")
    }

    pub fn transitions(&self) -> crate::crf::Transitions<'_> {
        crate::crf::Transitions {
            scores: &self.params.transitions,
            start: self.params.start.as_slice(),
            masked: self.config.mask,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_config_matches_reference_setup() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.dim, 200);
        assert_eq!(cfg.hidden_dim(), 400);
        assert_eq!(
            cfg.kernels.iter().map(|k| k.size).collect::<Vec<_>>(),
            vec![2, 3, 4, 5]
        );
        assert!(cfg.mask);
        cfg.validate().unwrap();
    }

    #[test]
    fn config_validation() {
        let mut cfg = ModelConfig::uniform(4, &[3, 2], 1);
        assert!(cfg.validate().is_err());
        cfg.kernels.sort_by_key(|k| k.size);
        cfg.validate().unwrap();
        cfg.dim = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn init_shapes_and_scales() {
        let cfg = ModelConfig::uniform(3, &[1, 2], 2);
        let p = ModelParams::init(&cfg, 7, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(p.embedding.shape(), (7, 3));
        assert_eq!(p.filters[1].shape(), (2, 6));
        assert_eq!(p.proj_w.shape(), (4, 4));
        assert_eq!(p.clf_u.shape(), (1, 4));
        assert!(p.filter_bias.iter().all(|b| b.as_slice().iter().all(|&v| v == 0.0)));
        assert!(p.transitions.as_slice().iter().all(|v| v.abs() <= 0.05));
        assert_eq!(p.tensors().len(), 1 + 2 + 2 + 6);
        assert_eq!(p.num_values(), 21 + 6 + 12 + 2 + 2 + 16 + 4 + 16 + 4 + 4 + 1);
    }
}
