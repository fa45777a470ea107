//! Training: the baseline CRF likelihood, its pseudo-data weighted variant,
//! and the joint segmentation + word-classification objective.
//!
//! Per-sentence losses are summed within a batch, not averaged.

use std::fmt;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::crf::{self, crf_gradients};
use crate::encoder::{self, Dropout};
use crate::error::{Error, Result};
use crate::eval::{self, Score};
use crate::model::{Model, ModelParams};
use crate::numkit::{rmsprop_step, OptState};
use crate::tagcodec::LabeledSentence;
use crate::wordclf::{self, WordSample};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Gold sentences only.
    Baseline,
    /// Gold plus dictionary pseudo sentences weighted by λ₁.
    Pseudo,
    /// Segmentation and word classification, mixed by λ₂.
    Multitask,
}

/// How pseudo sentences enter the batches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PseudoMixing {
    /// Every step pairs a gold batch with an equally sized pseudo batch; the
    /// pseudo corpus is cycled independently.
    Paired,
    /// Gold and pseudo sentences share one shuffled pool; pseudo sentences
    /// carry weight λ₁.
    Pooled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    pub lambda1: f64,
    pub lambda2: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub dropout: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub pseudo_mixing: PseudoMixing,
    pub freeze_embeddings: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Baseline,
            lambda1: 1.0,
            lambda2: 0.3,
            learning_rate: 0.001,
            batch_size: 64,
            dropout: 0.3,
            patience: 3,
            max_epochs: 50,
            seed: 0,
            pseudo_mixing: PseudoMixing::Paired,
            freeze_embeddings: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda1.is_finite()) {
            return Err(Error::invalid(format!("lambda1 = {} must be >= 0", self.lambda1)));
        }
        if !(0.0..=1.0).contains(&self.lambda2) {
            return Err(Error::invalid(format!("lambda2 = {} not in [0, 1]", self.lambda2)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must be in [0, 1)"));
        }
        if self.patience == 0 {
            return Err(Error::invalid("patience must be at least 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::invalid("max epochs must be at least 1"));
        }
        Ok(())
    }

    fn dropout(&self) -> Dropout {
        Dropout::train(self.dropout)
    }
}

/// A loss value and its gradient with respect to every parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct LossAndGrads {
    pub loss: f64,
    pub grads: ModelParams,
}

/// Adds `weight · ∇nll(sentence)` into `grads`; returns the unweighted nll.
fn accumulate_sentence<R: Rng + ?Sized>(
    sentence: &LabeledSentence,
    weight: f64,
    model: &Model,
    dropout: Dropout,
    rng: &mut R,
    grads: &mut ModelParams,
) -> Result<f64> {
    let cache = encoder::encode(&sentence.chars, model, dropout, rng)?;
    let s = encoder::emission_scores(&cache.hidden, &model.params);
    let mut g = crf_gradients(&s, &model.transitions(), &sentence.tags)?;
    if weight != 1.0 {
        g.d_emissions.scale(weight);
        g.d_transitions.scale(weight);
        g.d_start.iter_mut().for_each(|v| *v *= weight);
    }
    grads.transitions.add_scaled(&g.d_transitions, 1.0)?;
    for (a, b) in grads.start.as_mut_slice().iter_mut().zip(&g.d_start) {
        *a += b;
    }
    encoder::encoder_backward(&cache, &g.d_emissions, model, grads)?;
    Ok(g.nll)
}

fn accumulate_cws<R: Rng + ?Sized>(
    batch: &[LabeledSentence],
    weight: f64,
    model: &Model,
    dropout: Dropout,
    rng: &mut R,
    out: &mut LossAndGrads,
) -> Result<()> {
    for s in batch {
        if s.is_empty() {
            continue;
        }
        let nll = accumulate_sentence(s, weight, model, dropout, rng, &mut out.grads)?;
        out.loss += weight * nll;
    }
    Ok(())
}

fn accumulate_words<R: Rng + ?Sized>(
    batch: &[WordSample],
    weight: f64,
    model: &Model,
    dropout: Dropout,
    rng: &mut R,
    out: &mut LossAndGrads,
) -> Result<()> {
    for w in batch {
        let cache = wordclf::score_word(&w.chars, model, dropout, rng)?;
        let l = wordclf::clf_backward(&cache, w.label, weight, model, &mut out.grads)?;
        out.loss += weight * l;
    }
    Ok(())
}

fn empty_result(model: &Model) -> LossAndGrads {
    LossAndGrads {
        loss: 0.0,
        grads: model.params.zeros_like(),
    }
}

/// Σ nll over the batch with gradients summed into one set.
pub fn batch_loss_cws<R: Rng + ?Sized>(
    batch: &[LabeledSentence],
    model: &Model,
    dropout: Dropout,
    rng: &mut R,
) -> Result<LossAndGrads> {
    let mut out = empty_result(model);
    accumulate_cws(batch, 1.0, model, dropout, rng, &mut out)?;
    Ok(out)
}

/// Gold loss plus λ₁ times the pseudo loss. The pseudo term is skipped
/// entirely at λ₁ = 0.
pub fn loss_pseudo<R: Rng + ?Sized>(
    gold: &[LabeledSentence],
    pseudo: &[LabeledSentence],
    lambda1: f64,
    model: &Model,
    dropout: Dropout,
    rng: &mut R,
) -> Result<LossAndGrads> {
    if !(lambda1 >= 0.0) {
        return Err(Error::invalid(format!("lambda1 = {lambda1} must be >= 0")));
    }
    let mut out = batch_loss_cws(gold, model, dropout, rng)?;
    if lambda1 != 0.0 {
        accumulate_cws(pseudo, lambda1, model, dropout, rng, &mut out)?;
    }
    Ok(out)
}

/// `(1−λ₂)·Σ nll + λ₂·Σ log(1+e^{−y s})`. A branch whose weight is zero is
/// not evaluated.
pub fn loss_multitask<R: Rng + ?Sized>(
    cws: &[LabeledSentence],
    words: &[WordSample],
    lambda2: f64,
    model: &Model,
    dropout: Dropout,
    rng: &mut R,
) -> Result<LossAndGrads> {
    if !(0.0..=1.0).contains(&lambda2) {
        return Err(Error::invalid(format!("lambda2 = {lambda2} not in [0, 1]")));
    }
    let mut out = empty_result(model);
    if lambda2 != 1.0 {
        accumulate_cws(cws, 1.0 - lambda2, model, dropout, rng, &mut out)?;
    }
    if lambda2 != 0.0 {
        accumulate_words(words, lambda2, model, dropout, rng, &mut out)?;
    }
    Ok(out)
}

/// RMSProp over every parameter array.
#[derive(Clone, Debug)]
pub struct Optimizer {
    states: Vec<OptState>,
    freeze_embeddings: bool,
}

impl Optimizer {
    pub fn new(params: &ModelParams, learning_rate: f64, freeze_embeddings: bool) -> Self {
        Self {
            states: params
                .tensors()
                .iter()
                .map(|m| OptState::new(m.rows(), m.cols(), learning_rate))
                .collect(),
            freeze_embeddings,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) -> Result<()> {
        let skip = usize::from(self.freeze_embeddings);
        for ((p, g), st) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.states.iter_mut())
            .skip(skip)
        {
            rmsprop_step(p, g, st)?;
        }
        Ok(())
    }
}

/// Stops after `patience` consecutive epochs without a new best loss.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> Verdict {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.stale = 0;
            Verdict::Improved
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                Verdict::Stop
            } else {
                Verdict::Continue
            }
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_f: f64,
}

/// `epoch\ttrain_loss\tdev_loss\tdev_F`.
impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{:.6}\t{:.6}\t{:.4}",
            self.epoch, self.train_loss, self.dev_loss, self.dev_f
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopping_epoch: usize,
    pub wall_time: Duration,
}

impl fmt::Display for TrainReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.epochs {
            writeln!(f, "{e}")?;
        }
        Ok(())
    }
}

/// Training inputs. `pseudo` is used in pseudo mode, `words` in multitask
/// mode.
#[derive(Clone, Copy, Debug, Default)]
pub struct TrainData<'a> {
    pub train: &'a [LabeledSentence],
    pub dev: &'a [LabeledSentence],
    pub pseudo: &'a [LabeledSentence],
    pub words: &'a [WordSample],
}

/// Dev-set loss (Σ nll, no dropout) and word-level score of Viterbi output.
pub fn evaluate(model: &Model, sentences: &[LabeledSentence]) -> Result<(f64, Score)> {
    let trans = model.transitions();
    let mut loss = 0.0;
    let mut gold = Vec::with_capacity(sentences.len());
    let mut pred = Vec::with_capacity(sentences.len());
    for s in sentences {
        if s.is_empty() {
            continue;
        }
        let em = model.emissions(&s.chars);
        loss += crf::nll(&em, &trans, &s.tags)?;
        let tags = crf::viterbi(&em, &trans);
        pred.push(crate::tagcodec::tags_to_words(&s.chars, &tags)?);
        gold.push(s.words());
    }
    Ok((loss, eval::score(&gold, &pred)?))
}

/// Draws fixed-size batches from a corpus forever, reshuffling on wrap.
struct Cycler {
    order: Vec<usize>,
    pos: usize,
}

impl Cycler {
    fn new<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(rng);
        Self { order, pos: 0 }
    }

    fn next_batch<R: Rng + ?Sized>(&mut self, n: usize, rng: &mut R) -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn pick<T: Clone>(items: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| items[i].clone()).collect()
}

pub fn train(model: &mut Model, data: TrainData<'_>, cfg: &TrainConfig) -> Result<TrainReport> {
    train_with_progress(model, data, cfg, |_| {})
}

/// Trains in place, leaving `model` at the parameters of the epoch with the
/// lowest dev loss. `progress` sees each epoch record as it completes.
pub fn train_with_progress(
    model: &mut Model,
    data: TrainData<'_>,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.train.is_empty() || data.dev.is_empty() {
        return Err(Error::invalid("training and dev sets must be non-empty"));
    }
    match cfg.mode {
        Mode::Pseudo if data.pseudo.is_empty() => {
            return Err(Error::invalid("pseudo mode needs pseudo sentences"));
        }
        Mode::Multitask if data.words.is_empty() => {
            return Err(Error::invalid("multitask mode needs word samples"));
        }
        _ => {}
    }

    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Optimizer::new(&model.params, cfg.learning_rate, cfg.freeze_embeddings);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = model.params.clone();
    let mut epochs = Vec::new();
    let dropout = cfg.dropout();
    let bs = cfg.batch_size;

    let mut pseudo_cycle = Cycler::new(data.pseudo.len(), &mut rng);
    let mut word_cycle = Cycler::new(data.words.len(), &mut rng);

    for epoch in 1..=cfg.max_epochs {
        let mut train_loss = 0.0;
        let pooled = cfg.mode == Mode::Pseudo && cfg.pseudo_mixing == PseudoMixing::Pooled;
        if pooled {
            // (is_pseudo, index) pool
            let mut pool: Vec<(bool, usize)> = (0..data.train.len())
                .map(|i| (false, i))
                .chain((0..data.pseudo.len()).map(|i| (true, i)))
                .collect();
            pool.shuffle(&mut rng);
            for chunk in pool.chunks(bs) {
                let mut out = empty_result(model);
                for &(is_pseudo, i) in chunk {
                    let (s, w) = if is_pseudo {
                        (&data.pseudo[i], cfg.lambda1)
                    } else {
                        (&data.train[i], 1.0)
                    };
                    if w == 0.0 {
                        continue;
                    }
                    accumulate_cws(std::slice::from_ref(s), w, model, dropout, &mut rng, &mut out)?;
                }
                train_loss += out.loss;
                opt.step(&mut model.params, &out.grads)?;
            }
        } else {
            let mut order: Vec<usize> = (0..data.train.len()).collect();
            order.shuffle(&mut rng);
            for chunk in order.chunks(bs) {
                let gold = pick(data.train, chunk);
                let out = match cfg.mode {
                    Mode::Baseline => batch_loss_cws(&gold, model, dropout, &mut rng)?,
                    Mode::Pseudo => {
                        let idx = pseudo_cycle.next_batch(bs, &mut rng);
                        let pseudo = pick(data.pseudo, &idx);
                        loss_pseudo(&gold, &pseudo, cfg.lambda1, model, dropout, &mut rng)?
                    }
                    Mode::Multitask => {
                        let idx = word_cycle.next_batch(bs, &mut rng);
                        let words = pick(data.words, &idx);
                        loss_multitask(&gold, &words, cfg.lambda2, model, dropout, &mut rng)?
                    }
                };
                train_loss += out.loss;
                opt.step(&mut model.params, &out.grads)?;
            }
        }

        let (dev_loss, dev_score) = evaluate(model, data.dev)?;
        let record = EpochRecord {
            epoch,
            train_loss,
            dev_loss,
            dev_f: dev_score.f1,
        };
        progress(&record);
        epochs.push(record);
        match stopper.observe(epoch, dev_loss) {
            Verdict::Improved => best.clone_from(&model.params),
            Verdict::Continue => {}
            Verdict::Stop => break,
        }
    }

    model.params = best;
    let stopping_epoch = epochs.len();
    Ok(TrainReport {
        epochs,
        best_epoch: stopper.best_epoch(),
        stopping_epoch,
        wall_time: clock.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stopping_rule() {
        let mut es = EarlyStopping::new(3);
        let verdicts: Vec<Verdict> = [5.0, 4.0, 4.1, 4.2, 4.3]
            .iter()
            .enumerate()
            .map(|(i, &l)| es.observe(i + 1, l))
            .collect();
        assert_eq!(
            verdicts,
            vec![
                Verdict::Improved,
                Verdict::Improved,
                Verdict::Continue,
                Verdict::Continue,
                Verdict::Stop
            ]
        );
        assert_eq!(es.best_epoch(), 2);
        assert_eq!(es.best_loss(), 4.0);
    }

    #[test]
    fn equal_loss_is_not_an_improvement() {
        let mut es = EarlyStopping::new(1);
        assert_eq!(es.observe(1, 2.0), Verdict::Improved);
        assert_eq!(es.observe(2, 2.0), Verdict::Stop);
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = TrainConfig::default();
        assert_eq!(
            (c.learning_rate, c.batch_size, c.dropout, c.patience),
            (0.001, 64, 0.3, 3)
        );
        c.validate().unwrap();
        for bad in [
            TrainConfig { lambda1: -0.1, ..c.clone() },
            TrainConfig { lambda2: 1.1, ..c.clone() },
            TrainConfig { batch_size: 0, ..c.clone() },
            TrainConfig { patience: 0, ..c.clone() },
            TrainConfig { dropout: 1.0, ..c.clone() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn record_format() {
        let r = EpochRecord { epoch: 3, train_loss: 12.5, dev_loss: 4.25, dev_f: 0.91234 };
        assert_eq!(r.to_string(), "3\t12.500000\t4.250000\t0.9123");
    }
}
