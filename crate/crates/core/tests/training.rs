//! Loss composition, optimizer and training-loop behaviour.

use cws_core::dictgen::{self, Dictionary, Origin};
use cws_core::encoder::{Dropout, Vocab};
use cws_core::testkit::{SyntheticLanguage, TinyCase};
use cws_core::trainer::{
    batch_loss_cws, evaluate, loss_multitask, loss_pseudo, train, Mode, Optimizer, PseudoMixing,
    TrainConfig, TrainData,
};
use cws_core::wordclf::score_word;
use cws_core::{LabeledSentence, Model, ModelConfig, ModelParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn bits(p: &ModelParams) -> Vec<u64> {
    p.tensors().iter().flat_map(|t| t.as_slice().iter().map(|v| v.to_bits())).collect()
}

fn close(a: &ModelParams, b: &ModelParams, tol: f64) -> bool {
    a.tensors()
        .iter()
        .zip(b.tensors())
        .all(|(x, y)| x.as_slice().iter().zip(y.as_slice()).all(|(u, v)| (u - v).abs() <= tol))
}

struct Toy {
    lang: SyntheticLanguage,
    train: Vec<LabeledSentence>,
    dev: Vec<LabeledSentence>,
}

fn toy(n_train: usize) -> Toy {
    let mut r = rng(10);
    let lang = SyntheticLanguage::generate(20, 30, 6, &mut r);
    let train = lang.sentences(n_train, &mut r);
    let dev = lang.sentences(20, &mut r);
    Toy { lang, train, dev }
}

fn toy_model(lang: &SyntheticLanguage, seed: u64) -> Model {
    let vocab = Vocab::from_chars(lang.alphabet.iter().copied());
    Model::new(ModelConfig::uniform(8, &[2, 3, 4, 5], 4), vocab, &mut rng(seed)).unwrap()
}

#[test]
fn batch_additivity() {
    let case = TinyCase::random(&mut rng(1));
    let d = Dropout::OFF;
    let one = batch_loss_cws(&case.gold[..1], &case.model, d, &mut rng(0)).unwrap();
    let em = case.model.emissions(&case.gold[0].chars);
    let nll = cws_core::crf::nll(&em, &case.model.transitions(), &case.gold[0].tags).unwrap();
    assert!((one.loss - nll).abs() < 1e-12);

    let pair = vec![case.gold[0].clone(), case.gold[0].clone()];
    let two = batch_loss_cws(&pair, &case.model, d, &mut rng(0)).unwrap();
    assert_eq!(two.loss, 2.0 * one.loss);
    let mut doubled = one.grads.clone();
    doubled.add_scaled(&one.grads, 1.0).unwrap();
    assert!(close(&two.grads, &doubled, 1e-12));
}

#[test]
fn reductions_are_bitwise() {
    for seed in 0..10 {
        let case = TinyCase::random(&mut rng(seed));
        let d = Dropout::train(0.3);
        let base = batch_loss_cws(&case.gold, &case.model, d, &mut rng(5)).unwrap();
        let p = loss_pseudo(&case.gold, &case.pseudo, 0.0, &case.model, d, &mut rng(5)).unwrap();
        let m = loss_multitask(&case.gold, &case.words, 0.0, &case.model, d, &mut rng(5)).unwrap();
        assert_eq!(base.loss.to_bits(), p.loss.to_bits());
        assert_eq!(base.loss.to_bits(), m.loss.to_bits());
        assert_eq!(bits(&base.grads), bits(&p.grads));
        assert_eq!(bits(&base.grads), bits(&m.grads));
    }
}

#[test]
fn pseudo_weighting() {
    let case = TinyCase::random(&mut rng(2));
    let d = Dropout::OFF;
    let gold = batch_loss_cws(&case.gold, &case.model, d, &mut rng(0)).unwrap();
    let pseudo = batch_loss_cws(&case.pseudo, &case.model, d, &mut rng(0)).unwrap();

    let concat: Vec<_> = case.gold.iter().chain(&case.pseudo).cloned().collect();
    let all = batch_loss_cws(&concat, &case.model, d, &mut rng(0)).unwrap();
    let l1 = loss_pseudo(&case.gold, &case.pseudo, 1.0, &case.model, d, &mut rng(0)).unwrap();
    assert_eq!(l1.loss, all.loss);
    assert_eq!(bits(&l1.grads), bits(&all.grads));

    let half = loss_pseudo(&case.gold, &case.pseudo, 0.5, &case.model, d, &mut rng(0)).unwrap();
    assert!((half.loss - (gold.loss + 0.5 * pseudo.loss)).abs() < 1e-12);
    let mut expected = gold.grads.clone();
    expected.add_scaled(&pseudo.grads, 0.5).unwrap();
    assert!(close(&half.grads, &expected, 1e-12));

    assert!(loss_pseudo(&case.gold, &case.pseudo, -1.0, &case.model, d, &mut rng(0)).is_err());
}

#[test]
fn multitask_endpoints() {
    let case = TinyCase::random(&mut rng(3));
    let d = Dropout::OFF;
    let pure_clf = loss_multitask(&case.gold, &case.words, 1.0, &case.model, d, &mut rng(0)).unwrap();
    assert!(pure_clf.grads.transitions.as_slice().iter().all(|&v| v == 0.0));
    assert!(pure_clf.grads.start.as_slice().iter().all(|&v| v == 0.0));
    assert!(pure_clf.grads.proj_w.as_slice().iter().all(|&v| v == 0.0));
    let cws_only = loss_multitask(&case.gold, &case.words, 0.0, &case.model, d, &mut rng(0)).unwrap();
    assert!(cws_only.grads.clf_u.as_slice().iter().all(|&v| v == 0.0));

    let mixed = loss_multitask(&case.gold, &case.words, 0.3, &case.model, d, &mut rng(0)).unwrap();
    assert!((mixed.loss - (0.7 * cws_only.loss + 0.3 * pure_clf.loss)).abs() < 1e-12);
    assert!(loss_multitask(&case.gold, &case.words, 1.5, &case.model, d, &mut rng(0)).is_err());
}

#[test]
fn cws_step_moves_shared_encoder() {
    let t = toy(10);
    let mut model = toy_model(&t.lang, 1);
    let word: Vec<char> = t.lang.dict.word_at(0).chars().collect();
    let before = score_word(&word, &model, Dropout::OFF, &mut rng(0)).unwrap().score;
    let out = batch_loss_cws(&t.train, &model, Dropout::OFF, &mut rng(0)).unwrap();
    // the CWS loss never touches the classifier head
    assert!(out.grads.clf_u.as_slice().iter().all(|&v| v == 0.0));
    let mut opt = Optimizer::new(&model.params, 0.01, false);
    opt.step(&mut model.params, &out.grads).unwrap();
    let after = score_word(&word, &model, Dropout::OFF, &mut rng(0)).unwrap().score;
    assert_ne!(before, after);
}

#[test]
fn frozen_embeddings_stay_fixed() {
    let t = toy(10);
    let mut model = toy_model(&t.lang, 1);
    let emb = model.params.embedding.clone();
    let cfg = TrainConfig { max_epochs: 2, batch_size: 4, freeze_embeddings: true, ..Default::default() };
    let data = TrainData { train: &t.train, dev: &t.dev, ..Default::default() };
    train(&mut model, data, &cfg).unwrap();
    assert_eq!(model.params.embedding, emb);
}

#[test]
fn overfits_small_corpus() {
    let t = toy(20);
    let mut model = toy_model(&t.lang, 2);
    let (initial, _) = evaluate(&model, &t.train).unwrap();
    let cfg = TrainConfig {
        max_epochs: 50,
        patience: 50,
        batch_size: 4,
        learning_rate: 0.01,
        dropout: 0.0,
        ..Default::default()
    };
    // dev = train so the best snapshot is the best training fit
    let data = TrainData { train: &t.train, dev: &t.train, ..Default::default() };
    let report = train(&mut model, data, &cfg).unwrap();
    assert_eq!(report.epochs.len(), 50);
    let (fin, score) = evaluate(&model, &t.train).unwrap();
    assert!(fin <= 0.1 * initial, "initial {initial}, final {fin}");
    assert!(score.f1 > 0.95, "{score:?}");
}

#[test]
fn returns_best_snapshot_and_is_deterministic() {
    let t = toy(30);
    let cfg = TrainConfig { max_epochs: 8, batch_size: 8, learning_rate: 0.01, patience: 2, seed: 4, ..Default::default() };
    let data = TrainData { train: &t.train, dev: &t.dev, ..Default::default() };
    let mut a = toy_model(&t.lang, 3);
    let ra = train(&mut a, data, &cfg).unwrap();
    let mut b = toy_model(&t.lang, 3);
    let rb = train(&mut b, data, &cfg).unwrap();
    assert_eq!(ra.epochs, rb.epochs);
    assert_eq!(bits(&a.params), bits(&b.params));

    let min = ra.epochs.iter().map(|e| e.dev_loss).fold(f64::INFINITY, f64::min);
    let (dev_loss, _) = evaluate(&a, &t.dev).unwrap();
    assert_eq!(dev_loss, min);
    assert_eq!(ra.epochs[ra.best_epoch - 1].dev_loss, min);
    assert!(ra.stopping_epoch <= cfg.max_epochs);
}

#[test]
fn single_epoch_cap() {
    let t = toy(10);
    let mut model = toy_model(&t.lang, 1);
    let cfg = TrainConfig { max_epochs: 1, ..Default::default() };
    let data = TrainData { train: &t.train, dev: &t.dev, ..Default::default() };
    let report = train(&mut model, data, &cfg).unwrap();
    assert_eq!(report.epochs.len(), 1);
    assert_eq!(report.stopping_epoch, 1);
}

#[test]
fn auxiliary_modes_run() {
    let t = toy(20);
    let mut r = rng(6);
    let pseudo = dictgen::gen_pseudo_corpus(&t.lang.dict, 40, Default::default(), &mut r).unwrap();
    let words = dictgen::gen_classification_set(&t.lang.dict, 36, 0.5, &t.lang.dict.charset(), &mut r).unwrap();
    for (mode, mixing) in [
        (Mode::Pseudo, PseudoMixing::Paired),
        (Mode::Pseudo, PseudoMixing::Pooled),
        (Mode::Multitask, PseudoMixing::Paired),
    ] {
        let mut model = toy_model(&t.lang, 5);
        let cfg = TrainConfig { mode, pseudo_mixing: mixing, max_epochs: 3, batch_size: 8, ..Default::default() };
        let data = TrainData { train: &t.train, dev: &t.dev, pseudo: &pseudo, words: &words };
        let report = train(&mut model, data, &cfg).unwrap();
        assert!(report.epochs.iter().all(|e| e.train_loss.is_finite() && e.dev_loss.is_finite()));
    }
}

#[test]
fn input_errors() {
    let t = toy(5);
    let mut model = toy_model(&t.lang, 1);
    let cfg = TrainConfig::default();
    let empty = TrainData { train: &[], dev: &t.dev, ..Default::default() };
    assert!(train(&mut model, empty, &cfg).is_err());
    let no_pseudo = TrainData { train: &t.train, dev: &t.dev, ..Default::default() };
    let pcfg = TrainConfig { mode: Mode::Pseudo, ..Default::default() };
    assert!(train(&mut model, no_pseudo, &pcfg).is_err());
    let mcfg = TrainConfig { mode: Mode::Multitask, ..Default::default() };
    assert!(train(&mut model, no_pseudo, &mcfg).is_err());
}

#[test]
fn internal_dictionary_from_training_words() {
    let t = toy(15);
    let corpus: Vec<Vec<String>> = t.train.iter().map(|s| s.words()).collect();
    let internal = Dictionary::from_corpus(&corpus);
    assert!(internal.words().all(|w| internal.origin(w) == Some(Origin::Internal)));
    assert!(internal.words().all(|w| t.lang.dict.contains(w)));
}
