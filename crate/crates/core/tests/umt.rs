mod common;

use paraumt_core::fixtures::token_accuracy;
use paraumt_core::nn::{grad_check, ParamStore, Tape};
use paraumt_core::umt::*;
use paraumt_core::util;

fn grad_setup(seed: u64) -> (UmtNet, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let net = UmtNet::init(&mut store, &common::grad_arch(), 8, &mut util::rng(seed)).unwrap();
    (net, store)
}

fn batches() -> (Vec<Vec<u32>>, Vec<Vec<u32>>) {
    (vec![vec![4, 5, 6], vec![7, 4]], vec![vec![5, 7, 7, 6], vec![6]])
}

const TOL: f64 = 1e-4;

#[test]
fn dae_gradient_matches_finite_differences() {
    let (net, mut store) = grad_setup(1);
    let ids: Vec<_> = store.ids().collect();
    let (a, _) = batches();
    let err = grad_check(&mut store, &ids, 1e-5, None, 0, |s, t| {
        dae_loss(t, &net, s, &a, Lang::Src, &NoiseConfig::default(), &mut util::rng(3))
    })
    .unwrap();
    assert!(err < TOL, "relative error {err}");
}

#[test]
fn bt_gradient_matches_finite_differences() {
    let (net, mut store) = grad_setup(2);
    let ids: Vec<_> = store.ids().collect();
    let (_, b) = batches();
    let err = grad_check(&mut store, &ids, 1e-5, None, 0, |s, t| {
        bt_loss(t, &net, s, &b, Lang::Tgt, &NoiseConfig::default(), &mut util::rng(4))
    })
    .unwrap();
    assert!(err < TOL, "relative error {err}");
}

#[test]
fn disc_gradient_matches_finite_differences() {
    let (net, mut store) = grad_setup(3);
    let ids = net.disc.param_ids().to_vec();
    let (a, b) = batches();
    let err = grad_check(&mut store, &ids, 1e-5, None, 0, |s, t| disc_step_loss(t, &net, s, &a, &b)).unwrap();
    assert!(err < TOL, "relative error {err}");
}

#[test]
fn adv_gradient_matches_finite_differences() {
    let (net, mut store) = grad_setup(4);
    let ids = net.seq.encoder_param_ids().to_vec();
    let (a, _) = batches();
    let err = grad_check(&mut store, &ids, 1e-5, None, 0, |s, t| adv_loss(t, &net, s, &a, Lang::Src)).unwrap();
    assert!(err < TOL, "relative error {err}");
}

#[test]
fn total_gradient_matches_finite_differences() {
    let (net, mut store) = grad_setup(5);
    let ids: Vec<_> = net.seq.param_ids().to_vec();
    let (a, b) = batches();
    let w = LossWeights {
        dae: 0.7,
        bt: 1.3,
        adv: 0.5,
    };
    let err = grad_check(&mut store, &ids, 1e-5, None, 0, |s, t| {
        Ok(total_loss(t, &net, s, &a, &b, &w, &NoiseConfig::default(), &mut util::rng(6))?.total)
    })
    .unwrap();
    assert!(err < TOL, "relative error {err}");
}

#[test]
fn disc_gradients_touch_only_the_discriminator() {
    let (net, store) = grad_setup(6);
    let (a, b) = batches();
    let mut t = Tape::new();
    let l = disc_step_loss(&mut t, &net, &store, &a, &b).unwrap();
    let g = t.backward(l).unwrap();
    let nz = g.nonzero_ids();
    assert!(!nz.is_empty());
    assert!(nz.iter().all(|id| net.disc.param_ids().contains(id)));
}

#[test]
fn adv_gradients_touch_only_the_encoder() {
    let (net, store) = grad_setup(7);
    let (a, _) = batches();
    let mut t = Tape::new();
    let l = adv_loss(&mut t, &net, &store, &a, Lang::Src).unwrap();
    let g = t.backward(l).unwrap();
    let nz = g.nonzero_ids();
    assert!(!nz.is_empty());
    assert!(nz.iter().all(|id| net.seq.encoder_param_ids().contains(id)));
}

fn uniform_disc(net: &UmtNet, store: &mut ParamStore<f64>) {
    let [_, _, w2, b2] = net.disc.param_ids();
    store.get_mut(w2).data_mut().fill(0.0);
    store.get_mut(b2).data_mut().fill(0.0);
}

#[test]
fn half_half_discriminator_gives_ln2_losses() {
    let (net, mut store) = grad_setup(8);
    uniform_disc(&net, &mut store);
    let (a, b) = batches();
    let mut t = Tape::new();
    let adv = adv_loss(&mut t, &net, &store, &a, Lang::Src).unwrap();
    let disc = disc_step_loss(&mut t, &net, &store, &a, &b).unwrap();
    let ln2 = 2f64.ln();
    assert!((t.value(adv).item() - ln2).abs() < 1e-12);
    assert!((t.value(disc).item() - ln2).abs() < 1e-12);
    assert!((t.value(adv).item() + t.value(disc).item() - 2.0 * ln2).abs() < 1e-12);
}

#[test]
fn disc_loss_values_and_label_check() {
    let (net, mut store) = grad_setup(9);
    let [_, _, w2, b2] = net.disc.param_ids();
    store.get_mut(w2).data_mut().fill(0.0);
    // p(label 1) = 0.25 everywhere
    store.get_mut(b2).data_mut().copy_from_slice(&[3f64.ln(), 0.0]);
    let (a, _) = batches();
    let mut t = Tape::new();
    let pooled = net.pooled_latents(&mut t, &store, &a, Lang::Src).unwrap();
    let l = disc_loss(&mut t, &net, &store, pooled, &[1, 1]).unwrap();
    assert!((t.value(l).item() - 4f64.ln()).abs() < 1e-12);
    assert!(disc_loss(&mut t, &net, &store, pooled, &[0, 2]).is_err());
    assert!(disc_loss(&mut t, &net, &store, pooled, &[0]).is_err());

    // a confident, correct discriminator
    store.get_mut(b2).data_mut().copy_from_slice(&[-1e3, 1e3]);
    let mut t = Tape::new();
    let pooled = net.pooled_latents(&mut t, &store, &a, Lang::Src).unwrap();
    let l = disc_loss(&mut t, &net, &store, pooled, &[1, 1]).unwrap();
    assert!(t.value(l).item().abs() < 1e-12);
    let adv = adv_loss(&mut t, &net, &store, &a, Lang::Src).unwrap();
    assert!(t.value(adv).item().abs() < 1e-12);
}

#[test]
fn single_token_vocabulary_has_zero_dae_loss() {
    // A one-entry output layer leaves softmax a single class.
    let mut store: ParamStore<f64> = ParamStore::new();
    let net = UmtNet::init(&mut store, &common::grad_arch(), 1, &mut util::rng(1)).unwrap();
    let mut t = Tape::new();
    let mem = net.seq.encode(&mut t, &store, &[0, 0], Some(0)).unwrap();
    let logits = net.seq.decode(&mut t, &store, mem, &[0], Some(0)).unwrap();
    let l = t.cross_entropy(logits, &[0]).unwrap();
    assert_eq!(t.value(l).item(), 0.0);
}

#[test]
fn losses_are_non_negative_and_empty_batches_fail() {
    let (net, store) = grad_setup(10);
    let (a, b) = batches();
    let mut t = Tape::new();
    let w = LossWeights::default();
    let parts = total_loss(&mut t, &net, &store, &a, &b, &w, &NoiseConfig::default(), &mut util::rng(1)).unwrap();
    for v in [parts.dae, parts.bt, parts.adv, parts.total] {
        assert!(t.value(v).item() >= 0.0);
    }
    let mut rng = util::rng(1);
    assert!(dae_loss(&mut t, &net, &store, &[], Lang::Src, &NoiseConfig::default(), &mut rng).is_err());
    assert!(bt_loss(&mut t, &net, &store, &[], Lang::Src, &NoiseConfig::default(), &mut rng).is_err());
    assert!(adv_loss(&mut t, &net, &store, &[], Lang::Src).is_err());
}

#[test]
fn bt_with_copying_translator_equals_clean_dae() {
    let (net, mut store) = grad_setup(11);
    let tags = net.seq.lang_embedding_id().unwrap();
    store.get_mut(tags).data_mut().fill(0.0);
    let (a, _) = batches();
    let none = NoiseConfig::none();
    let mut t = Tape::new();
    let dae = dae_loss(&mut t, &net, &store, &a, Lang::Src, &none, &mut util::rng(1)).unwrap();
    let bt = bt_loss_with(&mut t, &net, &store, &a, Lang::Src, &none, &mut util::rng(1), |x| Ok(x.to_vec())).unwrap();
    assert!((t.value(bt).item() - t.value(dae).item()).abs() < 1e-12);
}

#[test]
fn total_loss_is_linear_in_weights() {
    let (net, store) = grad_setup(12);
    let (a, b) = batches();
    let eval = |w: LossWeights| {
        let mut t = Tape::new();
        let p = total_loss(&mut t, &net, &store, &a, &b, &w, &NoiseConfig::default(), &mut util::rng(2)).unwrap();
        (t.value(p.dae).item(), t.value(p.bt).item(), t.value(p.adv).item(), t.value(p.total).item())
    };
    let (d, bt, adv, _) = eval(LossWeights::default());
    for w in [(0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.3, 2.0, 0.7)] {
        let lw = LossWeights { dae: w.0, bt: w.1, adv: w.2 };
        let total = eval(lw).3;
        assert!((total - (w.0 * d + w.1 * bt + w.2 * adv)).abs() < 1e-9);
    }
    assert_eq!(eval(LossWeights { dae: 0.0, bt: 0.0, adv: 0.0 }).3, 0.0);
}

fn tiny_train(steps: usize, init_steps: usize) -> UmtTrainConfig {
    UmtTrainConfig {
        arch: common::grad_arch(),
        steps,
        batch_size: 2,
        init: if init_steps > 0 { InitMode::WordByWord } else { InitMode::None },
        init_steps,
        seed: 9,
        ..UmtTrainConfig::default()
    }
}

#[test]
fn zero_steps_returns_the_initialized_model() {
    let d = common::dialects(20, 1);
    let cfg = tiny_train(0, 0);
    let out = train_umt(&d.encoded[0], &d.encoded[1], &d.vocab, d.tokenizer, &cfg).unwrap();
    let fresh = UmtModel::new(cfg.arch, d.vocab.clone(), d.tokenizer, cfg.seed).unwrap();
    assert!(out.history.is_empty());
    for (p, q) in out.model.store.iter().zip(fresh.store.iter()) {
        assert_eq!(p.value, q.value);
    }
    let mut m = fresh.clone();
    assert!(init_word_by_word(&mut m, &d.encoded[0], &d.encoded[1], &cfg).unwrap().is_empty());
    for (p, q) in m.store.iter().zip(fresh.store.iter()) {
        assert_eq!(p.value, q.value);
    }
}

#[test]
fn training_is_deterministic_down_to_checkpoint_bytes() {
    let d = common::dialects(20, 2);
    let cfg = tiny_train(5, 3);
    let run = || train_umt(&d.encoded[0], &d.encoded[1], &d.vocab, d.tokenizer, &cfg).unwrap();
    let (x, y) = (run(), run());
    assert_eq!(x.history, y.history);
    assert_eq!(
        x.model.to_checkpoint().unwrap().to_bytes().unwrap(),
        y.model.to_checkpoint().unwrap().to_bytes().unwrap()
    );
    let csv = history_csv(&x.history);
    assert!(csv.starts_with("step,dae,bt,adv,disc,total\n"));
    assert_eq!(csv.lines().count(), 6);
}

#[test]
fn translation_respects_the_length_cap() {
    let d = common::dialects(20, 3);
    let model = UmtModel::new(common::grad_arch(), d.vocab.clone(), d.tokenizer, 4).unwrap();
    for x in &d.encoded[0] {
        let y = model.translate(x, Lang::Src).unwrap();
        assert!(y.len() <= 2 * x.len() + 5);
        assert_eq!(y, model.translate(x, Lang::Src).unwrap());
    }
    assert!(model.translate(&[], Lang::Src).is_err());
}

#[test]
fn checkpoint_round_trip_preserves_translations() {
    let d = common::dialects(20, 4);
    let model = UmtModel::new(common::grad_arch(), d.vocab.clone(), d.tokenizer, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("umt.json");
    model.to_checkpoint().unwrap().save(&path).unwrap();
    let back = UmtModel::from_checkpoint(&paraumt_core::nn::Checkpoint::load(&path).unwrap()).unwrap();
    for x in &d.encoded[1] {
        assert_eq!(model.translate(x, Lang::Tgt).unwrap(), back.translate(x, Lang::Tgt).unwrap());
    }
}

#[test]
fn word_by_word_init_learns_to_copy() {
    let d = common::dialects(120, 5);
    let cfg = UmtTrainConfig {
        arch: common::smoke_arch(),
        batch_size: 8,
        lr: 0.003,
        init_steps: 400,
        seed: 5,
        ..UmtTrainConfig::default()
    };
    let mut model = UmtModel::new(cfg.arch, d.vocab.clone(), d.tokenizer, cfg.seed).unwrap();
    let (train_a, held_a) = d.encoded[0].split_at(100);
    let (train_b, _) = d.encoded[1].split_at(100);
    let hist = init_word_by_word(&mut model, train_a, train_b, &cfg).unwrap();
    assert_eq!(hist.len(), 400);
    let acc: f64 = held_a
        .iter()
        .map(|x| token_accuracy(&model.translate(x, Lang::Src).unwrap(), x))
        .sum::<f64>()
        / held_a.len() as f64;
    assert!(acc >= 0.8, "copy accuracy {acc}");
}
