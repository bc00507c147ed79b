use super::*;
use crate::model::{DecoderKind, HeadKind, ModelConfig};
use crate::synth::{generate_corpus, CorpusConfig};

fn small_model(head: HeadKind, dropout: f64) -> CaModel {
    CaModel::new(ModelConfig {
        grid_len: 16,
        enc_channels: vec![4, 4, 8, 8],
        heads: 2,
        spatial_extent_k: 3,
        sasa_layers: 1,
        decoder_kind: DecoderKind::Sasa,
        head_kind: head,
        dropout,
        fc_hidden: 16,
        max_perf_frames: 256,
        seed: 1,
    })
    .unwrap()
}

fn corpus() -> Corpus {
    generate_corpus(&CorpusConfig {
        pieces: 12,
        min_score_frames: 16,
        max_score_frames: 20,
        ..CorpusConfig::default()
    })
    .unwrap()
}

fn cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        learning_rate: 3e-3,
        lambda: 0.05,
        ..TrainConfig::default()
    }
}

fn trainable(m: &CaModel) -> Vec<(String, Vec<f64>)> {
    m.params()
        .iter()
        .filter(|(_, t)| t.requires_grad)
        .map(|(n, t)| (n.to_string(), t.data().to_vec()))
        .collect()
}

#[test]
fn zero_rate_changes_nothing() {
    let c = corpus();
    let mut m = small_model(HeadKind::Regression, 0.0);
    let before = trainable(&m);
    let n_train = c.split(Split::Train).len();
    let cfg = TrainConfig {
        learning_rate: 0.0,
        batch_size: n_train,
        ..cfg(4)
    };
    let r = fit(&c, &mut m, &cfg, |_| {}).unwrap();
    assert_eq!(trainable(&m), before);
    let first = r.curve[0].train_loss;
    assert!(r.curve.iter().all(|e| (e.train_loss - first).abs() <= 1e-12 * first.abs()));
}

#[test]
fn zero_epochs_keep_initial_weights() {
    let c = corpus();
    let mut m = small_model(HeadKind::Regression, 0.1);
    let init = m.clone();
    let r = fit(&c, &mut m, &cfg(0), |_| {}).unwrap();
    assert!(r.curve.is_empty());
    assert_eq!(r.best_epoch, None);
    assert_eq!(m, init);
    assert_eq!(loss_curve_csv(&r.curve), "epoch,train_loss,val_loss\n");
}

#[test]
fn same_seed_same_run() {
    let c = corpus();
    let run = || {
        let mut m = small_model(HeadKind::Regression, 0.1);
        let r = fit(&c, &mut m, &cfg(3), |_| {}).unwrap();
        (m, r)
    };
    let (m1, r1) = run();
    let (m2, r2) = run();
    assert_eq!(r1, r2);
    assert_eq!(m1, m2);
    let mut other = small_model(HeadKind::Regression, 0.1);
    let r3 = fit(&c, &mut other, &TrainConfig { seed: 9, ..cfg(3) }, |_| {}).unwrap();
    assert_ne!(r1.curve, r3.curve);
}

#[test]
fn best_validation_epoch_is_restored() {
    let c = corpus();
    let mut m = small_model(HeadKind::Regression, 0.1);
    let r = fit(&c, &mut m, &cfg(6), |_| {}).unwrap();
    let best = r.best_epoch.unwrap();
    let min = r.curve.iter().map(|e| e.val_loss.unwrap()).fold(f64::INFINITY, f64::min);
    assert_eq!(r.curve[best].val_loss.unwrap(), min);
    let val = prepare(&c.split(Split::Val), &m).unwrap();
    assert_eq!(mean_loss(&m, &val, &cfg(6)).unwrap(), min);
}

#[test]
fn without_validation_last_epoch_is_kept() {
    let c = corpus();
    let train = prepare(&c.split(Split::Train), &small_model(HeadKind::Regression, 0.1)).unwrap();
    let mut m = small_model(HeadKind::Regression, 0.1);
    let r = fit_samples(&mut m, &train, &[], &cfg(2), |_| {}).unwrap();
    assert_eq!(r.best_epoch, Some(1));
    assert!(r.curve.iter().all(|e| e.val_loss.is_none()));
    let csv = loss_curve_csv(&r.curve);
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().nth(1).unwrap().ends_with(','));
}

#[test]
fn both_losses_decrease_on_a_tiny_set() {
    let c = corpus();
    for (head, kind, lr) in [(HeadKind::Regression, LossKind::Custom, 3e-3), (HeadKind::Classification, LossKind::Ce, 3e-3)] {
        let mut m = small_model(head, 0.0);
        let train = prepare(&c.split(Split::Train)[..4], &m).unwrap();
        let cfg = TrainConfig {
            loss_kind: kind,
            learning_rate: lr,
            ..cfg(80)
        };
        let r = fit_samples(&mut m, &train, &[], &cfg, |_| {}).unwrap();
        let first = r.curve[0].train_loss;
        let last = r.curve.last().unwrap().train_loss;
        assert!(last < 0.7 * first, "{kind:?}: {first} -> {last}");
    }
}

#[test]
fn invalid_configs() {
    let c = corpus();
    let mut m = small_model(HeadKind::Regression, 0.1);
    for bad in [
        TrainConfig { batch_size: 0, ..cfg(1) },
        TrainConfig { learning_rate: -1.0, ..cfg(1) },
        TrainConfig { lambda: 0.0, ..cfg(1) },
    ] {
        assert!(matches!(fit(&c, &mut m, &bad, |_| {}), Err(Error::Config(_))));
    }
}

#[test]
fn divergence_reports_batch() {
    let c = corpus();
    let mut m = small_model(HeadKind::Regression, 0.0);
    let cfg = TrainConfig {
        learning_rate: 1e300,
        optimizer: OptimizerKind::SgdMomentum,
        ..cfg(3)
    };
    match fit(&c, &mut m, &cfg, |_| {}) {
        Err(Error::NonFiniteLoss { pairs, .. }) => assert!(pairs.starts_with("pair")),
        other => panic!("expected a non-finite loss, got {other:?}"),
    }
}
