use gladformer::dataset::{generate_synthetic, GraphDataset, SynthConfig};
use gladformer::harness::{
    batch_gradient, cross_validate, fit, load_model, predict, prepare_inputs, save_model, train_holdout, TrainConfig,
};
use gladformer::loss::LossConfig;

fn small() -> TrainConfig {
    TrainConfig {
        hidden: 8,
        out_dim: 4,
        heads: 2,
        layers: 1,
        lowhigh_layers: 1,
        batch: 16,
        lr: 0.01,
        max_epochs: 3,
        seed: 11,
        ..TrainConfig::default()
    }
}

fn data(n: usize, seed: u64) -> GraphDataset {
    generate_synthetic(&SynthConfig { n_graphs: n, anomaly_rate: 0.25, seed, ..SynthConfig::default() }).unwrap()
}

#[test]
fn training_is_deterministic() {
    let ds = data(40, 1);
    let cfg = small();
    let (a, ra) = train_holdout(&cfg, &ds).unwrap();
    let (b, rb) = train_holdout(&cfg, &ds).unwrap();
    assert_eq!(ra.folds, rb.folds);
    for (x, y) in a.params.values().iter().zip(b.params.values()) {
        assert_eq!(x, y);
    }
}

#[test]
fn zero_epochs_keeps_init() {
    let ds = data(40, 2);
    let cfg = TrainConfig { max_epochs: 0, ..small() };
    let (model, report) = train_holdout(&cfg, &ds).unwrap();
    assert!(report.folds[0].history.is_empty());
    assert_eq!(report.folds[0].best_epoch, None);
    let inputs = prepare_inputs(&ds, &cfg).unwrap();
    assert!(predict(&model, &inputs, &[0, 1, 2]).unwrap().iter().all(|&p| p == 0.5));
}

#[test]
fn gradient_ignores_batch_order() {
    let ds = data(24, 3);
    let cfg = small();
    let inputs = prepare_inputs(&ds, &cfg).unwrap();
    let (model, _) = train_holdout(&TrainConfig { max_epochs: 1, ..cfg }, &ds).unwrap();
    let lc = LossConfig::new(0.2, 1.3).unwrap();
    let fwd: Vec<usize> = (0..20).collect();
    let rev: Vec<usize> = fwd.iter().rev().copied().collect();
    let (la, ga) = batch_gradient(&model, &inputs, &fwd, &lc, None).unwrap();
    let (lb, gb) = batch_gradient(&model, &inputs, &rev, &lc, None).unwrap();
    assert!((la - lb).abs() < 1e-12);
    for (x, y) in ga.iter().zip(&gb) {
        assert!((x - y).iter().all(|v| v.abs() < 1e-12));
    }
}

#[test]
fn small_model_fits_its_training_set() {
    let ds = data(40, 4);
    let cfg = TrainConfig { max_epochs: 60, patience: 60, ..small() };
    let inputs = prepare_inputs(&ds, &cfg).unwrap();
    let all: Vec<usize> = (0..ds.len()).collect();
    let fitted = fit(&cfg, &inputs, ds.d, &all, &all, cfg.seed).unwrap();
    let last = fitted.history.last().unwrap();
    assert!(last.train_loss < fitted.history[0].train_loss);
    let best = fitted.history[fitted.best_epoch.unwrap() - 1].val_auc.unwrap();
    assert!(best >= 0.95, "train AUC {best}");
}

#[test]
fn cross_validation_covers_every_graph() {
    let ds = data(30, 5);
    let cfg = TrainConfig { folds: 3, max_epochs: 1, ..small() };
    let report = cross_validate(&cfg, &ds).unwrap();
    assert_eq!(report.folds.len(), 3);
    let tested: usize = report
        .folds
        .iter()
        .map(|f| {
            let c = &f.test.as_ref().unwrap().confusion;
            c.tp + c.fp + c.tn + c.fn_
        })
        .sum();
    assert_eq!(tested, 30);
    assert_eq!(report.summary.as_ref().unwrap().folds, 3);
}

#[test]
fn checkpoint_round_trip() {
    let ds = data(30, 6);
    let cfg = small();
    let (model, _) = train_holdout(&cfg, &ds).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_model(&path, &model, &cfg).unwrap();
    let (back, train_cfg) = load_model(&path).unwrap();
    assert_eq!(train_cfg.unwrap(), cfg);
    let inputs = prepare_inputs(&ds, &cfg).unwrap();
    let idx: Vec<usize> = (0..ds.len()).collect();
    assert_eq!(predict(&model, &inputs, &idx).unwrap(), predict(&back, &inputs, &idx).unwrap());
}

#[test]
fn bad_configs_are_rejected() {
    let ds = data(20, 7);
    for cfg in [
        TrainConfig { kappa: 1.0, ..small() },
        TrainConfig { batch: 0, ..small() },
        TrainConfig { downsample: Some(0.0), ..small() },
        TrainConfig { heads: 3, ..small() },
    ] {
        assert!(train_holdout(&cfg, &ds).is_err());
    }
}
