use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::adam::Adam;
use super::report::{EpochRecord, FoldReport, RunReport, Summary};
use super::{HarnessError, TrainConfig};
use crate::autodiff::{AutodiffError, Mat};
use crate::dataset::{make_splits, GraphDataset, Label, SplitMode, SplitSpec};
use crate::loss::{class_ratio_weight, voce_batch, LossConfig};
use crate::metrics::{compute_metrics, Metrics};
use crate::model::{GraphInput, Model, ModelError};
use crate::transformer::Dropout;

/// Graphs per parallel work unit; each chunk runs as one stacked forward pass.
/// Gradients are summed inside a chunk and chunk sums are added in order, so
/// results do not depend on thread count.
pub const GRAD_CHUNK: usize = 16;

/// SplitMix64 finalizer, used to derive independent seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Parameter-free inputs for every graph, aligned with `ds.graphs`.
pub fn prepare_inputs(ds: &GraphDataset, cfg: &TrainConfig) -> Result<Vec<GraphInput>, HarnessError> {
    let mc = cfg.model_config(ds.d);
    ds.graphs
        .par_iter()
        .map(|g| GraphInput::prepare(g, &mc).map_err(HarnessError::from))
        .collect()
}

fn labels_of(inputs: &[GraphInput], idx: &[usize]) -> Vec<Label> {
    idx.iter().map(|&i| inputs[i].label).collect()
}

/// Probabilities for `idx`, in order.
pub fn predict(model: &Model, inputs: &[GraphInput], idx: &[usize]) -> Result<Vec<f64>, HarnessError> {
    let chunks = idx
        .par_chunks(GRAD_CHUNK)
        .map(|c| model.predict_batch(&gather(inputs, c)).map_err(HarnessError::from))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(chunks.concat())
}

fn gather<'a>(inputs: &'a [GraphInput], idx: &[usize]) -> Vec<&'a GraphInput> {
    idx.iter().map(|&i| &inputs[i]).collect()
}

pub fn evaluate(
    model: &Model,
    inputs: &[GraphInput],
    idx: &[usize],
    threshold: f64,
    fold: Option<usize>,
) -> Result<Metrics, HarnessError> {
    if idx.is_empty() {
        return Err(HarnessError::Contract("evaluation indices are empty".into()));
    }
    let scores = predict(model, inputs, idx)?;
    Ok(compute_metrics(&scores, &labels_of(inputs, idx), threshold, fold)?)
}

/// Mean loss and mean gradient over `batch`.
pub fn batch_gradient(
    model: &Model,
    inputs: &[GraphInput],
    batch: &[usize],
    loss_cfg: &LossConfig,
    dropout_seed: Option<u64>,
) -> Result<(f64, Vec<Mat>), ModelError> {
    let rate = model.config.dropout;
    let partials: Vec<(f64, Vec<Mat>)> = batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut grads = model.params.zeros_like();
            let mut dropout: Option<Vec<Dropout>> = match dropout_seed {
                Some(s) if rate > 0.0 => Some(
                    chunk
                        .iter()
                        .map(|&i| Dropout::new(rate, mix_seed(s, inputs[i].id as u64)))
                        .collect(),
                ),
                _ => None,
            };
            let loss = model.accumulate_grad(&gather(inputs, chunk), loss_cfg, dropout.as_deref_mut(), &mut grads)?;
            Ok((loss, grads))
        })
        .collect::<Result<_, ModelError>>()?;
    let mut loss = 0.0;
    let mut grads = model.params.zeros_like();
    for (l, g) in partials {
        loss += l;
        for (acc, gi) in grads.iter_mut().zip(&g) {
            *acc += gi;
        }
    }
    let n = batch.len().max(1) as f64;
    for g in &mut grads {
        *g /= n;
    }
    Ok((loss / n, grads))
}

/// Result of fitting one model.
#[derive(Debug, Clone)]
pub struct Fitted {
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub class_weight: f64,
}

fn is_divergence(e: &ModelError) -> bool {
    matches!(e, ModelError::Autodiff(AutodiffError::NonFinite(_)))
}

/// Trains on `train_idx`, keeping the parameters with the best validation AUC.
/// Validation loss breaks ties and stands in when AUC is undefined.
pub fn fit(
    cfg: &TrainConfig,
    inputs: &[GraphInput],
    in_dim: usize,
    train_idx: &[usize],
    val_idx: &[usize],
    seed: u64,
) -> Result<Fitted, HarnessError> {
    cfg.validate()?;
    let train_labels = labels_of(inputs, train_idx);
    let class_weight = match cfg.class_weight {
        Some(w) => w,
        None => class_ratio_weight(&train_labels).map_err(|e| HarnessError::Contract(format!("training split: {e}")))?,
    };
    let loss_cfg = LossConfig::new(cfg.kappa, class_weight).map_err(|e| HarnessError::Config(e.to_string()))?;
    let mut model = Model::init(cfg.model_config(in_dim), seed)?;
    let mut opt = Adam::new(&model.params, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 1));
    let mut order = train_idx.to_vec();
    let val_labels = labels_of(inputs, val_idx);

    let mut history = Vec::new();
    let mut best: Option<((f64, f64), usize, crate::autodiff::ParamStore)> = None;
    let mut stale = 0usize;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, batch) in order.chunks(cfg.batch).enumerate() {
            let dropout_seed = mix_seed(seed, ((epoch as u64) << 32) | b as u64);
            let (loss, grads) = batch_gradient(&model, inputs, batch, &loss_cfg, Some(dropout_seed))
                .map_err(|e| if is_divergence(&e) { HarnessError::Divergence { epoch } } else { e.into() })?;
            if !loss.is_finite() {
                return Err(HarnessError::Divergence { epoch });
            }
            total += loss * batch.len() as f64;
            opt.update(&mut model.params, &grads);
        }
        let train_loss = total / order.len().max(1) as f64;
        if !model.params.all_finite() {
            return Err(HarnessError::Divergence { epoch });
        }

        let (val_loss, val_metrics) = if val_idx.is_empty() {
            (f64::NAN, None)
        } else {
            let scores = predict(&model, inputs, val_idx)?;
            let m = compute_metrics(&scores, &val_labels, cfg.threshold, None)?;
            (voce_batch(&scores, &val_labels, &loss_cfg), Some(m))
        };
        let val_auc = val_metrics.as_ref().and_then(|m| m.auc);
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_auc,
            val_f1: val_metrics.as_ref().map(|m| m.macro_f1),
        });

        // higher is better; ties on AUC go to the lower validation loss
        let score = match (val_auc, val_loss.is_nan()) {
            (Some(a), false) => (a, -val_loss),
            (Some(a), true) => (a, -train_loss),
            (None, false) => (f64::NEG_INFINITY, -val_loss),
            (None, true) => (f64::NEG_INFINITY, -train_loss),
        };
        if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, epoch, model.params.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    let best_epoch = best.as_ref().map(|(_, e, _)| *e);
    if let Some((_, _, params)) = best {
        model.params = params;
    }
    Ok(Fitted {
        model,
        history,
        best_epoch,
        class_weight,
    })
}

/// Applies the configured anomaly downsampling.
pub fn apply_downsample(cfg: &TrainConfig, ds: &GraphDataset) -> Result<GraphDataset, HarnessError> {
    match cfg.downsample {
        Some(f) => Ok(crate::dataset::downsample_anomalies(ds, f, mix_seed(cfg.seed, 2))?),
        None => Ok(ds.clone()),
    }
}

/// Trains on a holdout split: early stopping on `val`, final metrics on `test`.
pub fn train(cfg: &TrainConfig, ds: &GraphDataset, split: &SplitSpec) -> Result<(Model, RunReport), HarnessError> {
    let SplitSpec::Holdout { train, val, test, .. } = split else {
        return Err(HarnessError::Contract("train needs a holdout split; use cross_validate for folds".into()));
    };
    let start = Instant::now();
    let inputs = prepare_inputs(ds, cfg)?;
    let fitted = fit(cfg, &inputs, ds.d, train, val, cfg.seed)?;
    let test_metrics = if test.is_empty() {
        None
    } else {
        Some(evaluate(&fitted.model, &inputs, test, cfg.threshold, None)?)
    };
    let fold = FoldReport {
        fold: None,
        best_epoch: fitted.best_epoch,
        class_weight: fitted.class_weight,
        history: fitted.history,
        test: test_metrics,
    };
    let report = RunReport::new(cfg, &ds.name, vec![fold], start.elapsed().as_secs_f64());
    Ok((fitted.model, report))
}

/// Convenience: holdout split from the config, then [`train`].
pub fn train_holdout(cfg: &TrainConfig, ds: &GraphDataset) -> Result<(Model, RunReport), HarnessError> {
    let split = make_splits(ds, cfg.holdout(), cfg.seed)?;
    train(cfg, ds, &split)
}

/// Stratified k-fold: fold `i` is the test set, fold `i+1 (mod k)` the
/// validation set, the rest the training set.
pub fn cross_validate(cfg: &TrainConfig, ds: &GraphDataset) -> Result<RunReport, HarnessError> {
    cfg.validate()?;
    let start = Instant::now();
    let split = make_splits(ds, SplitMode::Kfold(cfg.folds), cfg.seed)?;
    let SplitSpec::Kfold { folds, .. } = &split else { unreachable!() };
    let inputs = prepare_inputs(ds, cfg)?;
    let k = folds.len();
    let mut reports = Vec::with_capacity(k);
    for i in 0..k {
        let val = &folds[(i + 1) % k];
        let mut train: Vec<usize> = (0..k)
            .filter(|&j| j != i && j != (i + 1) % k)
            .flat_map(|j| folds[j].iter().copied())
            .collect();
        train.sort_unstable();
        let fold_err = |e: HarnessError| HarnessError::Fold {
            fold: i,
            source: Box::new(e),
        };
        let fitted = fit(cfg, &inputs, ds.d, &train, val, mix_seed(cfg.seed, 100 + i as u64)).map_err(fold_err)?;
        let test = evaluate(&fitted.model, &inputs, &folds[i], cfg.threshold, Some(i)).map_err(fold_err)?;
        reports.push(FoldReport {
            fold: Some(i),
            best_epoch: fitted.best_epoch,
            class_weight: fitted.class_weight,
            history: fitted.history,
            test: Some(test),
        });
    }
    let mut report = RunReport::new(cfg, &ds.name, reports, start.elapsed().as_secs_f64());
    report.summary = Some(Summary::from_folds(&report.folds));
    Ok(report)
}
