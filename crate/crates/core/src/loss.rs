//! Variation-optimized cross-entropy (VOCE).
//!
//! Mixing the prediction with a constant `κ` inside the logarithm keeps the
//! gradient bounded by `max(∂, 1)/κ`, so confidently mislabeled graphs cannot
//! dominate a batch. With `κ = 0` the loss is ∂-weighted cross-entropy.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Var};
use crate::dataset::Label;

/// Lower clamp applied to every logarithm argument.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("kappa must lie in [0, 1), got {0}")]
    Kappa(f64),
    #[error("class weight must be finite and nonnegative, got {0}")]
    Weight(f64),
    #[error("class ratio needs both classes ({normal} normal, {anomalous} anomalous)")]
    MissingClass { normal: usize, anomalous: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub kappa: f64,
    /// Weight `∂` on the anomalous term.
    pub class_weight: f64,
}

impl LossConfig {
    pub fn new(kappa: f64, class_weight: f64) -> Result<Self, LossError> {
        if !(0.0..1.0).contains(&kappa) {
            return Err(LossError::Kappa(kappa));
        }
        if !(class_weight.is_finite() && class_weight >= 0.0) {
            return Err(LossError::Weight(class_weight));
        }
        Ok(LossConfig { kappa, class_weight })
    }
}

/// `∂ = ln(1 + N_normal / N_anomalous)`.
pub fn class_ratio_weight(labels: &[Label]) -> Result<f64, LossError> {
    let anomalous = labels.iter().filter(|y| y.is_anomalous()).count();
    let normal = labels.len() - anomalous;
    if normal == 0 || anomalous == 0 {
        return Err(LossError::MissingClass { normal, anomalous });
    }
    Ok((normal as f64 / anomalous as f64).ln_1p())
}

pub fn voce_loss(p: f64, y: Label, cfg: &LossConfig) -> f64 {
    let k = cfg.kappa;
    match y {
        Label::Anomalous => -cfg.class_weight * (k + (1.0 - k) * p).max(LOG_FLOOR).ln() / (1.0 - k),
        Label::Normal => -(k + (1.0 - k) * (1.0 - p)).max(LOG_FLOOR).ln() / (1.0 - k),
    }
}

/// `d voce_loss / dp`.
pub fn voce_gradient(p: f64, y: Label, cfg: &LossConfig) -> f64 {
    let k = cfg.kappa;
    match y {
        Label::Anomalous => -cfg.class_weight / (k + (1.0 - k) * p).max(LOG_FLOOR),
        Label::Normal => 1.0 / (k + (1.0 - k) * (1.0 - p)).max(LOG_FLOOR),
    }
}

/// Mean loss over a batch of predictions.
pub fn voce_batch(preds: &[f64], labels: &[Label], cfg: &LossConfig) -> f64 {
    assert_eq!(preds.len(), labels.len());
    if preds.is_empty() {
        return 0.0;
    }
    preds.iter().zip(labels).map(|(&p, &y)| voce_loss(p, y, cfg)).sum::<f64>() / preds.len() as f64
}

/// The same loss recorded on a tape: `p` is a column of probabilities, one
/// row per label, and the result is the `1 × 1` sum of per-graph losses.
pub fn voce_on_tape(t: &Tape, p: Var, labels: &[Label], cfg: &LossConfig) -> Result<Var, AutodiffError> {
    let k = cfg.kappa;
    let col = |f: &dyn Fn(Label) -> f64| Array2::from_shape_fn((labels.len(), 1), |(i, _)| f(labels[i]));
    let anom = |y| y == Label::Anomalous;
    let slope = col(&|y| if anom(y) { 1.0 - k } else { -(1.0 - k) });
    let shift = col(&|y| if anom(y) { k } else { 1.0 });
    let weight = col(&|y| if anom(y) { -cfg.class_weight } else { -1.0 } / (1.0 - k));
    let arg = t.add(t.mul_col(p, t.constant(slope))?, t.constant(shift))?;
    t.sum(t.mul_col(t.log(arg, LOG_FLOOR)?, t.constant(weight))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(kappa: f64, w: f64) -> LossConfig {
        LossConfig::new(kappa, w).unwrap()
    }

    #[test]
    fn reference_value() {
        // -ln(0.2 + 0.8 * 0.6) / 0.8, by hand: ln(0.68) = -0.385662...
        let l = voce_loss(0.6, Label::Anomalous, &cfg(0.2, 1.0));
        assert!((l - 0.482_078_101_015).abs() < 1e-11, "{l}");
    }

    #[test]
    fn confident_correct_predictions_cost_nothing() {
        for k in [0.0, 0.2, 0.9] {
            assert!(voce_loss(1.0, Label::Anomalous, &cfg(k, 2.0)).abs() < 1e-15);
            assert!(voce_loss(0.0, Label::Normal, &cfg(k, 2.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_examples() {
        let c = cfg(0.2, 1.0);
        assert!((voce_gradient(1.0, Label::Anomalous, &c) + 1.0).abs() < 1e-15);
        assert!((voce_gradient(0.0, Label::Anomalous, &c) + 5.0).abs() < 1e-12);
        let plain = cfg(0.0, 1.7);
        assert!((voce_gradient(0.25, Label::Anomalous, &plain) + 1.7 / 0.25).abs() < 1e-12);
    }

    #[test]
    fn analytic_gradient_matches_tape() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let p = rng.gen_range(0.01..0.99);
            let y = Label::from_bit(rng.gen_range(0..2));
            let c = cfg(rng.gen_range(0.0..0.95), rng.gen_range(0.0..3.0));
            let t = Tape::new();
            let pv = t.param_owned(array![[p]]);
            let l = voce_on_tape(&t, pv, &[y], &c).unwrap();
            assert!((t.scalar(l) - voce_loss(p, y, &c)).abs() < 1e-12);
            let g = t.backward(l).unwrap();
            let d = g.get(pv).unwrap()[[0, 0]];
            assert!((d - voce_gradient(p, y, &c)).abs() < 1e-10);
        }
    }

    #[test]
    fn tape_loss_sums_over_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let c = cfg(0.3, 1.7);
        let ps: Vec<f64> = (0..9).map(|_| rng.gen_range(0.01..0.99)).collect();
        let ys: Vec<Label> = (0..9).map(|i| Label::from_bit(u8::from(i % 3 == 0))).collect();
        let t = Tape::new();
        let pv = t.param_owned(Array2::from_shape_vec((9, 1), ps.clone()).unwrap());
        let l = voce_on_tape(&t, pv, &ys, &c).unwrap();
        let want: f64 = ps.iter().zip(&ys).map(|(&p, &y)| voce_loss(p, y, &c)).sum();
        assert!((t.scalar(l) - want).abs() < 1e-12);
        let g = t.backward(l).unwrap();
        for (i, (&p, &y)) in ps.iter().zip(&ys).enumerate() {
            assert!((g.get(pv).unwrap()[[i, 0]] - voce_gradient(p, y, &c)).abs() < 1e-10);
        }
    }

    #[test]
    fn class_weight_cases() {
        let balanced = [Label::Normal, Label::Anomalous];
        assert!((class_ratio_weight(&balanced).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        let only = [Label::Normal; 3];
        assert!(matches!(class_ratio_weight(&only), Err(LossError::MissingClass { .. })));
        // SW-620 proportions, 5.95% anomalous, scaled to counts
        let mut sw = vec![Label::Normal; 9405];
        sw.extend([Label::Anomalous; 595]);
        assert!((class_ratio_weight(&sw).unwrap() - 2.821_778_966).abs() < 1e-8);
    }

    #[test]
    fn rejects_bad_config() {
        assert_eq!(LossConfig::new(1.0, 1.0), Err(LossError::Kappa(1.0)));
        assert!(LossConfig::new(-0.1, 1.0).is_err());
        assert!(LossConfig::new(0.2, f64::INFINITY).is_err());
        assert!(LossConfig::new(0.2, -1.0).is_err());
    }

    #[test]
    fn monotone_in_p() {
        let c = cfg(0.2, 1.3);
        let ps: Vec<f64> = (1..100).map(|i| i as f64 / 100.0).collect();
        for w in ps.windows(2) {
            assert!(voce_loss(w[1], Label::Anomalous, &c) < voce_loss(w[0], Label::Anomalous, &c));
            assert!(voce_loss(w[1], Label::Normal, &c) > voce_loss(w[0], Label::Normal, &c));
        }
    }
}
