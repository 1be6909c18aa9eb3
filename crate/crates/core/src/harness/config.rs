use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::HarnessError;
use crate::dataset::SplitMode;
use crate::loss::LossConfig;
use crate::metrics::DEFAULT_THRESHOLD;
use crate::model::ModelConfig;

/// Every knob of a training run. Missing fields in a config file take the
/// defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Random-walk length `T`.
    pub steps: usize,
    /// Transformer layers `L`.
    pub layers: usize,
    /// Beta bank order `M`.
    pub bank_order: usize,
    /// Low/high-pass layers `K`.
    pub lowhigh_layers: usize,
    pub hidden: usize,
    pub out_dim: usize,
    pub heads: usize,
    pub kappa: f64,
    pub psi: f64,
    pub dropout: f64,
    /// Fixed `∂`; derived from the training split when absent.
    pub class_weight: Option<f64>,
    pub lr: f64,
    pub batch: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Keep this fraction of anomalous graphs before splitting.
    pub downsample: Option<f64>,
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub folds: usize,
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 4,
            layers: 6,
            bank_order: 3,
            lowhigh_layers: 4,
            hidden: 128,
            out_dim: 32,
            heads: 4,
            kappa: 0.2,
            psi: 0.5,
            dropout: 0.0,
            class_weight: None,
            lr: 1e-3,
            batch: 128,
            max_epochs: 200,
            patience: 50,
            seed: 0,
            downsample: None,
            train_frac: 0.70,
            val_frac: 0.15,
            test_frac: 0.15,
            folds: 5,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.batch == 0 {
            return bad("batch must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        if let Some(f) = self.downsample {
            if !(f > 0.0 && f <= 1.0) {
                return bad(format!("downsample fraction {f} outside (0, 1]"));
            }
        }
        if self.folds < 2 {
            return bad(format!("folds must be at least 2, got {}", self.folds));
        }
        LossConfig::new(self.kappa, self.class_weight.unwrap_or(1.0)).map_err(|e| HarnessError::Config(e.to_string()))?;
        self.model_config(1).validate()?;
        Ok(())
    }

    pub fn model_config(&self, in_dim: usize) -> ModelConfig {
        ModelConfig {
            in_dim,
            hidden: self.hidden,
            out_dim: self.out_dim,
            heads: self.heads,
            steps: self.steps,
            layers: self.layers,
            bank_order: self.bank_order,
            lowhigh_layers: self.lowhigh_layers,
            psi: self.psi,
            dropout: self.dropout,
        }
    }

    pub fn holdout(&self) -> SplitMode {
        SplitMode::Holdout {
            train: self.train_frac,
            val: self.val_frac,
            test: self.test_frac,
        }
    }

    /// Reads a config file as JSON, or as `key = value` lines when it does
    /// not start with `{`. `#` starts a comment in the line format.
    pub fn from_file(path: &Path) -> Result<Map<String, Value>, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::Io(path.to_path_buf(), e))?;
        parse_config_text(&text).map_err(|m| HarnessError::Config(format!("{}: {m}", path.display())))
    }

    /// Applies `layers` in order (later wins) on top of the defaults.
    pub fn merged(layers: &[Map<String, Value>]) -> Result<Self, HarnessError> {
        let mut base = match serde_json::to_value(TrainConfig::default()) {
            Ok(Value::Object(m)) => m,
            _ => unreachable!("config serializes to an object"),
        };
        for layer in layers {
            for (k, v) in layer {
                base.insert(k.clone(), v.clone());
            }
        }
        serde_json::from_value(Value::Object(base)).map_err(|e| HarnessError::Config(e.to_string()))
    }
}

fn parse_config_text(text: &str) -> Result<Map<String, Value>, String> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('{') {
        return match serde_json::from_str(trimmed) {
            Ok(Value::Object(m)) => Ok(m),
            Ok(_) => Err("expected a JSON object".into()),
            Err(e) => Err(e.to_string()),
        };
    }
    let mut out = Map::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(format!("line {}: expected key = value", i + 1));
        };
        let (k, v) = (k.trim().replace('-', "_"), v.trim());
        // numbers and booleans as JSON, anything else as a string
        let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
        out.insert(k, value);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = TrainConfig::merged(&[]).unwrap();
        assert_eq!(c, TrainConfig::default());
        assert!(c.validate().is_ok());
    }

    #[test]
    fn key_value_and_json_files() {
        let kv = parse_config_text("# comment\nlr = 0.01\nmax-epochs = 7\nclass_weight = 1.5\n").unwrap();
        let c = TrainConfig::merged(&[kv]).unwrap();
        assert_eq!((c.lr, c.max_epochs, c.class_weight), (0.01, 7, Some(1.5)));
        let js = parse_config_text(r#"{"seed": 9, "downsample": 0.1}"#).unwrap();
        let c = TrainConfig::merged(&[js]).unwrap();
        assert_eq!((c.seed, c.downsample), (9, Some(0.1)));
    }

    #[test]
    fn later_layers_win() {
        let a = parse_config_text("seed = 1\nbatch = 4").unwrap();
        let b = parse_config_text("seed = 2").unwrap();
        let c = TrainConfig::merged(&[a, b]).unwrap();
        assert_eq!((c.seed, c.batch), (2, 4));
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        let u = parse_config_text("bogus = 3").unwrap();
        assert!(TrainConfig::merged(&[u]).is_err());
        assert!(parse_config_text("no equals sign").is_err());
        let k = TrainConfig { kappa: 1.0, ..TrainConfig::default() };
        assert!(k.validate().is_err());
        let b = TrainConfig { batch: 0, ..TrainConfig::default() };
        assert!(b.validate().is_err());
    }
}
