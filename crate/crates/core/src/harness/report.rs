use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{HarnessError, TrainConfig};
use crate::metrics::Metrics;

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// NaN when there is no validation set.
    pub val_loss: f64,
    pub val_auc: Option<f64>,
    pub val_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: Option<usize>,
    pub best_epoch: Option<usize>,
    pub class_weight: f64,
    pub history: Vec<EpochRecord>,
    pub test: Option<Metrics>,
}

/// Mean and population standard deviation over folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub folds: usize,
    pub auc_mean: Option<f64>,
    pub auc_std: Option<f64>,
    pub macro_f1_mean: f64,
    pub macro_f1_std: f64,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl Summary {
    pub fn from_folds(folds: &[FoldReport]) -> Self {
        let tests: Vec<&Metrics> = folds.iter().filter_map(|f| f.test.as_ref()).collect();
        let aucs: Vec<f64> = tests.iter().filter_map(|m| m.auc).collect();
        let f1s: Vec<f64> = tests.iter().map(|m| m.macro_f1).collect();
        let (auc_mean, auc_std) = if aucs.is_empty() {
            (None, None)
        } else {
            let (m, s) = mean_std(&aucs);
            (Some(m), Some(s))
        };
        let (macro_f1_mean, macro_f1_std) = mean_std(&f1s);
        Summary {
            folds: tests.len(),
            auc_mean,
            auc_std,
            macro_f1_mean,
            macro_f1_std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format_version: u32,
    pub dataset: String,
    pub seed: u64,
    pub config: TrainConfig,
    pub folds: Vec<FoldReport>,
    pub summary: Option<Summary>,
    pub wall_seconds: f64,
}

impl RunReport {
    pub fn new(cfg: &TrainConfig, dataset: &str, folds: Vec<FoldReport>, wall_seconds: f64) -> Self {
        RunReport {
            format_version: REPORT_FORMAT_VERSION,
            dataset: dataset.to_string(),
            seed: cfg.seed,
            config: cfg.clone(),
            folds,
            summary: None,
            wall_seconds,
        }
    }

    /// Test metrics of a single-split run.
    pub fn test(&self) -> Option<&Metrics> {
        match self.folds.as_slice() {
            [only] => only.test.as_ref(),
            _ => None,
        }
    }

    /// Writes `report.json` and one curve CSV per fold into `dir`; returns the paths.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
        fs::create_dir_all(dir).map_err(|e| HarnessError::Io(dir.to_path_buf(), e))?;
        let mut written = Vec::new();
        let path = dir.join("report.json");
        let json = serde_json::to_string_pretty(self).expect("report serializes");
        fs::write(&path, json).map_err(|e| HarnessError::Io(path.clone(), e))?;
        written.push(path);
        for f in &self.folds {
            let name = match f.fold {
                Some(i) => format!("curves_fold{i}.csv"),
                None => "curves.csv".to_string(),
            };
            let path = dir.join(name);
            fs::write(&path, curves_csv(&f.history)).map_err(|e| HarnessError::Io(path.clone(), e))?;
            written.push(path);
        }
        Ok(written)
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn curves_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_auc,val_f1\n");
    for r in history {
        let _ = writeln!(out, "{},{},{},{}", r.epoch, r.train_loss, cell(r.val_auc), cell(r.val_f1));
    }
    out
}
