use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetError, GraphDataset, Label};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    Holdout { train: f64, val: f64, test: f64 },
    Kfold(usize),
}

impl SplitMode {
    pub const HOLDOUT: SplitMode = SplitMode::Holdout {
        train: 0.70,
        val: 0.15,
        test: 0.15,
    };
}

/// Stratified index partition of a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitSpec {
    Holdout {
        train: Vec<usize>,
        val: Vec<usize>,
        test: Vec<usize>,
        seed: u64,
    },
    Kfold { folds: Vec<Vec<usize>>, seed: u64 },
}

impl SplitSpec {
    pub fn seed(&self) -> u64 {
        match self {
            SplitSpec::Holdout { seed, .. } | SplitSpec::Kfold { seed, .. } => *seed,
        }
    }

    /// Every part, in order (train/val/test, or the folds).
    pub fn parts(&self) -> Vec<&[usize]> {
        match self {
            SplitSpec::Holdout { train, val, test, .. } => vec![train, val, test],
            SplitSpec::Kfold { folds, .. } => folds.iter().map(Vec::as_slice).collect(),
        }
    }
}

fn shuffled_classes(ds: &GraphDataset, seed: u64) -> [Vec<usize>; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = ds.indices_with(Label::Normal);
    let mut anomalous = ds.indices_with(Label::Anomalous);
    normal.shuffle(&mut rng);
    anomalous.shuffle(&mut rng);
    [normal, anomalous]
}

/// Seeded stratified split. Each part lists indices in ascending order.
pub fn make_splits(ds: &GraphDataset, mode: SplitMode, seed: u64) -> Result<SplitSpec, DatasetError> {
    if ds.is_empty() {
        return Err(DatasetError::Split("dataset is empty".into()));
    }
    let classes = shuffled_classes(ds, seed);
    match mode {
        SplitMode::Holdout { train, val, test } => {
            let total = train + val + test;
            if [train, val, test].iter().any(|f| !(*f >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                return Err(DatasetError::Split(format!(
                    "holdout fractions {train}/{val}/{test} must be nonnegative and sum to 1"
                )));
            }
            let (mut tr, mut va, mut te) = (vec![], vec![], vec![]);
            for members in &classes {
                let n = members.len() as f64;
                let n_train = (n * train).round() as usize;
                let n_val = ((n * val).round() as usize).min(members.len() - n_train);
                tr.extend_from_slice(&members[..n_train]);
                va.extend_from_slice(&members[n_train..n_train + n_val]);
                te.extend_from_slice(&members[n_train + n_val..]);
            }
            for part in [&mut tr, &mut va, &mut te] {
                part.sort_unstable();
            }
            Ok(SplitSpec::Holdout {
                train: tr,
                val: va,
                test: te,
                seed,
            })
        }
        SplitMode::Kfold(k) => {
            if k < 2 {
                return Err(DatasetError::Split(format!("k-fold needs k >= 2, got {k}")));
            }
            for (members, label) in classes.iter().zip(["normal", "anomalous"]) {
                if members.len() < k {
                    return Err(DatasetError::Split(format!(
                        "{} {label} graphs cannot fill {k} folds",
                        members.len()
                    )));
                }
            }
            // deal the class-ordered sequence round-robin so fold sizes differ by at most one
            let mut folds = vec![Vec::new(); k];
            for (pos, &i) in classes.iter().flatten().enumerate() {
                folds[pos % k].push(i);
            }
            for f in &mut folds {
                f.sort_unstable();
            }
            Ok(SplitSpec::Kfold { folds, seed })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::tests::toy;

    fn anomalies(ds: &GraphDataset, idx: &[usize]) -> usize {
        idx.iter().filter(|&&i| ds.graphs[i].y.is_anomalous()).count()
    }

    #[test]
    fn holdout_sizes_are_stratified() {
        let ds = toy(80, 20);
        let s = make_splits(&ds, SplitMode::HOLDOUT, 1).unwrap();
        let SplitSpec::Holdout { train, val, test, .. } = &s else { panic!() };
        assert_eq!((train.len(), val.len(), test.len()), (70, 15, 15));
        assert_eq!(
            (anomalies(&ds, train), anomalies(&ds, val), anomalies(&ds, test)),
            (14, 3, 3)
        );
    }

    #[test]
    fn kfold_sizes_and_determinism() {
        let ds = toy(80, 20);
        let a = make_splits(&ds, SplitMode::Kfold(5), 4).unwrap();
        let b = make_splits(&ds, SplitMode::Kfold(5), 4).unwrap();
        assert_eq!(a, b);
        for f in a.parts() {
            assert_eq!(f.len(), 20);
            assert_eq!(anomalies(&ds, f), 4);
        }
        assert_ne!(a, make_splits(&ds, SplitMode::Kfold(5), 5).unwrap());
    }

    #[test]
    fn kfold_errors() {
        let ds = toy(10, 3);
        assert!(make_splits(&ds, SplitMode::Kfold(4), 0).is_err());
        assert!(make_splits(&ds, SplitMode::Kfold(1), 0).is_err());
        assert!(make_splits(&ds, SplitMode::Kfold(3), 0).is_ok());
    }

    #[test]
    fn bad_holdout_fractions() {
        let ds = toy(10, 3);
        let m = SplitMode::Holdout {
            train: 0.5,
            val: 0.5,
            test: 0.5,
        };
        assert!(make_splits(&ds, m, 0).is_err());
    }
}
