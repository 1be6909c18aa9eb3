//! Graph collections: ingestion, anomaly downsampling, splits, and synthetic data.

mod graph;
mod split;
mod synth;
mod tu;

pub use graph::{Graph, Label};
pub use split::{make_splits, SplitMode, SplitSpec};
pub use synth::{generate_synthetic, SynthConfig};
pub use tu::{label_polarity, load_tudataset, load_tudataset_with, write_tudataset, FeatureMode, Polarity};

use std::collections::HashSet;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Ingestion {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: {msg}")]
    Format { file: String, line: usize, msg: String },
    #[error("invalid graph: {0}")]
    Invalid(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("cannot split: {0}")]
    Split(String),
}

/// An ordered collection of graphs sharing one feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphDataset {
    pub name: String,
    pub graphs: Vec<Graph>,
    pub d: usize,
    /// How raw labels were mapped onto normal/anomalous, when loaded from disk.
    pub provenance: Option<String>,
}

impl GraphDataset {
    pub fn new(name: impl Into<String>, graphs: Vec<Graph>) -> Result<Self, DatasetError> {
        let name = name.into();
        let Some(first) = graphs.first() else {
            return Err(DatasetError::Invalid(format!("dataset {name} is empty")));
        };
        let d = first.feature_dim();
        if let Some(g) = graphs.iter().find(|g| g.feature_dim() != d) {
            return Err(DatasetError::Invalid(format!(
                "graph {} has {} features, expected {d}",
                g.id,
                g.feature_dim()
            )));
        }
        Ok(GraphDataset {
            name,
            graphs,
            d,
            provenance: None,
        })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.graphs.iter().map(|g| g.y).collect()
    }

    pub fn anomaly_count(&self) -> usize {
        self.graphs.iter().filter(|g| g.y.is_anomalous()).count()
    }

    /// Indices of graphs with the given label, in dataset order.
    pub fn indices_with(&self, label: Label) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.graphs[i].y == label).collect()
    }
}

/// Summary statistics of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub name: String,
    pub n_graphs: usize,
    pub n_anom: usize,
    /// Anomalous share in percent.
    pub ratio: f64,
    pub avg_nodes: f64,
    pub avg_edges: f64,
    pub d: usize,
}

pub fn dataset_stats(ds: &GraphDataset) -> DatasetStats {
    let n = ds.len();
    let n_anom = ds.anomaly_count();
    let nodes: usize = ds.graphs.iter().map(|g| g.n()).sum();
    let edges: usize = ds.graphs.iter().map(|g| g.num_edges()).sum();
    let per = |total: usize| if n == 0 { 0.0 } else { total as f64 / n as f64 };
    DatasetStats {
        name: ds.name.clone(),
        n_graphs: n,
        n_anom,
        ratio: 100.0 * per(n_anom),
        avg_nodes: per(nodes),
        avg_edges: per(edges),
        d: ds.d,
    }
}

/// Keeps a seeded `⌈keep_fraction · N_anom⌉` subset of the anomalous graphs
/// and every normal graph, preserving dataset order.
pub fn downsample_anomalies(
    ds: &GraphDataset,
    keep_fraction: f64,
    seed: u64,
) -> Result<GraphDataset, DatasetError> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(DatasetError::Argument(format!(
            "keep fraction {keep_fraction} outside (0, 1]"
        )));
    }
    let mut anomalous = ds.indices_with(Label::Anomalous);
    let needed = (1.0 / keep_fraction - 1e-9).ceil() as usize;
    if anomalous.len() < needed {
        return Err(DatasetError::Argument(format!(
            "{} anomalous graphs; keeping a fraction of {keep_fraction} needs at least {needed}",
            anomalous.len()
        )));
    }
    let keep = (keep_fraction * anomalous.len() as f64 - 1e-9).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    anomalous.shuffle(&mut rng);
    let kept: HashSet<usize> = anomalous.into_iter().take(keep).collect();
    let graphs = ds
        .graphs
        .iter()
        .enumerate()
        .filter(|(i, g)| !g.y.is_anomalous() || kept.contains(i))
        .map(|(_, g)| g.clone())
        .collect();
    Ok(GraphDataset {
        name: ds.name.clone(),
        graphs,
        d: ds.d,
        provenance: ds.provenance.clone(),
    })
}
