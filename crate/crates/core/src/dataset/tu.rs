//! TUDataset flat-file format.
//!
//! A dataset `NAME` is a directory holding `NAME_A.txt` (one `a, b` pair of
//! 1-indexed global node ids per line), `NAME_graph_indicator.txt` (graph id
//! of node `k` on line `k`), `NAME_graph_labels.txt`, and optionally
//! `NAME_node_labels.txt` and `NAME_node_attributes.txt`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::{DatasetError, Graph, GraphDataset, Label};

/// How node features are assembled from the optional node files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureMode {
    /// Real attributes when present, otherwise one-hot node labels,
    /// otherwise a constant column.
    #[default]
    Auto,
    /// One-hot node labels followed by real attributes, whichever exist.
    Concat,
}

/// Which raw graph label is treated as anomalous.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    /// The least frequent raw label. Ties go to the larger raw value.
    Minority,
    /// A specific raw label; every other label is normal.
    Raw(i64),
}

/// Known label polarities, with the anomaly count each collection is
/// expected to show after mapping.
const LABEL_TABLE: &[(&str, Polarity, usize)] = &[
    ("AIDS", Polarity::Minority, 400),
    ("BZR", Polarity::Minority, 86),
    ("COX2", Polarity::Minority, 102),
    ("NCI1", Polarity::Minority, 2053),
    // six equal classes of 100; one is designated anomalous
    ("ENZYMES", Polarity::Raw(1), 100),
    ("PROTEINS", Polarity::Minority, 450),
    ("PROTEINS_full", Polarity::Minority, 450),
    ("MCF-7", Polarity::Minority, 2294),
    ("MOLT-4", Polarity::Minority, 3140),
    ("SW-620", Polarity::Minority, 2410),
    ("PC-3", Polarity::Minority, 1568),
];

/// Polarity and reference anomaly count for a known dataset name.
pub fn label_polarity(name: &str) -> Option<(Polarity, usize)> {
    LABEL_TABLE
        .iter()
        .find(|(n, _, _)| n.eq_ignore_ascii_case(name))
        .map(|&(_, p, c)| (p, c))
}

fn read(dir: &Path, file: &str) -> Result<String, DatasetError> {
    let path = dir.join(file);
    fs::read_to_string(&path).map_err(|source| DatasetError::Ingestion { path, source })
}

fn read_optional(dir: &Path, file: &str) -> Result<Option<String>, DatasetError> {
    if dir.join(file).exists() {
        read(dir, file).map(Some)
    } else {
        Ok(None)
    }
}

/// Non-empty lines with their 1-based line numbers, split on commas.
fn records(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.split(',').map(str::trim).collect()))
}

fn parse<T: std::str::FromStr>(file: &str, line: usize, s: &str) -> Result<T, DatasetError> {
    s.parse().map_err(|_| DatasetError::Format {
        file: file.to_string(),
        line,
        msg: format!("cannot parse {s:?}"),
    })
}

pub fn load_tudataset(dir: &Path, name: &str) -> Result<GraphDataset, DatasetError> {
    load_tudataset_with(dir, name, FeatureMode::Auto, None)
}

/// Loads `name` from `dir`. `polarity` overrides the built-in label table.
pub fn load_tudataset_with(
    dir: &Path,
    name: &str,
    features: FeatureMode,
    polarity: Option<Polarity>,
) -> Result<GraphDataset, DatasetError> {
    let f_a = format!("{name}_A.txt");
    let f_ind = format!("{name}_graph_indicator.txt");
    let f_gl = format!("{name}_graph_labels.txt");
    let f_nl = format!("{name}_node_labels.txt");
    let f_attr = format!("{name}_node_attributes.txt");

    let edges_txt = read(dir, &f_a)?;
    let ind_txt = read(dir, &f_ind)?;
    let gl_txt = read(dir, &f_gl)?;
    let nl_txt = read_optional(dir, &f_nl)?;
    let attr_txt = read_optional(dir, &f_attr)?;

    // node k (0-based) -> (graph index, local index)
    let mut owner = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for (line, rec) in records(&ind_txt) {
        let gid: usize = parse(&f_ind, line, rec[0])?;
        if gid == 0 {
            return Err(DatasetError::Format {
                file: f_ind.clone(),
                line,
                msg: "graph ids are 1-indexed".into(),
            });
        }
        if counts.len() < gid {
            counts.resize(gid, 0);
        }
        owner.push((gid - 1, counts[gid - 1]));
        counts[gid - 1] += 1;
    }
    let n_graphs = counts.len();

    let raw_labels: Vec<i64> = records(&gl_txt)
        .map(|(line, rec)| parse(&f_gl, line, rec[0]))
        .collect::<Result<_, _>>()?;
    if raw_labels.len() != n_graphs {
        return Err(DatasetError::Format {
            file: f_gl.clone(),
            line: raw_labels.len(),
            msg: format!("{} labels for {n_graphs} graphs", raw_labels.len()),
        });
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(DatasetError::Format {
            file: f_ind.clone(),
            line: 0,
            msg: format!("graph {} has no nodes", empty + 1),
        });
    }

    let mut edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_graphs];
    let mut self_loops = 0usize;
    for (line, rec) in records(&edges_txt) {
        if rec.len() != 2 {
            return Err(DatasetError::Format {
                file: f_a.clone(),
                line,
                msg: format!("expected two node ids, got {}", rec.len()),
            });
        }
        let mut ends = [0usize; 2];
        for (k, s) in rec.iter().enumerate() {
            let v: usize = parse(&f_a, line, s)?;
            if v == 0 || v > owner.len() {
                return Err(DatasetError::Format {
                    file: f_a.clone(),
                    line,
                    msg: format!("node {v} is not in {f_ind}"),
                });
            }
            ends[k] = v - 1;
        }
        let (ga, la) = owner[ends[0]];
        let (gb, lb) = owner[ends[1]];
        if ga != gb {
            return Err(DatasetError::Format {
                file: f_a.clone(),
                line,
                msg: format!("edge joins graphs {} and {}", ga + 1, gb + 1),
            });
        }
        if la == lb {
            self_loops += 1;
            continue;
        }
        edges[ga].push((la, lb));
    }

    let node_labels: Option<Vec<i64>> = nl_txt
        .as_deref()
        .map(|t| {
            records(t)
                .map(|(line, rec)| parse(&f_nl, line, rec[0]))
                .collect::<Result<Vec<_>, _>>()
        })
        .transpose()?;
    if let Some(nl) = &node_labels {
        if nl.len() != owner.len() {
            return Err(DatasetError::Format {
                file: f_nl.clone(),
                line: nl.len(),
                msg: format!("{} node labels for {} nodes", nl.len(), owner.len()),
            });
        }
    }

    let attributes: Option<Vec<Vec<f64>>> = match attr_txt.as_deref() {
        None => None,
        Some(t) => {
            let mut rows = Vec::new();
            let mut arity = None;
            for (line, rec) in records(t) {
                if *arity.get_or_insert(rec.len()) != rec.len() {
                    return Err(DatasetError::Format {
                        file: f_attr.clone(),
                        line,
                        msg: format!("{} attributes, expected {}", rec.len(), arity.unwrap()),
                    });
                }
                rows.push(rec.iter().map(|s| parse(&f_attr, line, s)).collect::<Result<Vec<f64>, _>>()?);
            }
            if rows.len() != owner.len() {
                return Err(DatasetError::Format {
                    file: f_attr.clone(),
                    line: rows.len(),
                    msg: format!("{} attribute rows for {} nodes", rows.len(), owner.len()),
                });
            }
            Some(rows)
        }
    };

    let label_values: Vec<i64> = node_labels
        .as_ref()
        .map(|nl| nl.iter().copied().collect::<BTreeSet<_>>().into_iter().collect())
        .unwrap_or_default();
    let use_labels = node_labels.is_some() && (features == FeatureMode::Concat || attributes.is_none());
    let use_attrs = attributes.is_some();
    let onehot_dim = if use_labels { label_values.len() } else { 0 };
    let attr_dim = attributes.as_ref().map_or(0, |a| a.first().map_or(0, Vec::len));
    let d = if onehot_dim + attr_dim == 0 { 1 } else { onehot_dim + attr_dim };

    let mut feats: Vec<Array2<f64>> = counts.iter().map(|&c| Array2::zeros((c, d))).collect();
    for (node, &(g, local)) in owner.iter().enumerate() {
        let mut row = feats[g].row_mut(local);
        if onehot_dim + attr_dim == 0 {
            row[0] = 1.0;
            continue;
        }
        if use_labels {
            let v = node_labels.as_ref().unwrap()[node];
            let k = label_values.binary_search(&v).expect("value collected above");
            row[k] = 1.0;
        }
        if use_attrs {
            for (k, &a) in attributes.as_ref().unwrap()[node].iter().enumerate() {
                row[onehot_dim + k] = a;
            }
        }
    }

    let (anomalous_raw, rule) = resolve_polarity(name, &raw_labels, polarity);
    let graphs = feats
        .into_iter()
        .zip(edges)
        .enumerate()
        .map(|(i, (x, e))| {
            let y = if raw_labels[i] == anomalous_raw {
                Label::Anomalous
            } else {
                Label::Normal
            };
            Graph::new(i, counts[i], e, x, y)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut ds = GraphDataset::new(name, graphs)?;
    let mut note = format!(
        "raw label {anomalous_raw} -> anomalous ({} graphs), others -> normal; rule: {rule}",
        ds.anomaly_count()
    );
    if let Some((_, reference)) = label_polarity(name) {
        let _ = write!(note, "; reference anomaly count {reference}");
        if reference != ds.anomaly_count() {
            note.push_str(" (MISMATCH)");
        }
    }
    if self_loops > 0 {
        let _ = write!(note, "; dropped {self_loops} self-loop lines");
    }
    ds.provenance = Some(note);
    Ok(ds)
}

fn resolve_polarity(name: &str, raw: &[i64], over: Option<Polarity>) -> (i64, String) {
    let (polarity, source) = match over {
        Some(p) => (p, "override"),
        None => match label_polarity(name) {
            Some((p, _)) => (p, "table"),
            None => (Polarity::Minority, "default"),
        },
    };
    match polarity {
        Polarity::Raw(v) => (v, format!("{source}, raw label {v}")),
        Polarity::Minority => {
            let mut freq: BTreeMap<i64, usize> = BTreeMap::new();
            for &v in raw {
                *freq.entry(v).or_default() += 1;
            }
            let min = freq.values().copied().min().unwrap_or(0);
            let chosen = freq
                .iter()
                .filter(|(_, &c)| c == min)
                .map(|(&v, _)| v)
                .max()
                .unwrap_or(1);
            (chosen, format!("{source}, minority class"))
        }
    }
}

/// Writes `ds` in TUDataset format with raw labels 0 (normal) / 1 (anomalous)
/// and node features as real attributes.
pub fn write_tudataset(ds: &GraphDataset, dir: &Path) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    let name = &ds.name;
    let (mut a, mut ind, mut gl, mut attr) = (String::new(), String::new(), String::new(), String::new());
    let mut offset = 0usize;
    for (gi, g) in ds.graphs.iter().enumerate() {
        for &(i, j) in g.edges() {
            let _ = writeln!(a, "{}, {}", offset + i + 1, offset + j + 1);
            let _ = writeln!(a, "{}, {}", offset + j + 1, offset + i + 1);
        }
        for row in g.x.rows() {
            let _ = writeln!(ind, "{}", gi + 1);
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(attr, "{}", cells.join(", "));
        }
        let _ = writeln!(gl, "{}", g.y.bit());
        offset += g.n();
    }
    fs::write(dir.join(format!("{name}_A.txt")), a)?;
    fs::write(dir.join(format!("{name}_graph_indicator.txt")), ind)?;
    fs::write(dir.join(format!("{name}_graph_labels.txt")), gl)?;
    fs::write(dir.join(format!("{name}_node_attributes.txt")), attr)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn write(dir: &Path, name: &str, files: &[(&str, &str)]) {
        for (suffix, body) in files {
            fs::write(dir.join(format!("{name}_{suffix}.txt")), body).unwrap();
        }
    }

    #[test]
    fn smallest_graph() {
        let d = tempfile::tempdir().unwrap();
        write(
            d.path(),
            "T",
            &[("A", "1, 2\n2, 1\n"), ("graph_indicator", "1\n1\n"), ("graph_labels", "0\n")],
        );
        let ds = load_tudataset(d.path(), "T").unwrap();
        assert_eq!(ds.len(), 1);
        let g = &ds.graphs[0];
        assert_eq!(g.n(), 2);
        assert_eq!(g.edges(), &[(0, 1)]);
        assert_eq!(g.x, array![[1.0], [1.0]]);
    }

    #[test]
    fn local_ids_labels_and_attributes() {
        let d = tempfile::tempdir().unwrap();
        write(
            d.path(),
            "T",
            &[
                ("A", "1,2\n3, 4\n4, 5\n"),
                ("graph_indicator", "1\n1\n2\n2\n2\n"),
                ("graph_labels", "-1\n1\n"),
                ("node_labels", "3\n7\n3\n3\n7\n"),
                ("node_attributes", "0.5, 1\n1.5, 2\n2.5, 3\n3.5, 4\n4.5, 5\n"),
            ],
        );
        let auto = load_tudataset_with(d.path(), "T", FeatureMode::Auto, None).unwrap();
        assert_eq!(auto.d, 2);
        assert_eq!(auto.graphs[1].edges(), &[(0, 1), (1, 2)]);
        assert_eq!(auto.graphs[1].x.row(0).to_vec(), vec![2.5, 3.0]);

        let cat = load_tudataset_with(d.path(), "T", FeatureMode::Concat, None).unwrap();
        assert_eq!(cat.d, 4);
        assert_eq!(cat.graphs[0].x, array![[1.0, 0.0, 0.5, 1.0], [0.0, 1.0, 1.5, 2.0]]);

        // tie between -1 and 1: larger raw value is anomalous
        assert_eq!(cat.graphs[1].y, Label::Anomalous);
        let flipped = load_tudataset_with(d.path(), "T", FeatureMode::Auto, Some(Polarity::Raw(-1))).unwrap();
        assert_eq!(flipped.graphs[0].y, Label::Anomalous);
        assert!(flipped.provenance.unwrap().contains("override"));
    }

    #[test]
    fn labels_only_become_onehot() {
        let d = tempfile::tempdir().unwrap();
        write(
            d.path(),
            "T",
            &[
                ("A", "1, 2\n"),
                ("graph_indicator", "1\n1\n2\n"),
                ("graph_labels", "0\n0\n"),
                ("node_labels", "0\n2\n5\n"),
            ],
        );
        let ds = load_tudataset(d.path(), "T").unwrap();
        assert_eq!(ds.d, 3);
        assert_eq!(ds.graphs[1].x, array![[0.0, 0.0, 1.0]]);
    }

    #[test]
    fn missing_file_is_named() {
        let d = tempfile::tempdir().unwrap();
        write(d.path(), "T", &[("A", "1, 2\n"), ("graph_indicator", "1\n1\n")]);
        let err = load_tudataset(d.path(), "T").unwrap_err();
        assert!(matches!(err, DatasetError::Ingestion { .. }));
        assert!(err.to_string().contains("T_graph_labels.txt"), "{err}");
    }

    #[test]
    fn unknown_node_reports_line() {
        let d = tempfile::tempdir().unwrap();
        write(
            d.path(),
            "T",
            &[("A", "1, 2\n2, 9\n"), ("graph_indicator", "1\n1\n"), ("graph_labels", "0\n")],
        );
        match load_tudataset(d.path(), "T").unwrap_err() {
            DatasetError::Format { line, file, .. } => {
                assert_eq!(line, 2);
                assert_eq!(file, "T_A.txt");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn ragged_attributes_rejected() {
        let d = tempfile::tempdir().unwrap();
        write(
            d.path(),
            "T",
            &[
                ("A", "1, 2\n"),
                ("graph_indicator", "1\n1\n"),
                ("graph_labels", "0\n"),
                ("node_attributes", "1, 2\n3\n"),
            ],
        );
        assert!(matches!(
            load_tudataset(d.path(), "T").unwrap_err(),
            DatasetError::Format { line: 2, .. }
        ));
    }

    #[test]
    fn written_datasets_reload_identically() {
        let g0 = Graph::new(0, 3, [(0, 1), (1, 2)], array![[0.1, 2.0], [1.0 / 3.0, -4.0], [5.0, 6.5]], Label::Normal)
            .unwrap();
        let g1 = Graph::new(1, 2, [(0, 1)], array![[1.0, 1.0], [-1e-7, 0.0]], Label::Anomalous).unwrap();
        let g2 = Graph::new(2, 1, [], array![[3.0, 3.0]], Label::Normal).unwrap();
        let ds = GraphDataset::new("W", vec![g0, g1, g2]).unwrap();
        let d = tempfile::tempdir().unwrap();
        write_tudataset(&ds, d.path()).unwrap();
        let back = load_tudataset(d.path(), "W").unwrap();
        assert_eq!(back.graphs, ds.graphs);
    }

    #[test]
    fn polarity_table_lookup() {
        assert_eq!(label_polarity("bzr"), Some((Polarity::Minority, 86)));
        assert_eq!(label_polarity("ENZYMES"), Some((Polarity::Raw(1), 100)));
        assert_eq!(label_polarity("MUTAG"), None);
    }
}
