use ndarray::Array2;

use crate::autodiff::Mat;

use super::DatasetError;

/// Binary graph label; `Anomalous` is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Normal,
    Anomalous,
}

impl Label {
    pub fn from_bit(b: u8) -> Self {
        if b == 0 {
            Label::Normal
        } else {
            Label::Anomalous
        }
    }

    pub fn bit(self) -> u8 {
        match self {
            Label::Normal => 0,
            Label::Anomalous => 1,
        }
    }

    pub fn as_f64(self) -> f64 {
        self.bit() as f64
    }

    pub fn is_anomalous(self) -> bool {
        self == Label::Anomalous
    }
}

/// One attributed undirected graph.
///
/// Edges are stored once per undirected pair as `(i, j)` with `i < j`,
/// sorted, without self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub id: usize,
    n: usize,
    edges: Vec<(usize, usize)>,
    pub x: Mat,
    pub y: Label,
}

impl Graph {
    /// Builds a graph, canonicalizing and deduplicating `edges`.
    pub fn new(
        id: usize,
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        x: Mat,
        y: Label,
    ) -> Result<Self, DatasetError> {
        if x.nrows() != n {
            return Err(DatasetError::Invalid(format!(
                "graph {id}: feature matrix has {} rows for {n} nodes",
                x.nrows()
            )));
        }
        if x.ncols() == 0 {
            return Err(DatasetError::Invalid(format!("graph {id}: zero feature columns")));
        }
        let mut canon = Vec::new();
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(DatasetError::Invalid(format!(
                    "graph {id}: edge ({a}, {b}) out of range for {n} nodes"
                )));
            }
            if a == b {
                return Err(DatasetError::Invalid(format!("graph {id}: self-loop at node {a}")));
            }
            canon.push((a.min(b), a.max(b)));
        }
        canon.sort_unstable();
        canon.dedup();
        Ok(Graph {
            id,
            n,
            edges: canon,
            x,
            y,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    /// Dense symmetric 0/1 adjacency.
    pub fn adjacency(&self) -> Mat {
        let mut a = Array2::zeros((self.n, self.n));
        for &(i, j) in &self.edges {
            a[[i, j]] = 1.0;
            a[[j, i]] = 1.0;
        }
        a
    }

    /// Relabels nodes: old node `i` becomes node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Graph {
        assert_eq!(perm.len(), self.n, "permutation length");
        let mut x = Array2::zeros(self.x.raw_dim());
        for (old, &new) in perm.iter().enumerate() {
            x.row_mut(new).assign(&self.x.row(old));
        }
        let edges = self.edges.iter().map(|&(a, b)| (perm[a], perm[b]));
        Graph::new(self.id, self.n, edges, x, self.y).expect("permutation preserves validity")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn duplicate_and_reversed_edges_collapse() {
        let g = Graph::new(0, 2, [(0, 1), (1, 0)], array![[1.0], [1.0]], Label::Normal).unwrap();
        assert_eq!(g.edges(), &[(0, 1)]);
        assert_eq!(g.degrees(), vec![1, 1]);
    }

    #[test]
    fn rejects_self_loops_and_out_of_range() {
        let x = array![[1.0], [1.0]];
        assert!(Graph::new(0, 2, [(1, 1)], x.clone(), Label::Normal).is_err());
        assert!(Graph::new(0, 2, [(0, 2)], x, Label::Normal).is_err());
    }

    #[test]
    fn permutation_moves_rows_and_edges() {
        let g = Graph::new(3, 3, [(0, 1)], array![[1.0], [2.0], [3.0]], Label::Anomalous).unwrap();
        let p = g.permuted(&[2, 0, 1]);
        assert_eq!(p.edges(), &[(0, 2)]);
        assert_eq!(p.x, array![[2.0], [3.0], [1.0]]);
    }
}
