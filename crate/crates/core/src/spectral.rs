//! Graph-spectral primitives.
//!
//! Everything here is a pure function of a graph and a signal. Filters are
//! evaluated as polynomials in the normalized Laplacian through repeated
//! operator applications; [`eigendecompose`] exists only as an oracle for
//! tests and the spectrum report.
//!
//! Conventions:
//! - `L = I − D^{-1/2} A D^{-1/2}`; an isolated node gets the identity row.
//! - The random walk is row-stochastic, `R = D^{-1} A`, so `R[i][j]` is the
//!   probability of stepping from `i` to `j`. Isolated nodes stay put.
//! - A zero-norm signal column has Rayleigh quotient 0.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Array3, Axis};
use thiserror::Error;

use crate::autodiff::Mat;
use crate::dataset::Graph;

/// Largest matrix the eigendecomposition oracle accepts by default.
pub const DEFAULT_ORACLE_CAP: usize = 256;

/// Which way the one-step walk matrix is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WalkConvention {
    /// `D^{-1} A`: rows sum to one.
    RowStochastic,
}

pub const WALK_CONVENTION: WalkConvention = WalkConvention::RowStochastic;

#[derive(Debug, Error, PartialEq)]
pub enum SpectralError {
    #[error("eigendecomposition oracle limited to {cap} nodes, got {n}")]
    OracleSize { n: usize, cap: usize },
    #[error("matrix is not square: {0} x {1}")]
    NotSquare(usize, usize),
    #[error("filter exponents must be nonnegative, got alpha={alpha}, beta={beta}")]
    NegativeExponent { alpha: i64, beta: i64 },
    #[error("{0}")]
    Argument(String),
}

/// A symmetric linear operator on node signals (`n × d` matrices).
pub trait LaplacianOperator {
    fn order(&self) -> usize;
    fn apply(&self, x: &Mat) -> Mat;
}

impl LaplacianOperator for Mat {
    fn order(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &Mat) -> Mat {
        self.dot(x)
    }
}

/// Normalized Laplacian kept in neighbor-list form; one application costs
/// `O(|E| · d)`.
#[derive(Debug, Clone)]
pub struct SparseLaplacian {
    neighbors: Vec<Vec<usize>>,
    inv_sqrt_deg: Vec<f64>,
}

impl SparseLaplacian {
    pub fn new(g: &Graph) -> Self {
        let neighbors = g.neighbors();
        let inv_sqrt_deg = neighbors
            .iter()
            .map(|nb| if nb.is_empty() { 0.0 } else { 1.0 / (nb.len() as f64).sqrt() })
            .collect();
        SparseLaplacian {
            neighbors,
            inv_sqrt_deg,
        }
    }
}

impl LaplacianOperator for SparseLaplacian {
    fn order(&self) -> usize {
        self.neighbors.len()
    }

    fn apply(&self, x: &Mat) -> Mat {
        let mut out = x.clone();
        for (i, nb) in self.neighbors.iter().enumerate() {
            let si = self.inv_sqrt_deg[i];
            for &j in nb {
                let w = si * self.inv_sqrt_deg[j];
                for (o, &v) in out.row_mut(i).iter_mut().zip(x.row(j)) {
                    *o -= w * v;
                }
            }
        }
        out
    }
}

pub fn normalized_laplacian(g: &Graph) -> Mat {
    let n = g.n();
    let deg = g.degrees();
    let mut l = Array2::eye(n);
    for &(i, j) in g.edges() {
        let w = 1.0 / ((deg[i] * deg[j]) as f64).sqrt();
        l[[i, j]] = -w;
        l[[j, i]] = -w;
    }
    l
}

/// Ascending eigenvalues and the matching orthonormal eigenvectors (columns).
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: Array1<f64>,
    pub vectors: Mat,
}

impl Eigen {
    /// `U f(Λ) Uᵀ x`.
    pub fn apply_response(&self, f: impl Fn(f64) -> f64, x: &Mat) -> Mat {
        let coeffs = self.vectors.t().dot(x);
        let scaled = Array2::from_shape_fn(coeffs.raw_dim(), |(i, j)| f(self.values[i]) * coeffs[[i, j]]);
        self.vectors.dot(&scaled)
    }

    pub fn reconstruct(&self) -> Mat {
        let scaled = &self.vectors * &self.values.view().insert_axis(Axis(0));
        scaled.dot(&self.vectors.t())
    }
}

pub fn eigendecompose(l: &Mat, cap: usize) -> Result<Eigen, SpectralError> {
    let (r, c) = l.dim();
    if r != c {
        return Err(SpectralError::NotSquare(r, c));
    }
    if r > cap {
        return Err(SpectralError::OracleSize { n: r, cap });
    }
    if r == 0 {
        return Ok(Eigen {
            values: Array1::zeros(0),
            vectors: Array2::zeros((0, 0)),
        });
    }
    let m = DMatrix::from_fn(r, r, |i, j| 0.5 * (l[[i, j]] + l[[j, i]]));
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = Array1::from_iter(order.iter().map(|&k| eig.eigenvalues[k]));
    let vectors = Array2::from_shape_fn((r, r), |(i, k)| eig.eigenvectors[(i, order[k])]);
    Ok(Eigen { values, vectors })
}

/// Per-column Rayleigh quotient `xⱼᵀ L xⱼ / xⱼᵀ xⱼ`.
pub fn rayleigh_vector(x: &Mat, l: &impl LaplacianOperator) -> Array1<f64> {
    let lx = l.apply(x);
    Array1::from_iter(x.columns().into_iter().zip(lx.columns()).map(|(col, lcol)| {
        let norm = col.dot(&col);
        if norm == 0.0 {
            0.0
        } else {
            col.dot(&lcol) / norm
        }
    }))
}

/// One-step random-walk matrix under [`WALK_CONVENTION`].
pub fn random_walk_matrix(g: &Graph) -> Mat {
    let n = g.n();
    let deg = g.degrees();
    let mut r = Array2::zeros((n, n));
    for (i, &d) in deg.iter().enumerate() {
        if d == 0 {
            r[[i, i]] = 1.0;
        }
    }
    for &(i, j) in g.edges() {
        r[[i, j]] = 1.0 / deg[i] as f64;
        r[[j, i]] = 1.0 / deg[j] as f64;
    }
    r
}

/// Stack `[I, R, R², …, R^{T−1}]` as an `n × n × T` tensor.
pub fn rrwp(g: &Graph, steps: usize) -> Result<Array3<f64>, SpectralError> {
    if steps == 0 {
        return Err(SpectralError::Argument("random-walk length must be at least 1".into()));
    }
    let n = g.n();
    let r = random_walk_matrix(g);
    let mut out = Array3::zeros((n, n, steps));
    let mut power: Mat = Array2::eye(n);
    for t in 0..steps {
        out.index_axis_mut(Axis(2), t).assign(&power);
        if t + 1 < steps {
            power = power.dot(&r);
        }
    }
    Ok(out)
}

/// Flattens an `n × n × T` pair tensor into `n² × T`, pair `(i, j)` at row `i·n + j`.
pub fn pair_rows(tensor: &Array3<f64>) -> Mat {
    let (n, m, t) = tensor.dim();
    tensor
        .to_shape((n * m, t))
        .expect("contiguous pair tensor")
        .to_owned()
}

fn check_exponents(alpha: i64, beta: i64) -> Result<(usize, usize), SpectralError> {
    if alpha < 0 || beta < 0 {
        return Err(SpectralError::NegativeExponent { alpha, beta });
    }
    Ok((alpha as usize, beta as usize))
}

/// `1 / (2 B(α+1, β+1)) = (α+β+1)! / (2 α! β!)`.
pub fn beta_normalizer(alpha: usize, beta: usize) -> f64 {
    let m = alpha + beta;
    let mut binom = 1.0;
    for k in 0..alpha.min(beta) {
        binom = binom * (m - k) as f64 / (k + 1) as f64;
    }
    (m + 1) as f64 * binom / 2.0
}

/// Scalar Beta wavelet response at eigenvalue `lambda ∈ [0, 2]`.
pub fn beta_response(alpha: usize, beta: usize, lambda: f64) -> f64 {
    let w = lambda / 2.0;
    beta_normalizer(alpha, beta) * w.powi(alpha as i32) * (1.0 - w).powi(beta as i32)
}

/// `(L/2)^α (I − L/2)^β x / (2 B(α+1, β+1))`, evaluated by repeated application.
pub fn beta_filter_apply(
    l: &impl LaplacianOperator,
    alpha: i64,
    beta: i64,
    x: &Mat,
) -> Result<Mat, SpectralError> {
    let (alpha, beta) = check_exponents(alpha, beta)?;
    let mut y = x.clone();
    for _ in 0..alpha {
        y = l.apply(&y) * 0.5;
    }
    for _ in 0..beta {
        let half = l.apply(&y) * 0.5;
        y -= &half;
    }
    y *= beta_normalizer(alpha, beta);
    Ok(y)
}

/// The `M + 1` band-pass outputs ordered `α = 0 … M` with `β = M − α`.
pub fn beta_bank(l: &impl LaplacianOperator, order: usize, x: &Mat) -> Result<Vec<Mat>, SpectralError> {
    if order == 0 {
        return Err(SpectralError::Argument("Beta bank order must be at least 1".into()));
    }
    (0..=order)
        .map(|m| beta_filter_apply(l, m as i64, (order - m) as i64, x))
        .collect()
}

/// Low-pass `((ψ+1)I − L)x` and high-pass `((ψ−1)I + L)x`.
pub fn low_high_apply(l: &impl LaplacianOperator, psi: f64, x: &Mat) -> (Mat, Mat) {
    let lx = l.apply(x);
    let low = x * (psi + 1.0) - &lx;
    let high = x * (psi - 1.0) + &lx;
    (low, high)
}

pub fn low_pass_response(psi: f64, lambda: f64) -> f64 {
    psi + 1.0 - lambda
}

pub fn high_pass_response(psi: f64, lambda: f64) -> f64 {
    psi - 1.0 + lambda
}

/// Distribution of signal energy over the Laplacian spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    pub eigenvalues: Array1<f64>,
    /// Per-eigenvalue share of energy; each column is normalized to sum 1
    /// and the shares are averaged over nonzero columns.
    pub energy: Array1<f64>,
}

pub fn spectrum_report(g: &Graph, x: &Mat, cap: usize) -> Result<SpectrumReport, SpectralError> {
    let eig = eigendecompose(&normalized_laplacian(g), cap)?;
    let coeffs = eig.vectors.t().dot(x);
    let mut energy = Array1::zeros(g.n());
    let mut used = 0usize;
    for col in coeffs.columns() {
        let sq = col.mapv(|c| c * c);
        let total = sq.sum();
        if total > 0.0 {
            energy += &(sq / total);
            used += 1;
        }
    }
    if used > 0 {
        energy /= used as f64;
    }
    Ok(SpectrumReport {
        eigenvalues: eig.values,
        energy,
    })
}

/// Per-graph spectral quantities used by both model branches.
#[derive(Debug, Clone)]
pub struct SpectralCache {
    pub laplacian: Mat,
    pub degrees: Vec<usize>,
    /// `n × n × T` random-walk powers of the graph itself.
    pub rrwp: Array3<f64>,
    pub rayleigh: Array1<f64>,
}

impl SpectralCache {
    pub fn build(g: &Graph, steps: usize) -> Result<Self, SpectralError> {
        let laplacian = normalized_laplacian(g);
        let rayleigh = rayleigh_vector(&g.x, &laplacian);
        Ok(SpectralCache {
            degrees: g.degrees(),
            rrwp: rrwp(g, steps)?,
            rayleigh,
            laplacian,
        })
    }
}
