//! Reverse-mode differentiation over dense row-major matrices.
//!
//! A [`Tape`] records every operation applied to its [`Var`] handles. Values
//! are `f64` matrices (`rows × cols`); scalars are `1 × 1`. Parameters are
//! registered by reference, so building a tape per graph never copies the
//! weights. [`Tape::backward`] walks the records in reverse insertion order,
//! which is a valid reverse topological order because a record can only
//! refer to records created before it.
//!
//! Broadcasting is explicit: the only mixed-shape operations are the
//! row-vector forms ([`Tape::add_row`], [`Tape::mul_row`]), the column-vector
//! form [`Tape::mul_col`], and scalar scaling.

mod check;
mod pair_attention;
mod params;

pub use check::{finite_diff_check, FdReport};
pub use params::{Checkpoint, CheckpointEntry, ParamId, ParamStore, CHECKPOINT_FORMAT_VERSION};

use std::borrow::Cow;
use std::cell::{Ref, RefCell};

use ndarray::{s, Array2, Axis, Zip};
use thiserror::Error;

/// Dense matrix type used throughout the crate.
pub type Mat = Array2<f64>;

/// Epsilon inside layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: [usize; 2],
        rhs: [usize; 2],
    },
    #[error("{op}: {msg}")]
    Contract { op: &'static str, msg: String },
    #[error("backward needs a scalar root, got shape {0:?}")]
    NonScalarRoot([usize; 2]),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("finite-difference step {0} outside [1e-7, 1e-3]")]
    BadStep(f64),
    #[error("function is not deterministic: {first} then {second}")]
    NonDeterministic { first: f64, second: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

type Result<T> = std::result::Result<T, AutodiffError>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    AddRow(usize, usize),
    Mul(usize, usize),
    MulRow(usize, usize),
    MulCol(usize, usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SoftmaxRows(usize),
    Relu(usize),
    Sigmoid(usize),
    Log { x: usize, floor: f64 },
    Affine { x: usize, scale: f64 },
    MeanRows(usize),
    Sum(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    GatherRows { x: usize, idx: Vec<usize> },
    Reshape(usize),
    SumRowGroups { x: usize, group: usize },
    MaskScale { x: usize, mask: Mat },
    BlockDiag { blocks: Vec<usize>, h: usize },
    PairAttention {
        q: usize,
        k: usize,
        v: usize,
        e: usize,
        s: usize,
        cache: pair_attention::Cache,
    },
}

struct Node<'t> {
    value: Cow<'t, Mat>,
    op: Op,
    needs_grad: bool,
}

/// Recording of one forward pass. Single-threaded; build one per graph.
pub struct Tape<'t> {
    nodes: RefCell<Vec<Node<'t>>>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

fn dims(m: &Mat) -> [usize; 2] {
    [m.nrows(), m.ncols()]
}

fn finite_or(op: &'static str, m: &Mat) -> Result<()> {
    if cfg!(debug_assertions) && !m.iter().all(|v| v.is_finite()) {
        return Err(AutodiffError::NonFinite(op));
    }
    Ok(())
}

impl<'t> Tape<'t> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, value: Cow<'t, Mat>, op: Op, needs_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(nodes.len() - 1)
    }

    fn push_checked(&self, name: &'static str, value: Mat, op: Op, needs_grad: bool) -> Result<Var> {
        finite_or(name, &value)?;
        Ok(self.push(Cow::Owned(value), op, needs_grad))
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].needs_grad)
    }

    /// Trainable leaf borrowing `value`.
    pub fn param(&self, value: &'t Mat) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, true)
    }

    /// Trainable leaf owning `value`.
    pub fn param_owned(&self, value: Mat) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, true)
    }

    pub fn constant(&self, value: Mat) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, false)
    }

    pub fn constant_ref(&self, value: &'t Mat) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Mat> {
        Ref::map(self.nodes.borrow(), |n| n[v.0].value.as_ref())
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        dims(&self.value(v))
    }

    /// Value of a `1 × 1` variable.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let out = {
            let (va, vb) = (self.value(a), self.value(b));
            if va.ncols() != vb.nrows() {
                return Err(AutodiffError::Shape {
                    op: "matmul",
                    lhs: dims(&va),
                    rhs: dims(&vb),
                });
            }
            va.dot(&*vb)
        };
        let g = self.needs(&[a.0, b.0]);
        self.push_checked("matmul", out, Op::MatMul(a.0, b.0), g)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(AutodiffError::Shape { op, lhs: sa, rhs: sb });
        }
        Ok(())
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = &*self.value(a) + &*self.value(b);
        let g = self.needs(&[a.0, b.0]);
        self.push_checked("add", out, Op::Add(a.0, b.0), g)
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = &*self.value(a) - &*self.value(b);
        let g = self.needs(&[a.0, b.0]);
        self.push_checked("sub", out, Op::Sub(a.0, b.0), g)
    }

    /// `a + 1 rowᵀ`: adds a `1 × c` row to every row of `a`.
    pub fn add_row(&self, a: Var, row: Var) -> Result<Var> {
        let out = {
            let (va, vr) = (self.value(a), self.value(row));
            if vr.nrows() != 1 || vr.ncols() != va.ncols() {
                return Err(AutodiffError::Shape {
                    op: "add_row",
                    lhs: dims(&va),
                    rhs: dims(&vr),
                });
            }
            &*va + &*vr
        };
        let g = self.needs(&[a.0, row.0]);
        self.push_checked("add_row", out, Op::AddRow(a.0, row.0), g)
    }

    /// Elementwise product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = &*self.value(a) * &*self.value(b);
        let g = self.needs(&[a.0, b.0]);
        self.push_checked("mul", out, Op::Mul(a.0, b.0), g)
    }

    /// Scales every row of `a` elementwise by the `1 × c` row.
    pub fn mul_row(&self, a: Var, row: Var) -> Result<Var> {
        let out = {
            let (va, vr) = (self.value(a), self.value(row));
            if vr.nrows() != 1 || vr.ncols() != va.ncols() {
                return Err(AutodiffError::Shape {
                    op: "mul_row",
                    lhs: dims(&va),
                    rhs: dims(&vr),
                });
            }
            &*va * &*vr
        };
        let g = self.needs(&[a.0, row.0]);
        self.push_checked("mul_row", out, Op::MulRow(a.0, row.0), g)
    }

    /// Scales row `i` of `a` by entry `i` of the `r × 1` column.
    pub fn mul_col(&self, a: Var, col: Var) -> Result<Var> {
        let out = {
            let (va, vc) = (self.value(a), self.value(col));
            if vc.ncols() != 1 || vc.nrows() != va.nrows() {
                return Err(AutodiffError::Shape {
                    op: "mul_col",
                    lhs: dims(&va),
                    rhs: dims(&vc),
                });
            }
            &*va * &*vc
        };
        let g = self.needs(&[a.0, col.0]);
        self.push_checked("mul_col", out, Op::MulCol(a.0, col.0), g)
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var> {
        self.concat(parts, Axis(1))
    }

    pub fn concat_rows(&self, parts: &[Var]) -> Result<Var> {
        self.concat(parts, Axis(0))
    }

    fn concat(&self, parts: &[Var], axis: Axis) -> Result<Var> {
        let name = if axis == Axis(1) { "concat_cols" } else { "concat_rows" };
        if parts.is_empty() {
            return Err(AutodiffError::Contract {
                op: name,
                msg: "nothing to concatenate".into(),
            });
        }
        let out = {
            let nodes = self.nodes.borrow();
            let first = dims(&nodes[parts[0].0].value);
            let keep = 1 - axis.index();
            let views: Vec<_> = parts.iter().map(|p| nodes[p.0].value.view()).collect();
            for v in &views {
                let d = [v.nrows(), v.ncols()];
                if d[keep] != first[keep] {
                    return Err(AutodiffError::Shape {
                        op: name,
                        lhs: first,
                        rhs: d,
                    });
                }
            }
            ndarray::concatenate(axis, &views).expect("shapes checked")
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let g = self.needs(&ids);
        let op = if axis == Axis(1) {
            Op::ConcatCols(ids)
        } else {
            Op::ConcatRows(ids)
        };
        self.push_checked(name, out, op, g)
    }

    pub fn softmax_rows(&self, a: Var) -> Result<Var> {
        let mut out = self.value(a).clone();
        for mut row in out.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            row.mapv_inplace(|v| (v - max).exp());
            let total = row.sum();
            row.mapv_inplace(|v| v / total);
        }
        let g = self.needs(&[a.0]);
        self.push_checked("softmax_rows", out, Op::SoftmaxRows(a.0), g)
    }

    pub fn relu(&self, a: Var) -> Result<Var> {
        let out = self.value(a).mapv(|v| v.max(0.0));
        let g = self.needs(&[a.0]);
        self.push_checked("relu", out, Op::Relu(a.0), g)
    }

    pub fn sigmoid(&self, a: Var) -> Result<Var> {
        let out = self.value(a).mapv(sigmoid);
        let g = self.needs(&[a.0]);
        self.push_checked("sigmoid", out, Op::Sigmoid(a.0), g)
    }

    /// Natural log with the argument clamped below at `floor`.
    pub fn log(&self, a: Var, floor: f64) -> Result<Var> {
        let out = self.value(a).mapv(|v| v.max(floor).ln());
        let g = self.needs(&[a.0]);
        self.push_checked("log", out, Op::Log { x: a.0, floor }, g)
    }

    /// `scale · a + shift`, elementwise.
    pub fn affine(&self, a: Var, scale: f64, shift: f64) -> Result<Var> {
        let out = self.value(a).mapv(|v| scale * v + shift);
        let g = self.needs(&[a.0]);
        self.push_checked("affine", out, Op::Affine { x: a.0, scale }, g)
    }

    pub fn scale(&self, a: Var, scale: f64) -> Result<Var> {
        self.affine(a, scale, 0.0)
    }

    /// Column means: `r × c` to `1 × c`.
    pub fn mean_rows(&self, a: Var) -> Result<Var> {
        let out = {
            let v = self.value(a);
            if v.nrows() == 0 {
                return Err(AutodiffError::Contract {
                    op: "mean_rows",
                    msg: "mean over zero rows".into(),
                });
            }
            v.mean_axis(Axis(0)).expect("nonempty").insert_axis(Axis(0))
        };
        let g = self.needs(&[a.0]);
        self.push_checked("mean_rows", out, Op::MeanRows(a.0), g)
    }

    /// Sum of every entry as a `1 × 1` value.
    pub fn sum(&self, a: Var) -> Result<Var> {
        let out = Array2::from_elem((1, 1), self.value(a).sum());
        let g = self.needs(&[a.0]);
        self.push_checked("sum", out, Op::Sum(a.0), g)
    }

    /// Per-row normalization over the last dimension with `1 × c` gain and bias.
    pub fn layer_norm(&self, a: Var, gain: Var, bias: Var) -> Result<Var> {
        let (out, xhat, inv_std) = {
            let (va, vg, vb) = (self.value(a), self.value(gain), self.value(bias));
            let c = va.ncols();
            for p in [&vg, &vb] {
                if p.nrows() != 1 || p.ncols() != c {
                    return Err(AutodiffError::Shape {
                        op: "layer_norm",
                        lhs: dims(&va),
                        rhs: dims(p),
                    });
                }
            }
            let mut xhat = va.clone();
            let mut inv_std = Vec::with_capacity(va.nrows());
            for mut row in xhat.rows_mut() {
                let mean = row.sum() / c as f64;
                row.mapv_inplace(|v| v - mean);
                let var = row.iter().map(|v| v * v).sum::<f64>() / c as f64;
                let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                row.mapv_inplace(|v| v * is);
                inv_std.push(is);
            }
            let out = &(&xhat * &*vg) + &*vb;
            (out, xhat, inv_std)
        };
        let g = self.needs(&[a.0, gain.0, bias.0]);
        let op = Op::LayerNorm {
            x: a.0,
            gain: gain.0,
            bias: bias.0,
            xhat,
            inv_std,
        };
        self.push_checked("layer_norm", out, op, g)
    }

    /// Row `k` of the output is row `idx[k]` of `a`.
    pub fn gather_rows(&self, a: Var, idx: &[usize]) -> Result<Var> {
        let out = {
            let v = self.value(a);
            if let Some(&bad) = idx.iter().find(|&&i| i >= v.nrows()) {
                return Err(AutodiffError::Contract {
                    op: "gather_rows",
                    msg: format!("index {bad} out of range for {} rows", v.nrows()),
                });
            }
            v.select(Axis(0), idx)
        };
        let g = self.needs(&[a.0]);
        let op = Op::GatherRows {
            x: a.0,
            idx: idx.to_vec(),
        };
        self.push_checked("gather_rows", out, op, g)
    }

    /// Row-major reinterpretation with the same element count.
    pub fn reshape(&self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let out = {
            let v = self.value(a);
            if v.len() != rows * cols {
                return Err(AutodiffError::Shape {
                    op: "reshape",
                    lhs: dims(&v),
                    rhs: [rows, cols],
                });
            }
            let flat: Vec<f64> = v.iter().copied().collect();
            Array2::from_shape_vec((rows, cols), flat).expect("length checked")
        };
        let g = self.needs(&[a.0]);
        self.push_checked("reshape", out, Op::Reshape(a.0), g)
    }

    /// Sums each run of `group` consecutive rows: `(n·group) × c` to `n × c`.
    pub fn sum_row_groups(&self, a: Var, group: usize) -> Result<Var> {
        let out = {
            let v = self.value(a);
            if group == 0 || v.nrows() % group != 0 {
                return Err(AutodiffError::Contract {
                    op: "sum_row_groups",
                    msg: format!("{} rows not divisible into groups of {group}", v.nrows()),
                });
            }
            let n = v.nrows() / group;
            let mut out = Array2::zeros((n, v.ncols()));
            for (i, mut row) in out.rows_mut().into_iter().enumerate() {
                for k in 0..group {
                    row += &v.row(i * group + k);
                }
            }
            out
        };
        let g = self.needs(&[a.0]);
        self.push_checked("sum_row_groups", out, Op::SumRowGroups { x: a.0, group }, g)
    }

    /// Elementwise product with a fixed (non-differentiable) mask, as used by dropout.
    pub fn mask_scale(&self, a: Var, mask: Mat) -> Result<Var> {
        let out = {
            let v = self.value(a);
            if dims(&v) != dims(&mask) {
                return Err(AutodiffError::Shape {
                    op: "mask_scale",
                    lhs: dims(&v),
                    rhs: dims(&mask),
                });
            }
            &*v * &mask
        };
        let g = self.needs(&[a.0]);
        self.push_checked("mask_scale", out, Op::MaskScale { x: a.0, mask }, g)
    }

    /// One head of attention over node pairs, for graphs stacked row-wise.
    /// `sizes` gives each graph's node count. `q`, `k`, `v` are `n × d` with
    /// `n = Σ m`; `e` stacks each graph's `m² × d` pair block, pair `(i, j)` at
    /// row `i·m + j` of its block; `s` is the `d × 1` scoring vector. Per graph
    /// this computes `e_ij = relu(q_i ⊙ k_j + e_ij)`, `α = softmax_j(e_ij · s)`
    /// and `out_i = Σ_j α_ij mask_ij (v_j + e_ij)`. Returns `out` and each
    /// graph's `m × m` attention matrix.
    pub fn pair_attention(
        &self,
        [q, k, v, e, s]: [Var; 5],
        sizes: &[usize],
        masks: Option<Vec<Mat>>,
    ) -> Result<(Var, Vec<Mat>)> {
        let nodes: usize = sizes.iter().sum();
        let pairs: usize = sizes.iter().map(|m| m * m).sum();
        let (out, cache) = {
            let (vq, vk, vv, ve, vs) = (self.value(q), self.value(k), self.value(v), self.value(e), self.value(s));
            let d = vq.ncols();
            for (x, want) in [(&vq, [nodes, d]), (&vk, [nodes, d]), (&vv, [nodes, d]), (&ve, [pairs, d]), (&vs, [d, 1])] {
                if dims(x) != want {
                    return Err(AutodiffError::Shape {
                        op: "pair_attention",
                        lhs: want,
                        rhs: dims(x),
                    });
                }
            }
            let mask = match masks {
                Some(ms) => {
                    if ms.len() != sizes.len() {
                        return Err(AutodiffError::Contract {
                            op: "pair_attention",
                            msg: format!("{} masks for {} graphs", ms.len(), sizes.len()),
                        });
                    }
                    let mut flat = Vec::with_capacity(pairs);
                    for (mk, &m) in ms.iter().zip(sizes) {
                        if dims(mk) != [m, m] {
                            return Err(AutodiffError::Shape {
                                op: "pair_attention",
                                lhs: [m, m],
                                rhs: dims(mk),
                            });
                        }
                        flat.extend(mk.iter().copied());
                    }
                    Some(flat)
                }
                None => None,
            };
            pair_attention::forward(&vq, &vk, &vv, &ve, &vs, sizes, mask)
        };
        let mut alpha = Vec::with_capacity(sizes.len());
        let mut off = 0;
        for &m in sizes {
            let block = cache.alpha[off..off + m * m].to_vec();
            alpha.push(Array2::from_shape_vec((m, m), block).expect("m² entries"));
            off += m * m;
        }
        let g = self.needs(&[q.0, k.0, v.0, e.0, s.0]);
        let op = Op::PairAttention {
            q: q.0,
            k: k.0,
            v: v.0,
            e: e.0,
            s: s.0,
            cache,
        };
        Ok((self.push_checked("pair_attention", out, op, g)?, alpha))
    }

    /// Left product with the block-diagonal matrix `diag(blocks)`. Block `g`
    /// (`r × c`) maps the next `c` rows of `h` to the next `r` output rows.
    pub fn block_diag_matmul(&self, blocks: &[Var], h: Var) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let vh = nodes[h.0].value.as_ref();
            let rows: usize = blocks.iter().map(|b| nodes[b.0].value.nrows()).sum();
            let cols: usize = blocks.iter().map(|b| nodes[b.0].value.ncols()).sum();
            if cols != vh.nrows() {
                return Err(AutodiffError::Shape {
                    op: "block_diag_matmul",
                    lhs: [rows, cols],
                    rhs: dims(vh),
                });
            }
            let mut out = Array2::zeros((rows, vh.ncols()));
            let (mut r0, mut c0) = (0, 0);
            for b in blocks {
                let vb = nodes[b.0].value.as_ref();
                let (r, c) = vb.dim();
                out.slice_mut(s![r0..r0 + r, ..]).assign(&vb.dot(&vh.slice(s![c0..c0 + c, ..])));
                r0 += r;
                c0 += c;
            }
            out
        };
        let mut ids: Vec<usize> = blocks.iter().map(|b| b.0).collect();
        ids.push(h.0);
        let g = self.needs(&ids);
        ids.pop();
        self.push_checked("block_diag_matmul", out, Op::BlockDiag { blocks: ids, h: h.0 }, g)
    }

    /// Propagates adjoints from a scalar `root` to every recorded value.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let rs = dims(&nodes[root.0].value);
        if rs != [1, 1] {
            return Err(AutodiffError::NonScalarRoot(rs));
        }
        let mut grads: Vec<Option<Mat>> = vec![None; nodes.len()];
        grads[root.0] = Some(Array2::ones((1, 1)));

        for id in (0..=root.0).rev() {
            let node = &nodes[id];
            // Leaves keep their adjoint; intermediates release theirs once propagated.
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[id].take() else { continue };
            let val = |i: usize| nodes[i].value.as_ref();
            let need = |i: usize| nodes[i].needs_grad;
            let mut acc = |i: usize, g: Mat| {
                if !nodes[i].needs_grad {
                    return;
                }
                match &mut grads[i] {
                    Some(existing) => *existing += &g,
                    slot => *slot = Some(g),
                }
            };
            match &node.op {
                Op::Leaf => unreachable!("leaves skipped above"),
                Op::MatMul(a, b) => {
                    if need(*a) {
                        acc(*a, dy.dot(&val(*b).t()));
                    }
                    if need(*b) {
                        acc(*b, val(*a).t().dot(&dy));
                    }
                }
                Op::Add(a, b) => {
                    if need(*a) {
                        acc(*a, dy.clone());
                    }
                    acc(*b, dy);
                }
                Op::Sub(a, b) => {
                    if need(*b) {
                        acc(*b, -&dy);
                    }
                    acc(*a, dy);
                }
                Op::AddRow(a, r) => {
                    acc(*r, dy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(*a, dy);
                }
                Op::Mul(a, b) => {
                    if need(*a) {
                        acc(*a, &dy * val(*b));
                    }
                    if need(*b) {
                        acc(*b, &dy * val(*a));
                    }
                }
                Op::MulRow(a, r) => {
                    if need(*r) {
                        acc(*r, (&dy * val(*a)).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if need(*a) {
                        acc(*a, &dy * val(*r));
                    }
                }
                Op::MulCol(a, c) => {
                    if need(*c) {
                        acc(*c, (&dy * val(*a)).sum_axis(Axis(1)).insert_axis(Axis(1)));
                    }
                    if need(*a) {
                        acc(*a, &dy * val(*c));
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = val(p).ncols();
                        if need(p) {
                            acc(p, dy.slice(s![.., off..off + w]).to_owned());
                        }
                        off += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let h = val(p).nrows();
                        if need(p) {
                            acc(p, dy.slice(s![off..off + h, ..]).to_owned());
                        }
                        off += h;
                    }
                }
                Op::SoftmaxRows(a) => {
                    let y = node.value.as_ref();
                    let mut dx = &dy * y;
                    for (mut row, yr) in dx.rows_mut().into_iter().zip(y.rows()) {
                        let dot = row.sum();
                        Zip::from(&mut row).and(&yr).for_each(|d, &yv| *d -= yv * dot);
                    }
                    acc(*a, dx);
                }
                Op::Relu(a) => {
                    let mut dx = dy;
                    Zip::from(&mut dx)
                        .and(val(*a))
                        .for_each(|d, &x| if x <= 0.0 { *d = 0.0 });
                    acc(*a, dx);
                }
                Op::Sigmoid(a) => {
                    let y = node.value.as_ref();
                    acc(*a, &dy * &y.mapv(|s| s * (1.0 - s)));
                }
                Op::Log { x, floor } => {
                    let mut dx = dy;
                    Zip::from(&mut dx).and(val(*x)).for_each(|d, &v| {
                        *d = if v > *floor { *d / v } else { 0.0 };
                    });
                    acc(*x, dx);
                }
                Op::Affine { x, scale } => acc(*x, &dy * *scale),
                Op::MeanRows(a) => {
                    let n = val(*a).nrows();
                    let row = &dy / n as f64;
                    acc(*a, row.broadcast((n, dy.ncols())).expect("row").to_owned());
                }
                Op::Sum(a) => acc(*a, Array2::from_elem(val(*a).raw_dim(), dy[[0, 0]])),
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    acc(*bias, dy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(*gain, (&dy * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    let dxhat = &dy * val(*gain);
                    let c = dxhat.ncols() as f64;
                    let mut dx = Array2::zeros(dxhat.raw_dim());
                    for (i, mut row) in dx.rows_mut().into_iter().enumerate() {
                        let dh = dxhat.row(i);
                        let xh = xhat.row(i);
                        let sum_dh = dh.sum();
                        let sum_dhx = dh.dot(&xh);
                        let is = inv_std[i];
                        Zip::from(&mut row).and(&dh).and(&xh).for_each(|o, &d, &h| {
                            *o = is * (d - sum_dh / c - h * sum_dhx / c);
                        });
                    }
                    acc(*x, dx);
                }
                Op::GatherRows { x, idx } => {
                    let mut dx = Array2::zeros(val(*x).raw_dim());
                    for (k, &i) in idx.iter().enumerate() {
                        let mut r = dx.row_mut(i);
                        r += &dy.row(k);
                    }
                    acc(*x, dx);
                }
                Op::Reshape(a) => {
                    let shape = val(*a).raw_dim();
                    let flat: Vec<f64> = dy.iter().copied().collect();
                    acc(*a, Array2::from_shape_vec(shape, flat).expect("same length"));
                }
                Op::SumRowGroups { x, group } => {
                    let rows: Vec<usize> = (0..val(*x).nrows()).map(|r| r / group).collect();
                    acc(*x, dy.select(Axis(0), &rows));
                }
                Op::MaskScale { x, mask } => acc(*x, &dy * mask),
                Op::BlockDiag { blocks, h } => {
                    let vh = val(*h);
                    let mut dh = need(*h).then(|| Array2::zeros(vh.raw_dim()));
                    let (mut r0, mut c0) = (0, 0);
                    for &b in blocks {
                        let vb = val(b);
                        let (r, c) = vb.dim();
                        let dy_b = dy.slice(s![r0..r0 + r, ..]);
                        if let Some(dh) = dh.as_mut() {
                            dh.slice_mut(s![c0..c0 + c, ..]).assign(&vb.t().dot(&dy_b));
                        }
                        if need(b) {
                            acc(b, dy_b.dot(&vh.slice(s![c0..c0 + c, ..]).t()));
                        }
                        r0 += r;
                        c0 += c;
                    }
                    if let Some(dh) = dh {
                        acc(*h, dh);
                    }
                }
                Op::PairAttention { q, k, v, e, s, cache } => {
                    let g = pair_attention::backward(&dy, val(*q), val(*k), val(*v), val(*s), cache);
                    acc(*q, g.q);
                    acc(*k, g.k);
                    acc(*v, g.v);
                    acc(*e, g.e);
                    acc(*s, g.s);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    /// Gradient with respect to the leaf `v`, if the root depends on it.
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Moves the gradient of `v` out, leaving `None`.
    pub fn take(&mut self, v: Var) -> Option<Mat> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
