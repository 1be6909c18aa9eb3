//! Spectrum-enhanced graph transformer branch.
//!
//! Each graph gains a supernode wired to every node. Node states are embedded
//! by a one-layer MLP, rescaled by degree, and refined by `L` attention
//! layers whose pairwise scores are driven by random-walk encodings. The
//! supernode's state after every layer is combined into a graph vector, which
//! is then enriched with the graph's per-feature Rayleigh quotients.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AutodiffError, Mat, ParamId, ParamStore, Tape, Var};
use crate::dataset::{Graph, Label};
use crate::spectral;

type Result<T> = std::result::Result<T, AutodiffError>;

/// A graph with its supernode appended as the last node.
#[derive(Debug, Clone)]
pub struct AugmentedGraph {
    /// Node count of the base graph; the supernode has this index.
    pub n_base: usize,
    pub adjacency: Mat,
    pub degrees: Vec<usize>,
    /// `(n+1) × (n+1) × T` random-walk powers of the augmented graph.
    pub rrwp: Array3<f64>,
}

impl AugmentedGraph {
    pub fn supernode(&self) -> usize {
        self.n_base
    }

    pub fn order(&self) -> usize {
        self.n_base + 1
    }
}

pub fn add_supernode(g: &Graph, steps: usize) -> std::result::Result<AugmentedGraph, spectral::SpectralError> {
    let n = g.n();
    let edges = g.edges().iter().copied().chain((0..n).map(|i| (i, n)));
    let aug = Graph::new(g.id, n + 1, edges, Array2::zeros((n + 1, 1)), Label::Normal)
        .expect("supernode edges are valid");
    Ok(AugmentedGraph {
        n_base: n,
        adjacency: aug.adjacency(),
        degrees: aug.degrees(),
        rrwp: spectral::rrwp(&aug, steps)?,
    })
}

#[derive(Debug, Clone)]
pub struct HeadParams {
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
    pub edge: ParamId,
    pub score: ParamId,
}

#[derive(Debug, Clone)]
pub struct LayerParams {
    pub heads: Vec<HeadParams>,
    pub out_w: ParamId,
    pub out_b: ParamId,
    pub norm1_gain: ParamId,
    pub norm1_bias: ParamId,
    pub ffn_w1: ParamId,
    pub ffn_b1: ParamId,
    pub ffn_w2: ParamId,
    pub ffn_b2: ParamId,
    pub norm2_gain: ParamId,
    pub norm2_bias: ParamId,
}

/// Parameter handles of the transformer branch.
#[derive(Debug, Clone)]
pub struct GtParams {
    pub embed_w: ParamId,
    pub embed_b: ParamId,
    pub theta1: ParamId,
    pub theta2: ParamId,
    pub supernode: ParamId,
    pub layers: Vec<LayerParams>,
    pub combine_w: ParamId,
    pub combine_b: ParamId,
    pub rq_w: ParamId,
    pub rq_b: ParamId,
    pub enhance_w: ParamId,
    pub enhance_b: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct GtShape {
    pub in_dim: usize,
    pub hidden: usize,
    pub heads: usize,
    pub layers: usize,
    pub steps: usize,
    pub ffn_hidden: usize,
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..=bound))
}

impl GtParams {
    pub fn init(store: &mut ParamStore, s: GtShape, rng: &mut ChaCha8Rng) -> Self {
        assert!(s.heads > 0 && s.hidden % s.heads == 0, "heads must divide the hidden width");
        let dh = s.hidden / s.heads;
        let h = s.hidden;
        let embed_w = store.add("gt.embed.w", glorot(rng, s.in_dim, h));
        let embed_b = store.add("gt.embed.b", Array2::zeros((1, h)));
        let theta1 = store.add("gt.degree.theta1", Array2::ones((1, h)));
        let theta2 = store.add("gt.degree.theta2", Array2::zeros((1, h)));
        let supernode = store.add("gt.supernode", glorot(rng, 1, s.in_dim));
        let layers = (0..s.layers)
            .map(|l| {
                let heads = (0..s.heads)
                    .map(|k| {
                        let p = format!("gt.layer{l}.head{k}");
                        HeadParams {
                            query: store.add(format!("{p}.query"), glorot(rng, h, dh)),
                            key: store.add(format!("{p}.key"), glorot(rng, h, dh)),
                            value: store.add(format!("{p}.value"), glorot(rng, h, dh)),
                            edge: store.add(format!("{p}.edge"), glorot(rng, s.steps, dh)),
                            score: store.add(format!("{p}.score"), glorot(rng, dh, 1)),
                        }
                    })
                    .collect();
                let p = format!("gt.layer{l}");
                LayerParams {
                    heads,
                    out_w: store.add(format!("{p}.out.w"), glorot(rng, h, h)),
                    out_b: store.add(format!("{p}.out.b"), Array2::zeros((1, h))),
                    norm1_gain: store.add(format!("{p}.norm1.gain"), Array2::ones((1, h))),
                    norm1_bias: store.add(format!("{p}.norm1.bias"), Array2::zeros((1, h))),
                    ffn_w1: store.add(format!("{p}.ffn.w1"), glorot(rng, h, s.ffn_hidden)),
                    ffn_b1: store.add(format!("{p}.ffn.b1"), Array2::zeros((1, s.ffn_hidden))),
                    ffn_w2: store.add(format!("{p}.ffn.w2"), glorot(rng, s.ffn_hidden, h)),
                    ffn_b2: store.add(format!("{p}.ffn.b2"), Array2::zeros((1, h))),
                    norm2_gain: store.add(format!("{p}.norm2.gain"), Array2::ones((1, h))),
                    norm2_bias: store.add(format!("{p}.norm2.bias"), Array2::zeros((1, h))),
                }
            })
            .collect();
        GtParams {
            embed_w,
            embed_b,
            theta1,
            theta2,
            supernode,
            layers,
            combine_w: store.add("gt.combine.w", glorot(rng, s.layers * h, h)),
            combine_b: store.add("gt.combine.b", Array2::zeros((1, h))),
            rq_w: store.add("gt.rayleigh.w", glorot(rng, s.in_dim, h)),
            rq_b: store.add("gt.rayleigh.b", Array2::zeros((1, h))),
            enhance_w: store.add("gt.enhance.w", glorot(rng, 2 * h, h)),
            enhance_b: store.add("gt.enhance.b", Array2::zeros((1, h))),
        }
    }
}

/// Precomputed, parameter-free inputs of the transformer branch for one graph.
#[derive(Debug, Clone)]
pub struct GtInput {
    pub x: Mat,
    /// `log(1 + deg)` on the augmented graph, as an `(n+1) × 1` column.
    pub log_degree: Mat,
    /// Pair features, `(n+1)² × T`, pair `(i, j)` at row `i·(n+1) + j`.
    pub pairs: Mat,
    /// Rayleigh quotients of the base graph, `1 × d`.
    pub rayleigh: Mat,
    pub order: usize,
}

impl GtInput {
    pub fn prepare(g: &Graph, steps: usize) -> std::result::Result<Self, spectral::SpectralError> {
        let aug = add_supernode(g, steps)?;
        let m = aug.order();
        let log_degree = Array2::from_shape_fn((m, 1), |(i, _)| (1.0 + aug.degrees[i] as f64).ln());
        let rayleigh = spectral::rayleigh_vector(&g.x, &spectral::normalized_laplacian(g));
        Ok(GtInput {
            x: g.x.clone(),
            log_degree,
            pairs: spectral::pair_rows(&aug.rrwp),
            rayleigh: rayleigh.insert_axis(ndarray::Axis(0)),
            order: m,
        })
    }
}

/// Per-pass dropout on attention weights. `None` disables it.
#[derive(Debug)]
pub struct Dropout {
    pub rate: f64,
    pub rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Self {
        Dropout {
            rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn mask(&mut self, rows: usize, cols: usize) -> Mat {
        let keep = 1.0 - self.rate;
        Array2::from_shape_fn((rows, cols), |_| {
            if self.rng.gen_bool(keep) {
                1.0 / keep
            } else {
                0.0
            }
        })
    }
}

/// `φ(W x + b)` with `φ = relu`, applied to every row.
pub fn init_embed(t: &Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    t.relu(t.add_row(t.matmul(x, w)?, b)?)
}

/// `h ⊙ θ₁ + log(1 + deg) · (h ⊙ θ₂)`.
pub fn degree_scale(t: &Tape, h: Var, log_degree: Var, theta1: Var, theta2: Var) -> Result<Var> {
    let a = t.mul_row(h, theta1)?;
    let b = t.mul_col(t.mul_row(h, theta2)?, log_degree)?;
    t.add(a, b)
}

pub struct HeadVars {
    pub query: Var,
    pub key: Var,
    pub value: Var,
    pub edge: Var,
    pub score: Var,
}

/// Attention matrices of one head, one `m × m` block per graph.
pub type HeadAttention = Vec<Mat>;

/// Masks for every graph in the batch, or `None` when dropout is off.
fn masks(dropout: Option<&mut [Dropout]>, sizes: &[usize]) -> Option<Vec<Mat>> {
    let ds = dropout?;
    if ds.iter().all(|d| d.rate <= 0.0) {
        return None;
    }
    Some(ds.iter_mut().zip(sizes).map(|(d, &m)| d.mask(m, m)).collect())
}

/// One attention head over graphs stacked row-wise (`sizes` node counts).
/// Returns the head output (`n × d_h`) and each graph's attention matrix.
pub fn attention_head(
    t: &Tape,
    g: Var,
    pairs: Var,
    sizes: &[usize],
    hv: &HeadVars,
    dropout: Option<&mut [Dropout]>,
) -> Result<(Var, HeadAttention)> {
    let q = t.matmul(g, hv.query)?;
    let k = t.matmul(g, hv.key)?;
    let v = t.matmul(g, hv.value)?;
    let e = t.matmul(pairs, hv.edge)?;
    t.pair_attention([q, k, v, e, hv.score], sizes, masks(dropout, sizes))
}

pub struct LayerOutput {
    pub states: Var,
    pub attention: Vec<HeadAttention>,
}

/// Multi-head attention followed by the projection back to model width.
pub fn rrwp_mha(
    t: &Tape,
    g: Var,
    pairs: Var,
    sizes: &[usize],
    lp: &LayerParams,
    vars: &[Var],
    mut dropout: Option<&mut [Dropout]>,
) -> Result<(Var, Vec<HeadAttention>)> {
    let mut outs = Vec::with_capacity(lp.heads.len());
    let mut attention = Vec::with_capacity(lp.heads.len());
    for hp in &lp.heads {
        let hv = HeadVars {
            query: vars[hp.query.index()],
            key: vars[hp.key.index()],
            value: vars[hp.value.index()],
            edge: vars[hp.edge.index()],
            score: vars[hp.score.index()],
        };
        let (o, a) = attention_head(t, g, pairs, sizes, &hv, dropout.as_deref_mut())?;
        outs.push(o);
        attention.push(a);
    }
    let cat = t.concat_cols(&outs)?;
    let proj = t.add_row(t.matmul(cat, vars[lp.out_w.index()])?, vars[lp.out_b.index()])?;
    Ok((proj, attention))
}

/// `G' = Norm(MHA(G) + G)`, then `Norm(FFN(G')) + G'`.
pub fn gt_layer(
    t: &Tape,
    g: Var,
    pairs: Var,
    sizes: &[usize],
    lp: &LayerParams,
    vars: &[Var],
    dropout: Option<&mut [Dropout]>,
) -> Result<LayerOutput> {
    let p = |id: ParamId| vars[id.index()];
    let (mha, attention) = rrwp_mha(t, g, pairs, sizes, lp, vars, dropout)?;
    let mid = t.layer_norm(t.add(mha, g)?, p(lp.norm1_gain), p(lp.norm1_bias))?;
    let hidden = t.relu(t.add_row(t.matmul(mid, p(lp.ffn_w1))?, p(lp.ffn_b1))?)?;
    let ffn = t.add_row(t.matmul(hidden, p(lp.ffn_w2))?, p(lp.ffn_b2))?;
    let normed = t.layer_norm(ffn, p(lp.norm2_gain), p(lp.norm2_bias))?;
    Ok(LayerOutput {
        states: t.add(normed, mid)?,
        attention,
    })
}

/// Concatenates the supernode's per-layer states and projects to model width.
pub fn combine_supernode(t: &Tape, per_layer: &[Var], w: Var, b: Var) -> Result<Var> {
    if per_layer.is_empty() {
        return Err(AutodiffError::Contract {
            op: "combine_supernode",
            msg: "needs at least one layer".into(),
        });
    }
    t.add_row(t.matmul(t.concat_cols(per_layer)?, w)?, b)
}

/// `H_rq = MLP(rayleigh)`, `H_gt = MLP([H_sup, H_rq])`.
pub fn spectrum_enhance(
    t: &Tape,
    h_sup: Var,
    rayleigh: Var,
    rq: (Var, Var),
    enhance: (Var, Var),
) -> Result<Var> {
    let h_rq = t.relu(t.add_row(t.matmul(rayleigh, rq.0)?, rq.1)?)?;
    let cat = t.concat_cols(&[h_sup, h_rq])?;
    t.relu(t.add_row(t.matmul(cat, enhance.0)?, enhance.1)?)
}

/// One row per graph, in batch order.
pub struct GtOutput {
    pub h_gt: Var,
    pub h_sup: Var,
    /// Indexed by `layer · heads + head`.
    pub attention: Vec<HeadAttention>,
}

/// Transformer branch for a batch of graphs. Node rows of all graphs are
/// stacked, so every dense layer runs as one product; only attention looks
/// inside graph boundaries. `dropout`, when given, holds one stream per graph.
pub fn forward<'t>(
    t: &Tape<'t>,
    params: &GtParams,
    vars: &[Var],
    inputs: &[&'t GtInput],
    mut dropout: Option<&mut [Dropout]>,
) -> Result<GtOutput> {
    let p = |id: ParamId| vars[id.index()];
    let sizes: Vec<usize> = inputs.iter().map(|i| i.order).collect();
    let stacked = |f: fn(&'t GtInput) -> &'t Mat| -> Result<Var> {
        let parts: Vec<Var> = inputs.iter().map(|i| t.constant_ref(f(i))).collect();
        t.concat_rows(&parts)
    };
    let rows: Vec<Var> = inputs
        .iter()
        .flat_map(|i| [t.constant_ref(&i.x), p(params.supernode)])
        .collect();
    let x_aug = t.concat_rows(&rows)?;
    let h = init_embed(t, x_aug, p(params.embed_w), p(params.embed_b))?;
    let log_degree = stacked(|i| &i.log_degree)?;
    let mut g = degree_scale(t, h, log_degree, p(params.theta1), p(params.theta2))?;
    let pairs = stacked(|i| &i.pairs)?;
    let sup: Vec<usize> = sizes
        .iter()
        .scan(0, |end, &m| {
            *end += m;
            Some(*end - 1)
        })
        .collect();
    let mut sup_states = Vec::with_capacity(params.layers.len());
    let mut attention = Vec::new();
    for lp in &params.layers {
        let out = gt_layer(t, g, pairs, &sizes, lp, vars, dropout.as_deref_mut())?;
        g = out.states;
        attention.extend(out.attention);
        sup_states.push(t.gather_rows(g, &sup)?);
    }
    let h_sup = combine_supernode(t, &sup_states, p(params.combine_w), p(params.combine_b))?;
    let rayleigh = stacked(|i| &i.rayleigh)?;
    let h_gt = spectrum_enhance(
        t,
        h_sup,
        rayleigh,
        (p(params.rq_w), p(params.rq_b)),
        (p(params.enhance_w), p(params.enhance_b)),
    )?;
    Ok(GtOutput { h_gt, h_sup, attention })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Axis};

    fn graph(n: usize, edges: &[(usize, usize)], x: Mat) -> Graph {
        Graph::new(0, n, edges.iter().copied(), x, Label::Normal).unwrap()
    }

    #[test]
    fn supernode_wiring() {
        let g = graph(2, &[(0, 1)], Array2::ones((2, 1)));
        let a = add_supernode(&g, 3).unwrap();
        assert_eq!(a.order(), 3);
        assert_eq!(a.degrees[a.supernode()], 2);
        assert_eq!(a.adjacency.slice(ndarray::s![..2, ..2]), g.adjacency());

        let e = add_supernode(&graph(3, &[], Array2::ones((3, 1))), 2).unwrap();
        let step = e.rrwp.index_axis(Axis(2), 1);
        for (got, want) in step.row(3).iter().zip([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0]) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn embed_and_degree_scale_cases() {
        let t = Tape::new();
        let x = t.constant(array![[1.0, 2.0], [0.0, 3.0]]);
        let w = t.constant(Array2::eye(2));
        let b0 = t.constant(Array2::zeros((1, 2)));
        assert_eq!(*t.value(init_embed(&t, x, w, b0).unwrap()), array![[1.0, 2.0], [0.0, 3.0]]);

        let zero = t.constant(Array2::zeros((2, 2)));
        let b = t.constant(array![[-1.0, 0.5]]);
        assert_eq!(*t.value(init_embed(&t, zero, w, b).unwrap()), array![[0.0, 0.5], [0.0, 0.5]]);

        let h = t.constant(array![[1.0, -2.0]]);
        let ones = t.constant(array![[1.0, 1.0]]);
        let zeros = t.constant(array![[0.0, 0.0]]);
        let e_deg = t.constant(array![[1.0]]); // log(1 + (e − 1)) = 1
        assert_eq!(*t.value(degree_scale(&t, h, e_deg, ones, ones).unwrap()), array![[2.0, -4.0]]);
        let no_deg = t.constant(array![[0.0]]);
        assert_eq!(*t.value(degree_scale(&t, h, no_deg, ones, ones).unwrap()), array![[1.0, -2.0]]);
        assert_eq!(*t.value(degree_scale(&t, h, e_deg, ones, zeros).unwrap()), array![[1.0, -2.0]]);
    }

    #[test]
    fn equal_scores_give_uniform_attention() {
        // zero query/key/score weights make every pair score identical
        let g = graph(3, &[(0, 1), (1, 2)], Array2::ones((3, 2)));
        let input = GtInput::prepare(&g, 4).unwrap();
        let t = Tape::new();
        let states = t.constant(Array2::from_elem((4, 4), 0.3));
        let pairs = t.constant_ref(&input.pairs);
        let hv = HeadVars {
            query: t.constant(Array2::zeros((4, 2))),
            key: t.constant(Array2::zeros((4, 2))),
            value: t.constant(Array2::ones((4, 2))),
            edge: t.constant(Array2::ones((4, 2))),
            score: t.constant(Array2::zeros((2, 1))),
        };
        let (_, alpha) = attention_head(&t, states, pairs, &[input.order], &hv, None).unwrap();
        assert!(alpha[0].iter().all(|&a| (a - 0.25).abs() < 1e-15));
    }

    #[test]
    fn single_node_graph_attention_sums_to_one() {
        let g = graph(1, &[], array![[0.4, -1.0]]);
        let input = GtInput::prepare(&g, 3).unwrap();
        assert_eq!(input.order, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = Tape::new();
        let states = t.constant(glorot(&mut rng, 2, 4));
        let pairs = t.constant_ref(&input.pairs);
        let hv = HeadVars {
            query: t.constant(glorot(&mut rng, 4, 2)),
            key: t.constant(glorot(&mut rng, 4, 2)),
            value: t.constant(glorot(&mut rng, 4, 2)),
            edge: t.constant(glorot(&mut rng, 3, 2)),
            score: t.constant(glorot(&mut rng, 2, 1)),
        };
        let (_, alpha) = attention_head(&t, states, pairs, &[input.order], &hv, None).unwrap();
        for row in alpha[0].rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn combine_width_and_single_layer() {
        let t = Tape::new();
        let s1 = t.constant(array![[1.0, 2.0]]);
        let w = t.constant(Array2::eye(2));
        let b = t.constant(Array2::zeros((1, 2)));
        assert_eq!(*t.value(combine_supernode(&t, &[s1], w, b).unwrap()), array![[1.0, 2.0]]);
        let w2 = t.constant(Array2::ones((6, 2)));
        let out = combine_supernode(&t, &[s1, s1, s1], w2, b).unwrap();
        assert_eq!(*t.value(out), array![[9.0, 9.0]]);
        assert!(combine_supernode(&t, &[], w, b).is_err());
        assert!(combine_supernode(&t, &[s1, s1], w, b).is_err());
    }

    #[test]
    fn zero_rayleigh_path_is_inert() {
        let t = Tape::new();
        let h_sup = t.constant(array![[0.5, -0.25]]);
        let r = t.constant(Array2::zeros((1, 3)));
        let rq = (t.constant(Array2::ones((3, 2))), t.constant(Array2::zeros((1, 2))));
        let enh_w = t.constant(array![[1.0, 0.0], [0.0, 1.0], [7.0, 7.0], [7.0, 7.0]]);
        let enh = (enh_w, t.constant(Array2::zeros((1, 2))));
        let out = spectrum_enhance(&t, h_sup, r, rq, enh).unwrap();
        assert_eq!(*t.value(out), array![[0.5, 0.0]]);
    }

    #[test]
    fn rayleigh_inputs_distinguish_high_frequency_flip() {
        let edges = [(0, 1), (1, 2), (2, 3)];
        let smooth = graph(4, &edges, array![[1.0], [1.0], [1.0], [1.0]]);
        let flipped = graph(4, &edges, array![[1.0], [-1.0], [1.0], [-1.0]]);
        let a = GtInput::prepare(&smooth, 2).unwrap().rayleigh;
        let b = GtInput::prepare(&flipped, 2).unwrap().rayleigh;
        assert!(b[[0, 0]] > a[[0, 0]] + 0.5, "{a} vs {b}");
    }
}
