//! Local spectral branch and the final fusion / classification head.
//!
//! A fixed Beta-wavelet bank supplies band-pass views of the node features,
//! and `K` stacked low/high-pass layers learn their own mixtures. Both are
//! averaged over nodes into one graph vector.

use ndarray::{concatenate, Array2, Axis};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AutodiffError, Mat, ParamId, ParamStore, Tape, Var};
use crate::dataset::Graph;
use crate::spectral::{self, SpectralError};
use crate::transformer::glorot;

type Result<T> = std::result::Result<T, AutodiffError>;

/// Precomputed, parameter-free inputs of the local branch for one graph.
#[derive(Debug, Clone)]
pub struct LocalInput {
    pub x: Mat,
    /// Bank outputs `m = 0 … M` concatenated column-wise, `n × (M+1)d`.
    pub bank: Mat,
    /// `(ψ+1)I − L`.
    pub low: Mat,
    /// `(ψ−1)I + L`.
    pub high: Mat,
}

impl LocalInput {
    pub fn prepare(g: &Graph, order: usize, psi: f64) -> std::result::Result<Self, SpectralError> {
        let l = spectral::normalized_laplacian(g);
        let outs = spectral::beta_bank(&l, order, &g.x)?;
        let views: Vec<_> = outs.iter().map(|m| m.view()).collect();
        let bank = concatenate(Axis(1), &views).expect("bank outputs share a row count");
        let eye = Array2::<f64>::eye(g.n());
        Ok(LocalInput {
            x: g.x.clone(),
            bank,
            low: &eye * (psi + 1.0) - &l,
            high: &eye * (psi - 1.0) + &l,
        })
    }
}

#[derive(Debug, Clone)]
pub struct LocalParams {
    pub bank_w: ParamId,
    pub bank_b: ParamId,
    pub layers: Vec<(ParamId, ParamId)>,
    pub combine_w: ParamId,
    pub combine_b: ParamId,
}

#[derive(Debug, Clone)]
pub struct HeadParams {
    pub fuse_w: ParamId,
    pub fuse_b: ParamId,
    pub norm_gain: ParamId,
    pub norm_bias: ParamId,
    pub hidden_w: ParamId,
    pub hidden_b: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct LocalShape {
    pub in_dim: usize,
    pub hidden: usize,
    pub order: usize,
    pub layers: usize,
}

impl LocalParams {
    pub fn init(store: &mut ParamStore, s: LocalShape, rng: &mut ChaCha8Rng) -> Self {
        let h = s.hidden;
        let bank_w = store.add("local.bank.w", glorot(rng, (s.order + 1) * s.in_dim, h));
        let bank_b = store.add("local.bank.b", Array2::zeros((1, h)));
        let layers = (0..s.layers)
            .map(|k| {
                let fan_in = if k == 0 { 2 * s.in_dim } else { 2 * h };
                (
                    store.add(format!("local.layer{k}.w"), glorot(rng, fan_in, h)),
                    store.add(format!("local.layer{k}.b"), Array2::zeros((1, h))),
                )
            })
            .collect();
        LocalParams {
            bank_w,
            bank_b,
            layers,
            combine_w: store.add("local.combine.w", glorot(rng, s.layers * h, h)),
            combine_b: store.add("local.combine.b", Array2::zeros((1, h))),
        }
    }
}

impl HeadParams {
    /// `fused_in` is the width of `[H_gt, H_loc]`.
    pub fn init(store: &mut ParamStore, fused_in: usize, out: usize, rng: &mut ChaCha8Rng) -> Self {
        HeadParams {
            fuse_w: store.add("head.fuse.w", glorot(rng, fused_in, out)),
            fuse_b: store.add("head.fuse.b", Array2::zeros((1, out))),
            norm_gain: store.add("head.norm.gain", Array2::ones((1, out))),
            norm_bias: store.add("head.norm.bias", Array2::zeros((1, out))),
            hidden_w: store.add("head.hidden.w", glorot(rng, out, out)),
            hidden_b: store.add("head.hidden.b", Array2::zeros((1, out))),
            // zero so training starts at p = 0.5 rather than a saturated sigmoid
            out_w: store.add("head.out.w", Array2::zeros((out, 1))),
            out_b: store.add("head.out.b", Array2::zeros((1, 1))),
        }
    }
}

/// Linear map of the concatenated bank outputs.
pub fn band_pass_embed(t: &Tape, bank: Var, w: Var, b: Var) -> Result<Var> {
    t.add_row(t.matmul(bank, w)?, b)
}

/// `relu([F_L h, F_H h] W + b)`, with one filter block per graph.
pub fn lowhigh_layer(t: &Tape, h: Var, low: &[Var], high: &[Var], w: Var, b: Var) -> Result<Var> {
    let cat = t.concat_cols(&[t.block_diag_matmul(low, h)?, t.block_diag_matmul(high, h)?])?;
    t.relu(t.add_row(t.matmul(cat, w)?, b)?)
}

pub fn combine_layers(t: &Tape, layers: &[Var], w: Var, b: Var) -> Result<Var> {
    if layers.is_empty() {
        return Err(AutodiffError::Contract {
            op: "combine_layers",
            msg: "needs at least one layer".into(),
        });
    }
    t.add_row(t.matmul(t.concat_cols(layers)?, w)?, b)
}

/// Per-graph node mean of `[h_b, h_p]`, for graphs of `sizes` nodes stacked
/// row-wise.
pub fn local_readout(t: &Tape, h_b: Var, h_p: Var, sizes: &[usize]) -> Result<Var> {
    if sizes.contains(&0) {
        return Err(AutodiffError::Contract {
            op: "local_readout",
            msg: "graph has no nodes".into(),
        });
    }
    let means: Vec<Var> = sizes
        .iter()
        .map(|&n| t.constant(Array2::from_elem((1, n), 1.0 / n as f64)))
        .collect();
    t.block_diag_matmul(&means, t.concat_cols(&[h_b, h_p])?)
}

/// `[H_gt, H_loc] W + b`. Left linear: a relu here, fed by the nonnegative
/// `H_gt`, can switch off every unit after a few Adam steps.
pub fn fuse(t: &Tape, h_gt: Var, h_loc: Var, w: Var, b: Var) -> Result<Var> {
    t.add_row(t.matmul(t.concat_cols(&[h_gt, h_loc])?, w)?, b)
}

/// Layer norm, then a two-layer classifier; returns `(logit, probability)`.
/// The norm caps how fast the logit can grow: without it Adam inflates
/// `H_gt` until every prediction saturates, where the bounded loss has no
/// gradient left.
pub fn classify(t: &Tape, h_g: Var, norm: (Var, Var), hidden: (Var, Var), out: (Var, Var)) -> Result<(Var, Var)> {
    let h = t.layer_norm(h_g, norm.0, norm.1)?;
    let z = t.relu(t.add_row(t.matmul(h, hidden.0)?, hidden.1)?)?;
    let logit = t.add_row(t.matmul(z, out.0)?, out.1)?;
    Ok((logit, t.sigmoid(logit)?))
}

/// Local branch for a batch of graphs; returns `H_loc`, one `2·hidden` row
/// per graph.
pub fn forward<'t>(t: &Tape<'t>, params: &LocalParams, vars: &[Var], inputs: &[&'t LocalInput]) -> Result<Var> {
    let p = |id: ParamId| vars[id.index()];
    let refs = |f: fn(&'t LocalInput) -> &'t Mat| -> Vec<Var> { inputs.iter().map(|i| t.constant_ref(f(i))).collect() };
    let h_b = band_pass_embed(t, t.concat_rows(&refs(|i| &i.bank))?, p(params.bank_w), p(params.bank_b))?;
    let low = refs(|i| &i.low);
    let high = refs(|i| &i.high);
    let mut h = t.concat_rows(&refs(|i| &i.x))?;
    let mut outs = Vec::with_capacity(params.layers.len());
    for &(w, b) in &params.layers {
        h = lowhigh_layer(t, h, &low, &high, p(w), p(b))?;
        outs.push(h);
    }
    let h_p = combine_layers(t, &outs, p(params.combine_w), p(params.combine_b))?;
    let sizes: Vec<usize> = inputs.iter().map(|i| i.x.nrows()).collect();
    local_readout(t, h_b, h_p, &sizes)
}
