//! Fused kernel for one head of attention over pair features.
//!
//! Rows of `q`, `k`, `v` hold the nodes of several graphs back to back. For a
//! graph of `m` nodes, pair `(i, j)` sits at row `i·m + j` of that graph's
//! block of the pair matrix `E`; blocks are stacked in the same order.
//! Within each graph:
//!
//! ```text
//! e_ij    = relu(q_i ⊙ k_j + E_ij)
//! α_i     = softmax_j(e_ij · s)
//! w_ij    = α_ij · mask_ij
//! out_i   = Σ_j w_ij (v_j + e_ij)
//! ```
//!
//! Done as one op, the pair intermediates are written once instead of being
//! allocated by a dozen small tape ops per head.

use std::borrow::Cow;

use ndarray::Array2;

use super::Mat;

#[derive(Debug)]
pub(super) struct Cache {
    pub sizes: Vec<usize>,
    pub edge: Mat,
    /// Attention weights, each graph's `m × m` block flattened in turn.
    pub alpha: Vec<f64>,
    pub mask: Option<Vec<f64>>,
}

fn slice(a: &Mat) -> &[f64] {
    a.as_slice().expect("standard layout")
}

fn standard(a: &Mat) -> Cow<'_, Mat> {
    if a.is_standard_layout() {
        Cow::Borrowed(a)
    } else {
        Cow::Owned(a.as_standard_layout().into_owned())
    }
}

pub(super) fn forward(
    q: &Mat,
    k: &Mat,
    v: &Mat,
    e: &Mat,
    s: &Mat,
    sizes: &[usize],
    mask: Option<Vec<f64>>,
) -> (Mat, Cache) {
    let (n, d) = q.dim();
    let pairs = e.nrows();
    let (q, k, v, e, s) = (standard(q), standard(k), standard(v), standard(e), standard(s));
    let (qs, ks, vs, es, ss) = (slice(&q), slice(&k), slice(&v), slice(&e), slice(&s));
    let mut edge = Array2::zeros((pairs, d));
    let mut alpha = vec![0.0; pairs];
    let mut out = Array2::zeros((n, d));
    let eo = edge.as_slice_mut().expect("fresh");
    let o = out.as_slice_mut().expect("fresh");
    let (mut node0, mut pair0) = (0, 0);
    for &m in sizes {
        for i in 0..m {
            let qi = &qs[(node0 + i) * d..][..d];
            let row0 = pair0 + i * m;
            for j in 0..m {
                let r = row0 + j;
                let kj = &ks[(node0 + j) * d..][..d];
                let er = &es[r * d..][..d];
                let out = &mut eo[r * d..][..d];
                let mut score = 0.0;
                for c in 0..d {
                    let x = (qi[c] * kj[c] + er[c]).max(0.0);
                    out[c] = x;
                    score += x * ss[c];
                }
                alpha[r] = score;
            }
            let row = &mut alpha[row0..row0 + m];
            let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total += *x;
            }
            for x in row.iter_mut() {
                *x /= total;
            }
            let oi = &mut o[(node0 + i) * d..][..d];
            for j in 0..m {
                let r = row0 + j;
                let w = alpha[r] * mask.as_ref().map_or(1.0, |mk| mk[r]);
                let vj = &vs[(node0 + j) * d..][..d];
                let er = &eo[r * d..][..d];
                for c in 0..d {
                    oi[c] += w * (vj[c] + er[c]);
                }
            }
        }
        node0 += m;
        pair0 += m * m;
    }
    let cache = Cache {
        sizes: sizes.to_vec(),
        edge,
        alpha,
        mask,
    };
    (out, cache)
}

pub(super) struct Grads {
    pub q: Mat,
    pub k: Mat,
    pub v: Mat,
    pub e: Mat,
    pub s: Mat,
}

pub(super) fn backward(dy: &Mat, q: &Mat, k: &Mat, v: &Mat, s: &Mat, cache: &Cache) -> Grads {
    let (n, d) = q.dim();
    let (dy, q, k, v, s) = (standard(dy), standard(q), standard(k), standard(v), standard(s));
    let dys = slice(&dy);
    let (qs, ks, vs, ss) = (slice(&q), slice(&k), slice(&v), slice(&s));
    let (eo, ao) = (slice(&cache.edge), &cache.alpha);
    let mask = cache.mask.as_deref();
    let mut dq = Array2::<f64>::zeros((n, d));
    let mut dk = Array2::<f64>::zeros((n, d));
    let mut dv = Array2::<f64>::zeros((n, d));
    let mut de = Array2::<f64>::zeros((ao.len(), d));
    let mut ds = Array2::<f64>::zeros((d, 1));
    let dqs = dq.as_slice_mut().expect("fresh");
    let dks = dk.as_slice_mut().expect("fresh");
    let dvs = dv.as_slice_mut().expect("fresh");
    let des = de.as_slice_mut().expect("fresh");
    let dss = ds.as_slice_mut().expect("fresh");
    let mut dalpha = Vec::new();
    let (mut node0, mut pair0) = (0, 0);
    for &m in &cache.sizes {
        dalpha.resize(m, 0.0);
        for i in 0..m {
            let gi = &dys[(node0 + i) * d..][..d];
            let row0 = pair0 + i * m;
            // through out_i = Σ_j w_ij (v_j + e_ij)
            for j in 0..m {
                let r = row0 + j;
                let mk = mask.map_or(1.0, |mk| mk[r]);
                let w = ao[r] * mk;
                let vj = &vs[(node0 + j) * d..][..d];
                let er = &eo[r * d..][..d];
                let dvj = &mut dvs[(node0 + j) * d..][..d];
                let der = &mut des[r * d..][..d];
                let mut dw = 0.0;
                for c in 0..d {
                    dw += gi[c] * (vj[c] + er[c]);
                    dvj[c] += w * gi[c];
                    der[c] = w * gi[c];
                }
                dalpha[j] = dw * mk;
            }
            // softmax, then the score dot product and the relu
            let ai = &ao[row0..row0 + m];
            let dot: f64 = ai.iter().zip(&dalpha).map(|(a, g)| a * g).sum();
            let qi = &qs[(node0 + i) * d..][..d];
            for j in 0..m {
                let r = row0 + j;
                let dscore = ai[j] * (dalpha[j] - dot);
                let er = &eo[r * d..][..d];
                let der = &mut des[r * d..][..d];
                for c in 0..d {
                    dss[c] += dscore * er[c];
                    if er[c] > 0.0 {
                        der[c] += dscore * ss[c];
                    } else {
                        der[c] = 0.0;
                    }
                }
                let kj = &ks[(node0 + j) * d..][..d];
                let dqi = &mut dqs[(node0 + i) * d..][..d];
                for c in 0..d {
                    dqi[c] += der[c] * kj[c];
                }
                let dkj = &mut dks[(node0 + j) * d..][..d];
                for c in 0..d {
                    dkj[c] += der[c] * qi[c];
                }
            }
        }
        node0 += m;
        pair0 += m * m;
    }
    Grads { q: dq, k: dk, v: dv, e: de, s: ds }
}
