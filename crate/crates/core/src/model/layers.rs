//! Forward and backward kernels for one sequence at a time. Every forward
//! returns the activations its backward needs.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{Attention, FeedForward, LayerNorm, Linear};

pub const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

pub fn linear(l: &Linear, x: ArrayView2<f64>) -> Array2<f64> {
    x.dot(&l.w) + &l.b
}

/// Accumulates weight gradients into `g` and returns the input gradient.
pub fn linear_backward(l: &Linear, g: &mut Linear, x: ArrayView2<f64>, dy: ArrayView2<f64>) -> Array2<f64> {
    ndarray::linalg::general_mat_mul(1.0, &x.t(), &dy, 1.0, &mut g.w);
    g.b += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    dy.dot(&l.w.t())
}

pub struct NormCache {
    xhat: Array2<f64>,
    rstd: Vec<f64>,
}

pub fn layer_norm(n: &LayerNorm, x: ArrayView2<f64>) -> (Array2<f64>, NormCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.to_owned();
    let mut rstd = Vec::with_capacity(x.nrows());
    for mut row in xhat.rows_mut() {
        let mean = row.sum() / d;
        row -= mean;
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        let r = 1.0 / (var + LN_EPS).sqrt();
        row *= r;
        rstd.push(r);
    }
    let y = &xhat * &n.gain + &n.bias;
    (y, NormCache { xhat, rstd })
}

pub fn layer_norm_backward(n: &LayerNorm, g: &mut LayerNorm, cache: &NormCache, dy: ArrayView2<f64>) -> Array2<f64> {
    g.gain += &(&dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
    g.bias += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dxhat = &dy * &n.gain;
    let d = dy.ncols() as f64;
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let dh = dxhat.row(i);
        let xh = cache.xhat.row(i);
        let mean_dh = dh.sum() / d;
        let mean_dh_xh = dh.dot(&xh) / d;
        let r = cache.rstd[i];
        for j in 0..dh.len() {
            dx[[i, j]] = r * (dh[j] - mean_dh - xh[j] * mean_dh_xh);
        }
    }
    dx
}

fn gelu_tanh(x: f64) -> f64 {
    (GELU_C * (x + GELU_K * x * x * x)).tanh()
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + gelu_tanh(x))
}

/// Derivative of [`gelu`] given `t = tanh(c (x + k x^3))`.
fn gelu_grad_from(x: f64, t: f64) -> f64 {
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

pub fn gelu_grad(x: f64) -> f64 {
    gelu_grad_from(x, gelu_tanh(x))
}

pub struct FfCache {
    x: Array2<f64>,
    pre: Array2<f64>,
    tanh: Array2<f64>,
    act: Array2<f64>,
}

pub fn feed_forward(f: &FeedForward, x: ArrayView2<f64>) -> (Array2<f64>, FfCache) {
    let pre = linear(&f.up, x);
    let tanh = pre.mapv(gelu_tanh);
    let act = ndarray::Zip::from(&pre).and(&tanh).map_collect(|&x, &t| 0.5 * x * (1.0 + t));
    let y = linear(&f.down, act.view());
    (y, FfCache { x: x.to_owned(), pre, tanh, act })
}

pub fn feed_forward_backward(f: &FeedForward, g: &mut FeedForward, cache: &FfCache, dy: ArrayView2<f64>) -> Array2<f64> {
    let mut dpre = linear_backward(&f.down, &mut g.down, cache.act.view(), dy);
    ndarray::Zip::from(&mut dpre)
        .and(&cache.pre)
        .and(&cache.tanh)
        .for_each(|d, &x, &t| *d *= gelu_grad_from(x, t));
    linear_backward(&f.up, &mut g.up, cache.x.view(), dpre.view())
}

pub fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row /= sum;
    }
}

pub fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

/// Row ranges of one attention problem inside a packed batch: queries
/// `q0..q0+qn` attend over keys `k0..k0+kn`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub q0: usize,
    pub qn: usize,
    pub k0: usize,
    pub kn: usize,
}

pub struct AttnCache {
    xq: Array2<f64>,
    xkv: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    segments: Vec<Segment>,
    /// Per segment, per head.
    probs: Vec<Vec<Array2<f64>>>,
    n_heads: usize,
    concat: Array2<f64>,
}

/// Multi-head scaled dot-product attention of `xq` over `xkv`, independently
/// within each segment. With `causal`, query `i` of a segment sees keys
/// `0..=i` of that segment only.
pub fn attention(
    a: &Attention,
    xq: ArrayView2<f64>,
    xkv: ArrayView2<f64>,
    n_heads: usize,
    causal: bool,
    segments: &[Segment],
) -> (Array2<f64>, AttnCache) {
    let q = linear(&a.q, xq);
    let k = linear(&a.k, xkv);
    let v = linear(&a.v, xkv);
    let d = q.ncols();
    let dk = d / n_heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut concat = Array2::zeros((q.nrows(), d));
    let mut probs = Vec::with_capacity(segments.len());
    for seg in segments {
        let mut per_head = Vec::with_capacity(n_heads);
        for h in 0..n_heads {
            let (qs, ks) = (seg.q0..seg.q0 + seg.qn, seg.k0..seg.k0 + seg.kn);
            let cols = h * dk..(h + 1) * dk;
            let mut scores = q.slice(s![qs.clone(), cols.clone()]).dot(&k.slice(s![ks.clone(), cols.clone()]).t()) * scale;
            if causal {
                for i in 0..scores.nrows() {
                    for j in i + 1..scores.ncols() {
                        scores[[i, j]] = f64::NEG_INFINITY;
                    }
                }
            }
            softmax_rows(&mut scores);
            concat
                .slice_mut(s![qs, cols.clone()])
                .assign(&scores.dot(&v.slice(s![ks, cols])));
            per_head.push(scores);
        }
        probs.push(per_head);
    }
    let out = linear(&a.o, concat.view());
    let cache = AttnCache {
        xq: xq.to_owned(),
        xkv: xkv.to_owned(),
        q,
        k,
        v,
        segments: segments.to_vec(),
        probs,
        n_heads,
        concat,
    };
    (out, cache)
}

/// Returns (d xq, d xkv).
pub fn attention_backward(a: &Attention, g: &mut Attention, cache: &AttnCache, dy: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
    let dconcat = linear_backward(&a.o, &mut g.o, cache.concat.view(), dy);
    let d = cache.q.ncols();
    let dk = d / cache.n_heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut dq = Array2::zeros(cache.q.raw_dim());
    let mut dkm = Array2::zeros(cache.k.raw_dim());
    let mut dv = Array2::zeros(cache.v.raw_dim());
    for (seg, per_head) in cache.segments.iter().zip(&cache.probs) {
        let (qs, ks) = (seg.q0..seg.q0 + seg.qn, seg.k0..seg.k0 + seg.kn);
        for (h, p) in per_head.iter().enumerate() {
            let cols = h * dk..(h + 1) * dk;
            let dout = dconcat.slice(s![qs.clone(), cols.clone()]);
            let dp = dout.dot(&cache.v.slice(s![ks.clone(), cols.clone()]).t());
            let mut dvs = dv.slice_mut(s![ks.clone(), cols.clone()]);
            dvs += &p.t().dot(&dout);
            // softmax backward: ds = p * (dp - rowsum(dp * p))
            let mut ds = dp;
            for i in 0..ds.nrows() {
                let dot: f64 = ds.row(i).iter().zip(p.row(i)).map(|(a, b)| a * b).sum();
                for j in 0..ds.ncols() {
                    ds[[i, j]] = p[[i, j]] * (ds[[i, j]] - dot) * scale;
                }
            }
            let mut dqs = dq.slice_mut(s![qs.clone(), cols.clone()]);
            dqs += &ds.dot(&cache.k.slice(s![ks.clone(), cols.clone()]));
            let mut dks = dkm.slice_mut(s![ks.clone(), cols.clone()]);
            dks += &ds.t().dot(&cache.q.slice(s![qs.clone(), cols]));
        }
    }
    let dxq = linear_backward(&a.q, &mut g.q, cache.xq.view(), dq.view());
    let mut dxkv = linear_backward(&a.k, &mut g.k, cache.xkv.view(), dkm.view());
    dxkv += &linear_backward(&a.v, &mut g.v, cache.xkv.view(), dv.view());
    (dxq, dxkv)
}

/// Inverted dropout mask; `None` when inactive.
pub fn dropout_mask(rng: Option<&mut ChaCha8Rng>, rate: f64, shape: (usize, usize)) -> Option<Array2<f64>> {
    let rng = rng?;
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 - rate;
    Some(Array2::from_shape_fn(shape, |_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }))
}

pub fn apply_mask(x: Array2<f64>, mask: &Option<Array2<f64>>) -> Array2<f64> {
    match mask {
        Some(m) => x * m,
        None => x,
    }
}

pub fn apply_mask_grad(dy: ArrayView2<f64>, mask: &Option<Array2<f64>>) -> Array2<f64> {
    match mask {
        Some(m) => &dy * m,
        None => dy.to_owned(),
    }
}
