//! Single-block causal self-attention encoder over a user's item history.
//!
//! Layout per position `t` (pre-normalization, one head):
//!
//! ```text
//! x_t = E[h_t] + P[t]
//! h_t = x_t + Wo · Attn(LN1(x))_t
//! y_t = h_t + FFN(LN2(h_t))
//! out_t = LNf(y_t)
//! ```
//!
//! Positions index the (truncated) window from its oldest item, so a
//! history longer than `L` encodes exactly like its last-`L` suffix.

use serde::{Deserialize, Serialize};

use crate::linalg::{axpy, dot, Matrix};

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeqRecBlock {
    pub pos: Matrix,
    pub ln1_g: Matrix,
    pub ln1_b: Matrix,
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub ln2_g: Matrix,
    pub ln2_b: Matrix,
    pub ff_w1: Matrix,
    pub ff_b1: Matrix,
    pub ff_w2: Matrix,
    pub ff_b2: Matrix,
    pub lnf_g: Matrix,
    pub lnf_b: Matrix,
}

impl SeqRecBlock {
    pub fn zeros(max_len: usize, dim: usize) -> Self {
        let sq = || Matrix::zeros(dim, dim);
        let v = || Matrix::zeros(1, dim);
        SeqRecBlock {
            pos: Matrix::zeros(max_len, dim),
            ln1_g: v(),
            ln1_b: v(),
            wq: sq(),
            wk: sq(),
            wv: sq(),
            wo: sq(),
            ln2_g: v(),
            ln2_b: v(),
            ff_w1: sq(),
            ff_b1: v(),
            ff_w2: sq(),
            ff_b2: v(),
            lnf_g: v(),
            lnf_b: v(),
        }
    }

    pub fn max_len(&self) -> usize {
        self.pos.rows
    }

    pub fn dim(&self) -> usize {
        self.pos.cols
    }

    pub(crate) fn tensors(&self) -> Vec<(&'static str, &Matrix)> {
        vec![
            ("seq.pos", &self.pos),
            ("seq.ln1_g", &self.ln1_g),
            ("seq.ln1_b", &self.ln1_b),
            ("seq.wq", &self.wq),
            ("seq.wk", &self.wk),
            ("seq.wv", &self.wv),
            ("seq.wo", &self.wo),
            ("seq.ln2_g", &self.ln2_g),
            ("seq.ln2_b", &self.ln2_b),
            ("seq.ff_w1", &self.ff_w1),
            ("seq.ff_b1", &self.ff_b1),
            ("seq.ff_w2", &self.ff_w2),
            ("seq.ff_b2", &self.ff_b2),
            ("seq.lnf_g", &self.lnf_g),
            ("seq.lnf_b", &self.lnf_b),
        ]
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Matrix)> {
        vec![
            ("seq.pos", &mut self.pos),
            ("seq.ln1_g", &mut self.ln1_g),
            ("seq.ln1_b", &mut self.ln1_b),
            ("seq.wq", &mut self.wq),
            ("seq.wk", &mut self.wk),
            ("seq.wv", &mut self.wv),
            ("seq.wo", &mut self.wo),
            ("seq.ln2_g", &mut self.ln2_g),
            ("seq.ln2_b", &mut self.ln2_b),
            ("seq.ff_w1", &mut self.ff_w1),
            ("seq.ff_b1", &mut self.ff_b1),
            ("seq.ff_w2", &mut self.ff_w2),
            ("seq.ff_b2", &mut self.ff_b2),
            ("seq.lnf_g", &mut self.lnf_g),
            ("seq.lnf_b", &mut self.lnf_b),
        ]
    }
}

struct LayerNormCache {
    xhat: Vec<f64>,
    rstd: f64,
}

fn layer_norm(x: &[f64], g: &[f64], b: &[f64]) -> (Vec<f64>, LayerNormCache) {
    let d = x.len() as f64;
    let mu = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d;
    let rstd = 1.0 / (var + LN_EPS).sqrt();
    let xhat: Vec<f64> = x.iter().map(|v| (v - mu) * rstd).collect();
    let y = xhat
        .iter()
        .zip(g)
        .zip(b)
        .map(|((xh, g), b)| g * xh + b)
        .collect();
    (y, LayerNormCache { xhat, rstd })
}

fn layer_norm_backward(
    dy: &[f64],
    cache: &LayerNormCache,
    g: &[f64],
    dg: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let d = dy.len() as f64;
    let mut dxhat = vec![0.0; dy.len()];
    for j in 0..dy.len() {
        dg[j] += dy[j] * cache.xhat[j];
        db[j] += dy[j];
        dxhat[j] = dy[j] * g[j];
    }
    let mean_dxhat = dxhat.iter().sum::<f64>() / d;
    let mean_dxhat_xhat = dot(&dxhat, &cache.xhat) / d;
    dxhat
        .iter()
        .zip(&cache.xhat)
        .map(|(dxh, xh)| cache.rstd * (dxh - mean_dxhat - xh * mean_dxhat_xhat))
        .collect()
}

/// Intermediate activations kept for the backward pass.
pub struct SeqCache {
    items: Vec<usize>,
    ln1: Vec<LayerNormCache>,
    a: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    /// Row `t` holds attention weights over positions `0..=t`.
    probs: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    ln2: Vec<LayerNormCache>,
    b: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    m: Vec<Vec<f64>>,
    lnf: Vec<LayerNormCache>,
    pub out: Vec<Vec<f64>>,
}

/// The window actually encoded: the last `max_len` items.
pub fn window(history: &[usize], max_len: usize) -> &[usize] {
    &history[history.len().saturating_sub(max_len)..]
}

/// Encode every position of the (already truncated) window.
pub fn forward(block: &SeqRecBlock, item_table: &Matrix, items: &[usize]) -> SeqCache {
    let n = items.len();
    let d = block.dim();
    let scale = 1.0 / (d as f64).sqrt();

    let x: Vec<Vec<f64>> = items
        .iter()
        .enumerate()
        .map(|(t, &i)| {
            let mut row = item_table.row(i).to_vec();
            axpy(1.0, block.pos.row(t), &mut row);
            row
        })
        .collect();

    let mut ln1 = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    for xt in &x {
        let (at, c) = layer_norm(xt, &block.ln1_g.data, &block.ln1_b.data);
        a.push(at);
        ln1.push(c);
    }
    let q: Vec<Vec<f64>> = a.iter().map(|at| block.wq.vec_mul(at)).collect();
    let k: Vec<Vec<f64>> = a.iter().map(|at| block.wk.vec_mul(at)).collect();
    let v: Vec<Vec<f64>> = a.iter().map(|at| block.wv.vec_mul(at)).collect();

    let mut probs = Vec::with_capacity(n);
    let mut c = Vec::with_capacity(n);
    for t in 0..n {
        let mut s: Vec<f64> = (0..=t).map(|j| dot(&q[t], &k[j]) * scale).collect();
        crate::linalg::softmax_in_place(&mut s);
        let mut ct = vec![0.0; d];
        for (j, &p) in s.iter().enumerate() {
            axpy(p, &v[j], &mut ct);
        }
        probs.push(s);
        c.push(ct);
    }

    let mut ln2 = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    let mut pre = Vec::with_capacity(n);
    let mut m = Vec::with_capacity(n);
    let mut lnf = Vec::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    for t in 0..n {
        let mut h = x[t].clone();
        axpy(1.0, &block.wo.vec_mul(&c[t]), &mut h);
        let (bt, c2) = layer_norm(&h, &block.ln2_g.data, &block.ln2_b.data);
        let mut pt = block.ff_w1.vec_mul(&bt);
        axpy(1.0, &block.ff_b1.data, &mut pt);
        let mt: Vec<f64> = pt.iter().map(|v| v.max(0.0)).collect();
        let mut y = h;
        axpy(1.0, &block.ff_w2.vec_mul(&mt), &mut y);
        axpy(1.0, &block.ff_b2.data, &mut y);
        let (ot, cf) = layer_norm(&y, &block.lnf_g.data, &block.lnf_b.data);
        ln2.push(c2);
        b.push(bt);
        pre.push(pt);
        m.push(mt);
        lnf.push(cf);
        out.push(ot);
    }

    SeqCache {
        items: items.to_vec(),
        ln1,
        a,
        q,
        k,
        v,
        probs,
        c,
        ln2,
        b,
        pre,
        m,
        lnf,
        out,
    }
}

/// Accumulate gradients given `d_last`, the gradient of the output read at
/// the final position.
pub fn backward(
    block: &SeqRecBlock,
    cache: &SeqCache,
    d_last: &[f64],
    grad: &mut SeqRecBlock,
    grad_items: &mut Matrix,
) {
    let n = cache.items.len();
    if n == 0 {
        return;
    }
    let d = block.dim();
    let scale = 1.0 / (d as f64).sqrt();

    // Only the last position receives an output gradient; the feed-forward
    // and output norm are position-wise, so earlier positions have dh = 0.
    let t = n - 1;
    let dy = layer_norm_backward(
        d_last,
        &cache.lnf[t],
        &block.lnf_g.data,
        &mut grad.lnf_g.data,
        &mut grad.lnf_b.data,
    );
    axpy(1.0, &dy, &mut grad.ff_b2.data);
    grad.ff_w2.add_outer(1.0, &cache.m[t], &dy);
    let dm = block.ff_w2.mul_vec(&dy);
    let dpre: Vec<f64> = dm
        .iter()
        .zip(&cache.pre[t])
        .map(|(g, p)| if *p > 0.0 { *g } else { 0.0 })
        .collect();
    axpy(1.0, &dpre, &mut grad.ff_b1.data);
    grad.ff_w1.add_outer(1.0, &cache.b[t], &dpre);
    let db = block.ff_w1.mul_vec(&dpre);
    let mut dh = dy;
    let dh_norm = layer_norm_backward(
        &db,
        &cache.ln2[t],
        &block.ln2_g.data,
        &mut grad.ln2_g.data,
        &mut grad.ln2_b.data,
    );
    axpy(1.0, &dh_norm, &mut dh);

    let mut dx = vec![vec![0.0; d]; n];
    axpy(1.0, &dh, &mut dx[t]);

    // attention output at t
    grad.wo.add_outer(1.0, &cache.c[t], &dh);
    let dc = block.wo.mul_vec(&dh);
    let p = &cache.probs[t];
    let mut dq = vec![0.0; d];
    let mut dk = vec![vec![0.0; d]; n];
    let mut dv = vec![vec![0.0; d]; n];
    let dp: Vec<f64> = (0..=t).map(|j| dot(&dc, &cache.v[j])).collect();
    let weighted: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
    for j in 0..=t {
        axpy(p[j], &dc, &mut dv[j]);
        let ds = p[j] * (dp[j] - weighted) * scale;
        axpy(ds, &cache.k[j], &mut dq);
        axpy(ds, &cache.q[t], &mut dk[j]);
    }

    for j in 0..n {
        let only_q = j == t;
        let mut da = block.wk.mul_vec(&dk[j]);
        axpy(1.0, &block.wv.mul_vec(&dv[j]), &mut da);
        grad.wk.add_outer(1.0, &cache.a[j], &dk[j]);
        grad.wv.add_outer(1.0, &cache.a[j], &dv[j]);
        if only_q {
            axpy(1.0, &block.wq.mul_vec(&dq), &mut da);
            grad.wq.add_outer(1.0, &cache.a[j], &dq);
        }
        let dxj = layer_norm_backward(
            &da,
            &cache.ln1[j],
            &block.ln1_g.data,
            &mut grad.ln1_g.data,
            &mut grad.ln1_b.data,
        );
        axpy(1.0, &dxj, &mut dx[j]);
    }

    for (j, dxj) in dx.iter().enumerate() {
        axpy(1.0, dxj, grad_items.row_mut(cache.items[j]));
        axpy(1.0, dxj, grad.pos.row_mut(j));
    }
}
