//! Scaled dot-product attention with an explicit backward pass.
//!
//! Heads split the shared dimension `d` into `n_heads` contiguous column
//! blocks; a single head is the default everywhere in the model.

use super::ops::{softmax_backward, softmax_in_place};
use super::tensor::{matmul, matmul_a_bt, matmul_at_b, Tensor};
use crate::error::{Error, Result};
use crate::Real;

/// `allowed[i * k + j]` says whether query `i` may attend to key `j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    q: usize,
    k: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn new(q: usize, k: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != q * k {
            return Err(Error::dim(
                "mask",
                format!("{} entries for a {q}x{k} mask", allowed.len()),
            ));
        }
        Ok(Self { q, k, allowed })
    }

    /// Query `i` sees keys `0..=i`.
    pub fn causal(n: usize) -> Self {
        let allowed = (0..n).flat_map(|i| (0..n).map(move |j| j <= i)).collect();
        Self { q: n, k: n, allowed }
    }

    pub fn is_allowed(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.k + j]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.q, self.k)
    }
}

#[derive(Clone, Debug)]
pub struct AttentionCache {
    n_heads: usize,
    /// Per-head attention probabilities, each `[q, k]`.
    probs: Vec<Tensor>,
}

impl AttentionCache {
    pub fn probs(&self, head: usize) -> &Tensor {
        &self.probs[head]
    }
}

#[derive(Clone, Debug)]
pub struct AttentionGrads {
    pub dq: Tensor,
    pub dk: Tensor,
    pub dv: Tensor,
}

fn head_cols(t: &Tensor, h: usize, dh: usize) -> Vec<Real> {
    let d = t.cols();
    let mut out = Vec::with_capacity(t.rows() * dh);
    for r in 0..t.rows() {
        out.extend_from_slice(&t.data()[r * d + h * dh..r * d + (h + 1) * dh]);
    }
    out
}

fn scatter_head(dst: &mut [Real], d: usize, h: usize, dh: usize, src: &[Real]) {
    for (r, chunk) in src.chunks(dh).enumerate() {
        dst[r * d + h * dh..r * d + (h + 1) * dh].copy_from_slice(chunk);
    }
}

/// `softmax(Q K^T / sqrt(d_head) + mask) V` per head; heads concatenated.
pub fn attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    mask: Option<&AttentionMask>,
    n_heads: usize,
) -> Result<(Tensor, AttentionCache)> {
    let d = q.cols();
    if k.cols() != d {
        return Err(Error::dim("K", format!("dim {} != Q dim {d}", k.cols())));
    }
    if v.cols() != d {
        return Err(Error::dim("V", format!("dim {} != Q dim {d}", v.cols())));
    }
    if k.rows() != v.rows() {
        return Err(Error::dim("V", format!("{} rows but K has {}", v.rows(), k.rows())));
    }
    if n_heads == 0 || d % n_heads != 0 {
        return Err(Error::dim("heads", format!("d={d} not divisible by {n_heads}")));
    }
    let (nq, nk) = (q.rows(), k.rows());
    if let Some(m) = mask {
        if m.shape() != (nq, nk) {
            return Err(Error::dim(
                "mask",
                format!("shape {:?} but scores are {nq}x{nk}", m.shape()),
            ));
        }
    }
    let dh = d / n_heads;
    let scale = 1.0 / (dh as Real).sqrt();
    let mut out = vec![0.0; nq * d];
    let mut probs = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let (qh, kh, vh) = (head_cols(q, h, dh), head_cols(k, h, dh), head_cols(v, h, dh));
        let mut scores = matmul_a_bt(&qh, nq, dh, &kh, nk);
        for i in 0..nq {
            let row = &mut scores[i * nk..(i + 1) * nk];
            let mut any = false;
            for (j, s) in row.iter_mut().enumerate() {
                if mask.is_none_or(|m| m.is_allowed(i, j)) {
                    *s *= scale;
                    any = true;
                } else {
                    *s = Real::NEG_INFINITY;
                }
            }
            if !any {
                return Err(Error::Numeric(format!("attention row {i} is fully masked")));
            }
            softmax_in_place(row);
        }
        let oh = matmul(&scores, nq, nk, &vh, dh);
        scatter_head(&mut out, d, h, dh, &oh);
        probs.push(Tensor::matrix(nq, nk, scores));
    }
    Ok((Tensor::matrix(nq, d, out), AttentionCache { n_heads, probs }))
}

pub fn attention_backward(q: &Tensor, k: &Tensor, v: &Tensor, cache: &AttentionCache, dout: &Tensor) -> AttentionGrads {
    let d = q.cols();
    let n_heads = cache.n_heads;
    let dh = d / n_heads;
    let scale = 1.0 / (dh as Real).sqrt();
    let (nq, nk) = (q.rows(), k.rows());
    let mut dq = vec![0.0; nq * d];
    let mut dk = vec![0.0; nk * d];
    let mut dv = vec![0.0; nk * d];
    for h in 0..n_heads {
        let (qh, kh, vh) = (head_cols(q, h, dh), head_cols(k, h, dh), head_cols(v, h, dh));
        let doh = head_cols(dout, h, dh);
        let p = &cache.probs[h];
        let dvh = matmul_at_b(p.data(), nq, nk, &doh, dh);
        let dp = Tensor::matrix(nq, nk, matmul_a_bt(&doh, nq, dh, &vh, nk));
        let mut ds = softmax_backward(p, &dp).into_data();
        ds.iter_mut().for_each(|g| *g *= scale);
        let dqh = matmul(&ds, nq, nk, &kh, dh);
        let dkh = matmul_at_b(&ds, nq, nk, &qh, dh);
        scatter_head(&mut dq, d, h, dh, &dqh);
        scatter_head(&mut dk, d, h, dh, &dkh);
        scatter_head(&mut dv, d, h, dh, &dvh);
    }
    AttentionGrads {
        dq: Tensor::matrix(nq, d, dq),
        dk: Tensor::matrix(nk, d, dk),
        dv: Tensor::matrix(nk, d, dv),
    }
}
