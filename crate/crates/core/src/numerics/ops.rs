use super::tensor::{matmul, matmul_a_bt, matmul_at_b, Tensor};
use crate::error::{Error, Result};
use crate::Real;

pub const DEFAULT_LN_EPS: Real = 1e-5;

#[derive(Clone, Debug)]
pub struct LinearGrads {
    pub dx: Tensor,
    pub dw: Tensor,
    pub db: Tensor,
}

/// `y = x W + b` for `x: [*, in]`, `W: [in, out]`, `b: [out]`.
pub fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n_in, n_out) = check_linear(x, w, Some(b))?;
    let rows = x.rows();
    let mut y = matmul(x.data(), rows, n_in, w.data(), n_out);
    for r in 0..rows {
        for (o, &bv) in y[r * n_out..(r + 1) * n_out].iter_mut().zip(b.data()) {
            *o += bv;
        }
    }
    Ok(Tensor::matrix(rows, n_out, y))
}

/// `y = x W` without bias.
pub fn linear_nobias(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    let (n_in, n_out) = check_linear(x, w, None)?;
    let rows = x.rows();
    Ok(Tensor::matrix(
        rows,
        n_out,
        matmul(x.data(), rows, n_in, w.data(), n_out),
    ))
}

fn check_linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<(usize, usize)> {
    if w.shape().len() != 2 {
        return Err(Error::dim("W", format!("expected rank 2, got {:?}", w.shape())));
    }
    let (n_in, n_out) = (w.shape()[0], w.shape()[1]);
    if x.cols() != n_in {
        return Err(Error::dim(
            "x",
            format!("last dim {} does not match W rows {n_in}", x.cols()),
        ));
    }
    if let Some(b) = b {
        if b.numel() != n_out {
            return Err(Error::dim(
                "b",
                format!("length {} does not match W cols {n_out}", b.numel()),
            ));
        }
    }
    Ok((n_in, n_out))
}

pub fn linear_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> LinearGrads {
    let dx = linear_backward_input(w, dy);
    let dw = linear_weight_grad(x, dy);
    let db = bias_grad(dy);
    LinearGrads { dx, dw, db }
}

pub fn linear_backward_input(w: &Tensor, dy: &Tensor) -> Tensor {
    let (n_in, n_out) = (w.shape()[0], w.shape()[1]);
    let rows = dy.rows();
    Tensor::matrix(rows, n_in, matmul_a_bt(dy.data(), rows, n_out, w.data(), n_in))
}

pub fn linear_weight_grad(x: &Tensor, dy: &Tensor) -> Tensor {
    let rows = x.rows();
    let (n_in, n_out) = (x.cols(), dy.cols());
    Tensor::matrix(n_in, n_out, matmul_at_b(x.data(), rows, n_in, dy.data(), n_out))
}

pub fn bias_grad(dy: &Tensor) -> Tensor {
    let n_out = dy.cols();
    let mut db = vec![0.0; n_out];
    for r in 0..dy.rows() {
        for (acc, &g) in db.iter_mut().zip(dy.row(r)) {
            *acc += g;
        }
    }
    Tensor::vector(db)
}

#[derive(Clone, Debug)]
pub struct LayerNormCache {
    xhat: Tensor,
    inv_std: Vec<Real>,
}

impl LayerNormCache {
    pub fn normalized(&self) -> &Tensor {
        &self.xhat
    }
}

/// Standardizes each row over the last dimension, then applies `gamma`/`beta`.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: Real) -> Result<(Tensor, LayerNormCache)> {
    let d = x.cols();
    if d == 0 {
        return Err(Error::dim("x", "zero-length last dimension"));
    }
    if gamma.numel() != d {
        return Err(Error::dim("gamma", format!("length {} != {d}", gamma.numel())));
    }
    if beta.numel() != d {
        return Err(Error::dim("beta", format!("length {} != {d}", beta.numel())));
    }
    if eps <= 0.0 {
        return Err(Error::Argument(format!("layer norm eps must be > 0, got {eps}")));
    }
    let rows = x.rows();
    let mut xhat = vec![0.0; rows * d];
    let mut y = vec![0.0; rows * d];
    let mut inv_std = Vec::with_capacity(rows);
    let n = d as Real;
    for r in 0..rows {
        let row = x.row(r);
        let mean = row.iter().sum::<Real>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / n;
        let is = 1.0 / (var + eps).sqrt();
        inv_std.push(is);
        for j in 0..d {
            let h = (row[j] - mean) * is;
            xhat[r * d + j] = h;
            y[r * d + j] = h * gamma.data()[j] + beta.data()[j];
        }
    }
    Ok((
        Tensor::matrix(rows, d, y),
        LayerNormCache {
            xhat: Tensor::matrix(rows, d, xhat),
            inv_std,
        },
    ))
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn layer_norm_backward(cache: &LayerNormCache, gamma: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let d = dy.cols();
    let rows = dy.rows();
    let n = d as Real;
    let mut dx = vec![0.0; rows * d];
    let mut dgamma = vec![0.0; d];
    let mut dbeta = vec![0.0; d];
    let mut dxhat = vec![0.0; d];
    for r in 0..rows {
        let xh = cache.xhat.row(r);
        let g = dy.row(r);
        for j in 0..d {
            dgamma[j] += g[j] * xh[j];
            dbeta[j] += g[j];
            dxhat[j] = g[j] * gamma.data()[j];
        }
        let mean_dxhat = dxhat.iter().sum::<Real>() / n;
        let mean_dxhat_xhat = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<Real>() / n;
        let is = cache.inv_std[r];
        for j in 0..d {
            dx[r * d + j] = is * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
    (
        Tensor::matrix(rows, d, dx),
        Tensor::vector(dgamma),
        Tensor::vector(dbeta),
    )
}

/// Row-wise softmax, stabilized by max-subtraction.
pub fn softmax(x: &Tensor) -> Tensor {
    let d = x.cols();
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(d) {
        softmax_in_place(row);
    }
    Tensor::matrix(x.rows(), d, out)
}

pub(crate) fn softmax_in_place(row: &mut [Real]) {
    let m = row.iter().copied().fold(Real::NEG_INFINITY, Real::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Gradient through softmax given its output `y`.
pub fn softmax_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let d = y.cols();
    let mut dx = vec![0.0; y.numel()];
    for r in 0..y.rows() {
        let (yr, gr) = (y.row(r), dy.row(r));
        let dot: Real = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for j in 0..d {
            dx[r * d + j] = yr[j] * (gr[j] - dot);
        }
    }
    Tensor::matrix(y.rows(), d, dx)
}

fn log_sum_exp(row: &[Real]) -> Real {
    let m = row.iter().copied().fold(Real::NEG_INFINITY, Real::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<Real>().ln()
}

/// Mean negative log-likelihood over unmasked rows, plus `dloss/dlogits`.
///
/// `mask[i] == false` excludes row `i` (padding).
pub fn cross_entropy(logits: &Tensor, targets: &[usize], mask: Option<&[bool]>) -> Result<(Real, Tensor)> {
    let (rows, v) = (logits.rows(), logits.cols());
    if targets.len() != rows {
        return Err(Error::dim(
            "target_ids",
            format!("{} targets for {rows} logit rows", targets.len()),
        ));
    }
    if let Some(m) = mask {
        if m.len() != rows {
            return Err(Error::dim("mask", format!("{} entries for {rows} rows", m.len())));
        }
    }
    let included = |i: usize| mask.is_none_or(|m| m[i]);
    let count = (0..rows).filter(|&i| included(i)).count();
    if count == 0 {
        return Err(Error::Argument("cross entropy over zero unmasked positions".into()));
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; rows * v];
    let scale = 1.0 / count as Real;
    for (i, &t) in targets.iter().enumerate() {
        if !included(i) {
            continue;
        }
        if t >= v {
            return Err(Error::Index(format!("target id {t} out of range for vocab {v}")));
        }
        let row = logits.row(i);
        let lse = log_sum_exp(row);
        loss += lse - row[t];
        let g = &mut grad[i * v..(i + 1) * v];
        for (gj, &lj) in g.iter_mut().zip(row) {
            *gj = (lj - lse).exp() * scale;
        }
        g[t] -= scale;
    }
    Ok((loss * scale, Tensor::matrix(rows, v, grad)))
}

const GELU_C: Real = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh approximation of GELU.
pub fn gelu(x: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .map(|&v| 0.5 * v * (1.0 + (GELU_C * (v + 0.044715 * v * v * v)).tanh()))
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("shape preserved")
}

pub fn gelu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &g)| {
            let u = GELU_C * (v + 0.044715 * v * v * v);
            let t = u.tanh();
            let du = GELU_C * (1.0 + 3.0 * 0.044715 * v * v);
            g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du)
        })
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("shape preserved")
}

pub fn tanh(x: &Tensor) -> Tensor {
    Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v.tanh()).collect()).expect("shape preserved")
}

/// Gradient through tanh given its output `y`.
pub fn tanh_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let data = y
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&t, &g)| g * (1.0 - t * t))
        .collect();
    Tensor::new(y.shape().to_vec(), data).expect("shape preserved")
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::dim("add", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::new(a.shape().to_vec(), data)
}
