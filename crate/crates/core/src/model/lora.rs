//! Low-rank adapters: `y = x W + (alpha / r) * (x A^T) B^T` with `B` zero at init.

use super::params::Init;
use crate::error::{Error, Result};
use crate::numerics::{
    linear_backward_input, linear_nobias, linear_weight_grad, matmul, matmul_a_bt, matmul_at_b, Tensor,
};
use crate::Real;

/// Standalone adapted projection. `w: [in, out]`, `a: [r, in]`, `b: [out, r]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LoraLayer {
    pub w: Tensor,
    pub a: Tensor,
    pub b: Tensor,
    pub scaling: Real,
}

impl LoraLayer {
    /// Wraps a frozen weight with a fresh adapter: `A ~ N(0, 1/in)`, `B = 0`.
    pub fn new(w: Tensor, rank: usize, alpha: Real, seed: u64) -> Result<Self> {
        if w.shape().len() != 2 {
            return Err(Error::dim("W", format!("expected rank 2, got {:?}", w.shape())));
        }
        if rank == 0 {
            return Err(Error::Config("lora rank must be >= 1".into()));
        }
        let (n_in, n_out) = (w.shape()[0], w.shape()[1]);
        let a = Init::new(seed).normal(&[rank, n_in], 1.0 / (n_in as Real).sqrt());
        Ok(Self {
            w,
            a,
            b: Tensor::zeros(&[n_out, rank]),
            scaling: alpha / rank as Real,
        })
    }
}

pub fn lora_forward(x: &Tensor, layer: &LoraLayer) -> Result<Tensor> {
    Ok(adapted_forward(x, &layer.w, Some((&layer.a, &layer.b, layer.scaling)))?.0)
}

/// Adapter factors and scaling for one projection.
pub(crate) type Adapter<'a> = (&'a Tensor, &'a Tensor, Real);

/// Returns `y` and the low-rank activation `u = x A^T` (when adapted).
pub(crate) fn adapted_forward(
    x: &Tensor,
    w: &Tensor,
    adapter: Option<Adapter<'_>>,
) -> Result<(Tensor, Option<Tensor>)> {
    let mut y = linear_nobias(x, w)?;
    let Some((a, b, s)) = adapter else {
        return Ok((y, None));
    };
    let (r, n_in) = (a.shape()[0], a.shape()[1]);
    let n_out = w.shape()[1];
    if n_in != x.cols() || b.shape() != [n_out, r] {
        return Err(Error::dim(
            "lora",
            format!("A {:?} / B {:?} do not fit W {:?}", a.shape(), b.shape(), w.shape()),
        ));
    }
    let rows = x.rows();
    let u = matmul_a_bt(x.data(), rows, n_in, a.data(), r);
    let delta = matmul_a_bt(&u, rows, r, b.data(), n_out);
    for (yv, dv) in y.data_mut().iter_mut().zip(&delta) {
        *yv += s * dv;
    }
    Ok((y, Some(Tensor::new(vec![rows, r], u)?)))
}

pub(crate) struct AdaptedGrads {
    pub dx: Tensor,
    pub dw: Option<Tensor>,
    pub da: Option<Tensor>,
    pub db: Option<Tensor>,
}

/// Backward through [`adapted_forward`]; weight gradients are computed only
/// where requested.
pub(crate) fn adapted_backward(
    x: &Tensor,
    w: &Tensor,
    adapter: Option<Adapter<'_>>,
    u: Option<&Tensor>,
    dy: &Tensor,
    want: (bool, bool, bool),
) -> AdaptedGrads {
    let mut dx = linear_backward_input(w, dy);
    let dw = want.0.then(|| linear_weight_grad(x, dy));
    let (mut da, mut db) = (None, None);
    if let (Some((a, b, s)), Some(u)) = (adapter, u) {
        let (r, n_in) = (a.shape()[0], a.shape()[1]);
        let n_out = b.shape()[0];
        let rows = dy.rows();
        if want.2 {
            let mut g = matmul_at_b(dy.data(), rows, n_out, u.data(), r);
            g.iter_mut().for_each(|v| *v *= s);
            db = Some(Tensor::new(vec![n_out, r], g).expect("B shape"));
        }
        let mut du = matmul(dy.data(), rows, n_out, b.data(), r);
        du.iter_mut().for_each(|v| *v *= s);
        if want.1 {
            da = Some(Tensor::new(vec![r, n_in], matmul_at_b(&du, rows, r, x.data(), n_in)).expect("A shape"));
        }
        let dxa = matmul(&du, rows, r, a.data(), n_in);
        for (d, v) in dx.data_mut().iter_mut().zip(&dxa) {
            *d += v;
        }
    }
    AdaptedGrads { dx, dw, da, db }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x() -> Tensor {
        Tensor::new(vec![3, 4], (0..12).map(|v| (v as Real * 0.7).cos()).collect()).unwrap()
    }

    #[test]
    fn zero_b_is_exactly_the_base_projection() {
        let w = Init::new(2).normal(&[4, 5], 0.5);
        let layer = LoraLayer::new(w.clone(), 8, 32.0, 7).unwrap();
        assert_eq!(layer.scaling, 4.0);
        let y = lora_forward(&x(), &layer).unwrap();
        assert_eq!(y, linear_nobias(&x(), &w).unwrap());
    }

    #[test]
    fn matches_merged_weight() {
        let w = Init::new(2).normal(&[4, 5], 0.5);
        let mut layer = LoraLayer::new(w, 2, 4.0, 7).unwrap();
        layer.b = Init::new(3).normal(&[5, 2], 1.0);
        // W' = W + s * (B A)^T
        let mut merged = layer.w.clone();
        for i in 0..4 {
            for o in 0..5 {
                let ba: Real = (0..2).map(|k| layer.b.get(&[o, k]) * layer.a.get(&[k, i])).sum();
                merged.set(&[i, o], merged.get(&[i, o]) + layer.scaling * ba);
            }
        }
        let y = lora_forward(&x(), &layer).unwrap();
        assert!(y.max_abs_diff(&linear_nobias(&x(), &merged).unwrap()) < 1e-12);
    }

    #[test]
    fn mismatched_factors_fail() {
        let w = Init::new(2).normal(&[4, 5], 0.5);
        let mut layer = LoraLayer::new(w, 2, 4.0, 7).unwrap();
        layer.b = Tensor::zeros(&[4, 2]);
        assert!(lora_forward(&x(), &layer).is_err());
        assert!(LoraLayer::new(Tensor::zeros(&[2, 2]), 0, 1.0, 0).is_err());
    }
}
