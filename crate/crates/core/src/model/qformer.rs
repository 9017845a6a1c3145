//! Window-level Q-Former: frames are cut into non-overlapping windows and a
//! shared set of learned queries cross-attends within each window only. There
//! is no positional encoding inside a window.

use std::ops::Range;

use super::config::QFormerConfig;
use super::params::{add_grad, insert_all, ones, sum_into, zeros, Init};
use crate::error::{Error, Result};
use crate::numerics::{
    attention, attention_backward, bias_grad, gelu, gelu_backward, layer_norm, layer_norm_backward, linear,
    linear_backward_input, linear_nobias, linear_weight_grad, AttentionCache, GradBuffer, LayerNormCache,
    ParameterStore, Tensor, DEFAULT_LN_EPS,
};
use crate::Real;

pub const QFORMER: &str = "qformer.";

/// Consecutive `[start, end)` ranges of at most `window` frames covering `0..n_frames`.
pub fn window_ranges(n_frames: usize, window: usize) -> Result<Vec<Range<usize>>> {
    if window == 0 {
        return Err(Error::Argument("window length must be >= 1".into()));
    }
    Ok((0..n_frames)
        .step_by(window)
        .map(|s| s..(s + window).min(n_frames))
        .collect())
}

/// Splits `[T, d]` frames into windows of `window` rows; the last may be shorter.
pub fn window_partition(frames: &Tensor, window: usize) -> Result<Vec<Tensor>> {
    if frames.rows() == 0 {
        return Err(Error::dim("frames", "no frames to partition"));
    }
    Ok(window_ranges(frames.rows(), window)?
        .into_iter()
        .map(|r| frames.slice_rows(r.start, r.end))
        .collect())
}

/// `ceil(n_frames / W) * Q`.
pub fn output_token_count(n_frames: usize, cfg: &QFormerConfig) -> usize {
    n_frames.div_ceil(cfg.window_len_frames) * cfg.queries_per_window
}

pub(crate) fn init_qformer(store: &mut ParameterStore, cfg: &QFormerConfig, d_in: usize, d_out: usize) -> Result<()> {
    let mut init = Init::new(cfg.seed);
    let dq = cfg.d_model;
    let s_in = 1.0 / (d_in as Real).sqrt();
    let s_q = 1.0 / (dq as Real).sqrt();
    let s_ff = 1.0 / ((4 * dq) as Real).sqrt();
    let mut items = vec![
        ("query".to_string(), init.normal(&[cfg.queries_per_window, dq], 0.02)),
        ("frame_ln.gamma".into(), ones(d_in)),
        ("frame_ln.beta".into(), zeros(&[d_in])),
    ];
    for l in 0..cfg.n_layers {
        let mut layer = vec![
            ("attn_ln.gamma", ones(dq)),
            ("attn_ln.beta", zeros(&[dq])),
            ("attn.q.weight", init.normal(&[dq, dq], s_q)),
            ("attn.q.bias", zeros(&[dq])),
            ("attn.k.weight", init.normal(&[d_in, dq], s_in)),
            ("attn.v.weight", init.normal(&[d_in, dq], s_in)),
            ("attn.v.bias", zeros(&[dq])),
            ("attn.o.weight", init.normal(&[dq, dq], s_q)),
            ("attn.o.bias", zeros(&[dq])),
            ("ffn_ln.gamma", ones(dq)),
            ("ffn_ln.beta", zeros(&[dq])),
            ("ffn.up.weight", init.normal(&[dq, 4 * dq], s_q)),
            ("ffn.up.bias", zeros(&[4 * dq])),
        ];
        layer.push(("ffn.down.weight", init.normal(&[4 * dq, dq], s_ff)));
        layer.push(("ffn.down.bias", zeros(&[dq])));
        items.extend(layer.into_iter().map(|(n, t)| (format!("layers.{l}.{n}"), t)));
    }
    items.push(("out_ln.gamma".into(), ones(dq)));
    items.push(("out_ln.beta".into(), zeros(&[dq])));
    items.push(("out_proj.weight".into(), init.normal(&[dq, d_out], s_q)));
    items.push(("out_proj.bias".into(), zeros(&[d_out])));
    insert_all(store, QFORMER, items, true)
}

struct LayerCache {
    ln_attn: LayerNormCache,
    hq: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    attn: Vec<AttentionCache>,
    a: Tensor,
    ln_ffn: LayerNormCache,
    hf: Tensor,
    up: Tensor,
    act: Tensor,
}

pub(crate) struct QFormerCache {
    ranges: Vec<Range<usize>>,
    frame_ln: LayerNormCache,
    frames_normed: Tensor,
    layers: Vec<LayerCache>,
    out_ln: LayerNormCache,
    out_normed: Tensor,
}

fn p<'a>(store: &'a ParameterStore, name: &str) -> Result<&'a Tensor> {
    store.get(&format!("{QFORMER}{name}"))
}

fn lp<'a>(store: &'a ParameterStore, l: usize, name: &str) -> Result<&'a Tensor> {
    store.get(&format!("{QFORMER}layers.{l}.{name}"))
}

/// Maps `[T, d_in]` frames to `[ceil(T/W) * Q, d_out]` bridge tokens.
pub(crate) fn qformer_forward(
    store: &ParameterStore,
    cfg: &QFormerConfig,
    frames: &Tensor,
) -> Result<(Tensor, QFormerCache)> {
    let d_in = p(store, "frame_ln.gamma")?.numel();
    if frames.shape().len() != 2 || frames.cols() != d_in {
        return Err(Error::dim(
            "frames",
            format!("expected [T, {d_in}], got {:?}", frames.shape()),
        ));
    }
    if frames.rows() == 0 {
        return Err(Error::dim("frames", "no frames to bridge"));
    }
    let ranges = window_ranges(frames.rows(), cfg.window_len_frames)?;
    let nq = cfg.queries_per_window;
    let (frames_normed, frame_ln) = layer_norm(
        frames,
        p(store, "frame_ln.gamma")?,
        p(store, "frame_ln.beta")?,
        DEFAULT_LN_EPS,
    )?;

    let query = p(store, "query")?;
    let mut h = Tensor::concat_rows(&vec![query; ranges.len()])?;
    let mut layers = Vec::with_capacity(cfg.n_layers);
    for l in 0..cfg.n_layers {
        let (hq, ln_attn) = layer_norm(
            &h,
            lp(store, l, "attn_ln.gamma")?,
            lp(store, l, "attn_ln.beta")?,
            DEFAULT_LN_EPS,
        )?;
        let q = linear(&hq, lp(store, l, "attn.q.weight")?, lp(store, l, "attn.q.bias")?)?;
        // No key bias: it shifts every score in a row equally, so softmax cancels it.
        let k = linear_nobias(&frames_normed, lp(store, l, "attn.k.weight")?)?;
        let v = linear(
            &frames_normed,
            lp(store, l, "attn.v.weight")?,
            lp(store, l, "attn.v.bias")?,
        )?;
        let mut parts = Vec::with_capacity(ranges.len());
        let mut attn = Vec::with_capacity(ranges.len());
        for (w, r) in ranges.iter().enumerate() {
            let (o, c) = attention(
                &q.slice_rows(w * nq, (w + 1) * nq),
                &k.slice_rows(r.start, r.end),
                &v.slice_rows(r.start, r.end),
                None,
                cfg.n_heads,
            )?;
            parts.push(o);
            attn.push(c);
        }
        let a = Tensor::concat_rows(&parts.iter().collect::<Vec<_>>())?;
        sum_into(
            &mut h,
            &linear(&a, lp(store, l, "attn.o.weight")?, lp(store, l, "attn.o.bias")?)?,
        );

        let (hf, ln_ffn) = layer_norm(
            &h,
            lp(store, l, "ffn_ln.gamma")?,
            lp(store, l, "ffn_ln.beta")?,
            DEFAULT_LN_EPS,
        )?;
        let up = linear(&hf, lp(store, l, "ffn.up.weight")?, lp(store, l, "ffn.up.bias")?)?;
        let act = gelu(&up);
        sum_into(
            &mut h,
            &linear(&act, lp(store, l, "ffn.down.weight")?, lp(store, l, "ffn.down.bias")?)?,
        );
        layers.push(LayerCache {
            ln_attn,
            hq,
            q,
            k,
            v,
            attn,
            a,
            ln_ffn,
            hf,
            up,
            act,
        });
    }
    let (out_normed, out_ln) = layer_norm(&h, p(store, "out_ln.gamma")?, p(store, "out_ln.beta")?, DEFAULT_LN_EPS)?;
    let out = linear(&out_normed, p(store, "out_proj.weight")?, p(store, "out_proj.bias")?)?;
    Ok((
        out,
        QFormerCache {
            ranges,
            frame_ln,
            frames_normed,
            layers,
            out_ln,
            out_normed,
        },
    ))
}

/// Adds requested parameter gradients and returns `d loss / d frames`.
pub(crate) fn qformer_backward(
    store: &ParameterStore,
    cfg: &QFormerConfig,
    cache: &QFormerCache,
    dout: &Tensor,
    grads: &mut GradBuffer,
) -> Result<Tensor> {
    let name = |n: &str| format!("{QFORMER}{n}");
    let nq = cfg.queries_per_window;
    add_grad(grads, &name("out_proj.weight"), || {
        linear_weight_grad(&cache.out_normed, dout)
    });
    add_grad(grads, &name("out_proj.bias"), || bias_grad(dout));
    let dn = linear_backward_input(p(store, "out_proj.weight")?, dout);
    let (mut dh, dg, db) = layer_norm_backward(&cache.out_ln, p(store, "out_ln.gamma")?, &dn);
    add_grad(grads, &name("out_ln.gamma"), || dg);
    add_grad(grads, &name("out_ln.beta"), || db);

    let mut dfn = Tensor::zeros(cache.frames_normed.shape());
    for l in (0..cfg.n_layers).rev() {
        let c = &cache.layers[l];
        let ln_ = |n: &str| format!("{QFORMER}layers.{l}.{n}");

        add_grad(grads, &ln_("ffn.down.weight"), || linear_weight_grad(&c.act, &dh));
        add_grad(grads, &ln_("ffn.down.bias"), || bias_grad(&dh));
        let dact = linear_backward_input(lp(store, l, "ffn.down.weight")?, &dh);
        let dup = gelu_backward(&c.up, &dact);
        add_grad(grads, &ln_("ffn.up.weight"), || linear_weight_grad(&c.hf, &dup));
        add_grad(grads, &ln_("ffn.up.bias"), || bias_grad(&dup));
        let dhf = linear_backward_input(lp(store, l, "ffn.up.weight")?, &dup);
        let (dx, dg, db) = layer_norm_backward(&c.ln_ffn, lp(store, l, "ffn_ln.gamma")?, &dhf);
        add_grad(grads, &ln_("ffn_ln.gamma"), || dg);
        add_grad(grads, &ln_("ffn_ln.beta"), || db);
        sum_into(&mut dh, &dx);

        add_grad(grads, &ln_("attn.o.weight"), || linear_weight_grad(&c.a, &dh));
        add_grad(grads, &ln_("attn.o.bias"), || bias_grad(&dh));
        let da = linear_backward_input(lp(store, l, "attn.o.weight")?, &dh);
        let dq_cols = c.q.cols();
        let mut dq = Tensor::zeros(c.q.shape());
        let mut dk = Tensor::zeros(c.k.shape());
        let mut dv = Tensor::zeros(c.v.shape());
        for (w, r) in cache.ranges.iter().enumerate() {
            let g = attention_backward(
                &c.q.slice_rows(w * nq, (w + 1) * nq),
                &c.k.slice_rows(r.start, r.end),
                &c.v.slice_rows(r.start, r.end),
                &c.attn[w],
                &da.slice_rows(w * nq, (w + 1) * nq),
            );
            dq.data_mut()[w * nq * dq_cols..(w + 1) * nq * dq_cols].copy_from_slice(g.dq.data());
            dk.data_mut()[r.start * dq_cols..r.end * dq_cols].copy_from_slice(g.dk.data());
            dv.data_mut()[r.start * dq_cols..r.end * dq_cols].copy_from_slice(g.dv.data());
        }
        for (t, dt) in [("k", &dk), ("v", &dv)] {
            add_grad(grads, &ln_(&format!("attn.{t}.weight")), || {
                linear_weight_grad(&cache.frames_normed, dt)
            });
            if t == "v" {
                add_grad(grads, &ln_("attn.v.bias"), || bias_grad(dt));
            }
            sum_into(
                &mut dfn,
                &linear_backward_input(lp(store, l, &format!("attn.{t}.weight"))?, dt),
            );
        }
        add_grad(grads, &ln_("attn.q.weight"), || linear_weight_grad(&c.hq, &dq));
        add_grad(grads, &ln_("attn.q.bias"), || bias_grad(&dq));
        let dhq = linear_backward_input(lp(store, l, "attn.q.weight")?, &dq);
        let (dx, dg, db) = layer_norm_backward(&c.ln_attn, lp(store, l, "attn_ln.gamma")?, &dhq);
        add_grad(grads, &ln_("attn_ln.gamma"), || dg);
        add_grad(grads, &ln_("attn_ln.beta"), || db);
        sum_into(&mut dh, &dx);
    }
    add_grad(grads, &name("query"), || {
        let mut g = Tensor::zeros(&[nq, dh.cols()]);
        for w in 0..cache.ranges.len() {
            sum_into(&mut g, &dh.slice_rows(w * nq, (w + 1) * nq));
        }
        g
    });
    let (dframes, dg, db) = layer_norm_backward(&cache.frame_ln, p(store, "frame_ln.gamma")?, &dfn);
    add_grad(grads, &name("frame_ln.gamma"), || dg);
    add_grad(grads, &name("frame_ln.beta"), || db);
    Ok(dframes)
}

/// The Q-Former on its own, over `[T, d_in]` frames.
#[derive(Clone, Debug, PartialEq)]
pub struct QFormer {
    pub config: QFormerConfig,
    pub d_in: usize,
    pub d_out: usize,
}

impl QFormer {
    pub fn new(config: QFormerConfig, d_in: usize, d_out: usize) -> Result<Self> {
        config.validate()?;
        if d_in == 0 || d_out == 0 {
            return Err(Error::Config("qformer: d_in and d_out must be >= 1".into()));
        }
        Ok(Self { config, d_in, d_out })
    }

    /// Fresh trainable parameters under `qformer.`.
    pub fn init_params(&self) -> Result<ParameterStore> {
        let mut store = ParameterStore::new();
        init_qformer(&mut store, &self.config, self.d_in, self.d_out)?;
        Ok(store)
    }

    pub fn forward(&self, store: &ParameterStore, frames: &Tensor) -> Result<Tensor> {
        Ok(qformer_forward(store, &self.config, frames)?.0)
    }

    /// Forward, then backward from `dout`. Adds requested parameter gradients
    /// and returns `(output, d loss / d frames)`.
    pub fn forward_backward(
        &self,
        store: &ParameterStore,
        frames: &Tensor,
        dout: &Tensor,
        grads: &mut GradBuffer,
    ) -> Result<(Tensor, Tensor)> {
        let (out, cache) = qformer_forward(store, &self.config, frames)?;
        if dout.shape() != out.shape() {
            return Err(Error::dim(
                "dout",
                format!("expected {:?}, got {:?}", out.shape(), dout.shape()),
            ));
        }
        let dframes = qformer_backward(store, &self.config, &cache, dout, grads)?;
        Ok((out, dframes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_cover_frames_in_order() {
        assert_eq!(window_ranges(5, 2).unwrap(), vec![0..2, 2..4, 4..5]);
        assert!(window_ranges(0, 3).unwrap().is_empty());
        assert!(window_ranges(4, 0).is_err());
    }

    #[test]
    fn token_count_matches_ceiling() {
        let cfg = QFormerConfig::default();
        assert_eq!(output_token_count(17, &cfg), 1);
        assert_eq!(output_token_count(18, &cfg), 2);
        let cfg = QFormerConfig {
            queries_per_window: 3,
            ..cfg
        };
        assert_eq!(output_token_count(35, &cfg), 9);
    }

    #[test]
    fn forward_shape() {
        let cfg = QFormerConfig {
            window_len_frames: 3,
            queries_per_window: 2,
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            seed: 1,
        };
        let mut s = ParameterStore::new();
        init_qformer(&mut s, &cfg, 4, 6).unwrap();
        let frames = Tensor::new(vec![7, 4], (0..28).map(|v| (v as Real * 0.37).sin()).collect()).unwrap();
        let (out, _) = qformer_forward(&s, &cfg, &frames).unwrap();
        assert_eq!(out.shape(), &[6, 6]);
        assert!(qformer_forward(&s, &cfg, &Tensor::zeros(&[2, 5])).is_err());
    }
}
