//! Frozen audio encoders: mean-pool `hop` input frames, project to `d_model`,
//! then residual tanh blocks and a final layer norm.

use super::config::EncoderConfig;
use super::params::{add_grad, insert_all, ones, sum_into, zeros, Init};
use crate::error::{Error, Result};
use crate::numerics::{
    bias_grad, layer_norm, layer_norm_backward, linear, linear_backward_input, linear_weight_grad, tanh, tanh_backward,
    GradBuffer, LayerNormCache, ParameterStore, Tensor, DEFAULT_LN_EPS,
};
use crate::Real;

pub const SPEECH_ENCODER: &str = "speech_encoder.";
pub const AUDIO_ENCODER: &str = "audio_encoder.";

pub(crate) fn init_encoder(store: &mut ParameterStore, prefix: &str, cfg: &EncoderConfig) -> Result<()> {
    let mut init = Init::new(cfg.seed);
    let (fin, d) = (cfg.feature_dim_in, cfg.d_model);
    let mut items = vec![
        (
            "proj.weight".to_string(),
            init.normal(&[fin, d], 1.0 / (fin as Real).sqrt()),
        ),
        ("proj.bias".to_string(), zeros(&[d])),
    ];
    for l in 0..cfg.n_layers {
        items.push((
            format!("layers.{l}.weight"),
            init.normal(&[d, d], 1.0 / (d as Real).sqrt()),
        ));
        items.push((format!("layers.{l}.bias"), zeros(&[d])));
    }
    items.push(("ln.gamma".into(), ones(d)));
    items.push(("ln.beta".into(), zeros(&[d])));
    insert_all(store, prefix, items, false)
}

/// Averages consecutive groups of `hop` rows; the last group may be shorter.
pub fn mean_pool(x: &Tensor, hop: usize) -> Tensor {
    let (t, f) = (x.rows(), x.cols());
    let n = t.div_ceil(hop);
    let mut out = vec![0.0; n * f];
    for i in 0..n {
        let rows = i * hop..((i + 1) * hop).min(t);
        let inv = 1.0 / rows.len() as Real;
        for r in rows {
            for (o, v) in out[i * f..(i + 1) * f].iter_mut().zip(x.row(r)) {
                *o += v * inv;
            }
        }
    }
    Tensor::new(vec![n, f], out).expect("pooled shape")
}

pub(crate) struct EncoderCache {
    pooled: Tensor,
    /// Input to each residual block.
    hidden: Vec<Tensor>,
    /// `tanh` output of each residual block.
    act: Vec<Tensor>,
    ln: LayerNormCache,
}

pub(crate) fn encoder_forward(
    store: &ParameterStore,
    prefix: &str,
    cfg: &EncoderConfig,
    features: &Tensor,
) -> Result<(Tensor, EncoderCache)> {
    if features.shape().len() != 2 || features.cols() != cfg.feature_dim_in {
        return Err(Error::dim(
            "features",
            format!("expected [T, {}], got {:?}", cfg.feature_dim_in, features.shape()),
        ));
    }
    if features.rows() == 0 {
        return Err(Error::Argument("features have no frames".into()));
    }
    let p = |n: &str| store.get(&format!("{prefix}{n}"));
    let pooled = mean_pool(features, cfg.hop);
    let mut h = linear(&pooled, p("proj.weight")?, p("proj.bias")?)?;
    let mut hidden = Vec::with_capacity(cfg.n_layers);
    let mut act = Vec::with_capacity(cfg.n_layers);
    for l in 0..cfg.n_layers {
        let pre = linear(&h, p(&format!("layers.{l}.weight"))?, p(&format!("layers.{l}.bias"))?)?;
        let a = tanh(&pre);
        let mut next = h.clone();
        sum_into(&mut next, &a);
        hidden.push(h);
        act.push(a);
        h = next;
    }
    let (y, ln) = layer_norm(&h, p("ln.gamma")?, p("ln.beta")?, DEFAULT_LN_EPS)?;
    Ok((
        y,
        EncoderCache {
            pooled,
            hidden,
            act,
            ln,
        },
    ))
}

/// Parameter gradients only; nothing upstream of the features is trainable.
pub(crate) fn encoder_backward(
    store: &ParameterStore,
    prefix: &str,
    cfg: &EncoderConfig,
    cache: &EncoderCache,
    dy: &Tensor,
    grads: &mut GradBuffer,
) -> Result<()> {
    let name = |n: &str| format!("{prefix}{n}");
    let (mut dh, dg, db) = layer_norm_backward(&cache.ln, store.get(&name("ln.gamma"))?, dy);
    add_grad(grads, &name("ln.gamma"), || dg);
    add_grad(grads, &name("ln.beta"), || db);
    for l in (0..cfg.n_layers).rev() {
        let dpre = tanh_backward(&cache.act[l], &dh);
        let w = name(&format!("layers.{l}.weight"));
        add_grad(grads, &w, || linear_weight_grad(&cache.hidden[l], &dpre));
        add_grad(grads, &name(&format!("layers.{l}.bias")), || bias_grad(&dpre));
        sum_into(&mut dh, &linear_backward_input(store.get(&w)?, &dpre));
    }
    add_grad(grads, &name("proj.weight"), || linear_weight_grad(&cache.pooled, &dh));
    add_grad(grads, &name("proj.bias"), || bias_grad(&dh));
    Ok(())
}

/// Runs a freshly initialized encoder. Output is a pure function of the
/// features and `cfg.seed`.
pub fn encode_speech(features: &Tensor, cfg: &EncoderConfig) -> Result<Tensor> {
    cfg.validate("encoder")?;
    let mut store = ParameterStore::new();
    init_encoder(&mut store, SPEECH_ENCODER, cfg)?;
    Ok(encoder_forward(&store, SPEECH_ENCODER, cfg, features)?.0)
}

/// Truncates both streams to the shorter one and concatenates features.
pub fn fuse_features(speech: &Tensor, events: Option<&Tensor>) -> Result<Tensor> {
    if speech.rows() == 0 {
        return Err(Error::dim("speech", "zero-length stream"));
    }
    let Some(ev) = events else {
        return Ok(speech.clone());
    };
    if ev.rows() == 0 {
        return Err(Error::dim("audio_events", "zero-length stream"));
    }
    let n = speech.rows().min(ev.rows());
    let (ds, de) = (speech.cols(), ev.cols());
    let mut data = Vec::with_capacity(n * (ds + de));
    for r in 0..n {
        data.extend_from_slice(speech.row(r));
        data.extend_from_slice(ev.row(r));
    }
    Tensor::new(vec![n, ds + de], data)
}

/// Splits a fused gradient back into per-stream gradients, zero-padding rows
/// that were truncated away.
pub(crate) fn split_fused_grad(d: &Tensor, speech_rows: usize, ds: usize, event_rows: usize) -> (Tensor, Tensor) {
    let de = d.cols() - ds;
    let mut gs = Tensor::zeros(&[speech_rows, ds]);
    let mut ge = Tensor::zeros(&[event_rows, de]);
    for r in 0..d.rows() {
        gs.row_mut(r).copy_from_slice(&d.row(r)[..ds]);
        ge.row_mut(r).copy_from_slice(&d.row(r)[ds..]);
    }
    (gs, ge)
}
