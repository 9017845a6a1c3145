//! Frozen pre-LN causal decoder with optional adapters on its attention
//! projections.
//!
//! The input is `[audio tokens] ++ [text embeddings]`. Sinusoidal positions
//! restart at zero for the text segment, so the offset between a target
//! position and its prompt does not depend on the audio length.

use super::config::{DecoderConfig, LoraConfig, LoraTarget};
use super::lora::{adapted_backward, adapted_forward, Adapter};
use super::params::{add_grad, insert_all, ones, sum_into, zeros, Init};
use crate::error::{Error, Result};
use crate::numerics::{
    attention, attention_backward, gelu, gelu_backward, layer_norm, layer_norm_backward, linear_backward_input,
    linear_nobias, linear_weight_grad, AttentionCache, AttentionMask, GradBuffer, LayerNormCache, ParameterStore,
    Tensor, DEFAULT_LN_EPS,
};
use crate::Real;

pub const DECODER: &str = "decoder.";
/// Output head std is `LM_HEAD_GAIN / sqrt(d_model)`. A smaller head keeps the
/// random decoder's next-token distribution close to uniform.
const LM_HEAD_GAIN: Real = 0.7;
const TARGETS: [LoraTarget; 4] = [LoraTarget::Q, LoraTarget::K, LoraTarget::V, LoraTarget::O];

pub(crate) fn lora_param(layer: usize, target: LoraTarget, factor: &str) -> String {
    format!("{DECODER}layers.{layer}.attn.{}.lora.{factor}", target.name())
}

fn wname(layer: usize, n: &str) -> String {
    format!("{DECODER}layers.{layer}.{n}")
}

pub(crate) fn init_decoder(store: &mut ParameterStore, cfg: &DecoderConfig) -> Result<()> {
    let mut init = Init::new(cfg.seed);
    let d = cfg.d_model;
    let s = 1.0 / (d as Real).sqrt();
    let mut items = vec![("embed".to_string(), init.normal(&[cfg.vocab_size, d], 1.0))];
    for l in 0..cfg.n_layers {
        items.push((format!("layers.{l}.attn_ln.gamma"), ones(d)));
        items.push((format!("layers.{l}.attn_ln.beta"), zeros(&[d])));
        for t in TARGETS {
            items.push((format!("layers.{l}.attn.{}.weight", t.name()), init.normal(&[d, d], s)));
        }
        items.push((format!("layers.{l}.ffn_ln.gamma"), ones(d)));
        items.push((format!("layers.{l}.ffn_ln.beta"), zeros(&[d])));
        items.push((format!("layers.{l}.ffn.up.weight"), init.normal(&[d, 4 * d], s)));
        items.push((
            format!("layers.{l}.ffn.down.weight"),
            init.normal(&[4 * d, d], 1.0 / ((4 * d) as Real).sqrt()),
        ));
    }
    items.push(("final_ln.gamma".into(), ones(d)));
    items.push(("final_ln.beta".into(), zeros(&[d])));
    items.push((
        "lm_head.weight".into(),
        init.normal(&[d, cfg.vocab_size], LM_HEAD_GAIN * s),
    ));
    insert_all(store, DECODER, items, false)
}

/// `A ~ N(0, 1/d)` from the adapter seed; `B = 0`.
pub(crate) fn init_lora(store: &mut ParameterStore, cfg: &DecoderConfig, lora: &LoraConfig) -> Result<()> {
    let mut init = Init::new(lora.init_seed);
    let d = cfg.d_model;
    for l in 0..cfg.n_layers {
        for &t in &lora.targets {
            store.insert(
                lora_param(l, t, "a"),
                init.normal(&[lora.rank, d], 1.0 / (d as Real).sqrt()),
                true,
            )?;
            store.insert(lora_param(l, t, "b"), zeros(&[d, lora.rank]), true)?;
        }
    }
    Ok(())
}

/// Row `p` holds `sin(p / 10000^(2i/d))` in column `2i` and the cosine in `2i+1`.
pub fn sinusoidal_positions(n: usize, d: usize) -> Tensor {
    let mut out = vec![0.0; n * d];
    for p in 0..n {
        for i in (0..d).step_by(2) {
            let angle = p as Real / (10000.0 as Real).powf(i as Real / d as Real);
            out[p * d + i] = angle.sin();
            if i + 1 < d {
                out[p * d + i + 1] = angle.cos();
            }
        }
    }
    Tensor::new(vec![n, d], out).expect("positions shape")
}

struct LayerCache {
    ln_attn: LayerNormCache,
    h: Tensor,
    /// q, k, v outputs.
    qkv: [Tensor; 3],
    /// Low-rank activations per target in `TARGETS` order.
    lora_u: [Option<Tensor>; 4],
    attn: AttentionCache,
    a: Tensor,
    ln_ffn: LayerNormCache,
    h2: Tensor,
    up: Tensor,
    act: Tensor,
}

pub(crate) struct DecoderCache {
    n_audio: usize,
    text_ids: Vec<usize>,
    start: usize,
    layers: Vec<LayerCache>,
    final_ln: LayerNormCache,
    hf: Tensor,
}

fn adapter<'a>(
    store: &'a ParameterStore,
    lora: Option<&LoraConfig>,
    l: usize,
    t: LoraTarget,
) -> Result<Option<Adapter<'a>>> {
    match lora {
        Some(cfg) if cfg.targets.contains(&t) => Ok(Some((
            store.get(&lora_param(l, t, "a"))?,
            store.get(&lora_param(l, t, "b"))?,
            cfg.scaling(),
        ))),
        _ => Ok(None),
    }
}

/// Runs the decoder over `audio ++ embed(text_ids)` and returns logits for
/// positions `start..`.
pub(crate) fn decoder_forward_rows(
    store: &ParameterStore,
    cfg: &DecoderConfig,
    lora: Option<&LoraConfig>,
    audio: &Tensor,
    text_ids: &[usize],
    start: usize,
) -> Result<(Tensor, DecoderCache)> {
    let d = cfg.d_model;
    if audio.rows() > 0 && (audio.shape().len() != 2 || audio.cols() != d) {
        return Err(Error::dim(
            "audio_tokens",
            format!("expected [N, {d}], got {:?}", audio.shape()),
        ));
    }
    if let Some(&bad) = text_ids.iter().find(|&&t| t >= cfg.vocab_size) {
        return Err(Error::Index(format!(
            "token id {bad} outside vocabulary of {}",
            cfg.vocab_size
        )));
    }
    let n_audio = audio.rows();
    let n = n_audio + text_ids.len();
    if n > cfg.max_seq_len {
        return Err(Error::Capacity {
            needed: n,
            max: cfg.max_seq_len,
        });
    }
    if start >= n {
        return Err(Error::Argument(format!("no positions to score ({start} >= {n})")));
    }

    let embed = store.get(&format!("{DECODER}embed"))?;
    let pe = sinusoidal_positions(n_audio.max(text_ids.len()), d);
    let mut x = Tensor::zeros(&[n, d]);
    for r in 0..n_audio {
        for ((o, a), p) in x.row_mut(r).iter_mut().zip(audio.row(r)).zip(pe.row(r)) {
            *o = a + p;
        }
    }
    for (i, &t) in text_ids.iter().enumerate() {
        for ((o, e), p) in x.row_mut(n_audio + i).iter_mut().zip(embed.row(t)).zip(pe.row(i)) {
            *o = e + p;
        }
    }

    let mask = AttentionMask::causal(n);
    let mut layers = Vec::with_capacity(cfg.n_layers);
    for l in 0..cfg.n_layers {
        let (h, ln_attn) = layer_norm(
            &x,
            store.get(&wname(l, "attn_ln.gamma"))?,
            store.get(&wname(l, "attn_ln.beta"))?,
            DEFAULT_LN_EPS,
        )?;
        let mut lora_u: [Option<Tensor>; 4] = Default::default();
        let mut outs = Vec::with_capacity(3);
        for (ti, &t) in TARGETS[..3].iter().enumerate() {
            let w = store.get(&wname(l, &format!("attn.{}.weight", t.name())))?;
            let (y, u) = adapted_forward(&h, w, adapter(store, lora, l, t)?)?;
            outs.push(y);
            lora_u[ti] = u;
        }
        let qkv: [Tensor; 3] = outs.try_into().expect("three projections");
        let (a, attn) = attention(&qkv[0], &qkv[1], &qkv[2], Some(&mask), cfg.n_heads)?;
        let (o, u) = adapted_forward(
            &a,
            store.get(&wname(l, "attn.o.weight"))?,
            adapter(store, lora, l, LoraTarget::O)?,
        )?;
        lora_u[3] = u;
        sum_into(&mut x, &o);

        let (h2, ln_ffn) = layer_norm(
            &x,
            store.get(&wname(l, "ffn_ln.gamma"))?,
            store.get(&wname(l, "ffn_ln.beta"))?,
            DEFAULT_LN_EPS,
        )?;
        let up = linear_nobias(&h2, store.get(&wname(l, "ffn.up.weight"))?)?;
        let act = gelu(&up);
        sum_into(&mut x, &linear_nobias(&act, store.get(&wname(l, "ffn.down.weight"))?)?);
        layers.push(LayerCache {
            ln_attn,
            h,
            qkv,
            lora_u,
            attn,
            a,
            ln_ffn,
            h2,
            up,
            act,
        });
    }
    let (hf, final_ln) = layer_norm(
        &x.slice_rows(start, n),
        store.get(&format!("{DECODER}final_ln.gamma"))?,
        store.get(&format!("{DECODER}final_ln.beta"))?,
        DEFAULT_LN_EPS,
    )?;
    let logits = linear_nobias(&hf, store.get(&format!("{DECODER}lm_head.weight"))?)?;
    Ok((
        logits,
        DecoderCache {
            n_audio,
            text_ids: text_ids.to_vec(),
            start,
            layers,
            final_ln,
            hf,
        },
    ))
}

/// Adds requested parameter gradients and returns `d loss / d audio_tokens`.
pub(crate) fn decoder_backward(
    store: &ParameterStore,
    cfg: &DecoderConfig,
    lora: Option<&LoraConfig>,
    cache: &DecoderCache,
    dlogits: &Tensor,
    grads: &mut GradBuffer,
) -> Result<Tensor> {
    let d = cfg.d_model;
    let n = cache.n_audio + cache.text_ids.len();
    let head = format!("{DECODER}lm_head.weight");
    add_grad(grads, &head, || linear_weight_grad(&cache.hf, dlogits));
    let dhf = linear_backward_input(store.get(&head)?, dlogits);
    let fg = format!("{DECODER}final_ln.gamma");
    let (dxs, dg, db) = layer_norm_backward(&cache.final_ln, store.get(&fg)?, &dhf);
    add_grad(grads, &fg, || dg);
    add_grad(grads, &format!("{DECODER}final_ln.beta"), || db);
    let mut dx = Tensor::zeros(&[n, d]);
    dx.data_mut()[cache.start * d..].copy_from_slice(dxs.data());

    for l in (0..cfg.n_layers).rev() {
        let c = &cache.layers[l];
        let down = wname(l, "ffn.down.weight");
        add_grad(grads, &down, || linear_weight_grad(&c.act, &dx));
        let dact = linear_backward_input(store.get(&down)?, &dx);
        let dup = gelu_backward(&c.up, &dact);
        let up = wname(l, "ffn.up.weight");
        add_grad(grads, &up, || linear_weight_grad(&c.h2, &dup));
        let dh2 = linear_backward_input(store.get(&up)?, &dup);
        let g2 = wname(l, "ffn_ln.gamma");
        let (dres, dg, db) = layer_norm_backward(&c.ln_ffn, store.get(&g2)?, &dh2);
        add_grad(grads, &g2, || dg);
        add_grad(grads, &wname(l, "ffn_ln.beta"), || db);
        sum_into(&mut dx, &dres);

        let mut dh = Tensor::zeros(&[n, d]);
        let proj = |t: LoraTarget,
                    input: &Tensor,
                    u: Option<&Tensor>,
                    dy: &Tensor,
                    grads: &mut GradBuffer|
         -> Result<Tensor> {
            let wn = wname(l, &format!("attn.{}.weight", t.name()));
            let ad = adapter(store, lora, l, t)?;
            let (an, bn) = (lora_param(l, t, "a"), lora_param(l, t, "b"));
            let want = (
                grads.wants(&wn),
                ad.is_some() && grads.wants(&an),
                ad.is_some() && grads.wants(&bn),
            );
            let g = adapted_backward(input, store.get(&wn)?, ad, u, dy, want);
            if let Some(dw) = g.dw {
                grads.add(&wn, dw.data());
            }
            if let Some(da) = g.da {
                grads.add(&an, da.data());
            }
            if let Some(db) = g.db {
                grads.add(&bn, db.data());
            }
            Ok(g.dx)
        };
        let da = proj(LoraTarget::O, &c.a, c.lora_u[3].as_ref(), &dx, grads)?;
        let ag = attention_backward(&c.qkv[0], &c.qkv[1], &c.qkv[2], &c.attn, &da);
        for (ti, dy) in [ag.dq, ag.dk, ag.dv].iter().enumerate() {
            let g = proj(TARGETS[ti], &c.h, c.lora_u[ti].as_ref(), dy, grads)?;
            sum_into(&mut dh, &g);
        }
        let g1 = wname(l, "attn_ln.gamma");
        let (dres, dg, db) = layer_norm_backward(&c.ln_attn, store.get(&g1)?, &dh);
        add_grad(grads, &g1, || dg);
        add_grad(grads, &wname(l, "attn_ln.beta"), || db);
        sum_into(&mut dx, &dres);
    }

    let embed = format!("{DECODER}embed");
    add_grad(grads, &embed, || {
        let mut g = Tensor::zeros(&[cfg.vocab_size, d]);
        for (i, &t) in cache.text_ids.iter().enumerate() {
            for (o, v) in g.row_mut(t).iter_mut().zip(dx.row(cache.n_audio + i)) {
                *o += v;
            }
        }
        g
    });
    Ok(dx.slice_rows(0, cache.n_audio))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positions_start_with_sin_zero_cos_one() {
        let pe = sinusoidal_positions(3, 4);
        assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0]);
        assert!((pe.get(&[1, 0]) - 1.0_f64.sin() as Real).abs() < 1e-12);
        assert!((pe.get(&[2, 2]) - (2.0 / 100.0 as Real).sin()).abs() < 1e-12);
    }

    fn cfg() -> DecoderConfig {
        DecoderConfig {
            vocab_size: 7,
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            max_seq_len: 10,
            seed: 1,
        }
    }

    #[test]
    fn capacity_and_vocab_are_enforced() {
        let mut s = ParameterStore::new();
        init_decoder(&mut s, &cfg()).unwrap();
        let audio = Tensor::zeros(&[6, 8]);
        let err = decoder_forward_rows(&s, &cfg(), None, &audio, &[1, 2, 3, 4, 5], 6)
            .err()
            .unwrap();
        assert!(matches!(err, Error::Capacity { needed: 11, max: 10 }));
        let err = decoder_forward_rows(&s, &cfg(), None, &audio, &[9], 6).err().unwrap();
        assert!(matches!(err, Error::Index(_)));
        let (logits, _) = decoder_forward_rows(&s, &cfg(), None, &audio, &[1, 2], 6).unwrap();
        assert_eq!(logits.shape(), &[2, 7]);
    }

    #[test]
    fn causal_prefix_logits_do_not_see_the_future() {
        let mut s = ParameterStore::new();
        init_decoder(&mut s, &cfg()).unwrap();
        let audio = Tensor::filled(&[2, 8], 0.3);
        let (a, _) = decoder_forward_rows(&s, &cfg(), None, &audio, &[1, 4, 5], 2).unwrap();
        let (b, _) = decoder_forward_rows(&s, &cfg(), None, &audio, &[1, 4, 6, 3], 2).unwrap();
        assert!(a.slice_rows(0, 2).max_abs_diff(&b.slice_rows(0, 2)) < 1e-12);
    }
}
