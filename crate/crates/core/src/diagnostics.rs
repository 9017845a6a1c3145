//! Finite-difference gradient checks over every hand-written backward pass.
//!
//! Each check treats its inputs as parameters too, so input gradients are
//! verified alongside weight gradients. Scalar losses for tensor-valued layers
//! are `sum(y * R)` with a fixed random `R`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{
    BridgeModel, DecoderConfig, EncoderConfig, LoraConfig, LoraTarget, ModelConfig, QFormer, QFormerConfig,
};
use crate::numerics::{
    attention, attention_backward, cross_entropy, grad_check, layer_norm, layer_norm_backward, linear, linear_backward,
    softmax, softmax_backward, AttentionMask, GradBuffer, ParameterStore, Tensor, DEFAULT_FD_STEP, DEFAULT_LN_EPS,
};
use crate::textkit::Vocab;
use crate::Real;

/// Largest accepted relative error.
pub const GRAD_TOLERANCE: Real = 1e-4;

pub const GRAD_CHECK_LAYERS: [&str; 8] = [
    "linear",
    "layer_norm",
    "softmax",
    "cross_entropy",
    "attention",
    "lora",
    "qformer",
    "model",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerCheck {
    pub layer: String,
    pub max_rel_error: Real,
    pub n_checked: usize,
    pub worst: Option<String>,
    pub passed: bool,
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: Real) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-scale..scale)).collect(),
    )
    .expect("shape")
}

fn store_of(items: Vec<(&str, Tensor)>) -> Result<ParameterStore> {
    let mut s = ParameterStore::new();
    for (n, t) in items {
        s.insert(n, t, true)?;
    }
    Ok(s)
}

fn dot(a: &Tensor, b: &Tensor) -> Real {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn add(g: &mut GradBuffer, name: &str, t: &Tensor) {
    g.add(name, t.data());
}

/// Tiny assembled model: encoders, two-layer Q-Former, two-layer decoder with
/// adapters on every projection, `d_model <= 16`.
pub fn tiny_model(use_audio_events: bool) -> Result<BridgeModel> {
    let vocab = Vocab::build(["a", "b", "c", "d", "translate", "to", "en", "hi"])?;
    let cfg = ModelConfig {
        speech_encoder: EncoderConfig {
            feature_dim_in: 3,
            d_model: 6,
            n_layers: 1,
            seed: 1,
            hop: 2,
        },
        audio_encoder: EncoderConfig {
            feature_dim_in: 3,
            d_model: 3,
            n_layers: 1,
            seed: 2,
            hop: 3,
        },
        use_audio_events,
        qformer: QFormerConfig {
            window_len_frames: 2,
            queries_per_window: 2,
            d_model: 4,
            n_layers: 2,
            n_heads: 2,
            seed: 3,
        },
        decoder: DecoderConfig {
            vocab_size: vocab.len(),
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            max_seq_len: 32,
            seed: 4,
        },
        lora: Some(LoraConfig {
            rank: 2,
            alpha: 4.0,
            targets: [LoraTarget::Q, LoraTarget::K, LoraTarget::V, LoraTarget::O]
                .into_iter()
                .collect(),
            init_seed: 5,
        }),
        prompts: Default::default(),
    };
    BridgeModel::new(cfg, vocab)
}

/// Replaces every adapter `B` with random values so adapter gradients are
/// exercised away from the zero initialization.
pub fn perturb_adapters(store: &mut ParameterStore, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = store
        .names()
        .filter(|n| n.ends_with(".lora.b"))
        .map(String::from)
        .collect();
    for n in names {
        for v in store.get_mut(&n)?.data_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
    }
    Ok(())
}

type LossFn<'a> = Box<dyn Fn(&ParameterStore, Option<&mut GradBuffer>) -> Result<Real> + 'a>;

fn check(layer: &str, store: &mut ParameterStore, f: LossFn<'_>, corrupt: bool) -> Result<LayerCheck> {
    // The corrupted fixture adds every analytic gradient twice.
    let report = grad_check(store, DEFAULT_FD_STEP, |s, g| match g {
        Some(g) if corrupt => {
            f(s, Some(&mut *g))?;
            f(s, Some(g))
        }
        g => f(s, g),
    })?;
    Ok(LayerCheck {
        layer: layer.to_string(),
        max_rel_error: report.max_rel_error,
        n_checked: report.n_checked,
        worst: report.worst.map(|(n, i)| format!("{n}[{i}]")),
        passed: report.max_rel_error <= GRAD_TOLERANCE,
    })
}

/// Runs one named check. `corrupt` swaps in a deliberately wrong backward.
pub fn check_layer(layer: &str, seed: u64, corrupt: bool) -> Result<LayerCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    match layer {
        "linear" => {
            let dy = rand_tensor(r, &[3, 5], 1.0);
            let mut s = store_of(vec![
                ("x", rand_tensor(r, &[3, 4], 1.0)),
                ("w", rand_tensor(r, &[4, 5], 1.0)),
                ("b", rand_tensor(r, &[5], 1.0)),
            ])?;
            let f = move |s: &ParameterStore, g: Option<&mut GradBuffer>| {
                let (x, w) = (s.get("x")?, s.get("w")?);
                let y = linear(x, w, s.get("b")?)?;
                if let Some(g) = g {
                    let lg = linear_backward(x, w, &dy);
                    add(g, "x", &lg.dx);
                    add(g, "w", &lg.dw);
                    add(g, "b", &lg.db);
                }
                Ok(dot(&y, &dy))
            };
            check(layer, &mut s, Box::new(f), corrupt)
        }
        "layer_norm" => {
            let dy = rand_tensor(r, &[3, 6], 1.0);
            let gamma = Tensor::vector((0..6).map(|_| 1.0 + r.random_range(-0.3..0.3)).collect());
            let mut s = store_of(vec![
                ("x", rand_tensor(r, &[3, 6], 2.0)),
                ("gamma", gamma),
                ("beta", rand_tensor(r, &[6], 0.5)),
            ])?;
            let f = move |s: &ParameterStore, g: Option<&mut GradBuffer>| {
                let gamma = s.get("gamma")?;
                let (y, cache) = layer_norm(s.get("x")?, gamma, s.get("beta")?, DEFAULT_LN_EPS)?;
                if let Some(g) = g {
                    let (dx, dg, db) = layer_norm_backward(&cache, gamma, &dy);
                    add(g, "x", &dx);
                    add(g, "gamma", &dg);
                    add(g, "beta", &db);
                }
                Ok(dot(&y, &dy))
            };
            check(layer, &mut s, Box::new(f), corrupt)
        }
        "softmax" => {
            let dy = rand_tensor(r, &[3, 5], 1.0);
            let mut s = store_of(vec![("x", rand_tensor(r, &[3, 5], 2.0))])?;
            let f = move |s: &ParameterStore, g: Option<&mut GradBuffer>| {
                let y = softmax(s.get("x")?);
                if let Some(g) = g {
                    add(g, "x", &softmax_backward(&y, &dy));
                }
                Ok(dot(&y, &dy))
            };
            check(layer, &mut s, Box::new(f), corrupt)
        }
        "cross_entropy" => {
            let mut s = store_of(vec![("logits", rand_tensor(r, &[4, 6], 2.0))])?;
            let f = |s: &ParameterStore, g: Option<&mut GradBuffer>| {
                let mask = [true, true, false, true];
                let (loss, dl) = cross_entropy(s.get("logits")?, &[1, 5, 0, 3], Some(&mask))?;
                if let Some(g) = g {
                    add(g, "logits", &dl);
                }
                Ok(loss)
            };
            check(layer, &mut s, Box::new(f), corrupt)
        }
        "attention" => {
            let dy = rand_tensor(r, &[4, 6], 1.0);
            let mut s = store_of(vec![
                ("q", rand_tensor(r, &[4, 6], 1.0)),
                ("k", rand_tensor(r, &[4, 6], 1.0)),
                ("v", rand_tensor(r, &[4, 6], 1.0)),
            ])?;
            let f = move |s: &ParameterStore, g: Option<&mut GradBuffer>| {
                let (q, k, v) = (s.get("q")?, s.get("k")?, s.get("v")?);
                let (y, cache) = attention(q, k, v, Some(&AttentionMask::causal(4)), 2)?;
                if let Some(g) = g {
                    let ag = attention_backward(q, k, v, &cache, &dy);
                    add(g, "q", &ag.dq);
                    add(g, "k", &ag.dk);
                    add(g, "v", &ag.dv);
                }
                Ok(dot(&y, &dy))
            };
            check(layer, &mut s, Box::new(f), corrupt)
        }
        "lora" => {
            let dy = rand_tensor(r, &[3, 5], 1.0);
            let mut s = store_of(vec![
                ("x", rand_tensor(r, &[3, 4], 1.0)),
                ("w", rand_tensor(r, &[4, 5], 1.0)),
                ("a", rand_tensor(r, &[2, 4], 1.0)),
                ("b", rand_tensor(r, &[5, 2], 1.0)),
            ])?;
            let f = move |s: &ParameterStore, g: Option<&mut GradBuffer>| {
                let (x, w) = (s.get("x")?, s.get("w")?);
                let adapter = Some((s.get("a")?, s.get("b")?, 2.0));
                let (y, u) = crate::model::adapted_forward(x, w, adapter)?;
                if let Some(g) = g {
                    let ag = crate::model::adapted_backward(x, w, adapter, u.as_ref(), &dy, (true, true, true));
                    add(g, "x", &ag.dx);
                    for (n, t) in [("w", ag.dw), ("a", ag.da), ("b", ag.db)] {
                        add(g, n, &t.expect("requested"));
                    }
                }
                Ok(dot(&y, &dy))
            };
            check(layer, &mut s, Box::new(f), corrupt)
        }
        "qformer" => {
            let cfg = QFormerConfig {
                window_len_frames: 2,
                queries_per_window: 2,
                d_model: 4,
                n_layers: 2,
                n_heads: 2,
                seed: 3,
            };
            // Five frames leave a one-frame remainder window.
            let qf = QFormer::new(cfg, 3, 6)?;
            let mut s = qf.init_params()?;
            s.insert("frames", rand_tensor(r, &[5, 3], 1.0), true)?;
            let dy = rand_tensor(r, &[6, 6], 1.0);
            let f = move |s: &ParameterStore, g: Option<&mut GradBuffer>| {
                let frames = s.get("frames")?;
                match g {
                    Some(g) => {
                        let (y, dframes) = qf.forward_backward(s, frames, &dy, g)?;
                        add(g, "frames", &dframes);
                        Ok(dot(&y, &dy))
                    }
                    None => Ok(dot(&qf.forward(s, frames)?, &dy)),
                }
            };
            check(layer, &mut s, Box::new(f), corrupt)
        }
        "model" => {
            let model = tiny_model(true)?;
            let mut s = model.init_params()?;
            perturb_adapters(&mut s, seed ^ 0x5eed)?;
            let names: Vec<String> = s.names().filter(|n| n.contains("encoder.")).map(String::from).collect();
            for n in names {
                s.set_trainable(&n, true)?;
            }
            let x = rand_tensor(r, &[9, 3], 1.0);
            let prompt = model.vocab().encode("translate en to hi")?;
            let target = model.vocab().encode("b d a")?;
            let f = move |s: &ParameterStore, g: Option<&mut GradBuffer>| model.loss(s, &x, &prompt, &target, g);
            check(layer, &mut s, Box::new(f), corrupt)
        }
        other => Err(crate::Error::Argument(format!(
            "unknown layer `{other}` (known: {})",
            GRAD_CHECK_LAYERS.join(", ")
        ))),
    }
}

/// Every check in [`GRAD_CHECK_LAYERS`] order.
pub fn gradient_suite(seed: u64, corrupt: Option<&str>) -> Result<Vec<LayerCheck>> {
    GRAD_CHECK_LAYERS
        .iter()
        .map(|l| check_layer(l, seed, corrupt == Some(*l)))
        .collect()
}
