use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::numerics::{GradBuffer, ParameterStore, Tensor};
use crate::Real;

/// Seeded Gaussian initializer; one per component so components never share
/// a random stream.
pub(crate) struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn normal(&mut self, shape: &[usize], std: Real) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                z as Real * std
            })
            .collect();
        Tensor::new(shape.to_vec(), data).expect("shape matches data")
    }
}

pub(crate) fn ones(n: usize) -> Tensor {
    Tensor::filled(&[n], 1.0)
}

pub(crate) fn zeros(shape: &[usize]) -> Tensor {
    Tensor::zeros(shape)
}

/// Inserts `(name, tensor)` pairs under `prefix` with one trainable flag.
pub(crate) fn insert_all(
    store: &mut ParameterStore,
    prefix: &str,
    items: Vec<(String, Tensor)>,
    trainable: bool,
) -> Result<()> {
    for (name, t) in items {
        store.insert(format!("{prefix}{name}"), t, trainable)?;
    }
    Ok(())
}

/// Computes and adds a gradient only when `name` was requested.
pub(crate) fn add_grad(grads: &mut GradBuffer, name: &str, f: impl FnOnce() -> Tensor) {
    if grads.wants(name) {
        grads.add(name, f().data());
    }
}

pub(crate) fn sum_into(acc: &mut Tensor, other: &Tensor) {
    for (a, b) in acc.data_mut().iter_mut().zip(other.data()) {
        *a += b;
    }
}
