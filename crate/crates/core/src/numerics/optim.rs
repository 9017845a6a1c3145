use super::store::{AdamState, ParameterStore, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
use crate::error::{Error, Result};
use crate::Real;

/// One bias-corrected Adam update over every trainable parameter.
///
/// Frozen parameters are never touched. All gradient accumulators are cleared
/// afterwards. Fails without mutating anything if a trainable parameter has no
/// gradient.
pub fn adam_step(store: &mut ParameterStore, lr: Real) -> Result<()> {
    let names: Vec<String> = store.trainable_names().map(str::to_string).collect();
    for name in &names {
        if store.get(name)?.grad().is_none() {
            return Err(Error::State(format!("trainable parameter `{name}` has no gradient")));
        }
    }
    for name in &names {
        let tensor = store.get(name)?;
        let g = tensor.grad().expect("checked above").to_vec();
        let n = g.len();
        let mut state = store.optimizer_state(name).cloned().unwrap_or(AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        });
        state.step += 1;
        let t = state.step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        let param = store.get_mut(name)?;
        for (i, (p, &gi)) in param.data_mut().iter_mut().zip(&g).enumerate() {
            state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * gi;
            state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * gi * gi;
            let m_hat = state.m[i] / bc1;
            let v_hat = state.v[i] / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
        store.restore_optimizer_state(name, state)?;
    }
    store.clear_grads();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn store_with_grad(g: &[Real], trainable: bool) -> ParameterStore {
        let mut s = ParameterStore::new();
        let mut t = Tensor::vector(vec![1.0; g.len()]);
        t.accumulate_grad(g, 1.0).unwrap();
        s.insert("p", t, trainable).unwrap();
        s
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut s = store_with_grad(&[0.0, 0.0], true);
        adam_step(&mut s, 0.1).unwrap();
        assert_eq!(s.get("p").unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let g = [0.5, -2.0, 1e-3];
        let mut s = store_with_grad(&g, true);
        let lr = 0.01;
        adam_step(&mut s, lr).unwrap();
        for (p, gi) in s.get("p").unwrap().data().iter().zip(g) {
            let expect = 1.0 - lr * gi / (gi.abs() + ADAM_EPS);
            assert!((p - expect).abs() < 1e-15);
            assert!((p - (1.0 - lr * gi.signum())).abs() < 1e-7);
        }
        assert!(s.get("p").unwrap().grad().is_none());
        assert_eq!(s.optimizer_state("p").unwrap().step, 1);
    }

    #[test]
    fn frozen_parameter_is_bit_identical() {
        let mut s = store_with_grad(&[3.0, -1.0], false);
        let before = s.clone();
        adam_step(&mut s, 0.5).unwrap();
        assert!(s.values_bit_identical(&before, "p"));
        assert!(s.optimizer_state("p").is_none());
    }

    #[test]
    fn missing_gradient_is_a_state_error() {
        let mut s = ParameterStore::new();
        s.insert("p", Tensor::vector(vec![1.0]), true).unwrap();
        assert!(matches!(adam_step(&mut s, 0.1), Err(Error::State(_))));
    }
}
