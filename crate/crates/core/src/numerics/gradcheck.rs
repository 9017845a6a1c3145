use super::store::{GradBuffer, ParameterStore};
use crate::error::{Error, Result};
use crate::Real;

pub const DEFAULT_FD_STEP: Real = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: Real,
    /// Parameter name and flat index of the worst element.
    pub worst: Option<(String, usize)>,
    pub n_checked: usize,
}

/// Relative error with the denominator floored at `1e-8`.
pub fn relative_error(analytic: Real, numeric: Real) -> Real {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the analytic gradient of `f` against central differences over
/// every element of every trainable parameter.
///
/// `f(store, Some(buf))` must return the loss and add `d loss / d param` into
/// `buf`; `f(store, None)` only returns the loss.
pub fn grad_check<F>(store: &mut ParameterStore, h: Real, mut f: F) -> Result<GradCheckReport>
where
    F: FnMut(&ParameterStore, Option<&mut GradBuffer>) -> Result<Real>,
{
    let mut buf = GradBuffer::for_trainable(store);
    let base = f(store, Some(&mut buf))?;
    if !base.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {base}")));
    }
    let names: Vec<String> = store.trainable_names().map(str::to_string).collect();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        n_checked: 0,
    };
    for name in names {
        let analytic = buf.get(&name).expect("requested above").to_vec();
        for (i, &a) in analytic.iter().enumerate() {
            let orig = store.get(&name)?.data()[i];
            store.get_mut(&name)?.data_mut()[i] = orig + h;
            let plus = f(store, None)?;
            store.get_mut(&name)?.data_mut()[i] = orig - h;
            let minus = f(store, None)?;
            store.get_mut(&name)?.data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss while perturbing `{name}`[{i}]"
                )));
            }
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(a, numeric);
            report.n_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), i));
            }
        }
    }
    Ok(report)
}
