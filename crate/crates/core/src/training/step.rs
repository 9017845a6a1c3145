use super::data::Example;
use super::parallel::par_map;
use super::profile::StageProfile;
use super::schedule::{lr_at, ScheduleConfig};
use super::state::TrainState;
use crate::error::{Error, Result};
use crate::model::BridgeModel;
use crate::numerics::{adam_step, GradBuffer, ParameterStore};
use crate::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepMetrics {
    /// Stage step the update used, before incrementing.
    pub stage_step: usize,
    pub global_step: usize,
    pub lr: f64,
    /// Mean loss over the update's examples.
    pub loss: f64,
}

/// One parameter update from `batch`, which holds up to
/// `batch_size * grad_accum_steps` examples split into micro-batches of
/// `batch_size`.
///
/// The applied gradient is the mean of micro-batch mean gradients weighted by
/// micro-batch size, which is the plain mean over `batch`. Per-example
/// gradients may run on `threads` threads but are always summed in batch
/// order.
pub fn train_step(
    model: &BridgeModel,
    store: &mut ParameterStore,
    state: &mut TrainState,
    batch: &[&Example],
    stage: &StageProfile,
    schedule: &ScheduleConfig,
    threads: usize,
) -> Result<StepMetrics> {
    stage.validate()?;
    if batch.is_empty() || batch.len() > stage.examples_per_step() {
        return Err(Error::Argument(format!(
            "update needs 1..={} examples, got {}",
            stage.examples_per_step(),
            batch.len()
        )));
    }
    let lr = lr_at(state.stage_step, schedule)?;
    let ids = || batch.iter().map(|e| e.id.as_str()).collect::<Vec<_>>().join(", ");

    let frozen = &*store;
    let results = par_map(batch, threads, |ex| -> Result<(Real, GradBuffer)> {
        let mut g = GradBuffer::for_trainable(frozen);
        let loss = model.loss(frozen, &ex.features, &ex.prompt, &ex.target, Some(&mut g))?;
        Ok((loss, g))
    });

    let n = batch.len() as Real;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(batch.len());
    for (ex, r) in batch.iter().zip(results) {
        let (loss, g) = r?;
        if !loss.is_finite() || !g.all_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss or gradient at step {} on utterance `{}` (batch: {})",
                state.global_step,
                ex.id,
                ids()
            )));
        }
        total += loss as f64;
        grads.push(g);
    }
    store.clear_grads();
    for micro in grads.chunks(stage.batch_size) {
        let weight = micro.len() as Real / n;
        for g in micro {
            store.accumulate(g, weight / micro.len() as Real)?;
        }
    }
    adam_step(store, lr as Real)?;

    let metrics = StepMetrics {
        stage_step: state.stage_step,
        global_step: state.global_step,
        lr,
        loss: total / batch.len() as f64,
    };
    state.stage_step += 1;
    state.global_step += 1;
    Ok(metrics)
}
