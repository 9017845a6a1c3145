use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::data::Example;
use super::eval::{evaluate_dev, DevReport};
use super::freeze::apply_freeze_policy;
use super::profile::{StageProfile, TrainProfile};
use super::state::{Stage, TrainState};
use super::step::train_step;
use crate::error::{Error, Result};
use crate::model::BridgeModel;
use crate::numerics::ParameterStore;

/// One line of the stage log. `step` indexes the stage schedule; `epoch`
/// counts over the whole run. Dev metrics ride on the last update of an epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogRecord {
    pub stage: Stage,
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev_bleu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev_loss: Option<f64>,
}

pub fn log_to_jsonl(log: &[LogRecord]) -> Result<String> {
    let mut out = String::new();
    for r in log {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_log(path: impl AsRef<Path>, log: &[LogRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(log_to_jsonl(log)?.as_bytes())
        .map_err(|e| Error::io(path, e))
}

/// Seen by the epoch callback after each dev evaluation.
pub struct EpochEnd<'a> {
    pub stage: Stage,
    pub state: &'a TrainState,
    pub store: &'a ParameterStore,
    pub dev: &'a DevReport,
    /// New strict best over the whole run.
    pub is_best: bool,
}

#[derive(Clone, Debug)]
pub struct StageOutcome {
    pub stage: Stage,
    pub n_examples: usize,
    pub steps: usize,
    /// Parameters the stage started from.
    pub initial: ParameterStore,
    /// Parameters at the stage's best dev BLEU (earliest on ties).
    pub best: ParameterStore,
    pub best_dev_bleu: f64,
    pub dev_bleu_per_epoch: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct CurriculumResult {
    pub stages: Vec<StageOutcome>,
    pub log: Vec<LogRecord>,
    /// Best dev-BLEU parameters over the whole run.
    pub best: ParameterStore,
    /// Parameters after the last update.
    pub last: ParameterStore,
    pub state: TrainState,
}

/// Runs the short stage then, from the short stage's best checkpoint, the
/// long stage. With `two_stage` off every example trains in one stage with
/// the `short` profile. An empty long bucket skips the long stage.
#[allow(clippy::too_many_arguments)]
pub fn run_curriculum(
    model: &BridgeModel,
    store: ParameterStore,
    short: &[Example],
    long: &[Example],
    dev: &[Example],
    profile: &TrainProfile,
    threads: usize,
    on_epoch: &mut dyn FnMut(&EpochEnd) -> Result<()>,
) -> Result<CurriculumResult> {
    profile.validate()?;
    if dev.is_empty() {
        return Err(Error::Config("dev set is empty".into()));
    }
    let mut plan: Vec<(Stage, Vec<&Example>, &StageProfile)> = Vec::new();
    if profile.two_stage {
        if short.is_empty() {
            return Err(Error::Config("short bucket is empty".into()));
        }
        plan.push((Stage::Short, short.iter().collect(), &profile.short));
        if !long.is_empty() {
            plan.push((Stage::Long, long.iter().collect(), &profile.long));
        }
    } else {
        let all: Vec<&Example> = short.iter().chain(long).collect();
        if all.is_empty() {
            return Err(Error::Config("no training examples".into()));
        }
        plan.push((Stage::Single, all, &profile.short));
    }

    let mut run = Run {
        model,
        dev,
        profile,
        threads,
        state: TrainState::new(plan[0].0, profile.seed),
        log: Vec::new(),
        best: store.clone(),
    };
    let mut store = store;
    let mut stages: Vec<StageOutcome> = Vec::new();
    for (stage, examples, stage_profile) in plan {
        if let Some(prev) = stages.last() {
            store = prev.best.clone();
            if profile.reset_optimizer_between_stages {
                store.reset_optimizer();
            }
        }
        let outcome = run.stage(stage, &examples, stage_profile, &mut store, on_epoch)?;
        stages.push(outcome);
    }
    Ok(CurriculumResult {
        stages,
        log: run.log,
        best: run.best,
        last: store,
        state: run.state,
    })
}

struct Run<'a> {
    model: &'a BridgeModel,
    dev: &'a [Example],
    profile: &'a TrainProfile,
    threads: usize,
    state: TrainState,
    log: Vec<LogRecord>,
    best: ParameterStore,
}

impl Run<'_> {
    fn stage(
        &mut self,
        stage: Stage,
        examples: &[&Example],
        sp: &StageProfile,
        store: &mut ParameterStore,
        on_epoch: &mut dyn FnMut(&EpochEnd) -> Result<()>,
    ) -> Result<StageOutcome> {
        let schedule = sp.resolved_schedule(examples.len())?;
        self.state.stage = stage;
        self.state.stage_step = 0;
        let initial = store.clone();
        let mut best: Option<(f64, ParameterStore)> = None;
        let mut per_epoch = Vec::with_capacity(sp.epochs);
        let mut order: Vec<usize> = (0..examples.len()).collect();
        for _ in 0..sp.epochs {
            apply_freeze_policy(store, &self.profile.freeze, self.state.epoch)?;
            order.shuffle(&mut self.state.rng);
            for chunk in order.chunks(sp.examples_per_step()) {
                let batch: Vec<&Example> = chunk.iter().map(|&i| examples[i]).collect();
                let m = train_step(self.model, store, &mut self.state, &batch, sp, &schedule, self.threads)?;
                self.log.push(LogRecord {
                    stage,
                    step: m.stage_step,
                    epoch: self.state.epoch,
                    lr: m.lr,
                    loss: m.loss,
                    dev_bleu: None,
                    dev_loss: None,
                });
            }
            let dev = evaluate_dev(
                self.model,
                store,
                self.dev,
                self.profile.max_new_tokens,
                self.threads,
                self.profile.cot,
            )?;
            if let Some(last) = self.log.last_mut() {
                last.dev_bleu = Some(dev.bleu);
                last.dev_loss = Some(dev.cross_entropy);
            }
            per_epoch.push(dev.bleu);
            if best.as_ref().is_none_or(|(b, _)| dev.bleu > *b) {
                best = Some((dev.bleu, store.clone()));
            }
            let is_best = self.state.observe_dev_bleu(dev.bleu);
            if is_best {
                self.best = store.clone();
            }
            self.state.epoch += 1;
            on_epoch(&EpochEnd {
                stage,
                state: &self.state,
                store,
                dev: &dev,
                is_best,
            })?;
        }
        let (best_dev_bleu, best) = best.expect("epochs >= 1");
        Ok(StageOutcome {
            stage,
            n_examples: examples.len(),
            steps: self.state.stage_step,
            initial,
            best,
            best_dev_bleu,
            dev_bleu_per_epoch: per_epoch,
        })
    }
}
