use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BridgeModel, Checkpoint};
use crate::numerics::ParameterStore;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Short,
    Long,
    Single,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Short => "short",
            Stage::Long => "long",
            Stage::Single => "single",
        }
    }
}

/// Progress of a training run. Parameters and Adam moments live in the
/// [`ParameterStore`]; everything else needed to resume lives here.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub stage: Stage,
    /// Parameter updates over the whole run.
    pub global_step: usize,
    /// Parameter updates in the current stage; indexes the stage schedule.
    pub stage_step: usize,
    /// Completed epochs over the whole run; the freeze policy keys on this.
    pub epoch: usize,
    pub best_dev_bleu: Option<f64>,
    pub best_step: Option<usize>,
    pub best_checkpoint: Option<String>,
    /// Drives epoch shuffling.
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(stage: Stage, seed: u64) -> Self {
        Self {
            stage,
            global_step: 0,
            stage_step: 0,
            epoch: 0,
            best_dev_bleu: None,
            best_step: None,
            best_checkpoint: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Records an evaluation; returns whether it is a new strict best. Ties
    /// keep the earlier step.
    pub fn observe_dev_bleu(&mut self, bleu: f64) -> bool {
        if self.best_dev_bleu.is_some_and(|b| bleu <= b) {
            return false;
        }
        self.best_dev_bleu = Some(bleu);
        self.best_step = Some(self.global_step);
        true
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RngRecord {
    seed: String,
    stream: u64,
    /// `u128` as decimal text.
    word_pos: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateRecord {
    stage: Stage,
    global_step: usize,
    stage_step: usize,
    epoch: usize,
    best_dev_bleu: Option<f64>,
    best_step: Option<usize>,
    best_checkpoint: Option<String>,
    rng: RngRecord,
}

impl From<&TrainState> for StateRecord {
    fn from(s: &TrainState) -> Self {
        StateRecord {
            stage: s.stage,
            global_step: s.global_step,
            stage_step: s.stage_step,
            epoch: s.epoch,
            best_dev_bleu: s.best_dev_bleu,
            best_step: s.best_step,
            best_checkpoint: s.best_checkpoint.clone(),
            rng: RngRecord {
                seed: s.rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
                stream: s.rng.get_stream(),
                word_pos: s.rng.get_word_pos().to_string(),
            },
        }
    }
}

impl TryFrom<StateRecord> for TrainState {
    type Error = Error;

    fn try_from(r: StateRecord) -> Result<Self> {
        let bad = |d: &str| Error::load("train_state.rng", d);
        if r.rng.seed.len() != 64 || !r.rng.seed.is_ascii() {
            return Err(bad("seed must be 64 hex digits"));
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&r.rng.seed[2 * i..2 * i + 2], 16).map_err(|_| bad("seed is not hex"))?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(r.rng.stream);
        rng.set_word_pos(r.rng.word_pos.parse().map_err(|_| bad("word_pos is not an integer"))?);
        Ok(TrainState {
            stage: r.stage,
            global_step: r.global_step,
            stage_step: r.stage_step,
            epoch: r.epoch,
            best_dev_bleu: r.best_dev_bleu,
            best_step: r.best_step,
            best_checkpoint: r.best_checkpoint,
            rng,
        })
    }
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &BridgeModel,
    store: &ParameterStore,
    state: &TrainState,
) -> Result<()> {
    Checkpoint {
        config: model.config().clone(),
        vocab: model.vocab().clone(),
        store: store.clone(),
        extra: Some(serde_json::json!({ "train_state": StateRecord::from(state) })),
    }
    .save(path)
}

/// Restores model, parameters (with flags and Adam moments) and train state.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(BridgeModel, ParameterStore, TrainState)> {
    let ckpt = Checkpoint::load(path)?;
    let record = ckpt
        .extra
        .as_ref()
        .and_then(|e| e.get("train_state"))
        .ok_or_else(|| Error::load("train_state", "missing"))?;
    let record: StateRecord =
        serde_json::from_value(record.clone()).map_err(|e| Error::load("train_state", e.to_string()))?;
    let state = TrainState::try_from(record)?;
    let model = BridgeModel::new(ckpt.config, ckpt.vocab).map_err(|e| Error::load("config", e.to_string()))?;
    Ok((model, ckpt.store, state))
}

/// Model and parameters only; the train state may be absent.
pub fn load_model(path: impl AsRef<Path>) -> Result<(BridgeModel, ParameterStore)> {
    let ckpt = Checkpoint::load(path)?;
    let model = BridgeModel::new(ckpt.config, ckpt.vocab).map_err(|e| Error::load("config", e.to_string()))?;
    Ok((model, ckpt.store))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn ties_keep_the_earliest_best() {
        let mut s = TrainState::new(Stage::Short, 0);
        let mut picked = Vec::new();
        for (step, bleu) in [(10, 10.0), (20, 12.0), (30, 12.0)] {
            s.global_step = step;
            s.observe_dev_bleu(bleu);
            picked.push(s.best_step);
        }
        assert_eq!(s.best_step, Some(20));
        assert_eq!(s.best_dev_bleu, Some(12.0));
        assert_eq!(picked, [Some(10), Some(20), Some(20)]);
    }

    #[test]
    fn rng_state_round_trips() {
        let mut s = TrainState::new(Stage::Long, 42);
        let _: u64 = s.rng.random();
        let back = TrainState::try_from(StateRecord::from(&s)).unwrap();
        assert_eq!(back, s);
        let (mut a, mut b) = (s.rng.clone(), back.rng.clone());
        assert_eq!(a.random::<u64>(), b.random::<u64>());
    }
}
