use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LORA_MARKER;
use crate::numerics::ParameterStore;

pub const GROUPS: [&str; 5] = ["speech_encoder", "audio_encoder", "qformer", "decoder", "lora"];

/// Which parameter groups train. Adapters form their own `lora` group, so
/// `decoder` means the frozen base weights only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreezePolicy {
    pub trainable_groups: BTreeSet<String>,
    /// Speech encoder trains during epoch 0 only.
    pub speech_encoder_trainable_first_epoch: bool,
}

impl Default for FreezePolicy {
    fn default() -> Self {
        Self {
            trainable_groups: ["qformer", "lora"].into_iter().map(String::from).collect(),
            speech_encoder_trainable_first_epoch: false,
        }
    }
}

impl FreezePolicy {
    pub fn validate(&self) -> Result<()> {
        if let Some(g) = self.trainable_groups.iter().find(|g| !GROUPS.contains(&g.as_str())) {
            return Err(Error::Config(format!(
                "unknown parameter group `{g}` (known: {})",
                GROUPS.join(", ")
            )));
        }
        Ok(())
    }

    pub fn is_trainable(&self, group: &str, epoch: usize) -> bool {
        self.trainable_groups.contains(group)
            || (group == "speech_encoder" && self.speech_encoder_trainable_first_epoch && epoch == 0)
    }
}

/// Group of a parameter name: `lora` for adapters, else the first path segment.
pub fn group_of(name: &str) -> &str {
    if name.contains(LORA_MARKER) {
        "lora"
    } else {
        name.split('.').next().unwrap_or(name)
    }
}

/// Sets every trainable flag for `epoch`. Freezing a parameter discards its
/// optimizer moments.
pub fn apply_freeze_policy(store: &mut ParameterStore, policy: &FreezePolicy, epoch: usize) -> Result<()> {
    policy.validate()?;
    let names: Vec<String> = store.names().map(String::from).collect();
    for name in names {
        let group = group_of(&name);
        if !GROUPS.contains(&group) {
            return Err(Error::Config(format!(
                "parameter `{name}` is in unknown group `{group}`"
            )));
        }
        let on = policy.is_trainable(group, epoch);
        if store.is_trainable(&name) != on {
            store.set_trainable(&name, on)?;
        }
    }
    Ok(())
}
