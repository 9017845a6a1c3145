//! Schedule, freeze policy, update step, dev evaluation and the short/long
//! length curriculum.

mod curriculum;
mod data;
mod eval;
mod freeze;
mod parallel;
mod pipeline;
mod profile;
mod schedule;
mod state;
mod step;

pub use curriculum::{log_to_jsonl, run_curriculum, write_log, CurriculumResult, EpochEnd, LogRecord, StageOutcome};
pub use data::{corpus_vocab, prepare_examples, target_text, Example};
pub use eval::{evaluate_dev, DevReport};
pub use freeze::{apply_freeze_policy, group_of, FreezePolicy, GROUPS};
pub use parallel::par_map;
pub use pipeline::{prepare_run, PreparedRun};
pub use profile::{StageProfile, TrainProfile};
pub use schedule::{lr_at, ScheduleConfig};
pub use state::{load_checkpoint, load_model, save_checkpoint, Stage, TrainState};
pub use step::{train_step, StepMetrics};
