//! Training runs in a directory: config, loss trace, checkpoint, lock.
//!
//! A run directory contains `config.cfg`, `trace.csv` and `checkpoint.bin`.
//! Training saves a checkpoint every `train.checkpoint_every` steps and
//! whenever it stops. Starting again in the same directory resumes from the
//! checkpoint and drops any trace rows written after it.

use std::path::{Path, PathBuf};

use csagan_core::training::{train, Pair, RunLimit, RunOutcome, StepRecord, TrainingState};
use log::info;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::lock::RunLock;
use crate::trace;

pub const CONFIG_FILE: &str = "config.cfg";
pub const TRACE_FILE: &str = "trace.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> RunDir {
        RunDir { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join(CONFIG_FILE)
    }

    pub fn trace(&self) -> PathBuf {
        self.root.join(TRACE_FILE)
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.root.join(CHECKPOINT_FILE)
    }
}

/// Fresh state for `config`, or the stored checkpoint if there is one.
pub fn initial_state(dir: &RunDir, config: &RunConfig) -> Result<TrainingState> {
    let ckpt = dir.checkpoint();
    if !ckpt.exists() {
        return Ok(TrainingState::new(config.generator_config(), config.discriminator_config()?, config.seed)?);
    }
    let state = checkpoint::load(&ckpt)?;
    if state.generator.config != config.generator_config() || state.discriminator.config != config.discriminator_config()? {
        return Err(Error::Invalid(format!("{} was written for a different model configuration", ckpt.display())));
    }
    if state.seed != config.seed {
        return Err(Error::config("seed", format!("checkpoint was trained with seed {}", state.seed)));
    }
    info!("resuming from step {} (stage {}, epoch {})", state.global_step, state.stage, state.epoch);
    Ok(state)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSummary {
    pub global_step: u64,
    pub stage: u8,
    pub finished: bool,
}

/// Trains in `dir` until the schedule finishes or `max_steps` global steps
/// have been taken, checkpointing along the way.
pub fn train_in_dir(dir: &RunDir, config: &RunConfig, data: &[Pair], max_steps: Option<u64>) -> Result<RunSummary> {
    config.validate()?;
    let _lock = RunLock::acquire(&dir.root)?;
    write_atomic(&dir.config(), config.to_text().as_bytes())?;
    let mut state = initial_state(dir, config)?;
    trace::truncate_after(&dir.trace(), state.global_step)?;
    let schedule = config.schedule();
    loop {
        let mut stop = state.global_step + config.train.checkpoint_every;
        if let Some(m) = max_steps {
            stop = stop.min(m);
        }
        let mut records: Vec<StepRecord> = Vec::new();
        let outcome = train(&mut state, &schedule, data, RunLimit { max_global_step: Some(stop) }, &mut |r| records.push(*r));
        // Steps are transactional, so `state` is the last good state even
        // when the run failed.
        trace::append(&dir.trace(), &records)?;
        checkpoint::save(&dir.checkpoint(), &state)?;
        match outcome? {
            RunOutcome::StageComplete => break,
            RunOutcome::LimitReached if max_steps.is_some_and(|m| state.global_step >= m) => break,
            RunOutcome::LimitReached => info!("step {}: checkpoint saved", state.global_step),
        }
    }
    Ok(RunSummary { global_step: state.global_step, stage: state.stage, finished: state.finished() })
}

pub fn config_for(dir: &Path) -> Result<RunConfig> {
    RunConfig::load(&RunDir::new(dir).config())
}
