//! Three-stage two-timescale training.
//!
//! * Stage 1 trains the generator without the attention module (it is left
//!   out of the graph) together with the discriminator.
//! * Stage 2 trains only the attention parameters. Everything else, the
//!   discriminator included, is frozen, so the discriminator step is skipped
//!   and the reported discriminator loss comes from the generator step's
//!   scores.
//! * Stage 3 fine-tunes everything at lower rates.
//!
//! Each iteration is one discriminator step followed by one generator step
//! on the same minibatch. A step is transactional: if any loss, gradient or
//! updated value is non-finite the state is left exactly as it was.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::adam::AdamState;
use crate::autograd::{backward, Gradients};
use crate::discriminator::{Discriminator, DiscriminatorConfig};
use crate::error::{Error, Result};
use crate::generator::{ConditionStack, ForwardOptions, Generator, GeneratorConfig};
use crate::layers::{ParamGroup, ParamSet, Trainable, Weights};
use crate::linemap::ConditionPyramid;
use crate::loss::{
    discriminator_loss, feature_matching_loss, generator_adversarial_loss, l1_loss, total_objective, LossWeights,
};
use crate::rng::{derive, Stream};
use crate::tensor::Tensor;

pub const DEFAULT_BATCH_SIZE: usize = 8;
pub const DEFAULT_DECAY_AT: f64 = 0.5;
pub const DEFAULT_DECAY_FACTOR: f64 = 0.1;

/// One training example: the condition at every generator level and the
/// target photo as a `[3, S, S]` tensor in `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct Pair {
    pub cond: ConditionStack,
    pub target: Tensor,
}

impl Pair {
    pub fn from_pyramid(pyramid: &ConditionPyramid, target: Tensor, config: &GeneratorConfig) -> Result<Pair> {
        let cond = ConditionStack::from_pyramid(pyramid, config)?;
        let s = config.image_side;
        if target.shape() != [3, s, s] {
            return Err(Error::shape("pair", format!("target {:?} does not match side {s}", target.shape())));
        }
        Ok(Pair { cond, target })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StagePlan {
    pub stage: u8,
    pub epochs: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    /// Fraction of the stage's epochs after which both rates decay.
    pub decay_at: f64,
    pub decay_factor: f64,
}

/// What a stage optimizes and whether the attention module is in the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageScope {
    pub generator: Trainable,
    pub discriminator: Trainable,
    pub use_csam: bool,
}

impl StagePlan {
    /// Full-length schedule: 100 / 100 / 50 epochs.
    pub fn paper(stage: u8) -> StagePlan {
        let epochs = if stage == 3 { 50 } else { 100 };
        Self::with_epochs(stage, epochs)
    }

    /// Desk-scale schedule: 5 / 5 / 3 epochs.
    pub fn desk(stage: u8) -> StagePlan {
        let epochs = if stage == 3 { 3 } else { 5 };
        Self::with_epochs(stage, epochs)
    }

    pub fn with_epochs(stage: u8, epochs: usize) -> StagePlan {
        let (lr_g, lr_d) = if stage == 3 { (1e-5, 4e-5) } else { (1e-4, 4e-4) };
        StagePlan { stage, epochs, lr_g, lr_d, decay_at: DEFAULT_DECAY_AT, decay_factor: DEFAULT_DECAY_FACTOR }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.stage) {
            return Err(Error::invalid(format!("stage must be 1, 2 or 3, got {}", self.stage)));
        }
        for (name, v) in [("lr_g", self.lr_g), ("lr_d", self.lr_d), ("decay_factor", self.decay_factor)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("stage {} {name} must be positive, got {v}", self.stage)));
            }
        }
        if !(0.0..=1.0).contains(&self.decay_at) {
            return Err(Error::invalid(format!("stage {} decay_at must lie in [0, 1], got {}", self.stage, self.decay_at)));
        }
        Ok(())
    }

    pub fn scope(&self) -> StageScope {
        match self.stage {
            1 => StageScope { generator: Trainable::Group(ParamGroup::Main), discriminator: Trainable::All, use_csam: false },
            2 => StageScope { generator: Trainable::Group(ParamGroup::Csam), discriminator: Trainable::None, use_csam: true },
            _ => StageScope { generator: Trainable::All, discriminator: Trainable::All, use_csam: true },
        }
    }

    /// `(lr_G, lr_D)` in effect during `epoch` (0-based).
    pub fn learning_rates(&self, epoch: usize) -> (f64, f64) {
        if epoch as f64 >= self.decay_at * self.epochs as f64 {
            (self.lr_g * self.decay_factor, self.lr_d * self.decay_factor)
        } else {
            (self.lr_g, self.lr_d)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub stages: [StagePlan; 3],
    pub batch_size: usize,
    pub weights: LossWeights,
}

impl Schedule {
    pub fn paper() -> Schedule {
        Schedule {
            stages: [StagePlan::paper(1), StagePlan::paper(2), StagePlan::paper(3)],
            batch_size: DEFAULT_BATCH_SIZE,
            weights: LossWeights::default(),
        }
    }

    pub fn desk() -> Schedule {
        Schedule {
            stages: [StagePlan::desk(1), StagePlan::desk(2), StagePlan::desk(3)],
            batch_size: DEFAULT_BATCH_SIZE,
            weights: LossWeights::default(),
        }
    }

    pub fn plan(&self, stage: u8) -> &StagePlan {
        &self.stages[(stage.clamp(1, 3) - 1) as usize]
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        for (i, p) in self.stages.iter().enumerate() {
            p.validate()?;
            if p.stage as usize != i + 1 {
                return Err(Error::invalid(format!("stage plan {} is labelled stage {}", i + 1, p.stage)));
            }
        }
        Ok(())
    }
}

/// Everything needed to continue training bit-exactly. Spectral states live
/// inside the two models' parameter sets.
#[derive(Debug, Clone)]
pub struct TrainingState {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub adam_g: Vec<AdamState>,
    pub adam_d: Vec<AdamState>,
    /// Current stage, 1 to 3.
    pub stage: u8,
    pub stage_complete: bool,
    /// Epoch within the current stage.
    pub epoch: usize,
    /// Next minibatch index within the current epoch.
    pub cursor: usize,
    pub global_step: u64,
    pub seed: u64,
}

fn adam_for(params: &ParamSet) -> Vec<AdamState> {
    params.params.iter().map(|p| AdamState::new(p.value.len())).collect()
}

impl TrainingState {
    pub fn new(g: GeneratorConfig, d: DiscriminatorConfig, seed: u64) -> Result<TrainingState> {
        if d.image_side != g.image_side {
            return Err(Error::invalid(format!(
                "generator side {} and discriminator side {} differ",
                g.image_side, d.image_side
            )));
        }
        let generator = Generator::new(g, seed)?;
        let discriminator = Discriminator::new(d, seed)?;
        let adam_g = adam_for(&generator.params);
        let adam_d = adam_for(&discriminator.params);
        Ok(TrainingState {
            generator,
            discriminator,
            adam_g,
            adam_d,
            stage: 1,
            stage_complete: false,
            epoch: 0,
            cursor: 0,
            global_step: 0,
            seed,
        })
    }

    /// Moves to the next stage once the current one is complete.
    pub fn advance_stage(&mut self) -> Result<()> {
        if !self.stage_complete {
            return Err(Error::invalid(format!("stage {} is not complete", self.stage)));
        }
        if self.stage >= 3 {
            return Err(Error::invalid("no stage after stage 3"));
        }
        self.stage += 1;
        self.stage_complete = false;
        self.epoch = 0;
        self.cursor = 0;
        Ok(())
    }

    pub fn finished(&self) -> bool {
        self.stage == 3 && self.stage_complete
    }
}

/// Losses of one iteration as written to the trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub stage: u8,
    pub epoch: usize,
    pub loss_d: f64,
    pub loss_g_adv: f64,
    pub loss_l1: f64,
    pub loss_fm: f64,
    pub loss_g_total: f64,
    pub lr_g: f64,
    pub lr_d: f64,
}

/// Losses of a batch evaluated without changing any state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLosses {
    pub loss_d: f64,
    pub loss_g_adv: f64,
    pub loss_l1: f64,
    pub loss_fm: f64,
    pub loss_g_total: f64,
}

/// Optional bound on how far a call may run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunLimit {
    /// Stop once `global_step` reaches this value.
    pub max_global_step: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunOutcome {
    StageComplete,
    LimitReached,
}

/// Batches of one epoch, deterministic in `(seed, stage, epoch)`.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, stage: u8, epoch: usize) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut derive(seed, Stream::Shuffle, ((stage as u64) << 32) | epoch as u64));
    idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

fn grads_for(grads: &Gradients, w: &Weights, i: usize) -> Vec<f64> {
    match grads.get(&w.leaves[i]) {
        Some(g) => g.to_vec(),
        None => vec![0.0; w.leaves[i].len()],
    }
}

/// Applies Adam to every parameter admitted by `trainable`; returns new
/// parameter values without touching `params` so the caller can commit.
fn adam_updates(
    params: &ParamSet,
    adam: &mut [AdamState],
    trainable: Trainable,
    w: &Weights,
    grads: &Gradients,
    lr: f64,
) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut out = Vec::new();
    for (i, p) in params.params.iter().enumerate() {
        let admitted = match trainable {
            Trainable::All => true,
            Trainable::None => false,
            Trainable::Group(g) => p.group == g,
        };
        if !admitted {
            continue;
        }
        let values = adam[i].update(p.value.data(), &grads_for(grads, w, i), lr)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter update"));
        }
        out.push((i, values));
    }
    Ok(out)
}

fn commit(params: &mut ParamSet, updates: Vec<(usize, Vec<f64>)>) -> Result<()> {
    for (i, v) in updates {
        params.set(crate::layers::ParamId(i), v)?;
    }
    Ok(())
}

fn finite(v: f64, what: &'static str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(what))
    }
}

/// One discriminator step then one generator step on `batch`.
pub fn train_step(state: &mut TrainingState, data: &[Pair], batch: &[usize], plan: &StagePlan, weights: LossWeights) -> Result<StepRecord> {
    if batch.is_empty() {
        return Err(Error::invalid("empty minibatch"));
    }
    let mut next = state.clone();
    let scope = plan.scope();
    let (lr_g, lr_d) = plan.learning_rates(state.epoch);
    let opts = ForwardOptions { use_csam: scope.use_csam, drop_skip: None };
    let inv_b = 1.0 / batch.len() as f64;

    let mut loss_d = 0.0;
    if scope.discriminator != Trainable::None {
        let wg = next.generator.params.frozen()?;
        let wd = next.discriminator.materialize(scope.discriminator, true)?;
        let mut grads = Gradients::default();
        for &i in batch {
            let pair = &data[i];
            let fake = next.generator.forward(&wg, &pair.cond, opts)?.detach();
            let c = pair.cond.finest();
            let real = next.discriminator.forward(&wd, c, &pair.target)?;
            let fake = next.discriminator.forward(&wd, c, &fake)?;
            let loss = discriminator_loss(&real.scores, &fake.scores)?.scale(inv_b);
            loss_d += finite(loss.item(), "discriminator loss")?;
            grads.accumulate(backward(&loss)?);
        }
        let updates = adam_updates(&next.discriminator.params, &mut next.adam_d, scope.discriminator, &wd, &grads, lr_d)?;
        commit(&mut next.discriminator.params, updates)?;
    }

    let wg = next.generator.materialize(scope.generator, true)?;
    let wd = next.discriminator.params.frozen()?;
    let mut grads = Gradients::default();
    let (mut adv_sum, mut l1_sum, mut fm_sum, mut total_sum, mut d_from_g) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &i in batch {
        let pair = &data[i];
        let c = pair.cond.finest();
        let fake = next.generator.forward(&wg, &pair.cond, opts)?;
        let fo = next.discriminator.forward(&wd, c, &fake)?;
        let ro = next.discriminator.forward(&wd, c, &pair.target)?;
        let adv = generator_adversarial_loss(&fo.scores)?;
        let l1 = l1_loss(&pair.target, &fake)?;
        let fm = feature_matching_loss(&fo.taps, &ro.taps)?;
        let total = total_objective(&adv, &l1, &fm, weights)?;
        adv_sum += adv.item();
        l1_sum += l1.item();
        fm_sum += fm.item();
        total_sum += finite(total.item(), "generator loss")?;
        d_from_g += discriminator_loss(&ro.scores, &fo.scores)?.item();
        grads.accumulate(backward(&total.scale(inv_b))?);
    }
    let updates = adam_updates(&next.generator.params, &mut next.adam_g, scope.generator, &wg, &grads, lr_g)?;
    commit(&mut next.generator.params, updates)?;

    if scope.discriminator == Trainable::None {
        loss_d = d_from_g * inv_b;
    }
    next.global_step += 1;
    let record = StepRecord {
        step: next.global_step,
        stage: plan.stage,
        epoch: next.epoch,
        loss_d,
        loss_g_adv: adv_sum * inv_b,
        loss_l1: l1_sum * inv_b,
        loss_fm: fm_sum * inv_b,
        loss_g_total: total_sum * inv_b,
        lr_g,
        lr_d,
    };
    *state = next;
    Ok(record)
}

/// Losses of `batch` under the current parameters, with the graph of
/// `stage` and no refinement of any spectral estimate.
pub fn evaluate_batch(state: &TrainingState, data: &[Pair], batch: &[usize], stage: u8, weights: LossWeights) -> Result<BatchLosses> {
    if batch.is_empty() {
        return Err(Error::invalid("empty minibatch"));
    }
    let opts = ForwardOptions { use_csam: StagePlan::with_epochs(stage, 1).scope().use_csam, drop_skip: None };
    let wg = state.generator.params.frozen()?;
    let wd = state.discriminator.params.frozen()?;
    let inv_b = 1.0 / batch.len() as f64;
    let mut out = BatchLosses { loss_d: 0.0, loss_g_adv: 0.0, loss_l1: 0.0, loss_fm: 0.0, loss_g_total: 0.0 };
    for &i in batch {
        let pair = &data[i];
        let c = pair.cond.finest();
        let fake = state.generator.forward(&wg, &pair.cond, opts)?;
        let fo = state.discriminator.forward(&wd, c, &fake)?;
        let ro = state.discriminator.forward(&wd, c, &pair.target)?;
        let adv = generator_adversarial_loss(&fo.scores)?;
        let l1 = l1_loss(&pair.target, &fake)?;
        let fm = feature_matching_loss(&fo.taps, &ro.taps)?;
        out.loss_d += discriminator_loss(&ro.scores, &fo.scores)?.item() * inv_b;
        out.loss_g_adv += adv.item() * inv_b;
        out.loss_l1 += l1.item() * inv_b;
        out.loss_fm += fm.item() * inv_b;
        out.loss_g_total += total_objective(&adv, &l1, &fm, weights)?.item() * inv_b;
    }
    Ok(out)
}

/// Mean L1 between generated and target images (generator only).
pub fn mean_l1(generator: &Generator, data: &[Pair], use_csam: bool) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("mean L1 over no pairs"));
    }
    let w = generator.params.frozen()?;
    let opts = ForwardOptions { use_csam, drop_skip: None };
    let mut acc = 0.0;
    for pair in data {
        acc += l1_loss(&pair.target, &generator.forward(&w, &pair.cond, opts)?)?.item();
    }
    Ok(acc / data.len() as f64)
}

/// Trains the current stage from the state's epoch and cursor until the
/// stage completes or `limit` is hit. `on_step` sees every record.
pub fn run_stage(
    state: &mut TrainingState,
    plan: &StagePlan,
    data: &[Pair],
    batch_size: usize,
    weights: LossWeights,
    limit: RunLimit,
    on_step: &mut dyn FnMut(&StepRecord),
) -> Result<RunOutcome> {
    plan.validate()?;
    if plan.stage != state.stage {
        return Err(Error::invalid(format!("plan is for stage {} but the state is in stage {}", plan.stage, state.stage)));
    }
    if data.is_empty() {
        return Err(Error::invalid("no training pairs"));
    }
    if state.stage_complete {
        return Ok(RunOutcome::StageComplete);
    }
    while state.epoch < plan.epochs {
        let batches = epoch_batches(data.len(), batch_size, state.seed, state.stage, state.epoch);
        while state.cursor < batches.len() {
            if limit.max_global_step.is_some_and(|m| state.global_step >= m) {
                return Ok(RunOutcome::LimitReached);
            }
            let record = train_step(state, data, &batches[state.cursor], plan, weights)?;
            state.cursor += 1;
            on_step(&record);
        }
        state.epoch += 1;
        state.cursor = 0;
    }
    state.stage_complete = true;
    Ok(RunOutcome::StageComplete)
}

/// Runs the remaining stages of `schedule` in order.
pub fn train(
    state: &mut TrainingState,
    schedule: &Schedule,
    data: &[Pair],
    limit: RunLimit,
    on_step: &mut dyn FnMut(&StepRecord),
) -> Result<RunOutcome> {
    schedule.validate()?;
    loop {
        let plan = *schedule.plan(state.stage);
        if run_stage(state, &plan, data, schedule.batch_size, schedule.weights, limit, on_step)? == RunOutcome::LimitReached {
            return Ok(RunOutcome::LimitReached);
        }
        if state.finished() {
            return Ok(RunOutcome::StageComplete);
        }
        state.advance_stage()?;
    }
}
