//! Training-loop behaviour on tiny models.

use csagan_core::autograd::backward;
use csagan_core::discriminator::DiscriminatorConfig;
use csagan_core::generator::{ForwardOptions, GeneratorConfig};
use csagan_core::layers::{ParamGroup, Trainable};
use csagan_core::loss::{discriminator_loss, generator_adversarial_loss, LossWeights};
use csagan_core::toy::{toy_dataset, ToyConfig};
use csagan_core::training::{mean_l1, train, train_step, Pair, RunLimit, Schedule, StagePlan, TrainingState};

fn state(seed: u64) -> TrainingState {
    let g = GeneratorConfig { base_channels: 8, n_down: 2, image_side: 16, csam_enabled: true, spectral_norm: true };
    let mut d = DiscriminatorConfig::for_side(16, 2).unwrap();
    d.base_channels = 4;
    TrainingState::new(g, d, seed).unwrap()
}

fn pairs(s: &TrainingState, n: usize) -> Vec<Pair> {
    let c = s.generator.config;
    toy_dataset(&ToyConfig { side: 16, count: n, tau: (0.3, 0.3), l_min: 4, seed: 4 }, &c.scales())
        .unwrap()
        .iter()
        .map(|t| Pair::from_pyramid(&t.pyramid, t.photo.to_tensor(), &c).unwrap())
        .collect()
}

fn schedule() -> Schedule {
    Schedule {
        stages: [StagePlan::with_epochs(1, 2), StagePlan::with_epochs(2, 2), StagePlan::with_epochs(3, 1)],
        batch_size: 2,
        weights: LossWeights::default(),
    }
}

#[test]
fn discriminator_loss_does_not_reach_the_generator() {
    let mut s = state(1);
    let data = pairs(&s, 1);
    let wg = s.generator.materialize(Trainable::All, false).unwrap();
    let wd = s.discriminator.materialize(Trainable::All, false).unwrap();
    let opts = ForwardOptions { use_csam: true, drop_skip: None };
    let c = data[0].cond.finest();

    let fake = s.generator.forward(&wg, &data[0].cond, opts).unwrap().detach();
    let real_out = s.discriminator.forward(&wd, c, &data[0].target).unwrap();
    let fake_out = s.discriminator.forward(&wd, c, &fake).unwrap();
    let grads = backward(&discriminator_loss(&real_out.scores, &fake_out.scores).unwrap()).unwrap();
    assert!(wg.leaves.iter().all(|l| grads.get(l).is_none()));
    assert!(wd.leaves.iter().any(|l| grads.get(l).is_some_and(|g| g.iter().any(|v| *v != 0.0))));

    // And the generator step leaves the frozen discriminator without gradients.
    let wd_frozen = s.discriminator.params.frozen().unwrap();
    let fake = s.generator.forward(&wg, &data[0].cond, opts).unwrap();
    let out = s.discriminator.forward(&wd_frozen, c, &fake).unwrap();
    let grads = backward(&generator_adversarial_loss(&out.scores).unwrap()).unwrap();
    assert!(wd_frozen.leaves.iter().all(|l| grads.get(l).is_none()));
    assert!(wg.leaves.iter().any(|l| grads.get(l).is_some()));
}

#[test]
fn training_is_deterministic() {
    let run = || {
        let mut s = state(3);
        let data = pairs(&s, 6);
        let mut losses = Vec::new();
        train(&mut s, &schedule(), &data, RunLimit::default(), &mut |r| losses.push(r.loss_g_total.to_bits())).unwrap();
        (losses, s.generator.params.fingerprint(|_| true), s.discriminator.params.fingerprint(|_| true))
    };
    let (a, b) = (run(), run());
    assert!(a.0.len() == 15 && a == b);
}

#[test]
fn fitting_one_pair_lowers_its_l1() {
    let mut s = state(5);
    let data = pairs(&s, 1);
    let before = mean_l1(&s.generator, &data, false).unwrap();
    let mut plan = StagePlan::with_epochs(1, 1);
    plan.lr_g = 1e-3;
    for _ in 0..30 {
        train_step(&mut s, &data, &[0], &plan, LossWeights::default()).unwrap();
    }
    let after = mean_l1(&s.generator, &data, false).unwrap();
    assert!(after < 0.8 * before, "{before} -> {after}");
}

#[test]
fn stage_two_trains_only_attention() {
    let mut s = state(6);
    let data = pairs(&s, 4);
    let sched = schedule();
    train(&mut s, &sched, &data, RunLimit { max_global_step: Some(4) }, &mut |_| {}).unwrap();
    // Stage 1 ends at step 4; the run stops on entering stage 2.
    assert_eq!((s.stage, s.epoch, s.cursor), (2, 0, 0));
    let main = |s: &TrainingState| s.generator.params.fingerprint(|p| p.group == ParamGroup::Main);
    let attn = |s: &TrainingState| s.generator.params.fingerprint(|p| p.group == ParamGroup::Csam);
    let d = |s: &TrainingState| (s.discriminator.params.fingerprint(|_| true), s.discriminator.params.spectral.clone(), s.adam_d.clone());
    let (m0, a0, d0) = (main(&s), attn(&s), d(&s));
    let mut records = Vec::new();
    train(&mut s, &sched, &data, RunLimit { max_global_step: Some(8) }, &mut |r| records.push(*r)).unwrap();
    assert!(records.iter().all(|r| r.stage == 2) && records.len() == 4);
    assert_eq!(main(&s), m0);
    assert_eq!(d(&s), d0);
    assert_ne!(attn(&s), a0);
}
