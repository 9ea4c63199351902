use std::path::Path;

use csagan::checkpoint::{self, state_hash};
use csagan::config::RunConfig;
use csagan::dataset::toy_pairs;
use csagan::run::{train_in_dir, RunDir};
use csagan::trace;
use csagan::Error;
use csagan_core::training::{train, RunLimit, TrainingState};
use proptest::prelude::*;

fn tiny_config() -> RunConfig {
    let mut c = RunConfig::default();
    for kv in [
        "image_side=16",
        "data.source=toy",
        "data.toy_count=12",
        "linemap.l_min=4",
        "generator.base_channels=8",
        "generator.n_down=2",
        "discriminator.n_d=2",
        "discriminator.base_channels=4",
        "train.batch_size=2",
        "train.checkpoint_every=7",
        "stage1.epochs=5",
        "stage2.epochs=5",
        "stage3.epochs=5",
    ] {
        c.apply_override(kv).unwrap();
    }
    c.validate().unwrap();
    c
}

fn trained_state(c: &RunConfig, steps: u64) -> TrainingState {
    let (data, _) = toy_pairs(c).unwrap();
    let mut s = TrainingState::new(c.generator_config(), c.discriminator_config().unwrap(), c.seed).unwrap();
    train(&mut s, &c.schedule(), &data, RunLimit { max_global_step: Some(steps) }, &mut |_| {}).unwrap();
    s
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let c = tiny_config();
    // 55 steps reach stage 3, so every Adam state and the CSAM weights are live.
    let s = trained_state(&c, 55);
    assert_eq!(s.stage, 3);
    let bytes = checkpoint::encode(&s);
    let back = checkpoint::decode(&bytes, Path::new("mem")).unwrap();
    assert_eq!(checkpoint::encode(&back), bytes);
    assert_eq!(state_hash(&back), state_hash(&s));
    for (a, b) in s.generator.params.params.iter().zip(&back.generator.params.params) {
        assert_eq!(a.name, b.name);
        assert!(a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.bin");
    checkpoint::save(&path, &s).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert_eq!(checkpoint::encode(&checkpoint::load(&path).unwrap()), bytes);
}

#[test]
fn checkpoint_rejects_damage() {
    let s = trained_state(&tiny_config(), 2);
    let bytes = checkpoint::encode(&s);
    let p = Path::new("mem");
    for cut in [0, 3, 10, 24, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(checkpoint::decode(&bytes[..cut], p), Err(Error::Format { .. })), "cut at {cut}");
    }
    let mut flipped = bytes.clone();
    let last = flipped.len() - 1;
    flipped[last] ^= 1;
    assert!(checkpoint::decode(&flipped, p).is_err());
    let mut version = bytes.clone();
    version[4] = 99;
    let err = checkpoint::decode(&version, p).unwrap_err().to_string();
    assert!(err.contains("version"), "{err}");
    let mut trailing = bytes;
    trailing.push(0);
    assert!(checkpoint::decode(&trailing, p).is_err());
}

fn run_to(dir: &Path, c: &RunConfig, max: u64) {
    let (data, _) = toy_pairs(c).unwrap();
    train_in_dir(&RunDir::new(dir), c, &data, Some(max)).unwrap();
}

#[test]
fn resumed_trace_matches_uninterrupted_run() {
    let c = tiny_config();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_to(a.path(), &c, 60);
    for stop in [13, 30, 47, 60] {
        run_to(b.path(), &c, stop);
    }
    let ta = trace::read_rows(&RunDir::new(a.path()).trace()).unwrap();
    let tb = trace::read_rows(&RunDir::new(b.path()).trace()).unwrap();
    assert_eq!(ta.len(), 60);
    assert_eq!(ta, tb);
    let ca = checkpoint::load(&RunDir::new(a.path()).checkpoint()).unwrap();
    let cb = checkpoint::load(&RunDir::new(b.path()).checkpoint()).unwrap();
    assert_eq!(ca.global_step, 60);
    assert_eq!(state_hash(&ca), state_hash(&cb));
}

#[test]
fn trace_rows_past_the_checkpoint_are_dropped_on_resume() {
    let c = tiny_config();
    let d = tempfile::tempdir().unwrap();
    run_to(d.path(), &c, 10);
    let dir = RunDir::new(d.path());
    // Rows a crashed run wrote after its last checkpoint.
    let mut text = std::fs::read_to_string(dir.trace()).unwrap();
    text.push_str("11,1,0.0,0.0,0.0,0.0,0.0,0.0\n12,1,0.0,0.0,0.0,0.0,0.0,0.0\n");
    std::fs::write(dir.trace(), text).unwrap();
    run_to(d.path(), &c, 14);
    let rows = trace::read_rows(&dir.trace()).unwrap();
    assert_eq!(rows.len(), 14);
    assert!(rows.iter().all(|r| !r.contains(",0.0,0.0,0.0,0.0,0.0,0.0")));
}

#[test]
fn a_locked_run_dir_is_refused() {
    let c = tiny_config();
    let d = tempfile::tempdir().unwrap();
    let _held = csagan::lock::RunLock::acquire(d.path()).unwrap();
    let (data, _) = toy_pairs(&c).unwrap();
    assert!(matches!(train_in_dir(&RunDir::new(d.path()), &c, &data, Some(1)), Err(Error::Locked(_))));
}

#[test]
fn resume_refuses_a_different_model() {
    let c = tiny_config();
    let d = tempfile::tempdir().unwrap();
    run_to(d.path(), &c, 2);
    let mut other = c.clone();
    other.apply_override("generator.base_channels=16").unwrap();
    let (data, _) = toy_pairs(&other).unwrap();
    assert!(train_in_dir(&RunDir::new(d.path()), &other, &data, Some(4)).is_err());
}

fn word() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_/.]{0,15}"
}

prop_compose! {
    fn stage_plan(stage: u8)(
        epochs in 0usize..200,
        lr_g in 1e-7f64..1.0,
        lr_d in 1e-7f64..1.0,
        decay_at in 0.0f64..=1.0,
        decay_factor in 1e-4f64..1.0,
    ) -> csagan_core::training::StagePlan {
        csagan_core::training::StagePlan { stage, epochs, lr_g, lr_d, decay_at, decay_factor }
    }
}

prop_compose! {
    fn valid_config()(
        seed in any::<u64>(),
        n_down in 2usize..=4,
        mult in 1usize..=4,
        source in prop_oneof![Just("dir".to_string()), Just("toy".to_string())],
        photos in word(),
        pairs in word(),
        split in 0.01f64..0.99,
        toy_count in 2usize..5000,
        tau in 0.0f64..=1.0,
        tau_extra in 0.0f64..=1.0,
        l_min in 1usize..100,
        base in 8usize..64,
        csam in any::<bool>(),
        sn in any::<bool>(),
        n_d in 1usize..=3,
        shared in 1usize..=2,
        d_base in 1usize..64,
        d_sn in any::<bool>(),
        lambda in 1e-3f64..1e3,
        mu in 1e-3f64..1e3,
        batch in 1usize..64,
        every in 1u64..10_000,
        s1 in stage_plan(1),
        s2 in stage_plan(2),
        s3 in stage_plan(3),
    ) -> RunConfig {
        let mut c = RunConfig::default();
        c.seed = seed;
        c.image_side = (16usize << (n_down - 2)) * mult;
        c.data.source = source;
        c.data.photos = photos;
        c.data.pairs = pairs;
        c.data.split = split;
        c.data.toy_count = toy_count;
        c.linemap.tau = tau;
        c.data.toy_tau_max = tau + (1.0 - tau) * tau_extra;
        c.linemap.l_min = l_min;
        c.generator.base_channels = base;
        c.generator.n_down = n_down;
        c.generator.csam = csam;
        c.generator.spectral_norm = sn;
        c.discriminator.n_d = n_d;
        c.discriminator.shared_depth = shared;
        c.discriminator.base_channels = d_base;
        c.discriminator.spectral_norm = d_sn;
        c.loss.lambda = lambda;
        c.loss.mu = mu;
        c.train.batch_size = batch;
        c.train.checkpoint_every = every;
        c.stages = [s1, s2, s3];
        c
    }
}

fn checked_config() -> impl Strategy<Value = RunConfig> {
    // Small images cannot hold every discriminator depth.
    valid_config().prop_filter("discriminator fits the image", |c| c.validate().is_ok())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn config_round_trips(c in checked_config()) {
        let text = c.to_text();
        let back = RunConfig::parse(&text).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.to_text(), text);
    }

    #[test]
    fn one_bad_value_names_its_key(c in checked_config(), pick in 0usize..4) {
        let (key, bad) = [
            ("data.split", "1.5"),
            ("linemap.tau", "-0.1"),
            ("stage2.lr_g", "0"),
            ("train.batch_size", "0"),
        ][pick];
        let mut text = c.to_text();
        text.push_str(&format!("{key} = {bad}\n"));
        let err = RunConfig::parse(&text).unwrap_err().to_string();
        prop_assert!(err.contains(key), "{}", err);
    }
}

#[test]
fn unknown_key_is_named() {
    let err = RunConfig::parse("generator.widht = 3\n").unwrap_err().to_string();
    assert!(err.contains("generator.widht"), "{err}");
}
