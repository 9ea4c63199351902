use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use csagan::checkpoint;
use csagan::config::RunConfig;
use csagan::io::{write_csdf, write_linemap, write_rgb};
use csagan_core::linemap::distance_field;
use csagan_core::toy::{toy_dataset, ToyConfig};
use csagan_core::training::TrainingState;

fn csagan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csagan")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_config() -> RunConfig {
    let mut c = RunConfig::default();
    for kv in ["image_side=16", "generator.base_channels=8", "generator.n_down=2", "discriminator.n_d=2", "discriminator.base_channels=4"] {
        c.apply_override(kv).unwrap();
    }
    c
}

/// A freshly initialized checkpoint and one toy sample written as inputs.
fn fixture(dir: &Path) -> (PathBuf, PathBuf, PathBuf, PathBuf) {
    let c = tiny_config();
    let state = TrainingState::new(c.generator_config(), c.discriminator_config().unwrap(), 5).unwrap();
    let ckpt = dir.join("model.bin");
    checkpoint::save(&ckpt, &state).unwrap();
    let sample = &toy_dataset(&ToyConfig { side: 16, count: 1, tau: (0.3, 0.3), l_min: 4, seed: 2 }, &[1]).unwrap()[0];
    let (lines, csdf, photo) = (dir.join("in.lines.png"), dir.join("in.csdf"), dir.join("photo.png"));
    write_linemap(&lines, &sample.lines).unwrap();
    write_csdf(&csdf, &distance_field(&sample.lines)).unwrap();
    write_rgb(&photo, &sample.photo).unwrap();
    (ckpt, lines, csdf, photo)
}

#[test]
fn generate_is_deterministic_and_reads_both_inputs() {
    let d = tempfile::tempdir().unwrap();
    let (ckpt, lines, csdf, _) = fixture(d.path());
    let outs: Vec<Vec<u8>> = [("a.png", &lines), ("b.png", &lines), ("c.png", &csdf)]
        .iter()
        .map(|(name, input)| {
            let out = d.path().join(name);
            let r = csagan(&["generate", "--ckpt", s(&ckpt), "--in", s(input), "--out", s(&out)]);
            assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
            std::fs::read(out).unwrap()
        })
        .collect();
    assert_eq!(outs[0], outs[1]);
    // Line map and stored field encode the same condition.
    assert_eq!(outs[0], outs[2]);
}

#[test]
fn tau_sweep_names_outputs_by_threshold() {
    let d = tempfile::tempdir().unwrap();
    let (ckpt, _, _, photo) = fixture(d.path());
    let out = d.path().join("sweep");
    let r = csagan(&["tau-sweep", "--ckpt", s(&ckpt), "--photo", s(&photo), "--taus", "0.3,0.6", "--lmin", "4", "--out", s(&out)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    for name in ["lines_tau0.30.png", "output_tau0.30.png", "lines_tau0.60.png", "output_tau0.60.png"] {
        assert!(out.join(name).is_file(), "missing {name}");
    }
}

#[test]
fn evaluate_prints_all_metrics() {
    let d = tempfile::tempdir().unwrap();
    let samples = toy_dataset(&ToyConfig { side: 16, count: 12, tau: (0.3, 0.3), l_min: 4, seed: 1 }, &[1]).unwrap();
    for (k, sample) in samples.iter().enumerate() {
        let sub = if k % 2 == 0 { "real" } else { "fake" };
        write_rgb(&d.path().join(sub).join(format!("{k}.png")), &sample.photo).unwrap();
    }
    let report = d.path().join("report.json");
    let r = csagan(&[
        "evaluate",
        "--real",
        s(&d.path().join("real")),
        "--fake",
        s(&d.path().join("fake")),
        "--splits",
        "2",
        "--out",
        s(&report),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(report).unwrap()).unwrap();
    for key in ["is_mean", "is_std", "fid", "kid"] {
        assert!(v[key].as_f64().is_some_and(f64::is_finite), "{key} in {v}");
    }
    assert_eq!(v["n_real"], 6);
    assert!(v["is_mean"].as_f64().unwrap() >= 1.0 - 1e-9);
}

#[test]
fn preprocess_writes_both_splits() {
    let d = tempfile::tempdir().unwrap();
    let photos = d.path().join("photos");
    let samples = toy_dataset(&ToyConfig { side: 40, count: 5, tau: (0.3, 0.3), l_min: 4, seed: 3 }, &[1]).unwrap();
    for (k, sample) in samples.iter().enumerate() {
        write_rgb(&photos.join(format!("p{k}.png")), &sample.photo).unwrap();
    }
    std::fs::write(photos.join("notes.txt"), "not an image").unwrap();
    let out = d.path().join("pairs");
    let r = csagan(&[
        "preprocess", "--in", s(&photos), "--out", s(&out), "--set", "image_side=32", "--tau", "0.3", "--lmin", "4", "--split", "0.6",
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let count = |sub: &str| std::fs::read_dir(out.join(sub)).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "csdf")).count();
    assert_eq!(count("train") + count("test"), 5);
    assert_eq!(count("train"), 3);
}

#[test]
fn bad_config_key_is_named() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("bad.cfg");
    std::fs::write(&cfg, "data.source = toy\nstage2.lr_g = -1\n").unwrap();
    let r = csagan(&["train", "--run", s(&d.path().join("run")), "--config", s(&cfg)]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("stage2.lr_g"));

    let r = csagan(&["train", "--run", s(&d.path().join("run")), "--set", "generator.depth=3"]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("generator.depth"));
}

#[test]
fn unknown_subcommand_or_flag_prints_usage() {
    for args in [&["frobnicate"][..], &["generate", "--bogus"][..], &[][..]] {
        let r = csagan(args);
        assert!(!r.status.success(), "{args:?}");
        assert!(String::from_utf8_lossy(&r.stderr).contains("Usage"), "{args:?}");
    }
}

#[test]
fn train_runs_in_a_directory_and_resumes() {
    let d = tempfile::tempdir().unwrap();
    let run = d.path().join("run");
    let sets = [
        "data.source=toy", "data.toy_count=8", "image_side=16", "linemap.l_min=4", "generator.base_channels=8", "generator.n_down=2",
        "discriminator.n_d=2", "discriminator.base_channels=4", "train.batch_size=2", "train.checkpoint_every=2",
    ];
    let mut args = vec!["train", "--run", s(&run), "--max-steps", "3"];
    for kv in &sets {
        args.extend(["--set", kv]);
    }
    let r = csagan(&args);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    // The second invocation picks the stored config up from the directory.
    let r = csagan(&["train", "--run", s(&run), "--max-steps", "5"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(String::from_utf8_lossy(&r.stdout).contains("step 5"));
    let rows = csagan::trace::read_rows(&run.join("trace.csv")).unwrap();
    assert_eq!(rows.len(), 5);
    assert!(!run.join("csagan.lock").exists());
}
