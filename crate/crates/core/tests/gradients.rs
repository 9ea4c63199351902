use std::time::Instant;

use csagan_core::gradcheck::{end_to_end, suite, TOLERANCE};

#[test]
fn full_suite_passes() {
    let t = Instant::now();
    let reports = suite(7).unwrap();
    for r in &reports {
        println!("{:<32} coords {:>4}  max rel err {:.3e}", r.name, r.coords, r.max_rel_error);
    }
    for r in &reports {
        assert!(r.passed(), "{} max rel err {:.3e} >= {TOLERANCE:e}", r.name, r.max_rel_error);
    }
    assert!(t.elapsed().as_secs() < 60);
}

#[test]
fn suite_passes_for_other_seeds() {
    for seed in [1, 2, 3] {
        for r in suite(seed).unwrap() {
            assert!(r.passed(), "seed {seed}: {} max rel err {:.3e}", r.name, r.max_rel_error);
        }
    }
}

#[test]
fn generator_end_to_end() {
    let r = end_to_end(3).unwrap();
    println!("{} {:.3e}", r.name, r.max_rel_error);
    assert!(r.passed(), "{:.3e}", r.max_rel_error);
}
