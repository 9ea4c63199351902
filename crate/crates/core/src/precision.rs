//! Engine-wide numeric precision.
//!
//! Storage is always `f64`. In [`Precision::F32`] mode every value produced by
//! a tensor operation is rounded through `f32`, which reproduces single
//! precision results; [`Precision::F64`] keeps full double precision and is
//! what every finite-difference check runs under. The mode is fixed before
//! any computation starts.

use core::sync::atomic::{AtomicU8, Ordering};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

static MODE: AtomicU8 = AtomicU8::new(1);

pub fn set_precision(p: Precision) {
    MODE.store(matches!(p, Precision::F64) as u8, Ordering::SeqCst);
}

pub fn precision() -> Precision {
    if MODE.load(Ordering::Relaxed) == 1 {
        Precision::F64
    } else {
        Precision::F32
    }
}

#[inline]
pub(crate) fn round_in_place(values: &mut [f64]) {
    if precision() == Precision::F32 {
        for v in values.iter_mut() {
            *v = *v as f32 as f64;
        }
    }
}

impl core::str::FromStr for Precision {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(crate::Error::invalid(alloc::format!(
                "precision must be f32 or f64, got {other:?}"
            ))),
        }
    }
}
