//! Append-only CSV loss traces.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use csagan_core::training::StepRecord;

use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const HEADER: &str = "step,stage,loss_D,loss_G_adv,loss_L1,loss_FM,lr_G,lr_D";

pub fn format_row(r: &StepRecord) -> String {
    format!(
        "{},{},{:?},{:?},{:?},{:?},{:?},{:?}",
        r.step, r.stage, r.loss_d, r.loss_g_adv, r.loss_l1, r.loss_fm, r.lr_g, r.lr_d
    )
}

/// Appends rows, writing the header first when the file is new or empty.
pub fn append(path: &Path, rows: &[StepRecord]) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
    let empty = f.metadata().map_err(|e| Error::io(path, e))?.len() == 0;
    let mut text = String::new();
    if empty {
        text.push_str(HEADER);
        text.push('\n');
    }
    for r in rows {
        text.push_str(&format_row(r));
        text.push('\n');
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Drops rows past `last_step`, e.g. rows written after the checkpoint a run
/// resumes from.
pub fn truncate_after(path: &Path, last_step: u64) -> Result<()> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut out = String::new();
    for (i, line) in text.lines().enumerate() {
        let keep = i == 0
            || line.split(',').next().and_then(|s| s.parse::<u64>().ok()).is_some_and(|step| step <= last_step);
        if keep {
            out.push_str(line);
            out.push('\n');
        }
    }
    if out != text {
        write_atomic(path, out.as_bytes())?;
    }
    Ok(())
}

/// Data rows of a trace, header excluded.
pub fn read_rows(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().skip(1).map(str::to_string).collect())
}
