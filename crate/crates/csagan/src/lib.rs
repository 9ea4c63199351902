//! File formats, datasets, checkpointing and the command-line front end
//! around `csagan-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod io;
pub mod lock;
pub mod run;
pub mod trace;

pub use error::{Error, Result};
