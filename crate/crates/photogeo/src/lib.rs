//! File formats, run configuration, the replay projector, a thread-pool
//! executor and the commands behind the `photogeo` binary.

pub mod app;
pub mod config;
pub mod error;
pub mod exec;
pub mod io;
pub mod replay;

pub use error::{Error, Result};
