//! File formats, reports, a parallel replicate runner and the command-line
//! front end for `plvcsar-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod report;
pub mod runner;

pub use error::{Error, Result};
pub use runner::Parallel;
