//! File formats, persistence, parallel evaluation and the command line for
//! [`splitpoint_core`].

pub mod arch;
pub mod cli;
pub mod error;
pub mod export;
pub mod parallel;
pub mod simconfig;
pub mod table_file;

pub use error::FormatError;
pub use splitpoint_core as core;
