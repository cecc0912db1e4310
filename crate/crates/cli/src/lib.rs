//! Command-line pipeline for link-weight repair: safety checks, repair
//! runs with JSON reports, benchmarks and sampling studies.

pub mod bench;
pub mod cli;
pub mod config;
pub mod pipeline;
pub mod study;

pub use cli::run;
