//! Library surface of the experiment driver: configuration parsing, CSV and
//! plot artifacts, and the experiment runners. The `cilab` binary is a thin
//! argument-parsing shell over these modules.

pub mod artifact;
pub mod config;
pub mod experiments;
