//! Std front end for `dhglm-core`: data files, configuration, parallel
//! execution, run artifacts and the `dhglm` command.

pub use dhglm_core as core;

pub mod compare;
pub mod config;
pub mod exec;
pub mod io;
pub mod presets;
pub mod report;
pub mod run;
