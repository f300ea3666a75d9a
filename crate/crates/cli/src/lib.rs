//! Std companion to `byzgather-core`: file formats, configuration, the run
//! harness, sweeps, replay and the command-line front end.

pub mod cli;
pub mod config;
pub mod graph_io;
pub mod harness;
pub mod plan_io;
pub mod replay;
pub mod sweep;
pub mod tracefile;
