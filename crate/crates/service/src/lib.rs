//! HTTP service and evaluation store behind the `drawsim` command.

pub mod api;
pub mod evaluations;
