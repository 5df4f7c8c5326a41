//! Operator tooling for blockrar: the trial-conduct HTTP service and its
//! session persistence. The `blockrar` binary wraps these together with the
//! solve, simulate, sweep and threshold commands.

pub mod service;
pub mod session;
