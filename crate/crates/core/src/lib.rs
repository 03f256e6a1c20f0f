//! Discrete-event simulation of congestion in HPC interconnects.

pub mod cc;
pub mod collectives;
pub mod config;
pub mod engine;
pub mod error;
pub mod flow;
pub mod harness;
pub mod lb;
pub mod report;
pub mod topology;
pub mod units;

pub use error::{Error, Result};
