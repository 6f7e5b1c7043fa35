//! Predictive overprovisioning for elastic batch clusters.
//!
//! The crate turns heterogeneous job resource requirements into per-instance-type
//! bucket counts ([`resources`], [`trace`]), forecasts the next tick of those counts
//! ([`forecast`]), converts forecasts into placeholder scaling plans balanced across
//! placement groups ([`autoscaler`]) and replays the whole loop against a trace
//! ([`sim`]).

pub mod autoscaler;
pub mod error;
pub mod forecast;
pub mod resources;
pub mod sim;
pub mod synth;
pub mod trace;

pub use error::{Error, Result};
