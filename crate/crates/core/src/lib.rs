//! Detection of transmission-line outages from a partial deployment of
//! phasor measurement units.
//!
//! The crate bundles a classical-model transient simulator that produces
//! ground-truth trajectories, a synthesizer for noisy PMU streams, a bootstrap
//! particle filter tracking generator rotor states and a MEWMA chart that
//! monitors active-power residuals.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiment;
pub mod mewma;
pub mod network;
pub mod pf;
pub mod pipeline;
pub mod pmu;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
pub use network::{AdmittanceMatrix, BranchId, BusId, NetworkCase, SteadyState, TopologyRevision};
pub use sim::{GeneratorState, LoadModel, Trajectory};
