use std::io;

use thiserror::Error;

use crate::network::{BranchId, BusId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("case line {line}: {path}: {message}")]
    Parse {
        line: usize,
        path: String,
        message: String,
    },

    #[error("invalid case: {path}: {message}")]
    Validation { path: String, message: String },

    #[error("power flow did not converge after {iterations} iterations (max mismatch {mismatch:.3e} p.u.)")]
    PowerFlowDiverged { iterations: usize, mismatch: f64 },

    #[error("network is disconnected over in-service branches ({reachable} of {total} buses reachable from the slack)")]
    Disconnected { reachable: usize, total: usize },

    #[error("network solve failed at step {step}: residual {mismatch:.3e} p.u. after {iterations} iterations")]
    AlgebraicDiverged {
        step: usize,
        iterations: usize,
        mismatch: f64,
    },

    #[error(
        "loss of synchronism at step {step}: machine at bus {bus} reached delta = {delta:.3} rad"
    )]
    LossOfSynchronism { step: usize, bus: BusId, delta: f64 },

    #[error(
        "outage of branch {branch} islands the network; only connected topologies are simulated"
    )]
    Islanding { branch: BranchId },

    #[error("unknown branch {0}")]
    UnknownBranch(BranchId),

    #[error("zero terminal voltage at generator bus {bus}")]
    ZeroVoltage { bus: BusId },

    #[error("non-finite value in {what} at step {step}")]
    NonFinite { what: &'static str, step: usize },

    #[error("no bus satisfies the observability rule for the configured PMU placement")]
    EmptyObservableSet,

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("snapshot bus sets differ between steps {prev} and {curr}")]
    SnapshotMismatch { prev: usize, curr: usize },

    #[error("all particle likelihoods underflowed at step {step}")]
    DegenerateCorrection { step: usize },

    #[error("T^2 is undefined before the first MEWMA update")]
    StatisticUndefined,

    #[error("threshold calibration failed: {0}")]
    Calibration(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed measurement file: {0}")]
    Measurement(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
