//! Static network model: case data, bus admittance matrix, AC power flow and
//! classical-machine initialization.

mod admittance;
mod case;
mod powerflow;

pub use admittance::{
    build_admittance, net_active_power, net_reactive_power, AdmittanceMatrix, TopologyRevision,
};
pub(crate) use admittance::{injection_jacobian, injections};
pub use case::{Branch, BranchId, Bus, BusId, BusKind, Generator, NetworkCase};
pub use powerflow::{
    emf_behind_reactance, init_generator_emf, solve_power_flow, solve_power_flow_with, InternalEmf,
    PowerFlowOptions, SteadyState,
};
