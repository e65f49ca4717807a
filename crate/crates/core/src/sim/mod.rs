//! Classical-model transient simulation.

mod algebraic;
mod machine;
mod scenario;

pub use algebraic::{
    solve_network_algebraic, AlgebraicOptions, LoadModel, Loads, MachineSource, NetworkSolution,
};
pub use machine::{
    generator_electrical_power, generator_reactive_power, step_generator_states, step_machine,
    GeneratorState, SwingParams,
};
pub use scenario::{simulate_scenario, DynamicModel, ScenarioConfig, Trajectory};
