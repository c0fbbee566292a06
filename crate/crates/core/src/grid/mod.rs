//! Power flow and multi-machine transient simulation with embedded LELs.

pub mod case;
pub mod network;
pub mod sim;
pub mod sweep;

pub use case::{
    fixture, load_case, load_case_file, resolve_case, Branch, Bus, BusType, Generator, GridCase,
    LelPlacement,
};
pub use network::{build_ybus, power_flow, PowerFlowSolution};
pub use sim::{
    run_simulation, run_simulation_partial, Collapse, Dynamics, Event, EventKind, EventSchedule,
    GridEvent, LelSeries, ScheduledEvent, SimConfig, SimResult,
};
pub use sweep::{classify, penetration_sweep, place_lels, FaultScenario, Regimes, SweepRow};
