//! Large electronic load (LEL) modeling toolkit.
//!
//! The crate is organized around the load model and the machinery built on
//! top of it:
//!
//! * [`workload`] – duty-idle utilization driven by a mean-reverting process
//!   with log-normal burst impulses.
//! * [`thermal_aux`] – induction-motor cooling load with stall protection and a
//!   ZIP auxiliary load.
//! * [`protection`] – trip/reconnect state machine acting on the retained-load
//!   fraction κ.
//! * [`lel`] – composition of the above into one grid-facing load.
//! * [`tcl`] – temporal contrastive features and the pattern vector.
//! * [`calibration`] – pattern-consistent (and MSE) parameter calibration.
//! * [`grid`] – power flow and multi-machine transient simulation.
//! * [`metrics`] – shape-similarity and post-fault system metrics.
//! * [`io`] – trace/result CSV formats.
//!
//! The load-model math is generic over [`Real`] (`f32` or `f64`); the grid
//! simulator and calibration pipeline work in `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod error;
pub mod grid;
pub mod io;
pub mod lel;
pub mod metrics;
pub mod protection;
pub mod tcl;
pub mod thermal_aux;
pub mod trace;
pub mod workload;

mod real;

pub use error::{Error, Result};
pub use real::Real;
pub use trace::Trace;

pub use lel::{Archetype, LelParams, LelState};
pub use protection::{ProtectionMode, ProtectionParams, ProtectionState};
pub use tcl::{Encoder, PatternVector, Window};
pub use thermal_aux::{AuxParams, CoolingParams, MotorMode, MotorState};
pub use workload::{WorkloadParams, WorkloadState};

/// Single-precision variants of the generic model types.
pub type WorkloadParamsF32 = workload::WorkloadParams<f32>;
pub type CoolingParamsF32 = thermal_aux::CoolingParams<f32>;
pub type AuxParamsF32 = thermal_aux::AuxParams<f32>;
pub type ProtectionParamsF32 = protection::ProtectionParams<f32>;
pub type LelParamsF32 = lel::LelParams<f32>;
pub type EncoderF32 = tcl::Encoder<f32>;
pub type PatternVectorF32 = tcl::PatternVector<f32>;
