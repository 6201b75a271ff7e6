//! Distributed secondary control for grid-forming inverter microgrids.
//!
//! Droop and virtual-synchronous-machine inverters with distributed-averaging
//! PI (DAPI) secondary control, extended with regulation-energy-reserve
//! consensus. The crate provides the balanced phasor plant, the closed-loop
//! scenario engine, small-signal certification in the consensus disagreement
//! space, and a message-passing agent runtime that runs each secondary
//! controller as an independent peer.
//!
//! Numeric kernels are generic over [`Scalar`] (`f32` or `f64`); the
//! scenario engine, configs and wire protocol use `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod config;
pub mod integrate;
pub mod linalg;
pub mod model;
pub mod netsolve;
pub mod primary;
pub mod scalar;
pub mod secondary;
pub mod sim;
pub mod stability;

pub use scalar::Scalar;

pub type Params = model::InverterParams<f64>;
pub type State = model::InverterState<f64>;
pub type Graph = model::CommGraph<f64>;
pub type Network = netsolve::PhasorNetwork<f64>;
pub type Reduced = netsolve::Reduced<f64>;
pub type System = stability::LinearizedSystem<f64>;
pub type Report = stability::StabilityReport<f64>;
pub type Vars = secondary::ConsensusVars<f64>;
