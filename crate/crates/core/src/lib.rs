//! Simulation and verification toolkit for anonymous asynchronous
//! message-passing systems with crash faults and failure detectors.

pub mod consensus;
pub mod detectors;
pub mod harness;
pub mod model;
pub mod simulator;
pub mod transforms;
pub mod verify;
