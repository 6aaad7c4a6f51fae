//! Simulation and verification toolkit for heterogeneous multi-player
//! bandits under adversarial attacks.

pub mod adversary;
pub mod comms;
pub mod env;
pub mod exploration;
pub mod matching;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod oracle;
pub mod harness;
