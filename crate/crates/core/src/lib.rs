//! Batch reinforcement learning for demand response of an electric water
//! heater: a stratified tank simulator, a backup controller, Extra-Trees
//! fitted Q-iteration, an optional autoencoder state encoder and the
//! experiment harness tying them together.

pub mod control;
pub mod data;
pub mod features;
pub mod harness;
pub mod par;
pub mod regress;
pub mod rl;
pub mod seeds;
pub mod thermal_sim;
