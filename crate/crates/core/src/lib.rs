#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod classifier;
pub mod embedding;
pub mod gmm;
pub mod gp;
pub mod importance;
pub mod knob;
pub mod math;
pub mod nn;
pub mod orchestrator;
pub mod plan;
pub mod sim;
pub mod store;
pub mod train;
pub mod tuner;
