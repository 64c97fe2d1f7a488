//! Distributed simulation of 2D grids of cortical columns with
//! distance-dependent lateral connectivity.
//!
//! * [`model`]: grid, kernel and neuron types plus the closed-form stencil math
//! * [`connectome`]: deterministic keyed sampling of synapses
//! * [`engine`]: LIF-with-adaptation integration and the delivery queue
//! * [`distrib`]: partitioning, exchange planning and the lockstep runner
//! * [`bench`]: scaling, cost and memory metrics

pub mod bench;
pub mod connectome;
pub mod distrib;
pub mod engine;
pub mod error;
pub mod model;
pub mod rng;

pub use error::{Error, Result};
