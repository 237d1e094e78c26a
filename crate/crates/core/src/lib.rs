//! Diffusions on metric trees built pathwise: independent reflected
//! diffusions on the edges, run on separate clocks that a quantum
//! allocation scheme interleaves by their weighted local times at shared
//! vertices.

pub mod assembler;
pub mod clock;
pub mod config;
pub mod edge;
pub mod error;
pub mod graph;
pub mod rng;
pub mod verify;

pub use error::{Error, Result};
