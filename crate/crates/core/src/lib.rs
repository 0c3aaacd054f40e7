pub mod averaging;
pub mod bounds;
pub mod config;
pub mod data;
pub mod error;
pub mod group;
pub mod harness;
pub mod io;
pub mod kernel;
pub mod measures;
pub mod risk;
pub mod rng;

pub use error::{Error, Result};
