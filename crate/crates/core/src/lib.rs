//! Simulation and verification tools for the estimability of learning rules
//! on explicit finite domains.

pub mod error;
pub mod estimability;
pub mod experiments;
pub mod families;
pub mod gf2;
pub mod lp;
pub mod model;
pub mod rng;
pub mod rules;
pub mod scenario;
pub mod stability;

pub use error::{Error, Result};
