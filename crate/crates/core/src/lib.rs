//! Search-strategy optimization through a differentiable surrogate.
//!
//! The crate covers the whole pipeline below the command line: hole-pose
//! processes ([`env`]), the execution simulator ([`sim`]), the surrogate
//! model ([`shadow`]), its training regimes ([`trainers`]), gradient-based
//! parameter search ([`inversion`]) and the comparison methods
//! ([`baselines`]).

pub mod baselines;
pub mod dataset_io;
pub mod env;
pub mod inversion;
pub mod params;
pub mod shadow;
pub mod sim;
pub mod trainers;
mod error;
pub mod rng;

pub use error::{Error, Result};
