//! Tilt-stability analysis for composite problems `min f0(x) + g(F(x))`.

pub mod analyzer;
pub mod composite;
pub mod error;
pub mod numkernel;
pub mod oracle;
pub mod proxcore;
pub mod rng;
pub mod sovf;

pub use error::{Result, TiltError};
