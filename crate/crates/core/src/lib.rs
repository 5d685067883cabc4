//! Online local learning for deep spiking neural networks.
//!
//! Layers of leaky integrate-and-fire neurons are trained one timestep at a
//! time, each against its own fixed random readout, with a closed-form
//! three-factor update (error × surrogate gate × presynaptic trace).

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod events;
pub mod learning;
pub mod network;
pub mod oracle;
pub mod trainer;

pub use error::{Error, Result};
