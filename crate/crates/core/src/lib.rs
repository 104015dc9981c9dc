//! Data-driven economic model predictive control of an activated-sludge
//! wastewater treatment plant.
//!
//! The pipeline: a 145-state plant simulator ([`plant`]) driven by influent
//! series ([`influent`]) produces measurements and economic stage costs
//! ([`indices`]); an input-output Koopman model ([`dioko`], built on the small
//! autodiff kernel in [`nn`]) learns to predict the stage cost from sensed
//! states; and a receding-horizon controller ([`empc`]) condenses the learned
//! model into a box-constrained QP ([`qp`]) at every sampling instant.

pub mod dioko;
pub mod empc;
pub mod error;
pub mod excitation;
pub mod experiments;
pub mod indices;
pub mod influent;
pub mod nn;
pub mod plant;
pub mod qp;

pub use error::{Error, Result};
