//! Sample-wise push-pull simulation of decentralized stochastic optimization.

pub mod algorithms;
pub mod dataset;
pub mod datasplit;
pub mod error;
pub mod experiment;
pub mod fmt;
pub mod metrics;
pub mod objectives;
pub mod par;
pub mod reference;
pub mod rng;
pub mod sampling;
pub mod sparse;
pub mod topology;
pub mod trajectory;
pub mod verify;

pub use algorithms::{make_stepper, max_stepsize, Hyper, Preset, Stepper};
pub use error::{Error, Result};
pub use metrics::Regime;
pub use objectives::FiniteSum;
