//! Accelerated natural policy gradient on finite MDPs.
//!
//! The crate is organised bottom-up: [`mdp`] holds the environment model and
//! simulation, [`policy`] the softmax parameterizations, [`oracle`] the exact
//! dynamic-programming ground truth, [`sampler`] the single-trajectory
//! gradient estimator, [`asgd`] the accelerated inner solver and [`driver`]
//! the outer policy loop with its diagnostics.

pub mod asgd;
pub mod audit;
pub mod driver;
pub mod error;
pub mod generators;
pub mod instances;
pub mod linalg;
pub mod mdp;
pub mod oracle;
pub mod policy;
pub mod rng;
pub mod sampler;
pub mod stats;

pub use error::{AnpgError, Result};
pub use mdp::{MdpFile, TabularMdp};
pub use policy::{FeatureTable, PolicyFamily, PolicyParams, PolicyTable, SmoothnessConstants};
pub use rng::RngStream;
