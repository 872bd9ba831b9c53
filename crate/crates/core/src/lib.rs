pub mod acquisition;
pub mod error;
pub mod gp;
pub mod improvement;
pub mod optimizer;
pub mod pendulum;
pub mod sobol;
pub mod synth;

pub use error::{Error, Result};

/// Crate version, recorded in experiment manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
