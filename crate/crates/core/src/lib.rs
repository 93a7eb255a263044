//! Adaptive parallel tempering.
//!
//! Replica-exchange Metropolis over a ladder of tempered densities whose
//! inverse temperatures, proposal variances and length are tuned while the
//! chain runs:
//!
//! * log inverse temperatures follow a Robbins-Monro recursion driving each
//!   adjacent pair's exchange ratio toward a target value,
//! * per-coordinate proposal variances track the local spread of each
//!   replica's states,
//! * the ladder is cut back to the first replica whose proposal volume
//!   exceeds its sample variance volume on several consecutive checks.
//!
//! ```no_run
//! use adaptive_pt::config::RunConfig;
//!
//! let mut config = RunConfig::section41();
//! config.run.seed = 7;
//! let report = adaptive_pt::sampler::run(&config).unwrap();
//! println!("final ladder length {}", report.final_ladder.len);
//! ```

pub mod adaptation;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod kernel;
pub mod output;
pub mod rng;
pub mod sampler;
pub mod target;
pub mod tempering;
pub mod validate;

pub use config::RunConfig;
pub use error::{Error, OutsideSupport, Result};
pub use sampler::{run, RunReport};
pub use target::TargetModel;
