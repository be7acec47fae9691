pub mod alias;
pub mod error;
pub mod graph;
pub mod mgwalk;
pub mod rng;

pub use error::{Error, Result};
pub mod embed;
mod par;
pub mod tensor;
pub mod ranker;
pub mod model;
pub mod metrics;
pub mod optim;
pub mod baselines;
pub mod oracle;
pub mod config;
pub mod synth;
pub mod trainer;
