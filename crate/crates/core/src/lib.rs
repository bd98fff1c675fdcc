pub mod ablation;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod fusion;
pub mod metrics;
pub mod optim;
pub mod oracle;
pub mod pool;
mod rng;
pub mod service;
pub mod soe;

pub use error::{Error, Result};
