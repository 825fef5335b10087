pub mod channels;
pub mod envs;
pub mod error;
pub mod harness;
pub mod learner;
pub mod permtest;
pub mod rng;
pub mod search;

pub use error::{Error, Result};
