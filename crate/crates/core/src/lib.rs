pub mod dynamics;
pub mod estimator;
pub mod error;
pub mod filter;
pub mod harness;
pub mod imm;
pub mod measurements;
pub mod model;
pub mod sim;

pub use error::{Error, Result};
