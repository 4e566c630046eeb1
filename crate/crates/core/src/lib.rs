pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod dsp;
pub mod embed;
pub mod error;
pub mod eval;
pub mod infer;
pub mod model;
pub mod nn;
pub mod optim;
pub mod pitch;
pub mod toy;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
