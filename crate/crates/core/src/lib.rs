pub mod checkpoint;
pub mod corpus;
pub mod decoding;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod probe;
pub mod report;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
