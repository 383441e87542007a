//! Daily forest GPP modelling with recurrent networks built from scratch.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod eval;
pub mod extremes;
pub mod features;
pub mod io;
pub mod pipeline;
pub mod rnn;
pub mod solar;
pub mod synth;
pub mod timeseries;
pub mod training;

pub use error::{Error, ErrorClass, Result};
