//! Reference math, traffic model, architecture formulas and dataflow
//! simulator for a memory-efficient CNN training accelerator.

pub mod arch;
pub mod config;
pub mod error;
pub mod presets;
pub mod reference;
pub mod report;
pub mod sim;
pub mod spec;
pub mod tensor;
pub mod traffic;

pub use error::{Error, Result};
