//! Dataflow simulator of the accelerator.

pub mod accumulator;
pub mod banks;
mod check;
mod engine;
pub mod line_buffer;
pub mod memory;
pub mod pool_engine;

pub use accumulator::{accumulate_sweep, AccumulatorBank, SweepOutput};
pub use banks::{bank_route, BankGrid};
pub use check::{
    check_against_model, check_against_reference, random_operands, traffic_mismatch,
    CounterMismatch, ElementCheck, Operands,
};
pub use engine::{count_super_layer, run_super_layer, SimInput, SimOptions, SimResult, PAD_ADDR};
pub use line_buffer::LineBuffer;
pub use memory::{ExternalMemory, MemoryStats, Region};
pub use pool_engine::{pool_engine_schedule, scatter_schedule, PoolSchedule};
