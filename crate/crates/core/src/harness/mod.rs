//! Benchmark harness: mode problem, error measurement and the CLI commands.

pub mod analytic;
pub mod commands;
pub mod config;

pub use analytic::{analytic_solution, interpolate_initial, l2_pressure_error, ModeSolution};
pub use commands::{
    execute, exit_code, model_flops_per_element, observed_orders, read_csv, write_csv, write_outputs, BenchRecord,
    Report, CSV_HEADER,
};
pub use config::{Command, RunConfig};
