//! Configuration, data files, synthetic data and report writers.

pub mod config;
pub mod data;
pub mod report;
pub mod synth;

pub use config::ScenarioConfig;
pub use data::{load_data, read_data, write_data, LoadedData};
pub use synth::synth_month;
