//! File formats, run configuration and command implementations for the
//! `hass` command-line tool. The numerical core lives in `hass_core`.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod params_file;

pub use dataset::{decode_dataset, encode_dataset, read_dataset, write_dataset, Dataset};
pub use error::FormatError;
pub use params_file::{decode_params, encode_params, read_params, save_model};
