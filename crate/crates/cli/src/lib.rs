//! Config-driven pipeline around the `shapool` library: data generation,
//! target and shadow training, shadow pools, attacks and reports.

pub mod config;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod pipeline;
pub mod property;
pub mod report;
pub mod stamp;
