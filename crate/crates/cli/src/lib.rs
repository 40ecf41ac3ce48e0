//! Command-line front end for MSVG fitting: price ingestion, fit reports,
//! density grids and simulation studies.

pub mod commands;
pub mod panel;
pub mod report;
pub mod stats;
