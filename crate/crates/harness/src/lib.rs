//! Evaluation harness: datasets, experiment modes, metrics, reports and the
//! `rulebook` command line.

pub mod cli;
pub mod config;
pub mod datasets;
pub mod metrics;
pub mod oracle_data;
pub mod report;
pub mod runner;
