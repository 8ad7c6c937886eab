//! Synthetic multi-step function-calling benchmarks over hidden dependency DAGs.
//!
//! The pipeline: [`taskgen`] builds a typed function-dependency DAG and
//! materializes it into callable schemas with a user prompt; [`executor`]
//! runs deterministic multi-turn episodes against those schemas; [`agents`]
//! provides scripted reference agents plus a chat-completions adapter;
//! [`classifier`] attributes every erroneous call to one of four failure
//! types; [`harness`] expands experiment grids, runs them with seed
//! discipline, and writes CSV/JSON reports.

pub mod agents;
pub mod classifier;
pub mod cli;
pub mod error;
pub mod executor;
pub mod harness;
pub mod seeding;
pub mod taskgen;

pub use error::ConfigError;
pub use taskgen::{generate_task, DepGraph, FunctionSchema, GenConfig, TaskInstance};
