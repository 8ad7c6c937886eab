//! Task generation: dependency-DAG construction plus schema materialization
//! and wire-format rendering.

mod graph;
mod materialize;
mod render;

pub use graph::{
    add_connected_irrelevant, add_disconnected_irrelevant, build_core_dag, DepGraph, NodeId,
    NodeKind, NodeRecord,
};
pub use materialize::{materialize_task, FunctionSchema, GenConfig, TaskInstance, VariableSpec};
pub use render::{render_tool_schemas, render_user_prompt};

use std::fs;
use std::io;
use std::path::Path;

use serde_json::Value;

use crate::error::ConfigError;
use crate::seeding;

/// Runs both generation stages end to end: core DAG, distractors, then
/// materialization. Fully deterministic given the config (seed included).
pub fn generate_task(config: &GenConfig) -> Result<TaskInstance, ConfigError> {
    config.validate()?;
    let mut rng = seeding::derive_rng(config.seed, "graph");
    let graph = build_core_dag(config.n_core, config.depth, &mut rng)?;
    let graph = add_connected_irrelevant(graph, config.n_conn, &mut rng);
    let graph = add_disconnected_irrelevant(graph, config.n_dis, &mut rng);
    Ok(materialize_task(graph, config))
}

/// Self-contained JSON document for one task: the instance fields plus the
/// rendered prompt and tool schemas, for replay and inspection.
pub fn task_document(task: &TaskInstance) -> Value {
    let mut doc = serde_json::to_value(task).expect("task serializes");
    let obj = doc.as_object_mut().unwrap();
    obj.insert("prompt".into(), Value::String(render_user_prompt(task)));
    obj.insert("tool_schemas".into(), render_tool_schemas(task));
    doc
}

pub fn write_task_file(task: &TaskInstance, path: &Path) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(&task_document(task))?;
    text.push('\n');
    fs::write(path, text)
}

/// Reads a task document back; the derived `prompt`/`tool_schemas` fields
/// are ignored during deserialization.
pub fn read_task_file(path: &Path) -> io::Result<TaskInstance> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(io::Error::other)
}
