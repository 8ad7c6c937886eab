//! Turns a dependency graph into named function schemas with typed
//! variables, ground-truth values, and prompt inputs.
//!
//! Linking semantics: a producer's output and the consumer input bound to
//! it are distinct variables with distinct names but share the same type
//! and subtype; the subtype identifies the channel. Prompt variables are
//! the exception and are matched to schema parameters by exact name.

use std::collections::{BTreeMap, HashSet};

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::seeding;
use crate::taskgen::graph::DepGraph;

/// Generation parameters for one task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenConfig {
    /// Functions required on the solution path.
    pub n_core: usize,
    /// Longest dependency chain, in edges, within the core subgraph.
    pub depth: usize,
    /// Connected irrelevant (distractor) functions.
    #[serde(default)]
    pub n_conn: usize,
    /// Disconnected irrelevant functions.
    #[serde(default)]
    pub n_dis: usize,
    /// Additional free inputs per function beyond the one every root gets.
    #[serde(default)]
    pub extra_free_inputs: usize,
    pub seed: u64,
}

impl GenConfig {
    pub fn new(n_core: usize, depth: usize, seed: u64) -> Self {
        Self {
            n_core,
            depth,
            n_conn: 0,
            n_dis: 0,
            extra_free_inputs: 0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.depth < 1 {
            return Err(ConfigError::DepthTooSmall);
        }
        if self.n_core < self.depth + 1 {
            return Err(ConfigError::CoreBudgetTooSmall {
                n_core: self.n_core,
                depth: self.depth,
            });
        }
        Ok(())
    }

    pub fn total_nodes(&self) -> usize {
        self.n_core + self.n_conn + self.n_dis
    }
}

/// A named, typed variable with its ground-truth value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    pub vtype: String,
    pub subtype: String,
    pub value: i64,
}

/// One callable function: parameters, single output, templated description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FunctionSchema {
    pub fname: String,
    pub inputs: Vec<VariableSpec>,
    pub output: VariableSpec,
    pub description: String,
}

/// A fully materialized task, self-contained and replayable from its config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskInstance {
    pub config: GenConfig,
    pub graph: DepGraph,
    /// One schema per graph node, indexed by node id.
    pub schemas: Vec<FunctionSchema>,
    /// Free-input variables revealed to the agent, in generation order.
    pub prompt_vars: Vec<(String, i64)>,
    /// Output variable of the target node.
    pub target_var: String,
    /// Every variable name to its correct value.
    pub ground_truth: BTreeMap<String, i64>,
}

impl TaskInstance {
    pub fn n_core(&self) -> usize {
        self.config.n_core
    }

    pub fn schema(&self, fname: &str) -> Option<&FunctionSchema> {
        self.schemas.iter().find(|s| s.fname == fname)
    }

    /// The function whose output carries `subtype`, if any.
    pub fn producer_by_subtype(&self, subtype: &str) -> Option<&FunctionSchema> {
        self.schemas.iter().find(|s| s.output.subtype == subtype)
    }

    pub fn is_prompt_var(&self, name: &str) -> bool {
        self.prompt_vars.iter().any(|(n, _)| n == name)
    }

    pub fn ground_truth_of(&self, name: &str) -> Option<i64> {
        self.ground_truth.get(name).copied()
    }

    pub fn target_truth(&self) -> i64 {
        self.ground_truth[&self.target_var]
    }

    /// Looks a variable up by name across all outputs and inputs.
    pub fn var_spec(&self, name: &str) -> Option<&VariableSpec> {
        self.schemas
            .iter()
            .map(|s| &s.output)
            .find(|v| v.name == name)
            .or_else(|| {
                self.schemas
                    .iter()
                    .flat_map(|s| s.inputs.iter())
                    .find(|v| v.name == name)
            })
    }

    pub fn target_schema(&self) -> &FunctionSchema {
        &self.schemas[self.graph.target_id().0]
    }
}

/// Unique lowercase identifiers of length 3..=6 under a fixed prefix.
struct IdentGen {
    prefix: &'static str,
    used: HashSet<String>,
}

impl IdentGen {
    fn new(prefix: &'static str) -> Self {
        Self {
            prefix,
            used: HashSet::new(),
        }
    }

    fn fresh(&mut self, rng: &mut impl Rng) -> String {
        loop {
            let len = rng.random_range(3..=6);
            let body: String = (0..len)
                .map(|_| char::from(b'a' + rng.random_range(0..26u8)))
                .collect();
            let ident = format!("{}{}", self.prefix, body);
            if self.used.insert(ident.clone()) {
                return ident;
            }
        }
    }
}

fn three_digit(rng: &mut impl Rng) -> i64 {
    rng.random_range(100..=999)
}

fn describe(inputs: &[VariableSpec], output: &VariableSpec) -> String {
    let noun = if inputs.len() == 1 { "variable" } else { "variables" };
    let ins = inputs
        .iter()
        .map(|v| format!("({} with {})", v.vtype, v.subtype))
        .collect::<Vec<_>>()
        .join(", ");
    format!(
        "Processes {noun} of {ins} to produce ({} with {})",
        output.vtype, output.subtype
    )
}

/// Assigns names, types, subtypes, and three-digit values to every node of
/// `graph`. Deterministic given `(graph, config.seed)`: the RNG stream is
/// derived from the seed here rather than threaded in from the caller.
pub fn materialize_task(graph: DepGraph, config: &GenConfig) -> TaskInstance {
    let mut rng = seeding::derive_rng(config.seed, "materialize");
    let n = graph.nodes.len();

    let mut type_gen = IdentGen::new("type_");
    let mut subtype_gen = IdentGen::new("subtype_");
    let mut fname_gen = IdentGen::new("func_");
    let mut var_gen = IdentGen::new("");

    let pool_size = 3.max(n.div_ceil(3));
    let type_pool: Vec<String> = (0..pool_size).map(|_| type_gen.fresh(&mut rng)).collect();

    let mut fnames = Vec::with_capacity(n);
    let mut outputs = Vec::with_capacity(n);
    for _ in 0..n {
        fnames.push(fname_gen.fresh(&mut rng));
        outputs.push(VariableSpec {
            name: var_gen.fresh(&mut rng),
            vtype: type_pool.choose(&mut rng).unwrap().clone(),
            subtype: subtype_gen.fresh(&mut rng),
            value: three_digit(&mut rng),
        });
    }

    let mut schemas = Vec::with_capacity(n);
    let mut prompt_vars = Vec::new();
    let mut ground_truth = BTreeMap::new();
    for i in 0..n {
        let mut inputs = Vec::new();
        for parent in graph.parents_of(graph.nodes[i].id) {
            let src = &outputs[parent.0];
            inputs.push(VariableSpec {
                name: var_gen.fresh(&mut rng),
                vtype: src.vtype.clone(),
                subtype: src.subtype.clone(),
                value: src.value,
            });
        }
        // roots stay callable from the prompt alone
        let free_count = usize::from(inputs.is_empty()) + config.extra_free_inputs;
        for _ in 0..free_count {
            let spec = VariableSpec {
                name: var_gen.fresh(&mut rng),
                vtype: type_pool.choose(&mut rng).unwrap().clone(),
                subtype: subtype_gen.fresh(&mut rng),
                value: three_digit(&mut rng),
            };
            prompt_vars.push((spec.name.clone(), spec.value));
            inputs.push(spec);
        }
        for v in &inputs {
            ground_truth.insert(v.name.clone(), v.value);
        }
        ground_truth.insert(outputs[i].name.clone(), outputs[i].value);
        schemas.push(FunctionSchema {
            fname: fnames[i].clone(),
            description: describe(&inputs, &outputs[i]),
            inputs,
            output: outputs[i].clone(),
        });
    }

    let target_var = outputs[graph.target_id().0].name.clone();
    TaskInstance {
        config: *config,
        graph,
        schemas,
        prompt_vars,
        target_var,
        ground_truth,
    }
}
