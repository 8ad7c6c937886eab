//! Agent abstraction, scripted reference agents, and the episode runner.

mod llm;
mod scripted;

pub use llm::{
    AdapterError, Cassette, CassetteEntry, ChatConfig, ChatTransport, HttpTransport, LlmAgent,
    RecordingTransport, ReplayTransport, RequestLimiter,
};
pub use scripted::{GreedyTypeChaser, NullAgent, OracleAgent, RandomAgent, StaleValueAgent};

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde_json::Value;

use crate::executor::{
    start_episode, CallRequest, CallResponse, CallStatus, EpisodeOptions, EpisodeResult,
};
use crate::taskgen::{NodeKind, TaskInstance};

/// Everything an agent may see: the prompt, the tool schemas, and the
/// calls/responses exchanged so far. Never contains ground-truth values
/// the executor has not revealed.
#[derive(Debug, Clone, Copy)]
pub struct AgentTurnInput<'a> {
    pub prompt: &'a str,
    pub tools: &'a Value,
    pub history: &'a [TurnRecord],
}

/// One completed tool turn: the calls issued and their responses, aligned
/// by index.
#[derive(Debug, Clone)]
pub struct TurnRecord {
    pub calls: Vec<CallRequest>,
    pub responses: Vec<CallResponse>,
}

/// What an agent does with its turn.
#[derive(Debug, Clone)]
pub enum AgentTurn {
    Calls(Vec<CallRequest>),
    Answer(String),
}

pub trait Agent {
    fn name(&self) -> &str;

    fn next_turn(&mut self, input: AgentTurnInput<'_>) -> Result<AgentTurn, AdapterError>;

    /// Asked when the tool phase is over but the agent has not answered
    /// (empty call list, or repeated cap rejections).
    fn final_answer(&mut self, _input: AgentTurnInput<'_>) -> Result<String, AdapterError> {
        Ok(String::new())
    }
}

/// A resolved sequence of calls covering all core functions in
/// topological order; executing it succeeds with exactly `n_core` calls.
#[derive(Debug, Clone)]
pub struct CallPlan {
    pub steps: Vec<CallRequest>,
}

/// The cost-minimal ground-truth plan. Uses task internals agents never
/// see; for harness validation only.
pub fn plan_oracle(task: &TaskInstance) -> CallPlan {
    let graph = &task.graph;
    let core: Vec<usize> = graph.core_ids().map(|id| id.0).collect();
    let mut indegree = vec![0usize; graph.len()];
    for (p, c) in &graph.edges {
        if graph.kind(*p) == NodeKind::Core && graph.kind(*c) == NodeKind::Core {
            indegree[c.0] += 1;
        }
    }
    // Kahn's algorithm, smallest node id first for a stable order
    let mut ready: BinaryHeap<Reverse<usize>> = core
        .iter()
        .copied()
        .filter(|&i| indegree[i] == 0)
        .map(Reverse)
        .collect();
    let mut steps = Vec::with_capacity(core.len());
    while let Some(Reverse(i)) = ready.pop() {
        let schema = &task.schemas[i];
        steps.push(CallRequest {
            fname: schema.fname.clone(),
            args: schema
                .inputs
                .iter()
                .map(|v| (v.name.clone(), v.value))
                .collect(),
        });
        for child in graph.children_of(crate::taskgen::NodeId(i)) {
            if graph.kind(child) == NodeKind::Core {
                indegree[child.0] -= 1;
                if indegree[child.0] == 0 {
                    ready.push(Reverse(child.0));
                }
            }
        }
    }
    debug_assert_eq!(steps.len(), core.len());
    CallPlan { steps }
}

/// View of one tool schema as agents see it on the wire.
#[derive(Debug, Clone)]
pub struct ToolView {
    pub fname: String,
    pub params: Vec<String>,
    pub description: String,
}

/// Parses the rendered tool-schema array back into per-function views.
pub fn parse_tools(tools: &Value) -> Vec<ToolView> {
    tools
        .as_array()
        .map(|arr| {
            arr.iter()
                .filter_map(|t| {
                    let f = t.get("function")?;
                    Some(ToolView {
                        fname: f.get("name")?.as_str()?.to_string(),
                        params: f
                            .get("parameters")?
                            .get("required")?
                            .as_array()?
                            .iter()
                            .filter_map(|p| p.as_str().map(str::to_string))
                            .collect(),
                        description: f
                            .get("description")
                            .and_then(Value::as_str)
                            .unwrap_or_default()
                            .to_string(),
                    })
                })
                .collect()
        })
        .unwrap_or_default()
}

/// Drives an agent through one full episode: turns until the agent stops
/// calling or the cap shuts it down, then final-answer parsing. Transport
/// failures mark the episode as an infrastructure failure (scored as a
/// task failure unless the harness is told to exclude them).
pub fn run_agent(
    agent: &mut dyn Agent,
    task: &TaskInstance,
    options: EpisodeOptions,
) -> EpisodeResult {
    let prompt = crate::taskgen::render_user_prompt(task);
    let tools = crate::taskgen::render_tool_schemas(task);
    let mut history: Vec<TurnRecord> = Vec::new();
    let mut state = start_episode(task, options);
    let mut capped_turns = 0usize;

    let mut result = loop {
        let input = AgentTurnInput {
            prompt: &prompt,
            tools: &tools,
            history: &history,
        };
        match agent.next_turn(input) {
            Err(err) => break infrastructure_failure(state, err),
            Ok(AgentTurn::Answer(text)) => {
                state.execute_turn(&[]);
                break state.finalize(&text);
            }
            Ok(AgentTurn::Calls(calls)) if calls.is_empty() => {
                state.execute_turn(&[]);
                let input = AgentTurnInput {
                    prompt: &prompt,
                    tools: &tools,
                    history: &history,
                };
                match agent.final_answer(input) {
                    Ok(text) => break state.finalize(&text),
                    Err(err) => break infrastructure_failure_finished(state, err),
                }
            }
            Ok(AgentTurn::Calls(calls)) => {
                let responses = state.execute_turn(&calls);
                let all_capped = responses
                    .iter()
                    .all(|r| r.status == CallStatus::CapExceeded);
                history.push(TurnRecord { calls, responses });
                if all_capped {
                    capped_turns += 1;
                    // the agent already saw one full rejection turn; stop driving it
                    if capped_turns >= 2 {
                        state.execute_turn(&[]);
                        let input = AgentTurnInput {
                            prompt: &prompt,
                            tools: &tools,
                            history: &history,
                        };
                        match agent.final_answer(input) {
                            Ok(text) => break state.finalize(&text),
                            Err(err) => break infrastructure_failure_finished(state, err),
                        }
                    }
                } else {
                    capped_turns = 0;
                }
            }
        }
    };
    result.trace.agent = agent.name().to_string();
    result
}

fn infrastructure_failure(
    mut state: crate::executor::EpisodeState<'_>,
    err: AdapterError,
) -> EpisodeResult {
    state.execute_turn(&[]);
    infrastructure_failure_finished(state, err)
}

fn infrastructure_failure_finished(
    state: crate::executor::EpisodeState<'_>,
    err: AdapterError,
) -> EpisodeResult {
    let mut result = state.finalize("");
    result.success = false;
    result.trace.success = false;
    result.trace.infrastructure_error = Some(err.to_string());
    result
}
