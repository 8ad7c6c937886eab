//! Scripted reference agents for desk-scale verification: a ground-truth
//! oracle, adversarial random/greedy callers, an immediate-answer agent,
//! and a stale-value agent that models the argument-propagation failure
//! the mitigation targets.

use std::collections::HashMap;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agents::{
    parse_tools, plan_oracle, AdapterError, Agent, AgentTurn, AgentTurnInput, TurnRecord,
};
use crate::executor::{CallRequest, CallStatus};
use crate::taskgen::TaskInstance;

fn last_ok_value(history: &[TurnRecord]) -> Option<i64> {
    history
        .iter()
        .rev()
        .flat_map(|t| t.responses.iter().rev())
        .find(|r| r.status == CallStatus::Ok)
        .and_then(|r| r.value)
}

fn saw_cap_rejection(history: &[TurnRecord]) -> bool {
    history
        .last()
        .map(|t| t.responses.iter().any(|r| r.status == CallStatus::CapExceeded))
        .unwrap_or(false)
}

/// Executes the ground-truth plan, one call per turn, then answers with
/// the last observed value. Uses task internals; for validation only.
pub struct OracleAgent {
    steps: Vec<CallRequest>,
}

impl OracleAgent {
    pub fn new(task: &TaskInstance) -> Self {
        Self {
            steps: plan_oracle(task).steps,
        }
    }
}

impl Agent for OracleAgent {
    fn name(&self) -> &str {
        "oracle"
    }

    fn next_turn(&mut self, input: AgentTurnInput<'_>) -> Result<AgentTurn, AdapterError> {
        let step = input.history.len();
        if step < self.steps.len() {
            Ok(AgentTurn::Calls(vec![self.steps[step].clone()]))
        } else {
            let answer = last_ok_value(input.history)
                .map(|v| v.to_string())
                .unwrap_or_default();
            Ok(AgentTurn::Answer(answer))
        }
    }
}

/// Issues schema-valid calls with uniformly random three-digit arguments
/// until the cap rejects it, then answers with its best guess.
pub struct RandomAgent {
    rng: ChaCha8Rng,
}

impl RandomAgent {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Agent for RandomAgent {
    fn name(&self) -> &str {
        "random"
    }

    fn next_turn(&mut self, input: AgentTurnInput<'_>) -> Result<AgentTurn, AdapterError> {
        if saw_cap_rejection(input.history) {
            return Ok(AgentTurn::Answer(self.final_answer(input)?));
        }
        let tools = parse_tools(input.tools);
        let Some(tool) = tools.choose(&mut self.rng) else {
            return Ok(AgentTurn::Answer(String::new()));
        };
        let args = tool
            .params
            .iter()
            .map(|p| (p.clone(), self.rng.random_range(100..=999)))
            .collect();
        Ok(AgentTurn::Calls(vec![CallRequest {
            fname: tool.fname.clone(),
            args,
        }]))
    }

    fn final_answer(&mut self, input: AgentTurnInput<'_>) -> Result<String, AdapterError> {
        Ok(last_ok_value(input.history)
            .map(|v| v.to_string())
            .unwrap_or_else(|| "no value found".to_string()))
    }
}

/// Makes no calls and answers immediately.
pub struct NullAgent {
    answer: String,
}

impl NullAgent {
    pub fn new(answer: impl Into<String>) -> Self {
        Self {
            answer: answer.into(),
        }
    }
}

impl Default for NullAgent {
    fn default() -> Self {
        Self::new("I cannot determine the value.")
    }
}

impl Agent for NullAgent {
    fn name(&self) -> &str {
        "null"
    }

    fn next_turn(&mut self, _input: AgentTurnInput<'_>) -> Result<AgentTurn, AdapterError> {
        Ok(AgentTurn::Answer(self.answer.clone()))
    }
}

/// Where a stale-value step takes each argument from.
enum ParamSource {
    /// Induced wrong literal.
    Fixed(i64),
    /// Prompt-provided value, always correct.
    Prompt(i64),
    /// Producer output channel: latest mitigation snapshot when present,
    /// otherwise the first observed response of the producer.
    Channel {
        producer_fname: String,
        output_name: String,
    },
}

struct StaleStep {
    fname: String,
    params: Vec<(String, ParamSource)>,
}

/// Follows the oracle plan but first calls the initial root with one wrong
/// free-input value, then never updates its belief about a producer's
/// output unless a mitigation snapshot restates it. Succeeds on the
/// stale-value scenario iff mitigation is enabled.
pub struct StaleValueAgent {
    steps: Vec<StaleStep>,
}

impl StaleValueAgent {
    pub fn new(task: &TaskInstance) -> Self {
        let plan = plan_oracle(task);
        let resolve = |request: &CallRequest| -> Vec<(String, ParamSource)> {
            let schema = task.schema(&request.fname).expect("plan calls exist");
            schema
                .inputs
                .iter()
                .map(|input| {
                    let source = if task.is_prompt_var(&input.name) {
                        ParamSource::Prompt(input.value)
                    } else {
                        let producer = task
                            .producer_by_subtype(&input.subtype)
                            .expect("edge inputs have a producer");
                        ParamSource::Channel {
                            producer_fname: producer.fname.clone(),
                            output_name: producer.output.name.clone(),
                        }
                    };
                    (input.name.clone(), source)
                })
                .collect()
        };

        let mut steps = Vec::with_capacity(plan.steps.len() + 1);
        // induced failure: the first root call carries one wrong value
        let first = &plan.steps[0];
        let mut induced = resolve(first);
        if let Some((_, source)) = induced.first_mut() {
            let truth = match source {
                ParamSource::Prompt(v) | ParamSource::Fixed(v) => *v,
                ParamSource::Channel { .. } => unreachable!("plan roots have only free inputs"),
            };
            *source = ParamSource::Fixed(if truth == 999 { 100 } else { truth + 1 });
        }
        steps.push(StaleStep {
            fname: first.fname.clone(),
            params: induced,
        });
        for step in &plan.steps {
            steps.push(StaleStep {
                fname: step.fname.clone(),
                params: resolve(step),
            });
        }
        Self { steps }
    }

    fn resolve_channel(
        history: &[TurnRecord],
        producer_fname: &str,
        output_name: &str,
    ) -> Option<i64> {
        // latest snapshot wins when mitigation is on
        let snapshot_value = history
            .iter()
            .rev()
            .flat_map(|t| t.responses.iter().rev())
            .filter_map(|r| r.known_values.as_ref())
            .next()
            .and_then(|known| {
                let prefix = format!("{output_name} (");
                known
                    .iter()
                    .find(|(k, _)| k.starts_with(&prefix))
                    .map(|(_, v)| *v)
            });
        if snapshot_value.is_some() {
            return snapshot_value;
        }
        // otherwise the first guess: the first observed producer output
        history
            .iter()
            .flat_map(|t| t.calls.iter().zip(t.responses.iter()))
            .find(|(c, r)| c.fname == producer_fname && r.status == CallStatus::Ok)
            .and_then(|(_, r)| r.value)
    }
}

impl Agent for StaleValueAgent {
    fn name(&self) -> &str {
        "stale_value"
    }

    fn next_turn(&mut self, input: AgentTurnInput<'_>) -> Result<AgentTurn, AdapterError> {
        let index = input.history.len();
        if index >= self.steps.len() {
            return Ok(AgentTurn::Answer(self.final_answer(input)?));
        }
        let step = &self.steps[index];
        let args = step
            .params
            .iter()
            .map(|(name, source)| {
                let value = match source {
                    ParamSource::Fixed(v) | ParamSource::Prompt(v) => *v,
                    ParamSource::Channel {
                        producer_fname,
                        output_name,
                    } => Self::resolve_channel(input.history, producer_fname, output_name)
                        .expect("producer was called in an earlier step"),
                };
                (name.clone(), value)
            })
            .collect();
        Ok(AgentTurn::Calls(vec![CallRequest {
            fname: step.fname.clone(),
            args,
        }]))
    }

    fn final_answer(&mut self, input: AgentTurnInput<'_>) -> Result<String, AdapterError> {
        Ok(last_ok_value(input.history)
            .map(|v| v.to_string())
            .unwrap_or_else(|| "no value".to_string()))
    }
}

/// Works from public information only: parses the prompt and the schema
/// descriptions, then each turn calls some not-yet-called function whose
/// typed inputs all look satisfiable from prompt values and observed
/// outputs. Answers with the target's snapshot value when mitigation
/// reveals it, otherwise with the latest observed sink-channel value.
pub struct GreedyTypeChaser {
    rng: ChaCha8Rng,
}

impl GreedyTypeChaser {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn prompt_values(prompt: &str) -> HashMap<String, i64> {
        prompt
            .lines()
            .filter_map(|line| {
                let rest = line.strip_prefix("Variable ")?;
                let (name, value) = rest.split_once(" = ")?;
                Some((name.to_string(), value.trim().parse().ok()?))
            })
            .collect()
    }

    fn target_name(prompt: &str) -> Option<String> {
        let line = prompt.lines().next()?;
        let name = line.rsplit("variable ").next()?;
        Some(name.trim_end_matches('.').to_string())
    }
}

type Channel = (String, String);

fn parse_description(desc: &str) -> Option<(Vec<Channel>, Channel)> {
    let rest = desc
        .strip_prefix("Processes variable of ")
        .or_else(|| desc.strip_prefix("Processes variables of "))?;
    let (inputs_text, output_text) = rest.split_once(" to produce ")?;
    let parse_channel = |s: &str| -> Option<Channel> {
        let inner = s.strip_prefix('(')?.strip_suffix(')')?;
        let (vtype, subtype) = inner.split_once(" with ")?;
        Some((vtype.to_string(), subtype.to_string()))
    };
    let inputs = inputs_text
        .split("), ")
        .map(|s| {
            let owned = if s.ends_with(')') {
                s.to_string()
            } else {
                format!("{s})")
            };
            parse_channel(&owned)
        })
        .collect::<Option<Vec<_>>>()?;
    let output = parse_channel(output_text)?;
    Some((inputs, output))
}

impl Agent for GreedyTypeChaser {
    fn name(&self) -> &str {
        "greedy"
    }

    fn next_turn(&mut self, input: AgentTurnInput<'_>) -> Result<AgentTurn, AdapterError> {
        if saw_cap_rejection(input.history) {
            return Ok(AgentTurn::Answer(self.final_answer(input)?));
        }
        let prompt_values = Self::prompt_values(input.prompt);
        let tools = parse_tools(input.tools);
        let parsed: Vec<_> = tools
            .iter()
            .map(|t| (t, parse_description(&t.description)))
            .collect();

        // latest observed value per output channel
        let mut observed: HashMap<Channel, i64> = HashMap::new();
        let mut called: HashMap<String, ()> = HashMap::new();
        for turn in input.history {
            for (call, response) in turn.calls.iter().zip(turn.responses.iter()) {
                called.insert(call.fname.clone(), ());
                if response.status != CallStatus::Ok {
                    continue;
                }
                if let Some((_, Some((_, output)))) =
                    parsed.iter().find(|(t, _)| t.fname == call.fname)
                {
                    if let Some(v) = response.value {
                        observed.insert(output.clone(), v);
                    }
                }
            }
        }

        let mut candidates = Vec::new();
        for (tool, channels) in &parsed {
            if called.contains_key(&tool.fname) {
                continue;
            }
            let Some((input_channels, _)) = channels else {
                continue;
            };
            let mut args = Vec::with_capacity(tool.params.len());
            let mut satisfiable = true;
            for (param, channel) in tool.params.iter().zip(input_channels.iter()) {
                if let Some(v) = prompt_values.get(param) {
                    args.push((param.clone(), *v));
                } else if let Some(v) = observed.get(channel) {
                    args.push((param.clone(), *v));
                } else {
                    satisfiable = false;
                    break;
                }
            }
            if satisfiable && tool.params.len() == input_channels.len() {
                candidates.push(CallRequest {
                    fname: tool.fname.clone(),
                    args: args.into_iter().collect(),
                });
            }
        }

        match candidates.choose(&mut self.rng) {
            Some(call) => Ok(AgentTurn::Calls(vec![call.clone()])),
            None => Ok(AgentTurn::Answer(self.final_answer(input)?)),
        }
    }

    fn final_answer(&mut self, input: AgentTurnInput<'_>) -> Result<String, AdapterError> {
        // a mitigation snapshot can pin the target variable by name
        if let Some(target) = Self::target_name(input.prompt) {
            let prefix = format!("{target} (");
            let from_snapshot = input
                .history
                .iter()
                .rev()
                .flat_map(|t| t.responses.iter().rev())
                .filter_map(|r| r.known_values.as_ref())
                .next()
                .and_then(|known| {
                    known
                        .iter()
                        .find(|(k, _)| k.starts_with(&prefix))
                        .map(|(_, v)| *v)
                });
            if let Some(v) = from_snapshot {
                return Ok(v.to_string());
            }
        }

        // otherwise: the latest observed value on a sink channel (an output
        // no function consumes)
        let tools = parse_tools(input.tools);
        let parsed: Vec<_> = tools
            .iter()
            .filter_map(|t| parse_description(&t.description))
            .collect();
        let consumed: Vec<&Channel> = parsed.iter().flat_map(|(ins, _)| ins.iter()).collect();
        let mut sink_value = None;
        for turn in input.history {
            for (call, response) in turn.calls.iter().zip(turn.responses.iter()) {
                if response.status != CallStatus::Ok {
                    continue;
                }
                let Some(tool) = tools.iter().find(|t| t.fname == call.fname) else {
                    continue;
                };
                let Some((_, output)) = parse_description(&tool.description) else {
                    continue;
                };
                if !consumed.contains(&&output) {
                    if let Some(v) = response.value {
                        sink_value = Some(v);
                    }
                }
            }
        }
        Ok(sink_value
            .or_else(|| last_ok_value(input.history))
            .map(|v| v.to_string())
            .unwrap_or_else(|| "unable to determine the value".to_string()))
    }
}
