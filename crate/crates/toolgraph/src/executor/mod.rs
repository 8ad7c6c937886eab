//! Deterministic multi-turn execution environment.
//!
//! Calls are validated against the task's schemas. A call returns the
//! correct output only when every supplied value equals the ground truth
//! of its bound variable; any other value yields a seeded wrong output in
//! [100, 999] that never equals the ground truth and is identical on
//! replay. Unknown functions and arity mismatches come back as in-band
//! error responses that still consume call budget.

mod trace;

pub use trace::{read_trace, read_trace_file, write_trace, write_trace_file, EpisodeTrace};

use std::collections::{BTreeMap, BTreeSet, HashSet};

use indexmap::IndexMap;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::classifier::{classify_call, FailureType};
use crate::seeding;
use crate::taskgen::TaskInstance;

/// Per-episode knobs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeOptions {
    /// Restate all known variable values in every successful response.
    pub mitigation: bool,
    /// Hard limit on executed calls; calls beyond it are rejected.
    pub call_cap: usize,
}

impl EpisodeOptions {
    /// Default cap: twice the minimum required number of calls.
    pub fn for_task(task: &TaskInstance) -> Self {
        Self::with_multiplier(task, 2)
    }

    pub fn with_multiplier(task: &TaskInstance, multiplier: usize) -> Self {
        Self {
            mitigation: false,
            call_cap: (multiplier * task.n_core()).max(1),
        }
    }

    pub fn mitigated(mut self) -> Self {
        self.mitigation = true;
        self
    }
}

/// One attempted function call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRequest {
    pub fname: String,
    pub args: BTreeMap<String, i64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CallStatus {
    Ok,
    FunctionNotFound,
    SchemaViolation,
    CapExceeded,
}

/// In-band response to one call. Non-`Ok` statuses are results, not
/// exceptions; they are logged like any other call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallResponse {
    pub status: CallStatus,
    pub value: Option<i64>,
    /// Present only in mitigation mode on successful calls: every known
    /// variable as "name (vtype with subtype)" mapped to its observed value.
    pub known_values: Option<IndexMap<String, i64>>,
    pub message: String,
}

impl CallResponse {
    /// Wire form seen by agents: `{"value": N}` plus `known_values` in
    /// mitigation mode, or `{"error": "..."}` for non-Ok statuses.
    pub fn wire_json(&self) -> Value {
        match self.status {
            CallStatus::Ok => {
                let mut obj = serde_json::Map::new();
                obj.insert("value".into(), json!(self.value.expect("Ok carries a value")));
                if let Some(known) = &self.known_values {
                    obj.insert("known_values".into(), json!(known));
                }
                Value::Object(obj)
            }
            _ => json!({ "error": self.message }),
        }
    }
}

/// Latest observation of a variable, with whether it is the ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub value: i64,
    pub correct: bool,
}

/// One logged call: request, outcome, classification, and the running call
/// count after the call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub turn: usize,
    pub fname: String,
    pub args: BTreeMap<String, i64>,
    pub status: CallStatus,
    pub value: Option<i64>,
    pub classification: Option<FailureType>,
    pub calls_made: usize,
}

impl CallRecord {
    /// Whether the call actually ran (cap rejections do not).
    pub fn executed(&self) -> bool {
        self.status != CallStatus::CapExceeded
    }
}

/// Mutable state of one episode. Values observed so far live in `known`
/// (latest observation wins); the monotone set of correctly-called
/// functions drives classification.
pub struct EpisodeState<'t> {
    task: &'t TaskInstance,
    options: EpisodeOptions,
    known: IndexMap<String, Observation>,
    correct_fns: HashSet<String>,
    calls_made: usize,
    finished: bool,
    turn: usize,
    log: Vec<CallRecord>,
}

/// Starts an episode: the agent knows exactly the prompt variables.
pub fn start_episode<'t>(task: &'t TaskInstance, options: EpisodeOptions) -> EpisodeState<'t> {
    assert!(options.call_cap >= 1, "call cap must be at least 1");
    let known = task
        .prompt_vars
        .iter()
        .map(|(name, value)| {
            (
                name.clone(),
                Observation {
                    value: *value,
                    correct: true,
                },
            )
        })
        .collect();
    EpisodeState {
        task,
        options,
        known,
        correct_fns: HashSet::new(),
        calls_made: 0,
        finished: false,
        turn: 0,
        log: Vec::new(),
    }
}

impl<'t> EpisodeState<'t> {
    pub fn task(&self) -> &'t TaskInstance {
        self.task
    }

    pub fn options(&self) -> &EpisodeOptions {
        &self.options
    }

    pub fn calls_made(&self) -> usize {
        self.calls_made
    }

    pub fn finished(&self) -> bool {
        self.finished
    }

    pub fn known(&self) -> &IndexMap<String, Observation> {
        &self.known
    }

    pub fn log(&self) -> &[CallRecord] {
        &self.log
    }

    /// Executes one call and logs it. Classification is computed against
    /// the pre-call state, so it describes the call itself regardless of
    /// whether the cap rejected it.
    pub fn execute_call(&mut self, call: &CallRequest) -> CallResponse {
        assert!(!self.finished, "episode already finished");
        let classification = classify_call(self.task, &self.correct_fns, call);
        let response = self.evaluate(call);
        if response.status == CallStatus::Ok && classification.is_none() {
            self.correct_fns.insert(call.fname.clone());
        }
        self.log.push(CallRecord {
            turn: self.turn,
            fname: call.fname.clone(),
            args: call.args.clone(),
            status: response.status,
            value: response.value,
            classification,
            calls_made: self.calls_made,
        });
        response
    }

    fn evaluate(&mut self, call: &CallRequest) -> CallResponse {
        if self.calls_made >= self.options.call_cap {
            return CallResponse {
                status: CallStatus::CapExceeded,
                value: None,
                known_values: None,
                message: format!(
                    "call cap of {} reached; no further calls are executed, give your final answer",
                    self.options.call_cap
                ),
            };
        }
        let Some(schema) = self.task.schema(&call.fname) else {
            self.calls_made += 1;
            return CallResponse {
                status: CallStatus::FunctionNotFound,
                value: None,
                known_values: None,
                message: format!("function '{}' does not exist", call.fname),
            };
        };
        let expected: BTreeSet<&str> = schema.inputs.iter().map(|v| v.name.as_str()).collect();
        let got: BTreeSet<&str> = call.args.keys().map(String::as_str).collect();
        if expected != got {
            self.calls_made += 1;
            return CallResponse {
                status: CallStatus::SchemaViolation,
                value: None,
                known_values: None,
                message: format!(
                    "arguments for '{}' do not match its schema: expected [{}], got [{}]",
                    call.fname,
                    expected.iter().copied().collect::<Vec<_>>().join(", "),
                    got.iter().copied().collect::<Vec<_>>().join(", "),
                ),
            };
        }
        self.calls_made += 1;
        let correct = schema.inputs.iter().all(|v| call.args[&v.name] == v.value);
        let value = if correct {
            schema.output.value
        } else {
            wrong_value(
                self.task.config.seed,
                &call.fname,
                &call.args,
                schema.output.value,
            )
        };
        self.known
            .insert(schema.output.name.clone(), Observation { value, correct });
        let known_values = self.options.mitigation.then(|| self.known_snapshot());
        CallResponse {
            status: CallStatus::Ok,
            value: Some(value),
            known_values,
            message: String::new(),
        }
    }

    /// The full known map in insertion order, keyed
    /// "name (vtype with subtype)". Incorrect observations are included
    /// as observed; nothing outside `known` is added.
    fn known_snapshot(&self) -> IndexMap<String, i64> {
        self.known
            .iter()
            .map(|(name, obs)| {
                let spec = self
                    .task
                    .var_spec(name)
                    .expect("known variables come from the task");
                (
                    format!("{} ({} with {})", name, spec.vtype, spec.subtype),
                    obs.value,
                )
            })
            .collect()
    }

    /// Runs a batch of calls in order. An empty batch marks the tool phase
    /// over; the episode then only awaits the final answer.
    pub fn execute_turn(&mut self, calls: &[CallRequest]) -> Vec<CallResponse> {
        assert!(!self.finished, "episode already finished");
        if calls.is_empty() {
            self.finished = true;
            return Vec::new();
        }
        let responses = calls.iter().map(|c| self.execute_call(c)).collect();
        self.turn += 1;
        responses
    }

    /// Parses the last integer token out of the answer text and scores the
    /// episode. No integer at all is a parse failure, recorded as such.
    pub fn finalize(self, final_answer: &str) -> EpisodeResult {
        assert!(self.finished, "finalize requires the tool phase to be over");
        let parsed_answer = last_integer(final_answer);
        let success = parsed_answer == Some(self.task.target_truth());
        let trace = EpisodeTrace {
            agent: String::new(),
            config: self.task.config,
            options: self.options,
            cell: None,
            trial: None,
            calls: self.log,
            final_answer: final_answer.to_string(),
            parsed_answer,
            success,
            calls_made: self.calls_made,
            parse_failure: parsed_answer.is_none(),
            infrastructure_error: None,
        };
        EpisodeResult {
            success,
            calls_made: self.calls_made,
            parsed_answer,
            parse_failure: parsed_answer.is_none(),
            trace,
        }
    }
}

/// Outcome of one finalized episode.
#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub success: bool,
    pub calls_made: usize,
    pub parsed_answer: Option<i64>,
    pub parse_failure: bool,
    pub trace: EpisodeTrace,
}

/// Deterministic wrong output for an invalid call: uniform over
/// [100, 999] minus the ground truth, derived from the task seed, the
/// function name, and the argument bindings. Replaying the same call
/// yields the same wrong value.
fn wrong_value(seed: u64, fname: &str, args: &BTreeMap<String, i64>, truth: i64) -> i64 {
    let mut parts: Vec<Vec<u8>> = vec![seed.to_le_bytes().to_vec(), fname.as_bytes().to_vec()];
    for (name, value) in args {
        parts.push(name.as_bytes().to_vec());
        parts.push(value.to_le_bytes().to_vec());
    }
    let views: Vec<&[u8]> = parts.iter().map(Vec::as_slice).collect();
    let mut rng = ChaCha8Rng::from_seed(seeding::digest_parts(&views));
    let draw = rng.random_range(100..=998);
    // skip over the truth: maps [100, 998] onto [100, 999] \ {truth}
    if draw >= truth {
        draw + 1
    } else {
        draw
    }
}

/// Last maximal digit run in the text, as an integer.
fn last_integer(text: &str) -> Option<i64> {
    let mut last = None;
    let mut current: Option<i64> = None;
    for ch in text.chars() {
        if let Some(d) = ch.to_digit(10) {
            let next = current
                .unwrap_or(0)
                .saturating_mul(10)
                .saturating_add(d as i64);
            current = Some(next);
        } else if current.is_some() {
            last = current.take();
        }
    }
    current.or(last)
}
