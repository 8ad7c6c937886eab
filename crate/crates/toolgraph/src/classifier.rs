//! Failure attribution for erroneous calls.
//!
//! Every call is checked against four sequential predicates (name
//! resolution, schema conformance, dataflow availability, value
//! consistency) and the first failing predicate names the failure type.
//! A value counts as revealed once it appears in the prompt or has been
//! produced by a prior fully correct call; a wrong observed value does not
//! reveal the ground truth.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::executor::{CallRecord, CallRequest, EpisodeTrace};
use crate::taskgen::{TaskInstance, VariableSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FailureType {
    FunctionNotFound,
    WrongNumberOfInputs,
    ValueNotYetKnown,
    IncorrectValue,
}

impl FailureType {
    pub const ALL: [FailureType; 4] = [
        FailureType::FunctionNotFound,
        FailureType::WrongNumberOfInputs,
        FailureType::ValueNotYetKnown,
        FailureType::IncorrectValue,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            FailureType::FunctionNotFound => "function_not_found",
            FailureType::WrongNumberOfInputs => "wrong_number_of_inputs",
            FailureType::ValueNotYetKnown => "value_not_yet_known",
            FailureType::IncorrectValue => "incorrect_value",
        }
    }
}

/// True once the ground truth behind `input` is available to the agent:
/// prompt variables always are; edge-bound inputs require a prior correct
/// call of their producer.
fn value_revealed(task: &TaskInstance, correct_fns: &HashSet<String>, input: &VariableSpec) -> bool {
    if task.is_prompt_var(&input.name) {
        return true;
    }
    match task.producer_by_subtype(&input.subtype) {
        Some(producer) => correct_fns.contains(&producer.fname),
        None => true,
    }
}

/// Classifies one call given the set of functions correctly called so far.
/// Returns `None` for a fully correct call. When both mismatched-argument
/// predicates apply, dataflow availability wins: `ValueNotYetKnown`
/// outranks `IncorrectValue`.
pub fn classify_call(
    task: &TaskInstance,
    correct_fns: &HashSet<String>,
    call: &CallRequest,
) -> Option<FailureType> {
    let Some(schema) = task.schema(&call.fname) else {
        return Some(FailureType::FunctionNotFound);
    };
    let expected: BTreeSet<&str> = schema.inputs.iter().map(|v| v.name.as_str()).collect();
    let got: BTreeSet<&str> = call.args.keys().map(String::as_str).collect();
    if expected != got {
        return Some(FailureType::WrongNumberOfInputs);
    }
    let mismatched: Vec<&VariableSpec> = schema
        .inputs
        .iter()
        .filter(|v| call.args[&v.name] != v.value)
        .collect();
    if mismatched.is_empty() {
        return None;
    }
    if mismatched
        .iter()
        .any(|v| !value_revealed(task, correct_fns, v))
    {
        return Some(FailureType::ValueNotYetKnown);
    }
    Some(FailureType::IncorrectValue)
}

/// Recomputes the classification of every call in a stored trace by
/// replaying the revealed set from the beginning.
pub fn reclassify_calls(task: &TaskInstance, calls: &[CallRecord]) -> Vec<Option<FailureType>> {
    let mut correct_fns = HashSet::new();
    let mut labels = Vec::with_capacity(calls.len());
    for record in calls {
        let request = CallRequest {
            fname: record.fname.clone(),
            args: record.args.clone(),
        };
        let label = classify_call(task, &correct_fns, &request);
        if label.is_none() && record.executed() {
            correct_fns.insert(record.fname.clone());
        }
        labels.push(label);
    }
    labels
}

/// Per-type counts over classified calls.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureBreakdown {
    pub function_not_found: usize,
    pub wrong_number_of_inputs: usize,
    pub value_not_yet_known: usize,
    pub incorrect_value: usize,
    pub total_errors: usize,
}

impl FailureBreakdown {
    pub fn record(&mut self, failure: FailureType) {
        match failure {
            FailureType::FunctionNotFound => self.function_not_found += 1,
            FailureType::WrongNumberOfInputs => self.wrong_number_of_inputs += 1,
            FailureType::ValueNotYetKnown => self.value_not_yet_known += 1,
            FailureType::IncorrectValue => self.incorrect_value += 1,
        }
        self.total_errors += 1;
    }

    pub fn count(&self, failure: FailureType) -> usize {
        match failure {
            FailureType::FunctionNotFound => self.function_not_found,
            FailureType::WrongNumberOfInputs => self.wrong_number_of_inputs,
            FailureType::ValueNotYetKnown => self.value_not_yet_known,
            FailureType::IncorrectValue => self.incorrect_value,
        }
    }

    /// Percentage of `failure` over all classified calls; zero when there
    /// are no errors.
    pub fn percentage(&self, failure: FailureType) -> f64 {
        if self.total_errors == 0 {
            return 0.0;
        }
        100.0 * self.count(failure) as f64 / self.total_errors as f64
    }

    pub fn merge(&mut self, other: &FailureBreakdown) {
        self.function_not_found += other.function_not_found;
        self.wrong_number_of_inputs += other.wrong_number_of_inputs;
        self.value_not_yet_known += other.value_not_yet_known;
        self.incorrect_value += other.incorrect_value;
        self.total_errors += other.total_errors;
    }
}

/// Aggregates the per-call classifications stored in `traces`.
pub fn summarize_failures<'a, I>(traces: I) -> FailureBreakdown
where
    I: IntoIterator<Item = &'a EpisodeTrace>,
{
    let mut breakdown = FailureBreakdown::default();
    for trace in traces {
        for call in &trace.calls {
            if let Some(failure) = call.classification {
                breakdown.record(failure);
            }
        }
    }
    breakdown
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    use crate::taskgen::{generate_task, GenConfig};

    fn fixture() -> TaskInstance {
        // 3-node chain: root -> mid -> target
        generate_task(&GenConfig::new(3, 2, 61)).unwrap()
    }

    fn call(fname: &str, args: &[(&str, i64)]) -> CallRequest {
        CallRequest {
            fname: fname.to_string(),
            args: args
                .iter()
                .map(|(k, v)| (k.to_string(), *v))
                .collect::<BTreeMap<_, _>>(),
        }
    }

    #[test]
    fn unknown_function_name() {
        let task = fixture();
        let got = classify_call(&task, &HashSet::new(), &call("func_nope", &[("x", 1)]));
        assert_eq!(got, Some(FailureType::FunctionNotFound));
    }

    #[test]
    fn wrong_argument_key_set() {
        let task = fixture();
        let root = &task.schemas[0];
        let free = &root.inputs[0];
        let extra = call(&root.fname, &[(&free.name, free.value), ("extra", 2)]);
        assert_eq!(
            classify_call(&task, &HashSet::new(), &extra),
            Some(FailureType::WrongNumberOfInputs)
        );
        let empty = call(&root.fname, &[]);
        assert_eq!(
            classify_call(&task, &HashSet::new(), &empty),
            Some(FailureType::WrongNumberOfInputs)
        );
    }

    #[test]
    fn guessed_value_before_the_producer_succeeded() {
        let task = fixture();
        let mid = &task.schemas[1];
        let input = &mid.inputs[0];
        let guess = if input.value == 500 { 501 } else { 500 };
        assert_eq!(
            classify_call(&task, &HashSet::new(), &call(&mid.fname, &[(&input.name, guess)])),
            Some(FailureType::ValueNotYetKnown)
        );
    }

    #[test]
    fn wrong_value_after_reveal_is_incorrect_value() {
        let task = fixture();
        let root = &task.schemas[0];
        let free = &root.inputs[0];
        // prompt variables are revealed from the start
        let wrong = if free.value == 999 { 100 } else { free.value + 1 };
        assert_eq!(
            classify_call(&task, &HashSet::new(), &call(&root.fname, &[(&free.name, wrong)])),
            Some(FailureType::IncorrectValue)
        );
        // an edge input becomes revealed once its producer was called correctly
        let mid = &task.schemas[1];
        let input = &mid.inputs[0];
        let mut correct = HashSet::new();
        correct.insert(root.fname.clone());
        let stale = if input.value == 999 { 100 } else { input.value + 1 };
        assert_eq!(
            classify_call(&task, &correct, &call(&mid.fname, &[(&input.name, stale)])),
            Some(FailureType::IncorrectValue)
        );
    }

    #[test]
    fn correct_call_gets_no_label() {
        let task = fixture();
        let root = &task.schemas[0];
        let free = &root.inputs[0];
        assert_eq!(
            classify_call(&task, &HashSet::new(), &call(&root.fname, &[(&free.name, free.value)])),
            None
        );
    }

    #[test]
    fn unrevealed_mismatch_outranks_revealed_mismatch() {
        // need a function with one prompt input and one edge input: a chain
        // with extra_free_inputs=1 gives the mid function both kinds
        let cfg = GenConfig {
            n_core: 3,
            depth: 2,
            n_conn: 0,
            n_dis: 0,
            extra_free_inputs: 1,
            seed: 67,
        };
        let task = generate_task(&cfg).unwrap();
        let mid = &task.schemas[1];
        let edge_input = mid
            .inputs
            .iter()
            .find(|v| !task.is_prompt_var(&v.name))
            .unwrap();
        let free_input = mid
            .inputs
            .iter()
            .find(|v| task.is_prompt_var(&v.name))
            .unwrap();
        let wrong = |v: i64| if v == 999 { 100 } else { v + 1 };
        let mixed = call(
            &mid.fname,
            &[
                (&edge_input.name, wrong(edge_input.value)),
                (&free_input.name, wrong(free_input.value)),
            ],
        );
        assert_eq!(
            classify_call(&task, &HashSet::new(), &mixed),
            Some(FailureType::ValueNotYetKnown)
        );
        // once the producer has succeeded, the same mixed call is a pure
        // value-consistency failure
        let mut correct = HashSet::new();
        correct.insert(task.schemas[0].fname.clone());
        assert_eq!(
            classify_call(&task, &correct, &mixed),
            Some(FailureType::IncorrectValue)
        );
    }

    #[test]
    fn incorrect_observation_does_not_reveal_the_truth() {
        let task = fixture();
        let mid = &task.schemas[1];
        let input = &mid.inputs[0];
        // the root was called, but never correctly: the channel stays unrevealed
        let correct: HashSet<String> = HashSet::new();
        let wrong = if input.value == 999 { 100 } else { input.value + 1 };
        assert_eq!(
            classify_call(&task, &correct, &call(&mid.fname, &[(&input.name, wrong)])),
            Some(FailureType::ValueNotYetKnown)
        );
    }

    #[test]
    fn breakdown_arithmetic() {
        let mut b = FailureBreakdown::default();
        for f in [
            FailureType::ValueNotYetKnown,
            FailureType::ValueNotYetKnown,
            FailureType::IncorrectValue,
            FailureType::FunctionNotFound,
        ] {
            b.record(f);
        }
        assert_eq!(b.total_errors, 4);
        assert_eq!(b.percentage(FailureType::ValueNotYetKnown), 50.0);
        assert_eq!(b.percentage(FailureType::IncorrectValue), 25.0);
        assert_eq!(b.percentage(FailureType::FunctionNotFound), 25.0);
        assert_eq!(b.percentage(FailureType::WrongNumberOfInputs), 0.0);
        let sum: f64 = FailureType::ALL.iter().map(|&f| b.percentage(f)).sum();
        assert!((sum - 100.0).abs() < 0.1);
    }

    #[test]
    fn empty_input_gives_zero_breakdown() {
        let b = summarize_failures([]);
        assert_eq!(b.total_errors, 0);
        for f in FailureType::ALL {
            assert_eq!(b.percentage(f), 0.0);
        }
    }
}
