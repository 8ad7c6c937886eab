//! Acceptance suite. One test per criterion; each prints a PASS line
//! (visible with `cargo test --test acceptance -- --nocapture`).

use std::collections::{BTreeMap, HashSet};
use std::time::Instant;

use toolgraph::agents::{run_agent, RandomAgent, StaleValueAgent};
use toolgraph::classifier::{classify_call, FailureBreakdown, FailureType};
use toolgraph::executor::{start_episode, CallRequest, CallStatus, EpisodeOptions};
use toolgraph::harness::{
    depths_for, expand_sweep, run_sweep, write_report, AgentSpec, Connectivity, SweepConfig,
};
use toolgraph::taskgen::{generate_task, render_tool_schemas, GenConfig, TaskInstance};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn grid_configs(seeds_per_cell: u64) -> Vec<GenConfig> {
    let mut configs = Vec::new();
    let mut seed = 0u64;
    for n_core in [5usize, 10, 20, 40] {
        for depth in depths_for(n_core) {
            let mut settings = vec![(0usize, 0usize)];
            for count in [10usize, 20, 40] {
                for connectivity in Connectivity::ALL {
                    settings.push(connectivity.split(count).unwrap());
                }
            }
            for (n_conn, n_dis) in settings {
                for _ in 0..seeds_per_cell {
                    seed += 1;
                    configs.push(GenConfig {
                        n_core,
                        depth,
                        n_conn,
                        n_dis,
                        extra_free_inputs: 0,
                        seed,
                    });
                }
            }
        }
    }
    configs
}

fn task_level_violations(task: &TaskInstance) -> Vec<String> {
    let mut violations = Vec::new();
    let mut names = HashSet::new();
    let mut fnames = HashSet::new();
    let mut channel_subtypes = HashSet::new();
    for schema in &task.schemas {
        if !fnames.insert(schema.fname.clone()) {
            violations.push(format!("duplicate function name {}", schema.fname));
        }
        if !names.insert(schema.output.name.clone()) {
            violations.push(format!("duplicate variable name {}", schema.output.name));
        }
        if !channel_subtypes.insert(schema.output.subtype.clone()) {
            violations.push(format!("duplicate output subtype {}", schema.output.subtype));
        }
        for input in &schema.inputs {
            if !names.insert(input.name.clone()) {
                violations.push(format!("duplicate variable name {}", input.name));
            }
        }
    }
    // free-input subtypes are fresh channels; edge inputs reuse their
    // producer's channel subtype
    for schema in &task.schemas {
        for input in &schema.inputs {
            if task.is_prompt_var(&input.name) {
                if !channel_subtypes.insert(input.subtype.clone()) {
                    violations.push(format!("free input reuses subtype {}", input.subtype));
                }
            } else if !channel_subtypes.contains(&input.subtype) {
                violations.push(format!("edge input has unknown subtype {}", input.subtype));
            }
        }
    }
    violations
}

#[test]
fn acceptance_generator_invariants() {
    let start = Instant::now();
    let configs = grid_configs(4);
    assert!(
        configs.len() >= 1000,
        "need at least 1000 (config, seed) pairs, got {}",
        configs.len()
    );
    for config in &configs {
        let task = generate_task(config).expect("valid grid config");
        let violations = task
            .graph
            .check_invariants(config.n_core, config.depth, config.n_conn, config.n_dis);
        assert!(
            violations.is_empty(),
            "graph invariants violated for {config:?}: {violations:?}"
        );
        let task_violations = task_level_violations(&task);
        assert!(
            task_violations.is_empty(),
            "task invariants violated for {config:?}: {task_violations:?}"
        );
    }
    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs_f64() < 30.0,
        "generator invariant sweep took {elapsed:?}, budget is 30s"
    );
    println!(
        "PASS: generator invariants on {} (config, seed) pairs in {elapsed:?}",
        configs.len()
    );
}

#[test]
fn acceptance_oracle_soundness() {
    let mut config = SweepConfig::new(AgentSpec::Oracle, 2024);
    config.trials = 1;
    let episodes = expand_sweep(&config).unwrap();
    // default grid: (4 + 9 + 10) depths x 10 settings x 1 trial
    assert_eq!(episodes.len(), 230);
    let outcome = run_sweep(&config, None).unwrap();
    assert_eq!(outcome.report.cells.len(), 230);
    for row in &outcome.report.cells {
        assert_eq!(
            row.metrics.success_rate, 1.0,
            "oracle failed in cell {:?}",
            row.cell
        );
        assert_eq!(
            row.metrics.avg_calls_success,
            Some(row.cell.n_core as f64),
            "oracle used extra calls in cell {:?}",
            row.cell
        );
    }
    println!(
        "PASS: oracle soundness across {} cells (100% success, calls = n_core)",
        outcome.report.cells.len()
    );
}

#[test]
fn acceptance_determinism() {
    let mut config = SweepConfig::new(AgentSpec::Random, 777);
    config.core_sizes = vec![5];
    config.irrelevant_counts = vec![0, 10];
    config.trials = 2;
    config.concurrency = 4;

    let run_once = || {
        let dir = tempfile::tempdir().unwrap();
        let outcome = run_sweep(&config, Some(dir.path())).unwrap();
        write_report(&outcome.report, dir.path()).unwrap();
        let mut files = BTreeMap::new();
        for entry in walk_files(dir.path()) {
            let rel = entry
                .strip_prefix(dir.path())
                .unwrap()
                .to_string_lossy()
                .to_string();
            files.insert(rel, std::fs::read(&entry).unwrap());
        }
        files
    };

    let first = run_once();
    let second = run_once();
    assert_eq!(
        first.keys().collect::<Vec<_>>(),
        second.keys().collect::<Vec<_>>(),
        "artifact sets differ between identical runs"
    );
    assert!(first.len() > 32 * 2, "expected task+trace files plus reports");
    for (name, bytes) in &first {
        assert_eq!(
            bytes, &second[name],
            "artifact {name} differs between identical runs"
        );
    }
    println!(
        "PASS: determinism ({} artifacts byte-identical across two runs)",
        first.len()
    );
}

fn walk_files(root: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    out
}

#[test]
fn acceptance_wrong_output_contract() {
    let config = GenConfig {
        n_core: 6,
        depth: 3,
        n_conn: 3,
        n_dis: 3,
        extra_free_inputs: 0,
        seed: 31415,
    };
    let task = generate_task(&config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let options = EpisodeOptions {
        mitigation: false,
        call_cap: 10_000,
    };
    for i in 0..1000 {
        let schema = &task.schemas[i % task.schemas.len()];
        // perturb one argument so the call is invalid but schema-conformant
        let corrupt = i % schema.inputs.len();
        let args: BTreeMap<String, i64> = schema
            .inputs
            .iter()
            .enumerate()
            .map(|(j, v)| {
                let value = if j == corrupt {
                    let offset = rng.random_range(1..=899);
                    100 + (v.value - 100 + offset) % 900
                } else {
                    v.value
                };
                (v.name.clone(), value)
            })
            .collect();
        let call = CallRequest {
            fname: schema.fname.clone(),
            args,
        };

        let mut state = start_episode(&task, options);
        let first = state.execute_call(&call);
        assert_eq!(first.status, CallStatus::Ok);
        let value = first.value.unwrap();
        assert!(
            (100..=999).contains(&value),
            "wrong output {value} is not three-digit"
        );
        assert_ne!(
            value, schema.output.value,
            "wrong output equals the ground truth for {}",
            schema.fname
        );
        // replay within the episode and from a fresh episode
        let again = state.execute_call(&call);
        assert_eq!(again.value, Some(value));
        let mut fresh = start_episode(&task, options);
        assert_eq!(fresh.execute_call(&call).value, Some(value));
    }
    println!("PASS: wrong-output contract on 1000 invalid calls (stable, three-digit, != truth)");
}

/// Brute-force relabeling used as the independent tally: for every call,
/// recompute the revealed set by rescanning the entire prefix.
fn brute_force_labels(task: &TaskInstance, calls: &[CallRequest]) -> Vec<Option<FailureType>> {
    let call_is_correct = |call: &CallRequest| -> bool {
        match task.schema(&call.fname) {
            None => false,
            Some(schema) => {
                schema.inputs.len() == call.args.len()
                    && schema.inputs.iter().all(|v| {
                        call.args.get(&v.name).copied() == Some(v.value)
                    })
            }
        }
    };
    (0..calls.len())
        .map(|i| {
            let call = &calls[i];
            let Some(schema) = task.schema(&call.fname) else {
                return Some(FailureType::FunctionNotFound);
            };
            let expected: HashSet<&str> =
                schema.inputs.iter().map(|v| v.name.as_str()).collect();
            let got: HashSet<&str> = call.args.keys().map(String::as_str).collect();
            if expected != got {
                return Some(FailureType::WrongNumberOfInputs);
            }
            let correct_prefix: HashSet<&str> = calls[..i]
                .iter()
                .filter(|c| call_is_correct(c))
                .map(|c| c.fname.as_str())
                .collect();
            let mut worst = None;
            for input in &schema.inputs {
                if call.args[&input.name] == input.value {
                    continue;
                }
                let revealed = if task.is_prompt_var(&input.name) {
                    true
                } else {
                    task.producer_by_subtype(&input.subtype)
                        .map(|p| correct_prefix.contains(p.fname.as_str()))
                        .unwrap_or(true)
                };
                if !revealed {
                    return Some(FailureType::ValueNotYetKnown);
                }
                worst = Some(FailureType::IncorrectValue);
            }
            worst
        })
        .collect()
}

#[test]
fn acceptance_classifier_correctness() {
    let task = generate_task(&GenConfig {
        n_core: 6,
        depth: 2,
        n_conn: 3,
        n_dis: 3,
        extra_free_inputs: 0,
        seed: 2718,
    })
    .unwrap();

    // four constructed single-failure calls, one per type
    let root = &task.schemas[0];
    let root_free = &root.inputs[0];
    let child_index = (0..task.schemas.len())
        .find(|&i| task.schemas[i].inputs.iter().any(|v| !task.is_prompt_var(&v.name)))
        .unwrap();
    let child = &task.schemas[child_index];
    let edge_input = child
        .inputs
        .iter()
        .find(|v| !task.is_prompt_var(&v.name))
        .unwrap();
    let wrong = |v: i64| if v == 999 { 100 } else { v + 1 };

    let singles = [
        (
            CallRequest {
                fname: "func_missing".into(),
                args: BTreeMap::new(),
            },
            FailureType::FunctionNotFound,
        ),
        (
            CallRequest {
                fname: root.fname.clone(),
                args: BTreeMap::new(),
            },
            FailureType::WrongNumberOfInputs,
        ),
        (
            CallRequest {
                fname: child.fname.clone(),
                args: child
                    .inputs
                    .iter()
                    .map(|v| {
                        let value = if v.name == edge_input.name {
                            wrong(v.value)
                        } else {
                            v.value
                        };
                        (v.name.clone(), value)
                    })
                    .collect(),
            },
            FailureType::ValueNotYetKnown,
        ),
        (
            CallRequest {
                fname: root.fname.clone(),
                args: root
                    .inputs
                    .iter()
                    .map(|v| {
                        let value = if v.name == root_free.name {
                            wrong(v.value)
                        } else {
                            v.value
                        };
                        (v.name.clone(), value)
                    })
                    .collect(),
            },
            FailureType::IncorrectValue,
        ),
    ];
    let mut seen = Vec::new();
    for (call, expected) in &singles {
        let got = classify_call(&task, &HashSet::new(), call);
        assert_eq!(got, Some(*expected), "single-failure case {expected:?}");
        seen.push(got.unwrap());
    }
    assert_eq!(
        seen.iter().collect::<HashSet<_>>().len(),
        4,
        "the four cases must produce four distinct types"
    );

    // precedence: one unrevealed mismatch plus one revealed mismatch
    {
        let extra_task = generate_task(&GenConfig {
            n_core: 3,
            depth: 2,
            n_conn: 0,
            n_dis: 0,
            extra_free_inputs: 1,
            seed: 999,
        })
        .unwrap();
        let mid = &extra_task.schemas[1];
        let mixed = CallRequest {
            fname: mid.fname.clone(),
            args: mid
                .inputs
                .iter()
                .map(|v| (v.name.clone(), wrong(v.value)))
                .collect(),
        };
        assert_eq!(
            classify_call(&extra_task, &HashSet::new(), &mixed),
            Some(FailureType::ValueNotYetKnown),
            "mixed mismatches must resolve ValueNotYetKnown over IncorrectValue"
        );
    }

    // 1000-call synthetic mixed trace against the brute-force tally
    let mut rng = ChaCha8Rng::seed_from_u64(60221023);
    let mut calls = Vec::with_capacity(1000);
    for _ in 0..1000 {
        let schema = &task.schemas[rng.random_range(0..task.schemas.len())];
        let category = rng.random_range(0..10u32);
        let call = match category {
            0 => CallRequest {
                fname: format!("func_ghost{}", rng.random_range(0..100u32)),
                args: BTreeMap::new(),
            },
            1 => CallRequest {
                fname: schema.fname.clone(),
                args: schema
                    .inputs
                    .iter()
                    .map(|v| (v.name.clone(), v.value))
                    .chain(std::iter::once(("surplus".to_string(), 1)))
                    .collect(),
            },
            2..=5 => CallRequest {
                fname: schema.fname.clone(),
                args: schema
                    .inputs
                    .iter()
                    .map(|v| {
                        let value = if rng.random_range(0..2u32) == 0 {
                            wrong(v.value)
                        } else {
                            v.value
                        };
                        (v.name.clone(), value)
                    })
                    .collect(),
            },
            _ => CallRequest {
                fname: schema.fname.clone(),
                args: schema
                    .inputs
                    .iter()
                    .map(|v| (v.name.clone(), v.value))
                    .collect(),
            },
        };
        calls.push(call);
    }

    // live labels come from the executor's own classification path
    let mut state = start_episode(
        &task,
        EpisodeOptions {
            mitigation: false,
            call_cap: 10_000,
        },
    );
    for call in &calls {
        state.execute_call(call);
    }
    let mut live = FailureBreakdown::default();
    for record in state.log() {
        if let Some(f) = record.classification {
            live.record(f);
        }
    }

    let mut brute = FailureBreakdown::default();
    for label in brute_force_labels(&task, &calls).into_iter().flatten() {
        brute.record(label);
    }

    assert_eq!(live.total_errors, brute.total_errors);
    assert!(live.total_errors > 200, "mix should produce plenty of errors");
    for failure in FailureType::ALL {
        let delta = (live.percentage(failure) - brute.percentage(failure)).abs();
        assert!(
            delta <= 0.1,
            "{failure:?}: live {:.3}% vs brute-force {:.3}%",
            live.percentage(failure),
            brute.percentage(failure)
        );
    }
    println!(
        "PASS: classifier correctness (4 single-failure cases, precedence, {}-error mixed trace within 0.1%)",
        live.total_errors
    );
}

#[test]
fn acceptance_mitigation_efficacy() {
    // deterministic depth-2 chain; the stale agent induces one wrong call,
    // retries correctly, then reuses its first observation unless the
    // mitigation snapshot restates the corrected value
    let task = generate_task(&GenConfig::new(3, 2, 1998)).unwrap();

    let mut agent = StaleValueAgent::new(&task);
    let baseline = run_agent(&mut agent, &task, EpisodeOptions::for_task(&task));
    assert!(
        !baseline.success,
        "stale-value agent must fail with mitigation off"
    );

    let mut agent = StaleValueAgent::new(&task);
    let mitigated = run_agent(
        &mut agent,
        &task,
        EpisodeOptions::for_task(&task).mitigated(),
    );
    assert!(
        mitigated.success,
        "stale-value agent must succeed with mitigation on"
    );
    println!("PASS: mitigation efficacy (stale-value fixture flips failure -> success)");
}

#[test]
fn acceptance_cap_enforcement() {
    let mut worst = 0;
    for seed in 0..100u64 {
        let n_core = 3 + (seed as usize % 5);
        let depth = 1 + (seed as usize % (n_core - 1));
        let config = GenConfig {
            n_core,
            depth,
            n_conn: seed as usize % 3,
            n_dis: seed as usize % 3,
            extra_free_inputs: 0,
            seed: 5000 + seed,
        };
        let task = generate_task(&config).unwrap();
        let mut agent = RandomAgent::new(seed);
        let result = run_agent(&mut agent, &task, EpisodeOptions::for_task(&task));
        let cap = 2 * n_core;
        assert!(
            result.calls_made <= cap,
            "calls_made {} exceeded cap {cap} on seed {seed}",
            result.calls_made
        );
        for record in &result.trace.calls {
            assert!(record.calls_made <= cap);
        }
        worst = worst.max(result.calls_made);
    }
    println!("PASS: cap enforcement over 100 random episodes (max calls_made {worst})");
}

#[test]
fn acceptance_wire_format_conformance() {
    for seed in 0..100u64 {
        let n_core = 3 + (seed as usize % 6);
        let depth = 1 + (seed as usize % (n_core - 1));
        let config = GenConfig {
            n_core,
            depth,
            n_conn: seed as usize % 5,
            n_dis: seed as usize % 5,
            extra_free_inputs: seed as usize % 2,
            seed: 7000 + seed,
        };
        let task = generate_task(&config).unwrap();
        let rendered = render_tool_schemas(&task).to_string();
        let parsed: serde_json::Value = serde_json::from_str(&rendered).unwrap();
        let tools = parsed.as_array().expect("top level is an array");
        assert_eq!(tools.len(), config.n_core + config.n_conn + config.n_dis);
        for tool in tools {
            let obj = tool.as_object().unwrap();
            assert_eq!(
                obj.keys().collect::<Vec<_>>(),
                ["type", "function"],
                "tool object keys"
            );
            assert_eq!(obj["type"], "function");
            let function = obj["function"].as_object().unwrap();
            assert_eq!(
                function.keys().collect::<Vec<_>>(),
                ["name", "description", "strict", "parameters"],
                "function object keys"
            );
            assert_eq!(function["strict"], true);
            assert!(function["name"].as_str().unwrap().starts_with("func_"));
            let params = function["parameters"].as_object().unwrap();
            assert_eq!(
                params.keys().collect::<Vec<_>>(),
                ["type", "properties", "required", "additionalProperties"],
                "parameters object keys"
            );
            assert_eq!(params["type"], "object");
            assert_eq!(params["additionalProperties"], false);
            let properties = params["properties"].as_object().unwrap();
            let required: Vec<&str> = params["required"]
                .as_array()
                .unwrap()
                .iter()
                .map(|v| v.as_str().unwrap())
                .collect();
            assert_eq!(
                properties.keys().map(String::as_str).collect::<Vec<_>>(),
                required,
                "required must cover properties in order"
            );
            for prop in properties.values() {
                assert_eq!(prop.as_object().unwrap().len(), 1);
                assert_eq!(prop["type"], "integer");
            }
        }
    }
    println!("PASS: wire-format conformance on 100 random tasks");
}

#[test]
fn acceptance_grid_conformance() {
    let mut config = SweepConfig::new(AgentSpec::Null, 1);
    config.core_sizes = vec![10];
    let episodes = expand_sweep(&config).unwrap();
    assert_eq!(episodes.len(), 450, "n_core=10 defaults expand to 450 episodes");

    config.core_sizes = vec![20];
    let episodes = expand_sweep(&config).unwrap();
    let depths: HashSet<usize> = episodes.iter().map(|e| e.gen.depth).collect();
    assert_eq!(
        depths,
        HashSet::from([1, 3, 5, 7, 9, 11, 13, 15, 17, 19]),
        "n_core=20 sweeps odd depths"
    );
    println!("PASS: grid conformance (450 episodes at n_core=10; odd depths at n_core=20)");
}

/// Not a spec criterion on its own, but ties the trace pipeline together:
/// labels stored during live runs replay exactly from persisted traces.
#[test]
fn stored_labels_replay_exactly() {
    let mut config = SweepConfig::new(AgentSpec::Random, 314);
    config.core_sizes = vec![5];
    config.irrelevant_counts = vec![0, 10];
    config.trials = 1;
    let dir = tempfile::tempdir().unwrap();
    let outcome = run_sweep(&config, Some(dir.path())).unwrap();
    for trace in &outcome.traces {
        let task = generate_task(&trace.config).unwrap();
        let fresh = toolgraph::classifier::reclassify_calls(&task, &trace.calls);
        for (record, label) in trace.calls.iter().zip(fresh) {
            assert_eq!(record.classification, label);
        }
    }
}
