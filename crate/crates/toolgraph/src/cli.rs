//! Command-line interface: generate tasks, run episodes, sweep the
//! experiment grid, relabel stored traces, and fold traces into reports.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::agents::{
    run_agent, Agent, Cassette, ChatConfig, GreedyTypeChaser, HttpTransport, LlmAgent, NullAgent,
    OracleAgent, RandomAgent, RecordingTransport, ReplayTransport, StaleValueAgent,
};
use crate::classifier::reclassify_calls;
use crate::executor::{read_trace_file, write_trace_file, EpisodeOptions};
use crate::harness::{
    expand_sweep, fold_traces, load_traces, run_sweep, write_report, SweepConfig,
};
use crate::taskgen::{
    generate_task, read_task_file, render_tool_schemas, render_user_prompt, write_task_file,
    GenConfig, TaskInstance,
};

#[derive(Parser)]
#[command(name = "toolgraph", version, about = "Function-dependency benchmark generator and execution harness for tool-calling agents")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one task and write it as a self-contained JSON document.
    Generate(GenerateArgs),
    /// Run a single episode against a task.
    Run(RunArgs),
    /// Expand and run the full experiment grid from a config file.
    Sweep(SweepArgs),
    /// Recompute failure labels for stored traces.
    Classify(ClassifyArgs),
    /// Fold stored traces into CSV/JSON reports.
    Report(ReportArgs),
}

#[derive(Args, Clone)]
struct GenFlags {
    /// Number of core functions.
    #[arg(long, default_value_t = 5)]
    n_core: usize,
    /// Dependency depth of the core subgraph.
    #[arg(long, default_value_t = 2)]
    depth: usize,
    /// Connected irrelevant functions.
    #[arg(long, default_value_t = 0)]
    n_conn: usize,
    /// Disconnected irrelevant functions.
    #[arg(long, default_value_t = 0)]
    n_dis: usize,
    /// Extra free inputs per function.
    #[arg(long, default_value_t = 0)]
    extra_free_inputs: usize,
    /// Generation seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl GenFlags {
    fn to_config(&self) -> GenConfig {
        GenConfig {
            n_core: self.n_core,
            depth: self.depth,
            n_conn: self.n_conn,
            n_dis: self.n_dis,
            extra_free_inputs: self.extra_free_inputs,
            seed: self.seed,
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    gen: GenFlags,
    /// Output path for the task document.
    #[arg(long, short = 'o')]
    out: Option<PathBuf>,
    /// Also print the prompt or the tool-schema JSON to stdout.
    #[arg(long, value_enum)]
    show: Option<ShowWhat>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ShowWhat {
    Prompt,
    Schemas,
}

#[derive(Clone, Copy, ValueEnum)]
enum AgentKind {
    Oracle,
    Random,
    Null,
    StaleValue,
    Greedy,
    Llm,
}

#[derive(Args)]
struct RunArgs {
    /// Task document to run; generated from the flags below when absent.
    #[arg(long)]
    task: Option<PathBuf>,
    #[command(flatten)]
    gen: GenFlags,
    #[arg(long, value_enum)]
    agent: AgentKind,
    /// Seed for seeded agents (random, greedy).
    #[arg(long, default_value_t = 0)]
    agent_seed: u64,
    /// Restate known values in every successful response.
    #[arg(long)]
    mitigation: bool,
    /// Call cap as a multiple of the core size.
    #[arg(long, default_value_t = 2)]
    call_cap_multiplier: usize,
    /// Where to write the episode trace (JSONL).
    #[arg(long, short = 'o')]
    out: Option<PathBuf>,

    /// Chat endpoint base URL (llm agent).
    #[arg(long, default_value = "https://api.openai.com/v1")]
    endpoint: String,
    /// Model name (llm agent).
    #[arg(long, default_value = "gpt-4.1")]
    model: String,
    /// Environment variable holding the API key (llm agent).
    #[arg(long, default_value = "OPENAI_API_KEY")]
    api_key_env: String,
    /// Reasoning-effort pass-through (llm agent).
    #[arg(long)]
    reasoning_effort: Option<String>,
    /// Replay a recorded cassette instead of live HTTP (llm agent).
    #[arg(long)]
    replay_cassette: Option<PathBuf>,
    /// Fail replay when requests drift from the recording.
    #[arg(long)]
    verify_requests: bool,
    /// Record the exchange to a cassette (llm agent, live HTTP).
    #[arg(long)]
    record_cassette: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep configuration (TOML).
    #[arg(long, short = 'c')]
    config: PathBuf,
    /// Output directory for tasks, traces, and reports.
    #[arg(long, short = 'o')]
    out_dir: PathBuf,
    /// Skip writing per-episode task and trace files.
    #[arg(long)]
    no_artifacts: bool,
}

#[derive(Args)]
struct ClassifyArgs {
    /// Trace file or directory of `*.trace.jsonl` files.
    #[arg(long)]
    traces: PathBuf,
    /// Rewrite traces with freshly computed labels instead of verifying.
    #[arg(long)]
    write: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory of `*.trace.jsonl` files.
    #[arg(long)]
    traces: PathBuf,
    /// Output directory for report.csv and report.json.
    #[arg(long, short = 'o')]
    out_dir: PathBuf,
    /// Drop infrastructure-failed episodes from rate denominators.
    #[arg(long)]
    exclude_infrastructure_failures: bool,
}

pub fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Generate(args) => generate(args),
        Command::Run(args) => run(args),
        Command::Sweep(args) => sweep(args),
        Command::Classify(args) => classify(args),
        Command::Report(args) => report(args),
    }
}

fn generate(args: GenerateArgs) -> Result<()> {
    let config = args.gen.to_config();
    let task = generate_task(&config)?;
    if let Some(path) = &args.out {
        write_task_file(&task, path).with_context(|| format!("writing {}", path.display()))?;
        println!("wrote task to {}", path.display());
    }
    match args.show {
        Some(ShowWhat::Prompt) => println!("{}", render_user_prompt(&task)),
        Some(ShowWhat::Schemas) => println!(
            "{}",
            serde_json::to_string_pretty(&render_tool_schemas(&task))?
        ),
        None if args.out.is_none() => {
            println!(
                "{}",
                serde_json::to_string_pretty(&crate::taskgen::task_document(&task))?
            )
        }
        None => {}
    }
    Ok(())
}

fn load_or_generate(task: &Option<PathBuf>, gen: &GenFlags) -> Result<TaskInstance> {
    match task {
        Some(path) => {
            read_task_file(path).with_context(|| format!("reading {}", path.display()))
        }
        None => Ok(generate_task(&gen.to_config())?),
    }
}

fn run(args: RunArgs) -> Result<()> {
    let task = load_or_generate(&args.task, &args.gen)?;
    let options = EpisodeOptions {
        mitigation: args.mitigation,
        call_cap: (args.call_cap_multiplier * task.n_core()).max(1),
    };

    let mut cassette_sink: Option<(Arc<Mutex<Cassette>>, PathBuf)> = None;
    let mut agent: Box<dyn Agent> = match args.agent {
        AgentKind::Oracle => Box::new(OracleAgent::new(&task)),
        AgentKind::Random => Box::new(RandomAgent::new(args.agent_seed)),
        AgentKind::Null => Box::new(NullAgent::default()),
        AgentKind::StaleValue => Box::new(StaleValueAgent::new(&task)),
        AgentKind::Greedy => Box::new(GreedyTypeChaser::new(args.agent_seed)),
        AgentKind::Llm => {
            let chat = ChatConfig {
                endpoint: args.endpoint.clone(),
                model: args.model.clone(),
                api_key_env: args.api_key_env.clone(),
                reasoning_effort: args.reasoning_effort.clone(),
                ..ChatConfig::default()
            };
            if let Some(path) = &args.replay_cassette {
                let transport = ReplayTransport::from_file(path, args.verify_requests)
                    .map_err(|e| anyhow::anyhow!("loading cassette: {e}"))?;
                Box::new(LlmAgent::new(chat, Box::new(transport)))
            } else if let Some(path) = &args.record_cassette {
                let recording =
                    RecordingTransport::new(HttpTransport::new(chat.clone()), path.clone());
                cassette_sink = Some((recording.cassette_handle(), path.clone()));
                Box::new(LlmAgent::new(chat, Box::new(recording)))
            } else {
                Box::new(LlmAgent::over_http(chat))
            }
        }
    };

    let result = run_agent(agent.as_mut(), &task, options);

    if let Some((cassette, path)) = cassette_sink {
        cassette
            .lock()
            .unwrap()
            .save(&path)
            .map_err(|e| anyhow::anyhow!("saving cassette: {e}"))?;
        println!("recorded cassette to {}", path.display());
    }
    if let Some(path) = &args.out {
        write_trace_file(&result.trace, path)
            .with_context(|| format!("writing {}", path.display()))?;
    }

    println!(
        "agent={} success={} calls={} answer={:?} target_truth={}",
        result.trace.agent,
        result.success,
        result.calls_made,
        result.parsed_answer,
        task.target_truth(),
    );
    if let Some(err) = &result.trace.infrastructure_error {
        println!("infrastructure error: {err}");
    }
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let text = fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let config: SweepConfig = toml::from_str(&text)
        .with_context(|| format!("parsing {}", args.config.display()))?;

    let episodes = expand_sweep(&config)?;
    println!(
        "sweep: {} episodes across {} cells (agent: {})",
        episodes.len(),
        episodes
            .iter()
            .map(|e| e.cell.label())
            .collect::<std::collections::BTreeSet<_>>()
            .len(),
        config.agent.label(),
    );

    let artifact_dir = (!args.no_artifacts).then_some(args.out_dir.as_path());
    let outcome = run_sweep(&config, artifact_dir)?;
    let files = write_report(&outcome.report, &args.out_dir)?;
    println!(
        "overall success rate: {:.1}% over {} episodes",
        100.0 * outcome.report.overall.success_rate,
        outcome.report.overall.episodes,
    );
    println!("wrote {} and {}", files.csv.display(), files.json.display());
    Ok(())
}

fn trace_paths(root: &Path) -> Result<Vec<PathBuf>> {
    if root.is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(root)
        .with_context(|| format!("reading {}", root.display()))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.ends_with(".trace.jsonl"))
        })
        .collect();
    paths.sort();
    Ok(paths)
}

fn classify(args: ClassifyArgs) -> Result<()> {
    let paths = trace_paths(&args.traces)?;
    if paths.is_empty() {
        bail!("no trace files under {}", args.traces.display());
    }
    let mut mismatched_calls = 0usize;
    let mut total_calls = 0usize;
    for path in &paths {
        let mut trace =
            read_trace_file(path).with_context(|| format!("reading {}", path.display()))?;
        let task = generate_task(&trace.config)
            .with_context(|| format!("regenerating task for {}", path.display()))?;
        let fresh = reclassify_calls(&task, &trace.calls);
        total_calls += trace.calls.len();
        let drift = trace
            .calls
            .iter()
            .zip(&fresh)
            .filter(|(record, label)| record.classification != **label)
            .count();
        mismatched_calls += drift;
        if args.write && drift > 0 {
            for (record, label) in trace.calls.iter_mut().zip(&fresh) {
                record.classification = *label;
            }
            write_trace_file(&trace, path)
                .with_context(|| format!("rewriting {}", path.display()))?;
        }
    }
    println!(
        "classified {} calls across {} traces; {} label(s) {}",
        total_calls,
        paths.len(),
        mismatched_calls,
        if args.write { "rewritten" } else { "differ from stored" },
    );
    if !args.write && mismatched_calls > 0 {
        bail!("stored labels differ; rerun with --write to update");
    }
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let traces = load_traces(&args.traces)?;
    if traces.is_empty() {
        bail!("no trace files under {}", args.traces.display());
    }
    let report = fold_traces(&traces, args.exclude_infrastructure_failures);
    let files = write_report(&report, &args.out_dir)?;
    println!(
        "folded {} traces into {} cells; wrote {} and {}",
        traces.len(),
        report.cells.len(),
        files.csv.display(),
        files.json.display(),
    );
    Ok(())
}
