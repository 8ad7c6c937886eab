//! Experiment grid expansion and execution with seed discipline.
//!
//! A sweep crosses core sizes, depths, and irrelevant-node settings, runs
//! `trials` episodes per cell with per-episode seeds derived from the
//! master seed and the cell descriptor, and folds the traces into a
//! report. Re-running with the same master seed and a deterministic agent
//! reproduces every artifact byte for byte.

mod report;

pub use report::{fold_traces, write_report, CellMetrics, CellReport, ReportFiles, SweepReport};

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    run_agent, Agent, ChatConfig, GreedyTypeChaser, HttpTransport, LlmAgent, NullAgent,
    OracleAgent, RandomAgent, RequestLimiter, StaleValueAgent,
};
use crate::error::ConfigError;
use crate::executor::{write_trace_file, EpisodeOptions, EpisodeTrace};
use crate::seeding;
use crate::taskgen::{generate_task, write_task_file, GenConfig, TaskInstance};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// How irrelevant nodes attach to the core for a given count `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Connectivity {
    Connected,
    Disconnected,
    HalfAndHalf,
}

impl Connectivity {
    pub const ALL: [Connectivity; 3] = [
        Connectivity::Connected,
        Connectivity::Disconnected,
        Connectivity::HalfAndHalf,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Connectivity::Connected => "connected",
            Connectivity::Disconnected => "disconnected",
            Connectivity::HalfAndHalf => "half_and_half",
        }
    }

    /// Splits an irrelevant count into (n_conn, n_dis).
    pub fn split(&self, count: usize) -> Result<(usize, usize), ConfigError> {
        match self {
            Connectivity::Connected => Ok((count, 0)),
            Connectivity::Disconnected => Ok((0, count)),
            Connectivity::HalfAndHalf => {
                if count.is_multiple_of(2) {
                    Ok((count / 2, count / 2))
                } else {
                    Err(ConfigError::OddHalfAndHalf(count))
                }
            }
        }
    }
}

/// The irrelevant-node setting of one grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellSetting {
    NoExtra,
    Irrelevant {
        connectivity: Connectivity,
        count: usize,
    },
}

impl CellSetting {
    pub fn connectivity_label(&self) -> &'static str {
        match self {
            CellSetting::NoExtra => "no_extra",
            CellSetting::Irrelevant { connectivity, .. } => connectivity.label(),
        }
    }

    pub fn irrelevant_count(&self) -> usize {
        match self {
            CellSetting::NoExtra => 0,
            CellSetting::Irrelevant { count, .. } => *count,
        }
    }

    fn sort_key(&self) -> (usize, usize) {
        match self {
            CellSetting::NoExtra => (0, 0),
            CellSetting::Irrelevant {
                connectivity,
                count,
            } => (*count, 1 + *connectivity as usize),
        }
    }
}

/// One cell of the experiment grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellKey {
    pub n_core: usize,
    pub depth: usize,
    pub setting: CellSetting,
}

impl CellKey {
    pub fn label(&self) -> String {
        match self.setting {
            CellSetting::NoExtra => {
                format!("core{}_depth{}_no_extra", self.n_core, self.depth)
            }
            CellSetting::Irrelevant {
                connectivity,
                count,
            } => format!(
                "core{}_depth{}_{}{}",
                self.n_core,
                self.depth,
                connectivity.label(),
                count
            ),
        }
    }

    pub fn sort_key(&self) -> (usize, usize, usize, usize) {
        let (count, conn) = self.setting.sort_key();
        (self.n_core, self.depth, count, conn)
    }

    /// Recovers the cell from a generation config; the inverse of
    /// expansion, used when folding stored traces.
    pub fn from_config(config: &GenConfig) -> Self {
        let setting = match (config.n_conn, config.n_dis) {
            (0, 0) => CellSetting::NoExtra,
            (k, 0) => CellSetting::Irrelevant {
                connectivity: Connectivity::Connected,
                count: k,
            },
            (0, k) => CellSetting::Irrelevant {
                connectivity: Connectivity::Disconnected,
                count: k,
            },
            (a, b) => CellSetting::Irrelevant {
                connectivity: Connectivity::HalfAndHalf,
                count: a + b,
            },
        };
        CellKey {
            n_core: config.n_core,
            depth: config.depth,
            setting,
        }
    }
}

/// Which agent a sweep runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentSpec {
    Oracle,
    Random,
    Null,
    StaleValue,
    Greedy,
    Llm {
        #[serde(flatten)]
        chat: ChatConfig,
    },
}

impl AgentSpec {
    pub fn label(&self) -> String {
        match self {
            AgentSpec::Oracle => "oracle".into(),
            AgentSpec::Random => "random".into(),
            AgentSpec::Null => "null".into(),
            AgentSpec::StaleValue => "stale_value".into(),
            AgentSpec::Greedy => "greedy".into(),
            AgentSpec::Llm { chat } => format!("llm:{}", chat.model),
        }
    }
}

/// Builds per-episode agents; LLM agents share one request limiter so the
/// concurrency bound holds across the whole sweep.
pub struct AgentFactory {
    spec: AgentSpec,
    limiter: Option<Arc<RequestLimiter>>,
}

impl AgentFactory {
    pub fn new(spec: AgentSpec) -> Self {
        let limiter = match &spec {
            AgentSpec::Llm { chat } => Some(RequestLimiter::new(chat.max_concurrent_requests)),
            _ => None,
        };
        Self { spec, limiter }
    }

    pub fn build(&self, task: &TaskInstance, episode_seed: u64) -> Box<dyn Agent> {
        match &self.spec {
            AgentSpec::Oracle => Box::new(OracleAgent::new(task)),
            AgentSpec::Random => Box::new(RandomAgent::new(seeding::derive_seed(
                episode_seed,
                "agent",
            ))),
            AgentSpec::Null => Box::new(NullAgent::default()),
            AgentSpec::StaleValue => Box::new(StaleValueAgent::new(task)),
            AgentSpec::Greedy => Box::new(GreedyTypeChaser::new(seeding::derive_seed(
                episode_seed,
                "agent",
            ))),
            AgentSpec::Llm { chat } => {
                let limiter = self.limiter.clone().expect("llm factory has a limiter");
                let transport = HttpTransport::with_limiter(chat.clone(), limiter);
                Box::new(LlmAgent::new(chat.clone(), Box::new(transport)))
            }
        }
    }
}

/// Full sweep configuration. Defaults mirror the standard grid: core sizes
/// {5, 10, 20}, irrelevant counts {0, 10, 20, 40}, all three
/// connectivities, five trials, cap at twice the core size.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_core_sizes")]
    pub core_sizes: Vec<usize>,
    #[serde(default = "default_irrelevant_counts")]
    pub irrelevant_counts: Vec<usize>,
    #[serde(default = "default_connectivity")]
    pub connectivity: Vec<Connectivity>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub mitigation: bool,
    pub agent: AgentSpec,
    #[serde(default = "default_cap_multiplier")]
    pub call_cap_multiplier: usize,
    #[serde(default)]
    pub extra_free_inputs: usize,
    pub master_seed: u64,
    /// Episode worker-pool size.
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    /// Drop infrastructure-failed episodes from rate denominators instead
    /// of counting them as failures.
    #[serde(default)]
    pub exclude_infrastructure_failures: bool,
}

fn default_core_sizes() -> Vec<usize> {
    vec![5, 10, 20]
}

fn default_irrelevant_counts() -> Vec<usize> {
    vec![0, 10, 20, 40]
}

fn default_connectivity() -> Vec<Connectivity> {
    Connectivity::ALL.to_vec()
}

fn default_trials() -> usize {
    5
}

fn default_cap_multiplier() -> usize {
    2
}

fn default_concurrency() -> usize {
    1
}

impl SweepConfig {
    pub fn new(agent: AgentSpec, master_seed: u64) -> Self {
        Self {
            core_sizes: default_core_sizes(),
            irrelevant_counts: default_irrelevant_counts(),
            connectivity: default_connectivity(),
            trials: default_trials(),
            mitigation: false,
            agent,
            call_cap_multiplier: default_cap_multiplier(),
            extra_free_inputs: 0,
            master_seed,
            concurrency: default_concurrency(),
            exclude_infrastructure_failures: false,
        }
    }
}

/// Depth values swept for a core size: everything in 1..n_core-1 for small
/// graphs, 10% increments starting at 1 for 20 cores and above.
pub fn depths_for(n_core: usize) -> Vec<usize> {
    if n_core >= 20 {
        let step = n_core / 10;
        (0..)
            .map(|k| 1 + k * step)
            .take_while(|&d| d < n_core)
            .collect()
    } else {
        (1..n_core).collect()
    }
}

/// One fully specified episode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub cell: CellKey,
    pub trial: usize,
    pub gen: GenConfig,
    pub options: EpisodeOptions,
    pub seed: u64,
}

impl EpisodeSpec {
    pub fn file_stem(&self) -> String {
        format!("{}_t{}", self.cell.label(), self.trial)
    }
}

/// Expands the grid. The zero irrelevant count appears once per depth (the
/// no-extra setting); positive counts cross with every connectivity.
/// Per-episode seeds derive from (master seed, cell label, trial).
pub fn expand_sweep(config: &SweepConfig) -> Result<Vec<EpisodeSpec>, ConfigError> {
    if config.trials < 1 {
        return Err(ConfigError::NoTrials);
    }
    if config.call_cap_multiplier < 1 {
        return Err(ConfigError::CapMultiplierTooSmall);
    }
    if config.irrelevant_counts.iter().any(|&k| k > 0) && config.connectivity.is_empty() {
        return Err(ConfigError::EmptyConnectivity);
    }
    for &n_core in &config.core_sizes {
        if n_core < 2 {
            return Err(ConfigError::CoreSizeTooSmall(n_core));
        }
    }

    let settings_for = |_: usize| -> Result<Vec<CellSetting>, ConfigError> {
        let mut settings = Vec::new();
        for &count in &config.irrelevant_counts {
            if count == 0 {
                settings.push(CellSetting::NoExtra);
                continue;
            }
            for &connectivity in &config.connectivity {
                // validate the split eagerly so bad configs fail up front
                connectivity.split(count)?;
                settings.push(CellSetting::Irrelevant {
                    connectivity,
                    count,
                });
            }
        }
        Ok(settings)
    };

    let mut episodes = Vec::new();
    for &n_core in &config.core_sizes {
        for depth in depths_for(n_core) {
            for setting in settings_for(n_core)? {
                let cell = CellKey {
                    n_core,
                    depth,
                    setting,
                };
                let (n_conn, n_dis) = match setting {
                    CellSetting::NoExtra => (0, 0),
                    CellSetting::Irrelevant {
                        connectivity,
                        count,
                    } => connectivity.split(count)?,
                };
                for trial in 0..config.trials {
                    let seed = seeding::derive_seed(
                        config.master_seed,
                        &format!("{}_t{}", cell.label(), trial),
                    );
                    let gen = GenConfig {
                        n_core,
                        depth,
                        n_conn,
                        n_dis,
                        extra_free_inputs: config.extra_free_inputs,
                        seed,
                    };
                    gen.validate()?;
                    episodes.push(EpisodeSpec {
                        cell,
                        trial,
                        gen,
                        options: EpisodeOptions {
                            mitigation: config.mitigation,
                            call_cap: (config.call_cap_multiplier * n_core).max(1),
                        },
                        seed,
                    });
                }
            }
        }
    }
    Ok(episodes)
}

/// Runs one episode spec: generate the task, build the agent, drive the
/// episode, and stamp the trace with its cell and trial.
pub fn run_episode(spec: &EpisodeSpec, factory: &AgentFactory) -> Result<EpisodeTrace, HarnessError> {
    let task = generate_task(&spec.gen)?;
    let mut agent = factory.build(&task, spec.seed);
    let mut result = run_agent(agent.as_mut(), &task, spec.options);
    result.trace.cell = Some(spec.cell.label());
    result.trace.trial = Some(spec.trial);
    Ok(result.trace)
}

/// Artifacts of one sweep run.
pub struct SweepOutcome {
    pub report: SweepReport,
    pub traces: Vec<EpisodeTrace>,
}

/// Expands and runs the whole grid on a bounded worker pool, optionally
/// persisting tasks and traces under `out_dir` (tasks/ and traces/).
/// Aggregation folds traces in grid order, so results do not depend on
/// scheduling.
pub fn run_sweep(config: &SweepConfig, out_dir: Option<&Path>) -> Result<SweepOutcome, HarnessError> {
    let episodes = expand_sweep(config)?;
    let factory = AgentFactory::new(config.agent.clone());

    let (tasks_dir, traces_dir) = match out_dir {
        Some(dir) => {
            let tasks = dir.join("tasks");
            let traces = dir.join("traces");
            fs::create_dir_all(&tasks).map_err(io_err(&tasks))?;
            fs::create_dir_all(&traces).map_err(io_err(&traces))?;
            (Some(tasks), Some(traces))
        }
        None => (None, None),
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.concurrency.max(1))
        .build()
        .expect("worker pool");
    let traces: Vec<EpisodeTrace> = pool.install(|| {
        episodes
            .par_iter()
            .map(|spec| -> Result<EpisodeTrace, HarnessError> {
                if let Some(dir) = &tasks_dir {
                    let task = generate_task(&spec.gen)?;
                    let path = dir.join(format!("{}.task.json", spec.file_stem()));
                    write_task_file(&task, &path).map_err(io_err(&path))?;
                }
                let trace = run_episode(spec, &factory)?;
                if let Some(dir) = &traces_dir {
                    let path = dir.join(format!("{}.trace.jsonl", spec.file_stem()));
                    write_trace_file(&trace, &path).map_err(io_err(&path))?;
                }
                Ok(trace)
            })
            .collect::<Result<Vec<_>, _>>()
    })?;

    let report = fold_traces(&traces, config.exclude_infrastructure_failures);
    Ok(SweepOutcome { report, traces })
}

/// Reads every `*.trace.jsonl` under `dir` (sorted by file name) back into
/// memory.
pub fn load_traces(dir: &Path) -> Result<Vec<EpisodeTrace>, HarnessError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(".trace.jsonl")))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| crate::executor::read_trace_file(p).map_err(io_err(p)))
        .collect()
}
