//! Aggregation of episode traces into per-cell metrics, marginal slices,
//! and CSV/JSON report files.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::{summarize_failures, FailureBreakdown, FailureType};
use crate::executor::EpisodeTrace;
use crate::harness::{CellKey, HarnessError};

/// Success and efficiency metrics over a set of episodes. Call averages
/// are per-partition and absent when the partition is empty ("--" in the
/// CSV, following the usual table convention for no successful trials).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub episodes: usize,
    pub successes: usize,
    /// Episodes dropped from the denominator as infrastructure failures.
    pub infrastructure_excluded: usize,
    pub success_rate: f64,
    /// Simple binomial 95% interval on the success rate.
    pub ci95_low: f64,
    pub ci95_high: f64,
    pub avg_calls_success: Option<f64>,
    pub avg_calls_failure: Option<f64>,
    pub failures: FailureBreakdown,
}

impl CellMetrics {
    fn from_traces<'a>(traces: impl IntoIterator<Item = &'a EpisodeTrace>, exclude_infra: bool) -> Self {
        let mut included: Vec<&EpisodeTrace> = Vec::new();
        let mut infrastructure_excluded = 0;
        for trace in traces {
            if exclude_infra && trace.infrastructure_error.is_some() {
                infrastructure_excluded += 1;
            } else {
                included.push(trace);
            }
        }
        let episodes = included.len();
        let successes = included.iter().filter(|t| t.success).count();
        let success_rate = if episodes == 0 {
            0.0
        } else {
            successes as f64 / episodes as f64
        };
        let (ci95_low, ci95_high) = binomial_ci95(successes, episodes);
        let mean_calls = |want_success: bool| -> Option<f64> {
            let calls: Vec<usize> = included
                .iter()
                .filter(|t| t.success == want_success)
                .map(|t| t.calls_made)
                .collect();
            if calls.is_empty() {
                None
            } else {
                Some(calls.iter().sum::<usize>() as f64 / calls.len() as f64)
            }
        };
        CellMetrics {
            episodes,
            successes,
            infrastructure_excluded,
            success_rate,
            ci95_low,
            ci95_high,
            avg_calls_success: mean_calls(true),
            avg_calls_failure: mean_calls(false),
            failures: summarize_failures(included.iter().copied()),
        }
    }
}

/// Normal-approximation binomial interval, clamped to [0, 1].
fn binomial_ci95(successes: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 0.0);
    }
    let p = successes as f64 / n as f64;
    let half = 1.96 * (p * (1.0 - p) / n as f64).sqrt();
    ((p - half).max(0.0), (p + half).min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub cell: CellKey,
    pub metrics: CellMetrics,
}

/// Aggregated sweep results: per-cell metrics plus the marginal slices the
/// usual figures are drawn from (by core size, by connectivity setting,
/// by depth within a core size).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub cells: Vec<CellReport>,
    pub by_core: Vec<(usize, CellMetrics)>,
    pub by_connectivity: Vec<(String, CellMetrics)>,
    pub by_depth: Vec<(usize, usize, CellMetrics)>,
    pub overall: CellMetrics,
}

type CellGroups<'a> = BTreeMap<(usize, usize, usize, usize), (CellKey, Vec<&'a EpisodeTrace>)>;

/// Pure fold from traces to a report. Cells are recovered from each
/// trace's generation config and ordered canonically, so the result is
/// independent of input order and of how the traces were produced.
pub fn fold_traces(traces: &[EpisodeTrace], exclude_infra: bool) -> SweepReport {
    let mut by_cell: CellGroups = BTreeMap::new();
    for trace in traces {
        let cell = CellKey::from_config(&trace.config);
        by_cell
            .entry(cell.sort_key())
            .or_insert_with(|| (cell, Vec::new()))
            .1
            .push(trace);
    }

    let cells: Vec<CellReport> = by_cell
        .values()
        .map(|(cell, traces)| CellReport {
            cell: *cell,
            metrics: CellMetrics::from_traces(traces.iter().copied(), exclude_infra),
        })
        .collect();

    let mut by_core_groups: BTreeMap<usize, Vec<&EpisodeTrace>> = BTreeMap::new();
    let mut by_conn_groups: BTreeMap<&'static str, Vec<&EpisodeTrace>> = BTreeMap::new();
    let mut by_depth_groups: BTreeMap<(usize, usize), Vec<&EpisodeTrace>> = BTreeMap::new();
    for (cell, traces) in by_cell.values() {
        for trace in traces {
            by_core_groups.entry(cell.n_core).or_default().push(trace);
            by_conn_groups
                .entry(cell.setting.connectivity_label())
                .or_default()
                .push(trace);
            by_depth_groups
                .entry((cell.n_core, cell.depth))
                .or_default()
                .push(trace);
        }
    }

    SweepReport {
        cells,
        by_core: by_core_groups
            .into_iter()
            .map(|(k, ts)| (k, CellMetrics::from_traces(ts, exclude_infra)))
            .collect(),
        by_connectivity: by_conn_groups
            .into_iter()
            .map(|(k, ts)| (k.to_string(), CellMetrics::from_traces(ts, exclude_infra)))
            .collect(),
        by_depth: by_depth_groups
            .into_iter()
            .map(|((c, d), ts)| (c, d, CellMetrics::from_traces(ts, exclude_infra)))
            .collect(),
        overall: CellMetrics::from_traces(traces.iter(), exclude_infra),
    }
}

pub struct ReportFiles {
    pub csv: PathBuf,
    pub json: PathBuf,
}

/// Stable CSV column order; one row per cell.
pub const CSV_COLUMNS: [&str; 17] = [
    "n_core",
    "depth",
    "connectivity",
    "irrelevant_count",
    "episodes",
    "successes",
    "success_rate",
    "ci95_low",
    "ci95_high",
    "avg_calls_success",
    "avg_calls_failure",
    "total_errors",
    "pct_function_not_found",
    "pct_wrong_number_of_inputs",
    "pct_value_not_yet_known",
    "pct_incorrect_value",
    "infrastructure_excluded",
];

fn fmt_opt(value: Option<f64>) -> String {
    value.map(|v| format!("{v:.6}")).unwrap_or_else(|| "--".to_string())
}

/// Writes `report.csv` (cells only) and `report.json` (full report,
/// marginals included) under `dir`.
pub fn write_report(report: &SweepReport, dir: &Path) -> Result<ReportFiles, HarnessError> {
    std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let csv_path = dir.join("report.csv");
    let json_path = dir.join("report.json");

    let mut writer = csv::Writer::from_writer(File::create(&csv_path).map_err(|source| {
        HarnessError::Io {
            path: csv_path.clone(),
            source,
        }
    })?);
    writer.write_record(CSV_COLUMNS)?;
    for row in &report.cells {
        let m = &row.metrics;
        writer.write_record([
            row.cell.n_core.to_string(),
            row.cell.depth.to_string(),
            row.cell.setting.connectivity_label().to_string(),
            row.cell.setting.irrelevant_count().to_string(),
            m.episodes.to_string(),
            m.successes.to_string(),
            format!("{:.6}", m.success_rate),
            format!("{:.6}", m.ci95_low),
            format!("{:.6}", m.ci95_high),
            fmt_opt(m.avg_calls_success),
            fmt_opt(m.avg_calls_failure),
            m.failures.total_errors.to_string(),
            format!("{:.2}", m.failures.percentage(FailureType::FunctionNotFound)),
            format!("{:.2}", m.failures.percentage(FailureType::WrongNumberOfInputs)),
            format!("{:.2}", m.failures.percentage(FailureType::ValueNotYetKnown)),
            format!("{:.2}", m.failures.percentage(FailureType::IncorrectValue)),
            m.infrastructure_excluded.to_string(),
        ])?;
    }
    writer.flush().map_err(|source| HarnessError::Io {
        path: csv_path.clone(),
        source,
    })?;

    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    std::fs::write(&json_path, json).map_err(|source| HarnessError::Io {
        path: json_path.clone(),
        source,
    })?;

    Ok(ReportFiles {
        csv: csv_path,
        json: json_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{expand_sweep, run_sweep, AgentSpec, SweepConfig};

    #[test]
    fn oracle_sweep_is_perfect_on_every_cell() {
        let mut config = SweepConfig::new(AgentSpec::Oracle, 11);
        config.core_sizes = vec![5];
        config.trials = 2;
        let outcome = run_sweep(&config, None).unwrap();
        // 4 depths x 10 settings
        assert_eq!(outcome.report.cells.len(), 40);
        for row in &outcome.report.cells {
            assert_eq!(row.metrics.success_rate, 1.0);
            assert_eq!(row.metrics.avg_calls_success, Some(5.0));
            assert_eq!(row.metrics.avg_calls_failure, None);
            assert_eq!(row.metrics.failures.total_errors, 0);
        }
        assert_eq!(outcome.report.overall.success_rate, 1.0);
    }

    #[test]
    fn null_sweep_scores_zero_with_zero_failure_calls() {
        let mut config = SweepConfig::new(AgentSpec::Null, 12);
        config.core_sizes = vec![5];
        config.irrelevant_counts = vec![0];
        config.trials = 2;
        let outcome = run_sweep(&config, None).unwrap();
        for row in &outcome.report.cells {
            assert_eq!(row.metrics.success_rate, 0.0);
            assert_eq!(row.metrics.avg_calls_success, None);
            assert_eq!(row.metrics.avg_calls_failure, Some(0.0));
        }
    }

    #[test]
    fn report_is_a_pure_fold_over_traces() {
        let mut config = SweepConfig::new(AgentSpec::Random, 13);
        config.core_sizes = vec![5];
        config.irrelevant_counts = vec![0, 10];
        config.trials = 2;
        let outcome = run_sweep(&config, None).unwrap();
        let refolded = fold_traces(&outcome.traces, false);
        assert_eq!(outcome.report, refolded);
        // input order does not matter
        let mut shuffled = outcome.traces.clone();
        shuffled.reverse();
        assert_eq!(fold_traces(&shuffled, false), refolded);
    }

    #[test]
    fn csv_has_one_row_per_cell_and_stable_columns() {
        let mut config = SweepConfig::new(AgentSpec::Null, 14);
        config.core_sizes = vec![10];
        config.trials = 5;
        let episodes = expand_sweep(&config).unwrap();
        assert_eq!(episodes.len(), 450);
        let outcome = run_sweep(&config, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = write_report(&outcome.report, dir.path()).unwrap();
        let text = std::fs::read_to_string(&files.csv).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CSV_COLUMNS.join(","));
        assert_eq!(lines.len() - 1, 90, "9 depths x 10 settings");
    }

    #[test]
    fn empty_report_is_header_only() {
        let report = fold_traces(&[], false);
        assert!(report.cells.is_empty());
        assert_eq!(report.overall.episodes, 0);
        assert_eq!(report.overall.success_rate, 0.0);
        let dir = tempfile::tempdir().unwrap();
        let files = write_report(&report, dir.path()).unwrap();
        let text = std::fs::read_to_string(&files.csv).unwrap();
        assert_eq!(text.lines().count(), 1);
    }

    #[test]
    fn infrastructure_failures_can_be_excluded_from_denominators() {
        let mut config = SweepConfig::new(AgentSpec::Oracle, 15);
        config.core_sizes = vec![4];
        config.irrelevant_counts = vec![0];
        config.trials = 2;
        let mut outcome = run_sweep(&config, None).unwrap();
        // mark one episode as an infrastructure failure
        outcome.traces[0].success = false;
        outcome.traces[0].infrastructure_error = Some("connection reset".into());

        let counted = fold_traces(&outcome.traces, false);
        assert!(counted.overall.success_rate < 1.0);
        assert_eq!(counted.overall.infrastructure_excluded, 0);

        let excluded = fold_traces(&outcome.traces, true);
        assert_eq!(excluded.overall.success_rate, 1.0);
        assert_eq!(excluded.overall.infrastructure_excluded, 1);
        assert_eq!(excluded.overall.episodes, outcome.traces.len() - 1);
    }

    #[test]
    fn binomial_interval_basics() {
        let (lo, hi) = binomial_ci95(0, 0);
        assert_eq!((lo, hi), (0.0, 0.0));
        let (lo, hi) = binomial_ci95(5, 5);
        assert_eq!((lo, hi), (1.0, 1.0));
        let (lo, hi) = binomial_ci95(2, 4);
        assert!(lo > 0.0 && lo < 0.5);
        assert!(hi > 0.5 && hi < 1.0);
    }
}
