//! Episode traces and their JSONL persistence.
//!
//! A trace file holds one episode-summary line followed by one line per
//! call with the keys {turn, fname, args, status, value, classification,
//! calls_made}. Summaries carry everything needed to regenerate the task
//! (the full generation config, seed included), so stored traces can be
//! relabelled and re-aggregated without separate task files.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::executor::{CallRecord, EpisodeOptions};
use crate::taskgen::GenConfig;

/// Full log of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub agent: String,
    pub config: GenConfig,
    pub options: EpisodeOptions,
    /// Sweep-cell label, when the episode ran as part of a sweep.
    pub cell: Option<String>,
    pub trial: Option<usize>,
    #[serde(skip)]
    pub calls: Vec<CallRecord>,
    pub final_answer: String,
    pub parsed_answer: Option<i64>,
    pub success: bool,
    pub calls_made: usize,
    pub parse_failure: bool,
    pub infrastructure_error: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct SummaryLine<'a> {
    episode: std::borrow::Cow<'a, EpisodeTrace>,
}

pub fn write_trace<W: Write>(trace: &EpisodeTrace, writer: &mut W) -> io::Result<()> {
    let summary = SummaryLine {
        episode: std::borrow::Cow::Borrowed(trace),
    };
    serde_json::to_writer(&mut *writer, &summary)?;
    writer.write_all(b"\n")?;
    for call in &trace.calls {
        serde_json::to_writer(&mut *writer, call)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trace<R: BufRead>(reader: R) -> io::Result<EpisodeTrace> {
    let mut lines = reader.lines();
    let first = lines
        .next()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "empty trace file"))??;
    let summary: SummaryLine<'static> =
        serde_json::from_str(&first).map_err(io::Error::other)?;
    let mut trace = summary.episode.into_owned();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let call: CallRecord = serde_json::from_str(&line).map_err(io::Error::other)?;
        trace.calls.push(call);
    }
    Ok(trace)
}

pub fn write_trace_file(trace: &EpisodeTrace, path: &Path) -> io::Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    write_trace(trace, &mut writer)?;
    writer.flush()
}

pub fn read_trace_file(path: &Path) -> io::Result<EpisodeTrace> {
    read_trace(BufReader::new(File::open(path)?))
}
