//! Versioned JSON persistence for pipeline artifacts.
//!
//! Models and problems are single JSON documents wrapped in an envelope with
//! a schema version and a kind tag; datasets and execution traces are JSON
//! lines, one record per line. Serialization is deterministic (ordered maps
//! throughout), so re-running a command with identical inputs produces
//! byte-identical files.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::executor::{ExecutionTrace, TraceEvent, TraceStep};
use crate::tamp::{Plan, PlanDataset};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Envelope<T> {
    schema_version: u32,
    kind: String,
    data: T,
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn schema_err(path: &Path, message: impl ToString) -> Error {
    Error::Schema {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

/// Serializes one artifact under the versioned envelope.
pub fn save_json<T: Serialize>(path: &Path, kind: &str, data: &T) -> Result<()> {
    let envelope = Envelope {
        schema_version: SCHEMA_VERSION,
        kind: kind.to_string(),
        data,
    };
    let body = serde_json::to_string_pretty(&envelope).map_err(|e| schema_err(path, e))?;
    std::fs::write(path, body + "\n").map_err(|e| io_err(path, e))
}

/// Parses one artifact, validating the envelope.
pub fn load_json<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T> {
    let body = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let envelope: Envelope<T> =
        serde_json::from_str(&body).map_err(|e| schema_err(path, e))?;
    if envelope.schema_version != SCHEMA_VERSION {
        return Err(schema_err(
            path,
            format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                envelope.schema_version
            ),
        ));
    }
    if envelope.kind != kind {
        return Err(schema_err(
            path,
            format!("expected kind `{kind}`, found `{}`", envelope.kind),
        ));
    }
    Ok(envelope.data)
}

/// One plan per line.
pub fn save_dataset(path: &Path, dataset: &PlanDataset) -> Result<()> {
    let mut out = Vec::new();
    for plan in &dataset.plans {
        let line = serde_json::to_string(plan).map_err(|e| schema_err(path, e))?;
        out.write_all(line.as_bytes()).unwrap();
        out.push(b'\n');
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

pub fn load_dataset(path: &Path) -> Result<PlanDataset> {
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut plans = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let plan: Plan = serde_json::from_str(&line)
            .map_err(|e| schema_err(path, format!("line {}: {e}", i + 1)))?;
        plans.push(plan);
    }
    Ok(PlanDataset { plans })
}

/// One trace record per line; the outcome is the last record's event when
/// terminal, timeout otherwise.
pub fn save_trace(path: &Path, trace: &ExecutionTrace) -> Result<()> {
    let mut out = Vec::new();
    for step in &trace.steps {
        let line = serde_json::to_string(step).map_err(|e| schema_err(path, e))?;
        out.write_all(line.as_bytes()).unwrap();
        out.push(b'\n');
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

pub fn load_trace(path: &Path) -> Result<ExecutionTrace> {
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut steps: Vec<TraceStep> = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        steps.push(
            serde_json::from_str(&line)
                .map_err(|e| schema_err(path, format!("line {}: {e}", i + 1)))?,
        );
    }
    let outcome = match steps.last().map(|s| s.event) {
        Some(TraceEvent::Goal) => TraceEvent::Goal,
        Some(TraceEvent::Unrecoverable) => TraceEvent::Unrecoverable,
        _ => TraceEvent::Timeout,
    };
    Ok(ExecutionTrace { steps, outcome })
}
