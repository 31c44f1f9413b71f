//! Training history: one JSON object per line, one line per iteration.
//!
//! ```text
//! {"iteration":0,"epoch":0,"batch_size":40,"loss":0.52,"bytes_sent":2720,"share_bytes":1280,"messages":13,"timing":{...}}
//! ```
//!
//! Everything except `timing` is a deterministic function of the
//! configuration and seed.

use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    /// Aggregator wall time from the batch broadcast to the Δ broadcast.
    pub wall_s: f64,
    /// Aggregator compute plus the slowest node's compute.
    pub compute_s: f64,
    /// `wall_s − compute_s`, clamped at zero.
    pub comm_s: f64,
    /// Seconds since training started, at the end of the iteration.
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub iteration: u64,
    pub epoch: u64,
    pub batch_size: usize,
    /// Data loss on the batch before the update.
    pub loss: f64,
    /// Header + payload bytes sent by all parties during the iteration.
    pub bytes_sent: u64,
    /// Element bytes of SHARE and SHARE_SUM tensors.
    pub share_bytes: u64,
    pub messages: u64,
    pub timing: Timing,
}

impl HistoryRecord {
    /// JSON line without the `timing` field, for comparisons.
    pub fn canonical(&self) -> String {
        let mut v = serde_json::to_value(self).expect("record serializes");
        v.as_object_mut().expect("object").remove("timing");
        v.to_string()
    }
}

pub fn to_jsonl(records: &[HistoryRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

/// The history with timing removed; equal strings mean equal runs.
pub fn canonical(records: &[HistoryRecord]) -> String {
    records.iter().map(|r| r.canonical() + "\n").collect()
}

pub fn write(path: &Path, records: &[HistoryRecord]) -> io::Result<()> {
    let mut f = io::BufWriter::new(fs::File::create(path)?);
    f.write_all(to_jsonl(records).as_bytes())?;
    f.flush()
}

pub fn read(path: &Path) -> io::Result<Vec<HistoryRecord>> {
    let f = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", n + 1))
        })?);
    }
    Ok(out)
}
