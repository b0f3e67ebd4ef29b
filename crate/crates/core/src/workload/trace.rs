use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::synth::KernelDesc;
use crate::error::{Error, Result};
use crate::time::Nanos;

pub const TRACE_SCHEMA: &str = "tpcsim-trace/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Kernel,
    Sync,
}

/// One line of a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub app_id: u32,
    pub stream_id: u32,
    pub seq: u64,
    pub kind: RecordKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_xyz: Option<[u32; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_duration_us_at_fmax: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensitivity_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occupancy_per_tpc: Option<u32>,
    /// Request arrival time; read from the first record of each request.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arrival_us: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct Header {
    schema: String,
}

/// Kernels of one stream up to and including a sync.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRequest {
    pub stream: u32,
    pub arrival: Option<Nanos>,
    pub kernels: Vec<KernelDesc>,
}

/// Requests grouped per app, in file order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub apps: BTreeMap<u32, Vec<TraceRequest>>,
}

impl Trace {
    pub fn is_empty(&self) -> bool {
        self.apps.is_empty()
    }
}

pub fn load_trace(path: &Path) -> Result<Trace> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_trace(BufReader::new(file))
}

pub fn parse_trace<R: BufRead>(reader: R) -> Result<Trace> {
    let mut trace = Trace::default();
    let mut open: BTreeMap<(u32, u32), TraceRequest> = BTreeMap::new();
    let mut last_seq: BTreeMap<(u32, u32), (u64, usize)> = BTreeMap::new();
    let mut saw_header = false;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if !saw_header {
            let h: Header = serde_json::from_str(text).map_err(|e| Error::Parse {
                line: lineno,
                message: format!("expected schema header: {e}"),
            })?;
            if h.schema != TRACE_SCHEMA {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("unsupported schema '{}'", h.schema),
                });
            }
            saw_header = true;
            continue;
        }
        let rec: TraceRecord = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let sid = (rec.app_id, rec.stream_id);
        if let Some(&(prev, prev_line)) = last_seq.get(&sid) {
            if rec.seq <= prev {
                return Err(Error::Validation(format!(
                    "line {lineno}: seq {} not after seq {prev} (line {prev_line}) in app {} stream {}",
                    rec.seq, rec.app_id, rec.stream_id
                )));
            }
        }
        last_seq.insert(sid, (rec.seq, lineno));
        let req = open.entry(sid).or_insert_with(|| TraceRequest {
            stream: rec.stream_id,
            arrival: None,
            kernels: Vec::new(),
        });
        if req.kernels.is_empty() && req.arrival.is_none() {
            req.arrival = rec.arrival_us.map(Nanos::from_micros_f64);
        }
        match rec.kind {
            RecordKind::Kernel => {
                let (Some(grid), Some(block_us), Some(s), Some(occ)) = (
                    rec.grid_xyz,
                    rec.block_duration_us_at_fmax,
                    rec.sensitivity_s,
                    rec.occupancy_per_tpc,
                ) else {
                    return Err(Error::Validation(format!("line {lineno}: kernel record missing fields")));
                };
                let k = KernelDesc {
                    grid,
                    block_us,
                    sensitivity: s,
                    occupancy: occ,
                };
                k.validate()
                    .map_err(|e| Error::Validation(format!("line {lineno}: {e}")))?;
                req.kernels.push(k);
            }
            RecordKind::Sync => {
                if rec.grid_xyz.is_some()
                    || rec.block_duration_us_at_fmax.is_some()
                    || rec.sensitivity_s.is_some()
                    || rec.occupancy_per_tpc.is_some()
                {
                    return Err(Error::Validation(format!("line {lineno}: sync record carries kernel fields")));
                }
                let done = open.remove(&sid).expect("entry inserted above");
                if !done.kernels.is_empty() {
                    trace.apps.entry(rec.app_id).or_default().push(done);
                }
            }
        }
    }
    if let Some(((app, stream), _)) = open.iter().find(|(_, r)| !r.kernels.is_empty()) {
        return Err(Error::Validation(format!(
            "app {app} stream {stream}: trailing kernels without a sync"
        )));
    }
    Ok(trace)
}

/// Writes `trace` in the line format read by [`load_trace`].
pub fn write_trace<W: Write>(mut out: W, trace: &Trace) -> Result<()> {
    let io = |e| Error::io("trace output", e);
    writeln!(out, "{}", serde_json::json!({ "schema": TRACE_SCHEMA })).map_err(io)?;
    let mut seqs: BTreeMap<(u32, u32), u64> = BTreeMap::new();
    for (&app, reqs) in &trace.apps {
        for r in reqs {
            let seq = seqs.entry((app, r.stream)).or_insert(0);
            let mut first = true;
            let mut emit = |rec: TraceRecord| -> Result<()> {
                let line = serde_json::to_string(&rec).expect("records serialize");
                writeln!(out, "{line}").map_err(io)
            };
            for k in &r.kernels {
                emit(TraceRecord {
                    app_id: app,
                    stream_id: r.stream,
                    seq: *seq,
                    kind: RecordKind::Kernel,
                    grid_xyz: Some(k.grid),
                    block_duration_us_at_fmax: Some(k.block_us),
                    sensitivity_s: Some(k.sensitivity),
                    occupancy_per_tpc: Some(k.occupancy),
                    arrival_us: if first { r.arrival.map(|a| a.as_micros_f64()) } else { None },
                })?;
                first = false;
                *seq += 1;
            }
            emit(TraceRecord {
                app_id: app,
                stream_id: r.stream,
                seq: *seq,
                kind: RecordKind::Sync,
                grid_xyz: None,
                block_duration_us_at_fmax: None,
                sensitivity_s: None,
                occupancy_per_tpc: None,
                arrival_us: None,
            })?;
            *seq += 1;
        }
    }
    Ok(())
}
