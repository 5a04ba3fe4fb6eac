//! Line-delimited trace files and the trace viewer.
//!
//! Each pass is written as a `{"type":"pass","pass":N}` record followed by
//! one `{"type":"entry",...}` record per evaluated node and, for a failed
//! pass, a final `{"type":"abort",...}` record. Totals are never stored;
//! readers recompute them from the entries.

use std::fmt::Write as _;
use std::io::{self, BufRead, Write};

use promptdag_core::store::{AbortMarker, OpRecord};
use promptdag_core::{NodeId, PassTrace, TraceEntry, Usage, Value};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceRecord {
    Pass {
        pass: u64,
    },
    Entry {
        pass: u64,
        node: NodeId,
        composed: String,
        raw_answer: String,
        parsed: Value,
        retries: u32,
        usage: Usage,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        ops: Vec<OpRecord>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    Abort {
        pass: u64,
        node: NodeId,
        cause: String,
    },
}

#[derive(Debug, Error)]
pub enum TraceFileError {
    #[error("corrupt trace at line {line}: {detail}")]
    CorruptTrace { line: usize, detail: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// The records of one pass, in order.
pub fn records(trace: &PassTrace) -> Vec<TraceRecord> {
    let pass = trace.pass;
    let mut out = vec![TraceRecord::Pass { pass }];
    for e in &trace.entries {
        out.push(TraceRecord::Entry {
            pass,
            node: e.node.clone(),
            composed: e.composed.clone(),
            raw_answer: e.raw_answer.clone(),
            parsed: e.parsed.clone(),
            retries: e.retries,
            usage: e.usage,
            ops: e.ops.clone(),
            error: e.error.clone(),
        });
    }
    if let Some(a) = &trace.aborted {
        out.push(TraceRecord::Abort { pass, node: a.node.clone(), cause: a.cause.clone() });
    }
    out
}

pub fn write_traces<W: Write>(mut out: W, traces: &[PassTrace]) -> io::Result<()> {
    for trace in traces {
        for record in records(trace) {
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()
}

/// Reads a whole trace file. Blank lines are ignored.
pub fn read_traces<R: BufRead>(input: R) -> Result<Vec<PassTrace>, TraceFileError> {
    let mut traces: Vec<PassTrace> = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let corrupt = |detail: String| TraceFileError::CorruptTrace { line: n, detail };
        let record: TraceRecord = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
        if let TraceRecord::Pass { pass } = record {
            traces.push(PassTrace::new(pass));
            continue;
        }
        let Some(open) = traces.last_mut() else {
            return Err(corrupt("record before the first pass header".into()));
        };
        if open.aborted.is_some() {
            return Err(corrupt(format!("record after the abort of pass {}", open.pass)));
        }
        match record {
            TraceRecord::Pass { .. } => unreachable!(),
            TraceRecord::Entry { pass, node, composed, raw_answer, parsed, retries, usage, ops, error } => {
                if pass != open.pass {
                    return Err(corrupt(format!("entry for pass {pass} inside pass {}", open.pass)));
                }
                open.push(TraceEntry { node, composed, raw_answer, parsed, retries, usage, ops, error });
            }
            TraceRecord::Abort { pass, node, cause } => {
                if pass != open.pass {
                    return Err(corrupt(format!("abort for pass {pass} inside pass {}", open.pass)));
                }
                open.aborted = Some(AbortMarker { node, cause });
            }
        }
    }
    Ok(traces)
}

/// Selects entries. In episode runs step `T` is pass `T`, so `step` and
/// `pass` select the same thing.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TraceFilter {
    pub node: Option<String>,
    pub pass: Option<u64>,
    pub step: Option<u64>,
}

impl TraceFilter {
    fn pass_matches(&self, pass: u64) -> bool {
        self.pass.is_none_or(|p| p == pass) && self.step.is_none_or(|s| s == pass)
    }

    fn node_matches(&self, node: &NodeId) -> bool {
        self.node.as_deref().is_none_or(|n| node == n)
    }
}

fn indent(text: &str) -> String {
    text.lines().map(|l| format!("    {l}\n")).collect()
}

/// Human-readable view of the selected entries, ending with a totals line
/// summed from those entries.
pub fn render_view(traces: &[PassTrace], filter: &TraceFilter) -> String {
    let mut out = String::new();
    let mut total = Usage::default();
    let mut count = 0usize;
    for trace in traces.iter().filter(|t| filter.pass_matches(t.pass)) {
        for e in trace.entries.iter().filter(|e| filter.node_matches(&e.node)) {
            count += 1;
            total += e.usage;
            let u = e.usage;
            let _ = writeln!(
                out,
                "pass {} node {}: retries {}, tokens {} (prompt {}, completion {}), cost {:.6}",
                trace.pass,
                e.node,
                e.retries,
                u.tokens(),
                u.prompt_tokens,
                u.completion_tokens,
                u.cost
            );
            let _ = write!(out, "  prompt:\n{}  answer:\n{}", indent(&e.composed), indent(&e.raw_answer));
            for op in &e.ops {
                let verdict = if op.accepted { "accepted".to_string() } else { format!("rejected: {}", op.reason.as_deref().unwrap_or("")) };
                let _ = writeln!(out, "  op {}: {verdict}", serde_json::to_string(&op.op).unwrap_or_default());
            }
            if let Some(err) = &e.error {
                let _ = writeln!(out, "  error: {err}");
            }
            out.push('\n');
        }
        if let Some(a) = trace.aborted.as_ref().filter(|a| filter.node_matches(&a.node)) {
            let _ = writeln!(out, "pass {} aborted at node {}: {}\n", trace.pass, a.node, a.cause);
        }
    }
    if count == 0 {
        out.push_str("no entries\n");
        return out;
    }
    let _ = writeln!(
        out,
        "totals: {count} entries, prompt {} + completion {} = {} tokens, cost {:.6}",
        total.prompt_tokens,
        total.completion_tokens,
        total.tokens(),
        total.cost
    );
    out
}
