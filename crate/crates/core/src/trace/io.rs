//! Line-delimited JSON trace files.
//!
//! One record per line with the fields `seq`, `name`, `class`, optional
//! `sr_class`, `payload_req`, `payload_resp`, `gpu_exec_us`, optional
//! `local_exec_us` and optional `cpu_gap_us`. Unknown fields are rejected.
//! Lines starting with `#` are comments; `app=`, `batch=` and `source=`
//! tokens in them fill [`TraceMeta`].

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ApiCall, ApiClass, Trace, TraceError, TraceMeta};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    seq: f64,
    name: String,
    class: String,
    #[serde(default)]
    sr_class: Option<String>,
    payload_req: f64,
    payload_resp: f64,
    gpu_exec_us: f64,
    #[serde(default)]
    local_exec_us: Option<f64>,
    #[serde(default)]
    cpu_gap_us: Option<f64>,
}

#[derive(Serialize)]
struct OutRecord<'a> {
    seq: u64,
    name: &'a str,
    class: ApiClass,
    #[serde(skip_serializing_if = "Option::is_none")]
    sr_class: Option<ApiClass>,
    payload_req: u64,
    payload_resp: u64,
    gpu_exec_us: f64,
    local_exec_us: f64,
    cpu_gap_us: f64,
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<Trace, TraceError> {
    let text = fs::read_to_string(path)?;
    parse_trace(&text)
}

pub fn parse_trace(text: &str) -> Result<Trace, TraceError> {
    let mut meta = TraceMeta::default();
    let mut calls = Vec::new();
    let mut last_seq: Option<u64> = None;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            parse_header(comment, &mut meta);
            continue;
        }
        let raw: RawRecord = serde_json::from_str(trimmed).map_err(|e| TraceError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let call = convert(raw, line_no)?;
        if let Some(prev) = last_seq {
            if call.seq <= prev {
                return Err(field_err(line_no, "seq", "must be strictly increasing"));
            }
        }
        last_seq = Some(call.seq);
        calls.push(call);
    }
    Trace::from_calls(calls, meta)
}

fn field_err(line: usize, field: &'static str, message: &str) -> TraceError {
    TraceError::Field {
        line,
        field,
        message: message.to_string(),
    }
}

fn non_negative(line: usize, field: &'static str, v: f64) -> Result<f64, TraceError> {
    if !v.is_finite() || v < 0.0 {
        return Err(field_err(line, field, "must be finite and non-negative"));
    }
    Ok(v)
}

fn whole(line: usize, field: &'static str, v: f64) -> Result<u64, TraceError> {
    let v = non_negative(line, field, v)?;
    if v.fract() != 0.0 || v > u64::MAX as f64 {
        return Err(field_err(line, field, "must be a whole number"));
    }
    Ok(v as u64)
}

fn convert(raw: RawRecord, line: usize) -> Result<ApiCall, TraceError> {
    let class: ApiClass = raw
        .class
        .parse()
        .map_err(|e: String| field_err(line, "class", &e))?;
    let sr_class = match raw.sr_class.as_deref() {
        None => None,
        Some("async") => Some(ApiClass::Async),
        Some("local") => Some(ApiClass::Local),
        Some(other) => {
            return Err(field_err(
                line,
                "sr_class",
                &format!("must be \"async\" or \"local\", got {other:?}"),
            ))
        }
    };
    if class == ApiClass::Local && sr_class.is_some() {
        return Err(field_err(line, "sr_class", "must be absent when class is local"));
    }
    if raw.name.is_empty() {
        return Err(field_err(line, "name", "must not be empty"));
    }
    Ok(ApiCall {
        seq: whole(line, "seq", raw.seq)?,
        name: raw.name,
        base_class: class,
        sr_class,
        class,
        payload_req: whole(line, "payload_req", raw.payload_req)?,
        payload_resp: whole(line, "payload_resp", raw.payload_resp)?,
        gpu_exec_us: non_negative(line, "gpu_exec_us", raw.gpu_exec_us)?,
        local_exec_us: non_negative(line, "local_exec_us", raw.local_exec_us.unwrap_or(0.0))?,
        cpu_gap_us: non_negative(line, "cpu_gap_us", raw.cpu_gap_us.unwrap_or(0.0))?,
    })
}

fn parse_header(comment: &str, meta: &mut TraceMeta) {
    let comment = comment.trim();
    // `source=` swallows the rest of the line.
    let (head, source) = match comment.find("source=") {
        Some(pos) => (&comment[..pos], Some(comment[pos + "source=".len()..].trim())),
        None => (comment, None),
    };
    for token in head.split_whitespace() {
        if let Some(app) = token.strip_prefix("app=") {
            meta.app = Some(app.to_string());
        } else if let Some(batch) = token.strip_prefix("batch=") {
            if let Ok(b) = batch.parse() {
                meta.batch_size = Some(b);
            }
        }
    }
    if let Some(s) = source.filter(|s| !s.is_empty()) {
        meta.source = Some(s.to_string());
    }
}

/// Writes a trace as JSONL. Base classes and SR flags are written; the
/// effective class is not part of the file format.
pub fn write_trace<W: Write>(trace: &Trace, mut out: W) -> Result<(), TraceError> {
    let meta = &trace.meta;
    if meta.app.is_some() || meta.batch_size.is_some() || meta.source.is_some() {
        let mut header = String::from("#");
        if let Some(app) = &meta.app {
            header.push_str(&format!(" app={app}"));
        }
        if let Some(b) = meta.batch_size {
            header.push_str(&format!(" batch={b}"));
        }
        if let Some(s) = &meta.source {
            header.push_str(&format!(" source={s}"));
        }
        writeln!(out, "{header}")?;
    }
    for call in trace.calls() {
        let rec = OutRecord {
            seq: call.seq,
            name: &call.name,
            class: call.base_class,
            sr_class: call.sr_class,
            payload_req: call.payload_req,
            payload_resp: call.payload_resp,
            gpu_exec_us: call.gpu_exec_us,
            local_exec_us: call.local_exec_us,
            cpu_gap_us: call.cpu_gap_us,
        };
        let line = serde_json::to_string(&rec).map_err(|e| TraceError::Parse {
            line: call.seq as usize + 1,
            message: e.to_string(),
        })?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}
