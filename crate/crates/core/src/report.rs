//! Report types and their canonical JSON form: object keys sorted, floats
//! printed with six decimals, two-space indentation, trailing newline.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::qagen::QASet;
use crate::quality::{QualityResult, RemapContext};
use crate::vqa::AlignmentResult;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

fn write_string(out: &mut String, s: &str) {
    out.push_str(&serde_json::to_string(s).expect("string serializes"));
}

fn write_number(out: &mut String, n: &serde_json::Number) {
    if n.is_f64() {
        let x = n.as_f64().expect("f64");
        let s = format!("{x:.6}");
        out.push_str(if s == "-0.000000" { "0.000000" } else { &s });
    } else {
        out.push_str(&n.to_string());
    }
}

fn write_value(out: &mut String, v: &Value, indent: usize) {
    let pad = |n: usize| "  ".repeat(n);
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => write_number(out, n),
        Value::String(s) => write_string(out, s),
        Value::Array(a) if a.is_empty() => out.push_str("[]"),
        Value::Array(a) => {
            out.push_str("[\n");
            for (i, x) in a.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                write_value(out, x, indent + 1);
                out.push_str(if i + 1 < a.len() { ",\n" } else { "\n" });
            }
            let _ = write!(out, "{}]", pad(indent));
        }
        Value::Object(m) if m.is_empty() => out.push_str("{}"),
        Value::Object(m) => {
            let mut keys: Vec<&String> = m.keys().collect();
            keys.sort();
            out.push_str("{\n");
            for (i, k) in keys.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                write_string(out, k);
                out.push_str(": ");
                write_value(out, &m[k.as_str()], indent + 1);
                out.push_str(if i + 1 < keys.len() { ",\n" } else { "\n" });
            }
            let _ = write!(out, "{}}}", pad(indent));
        }
    }
}

pub fn canonical_json_value(v: &Value) -> String {
    let mut out = String::new();
    write_value(&mut out, v, 0);
    out.push('\n');
    out
}

pub fn canonical_json<T: Serialize>(v: &T) -> String {
    canonical_json_value(&serde_json::to_value(v).expect("report serializes"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoScore {
    pub video_id: String,
    pub generator_id: String,
    pub t2vscore_a: f64,
    pub t2vscore_q: f64,
    pub alignment_detail: AlignmentResult,
    pub quality_detail: QualityResult,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipCause {
    /// Bad input: missing frames, malformed trajectory, missing scores.
    Validation,
    /// A model or scoring service failed.
    Backend,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedVideo {
    pub video_id: String,
    pub stage: String,
    pub cause: SkipCause,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptQa {
    pub prompt_text: String,
    pub cache_key: String,
    pub qaset: QASet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemapRecord {
    /// `"all"` or a generator id.
    pub scope: String,
    pub technical: RemapContext,
    pub semantic: RemapContext,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub tool_version: String,
    pub config_fingerprint: String,
    pub config: Value,
    pub per_video: Vec<VideoScore>,
    pub skipped: Vec<SkippedVideo>,
    pub remap: Vec<RemapRecord>,
    pub prompts: Vec<PromptQa>,
}

impl ScoreReport {
    pub fn to_canonical_json(&self) -> String {
        canonical_json(self)
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn video(&self, id: &str) -> Option<&VideoScore> {
        self.per_video.iter().find(|v| v.video_id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub metric_name: String,
    /// Human rating dimension the metric is compared against.
    pub target: String,
    pub n: usize,
    pub spearman: Option<f64>,
    pub kendall: Option<f64>,
    pub pearson: Option<f64>,
    /// Names of undefined coefficients, e.g. `"spearman undefined: ..."`.
    pub flags: Vec<String>,
    pub extras: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalGroup {
    pub label: String,
    pub video_ids: Vec<String>,
    pub rows: Vec<EvalRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    Overall,
    CrossModel,
    Ablation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTable {
    pub grouping: Grouping,
    pub groups: Vec<EvalGroup>,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

impl EvalTable {
    pub fn to_canonical_json(&self) -> String {
        canonical_json(self)
    }

    /// Plain-text table, one block per group.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for g in &self.groups {
            let _ = writeln!(out, "## {} ({} videos)", g.label, g.video_ids.len());
            let _ = writeln!(
                out,
                "{:<32} {:<10} {:>8} {:>8} {:>8}  flags",
                "metric", "target", "SRCC", "KRCC", "PLCC"
            );
            for r in &g.rows {
                let mut flags = r.flags.join("; ");
                for (k, v) in &r.extras {
                    if !flags.is_empty() {
                        flags.push_str("; ");
                    }
                    let _ = write!(flags, "{k}={v:.4}");
                }
                let _ = writeln!(
                    out,
                    "{:<32} {:<10} {:>8} {:>8} {:>8}  {}",
                    r.metric_name,
                    r.target,
                    cell(r.spearman),
                    cell(r.kendall),
                    cell(r.pearson),
                    flags
                );
            }
            out.push('\n');
        }
        out
    }
}
