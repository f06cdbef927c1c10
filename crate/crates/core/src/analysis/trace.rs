//! Per-checkpoint training metrics and their CSV form.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const TRACE_COLUMNS: [&str; 9] = [
    "step",
    "loss",
    "mean_q",
    "feat_dot",
    "cosine",
    "srank",
    "eval_return",
    "r_td",
    "diverged",
];

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: usize,
    pub loss: f64,
    pub mean_q: f64,
    pub feat_dot: f64,
    /// NaN when every feature row is zero.
    pub cosine: f64,
    pub srank: usize,
    pub eval_return: f64,
    pub r_td: f64,
    pub diverged: bool,
}

/// Ordered checkpoints plus `key=value` provenance emitted as `#` lines.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricTrace {
    provenance: Vec<(String, String)>,
    records: Vec<Checkpoint>,
}

impl MetricTrace {
    pub fn new(provenance: Vec<(String, String)>) -> Self {
        MetricTrace {
            provenance,
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, c: Checkpoint) -> Result<()> {
        if let Some(last) = self.records.last() {
            if c.step <= last.step {
                return Err(Error::domain(format!(
                    "checkpoint step {} does not follow {}",
                    c.step, last.step
                )));
            }
        }
        self.records.push(c);
        Ok(())
    }

    pub fn records(&self) -> &[Checkpoint] {
        &self.records
    }

    pub fn provenance(&self) -> &[(String, String)] {
        &self.provenance
    }

    pub fn provenance_value(&self, key: &str) -> Option<&str> {
        self.provenance.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn add_provenance(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.provenance.push((key.into(), value.into()));
    }

    pub fn last(&self) -> Option<&Checkpoint> {
        self.records.last()
    }

    pub fn diverged(&self) -> bool {
        self.records.last().is_some_and(|c| c.diverged)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.provenance {
            writeln!(out, "# {k}={v}").expect("writing to a String");
        }
        out.push_str(&TRACE_COLUMNS.join(","));
        out.push('\n');
        for c in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                c.step,
                c.loss,
                c.mean_q,
                c.feat_dot,
                c.cosine,
                c.srank,
                c.eval_return,
                c.r_td,
                u8::from(c.diverged)
            )
            .expect("writing to a String");
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut trace = MetricTrace::default();
        let mut seen_header = false;
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            if let Some(meta) = line.strip_prefix('#') {
                if let Some((k, v)) = meta.trim().split_once('=') {
                    trace.provenance.push((k.to_string(), v.to_string()));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            if !seen_header {
                let cols: Vec<&str> = line.split(',').map(str::trim).collect();
                if cols != TRACE_COLUMNS {
                    return Err(Error::parse(lineno, format!("unexpected trace header '{line}'")));
                }
                seen_header = true;
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != TRACE_COLUMNS.len() {
                return Err(Error::parse(
                    lineno,
                    format!("expected {} fields, found {}", TRACE_COLUMNS.len(), f.len()),
                ));
            }
            let float = |k: usize| -> Result<f64> {
                f[k].parse()
                    .map_err(|_| Error::parse(lineno, format!("{} value '{}' is not a number", TRACE_COLUMNS[k], f[k])))
            };
            let int = |k: usize| -> Result<usize> {
                f[k].parse()
                    .map_err(|_| Error::parse(lineno, format!("{} value '{}' is not an integer", TRACE_COLUMNS[k], f[k])))
            };
            let diverged = match f[8] {
                "0" => false,
                "1" => true,
                other => return Err(Error::parse(lineno, format!("diverged flag '{other}' is not 0/1"))),
            };
            let c = Checkpoint {
                step: int(0)?,
                loss: float(1)?,
                mean_q: float(2)?,
                feat_dot: float(3)?,
                cosine: float(4)?,
                srank: int(5)?,
                eval_return: float(6)?,
                r_td: float(7)?,
                diverged,
            };
            trace.push(c).map_err(|e| Error::parse(lineno, e.to_string()))?;
        }
        if !seen_header {
            return Err(Error::parse(text.lines().count().max(1), "trace has no header row"));
        }
        Ok(trace)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        MetricTrace::parse_csv(&text)
    }
}
