use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::supernet::{GateMode, OpKind};

pub const TRACE_SCHEMA: &str = "darts-lab/search-trace";
pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrKind {
    CrossBatch,
    SelfDiagonal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrRecord {
    pub step: usize,
    pub cell: usize,
    pub node: usize,
    pub edge: String,
    pub raw: f64,
    pub normalized: f64,
    pub kind: CorrKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PTraceRecord {
    pub step: usize,
    pub cell: usize,
    pub edge: String,
    pub op: OpKind,
    pub p: f64,
    pub grad_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateRecord {
    pub step: usize,
    pub edge: String,
    pub alpha: Vec<f64>,
    pub gates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr_w: f64,
    pub loss_w: f64,
    pub loss_alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceRecord {
    Step(StepRecord),
    Gates(GateRecord),
    GradP(PTraceRecord),
    Corr(CorrRecord),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceHeader {
    pub schema: String,
    pub version: u32,
    pub gate_mode: GateMode,
    pub ops: Vec<OpKind>,
    pub edges: Vec<String>,
    pub num_cells: usize,
    pub total_steps: usize,
    pub record_every: usize,
}

/// Per-step records of one search run.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchTrace {
    pub header: TraceHeader,
    pub records: Vec<TraceRecord>,
}

impl SearchTrace {
    pub fn new(header: TraceHeader) -> Self {
        SearchTrace {
            header,
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, r: TraceRecord) {
        self.records.push(r);
    }

    pub fn gates(&self) -> impl Iterator<Item = &GateRecord> {
        self.records.iter().filter_map(|r| match r {
            TraceRecord::Gates(g) => Some(g),
            _ => None,
        })
    }

    pub fn grad_p(&self) -> impl Iterator<Item = &PTraceRecord> {
        self.records.iter().filter_map(|r| match r {
            TraceRecord::GradP(g) => Some(g),
            _ => None,
        })
    }

    pub fn corr(&self) -> impl Iterator<Item = &CorrRecord> {
        self.records.iter().filter_map(|r| match r {
            TraceRecord::Corr(c) => Some(c),
            _ => None,
        })
    }

    pub fn steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter_map(|r| match r {
            TraceRecord::Step(s) => Some(s),
            _ => None,
        })
    }

    /// Header line followed by one JSON object per record.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let first = lines.next().ok_or(Error::EmptyTrace)??;
        let header: TraceHeader = serde_json::from_str(&first)?;
        if header.schema != TRACE_SCHEMA || header.version != TRACE_VERSION {
            return Err(Error::Parse(format!(
                "unsupported trace schema {} v{}",
                header.schema, header.version
            )));
        }
        let mut records = Vec::new();
        for line in lines {
            let line = line?;
            if !line.trim().is_empty() {
                records.push(serde_json::from_str(&line)?);
            }
        }
        Ok(SearchTrace { header, records })
    }
}

/// Gate history of one edge.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeSeries {
    pub edge: String,
    pub steps: Vec<usize>,
    /// `[record][op]`
    pub gates: Vec<Vec<f64>>,
    /// First recorded step from which non-learnable mass exceeds learnable mass through the end.
    pub dominated_at: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominationReport {
    pub ops: Vec<OpKind>,
    pub total_steps: usize,
    pub edges: Vec<EdgeSeries>,
}

impl DominationReport {
    pub fn dominated_fraction(&self) -> f64 {
        let n = self.edges.iter().filter(|e| e.dominated_at.is_some()).count();
        n as f64 / self.edges.len() as f64
    }

    /// Among dominated edges, the fraction whose onset is at or before `frac * total_steps`.
    pub fn early_onset_fraction(&self, frac: f64) -> f64 {
        let onsets: Vec<usize> = self.edges.iter().filter_map(|e| e.dominated_at).collect();
        if onsets.is_empty() {
            return 0.0;
        }
        let cut = frac * self.total_steps as f64;
        onsets.iter().filter(|&&s| s as f64 <= cut).count() as f64 / onsets.len() as f64
    }
}

/// Split gate mass into (non-learnable, learnable).
pub fn masses(ops: &[OpKind], gates: &[f64]) -> (f64, f64) {
    ops.iter().zip(gates).fold((0.0, 0.0), |(n, l), (o, g)| {
        if o.learnable() {
            (n, l + g)
        } else {
            (n + g, l)
        }
    })
}

pub fn domination_trace(trace: &SearchTrace) -> Result<DominationReport> {
    let ops = trace.header.ops.clone();
    let mut edges: Vec<EdgeSeries> = trace
        .header
        .edges
        .iter()
        .map(|e| EdgeSeries {
            edge: e.clone(),
            steps: Vec::new(),
            gates: Vec::new(),
            dominated_at: None,
        })
        .collect();
    let mut any = false;
    for g in trace.gates() {
        let s = edges
            .iter_mut()
            .find(|s| s.edge == g.edge)
            .ok_or_else(|| Error::UnknownEdge(g.edge.clone()))?;
        s.steps.push(g.step);
        s.gates.push(g.gates.clone());
        any = true;
    }
    if !any {
        return Err(Error::EmptyTrace);
    }
    for s in &mut edges {
        let mut onset = None;
        for (step, gates) in s.steps.iter().zip(&s.gates) {
            let (non, learn) = masses(&ops, gates);
            if non > learn {
                onset.get_or_insert(*step);
            } else {
                onset = None;
            }
        }
        s.dominated_at = onset;
    }
    Ok(DominationReport {
        ops,
        total_steps: trace.header.total_steps,
        edges,
    })
}
