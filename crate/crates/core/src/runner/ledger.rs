//! Run ledger: one JSON object per line.
//!
//! A ledger file is a `header` line, then for every chain a `chain` line,
//! its `iteration` and `error` lines and a `chain_end` line, then a
//! `footer`. Chains appear in index order even when they ran in parallel.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{Mode, RunConfig};
use super::RunError;
use crate::lingmetrics::DifficultyProfile;
use crate::prompt::{PromptText, ScoreBin, SeedCategory};
use crate::scoring::{AestheticScore, ConsistencyScore};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum RecordScore {
    Consistency(ConsistencyScore),
    Aesthetic(AestheticScore),
}

impl RecordScore {
    /// Consistency in [0, 1] or aesthetic in [0, 10].
    pub fn value(&self) -> f64 {
        match self {
            RecordScore::Consistency(s) => s.value(),
            RecordScore::Aesthetic(s) => s.value(),
        }
    }
}

fn is_zero(n: &u32) -> bool {
    *n == 0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub index: u32,
    pub prompt: PromptText,
    pub image_hash: String,
    pub score: RecordScore,
    pub difficulty: DifficultyProfile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bin_applied: Option<ScoreBin>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub reasks: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Seed,
    Prompt,
    Image,
    Score,
    Difficulty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainError {
    pub iteration: u32,
    pub stage: Stage,
    pub message: String,
    /// The T2I endpoint refused the prompt; the iteration has no score.
    #[serde(default)]
    pub safety_refusal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    Yngve,
    WordCount,
    Unweighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalScore {
    pub value: f64,
    pub weighting: Weighting,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub index: usize,
    pub category: Option<SeedCategory>,
    pub seed_prompt: Option<String>,
    pub records: Vec<IterationRecord>,
    pub errors: Vec<ChainError>,
    /// Present only for complete chains.
    pub final_score: Option<FinalScore>,
}

impl ChainRecord {
    pub fn new(index: usize, category: Option<SeedCategory>, seed_prompt: Option<String>) -> Self {
        ChainRecord { index, category, seed_prompt, records: Vec::new(), errors: Vec::new(), final_score: None }
    }

    pub fn is_complete(&self, expected_len: usize) -> bool {
        self.errors.is_empty() && self.records.len() == expected_len
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLedger {
    pub schema_version: u32,
    pub run_id: String,
    pub mode: Mode,
    pub repeat: u32,
    pub seed: u64,
    /// T2I model under evaluation.
    pub model: String,
    /// Every T2I model of the run this ledger belongs to.
    pub models: Vec<String>,
    pub judge: String,
    pub config: RunConfig,
    pub started_at: String,
    pub finished_at: String,
    pub chains: Vec<ChainRecord>,
}

impl RunLedger {
    /// Records expected in a chain that ran to the end.
    pub fn chain_len(&self) -> usize {
        match self.mode {
            Mode::Static | Mode::Aesthetic => 1,
            Mode::Iterative | Mode::Adaptive => self.config.iterations_per_seed as usize,
        }
    }

    pub fn record_count(&self) -> usize {
        self.chains.iter().map(|c| c.records.len()).sum()
    }

    pub fn error_count(&self) -> usize {
        self.chains.iter().map(|c| c.errors.len()).sum()
    }

    pub fn has_errors(&self) -> bool {
        self.error_count() > 0
    }

    pub fn records(&self) -> impl Iterator<Item = &IterationRecord> {
        self.chains.iter().flat_map(|c| c.records.iter())
    }

    pub fn without_timestamps(&self) -> RunLedger {
        RunLedger { started_at: String::new(), finished_at: String::new(), ..self.clone() }
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        let mut w = LedgerWriter::new(&mut buf);
        w.header(self).expect("write to Vec");
        for c in &self.chains {
            w.chain(c).expect("write to Vec");
        }
        w.footer(self).expect("write to Vec");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Event {
    Header {
        schema_version: u32,
        run_id: String,
        mode: Mode,
        repeat: u32,
        seed: u64,
        model: String,
        models: Vec<String>,
        judge: String,
        config: Box<RunConfig>,
        started_at: String,
    },
    Chain {
        chain: usize,
        category: Option<SeedCategory>,
        seed_prompt: Option<String>,
    },
    Iteration {
        chain: usize,
        record: Box<IterationRecord>,
    },
    Error {
        chain: usize,
        error: ChainError,
    },
    ChainEnd {
        chain: usize,
        final_score: Option<FinalScore>,
        complete: bool,
    },
    Footer {
        finished_at: String,
        chains: usize,
        records: usize,
        errors: usize,
    },
}

/// Appends ledger lines to `W`, flushing after each event group.
pub struct LedgerWriter<W: Write> {
    out: W,
}

impl LedgerWriter<BufWriter<File>> {
    pub fn create(path: &Path) -> Result<Self, RunError> {
        let f = File::create(path).map_err(|e| RunError::Io(format!("{}: {e}", path.display())))?;
        Ok(LedgerWriter::new(BufWriter::new(f)))
    }
}

impl<W: Write> LedgerWriter<W> {
    pub fn new(out: W) -> Self {
        LedgerWriter { out }
    }

    fn emit(&mut self, e: &Event) -> Result<(), RunError> {
        let line = serde_json::to_string(e).map_err(|e| RunError::Io(e.to_string()))?;
        writeln!(self.out, "{line}").map_err(|e| RunError::Io(e.to_string()))
    }

    fn flush(&mut self) -> Result<(), RunError> {
        self.out.flush().map_err(|e| RunError::Io(e.to_string()))
    }

    /// Writes the header; chains and timestamps other than `started_at` are ignored.
    pub fn header(&mut self, l: &RunLedger) -> Result<(), RunError> {
        self.emit(&Event::Header {
            schema_version: l.schema_version,
            run_id: l.run_id.clone(),
            mode: l.mode,
            repeat: l.repeat,
            seed: l.seed,
            model: l.model.clone(),
            models: l.models.clone(),
            judge: l.judge.clone(),
            config: Box::new(l.config.clone()),
            started_at: l.started_at.clone(),
        })?;
        self.flush()
    }

    pub fn chain(&mut self, c: &ChainRecord) -> Result<(), RunError> {
        self.emit(&Event::Chain { chain: c.index, category: c.category, seed_prompt: c.seed_prompt.clone() })?;
        for r in &c.records {
            self.emit(&Event::Iteration { chain: c.index, record: Box::new(r.clone()) })?;
        }
        for e in &c.errors {
            self.emit(&Event::Error { chain: c.index, error: e.clone() })?;
        }
        self.emit(&Event::ChainEnd { chain: c.index, final_score: c.final_score.clone(), complete: c.errors.is_empty() })?;
        self.flush()
    }

    pub fn footer(&mut self, l: &RunLedger) -> Result<(), RunError> {
        self.emit(&Event::Footer { finished_at: l.finished_at.clone(), chains: l.chains.len(), records: l.record_count(), errors: l.error_count() })?;
        self.flush()
    }
}

pub fn write_ledger(ledger: &RunLedger, path: &Path) -> Result<(), RunError> {
    std::fs::write(path, ledger.to_jsonl()).map_err(|e| RunError::Io(format!("{}: {e}", path.display())))
}

fn at(line: usize, message: impl Into<String>) -> RunError {
    RunError::Ledger { line, message: message.into() }
}

pub fn parse_ledger(text: &str) -> Result<RunLedger, RunError> {
    let mut ledger: Option<RunLedger> = None;
    let mut open: Option<ChainRecord> = None;
    let mut footer = None;
    let mut last_line = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        last_line = line;
        if raw.trim().is_empty() {
            continue;
        }
        if footer.is_some() {
            return Err(at(line, "content after footer"));
        }
        let event: Event = match serde_json::from_str(raw) {
            Ok(e) => e,
            Err(e) => {
                // A header with another schema may not parse as ours; say so.
                if let Some(v) = serde_json::from_str::<serde_json::Value>(raw).ok().and_then(|v| v.get("schema_version").cloned()) {
                    if v != serde_json::json!(SCHEMA_VERSION) {
                        return Err(RunError::Schema { found: v.to_string() });
                    }
                }
                return Err(at(line, format!("corrupt line: {e}")));
            }
        };
        match event {
            Event::Header { schema_version, run_id, mode, repeat, seed, model, models, judge, config, started_at } => {
                if ledger.is_some() {
                    return Err(at(line, "duplicate header"));
                }
                if schema_version != SCHEMA_VERSION {
                    return Err(RunError::Schema { found: schema_version.to_string() });
                }
                ledger = Some(RunLedger {
                    schema_version,
                    run_id,
                    mode,
                    repeat,
                    seed,
                    model,
                    models,
                    judge,
                    config: *config,
                    started_at,
                    finished_at: String::new(),
                    chains: Vec::new(),
                });
            }
            other => {
                let l = ledger.as_mut().ok_or_else(|| at(line, "missing header"))?;
                match other {
                    Event::Header { .. } => unreachable!(),
                    Event::Chain { chain, category, seed_prompt } => {
                        if open.is_some() {
                            return Err(at(line, "chain started before previous chain ended"));
                        }
                        open = Some(ChainRecord::new(chain, category, seed_prompt));
                    }
                    Event::Iteration { chain, record } => match open.as_mut() {
                        Some(c) if c.index == chain => c.records.push(*record),
                        _ => return Err(at(line, format!("iteration for chain {chain} outside its block"))),
                    },
                    Event::Error { chain, error } => match open.as_mut() {
                        Some(c) if c.index == chain => c.errors.push(error),
                        _ => return Err(at(line, format!("error for chain {chain} outside its block"))),
                    },
                    Event::ChainEnd { chain, final_score, complete } => match open.take() {
                        Some(mut c) if c.index == chain => {
                            if complete != c.errors.is_empty() {
                                return Err(at(line, "chain_end completeness disagrees with recorded errors"));
                            }
                            c.final_score = final_score;
                            l.chains.push(c);
                        }
                        _ => return Err(at(line, format!("unmatched chain_end for chain {chain}"))),
                    },
                    Event::Footer { finished_at, chains, records, errors } => {
                        if open.is_some() {
                            return Err(at(line, "footer inside an open chain"));
                        }
                        if chains != l.chains.len() || records != l.record_count() || errors != l.error_count() {
                            return Err(at(line, "footer counts do not match the ledger body"));
                        }
                        l.finished_at = finished_at;
                        footer = Some(line);
                    }
                }
            }
        }
    }
    let ledger = ledger.ok_or_else(|| at(1, "empty ledger"))?;
    if footer.is_none() {
        return Err(at(last_line.max(1), "ledger ends without a footer (run interrupted or file truncated)"));
    }
    Ok(ledger)
}

pub fn read_ledger(path: &Path) -> Result<RunLedger, RunError> {
    let text = std::fs::read_to_string(path).map_err(|e| RunError::Io(format!("{}: {e}", path.display())))?;
    parse_ledger(&text).map_err(|e| match e {
        RunError::Ledger { line, message } => RunError::Ledger { line, message: format!("{}: {message}", path.display()) },
        other => other,
    })
}
