//! Run orchestration: seed chains, per-iteration scoring, weighted final
//! scores and the ledger.

pub mod config;
pub mod ledger;
pub mod report;
mod svg;

pub use config::{DifficultyWeighting, Endpoints, Mode, RunConfig};
pub use ledger::{
    parse_ledger, read_ledger, write_ledger, ChainError, ChainRecord, FinalScore, IterationRecord, LedgerWriter, RecordScore, RunLedger, Stage, Weighting,
    SCHEMA_VERSION,
};
pub use report::{report, ModelSummary, Report, Series};

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gateway::{DecodingParams, Gateway, GatewayError};
use crate::lingmetrics::{difficulty_profile, ExternalParser, LingError, Syntax};
use crate::prompt::{self, PromptError, PromptText, SeedCategory};
use crate::scoring::{self, ScoringError};
use crate::stats::StatsError;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("ledger line {line}: {message}")]
    Ledger { line: usize, message: String },
    #[error("unsupported ledger schema version {found}, expected {SCHEMA_VERSION}")]
    Schema { found: String },
    #[error("i/o: {0}")]
    Io(String),
    #[error("all difficulty weights are zero")]
    ZeroWeights,
    #[error("chain {0} is incomplete")]
    IncompleteChain(usize),
    #[error("no chain {0}")]
    NoSuchChain(usize),
    #[error("inconsistent ledgers: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl RunError {
    /// Process exit code for a failed command: 2 for configuration problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Gateway(GatewayError::InvalidEndpoint(_)) => 2,
            _ => 1,
        }
    }
}

/// Connected endpoints of a run.
#[derive(Debug, Clone)]
pub struct Gateways {
    pub mllm: Gateway,
    pub t2i: Vec<Gateway>,
    pub lm: Option<Gateway>,
}

impl Gateways {
    pub fn connect(config: &RunConfig) -> Result<Self, RunError> {
        config.validate()?;
        let conn = |e: &crate::gateway::ModelEndpoint| Gateway::connect(e.clone()).map_err(|err| RunError::Config(format!("{}: {err}", e.model_id)));
        let eps = &config.endpoints;
        Ok(Gateways {
            mllm: conn(eps.mllm.as_ref().expect("validated"))?,
            t2i: eps.t2i.iter().map(conn).collect::<Result<_, _>>()?,
            lm: eps.lm.as_ref().map(conn).transpose()?,
        })
    }
}

/// Weighted mean of `scores`; the result always lies between the smallest
/// and largest score.
pub fn weighted_mean(scores: &[f64], weights: &[f64]) -> Result<f64, RunError> {
    if scores.is_empty() || scores.len() != weights.len() {
        return Err(RunError::InvalidArgument(format!("{} scores vs {} weights", scores.len(), weights.len())));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || scores.iter().any(|s| !s.is_finite()) {
        return Err(RunError::InvalidArgument("scores and weights must be finite, weights >= 0".into()));
    }
    if scores.len() == 1 {
        return Ok(scores[0]);
    }
    let total: f64 = weights.iter().sum();
    if total == 0.0 {
        return Err(RunError::ZeroWeights);
    }
    let v = scores.iter().zip(weights).map(|(s, w)| s * w).sum::<f64>() / total;
    let (lo, hi) = scores.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &s| (a.min(s), b.max(s)));
    Ok(v.clamp(lo, hi))
}

/// Difficulty weights of a chain: Yngve scores when every record has one,
/// word counts otherwise.
pub fn chain_weights(chain: &ChainRecord) -> (Vec<f64>, Weighting) {
    let yngve: Option<Vec<f64>> = chain.records.iter().map(|r| r.difficulty.yngve).collect();
    match yngve {
        Some(w) => (w, Weighting::Yngve),
        None => (chain.records.iter().map(|r| r.difficulty.word_count as f64).collect(), Weighting::WordCount),
    }
}

fn weighted_chain_score(chain: &ChainRecord) -> Result<FinalScore, RunError> {
    let scores: Vec<f64> = chain.records.iter().map(|r| r.score.value()).collect();
    let (weights, weighting) = chain_weights(chain);
    let value = weighted_mean(&scores, &weights)?;
    let warnings = match weighting {
        Weighting::WordCount => vec!["yngve missing, weighted by word count".to_string()],
        _ => Vec::new(),
    };
    Ok(FinalScore { value, weighting, warnings })
}

/// Difficulty-weighted mean score of a complete chain.
pub fn weighted_final_score(ledger: &RunLedger, chain: usize) -> Result<FinalScore, RunError> {
    let c = ledger.chains.iter().find(|c| c.index == chain).ok_or(RunError::NoSuchChain(chain))?;
    if !c.is_complete(ledger.chain_len()) {
        return Err(RunError::IncompleteChain(chain));
    }
    weighted_chain_score(c)
}

fn final_score(chain: &ChainRecord, weighted: bool) -> Option<FinalScore> {
    let scores: Vec<f64> = chain.records.iter().map(|r| r.score.value()).collect();
    let plain = |warnings| FinalScore { value: scores.iter().sum::<f64>() / scores.len() as f64, weighting: Weighting::Unweighted, warnings };
    if scores.is_empty() {
        return None;
    }
    if !weighted {
        return Some(plain(Vec::new()));
    }
    match weighted_chain_score(chain) {
        Ok(f) => Some(f),
        Err(e) => Some(plain(vec![format!("{e}, fell back to the unweighted mean")])),
    }
}

fn run_id(config: &RunConfig, model: &str, repeat: u32) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(config).expect("config serializes"));
    h.update([0]);
    h.update(model.as_bytes());
    h.update([0]);
    h.update(repeat.to_le_bytes());
    hex::encode(h.finalize())[..16].to_string()
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Generation seed of the image for `iteration` of chain `chain`.
pub fn image_seed(run_seed: u64, chain: usize, iteration: u32) -> u64 {
    run_seed.wrapping_mul(1_000_003).wrapping_add((chain as u64).wrapping_mul(1_009)).wrapping_add(iteration as u64)
}

// What a chain starts from.
#[derive(Debug, Clone)]
enum ChainStart {
    Seed(SeedCategory, Option<PromptText>),
    Given(PromptText),
    SeedFailure(SeedCategory, String),
}

struct Ctx<'a> {
    config: &'a RunConfig,
    mllm: &'a Gateway,
    t2i: &'a Gateway,
    lm: Option<&'a Gateway>,
    parser: Option<ExternalParser>,
    run_seed: u64,
    weighted: bool,
}

fn is_refusal(e: &GatewayError) -> bool {
    matches!(e, GatewayError::SafetyRefusal(_))
}

impl Ctx<'_> {
    fn prompt_params(&self, chain: usize, iteration: u32) -> DecodingParams {
        DecodingParams { temperature: self.config.prompt_temperature, max_tokens: self.config.prompt_max_tokens, ..DecodingParams::default() }
            .with_seed(image_seed(self.run_seed, chain, iteration))
    }

    fn difficulty(&self, text: &str) -> Result<crate::lingmetrics::DifficultyProfile, LingError> {
        let Some(p) = &self.parser else {
            return difficulty_profile(text, Syntax::Fallback, self.lm);
        };
        match p.parse(text) {
            Ok(tree) => difficulty_profile(text, Syntax::Parsed(&tree), self.lm),
            Err(e) => {
                let mut prof = difficulty_profile(text, Syntax::Fallback, self.lm)?;
                prof.warnings.insert(0, format!("parser failed, used fallback tree: {e}"));
                Ok(prof)
            }
        }
    }

    // Image, score and difficulty for one prompt.
    fn evaluate(&self, chain: usize, prompt: &PromptText) -> Result<IterationRecord, ChainError> {
        let i = prompt.iteration();
        let fail = |stage, message: String, safety_refusal| ChainError { iteration: i, stage, message, safety_refusal };
        let image =
            self.t2i.generate_image(prompt.text(), image_seed(self.run_seed, chain, i)).map_err(|e| fail(Stage::Image, e.to_string(), is_refusal(&e)))?;
        let opts = self.config.judge_options();
        let score = match self.config.mode {
            Mode::Aesthetic => scoring::aesthetic_score(self.mllm, &image, &opts).map(RecordScore::Aesthetic),
            _ => scoring::consistency(self.mllm, &image, prompt.text(), self.config.scorer, &opts).map(RecordScore::Consistency),
        }
        .map_err(|e| {
            let refusal = matches!(&e, ScoringError::Gateway(g) if is_refusal(g));
            fail(Stage::Score, e.to_string(), refusal)
        })?;
        let difficulty = self.difficulty(prompt.text()).map_err(|e| fail(Stage::Difficulty, e.to_string(), false))?;
        let mut warnings = difficulty.warnings.clone();
        if let RecordScore::Consistency(s) = &score {
            if s.method() == scoring::ScoreMethod::Degenerate {
                warnings.push("judge gave no yes/no log-probabilities, score is a degenerate 0/1 answer".into());
            }
        }
        Ok(IterationRecord {
            index: i,
            prompt: prompt.clone(),
            image_hash: image.content_hash().to_string(),
            score,
            difficulty,
            bin_applied: None,
            reasks: 0,
            warnings,
        })
    }

    fn run_chain(&self, index: usize, start: ChainStart) -> ChainRecord {
        let (category, seed) = match start {
            ChainStart::SeedFailure(cat, message) => {
                let mut c = ChainRecord::new(index, Some(cat), None);
                c.errors.push(ChainError { iteration: 0, stage: Stage::Seed, message, safety_refusal: false });
                return c;
            }
            ChainStart::Seed(cat, Some(p)) => (Some(cat), p),
            ChainStart::Seed(cat, None) => {
                let mut c = ChainRecord::new(index, Some(cat), None);
                c.errors.push(ChainError { iteration: 0, stage: Stage::Seed, message: "no seed prompt".into(), safety_refusal: false });
                return c;
            }
            ChainStart::Given(p) => (None, p),
        };
        let mut chain = ChainRecord::new(index, category, Some(seed.text().to_string()));
        let len = match self.config.mode {
            Mode::Static | Mode::Aesthetic => 1,
            _ => self.config.iterations_per_seed,
        };
        let mut prompt = seed;
        for i in 0..len {
            let mut bin = None;
            let mut reasks = 0;
            if i > 0 {
                let prev = chain.records.last().expect("previous record");
                let params = self.prompt_params(index, i);
                let next = match self.config.mode {
                    Mode::Adaptive => prompt::next_prompt_adaptive(self.mllm, &prompt, prev.score.value(), &params).map(|(n, b)| {
                        bin = Some(b);
                        n
                    }),
                    _ => prompt::next_prompt_iterative(self.mllm, &prompt, &params),
                };
                match next {
                    Ok(n) => {
                        prompt = n.prompt;
                        reasks = n.reasks;
                    }
                    Err(e) => {
                        let refusal = matches!(&e, PromptError::Gateway(g) if is_refusal(g));
                        chain.errors.push(ChainError { iteration: i, stage: Stage::Prompt, message: e.to_string(), safety_refusal: refusal });
                        break;
                    }
                }
            }
            match self.evaluate(index, &prompt) {
                Ok(mut r) => {
                    r.bin_applied = bin;
                    r.reasks = reasks;
                    chain.records.push(r);
                }
                Err(e) => {
                    log::warn!("chain {index} iteration {i}: {}", e.message);
                    chain.errors.push(e);
                    break;
                }
            }
        }
        if chain.is_complete(len as usize) {
            chain.final_score = final_score(&chain, self.weighted);
        }
        chain
    }

    fn starts(&self, repeat: u32) -> Vec<ChainStart> {
        let c = self.config;
        match c.mode {
            Mode::Static | Mode::Aesthetic => {
                let prompts = c.static_prompts.as_deref().unwrap_or_default();
                let k = c.static_sample_size.unwrap_or(prompts.len()).min(prompts.len());
                let picked: Vec<usize> = if k == prompts.len() && c.static_sample_size.is_none() {
                    (0..k).collect()
                } else {
                    let mut rng = ChaCha8Rng::seed_from_u64(c.random_seed.wrapping_add(repeat as u64));
                    sample(&mut rng, prompts.len(), k).into_vec()
                };
                picked.into_iter().map(|i| start_from_text(&prompts[i])).collect()
            }
            _ => match &c.seed_prompts {
                Some(seeds) => seeds.iter().map(|s| start_from_text(s)).collect(),
                None => {
                    let mut out = Vec::new();
                    let n = c.seeds_per_category as usize;
                    for (k, &cat) in c.categories.iter().enumerate() {
                        let params = self.prompt_params(usize::MAX - k, 0);
                        match prompt::make_seed_prompts(self.mllm, cat, n, &params) {
                            Ok((seeds, _)) => {
                                let mut it = seeds.into_iter();
                                out.extend((0..n).map(|_| ChainStart::Seed(cat, it.next())));
                            }
                            Err(e) => out.extend((0..n).map(|_| ChainStart::SeedFailure(cat, e.to_string()))),
                        }
                    }
                    out
                }
            },
        }
    }
}

fn start_from_text(text: &str) -> ChainStart {
    ChainStart::Given(PromptText::seed(text.trim()).expect("validated nonempty prompt"))
}

/// Writes finished chains in index order.
struct OrderedSink<'w> {
    next: usize,
    pending: BTreeMap<usize, ChainRecord>,
    done: Vec<ChainRecord>,
    writer: Option<LedgerWriter<&'w mut (dyn Write + Send)>>,
    error: Option<RunError>,
}

impl OrderedSink<'_> {
    fn push(&mut self, c: ChainRecord) {
        self.pending.insert(c.index, c);
        while let Some(c) = self.pending.remove(&self.next) {
            if let (Some(w), None) = (self.writer.as_mut(), &self.error) {
                if let Err(e) = w.chain(&c) {
                    self.error = Some(e);
                }
            }
            self.done.push(c);
            self.next += 1;
        }
    }
}

/// Runs one (T2I model, repeat) ledger, streaming it to `out` when given.
pub fn run_one(config: &RunConfig, gateways: &Gateways, model: usize, repeat: u32, out: Option<&mut (dyn Write + Send)>) -> Result<RunLedger, RunError> {
    config.validate()?;
    let t2i = gateways.t2i.get(model).ok_or_else(|| RunError::InvalidArgument(format!("no t2i endpoint {model}")))?;
    let parser = config.parser_command.as_deref().map(ExternalParser::new).transpose().map_err(|e| RunError::Config(e.to_string()))?;
    let run_seed = config.random_seed.wrapping_add(repeat as u64);
    let ctx = Ctx { config, mllm: &gateways.mllm, t2i, lm: gateways.lm.as_ref(), parser, run_seed, weighted: config.weighting_enabled() };
    let mut ledger = RunLedger {
        schema_version: SCHEMA_VERSION,
        run_id: run_id(config, t2i.model_id(), repeat),
        mode: config.mode,
        repeat,
        seed: run_seed,
        model: t2i.model_id().to_string(),
        models: gateways.t2i.iter().map(|g| g.model_id().to_string()).collect(),
        judge: gateways.mllm.model_id().to_string(),
        config: config.clone(),
        started_at: now(),
        finished_at: String::new(),
        chains: Vec::new(),
    };
    let mut writer = out.map(LedgerWriter::new);
    if let Some(w) = writer.as_mut() {
        w.header(&ledger)?;
    }
    let starts = ctx.starts(repeat);
    let sink = Mutex::new(OrderedSink { next: 0, pending: BTreeMap::new(), done: Vec::new(), writer, error: None });
    let cursor = AtomicUsize::new(0);
    let workers = config.max_parallel_chains.min(starts.len()).max(1);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = cursor.fetch_add(1, Ordering::SeqCst);
                let Some(start) = starts.get(i) else { break };
                let chain = ctx.run_chain(i, start.clone());
                sink.lock().expect("sink lock").push(chain);
            });
        }
    });
    let mut sink = sink.into_inner().expect("sink lock");
    if let Some(e) = sink.error.take() {
        return Err(e);
    }
    ledger.chains = std::mem::take(&mut sink.done);
    ledger.finished_at = now();
    if let Some(w) = sink.writer.as_mut() {
        w.footer(&ledger)?;
    }
    Ok(ledger)
}

fn require_mode(config: &RunConfig, allowed: &[Mode]) -> Result<(), RunError> {
    if allowed.contains(&config.mode) {
        Ok(())
    } else {
        Err(RunError::Config(format!("mode {} not valid here", config.mode.name())))
    }
}

/// Iterative-mode ledger for the first T2I model, repeat 0.
pub fn run_iterative(config: &RunConfig, gateways: &Gateways) -> Result<RunLedger, RunError> {
    require_mode(config, &[Mode::Iterative])?;
    run_one(config, gateways, 0, 0, None)
}

pub fn run_adaptive(config: &RunConfig, gateways: &Gateways) -> Result<RunLedger, RunError> {
    require_mode(config, &[Mode::Adaptive])?;
    run_one(config, gateways, 0, 0, None)
}

/// Fixed-prompt ledgers, one per repeat, each with its own sample draw.
pub fn run_static(config: &RunConfig, gateways: &Gateways) -> Result<Vec<RunLedger>, RunError> {
    require_mode(config, &[Mode::Static, Mode::Aesthetic])?;
    (0..config.repeat_count).map(|r| run_one(config, gateways, 0, r, None)).collect()
}

/// Every (T2I model, repeat) ledger of a configuration, model-major.
pub fn run_all(config: &RunConfig, gateways: &Gateways) -> Result<Vec<RunLedger>, RunError> {
    let mut out = Vec::new();
    for m in 0..gateways.t2i.len() {
        for r in 0..config.repeat_count {
            out.push(run_one(config, gateways, m, r, None)?);
        }
    }
    Ok(out)
}
