//! Image-prompt consistency (VQAScore, generated-question accuracy) and
//! aesthetic scoring, all routed through a judge [`Gateway`].

mod questions;

pub use questions::{
    derive_element, match_choice, parse_mcq_block, questions_from_jsonl, questions_to_jsonl, serialize_questions, McQuestion, ParsedQuestions,
};

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatTurn, DecodingParams, Gateway, GatewayError, ImageArtifact};
use crate::prompt::templates::{self, TemplateSet};

pub const YES_VARIANTS: [&str; 2] = ["Yes", "yes"];
pub const NO_VARIANTS: [&str; 2] = ["No", "no"];
pub const ANSWER_INSTRUCTION: &str = "Answer with one of the choices and state nothing else.";
pub const AESTHETIC_REMINDER: &str = "Only state the score as a number between 0 and 10.";
pub const QUESTION_DESCRIPTION_PREFIX: &str = "Image description: ";

const VQA_PREFIX: &str = "Does this figure show ";
const VQA_SUFFIX: &str = ". Please answer yes or no.";

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no parseable questions ({warnings} malformed blocks)")]
    NoQuestions { warnings: usize },
    #[error("none of the {0} questions passed validation")]
    NoValidatedQuestions(usize),
    #[error("unparseable judge reply: {0:?}")]
    Unparseable(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scorer {
    #[default]
    Vqascore,
    VqaAccuracy,
}

impl Scorer {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "vqascore" => Some(Scorer::Vqascore),
            "vqa-accuracy" => Some(Scorer::VqaAccuracy),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreMethod {
    Vqascore,
    VqaAccuracy,
    Degenerate,
}

/// Per-question record kept by generated-question scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionOutcome {
    pub question: McQuestion,
    pub validated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chosen: Option<String>,
    pub matched: bool,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScoreWire")]
pub struct ConsistencyScore {
    value: f64,
    method: ScoreMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    detail: Option<Vec<QuestionOutcome>>,
}

#[derive(Deserialize)]
struct ScoreWire {
    value: f64,
    method: ScoreMethod,
    #[serde(default)]
    detail: Option<Vec<QuestionOutcome>>,
}

impl TryFrom<ScoreWire> for ConsistencyScore {
    type Error = ScoringError;

    fn try_from(w: ScoreWire) -> Result<Self, Self::Error> {
        ConsistencyScore::new(w.value, w.method, w.detail)
    }
}

impl ConsistencyScore {
    pub fn new(value: f64, method: ScoreMethod, detail: Option<Vec<QuestionOutcome>>) -> Result<Self, ScoringError> {
        if !(0.0..=1.0).contains(&value) {
            return Err(ScoringError::InvalidArgument(format!("consistency score {value} outside [0, 1]")));
        }
        if method == ScoreMethod::VqaAccuracy && detail.is_none() {
            return Err(ScoringError::InvalidArgument("vqa-accuracy score needs per-question detail".into()));
        }
        Ok(ConsistencyScore { value, method, detail })
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn method(&self) -> ScoreMethod {
        self.method
    }

    pub fn detail(&self) -> Option<&[QuestionOutcome]> {
        self.detail.as_deref()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct AestheticScore(f64);

impl AestheticScore {
    pub fn new(value: f64) -> Result<Self, ScoringError> {
        if (0.0..=10.0).contains(&value) {
            Ok(AestheticScore(value))
        } else {
            Err(ScoringError::InvalidArgument(format!("aesthetic score {value} outside [0, 10]")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for AestheticScore {
    type Error = ScoringError;

    fn try_from(v: f64) -> Result<Self, Self::Error> {
        AestheticScore::new(v)
    }
}

impl From<AestheticScore> for f64 {
    fn from(s: AestheticScore) -> f64 {
        s.0
    }
}

/// Knobs shared by the judge calls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JudgeOptions {
    pub template_set: TemplateSet,
    /// Token cap for short judge replies (answers, validation, scores).
    pub max_tokens: u32,
    /// Token cap for question generation.
    pub question_max_tokens: u32,
}

impl Default for JudgeOptions {
    fn default() -> Self {
        JudgeOptions { template_set: TemplateSet::default(), max_tokens: 16, question_max_tokens: 512 }
    }
}

pub fn vqa_question(prompt: &str) -> String {
    format!("{VQA_PREFIX}{prompt}{VQA_SUFFIX}")
}

/// Inverse of [`vqa_question`].
pub fn prompt_from_vqa_question(question: &str) -> Option<&str> {
    question.strip_prefix(VQA_PREFIX)?.strip_suffix(VQA_SUFFIX)
}

/// P(yes) / (P(yes) + P(no)) over the surface variants, or `None` when the
/// map carries no yes/no mass at all. Shifting all logprobs by a constant
/// leaves the result unchanged.
pub fn yes_probability(logprobs: &crate::gateway::LogprobMap) -> Option<f64> {
    let get = |k: &str| logprobs.get(k).copied().unwrap_or(f64::NEG_INFINITY);
    let yes: Vec<f64> = YES_VARIANTS.iter().map(|k| get(k)).collect();
    let no: Vec<f64> = NO_VARIANTS.iter().map(|k| get(k)).collect();
    let m = yes.iter().chain(&no).copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return None;
    }
    let py: f64 = yes.iter().map(|l| (l - m).exp()).sum();
    let pn: f64 = no.iter().map(|l| (l - m).exp()).sum();
    Some((py / (py + pn)).clamp(0.0, 1.0))
}

fn vqa_candidates() -> Vec<String> {
    YES_VARIANTS.iter().chain(NO_VARIANTS.iter()).map(|s| s.to_string()).collect()
}

pub fn vqascore(gateway: &Gateway, image: &ImageArtifact, prompt: &str, opts: &JudgeOptions) -> Result<ConsistencyScore, ScoringError> {
    if prompt.trim().is_empty() {
        return Err(ScoringError::InvalidArgument("prompt is empty".into()));
    }
    let turns = [ChatTurn::user_with_image(vqa_question(prompt), image.clone())];
    match gateway.first_token_logprobs(&turns, &vqa_candidates()) {
        Ok(map) => {
            if let Some(p) = yes_probability(&map) {
                return ConsistencyScore::new(p, ScoreMethod::Vqascore, None);
            }
            log::warn!("no yes/no probability mass for {prompt:?}, sampling an answer instead");
        }
        Err(GatewayError::LogprobsUnsupported) => {}
        Err(e) => return Err(e.into()),
    }
    let reply = gateway.chat(&turns, &DecodingParams::judge(opts.max_tokens))?;
    let norm = reply.trim().to_lowercase();
    let value = if norm.starts_with("yes") {
        1.0
    } else if norm.starts_with("no") {
        0.0
    } else {
        return Err(ScoringError::Unparseable(reply));
    };
    ConsistencyScore::new(value, ScoreMethod::Degenerate, None)
}

pub fn generate_questions(gateway: &Gateway, prompt: &str, opts: &JudgeOptions) -> Result<ParsedQuestions, ScoringError> {
    if prompt.trim().is_empty() {
        return Err(ScoringError::InvalidArgument("prompt is empty".into()));
    }
    let turns = [ChatTurn::system(opts.template_set.question_generation().body()), ChatTurn::user(format!("{QUESTION_DESCRIPTION_PREFIX}{prompt}"))];
    let reply = gateway.chat(&turns, &DecodingParams::judge(opts.question_max_tokens))?;
    let parsed = parse_mcq_block(&reply);
    if parsed.questions.is_empty() {
        return Err(ScoringError::NoQuestions { warnings: parsed.warnings.len() });
    }
    for w in &parsed.warnings {
        log::warn!("dropped question block: {w}");
    }
    Ok(parsed)
}

pub fn validation_text(set: TemplateSet, prompt: &str, q: &McQuestion) -> String {
    set.validation().body().replace("(prompt)", prompt).replace("(question)", q.question())
}

/// True iff the judge's reply starts with "yes" (case-insensitive).
pub fn validate_question(gateway: &Gateway, prompt: &str, q: &McQuestion, opts: &JudgeOptions) -> Result<bool, ScoringError> {
    let turns = [ChatTurn::user(validation_text(opts.template_set, prompt, q))];
    let reply = gateway.chat(&turns, &DecodingParams::judge(opts.max_tokens))?;
    Ok(reply.trim().to_lowercase().starts_with("yes"))
}

pub fn answer_text(q: &McQuestion) -> String {
    format!("{}\nChoices: {}\n{ANSWER_INSTRUCTION}", q.question(), q.choices().join(", "))
}

/// The judge's answer mapped onto one of the choices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Answer {
    pub reply: String,
    pub choice: String,
    pub matched: bool,
}

pub fn answer_question(gateway: &Gateway, image: &ImageArtifact, q: &McQuestion, opts: &JudgeOptions) -> Result<Answer, ScoringError> {
    let turns = [ChatTurn::user_with_image(answer_text(q), image.clone())];
    let reply = gateway.chat(&turns, &DecodingParams::judge(opts.max_tokens))?;
    let (choice, matched) = match_choice(&reply, q.choices());
    if !matched {
        log::warn!("answer {reply:?} matches no choice of {:?}", q.question());
    }
    Ok(Answer { reply, choice, matched })
}

/// Fraction of validated questions answered correctly.
pub fn vqa_accuracy(
    gateway: &Gateway,
    image: &ImageArtifact,
    prompt: &str,
    questions: &[McQuestion],
    opts: &JudgeOptions,
) -> Result<ConsistencyScore, ScoringError> {
    if questions.is_empty() {
        return Err(ScoringError::InvalidArgument("question list is empty".into()));
    }
    let mut detail = Vec::with_capacity(questions.len());
    let (mut validated, mut correct) = (0usize, 0usize);
    for q in questions {
        if !validate_question(gateway, prompt, q, opts)? {
            detail.push(QuestionOutcome { question: q.clone(), validated: false, reply: None, chosen: None, matched: false, correct: false });
            continue;
        }
        validated += 1;
        let a = answer_question(gateway, image, q, opts)?;
        let ok = a.choice == q.answer();
        correct += ok as usize;
        detail.push(QuestionOutcome { question: q.clone(), validated: true, reply: Some(a.reply), chosen: Some(a.choice), matched: a.matched, correct: ok });
    }
    if validated == 0 {
        return Err(ScoringError::NoValidatedQuestions(questions.len()));
    }
    ConsistencyScore::new(correct as f64 / validated as f64, ScoreMethod::VqaAccuracy, Some(detail))
}

/// Generate, validate and answer questions for one image.
pub fn gqa_score(gateway: &Gateway, image: &ImageArtifact, prompt: &str, opts: &JudgeOptions) -> Result<ConsistencyScore, ScoringError> {
    let parsed = generate_questions(gateway, prompt, opts)?;
    vqa_accuracy(gateway, image, prompt, &parsed.questions, opts)
}

pub fn consistency(gateway: &Gateway, image: &ImageArtifact, prompt: &str, scorer: Scorer, opts: &JudgeOptions) -> Result<ConsistencyScore, ScoringError> {
    match scorer {
        Scorer::Vqascore => vqascore(gateway, image, prompt, opts),
        Scorer::VqaAccuracy => gqa_score(gateway, image, prompt, opts),
    }
}

static NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d+(?:\.\d+)?").unwrap());

/// First decimal number in `reply`, clamped to [0, 10].
pub fn parse_aesthetic_reply(reply: &str) -> Option<AestheticScore> {
    let n: f64 = NUMBER.find(reply)?.as_str().parse().ok()?;
    Some(AestheticScore(n.clamp(0.0, 10.0)))
}

pub fn aesthetic_score(gateway: &Gateway, image: &ImageArtifact, opts: &JudgeOptions) -> Result<AestheticScore, ScoringError> {
    let params = DecodingParams::judge(opts.max_tokens);
    let mut turns = vec![ChatTurn::system(templates::AESTHETIC_SYSTEM.body()), ChatTurn::user_with_image(templates::AESTHETIC_USER.body(), image.clone())];
    let first = gateway.chat(&turns, &params)?;
    if let Some(s) = parse_aesthetic_reply(&first) {
        return Ok(s);
    }
    turns.push(ChatTurn::assistant(first));
    turns.push(ChatTurn::user(AESTHETIC_REMINDER));
    let second = gateway.chat(&turns, &params)?;
    parse_aesthetic_reply(&second).ok_or(ScoringError::Unparseable(second))
}
