//! Prompt generation: seed prompts, the progressive-difficulty rewrite, the
//! score-adaptive rewrite, and parsing of the model's `Prompt:` replies.
//!
//! The harness never edits prompt text itself. All rewriting is delegated to
//! the chat model through the verbatim templates in [`templates`].

pub mod templates;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatTurn, DecodingParams, Gateway, GatewayError};
use templates::{Template, REPLY_MARKER};

/// Follow-up sent once when a reply lacks the marker.
pub const REASK_REMINDER: &str = "Your reply did not follow the format. Write \"Prompt:\" and then write the new prompt, do not state anything else.";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("reply has no \"Prompt:\" marker: {0:?}")]
    MissingMarker(String),
    #[error("reply marker is followed by no prompt text")]
    EmptyPrompt,
    #[error("expected {expected} seed prompts, reply contained {found}")]
    TooFewSeeds { expected: usize, found: usize },
    #[error("score {0} is outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeedCategory {
    Household,
    People,
    Animals,
    Locations,
}

impl SeedCategory {
    pub const ALL: [SeedCategory; 4] = [SeedCategory::Household, SeedCategory::People, SeedCategory::Animals, SeedCategory::Locations];

    pub fn name(self) -> &'static str {
        match self {
            SeedCategory::Household => "household",
            SeedCategory::People => "people",
            SeedCategory::Animals => "animals",
            SeedCategory::Locations => "locations",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            SeedCategory::Household => "household scenes (foods, household items, or furniture)",
            SeedCategory::People => "descriptions of people",
            SeedCategory::Animals => "scenes with animals",
            SeedCategory::Locations => "location descriptions",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name().eq_ignore_ascii_case(s.trim()))
    }
}

impl fmt::Display for SeedCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A prompt in a chain. Index 0 is the seed and has no parent; every other
/// prompt records its parent's text and sits one index above it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PromptWire", into = "PromptWire")]
pub struct PromptText {
    text: String,
    iteration: u32,
    parent: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct PromptWire {
    text: String,
    iteration: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    parent: Option<String>,
}

impl TryFrom<PromptWire> for PromptText {
    type Error = String;

    fn try_from(w: PromptWire) -> Result<Self, String> {
        if w.text.trim().is_empty() {
            return Err("prompt text is empty".into());
        }
        if (w.iteration == 0) != w.parent.is_none() {
            return Err(format!("prompt at iteration {} has inconsistent parent", w.iteration));
        }
        Ok(PromptText { text: w.text, iteration: w.iteration, parent: w.parent })
    }
}

impl From<PromptText> for PromptWire {
    fn from(p: PromptText) -> Self {
        PromptWire { text: p.text, iteration: p.iteration, parent: p.parent }
    }
}

impl PromptText {
    pub fn seed(text: impl Into<String>) -> Result<Self, PromptError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(PromptError::InvalidArgument("seed prompt is empty".into()));
        }
        Ok(PromptText { text, iteration: 0, parent: None })
    }

    pub fn child(&self, text: impl Into<String>) -> Result<Self, PromptError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(PromptError::EmptyPrompt);
        }
        Ok(PromptText { text, iteration: self.iteration + 1, parent: Some(self.text.clone()) })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn iteration(&self) -> u32 {
        self.iteration
    }

    pub fn parent(&self) -> Option<&str> {
        self.parent.as_deref()
    }
}

/// A real interval with independently open or closed ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        let above = if self.lo_closed { x >= self.lo } else { x > self.lo };
        let below = if self.hi_closed { x <= self.hi } else { x < self.hi };
        above && below
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{:.1}, {:.1}{}", if self.lo_closed { '[' } else { '(' }, self.lo, self.hi, if self.hi_closed { ']' } else { ')' })
    }
}

/// How the adaptive controller rewrites the next prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreBin {
    Halve,
    Reduce,
    Rephrase,
    Increase1,
    Increase2,
}

impl ScoreBin {
    pub const ALL: [ScoreBin; 5] = [ScoreBin::Halve, ScoreBin::Reduce, ScoreBin::Rephrase, ScoreBin::Increase1, ScoreBin::Increase2];

    /// [0.0,0.2], (0.2,0.4], (0.4,0.6), [0.6,0.8), [0.8,1.0]
    pub fn interval(self) -> Interval {
        let (lo, hi, lo_closed, hi_closed) = match self {
            ScoreBin::Halve => (0.0, 0.2, true, true),
            ScoreBin::Reduce => (0.2, 0.4, false, true),
            ScoreBin::Rephrase => (0.4, 0.6, false, false),
            ScoreBin::Increase1 => (0.6, 0.8, true, false),
            ScoreBin::Increase2 => (0.8, 1.0, true, true),
        };
        Interval { lo, hi, lo_closed, hi_closed }
    }

    pub fn template(self) -> Template {
        match self {
            ScoreBin::Halve => templates::ADAPTIVE_HALVE,
            ScoreBin::Reduce => templates::ADAPTIVE_REDUCE,
            ScoreBin::Rephrase => templates::ADAPTIVE_REPHRASE,
            ScoreBin::Increase1 => templates::ADAPTIVE_INCREASE1,
            ScoreBin::Increase2 => templates::ADAPTIVE_INCREASE2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScoreBin::Halve => "halve",
            ScoreBin::Reduce => "reduce",
            ScoreBin::Rephrase => "rephrase",
            ScoreBin::Increase1 => "increase1",
            ScoreBin::Increase2 => "increase2",
        }
    }
}

impl fmt::Display for ScoreBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn select_bin(score: f64) -> Result<ScoreBin, PromptError> {
    if !(0.0..=1.0).contains(&score) {
        return Err(PromptError::ScoreOutOfRange(score));
    }
    ScoreBin::ALL.into_iter().find(|b| b.interval().contains(score)).ok_or(PromptError::ScoreOutOfRange(score))
}

fn clean_prompt_line(raw: &str) -> String {
    let mut s = raw.trim().trim_end_matches('.').trim_end();
    for (open, close) in [('"', '"'), ('\'', '\''), ('\u{201c}', '\u{201d}')] {
        if s.len() >= 2 && s.starts_with(open) && s.ends_with(close) {
            s = s[open.len_utf8()..s.len() - close.len_utf8()].trim();
        }
    }
    // Template examples never end in a period.
    s.trim_end_matches('.').trim_end().to_string()
}

/// Text after the last `Prompt:` marker, up to the end of that line (or the
/// next nonempty line when the marker ends its line), with surrounding
/// whitespace, quotes and trailing periods removed.
pub fn parse_prompt_reply(raw: &str) -> Result<String, PromptError> {
    let pos = raw.rfind(REPLY_MARKER).ok_or_else(|| PromptError::MissingMarker(raw.to_string()))?;
    let rest = &raw[pos + REPLY_MARKER.len()..];
    let line = rest.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
    let cleaned = clean_prompt_line(line);
    if cleaned.is_empty() {
        return Err(PromptError::EmptyPrompt);
    }
    Ok(cleaned)
}

/// Every `Prompt:` line of a multi-prompt reply, in order.
pub fn parse_prompt_list(raw: &str) -> Vec<String> {
    raw.lines().filter_map(|l| l.find(REPLY_MARKER).map(|p| clean_prompt_line(&l[p + REPLY_MARKER.len()..]))).filter(|s| !s.is_empty()).collect()
}

pub fn seed_instruction(count: usize) -> String {
    format!(
        "You are responsible for writing prompts for a computer program that generates images.\n\
         Write {count} short image descriptions about the topic you are given. Each description should contain two or three objects, attributes, or spatial relationships.\n\
         Do not add subjective descriptors, they should be as factual as possible. Do not use fluffy, poetic language, or any words beyond the elementary school level.\n\
         Write each description on its own line starting with \"Prompt:\" and do not state anything else."
    )
}

pub fn seed_request(category: SeedCategory) -> String {
    format!("Topic: {}", category.description())
}

pub fn existing_prompt_turn(prev: &str) -> String {
    format!("Existing prompt: \"{prev}\"")
}

/// A newly generated prompt and how many re-asks it took.
#[derive(Debug, Clone, PartialEq)]
pub struct NextPrompt {
    pub prompt: PromptText,
    pub reasks: u32,
}

/// Asks for a reply, re-asking once with [`REASK_REMINDER`] when `parse` fails.
fn ask_with_reask<T>(
    gateway: &Gateway,
    mut turns: Vec<ChatTurn>,
    params: &DecodingParams,
    parse: impl Fn(&str) -> Result<T, PromptError>,
) -> Result<(T, u32), PromptError> {
    let first = gateway.chat(&turns, params)?;
    match parse(&first) {
        Ok(v) => Ok((v, 0)),
        Err(e @ (PromptError::Gateway(_) | PromptError::ScoreOutOfRange(_) | PromptError::InvalidArgument(_))) => Err(e),
        Err(_) => {
            log::warn!("unparseable reply, re-asking once: {first:?}");
            turns.push(ChatTurn::assistant(first));
            turns.push(ChatTurn::user(REASK_REMINDER));
            let second = gateway.chat(&turns, params)?;
            parse(&second).map(|v| (v, 1))
        }
    }
}

/// Generates `count` seed prompts for a topic category.
pub fn make_seed_prompts(gateway: &Gateway, category: SeedCategory, count: usize, params: &DecodingParams) -> Result<(Vec<PromptText>, u32), PromptError> {
    if count == 0 {
        return Err(PromptError::InvalidArgument("seed count must be >= 1".into()));
    }
    let turns = vec![ChatTurn::system(seed_instruction(count)), ChatTurn::user(seed_request(category))];
    let (texts, reasks) = ask_with_reask(gateway, turns, params, |reply| {
        let found = parse_prompt_list(reply);
        if found.len() < count {
            Err(PromptError::TooFewSeeds { expected: count, found: found.len() })
        } else {
            Ok(found)
        }
    })?;
    let seeds = texts.into_iter().take(count).map(PromptText::seed).collect::<Result<Vec<_>, _>>()?;
    Ok((seeds, reasks))
}

fn rewrite(gateway: &Gateway, template: Template, prev: &PromptText, params: &DecodingParams) -> Result<NextPrompt, PromptError> {
    if prev.text().trim().is_empty() {
        return Err(PromptError::InvalidArgument("previous prompt is empty".into()));
    }
    let turns = vec![ChatTurn::system(template.body()), ChatTurn::user(existing_prompt_turn(prev.text()))];
    let (text, reasks) = ask_with_reask(gateway, turns, params, parse_prompt_reply)?;
    Ok(NextPrompt { prompt: prev.child(text)?, reasks })
}

/// Progressive-difficulty step: the model adds one object, relation or attribute.
pub fn next_prompt_iterative(gateway: &Gateway, prev: &PromptText, params: &DecodingParams) -> Result<NextPrompt, PromptError> {
    rewrite(gateway, templates::ITERATIVE, prev, params)
}

/// Adaptive step: the previous score picks the bin, the bin picks the template.
pub fn next_prompt_adaptive(gateway: &Gateway, prev: &PromptText, prev_score: f64, params: &DecodingParams) -> Result<(NextPrompt, ScoreBin), PromptError> {
    let bin = select_bin(prev_score)?;
    Ok((rewrite(gateway, bin.template(), prev, params)?, bin))
}
