//! Run configuration, read from TOML.
//!
//! ```toml
//! mode = "adaptive"               # iterative | adaptive | static | aesthetic
//! iterations_per_seed = 5
//! seeds_per_category = 1
//! categories = ["household", "people", "animals", "locations"]
//! random_seed = 7
//! repeat_count = 5
//! scorer = "vqascore"             # vqascore | vqa-accuracy
//! template_set = "llava"          # llava | llama | molmo
//!
//! [endpoints.mllm]
//! model_id = "llava-v1.6-34b"
//! base_url = "http://localhost:8000/v1"
//!
//! [[endpoints.t2i]]
//! model_id = "sdxl"
//! base_url = "http://localhost:8001/v1"
//! ```
//!
//! Endpoint tables may omit `kind`; it is implied by where they appear.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RunError;
use crate::gateway::{EndpointKind, ModelEndpoint};
use crate::prompt::templates::TemplateSet;
use crate::prompt::SeedCategory;
use crate::scoring::{JudgeOptions, Scorer};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Iterative,
    Adaptive,
    Static,
    Aesthetic,
}

impl Mode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "iterative" => Some(Mode::Iterative),
            "adaptive" => Some(Mode::Adaptive),
            "static" => Some(Mode::Static),
            "aesthetic" => Some(Mode::Aesthetic),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Iterative => "iterative",
            Mode::Adaptive => "adaptive",
            Mode::Static => "static",
            Mode::Aesthetic => "aesthetic",
        }
    }
}

/// Whether chain scores are weighted by prompt difficulty. `auto` weights
/// adaptive runs only.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DifficultyWeighting {
    #[default]
    Auto,
    On,
    Off,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Endpoints {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mllm: Option<ModelEndpoint>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub t2i: Vec<ModelEndpoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lm: Option<ModelEndpoint>,
}

fn d_iterations() -> u32 {
    5
}
fn d_one() -> u32 {
    1
}
fn d_repeats() -> u32 {
    5
}
fn d_categories() -> Vec<SeedCategory> {
    SeedCategory::ALL.to_vec()
}
fn d_parallel() -> usize {
    1
}
fn d_temperature() -> f64 {
    0.3
}
fn d_prompt_tokens() -> u32 {
    256
}
fn d_judge_tokens() -> u32 {
    JudgeOptions::default().max_tokens
}
fn d_question_tokens() -> u32 {
    JudgeOptions::default().question_max_tokens
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "d_iterations")]
    pub iterations_per_seed: u32,
    #[serde(default = "d_one")]
    pub seeds_per_category: u32,
    #[serde(default = "d_categories")]
    pub categories: Vec<SeedCategory>,
    #[serde(default)]
    pub random_seed: u64,
    #[serde(default = "d_repeats")]
    pub repeat_count: u32,
    #[serde(default)]
    pub scorer: Scorer,
    #[serde(default)]
    pub template_set: TemplateSet,
    /// Used instead of generated seeds, one chain each.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_prompts: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub static_prompts: Option<Vec<String>>,
    /// Prompts drawn per repeat in static/aesthetic mode (default: all).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub static_sample_size: Option<usize>,
    #[serde(default)]
    pub difficulty_weighting: DifficultyWeighting,
    /// External constituency parser; see `lingmetrics::ExternalParser`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parser_command: Option<String>,
    #[serde(default = "d_parallel")]
    pub max_parallel_chains: usize,
    #[serde(default = "d_temperature")]
    pub prompt_temperature: f64,
    #[serde(default = "d_prompt_tokens")]
    pub prompt_max_tokens: u32,
    #[serde(default = "d_judge_tokens")]
    pub judge_max_tokens: u32,
    #[serde(default = "d_question_tokens")]
    pub question_max_tokens: u32,
    #[serde(default)]
    pub endpoints: Endpoints,
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults deserialize")
    }
}

fn config_err(msg: impl Into<String>) -> RunError {
    RunError::Config(msg.into())
}

// Fills in `kind` on endpoint tables and rejects contradicting values.
fn imply_kinds(table: &mut toml::Table) -> Result<(), RunError> {
    let Some(toml::Value::Table(eps)) = table.get_mut("endpoints") else {
        return Ok(());
    };
    let fix = |v: &mut toml::Value, key: &str, kind: EndpointKind| -> Result<(), RunError> {
        let t = v.as_table_mut().ok_or_else(|| config_err(format!("{key} must be a table")))?;
        match t.get("kind") {
            None => {
                t.insert("kind".into(), toml::Value::String(kind.to_string()));
            }
            Some(toml::Value::String(k)) if *k == kind.to_string() => {}
            Some(other) => return Err(config_err(format!("{key}.kind is {other}, expected \"{kind}\""))),
        }
        Ok(())
    };
    for (key, kind) in [("mllm", EndpointKind::Mllm), ("lm", EndpointKind::Lm)] {
        if let Some(v) = eps.get_mut(key) {
            fix(v, &format!("endpoints.{key}"), kind)?;
        }
    }
    match eps.get_mut("t2i") {
        Some(toml::Value::Array(list)) => {
            for (i, v) in list.iter_mut().enumerate() {
                fix(v, &format!("endpoints.t2i[{i}]"), EndpointKind::T2i)?;
            }
        }
        Some(v @ toml::Value::Table(_)) => {
            fix(v, "endpoints.t2i", EndpointKind::T2i)?;
            let single = v.clone();
            *v = toml::Value::Array(vec![single]);
        }
        Some(_) => return Err(config_err("endpoints.t2i must be a table or an array of tables")),
        None => {}
    }
    Ok(())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, RunError> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| config_err(e.message().to_string()))?;
        imply_kinds(&mut table)?;
        table.try_into().map_err(|e: toml::de::Error| config_err(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn judge_options(&self) -> JudgeOptions {
        JudgeOptions { template_set: self.template_set, max_tokens: self.judge_max_tokens, question_max_tokens: self.question_max_tokens }
    }

    pub fn weighting_enabled(&self) -> bool {
        match self.difficulty_weighting {
            DifficultyWeighting::Auto => self.mode == Mode::Adaptive,
            DifficultyWeighting::On => true,
            DifficultyWeighting::Off => false,
        }
    }

    /// Points every endpoint at a mock script, creating default endpoints
    /// where the file has none.
    pub fn apply_mock(&mut self, script: &str) {
        let eps = &mut self.endpoints;
        let redirect = |e: &mut ModelEndpoint| {
            e.base_url = None;
            e.mock = Some(script.to_string());
        };
        match &mut eps.mllm {
            Some(e) => redirect(e),
            None => eps.mllm = Some(ModelEndpoint::mocked(EndpointKind::Mllm, "mock-mllm", script)),
        }
        if eps.t2i.is_empty() {
            eps.t2i.push(ModelEndpoint::mocked(EndpointKind::T2i, "mock-t2i", script));
        }
        eps.t2i.iter_mut().for_each(redirect);
        if let Some(e) = &mut eps.lm {
            redirect(e);
        }
    }

    /// Number of chains per repeat.
    pub fn chain_count(&self) -> usize {
        match self.mode {
            Mode::Static | Mode::Aesthetic => {
                let n = self.static_prompts.as_ref().map_or(0, Vec::len);
                self.static_sample_size.unwrap_or(n).min(n)
            }
            _ => match &self.seed_prompts {
                Some(s) => s.len(),
                None => self.categories.len() * self.seeds_per_category as usize,
            },
        }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let mllm = self.endpoints.mllm.as_ref().ok_or_else(|| config_err("missing required key endpoints.mllm"))?;
        if self.endpoints.t2i.is_empty() {
            return Err(config_err("missing required key endpoints.t2i"));
        }
        let mut ids = HashSet::new();
        for (key, e) in std::iter::once(("endpoints.mllm".to_string(), mllm))
            .chain(self.endpoints.t2i.iter().enumerate().map(|(i, e)| (format!("endpoints.t2i[{i}]"), e)))
            .chain(self.endpoints.lm.iter().map(|e| ("endpoints.lm".to_string(), e)))
        {
            e.validate().map_err(|err| config_err(format!("{key}: {err}")))?;
            if e.kind == EndpointKind::T2i && !ids.insert(e.model_id.as_str()) {
                return Err(config_err(format!("{key}: duplicate t2i model_id {:?}", e.model_id)));
            }
        }
        if self.iterations_per_seed == 0 {
            return Err(config_err("iterations_per_seed must be >= 1"));
        }
        if self.seeds_per_category == 0 {
            return Err(config_err("seeds_per_category must be >= 1"));
        }
        if self.repeat_count == 0 {
            return Err(config_err("repeat_count must be >= 1"));
        }
        if self.max_parallel_chains == 0 {
            return Err(config_err("max_parallel_chains must be >= 1"));
        }
        if !(self.prompt_temperature.is_finite() && self.prompt_temperature >= 0.0) {
            return Err(config_err("prompt_temperature must be >= 0"));
        }
        if self.prompt_max_tokens == 0 || self.judge_max_tokens == 0 || self.question_max_tokens == 0 {
            return Err(config_err("token limits must be >= 1"));
        }
        if self.categories.is_empty() {
            return Err(config_err("categories must not be empty"));
        }
        let unique: HashSet<_> = self.categories.iter().collect();
        if unique.len() != self.categories.len() {
            return Err(config_err("categories contains duplicates"));
        }
        if let Some(seeds) = &self.seed_prompts {
            if seeds.is_empty() || seeds.iter().any(|s| s.trim().is_empty()) {
                return Err(config_err("seed_prompts must be nonempty strings"));
            }
        }
        match self.mode {
            Mode::Static | Mode::Aesthetic => {
                let prompts = self.static_prompts.as_ref().ok_or_else(|| config_err(format!("mode {} requires static_prompts", self.mode.name())))?;
                if prompts.is_empty() || prompts.iter().any(|p| p.trim().is_empty()) {
                    return Err(config_err("static_prompts must be nonempty strings"));
                }
                if let Some(k) = self.static_sample_size {
                    if k == 0 || k > prompts.len() {
                        return Err(config_err(format!("static_sample_size must be in 1..={}", prompts.len())));
                    }
                }
            }
            Mode::Iterative | Mode::Adaptive => {}
        }
        Ok(())
    }
}
