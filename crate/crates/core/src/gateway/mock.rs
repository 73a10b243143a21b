//! Deterministic scripted endpoints.
//!
//! A mock answers every call from an ordered rule list; the first rule whose
//! conditions hold decides the reply, otherwise the script's fallback does.
//! Rules see a [`MockCall`]: the call kind, the whole transcript (all turn
//! texts joined by newlines) and the call subject (last user text for chat
//! calls, the prompt for image calls, the continuation for scoring calls).
//!
//! Scripts are either builtin names (`echo`, `scripted`, `scripted-fault`)
//! or paths to TOML files:
//!
//! ```toml
//! fallback = "synthetic"          # synthetic | echo | none
//!
//! [[rules]]
//! on = "logprobs"                 # chat | logprobs | score | image (optional)
//! when = ["Does this figure show a red cat."]
//! probs = { Yes = 0.9, No = 0.1 }
//!
//! [[rules]]
//! on = "image"
//! equals = "a forbidden prompt"
//! fail = "refusal"
//!
//! [[rules]]
//! on = "image"
//! equals = "a red cat"
//! seed = 4                        # only the image rendered with this seed
//! reply = "red-cat-4"             # image rules render their reply text
//!
//! [[rules]]
//! on = "logprobs"
//! image = "red-cat-4"             # the judge is shown that image
//! probs = { Yes = 0.2, No = 0.8 }
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::image::{render_procedural, sha256_hex};
use super::synthetic;
use super::{ChatTurn, DecodingParams, GatewayError, LogprobMap, ModelBackend, ModelEndpoint, Role, TokenScore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CallKind {
    Chat,
    Logprobs,
    Score,
    Image,
}

/// What a rule sees about an incoming call.
#[derive(Debug, Clone)]
pub struct MockCall<'a> {
    pub kind: CallKind,
    pub model_id: &'a str,
    pub transcript: String,
    pub subject: String,
    pub turns: &'a [ChatTurn],
    pub seed: u64,
}

impl MockCall<'_> {
    /// Content hashes of the images attached to the call.
    pub fn image_hashes(&self) -> impl Iterator<Item = &str> {
        self.turns.iter().filter_map(|t| t.image.as_ref().map(|i| i.content_hash()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailKind {
    Transport,
    Timeout,
    Refusal,
    Malformed,
    LogprobsUnsupported,
    ScoringUnsupported,
}

impl FailKind {
    fn to_error(self, subject: &str) -> GatewayError {
        match self {
            FailKind::Transport => GatewayError::Transport { attempts: 1, message: format!("scripted transport failure for {subject:?}") },
            FailKind::Timeout => GatewayError::Timeout { attempts: 1 },
            FailKind::Refusal => GatewayError::SafetyRefusal(format!("scripted refusal for {subject:?}")),
            FailKind::Malformed => GatewayError::Malformed(format!("scripted malformed reply for {subject:?}")),
            FailKind::LogprobsUnsupported => GatewayError::LogprobsUnsupported,
            FailKind::ScoringUnsupported => GatewayError::ScoringUnsupported,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MockAction {
    Reply(String),
    Logprobs(LogprobMap),
    TokenLogprobs(Vec<f64>),
    Fail(FailKind),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub on: Option<CallKind>,
    /// Substrings that must all occur in the transcript.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub when: Vec<String>,
    /// Exact match on the call subject.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equals: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    /// Generation seed of an image call.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// An attached image is the one an image rule replying with this text renders.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<BTreeMap<String, f64>>,
    /// Convenience form of `logprobs`, given as probabilities.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail: Option<FailKind>,
}

impl MockRule {
    fn matches(&self, call: &MockCall<'_>, image_hash: Option<&str>) -> bool {
        self.on.is_none_or(|k| k == call.kind)
            && self.model.as_deref().is_none_or(|m| m == call.model_id)
            && self.seed.is_none_or(|s| call.kind == CallKind::Image && s == call.seed)
            && image_hash.is_none_or(|h| call.image_hashes().any(|x| x == h))
            && self.equals.as_deref().is_none_or(|e| e == call.subject)
            && self.when.iter().all(|w| call.transcript.contains(w.as_str()))
    }

    fn action(&self) -> Result<MockAction, GatewayError> {
        let mut actions = Vec::new();
        if let Some(r) = &self.reply {
            actions.push(MockAction::Reply(r.clone()));
        }
        if let Some(lp) = &self.logprobs {
            actions.push(MockAction::Logprobs(lp.clone()));
        }
        if let Some(p) = &self.probs {
            let mut lp = LogprobMap::new();
            for (k, v) in p {
                if !(*v >= 0.0 && *v <= 1.0) {
                    return Err(GatewayError::InvalidEndpoint(format!("mock probability for {k:?} outside [0,1]")));
                }
                lp.insert(k.clone(), v.ln());
            }
            actions.push(MockAction::Logprobs(lp));
        }
        if let Some(t) = &self.token_logprobs {
            actions.push(MockAction::TokenLogprobs(t.clone()));
        }
        if let Some(f) = self.fail {
            actions.push(MockAction::Fail(f));
        }
        match actions.len() {
            1 => Ok(actions.pop().expect("one action")),
            n => Err(GatewayError::InvalidEndpoint(format!("mock rule must define exactly one action, found {n}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fallback {
    /// Chat echoes the last user turn; logprobs and scoring are unsupported.
    Echo,
    /// Rule-free deterministic judge and renderer, see [`synthetic`].
    #[default]
    Synthetic,
    /// Any unmatched call is an error.
    None,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockScript {
    #[serde(default)]
    pub fallback: Fallback,
    #[serde(default)]
    pub rules: Vec<MockRule>,
}

impl MockScript {
    pub fn from_toml(text: &str) -> Result<Self, GatewayError> {
        let script: MockScript = toml::from_str(text).map_err(|e| GatewayError::InvalidEndpoint(format!("mock script: {e}")))?;
        for rule in &script.rules {
            rule.action()?;
        }
        Ok(script)
    }
}

#[derive(Debug, Clone)]
struct CompiledRule {
    rule: MockRule,
    action: MockAction,
    image_hash: Option<String>,
}

pub type MockHandler = Arc<dyn Fn(&MockCall<'_>) -> Option<MockAction> + Send + Sync>;

#[derive(Clone)]
pub struct MockBackend {
    handler: Option<MockHandler>,
    rules: Vec<CompiledRule>,
    fallback: Fallback,
}

impl fmt::Debug for MockBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MockBackend").field("rules", &self.rules.len()).field("fallback", &self.fallback).field("handler", &self.handler.is_some()).finish()
    }
}

pub const BUILTIN_SCRIPTS: &[&str] = &["echo", "scripted", "scripted-fault"];

impl MockBackend {
    pub fn new(script: MockScript) -> Result<Self, GatewayError> {
        let rules = script
            .rules
            .into_iter()
            .map(|r| {
                let image_hash = r.image.as_ref().map(|m| sha256_hex(&render_procedural(m.as_bytes())));
                r.action().map(|action| CompiledRule { rule: r, action, image_hash })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(MockBackend { handler: None, rules, fallback: script.fallback })
    }

    pub fn echo() -> Self {
        MockBackend { handler: None, rules: Vec::new(), fallback: Fallback::Echo }
    }

    pub fn synthetic() -> Self {
        MockBackend { handler: None, rules: Vec::new(), fallback: Fallback::Synthetic }
    }

    /// Installs a closure consulted before the rules.
    pub fn with_handler(mut self, handler: impl Fn(&MockCall<'_>) -> Option<MockAction> + Send + Sync + 'static) -> Self {
        self.handler = Some(Arc::new(handler));
        self
    }

    /// Resolves a builtin script name or a TOML script path.
    pub fn load(name_or_path: &str) -> Result<Self, GatewayError> {
        match name_or_path {
            "echo" => Ok(Self::echo()),
            "scripted" => Ok(Self::synthetic()),
            "scripted-fault" => Self::new(synthetic::fault_script()),
            path if Path::new(path).is_file() => {
                let text = std::fs::read_to_string(path).map_err(|e| GatewayError::InvalidEndpoint(format!("cannot read mock script {path}: {e}")))?;
                Self::new(MockScript::from_toml(&text)?)
            }
            other => Err(GatewayError::InvalidEndpoint(format!(
                "unknown mock script {other:?} (builtins: {}; or a path to a TOML script)",
                BUILTIN_SCRIPTS.join(", ")
            ))),
        }
    }

    fn decide(&self, call: &MockCall<'_>) -> Option<MockAction> {
        if let Some(h) = &self.handler {
            if let Some(a) = h(call) {
                return Some(a);
            }
        }
        self.rules.iter().find(|c| c.rule.matches(call, c.image_hash.as_deref())).map(|c| c.action.clone())
    }
}

fn transcript(turns: &[ChatTurn]) -> String {
    turns.iter().map(|t| t.text.as_str()).collect::<Vec<_>>().join("\n")
}

fn last_user(turns: &[ChatTurn]) -> String {
    turns.iter().rev().find(|t| t.role == Role::User).map(|t| t.text.clone()).unwrap_or_default()
}

fn unexpected(action: &MockAction, kind: CallKind) -> GatewayError {
    GatewayError::InvalidEndpoint(format!("mock action {action:?} cannot answer a {kind:?} call"))
}

fn no_rule(kind: CallKind, subject: &str) -> GatewayError {
    GatewayError::Malformed(format!("no mock rule for {kind:?} call on {subject:?}"))
}

impl ModelBackend for MockBackend {
    fn chat(&self, endpoint: &ModelEndpoint, turns: &[ChatTurn], params: &DecodingParams) -> Result<String, GatewayError> {
        let call = MockCall {
            kind: CallKind::Chat,
            model_id: &endpoint.model_id,
            transcript: transcript(turns),
            subject: last_user(turns),
            turns,
            seed: params.seed.unwrap_or(0),
        };
        match self.decide(&call) {
            Some(MockAction::Reply(r)) => Ok(r),
            Some(MockAction::Fail(f)) => Err(f.to_error(&call.subject)),
            Some(other) => Err(unexpected(&other, call.kind)),
            None => match self.fallback {
                Fallback::Echo => Ok(call.subject),
                Fallback::Synthetic => synthetic::chat(turns),
                Fallback::None => Err(no_rule(call.kind, &call.subject)),
            },
        }
    }

    fn first_token_logprobs(&self, endpoint: &ModelEndpoint, turns: &[ChatTurn], _candidates: &[String]) -> Result<LogprobMap, GatewayError> {
        let call =
            MockCall { kind: CallKind::Logprobs, model_id: &endpoint.model_id, transcript: transcript(turns), subject: last_user(turns), turns, seed: 0 };
        match self.decide(&call) {
            Some(MockAction::Logprobs(m)) => Ok(m),
            Some(MockAction::Fail(f)) => Err(f.to_error(&call.subject)),
            Some(other) => Err(unexpected(&other, call.kind)),
            None => match self.fallback {
                Fallback::Echo => Err(GatewayError::LogprobsUnsupported),
                Fallback::Synthetic => Ok(synthetic::first_token_logprobs(turns)),
                Fallback::None => Err(no_rule(call.kind, &call.subject)),
            },
        }
    }

    fn token_logprobs_sum(&self, endpoint: &ModelEndpoint, prefix: &str, continuation: &str) -> Result<TokenScore, GatewayError> {
        let call = MockCall {
            kind: CallKind::Score,
            model_id: &endpoint.model_id,
            transcript: format!("{prefix}{continuation}"),
            subject: continuation.to_string(),
            turns: &[],
            seed: 0,
        };
        match self.decide(&call) {
            Some(MockAction::TokenLogprobs(v)) => Ok(TokenScore { logprob_sum: v.iter().sum(), token_count: v.len() }),
            Some(MockAction::Fail(f)) => Err(f.to_error(&call.subject)),
            Some(other) => Err(unexpected(&other, call.kind)),
            None => match self.fallback {
                Fallback::Echo => Err(GatewayError::ScoringUnsupported),
                Fallback::Synthetic => Ok(synthetic::token_logprobs(continuation)),
                Fallback::None => Err(no_rule(call.kind, &call.subject)),
            },
        }
    }

    fn generate_image(&self, endpoint: &ModelEndpoint, prompt: &str, seed: u64) -> Result<Vec<u8>, GatewayError> {
        let call =
            MockCall { kind: CallKind::Image, model_id: &endpoint.model_id, transcript: prompt.to_string(), subject: prompt.to_string(), turns: &[], seed };
        match self.decide(&call) {
            Some(MockAction::Reply(material)) => Ok(render_procedural(material.as_bytes())),
            Some(MockAction::Fail(f)) => Err(f.to_error(prompt)),
            Some(other) => Err(unexpected(&other, call.kind)),
            None => match self.fallback {
                Fallback::None => Err(no_rule(call.kind, prompt)),
                Fallback::Echo | Fallback::Synthetic => Ok(synthetic::image_bytes(&endpoint.model_id, prompt, seed)),
            },
        }
    }
}
