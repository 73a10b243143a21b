//! Uniform access to the external models a run talks to: a multimodal chat
//! model (prompt writer and judge), a text-to-image generator, and optionally
//! a plain language model used for perplexity.
//!
//! Every endpoint is reached through [`Gateway`], which checks the call
//! preconditions and then delegates to a [`ModelBackend`]. Two backends ship
//! with the crate: [`http::HttpBackend`] speaks the chat-completions wire shape,
//! and [`mock::MockBackend`] answers from a deterministic script.

pub mod http;
pub mod image;
pub mod mock;
pub mod synthetic;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::image::ImageArtifact;

/// Environment variable that overrides the auth token of every live endpoint.
pub const AUTH_TOKEN_ENV: &str = "T2IJUDGE_AUTH_TOKEN";

/// Log-probability reported for candidates the endpoint did not return.
pub const MISSING_LOGPROB: f64 = f64::NEG_INFINITY;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("endpoint `{model}` is a {actual} endpoint, expected {expected}")]
    WrongKind { model: String, expected: &'static str, actual: EndpointKind },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed endpoint reply: {0}")]
    Malformed(String),
    #[error("endpoint does not expose log-probabilities")]
    LogprobsUnsupported,
    #[error("endpoint does not support token scoring")]
    ScoringUnsupported,
    #[error("generation refused by safety filter: {0}")]
    SafetyRefusal(String),
    #[error("invalid endpoint definition: {0}")]
    InvalidEndpoint(String),
}

impl GatewayError {
    /// Whether a retry may succeed.
    pub fn is_transient(&self) -> bool {
        match self {
            GatewayError::Transport { .. } | GatewayError::Timeout { .. } => true,
            GatewayError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EndpointKind {
    Mllm,
    T2i,
    Lm,
}

impl fmt::Display for EndpointKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EndpointKind::Mllm => "mllm",
            EndpointKind::T2i => "t2i",
            EndpointKind::Lm => "lm",
        })
    }
}

/// Where requests for an endpoint go.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// Live HTTP endpoint, an absolute base URL such as `http://host:8000/v1`.
    Url(String),
    /// Mock endpoint, a builtin script name or a path to a script file.
    Mock(String),
}

fn default_timeout() -> f64 {
    60.0
}

fn default_retries() -> u32 {
    2
}

fn default_backoff_ms() -> u64 {
    250
}

/// Definition of one model endpoint as it appears in a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEndpoint {
    pub kind: EndpointKind,
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock: Option<String>,
    /// Never serialized so tokens do not leak into ledgers.
    #[serde(default, skip_serializing)]
    pub auth_token: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

impl ModelEndpoint {
    pub fn live(kind: EndpointKind, model_id: impl Into<String>, base_url: impl Into<String>) -> Self {
        ModelEndpoint {
            kind,
            model_id: model_id.into(),
            base_url: Some(base_url.into()),
            mock: None,
            auth_token: None,
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            backoff_ms: default_backoff_ms(),
        }
    }

    pub fn mocked(kind: EndpointKind, model_id: impl Into<String>, script: impl Into<String>) -> Self {
        ModelEndpoint {
            kind,
            model_id: model_id.into(),
            base_url: None,
            mock: Some(script.into()),
            auth_token: None,
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            backoff_ms: default_backoff_ms(),
        }
    }

    /// Resolves the endpoint target, enforcing that exactly one of
    /// `base_url` / `mock` is set and that URLs are absolute http(s).
    pub fn target(&self) -> Result<Target, GatewayError> {
        match (&self.base_url, &self.mock) {
            (Some(_), Some(_)) => Err(GatewayError::InvalidEndpoint(format!("`{}` sets both base_url and mock", self.model_id))),
            (None, None) => Err(GatewayError::InvalidEndpoint(format!("`{}` needs either base_url or mock", self.model_id))),
            (None, Some(script)) => {
                if script.trim().is_empty() {
                    return Err(GatewayError::InvalidEndpoint(format!("`{}` has an empty mock script identifier", self.model_id)));
                }
                Ok(Target::Mock(script.clone()))
            }
            (Some(raw), None) => {
                let parsed = url::Url::parse(raw).map_err(|e| GatewayError::InvalidEndpoint(format!("`{}`: bad base_url {raw:?}: {e}", self.model_id)))?;
                if !matches!(parsed.scheme(), "http" | "https") || parsed.host().is_none() {
                    return Err(GatewayError::InvalidEndpoint(format!("`{}`: base_url must be an absolute http(s) URL, got {raw:?}", self.model_id)));
                }
                Ok(Target::Url(raw.trim_end_matches('/').to_string()))
            }
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.model_id.trim().is_empty() {
            return Err(GatewayError::InvalidEndpoint("model_id is empty".into()));
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(GatewayError::InvalidEndpoint(format!("`{}`: timeout_secs must be positive", self.model_id)));
        }
        self.target().map(|_| ())
    }

    /// Token to send, honouring the environment override.
    pub fn effective_token(&self) -> Option<String> {
        std::env::var(AUTH_TOKEN_ENV).ok().filter(|t| !t.is_empty()).or_else(|| self.auth_token.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

/// One message of a chat request. At most one image per turn, never on system turns.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatTurn {
    pub role: Role,
    pub text: String,
    pub image: Option<ImageArtifact>,
}

impl ChatTurn {
    pub fn system(text: impl Into<String>) -> Self {
        ChatTurn { role: Role::System, text: text.into(), image: None }
    }

    pub fn user(text: impl Into<String>) -> Self {
        ChatTurn { role: Role::User, text: text.into(), image: None }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        ChatTurn { role: Role::Assistant, text: text.into(), image: None }
    }

    pub fn user_with_image(text: impl Into<String>, image: ImageArtifact) -> Self {
        ChatTurn { role: Role::User, text: text.into(), image: Some(image) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<u32>,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for DecodingParams {
    /// Prompt-writing settings: temperature 0.3, top-k disabled.
    fn default() -> Self {
        DecodingParams { temperature: 0.3, top_k: None, max_tokens: 256, seed: None }
    }
}

impl DecodingParams {
    /// Greedy settings used when the model acts as a judge.
    pub fn judge(max_tokens: u32) -> Self {
        DecodingParams { temperature: 0.0, top_k: None, max_tokens, seed: None }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    fn validate(&self) -> Result<(), GatewayError> {
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(GatewayError::InvalidRequest("temperature must be >= 0".into()));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be >= 1".into()));
        }
        Ok(())
    }
}

/// Candidate token → log-probability at the first generated position.
pub type LogprobMap = BTreeMap<String, f64>;

/// Summed log-likelihood of a continuation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenScore {
    pub logprob_sum: f64,
    pub token_count: usize,
}

impl TokenScore {
    pub fn perplexity(&self) -> f64 {
        (-self.logprob_sum / self.token_count as f64).exp()
    }
}

/// What actually serves requests. Implementations must be stateless with
/// respect to call order so that scripted runs replay byte-for-byte.
pub trait ModelBackend: Send + Sync {
    fn chat(&self, endpoint: &ModelEndpoint, turns: &[ChatTurn], params: &DecodingParams) -> Result<String, GatewayError>;

    fn first_token_logprobs(&self, endpoint: &ModelEndpoint, turns: &[ChatTurn], candidates: &[String]) -> Result<LogprobMap, GatewayError>;

    fn token_logprobs_sum(&self, endpoint: &ModelEndpoint, prefix: &str, continuation: &str) -> Result<TokenScore, GatewayError>;

    fn generate_image(&self, endpoint: &ModelEndpoint, prompt: &str, seed: u64) -> Result<Vec<u8>, GatewayError>;
}

/// A validated endpoint bound to its backend. Cheap to clone and safe to
/// share across threads.
#[derive(Clone)]
pub struct Gateway {
    endpoint: ModelEndpoint,
    backend: Arc<dyn ModelBackend>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway").field("endpoint", &self.endpoint).finish_non_exhaustive()
    }
}

impl Gateway {
    /// Builds the backend the endpoint definition asks for.
    pub fn connect(endpoint: ModelEndpoint) -> Result<Self, GatewayError> {
        endpoint.validate()?;
        let backend: Arc<dyn ModelBackend> = match endpoint.target()? {
            Target::Url(base) => Arc::new(http::HttpBackend::new(base)),
            Target::Mock(script) => Arc::new(mock::MockBackend::load(&script)?),
        };
        Ok(Gateway { endpoint, backend })
    }

    pub fn with_backend(endpoint: ModelEndpoint, backend: Arc<dyn ModelBackend>) -> Self {
        Gateway { endpoint, backend }
    }

    pub fn endpoint(&self) -> &ModelEndpoint {
        &self.endpoint
    }

    pub fn model_id(&self) -> &str {
        &self.endpoint.model_id
    }

    fn require(&self, allowed: &[EndpointKind], expected: &'static str) -> Result<(), GatewayError> {
        if allowed.contains(&self.endpoint.kind) {
            Ok(())
        } else {
            Err(GatewayError::WrongKind { model: self.endpoint.model_id.clone(), expected, actual: self.endpoint.kind })
        }
    }

    /// Sends a chat request and returns the assistant reply text.
    pub fn chat(&self, turns: &[ChatTurn], params: &DecodingParams) -> Result<String, GatewayError> {
        self.require(&[EndpointKind::Mllm], "mllm")?;
        check_turns(turns)?;
        params.validate()?;
        self.backend.chat(&self.endpoint, turns, params)
    }

    /// Log-probabilities of each candidate at the first generated position.
    /// Candidates the endpoint does not report map to [`MISSING_LOGPROB`].
    pub fn first_token_logprobs(&self, turns: &[ChatTurn], candidates: &[String]) -> Result<LogprobMap, GatewayError> {
        self.require(&[EndpointKind::Mllm], "mllm")?;
        check_turns(turns)?;
        if candidates.is_empty() || candidates.iter().any(|c| c.is_empty()) {
            return Err(GatewayError::InvalidRequest("candidates must be nonempty strings".into()));
        }
        let raw = self.backend.first_token_logprobs(&self.endpoint, turns, candidates)?;
        let mut out = LogprobMap::new();
        for cand in candidates {
            let lp = raw.get(cand).copied().unwrap_or(MISSING_LOGPROB);
            out.insert(cand.clone(), sanitize_logprob(lp)?);
        }
        Ok(out)
    }

    /// Sum of per-token log-probabilities of `continuation` given `prefix`.
    pub fn token_logprobs_sum(&self, prefix: &str, continuation: &str) -> Result<TokenScore, GatewayError> {
        self.require(&[EndpointKind::Mllm, EndpointKind::Lm], "mllm or lm")?;
        if continuation.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("continuation is empty".into()));
        }
        let score = self.backend.token_logprobs_sum(&self.endpoint, prefix, continuation)?;
        if score.token_count == 0 {
            return Err(GatewayError::Malformed("scored continuation has zero tokens".into()));
        }
        if score.logprob_sum.is_nan() || score.logprob_sum > 0.0 {
            return Err(GatewayError::Malformed(format!("log-probability sum {} is not <= 0", score.logprob_sum)));
        }
        Ok(score)
    }

    /// Renders `prompt` and wraps the PNG bytes in an [`ImageArtifact`].
    pub fn generate_image(&self, prompt: &str, seed: u64) -> Result<ImageArtifact, GatewayError> {
        self.require(&[EndpointKind::T2i], "t2i")?;
        if prompt.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("prompt is empty".into()));
        }
        let bytes = self.backend.generate_image(&self.endpoint, prompt, seed)?;
        ImageArtifact::from_png(bytes, prompt).map_err(|e| GatewayError::Malformed(e.to_string()))
    }
}

fn check_turns(turns: &[ChatTurn]) -> Result<(), GatewayError> {
    if turns.is_empty() {
        return Err(GatewayError::InvalidRequest("no chat turns".into()));
    }
    if turns.iter().any(|t| t.role == Role::System && t.image.is_some()) {
        return Err(GatewayError::InvalidRequest("system turns cannot carry images".into()));
    }
    Ok(())
}

// Endpoints occasionally report tiny positive values from rounding.
fn sanitize_logprob(lp: f64) -> Result<f64, GatewayError> {
    if lp.is_nan() {
        Err(GatewayError::Malformed("NaN log-probability".into()))
    } else if lp > 1e-9 {
        Err(GatewayError::Malformed(format!("positive log-probability {lp}")))
    } else {
        Ok(lp.min(0.0))
    }
}
