//! Chat-completions style HTTP backend.
//!
//! Routes (relative to the endpoint base URL):
//! - `POST /chat/completions` for chat and first-token log-probabilities
//! - `POST /completions` with `echo` for continuation scoring
//! - `POST /images/generations` with `response_format = b64_json`

use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde_json::{json, Value};

use super::{ChatTurn, DecodingParams, GatewayError, LogprobMap, ModelBackend, ModelEndpoint, Role, TokenScore};

const BODY_LIMIT: u64 = 64 * 1024 * 1024;
const TOP_LOGPROBS: u32 = 20;

#[derive(Debug, Clone)]
pub struct HttpBackend {
    base_url: String,
}

enum Reply {
    Ok(Value),
    Status(u16, String),
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>) -> Self {
        HttpBackend { base_url: base_url.into().trim_end_matches('/').to_string() }
    }

    /// POSTs `body` with retries and exponential backoff. Performs at most
    /// `max_retries + 1` attempts; non-transient statuses are returned to the
    /// caller without retrying.
    fn post(&self, endpoint: &ModelEndpoint, route: &str, body: &Value) -> Result<Reply, GatewayError> {
        let url = format!("{}/{}", self.base_url, route);
        let config = ureq::Agent::config_builder().http_status_as_error(false).timeout_global(Some(Duration::from_secs_f64(endpoint.timeout_secs))).build();
        let agent = ureq::Agent::new_with_config(config);
        let token = endpoint.effective_token();
        let attempts = endpoint.max_retries + 1;

        let mut last_err = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                let wait = endpoint.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(wait));
            }
            let mut req = agent.post(&url).header("Content-Type", "application/json");
            if let Some(t) = &token {
                req = req.header("Authorization", format!("Bearer {t}"));
            }
            let err = match req.send_json(body) {
                Ok(resp) => {
                    let status = resp.status().as_u16();
                    match resp.into_body().with_config().limit(BODY_LIMIT).read_to_string() {
                        Ok(text) if (200..300).contains(&status) => {
                            return serde_json::from_str(&text).map(Reply::Ok).map_err(|e| GatewayError::Malformed(format!("invalid JSON body: {e}")));
                        }
                        Ok(text) => GatewayError::Status { status, body: text },
                        Err(e) => map_transport(e, attempt + 1),
                    }
                }
                Err(e) => map_transport(e, attempt + 1),
            };
            match err {
                e if e.is_transient() => last_err = Some(e),
                GatewayError::Status { status, body } => return Ok(Reply::Status(status, body)),
                e => return Err(e),
            }
        }
        Err(match last_err {
            Some(GatewayError::Timeout { .. }) => GatewayError::Timeout { attempts },
            Some(GatewayError::Status { status, body }) => GatewayError::Transport { attempts, message: format!("HTTP {status}: {}", truncate(&body, 200)) },
            Some(GatewayError::Transport { message, .. }) => GatewayError::Transport { attempts, message },
            Some(other) => other,
            None => GatewayError::Transport { attempts, message: "no attempt made".into() },
        })
    }
}

fn map_transport(e: ureq::Error, attempt: u32) -> GatewayError {
    match e {
        ureq::Error::Timeout(_) => GatewayError::Timeout { attempts: attempt },
        other => GatewayError::Transport { attempts: attempt, message: other.to_string() },
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// Message array in the chat-completions shape; images become base64 data URLs.
pub fn messages_json(turns: &[ChatTurn]) -> Value {
    let msgs: Vec<Value> = turns
        .iter()
        .map(|t| {
            let role = match t.role {
                Role::System => "system",
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            match &t.image {
                None => json!({ "role": role, "content": t.text }),
                Some(img) => json!({
                    "role": role,
                    "content": [
                        { "type": "text", "text": t.text },
                        { "type": "image_url", "image_url": { "url": img.to_data_url() } }
                    ]
                }),
            }
        })
        .collect();
    Value::Array(msgs)
}

pub fn chat_request_json(model: &str, turns: &[ChatTurn], params: &DecodingParams) -> Value {
    let mut body = json!({
        "model": model,
        "messages": messages_json(turns),
        "temperature": params.temperature,
        "max_tokens": params.max_tokens,
    });
    if let Some(k) = params.top_k {
        body["top_k"] = json!(k);
    }
    if let Some(seed) = params.seed {
        body["seed"] = json!(seed);
    }
    body
}

/// Extracts `choices[0].message.content`.
pub fn parse_chat_reply(v: &Value) -> Result<String, GatewayError> {
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| GatewayError::Malformed("missing choices[0].message.content".into()))
}

/// Extracts the first-position `top_logprobs`. Tokens differing only in
/// surrounding whitespace are merged with log-sum-exp.
pub fn parse_first_token_logprobs(v: &Value) -> Result<LogprobMap, GatewayError> {
    let logprobs = v.pointer("/choices/0/logprobs");
    let content = match logprobs {
        None | Some(Value::Null) => return Err(GatewayError::LogprobsUnsupported),
        Some(lp) => lp.get("content").and_then(Value::as_array),
    };
    let first = content.and_then(|c| c.first()).ok_or_else(|| GatewayError::Malformed("logprobs.content is empty".into()))?;
    let mut entries: Vec<(String, f64)> = Vec::new();
    if let (Some(tok), Some(lp)) = (first.get("token").and_then(Value::as_str), first.get("logprob").and_then(Value::as_f64)) {
        entries.push((tok.to_string(), lp));
    }
    if let Some(top) = first.get("top_logprobs").and_then(Value::as_array) {
        for item in top {
            let tok = item.get("token").and_then(Value::as_str);
            let lp = item.get("logprob").and_then(Value::as_f64);
            match (tok, lp) {
                (Some(t), Some(l)) => entries.push((t.to_string(), l)),
                _ => return Err(GatewayError::Malformed("top_logprobs entry lacks token/logprob".into())),
            }
        }
    }
    // The sampled token is usually repeated inside top_logprobs.
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    entries.dedup_by(|a, b| a.0 == b.0);

    let mut merged = LogprobMap::new();
    for (tok, lp) in entries {
        let key = tok.trim().to_string();
        merged.entry(key).and_modify(|acc: &mut f64| *acc = log_add_exp(*acc, lp)).or_insert(lp);
    }
    Ok(merged)
}

pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Sums echoed prompt-token log-probabilities whose text offset falls in the
/// continuation, i.e. in `[prefix_len, full_len)`.
pub fn parse_echo_logprobs(v: &Value, prefix_len: usize, full_len: usize) -> Result<TokenScore, GatewayError> {
    let lp = v.pointer("/choices/0/logprobs").filter(|x| !x.is_null()).ok_or(GatewayError::ScoringUnsupported)?;
    let values = lp.get("token_logprobs").and_then(Value::as_array).ok_or_else(|| GatewayError::Malformed("missing token_logprobs".into()))?;
    let offsets = lp.get("text_offset").and_then(Value::as_array).ok_or_else(|| GatewayError::Malformed("missing text_offset".into()))?;
    if values.len() != offsets.len() {
        return Err(GatewayError::Malformed("token_logprobs and text_offset differ in length".into()));
    }
    let mut sum = 0.0;
    let mut count = 0;
    for (val, off) in values.iter().zip(offsets) {
        let off = off.as_u64().ok_or_else(|| GatewayError::Malformed("non-integer text_offset".into()))? as usize;
        if off < prefix_len || off >= full_len {
            continue;
        }
        match val {
            Value::Null => continue,
            other => {
                sum += other.as_f64().ok_or_else(|| GatewayError::Malformed("non-numeric token logprob".into()))?;
                count += 1;
            }
        }
    }
    Ok(TokenScore { logprob_sum: sum, token_count: count })
}

fn is_refusal(status: u16, body: &str) -> bool {
    let lower = body.to_ascii_lowercase();
    (status == 400 || status == 403 || status == 451) && (lower.contains("content_policy") || lower.contains("safety") || lower.contains("nsfw"))
}

impl ModelBackend for HttpBackend {
    fn chat(&self, endpoint: &ModelEndpoint, turns: &[ChatTurn], params: &DecodingParams) -> Result<String, GatewayError> {
        match self.post(endpoint, "chat/completions", &chat_request_json(&endpoint.model_id, turns, params))? {
            Reply::Ok(v) => parse_chat_reply(&v),
            Reply::Status(status, body) => Err(GatewayError::Status { status, body }),
        }
    }

    fn first_token_logprobs(&self, endpoint: &ModelEndpoint, turns: &[ChatTurn], _candidates: &[String]) -> Result<LogprobMap, GatewayError> {
        let mut body = chat_request_json(&endpoint.model_id, turns, &DecodingParams::judge(1));
        body["logprobs"] = json!(true);
        body["top_logprobs"] = json!(TOP_LOGPROBS);
        match self.post(endpoint, "chat/completions", &body)? {
            Reply::Ok(v) => parse_first_token_logprobs(&v),
            Reply::Status(400 | 404 | 422 | 501, _) => Err(GatewayError::LogprobsUnsupported),
            Reply::Status(status, body) => Err(GatewayError::Status { status, body }),
        }
    }

    fn token_logprobs_sum(&self, endpoint: &ModelEndpoint, prefix: &str, continuation: &str) -> Result<TokenScore, GatewayError> {
        let full = format!("{prefix}{continuation}");
        let body = json!({
            "model": endpoint.model_id,
            "prompt": full,
            "max_tokens": 1,
            "echo": true,
            "logprobs": 0,
            "temperature": 0.0,
        });
        match self.post(endpoint, "completions", &body)? {
            Reply::Ok(v) => parse_echo_logprobs(&v, prefix.len(), full.len()),
            Reply::Status(400 | 404 | 422 | 501, _) => Err(GatewayError::ScoringUnsupported),
            Reply::Status(status, body) => Err(GatewayError::Status { status, body }),
        }
    }

    fn generate_image(&self, endpoint: &ModelEndpoint, prompt: &str, seed: u64) -> Result<Vec<u8>, GatewayError> {
        let body = json!({
            "model": endpoint.model_id,
            "prompt": prompt,
            "n": 1,
            "seed": seed,
            "response_format": "b64_json",
        });
        match self.post(endpoint, "images/generations", &body)? {
            Reply::Ok(v) => {
                let b64 = v.pointer("/data/0/b64_json").and_then(Value::as_str).ok_or_else(|| GatewayError::Malformed("missing data[0].b64_json".into()))?;
                BASE64.decode(b64).map_err(|e| GatewayError::Malformed(format!("bad base64 image: {e}")))
            }
            Reply::Status(status, body) if is_refusal(status, &body) => Err(GatewayError::SafetyRefusal(truncate(&body, 200).to_string())),
            Reply::Status(status, body) => Err(GatewayError::Status { status, body }),
        }
    }
}
