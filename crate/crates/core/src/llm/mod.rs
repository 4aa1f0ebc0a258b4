//! Completion backends, prompt rendering and response parsing.

mod client;
mod mock;
mod parse;
mod templates;

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use client::HttpBackend;
pub use mock::MockBackend;
pub use parse::{parse_explanations, parse_ranked_items, parse_weight_proposal, ParsedRanking, WeightProposal};
pub use templates::TemplateName;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub temperature: f64,
    pub max_retries: u32,
    pub request_timeout_secs: f64,
    pub max_in_flight: usize,
    /// First backoff delay; doubles on each retry.
    pub backoff_base_ms: u64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            base_url: "https://api.openai.com/v1/chat/completions".into(),
            model_name: "gpt-4.1-nano".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            temperature: 0.0,
            max_retries: 3,
            request_timeout_secs: 60.0,
            max_in_flight: 4,
            backoff_base_ms: 500,
        }
    }
}

impl LlmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(Error::Contract("temperature must be >= 0".into()));
        }
        if self.max_in_flight == 0 {
            return Err(Error::Contract("max_in_flight must be >= 1".into()));
        }
        if self.request_timeout_secs.is_nan() || self.request_timeout_secs <= 0.0 {
            return Err(Error::Contract("request timeout must be positive".into()));
        }
        Ok(())
    }

    pub fn request_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.request_timeout_secs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatExchange {
    pub prompt: String,
    pub model: String,
    pub response_text: String,
    pub latency: Duration,
    pub retries_used: u32,
}

/// A chat-completion backend. Implementations must tolerate concurrent
/// callers.
pub trait Backend: Send + Sync {
    fn complete(&self, template: TemplateName, prompt: &str) -> Result<ChatExchange>;
}

/// Substitute `{name}` placeholders. `{{` and `}}` produce literal braces;
/// any other brace is an error, as is a placeholder without a binding.
pub fn render(template: TemplateName, bindings: &[(&str, String)]) -> Result<String> {
    render_str(template.body(), bindings)
}

pub fn render_str(body: &str, bindings: &[(&str, String)]) -> Result<String> {
    let bytes = body.as_bytes();
    let mut out = String::with_capacity(body.len() + 256);
    let mut i = 0;
    let mut literal_start = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'{' if bytes.get(i + 1) == Some(&b'{') => {
                out.push_str(&body[literal_start..i]);
                out.push('{');
                i += 2;
                literal_start = i;
            }
            b'}' if bytes.get(i + 1) == Some(&b'}') => {
                out.push_str(&body[literal_start..i]);
                out.push('}');
                i += 2;
                literal_start = i;
            }
            b'{' => {
                let close = body[i + 1..].find('}').map(|p| i + 1 + p);
                let name = close.map(|c| &body[i + 1..c]);
                match name {
                    Some(n)
                        if !n.is_empty()
                            && n.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_') =>
                    {
                        let value = bindings
                            .iter()
                            .find(|(k, _)| *k == n)
                            .map(|(_, v)| v)
                            .ok_or_else(|| Error::UnboundPlaceholder(n.to_string()))?;
                        out.push_str(&body[literal_start..i]);
                        out.push_str(value);
                        i = close.expect("matched") + 1;
                        literal_start = i;
                    }
                    _ => return Err(Error::StrayBrace(i)),
                }
            }
            b'}' => return Err(Error::StrayBrace(i)),
            _ => i += 1,
        }
    }
    out.push_str(&body[literal_start..]);
    Ok(out)
}

/// Placeholder names a template expects, in first-use order.
pub fn placeholders(template: TemplateName) -> Vec<String> {
    let body = template.body();
    let mut names: Vec<String> = Vec::new();
    let mut rest = body;
    while let Some(p) = rest.find('{') {
        if rest[p + 1..].starts_with('{') {
            rest = &rest[p + 2..];
            continue;
        }
        let Some(c) = rest[p..].find('}') else { break };
        let n = &rest[p + 1..p + c];
        if !names.iter().any(|x| x == n) {
            names.push(n.to_string());
        }
        rest = &rest[p + c + 1..];
    }
    names
}

/// Format a weight for display in prompts: at most three decimals, trailing
/// zeros dropped.
pub fn fmt_weight(w: f64) -> String {
    let s = format!("{w:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-" {
        "0".into()
    } else {
        s.to_string()
    }
}
