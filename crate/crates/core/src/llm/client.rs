//! JSON-over-HTTP chat-completion client with retry and a global in-flight
//! bound.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{Backend, ChatExchange, LlmConfig, TemplateName};
use crate::error::{Error, Result};

/// Counting semaphore; ureq is blocking so a condvar is enough.
#[derive(Debug)]
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

struct SlotGuard<'a>(&'a Slots);

impl Slots {
    fn new(n: usize) -> Self {
        Slots {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        SlotGuard(self)
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        let mut free = self.0.free.lock().unwrap_or_else(|e| e.into_inner());
        *free += 1;
        self.0.cv.notify_one();
    }
}

pub struct HttpBackend {
    cfg: LlmConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
    slots: Slots,
}

enum Attempt {
    Done(String),
    Retry { note: String, wait: Option<Duration> },
    Fatal(Error),
}

fn is_retryable(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

impl HttpBackend {
    /// Reads the API key from the configured environment variable.
    pub fn from_env(cfg: LlmConfig) -> Result<Self> {
        let key = std::env::var(&cfg.api_key_env).map_err(|_| Error::MissingApiKey(cfg.api_key_env.clone()))?;
        Self::new(cfg, Some(key))
    }

    /// A client without credentials, for local endpoints that need none.
    pub fn new(cfg: LlmConfig, api_key: Option<String>) -> Result<Self> {
        cfg.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.request_timeout()))
            .http_status_as_error(false)
            .build()
            .into();
        let slots = Slots::new(cfg.max_in_flight);
        Ok(HttpBackend {
            cfg,
            api_key,
            agent,
            slots,
        })
    }

    pub fn config(&self) -> &LlmConfig {
        &self.cfg
    }

    fn attempt(&self, body: &Value) -> Attempt {
        let _slot = self.slots.acquire();
        let mut req = self
            .agent
            .post(&self.cfg.base_url)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = match req.send_json(body) {
            Ok(r) => r,
            Err(e) => {
                return Attempt::Retry {
                    note: format!("send failed: {e}"),
                    wait: None,
                }
            }
        };
        let status = resp.status().as_u16();
        let retry_after = resp
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => {
                return Attempt::Retry {
                    note: format!("status {status}, body read failed: {e}"),
                    wait: retry_after,
                }
            }
        };
        if is_retryable(status) {
            return Attempt::Retry {
                note: format!("status {status}"),
                wait: retry_after,
            };
        }
        if !(200..300).contains(&status) {
            let snippet: String = text.chars().take(200).collect();
            return Attempt::Fatal(Error::Transport {
                attempts: vec![format!("status {status}: {snippet}")],
            });
        }
        match extract_content(&text) {
            Ok(content) => Attempt::Done(content),
            Err(e) => Attempt::Fatal(e),
        }
    }
}

fn extract_content(body: &str) -> Result<String> {
    let v: Value = serde_json::from_str(body).map_err(|e| Error::Protocol(format!("reply is not JSON: {e}")))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| Error::Protocol("reply has no choices[0].message.content".into()))
}

impl Backend for HttpBackend {
    fn complete(&self, _template: TemplateName, prompt: &str) -> Result<ChatExchange> {
        let body = json!({
            "model": self.cfg.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.cfg.temperature,
        });
        let start = Instant::now();
        let mut log = Vec::new();
        for attempt in 0..=self.cfg.max_retries {
            match self.attempt(&body) {
                Attempt::Done(text) => {
                    return Ok(ChatExchange {
                        prompt: prompt.to_string(),
                        model: self.cfg.model_name.clone(),
                        response_text: text,
                        latency: start.elapsed(),
                        retries_used: attempt,
                    })
                }
                Attempt::Fatal(Error::Transport { attempts }) => {
                    log.extend(attempts);
                    return Err(Error::Transport { attempts: log });
                }
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry { note, wait } => {
                    log::debug!("LLM attempt {} failed: {note}", attempt + 1);
                    log.push(note);
                    if attempt < self.cfg.max_retries {
                        let backoff = Duration::from_millis(self.cfg.backoff_base_ms.saturating_mul(1 << attempt.min(16)));
                        thread::sleep(wait.unwrap_or(backoff).min(Duration::from_secs(60)));
                    }
                }
            }
        }
        Err(Error::Transport { attempts: log })
    }
}
