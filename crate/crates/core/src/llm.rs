//! Chat-completions client with retries, plus an offline stub that answers
//! from the deterministic explainer.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, OnceLock};
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::explain::{
    classify_values, narrate_attribution, parse_scenario_prompt, parse_shap_prompt, Scenario,
    QUESTION_LEAD, SCENARIO_PROMPT_LEAD, SHAP_PROMPT_LEAD,
};

pub const DEFAULT_MODEL: &str = "gpt-3.5-turbo-0301";
pub const DEFAULT_API_KEY_ENV: &str = "LLM_API_KEY";

static NETWORK_CALLS: AtomicUsize = AtomicUsize::new(0);

/// Number of HTTP requests attempted by [`HttpTransport`] in this process.
pub fn network_calls() -> usize {
    NETWORK_CALLS.load(Ordering::SeqCst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LlmMode {
    Online,
    Stub,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_seconds: f64,
    pub api_key_env: String,
    pub mode: LlmMode,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub exchange_log: Option<PathBuf>,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1".into(),
            model: DEFAULT_MODEL.into(),
            temperature: 0.5,
            max_tokens: 1024,
            timeout_seconds: 60.0,
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            mode: LlmMode::Stub,
            max_retries: 3,
            backoff_ms: 500,
            exchange_log: None,
        }
    }
}

impl LlmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(Error::Config(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        if !(self.timeout_seconds > 0.0) {
            return Err(Error::Config("timeout must be > 0 seconds".into()));
        }
        if self.mode == LlmMode::Online && self.endpoint.trim().is_empty() {
            return Err(Error::Config("online mode needs an endpoint URL".into()));
        }
        Ok(())
    }

    pub fn url(&self) -> String {
        format!("{}/chat/completions", self.endpoint.trim_end_matches('/'))
    }

    /// Chat-completions request body.
    pub fn request_body(&self, system_prompt: &str, user_prompt: &str) -> Value {
        json!({
            "model": self.model,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "messages": [
                {"role": "system", "content": system_prompt},
                {"role": "user", "content": user_prompt},
            ],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub model: String,
    pub temperature: f64,
    pub system_prompt: String,
    pub user_messages: Vec<String>,
    pub response: String,
    pub usage: Option<Usage>,
    pub latency_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TransportFailure {
    Timeout,
    Other(String),
}

/// Sends one JSON POST and returns the status and body text.
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        bearer: &str,
        body: &Value,
        timeout: Duration,
    ) -> std::result::Result<(u16, String), TransportFailure>;
}

pub struct HttpTransport;

impl Transport for HttpTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: &str,
        body: &Value,
        timeout: Duration,
    ) -> std::result::Result<(u16, String), TransportFailure> {
        NETWORK_CALLS.fetch_add(1, Ordering::SeqCst);
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let response = agent
            .post(url)
            .header("Authorization", &format!("Bearer {bearer}"))
            .send_json(body)
            .map_err(|e| match e {
                ureq::Error::Timeout(_) => TransportFailure::Timeout,
                other => TransportFailure::Other(other.to_string()),
            })?;
        let status = response.status().as_u16();
        let text = response
            .into_body()
            .read_to_string()
            .map_err(|e| TransportFailure::Other(e.to_string()))?;
        Ok((status, text))
    }
}

pub struct LlmClient {
    cfg: LlmConfig,
    transport: Box<dyn Transport>,
    api_key: Option<String>,
    log: Option<Mutex<File>>,
}

impl std::fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmClient")
            .field("cfg", &self.cfg)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn transient(status: u16) -> bool {
    status == 408 || status == 429 || (500..600).contains(&status)
}

impl LlmClient {
    /// Online mode reads the key from `cfg.api_key_env` now.
    pub fn new(cfg: LlmConfig) -> Result<Self> {
        let api_key = match cfg.mode {
            LlmMode::Stub => None,
            LlmMode::Online => Some(
                std::env::var(&cfg.api_key_env)
                    .ok()
                    .filter(|k| !k.is_empty())
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "online mode needs an API key in environment variable {}",
                            cfg.api_key_env
                        ))
                    })?,
            ),
        };
        Self::with_transport(cfg, Box::new(HttpTransport), api_key)
    }

    pub fn stub() -> Self {
        Self::new(LlmConfig::default()).expect("stub config is valid")
    }

    pub fn with_transport(cfg: LlmConfig, transport: Box<dyn Transport>, api_key: Option<String>) -> Result<Self> {
        cfg.validate()?;
        if cfg.mode == LlmMode::Online && api_key.is_none() {
            return Err(Error::Config(format!(
                "online mode needs an API key in environment variable {}",
                cfg.api_key_env
            )));
        }
        let log = match &cfg.exchange_log {
            Some(path) => Some(Mutex::new(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| Error::io(path, e))?,
            )),
            None => None,
        };
        Ok(Self {
            cfg,
            transport,
            api_key,
            log,
        })
    }

    pub fn config(&self) -> &LlmConfig {
        &self.cfg
    }

    fn log_exchange(&self, request: &Value, response: &str, latency: f64, attempts: u32, status: Option<u16>) {
        let Some(log) = &self.log else { return };
        let entry = json!({
            "mode": self.cfg.mode,
            "model": self.cfg.model,
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_tokens,
            "endpoint": self.cfg.url(),
            "request_sha256": sha256_hex(&request.to_string()),
            "response_sha256": sha256_hex(response),
            "latency_seconds": latency,
            "attempts": attempts,
            "status": status,
        });
        if let Ok(mut file) = log.lock() {
            if writeln!(file, "{entry}").is_err() {
                log::warn!("could not append to the exchange log");
            }
        }
    }

    pub fn complete(&self, system_prompt: &str, user_prompt: &str) -> Result<ChatExchange> {
        let started = Instant::now();
        let body = self.cfg.request_body(system_prompt, user_prompt);
        let (response, usage, attempts, status) = match self.cfg.mode {
            LlmMode::Stub => (stub_reply(user_prompt)?, None, 1, None),
            LlmMode::Online => {
                let (text, usage, attempts, status) = self.post_with_retries(&body)?;
                (text, usage, attempts, Some(status))
            }
        };
        let latency = started.elapsed().as_secs_f64();
        self.log_exchange(&body, &response, latency, attempts, status);
        Ok(ChatExchange {
            model: self.cfg.model.clone(),
            temperature: self.cfg.temperature,
            system_prompt: system_prompt.to_owned(),
            user_messages: vec![user_prompt.to_owned()],
            response,
            usage,
            latency_seconds: latency,
        })
    }

    fn post_with_retries(&self, body: &Value) -> Result<(String, Option<Usage>, u32, u16)> {
        let key = self.api_key.as_deref().unwrap_or_default();
        let timeout = Duration::from_secs_f64(self.cfg.timeout_seconds);
        let url = self.cfg.url();
        let mut last = Error::Transport("no attempt made".into());
        for attempt in 0..=self.cfg.max_retries {
            if attempt > 0 {
                let wait = self.cfg.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(wait));
            }
            match self.transport.post_json(&url, key, body, timeout) {
                Ok((status, text)) if (200..300).contains(&status) => {
                    let (reply, usage) = parse_completion(&text)?;
                    return Ok((reply, usage, attempt + 1, status));
                }
                Ok((status, _)) if transient(status) => last = Error::Gateway { status },
                Ok((status, _)) => return Err(Error::Gateway { status }),
                Err(TransportFailure::Timeout) => last = Error::Timeout(self.cfg.timeout_seconds),
                Err(TransportFailure::Other(msg)) => last = Error::Transport(msg.replace(key, "<redacted>")),
            }
            log::debug!("chat request attempt {} failed: {last}", attempt + 1);
        }
        Err(last)
    }

    /// One completion over a Q&A context.
    pub fn answer_question(&self, qa_context: &str) -> Result<String> {
        if qa_context.trim().is_empty() {
            return Err(Error::InvalidInput("question context is empty".into()));
        }
        Ok(self.complete(crate::explain::SYSTEM_FORMULATION, qa_context)?.response)
    }
}

fn parse_completion(text: &str) -> Result<(String, Option<Usage>)> {
    let bad = |field: &str, reason: &str| Error::Deserialize {
        what: "chat completion",
        field: field.to_owned(),
        reason: reason.to_owned(),
    };
    let v: Value = serde_json::from_str(text).map_err(|e| bad("<document>", &e.to_string()))?;
    let content = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| bad("choices[0].message.content", "missing"))?;
    if content.trim().is_empty() {
        return Err(bad("choices[0].message.content", "empty"));
    }
    let usage = v.get("usage").and_then(|u| Usage::deserialize(u).ok());
    Ok((content.to_owned(), usage))
}

fn stub_reply(prompt: &str) -> Result<String> {
    if prompt.starts_with(SHAP_PROMPT_LEAD) {
        let parsed = parse_shap_prompt(prompt)?;
        return Ok(narrate_attribution(&parsed.attribution, &parsed.dictionary, &parsed.subject).text);
    }
    if prompt.starts_with(SCENARIO_PROMPT_LEAD) {
        let (p_limit_t2, threshold, u1) = parse_scenario_prompt(prompt)?;
        let label = classify_values(p_limit_t2, u1, threshold);
        return Ok(format!("Scenario {}\n{}.", label.code, label.scenario.description()));
    }
    if prompt.contains(QUESTION_LEAD) {
        return Ok(stub_answer(prompt));
    }
    Ok("The offline stub only answers attribution, scenario and question prompts.".into())
}

fn first_capture(text: &str, pattern: &str) -> Option<String> {
    Regex::new(pattern)
        .ok()?
        .captures(text)
        .map(|c| c[1].to_owned())
}

/// Restates scenario, limits and setpoints found in the context and adds a
/// what-if remark keyed on the question.
fn stub_answer(context: &str) -> String {
    static NUM: OnceLock<&str> = OnceLock::new();
    let num = NUM.get_or_init(|| r"(-?[0-9]+(?:\.[0-9]+)?)");
    let grab = |label: &str, unit: &str| {
        first_capture(context, &format!(r"{} = {num}{unit}", regex::escape(label)))
            .unwrap_or_else(|| "unknown".into())
    };
    let l1 = grab("P_limit(t+1)", "W");
    let l2 = grab("P_limit(t+2)", "W");
    let u1 = grab("T_spt(t+1)", "°C");
    let u2 = grab("T_spt(t+2)", "°C");
    let scenario = first_capture(context, r"Scenario ([123]): [^\n]*\(rubric label\)")
        .and_then(|c| c.parse::<u8>().ok())
        .and_then(Scenario::from_code);
    let question = context
        .rsplit_once(QUESTION_LEAD)
        .map(|(_, q)| q.trim().to_lowercase())
        .unwrap_or_default();

    let mut answer = match scenario {
        Some(s) => format!("This timestep is Scenario {}: {}. ", s.code(), s.description()),
        None => String::from("The scenario of this timestep is not stated in the document. "),
    };
    answer.push_str(&format!(
        "The power limits are P_limit(t+1) = {l1}W and P_limit(t+2) = {l2}W, and the controller chose \
         T_spt(t+1) = {u1}°C and T_spt(t+2) = {u2}°C."
    ));
    let what_if = ["what if", "what will happen", "ignore", "keep", "instead", "26"]
        .iter()
        .any(|k| question.contains(k));
    if what_if {
        let remark = match scenario {
            Some(Scenario::Precool) => format!(
                " Keeping the setpoint at 26°C skips pre-cooling, so the cooling power in the hour after \
                 the next is likely to exceed the power limit of {l2}W and incur the demand response \
                 penalty, on top of a higher cooling demand during the event."
            ),
            Some(Scenario::EventNoPrecool) => format!(
                " The controller already does not pre-cool; its choice weighs the penalty risk against \
                 the power limit of {l2}W and found no pre-cooling setpoint with a lower total cost."
            ),
            _ => format!(
                " No demand response event is expected in the hour after the next (limit {l2}W), so \
                 changing the setpoint mainly changes cooling energy, with no penalty risk."
            ),
        };
        answer.push_str(&remark);
    }
    answer
}
