//! HTTP teacher for an OpenAI-compatible chat completion endpoint.
//!
//! The prompt labels candidates `A`, `B`, `C`, … in request order and passes
//! each image by reference. The reply must be a strict order over the
//! labels, either `C > A > B` or a JSON array such as `["C", "A", "B"]`.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Teacher, TeacherError, TeacherRanking, TeacherRequest};

pub const DEFAULT_PROMPT_TEMPLATE: &str = "You are helping choose product images for a person.\n\
Person: {persona}\n\
Candidate images:\n{candidates}\n\
Rank every candidate from most to least suitable for this person. \
Answer with the labels only, best first, in the form A > B > C.";

const MAX_LABELS: usize = 26;

fn default_max_parallel() -> usize {
    8
}
fn default_max_retries() -> u32 {
    3
}
fn default_timeout_ms() -> u64 {
    30_000
}
fn default_backoff_ms() -> u64 {
    250
}
fn default_template() -> String {
    DEFAULT_PROMPT_TEMPLATE.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpTeacherConfig {
    pub url: String,
    #[serde(default)]
    pub model: String,
    /// Environment variable holding a bearer token, if the endpoint needs one.
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_max_parallel")]
    pub max_parallel: usize,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_template")]
    pub prompt_template: String,
    /// Base delay of the exponential retry backoff.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

impl HttpTeacherConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            model: String::new(),
            auth_env: None,
            max_parallel: default_max_parallel(),
            max_retries: default_max_retries(),
            timeout_ms: default_timeout_ms(),
            prompt_template: default_template(),
            backoff_ms: default_backoff_ms(),
        }
    }
}

fn label(i: usize) -> String {
    ((b'A' + i as u8) as char).to_string()
}

/// Fills `{persona}` and `{candidates}` in the template.
pub fn render_prompt(template: &str, request: &TeacherRequest) -> String {
    let candidates: Vec<String> = (0..request.candidates.len())
        .map(|i| format!("{}: {}", label(i), request.image_ref(i)))
        .collect();
    template
        .replace("{persona}", &request.persona_text)
        .replace("{candidates}", &candidates.join("\n"))
}

fn label_index(token: &str, n: usize) -> Option<usize> {
    let t = token
        .trim()
        .trim_matches(|c: char| c == '"' || c == '\'' || c == '*' || c == '`' || c == '.');
    let mut chars = t.chars();
    let c = chars.next()?;
    if chars.next().is_some() || !c.is_ascii_alphabetic() {
        return None;
    }
    let i = (c.to_ascii_uppercase() as u8 - b'A') as usize;
    (i < n).then_some(i)
}

/// Parses a best-first label order into per-candidate ranks.
pub fn parse_ranking(text: &str, n: usize) -> Result<Vec<u32>, String> {
    let tokens: Vec<String> = if let Some(labels) = json_labels(text) {
        labels
    } else if let Some(line) = text.lines().find(|l| l.contains('>')) {
        // drop a lead-in such as `Ranking:` before the chain
        let first = line.find('>').unwrap_or(0);
        let line = line[..first].rfind(':').map_or(line, |c| &line[c + 1..]);
        line.split('>').map(|s| s.to_string()).collect()
    } else {
        return Err("no ranking found in response".into());
    };
    if tokens.len() != n {
        return Err(format!("expected {n} labels, found {}", tokens.len()));
    }
    let mut ranking = vec![0u32; n];
    for (pos, tok) in tokens.iter().enumerate() {
        let i = label_index(tok, n).ok_or_else(|| format!("unrecognized label `{}`", tok.trim()))?;
        if ranking[i] != 0 {
            return Err(format!("label `{}` appears twice", label(i)));
        }
        ranking[i] = pos as u32 + 1;
    }
    Ok(ranking)
}

fn json_labels(text: &str) -> Option<Vec<String>> {
    let start = text.find('[')?;
    let end = text.rfind(']')?;
    if end <= start {
        return None;
    }
    serde_json::from_str::<Vec<String>>(&text[start..=end]).ok()
}

/// Pulls the assistant text out of a chat-completion body; any other body is
/// taken verbatim.
fn response_text(body: &str) -> String {
    if let Ok(v) = serde_json::from_str::<Value>(body) {
        if let Some(s) = v.pointer("/choices/0/message/content").and_then(Value::as_str) {
            return s.to_string();
        }
    }
    body.to_string()
}

/// Counting admission limit.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

enum Attempt {
    Transport(String),
    Parse(String, String),
}

pub struct HttpTeacher {
    id: String,
    config: HttpTeacherConfig,
    client: reqwest::blocking::Client,
    gate: Gate,
}

impl HttpTeacher {
    pub fn new(config: HttpTeacherConfig) -> Result<Self, TeacherError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| TeacherError::TeacherUnavailable {
                attempts: 0,
                message: e.to_string(),
            })?;
        let id = if config.model.is_empty() {
            format!("http:{}", config.url)
        } else {
            format!("http:{}", config.model)
        };
        Ok(Self {
            id,
            gate: Gate::new(config.max_parallel),
            config,
            client,
        })
    }

    fn body(&self, request: &TeacherRequest) -> Value {
        let mut content = vec![json!({"type": "text", "text": render_prompt(&self.config.prompt_template, request)})];
        for i in 0..request.candidates.len() {
            content.push(json!({"type": "image_url", "image_url": {"url": request.image_ref(i)}}));
        }
        json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": content}],
            "temperature": 0,
        })
    }

    fn attempt(&self, body: &Value, n: usize) -> Result<(Vec<u32>, String), Attempt> {
        let mut builder = self
            .client
            .post(&self.config.url)
            .header("content-type", "application/json");
        if let Some(var) = &self.config.auth_env {
            if let Ok(token) = std::env::var(var) {
                builder = builder.bearer_auth(token);
            }
        }
        let response = builder
            .body(body.to_string())
            .send()
            .map_err(|e| Attempt::Transport(e.to_string()))?;
        let status = response.status();
        let text = response.text().map_err(|e| Attempt::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(Attempt::Transport(format!("HTTP {status}: {text}")));
        }
        let answer = response_text(&text);
        match parse_ranking(&answer, n) {
            Ok(r) => Ok((r, answer)),
            Err(msg) => Err(Attempt::Parse(msg, answer)),
        }
    }
}

impl Teacher for HttpTeacher {
    fn id(&self) -> &str {
        &self.id
    }

    fn rank_unchecked(&self, request: &TeacherRequest) -> Result<TeacherRanking, TeacherError> {
        let n = request.candidates.len();
        if n > MAX_LABELS {
            return Err(TeacherError::InvalidRequest(format!(
                "at most {MAX_LABELS} candidates can be labelled, got {n}"
            )));
        }
        let body = self.body(request);
        let _permit = self.gate.acquire();
        let attempts = self.config.max_retries + 1;
        let mut last = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self.config.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                thread::sleep(Duration::from_millis(delay));
            }
            match self.attempt(&body, n) {
                Ok((ranking, raw)) => {
                    debug!("teacher {} ranked {} candidates for {}", self.id, n, request.persona_id);
                    return Ok(TeacherRanking {
                        ranking,
                        teacher_id: self.id.clone(),
                        raw_response: Some(raw),
                    });
                }
                Err(e) => {
                    match &e {
                        Attempt::Transport(m) => warn!("teacher request failed (attempt {}): {m}", attempt + 1),
                        Attempt::Parse(m, _) => warn!("unparseable teacher reply (attempt {}): {m}", attempt + 1),
                    }
                    last = Some(e);
                }
            }
        }
        Err(match last.expect("at least one attempt") {
            Attempt::Transport(message) => TeacherError::TeacherUnavailable { attempts, message },
            Attempt::Parse(message, raw) => TeacherError::MalformedResponse {
                message,
                raw: Some(raw),
            },
        })
    }

    fn max_parallel(&self) -> usize {
        self.config.max_parallel.max(1)
    }
}
