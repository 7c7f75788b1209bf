//! Chat-completion client with bounded retries and a per-endpoint limiter.
//!
//! Requests use the common `{model, messages, temperature, max_tokens}`
//! shape and read `choices[0].message.content` from the response.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex, OnceLock};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::agent::{MessageRole, PromptText};
use crate::error::GatewayError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Retries after the first attempt on rate limits and transport failures.
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 5, base_delay_ms: 500, max_delay_ms: 30_000 }
    }
}

impl RetryPolicy {
    /// Exponential backoff before retry number `retry` (0-based).
    pub fn delay_for(&self, retry: u32) -> Duration {
        let factor = 1u64.checked_shl(retry).unwrap_or(u64::MAX);
        Duration::from_millis(self.base_delay_ms.saturating_mul(factor).min(self.max_delay_ms))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token; `None` sends no auth header.
    pub api_key_env: Option<String>,
    pub temperature: f64,
    pub max_output_tokens: u32,
    #[serde(default)]
    pub retry: RetryPolicy,
    /// Concurrent in-flight requests allowed per endpoint.
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_in_flight() -> usize {
    8
}

fn default_timeout() -> u64 {
    120
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
    pub retry_after: Option<Duration>,
}

/// One HTTP POST of a JSON body. Errors are network-level failures only;
/// non-2xx statuses come back as responses.
pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, bearer: Option<&str>, body: &str) -> Result<HttpResponse, String>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        Self { agent: ureq::AgentBuilder::new().timeout(timeout).build() }
    }
}

impl Transport for UreqTransport {
    fn post_json(&self, url: &str, bearer: Option<&str>, body: &str) -> Result<HttpResponse, String> {
        let mut req = self.agent.post(url).set("Content-Type", "application/json");
        if let Some(token) = bearer {
            req = req.set("Authorization", &format!("Bearer {token}"));
        }
        let resp = match req.send_string(body) {
            Ok(r) => r,
            Err(ureq::Error::Status(_, r)) => r,
            Err(ureq::Error::Transport(t)) => return Err(t.to_string()),
        };
        let status = resp.status();
        let retry_after = resp
            .header("retry-after")
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let body = resp.into_string().map_err(|e| e.to_string())?;
        Ok(HttpResponse { status, body, retry_after })
    }
}

/// Bounds in-flight requests for one endpoint and holds a shared
/// "not before" instant set by rate-limit responses.
pub struct EndpointLimiter {
    max_in_flight: usize,
    state: Mutex<LimiterState>,
    cv: Condvar,
}

struct LimiterState {
    in_flight: usize,
    blocked_until: Option<Instant>,
}

pub struct Permit<'a> {
    limiter: &'a EndpointLimiter,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut st = self.limiter.state.lock().unwrap();
        st.in_flight -= 1;
        self.limiter.cv.notify_one();
    }
}

impl EndpointLimiter {
    pub fn new(max_in_flight: usize) -> Self {
        Self {
            max_in_flight: max_in_flight.max(1),
            state: Mutex::new(LimiterState { in_flight: 0, blocked_until: None }),
            cv: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut st = self.state.lock().unwrap();
        loop {
            if let Some(until) = st.blocked_until {
                let now = Instant::now();
                if now < until {
                    st = self.cv.wait_timeout(st, until - now).unwrap().0;
                    continue;
                }
                st.blocked_until = None;
            }
            if st.in_flight < self.max_in_flight {
                st.in_flight += 1;
                return Permit { limiter: self };
            }
            st = self.cv.wait(st).unwrap();
        }
    }

    /// Holds back every caller of this endpoint for `d`.
    pub fn block_for(&self, d: Duration) {
        let until = Instant::now() + d;
        let mut st = self.state.lock().unwrap();
        st.blocked_until = Some(st.blocked_until.map_or(until, |u| u.max(until)));
    }

    pub fn in_flight(&self) -> usize {
        self.state.lock().unwrap().in_flight
    }
}

fn shared_limiter(endpoint: &str, max_in_flight: usize) -> Arc<EndpointLimiter> {
    static LIMITERS: OnceLock<Mutex<HashMap<String, Arc<EndpointLimiter>>>> = OnceLock::new();
    let map = LIMITERS.get_or_init(Default::default);
    map.lock()
        .unwrap()
        .entry(endpoint.to_string())
        .or_insert_with(|| Arc::new(EndpointLimiter::new(max_in_flight)))
        .clone()
}

/// Append-only JSONL log of request/response pairs.
pub struct Transcript {
    path: PathBuf,
    file: Mutex<File>,
}

impl Transcript {
    pub fn open(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self { path, file: Mutex::new(file) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn log(&self, entry: &Value) {
        let mut f = self.file.lock().unwrap();
        // Transcript failures must not fail the request.
        let _ = writeln!(f, "{entry}");
    }
}

type Sleeper = dyn Fn(Duration) + Send + Sync;

pub struct WireClient {
    config: WireConfig,
    api_key: Option<String>,
    transport: Arc<dyn Transport>,
    limiter: Arc<EndpointLimiter>,
    sleeper: Arc<Sleeper>,
    transcript: Option<Arc<Transcript>>,
}

impl WireClient {
    /// Resolves credentials from the environment; fails before any request
    /// when the configured variable is missing.
    pub fn from_env(config: WireConfig) -> Result<Self, GatewayError> {
        let api_key = match &config.api_key_env {
            Some(var) => match std::env::var(var) {
                Ok(v) if !v.is_empty() => Some(v),
                _ => return Err(GatewayError::MissingCredential(var.clone())),
            },
            None => None,
        };
        let transport = Arc::new(UreqTransport::new(Duration::from_secs(config.timeout_secs)));
        Ok(Self::with_transport(config, api_key, transport))
    }

    pub fn with_transport(config: WireConfig, api_key: Option<String>, transport: Arc<dyn Transport>) -> Self {
        let limiter = shared_limiter(&config.endpoint, config.max_in_flight);
        Self {
            config,
            api_key,
            transport,
            limiter,
            sleeper: Arc::new(std::thread::sleep),
            transcript: None,
        }
    }

    pub fn with_sleeper(mut self, sleeper: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleeper = Arc::new(sleeper);
        self
    }

    pub fn with_limiter(mut self, limiter: Arc<EndpointLimiter>) -> Self {
        self.limiter = limiter;
        self
    }

    pub fn with_transcript(mut self, transcript: Arc<Transcript>) -> Self {
        self.transcript = Some(transcript);
        self
    }

    pub fn config(&self) -> &WireConfig {
        &self.config
    }

    pub fn request_body(&self, prompt: &PromptText) -> Value {
        let messages: Vec<Value> = prompt
            .messages
            .iter()
            .map(|m| {
                let role = match m.role {
                    MessageRole::System => "system",
                    MessageRole::User => "user",
                };
                json!({"role": role, "content": m.content})
            })
            .collect();
        json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_output_tokens,
        })
    }

    pub fn complete(&self, prompt: &PromptText) -> Result<String, GatewayError> {
        let body = self.request_body(prompt);
        let body_text = body.to_string();
        let policy = &self.config.retry;
        let mut attempt = 0u32;
        loop {
            let result = {
                let _permit = self.limiter.acquire();
                self.transport.post_json(&self.config.endpoint, self.api_key.as_deref(), &body_text)
            };
            self.log(&body, &result);
            let err = match result {
                Ok(resp) => match classify(resp) {
                    Ok(text) => return Ok(text),
                    Err((e, retry_after)) => {
                        if let (GatewayError::RateLimited { .. }, Some(d)) = (&e, retry_after) {
                            self.limiter.block_for(d.min(Duration::from_millis(policy.max_delay_ms)));
                        }
                        e
                    }
                },
                Err(msg) => GatewayError::Transport(msg),
            };
            if !err.is_retryable() || attempt >= policy.max_retries {
                return Err(match err {
                    GatewayError::RateLimited { .. } => GatewayError::RateLimited { attempts: attempt + 1 },
                    other => other,
                });
            }
            (self.sleeper)(policy.delay_for(attempt));
            attempt += 1;
        }
    }

    fn log(&self, request: &Value, result: &Result<HttpResponse, String>) {
        let Some(t) = &self.transcript else { return };
        let ts = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0);
        let entry = match result {
            Ok(r) => json!({"ts_ms": ts as u64, "endpoint": self.config.endpoint, "request": request,
                            "status": r.status, "response": r.body}),
            Err(e) => json!({"ts_ms": ts as u64, "endpoint": self.config.endpoint, "request": request,
                             "error": e}),
        };
        t.log(&entry);
    }
}

fn classify(resp: HttpResponse) -> Result<String, (GatewayError, Option<Duration>)> {
    match resp.status {
        200..=299 => {
            let v: Value = serde_json::from_str(&resp.body)
                .map_err(|e| (GatewayError::Transport(format!("invalid response JSON: {e}")), None))?;
            match v.pointer("/choices/0/message/content").and_then(Value::as_str) {
                Some(s) if !s.trim().is_empty() => Ok(s.to_string()),
                _ => Err((GatewayError::EmptyCompletion, None)),
            }
        }
        401 | 403 => Err((GatewayError::Auth(resp.body), None)),
        429 => Err((GatewayError::RateLimited { attempts: 0 }, resp.retry_after)),
        status => Err((GatewayError::Http { status, body: resp.body }, None)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;

    struct Scripted {
        replies: Mutex<VecDeque<Result<HttpResponse, String>>>,
        bodies: Mutex<Vec<String>>,
    }

    impl Scripted {
        fn new(replies: Vec<Result<HttpResponse, String>>) -> Arc<Self> {
            Arc::new(Self { replies: Mutex::new(replies.into()), bodies: Mutex::new(vec![]) })
        }
    }

    impl Transport for Scripted {
        fn post_json(&self, _url: &str, _bearer: Option<&str>, body: &str) -> Result<HttpResponse, String> {
            self.bodies.lock().unwrap().push(body.to_string());
            self.replies.lock().unwrap().pop_front().expect("unexpected extra request")
        }
    }

    fn status(code: u16, body: &str) -> Result<HttpResponse, String> {
        Ok(HttpResponse { status: code, body: body.into(), retry_after: None })
    }

    fn ok(content: &str) -> Result<HttpResponse, String> {
        status(200, &json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string())
    }

    fn config() -> WireConfig {
        WireConfig {
            endpoint: "http://unit.test/v1/chat/completions".into(),
            model: "m".into(),
            api_key_env: None,
            temperature: 0.0,
            max_output_tokens: 64,
            retry: RetryPolicy { max_retries: 3, base_delay_ms: 1, max_delay_ms: 100 },
            max_in_flight: 2,
            timeout_secs: 5,
        }
    }

    fn client(t: Arc<Scripted>, sleeps: Arc<Mutex<Vec<Duration>>>) -> WireClient {
        WireClient::with_transport(config(), Some("k".into()), t)
            .with_limiter(Arc::new(EndpointLimiter::new(2)))
            .with_sleeper(move |d| sleeps.lock().unwrap().push(d))
    }

    fn prompt() -> PromptText {
        PromptText::system_user("sys", "hello")
    }

    #[test]
    fn rate_limited_thrice_then_success() {
        let t = Scripted::new(vec![status(429, ""), status(429, ""), status(429, ""), ok("done")]);
        let sleeps = Arc::new(Mutex::new(vec![]));
        let c = client(t.clone(), sleeps.clone());
        assert_eq!(c.complete(&prompt()).unwrap(), "done");
        assert_eq!(t.bodies.lock().unwrap().len(), 4);
        let ms: Vec<u128> = sleeps.lock().unwrap().iter().map(Duration::as_millis).collect();
        assert_eq!(ms, vec![1, 2, 4]);
    }

    #[test]
    fn rate_limit_budget_is_bounded() {
        let t = Scripted::new(vec![status(429, ""); 4]);
        let c = client(t.clone(), Arc::new(Mutex::new(vec![])));
        assert_eq!(c.complete(&prompt()), Err(GatewayError::RateLimited { attempts: 4 }));
    }

    #[test]
    fn auth_errors_are_not_retried() {
        let t = Scripted::new(vec![status(401, "bad key")]);
        let c = client(t.clone(), Arc::new(Mutex::new(vec![])));
        assert_eq!(c.complete(&prompt()), Err(GatewayError::Auth("bad key".into())));
        assert_eq!(t.bodies.lock().unwrap().len(), 1);
    }

    #[test]
    fn transport_errors_are_retried() {
        let t = Scripted::new(vec![Err("connection reset".into()), status(503, "busy"), ok("x")]);
        let c = client(t, Arc::new(Mutex::new(vec![])));
        assert_eq!(c.complete(&prompt()).unwrap(), "x");
    }

    #[test]
    fn empty_completion() {
        let t = Scripted::new(vec![ok("  ")]);
        let c = client(t, Arc::new(Mutex::new(vec![])));
        assert_eq!(c.complete(&prompt()), Err(GatewayError::EmptyCompletion));
    }

    #[test]
    fn request_shape() {
        let t = Scripted::new(vec![ok("x")]);
        let c = client(t.clone(), Arc::new(Mutex::new(vec![])));
        c.complete(&prompt()).unwrap();
        let body: Value = serde_json::from_str(&t.bodies.lock().unwrap()[0]).unwrap();
        assert_eq!(body["model"], "m");
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][1]["content"], "hello");
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["max_tokens"], 64);
    }

    #[test]
    fn missing_credential_fails_fast() {
        let mut cfg = config();
        cfg.api_key_env = Some("ATAD_TEST_SURELY_UNSET_KEY".into());
        assert_eq!(
            WireClient::from_env(cfg).err(),
            Some(GatewayError::MissingCredential("ATAD_TEST_SURELY_UNSET_KEY".into()))
        );
    }

    #[test]
    fn backoff_caps_at_max_delay() {
        let p = RetryPolicy { max_retries: 10, base_delay_ms: 100, max_delay_ms: 1_000 };
        assert_eq!(p.delay_for(0), Duration::from_millis(100));
        assert_eq!(p.delay_for(3), Duration::from_millis(800));
        assert_eq!(p.delay_for(4), Duration::from_millis(1_000));
        assert_eq!(p.delay_for(200), Duration::from_millis(1_000));
    }

    #[test]
    fn limiter_bounds_in_flight() {
        let limiter = Arc::new(EndpointLimiter::new(2));
        let peak = Arc::new(Mutex::new(0usize));
        std::thread::scope(|s| {
            for _ in 0..8 {
                let limiter = limiter.clone();
                let peak = peak.clone();
                s.spawn(move || {
                    let _p = limiter.acquire();
                    let now = limiter.in_flight();
                    let mut pk = peak.lock().unwrap();
                    *pk = (*pk).max(now);
                    drop(pk);
                    std::thread::sleep(Duration::from_millis(5));
                });
            }
        });
        assert!(*peak.lock().unwrap() <= 2);
        assert_eq!(limiter.in_flight(), 0);
    }
}
