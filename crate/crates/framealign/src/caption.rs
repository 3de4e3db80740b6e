//! Caption cleanup through a chat-completion endpoint.
//!
//! Region captions arrive as terse annotator shorthand. This module rewrites
//! them into plain sentences via a pluggable transport: an HTTP client for
//! real runs, a table-backed mock for tests. Every network failure degrades
//! to the original caption rather than aborting a preprocessing run.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

/// A rendered prompt plus the raw caption it was built from. Transports key
/// mock lookups off `payload` so tests need not repeat template text.
#[derive(Clone, Debug)]
pub struct CompletionRequest {
    pub prompt: String,
    pub payload: String,
}

pub trait CompletionTransport {
    fn complete(&mut self, request: &CompletionRequest) -> Result<String>;
}

/// Substitutes the caption into a prompt template. The template must
/// contain the literal `{caption}` marker at least once.
pub fn render_prompt(template: &str, caption: &str) -> Result<String> {
    if !template.contains("{caption}") {
        return Err(Error::invalid(
            "prompt template is missing the {caption} placeholder",
        ));
    }
    Ok(template.replace("{caption}", caption))
}

/// Table-backed transport for tests and offline runs. Payloads found in the
/// table map to their entry; anything else echoes back unchanged. Set
/// `fail_first` to make the first N calls return errors.
#[derive(Debug, Default)]
pub struct MockTransport {
    table: HashMap<String, String>,
    pub fail_first: usize,
    pub calls: usize,
}

impl MockTransport {
    pub fn new(entries: &[(&str, &str)]) -> MockTransport {
        MockTransport {
            table: entries
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            fail_first: 0,
            calls: 0,
        }
    }

    /// Loads a response table: one "original<TAB>cleaned" pair per line,
    /// blank lines skipped. Captions missing from the table echo back.
    pub fn from_table_file(path: &Path) -> Result<MockTransport> {
        let text = std::fs::read_to_string(path)?;
        let mut table = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (original, cleaned) = line.split_once('\t').ok_or_else(|| Error::Parse {
                record: i + 1,
                message: "mock table line needs original<TAB>cleaned".into(),
            })?;
            table.insert(original.to_string(), cleaned.to_string());
        }
        Ok(MockTransport {
            table,
            fail_first: 0,
            calls: 0,
        })
    }
}

impl CompletionTransport for MockTransport {
    fn complete(&mut self, request: &CompletionRequest) -> Result<String> {
        self.calls += 1;
        if self.calls <= self.fail_first {
            return Err(Error::Client(format!(
                "mock transport failure {} of {}",
                self.calls, self.fail_first
            )));
        }
        Ok(self
            .table
            .get(&request.payload)
            .cloned()
            .unwrap_or_else(|| request.payload.clone()))
    }
}

/// Chat-completion HTTP transport. The API key is read from the named
/// environment variable at construction so it never sits in config files.
pub struct HttpTransport {
    endpoint: String,
    model: String,
    api_key: String,
    temperature: f64,
}

impl HttpTransport {
    pub fn new(endpoint: &str, model: &str, api_key_env: &str) -> Result<HttpTransport> {
        let api_key = std::env::var(api_key_env).map_err(|_| {
            Error::Client(format!("environment variable {api_key_env} is not set"))
        })?;
        Ok(HttpTransport {
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            api_key,
            temperature: 0.0,
        })
    }

    fn request_body(&self, prompt: &str) -> serde_json::Value {
        serde_json::json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
        })
    }

    fn extract_content(body: &serde_json::Value) -> Result<String> {
        body.pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .ok_or_else(|| Error::Client("response carries no message content".into()))
    }
}

impl CompletionTransport for HttpTransport {
    fn complete(&mut self, request: &CompletionRequest) -> Result<String> {
        let mut response = ureq::post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(self.request_body(&request.prompt))
            .map_err(|e| Error::Client(format!("completion request failed: {e}")))?;
        let body: serde_json::Value = response
            .body_mut()
            .read_json()
            .map_err(|e| Error::Client(format!("bad completion response: {e}")))?;
        Self::extract_content(&body)
    }
}

/// Monotonic time source, mockable for rate-limiter tests.
pub trait Clock {
    fn monotonic(&self) -> f64;
    fn sleep(&mut self, seconds: f64);
}

pub struct SystemClock {
    epoch: std::time::Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        SystemClock {
            epoch: std::time::Instant::now(),
        }
    }
}

impl Clock for SystemClock {
    fn monotonic(&self) -> f64 {
        self.epoch.elapsed().as_secs_f64()
    }

    fn sleep(&mut self, seconds: f64) {
        std::thread::sleep(std::time::Duration::from_secs_f64(seconds));
    }
}

/// Test clock: sleeping advances time instantly and records the request.
#[derive(Debug, Default)]
pub struct MockClock {
    pub now: f64,
    pub slept: Vec<f64>,
}

impl Clock for MockClock {
    fn monotonic(&self) -> f64 {
        self.now
    }

    fn sleep(&mut self, seconds: f64) {
        self.slept.push(seconds);
        self.now += seconds;
    }
}

#[derive(Clone, Debug)]
pub struct CleanOptions {
    pub prompt_template: String,
    /// Minimum spacing between requests, in seconds.
    pub min_interval: f64,
    /// Retries after the first failed attempt, with doubling backoff.
    pub max_retries: usize,
    pub backoff_start: f64,
}

impl Default for CleanOptions {
    fn default() -> Self {
        CleanOptions {
            prompt_template: "Rewrite this sound annotation as one plain English sentence \
                              describing what is heard. Reply with the sentence only.\n\
                              Annotation: {caption}"
                .to_string(),
            min_interval: 0.5,
            max_retries: 2,
            backoff_start: 1.0,
        }
    }
}

/// A cleanup result. `cleaned` is false when every attempt failed and the
/// original caption was kept.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CleanedCaption {
    pub text: String,
    pub cleaned: bool,
}

pub struct CaptionCleaner<T, C> {
    transport: T,
    clock: C,
    opts: CleanOptions,
    last_request: Option<f64>,
    cache: HashMap<String, CleanedCaption>,
}

impl<T: CompletionTransport, C: Clock> CaptionCleaner<T, C> {
    pub fn new(transport: T, clock: C, opts: CleanOptions) -> Result<CaptionCleaner<T, C>> {
        render_prompt(&opts.prompt_template, "probe")?;
        if !(opts.min_interval >= 0.0 && opts.backoff_start > 0.0) {
            return Err(Error::invalid("caption cleaner: bad pacing options"));
        }
        Ok(CaptionCleaner {
            transport,
            clock,
            opts,
            last_request: None,
            cache: HashMap::new(),
        })
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    pub fn clock(&self) -> &C {
        &self.clock
    }

    fn pace(&mut self) {
        if let Some(last) = self.last_request {
            let elapsed = self.clock.monotonic() - last;
            if elapsed < self.opts.min_interval {
                self.clock.sleep(self.opts.min_interval - elapsed);
            }
        }
        self.last_request = Some(self.clock.monotonic());
    }

    /// Cleans one caption. Transport failures retry with doubling backoff;
    /// exhausted retries fall back to the original text.
    pub fn clean_one(&mut self, caption: &str) -> Result<CleanedCaption> {
        let caption = caption.trim();
        if caption.is_empty() {
            return Err(Error::invalid("caption cleaner: empty caption"));
        }
        if let Some(hit) = self.cache.get(caption) {
            return Ok(hit.clone());
        }
        let request = CompletionRequest {
            prompt: render_prompt(&self.opts.prompt_template, caption)?,
            payload: caption.to_string(),
        };
        let mut backoff = self.opts.backoff_start;
        let mut outcome = CleanedCaption {
            text: caption.to_string(),
            cleaned: false,
        };
        for attempt in 0..=self.opts.max_retries {
            if attempt > 0 {
                self.clock.sleep(backoff);
                backoff *= 2.0;
            }
            self.pace();
            match self.transport.complete(&request) {
                Ok(reply) => {
                    let reply = reply.trim();
                    if reply.is_empty() {
                        log::warn!("caption cleanup returned empty text for {caption:?}");
                        continue;
                    }
                    outcome = CleanedCaption {
                        text: reply.to_string(),
                        cleaned: true,
                    };
                    break;
                }
                Err(e) => {
                    log::warn!("caption cleanup attempt {} failed: {e}", attempt + 1);
                }
            }
        }
        self.cache.insert(caption.to_string(), outcome.clone());
        Ok(outcome)
    }

    /// Cleans a batch, returning results in input order. Repeated captions
    /// are requested once and served from cache afterwards.
    pub fn clean_batch(&mut self, captions: &[&str]) -> Result<Vec<CleanedCaption>> {
        captions.iter().map(|c| self.clean_one(c)).collect()
    }
}
