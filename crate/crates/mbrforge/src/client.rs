//! Chat-completion and embedding backends over the OpenAI-compatible wire
//! format, plus a deterministic mock backend so every pipeline test is
//! reproducible offline.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompts::RenderedPrompt;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("backend unreachable after {attempts} attempts: {reason}")]
    BackendUnreachable { attempts: u32, reason: String },
    #[error("quota exhausted: {0}")]
    QuotaExhausted(String),
    #[error("backend returned {got} outputs, expected {expected}")]
    WrongOutputCount { got: usize, expected: usize },
    #[error("embedding dimension mismatch within batch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("precondition violated: {0}")]
    Precondition(&'static str),
}

/// A single transport-level failure, classified for retry purposes.
#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transient: {0}")]
    Transient(String),
    #[error("quota: {0}")]
    Quota(String),
    #[error("permanent: {0}")]
    Permanent(String),
}

#[derive(Debug, Clone)]
pub struct GenerationRequest {
    pub prompt: RenderedPrompt,
    pub n_samples: usize,
    pub temperature: f64,
    pub max_output_tokens: usize,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationResult {
    pub outputs: Vec<String>,
    pub output_token_counts: Vec<usize>,
    /// Per-output flag set when the backend stopped at the length limit.
    pub truncated: Vec<bool>,
    pub model_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Scales to unit L2 norm; zero vectors are left untouched.
    pub fn normalized(mut self) -> EmbeddingVector {
        let norm = self.l2_norm();
        if norm > 0.0 {
            for v in &mut self.values {
                *v /= norm;
            }
        }
        self
    }
}

/// One sampled completion as returned by a backend.
#[derive(Debug, Clone)]
pub struct ChatChoice {
    pub text: String,
    pub token_count: Option<usize>,
    pub truncated: bool,
}

/// Transport abstraction behind the client: real HTTP or a mock.
pub trait Backend: Send + Sync {
    fn chat(
        &self,
        prompt: &str,
        n: usize,
        temperature: f64,
        max_tokens: usize,
        seed: Option<u64>,
    ) -> Result<Vec<ChatChoice>, BackendError>;

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError>;

    fn model_id(&self) -> String;
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BackendConfig {
    pub base_url: String,
    pub model_id: String,
    /// Name of the environment variable holding the API key.
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub retry_backoff_ms: u64,
    #[serde(default = "default_embedding_model")]
    pub embedding_model_id: String,
}

fn default_api_key_env() -> String {
    "MBRFORGE_API_KEY".to_string()
}
fn default_concurrency() -> usize {
    4
}
fn default_timeout_secs() -> u64 {
    120
}
fn default_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    250
}
fn default_embedding_model() -> String {
    "text-embedding".to_string()
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            base_url: "http://localhost:8000".to_string(),
            model_id: "model".to_string(),
            api_key_env: default_api_key_env(),
            concurrency: default_concurrency(),
            timeout_secs: default_timeout_secs(),
            retries: default_retries(),
            retry_backoff_ms: default_backoff_ms(),
            embedding_model_id: default_embedding_model(),
        }
    }
}

/// Counting semaphore bounding in-flight backend requests.
struct Semaphore {
    permits: Mutex<usize>,
    cond: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Semaphore {
        Semaphore {
            permits: Mutex::new(permits),
            cond: Condvar::new(),
        }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.cond.wait(permits).unwrap();
        }
        *permits -= 1;
        SemaphoreGuard { sem: self }
    }
}

struct SemaphoreGuard<'a> {
    sem: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.sem.permits.lock().unwrap() += 1;
        self.sem.cond.notify_one();
    }
}

/// Shared client enforcing the in-flight budget, retry policy and
/// normalization contract on top of a [`Backend`].
pub struct ModelClient {
    backend: Box<dyn Backend>,
    semaphore: Semaphore,
    retries: u32,
    backoff: Duration,
}

impl ModelClient {
    pub fn new(backend: Box<dyn Backend>, concurrency: usize, retries: u32, backoff: Duration) -> ModelClient {
        ModelClient {
            backend,
            semaphore: Semaphore::new(concurrency.max(1)),
            retries,
            backoff,
        }
    }

    pub fn from_config(config: &BackendConfig) -> ModelClient {
        let backend = HttpBackend::new(config);
        ModelClient::new(
            Box::new(backend),
            config.concurrency,
            config.retries,
            Duration::from_millis(config.retry_backoff_ms),
        )
    }

    pub fn mock(seed: u64, concurrency: usize) -> ModelClient {
        ModelClient::new(
            Box::new(MockBackend::new(seed)),
            concurrency,
            0,
            Duration::from_millis(1),
        )
    }

    pub fn model_id(&self) -> String {
        self.backend.model_id()
    }

    fn with_retries<T>(
        &self,
        mut call: impl FnMut() -> Result<T, BackendError>,
    ) -> Result<T, ClientError> {
        let mut last_reason = String::new();
        for attempt in 0..=self.retries {
            let _permit = self.semaphore.acquire();
            match call() {
                Ok(v) => return Ok(v),
                Err(BackendError::Quota(msg)) => return Err(ClientError::QuotaExhausted(msg)),
                Err(BackendError::Permanent(msg)) => {
                    return Err(ClientError::BackendUnreachable {
                        attempts: attempt + 1,
                        reason: msg,
                    })
                }
                Err(BackendError::Transient(msg)) => {
                    last_reason = msg;
                    if attempt < self.retries {
                        std::thread::sleep(self.backoff * 2u32.pow(attempt));
                    }
                }
            }
        }
        Err(ClientError::BackendUnreachable {
            attempts: self.retries + 1,
            reason: last_reason,
        })
    }

    /// Samples exactly `n_samples` outputs for the prompt, all-or-error.
    pub fn sample_outputs(
        &self,
        request: &GenerationRequest,
    ) -> Result<GenerationResult, ClientError> {
        if request.n_samples == 0 {
            return Err(ClientError::Precondition("n_samples must be >= 1"));
        }
        let choices = self.with_retries(|| {
            self.backend.chat(
                &request.prompt.text,
                request.n_samples,
                request.temperature,
                request.max_output_tokens,
                request.seed,
            )
        })?;
        if choices.len() != request.n_samples {
            return Err(ClientError::WrongOutputCount {
                got: choices.len(),
                expected: request.n_samples,
            });
        }
        let mut outputs = Vec::with_capacity(choices.len());
        let mut counts = Vec::with_capacity(choices.len());
        let mut truncated = Vec::with_capacity(choices.len());
        for choice in choices {
            counts.push(
                choice
                    .token_count
                    .unwrap_or_else(|| crate::corpus::estimate_tokens(&choice.text)),
            );
            truncated.push(choice.truncated);
            outputs.push(choice.text);
        }
        Ok(GenerationResult {
            outputs,
            output_token_counts: counts,
            truncated,
            model_id: self.backend.model_id(),
        })
    }

    /// Single greedy completion, used by the self-evaluation metrics.
    pub fn complete_once(&self, prompt: &RenderedPrompt) -> Result<String, ClientError> {
        let result = self.sample_outputs(&GenerationRequest {
            prompt: prompt.clone(),
            n_samples: 1,
            temperature: 0.0,
            max_output_tokens: 1024,
            seed: None,
        })?;
        Ok(result.outputs.into_iter().next().unwrap())
    }

    /// Embeds each text and L2-normalizes client-side, so inner product and
    /// cosine coincide regardless of what the backend returns.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ClientError> {
        if texts.is_empty() {
            return Err(ClientError::Precondition("texts must be non-empty"));
        }
        let raw = self.with_retries(|| self.backend.embed(texts))?;
        if raw.len() != texts.len() {
            return Err(ClientError::WrongOutputCount {
                got: raw.len(),
                expected: texts.len(),
            });
        }
        let dim = raw[0].len();
        let mut vectors = Vec::with_capacity(raw.len());
        for values in raw {
            if values.len() != dim {
                return Err(ClientError::DimensionMismatch(dim, values.len()));
            }
            vectors.push(EmbeddingVector { values }.normalized());
        }
        Ok(vectors)
    }
}

// ---------------------------------------------------------------------------
// HTTP backend (OpenAI-compatible)
// ---------------------------------------------------------------------------

pub struct HttpBackend {
    http: reqwest::blocking::Client,
    base_url: String,
    model_id: String,
    embedding_model_id: String,
    api_key: Option<String>,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequestBody<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    n: usize,
    temperature: f64,
    max_tokens: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct ChatResponseBody {
    choices: Vec<ChatResponseChoice>,
}

#[derive(Deserialize)]
struct ChatResponseChoice {
    message: ChatResponseMessage,
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ChatResponseMessage {
    content: Option<String>,
}

#[derive(Serialize)]
struct EmbeddingRequestBody<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbeddingResponseBody {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
    index: usize,
}

impl HttpBackend {
    pub fn new(config: &BackendConfig) -> HttpBackend {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .expect("http client construction");
        HttpBackend {
            http,
            base_url: config.base_url.trim_end_matches('/').to_string(),
            model_id: config.model_id.clone(),
            embedding_model_id: config.embedding_model_id.clone(),
            api_key: std::env::var(&config.api_key_env).ok(),
        }
    }

    fn post<T: serde::de::DeserializeOwned>(
        &self,
        path: &str,
        body: &impl Serialize,
    ) -> Result<T, BackendError> {
        let mut req = self.http.post(format!("{}{path}", self.base_url)).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| BackendError::Transient(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 {
            return Err(BackendError::Quota(format!("HTTP {status}")));
        }
        if status.is_server_error() {
            return Err(BackendError::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(BackendError::Permanent(format!("HTTP {status}")));
        }
        resp.json()
            .map_err(|e| BackendError::Permanent(format!("bad response body: {e}")))
    }
}

impl Backend for HttpBackend {
    fn chat(
        &self,
        prompt: &str,
        n: usize,
        temperature: f64,
        max_tokens: usize,
        seed: Option<u64>,
    ) -> Result<Vec<ChatChoice>, BackendError> {
        // The full rendered prompt travels as a single user message.
        let body = ChatRequestBody {
            model: &self.model_id,
            messages: vec![ChatMessage {
                role: "user",
                content: prompt,
            }],
            n,
            temperature,
            max_tokens,
            seed,
        };
        let parsed: ChatResponseBody = self.post("/v1/chat/completions", &body)?;
        Ok(parsed
            .choices
            .into_iter()
            .map(|c| ChatChoice {
                text: c.message.content.unwrap_or_default(),
                token_count: None,
                truncated: c.finish_reason.as_deref() == Some("length"),
            })
            .collect())
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        let body = EmbeddingRequestBody {
            model: &self.embedding_model_id,
            input: texts,
        };
        let parsed: EmbeddingResponseBody = self.post("/v1/embeddings", &body)?;
        let mut data = parsed.data;
        data.sort_by_key(|d| d.index);
        Ok(data.into_iter().map(|d| d.embedding).collect())
    }

    fn model_id(&self) -> String {
        self.model_id.clone()
    }
}

// ---------------------------------------------------------------------------
// Deterministic mock backend
// ---------------------------------------------------------------------------

pub const MOCK_EMBEDDING_DIM: usize = 16;

/// Offline backend mapping (prompt hash, sample index, seed) to outputs
/// deterministically. Rating and True/False evaluation prompts get replies
/// in the format their parsers expect; everything else gets synthetic
/// answer text with hash-driven consensus clusters.
pub struct MockBackend {
    seed: u64,
}

impl MockBackend {
    pub fn new(seed: u64) -> MockBackend {
        MockBackend { seed }
    }

    fn hash(&self, parts: &[&[u8]]) -> u64 {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        for p in parts {
            hasher.update(p);
        }
        let digest = hasher.finalize();
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }
}

/// Deterministic unit vector from a text hash; also serves as the
/// token-embedding provider in BERTScore tests.
pub fn hash_embedding(text: &str, dim: usize) -> Vec<f64> {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    let seed = u64::from_le_bytes(digest[..8].try_into().unwrap());
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let values: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    EmbeddingVector { values }.normalized().values
}

impl Backend for MockBackend {
    fn chat(
        &self,
        prompt: &str,
        n: usize,
        temperature: f64,
        _max_tokens: usize,
        seed: Option<u64>,
    ) -> Result<Vec<ChatChoice>, BackendError> {
        let request_seed = seed.unwrap_or(0);
        let is_rating = prompt.contains("[Predicted Response]")
            && prompt.contains("scale from 1 to 5");
        let is_true_false = prompt.contains("Respond with \"True\" or \"False\"");

        let mut choices = Vec::with_capacity(n);
        for i in 0..n {
            let h = self.hash(&[
                prompt.as_bytes(),
                &request_seed.to_le_bytes(),
                &(i as u64).to_le_bytes(),
            ]);
            let text = if is_rating {
                format!("The response looks plausible. Rating: [[{}]]", 1 + h % 5)
            } else if is_true_false {
                if h % 2 == 0 { "True".to_string() } else { "False".to_string() }
            } else if temperature == 0.0 {
                // Greedy: collapse to the dominant cluster for this prompt.
                let p = self.hash(&[prompt.as_bytes()]);
                format!("After reviewing the context, the answer is ans{}.", p % 4)
            } else {
                format!(
                    "Plan: locate the relevant facts. The answer is ans{} (trace {:08x}).",
                    h % 4,
                    h >> 32
                )
            };
            choices.push(ChatChoice {
                token_count: Some(crate::corpus::estimate_tokens(&text)),
                truncated: false,
                text,
            });
        }
        Ok(choices)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        Ok(texts
            .iter()
            .map(|t| hash_embedding(t, MOCK_EMBEDDING_DIM))
            .collect())
    }

    fn model_id(&self) -> String {
        "mock".to_string()
    }
}

/// Test backend replaying a fixed script of chat replies.
pub struct ScriptedBackend {
    replies: Mutex<std::collections::VecDeque<Result<Vec<String>, BackendError>>>,
}

impl ScriptedBackend {
    pub fn new(replies: Vec<Result<Vec<String>, BackendError>>) -> ScriptedBackend {
        ScriptedBackend {
            replies: Mutex::new(replies.into()),
        }
    }

    /// Convenience: one reply per call, each a single choice.
    pub fn single_choices(replies: &[&str]) -> ScriptedBackend {
        ScriptedBackend::new(replies.iter().map(|r| Ok(vec![r.to_string()])).collect())
    }
}

impl Backend for ScriptedBackend {
    fn chat(
        &self,
        _prompt: &str,
        n: usize,
        _temperature: f64,
        _max_tokens: usize,
        _seed: Option<u64>,
    ) -> Result<Vec<ChatChoice>, BackendError> {
        let reply = self
            .replies
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or_else(|| Err(BackendError::Permanent("script exhausted".into())));
        reply.map(|texts| {
            texts
                .into_iter()
                .take(n)
                .map(|text| ChatChoice {
                    token_count: Some(crate::corpus::estimate_tokens(&text)),
                    truncated: false,
                    text,
                })
                .collect()
        })
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        Ok(texts
            .iter()
            .map(|t| hash_embedding(t, MOCK_EMBEDDING_DIM))
            .collect())
    }

    fn model_id(&self) -> String {
        "scripted".to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompts::{render_prompt, PromptStrategy};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn prompt(text: &str) -> RenderedPrompt {
        render_prompt(PromptStrategy::Default, "ctx", text).unwrap()
    }

    fn request(text: &str, n: usize) -> GenerationRequest {
        GenerationRequest {
            prompt: prompt(text),
            n_samples: n,
            temperature: 0.7,
            max_output_tokens: 128,
            seed: Some(1),
        }
    }

    #[test]
    fn scripted_outputs_in_order() {
        let backend = ScriptedBackend::new(vec![Ok(vec![
            "one".into(),
            "two".into(),
            "three".into(),
            "four".into(),
        ])]);
        let client = ModelClient::new(Box::new(backend), 2, 0, Duration::from_millis(1));
        let result = client.sample_outputs(&request("q", 4)).unwrap();
        assert_eq!(result.outputs, vec!["one", "two", "three", "four"]);
        assert_eq!(result.output_token_counts.len(), 4);
    }

    #[test]
    fn zero_samples_rejected() {
        let client = ModelClient::mock(0, 2);
        assert!(matches!(
            client.sample_outputs(&request("q", 0)),
            Err(ClientError::Precondition(_))
        ));
    }

    #[test]
    fn partial_results_never_surface_as_success() {
        // Backend yields 3 of 4 choices; contract is all-or-error.
        let backend = ScriptedBackend::new(vec![Ok(vec![
            "one".into(),
            "two".into(),
            "three".into(),
        ])]);
        let client = ModelClient::new(Box::new(backend), 2, 0, Duration::from_millis(1));
        assert!(matches!(
            client.sample_outputs(&request("q", 4)),
            Err(ClientError::WrongOutputCount { got: 3, expected: 4 })
        ));
    }

    #[test]
    fn transient_failures_retried_then_fail() {
        let backend = ScriptedBackend::new(vec![
            Err(BackendError::Transient("503".into())),
            Err(BackendError::Transient("503".into())),
            Err(BackendError::Transient("503".into())),
        ]);
        let client = ModelClient::new(Box::new(backend), 2, 2, Duration::from_millis(1));
        match client.sample_outputs(&request("q", 1)) {
            Err(ClientError::BackendUnreachable { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn transient_then_success() {
        let backend = ScriptedBackend::new(vec![
            Err(BackendError::Transient("503".into())),
            Ok(vec!["ok".into()]),
        ]);
        let client = ModelClient::new(Box::new(backend), 2, 2, Duration::from_millis(1));
        let result = client.sample_outputs(&request("q", 1)).unwrap();
        assert_eq!(result.outputs, vec!["ok"]);
    }

    #[test]
    fn mock_is_deterministic() {
        let a = ModelClient::mock(9, 2)
            .sample_outputs(&request("same prompt", 4))
            .unwrap();
        let b = ModelClient::mock(9, 2)
            .sample_outputs(&request("same prompt", 4))
            .unwrap();
        assert_eq!(a.outputs, b.outputs);
    }

    #[test]
    fn embeddings_are_unit_norm_and_deterministic() {
        let client = ModelClient::mock(0, 2);
        let texts = vec!["a".to_string(), "a".to_string(), "b".to_string()];
        let vectors = client.embed(&texts).unwrap();
        assert_eq!(vectors[0], vectors[1]);
        assert_ne!(vectors[0], vectors[2]);
        for v in &vectors {
            assert!((v.l2_norm() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn empty_embedding_batch_rejected() {
        let client = ModelClient::mock(0, 2);
        assert!(matches!(
            client.embed(&[]),
            Err(ClientError::Precondition(_))
        ));
    }

    struct CountingBackend {
        in_flight: AtomicUsize,
        max_seen: AtomicUsize,
    }

    impl Backend for CountingBackend {
        fn chat(
            &self,
            _prompt: &str,
            n: usize,
            _temperature: f64,
            _max_tokens: usize,
            _seed: Option<u64>,
        ) -> Result<Vec<ChatChoice>, BackendError> {
            let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
            self.max_seen.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(10));
            self.in_flight.fetch_sub(1, Ordering::SeqCst);
            Ok(vec![
                ChatChoice {
                    text: "x".into(),
                    token_count: Some(1),
                    truncated: false
                };
                n
            ])
        }

        fn embed(&self, _texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
            Err(BackendError::Permanent("not used".into()))
        }

        fn model_id(&self) -> String {
            "counting".into()
        }
    }

    #[test]
    fn in_flight_requests_bounded_by_budget() {
        let backend = Arc::new(CountingBackend {
            in_flight: AtomicUsize::new(0),
            max_seen: AtomicUsize::new(0),
        });

        struct Shared(Arc<CountingBackend>);
        impl Backend for Shared {
            fn chat(
                &self,
                p: &str,
                n: usize,
                t: f64,
                m: usize,
                s: Option<u64>,
            ) -> Result<Vec<ChatChoice>, BackendError> {
                self.0.chat(p, n, t, m, s)
            }
            fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
                self.0.embed(texts)
            }
            fn model_id(&self) -> String {
                self.0.model_id()
            }
        }

        let client = Arc::new(ModelClient::new(
            Box::new(Shared(backend.clone())),
            2,
            0,
            Duration::from_millis(1),
        ));
        std::thread::scope(|scope| {
            for i in 0..8 {
                let client = client.clone();
                scope.spawn(move || {
                    client
                        .sample_outputs(&request(&format!("p{i}"), 1))
                        .unwrap();
                });
            }
        });
        assert!(backend.max_seen.load(Ordering::SeqCst) <= 2);
    }
}
