//! HTTP-backed implementations of the embedding, assessor, patient, HPI
//! generator and statement extractor interfaces.

use std::sync::Arc;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::dialogue::{DialogueError, InterviewState, Patient, PatientFactory, PatientReply, Trajectory};
use crate::embedding::{Embedding, EmbeddingProvider, ProviderError};
use crate::eval::{AtomicStatement, EvalError, HpiGenerator, StatementExtractor, StatementSource};
use crate::quality::{AssessmentContext, AssessorError, Provenance, QualityAssessor, QualityScores};
use crate::vignette::{ClinicalEntity, VignetteCase};

pub const QUALITY_PROMPT: &str = include_str!("../assets/prompts/quality_v1.txt");
pub const RELEVANCE_PROMPT: &str = include_str!("../assets/prompts/relevance_v1.txt");
pub const PATIENT_PROMPT: &str = include_str!("../assets/prompts/patient_v1.txt");
pub const HPI_PROMPT: &str = include_str!("../assets/prompts/hpi_v1.txt");
pub const EXTRACT_PROMPT: &str = include_str!("../assets/prompts/extract_v1.txt");

#[derive(Debug, Error)]
pub enum RemoteError {
    #[error("request to {url} failed: {message}")]
    Transport { url: String, message: String },
    #[error("{url} returned HTTP {status}: {body}")]
    Status { url: String, status: u16, body: String },
    #[error("malformed response from {url}: {message}")]
    Malformed { url: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    pub url: String,
    pub model: String,
    /// Sent as a bearer token when set.
    pub token: Option<String>,
    pub timeout_secs: u64,
    /// Retries after the first attempt on transport errors, 429 and 5xx.
    pub max_retries: u32,
    /// Delay before the first retry; doubled on each further retry.
    pub backoff_ms: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            url: String::new(),
            model: String::new(),
            token: None,
            timeout_secs: 30,
            max_retries: 3,
            backoff_ms: 250,
        }
    }
}

/// Fills `{name}` placeholders.
pub fn render_prompt(template: &str, vars: &[(&str, &str)]) -> String {
    vars.iter().fold(template.to_string(), |acc, (k, v)| acc.replace(&format!("{{{k}}}"), v))
}

#[derive(Debug, Clone)]
struct Http {
    client: reqwest::blocking::Client,
    endpoint: EndpointConfig,
}

impl Http {
    fn new(endpoint: EndpointConfig) -> Result<Self, RemoteError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(endpoint.timeout_secs))
            .build()
            .map_err(|e| RemoteError::Transport { url: endpoint.url.clone(), message: e.to_string() })?;
        Ok(Self { client, endpoint })
    }

    fn post_json(&self, body: &Value) -> Result<Value, RemoteError> {
        let url = &self.endpoint.url;
        let mut attempt = 0;
        loop {
            let mut req = self.client.post(url).json(body);
            if let Some(token) = &self.endpoint.token {
                req = req.bearer_auth(token);
            }
            let err = match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        return resp
                            .json::<Value>()
                            .map_err(|e| RemoteError::Malformed { url: url.clone(), message: e.to_string() });
                    }
                    let body = resp.text().unwrap_or_default();
                    let err = RemoteError::Status { url: url.clone(), status: status.as_u16(), body };
                    if !(status.is_server_error() || status.as_u16() == 429) {
                        return Err(err);
                    }
                    err
                }
                Err(e) => RemoteError::Transport { url: url.clone(), message: e.to_string() },
            };
            if attempt >= self.endpoint.max_retries {
                return Err(err);
            }
            let delay = self.endpoint.backoff_ms.saturating_mul(1 << attempt.min(16));
            log::warn!("{err}; retrying in {delay} ms");
            thread::sleep(Duration::from_millis(delay));
            attempt += 1;
        }
    }
}

/// Client for a chat-completion endpoint: messages in, one text reply out.
#[derive(Debug, Clone)]
pub struct ChatClient {
    http: Http,
}

impl ChatClient {
    pub fn new(endpoint: EndpointConfig) -> Result<Self, RemoteError> {
        Ok(Self { http: Http::new(endpoint)? })
    }

    pub fn endpoint(&self) -> &EndpointConfig {
        &self.http.endpoint
    }

    pub fn complete(&self, prompt: &str) -> Result<String, RemoteError> {
        let body = json!({
            "model": self.http.endpoint.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0.0,
        });
        let reply = self.http.post_json(&body)?;
        reply.pointer("/choices/0/message/content").and_then(Value::as_str).map(String::from).ok_or_else(|| {
            RemoteError::Malformed {
                url: self.http.endpoint.url.clone(),
                message: "missing choices[0].message.content".into(),
            }
        })
    }
}

/// Embedding endpoint taking `{"texts": [...]}` and returning
/// `{"vectors": [[...], ...]}`.
#[derive(Debug, Clone)]
pub struct RemoteEmbeddingProvider {
    http: Http,
}

impl RemoteEmbeddingProvider {
    pub fn new(endpoint: EndpointConfig) -> Result<Self, RemoteError> {
        Ok(Self { http: Http::new(endpoint)? })
    }
}

#[derive(Deserialize)]
struct VectorsReply {
    vectors: Vec<Vec<f64>>,
}

impl EmbeddingProvider for RemoteEmbeddingProvider {
    fn embed(&self, text: &str) -> Result<Embedding, ProviderError> {
        Ok(self.embed_batch(&[text])?.remove(0))
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>, ProviderError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let body = json!({ "model": self.http.endpoint.model, "texts": texts });
        let reply = self.http.post_json(&body).map_err(|e| ProviderError::Transport(e.to_string()))?;
        let parsed: VectorsReply = serde_json::from_value(reply).map_err(|e| ProviderError::Invalid(e.to_string()))?;
        if parsed.vectors.len() != texts.len() {
            return Err(ProviderError::Count { expected: texts.len(), got: parsed.vectors.len() });
        }
        let dim = parsed.vectors[0].len();
        if dim == 0 || parsed.vectors.iter().any(|v| v.len() != dim || v.iter().any(|x| !x.is_finite())) {
            return Err(ProviderError::Invalid("vectors must be non-empty, finite and of equal length".into()));
        }
        Ok(parsed.vectors.into_iter().map(Embedding::from_raw).collect())
    }
}

/// The outermost `{...}` or `[...]` span of a reply, parsed as JSON.
fn json_span(raw: &str, open: char, close: char) -> Option<Value> {
    let start = raw.find(open)?;
    let end = raw.rfind(close)?;
    (end > start).then(|| serde_json::from_str(&raw[start..=end]).ok()).flatten()
}

fn clamp_logged(name: &str, v: f64) -> f64 {
    let c = v.clamp(0.0, 1.0);
    if c != v {
        log::warn!("assessor score {name} = {v} outside [0, 1]; clamped to {c}");
    }
    c
}

const DIMENSIONS: [&str; 5] =
    ["information_gathering", "specificity", "patient_engagement", "clinical_relevance", "comprehensiveness"];

/// Parses a five-dimension reply, clamping each score into [0, 1].
pub fn parse_quality_reply(raw: &str) -> Result<QualityScores, String> {
    let obj = json_span(raw, '{', '}').ok_or("no JSON object in reply")?;
    let mut dims = [0.0; 5];
    for (slot, name) in dims.iter_mut().zip(DIMENSIONS) {
        let v = obj
            .get(name)
            .and_then(Value::as_f64)
            .filter(|v| v.is_finite())
            .ok_or_else(|| format!("missing or non-numeric {name}"))?;
        *slot = clamp_logged(name, v);
    }
    Ok(QualityScores::new(dims, Provenance::Remote))
}

pub fn parse_relevance_reply(raw: &str) -> Result<f64, String> {
    let obj = json_span(raw, '{', '}').ok_or("no JSON object in reply")?;
    obj.get("relevance")
        .and_then(Value::as_f64)
        .filter(|v| v.is_finite())
        .map(|v| clamp_logged("relevance", v))
        .ok_or_else(|| "missing or non-numeric relevance".to_string())
}

/// Assessor backed by a chat model, optionally falling back to another
/// assessor when the endpoint fails or keeps returning unparseable replies.
#[derive(Clone)]
pub struct RemoteAssessor {
    chat: ChatClient,
    fallback: Option<Arc<dyn QualityAssessor>>,
    parse_attempts: u32,
    max_in_flight: usize,
}

impl RemoteAssessor {
    pub fn new(
        chat: ChatClient,
        fallback: Option<Arc<dyn QualityAssessor>>,
        parse_attempts: u32,
        max_in_flight: usize,
    ) -> Self {
        Self { chat, fallback, parse_attempts: parse_attempts.max(1), max_in_flight: max_in_flight.max(1) }
    }

    fn ask<T>(&self, prompt: &str, parse: impl Fn(&str) -> Result<T, String>) -> Result<T, AssessorError> {
        let mut last = (String::new(), String::new());
        for _ in 0..self.parse_attempts {
            let raw = self.chat.complete(prompt).map_err(|e| AssessorError::Transport(e.to_string()))?;
            match parse(&raw) {
                Ok(v) => return Ok(v),
                Err(message) => {
                    log::warn!("unparseable assessor reply: {message}");
                    last = (message, raw);
                }
            }
        }
        Err(AssessorError::Unparseable { attempts: self.parse_attempts, message: last.0, raw: last.1 })
    }

    /// Scores several questions with at most `max_in_flight` concurrent
    /// requests; results keep the input order.
    pub fn assess_batch(&self, items: &[(&str, AssessmentContext<'_>)]) -> Vec<Result<QualityScores, AssessorError>> {
        let mut out = Vec::with_capacity(items.len());
        for chunk in items.chunks(self.max_in_flight) {
            thread::scope(|s| {
                let handles: Vec<_> = chunk.iter().map(|(q, ctx)| s.spawn(move || self.assess(q, ctx))).collect();
                out.extend(handles.into_iter().map(|h| {
                    h.join().unwrap_or_else(|_| Err(AssessorError::Other("assessor worker panicked".into())))
                }));
            });
        }
        out
    }
}

impl QualityAssessor for RemoteAssessor {
    fn assess(&self, question: &str, ctx: &AssessmentContext<'_>) -> Result<QualityScores, AssessorError> {
        let digest = ctx.uncovered_digest();
        let prompt = render_prompt(
            QUALITY_PROMPT,
            &[
                ("chief_complaint", ctx.chief_complaint),
                ("conversation", ctx.conversation),
                ("uncovered", &digest),
                ("question", question),
            ],
        );
        match (self.ask(&prompt, parse_quality_reply), &self.fallback) {
            (Ok(s), _) => Ok(s),
            (Err(e), Some(fb)) => {
                log::warn!("remote assessment failed ({e}); using fallback assessor");
                let mut s = fb.assess(question, ctx)?;
                s.provenance = Provenance::Fallback;
                Ok(s)
            }
            (Err(e), None) => Err(e),
        }
    }

    fn relevance(&self, entity: &ClinicalEntity, question: &str) -> Result<f64, AssessorError> {
        let prompt = render_prompt(
            RELEVANCE_PROMPT,
            &[("entity", &entity.surface), ("category", &entity.category), ("question", question)],
        );
        match (self.ask(&prompt, parse_relevance_reply), &self.fallback) {
            (Ok(v), _) => Ok(v),
            (Err(e), Some(fb)) => {
                log::warn!("remote relevance failed ({e}); using fallback assessor");
                fb.relevance(entity, question)
            }
            (Err(e), None) => Err(e),
        }
    }
}

/// Patient played by a chat model from the case HPI.
pub struct RemotePatient {
    chat: ChatClient,
    hpi: String,
    cap: usize,
}

impl Patient for RemotePatient {
    fn respond(
        &self,
        question: &str,
        state: &InterviewState,
        _provider: &dyn EmbeddingProvider,
    ) -> Result<PatientReply, DialogueError> {
        let uncovered: Vec<&str> = state.coverage.uncovered().into_iter().map(|e| e.surface.as_str()).collect();
        let prompt = render_prompt(
            PATIENT_PROMPT,
            &[
                ("hpi", &self.hpi),
                ("cap", &self.cap.to_string()),
                ("uncovered", &uncovered.join("; ")),
                ("conversation", &state.history_text()),
                ("question", question),
            ],
        );
        let answer = self.chat.complete(&prompt).map_err(|e| DialogueError::Patient(e.to_string()))?;
        Ok(PatientReply { answer: answer.trim().to_string(), disclosed: Vec::new() })
    }
}

pub struct RemotePatientFactory {
    pub chat: ChatClient,
    pub disclosure_cap: usize,
}

impl PatientFactory for RemotePatientFactory {
    fn create(&self, case: &VignetteCase, _seed: u64) -> Box<dyn Patient> {
        Box::new(RemotePatient { chat: self.chat.clone(), hpi: case.hpi_text.clone(), cap: self.disclosure_cap })
    }
}

pub struct RemoteHpiGenerator {
    pub chat: ChatClient,
}

impl HpiGenerator for RemoteHpiGenerator {
    fn generate(&self, trajectory: &Trajectory) -> Result<String, EvalError> {
        let h = &trajectory.header;
        let conversation: Vec<String> =
            trajectory.turns.iter().map(|t| format!("Doctor: {}\nPatient: {}", t.question, t.answer)).collect();
        let prompt = render_prompt(
            HPI_PROMPT,
            &[
                ("age", &h.age.to_string()),
                ("sex", &h.sex.to_string()),
                ("chief_complaint", &h.chief_complaint),
                ("conversation", &conversation.join("\n")),
            ],
        );
        let text = self.chat.complete(&prompt).map_err(|e| EvalError::Generation(e.to_string()))?;
        Ok(text.trim().to_string())
    }
}

pub struct RemoteExtractor {
    pub chat: ChatClient,
}

impl StatementExtractor for RemoteExtractor {
    fn extract(&self, text: &str, source: StatementSource) -> Result<Vec<AtomicStatement>, EvalError> {
        if text.trim().is_empty() {
            return Err(EvalError::EmptyText);
        }
        let prompt = render_prompt(EXTRACT_PROMPT, &[("text", text)]);
        let raw = self
            .chat
            .complete(&prompt)
            .map_err(|e| EvalError::Extraction { message: e.to_string(), raw: String::new() })?;
        let items = json_span(&raw, '[', ']')
            .and_then(|v| v.as_array().cloned())
            .ok_or_else(|| EvalError::Extraction { message: "reply is not a JSON array".into(), raw: raw.clone() })?;
        let mut out = Vec::with_capacity(items.len());
        for item in items {
            let s = item.as_str().map(str::trim).filter(|s| !s.is_empty()).ok_or_else(|| EvalError::Extraction {
                message: format!("non-string or empty item {item}"),
                raw: raw.clone(),
            })?;
            out.push(AtomicStatement { text: s.to_string(), source });
        }
        Ok(out)
    }
}
