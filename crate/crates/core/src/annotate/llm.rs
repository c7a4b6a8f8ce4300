//! Chat-completions annotation client with self-consistency voting.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{AnnotationBatch, AnnotationSet, Annotator, Source, Vote};
use crate::error::{CaneError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub n_votes: usize,
    pub temperature: f64,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
    pub parse_retries: usize,
    pub http_retries: usize,
    pub backoff_ms: u64,
    /// Noun used in the task instruction ("paper", "product", ...).
    pub item_noun: String,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://localhost:8000/v1/chat/completions".into(),
            model: "gpt-3.5-turbo".into(),
            api_key_env: "CANE_API_KEY".into(),
            n_votes: 3,
            temperature: 0.7,
            max_in_flight: 4,
            timeout_secs: 60,
            parse_retries: 3,
            http_retries: 3,
            backoff_ms: 500,
            item_noun: "paper".into(),
        }
    }
}

#[derive(Debug)]
pub struct TransportError(pub String);

/// Posts one JSON body and returns the JSON reply.
pub trait ChatTransport: Sync {
    fn post(&self, body: &Value) -> std::result::Result<Value, TransportError>;
}

pub struct HttpTransport {
    agent: ureq::Agent,
    endpoint: String,
    api_key: Option<String>,
}

impl HttpTransport {
    pub fn new(config: &LlmConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        Self {
            agent,
            endpoint: config.endpoint.clone(),
            api_key: std::env::var(&config.api_key_env).ok(),
        }
    }
}

impl ChatTransport for HttpTransport {
    fn post(&self, body: &Value) -> std::result::Result<Value, TransportError> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| TransportError(e.to_string()))?;
        resp.body_mut()
            .read_json::<Value>()
            .map_err(|e| TransportError(e.to_string()))
    }
}

/// Zero-shot annotation prompt: task instruction, category list, node text,
/// and the single-element answer-list format.
pub fn build_prompt(item_noun: &str, classes: &[String], text: &str) -> String {
    format!(
        "You are a model that is especially good at classifying a {item_noun}'s category.\n\
         I will first give you all the possible categories and their explanation.\n\
         Please answer the following question: What is the category of this {item_noun}?\n\n\
         Categories:\n[{}]\n\n\
         Target {item_noun}:\n{text}\n\n\
         Analyze the question step by step. Output your answer together with a confidence ranging from 0 to 100, \
         as a single-element list of Python dicts, and output only the one answer you think is most likely:\n\
         [{{\"answer\": <answer>, \"confidence\": <confidence>}}]",
        classes.join(", ")
    )
}

fn normalize(s: &str) -> String {
    s.chars()
        .filter(|c| !c.is_whitespace() && *c != '_' && *c != '-')
        .flat_map(char::to_lowercase)
        .collect()
}

/// Exact match first, then case/underscore/space-insensitive.
pub fn match_class(answer: &str, classes: &[String]) -> Option<usize> {
    let answer = answer.trim().trim_matches(|c| c == '"' || c == '\'');
    if let Some(i) = classes.iter().position(|c| c == answer) {
        return Some(i);
    }
    let key = normalize(answer);
    classes.iter().position(|c| normalize(c) == key)
}

/// Extracts the last `[{"answer": .., "confidence": ..}]` list from a
/// completion. Python-style single quotes are accepted.
pub fn parse_answer(content: &str, classes: &[String]) -> Option<Vote> {
    let mut end = content.len();
    while let Some(close) = content[..end].rfind(']') {
        if let Some(open) = content[..close].rfind('[') {
            let candidate = &content[open..=close];
            if let Some(v) = parse_list(candidate, classes) {
                return Some(v);
            }
            end = open;
        } else {
            break;
        }
    }
    None
}

fn parse_list(candidate: &str, classes: &[String]) -> Option<Vote> {
    let value: Value = serde_json::from_str(candidate)
        .or_else(|_| serde_json::from_str(&candidate.replace('\'', "\"")))
        .ok()?;
    let first = value.as_array()?.first()?.as_object()?;
    let label = match first.get("answer")? {
        Value::String(s) => match_class(s, classes)?,
        Value::Number(n) => {
            let i = n.as_u64()? as usize;
            (i < classes.len()).then_some(i)?
        }
        _ => return None,
    };
    let confidence = match first.get("confidence") {
        Some(Value::Number(n)) => n.as_f64()?,
        Some(Value::String(s)) => s.trim().trim_end_matches('%').parse().ok()?,
        _ => 0.0,
    };
    Some(Vote { label, confidence })
}

fn completion_text(reply: &Value) -> Option<&str> {
    reply.pointer("/choices/0/message/content")?.as_str()
}

pub struct LlmAnnotator<T: ChatTransport> {
    config: LlmConfig,
    transport: T,
    texts: BTreeMap<usize, String>,
    classes: Vec<String>,
}

enum NodeOutcome {
    Votes(Vec<Vote>),
    Failed,
}

impl<T: ChatTransport> LlmAnnotator<T> {
    pub fn new(config: LlmConfig, transport: T, texts: BTreeMap<usize, String>, classes: Vec<String>) -> Self {
        Self {
            config,
            transport,
            texts,
            classes,
        }
    }

    fn request_body(&self, prompt: &str) -> Value {
        json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "n": 1,
            "temperature": self.config.temperature,
        })
    }

    fn post_with_backoff(&self, body: &Value) -> Result<Value> {
        let mut delay = self.config.backoff_ms;
        let mut last = String::new();
        for attempt in 0..=self.config.http_retries {
            match self.transport.post(body) {
                Ok(v) => return Ok(v),
                Err(TransportError(msg)) => last = msg,
            }
            if attempt < self.config.http_retries {
                thread::sleep(Duration::from_millis(delay));
                delay = delay.saturating_mul(2);
            }
        }
        Err(CaneError::Annotation(format!(
            "{} unreachable after {} attempts: {last}",
            self.config.endpoint,
            self.config.http_retries + 1
        )))
    }

    fn annotate_node(&self, node: usize) -> Result<NodeOutcome> {
        let text = self
            .texts
            .get(&node)
            .ok_or_else(|| CaneError::Annotation(format!("no text for node {node}")))?;
        let body = self.request_body(&build_prompt(&self.config.item_noun, &self.classes, text));
        let mut votes = Vec::with_capacity(self.config.n_votes);
        for _ in 0..self.config.n_votes {
            for _ in 0..=self.config.parse_retries {
                let reply = self.post_with_backoff(&body)?;
                if let Some(v) = completion_text(&reply).and_then(|c| parse_answer(c, &self.classes)) {
                    votes.push(v);
                    break;
                }
            }
        }
        Ok(if votes.is_empty() {
            NodeOutcome::Failed
        } else {
            NodeOutcome::Votes(votes)
        })
    }
}

impl<T: ChatTransport> Annotator for LlmAnnotator<T> {
    /// Runs up to `max_in_flight` nodes concurrently. The result is keyed
    /// by node id, so completion order does not matter.
    fn annotate(&self, nodes: &[usize], probe: bool) -> Result<AnnotationBatch> {
        let next = AtomicUsize::new(0);
        let abort = AtomicBool::new(false);
        let results: Mutex<BTreeMap<usize, Result<NodeOutcome>>> = Mutex::new(BTreeMap::new());
        let workers = self.config.max_in_flight.max(1).min(nodes.len().max(1));
        thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    if abort.load(Ordering::Relaxed) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(&node) = nodes.get(i) else { break };
                    let outcome = self.annotate_node(node);
                    if outcome.is_err() {
                        abort.store(true, Ordering::Relaxed);
                    }
                    results.lock().expect("poisoned").insert(node, outcome);
                });
            }
        });
        let mut batch = AnnotationBatch::default();
        let mut set = AnnotationSet::new();
        for (node, outcome) in results.into_inner().expect("poisoned") {
            match outcome? {
                NodeOutcome::Votes(votes) => set.insert_votes(node, votes, probe, Source::Llm)?,
                NodeOutcome::Failed => batch.failed.push(node),
            }
        }
        batch.annotations = set;
        Ok(batch)
    }
}
