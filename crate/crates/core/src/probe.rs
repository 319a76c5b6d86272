//! In-context-learning probe: ask a chat-completions endpoint to
//! attribute a text to its source model, given labeled exemplars.
//!
//! The prompt template is deterministic and snapshot-pinned; the client
//! retries transport errors and 5xx responses with exponential backoff;
//! answers are parsed by a case-insensitive alias search where the
//! earliest match wins.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::data::Document;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IclExemplar {
    pub text: String,
    pub model_label: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeConfig {
    /// Full URL of a chat-completions-compatible endpoint.
    pub endpoint: String,
    pub model: String,
    pub labels: Vec<String>,
    pub exemplars_per_label: usize,
    pub temperature: f64,
    pub timeout_secs: u64,
    pub max_retries: usize,
    /// Base backoff; doubles per retry.
    pub backoff_ms: u64,
    /// Bounded number of in-flight requests.
    pub concurrency: usize,
    /// Environment variable holding the bearer token.
    pub token_env: String,
    /// Extra aliases per label for answer parsing.
    pub aliases: BTreeMap<String, Vec<String>>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        let mut aliases = BTreeMap::new();
        aliases.insert(
            "chatgpt".to_string(),
            vec!["gpt-4".into(), "gpt-3.5".into(), "gpt".into(), "openai".into()],
        );
        aliases.insert("llama2".to_string(), vec!["llama".into()]);
        aliases.insert("vicuna".to_string(), vec![]);
        Self {
            endpoint: "http://127.0.0.1:8080/v1/chat/completions".into(),
            model: "gpt-4".into(),
            labels: vec!["chatgpt".into(), "llama2".into(), "vicuna".into()],
            exemplars_per_label: 1,
            temperature: 0.0,
            timeout_secs: 30,
            max_retries: 3,
            backoff_ms: 250,
            concurrency: 4,
            token_env: "ATTRIB_PROBE_TOKEN".into(),
            aliases,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.labels.is_empty() {
            return Err(Error::InvalidConfig("probe.labels must not be empty".into()));
        }
        if self.exemplars_per_label == 0 {
            return Err(Error::InvalidConfig(
                "probe.exemplars_per_label must be at least 1".into(),
            ));
        }
        if self.timeout_secs == 0 {
            return Err(Error::InvalidConfig("probe.timeout_secs must be positive".into()));
        }
        if self.concurrency == 0 {
            return Err(Error::InvalidConfig("probe.concurrency must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeResult {
    pub query_id: String,
    /// A label from the configured set, or "unknown".
    pub predicted: String,
    pub raw_response: String,
    pub latency_ms: u64,
    pub attempts: usize,
}

/// Deterministic prompt: instruction, exemplars in given order as
/// Text/Source pairs, then the query with Source left blank.
pub fn build_icl_prompt(
    exemplars: &[IclExemplar],
    query_text: &str,
    labels: &[String],
) -> Result<String> {
    for label in labels {
        if !exemplars.iter().any(|e| &e.model_label == label) {
            return Err(Error::InvalidConfig(format!(
                "no exemplar covers label {label:?}"
            )));
        }
    }
    let mut prompt = String::new();
    prompt.push_str(
        "You are identifying which language model wrote a piece of text.\n",
    );
    prompt.push_str(&format!(
        "The candidate models are: {}.\n",
        labels.join(", ")
    ));
    prompt.push_str(
        "Study the writing style of the examples, then answer with exactly one candidate name.\n\n",
    );
    for exemplar in exemplars {
        prompt.push_str(&format!(
            "Text: {}\nSource: {}\n\n",
            exemplar.text, exemplar.model_label
        ));
    }
    prompt.push_str(&format!("Text: {query_text}\nSource:"));
    Ok(prompt)
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatResponseMessage,
}

#[derive(Deserialize)]
struct ChatResponseMessage {
    content: String,
}

fn agent(config: &ProbeConfig) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
        .http_status_as_error(false)
        .build()
        .into()
}

/// Single-turn chat request with retries and exponential backoff.
/// Returns the assistant text and the number of attempts used.
pub fn query_chat_endpoint(config: &ProbeConfig, prompt: &str) -> Result<(String, usize)> {
    config.validate()?;
    let token = std::env::var(&config.token_env)
        .map_err(|_| Error::MissingToken(config.token_env.clone()))?;
    let agent = agent(config);
    let body = ChatRequest {
        model: &config.model,
        messages: vec![ChatMessage {
            role: "user",
            content: prompt,
        }],
        temperature: config.temperature,
    };
    let mut last_err = String::new();
    let attempts_allowed = config.max_retries.max(1);
    for attempt in 1..=attempts_allowed {
        if attempt > 1 {
            let delay = config.backoff_ms.saturating_mul(1 << (attempt - 2).min(16));
            std::thread::sleep(Duration::from_millis(delay));
        }
        let sent = agent
            .post(&config.endpoint)
            .header("authorization", format!("Bearer {token}"))
            .send_json(&body);
        match sent {
            Ok(mut resp) => {
                let status = resp.status();
                let text = resp
                    .body_mut()
                    .read_to_string()
                    .unwrap_or_else(|e| format!("<unreadable body: {e}>"));
                if status.is_success() {
                    let parsed: ChatResponse = serde_json::from_str(&text)?;
                    let content = parsed
                        .choices
                        .first()
                        .map(|c| c.message.content.clone())
                        .unwrap_or_default();
                    return Ok((content, attempt));
                }
                let excerpt: String = text.chars().take(200).collect();
                last_err = format!("status {status}: {excerpt}");
                if status.is_client_error() {
                    // 4xx are not transient; do not retry.
                    return Err(Error::ProbeFailed {
                        attempts: attempt,
                        msg: last_err,
                    });
                }
            }
            Err(e) => {
                last_err = e.to_string();
            }
        }
    }
    Err(Error::ProbeFailed {
        attempts: attempts_allowed,
        msg: last_err,
    })
}

/// Case-insensitive alias search; the earliest match by position wins,
/// ties broken by label order. No match parses as "unknown".
pub fn parse_attribution(raw: &str, config: &ProbeConfig) -> String {
    let haystack = raw.to_lowercase();
    let mut best: Option<(usize, usize)> = None; // (position, label index)
    for (li, label) in config.labels.iter().enumerate() {
        let mut needles = vec![label.to_lowercase()];
        if let Some(extra) = config.aliases.get(label) {
            needles.extend(extra.iter().map(|a| a.to_lowercase()));
        }
        for needle in needles {
            if needle.is_empty() {
                continue;
            }
            if let Some(pos) = haystack.find(&needle) {
                let candidate = (pos, li);
                if best.map_or(true, |b| candidate < b) {
                    best = Some(candidate);
                }
            }
        }
    }
    match best {
        Some((_, li)) => config.labels[li].clone(),
        None => "unknown".to_string(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeSuiteOutcome {
    /// Percentage of queries whose parsed label equals the true label.
    pub accuracy: f64,
    /// confusion[true_label][predicted_label or "unknown"] = count.
    pub confusion: BTreeMap<String, BTreeMap<String, usize>>,
    pub results: Vec<ProbeResult>,
}

/// Pick `exemplars_per_label` exemplars per label from a pool, in pool
/// order. Errors if coverage is impossible.
pub fn draw_exemplars(
    pool: &[Document],
    class_names: &[String],
    config: &ProbeConfig,
) -> Result<Vec<IclExemplar>> {
    let mut exemplars = Vec::new();
    for label in &config.labels {
        let mut found = 0;
        for doc in pool {
            if &class_names[doc.model_label] == label {
                let text = doc
                    .text
                    .as_ref()
                    .ok_or_else(|| Error::MissingText(doc.id.clone()))?;
                exemplars.push(IclExemplar {
                    text: text.clone(),
                    model_label: label.clone(),
                });
                found += 1;
                if found == config.exemplars_per_label {
                    break;
                }
            }
        }
        if found < config.exemplars_per_label {
            return Err(Error::InvalidConfig(format!(
                "exemplar pool has only {found} documents for label {label:?}, need {}",
                config.exemplars_per_label
            )));
        }
    }
    Ok(exemplars)
}

/// Probe every query document once, with bounded concurrency. Results
/// are aggregated in query order regardless of completion order; when
/// `out_path` is set, whatever completed is persisted as JSON Lines even
/// if the suite aborts.
pub fn run_probe_suite(
    queries: &[Document],
    exemplar_pool: &[Document],
    class_names: &[String],
    config: &ProbeConfig,
    out_path: Option<&Path>,
) -> Result<ProbeSuiteOutcome> {
    config.validate()?;
    if queries.is_empty() {
        return Err(Error::EmptyPool("probe query pool".into()));
    }
    let query_ids: std::collections::HashSet<&str> =
        queries.iter().map(|d| d.id.as_str()).collect();
    if let Some(shared) = exemplar_pool.iter().find(|d| query_ids.contains(d.id.as_str())) {
        return Err(Error::InvalidConfig(format!(
            "exemplar and query pools overlap on document {}",
            shared.id
        )));
    }
    let exemplars = draw_exemplars(exemplar_pool, class_names, config)?;

    let next: Mutex<usize> = Mutex::new(0);
    let slots: Mutex<Vec<Option<std::result::Result<ProbeResult, String>>>> =
        Mutex::new(vec![None; queries.len()]);
    let workers = config.concurrency.min(queries.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = {
                    let mut guard = next.lock().unwrap();
                    if *guard >= queries.len() {
                        return;
                    }
                    let i = *guard;
                    *guard += 1;
                    i
                };
                let doc = &queries[idx];
                let outcome = (|| -> Result<ProbeResult> {
                    let text = doc
                        .text
                        .as_ref()
                        .ok_or_else(|| Error::MissingText(doc.id.clone()))?;
                    let prompt = build_icl_prompt(&exemplars, text, &config.labels)?;
                    let started = Instant::now();
                    let (raw, attempts) = query_chat_endpoint(config, &prompt)?;
                    Ok(ProbeResult {
                        query_id: doc.id.clone(),
                        predicted: parse_attribution(&raw, config),
                        raw_response: raw,
                        latency_ms: started.elapsed().as_millis() as u64,
                        attempts,
                    })
                })();
                slots.lock().unwrap()[idx] = Some(outcome.map_err(|e| e.to_string()));
            });
        }
    });

    let slots = slots.into_inner().unwrap();
    let mut results = Vec::new();
    let mut first_error: Option<String> = None;
    for slot in slots.into_iter() {
        match slot {
            Some(Ok(result)) => results.push(result),
            Some(Err(e)) => {
                if first_error.is_none() {
                    first_error = Some(e);
                }
            }
            None => {}
        }
    }
    if let Some(path) = out_path {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        for result in &results {
            serde_json::to_writer(&mut file, result)?;
            file.write_all(b"\n")?;
        }
        file.flush()?;
    }
    if let Some(msg) = first_error {
        return Err(Error::ProbeFailed {
            attempts: 0,
            msg: format!("suite aborted ({} partial results saved): {msg}", results.len()),
        });
    }

    // Confusion matrix keyed by true label then predicted label.
    let mut confusion: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    let mut correct = 0usize;
    for (doc, result) in queries.iter().zip(&results) {
        let truth = class_names[doc.model_label].clone();
        *confusion
            .entry(truth.clone())
            .or_default()
            .entry(result.predicted.clone())
            .or_default() += 1;
        if result.predicted == truth {
            correct += 1;
        }
    }
    Ok(ProbeSuiteOutcome {
        accuracy: correct as f64 / results.len() as f64 * 100.0,
        confusion,
        results,
    })
}
