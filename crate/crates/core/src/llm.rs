//! Prompted LLM baseline: asks a chat model for word-usage suggestions in a
//! JSON object and turns the answer into substitution decisions.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sentence::{match_case, Sentence};
use crate::types::{CandidatePool, SubstitutionDecision};

pub const PROMPT_UNRANKED: &str = "In the following sentence, please give some suggestions to improve word usage. Please give the results with the JSON format of {“original word”: [“suggestion 1”, “suggestion 2”]}. The 'original word' should include all words that can be improved in the sentence, directly extracted from the sentence itself. [s]";

pub const PROMPT_RANKED: &str = "In the following sentence, please give some suggestions to improve word usage. Please give the results with the JSON format of {“original word”: [“suggestion 1”, “suggestion 2”]}. The 'original word' should include all words that can be improved in the sentence, directly extracted from the sentence itself, and the suggestions should be ranked in order of the degree of improvement, from the most effective to the least. [s]";

/// Environment variable holding the API key for [`HttpClient`].
pub const API_KEY_ENV: &str = "SUBRANK_LLM_API_KEY";

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("MALFORMED_RESPONSE: no valid JSON object after {attempts} attempts")]
    MalformedResponse { attempts: usize },
    #[error("CLIENT_ERROR: {0}")]
    Client(String),
    #[error("archive io: {0}")]
    Archive(#[from] std::io::Error),
}

pub fn build_prompt(sentence: &Sentence, ranked: bool) -> String {
    let template = if ranked { PROMPT_RANKED } else { PROMPT_UNRANKED };
    template.replace("[s]", sentence.text())
}

/// Anything that can complete a prompt.
pub trait LlmClient: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, LlmError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClientConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_retries: usize,
    /// Requests per minute; `None` means unlimited.
    pub rate_limit: Option<u32>,
    pub concurrency: usize,
    pub timeout_secs: u64,
    pub archive: Option<PathBuf>,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o".into(),
            temperature: 0.0,
            max_retries: 5,
            rate_limit: None,
            concurrency: 1,
            timeout_secs: 60,
            archive: None,
        }
    }
}

/// OpenAI-compatible chat-completions client.
pub struct HttpClient {
    config: ClientConfig,
    api_key: String,
    agent: ureq::Agent,
    last_call: Mutex<Option<Instant>>,
}

impl HttpClient {
    /// Reads the key from [`API_KEY_ENV`].
    pub fn from_env(config: ClientConfig) -> Result<Self, LlmError> {
        let api_key = std::env::var(API_KEY_ENV).map_err(|_| LlmError::Client(format!("{API_KEY_ENV} is not set")))?;
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build();
        Ok(Self {
            config,
            api_key,
            agent,
            last_call: Mutex::new(None),
        })
    }

    fn throttle(&self) {
        let Some(rpm) = self.config.rate_limit.filter(|&r| r > 0) else {
            return;
        };
        let gap = Duration::from_secs_f64(60.0 / rpm as f64);
        let mut last = self.last_call.lock().expect("rate limiter lock");
        if let Some(t) = *last {
            let elapsed = t.elapsed();
            if elapsed < gap {
                std::thread::sleep(gap - elapsed);
            }
        }
        *last = Some(Instant::now());
    }
}

impl LlmClient for HttpClient {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        self.throttle();
        let body = serde_json::json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [{"role": "user", "content": prompt}],
        });
        let resp: serde_json::Value = self
            .agent
            .post(&self.config.endpoint)
            .set("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(body)
            .map_err(|e| LlmError::Client(e.to_string()))?
            .into_json()
            .map_err(|e| LlmError::Client(e.to_string()))?;
        resp["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| LlmError::Client("response has no choices[0].message.content".into()))
    }
}

/// One request/response exchange, as archived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub sentence: String,
    pub ranked: bool,
    pub attempt: usize,
    pub prompt: String,
    pub response: Option<String>,
    pub valid: bool,
}

/// Append-only JSON-lines log of exchanges.
pub struct Archive {
    file: Mutex<File>,
}

impl Archive {
    pub fn open(path: &Path) -> Result<Self, LlmError> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { file: Mutex::new(file) })
    }

    pub fn record(&self, ex: &Exchange) -> Result<(), LlmError> {
        let mut f = self.file.lock().expect("archive lock");
        writeln!(f, "{}", serde_json::to_string(ex).expect("exchange serializes"))?;
        Ok(())
    }
}

/// Parsed suggestions keyed by a word of the sentence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SuggestionMap {
    pub entries: BTreeMap<String, Vec<String>>,
    pub dropped: Vec<String>,
    pub retry_count: usize,
}

fn parse_object(text: &str) -> Option<serde_json::Map<String, serde_json::Value>> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    if end < start {
        return None;
    }
    let body = &text[start..=end];
    let parsed = serde_json::from_str::<serde_json::Value>(body).ok().or_else(|| {
        let straight = body.replace(['“', '”'], "\"").replace(['‘', '’'], "'");
        serde_json::from_str(&straight).ok()
    })?;
    match parsed {
        serde_json::Value::Object(m) => Some(m),
        _ => None,
    }
}

/// Validates a raw response against the sentence. `None` means malformed.
pub fn parse_response(text: &str, sentence: &Sentence) -> Option<SuggestionMap> {
    let obj = parse_object(text)?;
    let mut out = SuggestionMap::default();
    for (word, value) in obj {
        let suggestions: Vec<String> = match value {
            serde_json::Value::Array(xs) => {
                let mut v = Vec::with_capacity(xs.len());
                for x in xs {
                    v.push(x.as_str()?.trim().to_string());
                }
                v
            }
            serde_json::Value::String(s) => vec![s.trim().to_string()],
            _ => return None,
        };
        let in_sentence = sentence.tokens().iter().any(|t| t.to_lowercase() == word.to_lowercase());
        if !in_sentence {
            log::info!("dropping suggestion key {word:?}: not a token of the sentence");
            out.dropped.push(word);
            continue;
        }
        out.entries.insert(word, suggestions);
    }
    Some(out)
}

/// Sends the prompt until a valid JSON object comes back, at most
/// `max_retries` calls in total.
pub fn prompt_suggestions(
    client: &dyn LlmClient,
    sentence: &Sentence,
    ranked: bool,
    max_retries: usize,
    archive: Option<&Archive>,
) -> Result<SuggestionMap, LlmError> {
    let prompt = build_prompt(sentence, ranked);
    let attempts = max_retries.max(1);
    for attempt in 0..attempts {
        let response = client.complete(&prompt)?;
        let parsed = parse_response(&response, sentence);
        if let Some(a) = archive {
            a.record(&Exchange {
                sentence: sentence.text().to_string(),
                ranked,
                attempt,
                prompt: prompt.clone(),
                response: Some(response),
                valid: parsed.is_some(),
            })?;
        }
        if let Some(mut map) = parsed {
            map.retry_count = attempt;
            return Ok(map);
        }
        log::warn!("malformed response on attempt {} of {attempts}", attempt + 1);
    }
    Err(LlmError::MalformedResponse { attempts })
}

/// Runs [`prompt_suggestions`] over many sentences with at most
/// `concurrency` requests in flight; results keep input order.
pub fn prompt_many(
    client: &dyn LlmClient,
    sentences: &[Arc<Sentence>],
    ranked: bool,
    config: &ClientConfig,
    archive: Option<&Archive>,
) -> Vec<Result<SuggestionMap, LlmError>> {
    let width = config.concurrency.max(1);
    let mut out = Vec::with_capacity(sentences.len());
    for chunk in sentences.chunks(width) {
        let results: Vec<_> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|s| scope.spawn(move || prompt_suggestions(client, s, ranked, config.max_retries, archive)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(LlmError::Client("worker panicked".into()))))
                .collect()
        });
        out.extend(results);
    }
    out
}

/// A per-token decision derived from an LLM answer. `pool` is present only
/// for tokens the model suggested replacements for.
#[derive(Debug, Clone)]
pub struct LlmDecision {
    pub decision: SubstitutionDecision,
    pub pool: Option<CandidatePool>,
}

/// Maps suggestions onto token positions.
///
/// Each key attaches to its first matching token; its suggestions (minus
/// duplicates and the original word) form a pool with probabilities
/// proportional to 1/rank, and the first one becomes the replacement. All
/// other tokens are kept.
pub fn to_decisions(map: &SuggestionMap, sentence: &Arc<Sentence>) -> Vec<LlmDecision> {
    let mut claimed: BTreeMap<usize, &Vec<String>> = BTreeMap::new();
    for (word, suggestions) in &map.entries {
        let w = word.to_lowercase();
        if let Some(pos) = sentence.tokens().iter().position(|t| t.to_lowercase() == w) {
            claimed.entry(pos).or_insert(suggestions);
        }
    }
    (0..sentence.len())
        .map(|pos| {
            let site = sentence.site(pos).expect("position in range");
            let keep = |site| LlmDecision {
                decision: SubstitutionDecision::keep(site, 0.0, 1.0),
                pool: None,
            };
            let Some(suggestions) = claimed.get(&pos) else {
                return keep(site);
            };
            let original = site.original_token().to_lowercase();
            let mut cands: Vec<String> = Vec::new();
            for s in suggestions.iter() {
                let s = s.trim();
                let key = s.to_lowercase();
                if s.is_empty() || key == original || cands.iter().any(|c| c.to_lowercase() == key) {
                    continue;
                }
                cands.push(s.to_string());
            }
            if cands.is_empty() {
                return keep(site);
            }
            let z: f64 = (1..=cands.len()).map(|r| 1.0 / r as f64).sum();
            let probs: Vec<f64> = (1..=cands.len()).map(|r| 1.0 / r as f64 / z).collect();
            let logits = probs.iter().map(|p| p.ln()).collect();
            let pool = CandidatePool::new(site.clone(), cands.clone(), logits, probs.clone(), Some(0.0))
                .expect("pseudo-probabilities are valid");
            let decision = SubstitutionDecision::replace(site.clone(), match_case(site.original_token(), &cands[0]), probs[0], 0.0)
                .expect("first suggestion differs from the original");
            LlmDecision {
                decision,
                pool: Some(pool),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};

    use super::*;
    use crate::sentence::tokenize;
    use crate::types::Action;

    /// Replays canned responses and counts calls.
    struct Scripted {
        replies: Vec<String>,
        calls: AtomicUsize,
    }

    impl Scripted {
        fn new(replies: &[&str]) -> Self {
            Self {
                replies: replies.iter().map(|s| s.to_string()).collect(),
                calls: AtomicUsize::new(0),
            }
        }
    }

    impl LlmClient for Scripted {
        fn complete(&self, _: &str) -> Result<String, LlmError> {
            let i = self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(self.replies[i.min(self.replies.len() - 1)].clone())
        }
    }

    fn sent(t: &str) -> Arc<Sentence> {
        Arc::new(tokenize(t).unwrap())
    }

    #[test]
    fn prompt_substitutes_sentence() {
        let s = sent("The critical role.");
        let p = build_prompt(&s, false);
        assert!(p.ends_with("itself. The critical role."));
        assert!(build_prompt(&s, true).contains("from the most effective to the least. The critical role."));
    }

    #[test]
    fn direct_parse() {
        let s = sent("The critical role.");
        let c = Scripted::new(&[r#"{"critical": ["crucial", "vital"]}"#]);
        let m = prompt_suggestions(&c, &s, true, 5, None).unwrap();
        assert_eq!(m.entries["critical"], ["crucial", "vital"]);
        assert_eq!(m.retry_count, 0);
    }

    #[test]
    fn foreign_word_dropped() {
        let s = sent("The critical role.");
        let m = parse_response(r#"{"critical": ["crucial"], "banana": ["fruit"]}"#, &s).unwrap();
        assert_eq!(m.entries.len(), 1);
        assert_eq!(m.dropped, ["banana"]);
    }

    #[test]
    fn retries_then_succeeds() {
        let s = sent("The critical role.");
        let c = Scripted::new(&["sure! here you go", "{\"critical\": [1, 2", r#"{"critical": ["vital"]}"#]);
        let m = prompt_suggestions(&c, &s, false, 3, None).unwrap();
        assert_eq!(m.retry_count, 2);
        assert_eq!(c.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn gives_up_after_max_retries() {
        let s = sent("The critical role.");
        let c = Scripted::new(&["nope"]);
        assert!(matches!(
            prompt_suggestions(&c, &s, false, 4, None),
            Err(LlmError::MalformedResponse { attempts: 4 })
        ));
        assert_eq!(c.calls.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn fenced_and_curly_json() {
        let s = sent("The critical role.");
        let m = parse_response("```json\n{“critical”: [“crucial”]}\n```", &s).unwrap();
        assert_eq!(m.entries["critical"], ["crucial"]);
    }

    #[test]
    fn decisions() {
        let s = sent("The role and the role.");
        let empty = to_decisions(&SuggestionMap::default(), &s);
        assert!(empty.iter().all(|d| d.decision.action() == Action::Keep));
        let mut map = SuggestionMap::default();
        map.entries.insert("role".into(), vec!["part".into(), "function".into(), "duty".into()]);
        let d = to_decisions(&map, &s);
        assert_eq!(d[1].decision.replacement(), Some("part"));
        assert_eq!(d[4].decision.action(), Action::Keep);
        let pool = d[1].pool.as_ref().unwrap();
        assert_eq!(pool.len(), 3);
        let p = pool.probabilities();
        assert!((p[0] - 6.0 / 11.0).abs() < 1e-12 && (p[1] - 3.0 / 11.0).abs() < 1e-12);
        assert_eq!(d.iter().filter(|x| x.decision.is_replace()).count(), 1);
    }

    #[test]
    fn archive_and_concurrency_keep_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.jsonl");
        let archive = Archive::open(&path).unwrap();
        let c = Scripted::new(&[r#"{"one": ["single"]}"#]);
        let ss: Vec<_> = ["one two", "two one", "one"].iter().map(|t| sent(t)).collect();
        let cfg = ClientConfig {
            concurrency: 2,
            ..ClientConfig::default()
        };
        let out = prompt_many(&c, &ss, false, &cfg, Some(&archive));
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|r| r.as_ref().unwrap().entries.contains_key("one")));
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 3);
    }
}
