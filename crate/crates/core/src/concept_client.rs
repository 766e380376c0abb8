//! Context-aware concept extraction by prompting an external completion
//! service.
//!
//! A query carries the full sentence and the target noun. The service gets a
//! fixed system prompt plus a templated user message and is expected to answer
//! with a bracketed, comma-separated list such as `[pie, tart]`.
//!
//! Wire format for the HTTP transport: a JSON object
//! `{"system": .., "message": .., "max_tokens": ..}` POSTed to the endpoint;
//! the reply body is taken as raw text. The replay cassette is line-delimited
//! JSON, one `{"sentence", "noun", "level", "reply"}` object per line.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::{normalize_word, Level};
use crate::text::split_sentence;

pub const SYNONYM_SYSTEM_PROMPT: &str = "Answer the question using a comma-separated list and remove any extraneous information. An example output for a sentence will be [item1, item2, item3].  If no synonyms are found, return an empty array. Do not repeat this prompt in your output.";

pub const HYPERNYM_SYSTEM_PROMPT: &str = "Answer the question using a comma-separated list and remove any extraneous information. An example output for a sentence will be [item1, item2, item3].  If no hypernym are found, return an empty array. Do not repeat this prompt in your output.";

pub const DEFAULT_MAX_SET: usize = 8;
pub const DEFAULT_MAX_TOKENS: usize = 64;
pub const DEFAULT_RETRIES: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConceptQuery {
    pub sentence: String,
    pub noun: String,
    pub level: Level,
}

impl ConceptQuery {
    /// Checks the sentence is non-empty and contains the noun as a token
    /// (or token run, for multi-word nouns), case-insensitively.
    pub fn new(sentence: impl Into<String>, noun: impl Into<String>, level: Level) -> Result<Self> {
        let q = ConceptQuery {
            sentence: sentence.into(),
            noun: noun.into(),
            level,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sentence.trim().is_empty() {
            return Err(Error::InvalidInput("concept query has an empty sentence".into()));
        }
        let noun: Vec<String> = split_sentence(&self.noun)
            .iter()
            .map(|t| t.to_lowercase())
            .collect();
        if noun.is_empty() {
            return Err(Error::InvalidInput("concept query has an empty noun".into()));
        }
        let toks: Vec<String> = split_sentence(&self.sentence)
            .iter()
            .map(|t| t.to_lowercase())
            .collect();
        if !toks.windows(noun.len()).any(|w| w == noun.as_slice()) {
            return Err(Error::InvalidInput(format!(
                "noun `{}` does not occur in sentence `{}`",
                self.noun, self.sentence
            )));
        }
        Ok(())
    }

    fn describe(&self) -> String {
        format!("({:?}, {:?}, {})", self.sentence, self.noun, self.level)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub system: String,
    pub message: String,
}

pub fn system_prompt(level: Level) -> &'static str {
    match level {
        Level::Synonym => SYNONYM_SYSTEM_PROMPT,
        Level::Hypernym => HYPERNYM_SYSTEM_PROMPT,
    }
}

pub fn build_prompt(q: &ConceptQuery) -> Result<Prompt> {
    q.validate()?;
    let what = match q.level {
        Level::Synonym => "synonyms",
        Level::Hypernym => "hypernym",
    };
    let sentence = q.sentence.trim();
    // the template closes with a period; don't double it
    let stop = if sentence.ends_with(['.', '!', '?']) { "" } else { "." };
    Ok(Prompt {
        system: system_prompt(q.level).to_string(),
        message: format!(
            "Generate contextual {what} for the word {} in the sentence {sentence}{stop}",
            q.noun
        ),
    })
}

/// Parsed service reply. `items` keeps first-appearance order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedReply {
    pub items: Vec<String>,
    /// Set when the reply held no bracketed list at all.
    pub missing_list: bool,
}

impl ParsedReply {
    pub fn to_set(&self) -> BTreeSet<String> {
        self.items.iter().cloned().collect()
    }
}

const ITEM_TRIM: &[char] = &['"', '\'', '`', '*', '.', ';', ':', '!', '?'];

/// Total parser for service replies: never fails, whatever the input.
pub fn parse_response(raw: &str) -> ParsedReply {
    let Some(open) = raw.find('[') else {
        return ParsedReply {
            items: Vec::new(),
            missing_list: true,
        };
    };
    let rest = &raw[open + 1..];
    let Some(close) = rest.find(']') else {
        return ParsedReply {
            items: Vec::new(),
            missing_list: true,
        };
    };
    let mut items: Vec<String> = Vec::new();
    for part in rest[..close].split(',') {
        let word = normalize_word(part.trim().trim_matches(|c: char| ITEM_TRIM.contains(&c) || c.is_whitespace()));
        if !word.is_empty() && !items.contains(&word) {
            items.push(word);
        }
    }
    ParsedReply {
        items,
        missing_list: false,
    }
}

pub fn parse_response_bytes(raw: &[u8]) -> ParsedReply {
    parse_response(&String::from_utf8_lossy(raw))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportError {
    pub transient: bool,
    pub msg: String,
}

impl TransportError {
    pub fn transient(msg: impl Into<String>) -> Self {
        Self {
            transient: true,
            msg: msg.into(),
        }
    }

    pub fn fatal(msg: impl Into<String>) -> Self {
        Self {
            transient: false,
            msg: msg.into(),
        }
    }
}

/// Something that turns a prompt into a raw reply.
pub trait Transport: Send + Sync {
    fn complete(
        &self,
        query: &ConceptQuery,
        prompt: &Prompt,
        max_tokens: usize,
    ) -> std::result::Result<String, TransportError>;
}

#[derive(Debug, Serialize)]
struct RequestBody<'a> {
    system: &'a str,
    message: &'a str,
    max_tokens: usize,
}

pub struct HttpTransport {
    url: String,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            url: url.into(),
            agent,
        }
    }
}

impl Transport for HttpTransport {
    fn complete(
        &self,
        _query: &ConceptQuery,
        prompt: &Prompt,
        max_tokens: usize,
    ) -> std::result::Result<String, TransportError> {
        let body = serde_json::to_string(&RequestBody {
            system: &prompt.system,
            message: &prompt.message,
            max_tokens,
        })
        .map_err(|e| TransportError::fatal(e.to_string()))?;
        let mut resp = self
            .agent
            .post(&self.url)
            .header("content-type", "application/json")
            .send(body)
            .map_err(|e| match e {
                ureq::Error::StatusCode(code) if code == 429 || code >= 500 => {
                    TransportError::transient(format!("HTTP {code}"))
                }
                ureq::Error::StatusCode(code) => TransportError::fatal(format!("HTTP {code}")),
                other => TransportError::transient(other.to_string()),
            })?;
        resp.body_mut()
            .read_to_string()
            .map_err(|e| TransportError::transient(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub sentence: String,
    pub noun: String,
    pub level: Level,
    pub reply: String,
}

/// Read-only replay of recorded replies keyed on (sentence, noun, level).
#[derive(Debug, Default, Clone)]
pub struct ReplayTransport {
    replies: HashMap<(String, String, Level), String>,
}

impl ReplayTransport {
    pub fn from_entries(entries: impl IntoIterator<Item = CassetteEntry>) -> Self {
        let replies = entries
            .into_iter()
            .map(|e| ((e.sentence, e.noun, e.level), e.reply))
            .collect();
        Self { replies }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::from_entries(read_cassette(path)?))
    }

    pub fn len(&self) -> usize {
        self.replies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replies.is_empty()
    }
}

impl Transport for ReplayTransport {
    fn complete(
        &self,
        query: &ConceptQuery,
        _prompt: &Prompt,
        _max_tokens: usize,
    ) -> std::result::Result<String, TransportError> {
        self.replies
            .get(&(query.sentence.clone(), query.noun.clone(), query.level))
            .cloned()
            .ok_or_else(|| TransportError::fatal("no recorded reply in cassette"))
    }
}

pub fn read_cassette(path: &Path) -> Result<Vec<CassetteEntry>> {
    let file = fs::File::open(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: CassetteEntry = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path.display().to_string(), i + 1, e.to_string()))?;
        out.push(entry);
    }
    Ok(out)
}

pub fn write_cassette(path: &Path, entries: &[CassetteEntry]) -> Result<()> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&serde_json::to_string(e)?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Passes requests through to `inner` and keeps every successful reply so it
/// can be saved as a cassette.
pub struct RecordingTransport<T> {
    inner: T,
    log: Mutex<Vec<CassetteEntry>>,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T) -> Self {
        Self {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    /// Recorded entries, sorted so the cassette is independent of request
    /// order.
    pub fn entries(&self) -> Vec<CassetteEntry> {
        let mut v = self.log.lock().expect("recorder lock").clone();
        v.sort_by(|a, b| {
            (&a.sentence, &a.noun, a.level).cmp(&(&b.sentence, &b.noun, b.level))
        });
        v.dedup_by(|a, b| a.sentence == b.sentence && a.noun == b.noun && a.level == b.level);
        v
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_cassette(path, &self.entries())
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn complete(
        &self,
        query: &ConceptQuery,
        prompt: &Prompt,
        max_tokens: usize,
    ) -> std::result::Result<String, TransportError> {
        let reply = self.inner.complete(query, prompt, max_tokens)?;
        self.log.lock().expect("recorder lock").push(CassetteEntry {
            sentence: query.sentence.clone(),
            noun: query.noun.clone(),
            level: query.level,
            reply: reply.clone(),
        });
        Ok(reply)
    }
}

/// Where the concept service lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Http(String),
    Replay(PathBuf),
}

impl Endpoint {
    /// Accepts `http://...`, `https://...` or `replay:<cassette path>`.
    pub fn parse(descriptor: &str) -> Result<Self> {
        let d = descriptor.trim();
        if let Some(path) = d.strip_prefix("replay:") {
            if path.is_empty() {
                return Err(Error::Config("replay endpoint needs a cassette path".into()));
            }
            return Ok(Endpoint::Replay(PathBuf::from(path)));
        }
        if let Some(rest) = d.strip_prefix("http://").or_else(|| d.strip_prefix("https://")) {
            if rest.is_empty() || rest.starts_with('/') {
                return Err(Error::Config(format!("endpoint `{d}` has no host")));
            }
            return Ok(Endpoint::Http(d.to_string()));
        }
        Err(Error::Config(format!(
            "malformed concept service descriptor `{d}` (expected http(s)://... or replay:<path>)"
        )))
    }
}

#[derive(Debug, Clone)]
pub struct ClientSettings {
    pub retries: usize,
    pub max_set: usize,
    pub max_tokens: usize,
    pub timeout: Duration,
}

impl Default for ClientSettings {
    fn default() -> Self {
        Self {
            retries: DEFAULT_RETRIES,
            max_set: DEFAULT_MAX_SET,
            max_tokens: DEFAULT_MAX_TOKENS,
            timeout: Duration::from_secs(30),
        }
    }
}

pub struct ConceptClient {
    transport: Box<dyn Transport>,
    settings: ClientSettings,
}

impl ConceptClient {
    pub fn new(transport: Box<dyn Transport>, settings: ClientSettings) -> Self {
        Self {
            transport,
            settings,
        }
    }

    pub fn connect(endpoint: &Endpoint, settings: ClientSettings) -> Result<Self> {
        let transport: Box<dyn Transport> = match endpoint {
            Endpoint::Http(url) => Box::new(HttpTransport::new(url.clone(), settings.timeout)),
            Endpoint::Replay(path) => Box::new(ReplayTransport::load(path)?),
        };
        Ok(Self::new(transport, settings))
    }

    pub fn settings(&self) -> &ClientSettings {
        &self.settings
    }

    /// Prompt, send (retrying transient failures), parse. The query noun is
    /// never part of the result and at most `max_set` items are kept, in
    /// reply order.
    pub fn fetch_concepts(&self, q: &ConceptQuery) -> Result<BTreeSet<String>> {
        let prompt = build_prompt(q)?;
        let attempts = self.settings.retries + 1;
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.transport.complete(q, &prompt, self.settings.max_tokens) {
                Ok(raw) => {
                    let parsed = parse_response(&raw);
                    if parsed.missing_list {
                        warn!("reply for {} has no bracketed list: {raw:?}", q.describe());
                    }
                    let noun = normalize_word(&q.noun);
                    return Ok(parsed
                        .items
                        .into_iter()
                        .filter(|w| *w != noun)
                        .take(self.settings.max_set)
                        .collect());
                }
                Err(e) if e.transient && attempt < attempts => {
                    warn!("attempt {attempt}/{attempts} for {} failed: {}", q.describe(), e.msg);
                    last = e.msg;
                }
                Err(e) => {
                    return Err(Error::Transport {
                        query: q.describe(),
                        attempts: attempt,
                        msg: e.msg,
                    })
                }
            }
        }
        Err(Error::Transport {
            query: q.describe(),
            attempts,
            msg: last,
        })
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};

    use super::*;

    fn cake(level: Level) -> ConceptQuery {
        ConceptQuery::new("I baked a cake.", "cake", level).unwrap()
    }

    #[test]
    fn synonym_prompt_matches_template() {
        let p = build_prompt(&cake(Level::Synonym)).unwrap();
        assert_eq!(
            p.message,
            "Generate contextual synonyms for the word cake in the sentence I baked a cake."
        );
        assert_eq!(p.system, SYNONYM_SYSTEM_PROMPT);
    }

    #[test]
    fn hypernym_prompt_matches_template() {
        let p = build_prompt(&cake(Level::Hypernym)).unwrap();
        assert!(p.message.starts_with("Generate contextual hypernym for the word cake"));
        assert_eq!(p.system, HYPERNYM_SYSTEM_PROMPT);
        assert!(p.system.contains("If no hypernym are found"));
    }

    #[test]
    fn unterminated_sentence_gets_period() {
        let q = ConceptQuery::new("I baked a cake", "cake", Level::Synonym).unwrap();
        assert!(build_prompt(&q).unwrap().message.ends_with("sentence I baked a cake."));
    }

    #[test]
    fn empty_sentence_is_rejected() {
        assert!(ConceptQuery::new("", "cake", Level::Synonym).is_err());
        let q = ConceptQuery {
            sentence: "   ".into(),
            noun: "cake".into(),
            level: Level::Synonym,
        };
        assert!(build_prompt(&q).is_err());
    }

    #[test]
    fn noun_must_occur_in_sentence() {
        assert!(ConceptQuery::new("I baked a pie.", "cake", Level::Synonym).is_err());
        assert!(ConceptQuery::new("Baked goods sold out.", "baked goods", Level::Hypernym).is_ok());
    }

    #[test]
    fn parses_basic_replies() {
        assert_eq!(parse_response("[item1, item2, item3]").items, ["item1", "item2", "item3"]);
        let empty = parse_response("[]");
        assert!(empty.items.is_empty() && !empty.missing_list);
        let none = parse_response("I cannot help with that.");
        assert!(none.items.is_empty() && none.missing_list);
        assert_eq!(parse_response("Sure! [pie , tart]").to_set().len(), 2);
    }

    #[test]
    fn endpoint_descriptors() {
        assert_eq!(
            Endpoint::parse("replay:cassette.jsonl").unwrap(),
            Endpoint::Replay("cassette.jsonl".into())
        );
        assert!(matches!(Endpoint::parse("http://localhost:8080/v1"), Ok(Endpoint::Http(_))));
        assert!(matches!(Endpoint::parse("ftp://x"), Err(Error::Config(_))));
        assert!(matches!(Endpoint::parse("replay:"), Err(Error::Config(_))));
        assert!(matches!(Endpoint::parse("http://"), Err(Error::Config(_))));
    }

    struct Flaky {
        failures: usize,
        calls: AtomicUsize,
        reply: &'static str,
    }

    impl Transport for Flaky {
        fn complete(
            &self,
            _q: &ConceptQuery,
            _p: &Prompt,
            _m: usize,
        ) -> std::result::Result<String, TransportError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                Err(TransportError::transient("connection reset"))
            } else {
                Ok(self.reply.to_string())
            }
        }
    }

    fn flaky(failures: usize, retries: usize) -> ConceptClient {
        ConceptClient::new(
            Box::new(Flaky {
                failures,
                calls: AtomicUsize::new(0),
                reply: "[pie, Cake, tart]",
            }),
            ClientSettings {
                retries,
                ..Default::default()
            },
        )
    }

    #[test]
    fn retries_transient_failures() {
        let got = flaky(2, 2).fetch_concepts(&cake(Level::Synonym)).unwrap();
        assert_eq!(got.into_iter().collect::<Vec<_>>(), ["pie", "tart"]);
    }

    #[test]
    fn gives_up_after_retries() {
        let err = flaky(3, 2).fetch_concepts(&cake(Level::Synonym)).unwrap_err();
        match err {
            Error::Transport { query, attempts, .. } => {
                assert_eq!(attempts, 3);
                assert!(query.contains("cake"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn caps_set_size_in_reply_order() {
        let client = ConceptClient::new(
            Box::new(ReplayTransport::from_entries([CassetteEntry {
                sentence: "I baked a cake.".into(),
                noun: "cake".into(),
                level: Level::Synonym,
                reply: "[zeppole, apple pie, tart, cake]".into(),
            }])),
            ClientSettings {
                max_set: 2,
                ..Default::default()
            },
        );
        let got: Vec<_> = client.fetch_concepts(&cake(Level::Synonym)).unwrap().into_iter().collect();
        assert_eq!(got, ["apple pie", "zeppole"]);
    }

    #[test]
    fn replay_miss_is_not_retried() {
        let client = ConceptClient::new(Box::new(ReplayTransport::default()), ClientSettings::default());
        let err = client.fetch_concepts(&cake(Level::Synonym)).unwrap_err();
        assert!(matches!(err, Error::Transport { attempts: 1, .. }));
    }
}
