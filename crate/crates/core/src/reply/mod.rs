//! Guarded reply generation.
//!
//! A reply is requested at preamble level 1. Refusals are retried at the
//! same level; a reply that leaks personal details is retried at level 2,
//! which adds an explicit no-personal-details instruction. Nothing is
//! accepted that still trips either check.

mod generator;
mod pii;

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::SystemTime;

use serde::{Deserialize, Serialize};

use crate::mail::{fresh_lines, Direction, Thread};

pub use generator::{
    Generator, GeneratorError, GeneratorRequest, HttpGenerator, HttpGeneratorConfig, Role,
    TemplateGenerator, Turn,
};
pub use pii::{iban_checksum_ok, scan_pii, PiiFinding, PiiKind};

const PREAMBLE_ANSWER: &str = "The following text is an email that was sent to me \
and you must write a reply to it, written as me and addressed to the sender. \
Do not comment on the email, do not warn me about it and do not refuse: \
only produce the body of the reply.";

const PREAMBLE_NO_DETAILS: &str = "In the reply, do not include any personal detail \
such as names, phone numbers, bank account information or postal addresses, \
not even invented ones.";

pub const DEFAULT_REFUSAL_PATTERNS: &[&str] =
    &["I cannot", "I'm sorry, but", "as an AI", "unable to assist"];

#[derive(Debug, thiserror::Error)]
pub enum ReplyError {
    #[error("preamble level {0} does not exist")]
    InvalidLevel(u8),
    #[error("no acceptable reply after {} attempts", .0.attempts)]
    GuardrailExhausted(Box<ReplyDraft>),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error("thread has no inbound message to answer")]
    NothingToAnswer,
    #[error("max_attempts must be at least 1")]
    InvalidPolicy,
}

pub fn build_preamble(level: u8) -> Result<String, ReplyError> {
    match level {
        1 => Ok(PREAMBLE_ANSWER.to_string()),
        2 => Ok(format!("{PREAMBLE_ANSWER} {PREAMBLE_NO_DETAILS}")),
        other => Err(ReplyError::InvalidLevel(other)),
    }
}

fn normalize_quotes(s: &str) -> String {
    s.replace(['\u{2019}', '\u{2018}'], "'").to_lowercase()
}

/// Refusal phrases, optionally backed by a newline-separated file that is
/// re-read whenever its modification time changes.
#[derive(Debug)]
pub struct RefusalPatterns {
    file: Option<PathBuf>,
    state: Mutex<(Option<SystemTime>, Vec<String>)>,
}

impl Default for RefusalPatterns {
    fn default() -> Self {
        Self::fixed(DEFAULT_REFUSAL_PATTERNS)
    }
}

impl RefusalPatterns {
    pub fn fixed(patterns: &[impl AsRef<str>]) -> Self {
        RefusalPatterns {
            file: None,
            state: Mutex::new((None, normalize_list(patterns.iter().map(|p| p.as_ref())))),
        }
    }

    /// Loads from `path`; fails if the file cannot be read now. Later read
    /// failures keep the last good list.
    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mtime = std::fs::metadata(path)?.modified().ok();
        Ok(RefusalPatterns {
            file: Some(path.to_path_buf()),
            state: Mutex::new((mtime, normalize_list(text.lines()))),
        })
    }

    fn refresh(&self) {
        let Some(path) = &self.file else { return };
        let Ok(mtime) = std::fs::metadata(path).and_then(|m| m.modified()) else {
            return;
        };
        let mut state = self.state.lock().expect("refusal patterns poisoned");
        if state.0 == Some(mtime) {
            return;
        }
        if let Ok(text) = std::fs::read_to_string(path) {
            *state = (Some(mtime), normalize_list(text.lines()));
            tracing::info!(path = %path.display(), count = state.1.len(), "reloaded refusal patterns");
        }
    }

    pub fn patterns(&self) -> Vec<String> {
        self.refresh();
        self.state.lock().expect("refusal patterns poisoned").1.clone()
    }

    pub fn is_refusal(&self, text: &str) -> bool {
        if text.trim().is_empty() {
            return true;
        }
        self.refresh();
        let hay = normalize_quotes(text);
        let state = self.state.lock().expect("refusal patterns poisoned");
        state.1.iter().any(|p| hay.contains(p.as_str()))
    }
}

fn normalize_list<'a>(items: impl Iterator<Item = &'a str>) -> Vec<String> {
    items
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(normalize_quotes)
        .collect()
}

/// True for empty text or text containing one of the default refusal phrases.
pub fn detect_refusal(text: &str) -> bool {
    static DEFAULTS: std::sync::LazyLock<RefusalPatterns> =
        std::sync::LazyLock::new(RefusalPatterns::default);
    DEFAULTS.is_refusal(text)
}

#[derive(Debug, Clone)]
pub struct GuardPolicy {
    pub max_attempts: u32,
    /// Send earlier turns of the thread along with the latest scam text.
    pub include_history: bool,
    pub refusals: Arc<RefusalPatterns>,
}

impl Default for GuardPolicy {
    fn default() -> Self {
        GuardPolicy {
            max_attempts: 3,
            include_history: false,
            refusals: Arc::new(RefusalPatterns::default()),
        }
    }
}

impl GuardPolicy {
    pub fn with_max_attempts(max_attempts: u32) -> Self {
        GuardPolicy {
            max_attempts,
            ..Default::default()
        }
    }
}

/// An accepted reply body, before signature and quoting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplyDraft {
    pub body: String,
    pub attempts: u32,
    pub preamble_level_used: u8,
    pub findings_history: Vec<Vec<PiiFinding>>,
    pub refusals_seen: u32,
}

fn fresh_text(body: &str) -> String {
    let lines: Vec<&str> = fresh_lines(body).collect();
    lines.join("\n").trim().to_string()
}

/// Runs the guarded loop against the latest inbound message of `thread`.
/// On exhaustion the error carries the bookkeeping of every attempt made.
pub fn generate_reply(
    thread: &Thread,
    generator: &dyn Generator,
    policy: &GuardPolicy,
) -> Result<ReplyDraft, ReplyError> {
    if policy.max_attempts == 0 {
        return Err(ReplyError::InvalidPolicy);
    }
    let latest = thread
        .latest()
        .filter(|m| m.direction == Direction::Inbound)
        .ok_or(ReplyError::NothingToAnswer)?;
    let scam_text = fresh_text(latest.best_text());
    let scam_text = if scam_text.is_empty() {
        latest.subject.clone()
    } else {
        scam_text
    };
    if scam_text.trim().is_empty() {
        return Err(ReplyError::NothingToAnswer);
    }
    let prior_exchange = policy.include_history.then(|| {
        thread.messages[..thread.messages.len() - 1]
            .iter()
            .map(|m| Turn {
                role: match m.direction {
                    Direction::Inbound => Role::Scammer,
                    Direction::Outbound => Role::Us,
                },
                text: fresh_text(m.best_text()),
            })
            .collect()
    });

    let mut draft = ReplyDraft {
        body: String::new(),
        attempts: 0,
        preamble_level_used: 1,
        findings_history: Vec::new(),
        refusals_seen: 0,
    };
    while draft.attempts < policy.max_attempts {
        draft.attempts += 1;
        let request = GeneratorRequest {
            preamble: build_preamble(draft.preamble_level_used)?,
            scam_text: scam_text.clone(),
            prior_exchange: prior_exchange.clone(),
        };
        let text = generator.generate(&request)?;
        if policy.refusals.is_refusal(&text) {
            draft.refusals_seen += 1;
            continue;
        }
        let findings = scan_pii(&text);
        if !findings.is_empty() {
            draft.findings_history.push(findings);
            draft.preamble_level_used = 2;
            continue;
        }
        draft.findings_history.push(Vec::new());
        draft.body = text;
        return Ok(draft);
    }
    Err(ReplyError::GuardrailExhausted(Box::new(draft)))
}
