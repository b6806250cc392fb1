//! Deciding whether an inbound message is a plain-text scam worth answering.
//!
//! A message is engaged when it has a plain-text body, is not HTML-only,
//! carries no phishing-style link (an URL in the same sentence as an
//! imperative like "click" or "verify"), does not name a denylisted brand,
//! and asks for a reply. Attachments alone never disqualify a message, and a
//! bare link without an imperative stays eligible.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::mail::MailMessage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ReasonCode {
    PlainTextReplyRequest,
    HtmlOnly,
    PhishingLinkPattern,
    MimicsKnownService,
    NoInteractionRequest,
    EmptyBody,
}

impl ReasonCode {
    fn blocks(self) -> bool {
        !matches!(self, ReasonCode::PlainTextReplyRequest)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriageVerdict {
    pub eligible: bool,
    pub reasons: Vec<ReasonCode>,
}

/// Default contact cues. Multi-word cues match across any whitespace.
pub const DEFAULT_REPLY_CUES: &[&str] = &[
    "reply",
    "respond",
    "contact",
    "write back",
    "get back",
    "send to me",
    "let me know",
    "reach me",
];

/// Imperatives that turn a link into a phishing pattern.
pub const DEFAULT_LINK_IMPERATIVES: &[&str] =
    &["click", "follow", "verify", "login", "log in", "sign in"];

static URL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)https?://\S+").unwrap());
static QUESTION: LazyLock<Regex> = LazyLock::new(|| Regex::new(r#"\?(?:["')\]]*)(?:\s|$)"#).unwrap());
static SENTENCE_BREAK: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[.!?]+(?:\s+|$)|\n[ \t]*\n").unwrap());
static DEFAULT_RULES: LazyLock<TriageRules> = LazyLock::new(TriageRules::default);

/// Word lists behind the heuristics. Configurable; defaults above.
#[derive(Debug, Clone)]
pub struct TriageRules {
    cues: Regex,
    imperatives: Regex,
}

fn word_alternation(words: &[impl AsRef<str>]) -> Regex {
    let alts: Vec<String> = words
        .iter()
        .map(|w| {
            w.as_ref()
                .split_whitespace()
                .map(regex::escape)
                .collect::<Vec<_>>()
                .join(r"\s+")
        })
        .filter(|w| !w.is_empty())
        .collect();
    if alts.is_empty() {
        // matches nothing
        return Regex::new(r"[^\s\S]").unwrap();
    }
    Regex::new(&format!(r"(?i)\b(?:{})\b", alts.join("|"))).expect("escaped alternation")
}

impl TriageRules {
    pub fn new(reply_cues: &[impl AsRef<str>], link_imperatives: &[impl AsRef<str>]) -> Self {
        TriageRules {
            cues: word_alternation(reply_cues),
            imperatives: word_alternation(link_imperatives),
        }
    }

    pub fn detect_reply_request(&self, text: &str) -> bool {
        QUESTION.is_match(text) || self.cues.is_match(text)
    }

    /// True when some sentence holds both an URL and a link imperative.
    pub fn has_phishing_link(&self, text: &str) -> bool {
        sentences(text).any(|s| URL.is_match(s) && self.imperatives.is_match(&URL.replace_all(s, " ")))
    }

    pub fn classify(&self, msg: &MailMessage, brand_denylist: &[impl AsRef<str>]) -> TriageVerdict {
        let text = msg.body_text.as_str();
        let has_text = !text.trim().is_empty();
        let has_html = msg.body_html.as_deref().is_some_and(|h| !h.trim().is_empty());
        let mut reasons = Vec::new();

        if !has_text {
            reasons.push(if has_html {
                ReasonCode::HtmlOnly
            } else {
                ReasonCode::EmptyBody
            });
        } else {
            if self.detect_reply_request(text) {
                reasons.push(ReasonCode::PlainTextReplyRequest);
            } else {
                reasons.push(ReasonCode::NoInteractionRequest);
            }
            if self.has_phishing_link(text) {
                reasons.push(ReasonCode::PhishingLinkPattern);
            }
        }
        if mentions_brand(&msg.subject, text, brand_denylist) {
            reasons.push(ReasonCode::MimicsKnownService);
        }

        let eligible = !reasons.iter().any(|r| r.blocks());
        TriageVerdict { eligible, reasons }
    }
}

impl Default for TriageRules {
    fn default() -> Self {
        TriageRules::new(DEFAULT_REPLY_CUES, DEFAULT_LINK_IMPERATIVES)
    }
}

fn sentences(text: &str) -> impl Iterator<Item = &str> {
    SENTENCE_BREAK.split(text).filter(|s| !s.trim().is_empty())
}

fn mentions_brand(subject: &str, body: &str, denylist: &[impl AsRef<str>]) -> bool {
    let subject = subject.to_lowercase();
    let body = body.to_lowercase();
    denylist.iter().any(|token| {
        let token = token.as_ref().trim().to_lowercase();
        if token.is_empty() {
            return false;
        }
        let re = Regex::new(&format!(r"\b{}\b", regex::escape(&token))).expect("escaped token");
        re.is_match(&subject) || re.is_match(&body)
    })
}

/// Classifies with the default word lists.
pub fn classify(msg: &MailMessage, brand_denylist: &[impl AsRef<str>]) -> TriageVerdict {
    DEFAULT_RULES.classify(msg, brand_denylist)
}

/// Every `http://` or `https://` run up to the next whitespace, in order.
pub fn detect_links(text: &str) -> Vec<String> {
    URL.find_iter(text).map(|m| m.as_str().to_string()).collect()
}

/// True when the text asks a question or uses a contact cue.
pub fn detect_reply_request(text: &str) -> bool {
    DEFAULT_RULES.detect_reply_request(text)
}

/// Reads a newline-separated word list, skipping blanks and `#` comments.
pub fn load_word_list(path: &std::path::Path) -> std::io::Result<Vec<String>> {
    Ok(std::fs::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}
