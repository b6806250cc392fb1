//! Mail messages, threads and reply rendering.

mod mailbox;
mod parse;

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub use mailbox::{ingest_mailbox, Diagnostic, Ingested, MailboxFormat};
pub use parse::{parse_rfc822, render_headers, to_rfc822};

#[derive(Debug, thiserror::Error)]
pub enum MailError {
    #[error("malformed message: {0}")]
    MalformedMessage(String),
    #[error("message has no Date header")]
    MissingDate,
    #[error("message has no counterparty address")]
    MissingAddress,
    #[error("invalid delivery status code {0:?}")]
    InvalidStatus(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    Inbound,
    Outbound,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Inbound => "Inbound",
            Direction::Outbound => "Outbound",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attachment {
    pub filename: String,
    pub media_type: String,
    pub size_bytes: u64,
}

/// Enhanced SMTP status code `class.subject.detail` (RFC 3463).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DsnStatus {
    pub class_digit: u8,
    pub subject_digit: u16,
    pub detail_digit: u16,
}

impl DsnStatus {
    pub fn new(class_digit: u8, subject_digit: u16, detail_digit: u16) -> Result<Self, MailError> {
        if !matches!(class_digit, 2 | 4 | 5) {
            return Err(MailError::InvalidStatus(format!(
                "{class_digit}.{subject_digit}.{detail_digit}"
            )));
        }
        Ok(DsnStatus {
            class_digit,
            subject_digit,
            detail_digit,
        })
    }

    /// 5.2.1, mailbox disabled.
    pub const MAILBOX_DISABLED: DsnStatus = DsnStatus {
        class_digit: 5,
        subject_digit: 2,
        detail_digit: 1,
    };

    pub fn is_permanent(&self) -> bool {
        self.class_digit == 5
    }

    pub fn is_transient(&self) -> bool {
        self.class_digit == 4
    }
}

impl fmt::Display for DsnStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}.{}.{}",
            self.class_digit, self.subject_digit, self.detail_digit
        )
    }
}

impl FromStr for DsnStatus {
    type Err = MailError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || MailError::InvalidStatus(s.to_string());
        let mut it = s.trim().split('.');
        let (Some(c), Some(sub), Some(d), None) = (it.next(), it.next(), it.next(), it.next())
        else {
            return Err(bad());
        };
        DsnStatus::new(
            c.parse().map_err(|_| bad())?,
            sub.parse().map_err(|_| bad())?,
            d.parse().map_err(|_| bad())?,
        )
    }
}

/// One parsed mail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MailMessage {
    pub id: String,
    pub thread_key: String,
    pub direction: Direction,
    pub from_addr: String,
    pub to_addr: String,
    pub subject: String,
    #[serde(with = "crate::mail::iso_seconds")]
    pub timestamp: DateTime<Utc>,
    pub body_text: String,
    pub body_html: Option<String>,
    pub attachments: Vec<Attachment>,
    pub in_reply_to: Option<String>,
    pub delivery_status: Option<DsnStatus>,
}

impl MailMessage {
    /// Text of the message, falling back to the HTML part when there is no
    /// plain-text body.
    pub fn best_text(&self) -> &str {
        if self.body_text.trim().is_empty() {
            self.body_html.as_deref().unwrap_or("")
        } else {
            &self.body_text
        }
    }

    /// Canonical JSON form used by the event log and the control API.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("message serializes")
    }
}

/// Lowercased, trimmed counterparty address: the sender for inbound mail,
/// the recipient for outbound mail.
pub fn thread_key_of(msg: &MailMessage) -> Result<String, MailError> {
    let addr = match msg.direction {
        Direction::Inbound => &msg.from_addr,
        Direction::Outbound => &msg.to_addr,
    };
    normalize_address(addr).ok_or(MailError::MissingAddress)
}

pub(crate) fn normalize_address(addr: &str) -> Option<String> {
    let mut addr = addr.trim();
    // tolerate a "Name <addr>" form sneaking in
    if let (Some(l), Some(r)) = (addr.rfind('<'), addr.rfind('>')) {
        if l < r {
            addr = addr[l + 1..r].trim();
        }
    }
    if addr.is_empty() {
        None
    } else {
        Some(addr.to_lowercase())
    }
}

/// All messages exchanged with one counterparty, oldest first.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Thread {
    pub thread_key: String,
    pub messages: Vec<MailMessage>,
}

impl Thread {
    pub fn new(thread_key: impl Into<String>) -> Self {
        Thread {
            thread_key: thread_key.into(),
            messages: Vec::new(),
        }
    }

    /// Builds a thread, ordering by timestamp then id.
    pub fn from_messages(thread_key: impl Into<String>, mut messages: Vec<MailMessage>) -> Self {
        sort_messages(&mut messages);
        Thread {
            thread_key: thread_key.into(),
            messages,
        }
    }

    /// Inserts keeping the ordering invariant.
    pub fn push(&mut self, msg: MailMessage) {
        let pos = self
            .messages
            .partition_point(|m| (m.timestamp, &m.id) <= (msg.timestamp, &msg.id));
        self.messages.insert(pos, msg);
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn latest(&self) -> Option<&MailMessage> {
        self.messages.last()
    }

    pub fn latest_inbound(&self) -> Option<&MailMessage> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.direction == Direction::Inbound)
    }

    pub fn first_inbound(&self) -> Option<&MailMessage> {
        self.messages
            .iter()
            .find(|m| m.direction == Direction::Inbound)
    }
}

pub(crate) fn sort_messages(messages: &mut [MailMessage]) {
    messages.sort_by(|a, b| (a.timestamp, &a.id).cmp(&(b.timestamp, &b.id)));
}

/// Lines of `body` that are fresh content, i.e. not quoted from earlier mail.
pub(crate) fn fresh_lines(body: &str) -> impl Iterator<Item = &str> {
    body.lines()
        .filter(|l| !l.trim_start().starts_with('>'))
}

/// Reply body as sent: new text, signature, then the conversation so far
/// quoted newest first, one `"> "` layer per level of nesting.
pub fn render_reply(thread: &Thread, new_body: &str, signature: &str) -> String {
    let mut out = String::with_capacity(new_body.len() + signature.len() + 64);
    out.push_str(new_body);
    out.push_str("\n\n");
    out.push_str(signature);
    out.push_str("\n\n");
    let history: Vec<&MailMessage> = thread.messages.iter().rev().collect();
    for line in quote_history(&history) {
        out.push_str(&line);
        out.push('\n');
    }
    out
}

fn quote_history(newest_first: &[&MailMessage]) -> Vec<String> {
    let Some((head, rest)) = newest_first.split_first() else {
        return Vec::new();
    };
    let mut inner: Vec<String> = fresh_lines(head.best_text())
        .map(|l| l.trim_end_matches('\r').to_string())
        .collect();
    while inner.last().is_some_and(|l| l.trim().is_empty()) {
        inner.pop();
    }
    if !rest.is_empty() {
        inner.push(String::new());
        inner.extend(quote_history(rest));
    }
    inner.into_iter().map(|l| format!("> {l}")).collect()
}

/// Serde helper: ISO-8601 UTC with second resolution, e.g. `2022-11-12T09:30:00Z`.
pub(crate) mod iso_seconds {
    use chrono::{DateTime, SecondsFormat, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.to_rfc3339_opts(SecondsFormat::Secs, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let s = String::deserialize(d)?;
        DateTime::parse_from_rfc3339(&s)
            .map(|t| t.with_timezone(&Utc))
            .map_err(serde::de::Error::custom)
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(t: &Option<DateTime<Utc>>, s: S) -> Result<S::Ok, S::Error> {
            match t {
                Some(t) => super::serialize(t, s),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(
            d: D,
        ) -> Result<Option<DateTime<Utc>>, D::Error> {
            Option::<String>::deserialize(d)?
                .map(|s| {
                    DateTime::parse_from_rfc3339(&s)
                        .map(|t| t.with_timezone(&Utc))
                        .map_err(serde::de::Error::custom)
                })
                .transpose()
        }
    }
}
