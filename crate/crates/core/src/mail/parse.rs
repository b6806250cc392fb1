use std::sync::LazyLock;

use base64::Engine as _;
use chrono::{DateTime, Utc};
use mail_parser::{MessageParser, MimeHeaders, PartType};
use regex::Regex;
use sha2::{Digest, Sha256};

use super::{normalize_address, Attachment, Direction, DsnStatus, MailError, MailMessage};

static DSN_STATUS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?mi)^Status:[ \t]*([245])\.(\d{1,3})\.(\d{1,3})").unwrap());
static DSN_RECIPIENT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?mi)^(?:Final|Original)-Recipient:[ \t]*rfc822[ \t]*;[ \t]*<?([^\s<>]+@[^\s<>]+)>?")
        .unwrap()
});

/// Parses one RFC 822 / MIME message. The result is marked
/// [`Direction::Inbound`]; callers that know better flip it.
///
/// For delivery status notifications (`multipart/report`), `delivery_status`
/// carries the reported status and `thread_key` is the failed recipient, so
/// the bounce lands on the conversation it belongs to.
pub fn parse_rfc822(raw: &[u8]) -> Result<MailMessage, MailError> {
    check_header_block(raw)?;
    let parsed = MessageParser::default()
        .parse(raw)
        .ok_or_else(|| MailError::MalformedMessage("unparseable message".into()))?;

    let date_raw = parsed.header_raw("Date").ok_or(MailError::MissingDate)?;
    let date = parsed
        .date()
        .and_then(|d| DateTime::from_timestamp(d.to_timestamp(), 0))
        .ok_or_else(|| MailError::MalformedMessage(format!("bad Date {:?}", date_raw.trim())))?;

    let from_addr = parsed
        .from()
        .and_then(|a| a.first())
        .and_then(|a| a.address())
        .unwrap_or_default()
        .to_string();
    let to_addr = parsed
        .to()
        .and_then(|a| a.first())
        .and_then(|a| a.address())
        .unwrap_or_default()
        .to_string();

    let id = match parsed.message_id() {
        Some(id) if !id.trim().is_empty() => id.trim().to_string(),
        _ => content_id(raw),
    };
    let in_reply_to = parsed
        .in_reply_to()
        .as_text()
        .map(str::to_string)
        .or_else(|| {
            parsed
                .in_reply_to()
                .as_text_list()
                .and_then(|l| l.first().map(|s| s.to_string()))
        });

    let mut body_text: Option<String> = None;
    let mut body_html: Option<String> = None;
    let mut attachments = Vec::new();
    let mut report = false;
    for (idx, part) in parsed.parts.iter().enumerate() {
        let disposition_attachment = part
            .content_disposition()
            .is_some_and(|cd| cd.ctype().eq_ignore_ascii_case("attachment"));
        let media_type = part
            .content_type()
            .map(|ct| match ct.subtype() {
                Some(sub) => format!("{}/{}", ct.ctype(), sub),
                None => ct.ctype().to_string(),
            })
            .unwrap_or_else(|| "text/plain".to_string())
            .to_ascii_lowercase();
        match &part.body {
            PartType::Multipart(_) => {
                if media_type == "multipart/report" {
                    report = true;
                }
            }
            PartType::Text(text) if !disposition_attachment && media_type == "text/plain" => {
                if body_text.is_none() {
                    body_text = Some(text.to_string());
                }
            }
            PartType::Html(html) if !disposition_attachment => {
                if body_html.is_none() {
                    body_html = Some(html.to_string());
                }
            }
            // the delivery-status report itself is metadata, not an attachment
            _ if report
                && matches!(
                    media_type.as_str(),
                    "message/delivery-status" | "message/global-delivery-status" | "text/rfc822-headers"
                ) => {}
            body => {
                let size_bytes = match body {
                    PartType::Text(t) | PartType::Html(t) => t.len(),
                    PartType::Binary(b) | PartType::InlineBinary(b) => b.len(),
                    _ => part.offset_end.saturating_sub(part.offset_body) as usize,
                } as u64;
                attachments.push(Attachment {
                    filename: part
                        .attachment_name()
                        .map(str::to_string)
                        .unwrap_or_else(|| format!("part-{idx}")),
                    media_type,
                    size_bytes,
                });
            }
        }
    }

    let mut delivery_status = None;
    let mut counterparty = from_addr.clone();
    if report {
        let text = String::from_utf8_lossy(raw);
        if let Some(c) = DSN_STATUS.captures(&text) {
            delivery_status = DsnStatus::new(
                c[1].parse().unwrap_or(5),
                c[2].parse().unwrap_or(0),
                c[3].parse().unwrap_or(0),
            )
            .ok();
        }
        if let Some(c) = DSN_RECIPIENT.captures(&text) {
            counterparty = c[1].to_string();
        }
    }
    let thread_key = normalize_address(&counterparty).ok_or(MailError::MissingAddress)?;

    Ok(MailMessage {
        id,
        thread_key,
        direction: Direction::Inbound,
        from_addr,
        to_addr,
        subject: parsed.subject().unwrap_or_default().to_string(),
        timestamp: date,
        body_text: body_text.unwrap_or_default(),
        body_html,
        attachments,
        in_reply_to,
        delivery_status,
    })
}

/// Rejects input whose header section is not a run of `Name: value` fields
/// (with folded continuations).
fn check_header_block(raw: &[u8]) -> Result<(), MailError> {
    let mut fields = 0usize;
    for line in raw.split(|b| *b == b'\n') {
        let line = line.strip_suffix(b"\r").unwrap_or(line);
        if line.is_empty() {
            break;
        }
        if line[0] == b' ' || line[0] == b'\t' {
            if fields == 0 {
                return Err(MailError::MalformedMessage(
                    "continuation line before any header".into(),
                ));
            }
            continue;
        }
        let Some(colon) = line.iter().position(|b| *b == b':') else {
            return Err(MailError::MalformedMessage(format!(
                "header line without colon: {:?}",
                String::from_utf8_lossy(&line[..line.len().min(60)])
            )));
        };
        let name = &line[..colon];
        if name.is_empty() || !name.iter().all(|b| (33..=126).contains(b)) {
            return Err(MailError::MalformedMessage(format!(
                "invalid header name {:?}",
                String::from_utf8_lossy(name)
            )));
        }
        fields += 1;
    }
    if fields == 0 {
        return Err(MailError::MalformedMessage("no headers".into()));
    }
    Ok(())
}

fn content_id(raw: &[u8]) -> String {
    let digest = Sha256::digest(raw);
    let hex: String = digest.iter().take(16).map(|b| format!("{b:02x}")).collect();
    format!("sha256-{hex}")
}

/// The From/To/Subject/Date header lines of `msg`, CRLF terminated.
pub fn render_headers(msg: &MailMessage) -> String {
    format!(
        "From: {}\r\nTo: {}\r\nSubject: {}\r\nDate: {}\r\n",
        msg.from_addr,
        msg.to_addr,
        encode_header(&msg.subject),
        rfc2822(msg.timestamp)
    )
}

fn rfc2822(t: DateTime<Utc>) -> String {
    t.format("%a, %d %b %Y %H:%M:%S +0000").to_string()
}

fn encode_header(value: &str) -> String {
    if value.is_ascii() {
        value.to_string()
    } else {
        format!(
            "=?utf-8?b?{}?=",
            base64::engine::general_purpose::STANDARD.encode(value.as_bytes())
        )
    }
}

/// Serializes a plain-text message for the wire (CRLF line endings, 8bit).
pub fn to_rfc822(msg: &MailMessage) -> Vec<u8> {
    let mut out = render_headers(msg);
    out.push_str(&format!("Message-ID: <{}>\r\n", msg.id));
    if let Some(parent) = &msg.in_reply_to {
        out.push_str(&format!("In-Reply-To: <{parent}>\r\nReferences: <{parent}>\r\n"));
    }
    out.push_str("MIME-Version: 1.0\r\n");
    out.push_str("Content-Type: text/plain; charset=utf-8\r\n");
    out.push_str("Content-Transfer-Encoding: 8bit\r\n\r\n");
    for line in msg.body_text.lines() {
        out.push_str(line);
        out.push_str("\r\n");
    }
    out.into_bytes()
}
