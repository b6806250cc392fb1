//! Mailbox adapters: where inbound mail comes from and outbound mail goes.

use std::collections::{BTreeSet, VecDeque};
use std::fs;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use base64::Engine as _;
use regex::Regex;
use std::sync::LazyLock;

use crate::mail::{ingest_mailbox, parse_rfc822, to_rfc822, DsnStatus, MailError, MailMessage, MailboxFormat};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SendOutcome {
    Delivered,
    /// The server refused the recipient.
    Rejected(DsnStatus),
}

#[derive(Debug, thiserror::Error)]
pub enum MailboxError {
    #[error("mailbox i/o: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Mail(#[from] MailError),
    #[error("protocol: {0}")]
    Protocol(String),
}

/// Source of inbound and sink of outbound mail.
///
/// `fetch` hands out each message once. `send` either delivers, reports a
/// rejection, or fails with an error; it never drops mail silently.
pub trait MailboxAdapter: Send {
    fn fetch(&mut self) -> Result<Vec<MailMessage>, MailboxError>;
    fn send(&mut self, message: &MailMessage) -> Result<SendOutcome, MailboxError>;
}

impl<M: MailboxAdapter + ?Sized> MailboxAdapter for Box<M> {
    fn fetch(&mut self) -> Result<Vec<MailMessage>, MailboxError> {
        (**self).fetch()
    }
    fn send(&mut self, message: &MailMessage) -> Result<SendOutcome, MailboxError> {
        (**self).send(message)
    }
}

fn safe_file_name(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') { c } else { '_' })
        .collect()
}

/// Polls an mbox file or maildir and writes outbound mail as `.eml` files.
pub struct FileMailbox {
    path: PathBuf,
    format: MailboxFormat,
    outbox: PathBuf,
    cursor: Option<PathBuf>,
    seen: BTreeSet<String>,
}

impl FileMailbox {
    /// `cursor`, when given, remembers fetched message ids across restarts.
    pub fn new(path: impl Into<PathBuf>, format: MailboxFormat, outbox: impl Into<PathBuf>, cursor: Option<PathBuf>) -> io::Result<Self> {
        let outbox = outbox.into();
        fs::create_dir_all(&outbox)?;
        let seen = match &cursor {
            Some(c) if c.exists() => fs::read_to_string(c)?.lines().map(str::to_string).collect(),
            _ => BTreeSet::new(),
        };
        Ok(FileMailbox {
            path: path.into(),
            format,
            outbox,
            cursor,
            seen,
        })
    }
}

impl MailboxAdapter for FileMailbox {
    fn fetch(&mut self) -> Result<Vec<MailMessage>, MailboxError> {
        let ingested = ingest_mailbox(&self.path, self.format)?;
        for d in &ingested.diagnostics {
            tracing::warn!(source = %d.source, error = %d.error, "unparseable mail skipped");
        }
        let fresh: Vec<MailMessage> = ingested
            .messages
            .into_iter()
            .filter(|m| !self.seen.contains(&m.id))
            .collect();
        if let (Some(cursor), false) = (&self.cursor, fresh.is_empty()) {
            let mut f = fs::OpenOptions::new().create(true).append(true).open(cursor)?;
            for m in &fresh {
                writeln!(f, "{}", m.id)?;
            }
        }
        self.seen.extend(fresh.iter().map(|m| m.id.clone()));
        Ok(fresh)
    }

    fn send(&mut self, message: &MailMessage) -> Result<SendOutcome, MailboxError> {
        let name = format!("{}-{}.eml", message.timestamp.format("%Y%m%dT%H%M%S"), safe_file_name(&message.id));
        let tmp = self.outbox.join(format!(".{name}.tmp"));
        fs::write(&tmp, to_rfc822(message))?;
        fs::rename(&tmp, self.outbox.join(name))?;
        Ok(SendOutcome::Delivered)
    }
}

/// Connection settings for [`NetMailbox`]. Plain TCP; put a TLS tunnel in
/// front for remote servers.
#[derive(Debug, Clone)]
pub struct NetConfig {
    /// `host:port` of the IMAP server.
    pub imap_addr: String,
    /// `host:port` of the SMTP submission server.
    pub smtp_addr: String,
    pub username: String,
    pub password: Option<String>,
    /// Name announced in EHLO.
    pub helo: String,
    pub timeout: Duration,
}

/// IMAP fetch of new messages by UID and SMTP submission.
pub struct NetMailbox {
    config: NetConfig,
    last_uid: u32,
    cursor: Option<PathBuf>,
}

static SEARCH: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\* SEARCH((?: \d+)*)").unwrap());
static LITERAL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{(\d+)\}\r?\n$").unwrap());
static ENHANCED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\d{3}[ -]([245])\.(\d{1,3})\.(\d{1,3})\b").unwrap());

fn protocol(msg: impl Into<String>) -> MailboxError {
    MailboxError::Protocol(msg.into())
}

fn connect(addr: &str, timeout: Duration) -> io::Result<(BufReader<TcpStream>, TcpStream)> {
    let stream = TcpStream::connect(addr)?;
    stream.set_read_timeout(Some(timeout))?;
    stream.set_write_timeout(Some(timeout))?;
    Ok((BufReader::new(stream.try_clone()?), stream))
}

fn read_line(r: &mut impl BufRead) -> Result<String, MailboxError> {
    let mut line = String::new();
    if r.read_line(&mut line)? == 0 {
        return Err(protocol("connection closed"));
    }
    Ok(line)
}

fn imap_quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

struct Imap {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    tag: u32,
}

/// One untagged response line, with the literal it carried if any.
struct Untagged {
    line: String,
    literal: Option<Vec<u8>>,
}

impl Imap {
    fn command(&mut self, cmd: &str) -> Result<Vec<Untagged>, MailboxError> {
        self.tag += 1;
        let tag = format!("a{}", self.tag);
        write!(self.writer, "{tag} {cmd}\r\n")?;
        let mut out = Vec::new();
        loop {
            let mut line = read_line(&mut self.reader)?;
            if let Some(rest) = line.strip_prefix(&format!("{tag} ")) {
                return if rest.starts_with("OK") {
                    Ok(out)
                } else {
                    Err(protocol(format!("IMAP {}: {}", cmd.split(' ').next().unwrap_or(""), rest.trim_end())))
                };
            }
            let mut literal = None;
            if let Some(c) = LITERAL.captures(&line) {
                let n: usize = c[1].parse().map_err(|_| protocol("bad literal"))?;
                let mut buf = vec![0; n];
                self.reader.read_exact(&mut buf)?;
                literal = Some(buf);
                line.push_str(&read_line(&mut self.reader)?);
            }
            out.push(Untagged { line, literal });
        }
    }
}

impl NetMailbox {
    pub fn new(config: NetConfig, cursor: Option<PathBuf>) -> io::Result<Self> {
        let last_uid = match &cursor {
            Some(c) if c.exists() => fs::read_to_string(c)?.trim().parse().unwrap_or(0),
            _ => 0,
        };
        Ok(NetMailbox { config, last_uid, cursor })
    }

    pub fn last_uid(&self) -> u32 {
        self.last_uid
    }

    fn open_imap(&self) -> Result<Imap, MailboxError> {
        let (mut reader, writer) = connect(&self.config.imap_addr, self.config.timeout)?;
        let greeting = read_line(&mut reader)?;
        if !greeting.starts_with("* OK") {
            return Err(protocol(format!("IMAP greeting: {}", greeting.trim_end())));
        }
        let mut imap = Imap { reader, writer, tag: 0 };
        let password = self.config.password.as_deref().unwrap_or("");
        imap.command(&format!("LOGIN {} {}", imap_quote(&self.config.username), imap_quote(password)))?;
        imap.command("SELECT INBOX")?;
        Ok(imap)
    }

    fn smtp_reply(reader: &mut impl BufRead) -> Result<(u16, String), MailboxError> {
        let mut text = String::new();
        loop {
            let line = read_line(reader)?;
            let code: u16 = line.get(..3).and_then(|c| c.parse().ok()).ok_or_else(|| protocol(format!("SMTP reply {line:?}")))?;
            text.push_str(&line);
            if line.as_bytes().get(3) != Some(&b'-') {
                return Ok((code, text));
            }
        }
    }

    /// The status a refusal reply carries: its enhanced code when present,
    /// otherwise the generic one for the reply class.
    fn rejection(code: u16, text: &str) -> DsnStatus {
        ENHANCED
            .captures(text)
            .and_then(|c| DsnStatus::new(c[1].parse().ok()?, c[2].parse().ok()?, c[3].parse().ok()?).ok())
            .unwrap_or_else(|| DsnStatus::new(if code >= 500 { 5 } else { 4 }, 0, 0).expect("valid class"))
    }
}

impl MailboxAdapter for NetMailbox {
    fn fetch(&mut self) -> Result<Vec<MailMessage>, MailboxError> {
        let mut imap = self.open_imap()?;
        let found = imap.command(&format!("UID SEARCH UID {}:*", self.last_uid + 1))?;
        let mut uids: Vec<u32> = found
            .iter()
            .filter_map(|u| SEARCH.captures(&u.line))
            .flat_map(|c| c[1].split_whitespace().filter_map(|n| n.parse().ok()).collect::<Vec<u32>>())
            .filter(|&uid| uid > self.last_uid)
            .collect();
        uids.sort_unstable();
        let mut out = Vec::new();
        for uid in uids {
            let parts = imap.command(&format!("UID FETCH {uid} BODY.PEEK[]"))?;
            let raw = parts
                .into_iter()
                .find_map(|u| u.literal)
                .ok_or_else(|| protocol(format!("no body for UID {uid}")))?;
            match parse_rfc822(&raw) {
                Ok(m) => out.push(m),
                Err(e) => tracing::warn!(uid, error = %e, "unparseable mail skipped"),
            }
            self.last_uid = uid;
        }
        let _ = imap.command("LOGOUT");
        if let Some(c) = &self.cursor {
            fs::write(c, format!("{}\n", self.last_uid))?;
        }
        Ok(out)
    }

    fn send(&mut self, message: &MailMessage) -> Result<SendOutcome, MailboxError> {
        let (mut r, mut w) = connect(&self.config.smtp_addr, self.config.timeout)?;
        let expect = |got: (u16, String), ok: &[u16], what: &str| -> Result<(u16, String), MailboxError> {
            if ok.contains(&got.0) {
                Ok(got)
            } else {
                Err(protocol(format!("SMTP {what}: {}", got.1.trim_end())))
            }
        };
        expect(Self::smtp_reply(&mut r)?, &[220], "greeting")?;
        write!(w, "EHLO {}\r\n", self.config.helo)?;
        expect(Self::smtp_reply(&mut r)?, &[250], "EHLO")?;
        if let Some(password) = &self.config.password {
            let token = base64::engine::general_purpose::STANDARD
                .encode(format!("\0{}\0{}", self.config.username, password));
            write!(w, "AUTH PLAIN {token}\r\n")?;
            expect(Self::smtp_reply(&mut r)?, &[235], "AUTH")?;
        }
        write!(w, "MAIL FROM:<{}>\r\n", message.from_addr)?;
        expect(Self::smtp_reply(&mut r)?, &[250], "MAIL FROM")?;
        write!(w, "RCPT TO:<{}>\r\n", message.to_addr)?;
        let (code, text) = Self::smtp_reply(&mut r)?;
        if code >= 400 {
            let _ = write!(w, "QUIT\r\n");
            return Ok(SendOutcome::Rejected(Self::rejection(code, &text)));
        }
        write!(w, "DATA\r\n")?;
        expect(Self::smtp_reply(&mut r)?, &[354], "DATA")?;
        let raw = String::from_utf8_lossy(&to_rfc822(message)).into_owned();
        for line in raw.strip_suffix("\r\n").unwrap_or(&raw).split("\r\n") {
            if line.starts_with('.') {
                w.write_all(b".")?;
            }
            w.write_all(line.as_bytes())?;
            w.write_all(b"\r\n")?;
        }
        w.write_all(b".\r\n")?;
        let (code, text) = Self::smtp_reply(&mut r)?;
        let _ = write!(w, "QUIT\r\n");
        if code >= 400 {
            return Ok(SendOutcome::Rejected(Self::rejection(code, &text)));
        }
        Ok(SendOutcome::Delivered)
    }
}

#[derive(Debug, Default)]
struct SimInner {
    inbox: VecDeque<MailMessage>,
    sent: Vec<MailMessage>,
    bounces: Vec<(String, DsnStatus)>,
}

/// In-memory mailbox shared between the service and a driver such as the
/// simulator or a test. Clones share the same mailbox.
#[derive(Debug, Clone, Default)]
pub struct SimMailbox {
    inner: Arc<Mutex<SimInner>>,
}

impl SimMailbox {
    pub fn new() -> Self {
        Self::default()
    }

    /// Queues mail for the next fetch.
    pub fn deliver(&self, message: MailMessage) {
        self.inner.lock().expect("mailbox poisoned").inbox.push_back(message);
    }

    /// Mail to this address is refused with `status`.
    pub fn refuse(&self, address: &str, status: DsnStatus) {
        self.inner
            .lock()
            .expect("mailbox poisoned")
            .bounces
            .push((address.to_lowercase(), status));
    }

    pub fn sent(&self) -> Vec<MailMessage> {
        self.inner.lock().expect("mailbox poisoned").sent.clone()
    }
}

impl MailboxAdapter for SimMailbox {
    fn fetch(&mut self) -> Result<Vec<MailMessage>, MailboxError> {
        Ok(self.inner.lock().expect("mailbox poisoned").inbox.drain(..).collect())
    }

    fn send(&mut self, message: &MailMessage) -> Result<SendOutcome, MailboxError> {
        let mut inner = self.inner.lock().expect("mailbox poisoned");
        let to = message.to_addr.to_lowercase();
        if let Some((_, status)) = inner.bounces.iter().find(|(a, _)| *a == to) {
            return Ok(SendOutcome::Rejected(*status));
        }
        inner.sent.push(message.clone());
        Ok(SendOutcome::Delivered)
    }
}

/// Mailbox kinds that need no network, for `serve` tests and examples.
pub fn file_mailbox_for(data_dir: &Path, path: &Path, format: MailboxFormat, outbox: Option<&Path>) -> io::Result<FileMailbox> {
    let outbox = outbox.map(Path::to_path_buf).unwrap_or_else(|| data_dir.join("outbox"));
    FileMailbox::new(path, format, outbox, Some(data_dir.join("mailbox.cursor")))
}
