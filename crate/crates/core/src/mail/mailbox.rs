use std::fs;
use std::io::{self, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{parse_rfc822, sort_messages, MailError, MailMessage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MailboxFormat {
    Mbox,
    Maildir,
}

/// A store entry that could not be parsed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    /// File path (maildir) or `path#index` (mbox, 1-based).
    pub source: String,
    pub error: String,
}

#[derive(Debug, Default)]
pub struct Ingested {
    /// Sorted by timestamp, ties by id.
    pub messages: Vec<MailMessage>,
    pub diagnostics: Vec<Diagnostic>,
}

impl Ingested {
    pub fn entries(&self) -> usize {
        self.messages.len() + self.diagnostics.len()
    }
}

/// Reads every message of an mbox file or a maildir directory. Individual
/// parse failures are reported as diagnostics; only I/O problems with the
/// store itself are errors.
pub fn ingest_mailbox(path: &Path, format: MailboxFormat) -> Result<Ingested, MailError> {
    let mut out = Ingested::default();
    let mut push = |source: String, raw: &[u8]| match parse_rfc822(raw) {
        Ok(m) => out.messages.push(m),
        Err(e) => out.diagnostics.push(Diagnostic {
            source,
            error: e.to_string(),
        }),
    };
    match format {
        MailboxFormat::Mbox => {
            let file = fs::File::open(path)?;
            let iter = mail_parser::mailbox::mbox::MessageIterator::new(BufReader::new(file));
            for (i, entry) in iter.enumerate() {
                let entry = entry?;
                push(format!("{}#{}", path.display(), i + 1), entry.contents());
            }
        }
        MailboxFormat::Maildir => {
            for file in maildir_files(path)? {
                let raw = fs::read(&file)?;
                push(file.display().to_string(), &raw);
            }
        }
    }
    sort_messages(&mut out.messages);
    Ok(out)
}

/// Message files under `cur/` and `new/`, in name order. `tmp/` holds
/// deliveries in progress and is skipped.
pub(crate) fn maildir_files(root: &Path) -> io::Result<Vec<PathBuf>> {
    if !root.is_dir() {
        return Err(io::Error::new(
            io::ErrorKind::NotFound,
            format!("{} is not a directory", root.display()),
        ));
    }
    let subdirs: Vec<PathBuf> = ["cur", "new"]
        .iter()
        .map(|d| root.join(d))
        .filter(|d| d.is_dir())
        .collect();
    if subdirs.is_empty() {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            format!("{} has no cur/ or new/ directory", root.display()),
        ));
    }
    let mut files = Vec::new();
    for dir in subdirs {
        for entry in fs::read_dir(dir)? {
            let entry = entry?;
            let name = entry.file_name();
            if entry.file_type()?.is_file() && !name.to_string_lossy().starts_with('.') {
                files.push(entry.path());
            }
        }
    }
    files.sort();
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mail(n: u32, day: u32) -> String {
        format!(
            "From: scammer{n}@example.com\nTo: bait@example.org\nSubject: Offer {n}\n\
Date: {day:02} Nov 2022 10:00:00 +0000\nMessage-ID: <m{n}@example.com>\n\nBody {n}?\n"
        )
    }

    fn maildir(root: &Path) {
        for d in ["cur", "new", "tmp"] {
            fs::create_dir_all(root.join(d)).unwrap();
        }
    }

    #[test]
    fn empty_maildir() {
        let dir = tempfile::tempdir().unwrap();
        maildir(dir.path());
        let got = ingest_mailbox(dir.path(), MailboxFormat::Maildir).unwrap();
        assert!(got.messages.is_empty());
        assert!(got.diagnostics.is_empty());
    }

    #[test]
    fn maildir_with_three_messages() {
        let dir = tempfile::tempdir().unwrap();
        maildir(dir.path());
        fs::write(dir.path().join("new/1.eml"), mail(1, 20)).unwrap();
        fs::write(dir.path().join("cur/2.eml:2,S"), mail(2, 13)).unwrap();
        fs::write(dir.path().join("new/3.eml"), mail(3, 15)).unwrap();
        // in-progress delivery is not read
        fs::write(dir.path().join("tmp/4.eml"), mail(4, 16)).unwrap();
        let got = ingest_mailbox(dir.path(), MailboxFormat::Maildir).unwrap();
        let days: Vec<u32> = got
            .messages
            .iter()
            .map(|m| chrono::Datelike::day(&m.timestamp))
            .collect();
        assert_eq!(days, [13, 15, 20]);
        assert!(got.diagnostics.is_empty());
    }

    #[test]
    fn mbox_with_one_corrupt_entry() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("inbox.mbox");
        let body = format!(
            "From scammer1@example.com Sat Nov 12 10:00:00 2022\n{}\n\
From nobody Sat Nov 12 11:00:00 2022\nthis line is not a header\n\nstuff\n\n\
From scammer2@example.com Sat Nov 12 12:00:00 2022\n{}\n",
            mail(1, 14),
            mail(2, 12)
        );
        fs::write(&path, body).unwrap();
        let got = ingest_mailbox(&path, MailboxFormat::Mbox).unwrap();
        assert_eq!(got.messages.len(), 2);
        assert_eq!(got.diagnostics.len(), 1);
        assert!(got.diagnostics[0].source.ends_with("#2"));
        assert!(got.messages[0].timestamp <= got.messages[1].timestamp);
        assert_eq!(got.entries(), 3);
    }

    #[test]
    fn mbox_from_quoting_is_undone() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("inbox.mbox");
        let m = mail(1, 14).replace("Body 1?", "Body\n>From here on");
        fs::write(&path, format!("From a@b Sat Nov 12 10:00:00 2022\n{m}")).unwrap();
        let got = ingest_mailbox(&path, MailboxFormat::Mbox).unwrap();
        assert!(got.messages[0].body_text.contains("\nFrom here on"));
    }

    #[test]
    fn missing_store_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            ingest_mailbox(&dir.path().join("nope"), MailboxFormat::Mbox),
            Err(MailError::Io(_))
        ));
        assert!(matches!(
            ingest_mailbox(&dir.path().join("nope"), MailboxFormat::Maildir),
            Err(MailError::Io(_))
        ));
        // a plain directory without cur/new is not a maildir
        assert!(matches!(
            ingest_mailbox(dir.path(), MailboxFormat::Maildir),
            Err(MailError::Io(_))
        ));
    }
}
