//! Thread volume statistics, reports and engagement timelines.
//!
//! Lengths are measured on fresh content only: quoted lines and everything
//! from the signature separator on are dropped before counting.

use std::fmt::Write as _;
use std::sync::LazyLock;
use std::time::Duration;

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::engagement::{TerminationReason, ThreadState};
use crate::mail::{Direction, DsnStatus, Thread};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("thread has no messages")]
    EmptyThread,
    #[error("report csv: {0}")]
    Csv(String),
}

/// The part of a body that counts: no quoted lines, nothing from a `--`
/// line onwards, no surrounding whitespace.
pub fn fresh_content(body: &str) -> String {
    let mut kept: Vec<&str> = Vec::new();
    for line in body.split('\n').map(|l| l.trim_end_matches('\r')) {
        if line.trim() == "--" {
            break;
        }
        if line.trim_start().starts_with('>') {
            continue;
        }
        kept.push(line);
    }
    kept.join("\n").trim().to_string()
}

/// Unicode scalar values in the fresh content.
pub fn count_chars(body: &str) -> usize {
    fresh_content(body).chars().count()
}

static SENTENCE_END: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[.!?]+(?:\s+|$)").unwrap());

/// Sentences in the fresh content: runs ending in `.`, `!` or `?` followed
/// by whitespace or the end, plus a trailing unterminated run of two or
/// more words.
pub fn count_sentences(body: &str) -> usize {
    let text = fresh_content(body);
    let mut count = 0;
    let mut start = 0;
    for m in SENTENCE_END.find_iter(&text) {
        if text[start..m.start()].chars().any(char::is_alphanumeric) {
            count += 1;
        }
        start = m.end();
    }
    let words = text[start..]
        .split_whitespace()
        .filter(|w| w.chars().any(char::is_alphanumeric))
        .count();
    if words >= 2 {
        count += 1;
    }
    count
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SideStats {
    pub message_count: usize,
    pub avg_chars: f64,
    pub avg_sentences: f64,
}

impl SideStats {
    fn from_bodies<'a>(bodies: impl Iterator<Item = &'a str>) -> Self {
        let (mut n, mut chars, mut sentences) = (0usize, 0usize, 0usize);
        for b in bodies {
            n += 1;
            chars += count_chars(b);
            sentences += count_sentences(b);
        }
        if n == 0 {
            return SideStats::default();
        }
        SideStats {
            message_count: n,
            avg_chars: chars as f64 / n as f64,
            avg_sentences: sentences as f64 / n as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreadStats {
    pub thread_key: String,
    pub first_contact: Option<DateTime<Utc>>,
    pub total_mails: usize,
    pub scammer: SideStats,
    pub ours: SideStats,
    /// Days from our first reply to the last message of the thread.
    pub engagement_days: f64,
    #[serde(with = "crate::engagement::human_duration::option")]
    pub first_reply_delay: Option<Duration>,
    pub termination: Option<TerminationReason>,
    pub dsn: Option<DsnStatus>,
    /// The scammer wrote again after our first reply.
    pub responded: bool,
}

const SECS_PER_DAY: f64 = 86_400.0;

pub fn compute_thread_stats(thread: &Thread, state: &ThreadState) -> Result<ThreadStats, MetricsError> {
    let first = thread.messages.first().ok_or(MetricsError::EmptyThread)?;
    let last = thread.messages.last().expect("non-empty");
    let bodies = |dir: Direction| {
        thread
            .messages
            .iter()
            .filter(move |m| m.direction == dir)
            .map(|m| m.best_text())
    };
    let scammer = SideStats::from_bodies(bodies(Direction::Inbound));
    let ours = SideStats::from_bodies(bodies(Direction::Outbound));
    let first_contact = thread.first_inbound().map(|m| m.timestamp).or(Some(first.timestamp));
    let first_reply_at = state.first_reply_at.or_else(|| {
        thread
            .messages
            .iter()
            .find(|m| m.direction == Direction::Outbound)
            .map(|m| m.timestamp)
    });
    let engagement_days = first_reply_at.map_or(0.0, |r| {
        ((last.timestamp - r).num_seconds() as f64 / SECS_PER_DAY).max(0.0)
    });
    let responded = first_reply_at.is_some_and(|r| {
        thread
            .messages
            .iter()
            .any(|m| m.direction == Direction::Inbound && m.timestamp > r)
    });
    Ok(ThreadStats {
        thread_key: thread.thread_key.clone(),
        first_contact,
        total_mails: scammer.message_count + ours.message_count,
        scammer,
        ours,
        engagement_days,
        first_reply_delay: first_reply_at
            .zip(first_contact)
            .and_then(|(r, c)| (r - c).to_std().ok()),
        termination: state.termination(),
        dsn: state.dsn,
        responded,
    })
}

/// Whether a thread belongs in a report: something was sent, or it is
/// still going. Dropped first contacts and ineligible mail are left out.
pub fn is_reportable(state: &ThreadState) -> bool {
    state.outbound_count > 0 || !state.status.is_terminated()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub threads: usize,
    /// Mean engagement over threads we replied to and that answered back.
    pub mean_engagement_days: f64,
    pub engaged_threads: usize,
    pub max_thread_length: usize,
    pub dsn_terminated: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ThreadStats>,
    pub summary: Summary,
}

pub const REPORT_CSV_HEADER: &str = "thread_key,total_mails,scammer_n,scammer_avg_chars,scammer_avg_sent,ours_n,ours_avg_chars,ours_avg_sent,engagement_days,dsn";

/// Machine-readable report row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub thread_key: String,
    pub total_mails: usize,
    pub scammer_n: usize,
    pub scammer_avg_chars: f64,
    pub scammer_avg_sent: f64,
    pub ours_n: usize,
    pub ours_avg_chars: f64,
    pub ours_avg_sent: f64,
    pub engagement_days: f64,
    pub dsn: Option<String>,
}

impl From<&ThreadStats> for CsvRow {
    fn from(s: &ThreadStats) -> Self {
        CsvRow {
            thread_key: s.thread_key.clone(),
            total_mails: s.total_mails,
            scammer_n: s.scammer.message_count,
            scammer_avg_chars: s.scammer.avg_chars,
            scammer_avg_sent: s.scammer.avg_sentences,
            ours_n: s.ours.message_count,
            ours_avg_chars: s.ours.avg_chars,
            ours_avg_sent: s.ours.avg_sentences,
            engagement_days: s.engagement_days,
            dsn: s.dsn.map(|d| d.to_string()),
        }
    }
}

/// Rows sorted by first contact, plus summary figures.
pub fn aggregate_report(mut stats: Vec<ThreadStats>) -> Report {
    stats.sort_by(|a, b| {
        (a.first_contact.is_none(), a.first_contact, &a.thread_key)
            .cmp(&(b.first_contact.is_none(), b.first_contact, &b.thread_key))
    });
    let engaged: Vec<f64> = stats
        .iter()
        .filter(|s| s.ours.message_count > 0 && s.responded)
        .map(|s| s.engagement_days)
        .collect();
    let summary = Summary {
        threads: stats.len(),
        mean_engagement_days: if engaged.is_empty() {
            0.0
        } else {
            engaged.iter().sum::<f64>() / engaged.len() as f64
        },
        engaged_threads: engaged.len(),
        max_thread_length: stats.iter().map(|s| s.total_mails).max().unwrap_or(0),
        dsn_terminated: stats
            .iter()
            .filter(|s| s.termination == Some(TerminationReason::DeliveryFailedPermanent))
            .count(),
    };
    Report { rows: stats, summary }
}

/// Report over an engine snapshot, leaving out threads that are not
/// reportable.
pub fn report_from_snapshot(threads: &[(Thread, ThreadState)]) -> Report {
    let stats = threads
        .iter()
        .filter(|(_, s)| is_reportable(s))
        .filter_map(|(t, s)| compute_thread_stats(t, s).ok())
        .collect();
    aggregate_report(stats)
}

/// Nearest integer, ties to even.
pub fn display_round(x: f64) -> i64 {
    x.round_ties_even() as i64
}

impl Report {
    pub fn csv_rows(&self) -> Vec<CsvRow> {
        self.rows.iter().map(CsvRow::from).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        for row in self.csv_rows() {
            w.serialize(row).expect("in-memory csv");
        }
        let body = String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8");
        format!("{REPORT_CSV_HEADER}\n{body}")
    }

    /// Human-readable table with integers rounded for display.
    pub fn to_table(&self) -> String {
        let headers = [
            "#", "thread", "mails", "scam chars", "scam sent", "ours chars", "ours sent", "days", "notes",
        ];
        let mut cells: Vec<Vec<String>> = vec![headers.iter().map(|h| h.to_string()).collect()];
        for (i, s) in self.rows.iter().enumerate() {
            let note = match (s.dsn, s.termination) {
                (Some(d), Some(TerminationReason::DeliveryFailedPermanent)) => format!("Failed ({d})"),
                (_, Some(r)) => format!("{r:?}"),
                (_, None) => String::new(),
            };
            cells.push(vec![
                (i + 1).to_string(),
                s.thread_key.clone(),
                s.total_mails.to_string(),
                display_round(s.scammer.avg_chars).to_string(),
                display_round(s.scammer.avg_sentences).to_string(),
                display_round(s.ours.avg_chars).to_string(),
                display_round(s.ours.avg_sentences).to_string(),
                format!("{:.1}", s.engagement_days),
                note,
            ]);
        }
        let widths: Vec<usize> = (0..headers.len())
            .map(|c| cells.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &cells {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (cell, w))| {
                    if c == 1 || c == 8 {
                        format!("{cell:<w$}")
                    } else {
                        format!("{cell:>w$}")
                    }
                })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        let s = &self.summary;
        let _ = writeln!(
            out,
            "\nthreads: {}  engaged: {}  mean engagement: {:.1} days  longest thread: {} mails  delivery failures: {}",
            s.threads, s.engaged_threads, s.mean_engagement_days, s.max_thread_length, s.dsn_terminated
        );
        out
    }
}

/// Parses the CSV written by [`Report::to_csv`].
pub fn parse_report_csv(text: &str) -> Result<Vec<CsvRow>, MetricsError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r
        .headers()
        .map_err(|e| MetricsError::Csv(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.join(",") != REPORT_CSV_HEADER {
        return Err(MetricsError::Csv(format!("unexpected header {header:?}")));
    }
    r.deserialize()
        .collect::<Result<Vec<CsvRow>, _>>()
        .map_err(|e| MetricsError::Csv(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEvent {
    pub thread_key: String,
    /// Days since the thread's first inbound message.
    pub day_offset: f64,
    pub direction: Direction,
}

pub const TIMELINE_CSV_HEADER: &str = "thread_key,day_offset,direction";

/// One event per message, threads ordered by first contact.
pub fn export_timeline(threads: &[(Thread, ThreadState)]) -> Vec<TimelineEvent> {
    let mut ordered: Vec<&Thread> = threads.iter().map(|(t, _)| t).filter(|t| !t.is_empty()).collect();
    ordered.sort_by_key(|t| (t.first_inbound().or(t.latest()).map(|m| m.timestamp), t.thread_key.clone()));
    let mut out = Vec::new();
    for t in ordered {
        let origin = t.first_inbound().or(t.messages.first()).expect("non-empty").timestamp;
        for m in &t.messages {
            out.push(TimelineEvent {
                thread_key: t.thread_key.clone(),
                day_offset: ((m.timestamp - origin).num_seconds() as f64 / SECS_PER_DAY).max(0.0),
                direction: m.direction,
            });
        }
    }
    out
}

pub fn timeline_csv(events: &[TimelineEvent]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for e in events {
        w.serialize((&e.thread_key, e.day_offset, e.direction.to_string()))
            .expect("in-memory csv");
    }
    let body = String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8");
    format!("{TIMELINE_CSV_HEADER}\n{body}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engagement::ThreadStatus;
    use crate::mail::testing::msg;
    use chrono::TimeDelta;
    use proptest::prelude::*;

    #[test]
    fn char_examples() {
        assert_eq!(count_chars(""), 0);
        assert_eq!(count_chars("Hi\n> old text\n-- \nsig"), 2);
        assert_eq!(count_chars("  a\r\nb  "), 3);
        assert_eq!(count_chars("naïve"), 5);
        assert_eq!(count_chars("x\n  > quoted\ny"), 3);
    }

    #[test]
    fn sentence_examples() {
        assert_eq!(count_sentences(""), 0);
        assert_eq!(count_sentences("Hello. How are you? Fine!"), 3);
        assert_eq!(
            count_sentences(
                "Compliments of the Season. I am happy hearing from you as regards to this process."
            ),
            2
        );
        assert_eq!(count_sentences("Wait... what?! ok"), 2);
        assert_eq!(count_sentences("one"), 0);
        assert_eq!(count_sentences("two words"), 1);
        assert_eq!(count_sentences("Price is 3.5 million."), 1);
        assert_eq!(count_sentences("... !"), 0);
    }

    fn state_with(first_reply_at: Option<DateTime<Utc>>) -> ThreadState {
        let mut s = ThreadState::new("kar@example.com");
        s.status = ThreadStatus::AwaitingScammer { since: Utc::now() };
        s.first_reply_at = first_reply_at;
        s
    }

    #[test]
    fn single_inbound() {
        let t = Thread::from_messages("k", vec![msg("1", Direction::Inbound, "Hello there friend.", 14, 9)]);
        let s = compute_thread_stats(&t, &ThreadState::new("k")).unwrap();
        assert_eq!(s.total_mails, 1);
        assert_eq!(s.engagement_days, 0.0);
        assert_eq!(s.scammer.avg_chars, 19.0);
        assert_eq!(s.ours, SideStats::default());
        assert!(!s.responded);
        assert!(matches!(
            compute_thread_stats(&Thread::new("k"), &ThreadState::new("k")),
            Err(MetricsError::EmptyThread)
        ));
    }

    #[test]
    fn engagement_from_first_reply() {
        let t = Thread::from_messages(
            "k",
            vec![
                msg("1", Direction::Inbound, "a b.", 14, 0),
                msg("2", Direction::Outbound, "c d.", 15, 12),
                msg("3", Direction::Inbound, "e f.", 20, 0),
            ],
        );
        let reply = t.messages[1].timestamp;
        let s = compute_thread_stats(&t, &state_with(Some(reply))).unwrap();
        assert_eq!(s.engagement_days, 4.5);
        assert!(s.responded);
        assert_eq!(s.first_reply_delay, Some(Duration::from_secs(36 * 3600)));
        // without state the first outbound stands in
        let s2 = compute_thread_stats(&t, &ThreadState::new("k")).unwrap();
        assert_eq!(s2.engagement_days, 4.5);
    }

    fn row(key: &str, day: u32, days: f64, responded: bool, mails: usize) -> ThreadStats {
        ThreadStats {
            thread_key: key.into(),
            first_contact: Some(msg("x", Direction::Inbound, "", day, 0).timestamp),
            total_mails: mails,
            scammer: SideStats { message_count: 1, avg_chars: 10.0, avg_sentences: 1.0 },
            ours: SideStats { message_count: 1, avg_chars: 20.5, avg_sentences: 2.5 },
            engagement_days: days,
            first_reply_delay: None,
            termination: None,
            dsn: None,
            responded,
        }
    }

    #[test]
    fn report_sorting_and_summary() {
        let r = aggregate_report(vec![
            row("b", 20, 27.0, true, 10),
            row("a", 14, 6.0, true, 18),
            row("c", 25, 21.0, true, 12),
            row("d", 16, 0.0, false, 2),
        ]);
        let keys: Vec<&str> = r.rows.iter().map(|s| s.thread_key.as_str()).collect();
        assert_eq!(keys, ["a", "d", "b", "c"]);
        assert_eq!(r.summary.engaged_threads, 3);
        assert!((r.summary.mean_engagement_days - 18.0).abs() < 0.5);
        assert_eq!(r.summary.max_thread_length, 18);
        assert_eq!(aggregate_report(vec![]).summary, Summary::default());
    }

    #[test]
    fn csv_round_trip_exact() {
        let mut a = row("a", 14, 6.123456789, true, 18);
        a.scammer.avg_chars = 4266.0 / 9.0;
        a.dsn = Some(DsnStatus::MAILBOX_DISABLED);
        let r = aggregate_report(vec![a.clone()]);
        let csv = r.to_csv();
        assert!(csv.starts_with(REPORT_CSV_HEADER));
        let back = parse_report_csv(&csv).unwrap();
        assert_eq!(back, vec![CsvRow::from(&a)]);
        assert_eq!(back[0].dsn.as_deref(), Some("5.2.1"));
        assert_eq!(aggregate_report(vec![]).to_csv(), format!("{REPORT_CSV_HEADER}\n"));
    }

    #[test]
    fn display_rounding_ties_to_even() {
        assert_eq!(display_round(2.5), 2);
        assert_eq!(display_round(3.5), 4);
        assert_eq!(display_round(473.99), 474);
        let table = aggregate_report(vec![row("a", 14, 6.0, true, 18)]).to_table();
        assert!(table.lines().nth(1).unwrap().split_whitespace().collect::<Vec<_>>()[5..7] == ["20", "2"]);
    }

    #[test]
    fn timeline_offsets() {
        let t = Thread::from_messages(
            "k",
            vec![
                msg("1", Direction::Inbound, "a", 14, 0),
                msg("2", Direction::Outbound, "b", 15, 12),
            ],
        );
        let ev = export_timeline(&[(t, ThreadState::new("k"))]);
        let offs: Vec<f64> = ev.iter().map(|e| e.day_offset).collect();
        assert_eq!(offs, [0.0, 1.5]);
        assert_eq!(timeline_csv(&ev), "thread_key,day_offset,direction\nk,0.0,Inbound\nk,1.5,Outbound\n");
        assert_eq!(timeline_csv(&[]), "thread_key,day_offset,direction\n");
    }

    #[test]
    fn timeline_gaps() {
        let base = msg("0", Direction::Inbound, "a", 14, 0);
        let mut msgs = vec![base.clone()];
        for (i, d) in [0.5, 8.5, 9.0, 25.0].iter().enumerate() {
            let mut m = msg(&format!("{}", i + 1), if i % 2 == 0 { Direction::Outbound } else { Direction::Inbound }, "x", 14, 0);
            m.timestamp = base.timestamp + TimeDelta::seconds((d * 86_400.0) as i64);
            msgs.push(m);
        }
        let ev = export_timeline(&[(Thread::from_messages("k", msgs), ThreadState::new("k"))]);
        let deltas: Vec<f64> = ev.windows(2).map(|w| w[1].day_offset - w[0].day_offset).collect();
        assert!(deltas.contains(&8.0) && deltas.contains(&16.0));
    }

    proptest! {
        #[test]
        fn stripping_idempotent(text in "[a-z .!?>\\-\n\r]{0,80}") {
            let once = fresh_content(&text);
            prop_assert_eq!(fresh_content(&once), once.clone());
            prop_assert_eq!(count_chars(&once), count_chars(&text));
            prop_assert_eq!(count_sentences(&once), count_sentences(&text));
        }
    }
}
