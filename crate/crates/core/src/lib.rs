//! Scam-baiting engagement engine.
//!
//! Inbound scam mail is triaged, answered with guarded generated replies,
//! sent after human-like delays, and measured per thread. The pieces:
//!
//! - [`mail`]: RFC 822/MIME parsing, threading, reply rendering, mailbox ingestion
//! - [`triage`]: eligibility rules for engaging a message
//! - [`reply`]: preamble levels, refusal and PII guardrails, text generators
//! - [`engagement`]: per-thread state machine, event log, replay, runtime engine
//! - [`metrics`]: per-thread volume statistics, reports, timelines
//! - [`sim`]: scammer personas on a virtual clock
//! - [`gateway`]: configuration, mailbox adapters, control API, service loop
//!
//! Runnable walkthroughs for each capability live in this crate's
//! `examples/` directory (`cargo run -p scambait --example <name>`).

pub mod clock;
pub mod engagement;
pub mod gateway;
pub mod mail;
pub mod metrics;
pub mod reply;
pub mod sim;
pub mod triage;

mod hash;

pub use engagement::{
    admit, replay, sample_delay, step, Admission, DelayDistribution, DelayPolicy, Effect,
    EngagementEvent, EngineConfig, EventBody, ObservationWindow, TerminationReason, ThreadState,
    ThreadStatus,
};
pub use mail::{
    ingest_mailbox, parse_rfc822, render_reply, thread_key_of, Attachment, Direction, DsnStatus,
    MailError, MailMessage, MailboxFormat, Thread,
};
pub use metrics::{
    aggregate_report, compute_thread_stats, count_chars, count_sentences, export_timeline, Report,
    SideStats, ThreadStats, TimelineEvent,
};
pub use reply::{
    build_preamble, detect_refusal, generate_reply, scan_pii, GuardPolicy, Generator,
    GeneratorRequest, PiiFinding, PiiKind, ReplyDraft,
};
pub use triage::{classify, detect_links, detect_reply_request, ReasonCode, TriageVerdict};
