//! Per-thread engagement lifecycle.
//!
//! State is event-sourced: [`step`] is a pure transition function and
//! [`replay`] folds it over a thread's log. [`Engine`] is the runtime that
//! owns the logs, runs triage, renders outbound mail and tells the caller
//! what to generate, send and when to wake up.

mod engine;
mod machine;
mod store;

use std::collections::BTreeMap;
use std::time::Duration;

use chrono::{DateTime, TimeDelta, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::hash::Fnv;
use crate::mail::{DsnStatus, MailMessage};
use crate::reply::{PiiFinding, ReplyDraft};
use crate::triage::TriageVerdict;

pub use engine::{Action, Engine, EngineError};
pub use machine::{next_timer, replay, step, thread_from_events, StepError};
pub use store::{EventStore, FileStore, MemoryStore};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("observation window must satisfy collection_start < collection_end <= experiment_end")]
    InvalidWindow,
    #[error("delay policy must satisfy 0 < min_delay <= max_delay")]
    InvalidDelay,
    #[error("{0} must be positive")]
    NonPositive(&'static str),
}

/// Admission and activity interval. First contacts are admitted on
/// `[collection_start, experiment_end)`; nothing is sent at or after
/// `experiment_end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationWindow {
    pub collection_start: DateTime<Utc>,
    pub collection_end: DateTime<Utc>,
    pub experiment_end: DateTime<Utc>,
}

impl ObservationWindow {
    pub fn new(
        collection_start: DateTime<Utc>,
        collection_end: DateTime<Utc>,
        experiment_end: DateTime<Utc>,
    ) -> Result<Self, ConfigError> {
        let w = ObservationWindow {
            collection_start,
            collection_end,
            experiment_end,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.collection_start < self.collection_end && self.collection_end <= self.experiment_end {
            Ok(())
        } else {
            Err(ConfigError::InvalidWindow)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Admission {
    Admit,
    RejectOutsideWindow,
}

/// Whether a first contact is inside the window. `now` is accepted for
/// interface symmetry; admission depends only on the message timestamp.
pub fn admit(msg: &MailMessage, window: &ObservationWindow, _now: DateTime<Utc>) -> Admission {
    if window.collection_start <= msg.timestamp && msg.timestamp < window.experiment_end {
        Admission::Admit
    } else {
        Admission::RejectOutsideWindow
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DelayDistribution {
    LogUniform,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelayPolicy {
    #[serde(with = "human_duration")]
    pub min_delay: Duration,
    #[serde(with = "human_duration")]
    pub max_delay: Duration,
    pub distribution: DelayDistribution,
    #[serde(default, with = "human_duration::option")]
    pub first_reply_override: Option<Duration>,
}

impl Default for DelayPolicy {
    fn default() -> Self {
        DelayPolicy {
            min_delay: Duration::from_secs(15 * 60),
            max_delay: Duration::from_secs(21 * 86_400),
            distribution: DelayDistribution::LogUniform,
            first_reply_override: None,
        }
    }
}

impl DelayPolicy {
    pub fn fixed(delay: Duration) -> Self {
        DelayPolicy {
            min_delay: delay,
            max_delay: delay,
            distribution: DelayDistribution::Fixed,
            first_reply_override: None,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.min_delay.is_zero() || self.min_delay > self.max_delay {
            return Err(ConfigError::InvalidDelay);
        }
        if self.first_reply_override.is_some_and(|d| d.is_zero()) {
            return Err(ConfigError::NonPositive("first_reply_override"));
        }
        Ok(())
    }
}

/// Draws a reply delay. The first-reply override wins when set; otherwise
/// `Fixed` gives `min_delay` and `LogUniform` is uniform in log-space,
/// rounded to whole seconds and kept inside the bounds.
pub fn sample_delay<R: Rng + ?Sized>(policy: &DelayPolicy, rng: &mut R, is_first_reply: bool) -> Duration {
    if is_first_reply {
        if let Some(d) = policy.first_reply_override {
            return d;
        }
    }
    match policy.distribution {
        DelayDistribution::Fixed => policy.min_delay,
        DelayDistribution::LogUniform => {
            let (lo, hi) = (policy.min_delay, policy.max_delay);
            if lo >= hi {
                return lo;
            }
            let (a, b) = (lo.as_secs_f64().ln(), hi.as_secs_f64().ln());
            let u: f64 = rng.random();
            let secs = (a + u * (b - a)).exp().round();
            Duration::from_secs_f64(secs).clamp(lo, hi)
        }
    }
}

/// Seeded RNG for the delay drawn at event `seq` of thread `key`.
pub(crate) fn delay_rng(seed: u64, key: &str, seq: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(Fnv::new().u64(seed).str(key).u64(seq).finish())
}

pub(crate) fn delta(d: Duration) -> TimeDelta {
    TimeDelta::from_std(d).unwrap_or(TimeDelta::MAX)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TerminationReason {
    DeliveryFailedPermanent,
    WindowClosed,
    ScammerSilence,
    ManualStop,
    /// Triage found the first contact not worth answering.
    Ineligible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status")]
pub enum ThreadStatus {
    New,
    DraftPending,
    AwaitingApproval,
    Scheduled { send_at: DateTime<Utc> },
    AwaitingScammer { since: DateTime<Utc> },
    Terminated { reason: TerminationReason },
}

impl ThreadStatus {
    pub fn is_terminated(&self) -> bool {
        matches!(self, ThreadStatus::Terminated { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            ThreadStatus::New => "New",
            ThreadStatus::DraftPending => "DraftPending",
            ThreadStatus::AwaitingApproval => "AwaitingApproval",
            ThreadStatus::Scheduled { .. } => "Scheduled",
            ThreadStatus::AwaitingScammer { .. } => "AwaitingScammer",
            ThreadStatus::Terminated { .. } => "Terminated",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DraftSource {
    Generated,
    /// The guardrail gave up (or the generator failed); the body is empty and
    /// an operator has to write it.
    Exhausted,
    Edited,
}

/// A reply waiting to be sent, with the guardrail bookkeeping behind it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DraftRecord {
    pub id: String,
    pub body: String,
    pub source: DraftSource,
    pub attempts: u32,
    pub preamble_level_used: u8,
    pub refusals_seen: u32,
    pub findings_history: Vec<Vec<PiiFinding>>,
}

impl DraftRecord {
    pub fn new_id(thread_key: &str, seq: u64) -> String {
        format!("d{:016x}", Fnv::new().str(thread_key).u64(seq).finish())
    }

    pub fn from_reply(id: String, draft: ReplyDraft) -> Self {
        DraftRecord {
            id,
            body: draft.body,
            source: DraftSource::Generated,
            attempts: draft.attempts,
            preamble_level_used: draft.preamble_level_used,
            refusals_seen: draft.refusals_seen,
            findings_history: draft.findings_history,
        }
    }

    pub fn exhausted(id: String, draft: Option<ReplyDraft>) -> Self {
        let d = draft.unwrap_or(ReplyDraft {
            body: String::new(),
            attempts: 0,
            preamble_level_used: 1,
            findings_history: Vec::new(),
            refusals_seen: 0,
        });
        DraftRecord {
            id,
            body: String::new(),
            source: DraftSource::Exhausted,
            attempts: d.attempts,
            preamble_level_used: d.preamble_level_used,
            refusals_seen: d.refusals_seen,
            findings_history: d.findings_history,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreadState {
    pub thread_key: String,
    #[serde(flatten)]
    pub status: ThreadStatus,
    pub inbound_count: u32,
    pub outbound_count: u32,
    pub first_reply_at: Option<DateTime<Utc>>,
    pub last_event_at: Option<DateTime<Utc>>,
    pub last_seq: u64,
    pub first_contact_at: Option<DateTime<Utc>>,
    pub draft: Option<DraftRecord>,
    /// Transient delivery failures of the current outbound mail.
    pub transient_failures: u32,
    pub dsn: Option<DsnStatus>,
}

impl Default for ThreadState {
    fn default() -> Self {
        ThreadState::new("")
    }
}

impl ThreadState {
    pub fn new(thread_key: impl Into<String>) -> Self {
        ThreadState {
            thread_key: thread_key.into(),
            status: ThreadStatus::New,
            inbound_count: 0,
            outbound_count: 0,
            first_reply_at: None,
            last_event_at: None,
            last_seq: 0,
            first_contact_at: None,
            draft: None,
            transient_failures: 0,
            dsn: None,
        }
    }

    pub fn termination(&self) -> Option<TerminationReason> {
        match self.status {
            ThreadStatus::Terminated { reason } => Some(reason),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum EventBody {
    InboundReceived { message: MailMessage },
    TriageDecided { verdict: TriageVerdict },
    DraftReady { draft: DraftRecord },
    /// Operator threw the pending draft away and wants a new one.
    DraftRejected {},
    Approved {},
    SendScheduled { send_at: DateTime<Utc> },
    Sent { message: MailMessage },
    DsnReceived { status: DsnStatus },
    TimerFired {},
    TerminatedEvent { reason: TerminationReason },
}

impl EventBody {
    pub fn kind(&self) -> &'static str {
        match self {
            EventBody::InboundReceived { .. } => "InboundReceived",
            EventBody::TriageDecided { .. } => "TriageDecided",
            EventBody::DraftReady { .. } => "DraftReady",
            EventBody::DraftRejected {} => "DraftRejected",
            EventBody::Approved {} => "Approved",
            EventBody::SendScheduled { .. } => "SendScheduled",
            EventBody::Sent { .. } => "Sent",
            EventBody::DsnReceived { .. } => "DsnReceived",
            EventBody::TimerFired {} => "TimerFired",
            EventBody::TerminatedEvent { .. } => "TerminatedEvent",
        }
    }
}

/// One line of a thread's log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngagementEvent {
    pub seq: u64,
    pub at: DateTime<Utc>,
    #[serde(flatten)]
    pub body: EventBody,
}

impl EngagementEvent {
    pub fn new(seq: u64, at: DateTime<Utc>, body: EventBody) -> Self {
        EngagementEvent { seq, at, body }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("event serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Effect {
    RunTriage,
    GenerateDraft,
    EnqueueApproval,
    ScheduleSend(DateTime<Utc>),
    /// Reply body before signature and quoting.
    SendMail(String),
    RecordStats,
    Terminate(TerminationReason),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub window: ObservationWindow,
    pub delay: DelayPolicy,
    /// Delay policies for particular threads, by thread key.
    #[serde(default)]
    pub thread_delays: BTreeMap<String, DelayPolicy>,
    #[serde(with = "human_duration")]
    pub silence_timeout: Duration,
    pub approval_required: bool,
    pub seed: u64,
    pub max_transient_retries: u32,
    #[serde(with = "human_duration")]
    pub transient_backoff: Duration,
    /// Appended below every reply. Starts with the `-- ` separator line.
    pub signature: String,
    pub own_address: String,
    /// Cap on sends per recipient domain per UTC day.
    pub daily_domain_limit: Option<u32>,
}

impl EngineConfig {
    pub fn new(window: ObservationWindow) -> Self {
        EngineConfig {
            window,
            delay: DelayPolicy::default(),
            thread_delays: BTreeMap::new(),
            silence_timeout: Duration::from_secs(30 * 86_400),
            approval_required: false,
            seed: 0,
            max_transient_retries: 3,
            transient_backoff: Duration::from_secs(4 * 3600),
            signature: "-- \nM. Rossi".to_string(),
            own_address: "bait@example.org".to_string(),
            daily_domain_limit: Some(10),
        }
    }

    pub fn delay_for(&self, thread_key: &str) -> &DelayPolicy {
        self.thread_delays.get(thread_key).unwrap_or(&self.delay)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.window.validate()?;
        self.delay.validate()?;
        for p in self.thread_delays.values() {
            p.validate()?;
        }
        if self.silence_timeout.is_zero() {
            return Err(ConfigError::NonPositive("silence_timeout"));
        }
        if self.transient_backoff.is_zero() {
            return Err(ConfigError::NonPositive("transient_backoff"));
        }
        if self.daily_domain_limit == Some(0) {
            return Err(ConfigError::NonPositive("daily_domain_limit"));
        }
        Ok(())
    }
}

/// Serde for durations as humantime strings such as `"15m"` or `"21days"`.
pub(crate) mod human_duration {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&humantime::format_duration(*d).to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let s = String::deserialize(d)?;
        humantime::parse_duration(&s).map_err(serde::de::Error::custom)
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(d: &Option<Duration>, s: S) -> Result<S::Ok, S::Error> {
            match d {
                Some(d) => super::serialize(d, s),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Duration>, D::Error> {
            Option::<String>::deserialize(d)?
                .map(|s| humantime::parse_duration(&s).map_err(serde::de::Error::custom))
                .transpose()
        }
    }

    pub mod vec {
        use super::*;
        use serde::ser::SerializeSeq;

        pub fn serialize<S: Serializer>(ds: &[Duration], s: S) -> Result<S::Ok, S::Error> {
            let mut seq = s.serialize_seq(Some(ds.len()))?;
            for d in ds {
                seq.serialize_element(&humantime::format_duration(*d).to_string())?;
            }
            seq.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Duration>, D::Error> {
            Vec::<String>::deserialize(d)?
                .iter()
                .map(|s| humantime::parse_duration(s).map_err(serde::de::Error::custom))
                .collect()
        }
    }
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;
    use chrono::TimeZone;

    pub fn t(month: u32, day: u32, hour: u32) -> DateTime<Utc> {
        let year = if month >= 11 { 2022 } else { 2023 };
        Utc.with_ymd_and_hms(year, month, day, hour, 0, 0).unwrap()
    }

    pub fn window() -> ObservationWindow {
        ObservationWindow::new(t(11, 12, 0), t(12, 12, 0), t(1, 11, 0)).unwrap()
    }

    pub fn config() -> EngineConfig {
        let mut c = EngineConfig::new(window());
        c.delay = DelayPolicy::fixed(Duration::from_secs(3600));
        c
    }
}
