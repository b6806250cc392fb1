use std::collections::{BTreeMap, HashSet};

use chrono::{DateTime, NaiveDate, TimeDelta, Utc};
use serde::Serialize;

use super::{
    next_timer, step, thread_from_events, ConfigError, DraftRecord, DraftSource, Effect,
    EngagementEvent, EngineConfig, EventBody, EventStore, MemoryStore, StepError,
    TerminationReason, ThreadState, ThreadStatus,
};
use crate::hash::Fnv;
use crate::mail::{render_reply, thread_key_of, Direction, DsnStatus, MailError, MailMessage, Thread};
use crate::reply::{scan_pii, PiiFinding, ReplyDraft, ReplyError};
use crate::triage::TriageRules;

/// What the caller has to do after feeding the engine.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Action {
    /// Run the guarded generator on this thread and report back through
    /// [`Engine::draft_ready`].
    Generate { thread_key: String, thread: Thread },
    /// Hand this mail to the mailbox. A delivery failure goes back through
    /// [`Engine::dsn`].
    Send { thread_key: String, message: MailMessage },
    /// Call [`Engine::timer`] for this thread at `at`. Replaces any earlier
    /// timer for the same thread.
    ArmTimer { thread_key: String, at: DateTime<Utc> },
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Step(#[from] StepError),
    #[error("event log: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Mail(#[from] MailError),
    #[error("unknown thread {0}")]
    UnknownThread(String),
    #[error("unknown draft {0}")]
    UnknownDraft(String),
    #[error("draft {0} is not awaiting approval")]
    DraftNotPending(String),
    #[error("edited draft contains personal details")]
    PiiInEdit(Vec<PiiFinding>),
    #[error("edited draft is empty")]
    EmptyDraft,
    #[error("only inbound mail can be fed to the engine")]
    NotInbound,
    #[error("log of {thread_key} does not replay: {error}")]
    Corrupt { thread_key: String, error: StepError },
}

#[derive(Debug, Clone)]
struct Entry {
    state: ThreadState,
    events: Vec<EngagementEvent>,
    seen: HashSet<String>,
}

impl Entry {
    fn new(key: &str) -> Self {
        Entry {
            state: ThreadState::new(key),
            events: Vec::new(),
            seen: HashSet::new(),
        }
    }
}

/// Runtime around [`step`]: persists every event before acting on it and
/// turns effects into [`Action`]s.
pub struct Engine<S: EventStore = MemoryStore> {
    config: EngineConfig,
    store: S,
    triage: TriageRules,
    brands: Vec<String>,
    threads: BTreeMap<String, Entry>,
    domain_sends: BTreeMap<(String, NaiveDate), u32>,
}

fn domain_of(addr: &str) -> String {
    addr.rsplit_once('@').map(|(_, d)| d).unwrap_or(addr).to_lowercase()
}

impl<S: EventStore> Engine<S> {
    /// Validates the config and rebuilds every thread from the store.
    pub fn new(config: EngineConfig, mut store: S) -> Result<Self, EngineError> {
        config.validate()?;
        let mut threads = BTreeMap::new();
        let mut domain_sends = BTreeMap::new();
        for (key, events) in store.load_all()? {
            let mut entry = Entry::new(&key);
            for e in &events {
                entry.state = step(&entry.state, e, &config)
                    .map_err(|error| EngineError::Corrupt {
                        thread_key: key.clone(),
                        error,
                    })?
                    .0;
                match &e.body {
                    EventBody::InboundReceived { message } => {
                        entry.seen.insert(message.id.clone());
                    }
                    EventBody::Sent { message } => {
                        *domain_sends
                            .entry((domain_of(&message.thread_key), e.at.date_naive()))
                            .or_insert(0) += 1;
                    }
                    _ => {}
                }
            }
            entry.events = events;
            threads.insert(key, entry);
        }
        Ok(Engine {
            config,
            store,
            triage: TriageRules::default(),
            brands: Vec::new(),
            threads,
            domain_sends,
        })
    }

    pub fn with_triage(mut self, rules: TriageRules, brands: Vec<String>) -> Self {
        self.triage = rules;
        self.brands = brands;
        self
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn store(&self) -> &S {
        &self.store
    }

    pub fn into_store(self) -> S {
        self.store
    }

    pub fn states(&self) -> impl Iterator<Item = &ThreadState> {
        self.threads.values().map(|e| &e.state)
    }

    pub fn state(&self, thread_key: &str) -> Option<&ThreadState> {
        self.threads.get(thread_key).map(|e| &e.state)
    }

    pub fn events(&self, thread_key: &str) -> Option<&[EngagementEvent]> {
        self.threads.get(thread_key).map(|e| e.events.as_slice())
    }

    pub fn thread(&self, thread_key: &str) -> Option<Thread> {
        self.threads
            .get(thread_key)
            .map(|e| thread_from_events(thread_key, &e.events))
    }

    /// Threads with the mail exchanged so far, for reporting.
    pub fn snapshot(&self) -> Vec<(Thread, ThreadState)> {
        self.threads
            .iter()
            .map(|(k, e)| (thread_from_events(k, &e.events), e.state.clone()))
            .collect()
    }

    /// Drafts waiting for an operator, oldest thread first.
    pub fn queue(&self) -> Vec<(&ThreadState, &DraftRecord)> {
        self.threads
            .values()
            .filter(|e| e.state.status == ThreadStatus::AwaitingApproval)
            .filter_map(|e| e.state.draft.as_ref().map(|d| (&e.state, d)))
            .collect()
    }

    /// Every live thread's next timer.
    pub fn timers(&self) -> Vec<(String, DateTime<Utc>)> {
        self.threads
            .iter()
            .filter_map(|(k, e)| next_timer(&e.state, &self.config).map(|at| (k.clone(), at)))
            .collect()
    }

    fn finish(&self, thread_key: &str, mut actions: Vec<Action>) -> Vec<Action> {
        if let Some(at) = self.state(thread_key).and_then(|s| next_timer(s, &self.config)) {
            actions.push(Action::ArmTimer {
                thread_key: thread_key.to_string(),
                at,
            });
        }
        actions
    }

    fn apply(&mut self, key: &str, at: DateTime<Utc>, body: EventBody) -> Result<Vec<Action>, EngineError> {
        let entry = self
            .threads
            .entry(key.to_string())
            .or_insert_with(|| Entry::new(key));
        let at = entry.state.last_event_at.map_or(at, |prev| prev.max(at));
        let event = EngagementEvent::new(entry.state.last_seq + 1, at, body);
        let (next, effects) = step(&entry.state, &event, &self.config)?;
        self.store.append(key, &event)?;
        if let EventBody::InboundReceived { message } = &event.body {
            entry.seen.insert(message.id.clone());
        }
        let from_schedule = matches!(event.body, EventBody::SendScheduled { .. });
        entry.events.push(event);
        entry.state = next;
        tracing::debug!(thread = key, seq = entry.state.last_seq, status = entry.state.status.name(), "event applied");

        let mut actions = Vec::new();
        for effect in effects {
            match effect {
                Effect::RunTriage => {
                    let verdict = {
                        let entry = &self.threads[key];
                        let thread = thread_from_events(key, &entry.events);
                        let msg = thread.latest_inbound().expect("triage follows an inbound mail");
                        self.triage.classify(msg, &self.brands)
                    };
                    actions.extend(self.apply(key, at, EventBody::TriageDecided { verdict })?);
                }
                Effect::GenerateDraft => {
                    let entry = &self.threads[key];
                    if entry.state.status == ThreadStatus::DraftPending {
                        actions.push(Action::Generate {
                            thread_key: key.to_string(),
                            thread: thread_from_events(key, &entry.events),
                        });
                    }
                }
                Effect::ScheduleSend(send_at) if !from_schedule => {
                    actions.extend(self.apply(key, at, EventBody::SendScheduled { send_at })?);
                }
                Effect::SendMail(body) => {
                    let message = self.render(key, &body, at);
                    *self
                        .domain_sends
                        .entry((domain_of(key), at.date_naive()))
                        .or_insert(0) += 1;
                    actions.extend(self.apply(key, at, EventBody::Sent { message: message.clone() })?);
                    actions.push(Action::Send {
                        thread_key: key.to_string(),
                        message,
                    });
                }
                Effect::Terminate(reason) => {
                    tracing::info!(thread = key, ?reason, "thread terminated");
                }
                _ => {}
            }
        }
        Ok(actions)
    }

    fn render(&self, key: &str, body: &str, at: DateTime<Utc>) -> MailMessage {
        let entry = &self.threads[key];
        let thread = thread_from_events(key, &entry.events);
        let latest = thread.latest_inbound();
        let subject = latest.map(|m| m.subject.trim()).unwrap_or("");
        let subject = if subject.to_lowercase().starts_with("re:") {
            subject.to_string()
        } else {
            format!("Re: {subject}").trim_end().to_string()
        };
        let to_addr = latest.map_or_else(|| key.to_string(), |m| m.from_addr.clone());
        let own_domain = domain_of(&self.config.own_address);
        let id = format!(
            "{:016x}.{}@{own_domain}",
            Fnv::new().u64(self.config.seed).str(key).u64(entry.state.last_seq).finish(),
            entry.state.last_seq
        );
        MailMessage {
            id,
            thread_key: key.to_string(),
            direction: Direction::Outbound,
            from_addr: self.config.own_address.clone(),
            to_addr,
            subject,
            timestamp: at,
            body_text: render_reply(&thread, body, &self.config.signature),
            body_html: None,
            attachments: Vec::new(),
            in_reply_to: latest.map(|m| m.id.clone()),
            delivery_status: None,
        }
    }

    fn live(&self, key: &str) -> Result<&Entry, EngineError> {
        self.threads
            .get(key)
            .ok_or_else(|| EngineError::UnknownThread(key.to_string()))
    }

    /// Feeds a received mail. Delivery reports are routed to [`Self::dsn`];
    /// repeats of an already seen message id and mail for finished threads
    /// are ignored.
    pub fn inbound(&mut self, message: MailMessage, now: DateTime<Utc>) -> Result<Vec<Action>, EngineError> {
        if message.direction != Direction::Inbound {
            return Err(EngineError::NotInbound);
        }
        let key = if message.thread_key.is_empty() {
            thread_key_of(&message)?
        } else {
            message.thread_key.clone()
        };
        if let Some(status) = message.delivery_status {
            return match self.threads.get(&key) {
                Some(_) => self.dsn(&key, status, now),
                None => {
                    tracing::warn!(thread = %key, %status, "delivery report for unknown thread");
                    Ok(Vec::new())
                }
            };
        }
        if let Some(entry) = self.threads.get(&key) {
            if entry.seen.contains(&message.id) {
                return Ok(Vec::new());
            }
            if entry.state.status.is_terminated() {
                tracing::info!(thread = %key, id = %message.id, "mail for a finished thread ignored");
                return Ok(Vec::new());
            }
            if now >= self.config.window.experiment_end {
                let a = self.apply(&key, now, EventBody::TerminatedEvent { reason: TerminationReason::WindowClosed })?;
                return Ok(self.finish(&key, a));
            }
        }
        let mut message = message;
        message.thread_key = key.clone();
        let a = self.apply(&key, now, EventBody::InboundReceived { message })?;
        Ok(self.finish(&key, a))
    }

    /// Reports the generator outcome for a thread waiting on a draft. A
    /// failed generation queues an empty draft for the operator.
    pub fn draft_ready(
        &mut self,
        thread_key: &str,
        result: Result<ReplyDraft, ReplyError>,
        now: DateTime<Utc>,
    ) -> Result<Vec<Action>, EngineError> {
        let entry = self.live(thread_key)?;
        if entry.state.status != ThreadStatus::DraftPending {
            return Ok(self.finish(thread_key, Vec::new()));
        }
        let id = DraftRecord::new_id(thread_key, entry.state.last_seq + 1);
        let draft = match result {
            Ok(d) => DraftRecord::from_reply(id, d),
            Err(ReplyError::GuardrailExhausted(d)) => {
                tracing::warn!(thread = thread_key, attempts = d.attempts, "guardrail exhausted");
                DraftRecord::exhausted(id, Some(*d))
            }
            Err(e) => {
                tracing::warn!(thread = thread_key, error = %e, "generation failed");
                DraftRecord::exhausted(id, None)
            }
        };
        let a = self.apply(thread_key, now, EventBody::DraftReady { draft })?;
        Ok(self.finish(thread_key, a))
    }

    /// Timer callback. Does nothing unless the thread's timer is due.
    pub fn timer(&mut self, thread_key: &str, now: DateTime<Utc>) -> Result<Vec<Action>, EngineError> {
        let entry = self.live(thread_key)?;
        let state = &entry.state;
        let Some(due) = next_timer(state, &self.config) else {
            return Ok(Vec::new());
        };
        if due > now {
            return Ok(self.finish(thread_key, Vec::new()));
        }
        if let (ThreadStatus::Scheduled { .. }, Some(limit)) = (state.status, self.config.daily_domain_limit) {
            let domain = domain_of(thread_key);
            let sent = self.domain_sends.get(&(domain, now.date_naive())).copied().unwrap_or(0);
            if now < self.config.window.experiment_end && sent >= limit {
                let tomorrow = (now.date_naive() + TimeDelta::days(1))
                    .and_hms_opt(0, 0, 0)
                    .expect("midnight exists")
                    .and_utc();
                tracing::info!(thread = thread_key, %tomorrow, "daily domain limit reached, deferring");
                let a = self.apply(thread_key, now, EventBody::SendScheduled { send_at: tomorrow })?;
                return Ok(self.finish(thread_key, a));
            }
        }
        let a = self.apply(thread_key, now, EventBody::TimerFired {})?;
        Ok(self.finish(thread_key, a))
    }

    /// Keys whose timers are due at `now`.
    pub fn due(&self, now: DateTime<Utc>) -> Vec<String> {
        self.timers()
            .into_iter()
            .filter(|(_, at)| *at <= now)
            .map(|(k, _)| k)
            .collect()
    }

    /// Delivery failure (or success notice) for the last mail sent.
    pub fn dsn(&mut self, thread_key: &str, status: DsnStatus, now: DateTime<Utc>) -> Result<Vec<Action>, EngineError> {
        if self.live(thread_key)?.state.status.is_terminated() {
            return Ok(Vec::new());
        }
        let a = self.apply(thread_key, now, EventBody::DsnReceived { status })?;
        Ok(self.finish(thread_key, a))
    }

    fn find_draft(&self, draft_id: &str) -> Result<String, EngineError> {
        let (key, entry) = self
            .threads
            .iter()
            .find(|(_, e)| e.state.draft.as_ref().is_some_and(|d| d.id == draft_id))
            .ok_or_else(|| EngineError::UnknownDraft(draft_id.to_string()))?;
        if entry.state.status != ThreadStatus::AwaitingApproval {
            return Err(EngineError::DraftNotPending(draft_id.to_string()));
        }
        Ok(key.clone())
    }

    pub fn approve(&mut self, draft_id: &str, now: DateTime<Utc>) -> Result<Vec<Action>, EngineError> {
        let key = self.find_draft(draft_id)?;
        let a = self.apply(&key, now, EventBody::Approved {})?;
        Ok(self.finish(&key, a))
    }

    /// Replaces a queued draft's body. Refused when the new text leaks
    /// personal details.
    pub fn edit(&mut self, draft_id: &str, body: &str, now: DateTime<Utc>) -> Result<Vec<Action>, EngineError> {
        let key = self.find_draft(draft_id)?;
        if body.trim().is_empty() {
            return Err(EngineError::EmptyDraft);
        }
        let findings = scan_pii(body);
        if !findings.is_empty() {
            return Err(EngineError::PiiInEdit(findings));
        }
        let mut draft = self.threads[&key].state.draft.clone().expect("found by draft id");
        draft.body = body.to_string();
        draft.source = DraftSource::Edited;
        let a = self.apply(&key, now, EventBody::DraftReady { draft })?;
        Ok(self.finish(&key, a))
    }

    pub fn reject(&mut self, draft_id: &str, now: DateTime<Utc>) -> Result<Vec<Action>, EngineError> {
        let key = self.find_draft(draft_id)?;
        let a = self.apply(&key, now, EventBody::DraftRejected {})?;
        Ok(self.finish(&key, a))
    }

    pub fn stop(&mut self, thread_key: &str, now: DateTime<Utc>) -> Result<Vec<Action>, EngineError> {
        self.live(thread_key)?;
        let a = self.apply(
            thread_key,
            now,
            EventBody::TerminatedEvent {
                reason: TerminationReason::ManualStop,
            },
        )?;
        Ok(self.finish(thread_key, a))
    }
}

#[cfg(test)]
mod tests {
    use super::super::testing::{config, t};
    use super::super::FileStore;
    use super::*;
    use crate::mail::testing::msg;
    use crate::reply::{generate_reply, GuardPolicy, TemplateGenerator};

    fn inbound(id: &str, day: u32, hour: u32) -> MailMessage {
        msg(id, Direction::Inbound, "Dear friend, reply to claim your inheritance.", day, hour)
    }

    /// Runs generation synchronously, in action order, and returns the
    /// remaining actions.
    fn drive<S: EventStore>(engine: &mut Engine<S>, actions: Vec<Action>, now: DateTime<Utc>) -> Vec<Action> {
        let mut pending: std::collections::VecDeque<Action> = actions.into();
        let mut out = Vec::new();
        while let Some(a) = pending.pop_front() {
            match a {
                Action::Generate { thread_key, thread } => {
                    let r = generate_reply(&thread, &TemplateGenerator::new(1), &GuardPolicy::default());
                    pending.extend(engine.draft_ready(&thread_key, r, now).unwrap());
                }
                other => out.push(other),
            }
        }
        out
    }

    fn engine() -> Engine {
        Engine::new(config(), MemoryStore::default()).unwrap()
    }

    #[test]
    fn inbound_to_send() {
        let mut e = engine();
        let a = e.inbound(inbound("m1", 14, 9), t(11, 14, 9)).unwrap();
        let a = drive(&mut e, a, t(11, 14, 9));
        assert_eq!(
            a.last(),
            Some(&Action::ArmTimer { thread_key: "kar@example.com".into(), at: t(11, 14, 10) })
        );
        // not yet due
        assert_eq!(e.timer("kar@example.com", t(11, 14, 9)).unwrap().len(), 1);
        let a = e.timer("kar@example.com", t(11, 14, 10)).unwrap();
        let Action::Send { message, .. } = &a[0] else { panic!("{a:?}") };
        assert_eq!(message.to_addr, "kar@example.com");
        assert_eq!(message.subject, "Re: Claim");
        assert_eq!(message.in_reply_to.as_deref(), Some("m1"));
        assert!(message.body_text.contains("\n\n-- \nM. Rossi\n\n> Dear friend"));
        let kinds: Vec<&str> = e.events("kar@example.com").unwrap().iter().map(|e| e.body.kind()).collect();
        assert_eq!(
            kinds,
            ["InboundReceived", "TriageDecided", "DraftReady", "SendScheduled", "TimerFired", "Sent"]
        );
        assert_eq!(e.thread("kar@example.com").unwrap().messages.len(), 2);
    }

    #[test]
    fn duplicates_and_finished_threads_are_ignored() {
        let mut e = engine();
        let a = e.inbound(inbound("m1", 14, 9), t(11, 14, 9)).unwrap();
        drive(&mut e, a, t(11, 14, 9));
        let n = e.events("kar@example.com").unwrap().len();
        assert!(e.inbound(inbound("m1", 14, 9), t(11, 14, 9)).unwrap().len() <= 1);
        assert_eq!(e.events("kar@example.com").unwrap().len(), n);
        e.stop("kar@example.com", t(11, 14, 9)).unwrap();
        assert!(e.inbound(inbound("m2", 15, 9), t(11, 15, 9)).unwrap().is_empty());
        assert!(matches!(
            e.stop("kar@example.com", t(11, 15, 9)),
            Err(EngineError::Step(StepError::IllegalTransition { .. }))
        ));
        assert!(matches!(e.stop("nobody", t(11, 15, 9)), Err(EngineError::UnknownThread(_))));
    }

    #[test]
    fn ineligible_mail_is_not_answered() {
        let mut e = engine();
        let mut m = msg("m1", Direction::Inbound, "", 14, 9);
        m.body_html = Some("<p>hi</p>".into());
        let a = e.inbound(m, t(11, 14, 9)).unwrap();
        assert!(a.is_empty());
        assert_eq!(
            e.state("kar@example.com").unwrap().termination(),
            Some(TerminationReason::Ineligible)
        );
    }

    #[test]
    fn approval_queue_and_edits() {
        let mut cfg = config();
        cfg.approval_required = true;
        let mut e = Engine::new(cfg, MemoryStore::default()).unwrap();
        let a = e.inbound(inbound("m1", 14, 9), t(11, 14, 9)).unwrap();
        drive(&mut e, a, t(11, 14, 9));
        let id = e.queue()[0].1.id.clone();
        match e.edit(&id, "call me at +1 555 123 4567", t(11, 14, 9)) {
            Err(EngineError::PiiInEdit(f)) => assert_eq!(f[0].kind, crate::reply::PiiKind::PhoneNumber),
            other => panic!("{other:?}"),
        }
        assert!(matches!(e.edit(&id, "  ", t(11, 14, 9)), Err(EngineError::EmptyDraft)));
        e.edit(&id, "A hand-written answer.", t(11, 14, 9)).unwrap();
        assert_eq!(e.queue()[0].1.body, "A hand-written answer.");
        e.approve(&id, t(11, 14, 9)).unwrap();
        assert!(matches!(e.state("kar@example.com").unwrap().status, ThreadStatus::Scheduled { .. }));
        assert!(e.queue().is_empty());
        assert!(matches!(e.approve(&id, t(11, 14, 9)), Err(EngineError::DraftNotPending(_))));
        assert!(matches!(e.approve("nope", t(11, 14, 9)), Err(EngineError::UnknownDraft(_))));
    }

    #[test]
    fn reject_asks_for_a_new_draft() {
        let mut cfg = config();
        cfg.approval_required = true;
        let mut e = Engine::new(cfg, MemoryStore::default()).unwrap();
        let a = e.inbound(inbound("m1", 14, 9), t(11, 14, 9)).unwrap();
        drive(&mut e, a, t(11, 14, 9));
        let id = e.queue()[0].1.id.clone();
        let a = e.reject(&id, t(11, 14, 10)).unwrap();
        assert!(matches!(a[0], Action::Generate { .. }));
        drive(&mut e, a, t(11, 14, 10));
        assert_ne!(e.queue()[0].1.id, id);
    }

    #[test]
    fn domain_limit_defers_to_next_day() {
        let mut cfg = config();
        cfg.daily_domain_limit = Some(1);
        let mut e = Engine::new(cfg, MemoryStore::default()).unwrap();
        for (i, who) in ["a@spam.test", "b@spam.test"].iter().enumerate() {
            let mut m = inbound(&format!("m{i}"), 14, 9);
            m.from_addr = who.to_string();
            m.thread_key = who.to_string();
            let a = e.inbound(m, t(11, 14, 9)).unwrap();
            drive(&mut e, a, t(11, 14, 9));
        }
        assert!(matches!(e.timer("a@spam.test", t(11, 14, 10)).unwrap()[0], Action::Send { .. }));
        let a = e.timer("b@spam.test", t(11, 14, 10)).unwrap();
        assert_eq!(a, [Action::ArmTimer { thread_key: "b@spam.test".into(), at: t(11, 15, 0) }]);
        assert!(matches!(e.timer("b@spam.test", t(11, 15, 0)).unwrap()[0], Action::Send { .. }));
    }

    #[test]
    fn dsn_report_mail_is_routed() {
        let mut e = engine();
        let a = e.inbound(inbound("m1", 14, 9), t(11, 14, 9)).unwrap();
        drive(&mut e, a, t(11, 14, 9));
        e.timer("kar@example.com", t(11, 14, 10)).unwrap();
        let mut report = msg("dsn1", Direction::Inbound, "undeliverable", 14, 11);
        report.from_addr = "mailer-daemon@example.org".into();
        report.delivery_status = Some(DsnStatus::MAILBOX_DISABLED);
        e.inbound(report, t(11, 14, 11)).unwrap();
        let s = e.state("kar@example.com").unwrap();
        assert_eq!(s.termination(), Some(TerminationReason::DeliveryFailedPermanent));
        assert_eq!(e.thread("kar@example.com").unwrap().messages.len(), 2);
    }

    #[test]
    fn restart_replays_file_logs() {
        let dir = tempfile::tempdir().unwrap();
        let before = {
            let mut e = Engine::new(config(), FileStore::open(dir.path()).unwrap()).unwrap();
            let a = e.inbound(inbound("m1", 14, 9), t(11, 14, 9)).unwrap();
            drive(&mut e, a, t(11, 14, 9));
            e.timer("kar@example.com", t(11, 14, 10)).unwrap();
            e.inbound(inbound("m2", 15, 9), t(11, 15, 9)).unwrap();
            e.snapshot()
        };
        let e = Engine::new(config(), FileStore::open(dir.path()).unwrap()).unwrap();
        assert_eq!(e.snapshot(), before);
        assert_eq!(e.timers(), vec![("kar@example.com".to_string(), t(1, 11, 0))]);
        // the id seen before the restart is still deduplicated
        let mut e = e;
        assert!(e.inbound(inbound("m2", 15, 9), t(11, 15, 10)).unwrap().len() <= 1);
        assert_eq!(e.state("kar@example.com").unwrap().inbound_count, 2);
    }

    #[test]
    fn late_mail_closes_live_thread() {
        let mut e = engine();
        let a = e.inbound(inbound("m1", 14, 9), t(11, 14, 9)).unwrap();
        drive(&mut e, a, t(11, 14, 9));
        e.timer("kar@example.com", t(11, 14, 10)).unwrap();
        let mut late = inbound("m2", 14, 9);
        late.timestamp = t(1, 12, 0);
        e.inbound(late, t(1, 12, 0)).unwrap();
        let s = e.state("kar@example.com").unwrap();
        assert_eq!(s.termination(), Some(TerminationReason::WindowClosed));
        assert_eq!(e.thread("kar@example.com").unwrap().messages.len(), 2);
    }
}
