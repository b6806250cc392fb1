//! The running service: engine, mailbox, generator and timer wheel behind
//! one lock, plus the loop that drives them.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use chrono::{DateTime, TimeZone, Utc};

use super::config::{ConfigFileError, GeneratorKind, MailboxKind, ServiceConfig};
use super::mailbox::{file_mailbox_for, MailboxAdapter, NetConfig, NetMailbox, SendOutcome, SimMailbox};
use crate::clock::Clock;
use crate::engagement::{Action, Engine, EngineConfig, EngineError, EventStore, FileStore, ObservationWindow, ThreadStatus};
use crate::mail::{DsnStatus, MailboxFormat, Thread};
use crate::reply::{
    generate_reply, GuardPolicy, Generator, HttpGenerator, RefusalPatterns, ReplyDraft, ReplyError, TemplateGenerator,
};
use crate::triage::{load_word_list, TriageRules, DEFAULT_LINK_IMPERATIVES};

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Config(#[from] ConfigFileError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Status used when the mailbox could not be reached at all: the send is
/// retried like any other transient failure.
pub const TRANSPORT_FAILURE: DsnStatus = DsnStatus {
    class_digit: 4,
    subject_digit: 4,
    detail_digit: 1,
};

/// A thread waiting for the generator.
#[derive(Debug, Clone)]
pub struct GenerationJob {
    pub thread_key: String,
    pub thread: Thread,
}

pub struct Service<S: EventStore> {
    engine: Engine<S>,
    mailbox: Box<dyn MailboxAdapter>,
    generator: Arc<dyn Generator>,
    guard: GuardPolicy,
    timers: BTreeMap<String, DateTime<Utc>>,
    generation: VecDeque<GenerationJob>,
}

impl<S: EventStore> Service<S> {
    /// Wraps a replayed engine. Timers are re-armed from thread state and
    /// threads that were waiting for a draft are queued for generation again.
    pub fn new(engine: Engine<S>, mailbox: Box<dyn MailboxAdapter>, generator: Arc<dyn Generator>, guard: GuardPolicy) -> Self {
        let timers = engine.timers().into_iter().collect();
        let generation = engine
            .states()
            .filter(|s| s.status == ThreadStatus::DraftPending)
            .filter_map(|s| {
                engine.thread(&s.thread_key).map(|thread| GenerationJob {
                    thread_key: s.thread_key.clone(),
                    thread,
                })
            })
            .collect();
        Service {
            engine,
            mailbox,
            generator,
            guard,
            timers,
            generation,
        }
    }

    pub fn engine(&self) -> &Engine<S> {
        &self.engine
    }

    pub fn generator(&self) -> Arc<dyn Generator> {
        self.generator.clone()
    }

    pub fn guard(&self) -> &GuardPolicy {
        &self.guard
    }

    pub fn timers(&self) -> &BTreeMap<String, DateTime<Utc>> {
        &self.timers
    }

    pub fn pending_generation(&self) -> usize {
        self.generation.len()
    }

    /// Carries out engine actions. Generation is queued; sends go to the
    /// mailbox and refusals come straight back as delivery reports.
    pub fn apply(&mut self, actions: Vec<Action>, now: DateTime<Utc>) -> Result<(), EngineError> {
        let mut pending: VecDeque<Action> = actions.into();
        while let Some(action) = pending.pop_front() {
            match action {
                Action::Generate { thread_key, thread } => {
                    self.generation.retain(|j| j.thread_key != thread_key);
                    self.generation.push_back(GenerationJob { thread_key, thread });
                }
                Action::ArmTimer { thread_key, at } => {
                    self.timers.insert(thread_key, at);
                }
                Action::Send { thread_key, message } => {
                    let status = match self.mailbox.send(&message) {
                        Ok(SendOutcome::Delivered) => None,
                        Ok(SendOutcome::Rejected(status)) => Some(status),
                        Err(e) => {
                            tracing::warn!(thread = %thread_key, error = %e, "send failed, will retry");
                            Some(TRANSPORT_FAILURE)
                        }
                    };
                    if let Some(status) = status {
                        pending.extend(self.engine.dsn(&thread_key, status, now)?);
                    }
                }
            }
        }
        Ok(())
    }

    /// Fetches new mail and feeds it to the engine. Per-message failures are
    /// logged, not returned.
    pub fn poll(&mut self, now: DateTime<Utc>) -> usize {
        let messages = match self.mailbox.fetch() {
            Ok(m) => m,
            Err(e) => {
                tracing::warn!(error = %e, "mailbox fetch failed");
                return 0;
            }
        };
        let n = messages.len();
        for m in messages {
            let id = m.id.clone();
            if let Err(e) = self.engine.inbound(m, now).and_then(|a| self.apply(a, now)) {
                tracing::error!(%id, error = %e, "inbound mail not processed");
            }
        }
        n
    }

    /// Fires every timer due at `now`.
    pub fn tick(&mut self, now: DateTime<Utc>) {
        let due: Vec<String> = self
            .timers
            .iter()
            .filter(|(_, at)| **at <= now)
            .map(|(k, _)| k.clone())
            .collect();
        for key in due {
            self.timers.remove(&key);
            if let Err(e) = self.engine.timer(&key, now).and_then(|a| self.apply(a, now)) {
                tracing::error!(thread = %key, error = %e, "timer failed");
            }
        }
    }

    pub fn next_wake(&self) -> Option<DateTime<Utc>> {
        self.timers.values().min().copied()
    }

    pub fn take_generation(&mut self) -> Option<GenerationJob> {
        self.generation.pop_front()
    }

    pub fn finish_generation(
        &mut self,
        thread_key: &str,
        result: Result<ReplyDraft, ReplyError>,
        now: DateTime<Utc>,
    ) -> Result<(), EngineError> {
        let actions = self.engine.draft_ready(thread_key, result, now)?;
        self.apply(actions, now)
    }

    /// Runs every queued generation in place.
    pub fn generate_pending(&mut self, now: DateTime<Utc>) {
        while let Some(job) = self.take_generation() {
            let result = generate_reply(&job.thread, &*self.generator, &self.guard);
            if let Err(e) = self.finish_generation(&job.thread_key, result, now) {
                tracing::error!(thread = %job.thread_key, error = %e, "draft not recorded");
            }
        }
    }

    pub fn approve(&mut self, draft_id: &str, now: DateTime<Utc>) -> Result<String, EngineError> {
        let key = self.draft_thread(draft_id)?;
        let a = self.engine.approve(draft_id, now)?;
        self.apply(a, now)?;
        Ok(key)
    }

    pub fn edit(&mut self, draft_id: &str, body: &str, now: DateTime<Utc>) -> Result<String, EngineError> {
        let key = self.draft_thread(draft_id)?;
        let a = self.engine.edit(draft_id, body, now)?;
        self.apply(a, now)?;
        Ok(key)
    }

    pub fn reject(&mut self, draft_id: &str, now: DateTime<Utc>) -> Result<String, EngineError> {
        let key = self.draft_thread(draft_id)?;
        let a = self.engine.reject(draft_id, now)?;
        self.apply(a, now)?;
        Ok(key)
    }

    pub fn stop(&mut self, thread_key: &str, now: DateTime<Utc>) -> Result<(), EngineError> {
        let a = self.engine.stop(thread_key, now)?;
        self.timers.remove(thread_key);
        self.generation.retain(|j| j.thread_key != thread_key);
        self.apply(a, now)
    }

    fn draft_thread(&self, draft_id: &str) -> Result<String, EngineError> {
        self.engine
            .states()
            .find(|s| s.draft.as_ref().is_some_and(|d| d.id == draft_id))
            .map(|s| s.thread_key.clone())
            .ok_or_else(|| EngineError::UnknownDraft(draft_id.to_string()))
    }
}

pub type SharedService<S> = Arc<Mutex<Service<S>>>;

/// Drives a shared service until `stop` is set: polls the mailbox every
/// `poll_interval`, fires due timers, and runs generation outside the lock.
pub fn run_worker<S: EventStore>(
    service: SharedService<S>,
    clock: Arc<dyn Clock>,
    poll_interval: Duration,
    stop: Arc<AtomicBool>,
) {
    let mut last_poll: Option<Instant> = None;
    while !stop.load(Ordering::Relaxed) {
        let now = clock.now();
        {
            let mut svc = service.lock().expect("service poisoned");
            if last_poll.is_none_or(|t| t.elapsed() >= poll_interval) {
                svc.poll(now);
                last_poll = Some(Instant::now());
            }
            svc.tick(now);
        }
        loop {
            let (job, generator, guard) = {
                let mut svc = service.lock().expect("service poisoned");
                match svc.take_generation() {
                    Some(job) => (job, svc.generator(), svc.guard().clone()),
                    None => break,
                }
            };
            let result = generate_reply(&job.thread, &*generator, &guard);
            let now = clock.now();
            let mut svc = service.lock().expect("service poisoned");
            if let Err(e) = svc.finish_generation(&job.thread_key, result, now) {
                tracing::error!(thread = %job.thread_key, error = %e, "draft not recorded");
            }
        }
        std::thread::sleep(Duration::from_millis(200));
    }
}

/// Engine settings for reading a data directory: the `engine.json` written
/// next to the logs when present, otherwise a window wide enough to accept
/// any log.
pub fn data_dir_config(dir: &Path) -> Result<EngineConfig, ServeError> {
    let path = dir.join("engine.json");
    if path.exists() {
        let text = std::fs::read_to_string(&path)?;
        return serde_json::from_str(&text)
            .map_err(|e| ConfigFileError::Invalid(format!("{}: {e}", path.display())).into());
    }
    let at = |y| Utc.with_ymd_and_hms(y, 1, 1, 0, 0, 0).single().expect("valid date");
    let window = ObservationWindow::new(at(1970), at(9000), at(9001)).map_err(ConfigFileError::from)?;
    Ok(EngineConfig::new(window))
}

/// Threads and states rebuilt from the logs in a data directory.
pub fn load_data_dir(dir: &Path) -> Result<Vec<(Thread, crate::engagement::ThreadState)>, ServeError> {
    if !dir.is_dir() {
        return Err(std::io::Error::new(std::io::ErrorKind::NotFound, format!("{} is not a directory", dir.display())).into());
    }
    let engine = Engine::new(data_dir_config(dir)?, FileStore::open(dir)?)?;
    Ok(engine.snapshot())
}

fn domain(addr: &str) -> &str {
    addr.rsplit_once('@').map_or(addr, |(_, d)| d)
}

/// Builds the service a config describes, replaying any logs already in
/// the data directory.
pub fn build_service(config: &ServiceConfig) -> Result<(Service<FileStore>, Option<SimMailbox>), ServeError> {
    config.check_paths()?;
    let data_dir = &config.paths.data_dir;
    let engine_config = config.engine_config();
    std::fs::write(
        data_dir.join("engine.json"),
        serde_json::to_string_pretty(&engine_config).expect("config serializes") + "\n",
    )?;

    let brands = match &config.paths.denylist_path {
        Some(p) => load_word_list(p)?,
        None => Vec::new(),
    };
    let rules = match &config.paths.reply_cues_path {
        Some(p) => TriageRules::new(&load_word_list(p)?, DEFAULT_LINK_IMPERATIVES),
        None => TriageRules::default(),
    };
    let engine = Engine::new(engine_config, FileStore::open(data_dir)?.with_fsync(true))?.with_triage(rules, brands);

    let refusals = match &config.paths.refusal_patterns_path {
        Some(p) => RefusalPatterns::from_file(p)?,
        None => RefusalPatterns::default(),
    };
    let guard = GuardPolicy {
        max_attempts: config.guard.max_attempts,
        include_history: config.guard.include_history,
        refusals: Arc::new(refusals),
    };
    let generator: Arc<dyn Generator> = match config.generator.kind {
        GeneratorKind::Template => Arc::new(TemplateGenerator::new(config.generator.seed)),
        GeneratorKind::Http => Arc::new(HttpGenerator::new(config.generator.http_config()?)),
    };

    let m = &config.mailbox;
    let mut sim = None;
    let mailbox: Box<dyn MailboxAdapter> = match m.kind {
        MailboxKind::File => {
            let path = m.path.as_deref().expect("checked by check_paths");
            let format = m.format.unwrap_or(if path.is_dir() { MailboxFormat::Maildir } else { MailboxFormat::Mbox });
            Box::new(file_mailbox_for(data_dir, path, format, m.outbox.as_deref())?)
        }
        MailboxKind::Net => {
            let required = |v: &Option<String>, k: &str| {
                v.clone()
                    .ok_or_else(|| ConfigFileError::Invalid(format!("[mailbox] {k} is required for kind = \"net\"")))
            };
            let password = match &m.password_env {
                Some(var) => Some(std::env::var(var).map_err(|_| {
                    ConfigFileError::Invalid(format!("[mailbox] password_env names {var}, which is not set"))
                })?),
                None => None,
            };
            let net = NetConfig {
                imap_addr: format!("{}:{}", required(&m.imap_host, "imap_host")?, m.imap_port.unwrap_or(143)),
                smtp_addr: format!("{}:{}", required(&m.smtp_host, "smtp_host")?, m.smtp_port.unwrap_or(587)),
                username: required(&m.username, "username")?,
                password,
                helo: domain(&config.engine.own_address).to_string(),
                timeout: Duration::from_secs(30),
            };
            Box::new(NetMailbox::new(net, Some(data_dir.join("imap.uid")))?)
        }
        MailboxKind::Sim => {
            let mb = SimMailbox::new();
            sim = Some(mb.clone());
            Box::new(mb)
        }
    };
    Ok((Service::new(engine, mailbox, generator, guard), sim))
}
