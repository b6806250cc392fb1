//! Scammer personas on a virtual clock.
//!
//! [`run_simulation`] drives the real [`Engine`] against scripted
//! correspondents. Time only moves when the next queued wake-up is taken,
//! so a month-long exchange runs in milliseconds and every run with the
//! same config produces the same logs.

mod body;
mod persona;

pub use body::{synthesize_body, BodyShape, BodyStyle, ShapeError};
pub use persona::{Persona, PersonaKind, PersonaPhase, PersonaSpec};

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::path::Path;
use std::time::Duration;

use chrono::{DateTime, TimeDelta, TimeZone, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engagement::{
    human_duration, Action, ConfigError, DelayPolicy, EngagementEvent, Engine, EngineConfig, EngineError,
    EventStore, FileStore, MemoryStore, ObservationWindow, ThreadState,
};
use crate::hash::Fnv;
use crate::mail::{DsnStatus, Thread};
use crate::metrics::{export_timeline, report_from_snapshot, timeline_csv, Report, TimelineEvent};
use crate::reply::{generate_reply, GuardPolicy, TemplateGenerator};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("persona: {0}")]
    Persona(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("writing results: {0}")]
    Io(#[from] std::io::Error),
}

fn default_max_attempts() -> u32 {
    3
}

fn default_silence() -> Duration {
    Duration::from_secs(30 * 86_400)
}

fn default_own_address() -> String {
    "bait@example.org".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub window: ObservationWindow,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub delay: DelayPolicy,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_silence", with = "human_duration")]
    pub silence_timeout: Duration,
    #[serde(default = "default_own_address")]
    pub own_address: String,
    #[serde(default)]
    pub personas: Vec<PersonaSpec>,
}

impl SimConfig {
    pub fn new(window: ObservationWindow, seed: u64) -> Self {
        SimConfig {
            window,
            seed,
            delay: DelayPolicy::default(),
            max_attempts: default_max_attempts(),
            silence_timeout: default_silence(),
            own_address: default_own_address(),
            personas: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.engine_config().validate()?;
        if self.max_attempts == 0 {
            return Err(ConfigError::NonPositive("max_attempts").into());
        }
        let mut keys = std::collections::HashSet::new();
        for p in &self.personas {
            p.validate().map_err(SimError::Persona)?;
            if p.first_contact_at < self.window.collection_start {
                return Err(SimError::Persona(format!(
                    "{} writes before the window opens",
                    p.address
                )));
            }
            if !keys.insert(p.address.to_lowercase()) {
                return Err(SimError::Persona(format!("{} appears twice", p.address)));
            }
        }
        Ok(())
    }

    /// Engine settings for the run. Personas with their own delay policy get
    /// a per-thread override.
    pub fn engine_config(&self) -> EngineConfig {
        let mut c = EngineConfig::new(self.window);
        c.delay = self.delay.clone();
        c.seed = self.seed;
        c.silence_timeout = self.silence_timeout;
        c.own_address = self.own_address.clone();
        for p in &self.personas {
            if let Some(d) = &p.delay_override {
                c.thread_delays.insert(p.address.to_lowercase(), d.clone());
            }
        }
        c
    }
}

#[derive(Debug, Clone)]
pub struct SimResult {
    pub config: EngineConfig,
    pub logs: BTreeMap<String, Vec<EngagementEvent>>,
    pub threads: Vec<(Thread, ThreadState)>,
    pub report: Report,
    pub timeline: Vec<TimelineEvent>,
    pub personas: Vec<Persona>,
}

impl SimResult {
    /// The log of one thread as JSON lines, exactly as written to disk.
    pub fn log_text(&self, thread_key: &str) -> Option<String> {
        self.logs
            .get(thread_key)
            .map(|events| events.iter().map(|e| e.to_json_line() + "\n").collect())
    }

    /// Writes the event logs, `engine.json`, `report.csv` and
    /// `timeline.csv` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), SimError> {
        let mut store = FileStore::open(dir)?;
        for (key, events) in &self.logs {
            let path = store.path_for(key);
            if path.exists() {
                std::fs::remove_file(&path)?;
            }
            for e in events {
                store.append(key, e)?;
            }
        }
        let config = serde_json::to_string_pretty(&self.config).expect("config serializes");
        std::fs::write(dir.join("engine.json"), config + "\n")?;
        std::fs::write(dir.join("report.csv"), self.report.to_csv())?;
        std::fs::write(dir.join("timeline.csv"), timeline_csv(&self.timeline))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Wake {
    /// The persona writes its next mail.
    Persona(usize),
    /// Our mail to this persona bounces.
    Bounce(usize),
    Timer(String),
}

const BOUNCE_AFTER: TimeDelta = TimeDelta::minutes(1);

struct Sim {
    engine: Engine<MemoryStore>,
    personas: Vec<Persona>,
    rngs: Vec<ChaCha8Rng>,
    by_key: HashMap<String, usize>,
    queue: BinaryHeap<Reverse<(DateTime<Utc>, u64, Wake)>>,
    armed: HashMap<String, DateTime<Utc>>,
    order: u64,
    generator: TemplateGenerator,
    guard: GuardPolicy,
    own_address: String,
}

impl Sim {
    fn push(&mut self, at: DateTime<Utc>, wake: Wake) {
        self.order += 1;
        self.queue.push(Reverse((at, self.order, wake)));
    }

    fn handle(&mut self, actions: Vec<Action>, now: DateTime<Utc>) -> Result<(), SimError> {
        let mut pending: std::collections::VecDeque<Action> = actions.into();
        while let Some(action) = pending.pop_front() {
            match action {
                Action::Generate { thread_key, thread } => {
                    let draft = generate_reply(&thread, &self.generator, &self.guard);
                    pending.extend(self.engine.draft_ready(&thread_key, draft, now)?);
                }
                Action::Send { thread_key, .. } => {
                    let Some(&i) = self.by_key.get(&thread_key) else { continue };
                    if self.personas[i].spec.delivery_fails() {
                        self.push(now + BOUNCE_AFTER, Wake::Bounce(i));
                    } else if let Some(at) = self.personas[i].on_reply(now) {
                        self.push(at, Wake::Persona(i));
                    }
                }
                Action::ArmTimer { thread_key, at } => {
                    if self.armed.get(&thread_key) != Some(&at) {
                        self.armed.insert(thread_key.clone(), at);
                        self.push(at, Wake::Timer(thread_key));
                    }
                }
            }
        }
        Ok(())
    }

    fn terminated(&self, i: usize) -> bool {
        let key = self.personas[i].spec.address.to_lowercase();
        self.engine.state(&key).is_some_and(|s| s.status.is_terminated())
    }

    fn wake(&mut self, at: DateTime<Utc>, wake: Wake) -> Result<(), SimError> {
        let actions = match wake {
            Wake::Persona(i) => {
                if self.terminated(i) {
                    return Ok(());
                }
                let msg = self.personas[i].compose(at, &self.own_address, &mut self.rngs[i])?;
                self.engine.inbound(msg, at)?
            }
            Wake::Bounce(i) => {
                let key = self.personas[i].spec.address.to_lowercase();
                self.engine.dsn(&key, DsnStatus::MAILBOX_DISABLED, at)?
            }
            Wake::Timer(key) => {
                if self.armed.get(&key) != Some(&at) {
                    return Ok(());
                }
                self.armed.remove(&key);
                self.engine.timer(&key, at)?
            }
        };
        self.handle(actions, at)
    }
}

/// Runs every persona against the engine until all threads have ended or
/// the window closes.
pub fn run_simulation(config: &SimConfig) -> Result<SimResult, SimError> {
    config.validate()?;
    let engine_config = config.engine_config();
    let end = engine_config.window.experiment_end;
    let personas: Vec<Persona> = config.personas.iter().cloned().map(Persona::new).collect();
    let mut sim = Sim {
        engine: Engine::new(engine_config.clone(), MemoryStore::default())?,
        rngs: personas
            .iter()
            .map(|p| ChaCha8Rng::seed_from_u64(Fnv::new().u64(config.seed).str(&p.spec.address).finish()))
            .collect(),
        by_key: personas
            .iter()
            .enumerate()
            .map(|(i, p)| (p.spec.address.to_lowercase(), i))
            .collect(),
        personas,
        queue: BinaryHeap::new(),
        armed: HashMap::new(),
        order: 0,
        generator: TemplateGenerator::new(config.seed),
        guard: GuardPolicy::with_max_attempts(config.max_attempts),
        own_address: config.own_address.clone(),
    };
    for i in 0..sim.personas.len() {
        let at = sim.personas[i].spec.first_contact_at;
        sim.push(at, Wake::Persona(i));
    }
    while let Some(Reverse((at, _, wake))) = sim.queue.pop() {
        if at > end {
            break;
        }
        sim.wake(at, wake)?;
    }

    let threads = sim.engine.snapshot();
    let report = report_from_snapshot(&threads);
    let timeline = export_timeline(&threads);
    Ok(SimResult {
        config: engine_config,
        logs: sim.engine.into_store().logs,
        threads,
        report,
        timeline,
        personas: sim.personas,
    })
}

fn utc(y: i32, m: u32, d: u32, h: u32) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(y, m, d, h, 0, 0).single().expect("valid date")
}

const DAY: u64 = 86_400;

fn days(d: f64) -> Duration {
    Duration::from_secs_f64(d * DAY as f64)
}

/// Eleven correspondents modelled on a month of real engagement: three
/// droppers whose mailboxes are already disabled, two long-letter writers
/// who give up after one answer, two one-shot droppers, two burst-pause
/// writers, and two extorters that end up waiting for money. Replies go
/// out after a fixed half day, except the first reply to the slow extorter
/// which is held back for 17 days.
pub fn reference_scenario(seed: u64) -> SimConfig {
    let window = ObservationWindow::new(utc(2022, 11, 12, 0), utc(2022, 12, 12, 0), utc(2023, 1, 11, 0))
        .expect("valid window");
    let mut config = SimConfig::new(window, seed);
    config.delay = DelayPolicy::fixed(Duration::from_secs(12 * 3600));

    let first_contacts = [
        (11, 14),
        (11, 16),
        (11, 18),
        (11, 20),
        (11, 22),
        (11, 25),
        (11, 28),
        (12, 1),
        (12, 3),
        (12, 5),
        (12, 8),
    ];
    let dropper = |fails| PersonaKind::OneShotDropper { delivery_fails: fails };
    let kinds: [(PersonaKind, BodyShape, &str); 11] = [
        (dropper(true), BodyShape { chars: 331, sentences: 2 }, "Payment advice"),
        (dropper(true), BodyShape { chars: 261, sentences: 1 }, "Invoice attached"),
        (dropper(true), BodyShape { chars: 291, sentences: 3 }, "Shipping documents"),
        (
            PersonaKind::PersistentExtorter {
                exchanges_before_payment_ask: 5,
                patience: None,
                reply_latency: days(1.9),
            },
            BodyShape { chars: 1487, sentences: 13 },
            "Inheritance claim",
        ),
        (
            PersonaKind::LongLetter { msg_chars: 4572, gives_up_after: 1 },
            BodyShape { chars: 4572, sentences: 48 },
            "Confidential business proposal",
        ),
        (
            PersonaKind::BurstPause {
                burst_len: 2,
                pause_durations: vec![days(9.0), days(14.0)],
                reply_latency: days(1.0),
            },
            BodyShape { chars: 987, sentences: 6 },
            "Compensation fund",
        ),
        (
            PersonaKind::LongLetter { msg_chars: 11094, gives_up_after: 1 },
            BodyShape { chars: 11094, sentences: 108 },
            "Last will of a client",
        ),
        (
            PersonaKind::BurstPause {
                burst_len: 3,
                pause_durations: vec![days(8.0), days(16.0)],
                reply_latency: days(0.1),
            },
            BodyShape { chars: 1382, sentences: 12 },
            "Consignment box",
        ),
        (dropper(false), BodyShape { chars: 120, sentences: 1 }, "Your parcel"),
        (
            PersonaKind::PersistentExtorter {
                exchanges_before_payment_ask: 8,
                patience: None,
                reply_latency: Duration::from_secs(6 * 3600),
            },
            BodyShape { chars: 474, sentences: 7 },
            "Lottery winnings",
        ),
        (dropper(false), BodyShape { chars: 207, sentences: 7 }, "Order confirmation"),
    ];
    for (n, ((kind, body, subject), (month, day))) in kinds.into_iter().zip(first_contacts).enumerate() {
        let n = n + 1;
        let delay_override = (n == 4).then(|| DelayPolicy {
            first_reply_override: Some(days(17.0)),
            ..config.delay.clone()
        });
        config.personas.push(PersonaSpec {
            address: format!("scammer{n:02}@s{n:02}.example"),
            first_contact_at: utc(2022, month, day, 9),
            kind,
            body,
            subject: subject.to_string(),
            delay_override,
        });
    }
    config
}
