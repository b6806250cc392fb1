//! Fixtures shared by the integration tests.
//!
//! The eleven volume threads are built from per-row aggregates with a body
//! builder that does not use the crate's counting code, then driven through
//! the real engine and written to a data directory.

#![allow(dead_code)]

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::{DateTime, TimeDelta, TimeZone, Utc};
use scambait::engagement::{Action, Engine, EventStore, FileStore};
use scambait::reply::{GeneratorError, TemplateGenerator};
use scambait::{
    generate_reply, parse_rfc822, DelayPolicy, DsnStatus, EngineConfig, Generator,
    GeneratorRequest, GuardPolicy, ObservationWindow,
};

/// One thread of the volume fixture: totals per side and whether our
/// replies bounce.
#[derive(Debug, Clone, Copy)]
pub struct VolumeRow {
    pub mails: usize,
    pub scam_chars: usize,
    pub scam_sentences: usize,
    pub our_chars: usize,
    pub our_sentences: usize,
    pub bounced: bool,
}

const fn row(mails: usize, sc: usize, ss: usize, oc: usize, os: usize, bounced: bool) -> VolumeRow {
    VolumeRow {
        mails,
        scam_chars: sc,
        scam_sentences: ss,
        our_chars: oc,
        our_sentences: os,
        bounced,
    }
}

pub const VOLUME_ROWS: [VolumeRow; 11] = [
    row(2, 331, 2, 333, 3, true),
    row(2, 261, 1, 323, 4, true),
    row(2, 291, 3, 362, 4, true),
    row(12, 1487, 13, 536, 6, false),
    row(2, 4572, 48, 319, 5, false),
    row(10, 987, 6, 526, 6, false),
    row(2, 11094, 108, 487, 5, false),
    row(14, 1382, 12, 473, 5, false),
    row(2, 120, 1, 277, 5, false),
    row(18, 474, 7, 432, 6, false),
    row(2, 207, 7, 292, 7, false),
];

const FILLER: &str = "lorem ipsum dolor sit amet consectetur adipiscing elit sed do eiusmod tempor ";

/// `len` characters of lowercase words without leading or trailing space.
fn filler(len: usize) -> String {
    let mut s: Vec<char> = FILLER.chars().cycle().take(len).collect();
    for i in [0, len.saturating_sub(1)] {
        if s.get(i) == Some(&' ') {
            s[i] = 'x';
        }
    }
    s.into_iter().collect()
}

/// A body of exactly `chars` characters and `sentences` sentences:
/// sentences of filler words joined by one space, each closed by a period,
/// the last one by a question mark when `ask` is set.
pub fn shaped_body(chars: usize, sentences: usize, ask: bool) -> String {
    assert!(sentences >= 1 && chars >= 3 * sentences - 1, "{chars}/{sentences} is too short");
    let content = chars - (sentences - 1) - sentences;
    let (base, extra) = (content / sentences, content % sentences);
    let parts: Vec<String> = (0..sentences)
        .map(|i| {
            let end = if ask && i + 1 == sentences { '?' } else { '.' };
            format!("{}{end}", filler(base + usize::from(i < extra)))
        })
        .collect();
    let body = parts.join(" ");
    assert_eq!(body.chars().count(), chars);
    body
}

pub fn utc(y: i32, m: u32, d: u32, h: u32) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(y, m, d, h, 0, 0).unwrap()
}

pub fn window() -> ObservationWindow {
    ObservationWindow::new(utc(2022, 11, 12, 0), utc(2022, 12, 12, 0), utc(2023, 1, 11, 0)).unwrap()
}

pub fn scammer_address(row: usize) -> String {
    format!("scammer{row:02}@row{row:02}.example")
}

/// Raw RFC 822 text of the `k`-th mail of fixture row `row`.
pub fn scam_mail(row: usize, k: usize, at: DateTime<Utc>, body: &str) -> Vec<u8> {
    format!(
        "From: Scammer {row} <{addr}>\r\nTo: bait@example.org\r\nSubject: Re: Business proposal\r\n\
Date: {date}\r\nMessage-ID: <r{row}-{k}@row{row:02}.example>\r\n\r\n{body}\r\n",
        addr = scammer_address(row),
        date = at.to_rfc2822(),
    )
    .into_bytes()
}

/// Generator that returns whatever text was queued last, repeatedly.
#[derive(Default)]
pub struct Scripted {
    next: Mutex<VecDeque<String>>,
    pub calls: Mutex<u32>,
}

impl Scripted {
    pub fn queue(&self, text: impl Into<String>) {
        self.next.lock().unwrap().push_back(text.into());
    }
}

impl Generator for Scripted {
    fn generate(&self, _request: &GeneratorRequest) -> Result<String, GeneratorError> {
        *self.calls.lock().unwrap() += 1;
        Ok(self.next.lock().unwrap().pop_front().unwrap_or_default())
    }
}

/// Feeds engine actions back into the engine the way the service does:
/// generation inline, sends recorded, timers remembered.
pub struct Driver<S: EventStore> {
    pub engine: Engine<S>,
    pub generator: Arc<dyn Generator>,
    pub policy: GuardPolicy,
    pub timers: BTreeMap<String, DateTime<Utc>>,
    pub sent: Vec<scambait::MailMessage>,
    pub bounce: BTreeMap<String, DsnStatus>,
}

impl<S: EventStore> Driver<S> {
    pub fn new(engine: Engine<S>, generator: Arc<dyn Generator>) -> Self {
        Driver {
            engine,
            generator,
            policy: GuardPolicy::default(),
            timers: BTreeMap::new(),
            sent: Vec::new(),
            bounce: BTreeMap::new(),
        }
    }

    pub fn run(&mut self, actions: Vec<Action>, now: DateTime<Utc>) {
        let mut queue: VecDeque<Action> = actions.into();
        while let Some(action) = queue.pop_front() {
            match action {
                Action::Generate { thread_key, thread } => {
                    let result = generate_reply(&thread, &*self.generator, &self.policy);
                    queue.extend(self.engine.draft_ready(&thread_key, result, now).unwrap());
                }
                Action::Send { thread_key, message } => {
                    self.sent.push(message);
                    if let Some(status) = self.bounce.get(&thread_key) {
                        queue.extend(self.engine.dsn(&thread_key, *status, now).unwrap());
                    }
                }
                Action::ArmTimer { thread_key, at } => {
                    self.timers.insert(thread_key, at);
                }
            }
        }
    }

    pub fn inbound(&mut self, raw: &[u8], now: DateTime<Utc>) {
        let msg = parse_rfc822(raw).unwrap();
        let actions = self.engine.inbound(msg, now).unwrap();
        self.run(actions, now);
    }

    /// Fires the armed timer of `key`, returning when it fired.
    pub fn fire(&mut self, key: &str) -> Option<DateTime<Utc>> {
        let at = self.timers.remove(key)?;
        let actions = self.engine.timer(key, at).unwrap();
        self.run(actions, at);
        Some(at)
    }
}

pub fn fixture_config() -> EngineConfig {
    let mut c = EngineConfig::new(window());
    c.delay = DelayPolicy::fixed(Duration::from_secs(3600));
    c
}

/// Writes the eleven volume threads into `dir` (event logs plus
/// `engine.json`). Each scammer mail arrives a day after the previous
/// one; each of ours leaves an hour after the mail it answers.
pub fn write_volume_fixture(dir: &Path) {
    let config = fixture_config();
    std::fs::write(dir.join("engine.json"), serde_json::to_string_pretty(&config).unwrap()).unwrap();
    let scripted = Arc::new(Scripted::default());
    let engine = Engine::new(config, FileStore::open(dir).unwrap()).unwrap();
    let mut d = Driver::new(engine, scripted.clone());

    for (i, r) in VOLUME_ROWS.iter().enumerate() {
        let n = i + 1;
        let key = scammer_address(n);
        if r.bounced {
            d.bounce.insert(key.clone(), DsnStatus::MAILBOX_DISABLED);
        }
        let start = utc(2022, 11, 14, 9) + TimeDelta::days(i as i64);
        let per_side = r.mails / 2;
        let scam = shaped_body(r.scam_chars, r.scam_sentences, true);
        let ours = shaped_body(r.our_chars, r.our_sentences, false);
        for k in 0..per_side {
            scripted.queue(ours.clone());
            let at = start + TimeDelta::days(k as i64);
            d.inbound(&scam_mail(n, k, at, &scam), at);
            d.fire(&key).expect("reply timer armed");
        }
        // let the thread run out: silence timeout or nothing left to do
        while d.fire(&key).is_some() {}
    }
}

/// A generator for tests that only need plausible replies.
pub fn template_generator() -> Arc<dyn Generator> {
    Arc::new(TemplateGenerator::new(7))
}
