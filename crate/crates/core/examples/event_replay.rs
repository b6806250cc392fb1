//! A thread's life as an append-only event log on disk: drive the engine,
//! print the log, cut it short as a crash would, and rebuild state from it.
//!
//! cargo run -p scambait --example event_replay

use std::io::Write;
use std::time::Duration;

use chrono::{DateTime, TimeDelta, TimeZone, Utc};
use scambait::engagement::{Action, Engine, FileStore};
use scambait::reply::TemplateGenerator;
use scambait::{generate_reply, parse_rfc822, replay, DelayPolicy, EngineConfig, GuardPolicy, ObservationWindow};

fn scam(n: u32, at: DateTime<Utc>) -> Vec<u8> {
    format!(
        "From: kar@scam.example\r\nTo: bait@example.org\r\nSubject: Deposit\r\n\
Date: {}\r\nMessage-ID: <{n}@scam.example>\r\n\r\nDear friend, did you receive my letter number {n}? Please reply.\r\n",
        at.to_rfc2822()
    )
    .into_bytes()
}

/// Runs engine actions until only timers remain; returns the armed timer.
fn drain(engine: &mut Engine<FileStore>, mut actions: Vec<Action>, now: DateTime<Utc>) -> Option<DateTime<Utc>> {
    let generator = TemplateGenerator::new(3);
    let mut timer = None;
    while !actions.is_empty() {
        let mut next = Vec::new();
        for a in actions {
            match a {
                Action::Generate { thread_key, thread } => {
                    let draft = generate_reply(&thread, &generator, &GuardPolicy::default());
                    next.extend(engine.draft_ready(&thread_key, draft, now).unwrap());
                }
                Action::Send { message, .. } => println!("  -> sent {} at {}", message.id, now),
                Action::ArmTimer { at, .. } => timer = Some(at),
            }
        }
        actions = next;
    }
    timer
}

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let day = |d: u32, h: u32| Utc.with_ymd_and_hms(2022, 11, d, h, 0, 0).unwrap();
    let mut config = EngineConfig::new(ObservationWindow::new(day(12, 0), day(30, 0), day(30, 0) + TimeDelta::days(30))?);
    config.delay = DelayPolicy::fixed(Duration::from_secs(6 * 3600));
    let key = "kar@scam.example";

    {
        let mut engine = Engine::new(config.clone(), FileStore::open(dir.path())?)?;
        for (n, at) in [(1, day(14, 9)), (2, day(16, 10)), (3, day(19, 8))] {
            let actions = engine.inbound(parse_rfc822(&scam(n, at))?, at)?;
            if let Some(due) = drain(&mut engine, actions, at) {
                let actions = engine.timer(key, due)?;
                drain(&mut engine, actions, due);
            }
        }
        println!("live state: {}", engine.state(key).unwrap().status.name());
    }

    let path = FileStore::open(dir.path())?.path_for(key);
    let log = std::fs::read_to_string(&path)?;
    println!("\n{} ({} events)", path.display(), log.lines().count());
    for line in log.lines() {
        println!("  {}", &line[..line.len().min(110)]);
    }

    // keep the first five events and half of the sixth
    let lines: Vec<&str> = log.lines().collect();
    let mut torn = lines[..5].join("\n") + "\n";
    torn.push_str(&lines[5][..lines[5].len() / 2]);
    std::fs::File::create(&path)?.write_all(torn.as_bytes())?;

    let events = FileStore::read_log(&path)?;
    let state = replay(&events, &config)?;
    println!("\nafter the crash: {} events readable, state {} ({} in, {} out)", events.len(), state.status.name(), state.inbound_count, state.outbound_count);

    let engine = Engine::new(config, FileStore::open(dir.path())?)?;
    assert_eq!(engine.state(key), Some(&state));
    println!("a restarted engine agrees");
    Ok(())
}
