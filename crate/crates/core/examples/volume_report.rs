//! Per-thread volume statistics: three conversations run through the engine
//! in memory, then reported as a table and as CSV.
//!
//! cargo run -p scambait --example volume_report

use std::time::Duration;

use chrono::{DateTime, TimeDelta, TimeZone, Utc};
use scambait::engagement::{Action, Engine, MemoryStore};
use scambait::metrics::report_from_snapshot;
use scambait::reply::TemplateGenerator;
use scambait::{
    count_chars, count_sentences, generate_reply, parse_rfc822, DelayPolicy, DsnStatus, EngineConfig, GuardPolicy,
    ObservationWindow,
};

const LETTERS: [&str; 3] = [
    "Dear friend, I am a banker with a proposal for you. Will you help me move the funds?",
    "Thank you for replying. The transfer needs a small fee first. Can you send it this week?",
    "Good news! The bank has approved everything. When can we meet to sign the papers?",
];

fn main() -> anyhow::Result<()> {
    let at = |d: u32, h: u32| Utc.with_ymd_and_hms(2022, 11, d, h, 0, 0).unwrap();
    let mut config = EngineConfig::new(ObservationWindow::new(at(12, 0), at(26, 0), at(26, 0) + TimeDelta::days(30))?);
    config.delay = DelayPolicy::fixed(Duration::from_secs(4 * 3600));
    let mut engine = Engine::new(config, MemoryStore::default())?;
    let generator = TemplateGenerator::new(11);

    // (sender, letters sent, our reply bounces)
    let threads = [("banker@a.example", 3, false), ("lawyer@b.example", 1, false), ("gone@c.example", 1, true)];
    for (i, (sender, letters, bounces)) in threads.into_iter().enumerate() {
        for (k, letter) in LETTERS.iter().take(letters).enumerate() {
            let now = at(14 + i as u32, 9) + TimeDelta::days(2 * k as i64);
            let raw = format!(
                "From: {sender}\r\nTo: bait@example.org\r\nSubject: Proposal\r\nDate: {}\r\n\
Message-ID: <{k}@{sender}>\r\n\r\n{}\r\n",
                now.to_rfc2822(),
                letter
            );
            let mut queue = engine.inbound(parse_rfc822(raw.as_bytes())?, now)?;
            let mut clock: DateTime<Utc> = now;
            while let Some(action) = queue.pop() {
                match action {
                    Action::Generate { thread_key, thread } => {
                        let draft = generate_reply(&thread, &generator, &GuardPolicy::default());
                        queue.extend(engine.draft_ready(&thread_key, draft, clock)?);
                    }
                    Action::ArmTimer { thread_key, at } if at < now + TimeDelta::days(1) => {
                        clock = at;
                        queue.extend(engine.timer(&thread_key, at)?);
                    }
                    Action::Send { thread_key, .. } if bounces => {
                        queue.extend(engine.dsn(&thread_key, DsnStatus::MAILBOX_DISABLED, clock)?);
                    }
                    _ => {}
                }
            }
        }
    }

    let report = report_from_snapshot(&engine.snapshot());
    print!("{}", report.to_table());
    println!();
    print!("{}", report.to_csv());

    let sample = LETTERS[1];
    println!("\n{sample:?}\n  {} characters, {} sentences", count_chars(sample), count_sentences(sample));
    Ok(())
}
