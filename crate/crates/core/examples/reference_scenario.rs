//! The built-in reference run: eleven scammer personas against the engine on
//! a virtual clock, summarised as a volume table and a message timeline.
//!
//! cargo run -p scambait --example reference_scenario [seed]

use scambait::metrics::TimelineEvent;
use scambait::sim::{reference_scenario, run_simulation};
use scambait::Direction;

const WIDTH: usize = 64;

fn lane(events: &[&TimelineEvent], max_day: f64) -> String {
    let mut cells = vec![' '; WIDTH + 1];
    for e in events {
        let i = (e.day_offset / max_day * WIDTH as f64).round() as usize;
        let mark = match e.direction {
            Direction::Inbound => 's',
            Direction::Outbound => 'o',
        };
        cells[i] = if cells[i] == ' ' || cells[i] == mark { mark } else { '*' };
    }
    cells.into_iter().collect()
}

fn main() -> anyhow::Result<()> {
    let seed = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(2022);
    let result = run_simulation(&reference_scenario(seed))?;
    print!("{}", result.report.to_table());

    let max_day = result.timeline.iter().map(|e| e.day_offset).fold(1.0, f64::max);
    println!("\ntimeline, days since first contact (s scammer, o ours, * both)");
    println!("{:<26}|0{:>width$}|", "", format!("{max_day:.0}d"), width = WIDTH - 1);
    for (thread, state) in &result.threads {
        let events: Vec<&TimelineEvent> = result.timeline.iter().filter(|e| e.thread_key == thread.thread_key).collect();
        println!("{:<26}|{}| {}", thread.thread_key, lane(&events, max_day), state.status.name());
    }
    Ok(())
}
