//! How long replies wait before leaving: the default log-uniform policy,
//! a fixed delay, and a first-reply override.
//!
//! cargo run -p scambait --example delay_sampling

use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scambait::{sample_delay, DelayPolicy};

fn hours(d: Duration) -> f64 {
    d.as_secs_f64() / 3600.0
}

fn main() {
    let policy = DelayPolicy::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2022);
    let mut draws: Vec<Duration> = (0..10_000).map(|_| sample_delay(&policy, &mut rng, false)).collect();
    draws.sort();

    println!(
        "default policy: {} to {}",
        humantime::format_duration(policy.min_delay),
        humantime::format_duration(policy.max_delay)
    );
    for q in [0.01, 0.1, 0.25, 0.5, 0.75, 0.9, 0.99] {
        let d = draws[((draws.len() - 1) as f64 * q) as usize];
        println!("  p{:<3} {:>8.2} h", (q * 100.0) as u32, hours(d));
    }

    // equal-width buckets in log space should hold roughly equal counts
    let (lo, hi) = (policy.min_delay.as_secs_f64().ln(), policy.max_delay.as_secs_f64().ln());
    let buckets = 8;
    let mut counts = vec![0usize; buckets];
    for d in &draws {
        let i = ((d.as_secs_f64().ln() - lo) / (hi - lo) * buckets as f64) as usize;
        counts[i.min(buckets - 1)] += 1;
    }
    println!("\nlog-spaced histogram");
    for (i, c) in counts.iter().enumerate() {
        let from = (lo + (hi - lo) * i as f64 / buckets as f64).exp();
        println!("  >= {:>8.2} h {:>5} {}", from / 3600.0, c, "#".repeat(c / 40));
    }

    let fixed = DelayPolicy::fixed(Duration::from_secs(12 * 3600));
    println!("\nfixed 12h: {:?}", sample_delay(&fixed, &mut rng, false));

    let slow_start = DelayPolicy {
        first_reply_override: Some(Duration::from_secs(17 * 86_400)),
        ..DelayPolicy::default()
    };
    println!(
        "first reply with a 17 day override: {}, later replies: {}",
        humantime::format_duration(sample_delay(&slow_start, &mut rng, true)),
        humantime::format_duration(sample_delay(&slow_start, &mut rng, false))
    );
}
