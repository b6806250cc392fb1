//! The operator control API over real HTTP: a service holding the reference
//! personas' first letters in review, approved and edited with plain requests.
//!
//! cargo run -p scambait --example control_api

use std::sync::{Arc, Mutex};

use chrono::{TimeZone, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use scambait::clock::VirtualClock;
use scambait::engagement::{Engine, MemoryStore};
use scambait::gateway::{router, ApiState, QueueItem, Service, SimMailbox, ThreadSummary};
use scambait::reply::TemplateGenerator;
use scambait::sim::{reference_scenario, Persona};
use scambait::GuardPolicy;

fn main() -> anyhow::Result<()> {
    let scenario = reference_scenario(1);
    let mut config = scenario.engine_config();
    config.approval_required = true;
    let mailbox = SimMailbox::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for spec in &scenario.personas {
        let mut persona = Persona::new(spec.clone());
        mailbox.deliver(persona.compose(spec.first_contact_at, &config.own_address, &mut rng)?);
    }
    let now = Utc.with_ymd_and_hms(2022, 12, 9, 9, 0, 0).unwrap();
    let mut service = Service::new(
        Engine::new(config, MemoryStore::default())?,
        Box::new(mailbox.clone()),
        Arc::new(TemplateGenerator::new(1)),
        GuardPolicy::default(),
    );
    service.poll(now);
    service.generate_pending(now);
    let service = Arc::new(Mutex::new(service));
    let app = router(ApiState { service: service.clone(), clock: Arc::new(VirtualClock::starting_at(now)) });

    let runtime = tokio::runtime::Runtime::new()?;
    let listener = runtime.block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))?;
    let base = format!("http://{}", listener.local_addr()?);
    runtime.spawn(async move { axum::serve(listener, app).await });
    println!("control API on {base}");

    let http = reqwest::blocking::Client::new();
    let queue: Vec<QueueItem> = http.get(format!("{base}/queue")).send()?.json()?;
    println!("\nGET /queue: {} drafts awaiting review", queue.len());
    for q in queue.iter().take(3) {
        println!("  {} {:?}...", q.thread_key, q.body.chars().take(60).collect::<String>());
    }

    let first = &queue[0];
    let resp = http.post(format!("{base}/drafts/{}/approve", first.draft_id)).send()?;
    println!("\nPOST approve {}: {} {}", first.thread_key, resp.status(), resp.text()?);

    let second = &queue[1];
    let leaky = json!({ "body": "Call me on +1 415 555 0142 and we can settle it." });
    let resp = http.post(format!("{base}/drafts/{}/edit", second.draft_id)).json(&leaky).send()?;
    println!("POST edit with a phone number: {} {}", resp.status(), resp.text()?);
    let clean = json!({ "body": "I would like to know more first. Which bank holds the money?" });
    let resp = http.post(format!("{base}/drafts/{}/edit", second.draft_id)).json(&clean).send()?;
    println!("POST edit, clean: {} {}", resp.status(), resp.text()?);

    let resp = http.post(format!("{base}/drafts/{}/approve", second.draft_id)).send()?;
    println!("POST approve the edited draft: {}", resp.status());
    let resp = http.post(format!("{base}/drafts/{}/approve", first.draft_id)).send()?;
    println!("approving twice: {}", resp.status());

    let threads: Vec<ThreadSummary> = http.get(format!("{base}/threads")).send()?.json()?;
    println!("\nGET /threads");
    for t in threads.iter().take(4) {
        println!("  {} {}", t.thread_key, t.status);
    }

    let service = service.lock().unwrap();
    for key in [&first.thread_key, &second.thread_key] {
        println!("{key} leaves at {}", service.timers()[key]);
    }
    drop(service);
    println!("\nGET /report\n{}", http.get(format!("{base}/report")).send()?.text()?);
    Ok(())
}
