//! The generate, check, regenerate loop around a reply generator: a leaked
//! phone number forces the stricter preamble, refusals are retried, and the
//! loop gives up after the attempt budget.
//!
//! cargo run -p scambait --example guarded_reply
//!
//! Set SCAMBAIT_ENDPOINT (and optionally SCAMBAIT_MODEL, SCAMBAIT_TOKEN_VAR)
//! to also ask a real chat-completion endpoint.

use std::sync::Mutex;

use scambait::reply::{GeneratorError, HttpGenerator, HttpGeneratorConfig, ReplyError, TemplateGenerator};
use scambait::{
    generate_reply, parse_rfc822, scan_pii, Generator, GeneratorRequest, GuardPolicy, Thread,
};

/// Plays back canned answers, one per call.
struct Canned(Mutex<Vec<&'static str>>);

impl Generator for Canned {
    fn generate(&self, request: &GeneratorRequest) -> Result<String, GeneratorError> {
        let mut left = self.0.lock().unwrap();
        let text = if left.len() > 1 { left.remove(0) } else { left[0] };
        println!("    preamble {} chars -> {text:?}", request.preamble.len());
        Ok(text.to_string())
    }
}

fn main() -> anyhow::Result<()> {
    let raw = "From: kar@scam.example\r\nTo: bait@example.org\r\nSubject: Claim\r\n\
Date: Mon, 14 Nov 2022 09:00:00 +0000\r\n\r\n\
Dear friend, send me your phone number so we can talk about the deposit. Reply soon.\r\n";
    let scam = parse_rfc822(raw.as_bytes())?;
    let thread = Thread::from_messages(scam.thread_key.clone(), vec![scam]);
    let policy = GuardPolicy::default();

    println!("1. a leak, then a clean answer");
    let leaky = Canned(Mutex::new(vec![
        "Of course, my number is +39 347 555 0199.",
        "I would rather keep talking here. How big is the deposit?",
    ]));
    let draft = generate_reply(&thread, &leaky, &policy)?;
    println!(
        "   accepted after {} attempts at level {}; findings per attempt: {:?}",
        draft.attempts,
        draft.preamble_level_used,
        draft.findings_history.iter().map(Vec::len).collect::<Vec<_>>()
    );

    println!("2. a generator that always refuses");
    let refusing = Canned(Mutex::new(vec!["I'm sorry, but I cannot help with that."]));
    match generate_reply(&thread, &refusing, &GuardPolicy::with_max_attempts(3)) {
        Err(ReplyError::GuardrailExhausted(d)) => {
            println!("   gave up after {} attempts ({} refusals); an operator has to write this one", d.attempts, d.refusals_seen)
        }
        other => println!("   unexpected: {other:?}"),
    }

    println!("3. the offline template generator");
    let draft = generate_reply(&thread, &TemplateGenerator::new(42), &policy)?;
    println!("   {:?}", draft.body);
    assert!(scan_pii(&draft.body).is_empty());

    if let Ok(endpoint) = std::env::var("SCAMBAIT_ENDPOINT") {
        println!("4. {endpoint}");
        let config = HttpGeneratorConfig {
            endpoint_url: endpoint,
            model: std::env::var("SCAMBAIT_MODEL").unwrap_or_else(|_| "gpt-3.5-turbo".into()),
            auth_env_var: std::env::var("SCAMBAIT_TOKEN_VAR").ok(),
            ..HttpGeneratorConfig::default()
        };
        match generate_reply(&thread, &HttpGenerator::new(config), &policy) {
            Ok(d) => println!("   {:?} after {} attempts", d.body, d.attempts),
            Err(e) => println!("   failed: {e}"),
        }
    }
    Ok(())
}
