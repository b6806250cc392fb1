//! Decide which mails of a small mbox are worth answering, with the default
//! rules and with a customised cue lexicon.
//!
//! cargo run -p scambait --example triage_inbox

use scambait::triage::{TriageRules, DEFAULT_LINK_IMPERATIVES, DEFAULT_REPLY_CUES};
use scambait::{classify, ingest_mailbox, MailboxFormat};

const MBOX: &str = "From kar@scam.example Mon Nov 14 09:00:00 2022
From: kar@scam.example
To: bait@example.org
Subject: Inheritance
Date: Mon, 14 Nov 2022 09:00:00 +0000
Message-ID: <1@scam.example>

Dear friend, you are named in the will of my late client. Kindly write back.

From help@paypa1.example Mon Nov 14 10:00:00 2022
From: help@paypa1.example
To: bait@example.org
Subject: PayPal account limited
Date: Mon, 14 Nov 2022 10:00:00 +0000
Message-ID: <2@paypa1.example>

Your PayPal account is limited. Click to verify: http://paypa1.example/login

From news@shop.example Mon Nov 14 11:00:00 2022
From: news@shop.example
To: bait@example.org
Subject: Weekly offers
Date: Mon, 14 Nov 2022 11:00:00 +0000
Message-ID: <3@shop.example>
Content-Type: text/html

<p>Big discounts this week!</p>

From lotto@win.example Mon Nov 14 12:00:00 2022
From: lotto@win.example
To: bait@example.org
Subject: Winner
Date: Mon, 14 Nov 2022 12:00:00 +0000
Message-ID: <4@win.example>

You won 2,000,000 EUR in our draw. Details at http://win.example/claim and
do get in touch with the claims agent today.
";

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("inbox.mbox");
    std::fs::write(&path, MBOX)?;
    let inbox = ingest_mailbox(&path, MailboxFormat::Mbox)?;
    let denylist = ["paypal"];

    println!("{:<24} {:<9} reasons", "sender", "engage?");
    for m in &inbox.messages {
        let v = classify(m, &denylist);
        println!("{:<24} {:<9} {:?}", m.from_addr, v.eligible, v.reasons);
    }

    // "get in touch" is not a default cue; adding it makes the lottery mail eligible
    let mut cues: Vec<&str> = DEFAULT_REPLY_CUES.to_vec();
    cues.push("get in touch");
    let rules = TriageRules::new(&cues, DEFAULT_LINK_IMPERATIVES);
    let lottery = inbox.messages.iter().find(|m| m.from_addr == "lotto@win.example").unwrap();
    println!(
        "\nwith \"get in touch\" as a cue: {:?}",
        rules.classify(lottery, &denylist)
    );
    Ok(())
}
