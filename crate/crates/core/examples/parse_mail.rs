//! Parse a scam mail with an attachment and the bounce that follows our
//! reply, then render the reply as it would go out.
//!
//! cargo run -p scambait --example parse_mail

use scambait::{parse_rfc822, render_reply, thread_key_of, Direction, MailMessage, Thread};

const SCAM: &str = "From: \"Barrister Kar\" <Kar@Scam.Example>\r\n\
To: bait@example.org\r\n\
Subject: =?UTF-8?Q?Urgent=3A_unclaimed_deposit?=\r\n\
Date: Mon, 14 Nov 2022 09:12:00 +0100\r\n\
Message-ID: <deposit-1@scam.example>\r\n\
MIME-Version: 1.0\r\n\
Content-Type: multipart/mixed; boundary=\"B\"\r\n\
\r\n\
--B\r\n\
Content-Type: text/plain; charset=utf-8\r\n\
\r\n\
Dear friend,\r\n\
\r\n\
A deposit of 4.5 million is waiting for a relative of the late client.\r\n\
Kindly reply so we can proceed.\r\n\
--B\r\n\
Content-Type: application/pdf; name=\"deposit.pdf\"\r\n\
Content-Disposition: attachment; filename=\"deposit.pdf\"\r\n\
Content-Transfer-Encoding: base64\r\n\
\r\n\
JVBERi0xLjQKJcOkw7zDtsOfCg==\r\n\
--B--\r\n";

const BOUNCE: &str = "From: MAILER-DAEMON@mx.scam.example\r\n\
To: bait@example.org\r\n\
Subject: Undelivered Mail Returned to Sender\r\n\
Date: Mon, 14 Nov 2022 21:13:00 +0000\r\n\
MIME-Version: 1.0\r\n\
Content-Type: multipart/report; report-type=delivery-status; boundary=\"R\"\r\n\
\r\n\
--R\r\n\
Content-Type: text/plain\r\n\
\r\n\
The mailbox is disabled.\r\n\
--R\r\n\
Content-Type: message/delivery-status\r\n\
\r\n\
Reporting-MTA: dns; mx.scam.example\r\n\
\r\n\
Final-Recipient: rfc822; kar@scam.example\r\n\
Action: failed\r\n\
Status: 5.2.1\r\n\
--R--\r\n";

fn show(label: &str, m: &MailMessage) {
    println!("== {label}");
    println!("  id           {}", m.id);
    println!("  thread key   {}", m.thread_key);
    println!("  from -> to   {} -> {}", m.from_addr, m.to_addr);
    println!("  subject      {}", m.subject);
    println!("  timestamp    {}", m.timestamp);
    for a in &m.attachments {
        println!("  attachment   {} ({}, {} bytes)", a.filename, a.media_type, a.size_bytes);
    }
    if let Some(status) = m.delivery_status {
        println!("  dsn status   {status} (permanent: {})", status.is_permanent());
    }
}

fn main() -> anyhow::Result<()> {
    let scam = parse_rfc822(SCAM.as_bytes())?;
    show("scam mail", &scam);
    println!("  body\n{}", scam.body_text.lines().map(|l| format!("    | {l}")).collect::<Vec<_>>().join("\n"));

    let bounce = parse_rfc822(BOUNCE.as_bytes())?;
    show("bounce", &bounce);
    assert_eq!(bounce.thread_key, thread_key_of(&scam)?);

    // our reply quotes the conversation so far below the signature
    let thread = Thread::from_messages(scam.thread_key.clone(), vec![scam.clone()]);
    let rendered = render_reply(&thread, "Thank you for telling me. What do you need from me?", "-- \nM. Rossi");
    println!("== reply body as sent\n{rendered}");

    let json = scam.to_json();
    let back: MailMessage = serde_json::from_str(&json)?;
    assert_eq!(back, scam);
    assert_eq!(back.direction, Direction::Inbound);
    println!("== canonical JSON ({} bytes) round-trips", json.len());
    Ok(())
}
