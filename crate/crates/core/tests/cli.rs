//! The command-line front end: outputs and exit codes.

mod common;

use std::path::Path;
use std::process::{Command, Output};

fn scambait(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scambait"))
        .args(args)
        .env("RUST_LOG", "off")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn reference_config() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("configs/reference_scenario.toml")
        .display()
        .to_string()
}

const ELIGIBLE: &str = "From: Kar <kar@scam.example>\nTo: bait@example.org\nSubject: Claim\n\
Date: Mon, 14 Nov 2022 09:00:00 +0000\nMessage-ID: <a1@scam.example>\n\n\
Dear friend, I have funds for you. Will you reply to me?\n";

const PHISHING: &str = "From: Bank <help@bank.example>\nTo: bait@example.org\nSubject: Account\n\
Date: Mon, 14 Nov 2022 10:00:00 +0000\nMessage-ID: <a2@bank.example>\n\n\
Click here to verify your account: http://x.example\n";

#[test]
fn triage_prints_the_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("m.eml");
    std::fs::write(&file, ELIGIBLE).unwrap();
    let out = scambait(&["triage", file.to_str().unwrap()]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["eligible"], true);
    assert_eq!(v["reasons"], serde_json::json!(["PlainTextReplyRequest"]));
}

#[test]
fn triage_applies_the_denylist() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("m.eml");
    std::fs::write(&file, ELIGIBLE.replace("funds for you", "a PayPal refund")).unwrap();
    let deny = dir.path().join("brands.txt");
    std::fs::write(&deny, "# brands\npaypal\n").unwrap();
    let out = scambait(&["triage", file.to_str().unwrap(), "--denylist", deny.to_str().unwrap()]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["eligible"], false);
    assert!(v["reasons"].as_array().unwrap().contains(&"MimicsKnownService".into()));
}

#[test]
fn ingest_prints_one_verdict_per_message() {
    let dir = tempfile::tempdir().unwrap();
    let mbox = dir.path().join("inbox.mbox");
    let text = format!(
        "From kar@scam.example Mon Nov 14 09:00:00 2022\n{ELIGIBLE}\nFrom help@bank.example Mon Nov 14 10:00:00 2022\n{PHISHING}\n"
    );
    std::fs::write(&mbox, text).unwrap();
    let out = scambait(&["ingest", mbox.to_str().unwrap(), "--format", "mbox"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines: Vec<serde_json::Value> = stdout(&out).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["thread_key"], "kar@scam.example");
    assert_eq!(lines[0]["eligible"], true);
    assert_eq!(lines[1]["eligible"], false);
    assert!(lines[1]["reasons"].as_array().unwrap().contains(&"PhishingLinkPattern".into()));
}

#[test]
fn ingest_reads_maildir() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["cur", "new", "tmp"] {
        std::fs::create_dir(dir.path().join(sub)).unwrap();
    }
    std::fs::write(dir.path().join("new/1.eml"), ELIGIBLE).unwrap();
    let out = scambait(&["ingest", dir.path().to_str().unwrap(), "--format", "maildir"]);
    assert!(out.status.success());
    assert_eq!(stdout(&out).lines().count(), 1);
}

#[test]
fn simulate_then_report_and_timeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("run");
    let out = scambait(&["simulate", &reference_config(), "--out", data.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("mean engagement: 18.1 days"));
    for f in ["engine.json", "report.csv", "timeline.csv", "scammer10@s10.example.jsonl"] {
        assert!(data.join(f).exists(), "{f} missing");
    }

    let out = scambait(&["report", data.to_str().unwrap(), "--format", "csv"]);
    assert!(out.status.success());
    let csv = stdout(&out);
    assert_eq!(csv, std::fs::read_to_string(data.join("report.csv")).unwrap());
    let rows = scambait::metrics::parse_report_csv(&csv).unwrap();
    assert_eq!(rows.iter().map(|r| r.total_mails).collect::<Vec<_>>(), [2, 2, 2, 12, 2, 10, 2, 14, 2, 18, 2]);

    let out = scambait(&["timeline", data.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(stdout(&out), std::fs::read_to_string(data.join("timeline.csv")).unwrap());
}

#[test]
fn report_of_the_volume_fixture() {
    let dir = tempfile::tempdir().unwrap();
    common::write_volume_fixture(dir.path());
    let out = scambait(&["report", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert_eq!(text.matches("Failed (5.2.1)").count(), 3);
    assert!(text.contains("threads: 11"));
}

#[test]
fn input_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    assert_eq!(scambait(&["triage", missing.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(scambait(&["report", missing.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(scambait(&["timeline", missing.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(
        scambait(&["ingest", missing.to_str().unwrap(), "--format", "mbox"]).status.code(),
        Some(1)
    );
    let garbage = dir.path().join("g.eml");
    std::fs::write(&garbage, "not a mail at all").unwrap();
    assert_eq!(scambait(&["triage", garbage.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[window]\ncollection_start = 3\n").unwrap();
    assert_eq!(scambait(&["simulate", bad.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(scambait(&["serve", bad.to_str().unwrap()]).status.code(), Some(2));

    // a secret written into the file instead of named by environment variable
    let text = std::fs::read_to_string(reference_config()).unwrap() + "\n[mailbox]\npassword = \"hunter2\"\n";
    let secret = dir.path().join("secret.toml");
    std::fs::write(&secret, text).unwrap();
    let out = scambait(&["simulate", secret.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&out.stderr).contains("hunter2"));

    // valid file without personas to simulate
    let plain = dir.path().join("plain.toml");
    std::fs::write(
        &plain,
        "[window]\ncollection_start = 2022-11-12T00:00:00Z\ncollection_end = 2022-12-12T00:00:00Z\n\
experiment_end = 2023-01-11T00:00:00Z\n",
    )
    .unwrap();
    assert_eq!(scambait(&["simulate", plain.to_str().unwrap()]).status.code(), Some(2));
}
