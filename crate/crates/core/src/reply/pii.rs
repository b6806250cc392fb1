//! Personal-detail leak detection for generated replies.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PiiKind {
    PhoneNumber,
    BankAccount,
    PostalAddress,
    EmailAddress,
}

/// One leak. Offsets are in characters (Unicode scalar values), end exclusive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PiiFinding {
    pub kind: PiiKind,
    pub start: usize,
    pub end: usize,
    pub excerpt: String,
}

static PHONE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\+?\d(?:[ .\-]?\d){6,14}").unwrap());
static IBAN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[A-Z]{2}\d{2}[A-Z0-9]{11,30}").unwrap());
static ACCOUNT_CUE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?is)\baccount\s+number\b.{0,40}?\d{6,}").unwrap());
static POSTAL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"\b\d{1,6}\s+(?:[A-Z][a-z]+\s+){0,3}(?i:street|avenue|road)\b|\b(?i:street|avenue|road)\s+\d{1,6}\b|(?i:\bP\.?\s?O\.?\s*Box)\s+\d+",
    )
    .unwrap()
});
static EMAIL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"[A-Za-z0-9._%+\-]+@[A-Za-z0-9\-]+(?:\.[A-Za-z0-9\-]+)+").unwrap()
});

/// IBAN checksum: rotate the first four characters to the end, map letters
/// to 10..35, and require the number to be 1 mod 97.
pub fn iban_checksum_ok(candidate: &str) -> bool {
    if candidate.len() < 5 || !candidate.is_ascii() {
        return false;
    }
    let (head, tail) = candidate.split_at(4);
    let mut rem: u32 = 0;
    for c in tail.chars().chain(head.chars()) {
        let v = match c {
            '0'..='9' => c as u32 - '0' as u32,
            'A'..='Z' => c as u32 - 'A' as u32 + 10,
            'a'..='z' => c as u32 - 'a' as u32 + 10,
            _ => return false,
        };
        rem = if v >= 10 {
            (rem * 100 + v) % 97
        } else {
            (rem * 10 + v) % 97
        };
    }
    rem == 1
}

fn standalone(text: &str, start: usize, end: usize) -> bool {
    let before = text[..start].chars().next_back();
    let after = text[end..].chars().next();
    !before.is_some_and(|c| c.is_alphanumeric() || c == '+')
        && !after.is_some_and(|c| c.is_alphanumeric())
}

/// All leaks in `text`: non-overlapping, leftmost first, longest among
/// candidates starting at the same place.
pub fn scan_pii(text: &str) -> Vec<PiiFinding> {
    let mut candidates: Vec<(usize, usize, PiiKind)> = Vec::new();
    for m in PHONE.find_iter(text) {
        if standalone(text, m.start(), m.end()) {
            candidates.push((m.start(), m.end(), PiiKind::PhoneNumber));
        }
    }
    for m in IBAN.find_iter(text) {
        if standalone(text, m.start(), m.end()) && iban_checksum_ok(m.as_str()) {
            candidates.push((m.start(), m.end(), PiiKind::BankAccount));
        }
    }
    for m in ACCOUNT_CUE.find_iter(text) {
        candidates.push((m.start(), m.end(), PiiKind::BankAccount));
    }
    for m in POSTAL.find_iter(text) {
        candidates.push((m.start(), m.end(), PiiKind::PostalAddress));
    }
    for m in EMAIL.find_iter(text) {
        candidates.push((m.start(), m.end(), PiiKind::EmailAddress));
    }
    candidates.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));

    let mut findings = Vec::new();
    let mut covered_to = 0usize;
    for (start, end, kind) in candidates {
        if start < covered_to {
            continue;
        }
        covered_to = end;
        let char_start = text[..start].chars().count();
        let excerpt = text[start..end].to_string();
        findings.push(PiiFinding {
            kind,
            start: char_start,
            end: char_start + excerpt.chars().count(),
            excerpt,
        });
    }
    findings
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent mod-97 check using arbitrary precision via string
    /// arithmetic on u128 chunks.
    fn oracle_mod97(iban: &str) -> u32 {
        let rearranged = format!("{}{}", &iban[4..], &iban[..4]);
        let digits: String = rearranged
            .chars()
            .map(|c| {
                if c.is_ascii_digit() {
                    c.to_string()
                } else {
                    (c as u32 - 'A' as u32 + 10).to_string()
                }
            })
            .collect();
        let mut rem: u128 = 0;
        for chunk in digits.as_bytes().chunks(20) {
            let s = std::str::from_utf8(chunk).unwrap();
            let n: u128 = format!("{rem}{s}").parse().unwrap();
            rem = n % 97;
        }
        rem as u32
    }

    const CLAIM_REPLY: &str = "Dear Mr. [OMITTED],\n\nThank you for reaching out to me regarding the cash \
deposit and properties left behind by my late relative. I am interested in proceeding with making a \
claim on these assets and would appreciate any assistance you can provide.\n\nI understand that you \
need my personal information in order to facilitate the process. Please note that I am unable to \
disclose my full name, address, or any other personal information via email. However, I am happy to \
speak with you by phone or schedule a meeting in person to discuss this further.\n\nPlease let me know \
how you would like to proceed.\n\nBest regards,\n[OMITTED]";

    #[test]
    fn empty_text() {
        assert!(scan_pii("").is_empty());
    }

    #[test]
    fn valid_iban_is_found() {
        let iban = "GB82WEST12345698765432";
        assert_eq!(oracle_mod97(iban), 1);
        assert!(iban_checksum_ok(iban));
        let text = format!("Please wire it to {iban} today.");
        let f = scan_pii(&text);
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].kind, PiiKind::BankAccount);
        assert_eq!(f[0].excerpt, iban);
        assert_eq!(f[0].start, 18);
        assert_eq!(f[0].end, 18 + iban.len());
    }

    #[test]
    fn iban_with_bad_checksum_is_ignored() {
        let bad = "GB82WEST12345698765433";
        assert_ne!(oracle_mod97(bad), 1);
        assert!(!iban_checksum_ok(bad));
        assert!(scan_pii(&format!("to {bad} today")).is_empty());
    }

    #[test]
    fn more_ibans_agree_with_oracle() {
        for iban in [
            "DE89370400440532013000",
            "NL91ABNA0417164300",
            "FR1420041010050500013M02606",
            "IT60X0542811101000000123456",
        ] {
            assert_eq!(oracle_mod97(iban), 1, "{iban}");
            assert!(iban_checksum_ok(iban));
            assert_eq!(scan_pii(iban)[0].kind, PiiKind::BankAccount, "{iban}");
        }
    }

    #[test]
    fn claim_reply_has_no_findings() {
        assert!(scan_pii(CLAIM_REPLY).is_empty());
    }

    #[test]
    fn phone_numbers() {
        let f = scan_pii("call me at +1 555 123 4567 tonight");
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].kind, PiiKind::PhoneNumber);
        assert_eq!(f[0].excerpt, "+1 555 123 4567");
        assert_eq!(scan_pii("ring 06-1234.567")[0].excerpt, "06-1234.567");
        // six digits is too short, sixteen too long
        assert!(scan_pii("code 123456 ok").is_empty());
        assert!(scan_pii("card 1234567890123456 ok").is_empty());
        // digits glued to letters are not a phone number
        assert!(scan_pii("ref AB1234567").is_empty());
    }

    #[test]
    fn account_number_cue() {
        let f = scan_pii("My account number is, as requested, 00123456.");
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].kind, PiiKind::BankAccount);
        assert!(f[0].excerpt.starts_with("account number"));
        assert!(f[0].excerpt.ends_with("00123456"));
        // digits too far from the cue fall back to the phone rule
        let far = format!("account number {} 00123456", "x".repeat(45));
        let f = scan_pii(&far);
        assert!(f.iter().all(|f| f.kind != PiiKind::BankAccount));
    }

    #[test]
    fn postal_addresses() {
        let f = scan_pii("I live at 221 Baker Street, London.");
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].kind, PiiKind::PostalAddress);
        assert_eq!(f[0].excerpt, "221 Baker Street");
        assert_eq!(scan_pii("Write to P.O. Box 4412.")[0].kind, PiiKind::PostalAddress);
        assert_eq!(scan_pii("avenue 12 corner")[0].excerpt, "avenue 12");
        assert!(scan_pii("It is down the road from here.").is_empty());
    }

    #[test]
    fn email_addresses() {
        let f = scan_pii("mail john.doe@example.co.uk or not@local");
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].kind, PiiKind::EmailAddress);
        assert_eq!(f[0].excerpt, "john.doe@example.co.uk");
    }

    #[test]
    fn char_offsets_not_bytes() {
        let f = scan_pii("Grüße: 555-123-4567");
        assert_eq!(f[0].start, 7);
        assert_eq!(f[0].end, 19);
    }

    #[test]
    fn overlap_keeps_leftmost_longest() {
        // cue match starts before the digits the phone rule would take
        let f = scan_pii("account number 5551234567");
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].kind, PiiKind::BankAccount);
    }

    proptest::proptest! {
        #[test]
        fn findings_sorted_and_disjoint(text in "[A-Za-z0-9 .@+\\-\n]{0,120}") {
            let f = scan_pii(&text);
            let n = text.chars().count();
            for w in f.windows(2) {
                proptest::prop_assert!(w[0].end <= w[1].start);
            }
            for x in &f {
                proptest::prop_assert!(x.start < x.end && x.end <= n);
                let sub: String = text.chars().skip(x.start).take(x.end - x.start).collect();
                proptest::prop_assert_eq!(&sub, &x.excerpt);
            }
        }
    }
}
