//! Filler mail bodies with exact character and sentence counts.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BodyShape {
    pub chars: usize,
    pub sentences: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BodyStyle {
    /// Opening mail; the first sentence is a question.
    FirstContact,
    Followup,
    PaymentAsk,
}

const OPENING: &[&str] = &[
    "inheritance", "deposit", "fund", "beneficiary", "barrister", "claim", "estate", "relative",
    "consignment", "compensation", "confidential", "urgent", "late", "client", "proceeds",
];
const FOLLOWUP: &[&str] = &[
    "process", "documents", "lawyer", "approval", "bank", "release", "certificate", "office",
    "trust", "details", "procedure", "cooperation", "kindly", "assure", "soon", "today",
];
const PAYMENT: &[&str] = &[
    "western", "union", "transfer", "fee", "charges", "receiver", "payment", "clearance",
    "tax", "send", "amount", "quickly", "account", "name", "country",
];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cannot fit {sentences} sentences into {chars} characters")]
pub struct ShapeError {
    pub chars: usize,
    pub sentences: usize,
}

fn sentence<R: Rng + ?Sized>(len: usize, terminator: char, vocab: &[&str], rng: &mut R) -> String {
    let body_len = len - 1;
    let mut s = String::with_capacity(len + 16);
    while s.len() < body_len {
        if !s.is_empty() {
            s.push(' ');
        }
        s.push_str(vocab.choose(rng).expect("non-empty vocabulary"));
    }
    s.truncate(body_len);
    if s.ends_with(' ') {
        s.pop();
        s.push('s');
    }
    let mut out: String = s[..1].to_uppercase();
    out.push_str(&s[1..]);
    out.push(terminator);
    out
}

/// A body of exactly `shape.chars` characters and `shape.sentences`
/// sentences, made of letters, spaces, blank-line paragraph breaks and
/// sentence terminators only.
pub fn synthesize_body<R: Rng + ?Sized>(shape: BodyShape, style: BodyStyle, rng: &mut R) -> Result<String, ShapeError> {
    let n = shape.sentences;
    let err = ShapeError {
        chars: shape.chars,
        sentences: n,
    };
    if n == 0 {
        return Err(err);
    }
    // paragraph break after every fifth sentence when there is room
    let paragraph = |i: usize| (i + 1).is_multiple_of(5);
    let mut seps: Vec<&str> = (0..n - 1).map(|i| if paragraph(i) { "\n\n" } else { " " }).collect();
    let mut sep_len: usize = seps.iter().map(|s| s.len()).sum();
    if shape.chars < sep_len + 2 * n {
        seps = vec![" "; n - 1];
        sep_len = n - 1;
    }
    let available = shape.chars.checked_sub(sep_len).ok_or(err.clone())?;
    if available < 2 * n {
        return Err(err);
    }
    let vocab = match style {
        BodyStyle::FirstContact => OPENING,
        BodyStyle::Followup => FOLLOWUP,
        BodyStyle::PaymentAsk => PAYMENT,
    };
    let (base, extra) = (available / n, available % n);
    let mut out = String::with_capacity(shape.chars);
    for i in 0..n {
        let len = base + usize::from(i < extra);
        let terminator = match (style, i) {
            (BodyStyle::FirstContact, 0) => '?',
            (BodyStyle::PaymentAsk, _) if i + 1 == n => '!',
            _ => '.',
        };
        out.push_str(&sentence(len, terminator, vocab, rng));
        if i + 1 < n {
            out.push_str(seps[i]);
        }
    }
    Ok(out)
}
