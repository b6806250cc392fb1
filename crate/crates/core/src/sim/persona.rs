//! Scammer behaviour models.

use std::time::Duration;

use chrono::{DateTime, Utc};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::body::{synthesize_body, BodyShape, BodyStyle, ShapeError};
use crate::engagement::{delta, human_duration, DelayPolicy};
use crate::mail::{Attachment, Direction, MailMessage};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum PersonaKind {
    /// One mail with a pdf attached, never anything after.
    OneShotDropper { delivery_fails: bool },
    /// Keeps answering, then asks for money and waits.
    PersistentExtorter {
        exchanges_before_payment_ask: u32,
        /// How long it waits for each of our replies before losing interest.
        #[serde(default, with = "human_duration::option")]
        patience: Option<Duration>,
        #[serde(with = "human_duration")]
        reply_latency: Duration,
    },
    /// Answers in bursts of `burst_len`; before each burst it goes quiet for
    /// the next pause.
    BurstPause {
        burst_len: u32,
        #[serde(with = "human_duration::vec")]
        pause_durations: Vec<Duration>,
        #[serde(with = "human_duration")]
        reply_latency: Duration,
    },
    /// Very long mails; stops after this many of our replies.
    LongLetter { msg_chars: usize, gives_up_after: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaSpec {
    pub address: String,
    pub first_contact_at: DateTime<Utc>,
    #[serde(flatten)]
    pub kind: PersonaKind,
    /// Size of each mail the persona writes.
    pub body: BodyShape,
    #[serde(default = "default_subject")]
    pub subject: String,
    /// Reply delays the engine uses for this thread instead of the default.
    #[serde(default)]
    pub delay_override: Option<DelayPolicy>,
}

fn default_subject() -> String {
    "Urgent attention".to_string()
}

const LONG_LETTER_LATENCY: Duration = Duration::from_secs(86_400);

impl PersonaSpec {
    pub fn validate(&self) -> Result<(), String> {
        let positive = |d: &Duration, what: &str| {
            if d.is_zero() {
                Err(format!("{}: {what} must be positive", self.address))
            } else {
                Ok(())
            }
        };
        if !self.address.contains('@') {
            return Err(format!("persona address {:?} is not a mail address", self.address));
        }
        match &self.kind {
            PersonaKind::OneShotDropper { .. } => {}
            PersonaKind::PersistentExtorter {
                exchanges_before_payment_ask,
                patience,
                reply_latency,
            } => {
                if *exchanges_before_payment_ask == 0 {
                    return Err(format!("{}: exchanges_before_payment_ask must be at least 1", self.address));
                }
                positive(reply_latency, "reply_latency")?;
                if let Some(p) = patience {
                    positive(p, "patience")?;
                }
            }
            PersonaKind::BurstPause {
                burst_len,
                pause_durations,
                reply_latency,
            } => {
                if *burst_len == 0 || pause_durations.is_empty() {
                    return Err(format!("{}: bursts need a length and at least one pause", self.address));
                }
                positive(reply_latency, "reply_latency")?;
                for p in pause_durations {
                    positive(p, "pause")?;
                }
            }
            PersonaKind::LongLetter {
                msg_chars,
                gives_up_after,
            } => {
                if *msg_chars == 0 || *gives_up_after == 0 {
                    return Err(format!("{}: msg_chars and gives_up_after must be at least 1", self.address));
                }
            }
        }
        if let Some(p) = &self.delay_override {
            p.validate().map_err(|e| format!("{}: {e}", self.address))?;
        }
        Ok(())
    }

    pub fn delivery_fails(&self) -> bool {
        matches!(self.kind, PersonaKind::OneShotDropper { delivery_fails: true })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PersonaPhase {
    Writing,
    /// Asked for money and is waiting for it.
    AwaitingPayment,
    Done,
}

/// A persona's progress through its script.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Persona {
    pub spec: PersonaSpec,
    pub sent: u32,
    pub replies_seen: u32,
    pub phase: PersonaPhase,
    last_sent_at: Option<DateTime<Utc>>,
}

impl Persona {
    pub fn new(spec: PersonaSpec) -> Self {
        Persona {
            spec,
            sent: 0,
            replies_seen: 0,
            phase: PersonaPhase::Writing,
            last_sent_at: None,
        }
    }

    /// Our reply reached the persona at `now`. Returns when it will write
    /// back, if ever.
    pub fn on_reply(&mut self, now: DateTime<Utc>) -> Option<DateTime<Utc>> {
        self.replies_seen += 1;
        if self.phase != PersonaPhase::Writing {
            return None;
        }
        let wait = match &self.spec.kind {
            PersonaKind::OneShotDropper { .. } => None,
            PersonaKind::PersistentExtorter {
                exchanges_before_payment_ask,
                patience,
                reply_latency,
            } => {
                let lost_interest = match (patience, self.last_sent_at) {
                    (Some(p), Some(last)) => now > last + delta(*p),
                    _ => false,
                };
                (!lost_interest && self.sent <= *exchanges_before_payment_ask).then_some(*reply_latency)
            }
            PersonaKind::BurstPause {
                burst_len,
                pause_durations,
                reply_latency,
            } => {
                let j = self.replies_seen - 1;
                let total = burst_len * pause_durations.len() as u32;
                if j >= total {
                    None
                } else if j.is_multiple_of(*burst_len) {
                    Some(pause_durations[(j / burst_len) as usize])
                } else {
                    Some(*reply_latency)
                }
            }
            PersonaKind::LongLetter { gives_up_after, .. } => {
                (self.replies_seen < *gives_up_after).then_some(LONG_LETTER_LATENCY)
            }
        };
        if wait.is_none() {
            self.phase = PersonaPhase::Done;
        }
        wait.map(|w| now + delta(w))
    }

    /// Writes the next mail at `now`.
    pub fn compose<R: Rng + ?Sized>(
        &mut self,
        now: DateTime<Utc>,
        to_addr: &str,
        rng: &mut R,
    ) -> Result<MailMessage, ShapeError> {
        let first = self.sent == 0;
        let payment = matches!(
            self.spec.kind,
            PersonaKind::PersistentExtorter { exchanges_before_payment_ask, .. } if self.sent == exchanges_before_payment_ask
        );
        let style = if first {
            BodyStyle::FirstContact
        } else if payment {
            BodyStyle::PaymentAsk
        } else {
            BodyStyle::Followup
        };
        let shape = match self.spec.kind {
            PersonaKind::LongLetter { msg_chars, .. } => BodyShape {
                chars: msg_chars,
                ..self.spec.body
            },
            _ => self.spec.body,
        };
        let body_text = synthesize_body(shape, style, rng)?;
        self.sent += 1;
        self.last_sent_at = Some(now);
        if payment {
            self.phase = PersonaPhase::AwaitingPayment;
        }
        let attachments = match self.spec.kind {
            PersonaKind::OneShotDropper { .. } => vec![Attachment {
                filename: "invoice.pdf".into(),
                media_type: "application/pdf".into(),
                size_bytes: 48_213,
            }],
            _ => Vec::new(),
        };
        let (local, domain) = self.spec.address.split_once('@').unwrap_or((&self.spec.address, "sim.invalid"));
        Ok(MailMessage {
            id: format!("{local}-{}@{domain}", self.sent),
            thread_key: self.spec.address.to_lowercase(),
            direction: Direction::Inbound,
            from_addr: self.spec.address.clone(),
            to_addr: to_addr.to_string(),
            subject: if first {
                self.spec.subject.clone()
            } else {
                format!("Re: {}", self.spec.subject)
            },
            timestamp: now,
            body_text,
            body_html: None,
            attachments,
            in_reply_to: None,
            delivery_status: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engagement::testing::t;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const DAY: Duration = Duration::from_secs(86_400);

    fn spec(kind: PersonaKind) -> PersonaSpec {
        PersonaSpec {
            address: "x@scam.test".into(),
            first_contact_at: t(11, 14, 0),
            kind,
            body: BodyShape { chars: 200, sentences: 3 },
            subject: default_subject(),
            delay_override: None,
        }
    }

    #[test]
    fn dropper_writes_once() {
        let mut p = Persona::new(spec(PersonaKind::OneShotDropper { delivery_fails: false }));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = p.compose(t(11, 14, 0), "me@x.org", &mut rng).unwrap();
        assert_eq!(m.attachments[0].media_type, "application/pdf");
        assert_eq!(p.on_reply(t(11, 15, 0)), None);
        assert_eq!(p.phase, PersonaPhase::Done);
    }

    #[test]
    fn extorter_asks_for_money_then_waits() {
        let mut p = Persona::new(spec(PersonaKind::PersistentExtorter {
            exchanges_before_payment_ask: 2,
            patience: None,
            reply_latency: DAY,
        }));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut now = t(11, 14, 0);
        p.compose(now, "me", &mut rng).unwrap();
        for _ in 0..2 {
            now = p.on_reply(now).unwrap();
            p.compose(now, "me", &mut rng).unwrap();
        }
        assert_eq!(p.sent, 3);
        assert_eq!(p.phase, PersonaPhase::AwaitingPayment);
        assert_eq!(p.on_reply(now), None);
        assert_eq!(p.phase, PersonaPhase::AwaitingPayment);
    }

    #[test]
    fn extorter_patience_runs_out() {
        let mut p = Persona::new(spec(PersonaKind::PersistentExtorter {
            exchanges_before_payment_ask: 5,
            patience: Some(2 * DAY),
            reply_latency: DAY,
        }));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        p.compose(t(11, 14, 0), "me", &mut rng).unwrap();
        assert_eq!(p.on_reply(t(11, 17, 0)), None);
    }

    #[test]
    fn burst_pause_schedule() {
        let mut p = Persona::new(spec(PersonaKind::BurstPause {
            burst_len: 2,
            pause_durations: vec![8 * DAY, 16 * DAY],
            reply_latency: DAY,
        }));
        let now = t(11, 14, 0);
        let waits: Vec<Option<i64>> = (0..5).map(|_| p.on_reply(now).map(|w| (w - now).num_days())).collect();
        assert_eq!(waits, [Some(8), Some(1), Some(16), Some(1), None]);
    }

    #[test]
    fn long_letter_length() {
        let mut p = Persona::new(spec(PersonaKind::LongLetter { msg_chars: 4572, gives_up_after: 1 }));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = p.compose(t(11, 14, 0), "me", &mut rng).unwrap();
        assert_eq!(crate::metrics::count_chars(&m.body_text), 4572);
        assert_eq!(p.on_reply(t(11, 15, 0)), None);
    }

    #[test]
    fn spec_validation() {
        assert!(spec(PersonaKind::OneShotDropper { delivery_fails: true }).validate().is_ok());
        assert!(spec(PersonaKind::BurstPause { burst_len: 0, pause_durations: vec![DAY], reply_latency: DAY })
            .validate()
            .is_err());
        assert!(spec(PersonaKind::PersistentExtorter {
            exchanges_before_payment_ask: 1,
            patience: None,
            reply_latency: Duration::ZERO
        })
        .validate()
        .is_err());
    }
}
