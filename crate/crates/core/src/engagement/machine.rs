use chrono::{DateTime, Utc};

use super::{
    admit, delay_rng, delta, sample_delay, Admission, DraftSource, Effect, EngagementEvent,
    EngineConfig, EventBody, TerminationReason, ThreadState, ThreadStatus,
};
use crate::mail::{Direction, Thread};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StepError {
    #[error("event seq {got} out of order (expected {expected})")]
    OutOfOrderEvent { expected: u64, got: u64 },
    #[error("event at {at} precedes the previous event at {previous}")]
    TimeWentBackwards {
        previous: DateTime<Utc>,
        at: DateTime<Utc>,
    },
    #[error("{kind} is not allowed while {status}")]
    IllegalTransition {
        status: &'static str,
        kind: &'static str,
    },
}

fn terminate(state: &mut ThreadState, reason: TerminationReason) -> Vec<Effect> {
    state.status = ThreadStatus::Terminated { reason };
    vec![Effect::Terminate(reason), Effect::RecordStats]
}

fn schedule(state: &mut ThreadState, at: DateTime<Utc>, seq: u64, config: &EngineConfig) -> Vec<Effect> {
    let policy = config.delay_for(&state.thread_key);
    let mut rng = delay_rng(config.seed, &state.thread_key, seq);
    let send_at = at + delta(sample_delay(policy, &mut rng, state.outbound_count == 0));
    state.status = ThreadStatus::Scheduled { send_at };
    vec![Effect::ScheduleSend(send_at)]
}

/// Applies one event. Pure: the same state, event and config always give
/// the same result.
pub fn step(
    state: &ThreadState,
    event: &EngagementEvent,
    config: &EngineConfig,
) -> Result<(ThreadState, Vec<Effect>), StepError> {
    let expected = state.last_seq + 1;
    if event.seq != expected {
        return Err(StepError::OutOfOrderEvent {
            expected,
            got: event.seq,
        });
    }
    if let Some(previous) = state.last_event_at {
        if event.at < previous {
            return Err(StepError::TimeWentBackwards {
                previous,
                at: event.at,
            });
        }
    }
    let illegal = || StepError::IllegalTransition {
        status: state.status.name(),
        kind: event.body.kind(),
    };
    if state.status.is_terminated() {
        return Err(illegal());
    }

    let mut next = state.clone();
    next.last_seq = event.seq;
    next.last_event_at = Some(event.at);
    let at = event.at;
    let end = config.window.experiment_end;

    let effects = match (&state.status, &event.body) {
        (_, EventBody::TerminatedEvent { reason }) => terminate(&mut next, *reason),

        (ThreadStatus::New, EventBody::InboundReceived { message }) => {
            if message.direction != Direction::Inbound {
                return Err(illegal());
            }
            if next.thread_key.is_empty() {
                next.thread_key = message.thread_key.clone();
            }
            next.inbound_count = 1;
            next.first_contact_at = Some(message.timestamp);
            match admit(message, &config.window, at) {
                Admission::Admit => {
                    next.status = ThreadStatus::DraftPending;
                    vec![Effect::RunTriage, Effect::GenerateDraft]
                }
                Admission::RejectOutsideWindow => terminate(&mut next, TerminationReason::WindowClosed),
            }
        }
        (ThreadStatus::New, _) => return Err(illegal()),

        (_, EventBody::InboundReceived { message }) => {
            if message.direction != Direction::Inbound {
                return Err(illegal());
            }
            if at >= end {
                terminate(&mut next, TerminationReason::WindowClosed)
            } else {
                next.inbound_count += 1;
                if let ThreadStatus::AwaitingScammer { .. } = state.status {
                    next.transient_failures = 0;
                    next.status = ThreadStatus::DraftPending;
                    vec![Effect::GenerateDraft]
                } else {
                    // already answering; the pending reply will quote it
                    Vec::new()
                }
            }
        }

        (ThreadStatus::DraftPending, EventBody::TriageDecided { verdict }) => {
            if verdict.eligible {
                Vec::new()
            } else {
                terminate(&mut next, TerminationReason::Ineligible)
            }
        }

        (ThreadStatus::DraftPending, EventBody::DraftReady { draft }) => {
            next.draft = Some(draft.clone());
            if config.approval_required || draft.source == DraftSource::Exhausted || draft.body.trim().is_empty() {
                next.status = ThreadStatus::AwaitingApproval;
                vec![Effect::EnqueueApproval]
            } else {
                schedule(&mut next, at, event.seq, config)
            }
        }

        // operator edit of the queued draft
        (ThreadStatus::AwaitingApproval, EventBody::DraftReady { draft }) => {
            next.draft = Some(draft.clone());
            Vec::new()
        }
        (ThreadStatus::AwaitingApproval, EventBody::Approved {}) => {
            if state.draft.as_ref().is_none_or(|d| d.body.trim().is_empty()) {
                return Err(illegal());
            }
            schedule(&mut next, at, event.seq, config)
        }
        (ThreadStatus::AwaitingApproval, EventBody::DraftRejected {}) => {
            next.draft = None;
            next.status = ThreadStatus::DraftPending;
            vec![Effect::GenerateDraft]
        }

        (ThreadStatus::Scheduled { .. }, EventBody::SendScheduled { send_at }) => {
            next.status = ThreadStatus::Scheduled { send_at: *send_at };
            Vec::new()
        }
        (ThreadStatus::Scheduled { send_at }, EventBody::TimerFired {}) => {
            if at >= end {
                terminate(&mut next, TerminationReason::WindowClosed)
            } else if at < *send_at {
                Vec::new()
            } else {
                let body = state.draft.as_ref().map(|d| d.body.clone()).ok_or_else(illegal)?;
                next.outbound_count += 1;
                next.first_reply_at.get_or_insert(at);
                next.status = ThreadStatus::AwaitingScammer { since: at };
                vec![Effect::SendMail(body), Effect::RecordStats]
            }
        }

        (ThreadStatus::AwaitingScammer { .. }, EventBody::Sent { message }) => {
            if message.direction != Direction::Outbound {
                return Err(illegal());
            }
            Vec::new()
        }
        (ThreadStatus::AwaitingScammer { since }, EventBody::TimerFired {}) => {
            if at >= *since + delta(config.silence_timeout) {
                terminate(&mut next, TerminationReason::ScammerSilence)
            } else if at >= end {
                terminate(&mut next, TerminationReason::WindowClosed)
            } else {
                Vec::new()
            }
        }
        (ThreadStatus::DraftPending | ThreadStatus::AwaitingApproval, EventBody::TimerFired {}) => {
            if at >= end {
                terminate(&mut next, TerminationReason::WindowClosed)
            } else {
                Vec::new()
            }
        }

        (status, EventBody::DsnReceived { status: dsn }) => {
            next.dsn = Some(*dsn);
            if dsn.is_permanent() {
                terminate(&mut next, TerminationReason::DeliveryFailedPermanent)
            } else if dsn.is_transient() && matches!(status, ThreadStatus::AwaitingScammer { .. }) {
                // the mail never arrived: take it back and try again later
                next.outbound_count -= 1;
                if next.outbound_count == 0 {
                    next.first_reply_at = None;
                }
                next.transient_failures += 1;
                if next.transient_failures > config.max_transient_retries {
                    terminate(&mut next, TerminationReason::DeliveryFailedPermanent)
                } else {
                    let backoff = config.transient_backoff * 2u32.pow(next.transient_failures - 1);
                    let send_at = at + delta(backoff);
                    next.status = ThreadStatus::Scheduled { send_at };
                    vec![Effect::ScheduleSend(send_at)]
                }
            } else {
                Vec::new()
            }
        }

        _ => return Err(illegal()),
    };
    Ok((next, effects))
}

/// Folds [`step`] over a log, starting from a fresh state.
pub fn replay(events: &[EngagementEvent], config: &EngineConfig) -> Result<ThreadState, StepError> {
    let mut state = ThreadState::default();
    for e in events {
        state = step(&state, e, config)?.0;
    }
    Ok(state)
}

/// When the thread next needs a timer: the scheduled send, the silence
/// deadline, or the end of the window for anything else still open.
pub fn next_timer(state: &ThreadState, config: &EngineConfig) -> Option<DateTime<Utc>> {
    let end = config.window.experiment_end;
    match state.status {
        ThreadStatus::New | ThreadStatus::Terminated { .. } => None,
        ThreadStatus::DraftPending | ThreadStatus::AwaitingApproval => Some(end),
        ThreadStatus::Scheduled { send_at } => Some(send_at.min(end)),
        ThreadStatus::AwaitingScammer { since } => Some((since + delta(config.silence_timeout)).min(end)),
    }
}

/// The mail exchanged in a log: received messages plus sent ones, leaving
/// out sends that bounced with a transient failure (they are retried).
pub fn thread_from_events(thread_key: &str, events: &[EngagementEvent]) -> Thread {
    let mut thread = Thread::new(thread_key);
    let mut last_sent: Option<String> = None;
    for e in events {
        match &e.body {
            EventBody::InboundReceived { message } => thread.push(message.clone()),
            EventBody::Sent { message } => {
                last_sent = Some(message.id.clone());
                thread.push(message.clone());
            }
            EventBody::DsnReceived { status } if status.is_transient() => {
                if let Some(id) = last_sent.take() {
                    thread.messages.retain(|m| m.id != id);
                }
            }
            _ => {}
        }
    }
    thread
}
