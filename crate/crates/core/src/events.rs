//! Ordered, replayable event stream for one project.

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use crate::jobs::JobEnvelope;
use crate::model::Mutation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)] // short-lived; boxing buys nothing
pub enum EventKind {
    Mutation {
        name: String,
        mutation: Mutation,
        /// Reverts `mutation`; lets undo history survive a restart.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        inverse: Option<Mutation>,
    },
    Undo {
        of_seq: u64,
    },
    Redo {
        of_seq: u64,
    },
    Job {
        job: JobEnvelope,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    /// Position in the stream; strictly increasing.
    pub seq: u64,
    /// Project revision after the event.
    pub revision: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl Event {
    pub fn is_mutation(&self) -> bool {
        !matches!(self.kind, EventKind::Job { .. })
    }
}

struct Inner {
    log: Vec<Event>,
    next_seq: u64,
}

/// Append-only log plus live fan-out to subscribers.
pub struct EventBus {
    inner: Mutex<Inner>,
    tx: broadcast::Sender<Event>,
}

impl std::fmt::Debug for EventBus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EventBus")
            .field("next_seq", &self.inner.lock().next_seq)
            .finish()
    }
}

impl Default for EventBus {
    fn default() -> Self {
        Self::starting_at(1)
    }
}

impl EventBus {
    pub fn starting_at(first_seq: u64) -> Self {
        let (tx, _) = broadcast::channel(1024);
        Self {
            inner: Mutex::new(Inner {
                log: Vec::new(),
                next_seq: first_seq.max(1),
            }),
            tx,
        }
    }

    /// Bus preloaded with a persisted log, continuing after its last event.
    pub fn from_log(log: Vec<Event>) -> Self {
        let next = log.last().map_or(1, |e| e.seq + 1);
        let bus = Self::starting_at(next);
        bus.inner.lock().log = log;
        bus
    }

    pub fn publish(&self, revision: u64, kind: EventKind) -> Event {
        let mut inner = self.inner.lock();
        let event = Event {
            seq: inner.next_seq,
            revision,
            kind,
        };
        inner.next_seq += 1;
        inner.log.push(event.clone());
        // Sending under the lock keeps broadcast order equal to log order.
        let _ = self.tx.send(event.clone());
        event
    }

    /// Events with `seq > after`.
    pub fn since(&self, after: u64) -> Vec<Event> {
        let inner = self.inner.lock();
        inner.log.iter().filter(|e| e.seq > after).cloned().collect()
    }

    /// Backlog after `after` plus a receiver for everything published later,
    /// with no gap or overlap between the two.
    pub fn subscribe_from(&self, after: u64) -> (Vec<Event>, broadcast::Receiver<Event>) {
        let inner = self.inner.lock();
        let rx = self.tx.subscribe();
        let backlog = inner.log.iter().filter(|e| e.seq > after).cloned().collect();
        (backlog, rx)
    }

    pub fn last_seq(&self) -> u64 {
        self.inner.lock().next_seq - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(text: &str) -> EventKind {
        EventKind::Mutation {
            name: "set_story_context".into(),
            mutation: Mutation::SetStoryContext { text: text.into() },
            inverse: None,
        }
    }

    #[test]
    fn replay_after_sequence() {
        let bus = EventBus::default();
        for i in 0..5 {
            bus.publish(i, ctx(&i.to_string()));
        }
        let replay = bus.since(3);
        assert_eq!(replay.iter().map(|e| e.seq).collect::<Vec<_>>(), vec![4, 5]);
    }

    #[tokio::test]
    async fn subscribers_see_identical_order() {
        let bus = EventBus::default();
        bus.publish(1, ctx("a"));
        let (b1, mut r1) = bus.subscribe_from(0);
        let (b2, mut r2) = bus.subscribe_from(0);
        bus.publish(2, ctx("b"));
        bus.publish(3, ctx("c"));
        let mut s1: Vec<u64> = b1.iter().map(|e| e.seq).collect();
        let mut s2: Vec<u64> = b2.iter().map(|e| e.seq).collect();
        for _ in 0..2 {
            s1.push(r1.recv().await.unwrap().seq);
            s2.push(r2.recv().await.unwrap().seq);
        }
        assert_eq!(s1, vec![1, 2, 3]);
        assert_eq!(s1, s2);
    }
}
