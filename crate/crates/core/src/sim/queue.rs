use std::collections::BTreeMap;

use crate::Tick;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("cannot schedule at tick {at}, current tick is {now}")]
pub struct PastEvent {
    pub at: Tick,
    pub now: Tick,
}

/// Events ordered by (tick, insertion sequence).
#[derive(Debug, Clone)]
pub struct EventQueue<E> {
    events: BTreeMap<(Tick, u64), E>,
    next_seq: u64,
    now: Tick,
}

impl<E> EventQueue<E> {
    pub fn new(now: Tick) -> EventQueue<E> {
        EventQueue { events: BTreeMap::new(), next_seq: 0, now }
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn schedule(&mut self, event: E, at: Tick) -> Result<(), PastEvent> {
        if at < self.now {
            return Err(PastEvent { at, now: self.now });
        }
        self.events.insert((at, self.next_seq), event);
        self.next_seq += 1;
        Ok(())
    }

    /// Next event at or before `until`; advances the clock to its tick.
    pub fn pop_until(&mut self, until: Tick) -> Option<(Tick, E)> {
        let (&(at, seq), _) = self.events.first_key_value()?;
        if at > until {
            return None;
        }
        let event = self.events.remove(&(at, seq)).expect("key just seen");
        self.now = at;
        Some((at, event))
    }

    pub fn next_event(&mut self) -> Option<(Tick, E)> {
        self.pop_until(Tick::MAX)
    }

    /// Move the clock forward with no event.
    pub fn advance_to(&mut self, now: Tick) {
        self.now = self.now.max(now);
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }
}
