use std::cmp::Reverse;
use std::collections::BinaryHeap;

/// A message delivered by the event loop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetEvent<P> {
    /// Delivery order; strictly increasing across the whole run.
    pub seq: u64,
    /// Logical delivery time.
    pub at: u64,
    pub from: usize,
    pub to: usize,
    pub payload: P,
}

/// Logical-time event queue. Events at equal times leave in the order they
/// were scheduled, so delivery order is a function of the schedule alone.
#[derive(Debug)]
pub struct EventQueue<P> {
    heap: BinaryHeap<Reverse<(u64, u64, usize)>>,
    slots: Vec<Option<(usize, usize, P)>>,
    scheduled: u64,
    delivered: u64,
    now: u64,
}

impl<P> Default for EventQueue<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> EventQueue<P> {
    pub fn new() -> Self {
        Self {
            heap: BinaryHeap::new(),
            slots: Vec::new(),
            scheduled: 0,
            delivered: 0,
            now: 0,
        }
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn delivered(&self) -> u64 {
        self.delivered
    }

    /// Schedules `payload` for delivery at `at`, never earlier than now.
    pub fn schedule(&mut self, at: u64, from: usize, to: usize, payload: P) {
        let at = at.max(self.now);
        self.slots.push(Some((from, to, payload)));
        self.heap
            .push(Reverse((at, self.scheduled, self.slots.len() - 1)));
        self.scheduled += 1;
    }

    pub fn pop(&mut self) -> Option<NetEvent<P>> {
        let Reverse((at, _, slot)) = self.heap.pop()?;
        let (from, to, payload) = self.slots[slot].take().expect("each slot pops once");
        self.now = at;
        let seq = self.delivered;
        self.delivered += 1;
        if self.heap.is_empty() {
            self.slots.clear();
        }
        Some(NetEvent {
            seq,
            at,
            from,
            to,
            payload,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orders_by_time_then_schedule() {
        let mut q = EventQueue::new();
        q.schedule(5, 0, 1, "late");
        q.schedule(2, 0, 1, "first");
        q.schedule(2, 0, 2, "second");
        let got: Vec<_> = std::iter::from_fn(|| q.pop())
            .map(|e| (e.seq, e.at, e.payload))
            .collect();
        assert_eq!(got, vec![(0, 2, "first"), (1, 2, "second"), (2, 5, "late")]);
        assert_eq!(q.now(), 5);
    }

    #[test]
    fn no_scheduling_into_the_past() {
        let mut q = EventQueue::new();
        q.schedule(10, 0, 0, ());
        q.pop();
        q.schedule(3, 0, 0, ());
        assert_eq!(q.pop().unwrap().at, 10);
    }
}
