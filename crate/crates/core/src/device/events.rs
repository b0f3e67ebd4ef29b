use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use crate::ids::AppId;
use crate::time::Nanos;

/// Events driving the simulation loop.
///
/// Atom dispatch, atom completion and sync release are handled inline by the
/// engine and the policies rather than queued: they always happen at the
/// timestamp of the event that caused them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Event {
    RequestArrival { app: AppId },
    /// A group of blocks of one atom that started together has finished.
    BlocksComplete { group: u64 },
    FrequencySwitchEffective { generation: u64 },
    TimeSliceBoundary { epoch: u64 },
}

#[derive(Debug)]
struct Entry<E> {
    at: Nanos,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.at == other.at && self.seq == other.seq
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

/// Min-heap of timestamped events; ties pop in insertion order.
#[derive(Debug)]
pub struct EventQueue<E> {
    heap: BinaryHeap<Reverse<Entry<E>>>,
    next_seq: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            next_seq: 0,
        }
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts an event and returns its sequence number.
    pub fn push(&mut self, at: Nanos, event: E) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Entry { at, seq, event }));
        seq
    }

    pub fn pop(&mut self) -> Option<(Nanos, u64, E)> {
        self.heap.pop().map(|Reverse(e)| (e.at, e.seq, e.event))
    }

    pub fn peek_time(&self) -> Option<Nanos> {
        self.heap.peek().map(|Reverse(e)| e.at)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pops_by_time_then_insertion() {
        let mut q = EventQueue::new();
        q.push(Nanos(5), "late");
        q.push(Nanos(1), "first");
        q.push(Nanos(1), "second");
        q.push(Nanos(3), "mid");
        let order: Vec<_> = std::iter::from_fn(|| q.pop().map(|(_, _, e)| e)).collect();
        assert_eq!(order, vec!["first", "second", "mid", "late"]);
    }
}
