//! Event queue ordered by `(time, sequence)`.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::SimError;
use crate::SimTime;

#[derive(Debug)]
struct Entry<E> {
    at: SimTime,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}
impl<E> Eq for Entry<E> {}
impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<E> Ord for Entry<E> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

/// Single-threaded scheduler. Events at equal times run in the order they
/// were scheduled.
#[derive(Debug)]
pub struct Engine<E> {
    now: SimTime,
    seq: u64,
    heap: BinaryHeap<Reverse<Entry<E>>>,
    executed: u64,
}

impl<E> Default for Engine<E> {
    fn default() -> Self {
        Engine {
            now: SimTime::ZERO,
            seq: 0,
            heap: BinaryHeap::new(),
            executed: 0,
        }
    }
}

impl<E> Engine<E> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.heap.len()
    }

    pub fn executed(&self) -> u64 {
        self.executed
    }

    pub fn schedule(&mut self, at: SimTime, event: E) -> Result<(), SimError> {
        if at < self.now {
            return Err(SimError::ClockRegression { now: self.now, at });
        }
        let seq = self.seq;
        self.seq += 1;
        self.heap.push(Reverse(Entry { at, seq, event }));
        Ok(())
    }

    pub fn schedule_in(&mut self, delay: SimTime, event: E) {
        let at = self.now + delay;
        self.schedule(at, event).expect("future time");
    }

    /// Removes the next event and advances the clock to it.
    pub fn pop(&mut self) -> Option<(SimTime, E)> {
        let Reverse(e) = self.heap.pop()?;
        debug_assert!(e.at >= self.now);
        self.now = e.at;
        self.executed += 1;
        Some((e.at, e.event))
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|Reverse(e)| e.at)
    }

    /// Drains the queue, calling `handle` for every event. Handlers may
    /// schedule more events. Returns the final clock.
    pub fn run_until_idle<F>(&mut self, mut handle: F) -> Result<SimTime, SimError>
    where
        F: FnMut(&mut Self, SimTime, E) -> Result<(), SimError>,
    {
        while let Some((at, ev)) = self.pop() {
            handle(self, at, ev)?;
        }
        Ok(self.now)
    }

    /// Drops every pending event.
    pub fn clear(&mut self) -> Vec<E> {
        std::mem::take(&mut self.heap)
            .into_vec()
            .into_iter()
            .map(|Reverse(e)| e.event)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_times_run_in_schedule_order() {
        let mut e = Engine::new();
        e.schedule(SimTime(5), "a").unwrap();
        e.schedule(SimTime(5), "b").unwrap();
        e.schedule(SimTime(1), "c").unwrap();
        let mut seen = Vec::new();
        e.run_until_idle(|_, _, ev| {
            seen.push(ev);
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, ["c", "a", "b"]);
    }

    #[test]
    fn empty_queue_returns_immediately() {
        let mut e: Engine<()> = Engine::new();
        assert_eq!(e.run_until_idle(|_, _, _| Ok(())).unwrap(), SimTime::ZERO);
    }

    #[test]
    fn scheduling_now_runs_next() {
        let mut e = Engine::new();
        e.schedule(SimTime(3), 0u32).unwrap();
        e.schedule(SimTime(9), 9).unwrap();
        let mut seen = Vec::new();
        e.run_until_idle(|eng, at, ev| {
            seen.push((at.0, ev));
            if ev == 0 {
                eng.schedule(at, 1).unwrap();
            }
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, [(3, 0), (3, 1), (9, 9)]);
    }

    #[test]
    fn past_events_are_rejected() {
        let mut e = Engine::new();
        e.schedule(SimTime(10), ()).unwrap();
        e.pop();
        assert!(matches!(
            e.schedule(SimTime(9), ()),
            Err(SimError::ClockRegression { .. })
        ));
    }
}
