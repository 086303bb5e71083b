//! Single-server FIFO queues.

use std::collections::VecDeque;

use crate::qmodel::{Buffer, RouterParams};
use crate::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admit {
    /// Server was idle; the caller must schedule the completion.
    Started,
    Queued,
    Dropped,
}

/// FIFO with one server. `capacity` counts the job in service.
#[derive(Debug, Clone)]
pub struct FifoServer<J> {
    capacity: Option<usize>,
    in_service: Option<(J, SimTime)>,
    waiting: VecDeque<(J, SimTime)>,
    pub arrivals: u64,
    pub served: u64,
    pub drops: u64,
}

impl<J> FifoServer<J> {
    pub fn new(capacity: Option<usize>) -> Self {
        FifoServer {
            capacity,
            in_service: None,
            waiting: VecDeque::new(),
            arrivals: 0,
            served: 0,
            drops: 0,
        }
    }

    pub fn occupancy(&self) -> usize {
        self.waiting.len() + usize::from(self.in_service.is_some())
    }

    pub fn is_busy(&self) -> bool {
        self.in_service.is_some()
    }

    pub fn in_service(&self) -> Option<&J> {
        self.in_service.as_ref().map(|(j, _)| j)
    }

    pub fn in_service_mut(&mut self) -> Option<&mut J> {
        self.in_service.as_mut().map(|(j, _)| j)
    }

    pub fn jobs(&self) -> impl Iterator<Item = &J> {
        self.in_service.iter().chain(self.waiting.iter()).map(|(j, _)| j)
    }

    /// Offers a job. A dropped job is returned to the caller.
    pub fn arrive(&mut self, job: J, now: SimTime) -> (Admit, Option<J>) {
        self.arrivals += 1;
        if self.capacity.is_some_and(|c| self.occupancy() >= c) {
            self.drops += 1;
            return (Admit::Dropped, Some(job));
        }
        if self.in_service.is_none() {
            self.in_service = Some((job, now));
            (Admit::Started, None)
        } else {
            self.waiting.push_back((job, now));
            (Admit::Queued, None)
        }
    }

    /// Finishes the job in service and starts the next one. Returns the
    /// finished job with its arrival time, and whether a new job started.
    pub fn complete(&mut self) -> Option<((J, SimTime), bool)> {
        let done = self.in_service.take()?;
        self.served += 1;
        self.in_service = self.waiting.pop_front();
        Some((done, self.in_service.is_some()))
    }
}

/// Router modelled as an M/M/1/B queue; `buffer` includes the packet in
/// service.
#[derive(Debug, Clone)]
pub struct RouterNode<J> {
    pub params: RouterParams,
    /// Service rate in packets per microsecond.
    pub mu_per_us: f64,
    pub queue: FifoServer<J>,
}

impl<J> RouterNode<J> {
    pub fn new(params: RouterParams, mu_per_us: f64) -> Self {
        let capacity = match params.buffer {
            Buffer::Finite(b) => Some(b as usize),
            Buffer::Infinite => None,
        };
        RouterNode {
            params,
            mu_per_us,
            queue: FifoServer::new(capacity),
        }
    }

    pub fn mean_service_us(&self) -> f64 {
        1.0 / self.mu_per_us
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_buffer_drops() {
        let mut q = FifoServer::new(Some(1));
        assert_eq!(q.arrive(1, SimTime(0)).0, Admit::Started);
        let (a, back) = q.arrive(2, SimTime(1));
        assert_eq!(a, Admit::Dropped);
        assert_eq!(back, Some(2));
        assert_eq!(q.drops, 1);
        let ((job, at), next) = q.complete().unwrap();
        assert_eq!((job, at, next), (1, SimTime(0), false));
    }

    #[test]
    fn fifo_order() {
        let mut q = FifoServer::new(None);
        for j in 0..3 {
            q.arrive(j, SimTime(j as u64));
        }
        let order: Vec<i32> = std::iter::from_fn(|| q.complete().map(|((j, _), _)| j)).collect();
        assert_eq!(order, [0, 1, 2]);
    }
}
