//! M/M/1 validation run: one infinite-buffer router fed by a Poisson
//! source, measured against the closed-form sojourn time.

use super::engine::Engine;
use super::queue::{Admit, RouterNode};
use super::rng::{exp_time, PoissonStream};
use super::SimError;
use crate::qmodel::{mm1_response, Buffer, RouterParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mm1Result {
    pub rho: f64,
    pub completions: u64,
    pub mean_sojourn_us: f64,
    pub analytic_us: f64,
}

impl Mm1Result {
    pub fn relative_error(&self) -> f64 {
        (self.mean_sojourn_us - self.analytic_us).abs() / self.analytic_us
    }
}

enum Ev {
    Arrival,
    Done,
}

/// Simulates an M/M/1 queue with service rate `mu_per_s` at utilisation
/// `rho` until `completions` jobs have left.
pub fn run_mm1(rho: f64, mu_per_s: f64, completions: u64, seed: u64) -> Result<Mm1Result, SimError> {
    if !(rho > 0.0 && rho < 1.0) || mu_per_s <= 0.0 {
        return Err(SimError::Config(format!("need 0 < rho < 1 and mu > 0, got rho {rho}")));
    }
    let lambda = rho * mu_per_s;
    let params = RouterParams {
        lambda,
        mu: mu_per_s,
        buffer: Buffer::Infinite,
    };
    let mut node: RouterNode<u64> = RouterNode::new(params, mu_per_s / 1e6);
    let mean_us = node.mean_service_us();
    let mut arrivals = PoissonStream::new(lambda, seed, 0)?;
    let mut eng = Engine::new();
    eng.schedule(arrivals.next_arrival(), Ev::Arrival)?;
    let mut seq = 0u64;
    let mut done = 0u64;
    let mut total = 0f64;
    while done < completions {
        let Some((now, ev)) = eng.pop() else { break };
        match ev {
            Ev::Arrival => {
                let (admit, _) = node.queue.arrive(seq, now);
                if admit == Admit::Started {
                    eng.schedule_in(exp_time(seed, seq, 1, mean_us), Ev::Done);
                }
                seq += 1;
                eng.schedule(arrivals.next_arrival().max(now), Ev::Arrival)?;
            }
            Ev::Done => {
                let ((_, arrived), next) = node.queue.complete().expect("busy server");
                total += (now - arrived).as_micros() as f64;
                done += 1;
                if next {
                    let k = *node.queue.in_service().expect("next job");
                    eng.schedule_in(exp_time(seed, k, 1, mean_us), Ev::Done);
                }
            }
        }
    }
    Ok(Mm1Result {
        rho,
        completions: done,
        mean_sojourn_us: total / done as f64,
        analytic_us: mm1_response(lambda, mu_per_s)? * 1e6,
    })
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_run_is_close() {
        let r = run_mm1(0.5, 1000.0, 20_000, 7).unwrap();
        assert_eq!(r.completions, 20_000);
        assert!(r.relative_error() < 0.1, "{r:?}");
    }

    #[test]
    fn rejects_unstable() {
        assert!(run_mm1(1.0, 1000.0, 10, 1).is_err());
    }
}
