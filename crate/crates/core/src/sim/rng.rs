//! Keyed random draws.
//!
//! Every service time is drawn from a generator seeded by
//! `(run seed, packet key, node)`, so a given message sees the same draw at
//! a given node whichever protocol variant is running. Arrival streams get
//! their own generator per source.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use super::SimError;
use crate::SimTime;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Order-sensitive hash of a few words.
pub fn mix(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x5348_4f5f_5349_4d00u64, |h, &p| splitmix(h ^ splitmix(p)))
}

/// Exponential draw with the given mean, in microseconds (not rounded).
pub fn exp_us(seed: u64, key: u64, node: u64, mean_us: f64) -> f64 {
    if mean_us <= 0.0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, key, node]));
    Exp::new(1.0 / mean_us)
        .expect("positive rate")
        .sample(&mut rng)
}

pub fn exp_time(seed: u64, key: u64, node: u64, mean_us: f64) -> SimTime {
    SimTime::from_micros_f64(exp_us(seed, key, node, mean_us))
}

/// Poisson arrival stream: i.i.d. exponential gaps.
#[derive(Debug, Clone)]
pub struct PoissonStream {
    rng: ChaCha8Rng,
    exp: Exp<f64>,
    /// Exact (unrounded) time of the last arrival, so rounding does not
    /// accumulate.
    t: f64,
}

impl PoissonStream {
    /// `rate_per_s` arrivals per second.
    pub fn new(rate_per_s: f64, seed: u64, stream: u64) -> Result<Self, SimError> {
        if !(rate_per_s > 0.0 && rate_per_s.is_finite()) {
            return Err(SimError::Config(format!(
                "arrival rate must be positive, got {rate_per_s}"
            )));
        }
        Ok(PoissonStream {
            rng: ChaCha8Rng::seed_from_u64(mix(&[seed, 0x7374_7265_616d, stream])),
            exp: Exp::new(rate_per_s / 1e6).expect("positive rate"),
            t: 0.0,
        })
    }

    pub fn starting_at(mut self, t: SimTime) -> Self {
        self.t = t.as_micros() as f64;
        self
    }

    /// Next gap in microseconds.
    pub fn gap_us(&mut self) -> f64 {
        self.exp.sample(&mut self.rng)
    }

    /// Absolute time of the next arrival.
    pub fn next_arrival(&mut self) -> SimTime {
        self.t += self.gap_us();
        SimTime::from_micros_f64(self.t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keyed_draws_repeat() {
        assert_eq!(exp_us(1, 2, 3, 10.0), exp_us(1, 2, 3, 10.0));
        assert_ne!(exp_us(1, 2, 3, 10.0), exp_us(1, 2, 4, 10.0));
    }

    #[test]
    fn stream_mean_and_determinism() {
        let mut a = PoissonStream::new(1000.0, 9, 1).unwrap();
        let mut b = PoissonStream::new(1000.0, 9, 1).unwrap();
        let first: Vec<f64> = (0..1000).map(|_| a.gap_us()).collect();
        let again: Vec<f64> = (0..1000).map(|_| b.gap_us()).collect();
        assert_eq!(first, again);
        let n = 100_000;
        let mean = (0..n).map(|_| a.gap_us()).sum::<f64>() / n as f64;
        assert!((mean - 1000.0).abs() / 1000.0 < 0.02, "mean {mean}");
    }

    #[test]
    fn zero_rate_rejected() {
        assert!(PoissonStream::new(0.0, 1, 1).is_err());
    }
}
