//! Closed-form delay budget for pre-allocating handover resources.
//!
//! Routers are treated as finite-buffer single-server queues and the DU/CU
//! as M/M/1 servers. The budget combines propagation delays and response
//! times into a preparation time and a trigger time; the difference between
//! the measurement-report period and that window is how long the CU waits
//! before sending the spoofed preparation request.
//!
//! Rates and delays in a [`PathTopology`] share one time unit (see
//! [`TimeUnit`]); all values in a [`DelayBudget`] are in seconds.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QmodelError {
    #[error("router {path}[{index}]: lambda == mu ({lambda}), response time is singular")]
    DegenerateRates {
        path: String,
        index: usize,
        lambda: f64,
    },
    #[error("{node}: unstable, lambda {lambda} >= mu {mu}")]
    Unstable { node: String, lambda: f64, mu: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BufferRepr", into = "BufferRepr")]
pub enum Buffer {
    Finite(u32),
    Infinite,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BufferRepr {
    Size(u32),
    Word(String),
}

impl TryFrom<BufferRepr> for Buffer {
    type Error = String;
    fn try_from(r: BufferRepr) -> Result<Self, String> {
        match r {
            BufferRepr::Size(0) => Err("buffer must be at least 1".into()),
            BufferRepr::Size(n) => Ok(Buffer::Finite(n)),
            BufferRepr::Word(w) if w == "inf" || w == "infinite" => Ok(Buffer::Infinite),
            BufferRepr::Word(w) => Err(format!("buffer must be a positive integer or \"inf\", got {w:?}")),
        }
    }
}

impl From<Buffer> for BufferRepr {
    fn from(b: Buffer) -> Self {
        match b {
            Buffer::Finite(n) => BufferRepr::Size(n),
            Buffer::Infinite => BufferRepr::Word("inf".into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouterParams {
    pub lambda: f64,
    pub mu: f64,
    pub buffer: Buffer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rates {
    pub lambda: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeUnit {
    #[default]
    S,
    Ms,
    Us,
}

impl TimeUnit {
    pub fn seconds(self) -> f64 {
        match self {
            TimeUnit::S => 1.0,
            TimeUnit::Ms => 1e-3,
            TimeUnit::Us => 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathTopology {
    /// Unit of every delay below and the reciprocal unit of every rate.
    #[serde(default)]
    pub time_unit: TimeUnit,
    #[serde(default)]
    pub routers_r_sd: Vec<RouterParams>,
    #[serde(default)]
    pub routers_r_td: Vec<RouterParams>,
    #[serde(default)]
    pub routers_sd_cu: Vec<RouterParams>,
    #[serde(default)]
    pub routers_td_cu: Vec<RouterParams>,
    #[serde(default)]
    pub t_pd_sdu_cu: f64,
    #[serde(default)]
    pub t_pd_tdu_cu: f64,
    pub rates_cu: Rates,
    pub rates_sdu: Rates,
    pub rates_tdu: Rates,
    #[serde(default)]
    pub trigger_time: f64,
}

impl PathTopology {
    /// Total router count over the four paths.
    pub fn router_count(&self) -> usize {
        self.routers_r_sd.len()
            + self.routers_r_td.len()
            + self.routers_sd_cu.len()
            + self.routers_td_cu.len()
    }

    /// CU response time. Not part of the budget; exposed for reporting.
    pub fn cu_response(&self) -> Result<f64, QmodelError> {
        mm1_named("CU", self.rates_cu.lambda, self.rates_cu.mu)
    }

    fn validate(&self) -> Result<(), QmodelError> {
        let bad = |m: String| Err(QmodelError::InvalidParams(m));
        for (name, v) in [
            ("t_pd_sdu_cu", self.t_pd_sdu_cu),
            ("t_pd_tdu_cu", self.t_pd_tdu_cu),
            ("trigger_time", self.trigger_time),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite non-negative number"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayBudget {
    pub t_proc_rt: f64,
    pub t_proc_cd: f64,
    pub t_prep_ho: f64,
    pub t_trig: f64,
    /// Clamped at zero.
    pub t_delay: f64,
    pub t_delay_raw: f64,
}

impl fmt::Display for DelayBudget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ms = |v: f64| v * 1e3;
        writeln!(f, "{:<12} {:>14}", "component", "value_ms")?;
        for (name, v) in [
            ("t_proc_rt", self.t_proc_rt),
            ("t_proc_cd", self.t_proc_cd),
            ("t_prep_ho", self.t_prep_ho),
            ("t_trig", self.t_trig),
            ("t_delay", self.t_delay),
            ("t_delay_raw", self.t_delay_raw),
        ] {
            writeln!(f, "{name:<12} {:>14.6}", ms(v))?;
        }
        Ok(())
    }
}

fn check_rates(lambda: f64, mu: f64) -> Result<(), QmodelError> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(QmodelError::InvalidParams(format!("mu must be positive, got {mu}")));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(QmodelError::InvalidParams(format!(
            "lambda must be non-negative, got {lambda}"
        )));
    }
    Ok(())
}

/// Router response time `λ/(μ−λ) + B·λ^(B+1) / (μ·(μ^B − λ^B))`.
///
/// With an infinite buffer only the first term remains and `λ ≥ μ` is
/// unstable. Note the expression is 0 at `λ = 0`.
pub fn mm1b_response(r: &RouterParams) -> Result<f64, QmodelError> {
    router_response("router", 0, r)
}

fn router_response(path: &str, index: usize, r: &RouterParams) -> Result<f64, QmodelError> {
    check_rates(r.lambda, r.mu)?;
    let (l, m) = (r.lambda, r.mu);
    match r.buffer {
        Buffer::Infinite => {
            if l >= m {
                return Err(QmodelError::Unstable {
                    node: format!("router {path}[{index}]"),
                    lambda: l,
                    mu: m,
                });
            }
            Ok(l / (m - l))
        }
        Buffer::Finite(b) => {
            if b == 0 {
                return Err(QmodelError::InvalidParams("buffer must be at least 1".into()));
            }
            if l == m {
                return Err(QmodelError::DegenerateRates {
                    path: path.to_string(),
                    index,
                    lambda: l,
                });
            }
            let bi = b as i32;
            let bf = b as f64;
            Ok(l / (m - l) + bf * l.powi(bi + 1) / (m * (m.powi(bi) - l.powi(bi))))
        }
    }
}

/// M/M/1 mean sojourn time `1/(μ−λ)`.
pub fn mm1_response(lambda: f64, mu: f64) -> Result<f64, QmodelError> {
    mm1_named("node", lambda, mu)
}

fn mm1_named(node: &str, lambda: f64, mu: f64) -> Result<f64, QmodelError> {
    check_rates(lambda, mu)?;
    if lambda >= mu {
        return Err(QmodelError::Unstable {
            node: node.to_string(),
            lambda,
            mu,
        });
    }
    Ok(1.0 / (mu - lambda))
}

fn path_sum(path: &str, routers: &[RouterParams]) -> Result<f64, QmodelError> {
    routers
        .iter()
        .enumerate()
        .map(|(i, r)| router_response(path, i, r))
        .sum()
}

/// `2·(Σ_sd_cu + Σ_td_cu)` router response, in topology units.
pub fn proc_rt(t: &PathTopology) -> Result<f64, QmodelError> {
    Ok(2.0 * (path_sum("sd_cu", &t.routers_sd_cu)? + path_sum("td_cu", &t.routers_td_cu)?))
}

/// `2·(E[r_S_DU] + E[r_T_DU])`; the CU term is deliberately absent.
pub fn proc_cd(t: &PathTopology) -> Result<f64, QmodelError> {
    Ok(2.0
        * (mm1_named("S_DU", t.rates_sdu.lambda, t.rates_sdu.mu)?
            + mm1_named("T_DU", t.rates_tdu.lambda, t.rates_tdu.mu)?))
}

pub fn prep_ho_time(t: &PathTopology) -> Result<f64, QmodelError> {
    t.validate()?;
    Ok(2.0 * t.t_pd_sdu_cu + 2.0 * t.t_pd_tdu_cu + proc_rt(t)? + proc_cd(t)?)
}

pub fn trig_time(t: &PathTopology) -> Result<f64, QmodelError> {
    t.validate()?;
    Ok(t.trigger_time + t.t_pd_tdu_cu + path_sum("td_cu", &t.routers_td_cu)?)
}

/// Full budget. `t_mr_s` is the measurement-report period in seconds.
pub fn budget(t_mr_s: f64, t: &PathTopology) -> Result<DelayBudget, QmodelError> {
    if !(t_mr_s >= 0.0 && t_mr_s.is_finite()) {
        return Err(QmodelError::InvalidParams(format!(
            "t_MR must be finite and non-negative, got {t_mr_s}"
        )));
    }
    let s = t.time_unit.seconds();
    let t_proc_rt = proc_rt(t)? * s;
    let t_proc_cd = proc_cd(t)? * s;
    let t_prep_ho = prep_ho_time(t)? * s;
    let t_trig = trig_time(t)? * s;
    let raw = t_mr_s - (t_prep_ho - t_trig);
    Ok(DelayBudget {
        t_proc_rt,
        t_proc_cd,
        t_prep_ho,
        t_trig,
        t_delay: raw.max(0.0),
        t_delay_raw: raw,
    })
}

/// Seconds to wait before firing the spoofed preparation request.
pub fn compute_delay(t_mr_s: f64, t: &PathTopology) -> Result<f64, QmodelError> {
    budget(t_mr_s, t).map(|b| b.t_delay)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn router(lambda: f64, mu: f64, b: u32) -> RouterParams {
        RouterParams {
            lambda,
            mu,
            buffer: Buffer::Finite(b),
        }
    }

    fn example() -> PathTopology {
        PathTopology {
            time_unit: TimeUnit::Ms,
            routers_r_sd: vec![],
            routers_r_td: vec![],
            routers_sd_cu: vec![router(1.0, 2.0, 1)],
            routers_td_cu: vec![router(1.0, 2.0, 1)],
            t_pd_sdu_cu: 1.0,
            t_pd_tdu_cu: 1.0,
            rates_cu: Rates { lambda: 1.0, mu: 2.0 },
            rates_sdu: Rates { lambda: 1.0, mu: 2.0 },
            rates_tdu: Rates { lambda: 1.0, mu: 2.0 },
            trigger_time: 0.5,
        }
    }

    #[test]
    fn router_examples() {
        assert_eq!(mm1b_response(&router(0.0, 3.0, 4)).unwrap(), 0.0);
        assert!((mm1b_response(&router(1.0, 2.0, 1)).unwrap() - 1.5).abs() < 1e-15);
        assert!(matches!(
            mm1b_response(&router(2.0, 2.0, 3)),
            Err(QmodelError::DegenerateRates { .. })
        ));
    }

    #[test]
    fn infinite_buffer_keeps_first_term() {
        let r = RouterParams {
            lambda: 1.0,
            mu: 2.0,
            buffer: Buffer::Infinite,
        };
        assert_eq!(mm1b_response(&r).unwrap(), 1.0);
        let r = RouterParams { lambda: 2.0, ..r };
        assert!(matches!(mm1b_response(&r), Err(QmodelError::Unstable { .. })));
    }

    #[test]
    fn node_examples() {
        assert_eq!(mm1_response(1.0, 2.0).unwrap(), 1.0);
        assert_eq!(mm1_response(0.0, 4.0).unwrap(), 0.25);
        assert!(matches!(mm1_response(3.0, 2.0), Err(QmodelError::Unstable { .. })));
    }

    #[test]
    fn composed_example() {
        let t = example();
        assert!((proc_rt(&t).unwrap() - 6.0).abs() < 1e-12);
        assert!((proc_cd(&t).unwrap() - 4.0).abs() < 1e-12);
        assert!((prep_ho_time(&t).unwrap() - 14.0).abs() < 1e-12);
        assert!((trig_time(&t).unwrap() - 3.0).abs() < 1e-12);
        let b = budget(0.100, &t).unwrap();
        assert!((b.t_prep_ho - 0.014).abs() < 1e-12);
        assert!((b.t_delay - 0.089).abs() < 1e-12);
    }

    #[test]
    fn clamp_and_cancellation() {
        let mut t = example();
        t.trigger_time = 0.0;
        t.routers_td_cu.clear();
        t.t_pd_tdu_cu = 0.0;
        let prep = prep_ho_time(&t).unwrap() * 1e-3;
        assert!(compute_delay(prep, &t).unwrap().abs() < 1e-15);
        let b = budget(0.001, &t).unwrap();
        assert_eq!(b.t_delay, 0.0);
        assert!(b.t_delay_raw < 0.0);
    }

    #[test]
    fn cu_rates_do_not_matter() {
        let t = example();
        let mut u = example();
        u.rates_cu = Rates { lambda: 0.0, mu: 100.0 };
        assert_eq!(proc_cd(&t).unwrap(), proc_cd(&u).unwrap());
    }

    #[test]
    fn degenerate_router_is_named() {
        let mut t = example();
        t.routers_td_cu.push(router(3.0, 3.0, 2));
        match proc_rt(&t) {
            Err(QmodelError::DegenerateRates { path, index, .. }) => {
                assert_eq!(path, "td_cu");
                assert_eq!(index, 1);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn buffer_json() {
        let r: RouterParams = serde_json::from_str(r#"{"lambda":1,"mu":2,"buffer":"inf"}"#).unwrap();
        assert_eq!(r.buffer, Buffer::Infinite);
        assert!(serde_json::from_str::<RouterParams>(r#"{"lambda":1,"mu":2,"buffer":0}"#).is_err());
    }
}
