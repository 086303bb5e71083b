//! Per-HO records, aggregates and packet conservation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;

use serde::{Deserialize, Serialize};

use super::config::Mode;
use crate::SimTime;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ServedBy {
    /// Reconfiguration relayed from the CU.
    Cu,
    /// Reconfiguration replayed by the source DU controller.
    Replay,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HoRecord {
    pub ue_id: u16,
    pub hop: u16,
    pub t_mr_sent: Option<SimTime>,
    pub t_rrccr_received: Option<SimTime>,
    pub attempts: u8,
    pub served_by: ServedBy,
    pub dropped: bool,
}

impl HoRecord {
    pub fn ho_time_us(&self) -> Option<u64> {
        Some(self.t_rrccr_received?.as_micros() - self.t_mr_sent?.as_micros())
    }

    pub fn completed(&self) -> bool {
        self.t_rrccr_received.is_some()
    }
}

/// Marks records dropped when the HO did not complete or took longer than
/// `threshold_us`.
pub fn measure_ho(records: &mut [HoRecord], threshold_us: u64) {
    for r in records {
        r.dropped = match r.ho_time_us() {
            Some(t) => t > threshold_us,
            None => true,
        };
    }
}

/// Packet accounting for one node.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeCounters {
    pub originated: u64,
    pub received: u64,
    pub forwarded: u64,
    pub consumed: u64,
    pub dropped: u64,
    pub resident: u64,
}

impl NodeCounters {
    pub fn balanced(&self) -> bool {
        self.originated + self.received == self.forwarded + self.consumed + self.dropped + self.resident
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conservation {
    pub nodes: BTreeMap<String, NodeCounters>,
    /// Packets on links when the run stopped.
    pub on_links: u64,
}

impl Conservation {
    pub fn node(&mut self, name: &str) -> &mut NodeCounters {
        if !self.nodes.contains_key(name) {
            self.nodes.insert(name.to_string(), NodeCounters::default());
        }
        self.nodes.get_mut(name).expect("inserted")
    }

    pub fn injected(&self) -> u64 {
        self.nodes.values().map(|n| n.originated).sum()
    }

    pub fn delivered(&self) -> u64 {
        self.nodes.values().map(|n| n.consumed).sum()
    }

    pub fn dropped(&self) -> u64 {
        self.nodes.values().map(|n| n.dropped).sum()
    }

    pub fn in_flight(&self) -> u64 {
        self.on_links + self.nodes.values().map(|n| n.resident).sum::<u64>()
    }

    pub fn balanced(&self) -> bool {
        self.nodes.values().all(NodeCounters::balanced)
            && self.injected() == self.delivered() + self.dropped() + self.in_flight()
    }

    pub fn unbalanced_nodes(&self) -> Vec<&str> {
        self.nodes
            .iter()
            .filter(|(_, c)| !c.balanced())
            .map(|(n, _)| n.as_str())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PingStats {
    pub sent: u64,
    pub received: u64,
    pub mean_rtt_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config_hash: String,
    pub seed: u64,
    pub mode: Mode,
    pub tandem: u16,
    pub load: u32,
    pub drop_threshold_us: u64,
    pub records: Vec<HoRecord>,
    pub wasted_preallocations: u64,
    pub replays: u64,
    pub router_drops: u64,
    pub pings: PingStats,
    pub conservation: Conservation,
    pub end_time: SimTime,
    pub events: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub n_ho: usize,
    pub completed: usize,
    pub mean_ho_time_us: f64,
    pub p50_ho_time_us: f64,
    pub p95_ho_time_us: f64,
    pub drop_pct: f64,
    /// Mean over UEs of the summed HO time of that UE's completed hops.
    pub mean_total_ho_time_us: f64,
}

fn percentile(sorted: &[u64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = (p / 100.0 * (sorted.len() - 1) as f64).round() as usize;
    sorted[rank.min(sorted.len() - 1)] as f64
}

#[derive(Serialize)]
struct CsvRow<'a> {
    schema_version: u32,
    config_hash: &'a str,
    seed: u64,
    mode: &'a str,
    tandem: u16,
    load: u32,
    ue_id: u16,
    hop: u16,
    t_mr_sent_us: Option<u64>,
    t_rrccr_received_us: Option<u64>,
    ho_time_us: Option<u64>,
    attempts: u8,
    served_by: ServedBy,
    dropped: bool,
}

impl MetricsReport {
    pub fn aggregates(&self) -> Aggregates {
        let mut times: Vec<u64> = self.records.iter().filter_map(HoRecord::ho_time_us).collect();
        times.sort_unstable();
        let n = self.records.len();
        let dropped = self.records.iter().filter(|r| r.dropped).count();
        let mut per_ue: BTreeMap<u16, u64> = BTreeMap::new();
        for r in &self.records {
            *per_ue.entry(r.ue_id).or_default() += r.ho_time_us().unwrap_or(0);
        }
        let mean = |v: &[u64]| {
            if v.is_empty() {
                f64::NAN
            } else {
                v.iter().sum::<u64>() as f64 / v.len() as f64
            }
        };
        let totals: Vec<u64> = per_ue.values().copied().collect();
        Aggregates {
            n_ho: n,
            completed: times.len(),
            mean_ho_time_us: mean(&times),
            p50_ho_time_us: percentile(&times, 50.0),
            p95_ho_time_us: percentile(&times, 95.0),
            drop_pct: if n == 0 { 0.0 } else { 100.0 * dropped as f64 / n as f64 },
            mean_total_ho_time_us: mean(&totals),
        }
    }

    pub fn write_csv<W: io::Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.records {
            out.serialize(CsvRow {
                schema_version: SCHEMA_VERSION,
                config_hash: &self.config_hash,
                seed: self.seed,
                mode: self.mode.as_str(),
                tandem: self.tandem,
                load: self.load,
                ue_id: r.ue_id,
                hop: r.hop,
                t_mr_sent_us: r.t_mr_sent.map(SimTime::as_micros),
                t_rrccr_received_us: r.t_rrccr_received.map(SimTime::as_micros),
                ho_time_us: r.ho_time_us(),
                attempts: r.attempts,
                served_by: r.served_by,
                dropped: r.dropped,
            })?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("utf8")
    }

    pub fn summary(&self) -> String {
        let a = self.aggregates();
        let mut s = String::new();
        let _ = writeln!(s, "mode: {}", self.mode.as_str());
        let _ = writeln!(s, "config_hash: {}", self.config_hash);
        let _ = writeln!(s, "seed: {}", self.seed);
        let _ = writeln!(s, "tandem: {}", self.tandem);
        let _ = writeln!(s, "load: {}", self.load);
        let _ = writeln!(s, "handovers: {} ({} completed)", a.n_ho, a.completed);
        let _ = writeln!(s, "mean_ho_time_us: {:.1}", a.mean_ho_time_us);
        let _ = writeln!(s, "p50_ho_time_us: {:.1}", a.p50_ho_time_us);
        let _ = writeln!(s, "p95_ho_time_us: {:.1}", a.p95_ho_time_us);
        let _ = writeln!(s, "mean_total_ho_time_us: {:.1}", a.mean_total_ho_time_us);
        let _ = writeln!(s, "drop_threshold_us: {}", self.drop_threshold_us);
        let _ = writeln!(s, "drop_pct: {:.2}", a.drop_pct);
        let _ = writeln!(s, "replayed_reconfigurations: {}", self.replays);
        let _ = writeln!(s, "wasted_preallocations: {}", self.wasted_preallocations);
        let _ = writeln!(s, "router_drops: {}", self.router_drops);
        let _ = writeln!(
            s,
            "pings: sent {} received {} mean_rtt_us {:.1}",
            self.pings.sent, self.pings.received, self.pings.mean_rtt_us
        );
        let _ = writeln!(s, "sim_end_us: {}", self.end_time.as_micros());
        let _ = writeln!(s, "conservation_ok: {}", self.conservation.balanced());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(mr: Option<u64>, rrccr: Option<u64>) -> HoRecord {
        HoRecord {
            ue_id: 1,
            hop: 1,
            t_mr_sent: mr.map(SimTime),
            t_rrccr_received: rrccr.map(SimTime),
            attempts: 1,
            served_by: ServedBy::Cu,
            dropped: false,
        }
    }

    #[test]
    fn threshold_semantics() {
        let mut v = vec![rec(Some(0), Some(10)), rec(Some(5), None)];
        measure_ho(&mut v, u64::MAX);
        assert_eq!(v.iter().map(|r| r.dropped).collect::<Vec<_>>(), [false, true]);
        measure_ho(&mut v, 0);
        assert!(v.iter().all(|r| r.dropped));
    }

    #[test]
    fn counters_balance() {
        let c = NodeCounters {
            originated: 2,
            received: 5,
            forwarded: 4,
            consumed: 1,
            dropped: 1,
            resident: 1,
        };
        assert!(c.balanced());
    }
}
