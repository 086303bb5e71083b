//! Scenario configuration.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::SimError;
use crate::control::{ControllerCacheEntry, MobilityTableEntry};
use crate::pipeline::CostModel;
use crate::qmodel::{self, Buffer, PathTopology, Rates, RouterParams, TimeUnit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Traditional,
    Smartho,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Traditional => "traditional",
            Mode::Smartho => "smartho",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "traditional" => Ok(Mode::Traditional),
            "smartho" => Ok(Mode::Smartho),
            other => Err(format!("unknown mode '{other}'")),
        }
    }
}

/// Either a literal number of microseconds or `"auto"`, which derives the
/// value from the delay budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TimeInterval {
    Micros(u64),
    Auto(AutoWord),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoWord {
    Auto,
}

impl Default for TimeInterval {
    fn default() -> Self {
        TimeInterval::Auto(AutoWord::Auto)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MobilityRow {
    pub ue_id: u16,
    pub source_du_id: u16,
    pub target_du_id: u16,
    #[serde(default)]
    pub time_interval: TimeInterval,
}

/// Gap between one HO's RRC reconfiguration and the next measurement
/// report: `min_us` plus an exponential with mean `mean_us`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterHo {
    pub min_us: u64,
    pub mean_us: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Links {
    /// One-way propagation RRH to each DU, split evenly over the links of
    /// the path.
    pub rrh_du_us: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub mode: Mode,
    pub tandem: u16,
    pub ue_count: u16,
    /// Ping processes per DU path.
    pub parallel_pings: u32,
    pub ping_rate_hz: f64,
    pub ping_payload: usize,
    pub inter_ho: InterHo,
    pub first_mr_mean_us: f64,
    pub warmup_us: u64,
    pub ue_processing_us: u64,
    /// Predicted time from the trigger to the next measurement report.
    pub t_mr_us: u64,
    pub time_interval: TimeInterval,
    pub guard_timer_us: u64,
    pub controller_cost_us: u64,
    pub target_prep_fixed_us: u64,
    /// The UE repeats its measurement report if no reconfiguration arrives
    /// within this time.
    pub ho_timeout_us: u64,
    pub max_attempts: u8,
    /// `None` calibrates at 5x the unloaded single-HO time.
    pub drop_threshold_us: Option<u64>,
    pub drop_threshold_factor: f64,
    pub max_sim_time_us: u64,
    pub seed: u64,
    pub cost_model: CostModel,
    /// Rates per `time_unit` (milliseconds by default).
    pub topology: PathTopology,
    pub links: Links,
    /// Explicit MT rows. Empty means one row per hop of each UE's path.
    pub mt_rows: Vec<MobilityRow>,
    pub cc_rows: Vec<ControllerCacheEntry>,
    pub trace: bool,
}

fn router(lambda: f64, mu: f64, b: u32) -> RouterParams {
    RouterParams {
        lambda,
        mu,
        buffer: Buffer::Finite(b),
    }
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let r = router(1.0, 25.0, 48);
        ScenarioConfig {
            mode: Mode::Smartho,
            tandem: 2,
            ue_count: 4,
            parallel_pings: 20,
            ping_rate_hz: 200.0,
            ping_payload: 56,
            inter_ho: InterHo {
                min_us: 50_000,
                mean_us: 150_000.0,
            },
            first_mr_mean_us: 20_000.0,
            warmup_us: 10_000,
            ue_processing_us: 500,
            t_mr_us: 40_000,
            time_interval: TimeInterval::default(),
            guard_timer_us: 500_000,
            controller_cost_us: 50,
            target_prep_fixed_us: 2_000,
            ho_timeout_us: 100_000,
            max_attempts: 3,
            drop_threshold_us: None,
            drop_threshold_factor: 5.0,
            max_sim_time_us: 60_000_000,
            seed: 1,
            cost_model: CostModel::default(),
            topology: PathTopology {
                time_unit: TimeUnit::Ms,
                routers_r_sd: vec![r],
                routers_r_td: vec![r],
                routers_sd_cu: vec![r, r],
                routers_td_cu: vec![r, r],
                t_pd_sdu_cu: 0.5,
                t_pd_tdu_cu: 0.5,
                rates_cu: Rates { lambda: 1.0, mu: 4.0 },
                rates_sdu: Rates { lambda: 0.5, mu: 2.0 },
                rates_tdu: Rates { lambda: 0.5, mu: 2.0 },
                trigger_time: 0.05,
            },
            links: Links { rrh_du_us: 200 },
            mt_rows: Vec::new(),
            cc_rows: Vec::new(),
            trace: false,
        }
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        serde_json::from_str(text).map_err(|e| SimError::ConfigParse {
            line: e.line(),
            column: e.column(),
            msg: e.to_string(),
        })
    }

    pub fn n_du(&self) -> u16 {
        self.tandem + 1
    }

    /// SHA-256 over the canonical JSON form, first 16 hex digits.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        hex::encode(&Sha256::digest(&json)[..8])
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if self.tandem == 0 {
            return bad("tandem must be at least 1".into());
        }
        if self.tandem > 64 {
            return bad("tandem is limited to 64".into());
        }
        if self.ue_count == 0 {
            return bad("ue_count must be at least 1".into());
        }
        if self.parallel_pings > 0 && !(self.ping_rate_hz > 0.0) {
            return bad("ping_rate_hz must be positive when pings are enabled".into());
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be at least 1".into());
        }
        if !(self.inter_ho.mean_us >= 0.0 && self.first_mr_mean_us >= 0.0) {
            return bad("inter-HO means must be non-negative".into());
        }
        let t = &self.topology;
        for (name, path) in [
            ("routers_r_sd", &t.routers_r_sd),
            ("routers_r_td", &t.routers_r_td),
            ("routers_sd_cu", &t.routers_sd_cu),
            ("routers_td_cu", &t.routers_td_cu),
        ] {
            for (i, r) in path.iter().enumerate() {
                if !(r.mu > 0.0) || !(r.lambda >= 0.0) {
                    return bad(format!("{name}[{i}]: need mu > 0 and lambda >= 0"));
                }
            }
        }
        for (name, r) in [
            ("rates_cu", t.rates_cu),
            ("rates_sdu", t.rates_sdu),
            ("rates_tdu", t.rates_tdu),
        ] {
            if !(r.mu > 0.0 && r.lambda >= 0.0 && r.lambda < r.mu) {
                return bad(format!("{name}: need 0 <= lambda < mu"));
            }
        }
        if !(t.t_pd_sdu_cu >= 0.0 && t.t_pd_tdu_cu >= 0.0) {
            return bad("propagation delays must be non-negative".into());
        }
        for row in &self.mt_rows {
            for du in [row.source_du_id, row.target_du_id] {
                if du == 0 || du > self.n_du() {
                    return bad(format!(
                        "mobility row for ue {} names DU {du}, topology has 1..={}",
                        row.ue_id,
                        self.n_du()
                    ));
                }
            }
        }
        Ok(())
    }

    /// Converts a topology-unit duration to microseconds.
    pub fn unit_to_us(&self, v: f64) -> f64 {
        v * self.topology.time_unit.seconds() * 1e6
    }

    /// Converts a per-unit rate to a per-microsecond rate.
    pub fn rate_per_us(&self, r: f64) -> f64 {
        r / (self.topology.time_unit.seconds() * 1e6)
    }

    /// The `auto` time interval in microseconds.
    pub fn auto_interval_us(&self) -> Result<u64, SimError> {
        let s = qmodel::compute_delay(self.t_mr_us as f64 * 1e-6, &self.topology)?;
        Ok((s * 1e6).round() as u64)
    }

    fn resolve(&self, t: TimeInterval) -> Result<u64, SimError> {
        match t {
            TimeInterval::Micros(us) => Ok(us),
            TimeInterval::Auto(_) => self.auto_interval_us(),
        }
    }

    /// Mobility rows with intervals resolved. Default: each UE walks
    /// DU 1, 2, ..., tandem + 1.
    pub fn mobility_rows(&self) -> Result<Vec<MobilityTableEntry>, SimError> {
        if !self.mt_rows.is_empty() {
            return self
                .mt_rows
                .iter()
                .map(|r| {
                    Ok(MobilityTableEntry {
                        ue_id: r.ue_id,
                        source_du_id: r.source_du_id,
                        target_du_id: r.target_du_id,
                        time_interval_us: self.resolve(r.time_interval)?,
                    })
                })
                .collect();
        }
        let interval = self.resolve(self.time_interval)?;
        let mut rows = Vec::new();
        for ue in 1..=self.ue_count {
            for du in 1..=self.tandem {
                rows.push(MobilityTableEntry {
                    ue_id: ue,
                    source_du_id: du,
                    target_du_id: du + 1,
                    time_interval_us: interval,
                });
            }
        }
        Ok(rows)
    }
}
