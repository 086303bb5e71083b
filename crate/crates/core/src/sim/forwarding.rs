//! Tag- versus IP-forwarding experiment: echo traffic between two hosts
//! across a chain of transit switches running the tag-forward or the IP
//! baseline program.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::engine::Engine;
use super::queue::{Admit, FifoServer};
use super::rng::{mix, PoissonStream};
use super::SimError;
use crate::pipeline::{self, CostModel, Ipv4Header, ProgramKind, SwitchProgram, Verdict};
use crate::wire::{self, EthernetHeader, MacAddr, Packet, PortBits, TagHeader, ETHERTYPE_FORWARD, ETHERTYPE_IPV4};
use crate::SimTime;

const H1: u16 = 1;
const H2: u16 = 2;
const IP_H1: u32 = 0x0a00_0001;
const IP_H2: u32 = 0x0a00_0002;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FwdMode {
    Tag,
    Ip,
}

impl FwdMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FwdMode::Tag => "tag",
            FwdMode::Ip => "ip",
        }
    }
}

impl fmt::Display for FwdMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FwdMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "tag" => Ok(FwdMode::Tag),
            "ip" => Ok(FwdMode::Ip),
            _ => Err(format!("unknown forwarding mode '{s}'")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForwardingConfig {
    pub transit_switches: usize,
    pub parallel_pings: u32,
    /// Echo requests per second for the probe and each load process.
    pub ping_rate_hz: f64,
    pub ping_payload: usize,
    pub duration_us: u64,
    /// Switch queue capacity in packets, including the one in service.
    pub buffer: usize,
    /// Multiplier from pipeline cost to software-switch service time.
    pub software_slowdown: f64,
    pub link_us: u64,
    pub cost_model: CostModel,
    pub seed: u64,
}

impl Default for ForwardingConfig {
    fn default() -> Self {
        ForwardingConfig {
            transit_switches: 1,
            parallel_pings: 0,
            ping_rate_hz: 200.0,
            ping_payload: 56,
            duration_us: 1_000_000,
            buffer: 64,
            software_slowdown: 20.0,
            link_us: 10,
            cost_model: CostModel::default(),
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardingRecord {
    pub mode: FwdMode,
    pub transit_switches: usize,
    pub parallel_pings: u32,
    pub seed: u64,
    /// Mean round trip of the probe's answered requests.
    pub avg_response_us: f64,
    /// Mean round trip over every answered request.
    pub avg_all_us: f64,
    pub sent: u64,
    pub received: u64,
    pub drop_count: u64,
}

#[derive(Debug, Clone)]
struct Echo {
    bytes: Vec<u8>,
    /// 0 is the probe.
    proc: u32,
    reply: bool,
    sent_at: SimTime,
    ingress: PortBits,
}

enum Ev {
    Send(u32),
    /// Arrival at switch `i` (switches are 0..n, h1 is left, h2 right).
    AtSwitch(usize, Box<Echo>),
    Done(usize),
    AtHost(u16, Box<Echo>),
}

fn program(mode: FwdMode) -> Result<SwitchProgram, SimError> {
    let left = PortBits::physical(0)?.bits() as u64;
    let right = PortBits::physical(1)?.bits() as u64;
    Ok(match mode {
        FwdMode::Tag => {
            let mut p = pipeline::builtin(ProgramKind::TagForward);
            p.add_entry("tag_forward", right, "tag_forward", &[right])?;
            p.add_entry("tag_forward", left, "tag_forward", &[left])?;
            p
        }
        FwdMode::Ip => {
            let mut p = pipeline::builtin(ProgramKind::IpBaseline);
            p.add_entry("ipv4_forward", IP_H2 as u64, "ip_forward", &[right])?;
            p.add_entry("ipv4_forward", IP_H1 as u64, "ip_forward", &[left])?;
            p
        }
    })
}

fn frame(mode: FwdMode, reply: bool, payload: usize) -> Result<Vec<u8>, SimError> {
    let (src, dst) = if reply { (H2, H1) } else { (H1, H2) };
    let eth = |ether_type| EthernetHeader {
        dst: MacAddr::for_node(dst),
        src: MacAddr::for_node(src),
        ether_type,
    };
    let pkt = match mode {
        FwdMode::Tag => {
            let port = if reply { PortBits::physical(0)? } else { PortBits::physical(1)? };
            Packet::new(eth(ETHERTYPE_FORWARD))
                .with_tag(TagHeader::Forward {
                    dest_port: port.bits(),
                })
                .with_payload(vec![0; payload])
        }
        FwdMode::Ip => {
            let (s, d) = if reply { (IP_H2, IP_H1) } else { (IP_H1, IP_H2) };
            let mut body = Vec::with_capacity(pipeline::IPV4_LEN + payload);
            Ipv4Header::new(s, d, payload).encode(&mut body);
            body.resize(pipeline::IPV4_LEN + payload, 0);
            Packet::new(eth(ETHERTYPE_IPV4)).with_payload(body)
        }
    };
    Ok(wire::serialize(&pkt)?)
}

/// Runs one load level and returns its record.
pub fn run_forwarding(mode: FwdMode, cfg: &ForwardingConfig) -> Result<ForwardingRecord, SimError> {
    if cfg.transit_switches == 0 || cfg.buffer == 0 || cfg.software_slowdown <= 0.0 {
        return Err(SimError::Config(
            "forwarding experiment needs at least one switch, a buffer and a positive slowdown".into(),
        ));
    }
    let prog = program(mode)?;
    let n = cfg.transit_switches;
    let link = SimTime(cfg.link_us);
    let mut switches: Vec<FifoServer<Box<Echo>>> = (0..n).map(|_| FifoServer::new(Some(cfg.buffer))).collect();
    let mut eng: Engine<Ev> = Engine::new();
    let mut streams = Vec::new();
    for proc in 0..=cfg.parallel_pings {
        let mut s = PoissonStream::new(cfg.ping_rate_hz, cfg.seed, mix(&[proc as u64]))?;
        let t = s.next_arrival();
        if t.as_micros() < cfg.duration_us {
            eng.schedule(t, Ev::Send(proc))?;
        }
        streams.push(s);
    }
    let request = frame(mode, false, cfg.ping_payload)?;
    let reply = frame(mode, true, cfg.ping_payload)?;
    let (mut sent, mut received, mut drops) = (0u64, 0u64, 0u64);
    let (mut probe_n, mut probe_sum, mut all_sum) = (0u64, 0f64, 0f64);

    let service = |e: &Echo| -> Result<(SimTime, Option<pipeline::Processed>), SimError> {
        let out = prog.process(&e.bytes, e.ingress, &cfg.cost_model)?;
        Ok((SimTime::from_micros_f64(out.cost_us * cfg.software_slowdown), Some(out)))
    };
    // pipeline result for the job in service at each switch
    let mut current: Vec<Option<pipeline::Processed>> = vec![None; n];

    while let Some((now, ev)) = eng.pop() {
        match ev {
            Ev::Send(proc) => {
                let next = streams[proc as usize].next_arrival();
                if next.as_micros() < cfg.duration_us {
                    eng.schedule(next.max(now), Ev::Send(proc))?;
                }
                sent += 1;
                let e = Echo {
                    bytes: request.clone(),
                    proc,
                    reply: false,
                    sent_at: now,
                    ingress: PortBits::physical(0)?,
                };
                eng.schedule_in(link, Ev::AtSwitch(0, Box::new(e)));
            }
            Ev::AtSwitch(i, e) => match switches[i].arrive(e, now) {
                (Admit::Started, _) => {
                    let (dt, out) = service(switches[i].in_service().expect("started"))?;
                    current[i] = out;
                    eng.schedule_in(dt, Ev::Done(i));
                }
                (Admit::Queued, _) => {}
                (Admit::Dropped, _) => drops += 1,
            },
            Ev::Done(i) => {
                let ((mut e, _), next) = switches[i].complete().expect("busy switch");
                let out = current[i].take().expect("processed job");
                if next {
                    let (dt, o) = service(switches[i].in_service().expect("next job"))?;
                    current[i] = o;
                    eng.schedule_in(dt, Ev::Done(i));
                }
                let Verdict::Forward(port) = out.verdict else {
                    drops += 1;
                    continue;
                };
                e.bytes = out.bytes.expect("forwarded frame");
                let rightward = port.index() == 1;
                match (rightward, i) {
                    (true, i) if i + 1 == n => eng.schedule_in(link, Ev::AtHost(H2, e)),
                    (false, 0) => eng.schedule_in(link, Ev::AtHost(H1, e)),
                    (true, i) => {
                        e.ingress = PortBits::physical(0)?;
                        eng.schedule_in(link, Ev::AtSwitch(i + 1, e));
                    }
                    (false, i) => {
                        e.ingress = PortBits::physical(1)?;
                        eng.schedule_in(link, Ev::AtSwitch(i - 1, e));
                    }
                }
            }
            Ev::AtHost(H2, mut e) if !e.reply => {
                e.reply = true;
                e.bytes = reply.clone();
                e.ingress = PortBits::physical(1)?;
                eng.schedule_in(link, Ev::AtSwitch(n - 1, e));
            }
            Ev::AtHost(_, e) => {
                received += 1;
                let rtt = (now - e.sent_at).as_micros() as f64;
                all_sum += rtt;
                if e.proc == 0 {
                    probe_n += 1;
                    probe_sum += rtt;
                }
            }
        }
    }
    let mean = |s: f64, k: u64| if k == 0 { f64::NAN } else { s / k as f64 };
    Ok(ForwardingRecord {
        mode,
        transit_switches: n,
        parallel_pings: cfg.parallel_pings,
        seed: cfg.seed,
        avg_response_us: mean(probe_sum, probe_n),
        avg_all_us: mean(all_sum, received),
        sent,
        received,
        drop_count: drops,
    })
}

/// Default load levels: 0 to 60 parallel ping processes in steps of 10.
pub const DEFAULT_LOADS: [u32; 7] = [0, 10, 20, 30, 40, 50, 60];
pub const DEFAULT_SWITCHES: [usize; 3] = [1, 2, 4];

/// Runs both modes over every switch count and load level.
pub fn sweep(base: &ForwardingConfig, switches: &[usize], loads: &[u32]) -> Result<Vec<ForwardingRecord>, SimError> {
    let mut out = Vec::new();
    for &n in switches {
        for &load in loads {
            for mode in [FwdMode::Tag, FwdMode::Ip] {
                let cfg = ForwardingConfig {
                    transit_switches: n,
                    parallel_pings: load,
                    ..base.clone()
                };
                out.push(run_forwarding(mode, &cfg)?);
            }
        }
    }
    Ok(out)
}

pub fn write_csv<W: std::io::Write>(records: &[ForwardingRecord], w: W) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    for r in records {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unloaded_chain_has_no_drops() {
        for mode in [FwdMode::Tag, FwdMode::Ip] {
            let r = run_forwarding(mode, &ForwardingConfig::default()).unwrap();
            assert_eq!(r.drop_count, 0);
            assert_eq!(r.sent, r.received);
            assert!(r.sent > 100);
        }
    }

    #[test]
    fn tag_is_faster_unloaded() {
        let cfg = ForwardingConfig {
            transit_switches: 2,
            ..Default::default()
        };
        let t = run_forwarding(FwdMode::Tag, &cfg).unwrap();
        let i = run_forwarding(FwdMode::Ip, &cfg).unwrap();
        assert!(t.avg_response_us < i.avg_response_us);
    }
}
