//! Handover scenario: RRH, DUs, CU, routers and controllers wired together
//! and driven by the event engine.
//!
//! Topology for `n` DUs: the RRH reaches DU `i` over a chain of routers,
//! and DU `i` reaches the CU over another chain. DU 1 uses the source-side
//! router lists and rates of the topology, every other DU the target-side
//! ones. Each DU and the CU consist of a programmable switch, a controller
//! attached to it, and a protocol host. Switches run the shipped pipeline
//! programs on the serialized frames.

use std::collections::BTreeMap;

use super::config::{Mode, ScenarioConfig};
use super::engine::Engine;
use super::message::{body_frame, ping_frame, rrc_frame, HoBody, HoMessage};
use super::metrics::{
    measure_ho, Conservation, HoRecord, MetricsReport, PingStats, ServedBy,
};
use super::queue::{Admit, FifoServer, RouterNode};
use super::rng::{exp_time, exp_us, mix, PoissonStream};
use super::trace::{Trace, TraceKind};
use super::SimError;
use crate::control::{
    CuController, DuController, DuReply, MobilityTable, RrcRecord, ControlError,
};
use crate::pipeline::{self, ProgramKind, SwitchProgram, Verdict};
use crate::qmodel::RouterParams;
use crate::wire::{
    self, inst, EthernetHeader, ExtHeader, MacAddr, Packet, PortBits, TagHeader,
    UeContextHeader, ETHERTYPE_INSTRUCTION,
};
use crate::SimTime;

pub const CU_ID: u16 = 0x0100;
pub const RRH_ID: u16 = 0x0200;

const KEY_HO: u64 = 1;
const KEY_PING: u64 = 2;
const KEY_CROSS: u64 = 3;
const KEY_BG: u64 = 4;
const KEY_GAP: u64 = 5;

type NodeIx = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NodeKind {
    Rrh,
    Router(usize),
    DuSwitch(u16),
    DuCtrl(u16),
    DuHost(u16),
    CuSwitch,
    CuCtrl,
    CuHost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Class {
    Ho {
        msg: HoMessage,
        ue: u16,
        hop: u16,
        attempt: u8,
        replay: bool,
    },
    Ping {
        du: u16,
        proc: u32,
        seq: u64,
        reply: bool,
        sent_at: SimTime,
    },
}

#[derive(Debug, Clone)]
struct SimPacket {
    bytes: Vec<u8>,
    key: u64,
    class: Class,
    ingress: PortBits,
    /// (segment, index of the next hop)
    route: Option<(usize, usize)>,
    /// Pipeline result computed when switch service starts.
    processed: Option<Box<pipeline::Processed>>,
}

#[derive(Debug)]
enum Job {
    Pkt(Box<SimPacket>),
    Phantom(u64),
}

#[derive(Debug, Clone, Copy)]
struct Hop {
    node: NodeIx,
    delay: SimTime,
}

#[derive(Debug, Clone)]
struct Segment {
    hops: Vec<Hop>,
    end_port: PortBits,
}

#[derive(Debug)]
enum Ev {
    Arrive(NodeIx, Box<SimPacket>),
    Done(NodeIx),
    Cross(usize),
    Bg(NodeIx),
    Ping(u16, u32),
    MrEmit(u16),
    MrTimeout { ue: u16, hop: u16, attempt: u8 },
    ReconfComplete { ue: u16, hop: u16 },
    Trigger(u16),
    PrepDone { du: u16, ue: u16, body: HoBody, ctx: UeContextHeader },
    Guard { du: u16, ue: u16, gen: u64 },
}

#[derive(Debug, Clone)]
struct UeState {
    path: Vec<u16>,
    hop: u16,
    attempt: u8,
    awaiting: bool,
    done: bool,
    ctx: UeContextHeader,
}

#[derive(Debug, Clone, Copy, Default)]
struct CuHo {
    src: u16,
    tgt: u16,
    attempt: u8,
    mr: bool,
    prep_requested: bool,
    prepared: Option<u16>,
    rrccr_sent: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Reservation {
    pub ue_id: u16,
    pub src_du: u16,
    pub bearer: u16,
    pub security_algorithm: u8,
    pub ue_ambr: u32,
    hop: u16,
    gen: u64,
}

/// Target-DU resource state.
#[derive(Debug, Clone, Default)]
pub struct TargetState {
    next_bearer: u16,
    next_gen: u64,
    reservations: BTreeMap<u16, Reservation>,
}

impl TargetState {
    /// Reserves resources for the UE named by a setup request, genuine or
    /// pre-allocated. Returns the reservation.
    pub fn reserve(&mut self, ctx: &UeContextHeader, hop: u16) -> Reservation {
        self.next_bearer = self.next_bearer.wrapping_add(1).max(1);
        self.next_gen += 1;
        let r = Reservation {
            ue_id: ctx.ue_id,
            src_du: ctx.src_gnb_addr,
            bearer: self.next_bearer,
            security_algorithm: ctx.security_algorithm,
            ue_ambr: ctx.ue_ambr,
            hop,
            gen: self.next_gen,
        };
        self.reservations.insert(ctx.ue_id, r);
        r
    }

    pub fn reservation(&self, ue: u16) -> Option<&Reservation> {
        self.reservations.get(&ue)
    }

    fn consume(&mut self, ue: u16) -> Option<Reservation> {
        self.reservations.remove(&ue)
    }
}

struct World<'a> {
    cfg: &'a ScenarioConfig,
    seed: u64,
    n_du: u16,
    kinds: Vec<NodeKind>,
    names: Vec<String>,
    servers: Vec<Option<FifoServer<Job>>>,
    routers: Vec<RouterNode<()>>,
    router_node: Vec<NodeIx>,
    host_mean_us: Vec<f64>,
    host_bg: Vec<Option<PoissonStream>>,
    host_bg_seq: Vec<u64>,
    cross: Vec<Option<PoissonStream>>,
    cross_seq: Vec<u64>,
    pings: BTreeMap<(u16, u32), (PoissonStream, u64)>,
    segments: Vec<Segment>,
    r_up: Vec<usize>,
    r_down: Vec<usize>,
    c_up: Vec<usize>,
    c_down: Vec<usize>,
    rrh: NodeIx,
    du_switch: Vec<NodeIx>,
    du_ctrl_node: Vec<NodeIx>,
    du_host: Vec<NodeIx>,
    cu_switch: NodeIx,
    cu_ctrl_node: NodeIx,
    cu_host: NodeIx,
    du_program: Vec<SwitchProgram>,
    cu_program: SwitchProgram,
    du_ctrl: Vec<DuController>,
    cu_ctrl: CuController,
    targets: Vec<TargetState>,
    cu_hos: BTreeMap<(u16, u16), CuHo>,
    mr_seen: BTreeMap<u16, u16>,
    next_hop: BTreeMap<u16, u16>,
    ues: Vec<UeState>,
    records: BTreeMap<(u16, u16), HoRecord>,
    stopping: bool,
    ues_remaining: usize,
    wasted: u64,
    replays: u64,
    ping_stats: (u64, u64, f64),
    cons: Conservation,
    trace: Trace,
}

/// Decodes a frame seen by a host or controller. The generic wire decoder
/// only expects a UE context behind instruction tag 0x01; requests tagged
/// 0x02 and 0x03 carry one too.
fn decode(bytes: &[u8]) -> Packet {
    let mut p = wire::deserialize(bytes).expect("frames in flight are valid");
    if let Some(TagHeader::Instruction {
        tag_value: inst::MOBILITY | inst::SET_UE_CONTEXT,
        ..
    }) = p.tag
    {
        if p.ext.is_none() && p.payload.len() >= wire::UE_CONTEXT_LEN {
            let mut r = wire::Reader::new(&p.payload);
            let ctx = r.ue_context().expect("length checked");
            let rest = r.rest().to_vec();
            p.ext = Some(ExtHeader::UeContext(ctx));
            p.payload = rest;
        }
    }
    p
}

fn du_mac(du: u16) -> MacAddr {
    MacAddr::for_node(du)
}

fn ue_context(seed: u64, ue: u16, src: u16) -> UeContextHeader {
    UeContextHeader {
        ue_id: ue,
        src_gnb_addr: src,
        ue_ambr: 100_000_000 + ue as u32 * 1000,
        security_algorithm: (ue % 4) as u8,
        security_base_key: mix(&[seed, 0x006b_6579, ue as u64]) & wire::SECURITY_KEY_MASK,
    }
}

impl<'a> World<'a> {
    fn build(cfg: &'a ScenarioConfig, trace: bool) -> Result<Self, SimError> {
        cfg.validate()?;
        let n_du = cfg.n_du();
        let mut w = World {
            cfg,
            seed: cfg.seed,
            n_du,
            kinds: Vec::new(),
            names: Vec::new(),
            servers: Vec::new(),
            routers: Vec::new(),
            router_node: Vec::new(),
            host_mean_us: Vec::new(),
            host_bg: Vec::new(),
            host_bg_seq: Vec::new(),
            cross: Vec::new(),
            cross_seq: Vec::new(),
            pings: BTreeMap::new(),
            segments: Vec::new(),
            r_up: Vec::new(),
            r_down: Vec::new(),
            c_up: Vec::new(),
            c_down: Vec::new(),
            rrh: 0,
            du_switch: Vec::new(),
            du_ctrl_node: Vec::new(),
            du_host: Vec::new(),
            cu_switch: 0,
            cu_ctrl_node: 0,
            cu_host: 0,
            du_program: Vec::new(),
            cu_program: pipeline::builtin(ProgramKind::Cu),
            du_ctrl: Vec::new(),
            cu_ctrl: CuController::default(),
            targets: Vec::new(),
            cu_hos: BTreeMap::new(),
            mr_seen: BTreeMap::new(),
            next_hop: BTreeMap::new(),
            ues: Vec::new(),
            records: BTreeMap::new(),
            stopping: false,
            ues_remaining: 0,
            wasted: 0,
            replays: 0,
            ping_stats: (0, 0, 0.0),
            cons: Conservation::default(),
            trace: Trace::new(trace),
        };
        let t = &cfg.topology;
        w.rrh = w.add_node(NodeKind::Rrh, "rrh".into(), None, 0.0, 0.0);
        w.cu_switch = w.add_node(NodeKind::CuSwitch, "cu-sw".into(), Some(None), 0.0, 0.0);
        w.cu_ctrl_node = w.add_node(NodeKind::CuCtrl, "cu-ctrl".into(), Some(None), 0.0, 0.0);
        w.cu_host = w.add_node(
            NodeKind::CuHost,
            "cu-host".into(),
            Some(None),
            1.0 / cfg.rate_per_us(t.rates_cu.mu),
            cfg.rate_per_us(t.rates_cu.lambda),
        );
        for du in 1..=n_du {
            let rates = if du == 1 { t.rates_sdu } else { t.rates_tdu };
            let sw = w.add_node(NodeKind::DuSwitch(du), format!("du{du}-sw"), Some(None), 0.0, 0.0);
            let ctrl = w.add_node(NodeKind::DuCtrl(du), format!("du{du}-ctrl"), Some(None), 0.0, 0.0);
            let host = w.add_node(
                NodeKind::DuHost(du),
                format!("du{du}-host"),
                Some(None),
                1.0 / cfg.rate_per_us(rates.mu),
                cfg.rate_per_us(rates.lambda),
            );
            w.du_switch.push(sw);
            w.du_ctrl_node.push(ctrl);
            w.du_host.push(host);
            w.du_ctrl.push(DuController::new(du));
            w.targets.push(TargetState::default());

            let (r_list, c_list, pd) = if du == 1 {
                (&t.routers_r_sd, &t.routers_sd_cu, t.t_pd_sdu_cu)
            } else {
                (&t.routers_r_td, &t.routers_td_cu, t.t_pd_tdu_cu)
            };
            let r_nodes: Vec<NodeIx> = r_list
                .iter()
                .enumerate()
                .map(|(k, p)| w.add_router(*p, format!("du{du}-rr{k}")))
                .collect();
            let c_nodes: Vec<NodeIx> = c_list
                .iter()
                .enumerate()
                .map(|(k, p)| w.add_router(*p, format!("du{du}-rc{k}")))
                .collect();
            let r_total = cfg.links.rrh_du_us;
            let c_total = cfg.unit_to_us(pd).round() as u64;
            let up_r = w.add_segment(&r_nodes, sw, r_total, PortBits::physical(0)?);
            let rev_r: Vec<NodeIx> = r_nodes.iter().rev().copied().collect();
            let down_r = w.add_segment(&rev_r, w.rrh, r_total, PortBits::physical(0)?);
            let up_c = w.add_segment(&c_nodes, w.cu_switch, c_total, PortBits::physical(0)?);
            let rev_c: Vec<NodeIx> = c_nodes.iter().rev().copied().collect();
            let down_c = w.add_segment(&rev_c, sw, c_total, PortBits::physical(1)?);
            w.r_up.push(up_r);
            w.r_down.push(down_r);
            w.c_up.push(up_c);
            w.c_down.push(down_c);

            let mut prog = pipeline::builtin(ProgramKind::Du);
            let host_port = PortBits::host(0)?.bits() as u64;
            prog.add_entry("etherforward", du_mac(du).to_u64(), "ether_port_forward", &[host_port])?;
            prog.add_entry("etherforward", MacAddr::for_node(CU_ID).to_u64(), "ether_port_forward", &[PortBits::physical(1)?.bits() as u64])?;
            prog.add_entry("etherforward", MacAddr::for_node(RRH_ID).to_u64(), "ether_port_forward", &[PortBits::physical(0)?.bits() as u64])?;
            w.du_program.push(prog);

            w.cu_program.add_entry("etherforward", du_mac(du).to_u64(), "ether_port_forward", &[PortBits::physical(0)?.bits() as u64])?;
            w.cu_program.add_entry("source_gnb_controller_forward", du as u64, "cu_controller_forward", &[])?;
        }
        let p0 = PortBits::physical(0)?.bits() as u64;
        let h0 = PortBits::host(0)?.bits() as u64;
        w.cu_program.add_entry("etherforward", MacAddr::for_node(CU_ID).to_u64(), "ether_port_forward", &[h0])?;
        w.cu_program.add_entry("etherforward", MacAddr::for_node(RRH_ID).to_u64(), "ether_port_forward", &[p0])?;
        w.cu_program.add_entry("source_gnb_controller_forward", RRH_ID as u64, "prepare_port_forward", &[h0])?;
        w.cu_program.add_entry("source_gnb_controller_forward", CU_ID as u64, "ether_port_forward", &[p0])?;

        let mut mt = MobilityTable::default();
        for row in cfg.mobility_rows()? {
            mt.insert(row)?;
        }
        w.cu_ctrl = CuController::new(mt);
        for cc in &cfg.cc_rows {
            w.cu_ctrl.set_ue_context(&UeContextHeader {
                ue_id: cc.ue_id,
                src_gnb_addr: 0,
                ue_ambr: cc.ue_ambr,
                security_algorithm: cc.ue_security_algorithm,
                security_base_key: cc.security_base_key,
            });
        }

        for ue in 1..=cfg.ue_count {
            let path: Vec<u16> = (1..=n_du).collect();
            w.ues.push(UeState {
                path,
                hop: 0,
                attempt: 0,
                awaiting: false,
                done: false,
                ctx: ue_context(cfg.seed, ue, 1),
            });
            for hop in 1..=cfg.tandem {
                w.records.insert(
                    (ue, hop),
                    HoRecord {
                        ue_id: ue,
                        hop,
                        t_mr_sent: None,
                        t_rrccr_received: None,
                        attempts: 0,
                        served_by: ServedBy::None,
                        dropped: false,
                    },
                );
            }
        }
        w.ues_remaining = cfg.ue_count as usize;
        Ok(w)
    }

    fn add_node(
        &mut self,
        kind: NodeKind,
        name: String,
        server: Option<Option<usize>>,
        mean_us: f64,
        bg_rate_per_us: f64,
    ) -> NodeIx {
        let ix = self.kinds.len();
        self.kinds.push(kind);
        self.cons.node(&name);
        self.names.push(name);
        self.servers.push(server.map(FifoServer::new));
        self.host_mean_us.push(mean_us);
        let bg = if bg_rate_per_us > 0.0 {
            PoissonStream::new(bg_rate_per_us * 1e6, self.seed, mix(&[KEY_BG, ix as u64])).ok()
        } else {
            None
        };
        self.host_bg.push(bg);
        self.host_bg_seq.push(0);
        ix
    }

    fn add_router(&mut self, p: RouterParams, name: String) -> NodeIx {
        let r = self.routers.len();
        let mu = self.cfg.rate_per_us(p.mu);
        let node = RouterNode::new(p, mu);
        let capacity = router_capacity(&p);
        let ix = self.add_node(NodeKind::Router(r), name, Some(capacity), 0.0, 0.0);
        self.routers.push(node);
        self.router_node.push(ix);
        let lam = self.cfg.rate_per_us(p.lambda);
        self.cross.push(if lam > 0.0 {
            PoissonStream::new(lam * 1e6, self.seed, mix(&[KEY_CROSS, r as u64])).ok()
        } else {
            None
        });
        self.cross_seq.push(0);
        ix
    }

    fn add_segment(&mut self, routers: &[NodeIx], end: NodeIx, total_us: u64, end_port: PortBits) -> usize {
        let links = routers.len() as u64 + 1;
        let base = total_us / links;
        let extra = total_us % links;
        let mut hops: Vec<Hop> = routers
            .iter()
            .map(|&n| Hop {
                node: n,
                delay: SimTime(base),
            })
            .collect();
        hops.push(Hop {
            node: end,
            delay: SimTime(base + extra),
        });
        self.segments.push(Segment { hops, end_port });
        self.segments.len() - 1
    }

    fn name(&self, n: NodeIx) -> &str {
        &self.names[n]
    }

    fn counters(&mut self, n: NodeIx) -> &mut super::metrics::NodeCounters {
        let name = self.names[n].clone();
        self.cons.node(&name)
    }

    // ---- packet movement -------------------------------------------------

    fn new_packet(&self, pkt: &Packet, class: Class) -> Box<SimPacket> {
        let key = match class {
            Class::Ho {
                msg, ue, hop, attempt, ..
            } => mix(&[KEY_HO, ue as u64, hop as u64, msg.number() as u64, attempt as u64]),
            Class::Ping {
                du, proc, seq, reply, ..
            } => mix(&[KEY_PING, du as u64, proc as u64, seq, reply as u64]),
        };
        Box::new(SimPacket {
            bytes: wire::serialize(pkt).expect("simulator builds consistent frames"),
            key,
            class,
            ingress: PortBits::physical(0).expect("valid"),
            route: None,
            processed: None,
        })
    }

    fn start_segment(&mut self, eng: &mut Engine<Ev>, seg: usize, mut p: Box<SimPacket>) {
        let hop = self.segments[seg].hops[0];
        p.route = Some((seg, 0));
        eng.schedule_in(hop.delay, Ev::Arrive(hop.node, p));
    }

    /// Sends a packet out of a physical switch port onto the right path.
    fn egress_port(&mut self, eng: &mut Engine<Ev>, sw: NodeIx, port: PortBits, p: Box<SimPacket>) {
        let seg = match self.kinds[sw] {
            NodeKind::DuSwitch(du) => {
                if port.index() == 0 {
                    self.r_down[du as usize - 1]
                } else {
                    self.c_up[du as usize - 1]
                }
            }
            NodeKind::CuSwitch => {
                let du = self.path_du(&p.bytes);
                self.c_down[du as usize - 1]
            }
            _ => unreachable!("egress from a non-switch node"),
        };
        self.start_segment(eng, seg, p);
    }

    /// DU whose path a frame leaving the RRH or CU takes: the destination
    /// if it is a DU, otherwise the DU named in the forward tag.
    fn path_du(&self, bytes: &[u8]) -> u16 {
        let pkt = wire::deserialize(bytes).expect("frames in flight are valid");
        let dst = pkt.ethernet.dst.node_id();
        if (1..=self.n_du).contains(&dst) {
            return dst;
        }
        match pkt.tag {
            Some(TagHeader::Forward { dest_port }) if (1..=self.n_du).contains(&(dest_port as u16)) => {
                dest_port as u16
            }
            _ => 1,
        }
    }

    /// Originates a packet at `from` and sends it on its way.
    fn emit(&mut self, eng: &mut Engine<Ev>, from: NodeIx, pkt: &Packet, class: Class) {
        let mut p = self.new_packet(pkt, class);
        self.counters(from).originated += 1;
        if let Class::Ho { msg, ue, hop, .. } = class {
            let name = self.names[from].clone();
            self.trace.record(eng.now(), &name, TraceKind::Send, msg, ue, hop);
        }
        self.dispatch(eng, from, &mut p);
        self.send_from(eng, from, p);
    }

    fn dispatch(&mut self, _eng: &mut Engine<Ev>, _from: NodeIx, _p: &mut SimPacket) {}

    /// Moves a packet that `from` is done with to its next node.
    fn send_from(&mut self, eng: &mut Engine<Ev>, from: NodeIx, mut p: Box<SimPacket>) {
        self.counters(from).forwarded += 1;
        match self.kinds[from] {
            NodeKind::Rrh => {
                let du = self.path_du(&p.bytes);
                let seg = self.r_up[du as usize - 1];
                self.start_segment(eng, seg, p);
            }
            NodeKind::DuHost(du) => {
                p.ingress = PortBits::host(0).expect("valid");
                eng.schedule_in(SimTime::ZERO, Ev::Arrive(self.du_switch[du as usize - 1], p));
            }
            NodeKind::CuHost => {
                p.ingress = PortBits::host(0).expect("valid");
                eng.schedule_in(SimTime::ZERO, Ev::Arrive(self.cu_switch, p));
            }
            NodeKind::DuCtrl(du) => {
                let sw = self.du_switch[du as usize - 1];
                self.packet_out(eng, sw, p);
            }
            NodeKind::CuCtrl => {
                let sw = self.cu_switch;
                self.packet_out(eng, sw, p);
            }
            _ => unreachable!("send_from a transit node"),
        }
    }

    /// Controller packet-out: egress chosen by the switch's etherforward
    /// table, no ingress pipeline.
    fn packet_out(&mut self, eng: &mut Engine<Ev>, sw: NodeIx, p: Box<SimPacket>) {
        let prog = match self.kinds[sw] {
            NodeKind::DuSwitch(du) => &self.du_program[du as usize - 1],
            _ => &self.cu_program,
        };
        let dst = u64::from_be_bytes({
            let mut b = [0u8; 8];
            b[2..].copy_from_slice(&p.bytes[0..6]);
            b
        });
        let table = prog.table("etherforward").expect("program has etherforward");
        match table.lookup_key(Some(dst)).action {
            pipeline::Action::EtherPortForward(port) if port.is_physical() => {
                self.egress_port(eng, sw, port, p)
            }
            other => {
                log::warn!("packet-out from {} has no physical egress ({other})", self.name(sw));
                self.counters(sw).dropped += 1;
                // the packet never entered the switch; account it there
                self.counters(sw).received += 1;
            }
        }
    }

    // ---- arrivals and service ---------------------------------------------

    fn arrive(&mut self, eng: &mut Engine<Ev>, node: NodeIx, p: Box<SimPacket>) {
        self.counters(node).received += 1;
        match self.kinds[node] {
            NodeKind::Rrh => self.rrh_receive(eng, p),
            NodeKind::CuHost if matches!(p.class, Class::Ping { .. }) => {
                self.echo(eng, p);
            }
            _ => self.enqueue(eng, node, Job::Pkt(p)),
        }
    }

    fn enqueue(&mut self, eng: &mut Engine<Ev>, node: NodeIx, job: Job) {
        let now = eng.now();
        let server = self.servers[node].as_mut().expect("queueing node");
        let (admit, back) = server.arrive(job, now);
        match admit {
            Admit::Started => self.start_service(eng, node),
            Admit::Queued => {}
            Admit::Dropped => {
                if let Some(Job::Pkt(_)) | Some(Job::Phantom(_)) = back {
                    self.counters(node).dropped += 1;
                }
            }
        }
    }

    fn start_service(&mut self, eng: &mut Engine<Ev>, node: NodeIx) {
        let kind = self.kinds[node];
        let seed = self.seed;
        let cost = self.cfg.cost_model;
        let ctrl_cost = SimTime(self.cfg.controller_cost_us);
        let host_mean = self.host_mean_us[node];
        let router_mean = match kind {
            NodeKind::Router(r) => self.routers[r].mean_service_us(),
            _ => 0.0,
        };
        let program = match kind {
            NodeKind::DuSwitch(du) => Some(&self.du_program[du as usize - 1]),
            NodeKind::CuSwitch => Some(&self.cu_program),
            _ => None,
        };
        let server = self.servers[node].as_mut().expect("queueing node");
        let job = server.in_service_mut().expect("job in service");
        let dt = match (kind, job) {
            (NodeKind::Router(_), Job::Pkt(p)) => exp_time(seed, p.key, node as u64, router_mean),
            (NodeKind::Router(_), Job::Phantom(k)) => exp_time(seed, *k, node as u64, router_mean),
            (NodeKind::DuSwitch(_) | NodeKind::CuSwitch, Job::Pkt(p)) => {
                let out = program
                    .expect("switch program")
                    .process(&p.bytes, p.ingress, &cost)
                    .expect("pipeline on simulator frames");
                let dt = SimTime::from_micros_f64(out.cost_us);
                p.processed = Some(Box::new(out));
                dt
            }
            (NodeKind::DuCtrl(_) | NodeKind::CuCtrl, _) => ctrl_cost,
            (NodeKind::DuHost(_) | NodeKind::CuHost, Job::Pkt(p)) => {
                exp_time(seed, p.key, node as u64, host_mean)
            }
            (NodeKind::DuHost(_) | NodeKind::CuHost, Job::Phantom(k)) => {
                exp_time(seed, *k, node as u64, host_mean)
            }
            (k, _) => unreachable!("no service at {k:?}"),
        };
        eng.schedule_in(dt, Ev::Done(node));
    }

    fn done(&mut self, eng: &mut Engine<Ev>, node: NodeIx) {
        let server = self.servers[node].as_mut().expect("queueing node");
        let ((job, _arrived), next) = server.complete().expect("job in service");
        if next {
            self.start_service(eng, node);
        }
        match job {
            Job::Phantom(_) => {
                if let NodeKind::Router(_) = self.kinds[node] {
                    self.counters(node).consumed += 1;
                }
            }
            Job::Pkt(p) => match self.kinds[node] {
                NodeKind::Router(_) => self.next_hop_on_route(eng, node, p),
                NodeKind::DuSwitch(_) | NodeKind::CuSwitch => self.switch_out(eng, node, p),
                NodeKind::DuCtrl(du) => self.du_ctrl_handle(eng, node, du, p),
                NodeKind::CuCtrl => self.cu_ctrl_handle(eng, node, p),
                NodeKind::DuHost(du) => self.du_host_handle(eng, node, du, p),
                NodeKind::CuHost => self.cu_host_handle(eng, node, p),
                NodeKind::Rrh => unreachable!(),
            },
        }
    }

    fn next_hop_on_route(&mut self, eng: &mut Engine<Ev>, node: NodeIx, mut p: Box<SimPacket>) {
        let (seg, pos) = p.route.expect("routed packet");
        let next = pos + 1;
        let hop = self.segments[seg].hops[next];
        self.counters(node).forwarded += 1;
        if next + 1 == self.segments[seg].hops.len() {
            p.ingress = self.segments[seg].end_port;
            p.route = None;
        } else {
            p.route = Some((seg, next));
        }
        eng.schedule_in(hop.delay, Ev::Arrive(hop.node, p));
    }

    fn switch_out(&mut self, eng: &mut Engine<Ev>, sw: NodeIx, mut p: Box<SimPacket>) {
        let out = p.processed.take().expect("processed at service start");
        let (ctrl, host) = match self.kinds[sw] {
            NodeKind::DuSwitch(du) => (self.du_ctrl_node[du as usize - 1], self.du_host[du as usize - 1]),
            _ => (self.cu_ctrl_node, self.cu_host),
        };
        match out.verdict {
            Verdict::Drop(reason) => {
                log::debug!("{} dropped frame: {reason:?}", self.name(sw));
                self.counters(sw).dropped += 1;
            }
            verdict => {
                p.bytes = out.bytes.expect("forwarded frames are deparsed");
                self.counters(sw).forwarded += 1;
                match verdict {
                    Verdict::ToController(_) => eng.schedule_in(SimTime::ZERO, Ev::Arrive(ctrl, p)),
                    Verdict::Forward(port) if port.is_host() => {
                        eng.schedule_in(SimTime::ZERO, Ev::Arrive(host, p))
                    }
                    Verdict::Forward(port) => {
                        // egress_port counts nothing itself
                        self.egress_port(eng, sw, port, p)
                    }
                    Verdict::Drop(_) => unreachable!(),
                }
            }
        }
    }

    fn consume(&mut self, eng: &mut Engine<Ev>, node: NodeIx, p: &SimPacket) {
        self.counters(node).consumed += 1;
        if let Class::Ho { msg, ue, hop, .. } = p.class {
            let name = self.names[node].clone();
            self.trace.record(eng.now(), &name, TraceKind::Recv, msg, ue, hop);
        }
    }

    // ---- RRH / UE ------------------------------------------------------------

    fn mr_body(&self, ue: u16) -> HoBody {
        let u = &self.ues[ue as usize - 1];
        HoBody {
            hop: u.hop,
            attempt: u.attempt,
            src_du: u.path[u.hop as usize - 1],
            tgt_du: u.path[u.hop as usize],
            bearer: 0,
        }
    }

    fn send_mr(&mut self, eng: &mut Engine<Ev>, ue: u16) {
        let body = self.mr_body(ue);
        let pkt = body_frame(
            HoMessage::MeasurementReport,
            ue,
            MacAddr::for_node(RRH_ID),
            du_mac(body.src_du),
            body,
        );
        let class = Class::Ho {
            msg: HoMessage::MeasurementReport,
            ue,
            hop: body.hop,
            attempt: body.attempt,
            replay: false,
        };
        self.emit(eng, self.rrh, &pkt, class);
        eng.schedule_in(
            SimTime(self.cfg.ho_timeout_us),
            Ev::MrTimeout {
                ue,
                hop: body.hop,
                attempt: body.attempt,
            },
        );
    }

    fn mr_emit(&mut self, eng: &mut Engine<Ev>, ue: u16) {
        let u = &mut self.ues[ue as usize - 1];
        if u.done {
            return;
        }
        u.hop += 1;
        u.attempt = 1;
        u.awaiting = true;
        let hop = u.hop;
        let r = self.records.get_mut(&(ue, hop)).expect("record per hop");
        r.t_mr_sent = Some(eng.now());
        r.attempts = 1;
        self.send_mr(eng, ue);
    }

    fn mr_timeout(&mut self, eng: &mut Engine<Ev>, ue: u16, hop: u16, attempt: u8) {
        let max = self.cfg.max_attempts;
        let u = &mut self.ues[ue as usize - 1];
        if !u.awaiting || u.hop != hop || u.attempt != attempt || u.done {
            return;
        }
        if attempt < max {
            u.attempt += 1;
            self.records.get_mut(&(ue, hop)).expect("record").attempts = attempt + 1;
            self.send_mr(eng, ue);
        } else {
            log::debug!("ue {ue}: hop {hop} failed after {attempt} attempts");
            u.awaiting = false;
            u.done = true;
            self.ue_finished();
        }
    }

    fn ue_finished(&mut self) {
        self.ues_remaining -= 1;
        if self.ues_remaining == 0 {
            self.stopping = true;
        }
    }

    fn rrh_receive(&mut self, eng: &mut Engine<Ev>, p: Box<SimPacket>) {
        self.consume(eng, self.rrh, &p);
        match p.class {
            Class::Ping { sent_at, reply: true, .. } => {
                let rtt = (eng.now() - sent_at).as_micros() as f64;
                let (_, n, mean) = &mut self.ping_stats;
                *n += 1;
                *mean += (rtt - *mean) / *n as f64;
            }
            Class::Ho {
                msg: HoMessage::RrcConnectionReconfiguration,
                ue,
                replay,
                ..
            } => {
                let u = &mut self.ues[ue as usize - 1];
                if !u.awaiting {
                    return;
                }
                u.awaiting = false;
                let hop = u.hop;
                let last = hop as usize == u.path.len() - 1;
                let r = self.records.get_mut(&(ue, hop)).expect("record");
                r.t_rrccr_received = Some(eng.now());
                r.served_by = if replay { ServedBy::Replay } else { ServedBy::Cu };
                eng.schedule_in(SimTime(self.cfg.ue_processing_us), Ev::ReconfComplete { ue, hop });
                if last {
                    self.ues[ue as usize - 1].done = true;
                    self.ue_finished();
                } else {
                    let gap = self.cfg.inter_ho.min_us as f64
                        + exp_us(self.seed, mix(&[KEY_GAP, ue as u64, hop as u64]), 0, self.cfg.inter_ho.mean_us);
                    eng.schedule_in(SimTime::from_micros_f64(gap), Ev::MrEmit(ue));
                }
            }
            _ => {}
        }
    }

    fn reconf_complete(&mut self, eng: &mut Engine<Ev>, ue: u16, hop: u16) {
        let u = &self.ues[ue as usize - 1];
        let body = HoBody {
            hop,
            attempt: 1,
            src_du: u.path[hop as usize - 1],
            tgt_du: u.path[hop as usize],
            bearer: 0,
        };
        let pkt = body_frame(
            HoMessage::RrcReconfigurationComplete,
            ue,
            MacAddr::for_node(RRH_ID),
            du_mac(body.tgt_du),
            body,
        );
        self.emit(
            eng,
            self.rrh,
            &pkt,
            Class::Ho {
                msg: HoMessage::RrcReconfigurationComplete,
                ue,
                hop,
                attempt: 1,
                replay: false,
            },
        );
    }

    // ---- pings -----------------------------------------------------------------

    fn ping(&mut self, eng: &mut Engine<Ev>, du: u16, proc: u32) {
        if self.stopping {
            return;
        }
        let (stream, seq) = self.pings.get_mut(&(du, proc)).expect("ping process");
        let s = *seq;
        *seq += 1;
        let next = stream.next_arrival();
        eng.schedule(next.max(eng.now()), Ev::Ping(du, proc)).expect("future");
        let pkt = ping_frame(
            MacAddr::for_node(RRH_ID),
            MacAddr::for_node(CU_ID),
            du,
            self.cfg.ping_payload,
        );
        self.ping_stats.0 += 1;
        let class = Class::Ping {
            du,
            proc,
            seq: s,
            reply: false,
            sent_at: eng.now(),
        };
        self.emit(eng, self.rrh, &pkt, class);
    }

    fn echo(&mut self, eng: &mut Engine<Ev>, p: Box<SimPacket>) {
        self.consume(eng, self.cu_host, &p);
        if let Class::Ping {
            du, proc, seq, sent_at, ..
        } = p.class
        {
            let pkt = ping_frame(
                MacAddr::for_node(CU_ID),
                MacAddr::for_node(RRH_ID),
                du,
                self.cfg.ping_payload,
            );
            let class = Class::Ping {
                du,
                proc,
                seq,
                reply: true,
                sent_at,
            };
            self.emit(eng, self.cu_host, &pkt, class);
        }
    }

    // ---- DU side -------------------------------------------------------------

    fn du_ctrl_handle(&mut self, eng: &mut Engine<Ev>, node: NodeIx, du: u16, p: Box<SimPacket>) {
        let pkt = decode(&p.bytes);
        let is_rrc_op = matches!(
            pkt.tag,
            Some(TagHeader::Instruction { tag_value: inst::STORE_RRC, .. })
                | Some(TagHeader::Control { tag_value: 0x01, .. })
        );
        if !is_rrc_op {
            self.counters(node).forwarded += 1;
            let host = self.du_host[du as usize - 1];
            eng.schedule_in(SimTime::ZERO, Ev::Arrive(host, p));
            return;
        }
        match self.du_ctrl[du as usize - 1].du_data_updt(&pkt) {
            Ok(DuReply::StoreAck { .. }) => self.consume(eng, node, &p),
            Ok(DuReply::ReplayPacket(reply)) => {
                self.consume(eng, node, &p);
                self.replays += 1;
                let (ue, hop) = match p.class {
                    Class::Ho { ue, hop, .. } => (ue, hop),
                    _ => unreachable!("MR is an HO message"),
                };
                let class = Class::Ho {
                    msg: HoMessage::RrcConnectionReconfiguration,
                    ue,
                    hop,
                    attempt: 0,
                    replay: true,
                };
                self.emit(eng, node, &reply, class);
            }
            Err(ControlError::NoStoredRrc(_)) => {
                self.counters(node).forwarded += 1;
                let host = self.du_host[du as usize - 1];
                eng.schedule_in(SimTime::ZERO, Ev::Arrive(host, p));
            }
            Err(e) => {
                log::warn!("du{du} controller: {e}");
                self.counters(node).dropped += 1;
            }
        }
    }

    fn du_host_handle(&mut self, eng: &mut Engine<Ev>, node: NodeIx, du: u16, p: Box<SimPacket>) {
        self.consume(eng, node, &p);
        let pkt = decode(&p.bytes);
        let Class::Ho { ue, hop, attempt, .. } = p.class else {
            return;
        };
        let me = du_mac(du);
        let cu = MacAddr::for_node(CU_ID);
        let reply = |msg: HoMessage, body: HoBody| {
            (
                body_frame(msg, ue, me, cu, body),
                Class::Ho {
                    msg,
                    ue,
                    hop,
                    attempt,
                    replay: false,
                },
            )
        };
        match pkt.tag {
            Some(TagHeader::Instruction { .. }) => {
                if let (Some(ctx), Some(body)) = (pkt.ue_context(), HoBody::decode(&pkt.payload)) {
                    eng.schedule_in(
                        SimTime(self.cfg.target_prep_fixed_us),
                        Ev::PrepDone {
                            du,
                            ue,
                            body,
                            ctx: *ctx,
                        },
                    );
                }
            }
            Some(TagHeader::Control { tag_value, .. }) => {
                let Some(msg) = HoMessage::from_number(tag_value) else {
                    return;
                };
                match msg {
                    HoMessage::MeasurementReport => {
                        let body = HoBody::decode(&pkt.payload).expect("MR body");
                        let (f, c) = reply(HoMessage::UplinkRrcTransferMr, body);
                        self.emit(eng, node, &f, c);
                    }
                    HoMessage::UeContextModificationRequest => {
                        let rec = RrcRecord::decode(&pkt.payload).expect("RRC record");
                        let f = rrc_frame(
                            HoMessage::RrcConnectionReconfiguration,
                            ue,
                            me,
                            MacAddr::for_node(RRH_ID),
                            &rec,
                        );
                        let c = Class::Ho {
                            msg: HoMessage::RrcConnectionReconfiguration,
                            ue,
                            hop,
                            attempt,
                            replay: false,
                        };
                        self.emit(eng, node, &f, c);
                    }
                    HoMessage::RrcReconfigurationComplete => {
                        self.targets[du as usize - 1].consume(ue);
                        let body = HoBody::decode(&pkt.payload).expect("body");
                        let (f, c) = reply(HoMessage::UplinkRrcTransferComplete, body);
                        self.emit(eng, node, &f, c);
                    }
                    HoMessage::DownlinkPathSwitch => {
                        let body = HoBody::decode(&pkt.payload).expect("body");
                        let (f, c) = reply(HoMessage::UplinkDataForward, body);
                        self.emit(eng, node, &f, c);
                    }
                    HoMessage::UeContextReleaseCommand => {
                        self.du_ctrl[du as usize - 1].invalidate(ue);
                        let body = HoBody::decode(&pkt.payload).expect("body");
                        let (f, c) = reply(HoMessage::UeContextReleaseComplete, body);
                        self.emit(eng, node, &f, c);
                    }
                    other => log::warn!("du{du} host: unexpected message {other}"),
                }
            }
            _ => {}
        }
    }

    fn prep_done(&mut self, eng: &mut Engine<Ev>, du: u16, ue: u16, body: HoBody, ctx: UeContextHeader) {
        let res = self.targets[du as usize - 1].reserve(&ctx, body.hop);
        eng.schedule_in(
            SimTime(self.cfg.guard_timer_us),
            Ev::Guard {
                du,
                ue,
                gen: res.gen,
            },
        );
        let resp = HoBody {
            bearer: res.bearer,
            tgt_du: du,
            ..body
        };
        let f = body_frame(
            HoMessage::UeContextSetupResponse,
            ue,
            du_mac(du),
            MacAddr::for_node(CU_ID),
            resp,
        );
        let c = Class::Ho {
            msg: HoMessage::UeContextSetupResponse,
            ue,
            hop: body.hop,
            attempt: body.attempt,
            replay: false,
        };
        let host = self.du_host[du as usize - 1];
        self.emit(eng, host, &f, c);
    }

    fn guard(&mut self, du: u16, ue: u16, gen: u64) {
        let t = &mut self.targets[du as usize - 1];
        let Some(res) = t.reservation(ue).copied() else {
            return;
        };
        if res.gen != gen {
            return;
        }
        t.consume(ue);
        self.wasted += 1;
        log::debug!("du{du}: reservation for ue {ue} hop {} expired", res.hop);
        if let Some(st) = self.cu_hos.get_mut(&(ue, res.hop)) {
            if !st.rrccr_sent {
                st.prepared = None;
                st.prep_requested = false;
                if let Some(src) = self.du_ctrl.get_mut(st.src as usize - 1) {
                    src.invalidate(ue);
                }
            }
        }
    }

    // ---- CU side ---------------------------------------------------------------

    fn cu_ctrl_handle(&mut self, eng: &mut Engine<Ev>, node: NodeIx, mut p: Box<SimPacket>) {
        let pkt = decode(&p.bytes);
        let smartho = self.cfg.mode == Mode::Smartho;
        match pkt.tag {
            Some(TagHeader::Instruction { tag_value: inst::SET_UE_CONTEXT, ue_id }) => {
                let store = smartho && self.cu_ctrl.mt.has_ue(ue_id);
                match self.cu_ctrl.data_setup(&pkt, store) {
                    Ok(out) => {
                        p.bytes = wire::serialize(&out).expect("valid frame");
                        if let Class::Ho { msg, ue, hop, .. } = p.class {
                            self.trace.record(eng.now(), "cu-ctrl", TraceKind::Fwd, msg, ue, hop);
                        }
                        self.send_from(eng, node, p);
                    }
                    Err(e) => {
                        log::warn!("cu controller: {e}");
                        self.counters(node).dropped += 1;
                    }
                }
                return;
            }
            Some(TagHeader::Control { tag_value, ue_id }) if smartho => {
                let body = HoBody::decode(&pkt.payload);
                if tag_value == HoMessage::UplinkRrcTransferMr.number() {
                    if let Some(b) = body {
                        let seen = self.mr_seen.entry(ue_id).or_default();
                        *seen = (*seen).max(b.hop);
                    }
                    if self.cu_ctrl.cancel(ue_id).is_some() {
                        log::debug!("ue {ue_id}: MR before trigger, preparing normally");
                    }
                } else if tag_value == HoMessage::UeContextReleaseComplete.number() {
                    if let Some(b) = body {
                        let next = b.hop + 1;
                        let seen = self.mr_seen.get(&ue_id).copied().unwrap_or(0);
                        if seen < next {
                            match self.cu_ctrl.trigger_smartho(ue_id, b.tgt_du, eng.now()) {
                                Ok(t) => {
                                    self.next_hop.insert(ue_id, next);
                                    eng.schedule(t.fire_at, Ev::Trigger(ue_id)).expect("future");
                                }
                                Err(e) => log::debug!("ue {ue_id}: no pre-allocation ({e})"),
                            }
                        }
                    }
                }
            }
            _ => {}
        }
        self.counters(node).forwarded += 1;
        eng.schedule_in(SimTime::ZERO, Ev::Arrive(self.cu_host, p));
    }

    fn trigger(&mut self, eng: &mut Engine<Ev>, ue: u16) {
        let Some((t, mut pkt)) = self.cu_ctrl.fire(ue, eng.now(), MacAddr::for_node(CU_ID)) else {
            return;
        };
        let hop = self.next_hop.get(&ue).copied().unwrap_or(0);
        pkt.payload = HoBody {
            hop,
            attempt: 0,
            src_du: t.source_du_id,
            tgt_du: t.target_du_id,
            bearer: 0,
        }
        .encode();
        let class = Class::Ho {
            msg: HoMessage::UeContextSetupRequest,
            ue,
            hop,
            attempt: 0,
            replay: false,
        };
        self.emit(eng, self.cu_ctrl_node, &pkt, class);
    }

    fn cu_send(&mut self, eng: &mut Engine<Ev>, pkt: Packet, msg: HoMessage, ue: u16, hop: u16, attempt: u8) {
        let class = Class::Ho {
            msg,
            ue,
            hop,
            attempt,
            replay: false,
        };
        self.emit(eng, self.cu_host, &pkt, class);
    }

    fn send_setup_request(&mut self, eng: &mut Engine<Ev>, ue: u16, hop: u16, st: CuHo) {
        let mut ctx = self.ues[ue as usize - 1].ctx;
        ctx.src_gnb_addr = st.src;
        let pkt = Packet::new(EthernetHeader {
            dst: du_mac(st.tgt),
            src: MacAddr::for_node(CU_ID),
            ether_type: ETHERTYPE_INSTRUCTION,
        })
        .with_tag(TagHeader::Instruction {
            tag_value: inst::SET_UE_CONTEXT,
            ue_id: ue,
        })
        .with_ext(ExtHeader::UeContext(ctx))
        .with_payload(
            HoBody {
                hop,
                attempt: st.attempt,
                src_du: st.src,
                tgt_du: st.tgt,
                bearer: 0,
            }
            .encode(),
        );
        self.cu_send(eng, pkt, HoMessage::UeContextSetupRequest, ue, hop, st.attempt);
    }

    fn rrc_record(&self, ue: u16, st: &CuHo) -> RrcRecord {
        RrcRecord {
            ue_id: ue,
            target_du_id: st.tgt,
            bearer_info: st.prepared.unwrap_or(0),
            security_algorithm: self.ues[ue as usize - 1].ctx.security_algorithm,
        }
    }

    fn send_modification(&mut self, eng: &mut Engine<Ev>, ue: u16, hop: u16) {
        let st = self.cu_hos[&(ue, hop)];
        let rec = self.rrc_record(ue, &st);
        let f = rrc_frame(
            HoMessage::UeContextModificationRequest,
            ue,
            MacAddr::for_node(CU_ID),
            du_mac(st.src),
            &rec,
        );
        self.cu_hos.get_mut(&(ue, hop)).expect("state").rrccr_sent = true;
        self.cu_send(eng, f, HoMessage::UeContextModificationRequest, ue, hop, st.attempt);
    }

    fn send_store(&mut self, eng: &mut Engine<Ev>, ue: u16, hop: u16) {
        let st = self.cu_hos[&(ue, hop)];
        let rec = self.rrc_record(ue, &st);
        let pkt = Packet::new(EthernetHeader {
            dst: du_mac(st.src),
            src: MacAddr::for_node(CU_ID),
            ether_type: ETHERTYPE_INSTRUCTION,
        })
        .with_tag(TagHeader::Instruction {
            tag_value: inst::STORE_RRC,
            ue_id: ue,
        })
        .with_payload(rec.encode());
        self.cu_send(eng, pkt, HoMessage::UeContextModificationRequest, ue, hop, 0);
    }

    fn cu_host_handle(&mut self, eng: &mut Engine<Ev>, node: NodeIx, p: Box<SimPacket>) {
        self.consume(eng, node, &p);
        let pkt = decode(&p.bytes);
        let Some(TagHeader::Control { tag_value, ue_id: ue }) = pkt.tag else {
            return;
        };
        let (Some(msg), Some(body)) = (HoMessage::from_number(tag_value), HoBody::decode(&pkt.payload)) else {
            return;
        };
        let hop = body.hop;
        let st = self.cu_hos.entry((ue, hop)).or_insert(CuHo {
            src: body.src_du,
            tgt: body.tgt_du,
            ..Default::default()
        });
        match msg {
            HoMessage::UplinkRrcTransferMr => {
                st.mr = true;
                let retry = body.attempt > st.attempt;
                st.attempt = st.attempt.max(body.attempt);
                if st.rrccr_sent || st.prepared.is_some() {
                    self.send_modification(eng, ue, hop);
                } else if !st.prep_requested || retry {
                    st.prep_requested = true;
                    let snapshot = *st;
                    self.send_setup_request(eng, ue, hop, snapshot);
                }
            }
            HoMessage::UeContextSetupResponse => {
                if st.prepared.is_none() {
                    st.prepared = Some(body.bearer);
                }
                st.prep_requested = true;
                if st.mr {
                    if !st.rrccr_sent {
                        self.send_modification(eng, ue, hop);
                    }
                } else if body.attempt == 0 {
                    self.send_store(eng, ue, hop);
                }
            }
            HoMessage::UplinkRrcTransferComplete => {
                let f = body_frame(HoMessage::DownlinkPathSwitch, ue, MacAddr::for_node(CU_ID), du_mac(st.tgt), body);
                self.cu_send(eng, f, HoMessage::DownlinkPathSwitch, ue, hop, body.attempt);
            }
            HoMessage::UplinkDataForward => {
                let f = body_frame(HoMessage::UeContextReleaseCommand, ue, MacAddr::for_node(CU_ID), du_mac(st.src), body);
                self.cu_send(eng, f, HoMessage::UeContextReleaseCommand, ue, hop, body.attempt);
            }
            HoMessage::UeContextReleaseComplete => {}
            other => log::warn!("cu host: unexpected message {other}"),
        }
    }

    // ---- background ------------------------------------------------------------

    fn cross_arrival(&mut self, eng: &mut Engine<Ev>, r: usize) {
        if self.stopping {
            return;
        }
        let next = self.cross[r].as_mut().expect("cross stream").next_arrival();
        eng.schedule(next.max(eng.now()), Ev::Cross(r)).expect("future");
        let seq = self.cross_seq[r];
        self.cross_seq[r] += 1;
        let node = self.router_node[r];
        self.counters(node).originated += 1;
        self.enqueue(eng, node, Job::Phantom(mix(&[KEY_CROSS, r as u64, seq])));
    }

    fn bg_arrival(&mut self, eng: &mut Engine<Ev>, node: NodeIx) {
        if self.stopping {
            return;
        }
        let next = self.host_bg[node].as_mut().expect("bg stream").next_arrival();
        eng.schedule(next.max(eng.now()), Ev::Bg(node)).expect("future");
        let seq = self.host_bg_seq[node];
        self.host_bg_seq[node] += 1;
        let key = mix(&[KEY_BG, node as u64, seq]);
        let now = eng.now();
        let server = self.servers[node].as_mut().expect("host server");
        if let (Admit::Started, _) = server.arrive(Job::Phantom(key), now) {
            self.start_service(eng, node);
        }
    }

    fn handle(&mut self, eng: &mut Engine<Ev>, ev: Ev) {
        match ev {
            Ev::Arrive(node, p) => self.arrive(eng, node, p),
            Ev::Done(node) => self.done(eng, node),
            Ev::Cross(r) => self.cross_arrival(eng, r),
            Ev::Bg(node) => self.bg_arrival(eng, node),
            Ev::Ping(du, proc) => self.ping(eng, du, proc),
            Ev::MrEmit(ue) => self.mr_emit(eng, ue),
            Ev::MrTimeout { ue, hop, attempt } => self.mr_timeout(eng, ue, hop, attempt),
            Ev::ReconfComplete { ue, hop } => self.reconf_complete(eng, ue, hop),
            Ev::Trigger(ue) => self.trigger(eng, ue),
            Ev::PrepDone { du, ue, body, ctx } => self.prep_done(eng, du, ue, body, ctx),
            Ev::Guard { du, ue, gen } => self.guard(du, ue, gen),
        }
    }

    fn seed_events(&mut self, eng: &mut Engine<Ev>) -> Result<(), SimError> {
        for r in 0..self.routers.len() {
            if let Some(s) = self.cross[r].as_mut() {
                let t = s.next_arrival();
                eng.schedule(t, Ev::Cross(r))?;
            }
        }
        for node in 0..self.kinds.len() {
            if let Some(s) = self.host_bg[node].as_mut() {
                let t = s.next_arrival();
                eng.schedule(t, Ev::Bg(node))?;
            }
        }
        for du in 1..=self.n_du {
            for proc in 0..self.cfg.parallel_pings {
                let mut s = PoissonStream::new(
                    self.cfg.ping_rate_hz,
                    self.seed,
                    mix(&[KEY_PING, du as u64, proc as u64]),
                )?;
                let t = s.next_arrival();
                self.pings.insert((du, proc), (s, 0));
                eng.schedule(t, Ev::Ping(du, proc))?;
            }
        }
        for ue in 1..=self.cfg.ue_count {
            let start = self.cfg.warmup_us as f64
                + exp_us(self.seed, mix(&[KEY_GAP, ue as u64, 0]), 1, self.cfg.first_mr_mean_us);
            eng.schedule(SimTime::from_micros_f64(start), Ev::MrEmit(ue))?;
        }
        Ok(())
    }

    fn finish(mut self, eng: &mut Engine<Ev>, threshold: u64) -> (MetricsReport, Trace) {
        let leftover = eng.clear();
        for ev in &leftover {
            if let Ev::Arrive(..) = ev {
                self.cons.on_links += 1;
            }
        }
        for node in 0..self.kinds.len() {
            if let Some(s) = &self.servers[node] {
                let resident = s
                    .jobs()
                    .filter(|j| match j {
                        Job::Pkt(_) => true,
                        Job::Phantom(_) => matches!(self.kinds[node], NodeKind::Router(_)),
                    })
                    .count() as u64;
                self.counters(node).resident = resident;
            }
        }
        let router_drops = self
            .router_node
            .iter()
            .map(|&n| self.servers[n].as_ref().map_or(0, |s| s.drops))
            .sum();
        let mut records: Vec<HoRecord> = self.records.values().copied().collect();
        measure_ho(&mut records, threshold);
        let report = MetricsReport {
            config_hash: self.cfg.hash(),
            seed: self.cfg.seed,
            mode: self.cfg.mode,
            tandem: self.cfg.tandem,
            load: self.cfg.parallel_pings,
            drop_threshold_us: threshold,
            records,
            wasted_preallocations: self.wasted,
            replays: self.replays,
            router_drops,
            pings: PingStats {
                sent: self.ping_stats.0,
                received: self.ping_stats.1,
                mean_rtt_us: self.ping_stats.2,
            },
            conservation: self.cons,
            end_time: eng.now(),
            events: eng.executed(),
        };
        (report, self.trace)
    }
}

fn router_capacity(p: &RouterParams) -> Option<usize> {
    match p.buffer {
        crate::qmodel::Buffer::Finite(b) => Some(b as usize),
        crate::qmodel::Buffer::Infinite => None,
    }
}

/// Runs one scenario with an explicit drop threshold.
fn run_with_threshold(cfg: &ScenarioConfig, threshold: u64) -> Result<(MetricsReport, Trace), SimError> {
    let mut world = World::build(cfg, cfg.trace)?;
    let mut eng = Engine::new();
    world.seed_events(&mut eng)?;
    let limit = SimTime(cfg.max_sim_time_us);
    while let Some(at) = eng.peek_time() {
        if at > limit {
            log::warn!("run stopped at the {limit} time limit");
            break;
        }
        let (_, ev) = eng.pop().expect("peeked");
        world.handle(&mut eng, ev);
    }
    Ok(world.finish(&mut eng, threshold))
}

/// Drop threshold for a scenario: the configured value, or the factor
/// times the mean single-HO time of an unloaded traditional run.
pub fn drop_threshold(cfg: &ScenarioConfig) -> Result<u64, SimError> {
    if let Some(t) = cfg.drop_threshold_us {
        return Ok(t);
    }
    let mut cal = cfg.clone();
    cal.mode = Mode::Traditional;
    cal.tandem = 1;
    cal.parallel_pings = 0;
    cal.trace = false;
    cal.mt_rows.clear();
    cal.drop_threshold_us = Some(u64::MAX);
    let (report, _) = run_with_threshold(&cal, u64::MAX)?;
    let mean = report.aggregates().mean_ho_time_us;
    if !mean.is_finite() {
        return Err(SimError::Runtime("calibration run completed no handover".into()));
    }
    Ok((mean * cfg.drop_threshold_factor).round() as u64)
}

/// Runs a handover scenario and returns its metrics and (if enabled) the
/// message trace.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<(MetricsReport, Trace), SimError> {
    cfg.validate()?;
    let threshold = drop_threshold(cfg)?;
    run_with_threshold(cfg, threshold)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(mode: Mode, tandem: u16) -> ScenarioConfig {
        ScenarioConfig {
            mode,
            tandem,
            ue_count: 2,
            parallel_pings: 2,
            drop_threshold_us: Some(1_000_000),
            trace: true,
            ..Default::default()
        }
    }

    #[test]
    fn traditional_single_ho_completes() {
        let (r, trace) = run_scenario(&quick(Mode::Traditional, 1)).unwrap();
        assert_eq!(r.records.len(), 2);
        assert!(r.records.iter().all(|h| h.completed()), "{:?}", r.records);
        assert!(r.conservation.balanced(), "{:?}", r.conservation.unbalanced_nodes());
        let sends: Vec<u8> = trace
            .filter(TraceKind::Send, 1, 1)
            .iter()
            .map(|e| e.message.number())
            .collect();
        assert_eq!(sends, (1..=12).collect::<Vec<u8>>());
    }

    #[test]
    fn smartho_replays_later_hops() {
        let (r, _) = run_scenario(&quick(Mode::Smartho, 3)).unwrap();
        assert!(r.records.iter().all(|h| h.completed()));
        assert!(r.replays > 0);
        assert!(r
            .records
            .iter()
            .filter(|h| h.hop == 1)
            .all(|h| h.served_by == ServedBy::Cu));
    }

    #[test]
    fn spoofed_and_genuine_reservations_match() {
        let ctx = ue_context(1, 4, 2);
        let mut a = TargetState::default();
        let mut b = TargetState::default();
        let genuine = a.reserve(&ctx, 2);
        let spoofed = b.reserve(&ctx, 2);
        assert_eq!(genuine, spoofed);
    }
}
