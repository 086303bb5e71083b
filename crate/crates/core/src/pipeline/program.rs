//! Switch programs: a parser plus named tables plus a fixed control flow.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::parser::{ParseResult, ParsedPacket, ParserConfig, ParserProgram, RejectReason};
use super::table::{Action, KeyField, MatchActionTable, TableConfig};
use super::{deparse, CostModel, PipelineError};
use crate::wire::{ctrl, inst, ExtHeader, PortBits, TagHeader, ETHERNET_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProgramKind {
    Cu,
    Du,
    TagForward,
    IpBaseline,
}

impl ProgramKind {
    /// Tables the control flow expects, with their key fields.
    pub fn required_tables(self) -> &'static [(&'static str, KeyField)] {
        match self {
            ProgramKind::Cu => &[
                ("etherforward", KeyField::EthernetDst),
                ("source_gnb_controller_forward", KeyField::SrcGnbAddr),
            ],
            ProgramKind::Du => &[
                ("etherforward", KeyField::EthernetDst),
                ("smartho_lookup", KeyField::SmarthoCtrlSrcPort),
            ],
            ProgramKind::TagForward => &[("tag_forward", KeyField::ForwardTagPort)],
            ProgramKind::IpBaseline => &[("ipv4_forward", KeyField::Ipv4Dst)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DropReason {
    Parser(RejectReason),
    /// `operation_drop` selected by the named table (hit or default).
    Table(String),
    /// A SMARTHO header named a port that is not one-hot.
    InvalidPort(u32),
    /// The packet carries nothing this program forwards on.
    NotApplicable,
    TtlExpired,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Forward(PortBits),
    /// Punt to the local controller through the host side of the ingress
    /// interface.
    ToController(PortBits),
    Drop(DropReason),
}

impl Verdict {
    pub fn egress(&self) -> Option<PortBits> {
        match self {
            Verdict::Forward(p) | Verdict::ToController(p) => Some(*p),
            Verdict::Drop(_) => None,
        }
    }
}

/// Everything one pass through a switch produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Processed {
    pub verdict: Verdict,
    /// Packet after actions; `None` when the parser rejected.
    pub packet: Option<ParsedPacket>,
    /// Deparsed bytes for forwarded and punted packets.
    pub bytes: Option<Vec<u8>>,
    pub header_bytes: usize,
    pub lookups: u32,
    pub actions: u32,
    pub cost_us: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProgramConfig {
    pub kind: ProgramKind,
    pub parser: ParserConfig,
    pub tables: Vec<TableConfig>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwitchProgram {
    kind: ProgramKind,
    parser: ParserProgram,
    tables: BTreeMap<String, MatchActionTable>,
}

struct Flow {
    verdict: Verdict,
    lookups: u32,
    actions: u32,
}

impl Flow {
    fn new(verdict: Verdict, lookups: u32, actions: u32) -> Self {
        Flow {
            verdict,
            lookups,
            actions,
        }
    }
}

impl SwitchProgram {
    pub fn new(
        kind: ProgramKind,
        parser: ParserProgram,
        tables: impl IntoIterator<Item = MatchActionTable>,
    ) -> Result<Self, PipelineError> {
        let mut map = BTreeMap::new();
        for t in tables {
            let name = t.name().to_string();
            if map.insert(name.clone(), t).is_some() {
                return Err(PipelineError::MalformedProgram(format!(
                    "table '{name}' defined twice"
                )));
            }
        }
        for (name, key) in kind.required_tables() {
            let t = map.get(*name).ok_or_else(|| {
                PipelineError::MalformedProgram(format!("{kind:?} program needs table '{name}'"))
            })?;
            if t.key_field() != *key {
                return Err(PipelineError::MalformedProgram(format!(
                    "table '{name}' must match on {key:?}"
                )));
            }
        }
        let program = SwitchProgram {
            kind,
            parser,
            tables: map,
        };
        for t in program.tables.values() {
            for a in t.entries().map(|(_, a)| a).chain([t.default_action()]) {
                program.check_action(t.name(), a)?;
            }
        }
        Ok(program)
    }

    pub fn from_config(cfg: ProgramConfig) -> Result<Self, PipelineError> {
        let parser = ParserProgram::try_from(cfg.parser)?;
        let tables = cfg
            .tables
            .into_iter()
            .map(MatchActionTable::try_from)
            .collect::<Result<Vec<_>, _>>()?;
        SwitchProgram::new(cfg.kind, parser, tables)
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let cfg: ProgramConfig = serde_json::from_str(text).map_err(|e| {
            PipelineError::Config(format!("line {} column {}: {e}", e.line(), e.column()))
        })?;
        SwitchProgram::from_config(cfg)
    }

    pub fn kind(&self) -> ProgramKind {
        self.kind
    }

    pub fn parser(&self) -> &ParserProgram {
        &self.parser
    }

    pub fn table(&self, name: &str) -> Option<&MatchActionTable> {
        self.tables.get(name)
    }

    pub fn tables(&self) -> impl Iterator<Item = &MatchActionTable> {
        self.tables.values()
    }

    /// Control-plane access to a table. Entries added here go through the
    /// same action checks as entries loaded from config.
    pub fn add_entry(
        &mut self,
        table: &str,
        key: u64,
        action: &str,
        params: &[u64],
    ) -> Result<(), PipelineError> {
        let a = Action::from_name(action, params)?;
        self.check_action(table, a)?;
        self.tables
            .get_mut(table)
            .ok_or_else(|| PipelineError::MalformedProgram(format!("no table '{table}'")))?
            .insert(key, a)
    }

    pub fn remove_entry(&mut self, table: &str, key: u64) -> Option<Action> {
        self.tables.get_mut(table)?.remove(key)
    }

    fn check_action(&self, table: &str, a: Action) -> Result<(), PipelineError> {
        let is_lookup = self.kind == ProgramKind::Du && table == "smartho_lookup";
        let ok = match a {
            Action::SetFrwdTagPrt(_) => is_lookup,
            Action::OperationDrop => true,
            _ => !is_lookup,
        };
        if ok {
            Ok(())
        } else {
            Err(PipelineError::BadActionParams(format!(
                "action {} not allowed in table '{table}'",
                a.name()
            )))
        }
    }

    fn t(&self, name: &str) -> &MatchActionTable {
        &self.tables[name]
    }

    /// Parses, runs the control flow and deparses one frame.
    pub fn process(
        &self,
        bytes: &[u8],
        ingress: PortBits,
        cost: &CostModel,
    ) -> Result<Processed, PipelineError> {
        let mut pkt = match self.parser.run(bytes) {
            ParseResult::Accept(p) => p,
            ParseResult::Reject(reason) => {
                let header_bytes = bytes.len().min(ETHERNET_LEN);
                return Ok(Processed {
                    verdict: Verdict::Drop(DropReason::Parser(reason)),
                    packet: None,
                    bytes: None,
                    header_bytes,
                    lookups: 0,
                    actions: 0,
                    cost_us: cost.cost(header_bytes, 0, 0),
                });
            }
        };
        pkt.packet.meta.ingress_port = ingress;
        let header_bytes = pkt.header_len();
        let flow = match self.kind {
            ProgramKind::Cu => self.cu_pipeline(&pkt, ingress),
            ProgramKind::Du => self.du_pipeline(&mut pkt, ingress),
            ProgramKind::TagForward => self.tag_forward_pipeline(&pkt, ingress),
            ProgramKind::IpBaseline => self.ip_pipeline(&mut pkt, ingress),
        };
        pkt.packet.meta.egress_port = flow.verdict.egress();
        let out = match flow.verdict {
            Verdict::Drop(_) => None,
            _ => Some(deparse(&pkt)?),
        };
        Ok(Processed {
            verdict: flow.verdict,
            packet: Some(pkt),
            bytes: out,
            header_bytes,
            lookups: flow.lookups,
            actions: flow.actions,
            cost_us: cost.cost(header_bytes, flow.lookups, flow.actions),
        })
    }

    fn apply(&self, table: &str, a: Action, ingress: PortBits) -> Verdict {
        match a {
            Action::OperationDrop => Verdict::Drop(DropReason::Table(table.to_string())),
            Action::EtherPortForward(p)
            | Action::PreparePortForward(p)
            | Action::TagForward(p)
            | Action::IpForward(p) => Verdict::Forward(p),
            Action::CuControllerForward | Action::DuControllerForward => {
                Verdict::ToController(ingress.host_side())
            }
            // rejected at load for every table this is reachable from
            Action::SetFrwdTagPrt(_) => Verdict::Drop(DropReason::Table(table.to_string())),
        }
    }

    fn table_flow(&self, name: &str, pkt: &ParsedPacket, ingress: PortBits) -> Flow {
        let hit = self.t(name).lookup(pkt, ingress);
        Flow::new(self.apply(name, hit.action, ingress), 1, 1)
    }

    fn cu_pipeline(&self, pkt: &ParsedPacket, ingress: PortBits) -> Flow {
        let p = &pkt.packet;
        if p.tag.is_some() {
            if p.ue_context().is_some() {
                Flow::new(Verdict::ToController(ingress.host_side()), 0, 1)
            } else {
                self.table_flow("source_gnb_controller_forward", pkt, ingress)
            }
        } else {
            self.table_flow("etherforward", pkt, ingress)
        }
    }

    fn du_pipeline(&self, pkt: &mut ParsedPacket, ingress: PortBits) -> Flow {
        let p = &pkt.packet;
        match p.tag {
            Some(TagHeader::Instruction { .. }) if p.ue_context().is_some() => {
                return Flow::new(Verdict::ToController(ingress.host_side()), 0, 1)
            }
            Some(TagHeader::Instruction { tag_value, .. }) if tag_value == inst::STORE_RRC => {
                return Flow::new(Verdict::ToController(ingress.host_side()), 0, 1)
            }
            Some(TagHeader::Control { tag_value, .. }) if tag_value == ctrl::MR_UPLINK_RRC => {
                return Flow::new(Verdict::ToController(ingress.host_side()), 0, 1)
            }
            _ => {}
        }
        if let Some(h) = p.smartho().copied() {
            if h.ctrl_info >= ctrl::LAST as u32 {
                // end of the message chain: hand the packet to the host
                return Flow::new(Verdict::Forward(ingress.host_side()), 0, 1);
            }
            let egress = match u8::try_from(h.frwd_tag_prt)
                .ok()
                .and_then(|b| PortBits::from_bits(b).ok())
            {
                Some(e) => e,
                None => return Flow::new(Verdict::Drop(DropReason::InvalidPort(h.frwd_tag_prt)), 0, 1),
            };
            let hit = self.t("smartho_lookup").lookup(pkt, ingress);
            let next = match hit.action {
                Action::SetFrwdTagPrt(v) => v,
                _ => {
                    return Flow::new(
                        Verdict::Drop(DropReason::Table("smartho_lookup".into())),
                        1,
                        2,
                    )
                }
            };
            pkt.packet.ext = Some(ExtHeader::Smartho(crate::wire::SmarthoHeader {
                ctrl_info: h.ctrl_info + 1,
                frwd_tag_prt: next,
            }));
            return Flow::new(Verdict::Forward(egress), 1, 3);
        }
        self.table_flow("etherforward", pkt, ingress)
    }

    fn tag_forward_pipeline(&self, pkt: &ParsedPacket, ingress: PortBits) -> Flow {
        match pkt.packet.tag {
            Some(TagHeader::Forward { .. }) => self.table_flow("tag_forward", pkt, ingress),
            _ => Flow::new(Verdict::Drop(DropReason::NotApplicable), 0, 0),
        }
    }

    fn ip_pipeline(&self, pkt: &mut ParsedPacket, ingress: PortBits) -> Flow {
        let Some(ip) = pkt.ipv4.as_mut() else {
            return Flow::new(Verdict::Drop(DropReason::NotApplicable), 0, 0);
        };
        let hit = self.tables["ipv4_forward"].lookup_key(Some(ip.dst as u64));
        if let Action::IpForward(_) = hit.action {
            if ip.ttl <= 1 {
                return Flow::new(Verdict::Drop(DropReason::TtlExpired), 1, 1);
            }
            ip.ttl -= 1;
        }
        Flow::new(self.apply("ipv4_forward", hit.action, ingress), 1, 1)
    }
}
