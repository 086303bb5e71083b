//! Programmable switch model: a parser FSM, exact-match tables and the
//! control flows used by the DU and CU switches, plus the two forwarding
//! programs used for the per-hop comparison.
//!
//! Programs are data. The shipped ones live in `configs/*_program.json` and
//! are compiled into the binary; the table entries that depend on topology
//! are installed at run time through [`SwitchProgram::add_entry`].

mod parser;
mod program;
mod table;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::wire::{self, WireError};

pub use parser::{
    HeaderKind, Ipv4Header, ParseResult, ParsedPacket, ParserConfig, ParserProgram, ParserState,
    ParserStateConfig, RejectReason, SelectField, Transition, ACCEPT, IPV4_LEN, REJECT,
};
pub use program::{DropReason, Processed, ProgramConfig, ProgramKind, SwitchProgram, Verdict};
pub use table::{
    smartho_key, Action, EntryConfig, KeyField, KeyValue, Lookup, MatchActionTable, TableConfig,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PipelineError {
    #[error("malformed program: {0}")]
    MalformedProgram(String),
    #[error("table '{table}' already has key {key:#x}")]
    DuplicateKey { table: String, key: u64 },
    #[error("unknown action '{0}'")]
    UnknownAction(String),
    #[error("bad action parameters: {0}")]
    BadActionParams(String),
    #[error("program config: {0}")]
    Config(String),
    #[error(transparent)]
    Wire(#[from] WireError),
}

/// Per-pass processing cost in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostModel {
    pub per_byte_us: f64,
    pub per_lookup_us: f64,
    pub per_action_us: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            per_byte_us: 0.05,
            per_lookup_us: 0.5,
            per_action_us: 0.2,
        }
    }
}

impl CostModel {
    pub fn cost(&self, header_bytes: usize, lookups: u32, actions: u32) -> f64 {
        header_bytes as f64 * self.per_byte_us
            + lookups as f64 * self.per_lookup_us
            + actions as f64 * self.per_action_us
    }
}

/// Re-serialises a parsed packet: wire headers, then the IP header if one
/// was extracted, then the payload.
pub fn deparse(pkt: &ParsedPacket) -> Result<Vec<u8>, PipelineError> {
    let Some(ip) = pkt.ipv4 else {
        return Ok(wire::serialize(&pkt.packet)?);
    };
    let p = &pkt.packet;
    p.check_stack()?;
    if p.tag.is_some() || p.ext.is_some() {
        return Err(WireError::InconsistentHeaderStack(
            "IP header cannot follow a tag or extension header".into(),
        )
        .into());
    }
    let mut out = Vec::with_capacity(pkt.header_len() + p.payload.len());
    wire::put_ethernet(&mut out, &p.ethernet);
    ip.encode(&mut out);
    out.extend_from_slice(&p.payload);
    Ok(out)
}

const CU_PROGRAM: &str = include_str!("../../../../configs/cu_program.json");
const DU_PROGRAM: &str = include_str!("../../../../configs/du_program.json");
const TAG_FORWARD_PROGRAM: &str = include_str!("../../../../configs/tag_forward_program.json");
const IP_BASELINE_PROGRAM: &str = include_str!("../../../../configs/ip_baseline_program.json");

/// Loads one of the shipped programs.
pub fn builtin(kind: ProgramKind) -> SwitchProgram {
    let text = match kind {
        ProgramKind::Cu => CU_PROGRAM,
        ProgramKind::Du => DU_PROGRAM,
        ProgramKind::TagForward => TAG_FORWARD_PROGRAM,
        ProgramKind::IpBaseline => IP_BASELINE_PROGRAM,
    };
    SwitchProgram::from_json(text).expect("shipped program is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::{
        ctrl, EthernetHeader, ExtHeader, MacAddr, Packet, PortBits, SmarthoHeader, TagHeader,
        UeContextHeader, ETHERTYPE_CONTROL, ETHERTYPE_FORWARD, ETHERTYPE_INSTRUCTION,
        ETHERTYPE_IPV4, ETHERTYPE_SMARTHO,
    };

    fn eth(ether_type: u16) -> EthernetHeader {
        EthernetHeader {
            dst: MacAddr::for_node(2),
            src: MacAddr::for_node(1),
            ether_type,
        }
    }

    fn port(b: u8) -> PortBits {
        PortBits::from_bits(b).unwrap()
    }

    fn ctx(ue: u16, src: u16) -> UeContextHeader {
        UeContextHeader {
            ue_id: ue,
            src_gnb_addr: src,
            ue_ambr: 1000,
            security_algorithm: 2,
            security_base_key: 0xdead_beef,
        }
    }

    #[test]
    fn builtins_load() {
        for k in [
            ProgramKind::Cu,
            ProgramKind::Du,
            ProgramKind::TagForward,
            ProgramKind::IpBaseline,
        ] {
            assert_eq!(builtin(k).kind(), k);
        }
    }

    #[test]
    fn cu_tag_and_context_goes_to_controller() {
        let prog = builtin(ProgramKind::Cu);
        let pkt = Packet::new(eth(ETHERTYPE_INSTRUCTION))
            .with_tag(TagHeader::Instruction {
                tag_value: 0x01,
                ue_id: 7,
            })
            .with_ext(ExtHeader::UeContext(ctx(7, 1)));
        let bytes = wire::serialize(&pkt).unwrap();
        let out = prog.process(&bytes, port(1), &CostModel::default()).unwrap();
        assert_eq!(out.verdict, Verdict::ToController(port(2)));
        assert_eq!(out.bytes.as_deref(), Some(&bytes[..]));
    }

    #[test]
    fn cu_tag_only_uses_source_table() {
        let mut prog = builtin(ProgramKind::Cu);
        prog.add_entry("source_gnb_controller_forward", 1, "cu_controller_forward", &[])
            .unwrap();
        let pkt = Packet::new(eth(ETHERTYPE_CONTROL)).with_tag(TagHeader::Control {
            tag_value: ctrl::LAST,
            ue_id: 3,
        });
        let bytes = wire::serialize(&pkt).unwrap();
        let out = prog.process(&bytes, port(4), &CostModel::default()).unwrap();
        assert_eq!(out.verdict, Verdict::ToController(port(8)));
        assert_eq!(out.lookups, 1);
    }

    #[test]
    fn cu_untagged_uses_etherforward() {
        let mut prog = builtin(ProgramKind::Cu);
        prog.add_entry("etherforward", MacAddr::for_node(2).to_u64(), "ether_port_forward", &[16])
            .unwrap();
        let pkt = Packet::new(eth(ETHERTYPE_SMARTHO)).with_ext(ExtHeader::Smartho(SmarthoHeader {
            ctrl_info: 1,
            frwd_tag_prt: 4,
        }));
        let bytes = wire::serialize(&pkt).unwrap();
        let out = prog.process(&bytes, port(1), &CostModel::default()).unwrap();
        assert_eq!(out.verdict, Verdict::Forward(port(16)));
        // miss drops
        let mut other = pkt.clone();
        other.ethernet.dst = MacAddr::for_node(9);
        let out = prog
            .process(&wire::serialize(&other).unwrap(), port(1), &CostModel::default())
            .unwrap();
        assert!(matches!(out.verdict, Verdict::Drop(DropReason::Table(_))));
    }

    #[test]
    fn du_smartho_operations() {
        let prog = builtin(ProgramKind::Du);
        let pkt = Packet::new(eth(ETHERTYPE_SMARTHO)).with_ext(ExtHeader::Smartho(SmarthoHeader {
            ctrl_info: 1,
            frwd_tag_prt: 4,
        }));
        let bytes = wire::serialize(&pkt).unwrap();
        let out = prog.process(&bytes, port(4), &CostModel::default()).unwrap();
        assert_eq!(out.verdict, Verdict::Forward(port(4)));
        let s = *out.packet.unwrap().packet.smartho().unwrap();
        assert_eq!(s.ctrl_info, 2);
        assert_eq!(s.frwd_tag_prt, 4);
    }

    #[test]
    fn du_smartho_invalid_port_drops() {
        let prog = builtin(ProgramKind::Du);
        let pkt = Packet::new(eth(ETHERTYPE_SMARTHO)).with_ext(ExtHeader::Smartho(SmarthoHeader {
            ctrl_info: 1,
            frwd_tag_prt: 3,
        }));
        let out = prog
            .process(&wire::serialize(&pkt).unwrap(), port(4), &CostModel::default())
            .unwrap();
        assert_eq!(out.verdict, Verdict::Drop(DropReason::InvalidPort(3)));
    }

    #[test]
    fn du_spoofed_request_goes_to_controller() {
        let prog = builtin(ProgramKind::Du);
        let pkt = Packet::new(eth(ETHERTYPE_INSTRUCTION))
            .with_tag(TagHeader::Instruction {
                tag_value: 0x02,
                ue_id: 5,
            })
            .with_ext(ExtHeader::UeContext(ctx(5, 1)));
        let out = prog
            .process(&wire::serialize(&pkt).unwrap(), port(1), &CostModel::default())
            .unwrap();
        assert_eq!(out.verdict, Verdict::ToController(port(2)));
    }

    #[test]
    fn du_store_and_mr_go_to_controller() {
        let prog = builtin(ProgramKind::Du);
        for (et, tag) in [
            (
                ETHERTYPE_INSTRUCTION,
                TagHeader::Instruction {
                    tag_value: 0x0f,
                    ue_id: 1,
                },
            ),
            (
                ETHERTYPE_CONTROL,
                TagHeader::Control {
                    tag_value: 0x01,
                    ue_id: 1,
                },
            ),
        ] {
            let pkt = Packet::new(eth(et)).with_tag(tag).with_payload(vec![0; 7]);
            let out = prog
                .process(&wire::serialize(&pkt).unwrap(), port(16), &CostModel::default())
                .unwrap();
            assert_eq!(out.verdict, Verdict::ToController(port(32)));
        }
    }

    #[test]
    fn tag_forward_and_ip_costs() {
        let cost = CostModel::default();
        let mut tf = builtin(ProgramKind::TagForward);
        tf.add_entry("tag_forward", 16, "tag_forward", &[16]).unwrap();
        let pkt = Packet::new(eth(ETHERTYPE_FORWARD))
            .with_tag(TagHeader::Forward { dest_port: 16 })
            .with_payload(vec![0; 56]);
        let out = tf.process(&wire::serialize(&pkt).unwrap(), port(1), &cost).unwrap();
        assert_eq!(out.verdict, Verdict::Forward(port(16)));
        assert_eq!(out.header_bytes, 15);

        let mut ip = builtin(ProgramKind::IpBaseline);
        ip.add_entry("ipv4_forward", 0x0a00_0002, "ip_forward", &[16]).unwrap();
        let mut frame = Vec::new();
        wire::put_ethernet(&mut frame, &eth(ETHERTYPE_IPV4));
        Ipv4Header::new(0x0a00_0001, 0x0a00_0002, 56).encode(&mut frame);
        frame.extend_from_slice(&[0; 56]);
        let out = ip.process(&frame, port(1), &cost).unwrap();
        assert_eq!(out.verdict, Verdict::Forward(port(16)));
        assert_eq!(out.header_bytes, 34);
        assert!(out.cost_us > tf.process(&wire::serialize(&pkt).unwrap(), port(1), &cost).unwrap().cost_us);
        let fwd = out.packet.unwrap();
        assert_eq!(fwd.ipv4.unwrap().ttl, 63);
    }

    #[test]
    fn truncated_context_rejects() {
        let prog = builtin(ProgramKind::Cu);
        let pkt = Packet::new(eth(ETHERTYPE_INSTRUCTION))
            .with_tag(TagHeader::Instruction {
                tag_value: 0x01,
                ue_id: 7,
            })
            .with_ext(ExtHeader::UeContext(ctx(7, 1)));
        let bytes = wire::serialize(&pkt).unwrap();
        let out = prog
            .process(&bytes[..bytes.len() - 3], port(1), &CostModel::default())
            .unwrap();
        assert!(matches!(
            out.verdict,
            Verdict::Drop(DropReason::Parser(RejectReason::Truncated { .. }))
        ));
    }
}
