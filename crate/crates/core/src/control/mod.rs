//! Controller-resident state: the mobility table (MT), controller cache (CC)
//! and RRC table (RRCT), plus the CU and DU controller operations that use
//! them.

use std::collections::BTreeMap;
use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::wire::{
    ctrl, inst, EthernetHeader, ExtHeader, MacAddr, Packet, TagHeader, UeContextHeader,
    ETHERTYPE_CONTROL, ETHERTYPE_INSTRUCTION,
};
use crate::SimTime;

/// HO message number of the RRC Connection Reconfiguration sent to the UE.
pub const MSG_RRC_RECONFIGURATION: u8 = 0x06;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ControlError {
    #[error("no mobility entry for ue {ue_id} at du {source_du_id}")]
    MobilityNotFound { ue_id: u16, source_du_id: u16 },
    #[error("no cached context for ue {0}")]
    ContextNotFound(u16),
    #[error("no stored RRC reconfiguration for ue {0}")]
    NoStoredRrc(u16),
    #[error("duplicate mobility entry for ue {ue_id} at du {source_du_id}")]
    DuplicateMobilityEntry { ue_id: u16, source_du_id: u16 },
    #[error("packet is not a controller message: {0}")]
    NotApplicable(String),
    #[error("malformed RRC record: {0} bytes")]
    BadRrcRecord(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MobilityTableEntry {
    pub ue_id: u16,
    pub source_du_id: u16,
    pub target_du_id: u16,
    pub time_interval_us: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControllerCacheEntry {
    pub ue_id: u16,
    pub ue_ambr: u32,
    pub ue_security_algorithm: u8,
    pub security_base_key: u64,
}

/// Stored RRC reconfiguration. Encoded as a 7-byte payload:
/// ue_id, target_du_id, bearer_info (u16 each), security_algorithm (u8).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RrcRecord {
    pub ue_id: u16,
    pub target_du_id: u16,
    pub bearer_info: u16,
    pub security_algorithm: u8,
}

pub const RRC_RECORD_LEN: usize = 7;

impl RrcRecord {
    pub fn encode(&self) -> Vec<u8> {
        let mut v = Vec::with_capacity(RRC_RECORD_LEN);
        v.extend_from_slice(&self.ue_id.to_be_bytes());
        v.extend_from_slice(&self.target_du_id.to_be_bytes());
        v.extend_from_slice(&self.bearer_info.to_be_bytes());
        v.push(self.security_algorithm);
        v
    }

    pub fn decode(b: &[u8]) -> Result<Self, ControlError> {
        if b.len() < RRC_RECORD_LEN {
            return Err(ControlError::BadRrcRecord(b.len()));
        }
        Ok(RrcRecord {
            ue_id: u16::from_be_bytes([b[0], b[1]]),
            target_du_id: u16::from_be_bytes([b[2], b[3]]),
            bearer_info: u16::from_be_bytes([b[4], b[5]]),
            security_algorithm: b[6],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PendingTrigger {
    pub ue_id: u16,
    pub source_du_id: u16,
    pub target_du_id: u16,
    pub fire_at: SimTime,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MobilityTable {
    rows: BTreeMap<(u16, u16), MobilityTableEntry>,
}

impl MobilityTable {
    pub fn insert(&mut self, e: MobilityTableEntry) -> Result<(), ControlError> {
        let key = (e.ue_id, e.source_du_id);
        if self.rows.contains_key(&key) {
            return Err(ControlError::DuplicateMobilityEntry {
                ue_id: e.ue_id,
                source_du_id: e.source_du_id,
            });
        }
        self.rows.insert(key, e);
        Ok(())
    }

    pub fn query(&self, ue_id: u16, source_du_id: u16) -> Result<MobilityTableEntry, ControlError> {
        self.rows
            .get(&(ue_id, source_du_id))
            .copied()
            .ok_or(ControlError::MobilityNotFound {
                ue_id,
                source_du_id,
            })
    }

    pub fn has_ue(&self, ue_id: u16) -> bool {
        self.rows.range((ue_id, 0)..=(ue_id, u16::MAX)).next().is_some()
    }

    pub fn iter(&self) -> impl Iterator<Item = &MobilityTableEntry> {
        self.rows.values()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

fn write_csv<W: io::Write, T: Serialize>(
    w: W,
    rows: impl Iterator<Item = T>,
) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// CU controller: MT, CC and the pending spoofed-request triggers.
#[derive(Debug, Clone, Default)]
pub struct CuController {
    pub mt: MobilityTable,
    cc: BTreeMap<u16, ControllerCacheEntry>,
    pending: BTreeMap<u16, PendingTrigger>,
}

impl CuController {
    pub fn new(mt: MobilityTable) -> Self {
        CuController {
            mt,
            ..Default::default()
        }
    }

    /// Data Setup: cache the context carried by a setup request.
    pub fn set_ue_context(&mut self, hdr: &UeContextHeader) {
        self.cc.insert(
            hdr.ue_id,
            ControllerCacheEntry {
                ue_id: hdr.ue_id,
                ue_ambr: hdr.ue_ambr,
                ue_security_algorithm: hdr.security_algorithm,
                security_base_key: hdr.security_base_key,
            },
        );
    }

    pub fn query_controller_cache(&self, ue_id: u16) -> Result<ControllerCacheEntry, ControlError> {
        self.cc
            .get(&ue_id)
            .copied()
            .ok_or(ControlError::ContextNotFound(ue_id))
    }

    pub fn query_mobility_table(
        &self,
        ue_id: u16,
        src_du: u16,
    ) -> Result<MobilityTableEntry, ControlError> {
        self.mt.query(ue_id, src_du)
    }

    /// Handles a setup request (instruction tag 0x03 with UE context) punted
    /// by the CU switch. Caches the context when `store` is set and returns
    /// the request re-tagged 0x01 for the target DU.
    pub fn data_setup(&mut self, pkt: &Packet, store: bool) -> Result<Packet, ControlError> {
        let ctx = match (pkt.tag, pkt.ue_context()) {
            (Some(TagHeader::Instruction { tag_value, .. }), Some(ctx))
                if tag_value == inst::SET_UE_CONTEXT =>
            {
                *ctx
            }
            _ => {
                return Err(ControlError::NotApplicable(
                    "expected a UE context setup request".into(),
                ))
            }
        };
        if store {
            self.set_ue_context(&ctx);
        }
        let mut out = pkt.clone();
        out.tag = Some(TagHeader::Instruction {
            tag_value: inst::UE_CONTEXT,
            ue_id: ctx.ue_id,
        });
        Ok(out)
    }

    /// Arms the delayed trigger for the next HO of `ue_id` away from
    /// `src_du`. Replaces any pending trigger for the same UE.
    pub fn trigger_smartho(
        &mut self,
        ue_id: u16,
        src_du: u16,
        now: SimTime,
    ) -> Result<PendingTrigger, ControlError> {
        let row = self.mt.query(ue_id, src_du)?;
        self.query_controller_cache(ue_id)?;
        let t = PendingTrigger {
            ue_id,
            source_du_id: src_du,
            target_du_id: row.target_du_id,
            fire_at: now + SimTime::from_micros(row.time_interval_us),
        };
        if self.pending.insert(ue_id, t).is_some() {
            log::debug!("ue {ue_id}: replaced pending trigger");
        }
        Ok(t)
    }

    pub fn pending(&self, ue_id: u16) -> Option<&PendingTrigger> {
        self.pending.get(&ue_id)
    }

    pub fn pending_count(&self) -> usize {
        self.pending.len()
    }

    pub fn cancel(&mut self, ue_id: u16) -> Option<PendingTrigger> {
        self.pending.remove(&ue_id)
    }

    /// Fires the pending trigger for `ue_id` if due, returning the spoofed
    /// setup request (instruction tag 0x02 plus cached context) addressed
    /// to the target DU. A trigger whose time has not come is left in place.
    pub fn fire(&mut self, ue_id: u16, now: SimTime, cu_mac: MacAddr) -> Option<(PendingTrigger, Packet)> {
        let t = *self.pending.get(&ue_id)?;
        if t.fire_at > now {
            return None;
        }
        self.pending.remove(&ue_id);
        let cc = self.cc.get(&ue_id)?;
        Some((t, spoofed_request(&t, cc, cu_mac)))
    }

    pub fn dump_mt<W: io::Write>(&self, w: W) -> Result<(), csv::Error> {
        write_csv(w, self.mt.iter())
    }

    pub fn dump_cc<W: io::Write>(&self, w: W) -> Result<(), csv::Error> {
        write_csv(w, self.cc.values())
    }
}

pub fn spoofed_request(t: &PendingTrigger, cc: &ControllerCacheEntry, cu_mac: MacAddr) -> Packet {
    Packet::new(EthernetHeader {
        dst: MacAddr::for_node(t.target_du_id),
        src: cu_mac,
        ether_type: ETHERTYPE_INSTRUCTION,
    })
    .with_tag(TagHeader::Instruction {
        tag_value: inst::MOBILITY,
        ue_id: t.ue_id,
    })
    .with_ext(ExtHeader::UeContext(UeContextHeader {
        ue_id: t.ue_id,
        src_gnb_addr: t.source_du_id,
        ue_ambr: cc.ue_ambr,
        security_algorithm: cc.ue_security_algorithm,
        security_base_key: cc.security_base_key,
    }))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DuReply {
    StoreAck { ue_id: u16 },
    /// Stored RRC reconfiguration to send toward the UE.
    ReplayPacket(Packet),
}

/// DU controller: the RRC table.
#[derive(Debug, Clone, Default)]
pub struct DuController {
    pub du_id: u16,
    rrct: BTreeMap<u16, RrcRecord>,
}

impl DuController {
    pub fn new(du_id: u16) -> Self {
        DuController {
            du_id,
            rrct: BTreeMap::new(),
        }
    }

    pub fn stored(&self, ue_id: u16) -> Option<&RrcRecord> {
        self.rrct.get(&ue_id)
    }

    pub fn invalidate(&mut self, ue_id: u16) -> Option<RrcRecord> {
        self.rrct.remove(&ue_id)
    }

    /// Handles a packet punted by the DU switch: store (instruction tag
    /// 0x0f) or replay on a measurement report (control tag 0x01).
    pub fn du_data_updt(&mut self, pkt: &Packet) -> Result<DuReply, ControlError> {
        match pkt.tag {
            Some(TagHeader::Instruction { tag_value, .. }) if tag_value == inst::STORE_RRC => {
                let rec = RrcRecord::decode(&pkt.payload)?;
                self.rrct.insert(rec.ue_id, rec);
                Ok(DuReply::StoreAck { ue_id: rec.ue_id })
            }
            Some(TagHeader::Control { tag_value, ue_id }) if tag_value == ctrl::MR_UPLINK_RRC => {
                let rec = self.rrct.get(&ue_id).ok_or(ControlError::NoStoredRrc(ue_id))?;
                Ok(DuReply::ReplayPacket(
                    Packet::new(EthernetHeader {
                        dst: pkt.ethernet.src,
                        src: MacAddr::for_node(self.du_id),
                        ether_type: ETHERTYPE_CONTROL,
                    })
                    .with_tag(TagHeader::Control {
                        tag_value: MSG_RRC_RECONFIGURATION,
                        ue_id,
                    })
                    .with_payload(rec.encode()),
                ))
            }
            _ => Err(ControlError::NotApplicable(format!("{:?}", pkt.tag))),
        }
    }

    pub fn dump_rrct<W: io::Write>(&self, w: W) -> Result<(), csv::Error> {
        write_csv(w, self.rrct.values())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{self, CostModel, ProgramKind, Verdict};
    use crate::wire::{self, PortBits};

    fn ctx(ue: u16, ambr: u32) -> UeContextHeader {
        UeContextHeader {
            ue_id: ue,
            src_gnb_addr: 1,
            ue_ambr: ambr,
            security_algorithm: 3,
            security_base_key: 0x1234,
        }
    }

    fn chain_mt(interval: u64) -> MobilityTable {
        let mut mt = MobilityTable::default();
        for (s, t) in [(1, 2), (2, 3)] {
            mt.insert(MobilityTableEntry {
                ue_id: 1,
                source_du_id: s,
                target_du_id: t,
                time_interval_us: interval,
            })
            .unwrap();
        }
        mt
    }

    #[test]
    fn context_upsert() {
        let mut cu = CuController::default();
        cu.set_ue_context(&ctx(5, 100));
        cu.set_ue_context(&ctx(5, 200));
        let e = cu.query_controller_cache(5).unwrap();
        assert_eq!(e.ue_ambr, 200);
        assert_eq!(e.security_base_key, 0x1234);
    }

    #[test]
    fn mobility_lookup() {
        let cu = CuController::new(chain_mt(0));
        assert_eq!(cu.query_mobility_table(1, 1).unwrap().target_du_id, 2);
        assert!(cu.query_mobility_table(1, 3).is_err());
        assert!(cu.query_mobility_table(2, 2).is_err());
    }

    #[test]
    fn zero_interval_fires_immediately() {
        let mut cu = CuController::new(chain_mt(0));
        cu.set_ue_context(&ctx(1, 10));
        let now = SimTime::from_micros(77);
        let t = cu.trigger_smartho(1, 1, now).unwrap();
        assert_eq!(t.fire_at, now);
        let (_, pkt) = cu.fire(1, now, MacAddr::for_node(100)).unwrap();
        assert_eq!(pkt.ethernet.dst, MacAddr::for_node(2));
        assert_eq!(cu.pending_count(), 0);
    }

    #[test]
    fn trigger_waits_and_replaces() {
        let mut cu = CuController::new(chain_mt(1000));
        cu.set_ue_context(&ctx(1, 10));
        cu.trigger_smartho(1, 1, SimTime::from_micros(0)).unwrap();
        cu.trigger_smartho(1, 2, SimTime::from_micros(10)).unwrap();
        assert_eq!(cu.pending_count(), 1);
        assert!(cu.fire(1, SimTime::from_micros(500), MacAddr::for_node(100)).is_none());
        let (t, _) = cu.fire(1, SimTime::from_micros(1010), MacAddr::for_node(100)).unwrap();
        assert_eq!(t.target_du_id, 3);
    }

    #[test]
    fn trigger_needs_both_tables() {
        let mut cu = CuController::new(chain_mt(0));
        assert_eq!(
            cu.trigger_smartho(1, 1, SimTime::ZERO),
            Err(ControlError::ContextNotFound(1))
        );
        cu.set_ue_context(&ctx(1, 10));
        assert!(matches!(
            cu.trigger_smartho(1, 3, SimTime::ZERO),
            Err(ControlError::MobilityNotFound { .. })
        ));
    }

    #[test]
    fn spoofed_request_reaches_du_controller() {
        let mut cu = CuController::new(chain_mt(0));
        cu.set_ue_context(&ctx(1, 10));
        cu.trigger_smartho(1, 1, SimTime::ZERO).unwrap();
        let (_, pkt) = cu.fire(1, SimTime::ZERO, MacAddr::for_node(100)).unwrap();
        let bytes = wire::serialize(&pkt).unwrap();
        let du = pipeline::builtin(ProgramKind::Du);
        let out = du
            .process(&bytes, PortBits::physical(0).unwrap(), &CostModel::default())
            .unwrap();
        assert!(matches!(out.verdict, Verdict::ToController(_)));
        let parsed = out.packet.unwrap().packet;
        assert_eq!(parsed.ue_context().unwrap().ue_ambr, 10);
        assert_eq!((parsed.ethernet, parsed.tag, parsed.ext), (pkt.ethernet, pkt.tag, pkt.ext));
    }

    #[test]
    fn data_setup_retags() {
        let mut cu = CuController::default();
        let req = Packet::new(EthernetHeader {
            dst: MacAddr::for_node(2),
            src: MacAddr::for_node(100),
            ether_type: ETHERTYPE_INSTRUCTION,
        })
        .with_tag(TagHeader::Instruction {
            tag_value: inst::SET_UE_CONTEXT,
            ue_id: 4,
        })
        .with_ext(ExtHeader::UeContext(ctx(4, 9)));
        let out = cu.data_setup(&req, false).unwrap();
        assert_eq!(out.tag.unwrap().tag_value(), inst::UE_CONTEXT);
        assert!(cu.query_controller_cache(4).is_err());
        cu.data_setup(&req, true).unwrap();
        assert_eq!(cu.query_controller_cache(4).unwrap().ue_ambr, 9);
    }

    fn store(ue: u16, bearer: u16) -> Packet {
        Packet::new(EthernetHeader {
            dst: MacAddr::for_node(1),
            src: MacAddr::for_node(100),
            ether_type: ETHERTYPE_INSTRUCTION,
        })
        .with_tag(TagHeader::Instruction {
            tag_value: inst::STORE_RRC,
            ue_id: ue,
        })
        .with_payload(
            RrcRecord {
                ue_id: ue,
                target_du_id: 2,
                bearer_info: bearer,
                security_algorithm: 1,
            }
            .encode(),
        )
    }

    fn mr(ue: u16) -> Packet {
        Packet::new(EthernetHeader {
            dst: MacAddr::for_node(1),
            src: MacAddr::for_node(200),
            ether_type: ETHERTYPE_CONTROL,
        })
        .with_tag(TagHeader::Control {
            tag_value: ctrl::MR_UPLINK_RRC,
            ue_id: ue,
        })
    }

    #[test]
    fn store_then_replay() {
        let mut du = DuController::new(1);
        assert_eq!(du.du_data_updt(&store(3, 9)).unwrap(), DuReply::StoreAck { ue_id: 3 });
        du.du_data_updt(&store(3, 11)).unwrap();
        match du.du_data_updt(&mr(3)).unwrap() {
            DuReply::ReplayPacket(p) => {
                assert_eq!(p.ethernet.dst, MacAddr::for_node(200));
                assert_eq!(RrcRecord::decode(&p.payload).unwrap().bearer_info, 11);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(du.du_data_updt(&mr(4)), Err(ControlError::NoStoredRrc(4)));
    }

    #[test]
    fn tables_dump_as_csv() {
        let mut du = DuController::new(1);
        du.du_data_updt(&store(3, 9)).unwrap();
        let mut buf = Vec::new();
        du.dump_rrct(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("ue_id,target_du_id,bearer_info,security_algorithm"));
        assert!(text.contains("3,2,9,1"));
    }
}
