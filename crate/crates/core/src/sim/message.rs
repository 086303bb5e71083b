//! The twelve intra-CU handover messages and their frame encodings.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::control::RrcRecord;
use crate::wire::{
    EthernetHeader, MacAddr, Packet, TagHeader, ETHERTYPE_CONTROL, ETHERTYPE_FORWARD,
};

/// Message numbers double as the control-tag value on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum HoMessage {
    MeasurementReport = 1,
    UplinkRrcTransferMr = 2,
    UeContextSetupRequest = 3,
    UeContextSetupResponse = 4,
    UeContextModificationRequest = 5,
    RrcConnectionReconfiguration = 6,
    RrcReconfigurationComplete = 7,
    UplinkRrcTransferComplete = 8,
    DownlinkPathSwitch = 9,
    UplinkDataForward = 10,
    UeContextReleaseCommand = 11,
    UeContextReleaseComplete = 12,
}

impl HoMessage {
    pub const ALL: [HoMessage; 12] = [
        HoMessage::MeasurementReport,
        HoMessage::UplinkRrcTransferMr,
        HoMessage::UeContextSetupRequest,
        HoMessage::UeContextSetupResponse,
        HoMessage::UeContextModificationRequest,
        HoMessage::RrcConnectionReconfiguration,
        HoMessage::RrcReconfigurationComplete,
        HoMessage::UplinkRrcTransferComplete,
        HoMessage::DownlinkPathSwitch,
        HoMessage::UplinkDataForward,
        HoMessage::UeContextReleaseCommand,
        HoMessage::UeContextReleaseComplete,
    ];

    pub fn number(self) -> u8 {
        self as u8
    }

    pub fn from_number(n: u8) -> Option<Self> {
        Self::ALL.get((n as usize).checked_sub(1)?).copied()
    }

    /// Sender and receiver roles.
    pub fn endpoints(self) -> (Role, Role) {
        use HoMessage::*;
        use Role::*;
        match self {
            MeasurementReport => (Ue, SourceDu),
            UplinkRrcTransferMr => (SourceDu, Cu),
            UeContextSetupRequest => (Cu, TargetDu),
            UeContextSetupResponse => (TargetDu, Cu),
            UeContextModificationRequest => (Cu, SourceDu),
            RrcConnectionReconfiguration => (SourceDu, Ue),
            RrcReconfigurationComplete => (Ue, TargetDu),
            UplinkRrcTransferComplete => (TargetDu, Cu),
            DownlinkPathSwitch => (Cu, TargetDu),
            UplinkDataForward => (TargetDu, Cu),
            UeContextReleaseCommand => (Cu, SourceDu),
            UeContextReleaseComplete => (SourceDu, Cu),
        }
    }
}

impl fmt::Display for HoMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Ue,
    SourceDu,
    TargetDu,
    Cu,
}

/// Payload of every HO message except 5 and 6, which carry an
/// [`RrcRecord`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct HoBody {
    pub hop: u16,
    /// 0 marks a pre-allocation, 1.. are measurement-report attempts.
    pub attempt: u8,
    pub src_du: u16,
    pub tgt_du: u16,
    pub bearer: u16,
}

pub const HO_BODY_LEN: usize = 9;

impl HoBody {
    pub fn encode(&self) -> Vec<u8> {
        let mut v = Vec::with_capacity(HO_BODY_LEN);
        v.extend_from_slice(&self.hop.to_be_bytes());
        v.push(self.attempt);
        v.extend_from_slice(&self.src_du.to_be_bytes());
        v.extend_from_slice(&self.tgt_du.to_be_bytes());
        v.extend_from_slice(&self.bearer.to_be_bytes());
        v
    }

    pub fn decode(b: &[u8]) -> Option<Self> {
        if b.len() < HO_BODY_LEN {
            return None;
        }
        Some(HoBody {
            hop: u16::from_be_bytes([b[0], b[1]]),
            attempt: b[2],
            src_du: u16::from_be_bytes([b[3], b[4]]),
            tgt_du: u16::from_be_bytes([b[5], b[6]]),
            bearer: u16::from_be_bytes([b[7], b[8]]),
        })
    }
}

pub fn control_frame(msg: HoMessage, ue: u16, src: MacAddr, dst: MacAddr, payload: Vec<u8>) -> Packet {
    Packet::new(EthernetHeader {
        dst,
        src,
        ether_type: ETHERTYPE_CONTROL,
    })
    .with_tag(TagHeader::Control {
        tag_value: msg.number(),
        ue_id: ue,
    })
    .with_payload(payload)
}

pub fn body_frame(msg: HoMessage, ue: u16, src: MacAddr, dst: MacAddr, body: HoBody) -> Packet {
    control_frame(msg, ue, src, dst, body.encode())
}

pub fn rrc_frame(msg: HoMessage, ue: u16, src: MacAddr, dst: MacAddr, rec: &RrcRecord) -> Packet {
    control_frame(msg, ue, src, dst, rec.encode())
}

/// Echo request or reply. The forward tag names the DU whose path the
/// ping uses.
pub fn ping_frame(src: MacAddr, dst: MacAddr, du: u16, payload_len: usize) -> Packet {
    Packet::new(EthernetHeader {
        dst,
        src,
        ether_type: ETHERTYPE_FORWARD,
    })
    .with_tag(TagHeader::Forward {
        dest_port: du as u8,
    })
    .with_payload(vec![0u8; payload_len])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbering() {
        for (i, m) in HoMessage::ALL.iter().enumerate() {
            assert_eq!(m.number() as usize, i + 1);
            assert_eq!(HoMessage::from_number(m.number()), Some(*m));
        }
        assert_eq!(HoMessage::from_number(0), None);
        assert_eq!(HoMessage::from_number(13), None);
    }

    #[test]
    fn body_round_trip() {
        let b = HoBody {
            hop: 3,
            attempt: 1,
            src_du: 2,
            tgt_du: 3,
            bearer: 77,
        };
        assert_eq!(HoBody::decode(&b.encode()), Some(b));
        assert_eq!(HoBody::decode(&[0; 4]), None);
    }
}
