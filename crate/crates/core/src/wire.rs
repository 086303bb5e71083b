//! Header formats and their byte layouts.
//!
//! Every multi-byte field is big-endian. A frame is laid out as
//!
//! ```text
//! | Ethernet (14) | tag (0, 1 or 3) | UE context (16) or SMARTHO (8) | payload |
//! ```
//!
//! The tag variant is chosen by the EtherType alone: `0x0101` carries an
//! instruction tag, `0x0102` a control tag, `0x0103` the testbed SMARTHO
//! header (no tag), and the rest of the experimental block `0x0104..=0x01FF`
//! a one-byte forwarding tag. Anything outside the experimental block is an
//! untagged frame.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::SimTime;

pub const ETHERNET_LEN: usize = 14;
pub const FORWARD_TAG_LEN: usize = 1;
pub const LABELLED_TAG_LEN: usize = 3;
pub const UE_CONTEXT_LEN: usize = 16;
pub const SMARTHO_LEN: usize = 8;

pub const ETHERTYPE_INSTRUCTION: u16 = 0x0101;
pub const ETHERTYPE_CONTROL: u16 = 0x0102;
pub const ETHERTYPE_SMARTHO: u16 = 0x0103;
/// EtherType used when building forwarding-tagged frames.
pub const ETHERTYPE_FORWARD: u16 = 0x0104;
pub const ETHERTYPE_IPV4: u16 = 0x0800;
pub const EXPERIMENTAL_ETHERTYPES: std::ops::RangeInclusive<u16> = 0x0101..=0x01FF;

/// Instruction tag values.
pub mod inst {
    pub const UE_CONTEXT: u8 = 0x01;
    pub const MOBILITY: u8 = 0x02;
    pub const SET_UE_CONTEXT: u8 = 0x03;
    pub const STORE_RRC: u8 = 0x0f;

    pub const ALL: [u8; 4] = [UE_CONTEXT, MOBILITY, SET_UE_CONTEXT, STORE_RRC];
}

/// Control tag values, one per handover control message.
pub mod ctrl {
    pub const FIRST: u8 = 0x01;
    pub const LAST: u8 = 0x0c;
    pub const MR_UPLINK_RRC: u8 = 0x01;
    pub const UE_CONTEXT_RELEASE_COMPLETE: u8 = 0x0c;
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("truncated frame: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("inconsistent header stack: {0}")]
    InconsistentHeaderStack(String),
    #[error("invalid port bits {0:#010b}")]
    InvalidPort(u8),
    #[error("port index {0} out of range 0..=3")]
    PortIndex(u8),
}

/// 48-bit MAC address.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MacAddr(pub [u8; 6]);

impl MacAddr {
    pub fn from_u64(v: u64) -> Self {
        let b = v.to_be_bytes();
        MacAddr([b[2], b[3], b[4], b[5], b[6], b[7]])
    }

    pub fn to_u64(self) -> u64 {
        let mut b = [0u8; 8];
        b[2..].copy_from_slice(&self.0);
        u64::from_be_bytes(b)
    }

    /// Locally administered unicast address for a simulated node.
    pub fn for_node(id: u16) -> Self {
        MacAddr::from_u64(0x0200_0000_0000 | id as u64)
    }

    /// Node identifier embedded by [`MacAddr::for_node`].
    pub fn node_id(self) -> u16 {
        (self.to_u64() & 0xffff) as u16
    }
}

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            b[0], b[1], b[2], b[3], b[4], b[5]
        )
    }
}

/// One-hot port field of the SUME metadata. Physical interfaces nf0..nf3
/// sit on the even bits, the matching host-delivery interfaces on the odd
/// bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct PortBits(u8);

impl PortBits {
    pub fn physical(index: u8) -> Result<Self, WireError> {
        if index > 3 {
            return Err(WireError::PortIndex(index));
        }
        Ok(PortBits(1 << (2 * index)))
    }

    pub fn host(index: u8) -> Result<Self, WireError> {
        if index > 3 {
            return Err(WireError::PortIndex(index));
        }
        Ok(PortBits(1 << (2 * index + 1)))
    }

    pub fn from_bits(bits: u8) -> Result<Self, WireError> {
        if bits.count_ones() == 1 {
            Ok(PortBits(bits))
        } else {
            Err(WireError::InvalidPort(bits))
        }
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    /// Interface index 0..=3 regardless of physical/host side.
    pub fn index(self) -> u8 {
        (self.0.trailing_zeros() / 2) as u8
    }

    pub fn is_physical(self) -> bool {
        self.0.trailing_zeros().is_multiple_of(2)
    }

    pub fn is_host(self) -> bool {
        !self.is_physical()
    }

    /// Host-delivery bit of the same interface.
    pub fn host_side(self) -> PortBits {
        PortBits(1 << (2 * self.index() + 1))
    }
}

impl TryFrom<u8> for PortBits {
    type Error = WireError;
    fn try_from(v: u8) -> Result<Self, WireError> {
        PortBits::from_bits(v)
    }
}

impl From<PortBits> for u8 {
    fn from(p: PortBits) -> u8 {
        p.0
    }
}

impl fmt::Display for PortBits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let side = if self.is_physical() { "nf" } else { "host" };
        write!(f, "{}{}({})", side, self.index(), self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EthernetHeader {
    pub dst: MacAddr,
    pub src: MacAddr,
    pub ether_type: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TagHeader {
    Forward { dest_port: u8 },
    Control { tag_value: u8, ue_id: u16 },
    Instruction { tag_value: u8, ue_id: u16 },
}

impl TagHeader {
    pub fn encoded_len(&self) -> usize {
        match self {
            TagHeader::Forward { .. } => FORWARD_TAG_LEN,
            _ => LABELLED_TAG_LEN,
        }
    }

    pub fn tag_value(&self) -> u8 {
        match *self {
            TagHeader::Forward { dest_port } => dest_port,
            TagHeader::Control { tag_value, .. } | TagHeader::Instruction { tag_value, .. } => {
                tag_value
            }
        }
    }

    pub fn ue_id(&self) -> Option<u16> {
        match *self {
            TagHeader::Forward { .. } => None,
            TagHeader::Control { ue_id, .. } | TagHeader::Instruction { ue_id, .. } => Some(ue_id),
        }
    }

    /// Whether the tag value lies in the documented set for its variant.
    pub fn has_known_value(&self) -> bool {
        match *self {
            TagHeader::Forward { .. } => true,
            TagHeader::Control { tag_value, .. } => (ctrl::FIRST..=ctrl::LAST).contains(&tag_value),
            TagHeader::Instruction { tag_value, .. } => inst::ALL.contains(&tag_value),
        }
    }

    fn agrees_with(&self, ether_type: u16) -> bool {
        match self {
            TagHeader::Instruction { .. } => ether_type == ETHERTYPE_INSTRUCTION,
            TagHeader::Control { .. } => ether_type == ETHERTYPE_CONTROL,
            TagHeader::Forward { .. } => {
                EXPERIMENTAL_ETHERTYPES.contains(&ether_type)
                    && ether_type != ETHERTYPE_INSTRUCTION
                    && ether_type != ETHERTYPE_CONTROL
                    && ether_type != ETHERTYPE_SMARTHO
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct UeContextHeader {
    pub ue_id: u16,
    /// Source DU identifier.
    pub src_gnb_addr: u16,
    /// Aggregate maximum bit rate, bits/s.
    pub ue_ambr: u32,
    pub security_algorithm: u8,
    /// Opaque key material. Only the low 56 bits fit the 16-byte encoding.
    pub security_base_key: u64,
}

pub const SECURITY_KEY_MASK: u64 = (1 << 56) - 1;

/// Header used by the hardware prototype's traffic generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SmarthoHeader {
    pub ctrl_info: u32,
    pub frwd_tag_prt: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExtHeader {
    UeContext(UeContextHeader),
    Smartho(SmarthoHeader),
}

impl ExtHeader {
    pub fn encoded_len(&self) -> usize {
        match self {
            ExtHeader::UeContext(_) => UE_CONTEXT_LEN,
            ExtHeader::Smartho(_) => SMARTHO_LEN,
        }
    }
}

/// Per-packet metadata. Never serialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacketMeta {
    pub ingress_port: PortBits,
    pub egress_port: Option<PortBits>,
    pub created_at: SimTime,
}

impl Default for PacketMeta {
    fn default() -> Self {
        PacketMeta {
            ingress_port: PortBits(1),
            egress_port: None,
            created_at: SimTime::ZERO,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub ethernet: EthernetHeader,
    pub tag: Option<TagHeader>,
    pub ext: Option<ExtHeader>,
    pub payload: Vec<u8>,
    pub meta: PacketMeta,
}

impl Packet {
    pub fn new(ethernet: EthernetHeader) -> Self {
        Packet {
            ethernet,
            tag: None,
            ext: None,
            payload: Vec::new(),
            meta: PacketMeta::default(),
        }
    }

    pub fn with_tag(mut self, tag: TagHeader) -> Self {
        self.tag = Some(tag);
        self
    }

    pub fn with_ext(mut self, ext: ExtHeader) -> Self {
        self.ext = Some(ext);
        self
    }

    pub fn with_payload(mut self, payload: impl Into<Vec<u8>>) -> Self {
        self.payload = payload.into();
        self
    }

    pub fn ue_context(&self) -> Option<&UeContextHeader> {
        match &self.ext {
            Some(ExtHeader::UeContext(c)) => Some(c),
            _ => None,
        }
    }

    pub fn smartho(&self) -> Option<&SmarthoHeader> {
        match &self.ext {
            Some(ExtHeader::Smartho(s)) => Some(s),
            _ => None,
        }
    }

    pub fn header_len(&self) -> usize {
        ETHERNET_LEN
            + self.tag.map_or(0, |t| t.encoded_len())
            + self.ext.map_or(0, |e| e.encoded_len())
    }

    pub fn wire_len(&self) -> usize {
        self.header_len() + self.payload.len()
    }

    /// Checks the header stack rules that serialization depends on.
    pub fn check_stack(&self) -> Result<(), WireError> {
        let et = self.ethernet.ether_type;
        if let Some(tag) = &self.tag {
            if !tag.agrees_with(et) {
                return Err(WireError::InconsistentHeaderStack(format!(
                    "{tag:?} under ether_type {et:#06x}"
                )));
            }
        }
        match (&self.ext, &self.tag) {
            (None, _) => Ok(()),
            (Some(ExtHeader::UeContext(_)), Some(TagHeader::Instruction { .. })) => Ok(()),
            (Some(ExtHeader::UeContext(_)), other) => Err(WireError::InconsistentHeaderStack(
                format!("UE context behind {other:?}"),
            )),
            (Some(ExtHeader::Smartho(_)), None) if et == ETHERTYPE_SMARTHO => Ok(()),
            (Some(ExtHeader::Smartho(_)), _) => Err(WireError::InconsistentHeaderStack(format!(
                "SMARTHO header needs ether_type {ETHERTYPE_SMARTHO:#06x} and no tag"
            ))),
        }
    }

    /// True when [`deserialize`] reproduces exactly this header stack: the
    /// tag matches what the EtherType selects, tag values are in their
    /// documented sets, and a UE context sits behind instruction tag 0x01 only.
    pub fn is_canonical(&self) -> bool {
        if self.check_stack().is_err() || self.meta != PacketMeta::default() {
            return false;
        }
        let et = self.ethernet.ether_type;
        let tag_ok = match (et, &self.tag) {
            (ETHERTYPE_INSTRUCTION, Some(t @ TagHeader::Instruction { .. })) => t.has_known_value(),
            (ETHERTYPE_CONTROL, Some(t @ TagHeader::Control { .. })) => t.has_known_value(),
            (ETHERTYPE_SMARTHO, None) => true,
            (et, Some(TagHeader::Forward { .. })) => EXPERIMENTAL_ETHERTYPES.contains(&et),
            (et, None) => !EXPERIMENTAL_ETHERTYPES.contains(&et),
            _ => false,
        };
        let ext_ok = match (&self.tag, &self.ext) {
            (Some(TagHeader::Instruction { tag_value, .. }), Some(ExtHeader::UeContext(c))) => {
                *tag_value == inst::UE_CONTEXT && c.security_base_key <= SECURITY_KEY_MASK
            }
            (Some(TagHeader::Instruction { tag_value, .. }), None) => {
                *tag_value != inst::UE_CONTEXT
            }
            (_, Some(ExtHeader::Smartho(_))) => et == ETHERTYPE_SMARTHO,
            (_, None) => et != ETHERTYPE_SMARTHO,
            _ => false,
        };
        tag_ok && ext_ok
    }
}

pub(crate) fn put_ethernet(out: &mut Vec<u8>, h: &EthernetHeader) {
    out.extend_from_slice(&h.dst.0);
    out.extend_from_slice(&h.src.0);
    out.extend_from_slice(&h.ether_type.to_be_bytes());
}

pub(crate) fn put_tag(out: &mut Vec<u8>, t: &TagHeader) {
    match *t {
        TagHeader::Forward { dest_port } => out.push(dest_port),
        TagHeader::Control { tag_value, ue_id } | TagHeader::Instruction { tag_value, ue_id } => {
            out.push(tag_value);
            out.extend_from_slice(&ue_id.to_be_bytes());
        }
    }
}

pub(crate) fn put_ext(out: &mut Vec<u8>, e: &ExtHeader) {
    match e {
        ExtHeader::UeContext(c) => {
            out.extend_from_slice(&c.ue_id.to_be_bytes());
            out.extend_from_slice(&c.src_gnb_addr.to_be_bytes());
            out.extend_from_slice(&c.ue_ambr.to_be_bytes());
            out.push(c.security_algorithm);
            out.extend_from_slice(&c.security_base_key.to_be_bytes()[1..]);
        }
        ExtHeader::Smartho(s) => {
            out.extend_from_slice(&s.ctrl_info.to_be_bytes());
            out.extend_from_slice(&s.frwd_tag_prt.to_be_bytes());
        }
    }
}

pub fn serialize(packet: &Packet) -> Result<Vec<u8>, WireError> {
    packet.check_stack()?;
    let mut out = Vec::with_capacity(packet.wire_len());
    put_ethernet(&mut out, &packet.ethernet);
    if let Some(tag) = &packet.tag {
        put_tag(&mut out, tag);
    }
    if let Some(ext) = &packet.ext {
        put_ext(&mut out, ext);
    }
    out.extend_from_slice(&packet.payload);
    Ok(out)
}

/// Bounds-checked big-endian reader.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    pub(crate) fn position(&self) -> usize {
        self.pos
    }

    pub(crate) fn rest(&self) -> &'a [u8] {
        &self.bytes[self.pos..]
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.bytes.len() - self.pos < n {
            return Err(WireError::Truncated {
                needed: self.pos + n,
                available: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    pub(crate) fn u32(&mut self) -> Result<u32, WireError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn ethernet(&mut self) -> Result<EthernetHeader, WireError> {
        let b = self.take(ETHERNET_LEN)?;
        let mut dst = [0u8; 6];
        let mut src = [0u8; 6];
        dst.copy_from_slice(&b[0..6]);
        src.copy_from_slice(&b[6..12]);
        Ok(EthernetHeader {
            dst: MacAddr(dst),
            src: MacAddr(src),
            ether_type: u16::from_be_bytes([b[12], b[13]]),
        })
    }

    pub(crate) fn forward_tag(&mut self) -> Result<TagHeader, WireError> {
        Ok(TagHeader::Forward { dest_port: self.u8()? })
    }

    pub(crate) fn labelled_tag(&mut self, instruction: bool) -> Result<TagHeader, WireError> {
        // Check the full length up front so a short tag reports the whole need.
        if self.bytes.len() - self.pos < LABELLED_TAG_LEN {
            return Err(WireError::Truncated {
                needed: self.pos + LABELLED_TAG_LEN,
                available: self.bytes.len(),
            });
        }
        let tag_value = self.u8()?;
        let ue_id = self.u16()?;
        Ok(if instruction {
            TagHeader::Instruction { tag_value, ue_id }
        } else {
            TagHeader::Control { tag_value, ue_id }
        })
    }

    pub(crate) fn ue_context(&mut self) -> Result<UeContextHeader, WireError> {
        let b = self.take(UE_CONTEXT_LEN)?;
        let mut key = [0u8; 8];
        key[1..].copy_from_slice(&b[9..16]);
        Ok(UeContextHeader {
            ue_id: u16::from_be_bytes([b[0], b[1]]),
            src_gnb_addr: u16::from_be_bytes([b[2], b[3]]),
            ue_ambr: u32::from_be_bytes([b[4], b[5], b[6], b[7]]),
            security_algorithm: b[8],
            security_base_key: u64::from_be_bytes(key),
        })
    }

    pub(crate) fn smartho(&mut self) -> Result<SmarthoHeader, WireError> {
        let b = self.take(SMARTHO_LEN)?;
        Ok(SmarthoHeader {
            ctrl_info: u32::from_be_bytes([b[0], b[1], b[2], b[3]]),
            frwd_tag_prt: u32::from_be_bytes([b[4], b[5], b[6], b[7]]),
        })
    }
}

/// Canonical parse: the header stack is selected by EtherType exactly as the
/// CU parser does, with instruction tag 0x01 followed by a UE context.
pub fn deserialize(bytes: &[u8]) -> Result<Packet, WireError> {
    let mut r = Reader::new(bytes);
    let ethernet = r.ethernet()?;
    let mut packet = Packet::new(ethernet);
    match ethernet.ether_type {
        ETHERTYPE_INSTRUCTION => {
            let tag = r.labelled_tag(true)?;
            if tag.tag_value() == inst::UE_CONTEXT {
                packet.ext = Some(ExtHeader::UeContext(r.ue_context()?));
            }
            packet.tag = Some(tag);
        }
        ETHERTYPE_CONTROL => packet.tag = Some(r.labelled_tag(false)?),
        ETHERTYPE_SMARTHO => packet.ext = Some(ExtHeader::Smartho(r.smartho()?)),
        et if EXPERIMENTAL_ETHERTYPES.contains(&et) => packet.tag = Some(r.forward_tag()?),
        _ => {}
    }
    packet.payload = r.rest().to_vec();
    Ok(packet)
}

/// Multi-line decoded view used by the debug subcommands.
pub fn describe(packet: &Packet) -> String {
    let mut s = format!(
        "ethernet dst={} src={} type={:#06x}\n",
        packet.ethernet.dst, packet.ethernet.src, packet.ethernet.ether_type
    );
    match packet.tag {
        Some(TagHeader::Forward { dest_port }) => {
            s.push_str(&format!("forward_tag dest_port={dest_port}\n"))
        }
        Some(TagHeader::Control { tag_value, ue_id }) => {
            s.push_str(&format!("control_tag tag_value={tag_value:#04x} ue_id={ue_id}\n"))
        }
        Some(TagHeader::Instruction { tag_value, ue_id }) => s.push_str(&format!(
            "instruction_tag tag_value={tag_value:#04x} ue_id={ue_id}\n"
        )),
        None => {}
    }
    match packet.ext {
        Some(ExtHeader::UeContext(c)) => s.push_str(&format!(
            "ue_context ue_id={} src_gnb_addr={} ue_ambr={} security_algorithm={} security_base_key={:#016x}\n",
            c.ue_id, c.src_gnb_addr, c.ue_ambr, c.security_algorithm, c.security_base_key
        )),
        Some(ExtHeader::Smartho(h)) => s.push_str(&format!(
            "smartho ctrl_info={} frwd_tag_prt={}\n",
            h.ctrl_info, h.frwd_tag_prt
        )),
        None => {}
    }
    s.push_str(&format!(
        "payload {} bytes: {}\n",
        packet.payload.len(),
        hex::encode(&packet.payload)
    ));
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eth(ether_type: u16) -> EthernetHeader {
        EthernetHeader {
            dst: MacAddr::for_node(2),
            src: MacAddr::for_node(1),
            ether_type,
        }
    }

    #[test]
    fn control_tag_frame_layout() {
        let p = Packet::new(eth(ETHERTYPE_CONTROL)).with_tag(TagHeader::Control {
            tag_value: 0x0c,
            ue_id: 7,
        });
        let bytes = serialize(&p).unwrap();
        assert_eq!(bytes.len(), 17);
        assert_eq!(bytes[12..14], [0x01, 0x02]);
        assert_eq!(bytes[14], 0x0c);
        assert_eq!(bytes[15..17], [0x00, 0x07]);
        assert_eq!(deserialize(&bytes).unwrap(), p);
    }

    #[test]
    fn untagged_payload_passes_through() {
        let p = Packet::new(eth(ETHERTYPE_IPV4)).with_payload(b"abcd".to_vec());
        let bytes = serialize(&p).unwrap();
        assert_eq!(bytes.len(), 18);
        assert_eq!(&bytes[14..], b"abcd");
    }

    #[test]
    fn smartho_header_integer_fields() {
        let p = Packet::new(eth(ETHERTYPE_SMARTHO)).with_ext(ExtHeader::Smartho(SmarthoHeader {
            ctrl_info: 1,
            frwd_tag_prt: 4,
        }));
        let bytes = serialize(&p).unwrap();
        assert_eq!(bytes[14..], [0, 0, 0, 1, 0, 0, 0, 4]);
    }

    #[test]
    fn instruction_select() {
        let mut bytes = serialize(&Packet::new(eth(ETHERTYPE_INSTRUCTION))).unwrap();
        bytes.extend_from_slice(&[0x02, 0x00, 0x09]);
        let p = deserialize(&bytes).unwrap();
        assert_eq!(
            p.tag,
            Some(TagHeader::Instruction {
                tag_value: 0x02,
                ue_id: 9
            })
        );
        assert!(p.ext.is_none());
    }

    #[test]
    fn ue_context_layout() {
        let ctx = UeContextHeader {
            ue_id: 0x0102,
            src_gnb_addr: 0x0304,
            ue_ambr: 0x0506_0708,
            security_algorithm: 0x09,
            security_base_key: 0x000a_0b0c_0d0e_0f10,
        };
        let p = Packet::new(eth(ETHERTYPE_INSTRUCTION))
            .with_tag(TagHeader::Instruction {
                tag_value: inst::UE_CONTEXT,
                ue_id: 0x0102,
            })
            .with_ext(ExtHeader::UeContext(ctx));
        let bytes = serialize(&p).unwrap();
        assert_eq!(bytes.len(), 14 + 3 + 16);
        assert_eq!(
            bytes[17..],
            [1, 2, 3, 4, 5, 6, 7, 8, 9, 0x0a, 0x0b, 0x0c, 0x0d, 0x0e, 0x0f, 0x10]
        );
        assert_eq!(deserialize(&bytes).unwrap(), p);
    }

    #[test]
    fn short_frames_are_truncated() {
        assert_eq!(
            deserialize(&[0u8; 13]),
            Err(WireError::Truncated {
                needed: 14,
                available: 13
            })
        );
        let mut bytes = serialize(&Packet::new(eth(ETHERTYPE_CONTROL))).unwrap();
        bytes.push(0x01);
        assert!(matches!(
            deserialize(&bytes),
            Err(WireError::Truncated { needed: 17, .. })
        ));
        let mut bytes = serialize(&Packet::new(eth(ETHERTYPE_INSTRUCTION))).unwrap();
        bytes.extend_from_slice(&[0x01, 0, 1, 0xaa]);
        assert!(matches!(
            deserialize(&bytes),
            Err(WireError::Truncated { needed: 33, .. })
        ));
    }

    #[test]
    fn unknown_ethertype_is_untagged() {
        let bytes = serialize(&Packet::new(eth(0x86dd)).with_payload(vec![1, 2, 3])).unwrap();
        let p = deserialize(&bytes).unwrap();
        assert!(p.tag.is_none() && p.ext.is_none());
        assert_eq!(p.payload, vec![1, 2, 3]);
    }

    #[test]
    fn mismatched_tag_is_rejected() {
        let p = Packet::new(eth(ETHERTYPE_CONTROL)).with_tag(TagHeader::Instruction {
            tag_value: 1,
            ue_id: 1,
        });
        assert!(matches!(
            serialize(&p),
            Err(WireError::InconsistentHeaderStack(_))
        ));
        let p = Packet::new(eth(ETHERTYPE_CONTROL))
            .with_tag(TagHeader::Control {
                tag_value: 1,
                ue_id: 1,
            })
            .with_ext(ExtHeader::Smartho(SmarthoHeader {
                ctrl_info: 1,
                frwd_tag_prt: 4,
            }));
        assert!(serialize(&p).is_err());
    }

    #[test]
    fn port_bits_layout() {
        let phys: Vec<u8> = (0..4).map(|i| PortBits::physical(i).unwrap().bits()).collect();
        let host: Vec<u8> = (0..4).map(|i| PortBits::host(i).unwrap().bits()).collect();
        assert_eq!(phys, [1, 4, 16, 64]);
        assert_eq!(host, [2, 8, 32, 128]);
        assert_eq!(PortBits::physical(0).unwrap().host_side().bits(), 0b0000_0010);
        assert!(PortBits::from_bits(0).is_err());
        assert!(PortBits::from_bits(6).is_err());
        assert!(PortBits::physical(4).is_err());
    }

    #[test]
    fn mac_node_ids() {
        let m = MacAddr::for_node(0x1234);
        assert_eq!(m.node_id(), 0x1234);
        assert_eq!(MacAddr::from_u64(m.to_u64()), m);
        assert_eq!(m.to_string(), "02:00:00:00:12:34");
    }
}
