//! Exact-match tables.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::parser::{parse_number, ParsedPacket};
use super::PipelineError;
use crate::wire::{PortBits, TagHeader};

/// Which packet field a table matches on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KeyField {
    #[serde(rename = "ethernet.dst_addr")]
    EthernetDst,
    #[serde(rename = "ethernet.src_addr")]
    EthernetSrc,
    /// `ue_context.src_gnb_addr` when a UE context is present, otherwise the
    /// node id carried in the low 16 bits of the source MAC.
    #[serde(rename = "src_gnb_addr")]
    SrcGnbAddr,
    #[serde(rename = "frwd_tag.dest_port")]
    ForwardTagPort,
    #[serde(rename = "ipv4.dst_addr")]
    Ipv4Dst,
    /// `(ctrl_info << 8) | src_port`.
    #[serde(rename = "smartho.ctrl_info+src_port")]
    SmarthoCtrlSrcPort,
}

impl KeyField {
    /// Extracts the key, or `None` if the header it needs is absent.
    pub fn extract(self, pkt: &ParsedPacket, src_port: PortBits) -> Option<u64> {
        let p = &pkt.packet;
        match self {
            KeyField::EthernetDst => Some(p.ethernet.dst.to_u64()),
            KeyField::EthernetSrc => Some(p.ethernet.src.to_u64()),
            KeyField::SrcGnbAddr => Some(
                p.ue_context()
                    .map(|c| c.src_gnb_addr)
                    .unwrap_or_else(|| p.ethernet.src.node_id()) as u64,
            ),
            KeyField::ForwardTagPort => match p.tag {
                Some(TagHeader::Forward { dest_port }) => Some(dest_port as u64),
                _ => None,
            },
            KeyField::Ipv4Dst => pkt.ipv4.map(|h| h.dst as u64),
            KeyField::SmarthoCtrlSrcPort => p
                .smartho()
                .map(|s| smartho_key(s.ctrl_info, src_port.bits())),
        }
    }
}

pub fn smartho_key(ctrl_info: u32, src_port: u8) -> u64 {
    ((ctrl_info as u64) << 8) | src_port as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    OperationDrop,
    EtherPortForward(PortBits),
    PreparePortForward(PortBits),
    TagForward(PortBits),
    IpForward(PortBits),
    CuControllerForward,
    DuControllerForward,
    SetFrwdTagPrt(u32),
}

impl Action {
    pub const NAMES: [&'static str; 8] = [
        "operation_drop",
        "ether_port_forward",
        "prepare_port_forward",
        "tag_forward",
        "ip_forward",
        "cu_controller_forward",
        "du_controller_forward",
        "set_frwd_tag_prt",
    ];

    pub fn from_name(name: &str, params: &[u64]) -> Result<Action, PipelineError> {
        let port = || -> Result<PortBits, PipelineError> {
            match params {
                [p] => u8::try_from(*p)
                    .ok()
                    .and_then(|b| PortBits::from_bits(b).ok())
                    .ok_or_else(|| {
                        PipelineError::BadActionParams(format!("{name}: invalid port {p:#x}"))
                    }),
                _ => Err(PipelineError::BadActionParams(format!(
                    "{name} takes one port parameter, got {}",
                    params.len()
                ))),
            }
        };
        let none = |a: Action| {
            if params.is_empty() {
                Ok(a)
            } else {
                Err(PipelineError::BadActionParams(format!(
                    "{name} takes no parameters"
                )))
            }
        };
        match name {
            "operation_drop" => none(Action::OperationDrop),
            "ether_port_forward" => port().map(Action::EtherPortForward),
            "prepare_port_forward" => port().map(Action::PreparePortForward),
            "tag_forward" => port().map(Action::TagForward),
            "ip_forward" => port().map(Action::IpForward),
            "cu_controller_forward" => none(Action::CuControllerForward),
            "du_controller_forward" => none(Action::DuControllerForward),
            "set_frwd_tag_prt" => match params {
                [p] => u32::try_from(*p).map(Action::SetFrwdTagPrt).map_err(|_| {
                    PipelineError::BadActionParams(format!("{name}: {p} exceeds 32 bits"))
                }),
                _ => Err(PipelineError::BadActionParams(format!(
                    "{name} takes one parameter"
                ))),
            },
            other => Err(PipelineError::UnknownAction(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Action::OperationDrop => "operation_drop",
            Action::EtherPortForward(_) => "ether_port_forward",
            Action::PreparePortForward(_) => "prepare_port_forward",
            Action::TagForward(_) => "tag_forward",
            Action::IpForward(_) => "ip_forward",
            Action::CuControllerForward => "cu_controller_forward",
            Action::DuControllerForward => "du_controller_forward",
            Action::SetFrwdTagPrt(_) => "set_frwd_tag_prt",
        }
    }

    pub fn params(&self) -> Vec<u64> {
        match *self {
            Action::EtherPortForward(p)
            | Action::PreparePortForward(p)
            | Action::TagForward(p)
            | Action::IpForward(p) => vec![p.bits() as u64],
            Action::SetFrwdTagPrt(v) => vec![v as u64],
            _ => Vec::new(),
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let params: Vec<String> = self.params().iter().map(|p| format!("{p:#x}")).collect();
        write!(f, "{}({})", self.name(), params.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchActionTable {
    name: String,
    key: KeyField,
    entries: BTreeMap<u64, Action>,
    default_action: Action,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lookup {
    pub action: Action,
    pub hit: bool,
}

impl MatchActionTable {
    pub fn new(name: impl Into<String>, key: KeyField, default_action: Action) -> Self {
        MatchActionTable {
            name: name.into(),
            key,
            entries: BTreeMap::new(),
            default_action,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn key_field(&self) -> KeyField {
        self.key
    }

    pub fn default_action(&self) -> Action {
        self.default_action
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (u64, Action)> + '_ {
        self.entries.iter().map(|(k, a)| (*k, *a))
    }

    pub fn insert(&mut self, key: u64, action: Action) -> Result<(), PipelineError> {
        if self.entries.contains_key(&key) {
            return Err(PipelineError::DuplicateKey {
                table: self.name.clone(),
                key,
            });
        }
        self.entries.insert(key, action);
        Ok(())
    }

    /// Adds an entry by action name, as a control plane would.
    pub fn add(&mut self, key: u64, action: &str, params: &[u64]) -> Result<(), PipelineError> {
        let action = Action::from_name(action, params)?;
        self.insert(key, action)
    }

    pub fn remove(&mut self, key: u64) -> Option<Action> {
        self.entries.remove(&key)
    }

    pub fn lookup_key(&self, key: Option<u64>) -> Lookup {
        match key.and_then(|k| self.entries.get(&k)) {
            Some(a) => Lookup {
                action: *a,
                hit: true,
            },
            None => Lookup {
                action: self.default_action,
                hit: false,
            },
        }
    }

    pub fn lookup(&self, pkt: &ParsedPacket, src_port: PortBits) -> Lookup {
        self.lookup_key(self.key.extract(pkt, src_port))
    }
}

/// Table key as written in JSON: a number, a hex/decimal string, a MAC
/// (`02:00:00:00:00:01`), a dotted quad, or a `[ctrl_info, src_port]` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KeyValue {
    Number(u64),
    Pair([u64; 2]),
    Text(String),
}

impl KeyValue {
    pub fn resolve(&self) -> Option<u64> {
        match self {
            KeyValue::Number(n) => Some(*n),
            KeyValue::Pair([c, p]) => u8::try_from(*p)
                .ok()
                .and_then(|p| u32::try_from(*c).ok().map(|c| smartho_key(c, p))),
            KeyValue::Text(s) => {
                let colon: Vec<&str> = s.split(':').collect();
                let dot: Vec<&str> = s.split('.').collect();
                if colon.len() == 6 {
                    let mut v = 0u64;
                    for part in colon {
                        v = (v << 8) | u8::from_str_radix(part, 16).ok()? as u64;
                    }
                    Some(v)
                } else if dot.len() == 4 {
                    let mut v = 0u64;
                    for part in dot {
                        v = (v << 8) | part.parse::<u8>().ok()? as u64;
                    }
                    Some(v)
                } else {
                    parse_number(s)
                }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntryConfig {
    pub key: KeyValue,
    pub action: String,
    #[serde(default)]
    pub params: Vec<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableConfig {
    pub name: String,
    pub key: KeyField,
    pub default_action: String,
    #[serde(default)]
    pub default_params: Vec<u64>,
    #[serde(default)]
    pub entries: Vec<EntryConfig>,
}

impl TryFrom<TableConfig> for MatchActionTable {
    type Error = PipelineError;

    fn try_from(cfg: TableConfig) -> Result<Self, PipelineError> {
        let default = Action::from_name(&cfg.default_action, &cfg.default_params)?;
        let mut table = MatchActionTable::new(cfg.name, cfg.key, default);
        for e in cfg.entries {
            let key = e.key.resolve().ok_or_else(|| {
                PipelineError::BadActionParams(format!(
                    "table '{}': unreadable key {:?}",
                    table.name, e.key
                ))
            })?;
            table.add(key, &e.action, &e.params)?;
        }
        Ok(table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_key_is_rejected() {
        let mut t = MatchActionTable::new("t", KeyField::EthernetDst, Action::OperationDrop);
        t.add(7, "ether_port_forward", &[1]).unwrap();
        assert!(matches!(
            t.add(7, "operation_drop", &[]),
            Err(PipelineError::DuplicateKey { key: 7, .. })
        ));
    }

    #[test]
    fn unknown_action_is_rejected() {
        let mut t = MatchActionTable::new("t", KeyField::EthernetDst, Action::OperationDrop);
        assert!(matches!(
            t.add(1, "teleport", &[]),
            Err(PipelineError::UnknownAction(_))
        ));
    }

    #[test]
    fn miss_returns_default() {
        let mut t = MatchActionTable::new("t", KeyField::EthernetDst, Action::OperationDrop);
        t.add(3, "cu_controller_forward", &[]).unwrap();
        assert_eq!(t.lookup_key(Some(3)).action, Action::CuControllerForward);
        let miss = t.lookup_key(Some(4));
        assert!(!miss.hit);
        assert_eq!(miss.action, Action::OperationDrop);
        assert!(!t.lookup_key(None).hit);
    }

    #[test]
    fn port_params_must_be_one_hot() {
        assert!(Action::from_name("ether_port_forward", &[3]).is_err());
        assert!(Action::from_name("ether_port_forward", &[]).is_err());
        assert_eq!(
            Action::from_name("ether_port_forward", &[4]).unwrap(),
            Action::EtherPortForward(PortBits::from_bits(4).unwrap())
        );
    }

    #[test]
    fn key_spellings() {
        assert_eq!(KeyValue::Number(5).resolve(), Some(5));
        assert_eq!(
            KeyValue::Text("02:00:00:00:00:0a".into()).resolve(),
            Some(0x0200_0000_000a)
        );
        assert_eq!(KeyValue::Text("10.0.0.2".into()).resolve(), Some(0x0a00_0002));
        assert_eq!(KeyValue::Text("0x10".into()).resolve(), Some(16));
        assert_eq!(KeyValue::Pair([3, 16]).resolve(), Some((3 << 8) | 16));
    }
}
