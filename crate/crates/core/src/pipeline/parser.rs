//! Parser finite-state machine.
//!
//! A program is a set of named states. Each state extracts one header and
//! then either moves to a fixed next state or selects on a field of an
//! already-extracted header. `accept` and `reject` are reserved terminal
//! names.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::wire::{self, ExtHeader, Packet, Reader, TagHeader};

pub const ACCEPT: &str = "accept";
pub const REJECT: &str = "reject";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeaderKind {
    Ethernet,
    ForwardTag,
    ControlTag,
    InstructionTag,
    UeContext,
    Smartho,
    Ipv4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SelectField {
    #[serde(rename = "ethernet.ether_type")]
    EtherType,
    #[serde(rename = "tag.tag_value")]
    TagValue,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Transition {
    Next(String),
    Select {
        field: SelectField,
        cases: BTreeMap<u64, String>,
        default: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParserState {
    pub extract: HeaderKind,
    pub transition: Transition,
}

/// Validated parser program. Construction fails with
/// [`PipelineError::MalformedProgram`] if a target is undefined, the graph
/// has a cycle, or some path extracts headers in an order the wire format
/// cannot represent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParserProgram {
    start: String,
    states: BTreeMap<String, ParserState>,
}

/// The 20-byte IPv4-like header used only by the IP forwarding baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Ipv4Header {
    pub version_ihl: u8,
    pub tos: u8,
    pub total_len: u16,
    pub ident: u16,
    pub flags_frag: u16,
    pub ttl: u8,
    pub protocol: u8,
    pub checksum: u16,
    pub src: u32,
    pub dst: u32,
}

pub const IPV4_LEN: usize = 20;

impl Ipv4Header {
    pub fn new(src: u32, dst: u32, payload_len: usize) -> Self {
        Ipv4Header {
            version_ihl: 0x45,
            tos: 0,
            total_len: (IPV4_LEN + payload_len) as u16,
            ident: 0,
            flags_frag: 0,
            ttl: 64,
            protocol: 1,
            checksum: 0,
            src,
            dst,
        }
    }

    pub fn encode(&self, out: &mut Vec<u8>) {
        out.push(self.version_ihl);
        out.push(self.tos);
        out.extend_from_slice(&self.total_len.to_be_bytes());
        out.extend_from_slice(&self.ident.to_be_bytes());
        out.extend_from_slice(&self.flags_frag.to_be_bytes());
        out.push(self.ttl);
        out.push(self.protocol);
        out.extend_from_slice(&self.checksum.to_be_bytes());
        out.extend_from_slice(&self.src.to_be_bytes());
        out.extend_from_slice(&self.dst.to_be_bytes());
    }

    pub fn decode(b: &[u8]) -> Option<Self> {
        if b.len() < IPV4_LEN {
            return None;
        }
        let u16_at = |i: usize| u16::from_be_bytes([b[i], b[i + 1]]);
        let u32_at = |i: usize| u32::from_be_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]]);
        Some(Ipv4Header {
            version_ihl: b[0],
            tos: b[1],
            total_len: u16_at(2),
            ident: u16_at(4),
            flags_frag: u16_at(6),
            ttl: b[8],
            protocol: b[9],
            checksum: u16_at(10),
            src: u32_at(12),
            dst: u32_at(16),
        })
    }
}

/// Result of a successful parse: the wire-level packet plus the optional
/// IP header, which the wire module does not model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPacket {
    pub packet: Packet,
    pub ipv4: Option<Ipv4Header>,
}

impl ParsedPacket {
    pub fn header_len(&self) -> usize {
        self.packet.header_len() + self.ipv4.map_or(0, |_| IPV4_LEN)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RejectReason {
    /// Explicit transition to `reject`.
    Rejected { state: String },
    /// No select case matched and the state has no default.
    NoMatch { state: String, value: u64 },
    /// Not enough bytes for the header being extracted.
    Truncated { state: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseResult {
    Accept(ParsedPacket),
    Reject(RejectReason),
}

impl ParserProgram {
    pub fn new(
        start: impl Into<String>,
        states: BTreeMap<String, ParserState>,
    ) -> Result<Self, PipelineError> {
        let program = ParserProgram {
            start: start.into(),
            states,
        };
        program.validate()?;
        Ok(program)
    }

    pub fn start(&self) -> &str {
        &self.start
    }

    pub fn states(&self) -> &BTreeMap<String, ParserState> {
        &self.states
    }

    fn targets(t: &Transition) -> Vec<&str> {
        match t {
            Transition::Next(n) => vec![n.as_str()],
            Transition::Select { cases, default, .. } => cases
                .values()
                .map(String::as_str)
                .chain(default.as_deref())
                .collect(),
        }
    }

    fn validate(&self) -> Result<(), PipelineError> {
        let malformed = |msg: String| Err(PipelineError::MalformedProgram(msg));
        if !self.states.contains_key(&self.start) {
            return malformed(format!("start state '{}' is undefined", self.start));
        }
        for (name, st) in &self.states {
            if name == ACCEPT || name == REJECT {
                return malformed(format!("'{name}' is a reserved state name"));
            }
            for t in Self::targets(&st.transition) {
                if t != ACCEPT && t != REJECT && !self.states.contains_key(t) {
                    return malformed(format!("state '{name}' targets undefined '{t}'"));
                }
            }
        }
        // Walk every path from start, tracking the header stack. The state
        // graph is tiny, so plain enumeration is fine.
        let mut on_path = Vec::new();
        self.walk(&self.start, &mut on_path, &mut Vec::new())
    }

    fn walk<'a>(
        &'a self,
        name: &'a str,
        on_path: &mut Vec<&'a str>,
        stack: &mut Vec<HeaderKind>,
    ) -> Result<(), PipelineError> {
        if name == ACCEPT || name == REJECT {
            return Ok(());
        }
        if on_path.contains(&name) {
            return Err(PipelineError::MalformedProgram(format!(
                "cycle through state '{name}'"
            )));
        }
        let st = &self.states[name];
        check_extract_order(stack, st.extract).map_err(|msg| {
            PipelineError::MalformedProgram(format!("state '{name}': {msg}"))
        })?;
        if let Transition::Select { field, .. } = &st.transition {
            let after: Vec<HeaderKind> = stack.iter().copied().chain([st.extract]).collect();
            let available = match field {
                SelectField::EtherType => after.contains(&HeaderKind::Ethernet),
                SelectField::TagValue => after.iter().any(|h| {
                    matches!(
                        h,
                        HeaderKind::ControlTag | HeaderKind::InstructionTag | HeaderKind::ForwardTag
                    )
                }),
            };
            if !available {
                return Err(PipelineError::MalformedProgram(format!(
                    "state '{name}' selects on {field:?} before extracting it"
                )));
            }
        }
        on_path.push(name);
        stack.push(st.extract);
        for t in Self::targets(&st.transition) {
            self.walk(t, on_path, stack)?;
        }
        stack.pop();
        on_path.pop();
        Ok(())
    }

    /// Runs the FSM over `bytes`. Bytes after the last extracted header
    /// become the payload.
    pub fn run(&self, bytes: &[u8]) -> ParseResult {
        let mut reader = Reader::new(bytes);
        let mut ethernet = None;
        let mut tag = None;
        let mut ext = None;
        let mut ipv4 = None;
        let mut state = self.start.as_str();
        loop {
            if state == ACCEPT {
                break;
            }
            if state == REJECT {
                return ParseResult::Reject(RejectReason::Rejected {
                    state: REJECT.into(),
                });
            }
            let st = &self.states[state];
            let truncated = || {
                ParseResult::Reject(RejectReason::Truncated {
                    state: state.to_string(),
                })
            };
            let extracted = match st.extract {
                HeaderKind::Ethernet => reader.ethernet().map(|h| ethernet = Some(h)),
                HeaderKind::ForwardTag => reader.forward_tag().map(|t| tag = Some(t)),
                HeaderKind::ControlTag => reader.labelled_tag(false).map(|t| tag = Some(t)),
                HeaderKind::InstructionTag => reader.labelled_tag(true).map(|t| tag = Some(t)),
                HeaderKind::UeContext => reader
                    .ue_context()
                    .map(|c| ext = Some(ExtHeader::UeContext(c))),
                HeaderKind::Smartho => reader
                    .smartho()
                    .map(|s| ext = Some(ExtHeader::Smartho(s))),
                HeaderKind::Ipv4 => match Ipv4Header::decode(reader.rest()) {
                    Some(h) => {
                        ipv4 = Some(h);
                        // advance past the header
                        for _ in 0..IPV4_LEN / 4 {
                            let _ = reader.u32();
                        }
                        Ok(())
                    }
                    None => Err(wire::WireError::Truncated {
                        needed: reader.position() + IPV4_LEN,
                        available: bytes.len(),
                    }),
                },
            };
            if extracted.is_err() {
                return truncated();
            }
            state = match &st.transition {
                Transition::Next(n) => n.as_str(),
                Transition::Select {
                    field,
                    cases,
                    default,
                } => {
                    let value = match field {
                        SelectField::EtherType => ethernet.map(|e| e.ether_type as u64),
                        SelectField::TagValue => tag.map(|t: TagHeader| t.tag_value() as u64),
                    }
                    .expect("validated: select field extracted before use");
                    match cases.get(&value).or(default.as_ref()) {
                        Some(next) => next.as_str(),
                        None => {
                            return ParseResult::Reject(RejectReason::NoMatch {
                                state: state.to_string(),
                                value,
                            })
                        }
                    }
                }
            };
        }
        let ethernet = match ethernet {
            Some(e) => e,
            // validated programs always start with Ethernet
            None => {
                return ParseResult::Reject(RejectReason::Truncated {
                    state: self.start.clone(),
                })
            }
        };
        let mut packet = Packet::new(ethernet);
        packet.tag = tag;
        packet.ext = ext;
        packet.payload = reader.rest().to_vec();
        ParseResult::Accept(ParsedPacket { packet, ipv4 })
    }
}

fn check_extract_order(stack: &[HeaderKind], next: HeaderKind) -> Result<(), String> {
    use HeaderKind::*;
    let has = |k: HeaderKind| stack.contains(&k);
    let has_tag = has(ForwardTag) || has(ControlTag) || has(InstructionTag);
    let ok = match next {
        Ethernet => stack.is_empty(),
        ForwardTag | ControlTag | InstructionTag => {
            stack == [Ethernet]
        }
        UeContext => stack.last() == Some(&InstructionTag),
        Smartho => stack == [Ethernet],
        Ipv4 => stack == [Ethernet] && !has_tag,
    };
    if ok {
        Ok(())
    } else {
        Err(format!("cannot extract {next:?} after {stack:?}"))
    }
}

/// JSON form of one parser state.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParserStateConfig {
    pub extract: HeaderKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub next: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub select: Option<SelectField>,
    #[serde(default, skip_serializing_if = "HashMap::is_empty")]
    pub cases: HashMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParserConfig {
    pub start: String,
    pub states: BTreeMap<String, ParserStateConfig>,
}

pub(crate) fn parse_number(s: &str) -> Option<u64> {
    let s = s.trim();
    match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16).ok(),
        None => s.parse().ok(),
    }
}

impl TryFrom<ParserConfig> for ParserProgram {
    type Error = PipelineError;

    fn try_from(cfg: ParserConfig) -> Result<Self, PipelineError> {
        let mut states = BTreeMap::new();
        for (name, sc) in cfg.states {
            let transition = match (sc.next, sc.select) {
                (Some(n), None) if sc.cases.is_empty() && sc.default.is_none() => {
                    Transition::Next(n)
                }
                (None, Some(field)) => {
                    let mut cases = BTreeMap::new();
                    for (k, v) in sc.cases {
                        let key = parse_number(&k).ok_or_else(|| {
                            PipelineError::MalformedProgram(format!(
                                "state '{name}': bad case value '{k}'"
                            ))
                        })?;
                        cases.insert(key, v);
                    }
                    Transition::Select {
                        field,
                        cases,
                        default: sc.default,
                    }
                }
                _ => {
                    return Err(PipelineError::MalformedProgram(format!(
                        "state '{name}' needs exactly one of 'next' or 'select'"
                    )))
                }
            };
            states.insert(
                name,
                ParserState {
                    extract: sc.extract,
                    transition,
                },
            );
        }
        ParserProgram::new(cfg.start, states)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(extract: HeaderKind, next: &str) -> ParserState {
        ParserState {
            extract,
            transition: Transition::Next(next.into()),
        }
    }

    #[test]
    fn undefined_target_is_malformed() {
        let mut states = BTreeMap::new();
        states.insert("start".to_string(), state(HeaderKind::Ethernet, "nowhere"));
        assert!(matches!(
            ParserProgram::new("start", states),
            Err(PipelineError::MalformedProgram(_))
        ));
    }

    #[test]
    fn cycle_is_malformed() {
        let mut states = BTreeMap::new();
        states.insert("start".to_string(), state(HeaderKind::Ethernet, "a"));
        states.insert("a".to_string(), state(HeaderKind::ControlTag, "b"));
        states.insert("b".to_string(), state(HeaderKind::ControlTag, "a"));
        let err = ParserProgram::new("start", states).unwrap_err();
        assert!(err.to_string().contains("cannot extract") || err.to_string().contains("cycle"));
    }

    #[test]
    fn context_without_instruction_tag_is_malformed() {
        let mut states = BTreeMap::new();
        states.insert("start".to_string(), state(HeaderKind::Ethernet, "ctx"));
        states.insert("ctx".to_string(), state(HeaderKind::UeContext, ACCEPT));
        assert!(ParserProgram::new("start", states).is_err());
    }

    #[test]
    fn select_without_default_rejects() {
        let mut states = BTreeMap::new();
        let mut cases = BTreeMap::new();
        cases.insert(0x0102, ACCEPT.to_string());
        states.insert(
            "start".to_string(),
            ParserState {
                extract: HeaderKind::Ethernet,
                transition: Transition::Select {
                    field: SelectField::EtherType,
                    cases,
                    default: None,
                },
            },
        );
        let p = ParserProgram::new("start", states).unwrap();
        let mut frame = vec![0u8; 12];
        frame.extend_from_slice(&[0x08, 0x00]);
        assert_eq!(
            p.run(&frame),
            ParseResult::Reject(RejectReason::NoMatch {
                state: "start".into(),
                value: 0x0800
            })
        );
    }

    #[test]
    fn number_parsing() {
        assert_eq!(parse_number("0x0101"), Some(0x0101));
        assert_eq!(parse_number("12"), Some(12));
        assert_eq!(parse_number("zz"), None);
    }
}
