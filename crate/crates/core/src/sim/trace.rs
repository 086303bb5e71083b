//! Per-run message trace.

use std::fmt::Write as _;
use std::io;

use super::message::HoMessage;
use crate::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TraceKind {
    /// A node originated the message.
    Send,
    /// The message reached the node that acts on it.
    Recv,
    /// A controller re-emitted the message after rewriting it.
    Fwd,
}

impl TraceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceKind::Send => "send",
            TraceKind::Recv => "recv",
            TraceKind::Fwd => "fwd",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub time: SimTime,
    pub node: String,
    pub kind: TraceKind,
    pub message: HoMessage,
    pub ue: u16,
    pub hop: u16,
}

#[derive(Debug, Clone, Default)]
pub struct Trace {
    enabled: bool,
    events: Vec<TraceEvent>,
}

impl Trace {
    pub fn new(enabled: bool) -> Self {
        Trace {
            enabled,
            events: Vec::new(),
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn record(&mut self, time: SimTime, node: &str, kind: TraceKind, message: HoMessage, ue: u16, hop: u16) {
        if self.enabled {
            self.events.push(TraceEvent {
                time,
                node: node.to_string(),
                kind,
                message,
                ue,
                hop,
            });
        }
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    /// Events of one kind for one (ue, hop), in time order.
    pub fn filter(&self, kind: TraceKind, ue: u16, hop: u16) -> Vec<&TraceEvent> {
        self.events
            .iter()
            .filter(|e| e.kind == kind && e.ue == ue && e.hop == hop)
            .collect()
    }

    pub fn render(&self) -> String {
        let mut s = String::from("time_us,node,event,message,ue,hop\n");
        for e in &self.events {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                e.time.as_micros(),
                e.node,
                e.kind.as_str(),
                e.message.number(),
                e.ue,
                e.hop
            );
        }
        s
    }

    pub fn write_to<W: io::Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(self.render().as_bytes())
    }
}
