//! Discrete-event simulation of intra-CU handovers over tag-based
//! programmable switches, with controller-driven pre-allocation of the
//! handover preparation phase.
//!
//! Module map:
//!
//! - [`wire`]: header formats and byte layouts
//! - [`pipeline`]: parser FSM, exact-match tables and the CU/DU/IP programs
//! - [`control`]: controller tables and the pre-allocation phases
//! - [`qmodel`]: closed-form queueing delay budget
//! - [`sim`]: event engine, handover and forwarding experiments, metrics
//! - [`cli`]: command implementations behind the `smartho-sim` binary

pub mod cli;
pub mod control;
pub mod pipeline;
pub mod qmodel;
pub mod sim;
pub mod time;
pub mod wire;

pub use time::SimTime;
