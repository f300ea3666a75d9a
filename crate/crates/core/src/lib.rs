//! Byzantine-tolerant gathering of mobile agents on anonymous port-numbered
//! graphs.
//!
//! `k` agents with distinct positive IDs start at arbitrary nodes. Up to `f`
//! of them are Byzantine and may lie about anything except their ID. The good
//! agents must all terminate at one node. This crate holds the protocol, a
//! lockstep simulator and the adversary strategies; it needs only `alloc`.

#![no_std]

extern crate alloc;

pub mod adversary;
pub mod agent;
pub mod explore;
pub mod graph;
pub mod idset;
pub mod invariants;
pub mod pbc;
pub mod rendezvous;
pub mod sim;
pub mod trace;

pub use agent::{Action, AgentCore, Decision, Gid, Observation, Presented, Protocol, Stage};
pub use explore::{ExplorationPlan, ExploreError};
pub use graph::{GraphKind, Link, NodeId, Port, PortGraph, Violation};
pub use idset::IdSet;
pub use rendezvous::{AgentId, RelMove, RelTiming};
pub use sim::{RunConfig, SimError, SimResult};
