//! Label-driven rendezvous (REL).
//!
//! An ID is turned into a block schedule: every bit is doubled and `01` is
//! appended. A `1` block runs the exploration plan once; a `0` block waits
//! in place for the same number of rounds. Two agents with distinct IDs that
//! start within a bounded offset of each other meet before either finishes.

use alloc::vec::Vec;
use core::fmt;

use crate::explore::{ExplorationPlan, ExploreError};
use crate::graph::Port;

pub type AgentId = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activity {
    Active,
    Passive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RelMove {
    Stay,
    Port(Port),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RendezvousError {
    ZeroId,
    Explore(ExploreError),
}

impl fmt::Display for RendezvousError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RendezvousError::ZeroId => write!(f, "agent IDs are positive"),
            RendezvousError::Explore(e) => e.fmt(f),
        }
    }
}

impl core::error::Error for RendezvousError {}

impl From<ExploreError> for RendezvousError {
    fn from(e: ExploreError) -> Self {
        RendezvousError::Explore(e)
    }
}

/// Bit length of `id`, i.e. `floor(log2 id) + 1`.
#[inline]
pub fn bit_len(id: AgentId) -> u32 {
    64 - id.leading_zeros()
}

/// Doubled binary digits of `id` (most significant first) followed by `0 1`.
pub fn transform_id(id: AgentId) -> Result<Vec<Activity>, RendezvousError> {
    if id == 0 {
        return Err(RendezvousError::ZeroId);
    }
    let bits = bit_len(id);
    let mut out = Vec::with_capacity(2 * bits as usize + 2);
    for i in (0..bits).rev() {
        let a = if id >> i & 1 == 1 {
            Activity::Active
        } else {
            Activity::Passive
        };
        out.push(a);
        out.push(a);
    }
    out.push(Activity::Passive);
    out.push(Activity::Active);
    Ok(out)
}

#[inline]
fn activity_at(id: AgentId, block: u64) -> Activity {
    let bits = bit_len(id) as u64;
    if block >= 2 * bits {
        return if block == 2 * bits {
            Activity::Passive
        } else {
            Activity::Active
        };
    }
    let i = bits - 1 - block / 2;
    if id >> i & 1 == 1 {
        Activity::Active
    } else {
        Activity::Passive
    }
}

/// Timing of REL: block length equals the plan's `t_ex` and the declared
/// round budget `t_rel` is `scale * (2 floor(log2 id) + 6) * t_ex`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RelTiming {
    pub t_ex: u64,
    pub scale: u64,
}

impl RelTiming {
    pub fn new(t_ex: usize, scale: u64) -> RelTiming {
        RelTiming {
            t_ex: t_ex as u64,
            scale: scale.max(1),
        }
    }

    /// Round budget within which REL(id) is guaranteed to meet any other
    /// REL run started no more than one exploration earlier or later.
    #[inline]
    pub fn t_rel(&self, id: AgentId) -> u64 {
        let log = bit_len(id).saturating_sub(1) as u64;
        self.scale * (2 * log + 6) * self.t_ex
    }

    /// Rounds the block schedule of `id` takes to run once.
    pub fn schedule_len(&self, id: AgentId) -> u64 {
        (2 * bit_len(id) as u64 + 2) * self.t_ex
    }
}

/// Move of REL(id) at its own round index `t` (0-based). The schedule
/// repeats after [`RelTiming::schedule_len`] rounds.
#[inline]
pub fn rel_step(
    id: AgentId,
    t: u64,
    plan: &ExplorationPlan,
    degree: usize,
    inport: Option<Port>,
) -> Result<RelMove, RendezvousError> {
    if id == 0 {
        return Err(RendezvousError::ZeroId);
    }
    let t_ex = plan.t_ex as u64;
    if t_ex == 0 || degree == 0 {
        return Ok(RelMove::Stay);
    }
    let blocks = 2 * bit_len(id) as u64 + 2;
    let block = (t / t_ex) % blocks;
    let within = t % t_ex;
    match activity_at(id, block) {
        Activity::Passive => Ok(RelMove::Stay),
        Activity::Active => {
            let inport = if within == 0 { None } else { inport };
            Ok(RelMove::Port(plan.step(within as usize, degree, inport)?))
        }
    }
}
