//! Parallel Byzantine consensus over sets of `(id, value)` pairs with an
//! unknown participant set.
//!
//! Every good participant ends with the same subset of pairs. A pair held by
//! all good participants is kept; a pair held by none is dropped.
//!
//! Distributed protocol, phase by phase:
//!
//! 1. Everyone broadcasts its input set.
//! 2. Everyone echoes the IDs it heard in phase 1. An ID vouched for by at
//!    least two thirds of the phase-1 senders is certified; only certified
//!    senders count from here on. The echo also carries the first vote.
//! 3. Phase-king with three rounds per iteration (vote, propose, king), run
//!    for every pair heard of in phase 1, all in parallel. Kings rotate through the certified set:
//!    lowest ID, highest ID, then a hashed order.
//!
//! An instance that has produced its output keeps running as a ghost so
//! peers that finish later still see a consistent majority.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::rc::Rc;
use alloc::vec::Vec;
use core::fmt;

use crate::rendezvous::AgentId;

/// A consensus item. `value == None` is the bottom value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct InputPair {
    pub pair_id: u64,
    pub value: Option<i64>,
}

impl InputPair {
    pub fn new(pair_id: u64, value: i64) -> InputPair {
        InputPair {
            pair_id,
            value: Some(value),
        }
    }
}

pub type PairSet = BTreeSet<InputPair>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum InstanceTag {
    /// Agreement on the IDs seen while collecting.
    S,
    /// Agreement on the candidate members.
    P,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Payload {
    Input(PairSet),
    Echo {
        heard: BTreeSet<AgentId>,
        votes: PairSet,
    },
    Vote(PairSet),
    Propose {
        ones: PairSet,
        bottoms: PairSet,
    },
}

impl Payload {
    /// Canonical byte encoding: tag byte, then length-prefixed sorted items
    /// in little-endian order.
    pub fn encode(&self) -> Vec<u8> {
        fn pairs(out: &mut Vec<u8>, s: &PairSet) {
            out.extend_from_slice(&(s.len() as u64).to_le_bytes());
            for p in s {
                out.extend_from_slice(&p.pair_id.to_le_bytes());
                match p.value {
                    None => out.push(0),
                    Some(v) => {
                        out.push(1);
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
        let mut out = Vec::new();
        match self {
            Payload::Input(s) => {
                out.push(1);
                pairs(&mut out, s);
            }
            Payload::Echo { heard, votes } => {
                out.push(2);
                out.extend_from_slice(&(heard.len() as u64).to_le_bytes());
                for h in heard {
                    out.extend_from_slice(&h.to_le_bytes());
                }
                pairs(&mut out, votes);
            }
            Payload::Vote(s) => {
                out.push(3);
                pairs(&mut out, s);
            }
            Payload::Propose { ones, bottoms } => {
                out.push(4);
                pairs(&mut out, ones);
                pairs(&mut out, bottoms);
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PconsMessage {
    pub sender: AgentId,
    pub tag: InstanceTag,
    pub phase: u32,
    pub payload: Rc<Payload>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PbcError {
    DuplicatePairId(u64),
    Finished,
    NotFinished,
    UnknownPair(InputPair),
}

impl fmt::Display for PbcError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PbcError::DuplicatePairId(id) => write!(f, "duplicate pair_id {id} in input"),
            PbcError::Finished => write!(f, "instance finished"),
            PbcError::NotFinished => write!(f, "instance has not produced output"),
            PbcError::UnknownPair(p) => write!(f, "pair {p:?} is not held by any good participant"),
        }
    }
}

impl core::error::Error for PbcError {}

pub fn pair_set(pairs: &[InputPair]) -> Result<PairSet, PbcError> {
    let mut ids = BTreeSet::new();
    for p in pairs {
        if !ids.insert(p.pair_id) {
            return Err(PbcError::DuplicatePairId(p.pair_id));
        }
    }
    Ok(pairs.iter().copied().collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Proposal {
    Zero,
    One,
    Bottom,
}

/// Per-participant state of one distributed consensus instance.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PconsState {
    owner: AgentId,
    tag: InstanceTag,
    inputs: PairSet,
    /// Phases processed so far.
    phase: u32,
    heard: BTreeSet<AgentId>,
    certified: Vec<AgentId>,
    t: usize,
    iterations: u32,
    universe: PairSet,
    ones: PairSet,
    strong: PairSet,
    outbox: Rc<Payload>,
    output: Option<PairSet>,
    output_phase: u32,
}

/// splitmix64 finalizer; used for the king order after the first two kings.
fn mix(i: u32, j: AgentId) -> u64 {
    let mut z = j ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// King of iteration `i` among the certified IDs (sorted ascending).
pub fn king(certified: &[AgentId], i: u32) -> Option<AgentId> {
    match i {
        0 => certified.first().copied(),
        1 => certified.last().copied(),
        _ => certified.iter().copied().min_by_key(|&j| (mix(i, j), j)),
    }
}

/// Phases the protocol takes once a participant has certified `n` members.
pub fn phases_for(n: usize) -> u32 {
    let t = n.saturating_sub(1) / 3;
    1 + 3 * (t as u32 + 2)
}

impl PconsState {
    pub fn init(
        owner: AgentId,
        inputs: &[InputPair],
        tag: InstanceTag,
    ) -> Result<PconsState, PbcError> {
        let inputs = pair_set(inputs)?;
        Ok(PconsState::from_set(owner, inputs, tag))
    }

    pub fn from_set(owner: AgentId, inputs: PairSet, tag: InstanceTag) -> PconsState {
        PconsState {
            owner,
            tag,
            outbox: Rc::new(Payload::Input(inputs.clone())),
            universe: inputs.clone(),
            ones: inputs.clone(),
            inputs,
            phase: 0,
            heard: BTreeSet::new(),
            certified: Vec::new(),
            t: 0,
            iterations: 0,
            strong: PairSet::new(),
            output: None,
            output_phase: 0,
        }
    }

    pub fn owner(&self) -> AgentId {
        self.owner
    }

    pub fn tag(&self) -> InstanceTag {
        self.tag
    }

    pub fn inputs(&self) -> &PairSet {
        &self.inputs
    }

    /// Index of the phase whose message is currently being broadcast.
    pub fn current_phase(&self) -> u32 {
        self.phase + 1
    }

    pub fn outgoing(&self) -> PconsMessage {
        PconsMessage {
            sender: self.owner,
            tag: self.tag,
            phase: self.current_phase(),
            payload: self.outbox.clone(),
        }
    }

    pub fn certified(&self) -> &[AgentId] {
        &self.certified
    }

    pub fn output(&self) -> Option<&PairSet> {
        self.output.as_ref()
    }

    pub fn is_finished(&self) -> bool {
        self.output.is_some()
    }

    /// Phases consumed before the output was produced.
    pub fn phase_count(&self) -> Result<u32, PbcError> {
        if self.output.is_some() {
            Ok(self.output_phase)
        } else {
            Err(PbcError::NotFinished)
        }
    }

    /// Ends the current phase. `inbox` holds at most one message per sender;
    /// the owner's own message is implied and any copy in `inbox` is ignored.
    pub fn on_phase_end(&mut self, inbox: &[PconsMessage]) -> Result<PconsMessage, PbcError> {
        if self.output.is_some() {
            return Err(PbcError::Finished);
        }
        self.advance(inbox);
        Ok(self.outgoing())
    }

    /// Keeps a finished instance participating so peers still see its
    /// votes. Identical to [`PconsState::on_phase_end`] otherwise; the output
    /// is frozen.
    pub fn ghost_phase_end(&mut self, inbox: &[PconsMessage]) -> PconsMessage {
        self.advance(inbox);
        self.outgoing()
    }

    fn advance(&mut self, inbox: &[PconsMessage]) {
        let phase = self.phase + 1;
        let mine = self.outgoing();
        let mut msgs: BTreeMap<AgentId, &Payload> = BTreeMap::new();
        msgs.insert(self.owner, &mine.payload);
        for m in inbox {
            if m.sender != self.owner && m.phase == phase && m.tag == self.tag {
                msgs.entry(m.sender).or_insert(&m.payload);
            }
        }
        match phase {
            1 => {
                self.heard = msgs.keys().copied().collect();
                // Pairs first mentioned later can only come from Byzantine
                // senders; leaving them out keeps them at 0 everywhere.
                for pl in msgs.values() {
                    if let Payload::Input(s) = pl {
                        self.universe.extend(s.iter().copied());
                    }
                }
                self.outbox = Rc::new(Payload::Echo {
                    heard: self.heard.clone(),
                    votes: self.ones.clone(),
                });
            }
            2 => {
                let p = self.heard.len();
                let need = (2 * p).div_ceil(3);
                let mut attest: BTreeMap<AgentId, usize> = BTreeMap::new();
                for pl in msgs.values() {
                    if let Payload::Echo { heard, .. } = pl {
                        for &j in heard {
                            *attest.entry(j).or_default() += 1;
                        }
                    }
                }
                let mut c: BTreeSet<AgentId> = attest
                    .into_iter()
                    .filter(|&(_, k)| k >= need)
                    .map(|(j, _)| j)
                    .collect();
                c.insert(self.owner);
                self.certified = c.into_iter().collect();
                self.t = (self.certified.len() - 1) / 3;
                self.iterations = self.t as u32 + 2;
                let votes = self.counted(&msgs, |pl| match pl {
                    Payload::Echo { votes, .. } => Some(votes),
                    _ => None,
                });
                self.round_vote(votes);
            }
            _ => {
                let r = (phase - 2) % 3;
                let iter = (phase - 2) / 3;
                match r {
                    0 => {
                        let votes = self.counted(&msgs, |pl| match pl {
                            Payload::Vote(s) => Some(s),
                            _ => None,
                        });
                        self.round_vote(votes);
                    }
                    1 => self.round_propose(&msgs),
                    _ => self.round_king(&msgs, iter),
                }
            }
        }
        self.phase = phase;
        if self.output.is_none()
            && phase >= 4
            && (phase - 1) % 3 == 0
            && (phase - 1) / 3 == self.iterations
        {
            self.output = Some(self.ones.clone());
            self.output_phase = phase;
        }
    }

    fn counted<'a, F>(&self, msgs: &BTreeMap<AgentId, &'a Payload>, pick: F) -> Vec<&'a PairSet>
    where
        F: Fn(&'a Payload) -> Option<&'a PairSet>,
    {
        msgs.iter()
            .filter(|(s, _)| self.certified.binary_search(s).is_ok())
            .filter_map(|(_, pl)| pick(pl))
            .collect()
    }

    fn round_vote(&mut self, votes: Vec<&PairSet>) {
        let n = self.certified.len();
        let need = n - self.t;
        let total = votes.len();
        let mut ones = PairSet::new();
        let mut bottoms = PairSet::new();
        for p in &self.universe {
            let c1 = votes.iter().filter(|v| v.contains(p)).count();
            let c0 = total - c1;
            let prop = if c1 >= need {
                Proposal::One
            } else if c0 >= need {
                Proposal::Zero
            } else {
                Proposal::Bottom
            };
            match prop {
                Proposal::One => {
                    ones.insert(*p);
                }
                Proposal::Bottom => {
                    bottoms.insert(*p);
                }
                Proposal::Zero => {}
            }
        }
        self.outbox = Rc::new(Payload::Propose { ones, bottoms });
    }

    fn round_propose(&mut self, msgs: &BTreeMap<AgentId, &Payload>) {
        let props: Vec<(&PairSet, &PairSet)> = msgs
            .iter()
            .filter(|(s, _)| self.certified.binary_search(s).is_ok())
            .filter_map(|(_, pl)| match pl {
                Payload::Propose { ones, bottoms } => Some((ones, bottoms)),
                _ => None,
            })
            .collect();
        let n = self.certified.len();
        let t = self.t;
        let mut strong = PairSet::new();
        for p in &self.universe {
            let (mut c1, mut c0) = (0, 0);
            for (o, b) in &props {
                if o.contains(p) {
                    c1 += 1;
                } else if !b.contains(p) {
                    c0 += 1;
                }
            }
            let adopt = if c1 >= t + 1 && c1 >= c0 {
                Some(true)
            } else if c0 >= t + 1 {
                Some(false)
            } else {
                None
            };
            if let Some(x) = adopt {
                if x {
                    self.ones.insert(*p);
                } else {
                    self.ones.remove(p);
                }
                let c = if x { c1 } else { c0 };
                if c >= n - t {
                    strong.insert(*p);
                }
            }
        }
        self.strong = strong;
        self.outbox = Rc::new(Payload::Vote(self.ones.clone()));
    }

    fn round_king(&mut self, msgs: &BTreeMap<AgentId, &Payload>, iter: u32) {
        let k = king(&self.certified, iter);
        let kv = k.and_then(|k| msgs.get(&k)).and_then(|pl| match pl {
            Payload::Vote(s) => Some(s),
            _ => None,
        });
        if let Some(kv) = kv {
            for p in &self.universe {
                if self.strong.contains(p) {
                    continue;
                }
                if kv.contains(p) {
                    self.ones.insert(*p);
                } else {
                    self.ones.remove(p);
                }
            }
        }
        self.strong.clear();
        self.outbox = Rc::new(Payload::Vote(self.ones.clone()));
    }
}

/// Ideal consensus used by the oracle mode. Pairs held by every good
/// participant are kept, pairs held by none are dropped, and the adversary
/// decides the rest through `include`.
pub fn oracle_decide(
    good_inputs: &BTreeMap<AgentId, PairSet>,
    include: &PairSet,
) -> Result<PairSet, PbcError> {
    let mut any = PairSet::new();
    for s in good_inputs.values() {
        any.extend(s.iter().copied());
    }
    if let Some(p) = include.iter().find(|p| !any.contains(p)) {
        return Err(PbcError::UnknownPair(*p));
    }
    let all: PairSet = any
        .iter()
        .filter(|p| good_inputs.values().all(|s| s.contains(p)))
        .copied()
        .collect();
    Ok(all.union(include).copied().collect())
}

/// Pairs held by some but not all good participants.
pub fn contested(good_inputs: &BTreeMap<AgentId, PairSet>) -> PairSet {
    let mut any = PairSet::new();
    for s in good_inputs.values() {
        any.extend(s.iter().copied());
    }
    any.into_iter()
        .filter(|p| !good_inputs.values().all(|s| s.contains(p)))
        .collect()
}
