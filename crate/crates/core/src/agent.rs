//! Per-agent protocol state and the per-round step.
//!
//! A good agent runs `MakeReliableGroup` through four stages (CollectID,
//! MakeCandidate, AgreeID, MakeGroup). Once some group of agents shares a
//! group ID, the members walk REL(gid) together and every agent that sees
//! enough of them follows the one with the smallest gid.

use alloc::collections::BTreeMap;
use alloc::rc::Rc;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use crate::explore::ExplorationPlan;
use crate::graph::Port;
use crate::idset::IdSet;
use crate::pbc::{InputPair, InstanceTag, PairSet, PbcError, PconsMessage, PconsState};
use crate::rendezvous::{rel_step, AgentId, RelMove, RelTiming};

/// Group ID; `None` stands for infinity (no group).
pub type Gid = Option<AgentId>;

/// Total order on gids with `None` largest.
#[inline]
pub fn gid_cmp(a: Gid, b: Gid) -> Ordering {
    match (a, b) {
        (None, None) => Ordering::Equal,
        (None, Some(_)) => Ordering::Greater,
        (Some(_), None) => Ordering::Less,
        (Some(x), Some(y)) => x.cmp(&y),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    CollectId,
    MakeCandidate,
    AgreeId,
    MakeGroup,
}

impl Stage {
    pub fn code(self) -> &'static str {
        match self {
            Stage::CollectId => "C",
            Stage::MakeCandidate => "M",
            Stage::AgreeId => "A",
            Stage::MakeGroup => "G",
        }
    }

    pub fn from_code(s: &str) -> Option<Stage> {
        match s {
            "C" => Some(Stage::CollectId),
            "M" => Some(Stage::MakeCandidate),
            "A" => Some(Stage::AgreeId),
            "G" => Some(Stage::MakeGroup),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PbcMode {
    /// Ideal consensus decided by the simulator in one phase.
    Oracle,
    /// The message-passing protocol run over co-located meetings.
    Distributed,
}

impl PbcMode {
    pub fn name(self) -> &'static str {
        match self {
            PbcMode::Oracle => "oracle",
            PbcMode::Distributed => "distributed",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    Stay,
    Move(Port),
    Terminate,
}

/// Outcome of a step. Followers defer to what their group commits to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Decision {
    Act(Action),
    Follow(IdSet),
}

/// What a member of a followed group committed to this round.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MemberAction {
    Terminated,
    Committed(Action),
    Unknown,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AgentError {
    EmptyCommonSet,
    Pbc(PbcError),
}

impl fmt::Display for AgentError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AgentError::EmptyCommonSet => write!(f, "P_c is empty on entering MakeGroup"),
            AgentError::Pbc(e) => e.fmt(f),
        }
    }
}

impl core::error::Error for AgentError {}

/// Everything a good agent needs besides its own state.
#[derive(Clone, Debug)]
pub struct Protocol {
    pub plan: Arc<ExplorationPlan>,
    pub timing: RelTiming,
    pub t_ini: u64,
    pub pbc_mode: PbcMode,
}

impl Protocol {
    pub const DEFAULT_T_INI: u64 = 4;

    pub fn new(plan: ExplorationPlan, scale: u64, pbc_mode: PbcMode) -> Protocol {
        let timing = RelTiming::new(plan.t_ex, scale);
        Protocol {
            plan: Arc::new(plan),
            timing,
            t_ini: Protocol::DEFAULT_T_INI,
            pbc_mode,
        }
    }

    #[inline]
    pub fn t_rel(&self, id: AgentId) -> u64 {
        self.timing.t_rel(id)
    }

    #[inline]
    fn rel(&self, id: AgentId, t: u64, obs: &Observation<'_>) -> Action {
        match rel_step(id, t, &self.plan, obs.degree, obs.inport) {
            Ok(RelMove::Port(p)) => Action::Move(p),
            _ => Action::Stay,
        }
    }
}

/// Key shared by exactly the agents that entered AgreeID in the same round.
pub type CandidateKey = (u64, u64);

/// Consensus outputs decided by the simulator in oracle mode, per candidate.
#[derive(Clone, Debug, Default)]
pub struct OracleBoard {
    pub verdicts: BTreeMap<CandidateKey, (PairSet, PairSet)>,
}

#[derive(Clone, Debug)]
pub enum Consensus {
    Distributed(PconsState),
    Oracle { output: Option<PairSet> },
}

impl Consensus {
    fn output(&self) -> Option<&PairSet> {
        match self {
            Consensus::Distributed(s) => s.output(),
            Consensus::Oracle { output } => output.as_ref(),
        }
    }
}

/// The publicly visible part of an agent, as seen by co-located agents at
/// the start of a round. Byzantine agents present arbitrary values except
/// their ID.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Presented {
    pub id: AgentId,
    pub stage: Stage,
    pub length: u64,
    pub elapsed: u64,
    pub count: u64,
    pub ready: bool,
    pub end_make_candidate: bool,
    pub gid: Gid,
    pub terminated: bool,
    pub s_p: Rc<IdSet>,
    pub s_c: Rc<IdSet>,
    pub msg_s: Option<PconsMessage>,
    pub msg_p: Option<PconsMessage>,
}

impl Presented {
    /// A freshly started agent, before its first round.
    pub fn initial(id: AgentId, t_ini: u64) -> Presented {
        Presented {
            id,
            stage: Stage::CollectId,
            length: t_ini,
            elapsed: 0,
            count: 0,
            ready: false,
            end_make_candidate: false,
            gid: None,
            terminated: false,
            s_p: Rc::new(IdSet::singleton(id)),
            s_c: Rc::new(IdSet::new()),
            msg_s: None,
            msg_p: None,
        }
    }
}

/// What an agent perceives at the start of a round. `here` lists every agent
/// at the node, itself included, sorted by ID.
#[derive(Clone, Copy, Debug)]
pub struct Observation<'a> {
    pub degree: usize,
    pub inport: Option<Port>,
    pub here: &'a [Presented],
    pub oracle: Option<&'a OracleBoard>,
}

#[derive(Clone, Debug)]
pub struct AgentCore {
    pub id: AgentId,
    pub stage: Stage,
    pub length: u64,
    pub elapsed: u64,
    pub count: u64,
    pub ready: bool,
    pub end_make_candidate: bool,
    pub gid: Gid,
    pub r: IdSet,
    pub s_p: Rc<IdSet>,
    pub s_c: Rc<IdSet>,
    pub p_p: IdSet,
    pub p_c: Vec<AgentId>,
    pub d: IdSet,
    pub min_gid: Gid,
    pub s_gid: IdSet,
    pub s_rg: IdSet,
    pub terminated: bool,
    /// Rounds executed so far.
    pub clock: u64,
    pub candidate: Option<CandidateKey>,
    pub pcons_s: Option<Consensus>,
    pub pcons_p: Option<Consensus>,
    inbox_s: Vec<PconsMessage>,
    inbox_p: Vec<PconsMessage>,
    /// Whether this agent has ever deferred to a group.
    pub followed: bool,
}

impl AgentCore {
    pub fn new(id: AgentId, t_ini: u64) -> AgentCore {
        AgentCore {
            id,
            stage: Stage::CollectId,
            length: t_ini,
            elapsed: 0,
            count: 0,
            ready: false,
            end_make_candidate: false,
            gid: None,
            r: IdSet::new(),
            s_p: Rc::new(IdSet::singleton(id)),
            s_c: Rc::new(IdSet::new()),
            p_p: IdSet::new(),
            p_c: Vec::new(),
            d: IdSet::new(),
            min_gid: None,
            s_gid: IdSet::new(),
            s_rg: IdSet::new(),
            terminated: false,
            clock: 0,
            candidate: None,
            pcons_s: None,
            pcons_p: None,
            inbox_s: Vec::new(),
            inbox_p: Vec::new(),
            followed: false,
        }
    }

    fn outgoing(c: &Option<Consensus>) -> Option<PconsMessage> {
        match c {
            Some(Consensus::Distributed(s)) => Some(s.outgoing()),
            _ => None,
        }
    }

    pub fn present(&self) -> Presented {
        let talking = matches!(self.stage, Stage::AgreeId | Stage::MakeGroup) && self.gid.is_none();
        Presented {
            id: self.id,
            stage: self.stage,
            length: self.length,
            elapsed: self.elapsed,
            count: self.count,
            ready: self.ready,
            end_make_candidate: self.end_make_candidate,
            gid: self.gid,
            terminated: self.terminated,
            s_p: self.s_p.clone(),
            s_c: self.s_c.clone(),
            msg_s: if talking {
                AgentCore::outgoing(&self.pcons_s)
            } else {
                None
            },
            msg_p: if talking {
                AgentCore::outgoing(&self.pcons_p)
            } else {
                None
            },
        }
    }

    /// Phases the distributed consensus instances needed, once both finished.
    pub fn pbc_phases(&self) -> Option<u32> {
        let one = |c: &Option<Consensus>| match c {
            Some(Consensus::Distributed(s)) => s.phase_count().ok(),
            Some(Consensus::Oracle { output: Some(_) }) => Some(1),
            _ => None,
        };
        Some(one(&self.pcons_s)?.max(one(&self.pcons_p)?))
    }

    /// Applies a resolved FOLLOW outcome.
    pub fn apply_follow(&mut self, action: Action) {
        if action == Action::Terminate {
            self.terminated = true;
        }
    }
}

/// Gids carried by at least `|S_p| / 8` co-located agents (terminated ones
/// included), and the smallest of them.
pub fn detect_reliable_groups(here: &[Presented], s_p_len: usize) -> (IdSet, Gid) {
    if here.iter().all(|a| a.gid.is_none()) {
        return (IdSet::new(), None);
    }
    let mut counts: BTreeMap<AgentId, usize> = BTreeMap::new();
    for a in here {
        if let Some(g) = a.gid {
            *counts.entry(g).or_default() += 1;
        }
    }
    let s_gid: IdSet = counts
        .into_iter()
        .filter(|&(_, c)| 8 * c >= s_p_len)
        .map(|(g, _)| g)
        .collect();
    let min = s_gid.first();
    (s_gid, min)
}

/// Strict majority vote over what the members of `s_rg` did this round.
pub fn follow<F: Fn(AgentId) -> MemberAction>(s_rg: &IdSet, action_of: F) -> Action {
    let m = s_rg.len();
    let mut term = 0;
    let mut ports: BTreeMap<Port, usize> = BTreeMap::new();
    for id in s_rg.iter() {
        match action_of(id) {
            MemberAction::Terminated | MemberAction::Committed(Action::Terminate) => term += 1,
            MemberAction::Committed(Action::Move(p)) => *ports.entry(p).or_default() += 1,
            _ => {}
        }
    }
    if 2 * term > m {
        return Action::Terminate;
    }
    match ports.into_iter().find(|&(_, c)| 2 * c > m) {
        Some((p, _)) => Action::Move(p),
        None => Action::Stay,
    }
}

/// One round of the gathering algorithm for a good, non-terminated agent.
pub fn step(proto: &Protocol, core: &mut AgentCore, obs: &Observation<'_>) -> Decision {
    core.clock += 1;
    if core.terminated {
        return Decision::Act(Action::Stay);
    }
    if core.stage == Stage::CollectId {
        return Decision::Act(make_reliable_group(proto, core, obs));
    }
    let (s_gid, min_gid) = detect_reliable_groups(obs.here, core.s_p.len());
    core.s_gid = s_gid;
    if !core.s_gid.is_empty() {
        core.min_gid = min_gid;
    }
    if !core.s_gid.is_empty() && gid_cmp(core.gid, core.min_gid) == Ordering::Greater {
        core.s_rg = obs
            .here
            .iter()
            .filter(|a| a.gid == core.min_gid)
            .map(|a| a.id)
            .collect();
        core.followed = true;
        return Decision::Follow(core.s_rg.clone());
    }
    if let Some(g) = core.gid {
        core.elapsed += 1;
        if core.length == core.elapsed {
            core.terminated = true;
            return Decision::Act(Action::Terminate);
        }
        return Decision::Act(proto.rel(g, core.elapsed - 1, obs));
    }
    Decision::Act(make_reliable_group(proto, core, obs))
}

fn make_reliable_group(proto: &Protocol, core: &mut AgentCore, obs: &Observation<'_>) -> Action {
    core.elapsed += 1;
    match core.stage {
        Stage::CollectId => collect_id(proto, core, obs),
        Stage::MakeCandidate => make_candidate(proto, core, obs),
        Stage::AgreeId => agree_id(proto, core, obs),
        Stage::MakeGroup => match make_group(proto, core, obs) {
            Ok(a) => a,
            // A candidate that lost its own members to the adversary keeps
            // walking so it can still meet a reliable group.
            Err(_) => proto.rel(core.id, core.elapsed - 1, obs),
        },
    }
}

fn absorb_ready(core: &mut AgentCore, obs: &Observation<'_>) {
    core.r
        .merge_sorted(obs.here.iter().filter(|a| a.ready).map(|a| a.id));
}

fn collect_id(proto: &Protocol, core: &mut AgentCore, obs: &Observation<'_>) -> Action {
    absorb_ready(core, obs);
    if 2 * (proto.t_rel(core.id) + 1) > core.length {
        if core.length == core.elapsed {
            core.elapsed = 0;
            core.length *= 2;
        }
        return Action::Stay;
    }
    if !core.s_p.contains_sorted(obs.here.iter().map(|a| a.id)) {
        Rc::make_mut(&mut core.s_p).merge_sorted(obs.here.iter().map(|a| a.id));
    }
    if core.length > core.elapsed {
        proto.rel(core.id, core.elapsed - 1, obs)
    } else {
        core.elapsed = 0;
        core.length *= 2;
        core.stage = Stage::MakeCandidate;
        Action::Stay
    }
}

fn make_candidate(proto: &Protocol, core: &mut AgentCore, obs: &Observation<'_>) -> Action {
    absorb_ready(core, obs);
    let sp = core.s_p.len();
    if core.elapsed == 1 && !core.ready {
        let patient = core
            .s_p
            .iter()
            .filter(|&id| core.length >= 4 * (proto.t_rel(id) + 1))
            .count();
        if 9 * patient >= 8 * sp || 9 * core.r.len() >= 4 * sp {
            core.ready = true;
            core.r.insert(core.id);
        }
    }
    if core.elapsed == 1 && 9 * core.r.len() >= 6 * sp {
        core.end_make_candidate = true;
    }
    if core.length > core.elapsed {
        proto.rel(core.id, core.elapsed - 1, obs)
    } else {
        core.elapsed = 0;
        core.length *= 2;
        if core.end_make_candidate {
            core.stage = Stage::AgreeId;
            core.candidate = Some((core.length, core.clock));
        }
        Action::Stay
    }
}

// Collects this phase's consensus messages from same-candidate agents.
fn gather_messages(core: &mut AgentCore, obs: &Observation<'_>) {
    let phase = core.count as u32;
    // `here` is sorted by ID and the inboxes by sender, so one merged walk
    // finds the new senders.
    let (mut js, mut jp) = (0, 0);
    for a in obs.here {
        if a.length != core.length
            || a.id == core.id
            || !matches!(a.stage, Stage::AgreeId | Stage::MakeGroup)
        {
            continue;
        }
        offer(
            &mut core.inbox_s,
            &mut js,
            a.id,
            &a.msg_s,
            phase,
            InstanceTag::S,
        );
        offer(
            &mut core.inbox_p,
            &mut jp,
            a.id,
            &a.msg_p,
            phase,
            InstanceTag::P,
        );
    }
}

#[inline(always)]
fn offer(
    inbox: &mut Vec<PconsMessage>,
    j: &mut usize,
    id: AgentId,
    m: &Option<PconsMessage>,
    phase: u32,
    tag: InstanceTag,
) {
    let Some(m) = m else { return };
    if m.phase != phase || m.sender != id || m.tag != tag {
        return;
    }
    let senders = &inbox[*j..];
    let skip = senders.iter().take_while(|x| x.sender < id).count();
    *j += skip;
    if senders.get(skip).is_none_or(|x| x.sender != id) {
        insert_message(inbox, *j, m);
    }
}

#[cold]
#[inline(never)]
fn insert_message(inbox: &mut Vec<PconsMessage>, at: usize, m: &PconsMessage) {
    inbox.insert(at, m.clone());
}

fn end_phase(core: &mut AgentCore, obs: &Observation<'_>) {
    let key = core.candidate;
    let inbox_s = core::mem::take(&mut core.inbox_s);
    let inbox_p = core::mem::take(&mut core.inbox_p);
    for (c, inbox, tag) in [
        (&mut core.pcons_s, inbox_s, InstanceTag::S),
        (&mut core.pcons_p, inbox_p, InstanceTag::P),
    ] {
        match c {
            Some(Consensus::Distributed(s)) => {
                if s.is_finished() {
                    s.ghost_phase_end(&inbox);
                } else {
                    let _ = s.on_phase_end(&inbox);
                }
            }
            Some(Consensus::Oracle { output }) => {
                if output.is_none() {
                    if let Some((vs, vp)) = key.and_then(|k| obs.oracle?.verdicts.get(&k)) {
                        *output = Some(if tag == InstanceTag::S {
                            vs.clone()
                        } else {
                            vp.clone()
                        });
                    }
                }
            }
            None => {}
        }
    }
}

pub fn pairs_of(ids: &IdSet) -> PairSet {
    ids.iter().map(|id| InputPair::new(id, 1)).collect()
}

fn ids_of(pairs: &PairSet) -> IdSet {
    pairs.iter().map(|p| p.pair_id).collect()
}

fn agree_id(proto: &Protocol, core: &mut AgentCore, obs: &Observation<'_>) -> Action {
    if core.count == 0 {
        let joining = obs
            .here
            .iter()
            .filter(|a| a.length == core.length && a.stage == Stage::AgreeId);
        core.p_p.merge_sorted(joining.map(|a| a.id));
    } else {
        gather_messages(core, obs);
    }
    if core.length > core.elapsed {
        return proto.rel(core.id, core.elapsed - 1, obs);
    }
    if core.count == 0 {
        let (s, p) = match proto.pbc_mode {
            PbcMode::Distributed => (
                Consensus::Distributed(PconsState::from_set(
                    core.id,
                    pairs_of(&core.s_p),
                    InstanceTag::S,
                )),
                Consensus::Distributed(PconsState::from_set(
                    core.id,
                    pairs_of(&core.p_p),
                    InstanceTag::P,
                )),
            ),
            PbcMode::Oracle => (
                Consensus::Oracle { output: None },
                Consensus::Oracle { output: None },
            ),
        };
        core.pcons_s = Some(s);
        core.pcons_p = Some(p);
    } else {
        end_phase(core, obs);
    }
    core.elapsed = 0;
    core.count += 1;
    let outs = match (&core.pcons_s, &core.pcons_p) {
        (Some(s), Some(p)) => s
            .output()
            .zip(p.output())
            .map(|(a, b)| (ids_of(a), ids_of(b))),
        _ => None,
    };
    if let Some((s_c, p_c)) = outs {
        core.s_c = Rc::new(s_c);
        core.p_c = p_c.as_slice().to_vec();
        core.stage = Stage::MakeGroup;
    }
    Action::Stay
}

/// The MakeGroup cycle. Fails when the agreed member list is empty, which
/// only happens when the adversary controls the agent's whole candidate.
pub fn make_group(
    proto: &Protocol,
    core: &mut AgentCore,
    obs: &Observation<'_>,
) -> Result<Action, AgentError> {
    gather_messages(core, obs);
    if core.length >= 2 * core.elapsed {
        return Ok(proto.rel(core.id, core.elapsed - 1, obs));
    }
    if core.length > core.elapsed {
        if core.p_c.is_empty() {
            return Err(AgentError::EmptyCommonSet);
        }
        let target = core.p_c[(core.count % core.p_c.len() as u64) as usize];
        if target == core.id || obs.here.iter().any(|a| a.id == target) {
            return Ok(Action::Stay);
        }
        return Ok(proto.rel(core.id, core.elapsed - 1, obs));
    }
    end_phase(core, obs);
    core.elapsed = 0;
    core.count += 1;
    let sc = core.s_c.clone();
    core.d = obs
        .here
        .iter()
        .filter(|a| {
            9 * a.s_c.len() >= 8 * a.s_p.len()
                && a.length == core.length
                && *a.s_c == *sc
                && a.stage == Stage::MakeGroup
        })
        .map(|a| a.id)
        .collect();
    if 9 * sc.len() >= 8 * core.s_p.len() && 9 * core.d.len() >= 3 * sc.len() {
        core.gid = core.d.first();
    }
    Ok(Action::Stay)
}
