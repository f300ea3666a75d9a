//! Lockstep Look/Compute/Move scheduler.
//!
//! Each round every agent looks at its node, every live good agent computes
//! one step, the adversary picks the Byzantine agents' presentations and
//! moves, and all moves happen at once. Agents that cross one edge in
//! opposite directions do not meet.
//!
//! Compute runs in two sub-phases. Agents that act on their own commit first;
//! agents executing FOLLOW then copy the majority of their group's committed
//! actions, so a group and its followers move together in the same round.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adversary::{AgentView, ByzMove, Strategy, StrategyKind, WorldView};
use crate::agent::{
    self, pairs_of, Action, AgentCore, CandidateKey, Consensus, Decision, MemberAction,
    Observation, OracleBoard, PbcMode, Presented, Protocol, Stage,
};
use crate::graph::{NodeId, Port, PortGraph};
use crate::idset::IdSet;
use crate::pbc::{self, PairSet};
use crate::rendezvous::{bit_len, AgentId};
use crate::trace::{Detail, TraceAction, TraceRecord, TraceSink};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ByzSpec {
    pub id: AgentId,
    pub node: NodeId,
    pub strategy: StrategyKind,
}

/// Everything that determines a run besides the graph and protocol.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RunConfig {
    /// Good agents and their start nodes.
    pub good: Vec<(AgentId, NodeId)>,
    pub byzantine: Vec<ByzSpec>,
    pub seed: u64,
    /// `None` picks [`default_max_rounds`].
    pub max_rounds: Option<u64>,
}

impl RunConfig {
    pub fn k(&self) -> usize {
        self.good.len() + self.byzantine.len()
    }

    pub fn f(&self) -> usize {
        self.byzantine.len()
    }

    pub fn max_good_id(&self) -> Option<AgentId> {
        self.good.iter().map(|g| g.0).max()
    }
}

/// Default round cap: `128 (f + 2)` REL budgets of the largest good ID, plus
/// room for the distributed consensus, whose phase count grows with the
/// candidate size rather than with `f`.
pub fn default_max_rounds(proto: &Protocol, cfg: &RunConfig) -> u64 {
    let t_rel = cfg.max_good_id().map_or(0, |id| proto.t_rel(id)) + 1;
    let base = 128 * (cfg.f() as u64 + 2) * t_rel;
    match proto.pbc_mode {
        PbcMode::Oracle => base,
        PbcMode::Distributed => base + 32 * pbc::phases_for(cfg.k()) as u64 * t_rel,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SimError {
    NoGoodAgents,
    ZeroId,
    DuplicateId(AgentId),
    NodeOutOfRange { agent: AgentId, node: NodeId },
    GraphTooLarge { nodes: usize, max_nodes: usize },
    IdTampering { agent: AgentId, presented: AgentId },
    IllegalPort { agent: AgentId, port: Port },
    NotByzantine(AgentId),
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::NoGoodAgents => write!(f, "at least one good agent is required"),
            SimError::ZeroId => write!(f, "agent IDs must be positive"),
            SimError::DuplicateId(id) => write!(f, "duplicate agent ID {id}"),
            SimError::NodeOutOfRange { agent, node } => {
                write!(f, "agent {agent} placed on missing node {node}")
            }
            SimError::GraphTooLarge { nodes, max_nodes } => {
                write!(
                    f,
                    "graph has {nodes} nodes but the plan covers at most {max_nodes}"
                )
            }
            SimError::IdTampering { agent, presented } => {
                write!(f, "Byzantine agent {agent} presented ID {presented}")
            }
            SimError::IllegalPort { agent, port } => {
                write!(
                    f,
                    "agent {agent} tried to leave through missing port {port}"
                )
            }
            SimError::NotByzantine(id) => write!(f, "agent {id} is not Byzantine"),
        }
    }
}

impl core::error::Error for SimError {}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AgentOutcome {
    pub id: AgentId,
    pub byzantine: bool,
    pub node: NodeId,
    pub terminated_at: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimResult {
    pub gathered: bool,
    pub final_node: Option<NodeId>,
    /// Round in which the last good agent terminated, or the rounds executed
    /// if some never did.
    pub rounds_elapsed: u64,
    pub hit_max_rounds: bool,
    pub agents: Vec<AgentOutcome>,
    pub k: usize,
    pub f: usize,
    /// Bit length of the largest good ID.
    pub lambda_good: u32,
    pub t_rel_max_good: u64,
    /// Largest number of consensus phases any good agent needed.
    pub pbc_phases: Option<u32>,
    /// First round in which at least `ceil(k/8)` good agents share one gid.
    pub first_group_round: Option<u64>,
}

enum Kind {
    Good(Box<AgentCore>),
    Byz,
}

struct Slot {
    id: AgentId,
    node: NodeId,
    inport: Option<Port>,
    presented: Presented,
    kind: Kind,
    terminated_at: Option<u64>,
}

/// A running simulation.
pub struct World<'g> {
    graph: &'g PortGraph,
    proto: Protocol,
    slots: Vec<Slot>,
    round: u64,
    max_rounds: u64,
    rng: ChaCha8Rng,
    board: OracleBoard,
    f: usize,
    first_group_round: Option<u64>,
    strategies: Vec<(usize, Box<dyn Strategy>)>,
    // Scratch buffers reused across rounds.
    keyed: Vec<(NodeId, AgentId, usize)>,
    order: Vec<usize>,
    pos: Vec<usize>,
    here: Vec<Presented>,
    ranges: Vec<(usize, usize)>,
    committed: Vec<MemberAction>,
    actions: Vec<Option<TraceAction>>,
    stage_before: Vec<Stage>,
}

impl<'g> World<'g> {
    pub fn new(
        graph: &'g PortGraph,
        proto: Protocol,
        cfg: &RunConfig,
    ) -> Result<World<'g>, SimError> {
        if cfg.good.is_empty() {
            return Err(SimError::NoGoodAgents);
        }
        if graph.node_count() > proto.plan.max_nodes {
            return Err(SimError::GraphTooLarge {
                nodes: graph.node_count(),
                max_nodes: proto.plan.max_nodes,
            });
        }
        let mut slots: Vec<Slot> = Vec::with_capacity(cfg.k());
        for &(id, node) in &cfg.good {
            let core = AgentCore::new(id, proto.t_ini);
            slots.push(Slot {
                id,
                node,
                inport: None,
                presented: core.present(),
                kind: Kind::Good(Box::new(core)),
                terminated_at: None,
            });
        }
        for b in &cfg.byzantine {
            slots.push(Slot {
                id: b.id,
                node: b.node,
                inport: None,
                presented: Presented::initial(b.id, proto.t_ini),
                kind: Kind::Byz,
                terminated_at: None,
            });
        }
        slots.sort_by_key(|s| s.id);
        let strategies = cfg
            .byzantine
            .iter()
            .map(|b| {
                let i = slots
                    .iter()
                    .position(|s| s.id == b.id)
                    .expect("slot exists");
                (i, b.strategy.instantiate(b.id, cfg.seed))
            })
            .collect();
        for w in slots.windows(2) {
            if w[0].id == w[1].id {
                return Err(SimError::DuplicateId(w[0].id));
            }
        }
        for s in &slots {
            if s.id == 0 {
                return Err(SimError::ZeroId);
            }
            if s.node >= graph.node_count() {
                return Err(SimError::NodeOutOfRange {
                    agent: s.id,
                    node: s.node,
                });
            }
        }
        let max_rounds = cfg
            .max_rounds
            .unwrap_or_else(|| default_max_rounds(&proto, cfg));
        Ok(World {
            graph,
            proto,
            slots,
            round: 0,
            max_rounds,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            board: OracleBoard::default(),
            f: cfg.f(),
            first_group_round: None,
            strategies,
            keyed: Vec::new(),
            order: Vec::new(),
            pos: Vec::new(),
            here: Vec::new(),
            ranges: Vec::new(),
            committed: Vec::new(),
            actions: Vec::new(),
            stage_before: Vec::new(),
        })
    }

    /// Drives Byzantine agent `id` with a custom strategy instead of its
    /// configured one.
    pub fn set_strategy(
        &mut self,
        id: AgentId,
        strategy: Box<dyn Strategy>,
    ) -> Result<(), SimError> {
        match self
            .strategies
            .iter_mut()
            .find(|(i, _)| self.slots[*i].id == id)
        {
            Some(entry) => {
                entry.1 = strategy;
                Ok(())
            }
            None => Err(SimError::NotByzantine(id)),
        }
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn max_rounds(&self) -> u64 {
        self.max_rounds
    }

    pub fn protocol(&self) -> &Protocol {
        &self.proto
    }

    /// Good agents' states, by ascending ID.
    pub fn good_cores(&self) -> impl Iterator<Item = (&AgentCore, NodeId)> + '_ {
        self.slots.iter().filter_map(|s| match &s.kind {
            Kind::Good(c) => Some((&**c, s.node)),
            Kind::Byz => None,
        })
    }

    pub fn positions(&self) -> impl Iterator<Item = (AgentId, NodeId)> + '_ {
        self.slots.iter().map(|s| (s.id, s.node))
    }

    /// Every good agent terminated, all on one node.
    pub fn check_gathered(&self) -> bool {
        let mut node = None;
        for (c, n) in self.good_cores() {
            if !c.terminated || node.is_some_and(|m| m != n) {
                return false;
            }
            node = Some(n);
        }
        true
    }

    pub fn all_good_terminated(&self) -> bool {
        self.good_cores().all(|(c, _)| c.terminated)
    }

    // Lets every strategy decide, then installs the presentations in `here`.
    fn byzantine_moves(&mut self) -> Result<(), SimError> {
        let mut moves: Vec<(usize, ByzMove)> = Vec::with_capacity(self.strategies.len());
        {
            let here = &self.here;
            let pos = &self.pos;
            let views: Vec<AgentView<'_>> = self
                .slots
                .iter()
                .enumerate()
                .map(|(i, s)| AgentView {
                    id: s.id,
                    node: s.node,
                    inport: s.inport,
                    presented: &here[pos[i]],
                    core: match &s.kind {
                        Kind::Good(c) => Some(&**c),
                        Kind::Byz => None,
                    },
                })
                .collect();
            let view = WorldView {
                graph: self.graph,
                round: self.round + 1,
                proto: &self.proto,
                agents: &views,
            };
            for (i, st) in self.strategies.iter_mut() {
                moves.push((*i, st.decide(&view, self.slots[*i].id)));
            }
        }
        for (i, m) in moves {
            let s = &mut self.slots[i];
            if m.presented.id != s.id {
                return Err(SimError::IdTampering {
                    agent: s.id,
                    presented: m.presented.id,
                });
            }
            if let Action::Move(p) = m.action {
                if p == 0 || p as usize > self.graph.degree(s.node) {
                    return Err(SimError::IllegalPort {
                        agent: s.id,
                        port: p,
                    });
                }
            }
            let m_action = if m.presented.terminated {
                MemberAction::Terminated
            } else {
                MemberAction::Committed(m.action)
            };
            self.committed[i] = m_action;
            self.actions[i] = Some(TraceAction {
                followed: false,
                action: m.action,
            });
            s.presented = m.presented.clone();
            self.here[self.pos[i]] = m.presented;
        }
        Ok(())
    }

    fn update_oracle(&mut self) {
        if self.proto.pbc_mode != PbcMode::Oracle {
            return;
        }
        let mut pending: Vec<CandidateKey> = Vec::new();
        for s in &self.slots {
            if let Kind::Good(c) = &s.kind {
                if let (Stage::AgreeId, 1, Some(key)) = (c.stage, c.count, c.candidate) {
                    let open = matches!(c.pcons_s, Some(Consensus::Oracle { output: None }));
                    if open && !self.board.verdicts.contains_key(&key) && !pending.contains(&key) {
                        pending.push(key);
                    }
                }
            }
        }
        for key in pending {
            let mut ins: BTreeMap<AgentId, PairSet> = BTreeMap::new();
            let mut inp: BTreeMap<AgentId, PairSet> = BTreeMap::new();
            for s in &self.slots {
                if let Kind::Good(c) = &s.kind {
                    if c.candidate == Some(key) {
                        ins.insert(c.id, pairs_of(&c.s_p));
                        inp.insert(c.id, pairs_of(&c.p_p));
                    }
                }
            }
            let mut verdict = |inputs: &BTreeMap<AgentId, PairSet>| {
                let include: PairSet = pbc::contested(inputs)
                    .into_iter()
                    .filter(|_| self.f == 0 || self.rng.random_bool(0.5))
                    .collect();
                pbc::oracle_decide(inputs, &include).expect("choices drawn from good inputs")
            };
            let vs = verdict(&ins);
            let vp = verdict(&inp);
            self.board.verdicts.insert(key, (vs, vp));
        }
    }

    /// Executes one round.
    pub fn step(&mut self, sink: &mut dyn TraceSink) -> Result<(), SimError> {
        let r = self.round + 1;
        let k = self.slots.len();

        // Look: presentations grouped by node, ascending ID within a node.
        let n = self.graph.node_count();
        self.keyed.clear();
        self.keyed.extend(
            self.slots
                .iter()
                .enumerate()
                .map(|(i, s)| (s.node, s.id, i)),
        );
        self.keyed.sort_unstable();
        self.order.clear();
        self.order.extend(self.keyed.iter().map(|t| t.2));
        self.pos.resize(k, 0);
        self.here.clear();
        self.ranges.clear();
        self.ranges.resize(n, (0, 0));
        for (at, &i) in self.order.iter().enumerate() {
            let s = &self.slots[i];
            self.pos[i] = at;
            if self.ranges[s.node].1 == 0 {
                self.ranges[s.node].0 = at;
            }
            self.ranges[s.node].1 = at + 1;
            self.here.push(match &s.kind {
                Kind::Good(c) => c.present(),
                Kind::Byz => s.presented.clone(),
            });
        }
        self.committed.clear();
        self.committed.resize(k, MemberAction::Unknown);
        self.actions.clear();
        self.actions.resize(k, None);
        self.byzantine_moves()?;
        self.update_oracle();

        // Compute, first sub-phase.
        let mut followers: Vec<(usize, IdSet)> = Vec::new();
        self.stage_before.clear();
        let oracle = (self.proto.pbc_mode == PbcMode::Oracle).then_some(&self.board);
        for (i, s) in self.slots.iter_mut().enumerate() {
            let Kind::Good(c) = &mut s.kind else {
                self.stage_before.push(Stage::CollectId);
                continue;
            };
            self.stage_before.push(c.stage);
            if c.terminated {
                self.committed[i] = MemberAction::Terminated;
                continue;
            }
            let (lo, hi) = self.ranges[s.node];
            let obs = Observation {
                degree: self.graph.degree(s.node),
                inport: s.inport,
                here: &self.here[lo..hi],
                oracle,
            };
            match agent::step(&self.proto, c, &obs) {
                Decision::Act(a) => {
                    self.committed[i] = MemberAction::Committed(a);
                    self.actions[i] = Some(TraceAction {
                        followed: false,
                        action: a,
                    });
                }
                Decision::Follow(rg) => followers.push((i, rg)),
            }
        }

        // Compute, second sub-phase: followers in ascending (minGID, id).
        if !followers.is_empty() {
            followers.sort_by_key(|(i, _)| match &self.slots[*i].kind {
                Kind::Good(c) => (c.min_gid, c.id),
                Kind::Byz => (None, 0),
            });
            let index =
                |slots: &[Slot], id: AgentId| slots.binary_search_by_key(&id, |s| s.id).ok();
            loop {
                let mut progress = false;
                let mut rest = Vec::new();
                for (i, rg) in core::mem::take(&mut followers) {
                    let me = self.slots[i].id;
                    let ready = rg.iter().all(|m| {
                        m == me
                            || index(&self.slots, m)
                                .is_some_and(|j| self.committed[j] != MemberAction::Unknown)
                    });
                    if ready {
                        let committed = &self.committed;
                        let slots = &self.slots;
                        let a = agent::follow(&rg, |m| {
                            index(slots, m).map_or(MemberAction::Unknown, |j| committed[j])
                        });
                        self.committed[i] = MemberAction::Committed(a);
                        self.actions[i] = Some(TraceAction {
                            followed: true,
                            action: a,
                        });
                        progress = true;
                    } else {
                        rest.push((i, rg));
                    }
                }
                followers = rest;
                if !progress || followers.is_empty() {
                    break;
                }
            }
            for (i, _) in followers {
                self.actions[i] = Some(TraceAction {
                    followed: true,
                    action: Action::Stay,
                });
            }
        }

        // Move.
        for (i, s) in self.slots.iter_mut().enumerate() {
            let Some(ta) = self.actions[i] else { continue };
            match ta.action {
                Action::Move(p) => {
                    let (u, q) = self.graph.follow(s.node, p).ok_or(SimError::IllegalPort {
                        agent: s.id,
                        port: p,
                    })?;
                    s.node = u;
                    s.inport = Some(q);
                }
                Action::Terminate => {
                    if let Kind::Good(c) = &mut s.kind {
                        c.apply_follow(Action::Terminate);
                        s.terminated_at.get_or_insert(r);
                    }
                }
                Action::Stay => {}
            }
        }
        self.round = r;

        if self.first_group_round.is_none() {
            let need = k.div_ceil(8);
            let mut by_gid: BTreeMap<AgentId, usize> = BTreeMap::new();
            for s in &self.slots {
                if let Kind::Good(c) = &s.kind {
                    if let Some(g) = c.gid {
                        *by_gid.entry(g).or_default() += 1;
                    }
                }
            }
            if by_gid.values().any(|&c| c >= need) {
                self.first_group_round = Some(r);
            }
        }

        if sink.enabled() {
            for (i, s) in self.slots.iter().enumerate() {
                let Kind::Good(c) = &s.kind else { continue };
                let detail = match (self.stage_before[i], c.stage) {
                    (Stage::CollectId, Stage::MakeCandidate) => Detail::EnterMakeCandidate {
                        s_p: (*c.s_p).clone(),
                    },
                    (Stage::AgreeId, Stage::MakeGroup) => Detail::EnterMakeGroup {
                        s_c: (*c.s_c).clone(),
                        p_c: c.p_c.clone(),
                    },
                    _ => Detail::None,
                };
                sink.record(&TraceRecord {
                    round: r,
                    agent: s.id,
                    node: s.node,
                    stage: c.stage,
                    length: c.length,
                    elapsed: c.elapsed,
                    count: c.count,
                    ready: c.ready,
                    end_make_candidate: c.end_make_candidate,
                    gid: c.gid,
                    action: self.actions[i].unwrap_or(TraceAction {
                        followed: false,
                        action: Action::Stay,
                    }),
                    s_p: c.s_p.len(),
                    p_p: c.p_p.len(),
                    p_c: c.p_c.len(),
                    d: c.d.len(),
                    detail,
                });
            }
        }
        Ok(())
    }

    pub fn result(&self) -> SimResult {
        let gathered = self.check_gathered();
        let final_node = if gathered {
            self.good_cores().next().map(|(_, n)| n)
        } else {
            None
        };
        let agents: Vec<AgentOutcome> = self
            .slots
            .iter()
            .map(|s| AgentOutcome {
                id: s.id,
                byzantine: matches!(s.kind, Kind::Byz),
                node: s.node,
                terminated_at: s.terminated_at,
            })
            .collect();
        let max_good = self.good_cores().map(|(c, _)| c.id).max().unwrap_or(1);
        let all_done = self.all_good_terminated();
        let rounds_elapsed = if all_done {
            agents
                .iter()
                .filter(|a| !a.byzantine)
                .filter_map(|a| a.terminated_at)
                .max()
                .unwrap_or(0)
        } else {
            self.round
        };
        SimResult {
            gathered,
            final_node,
            rounds_elapsed,
            hit_max_rounds: !all_done && self.round >= self.max_rounds,
            agents,
            k: self.slots.len(),
            f: self.f,
            lambda_good: bit_len(max_good),
            t_rel_max_good: self.proto.t_rel(max_good),
            pbc_phases: self.good_cores().filter_map(|(c, _)| c.pbc_phases()).max(),
            first_group_round: self.first_group_round,
        }
    }

    /// Runs until every good agent has terminated or the round cap is hit.
    pub fn run_to_end(&mut self, sink: &mut dyn TraceSink) -> Result<SimResult, SimError> {
        while !self.all_good_terminated() && self.round < self.max_rounds {
            self.step(sink)?;
        }
        Ok(self.result())
    }
}

/// One complete simulation.
pub fn run(
    graph: &PortGraph,
    proto: Protocol,
    cfg: &RunConfig,
    sink: &mut dyn TraceSink,
) -> Result<SimResult, SimError> {
    World::new(graph, proto, cfg)?.run_to_end(sink)
}
