//! Weakly Byzantine strategies.
//!
//! A strategy sees the whole world each round and chooses what its agent
//! presents and where it moves. It can forge every presented field except the
//! ID. Everyone at a node sees the same presentation; equivocation is only
//! possible across meetings (different nodes or rounds).

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::{Action, AgentCore, Presented, Protocol, Stage};
use crate::graph::{NodeId, Port, PortGraph};
use crate::idset::IdSet;
use crate::pbc::{InputPair, InstanceTag, PairSet, Payload, PconsMessage};
use crate::rendezvous::AgentId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StrategyKind {
    Silent,
    Liar,
    GroupImpostor,
    TargetLure,
    ConsensusEquivocator,
    FollowDisruptor,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 6] = [
        StrategyKind::Silent,
        StrategyKind::Liar,
        StrategyKind::GroupImpostor,
        StrategyKind::TargetLure,
        StrategyKind::ConsensusEquivocator,
        StrategyKind::FollowDisruptor,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Silent => "silent",
            StrategyKind::Liar => "liar",
            StrategyKind::GroupImpostor => "group_impostor",
            StrategyKind::TargetLure => "target_lure",
            StrategyKind::ConsensusEquivocator => "consensus_equivocator",
            StrategyKind::FollowDisruptor => "follow_disruptor",
        }
    }

    pub fn parse(s: &str) -> Option<StrategyKind> {
        StrategyKind::ALL.into_iter().find(|k| k.name() == s)
    }

    /// A fresh strategy instance driving agent `me`.
    pub fn instantiate(self, me: AgentId, seed: u64) -> Box<dyn Strategy> {
        let rng = ChaCha8Rng::seed_from_u64(seed ^ me.wrapping_mul(0xD6E8_FEB8_6659_FD93));
        match self {
            StrategyKind::Silent => Box::new(Silent),
            StrategyKind::Liar => Box::new(Liar { rng }),
            StrategyKind::GroupImpostor => Box::new(GroupImpostor),
            StrategyKind::TargetLure => Box::new(TargetLure { rng }),
            StrategyKind::ConsensusEquivocator => {
                Box::new(ConsensusEquivocator { rng, forged: None })
            }
            StrategyKind::FollowDisruptor => Box::new(FollowDisruptor { rng }),
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One agent as the adversary sees it.
#[derive(Clone, Copy, Debug)]
pub struct AgentView<'a> {
    pub id: AgentId,
    pub node: NodeId,
    pub inport: Option<Port>,
    pub presented: &'a Presented,
    /// Full state of good agents; `None` for Byzantine ones.
    pub core: Option<&'a AgentCore>,
}

#[derive(Clone, Copy, Debug)]
pub struct WorldView<'a> {
    pub graph: &'a PortGraph,
    pub round: u64,
    pub proto: &'a Protocol,
    pub agents: &'a [AgentView<'a>],
}

impl<'a> WorldView<'a> {
    pub fn me(&self, id: AgentId) -> &AgentView<'a> {
        self.agents
            .iter()
            .find(|a| a.id == id)
            .expect("strategy drives a known agent")
    }

    fn good(&self) -> impl Iterator<Item = (&AgentView<'a>, &'a AgentCore)> + '_ {
        self.agents.iter().filter_map(|a| a.core.map(|c| (a, c)))
    }

    fn all_ids(&self) -> Vec<AgentId> {
        self.agents.iter().map(|a| a.id).collect()
    }

    /// Node holding the most live good agents that satisfy `pred`.
    fn busiest<F: Fn(&AgentCore) -> bool>(&self, pred: F) -> Option<NodeId> {
        let mut count: BTreeMap<NodeId, usize> = BTreeMap::new();
        for (a, c) in self.good() {
            if !c.terminated && pred(c) {
                *count.entry(a.node).or_default() += 1;
            }
        }
        count
            .into_iter()
            .max_by_key(|&(n, c)| (c, core::cmp::Reverse(n)))
            .map(|(n, _)| n)
    }
}

/// A Byzantine agent's choice for one round.
#[derive(Clone, Debug)]
pub struct ByzMove {
    pub presented: Presented,
    pub action: Action,
}

pub trait Strategy {
    fn kind(&self) -> StrategyKind;
    fn decide(&mut self, view: &WorldView<'_>, me: AgentId) -> ByzMove;
}

/// First port on a shortest path from `from` to `to`, or `None` when there.
pub fn next_hop(g: &PortGraph, from: NodeId, to: NodeId) -> Option<Port> {
    if from == to {
        return None;
    }
    let n = g.node_count();
    let mut prev: Vec<Option<(NodeId, Port)>> = vec![None; n];
    let mut seen = vec![false; n];
    seen[from] = true;
    let mut q = VecDeque::from([from]);
    while let Some(v) = q.pop_front() {
        for l in g.links(v) {
            if !seen[l.neighbor] {
                seen[l.neighbor] = true;
                prev[l.neighbor] = Some((v, l.port));
                if l.neighbor == to {
                    let mut cur = to;
                    loop {
                        let (p, port) = prev[cur].expect("path recorded");
                        if p == from {
                            return Some(port);
                        }
                        cur = p;
                    }
                }
                q.push_back(l.neighbor);
            }
        }
    }
    None
}

fn toward(view: &WorldView<'_>, me: &AgentView<'_>, target: Option<NodeId>) -> Action {
    match target.and_then(|t| next_hop(view.graph, me.node, t)) {
        Some(p) => Action::Move(p),
        None => Action::Stay,
    }
}

fn random_port(rng: &mut ChaCha8Rng, g: &PortGraph, node: NodeId) -> Action {
    let d = g.degree(node);
    if d == 0 {
        Action::Stay
    } else {
        Action::Move(rng.random_range(1..=d as Port))
    }
}

/// Copies `src`'s public state under the ID `me`, re-signing its messages.
fn mimic(src: &Presented, me: AgentId) -> Presented {
    let resign = |m: &Option<PconsMessage>| {
        m.as_ref().map(|m| PconsMessage {
            sender: me,
            ..m.clone()
        })
    };
    Presented {
        id: me,
        msg_s: resign(&src.msg_s),
        msg_p: resign(&src.msg_p),
        ..src.clone()
    }
}

/// The good agent at `node` in the most advanced stage, if any.
fn role_model<'a>(view: &WorldView<'a>, node: NodeId) -> Option<&'a Presented> {
    view.agents
        .iter()
        .filter(|a| a.core.is_some() && a.node == node && !a.presented.terminated)
        .max_by_key(|a| {
            (
                a.presented.stage,
                a.presented.gid.is_some(),
                core::cmp::Reverse(a.id),
            )
        })
        .map(|a| a.presented)
}

fn random_ids(rng: &mut ChaCha8Rng, pool: &[AgentId], fakes: usize) -> IdSet {
    let mut v = Vec::with_capacity(pool.len() + fakes);
    v.extend(pool.iter().copied().filter(|_| rng.random_bool(0.6)));
    v.extend((0..fakes).map(|_| rng.random_range(1..1u64 << 20)));
    v.into_iter().collect()
}

fn random_pairs(rng: &mut ChaCha8Rng, pool: &[AgentId]) -> PairSet {
    let mut s = PairSet::new();
    for &id in pool {
        if rng.random_bool(0.5) {
            s.insert(InputPair::new(id, 1));
        }
    }
    s.insert(InputPair::new(rng.random_range(1..1u64 << 20), 1));
    s
}

/// A payload of the kind expected at `phase`, with random content.
fn forged_payload(rng: &mut ChaCha8Rng, phase: u32, pool: &[AgentId]) -> Payload {
    match phase {
        0 | 1 => Payload::Input(random_pairs(rng, pool)),
        2 => Payload::Echo {
            heard: random_ids(rng, pool, 2).iter().collect::<BTreeSet<_>>(),
            votes: random_pairs(rng, pool),
        },
        p if (p - 2) % 3 == 1 => Payload::Propose {
            ones: random_pairs(rng, pool),
            bottoms: random_pairs(rng, pool),
        },
        _ => Payload::Vote(random_pairs(rng, pool)),
    }
}

pub struct Silent;

impl Strategy for Silent {
    fn kind(&self) -> StrategyKind {
        StrategyKind::Silent
    }

    fn decide(&mut self, view: &WorldView<'_>, me: AgentId) -> ByzMove {
        ByzMove {
            presented: Presented::initial(me, view.proto.t_ini),
            action: Action::Stay,
        }
    }
}

pub struct Liar {
    rng: ChaCha8Rng,
}

impl Strategy for Liar {
    fn kind(&self) -> StrategyKind {
        StrategyKind::Liar
    }

    fn decide(&mut self, view: &WorldView<'_>, me: AgentId) -> ByzMove {
        let rng = &mut self.rng;
        let pool = view.all_ids();
        let stage = [
            Stage::CollectId,
            Stage::MakeCandidate,
            Stage::AgreeId,
            Stage::MakeGroup,
        ][rng.random_range(0..4)];
        let length = view.proto.t_ini << rng.random_range(0..20u32);
        let gid = if rng.random_bool(0.5) {
            None
        } else {
            pool.choose(rng).copied()
        };
        let presented = Presented {
            id: me,
            stage,
            length,
            elapsed: rng.random_range(0..=length),
            count: rng.random_range(0..40),
            ready: rng.random_bool(0.5),
            end_make_candidate: rng.random_bool(0.5),
            gid,
            terminated: rng.random_bool(0.1),
            s_p: Rc::new(random_ids(rng, &pool, 3)),
            s_c: Rc::new(random_ids(rng, &pool, 1)),
            msg_s: None,
            msg_p: None,
        };
        let node = view.me(me).node;
        let action = if rng.random_bool(0.3) {
            Action::Stay
        } else {
            random_port(rng, view.graph, node)
        };
        ByzMove { presented, action }
    }
}

/// Presents a group ID lower than any real one and parks on the busiest
/// node. All impostors agree on the fake gid, so they look like one group.
pub struct GroupImpostor;

pub const IMPOSTOR_GID: AgentId = 0;

impl Strategy for GroupImpostor {
    fn kind(&self) -> StrategyKind {
        StrategyKind::GroupImpostor
    }

    fn decide(&mut self, view: &WorldView<'_>, me: AgentId) -> ByzMove {
        let mv = view.me(me);
        let target = view.busiest(|_| true);
        let mut presented = match role_model(view, mv.node) {
            Some(p) => mimic(p, me),
            None => Presented::initial(me, view.proto.t_ini),
        };
        presented.stage = Stage::MakeGroup;
        presented.gid = Some(IMPOSTOR_GID);
        presented.msg_s = None;
        presented.msg_p = None;
        ByzMove {
            presented,
            action: toward(view, mv, target),
        }
    }
}

/// Tries to get into the agreed member lists, then dodges the agents that
/// come looking for it: it waits while they search and slips away just
/// before they count who is present.
pub struct TargetLure {
    rng: ChaCha8Rng,
}

impl Strategy for TargetLure {
    fn kind(&self) -> StrategyKind {
        StrategyKind::TargetLure
    }

    fn decide(&mut self, view: &WorldView<'_>, me: AgentId) -> ByzMove {
        let mv = view.me(me);
        let hunters: Vec<(&AgentView<'_>, &AgentCore)> = view
            .good()
            .filter(|(_, c)| {
                c.stage == Stage::MakeGroup
                    && c.gid.is_none()
                    && !c.p_c.is_empty()
                    && c.p_c[(c.count % c.p_c.len() as u64) as usize] == me
            })
            .collect();
        if let Some(&(_, h)) = hunters.first() {
            let presented = mimic(&h.present(), me);
            // Leave on the round before the hunters' final Look.
            let leave = h.elapsed + 2 >= h.length;
            let action = if leave {
                random_port(&mut self.rng, view.graph, mv.node)
            } else {
                let spot = hunters.iter().map(|(a, _)| a.node).min();
                if h.length >= 2 * (h.elapsed + 1) {
                    toward(view, mv, spot)
                } else {
                    Action::Stay
                }
            };
            return ByzMove { presented, action };
        }
        let presented = match role_model(view, mv.node) {
            Some(p) => mimic(p, me),
            None => Presented::initial(me, view.proto.t_ini),
        };
        let target = view.busiest(|c| matches!(c.stage, Stage::AgreeId | Stage::MakeGroup));
        let target = target.or_else(|| view.busiest(|_| true));
        ByzMove {
            presented,
            action: toward(view, mv, target),
        }
    }
}

/// Joins the largest group candidate and feeds its consensus random
/// payloads, different at every meeting, while claiming an inflated ID set.
/// A meeting lasts while the phase, the node and the company stay the same;
/// observers keep the first message of a phase, so re-forging within one
/// meeting would show nobody anything new.
pub struct ConsensusEquivocator {
    rng: ChaCha8Rng,
    forged: Option<(Meeting, [Option<PconsMessage>; 2])>,
}

#[derive(Clone, PartialEq, Eq)]
struct Meeting {
    phase: u32,
    node: NodeId,
    company: Vec<AgentId>,
}

impl Strategy for ConsensusEquivocator {
    fn kind(&self) -> StrategyKind {
        StrategyKind::ConsensusEquivocator
    }

    fn decide(&mut self, view: &WorldView<'_>, me: AgentId) -> ByzMove {
        let mv = view.me(me);
        let pool = view.all_ids();
        let rng = &mut self.rng;
        let mut presented = match role_model(view, mv.node) {
            Some(p) => mimic(p, me),
            None => Presented::initial(me, view.proto.t_ini),
        };
        let mut inflated: IdSet = pool.iter().copied().collect();
        for _ in 0..4 {
            inflated.insert(rng.random_range(1..1u64 << 20));
        }
        presented.s_p = Rc::new(inflated);
        presented.gid = None;
        if matches!(presented.stage, Stage::AgreeId | Stage::MakeGroup) && presented.count >= 1 {
            let phase = presented.count as u32;
            let company = view
                .agents
                .iter()
                .filter(|a| a.node == mv.node)
                .map(|a| a.id)
                .collect();
            let meeting = Meeting {
                phase,
                node: mv.node,
                company,
            };
            let msgs = match &self.forged {
                Some((m, msgs)) if *m == meeting => msgs.clone(),
                _ => {
                    let forge = |rng: &mut ChaCha8Rng, tag| {
                        let payload = Rc::new(forged_payload(rng, phase, &pool));
                        Some(PconsMessage {
                            sender: me,
                            tag,
                            phase,
                            payload,
                        })
                    };
                    let msgs = [forge(rng, InstanceTag::S), forge(rng, InstanceTag::P)];
                    self.forged = Some((meeting, msgs.clone()));
                    msgs
                }
            };
            [presented.msg_s, presented.msg_p] = msgs;
        }
        let target = view.busiest(|c| c.stage == Stage::AgreeId);
        let target = target.or_else(|| view.busiest(|_| true));
        let action = if rng.random_bool(0.2) {
            random_port(rng, view.graph, mv.node)
        } else {
            toward(view, mv, target)
        };
        ByzMove { presented, action }
    }
}

/// Rides along with a reliable group under its gid and votes with random
/// moves, sometimes pretending to have terminated.
pub struct FollowDisruptor {
    rng: ChaCha8Rng,
}

impl Strategy for FollowDisruptor {
    fn kind(&self) -> StrategyKind {
        StrategyKind::FollowDisruptor
    }

    fn decide(&mut self, view: &WorldView<'_>, me: AgentId) -> ByzMove {
        let mv = view.me(me);
        let rng = &mut self.rng;
        let grouped = view.busiest(|c| c.gid.is_some());
        let target = grouped.or_else(|| view.busiest(|_| true));
        let here_gid = view
            .good()
            .filter(|(a, c)| a.node == mv.node && !c.terminated)
            .filter_map(|(_, c)| c.gid)
            .min();
        let mut presented = match role_model(view, mv.node) {
            Some(p) => mimic(p, me),
            None => Presented::initial(me, view.proto.t_ini),
        };
        let action = match here_gid {
            Some(g) => {
                presented.gid = Some(g);
                presented.terminated = rng.random_bool(0.3);
                random_port(rng, view.graph, mv.node)
            }
            None => toward(view, mv, target),
        };
        ByzMove { presented, action }
    }
}
