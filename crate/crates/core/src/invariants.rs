//! Streaming checker for the stage-machine invariants over a trace.
//!
//! Checked properties:
//!
//! * cycle alignment: good agents in CollectID or MakeCandidate that have
//!   never followed a group share `length` and `elapsed` in every round;
//! * `S_p` holds every good ID and at most `k` IDs on MakeCandidate entry;
//! * at least `ceil(7g/18)` good agents enter AgreeID in one round;
//! * `length < 32 (t_rel(max good id) + 1)` always;
//! * inside the largest group candidate, every member enters MakeGroup with
//!   the same `S_c` and `P_c`, `S_c` holds every good ID and the good IDs
//!   in `P_c` are exactly the candidate's good members;
//! * whenever good agents adopt a gid in some round, at least `k/8` good
//!   agents adopt that gid in that round;
//! * a terminated agent never changes node or state again;
//! * some round has `ceil(k/8)` good agents sharing a gid.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::agent::{Gid, Stage};
use crate::graph::NodeId;
use crate::idset::IdSet;
use crate::rendezvous::AgentId;
use crate::trace::{Detail, TraceRecord, TraceSink};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Invariant {
    CycleAlignment,
    CollectedIds,
    SimultaneousAgreeEntry,
    LengthBound,
    CandidateAgreement,
    GroupSize,
    TerminalFreeze,
    ReliableGroupExists,
}

impl Invariant {
    pub const ALL: [Invariant; 8] = [
        Invariant::CycleAlignment,
        Invariant::CollectedIds,
        Invariant::SimultaneousAgreeEntry,
        Invariant::LengthBound,
        Invariant::CandidateAgreement,
        Invariant::GroupSize,
        Invariant::TerminalFreeze,
        Invariant::ReliableGroupExists,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Invariant::CycleAlignment => "cycle-alignment",
            Invariant::CollectedIds => "collected-ids",
            Invariant::SimultaneousAgreeEntry => "simultaneous-agree-entry",
            Invariant::LengthBound => "length-bound",
            Invariant::CandidateAgreement => "candidate-agreement",
            Invariant::GroupSize => "group-size",
            Invariant::TerminalFreeze => "terminal-freeze",
            Invariant::ReliableGroupExists => "reliable-group-exists",
        }
    }
}

impl fmt::Display for Invariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Failure {
    pub invariant: Invariant,
    pub round: u64,
    pub agent: Option<AgentId>,
    pub note: String,
}

/// Run facts the checker needs beyond the trace itself.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunFacts {
    pub good: IdSet,
    pub k: usize,
    pub t_rel_max_good: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Outcome {
    pub invariant: Invariant,
    /// `None` when the trace never reached the point where it applies.
    pub passed: Option<bool>,
    pub first_failure: Option<Failure>,
    /// Round that witnesses the property, where one exists.
    pub witness_round: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Report {
    pub outcomes: Vec<Outcome>,
    pub records: u64,
}

impl Report {
    pub fn ok(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed != Some(false))
    }

    pub fn get(&self, inv: Invariant) -> &Outcome {
        self.outcomes
            .iter()
            .find(|o| o.invariant == inv)
            .expect("every invariant reported")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Frozen {
    node: NodeId,
    stage: Stage,
    length: u64,
    elapsed: u64,
    count: u64,
    gid: Gid,
}

impl Frozen {
    fn of(r: &TraceRecord) -> Frozen {
        Frozen {
            node: r.node,
            stage: r.stage,
            length: r.length,
            elapsed: r.elapsed,
            count: r.count,
            gid: r.gid,
        }
    }
}

pub struct Checker {
    facts: RunFacts,
    records: u64,
    failures: BTreeMap<Invariant, Failure>,
    applies: BTreeSet<Invariant>,
    round: u64,
    aligned: Option<(u64, u64)>,
    followed: BTreeSet<AgentId>,
    last_stage: BTreeMap<AgentId, Stage>,
    last_gid: BTreeMap<AgentId, Gid>,
    // AgreeID entries per round and the candidates they form.
    agree_entries: BTreeMap<u64, Vec<AgentId>>,
    group_entries: BTreeMap<AgentId, (u64, IdSet, Vec<AgentId>)>,
    gid_adoptions: BTreeMap<(u64, AgentId), usize>,
    gid_counts: BTreeMap<AgentId, usize>,
    group_round: Option<u64>,
    frozen: BTreeMap<AgentId, Frozen>,
}

impl Checker {
    pub fn new(facts: RunFacts) -> Checker {
        Checker {
            facts,
            records: 0,
            failures: BTreeMap::new(),
            applies: BTreeSet::new(),
            round: 0,
            aligned: None,
            followed: BTreeSet::new(),
            last_stage: BTreeMap::new(),
            last_gid: BTreeMap::new(),
            agree_entries: BTreeMap::new(),
            group_entries: BTreeMap::new(),
            gid_adoptions: BTreeMap::new(),
            gid_counts: BTreeMap::new(),
            group_round: None,
            frozen: BTreeMap::new(),
        }
    }

    fn fail(&mut self, invariant: Invariant, round: u64, agent: Option<AgentId>, note: String) {
        self.failures.entry(invariant).or_insert(Failure {
            invariant,
            round,
            agent,
            note,
        });
    }

    fn end_round(&mut self) {
        let need = self.facts.k.div_ceil(8);
        if self.group_round.is_none() && self.gid_counts.values().any(|&c| c >= need) {
            self.group_round = Some(self.round);
        }
        self.gid_counts.clear();
        self.aligned = None;
    }

    pub fn finish(mut self) -> Report {
        self.end_round();
        let g = self.facts.good.len();
        let k = self.facts.k;

        // Simultaneous AgreeID entry.
        let biggest = self
            .agree_entries
            .iter()
            .max_by_key(|(r, v)| (v.len(), core::cmp::Reverse(**r)));
        let need = (7 * g).div_ceil(18);
        let mut agree_witness = None;
        if let Some((&r, members)) = biggest {
            self.applies.insert(Invariant::SimultaneousAgreeEntry);
            if members.len() >= need {
                agree_witness = Some(r);
            } else {
                let note = alloc::format!("largest simultaneous entry {} < {need}", members.len());
                self.fail(Invariant::SimultaneousAgreeEntry, r, None, note);
            }
        }

        // Agreement inside the big candidate.
        if let Some(r) = agree_witness {
            let members: Vec<AgentId> = self.agree_entries[&r].clone();
            let entered: Vec<(AgentId, &(u64, IdSet, Vec<AgentId>))> = members
                .iter()
                .filter_map(|m| self.group_entries.get(m).map(|e| (*m, e)))
                .collect();
            if !entered.is_empty() {
                self.applies.insert(Invariant::CandidateAgreement);
                let (a0, (r0, sc0, pc0)) = entered[0];
                let mut bad: Option<(u64, AgentId, String)> = None;
                let member_set: IdSet = members.iter().copied().collect();
                let good_in_pc: IdSet = pc0
                    .iter()
                    .copied()
                    .filter(|x| self.facts.good.contains(*x))
                    .collect();
                if !sc0.is_superset_of(&self.facts.good) {
                    bad = Some((*r0, a0, String::from("S_c misses a good ID")));
                } else if good_in_pc != member_set {
                    bad = Some((
                        *r0,
                        a0,
                        String::from("good IDs in P_c differ from the candidate"),
                    ));
                }
                for (a, (ra, sc, pc)) in &entered[1..] {
                    if bad.is_none() && (sc != sc0 || pc != pc0) {
                        bad = Some((*ra, *a, alloc::format!("S_c/P_c differ from agent {a0}")));
                    }
                }
                if let Some((round, agent, note)) = bad {
                    self.fail(Invariant::CandidateAgreement, round, Some(agent), note);
                }
            }
        }

        // Group size at adoption.
        let adoptions: Vec<((u64, AgentId), usize)> =
            self.gid_adoptions.iter().map(|(a, b)| (*a, *b)).collect();
        for ((round, gid), c) in adoptions {
            self.applies.insert(Invariant::GroupSize);
            if 8 * c < k {
                self.fail(
                    Invariant::GroupSize,
                    round,
                    None,
                    alloc::format!("{c} good agents adopted gid {gid}"),
                );
            }
        }

        // A good agent only terminates after seeing a reliable group, so the
        // check applies once one has; a run cut short before that is n/a.
        if !self.frozen.is_empty() || self.group_round.is_some() {
            self.applies.insert(Invariant::ReliableGroupExists);
        }
        if self.group_round.is_none() && !self.frozen.is_empty() {
            self.fail(
                Invariant::ReliableGroupExists,
                self.round,
                None,
                String::from("no reliable group formed"),
            );
        }

        let applies = self.applies;
        let failures = self.failures;
        let group_round = self.group_round;
        let outcomes = Invariant::ALL
            .iter()
            .map(|&inv| {
                let first_failure = failures.get(&inv).cloned();
                let passed = if first_failure.is_some() {
                    Some(false)
                } else if applies.contains(&inv) {
                    Some(true)
                } else {
                    None
                };
                let witness_round = match inv {
                    Invariant::SimultaneousAgreeEntry => agree_witness,
                    Invariant::ReliableGroupExists => group_round,
                    _ => None,
                };
                Outcome {
                    invariant: inv,
                    passed,
                    first_failure,
                    witness_round,
                }
            })
            .collect();
        Report {
            outcomes,
            records: self.records,
        }
    }
}

impl TraceSink for Checker {
    fn record(&mut self, rec: &TraceRecord) {
        self.records += 1;
        if rec.round != self.round {
            self.end_round();
            self.round = rec.round;
        }
        let a = rec.agent;
        if !self.facts.good.contains(a) {
            return;
        }
        let prev_stage = self.last_stage.insert(a, rec.stage);
        let prev_gid = self.last_gid.insert(a, rec.gid).unwrap_or(None);

        if let Some(f) = self.frozen.get(&a) {
            self.applies.insert(Invariant::TerminalFreeze);
            if *f != Frozen::of(rec) || rec.action.action != crate::agent::Action::Stay {
                self.fail(
                    Invariant::TerminalFreeze,
                    rec.round,
                    Some(a),
                    String::from("terminated agent changed"),
                );
            }
            return;
        }
        if rec.action.action == crate::agent::Action::Terminate {
            self.frozen.insert(a, Frozen::of(rec));
        }

        if rec.action.followed {
            self.followed.insert(a);
        }
        if matches!(rec.stage, Stage::CollectId | Stage::MakeCandidate)
            && !self.followed.contains(&a)
        {
            self.applies.insert(Invariant::CycleAlignment);
            match self.aligned {
                None => self.aligned = Some((rec.length, rec.elapsed)),
                Some(x) if x == (rec.length, rec.elapsed) => {}
                Some((l, e)) => {
                    let note =
                        alloc::format!("length/elapsed {}/{} vs {l}/{e}", rec.length, rec.elapsed);
                    self.fail(Invariant::CycleAlignment, rec.round, Some(a), note);
                }
            }
        }

        if let Detail::EnterMakeCandidate { s_p } = &rec.detail {
            self.applies.insert(Invariant::CollectedIds);
            if !s_p.is_superset_of(&self.facts.good) || s_p.len() > self.facts.k {
                let missing = self.facts.good.iter().filter(|x| !s_p.contains(*x)).count();
                let note = alloc::format!("|S_p|={} missing {missing} good IDs", s_p.len());
                self.fail(Invariant::CollectedIds, rec.round, Some(a), note);
            }
        }

        if rec.stage == Stage::AgreeId && prev_stage == Some(Stage::MakeCandidate) {
            self.agree_entries.entry(rec.round).or_default().push(a);
        }
        if let Detail::EnterMakeGroup { s_c, p_c } = &rec.detail {
            self.group_entries
                .insert(a, (rec.round, s_c.clone(), p_c.clone()));
        }

        self.applies.insert(Invariant::LengthBound);
        if rec.length >= 32 * (self.facts.t_rel_max_good + 1) {
            let note = alloc::format!("length {}", rec.length);
            self.fail(Invariant::LengthBound, rec.round, Some(a), note);
        }

        if let Some(g) = rec.gid {
            *self.gid_counts.entry(g).or_default() += 1;
            if prev_gid.is_none() && !rec.action.followed {
                *self.gid_adoptions.entry((rec.round, g)).or_default() += 1;
            }
        }
    }
}
