//! One run end to end: simulation, invariant checks, consensus audit and
//! the result record.

use std::collections::{BTreeMap, BTreeSet};

use byzgather_core::agent::{pairs_of, AgentCore, CandidateKey, Consensus};
use byzgather_core::idset::IdSet;
use byzgather_core::invariants::{Checker, Report, RunFacts};
use byzgather_core::pbc::{phases_for, PairSet};
use byzgather_core::sim::{SimError, SimResult, World};
use byzgather_core::trace::{Tee, TraceSink};
use serde::{Deserialize, Serialize};

use crate::config::Resolved;

/// Validity, agreement and termination of every consensus instance the good
/// agents ran, checked on their final states.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PbcAudit {
    /// Candidate instances (one per candidate and tag) examined.
    pub instances: usize,
    pub max_phases: Option<u32>,
    pub violations: Vec<String>,
}

impl PbcAudit {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

fn ids(pairs: &PairSet) -> IdSet {
    pairs.iter().map(|p| p.pair_id).collect()
}

/// (input, output, phases) of one instance of one member.
type View = (PairSet, Option<PairSet>, Option<u32>);

fn view(c: &Consensus, oracle_input: PairSet) -> View {
    match c {
        Consensus::Distributed(s) => (
            s.inputs().clone(),
            s.output().cloned(),
            s.phase_count().ok(),
        ),
        Consensus::Oracle { output } => (oracle_input, output.clone(), output.as_ref().map(|_| 1)),
    }
}

pub fn audit_pbc<'a>(cores: impl Iterator<Item = &'a AgentCore>, k: usize) -> PbcAudit {
    let mut by_candidate: BTreeMap<(CandidateKey, char), Vec<(&AgentCore, View)>> = BTreeMap::new();
    for c in cores {
        let Some(key) = c.candidate else { continue };
        for (tag, inst, input) in [
            ('S', &c.pcons_s, pairs_of(&c.s_p)),
            ('P', &c.pcons_p, pairs_of(&c.p_p)),
        ] {
            if let Some(inst) = inst {
                by_candidate
                    .entry((key, tag))
                    .or_default()
                    .push((c, view(inst, input)));
            }
        }
    }
    let mut audit = PbcAudit {
        instances: by_candidate.len(),
        ..PbcAudit::default()
    };
    let bound = phases_for(k);
    for (((len, clock), tag), members) in &by_candidate {
        let name = format!("candidate ({len}, {clock}) {tag}");
        let mut outputs = BTreeSet::new();
        for (c, (_, out, phases)) in members {
            match out {
                None => audit
                    .violations
                    .push(format!("{name}: agent {} never decided", c.id)),
                Some(o) => {
                    outputs.insert(o.clone());
                    // Decided exactly once: the value adopted on leaving
                    // AgreeID is still the instance's output.
                    let adopted = if *tag == 'S' {
                        (*c.s_c).clone()
                    } else {
                        c.p_c.iter().copied().collect()
                    };
                    if adopted != ids(o) {
                        audit.violations.push(format!(
                            "{name}: agent {} output changed after deciding",
                            c.id
                        ));
                    }
                }
            }
            match phases {
                Some(p) if *p <= bound => audit.max_phases = audit.max_phases.max(Some(*p)),
                Some(p) => audit
                    .violations
                    .push(format!("{name}: agent {} took {p} phases > {bound}", c.id)),
                None if out.is_some() => audit
                    .violations
                    .push(format!("{name}: agent {} has no phase count", c.id)),
                None => {}
            }
        }
        if outputs.len() > 1 {
            audit
                .violations
                .push(format!("{name}: {} different outputs", outputs.len()));
        }
        let Some(out) = outputs.into_iter().next() else {
            continue;
        };
        let inputs: Vec<&PairSet> = members.iter().map(|(_, v)| &v.0).collect();
        for pair in inputs[0] {
            if inputs.iter().all(|i| i.contains(pair)) && !out.contains(pair) {
                audit.violations.push(format!(
                    "{name}: common input {} missing from the output",
                    pair.pair_id
                ));
            }
        }
        for pair in &out {
            if !inputs.iter().any(|i| i.contains(pair)) {
                audit.violations.push(format!(
                    "{name}: output {} is in no good input",
                    pair.pair_id
                ));
            }
        }
    }
    audit
}

pub fn facts(r: &Resolved) -> RunFacts {
    facts_of(&r.proto, &r.cfg)
}

pub fn facts_of(
    proto: &byzgather_core::agent::Protocol,
    cfg: &byzgather_core::sim::RunConfig,
) -> RunFacts {
    let good: IdSet = cfg.good.iter().map(|g| g.0).collect();
    let max_good = good.iter().max().unwrap_or(1);
    RunFacts {
        good,
        k: cfg.k(),
        t_rel_max_good: proto.t_rel(max_good),
    }
}

pub struct RunOutput {
    pub result: SimResult,
    pub invariants: Report,
    pub audit: PbcAudit,
    /// Rounds executed (the trace's `#end` count).
    pub rounds_executed: u64,
}

/// Runs to completion, feeding `sink` and the invariant checker.
pub fn execute(r: &Resolved, sink: &mut dyn TraceSink) -> Result<RunOutput, SimError> {
    let mut world = World::new(&r.graph, r.proto.clone(), &r.cfg)?;
    let mut checker = Checker::new(facts(r));
    let result = world.run_to_end(&mut Tee(sink, &mut checker))?;
    let audit = audit_pbc(world.good_cores().map(|(c, _)| c), r.cfg.k());
    Ok(RunOutput {
        result,
        invariants: checker.finish(),
        audit,
        rounds_executed: world.round(),
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentRow {
    pub id: u64,
    pub byzantine: bool,
    pub node: usize,
    pub terminated_at: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvariantRow {
    pub name: String,
    /// `None` when the run never reached the point where it applies.
    pub passed: Option<bool>,
    pub first_failure_round: Option<u64>,
    pub note: Option<String>,
    pub witness_round: Option<u64>,
}

pub fn invariant_rows(report: &Report) -> Vec<InvariantRow> {
    report
        .outcomes
        .iter()
        .map(|o| InvariantRow {
            name: o.invariant.name().into(),
            passed: o.passed,
            first_failure_round: o.first_failure.as_ref().map(|f| f.round),
            note: o.first_failure.as_ref().map(|f| match f.agent {
                Some(a) => format!("agent {a}: {}", f.note),
                None => f.note.clone(),
            }),
            witness_round: o.witness_round,
        })
        .collect()
}

/// Declared departures from the idealized model, carried in every result.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Deviations {
    pub corpus_certification: String,
    pub t_ex: usize,
    pub rel_scale: u64,
    /// Consensus phases used, against the O(P) bound of the reference protocol.
    pub pbc_phases: Option<u32>,
    pub pbc_phase_bound: u32,
    /// Followers copy their group's move within the same round.
    pub same_round_follow: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub gathered: bool,
    pub final_node: Option<usize>,
    pub rounds_elapsed: u64,
    pub hit_max_rounds: bool,
    pub k: usize,
    pub f: usize,
    pub seed: u64,
    pub lambda_good: u32,
    pub t_rel_max_good: u64,
    pub pbc_phases: Option<u32>,
    pub first_group_round: Option<u64>,
    pub agents: Vec<AgentRow>,
    pub invariants: Vec<InvariantRow>,
    pub invariants_ok: bool,
    pub pbc_audit: PbcAudit,
    pub deviations: Deviations,
}

impl ResultRecord {
    pub fn new(r: &Resolved, out: &RunOutput) -> ResultRecord {
        let s = &out.result;
        ResultRecord {
            gathered: s.gathered,
            final_node: s.final_node,
            rounds_elapsed: s.rounds_elapsed,
            hit_max_rounds: s.hit_max_rounds,
            k: s.k,
            f: s.f,
            seed: r.cfg.seed,
            lambda_good: s.lambda_good,
            t_rel_max_good: s.t_rel_max_good,
            pbc_phases: s.pbc_phases,
            first_group_round: s.first_group_round,
            agents: s
                .agents
                .iter()
                .map(|a| AgentRow {
                    id: a.id,
                    byzantine: a.byzantine,
                    node: a.node,
                    terminated_at: a.terminated_at,
                })
                .collect(),
            invariants: invariant_rows(&out.invariants),
            invariants_ok: out.invariants.ok(),
            pbc_audit: out.audit.clone(),
            deviations: Deviations {
                corpus_certification: r.certification.describe(),
                t_ex: r.proto.plan.t_ex,
                rel_scale: r.rel_scale,
                pbc_phases: s.pbc_phases,
                pbc_phase_bound: phases_for(s.k),
                same_round_follow: true,
            },
        }
    }
}
