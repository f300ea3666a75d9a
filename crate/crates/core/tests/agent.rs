use std::rc::Rc;

use byzgather_core::agent::{
    detect_reliable_groups, follow, make_group, step, Action, AgentCore, Decision, MemberAction,
    Observation, PbcMode, Presented, Protocol, Stage,
};
use byzgather_core::explore::ExplorationPlan;
use byzgather_core::idset::IdSet;
use byzgather_core::rendezvous::{rel_step, RelMove};
use proptest::prelude::*;

// t_ex = 10, so t_rel(5) = 100 and t_rel(1) = 60.
fn proto() -> Protocol {
    let plan = ExplorationPlan::new(8, (0..10).map(|i| i % 3 + 1).collect(), 10, "t").unwrap();
    Protocol::new(plan, 1, PbcMode::Oracle)
}

fn ids(xs: &[u64]) -> IdSet {
    xs.iter().copied().collect()
}

fn agent(id: u64) -> Presented {
    Presented::initial(id, 4)
}

fn with_gid(id: u64, gid: u64) -> Presented {
    Presented {
        gid: Some(gid),
        ..agent(id)
    }
}

fn obs(here: &[Presented]) -> Observation<'_> {
    Observation {
        degree: 3,
        inport: Some(2),
        here,
        oracle: None,
    }
}

fn rel(p: &Protocol, id: u64, t: u64, o: &Observation<'_>) -> Action {
    match rel_step(id, t, &p.plan, o.degree, o.inport).unwrap() {
        RelMove::Port(q) => Action::Move(q),
        RelMove::Stay => Action::Stay,
    }
}

#[test]
fn initial_state() {
    let c = AgentCore::new(7, 4);
    assert_eq!(c.stage, Stage::CollectId);
    assert_eq!((c.length, c.elapsed, c.count), (4, 0, 0));
    assert!(!c.ready && !c.end_make_candidate && !c.terminated);
    assert_eq!(c.gid, None);
    assert_eq!(*c.s_p, ids(&[7]));
    assert!(c.r.is_empty() && c.s_c.is_empty() && c.p_p.is_empty() && c.p_c.is_empty());
    assert_eq!(
        c.present(),
        Presented {
            s_p: Rc::new(ids(&[7])),
            ..agent(7)
        }
    );
}

#[test]
fn stage_codes_round_trip() {
    for s in [
        Stage::CollectId,
        Stage::MakeCandidate,
        Stage::AgreeId,
        Stage::MakeGroup,
    ] {
        assert_eq!(Stage::from_code(s.code()), Some(s));
    }
    assert_eq!(Stage::from_code("X"), None);
    assert!(Stage::CollectId < Stage::MakeCandidate && Stage::AgreeId < Stage::MakeGroup);
}

#[test]
fn detect_examples() {
    // ceil(8/8) = 1: a single agent carrying gid 5 is enough.
    let here = [agent(1), with_gid(2, 5)];
    assert_eq!(detect_reliable_groups(&here, 8), (ids(&[5]), Some(5)));
    // ceil(17/8) = 3: two impostors are not a group.
    let here = [agent(1), with_gid(2, 5), with_gid(3, 5)];
    assert_eq!(detect_reliable_groups(&here, 17), (IdSet::new(), None));
    let here = [
        agent(1),
        with_gid(2, 5),
        with_gid(3, 5),
        with_gid(4, 5),
        with_gid(6, 2),
    ];
    assert_eq!(detect_reliable_groups(&here, 17), (ids(&[5]), Some(5)));
    assert_eq!(
        detect_reliable_groups(&[agent(1), agent(2)], 8),
        (IdSet::new(), None)
    );
    // Terminated members still count.
    let done = Presented {
        terminated: true,
        ..with_gid(4, 5)
    };
    let here = [with_gid(2, 5), with_gid(3, 5), done];
    assert_eq!(detect_reliable_groups(&here, 24), (ids(&[5]), Some(5)));
    assert_eq!(detect_reliable_groups(&here, 25), (IdSet::new(), None));
}

#[test]
fn follow_examples() {
    let group = ids(&[1, 2, 3, 4, 5]);
    let moved = |m: &'static [u64]| {
        move |id: u64| {
            if m.contains(&id) {
                MemberAction::Committed(Action::Move(2))
            } else {
                MemberAction::Committed(Action::Stay)
            }
        }
    };
    assert_eq!(follow(&group, moved(&[1, 2, 3])), Action::Move(2));
    assert_eq!(follow(&group, moved(&[1, 2])), Action::Stay);
    let four_done = |id: u64| {
        if id < 5 {
            MemberAction::Terminated
        } else {
            MemberAction::Committed(Action::Stay)
        }
    };
    assert_eq!(follow(&group, four_done), Action::Terminate);
    let split = |id: u64| match id {
        1 | 2 => MemberAction::Committed(Action::Move(1)),
        3 | 4 => MemberAction::Committed(Action::Move(2)),
        _ => MemberAction::Committed(Action::Stay),
    };
    assert_eq!(follow(&group, split), Action::Stay);
    assert_eq!(follow(&group, |_| MemberAction::Unknown), Action::Stay);
    // Half is not a strict majority.
    let pair = ids(&[1, 2]);
    assert_eq!(
        follow(&pair, |id| if id == 1 {
            MemberAction::Terminated
        } else {
            MemberAction::Unknown
        }),
        Action::Stay
    );
}

#[test]
fn fresh_agent_waits_and_doubles() {
    let p = proto();
    let mut c = AgentCore::new(5, 4);
    for _ in 0..4 {
        let here = [c.present()];
        assert_eq!(step(&p, &mut c, &obs(&here)), Decision::Act(Action::Stay));
    }
    assert_eq!((c.length, c.elapsed), (8, 0));
    assert_eq!(c.stage, Stage::CollectId);
    assert_eq!(c.clock, 4);
}

#[test]
fn collect_id_absorbs_and_walks() {
    let p = proto();
    let mut c = AgentCore::new(5, 4);
    c.length = 256;
    c.elapsed = 4;
    let here = [c.present(), agent(9)];
    let o = obs(&here);
    let d = step(&p, &mut c, &o);
    assert_eq!(*c.s_p, ids(&[5, 9]));
    assert_eq!(d, Decision::Act(rel(&p, 5, 4, &o)));

    c.elapsed = 255;
    let here = [c.present()];
    assert_eq!(step(&p, &mut c, &obs(&here)), Decision::Act(Action::Stay));
    assert_eq!(
        (c.stage, c.length, c.elapsed),
        (Stage::MakeCandidate, 512, 0)
    );
}

#[test]
fn make_candidate_thresholds() {
    let p = proto();
    // t_rel(id <= 8) <= 120 and t_rel(1000) = 240, so length 512 covers
    // 8 of the 9 IDs with 4 (t_rel + 1).
    let sp: Vec<u64> = (1..=8).chain([1000]).collect();
    let mut c = AgentCore::new(1, 4);
    c.stage = Stage::MakeCandidate;
    c.length = 512;
    c.s_p = Rc::new(ids(&sp));
    let here = [c.present()];
    step(&p, &mut c, &obs(&here));
    assert!(c.ready);
    assert!(!c.end_make_candidate);

    // |R| = 6 at elapsed 1 ends the stage.
    let mut c = AgentCore::new(1, 4);
    c.stage = Stage::MakeCandidate;
    c.length = 16;
    c.s_p = Rc::new(ids(&sp));
    c.r = ids(&[2, 3, 4, 5, 6, 7]);
    let here = [c.present()];
    step(&p, &mut c, &obs(&here));
    assert!(c.ready && c.end_make_candidate);

    // |R| = 3 and short cycles: nothing changes, the agent walks.
    let mut c = AgentCore::new(1, 4);
    c.stage = Stage::MakeCandidate;
    c.length = 16;
    c.s_p = Rc::new(ids(&sp));
    c.r = ids(&[2, 3, 4]);
    let here = [c.present()];
    let o = obs(&here);
    let d = step(&p, &mut c, &o);
    assert!(!c.ready && !c.end_make_candidate);
    assert_eq!(d, Decision::Act(rel(&p, 1, 0, &o)));

    // Ready agents seen at the node join R.
    let ready = Presented {
        ready: true,
        ..agent(3)
    };
    let mut c = AgentCore::new(1, 4);
    c.stage = Stage::MakeCandidate;
    c.length = 16;
    c.elapsed = 4;
    let here = [c.present(), ready];
    step(&p, &mut c, &obs(&here));
    assert!(c.r.contains(3));
}

#[test]
fn make_candidate_cycle_end_enters_agree_id() {
    let p = proto();
    let mut c = AgentCore::new(1, 4);
    c.stage = Stage::MakeCandidate;
    c.length = 16;
    c.elapsed = 15;
    c.end_make_candidate = true;
    c.clock = 99;
    let here = [c.present()];
    assert_eq!(step(&p, &mut c, &obs(&here)), Decision::Act(Action::Stay));
    assert_eq!((c.stage, c.length, c.elapsed), (Stage::AgreeId, 32, 0));
    assert_eq!(c.candidate, Some((32, 100)));
}

#[test]
fn agree_id_first_cycle_filters_by_length() {
    let p = proto();
    let mut c = AgentCore::new(1, 4);
    c.stage = Stage::AgreeId;
    c.length = 64;
    let same = Presented {
        stage: Stage::AgreeId,
        length: 64,
        ..agent(7)
    };
    let other = Presented {
        stage: Stage::AgreeId,
        length: 128,
        ..agent(8)
    };
    let behind = Presented {
        stage: Stage::MakeCandidate,
        length: 64,
        ..agent(9)
    };
    let here = [c.present(), same, other, behind];
    step(&p, &mut c, &obs(&here));
    assert_eq!(c.p_p, ids(&[1, 7]));
}

// `make_group` runs after the caller has advanced `elapsed`.
fn group_agent(p_c: &[u64], count: u64, length: u64, elapsed: u64) -> AgentCore {
    let mut c = AgentCore::new(3, 4);
    c.stage = Stage::MakeGroup;
    c.p_c = p_c.to_vec();
    c.count = count;
    c.length = length;
    c.elapsed = elapsed;
    c
}

#[test]
fn make_group_targets() {
    let p = proto();
    // count 4 over [3, 7, 9] targets index 1, agent 7.
    let mut c = group_agent(&[3, 7, 9], 4, 64, 40);
    let here = [c.present(), agent(7)];
    assert_eq!(make_group(&p, &mut c, &obs(&here)), Ok(Action::Stay));

    let mut c = group_agent(&[3, 7, 9], 4, 64, 40);
    let here = [c.present(), agent(9)];
    let o = obs(&here);
    assert_eq!(make_group(&p, &mut c, &o), Ok(rel(&p, 3, 39, &o)));

    // count 3 targets index 0, the agent itself.
    let mut c = group_agent(&[3, 7, 9], 3, 64, 40);
    let here = [c.present()];
    assert_eq!(make_group(&p, &mut c, &obs(&here)), Ok(Action::Stay));

    // First half always walks.
    let mut c = group_agent(&[3, 7, 9], 3, 64, 10);
    let here = [c.present()];
    let o = obs(&here);
    assert_eq!(make_group(&p, &mut c, &o), Ok(rel(&p, 3, 9, &o)));

    let mut c = group_agent(&[], 3, 64, 40);
    let here = [c.present()];
    assert!(make_group(&p, &mut c, &obs(&here)).is_err());
}

#[test]
fn make_group_final_round_sets_gid() {
    let p = proto();
    let sp: Vec<u64> = (1..=9).collect();
    let sc = ids(&[1, 2, 3, 4, 5, 6, 7, 8]);
    let mut c = group_agent(&[3, 7, 9], 0, 64, 64);
    c.s_p = Rc::new(ids(&sp));
    c.s_c = Rc::new(sc.clone());
    let peer = |id| Presented {
        stage: Stage::MakeGroup,
        length: 64,
        s_p: Rc::new(ids(&sp)),
        s_c: Rc::new(sc.clone()),
        ..agent(id)
    };
    let mismatched = Presented {
        s_c: Rc::new(ids(&[1])),
        ..peer(4)
    };
    let here = [c.present(), mismatched, peer(7), peer(9)];
    assert_eq!(make_group(&p, &mut c, &obs(&here)), Ok(Action::Stay));
    assert_eq!(c.d, ids(&[3, 7, 9]));
    assert_eq!(c.gid, Some(3));
    assert_eq!((c.count, c.elapsed), (1, 0));

    // |D| = 2 < (3/9) 8: no group.
    let mut c = group_agent(&[3, 7, 9], 0, 64, 64);
    c.s_p = Rc::new(ids(&sp));
    c.s_c = Rc::new(sc.clone());
    let here = [c.present(), peer(7)];
    make_group(&p, &mut c, &obs(&here)).unwrap();
    assert_eq!(c.gid, None);
}

#[test]
fn group_member_walks_then_terminates() {
    let p = proto();
    let mut c = AgentCore::new(4, 4);
    c.stage = Stage::MakeGroup;
    c.gid = Some(4);
    c.length = 8;
    c.elapsed = 6;
    let here = [c.present(), with_gid(6, 4)];
    let o = obs(&here);
    assert_eq!(step(&p, &mut c, &o), Decision::Act(rel(&p, 4, 6, &o)));
    let here = [c.present(), with_gid(6, 4)];
    assert_eq!(
        step(&p, &mut c, &obs(&here)),
        Decision::Act(Action::Terminate)
    );
    assert!(c.terminated);
    let frozen = c.present();
    let here = [c.present()];
    assert_eq!(step(&p, &mut c, &obs(&here)), Decision::Act(Action::Stay));
    assert_eq!(c.present(), frozen);
}

#[test]
fn agent_without_gid_follows_a_group() {
    let p = proto();
    let mut c = AgentCore::new(1, 4);
    c.stage = Stage::AgreeId;
    c.s_p = Rc::new(ids(&(1..=16).collect::<Vec<_>>()));
    let here = [c.present(), with_gid(2, 4), with_gid(4, 4), with_gid(5, 9)];
    assert_eq!(
        step(&p, &mut c, &obs(&here)),
        Decision::Follow(ids(&[2, 4]))
    );
    assert_eq!(c.min_gid, Some(4));
    assert!(c.followed);

    // A member of a larger gid follows the smaller group too.
    let mut c = AgentCore::new(5, 4);
    c.stage = Stage::MakeGroup;
    c.gid = Some(9);
    let here = [with_gid(2, 4), with_gid(4, 4), c.present()];
    assert_eq!(
        step(&p, &mut c, &obs(&here)),
        Decision::Follow(ids(&[2, 4]))
    );
}

fn arb_presented() -> impl Strategy<Value = Presented> {
    (
        2u64..40,
        0usize..4,
        0u32..8,
        any::<bool>(),
        prop::option::of(1u64..40),
        prop::collection::vec(1u64..40, 0..10),
    )
        .prop_map(|(id, st, sh, ready, gid, sp)| Presented {
            stage: [
                Stage::CollectId,
                Stage::MakeCandidate,
                Stage::AgreeId,
                Stage::MakeGroup,
            ][st],
            length: 4 << sh,
            ready,
            gid,
            s_p: Rc::new(sp.into_iter().collect()),
            ..agent(id)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // S_p never shrinks and holds the own ID, stages only move forward,
    // P_c stays sorted and a terminated agent is frozen.
    #[test]
    fn core_invariants_hold_under_arbitrary_observations(
        rounds in prop::collection::vec(prop::collection::vec(arb_presented(), 0..5), 1..300),
    ) {
        let p = proto();
        let mut c = AgentCore::new(1, 4);
        for others in rounds {
            let mut here = vec![c.present()];
            let mut seen = vec![1];
            for a in others {
                if !seen.contains(&a.id) {
                    seen.push(a.id);
                    here.push(a);
                }
            }
            here.sort_by_key(|a| a.id);
            let before = c.clone();
            let mut twin = c.clone();
            let o = Observation { degree: 2, inport: Some(1), here: &here, oracle: None };
            let d = step(&p, &mut c, &o);
            prop_assert_eq!(&d, &step(&p, &mut twin, &o));
            prop_assert_eq!(c.present(), twin.present());
            prop_assert!(c.s_p.is_superset_of(&before.s_p));
            prop_assert!(c.s_p.contains(1));
            prop_assert!(c.stage >= before.stage);
            prop_assert!(c.p_c.windows(2).all(|w| w[0] < w[1]));
            if let Decision::Act(Action::Move(q)) = &d {
                let q = *q;
                prop_assert!((1..=2).contains(&q));
            }
            if before.terminated {
                prop_assert_eq!(&d, &Decision::Act(Action::Stay));
                prop_assert_eq!(c.present(), before.present());
            }
            if let Decision::Follow(_) = d {
                c.apply_follow(Action::Stay);
            }
        }
    }
}
