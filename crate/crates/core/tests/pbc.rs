use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::rc::Rc;

use byzgather_core::pbc::{
    contested, king, oracle_decide, pair_set, phases_for, InputPair, InstanceTag, PairSet, Payload,
    PbcError, PconsMessage, PconsState,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn set(pairs: &[(u64, i64)]) -> PairSet {
    pairs.iter().map(|&(i, v)| InputPair::new(i, v)).collect()
}

fn step(s: &mut PconsState, inbox: &[PconsMessage]) {
    if s.is_finished() {
        s.ghost_phase_end(inbox);
    } else {
        s.on_phase_end(inbox).unwrap();
    }
}

/// Runs an all-good instance to completion with full message exchange.
fn run_all_good(inputs: &[(u64, PairSet)]) -> Vec<PconsState> {
    let mut nodes: Vec<PconsState> = inputs
        .iter()
        .map(|(id, s)| PconsState::from_set(*id, s.clone(), InstanceTag::S))
        .collect();
    let horizon = phases_for(nodes.len());
    for _ in 0..horizon {
        let out: Vec<PconsMessage> = nodes.iter().map(|n| n.outgoing()).collect();
        for n in nodes.iter_mut() {
            step(n, &out);
        }
    }
    nodes
}

#[test]
fn init_examples() {
    let s = PconsState::init(1, &[], InstanceTag::S).unwrap();
    assert_eq!(s.current_phase(), 1);
    assert!(s.output().is_none());
    let s = PconsState::init(1, &[InputPair::new(5, 1)], InstanceTag::P).unwrap();
    assert_eq!(s.inputs(), &set(&[(5, 1)]));
    assert_eq!(
        PconsState::init(
            1,
            &[InputPair::new(5, 1), InputPair::new(5, 2)],
            InstanceTag::S
        )
        .unwrap_err(),
        PbcError::DuplicatePairId(5)
    );
    assert_eq!(
        pair_set(&[InputPair::new(3, 0), InputPair::new(3, 0)]),
        Err(PbcError::DuplicatePairId(3))
    );
}

#[test]
fn first_broadcast_is_the_input_set() {
    let mut s = PconsState::from_set(4, set(&[(9, 3)]), InstanceTag::S);
    let m = s.outgoing();
    assert_eq!(m.sender, 4);
    assert_eq!(m.phase, 1);
    assert_eq!(*m.payload, Payload::Input(set(&[(9, 3)])));
    let next = s.on_phase_end(&[]).unwrap();
    assert_eq!(next.phase, 2);
    assert!(matches!(*next.payload, Payload::Echo { .. }));
}

#[test]
fn unanimous_inputs_are_decided() {
    let inputs: Vec<(u64, PairSet)> = (1..=4).map(|id| (id, set(&[(9, 3)]))).collect();
    for n in run_all_good(&inputs) {
        assert_eq!(n.output(), Some(&set(&[(9, 3)])));
        assert_eq!(n.certified(), &[1, 2, 3, 4]);
        // Measured phase count of the reference protocol at P = 4.
        assert_eq!(n.phase_count(), Ok(10));
    }
}

#[test]
fn output_is_exactly_once() {
    let inputs: Vec<(u64, PairSet)> = (1..=4).map(|id| (id, set(&[(1, 1)]))).collect();
    let mut nodes = run_all_good(&inputs);
    let before = nodes[0].output().cloned();
    assert_eq!(nodes[0].on_phase_end(&[]).unwrap_err(), PbcError::Finished);
    nodes[0].ghost_phase_end(&[]);
    assert_eq!(nodes[0].output().cloned(), before);
    let fresh = PconsState::from_set(1, PairSet::new(), InstanceTag::S);
    assert_eq!(fresh.phase_count(), Err(PbcError::NotFinished));
}

#[test]
fn phase_counts_follow_the_declared_formula() {
    assert_eq!(phases_for(1), 7);
    assert_eq!(phases_for(4), 10);
    assert_eq!(phases_for(7), 13);
    for p in [1usize, 2, 4, 7] {
        let inputs: Vec<(u64, PairSet)> = (1..=p as u64).map(|id| (id, set(&[(id, 1)]))).collect();
        for n in run_all_good(&inputs) {
            assert_eq!(n.phase_count(), Ok(phases_for(p)));
        }
    }
}

#[test]
fn king_order() {
    let c = [3, 8, 11, 20];
    assert_eq!(king(&c, 0), Some(3));
    assert_eq!(king(&c, 1), Some(20));
    assert!(c.contains(&king(&c, 2).unwrap()));
    assert_eq!(king(&[], 0), None);
}

#[test]
fn payload_encoding_is_canonical() {
    let a = Payload::Propose {
        ones: set(&[(2, 1), (1, 1)]),
        bottoms: PairSet::new(),
    };
    let b = Payload::Propose {
        ones: set(&[(1, 1), (2, 1)]),
        bottoms: PairSet::new(),
    };
    assert_eq!(a.encode(), b.encode());
    assert_ne!(
        Payload::Vote(set(&[(1, 1)])).encode(),
        Payload::Input(set(&[(1, 1)])).encode()
    );
    let bottom = Payload::Vote(
        [InputPair {
            pair_id: 1,
            value: None,
        }]
        .into_iter()
        .collect(),
    );
    assert_ne!(bottom.encode(), Payload::Vote(set(&[(1, 0)])).encode());
}

#[test]
fn oracle_examples() {
    let unanimous: BTreeMap<u64, PairSet> = (1..=3).map(|id| (id, set(&[(7, 2)]))).collect();
    assert_eq!(
        oracle_decide(&unanimous, &PairSet::new()),
        Ok(set(&[(7, 2)]))
    );

    let mut half: BTreeMap<u64, PairSet> = BTreeMap::new();
    half.insert(1, set(&[(8, 1)]));
    half.insert(2, set(&[(8, 1)]));
    half.insert(3, PairSet::new());
    half.insert(4, PairSet::new());
    assert_eq!(contested(&half), set(&[(8, 1)]));
    assert_eq!(oracle_decide(&half, &PairSet::new()), Ok(PairSet::new()));
    assert_eq!(oracle_decide(&half, &set(&[(8, 1)])), Ok(set(&[(8, 1)])));
    assert_eq!(
        oracle_decide(&half, &set(&[(99, 0)])),
        Err(PbcError::UnknownPair(InputPair::new(99, 0)))
    );
}

/// Checks Validity 1, Validity 2 and Agreement over the good outputs.
fn properties_hold(good_inputs: &[PairSet], outputs: &[&PairSet]) -> Result<(), String> {
    let first = outputs[0];
    if outputs.iter().any(|o| *o != first) {
        return Err(format!("disagreement: {outputs:?}"));
    }
    let union: PairSet = good_inputs.iter().flatten().copied().collect();
    for p in &union {
        if p.value.is_some() && good_inputs.iter().all(|s| s.contains(p)) && !first.contains(p) {
            return Err(format!("unanimous {p:?} missing"));
        }
    }
    if let Some(p) = first.iter().find(|p| !union.contains(p)) {
        return Err(format!("{p:?} held by no good participant"));
    }
    Ok(())
}

// Exhaustive search at P = 4 with one Byzantine participant. Each good
// participant either holds pair `A` or not (binary value); `C` is held by
// no one and exists for the adversary to inject. In every phase the
// adversary picks, separately for each good recipient, one message from a
// bounded alphabet (including silence). Joint good states are deduplicated
// per phase, which makes the search complete over the alphabet.

const A: InputPair = InputPair {
    pair_id: 1,
    value: Some(1),
};
const C: InputPair = InputPair {
    pair_id: 2,
    value: Some(1),
};

fn subsets() -> Vec<PairSet> {
    vec![PairSet::new(), [A].into(), [C].into(), [A, C].into()]
}

fn alphabet(byz: u64, good: &[u64], phase: u32) -> Vec<Option<Payload>> {
    let mut out = vec![None];
    match phase {
        1 => out.extend(subsets().into_iter().map(|s| Some(Payload::Input(s)))),
        2 => {
            let all: BTreeSet<u64> = good.iter().copied().chain([byz]).collect();
            let goods: BTreeSet<u64> = good.iter().copied().collect();
            let partial: BTreeSet<u64> = good[1..].iter().copied().chain([byz]).collect();
            for heard in [all, goods, partial] {
                for votes in subsets() {
                    out.push(Some(Payload::Echo {
                        heard: heard.clone(),
                        votes,
                    }));
                }
            }
        }
        _ if (phase - 2) % 3 == 1 => {
            // Propose: each pair is one, bottom or zero.
            for a in 0..3 {
                for c in 0..3 {
                    let mut ones = PairSet::new();
                    let mut bottoms = PairSet::new();
                    for (p, x) in [(A, a), (C, c)] {
                        match x {
                            1 => {
                                ones.insert(p);
                            }
                            2 => {
                                bottoms.insert(p);
                            }
                            _ => {}
                        }
                    }
                    out.push(Some(Payload::Propose { ones, bottoms }));
                }
            }
        }
        _ => out.extend(subsets().into_iter().map(|s| Some(Payload::Vote(s)))),
    }
    out
}

fn exhaust(byz: u64, holds: [bool; 3]) -> usize {
    let good: Vec<u64> = (1..=4).filter(|&i| i != byz).collect();
    let inputs: Vec<PairSet> = holds
        .iter()
        .map(|&h| if h { [A].into() } else { PairSet::new() })
        .collect();
    let start: Vec<PconsState> = good
        .iter()
        .zip(&inputs)
        .map(|(&id, s)| PconsState::from_set(id, s.clone(), InstanceTag::S))
        .collect();
    let mut frontier: HashSet<Vec<PconsState>> = HashSet::from([start]);
    let horizon = phases_for(4);
    let mut explored = 0;
    for phase in 1..=horizon {
        let alpha = alphabet(byz, &good, phase);
        let mut next = HashSet::new();
        for joint in &frontier {
            let good_msgs: Vec<PconsMessage> = joint.iter().map(|s| s.outgoing()).collect();
            let per_node: Vec<Vec<PconsState>> = (0..joint.len())
                .map(|i| {
                    let mut seen = HashSet::new();
                    for m in &alpha {
                        let mut inbox = good_msgs.clone();
                        if let Some(pl) = m {
                            inbox.push(PconsMessage {
                                sender: byz,
                                tag: InstanceTag::S,
                                phase,
                                payload: Rc::new(pl.clone()),
                            });
                        }
                        let mut s = joint[i].clone();
                        step(&mut s, &inbox);
                        seen.insert(s);
                    }
                    seen.into_iter().collect()
                })
                .collect();
            for a in &per_node[0] {
                for b in &per_node[1] {
                    for c in &per_node[2] {
                        next.insert(vec![a.clone(), b.clone(), c.clone()]);
                    }
                }
            }
        }
        explored += next.len();
        frontier = next;
    }
    for joint in &frontier {
        let outs: Vec<&PairSet> = joint
            .iter()
            .map(|s| {
                s.output()
                    .unwrap_or_else(|| panic!("no output by phase {horizon}: {s:?}"))
            })
            .collect();
        if let Err(e) = properties_hold(&inputs, &outs) {
            panic!("byzantine {byz}, holds {holds:?}: {e}");
        }
        for s in joint {
            assert!(s.phase_count().unwrap() <= horizon);
        }
    }
    explored
}

#[test]
fn exhaustive_four_participants_one_byzantine() {
    let mut total = 0;
    for byz in 1..=4 {
        for mask in 0..8u8 {
            let holds = [mask & 1 != 0, mask & 2 != 0, mask & 4 != 0];
            total += exhaust(byz, holds);
        }
    }
    assert!(total > 0);
}

#[test]
fn equivocated_inputs_keep_a_unanimous_pair() {
    // Byzantine 4 sends a different phase-1 set to each good participant and
    // then copies whichever good participant it last heard from.
    let good = [1u64, 2, 3];
    let mut nodes: Vec<PconsState> = good
        .iter()
        .map(|&id| PconsState::from_set(id, set(&[(9, 3)]), InstanceTag::S))
        .collect();
    let lies = [set(&[]), set(&[(9, 3), (10, 1)]), set(&[(10, 1)])];
    for phase in 1..=phases_for(4) {
        let out: Vec<PconsMessage> = nodes.iter().map(|n| n.outgoing()).collect();
        for (i, n) in nodes.iter_mut().enumerate() {
            let payload = if phase == 1 {
                Payload::Input(lies[i].clone())
            } else {
                (*out[(i + 1) % 3].payload).clone()
            };
            let mut inbox = out.clone();
            inbox.push(PconsMessage {
                sender: 4,
                tag: InstanceTag::S,
                phase,
                payload: Rc::new(payload),
            });
            step(n, &inbox);
        }
    }
    let outs: Vec<&PairSet> = nodes.iter().map(|n| n.output().unwrap()).collect();
    assert!(outs.iter().all(|o| o.contains(&InputPair::new(9, 3))));
    properties_hold(&vec![set(&[(9, 3)]); 3], &outs).unwrap();
}

fn random_pairs(rng: &mut ChaCha8Rng) -> PairSet {
    (0..rng.random_range(0..4))
        .map(|_| InputPair::new(rng.random_range(1..6), rng.random_range(0..2)))
        .collect()
}

fn random_payload(rng: &mut ChaCha8Rng, phase: u32) -> Option<Payload> {
    if rng.random_bool(0.2) {
        return None;
    }
    Some(match phase {
        1 => Payload::Input(random_pairs(rng)),
        2 => Payload::Echo {
            heard: (1..=7).filter(|_| rng.random_bool(0.7)).collect(),
            votes: random_pairs(rng),
        },
        _ if (phase - 2) % 3 == 1 => {
            let ones = random_pairs(rng);
            let bottoms = random_pairs(rng).difference(&ones).copied().collect();
            Payload::Propose { ones, bottoms }
        }
        _ => Payload::Vote(random_pairs(rng)),
    })
}

fn arb_pairs() -> impl Strategy<Value = PairSet> {
    proptest::collection::btree_set(
        (1u64..6, 0i64..2).prop_map(|(i, v)| InputPair::new(i, v)),
        0..4,
    )
}

/// Participants `1..=p`; `byz` send random per-recipient messages.
fn random_run(p: u64, byz: &[u64], inputs: &[PairSet], seed: u64) -> Result<(), String> {
    let good: Vec<u64> = (1..=p).filter(|i| !byz.contains(i)).collect();
    let mut nodes: Vec<PconsState> = good
        .iter()
        .zip(inputs)
        .map(|(&id, s)| PconsState::from_set(id, s.clone(), InstanceTag::P))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for phase in 1..=phases_for(p as usize) {
        let out: Vec<PconsMessage> = nodes.iter().map(|n| n.outgoing()).collect();
        for n in nodes.iter_mut() {
            let mut inbox = out.clone();
            for &b in byz {
                if let Some(pl) = random_payload(&mut rng, phase) {
                    inbox.push(PconsMessage {
                        sender: b,
                        tag: InstanceTag::P,
                        phase,
                        payload: Rc::new(pl),
                    });
                }
            }
            step(n, &inbox);
        }
    }
    let outs: Vec<&PairSet> = nodes
        .iter()
        .map(|n| n.output().ok_or("no output"))
        .collect::<Result<_, _>>()?;
    properties_hold(inputs, &outs)
}

/// Whether some king iteration picks the same good ID at every good node
/// for every subset of `byz` that may be certified, within the iterations
/// of a node that certified no Byzantine ID.
fn common_good_king(good: &[u64], byz: &[u64]) -> bool {
    let iterations = (good.len() as u32 - 1) / 3 + 2;
    let mut all: Vec<u64> = good.iter().chain(byz).copied().collect();
    all.sort_unstable();
    (0..iterations).any(|i| {
        let k = king(good, i).unwrap();
        // The king over the full set is good and equals the king over the
        // good IDs, so no subset of Byzantine IDs can change it.
        king(&all, i) == Some(k)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // One Byzantine participant: the lowest and highest certified IDs
    // cannot both be Byzantine, so a common good king is guaranteed.
    #[test]
    fn random_adversary_one_byzantine(
        inputs in proptest::collection::vec(arb_pairs(), 6),
        byz in 1u64..=7,
        seed in any::<u64>(),
    ) {
        prop_assert_eq!(random_run(7, &[byz], &inputs, seed), Ok(()));
    }

    // Two Byzantine participants can get certified at some good nodes only,
    // so the king schedules may disagree. Properties are asserted whenever
    // the ID assignment yields a common good king before the earliest
    // possible output.
    #[test]
    fn random_adversary_two_byzantine(
        inputs in proptest::collection::vec(arb_pairs(), 8),
        byz in proptest::sample::subsequence((1u64..=10).collect::<Vec<_>>(), 2),
        seed in any::<u64>(),
    ) {
        let good: Vec<u64> = (1..=10).filter(|i| !byz.contains(i)).collect();
        prop_assume!(common_good_king(&good, &byz));
        prop_assert_eq!(random_run(10, &byz, &inputs, seed), Ok(()));
    }

    #[test]
    fn all_good_instances_agree(
        inputs in proptest::collection::vec(
            proptest::collection::btree_set((1u64..8, 0i64..3).prop_map(|(i, v)| InputPair::new(i, v)), 0..5),
            1..8,
        ),
    ) {
        let ins: Vec<(u64, PairSet)> = inputs.iter().cloned().enumerate().map(|(i, s)| (i as u64 + 1, s)).collect();
        let nodes = run_all_good(&ins);
        let outs: Vec<&PairSet> = nodes.iter().map(|n| n.output().expect("terminated")).collect();
        prop_assert_eq!(properties_hold(&inputs, &outs), Ok(()));
        for n in &nodes {
            prop_assert_eq!(n.phase_count(), Ok(phases_for(ins.len())));
        }
    }

    #[test]
    fn oracle_satisfies_validity(
        inputs in proptest::collection::vec(
            proptest::collection::btree_set((1u64..6, 0i64..2).prop_map(|(i, v)| InputPair::new(i, v)), 0..4),
            1..6,
        ),
        pick in any::<u64>(),
    ) {
        let good: BTreeMap<u64, PairSet> = inputs.iter().cloned().enumerate().map(|(i, s)| (i as u64 + 1, s)).collect();
        let include: PairSet = contested(&good).into_iter().enumerate().filter(|(i, _)| pick >> (i % 64) & 1 == 1).map(|(_, p)| p).collect();
        let out = oracle_decide(&good, &include).unwrap();
        let outs = vec![&out; inputs.len()];
        prop_assert_eq!(properties_hold(&inputs, &outs), Ok(()));
    }
}
