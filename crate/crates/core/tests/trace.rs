use byzgather_core::agent::{Action, Stage};
use byzgather_core::trace::{Detail, ParseError, TraceAction, TraceRecord};
use proptest::prelude::*;

fn base() -> TraceRecord {
    TraceRecord {
        round: 12,
        agent: 7,
        node: 3,
        stage: Stage::MakeCandidate,
        length: 64,
        elapsed: 5,
        count: 0,
        ready: true,
        end_make_candidate: false,
        gid: None,
        action: TraceAction {
            followed: false,
            action: Action::Move(2),
        },
        s_p: 9,
        p_p: 0,
        p_c: 0,
        d: 0,
        detail: Detail::None,
    }
}

#[test]
fn line_format_examples() {
    assert_eq!(base().to_string(), "12,7,3,M,64,5,0,1,0,-,M2,9,0,0,0,");
    let r = TraceRecord {
        gid: Some(4),
        action: TraceAction {
            followed: true,
            action: Action::Terminate,
        },
        detail: Detail::EnterMakeGroup {
            s_c: [1, 4, 7].into_iter().collect(),
            p_c: vec![4, 7],
        },
        ..base()
    };
    assert_eq!(
        r.to_string(),
        "12,7,3,M,64,5,0,1,0,4,FT,9,0,0,0,sc=1;4;7|pc=4;7"
    );
    let r = TraceRecord {
        detail: Detail::EnterMakeCandidate {
            s_p: [2, 3].into_iter().collect(),
        },
        ..base()
    };
    assert_eq!(r.to_string(), "12,7,3,M,64,5,0,1,0,-,M2,9,0,0,0,sp=2;3");
    let empty = TraceRecord {
        detail: Detail::EnterMakeGroup {
            s_c: Default::default(),
            p_c: vec![],
        },
        ..base()
    };
    assert_eq!(empty.to_string().parse::<TraceRecord>(), Ok(empty));
}

#[test]
fn parse_errors_name_the_field() {
    let err = |s: &str| s.parse::<TraceRecord>().unwrap_err();
    assert_eq!(err("1,2,3").field, "record");
    assert_eq!(err("x,7,3,M,64,5,0,1,0,-,M2,9,0,0,0,").field, "round");
    assert_eq!(err("12,7,3,Q,64,5,0,1,0,-,M2,9,0,0,0,").field, "stage");
    assert_eq!(err("12,7,3,M,64,5,0,2,0,-,M2,9,0,0,0,").field, "ready");
    assert_eq!(err("12,7,3,M,64,5,0,1,0,-,X,9,0,0,0,").field, "action");
    assert_eq!(err("12,7,3,M,64,5,0,1,0,-,M2,9,0,0,0,zz=1").field, "detail");
    assert_eq!(
        "Mx".parse::<TraceAction>(),
        Err(ParseError {
            field: "action",
            text: String::from("Mx")
        })
    );
    assert_eq!(
        err("12,7,3,M,64,5,0,1,0,g,M2,9,0,0,0,").to_string(),
        "bad gid field \"g\""
    );
}

fn arb_action() -> impl Strategy<Value = TraceAction> {
    let a = prop_oneof![
        Just(Action::Stay),
        Just(Action::Terminate),
        (1u32..20).prop_map(Action::Move)
    ];
    (any::<bool>(), a).prop_map(|(followed, action)| TraceAction { followed, action })
}

fn arb_detail() -> impl Strategy<Value = Detail> {
    let ids = || prop::collection::btree_set(1u64..1000, 0..6);
    prop_oneof![
        Just(Detail::None),
        ids().prop_map(|s| Detail::EnterMakeCandidate {
            s_p: s.into_iter().collect()
        }),
        (ids(), ids()).prop_map(|(s, p)| Detail::EnterMakeGroup {
            s_c: s.into_iter().collect(),
            p_c: p.into_iter().collect()
        }),
    ]
}

proptest! {
    #[test]
    fn records_round_trip(
        round in any::<u64>(), agent in 1u64.., node in 0usize..100, st in 0usize..4,
        length in any::<u64>(), elapsed in any::<u64>(), count in any::<u64>(),
        ready in any::<bool>(), emc in any::<bool>(), gid in prop::option::of(0u64..5000),
        action in arb_action(), sizes in (0usize..50, 0usize..50, 0usize..50, 0usize..50), detail in arb_detail(),
    ) {
        let r = TraceRecord {
            round, agent, node,
            stage: [Stage::CollectId, Stage::MakeCandidate, Stage::AgreeId, Stage::MakeGroup][st],
            length, elapsed, count, ready, end_make_candidate: emc, gid, action,
            s_p: sizes.0, p_p: sizes.1, p_c: sizes.2, d: sizes.3, detail,
        };
        let line = r.to_string();
        prop_assert!(!line.contains('\n'));
        prop_assert_eq!(line.parse::<TraceRecord>(), Ok(r));
    }
}
