//! Universal exploration sequences as port-rotation offsets.
//!
//! A plan is a list of offsets. At step `t` an agent that entered its node
//! through port `p` leaves through `((p + offsets[t] - 1) mod d) + 1`. The
//! very first step has no inport and rotates from port 1.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{NodeId, Port, PortGraph};

/// Restarts tried by [`build_plan`]; the shortest certified plan wins.
pub const PLAN_RESTARTS: u64 = 24;
/// Candidate offsets scored per extension step.
const CANDIDATES: usize = 4;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExplorationPlan {
    pub max_nodes: usize,
    pub offsets: Vec<u32>,
    pub t_ex: usize,
    pub corpus_id: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ExploreError {
    IndexOutOfPlan {
        t: usize,
        len: usize,
    },
    ZeroDegree,
    InportOutOfRange {
        inport: Port,
        degree: usize,
    },
    BudgetExhausted {
        budget: usize,
    },
    ZeroBudget,
    OversizedGraph {
        graph: usize,
        nodes: usize,
        max_nodes: usize,
    },
    ShortPlan {
        t_ex: usize,
        len: usize,
    },
}

impl fmt::Display for ExploreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExploreError::IndexOutOfPlan { t, len } => {
                write!(f, "step index {t} outside plan of length {len}")
            }
            ExploreError::ZeroDegree => write!(f, "cannot leave a node of degree 0"),
            ExploreError::InportOutOfRange { inport, degree } => {
                write!(f, "inport {inport} out of range for degree {degree}")
            }
            ExploreError::BudgetExhausted { budget } => {
                write!(f, "no certified plan within {budget} steps")
            }
            ExploreError::ZeroBudget => write!(f, "budget must be positive"),
            ExploreError::OversizedGraph {
                graph,
                nodes,
                max_nodes,
            } => {
                write!(
                    f,
                    "corpus graph {graph} has {nodes} nodes, plan covers at most {max_nodes}"
                )
            }
            ExploreError::ShortPlan { t_ex, len } => {
                write!(f, "plan claims t_ex {t_ex} but holds only {len} offsets")
            }
        }
    }
}

impl core::error::Error for ExploreError {}

/// Where certification failed: this start node is not fully explored.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Uncovered {
    pub graph: usize,
    pub start: NodeId,
}

/// The rotation rule on its own.
#[inline]
pub fn rotate(offset: u32, degree: usize, inport: Option<Port>) -> Result<Port, ExploreError> {
    if degree == 0 {
        return Err(ExploreError::ZeroDegree);
    }
    let p0 = match inport {
        None => 1,
        Some(p) if p >= 1 && (p as usize) <= degree => p as u64,
        Some(p) => return Err(ExploreError::InportOutOfRange { inport: p, degree }),
    };
    Ok((((p0 + offset as u64 - 1) % degree as u64) + 1) as Port)
}

impl ExplorationPlan {
    pub fn new(
        max_nodes: usize,
        offsets: Vec<u32>,
        t_ex: usize,
        corpus_id: impl Into<String>,
    ) -> Result<ExplorationPlan, ExploreError> {
        if offsets.len() < t_ex {
            return Err(ExploreError::ShortPlan {
                t_ex,
                len: offsets.len(),
            });
        }
        Ok(ExplorationPlan {
            max_nodes,
            offsets,
            t_ex,
            corpus_id: corpus_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    #[inline]
    pub fn step(
        &self,
        t: usize,
        degree: usize,
        inport: Option<Port>,
    ) -> Result<Port, ExploreError> {
        let off = *self.offsets.get(t).ok_or(ExploreError::IndexOutOfPlan {
            t,
            len: self.offsets.len(),
        })?;
        rotate(off, degree, inport)
    }
}

// Per (graph, start) walk state for incremental certification.
#[derive(Clone)]
struct Walk {
    graph: usize,
    node: NodeId,
    inport: Option<Port>,
    visited: Vec<u64>,
    remaining: usize,
}

impl Walk {
    fn start(graph: usize, g: &PortGraph, start: NodeId) -> Walk {
        let n = g.node_count();
        let mut visited = vec![0u64; n.div_ceil(64)];
        visited[start / 64] |= 1 << (start % 64);
        Walk {
            graph,
            node: start,
            inport: None,
            visited,
            remaining: n - 1,
        }
    }

    // Returns whether the move visits a new node.
    fn advance(&mut self, g: &PortGraph, offset: u32) -> bool {
        let d = g.degree(self.node);
        if d == 0 {
            return false;
        }
        let out = rotate(offset, d, self.inport).expect("inport tracked from graph");
        let (u, q) = g.follow(self.node, out).expect("valid port");
        self.node = u;
        self.inport = Some(q);
        let (w, b) = (u / 64, 1u64 << (u % 64));
        if self.visited[w] & b == 0 {
            self.visited[w] |= b;
            self.remaining -= 1;
            true
        } else {
            false
        }
    }

    fn peek_new(&self, g: &PortGraph, offset: u32) -> bool {
        let d = g.degree(self.node);
        if d == 0 {
            return false;
        }
        let out = rotate(offset, d, self.inport).expect("inport tracked from graph");
        let (u, _) = g.follow(self.node, out).expect("valid port");
        self.visited[u / 64] & (1 << (u % 64)) == 0
    }
}

fn check_sizes(corpus: &[PortGraph], max_nodes: usize) -> Result<(), ExploreError> {
    for (i, g) in corpus.iter().enumerate() {
        if g.node_count() > max_nodes {
            return Err(ExploreError::OversizedGraph {
                graph: i,
                nodes: g.node_count(),
                max_nodes,
            });
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CertifyError {
    Uncovered(Uncovered),
    Invalid(ExploreError),
}

impl fmt::Display for CertifyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CertifyError::Uncovered(u) => {
                write!(
                    f,
                    "graph {} is not explored from start node {}",
                    u.graph, u.start
                )
            }
            CertifyError::Invalid(e) => e.fmt(f),
        }
    }
}

impl core::error::Error for CertifyError {}

/// Smallest `t` such that every start node of every corpus graph has visited
/// all nodes within `t` moves, or the first start that is never covered.
pub fn certify(
    offsets: &[u32],
    corpus: &[PortGraph],
    max_nodes: usize,
) -> Result<usize, CertifyError> {
    check_sizes(corpus, max_nodes).map_err(CertifyError::Invalid)?;
    let mut t_ex = 0;
    for (gi, g) in corpus.iter().enumerate() {
        for s in 0..g.node_count() {
            let mut w = Walk::start(gi, g, s);
            let mut t = 0;
            while w.remaining > 0 {
                if t == offsets.len() {
                    return Err(CertifyError::Uncovered(Uncovered {
                        graph: gi,
                        start: s,
                    }));
                }
                w.advance(g, offsets[t]);
                t += 1;
            }
            t_ex = t_ex.max(t);
        }
    }
    Ok(t_ex)
}

/// Seeded search for a certified plan with `t_ex <= budget`.
///
/// Each restart grows a random sequence one offset at a time, picking the
/// best of a few random candidates by how many open walks gain a node. The
/// shortest plan over all restarts is returned.
pub fn build_plan(
    max_nodes: usize,
    corpus: &[PortGraph],
    corpus_id: &str,
    seed: u64,
    budget: usize,
) -> Result<ExplorationPlan, ExploreError> {
    if budget == 0 {
        return Err(ExploreError::ZeroBudget);
    }
    check_sizes(corpus, max_nodes)?;
    let fresh: Vec<Walk> = corpus
        .iter()
        .enumerate()
        .flat_map(|(gi, g)| (0..g.node_count()).map(move |s| Walk::start(gi, g, s)))
        .filter(|w| w.remaining > 0)
        .collect();
    if fresh.is_empty() {
        return ExplorationPlan::new(max_nodes, Vec::new(), 0, corpus_id);
    }
    let span = max_nodes.max(2) as u32;
    let mut best: Option<Vec<u32>> = None;
    for restart in 0..PLAN_RESTARTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ restart.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let cap = best.as_ref().map_or(budget, |b| b.len() - 1).min(budget);
        let mut open = fresh.clone();
        let mut offsets = Vec::new();
        while !open.is_empty() && offsets.len() < cap {
            let mut pick = 0;
            let mut pick_gain = -1i64;
            for _ in 0..CANDIDATES {
                let c = rng.random_range(0..span);
                let gain = open
                    .iter()
                    .filter(|w| w.peek_new(&corpus[w.graph], c))
                    .count() as i64;
                if gain > pick_gain {
                    pick = c;
                    pick_gain = gain;
                }
            }
            for w in &mut open {
                w.advance(&corpus[w.graph], pick);
            }
            open.retain(|w| w.remaining > 0);
            offsets.push(pick);
        }
        if open.is_empty() {
            best = Some(offsets);
        }
    }
    let offsets = best.ok_or(ExploreError::BudgetExhausted { budget })?;
    let t_ex = offsets.len();
    debug_assert_eq!(certify(&offsets, corpus, max_nodes), Ok(t_ex));
    ExplorationPlan::new(max_nodes, offsets, t_ex, corpus_id)
}
