//! Anonymous port-numbered graphs.
//!
//! Nodes carry no labels visible to agents. Each node `v` numbers its
//! incident edges with local ports `1..=d(v)`; an edge is seen through two
//! independent port numbers, one at each endpoint.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Local port number. Valid ports at a node of degree `d` are `1..=d`.
pub type Port = u32;

/// Index of a node in the simulator's own bookkeeping. Agents never see it.
pub type NodeId = usize;

/// One half-edge: leaving `node` via `port` arrives at `neighbor` through
/// `remote_port`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Link {
    pub port: Port,
    pub neighbor: NodeId,
    pub remote_port: Port,
}

/// A port-numbered graph. May hold invalid data until [`PortGraph::validate`]
/// says otherwise; [`PortGraph::new`] only returns validated graphs.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PortGraph {
    // adj[v] is sorted by local port; when valid, adj[v][p - 1].port == p.
    adj: Vec<Vec<Link>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    Empty,
    PortSetNotContiguous {
        node: NodeId,
        ports: Vec<Port>,
    },
    NeighborOutOfRange {
        node: NodeId,
        port: Port,
        neighbor: NodeId,
    },
    Asymmetric {
        node: NodeId,
        port: Port,
    },
    SelfLoop {
        node: NodeId,
        port: Port,
    },
    ParallelEdge {
        node: NodeId,
        neighbor: NodeId,
    },
    Disconnected {
        unreachable: NodeId,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Empty => write!(f, "graph has no nodes"),
            Violation::PortSetNotContiguous { node, ports } => {
                write!(f, "node {node}: port set not contiguous: {ports:?}")
            }
            Violation::NeighborOutOfRange {
                node,
                port,
                neighbor,
            } => {
                write!(
                    f,
                    "node {node} port {port}: neighbor {neighbor} out of range"
                )
            }
            Violation::Asymmetric { node, port } => {
                write!(f, "node {node} port {port}: edge is not symmetric")
            }
            Violation::SelfLoop { node, port } => write!(f, "node {node} port {port}: self-loop"),
            Violation::ParallelEdge { node, neighbor } => {
                write!(f, "node {node}: parallel edges to {neighbor}")
            }
            Violation::Disconnected { unreachable } => {
                write!(
                    f,
                    "graph is disconnected: node {unreachable} unreachable from node 0"
                )
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GraphKind {
    Ring,
    Complete,
    RandomTree,
    RandomConnected,
}

impl GraphKind {
    pub const ALL: [GraphKind; 4] = [
        GraphKind::Ring,
        GraphKind::Complete,
        GraphKind::RandomTree,
        GraphKind::RandomConnected,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GraphKind::Ring => "ring",
            GraphKind::Complete => "complete",
            GraphKind::RandomTree => "random_tree",
            GraphKind::RandomConnected => "random_connected",
        }
    }

    pub fn parse(s: &str) -> Option<GraphKind> {
        GraphKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

impl fmt::Display for GraphKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GraphError {
    Invalid(Vec<Violation>),
    UnsupportedSize { kind: GraphKind, n: usize },
    BadPermutation { node: NodeId },
}

impl fmt::Display for GraphError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphError::Invalid(vs) => {
                write!(f, "invalid graph:")?;
                for v in vs {
                    write!(f, " [{v}]")?;
                }
                Ok(())
            }
            GraphError::UnsupportedSize { kind, n } => {
                write!(f, "cannot build a {kind} with {n} nodes")
            }
            GraphError::BadPermutation { node } => {
                write!(
                    f,
                    "port permutation for node {node} is not a permutation of its ports"
                )
            }
        }
    }
}

impl core::error::Error for GraphError {}

impl PortGraph {
    /// Builds and validates a graph from per-node link lists.
    pub fn new(adj: Vec<Vec<Link>>) -> Result<PortGraph, GraphError> {
        let g = PortGraph::from_links_unchecked(adj);
        g.validate().map_err(GraphError::Invalid)?;
        Ok(g)
    }

    /// Stores links without validation; links are sorted by local port.
    pub fn from_links_unchecked(mut adj: Vec<Vec<Link>>) -> PortGraph {
        for links in &mut adj {
            links.sort_by_key(|l| l.port);
        }
        PortGraph { adj }
    }

    /// Builds a graph from an undirected edge list, numbering ports in the
    /// order edges appear at each endpoint.
    pub fn from_edges(n: usize, edges: &[(NodeId, NodeId)]) -> Result<PortGraph, GraphError> {
        let mut adj: Vec<Vec<Link>> = vec![Vec::new(); n];
        for &(u, v) in edges {
            if u >= n || v >= n {
                let (node, neighbor) = if u >= n {
                    (v.min(n.saturating_sub(1)), u)
                } else {
                    (u, v)
                };
                return Err(GraphError::Invalid(vec![Violation::NeighborOutOfRange {
                    node,
                    port: 0,
                    neighbor,
                }]));
            }
            let pu = adj[u].len() as Port + 1;
            let pv = adj[v].len() as Port + 1 + Port::from(u == v);
            adj[u].push(Link {
                port: pu,
                neighbor: v,
                remote_port: pv,
            });
            adj[v].push(Link {
                port: pv,
                neighbor: u,
                remote_port: pu,
            });
        }
        PortGraph::new(adj)
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.adj[v].len()
    }

    pub fn max_degree(&self) -> usize {
        self.adj.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn links(&self, v: NodeId) -> &[Link] {
        &self.adj[v]
    }

    /// Follows `port` out of `v`, returning the neighbor and the port it is
    /// entered through. `None` if the port does not exist.
    #[inline]
    pub fn follow(&self, v: NodeId, port: Port) -> Option<(NodeId, Port)> {
        let l = self.adj.get(v)?.get((port as usize).checked_sub(1)?)?;
        debug_assert_eq!(l.port, port);
        Some((l.neighbor, l.remote_port))
    }

    pub fn validate(&self) -> Result<(), Vec<Violation>> {
        let n = self.adj.len();
        if n == 0 {
            return Err(vec![Violation::Empty]);
        }
        let mut out = Vec::new();
        for (v, links) in self.adj.iter().enumerate() {
            let contiguous = links
                .iter()
                .enumerate()
                .all(|(i, l)| l.port as usize == i + 1);
            if !contiguous {
                out.push(Violation::PortSetNotContiguous {
                    node: v,
                    ports: links.iter().map(|l| l.port).collect(),
                });
            }
            let mut seen: Vec<NodeId> = Vec::with_capacity(links.len());
            for l in links {
                if l.neighbor >= n {
                    out.push(Violation::NeighborOutOfRange {
                        node: v,
                        port: l.port,
                        neighbor: l.neighbor,
                    });
                    continue;
                }
                if l.neighbor == v {
                    out.push(Violation::SelfLoop {
                        node: v,
                        port: l.port,
                    });
                }
                let back = self.adj[l.neighbor]
                    .iter()
                    .find(|b| b.port == l.remote_port);
                match back {
                    Some(b) if b.neighbor == v && b.remote_port == l.port => {}
                    _ => out.push(Violation::Asymmetric {
                        node: v,
                        port: l.port,
                    }),
                }
                if seen.contains(&l.neighbor) && l.neighbor != v {
                    out.push(Violation::ParallelEdge {
                        node: v,
                        neighbor: l.neighbor,
                    });
                }
                seen.push(l.neighbor);
            }
        }
        // Connectivity over in-range links only.
        let mut reached = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        reached[0] = true;
        while let Some(v) = queue.pop_front() {
            for l in &self.adj[v] {
                if l.neighbor < n && !reached[l.neighbor] {
                    reached[l.neighbor] = true;
                    queue.push_back(l.neighbor);
                }
            }
        }
        if let Some(u) = reached.iter().position(|r| !r) {
            out.push(Violation::Disconnected { unreachable: u });
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(out)
        }
    }

    /// Renumbers ports: at node `v`, old port `p` becomes `perms[v][p - 1]`.
    pub fn relabel_ports(&self, perms: &[Vec<Port>]) -> Result<PortGraph, GraphError> {
        let n = self.adj.len();
        for v in 0..n {
            let d = self.adj[v].len();
            let ok = perms.get(v).is_some_and(|p| {
                let mut s = p.clone();
                s.sort_unstable();
                s.len() == d && s.iter().enumerate().all(|(i, &x)| x as usize == i + 1)
            });
            if !ok {
                return Err(GraphError::BadPermutation { node: v });
            }
        }
        let adj = self
            .adj
            .iter()
            .enumerate()
            .map(|(v, links)| {
                links
                    .iter()
                    .map(|l| Link {
                        port: perms[v][l.port as usize - 1],
                        neighbor: l.neighbor,
                        remote_port: perms[l.neighbor][l.remote_port as usize - 1],
                    })
                    .collect()
            })
            .collect();
        PortGraph::new(adj)
    }

    /// Deterministic graph of the given family. Port numbers at every node
    /// are a seeded permutation, so distinct seeds give distinct labelings
    /// even for rings and cliques.
    pub fn generate(kind: GraphKind, n: usize, seed: u64) -> Result<PortGraph, GraphError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let edges: Vec<(NodeId, NodeId)> = match kind {
            GraphKind::Ring => {
                if n < 3 {
                    return Err(GraphError::UnsupportedSize { kind, n });
                }
                (0..n).map(|i| (i, (i + 1) % n)).collect()
            }
            GraphKind::Complete => {
                if n == 0 {
                    return Err(GraphError::UnsupportedSize { kind, n });
                }
                let mut e = Vec::new();
                for u in 0..n {
                    for v in u + 1..n {
                        e.push((u, v));
                    }
                }
                e
            }
            GraphKind::RandomTree | GraphKind::RandomConnected => {
                if n == 0 {
                    return Err(GraphError::UnsupportedSize { kind, n });
                }
                let mut order: Vec<NodeId> = (0..n).collect();
                order.shuffle(&mut rng);
                let mut e = Vec::with_capacity(n);
                for i in 1..n {
                    let parent = order[rng.random_range(0..i)];
                    e.push((parent, order[i]));
                }
                if kind == GraphKind::RandomConnected {
                    for u in 0..n {
                        for v in u + 1..n {
                            let present =
                                e.iter().any(|&(a, b)| (a, b) == (u, v) || (a, b) == (v, u));
                            if !present && rng.random_bool(0.3) {
                                e.push((u, v));
                            }
                        }
                    }
                }
                e
            }
        };
        let base = PortGraph::from_edges(n, &edges)?;
        let perms: Vec<Vec<Port>> = (0..n)
            .map(|v| {
                let mut p: Vec<Port> = (1..=base.degree(v) as Port).collect();
                p.shuffle(&mut rng);
                p
            })
            .collect();
        base.relabel_ports(&perms)
    }
}
