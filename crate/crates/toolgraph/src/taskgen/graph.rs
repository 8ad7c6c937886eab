//! Function-dependency DAG construction.
//!
//! A task graph is built in two stages: first a core DAG whose longest
//! directed path has exactly `depth` edges and whose every node is an
//! ancestor of a single target node, then distractor nodes that are either
//! connected to the core (CIN) or fully disconnected from it (DIN).

use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Index of a node in [`DepGraph::nodes`].
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    /// Required on the solution path; always an ancestor of the target.
    Core,
    /// Connected irrelevant node: consumes one core output.
    ConnIrrelevant,
    /// Disconnected irrelevant node: no reachability to or from the core.
    DiscIrrelevant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: NodeId,
    pub kind: NodeKind,
    pub target: bool,
}

/// Typed DAG of function nodes. An edge `(p, c)` means `c` consumes the
/// output of `p`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DepGraph {
    pub nodes: Vec<NodeRecord>,
    pub edges: Vec<(NodeId, NodeId)>,
}

impl DepGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn kind(&self, id: NodeId) -> NodeKind {
        self.nodes[id.0].kind
    }

    /// The unique target node.
    pub fn target_id(&self) -> NodeId {
        self.nodes
            .iter()
            .find(|n| n.target)
            .map(|n| n.id)
            .expect("graph has a target node")
    }

    pub fn core_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Core)
            .map(|n| n.id)
    }

    pub fn kind_counts(&self) -> (usize, usize, usize) {
        let mut counts = (0, 0, 0);
        for n in &self.nodes {
            match n.kind {
                NodeKind::Core => counts.0 += 1,
                NodeKind::ConnIrrelevant => counts.1 += 1,
                NodeKind::DiscIrrelevant => counts.2 += 1,
            }
        }
        counts
    }

    /// Producers feeding `id`, ascending by node id.
    pub fn parents_of(&self, id: NodeId) -> Vec<NodeId> {
        let mut parents: Vec<NodeId> = self
            .edges
            .iter()
            .filter(|(_, c)| *c == id)
            .map(|(p, _)| *p)
            .collect();
        parents.sort_unstable();
        parents
    }

    /// Consumers of `id`'s output, ascending by node id.
    pub fn children_of(&self, id: NodeId) -> Vec<NodeId> {
        let mut children: Vec<NodeId> = self
            .edges
            .iter()
            .filter(|(p, _)| *p == id)
            .map(|(_, c)| *c)
            .collect();
        children.sort_unstable();
        children
    }

    pub fn in_degree(&self, id: NodeId) -> usize {
        self.edges.iter().filter(|(_, c)| *c == id).count()
    }

    /// Kahn's algorithm; `None` if the graph has a cycle.
    pub fn topological_order(&self) -> Option<Vec<NodeId>> {
        let n = self.nodes.len();
        let mut indeg = vec![0usize; n];
        for (_, c) in &self.edges {
            indeg[c.0] += 1;
        }
        let mut ready: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = ready.pop() {
            order.push(NodeId(i));
            for (p, c) in &self.edges {
                if p.0 == i {
                    indeg[c.0] -= 1;
                    if indeg[c.0] == 0 {
                        ready.push(c.0);
                    }
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    pub fn is_acyclic(&self) -> bool {
        self.topological_order().is_some()
    }

    /// Longest directed path, in edges, within the core subgraph.
    pub fn core_depth(&self) -> usize {
        let order = self.topological_order().expect("graph is acyclic");
        let mut longest = vec![0usize; self.nodes.len()];
        let mut best = 0;
        // process in reverse topological order: longest[u] = 1 + max(longest[child])
        for &id in order.iter().rev() {
            if self.kind(id) != NodeKind::Core {
                continue;
            }
            for child in self.children_of(id) {
                if self.kind(child) == NodeKind::Core {
                    longest[id.0] = longest[id.0].max(1 + longest[child.0]);
                }
            }
            best = best.max(longest[id.0]);
        }
        best
    }

    /// Nodes from which `to` is reachable (excluding `to` itself).
    pub fn ancestors_of(&self, to: NodeId) -> HashSet<NodeId> {
        let mut seen = HashSet::new();
        let mut stack = vec![to];
        while let Some(id) = stack.pop() {
            for p in self.parents_of(id) {
                if seen.insert(p) {
                    stack.push(p);
                }
            }
        }
        seen.remove(&to);
        seen
    }

    /// Edges whose endpoints are both disconnected-irrelevant nodes.
    pub fn din_internal_edges(&self) -> usize {
        self.edges
            .iter()
            .filter(|(p, c)| {
                self.kind(*p) == NodeKind::DiscIrrelevant
                    && self.kind(*c) == NodeKind::DiscIrrelevant
            })
            .count()
    }

    /// Checks every structural invariant against the expected counts.
    /// Returns a list of violations; empty means the graph is valid.
    pub fn check_invariants(&self, n_core: usize, depth: usize, n_conn: usize, n_dis: usize) -> Vec<String> {
        let mut violations = Vec::new();
        if !self.is_acyclic() {
            violations.push("graph contains a cycle".into());
            return violations;
        }
        let (core, conn, dis) = self.kind_counts();
        if (core, conn, dis) != (n_core, n_conn, n_dis) {
            violations.push(format!(
                "node-kind counts ({core},{conn},{dis}) != expected ({n_core},{n_conn},{n_dis})"
            ));
        }
        let d = self.core_depth();
        if d != depth {
            violations.push(format!("core depth {d} != expected {depth}"));
        }
        let targets: Vec<_> = self.nodes.iter().filter(|n| n.target).collect();
        if targets.len() != 1 || targets[0].kind != NodeKind::Core {
            violations.push("expected exactly one core target node".into());
        } else {
            let target = targets[0].id;
            if self
                .children_of(target)
                .iter()
                .any(|&c| self.kind(c) == NodeKind::Core)
            {
                violations.push("target has an outgoing edge to a core node".into());
            }
            let ancestors = self.ancestors_of(target);
            for id in self.core_ids() {
                if id != target && !ancestors.contains(&id) {
                    violations.push(format!("core node {id} is not an ancestor of the target"));
                }
            }
        }
        for n in &self.nodes {
            match n.kind {
                NodeKind::ConnIrrelevant => {
                    let parents = self.parents_of(n.id);
                    let core_parents = parents
                        .iter()
                        .filter(|&&p| self.kind(p) == NodeKind::Core)
                        .count();
                    if core_parents != 1 || parents.len() != 1 {
                        violations.push(format!("CIN {} lacks a single core parent", n.id));
                    }
                    if !self.children_of(n.id).is_empty() {
                        violations.push(format!("CIN {} has outgoing edges", n.id));
                    }
                }
                NodeKind::DiscIrrelevant => {
                    let touches_non_din = self
                        .parents_of(n.id)
                        .iter()
                        .chain(self.children_of(n.id).iter())
                        .any(|&o| self.kind(o) != NodeKind::DiscIrrelevant);
                    if touches_non_din {
                        violations.push(format!("DIN {} touches a non-DIN node", n.id));
                    }
                }
                NodeKind::Core => {}
            }
        }
        if self.din_internal_edges() > n_dis / 2 {
            violations.push(format!(
                "DIN internal edges {} exceed floor({n_dis}/2)",
                self.din_internal_edges()
            ));
        }
        violations
    }
}

/// Builds the core DAG: a chain of `depth + 1` nodes ending at the target,
/// then each remaining node attached as a new parent of a uniformly chosen
/// existing core node whose distance-to-target is at most `depth - 1`.
pub fn build_core_dag(
    n_core: usize,
    depth: usize,
    rng: &mut impl Rng,
) -> Result<DepGraph, ConfigError> {
    if depth < 1 {
        return Err(ConfigError::DepthTooSmall);
    }
    if n_core < depth + 1 {
        return Err(ConfigError::CoreBudgetTooSmall { n_core, depth });
    }

    let mut graph = DepGraph::default();
    for i in 0..=depth {
        graph.nodes.push(NodeRecord {
            id: NodeId(i),
            kind: NodeKind::Core,
            target: i == depth,
        });
        if i > 0 {
            graph.edges.push((NodeId(i - 1), NodeId(i)));
        }
    }

    // dist[i] = longest path from node i to the target. The target is the
    // only core sink, so attaching a parent to a node with dist <= depth-1
    // can never push the core depth past `depth`.
    let mut dist: Vec<usize> = (0..=depth).map(|i| depth - i).collect();
    for _ in 0..n_core - (depth + 1) {
        let candidates: Vec<usize> = (0..graph.nodes.len())
            .filter(|&i| dist[i] < depth)
            .collect();
        let &child = candidates
            .choose(rng)
            .expect("target always qualifies as an attachment site");
        let id = NodeId(graph.nodes.len());
        graph.nodes.push(NodeRecord {
            id,
            kind: NodeKind::Core,
            target: false,
        });
        graph.edges.push((id, NodeId(child)));
        dist.push(dist[child] + 1);
    }
    Ok(graph)
}

/// Adds `n_conn` connected-irrelevant nodes, each the child of one
/// uniformly chosen core node. The core subgraph is untouched.
pub fn add_connected_irrelevant(
    mut graph: DepGraph,
    n_conn: usize,
    rng: &mut impl Rng,
) -> DepGraph {
    let core: Vec<NodeId> = graph.core_ids().collect();
    assert!(!core.is_empty(), "graph must contain at least one core node");
    for _ in 0..n_conn {
        let &parent = core.choose(rng).unwrap();
        let id = NodeId(graph.nodes.len());
        graph.nodes.push(NodeRecord {
            id,
            kind: NodeKind::ConnIrrelevant,
            target: false,
        });
        graph.edges.push((parent, id));
    }
    graph
}

/// Adds `n_dis` disconnected-irrelevant nodes with no edges to the rest of
/// the graph, then `k ~ Uniform[0, floor(n_dis/2)]` edges among them.
/// Edges are oriented from lower to higher node id, which keeps the DIN
/// subgraph acyclic.
pub fn add_disconnected_irrelevant(
    mut graph: DepGraph,
    n_dis: usize,
    rng: &mut impl Rng,
) -> DepGraph {
    let start = graph.nodes.len();
    for i in 0..n_dis {
        graph.nodes.push(NodeRecord {
            id: NodeId(start + i),
            kind: NodeKind::DiscIrrelevant,
            target: false,
        });
    }
    let max_edges = n_dis / 2;
    if max_edges == 0 {
        return graph;
    }
    let k = rng.random_range(0..=max_edges);
    let mut present: HashSet<(usize, usize)> = HashSet::new();
    while present.len() < k {
        let a = rng.random_range(0..n_dis);
        let b = rng.random_range(0..n_dis);
        if a == b {
            continue;
        }
        let (lo, hi) = (a.min(b), a.max(b));
        if present.insert((lo, hi)) {
            graph.edges.push((NodeId(start + lo), NodeId(start + hi)));
        }
    }
    graph
}
