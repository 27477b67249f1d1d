//! Network patterns with a distinguished node and the pattern-preserving
//! subgraph matcher.
//!
//! Matching is a VF2-style backtracking search. Pattern nodes are visited in
//! BFS order from a root, so every node after the root has an already-mapped
//! pattern neighbor and its candidates are restricted to that image's
//! neighbors inside the ego network. [`check_pattern`] roots the search at the
//! distinguished node and pins it to the ego center, which answers the
//! "does some isomorphism map the distinguished node to `i`" question without
//! enumerating the maps that cannot.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{CovariateKind, CovariateTable, EgoNetwork, SocialNetwork, UnitId};

pub const DEFAULT_MAX_NODES: usize = 8;

/// Equality constraint on a pattern node's covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeConstraint {
    pub node: usize,
    pub covariate: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkPattern {
    adjacency: Vec<Vec<usize>>,
    edges: Vec<(usize, usize)>,
    distinguished: usize,
    constraints: Vec<NodeConstraint>,
    induced: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinPattern {
    Clique(usize),
    Star(usize),
}

impl BuiltinPattern {
    /// Parses names like `clique3` or `star5`.
    pub fn parse(name: &str) -> Result<Self> {
        let name = name.trim().to_ascii_lowercase();
        let (kind, k) = if let Some(k) = name.strip_prefix("clique") {
            ("clique", k)
        } else if let Some(k) = name.strip_prefix("star") {
            ("star", k)
        } else {
            return Err(Error::invalid(format!("unknown builtin pattern `{name}`")));
        };
        let k: usize = k
            .trim_start_matches(['-', '_'])
            .parse()
            .map_err(|_| Error::invalid(format!("bad pattern size in `{name}`")))?;
        Ok(if kind == "clique" {
            BuiltinPattern::Clique(k)
        } else {
            BuiltinPattern::Star(k)
        })
    }

    pub fn build(self) -> Result<NetworkPattern> {
        match self {
            BuiltinPattern::Clique(k) => NetworkPattern::clique(k),
            BuiltinPattern::Star(k) => NetworkPattern::star(k),
        }
    }
}

impl fmt::Display for BuiltinPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BuiltinPattern::Clique(k) => write!(f, "clique{k}"),
            BuiltinPattern::Star(k) => write!(f, "star{k}"),
        }
    }
}

impl NetworkPattern {
    /// Builds a pattern on nodes `0..n_nodes`, limited to
    /// [`DEFAULT_MAX_NODES`] nodes.
    pub fn new(n_nodes: usize, edges: &[(usize, usize)], distinguished: usize) -> Result<Self> {
        Self::with_limit(n_nodes, edges, distinguished, DEFAULT_MAX_NODES)
    }

    pub fn with_limit(
        n_nodes: usize,
        edges: &[(usize, usize)],
        distinguished: usize,
        max_nodes: usize,
    ) -> Result<Self> {
        if n_nodes == 0 {
            return Err(Error::invalid("pattern needs at least one node"));
        }
        if n_nodes > max_nodes {
            return Err(Error::invalid(format!(
                "pattern has {n_nodes} nodes, limit is {max_nodes}"
            )));
        }
        if distinguished >= n_nodes {
            return Err(Error::invalid(format!(
                "distinguished node {distinguished} is not a pattern node"
            )));
        }
        let mut adjacency = vec![Vec::new(); n_nodes];
        let mut canon = Vec::new();
        for &(a, b) in edges {
            if a >= n_nodes || b >= n_nodes {
                return Err(Error::invalid(format!("pattern edge ({a},{b}) out of range")));
            }
            if a == b {
                return Err(Error::invalid("pattern self-loops are not allowed"));
            }
            let e = (a.min(b), a.max(b));
            if !canon.contains(&e) {
                canon.push(e);
                adjacency[a].push(b);
                adjacency[b].push(a);
            }
        }
        canon.sort_unstable();
        for list in &mut adjacency {
            list.sort_unstable();
        }
        let pattern = NetworkPattern {
            adjacency,
            edges: canon,
            distinguished,
            constraints: Vec::new(),
            induced: false,
        };
        if pattern.bfs_order(0).len() != n_nodes {
            return Err(Error::invalid("pattern must be connected"));
        }
        Ok(pattern)
    }

    /// Complete graph on `k` nodes; node 0 is distinguished.
    pub fn clique(k: usize) -> Result<Self> {
        if k < 1 {
            return Err(Error::invalid("clique size must be at least 1"));
        }
        let edges: Vec<_> = (0..k)
            .flat_map(|a| (a + 1..k).map(move |b| (a, b)))
            .collect();
        Self::new(k, &edges, 0)
    }

    /// Hub (node 0, distinguished) plus `k - 1` leaves.
    pub fn star(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::invalid("star size must be at least 2"));
        }
        let edges: Vec<_> = (1..k).map(|leaf| (0, leaf)).collect();
        Self::new(k, &edges, 0)
    }

    /// Adds an equality constraint `covariate == value` on `node`.
    pub fn with_constraint(mut self, node: usize, covariate: &str, value: &str) -> Result<Self> {
        if node >= self.n_nodes() {
            return Err(Error::invalid(format!("constraint on unknown pattern node {node}")));
        }
        self.constraints.push(NodeConstraint {
            node,
            covariate: covariate.to_string(),
            value: value.to_string(),
        });
        Ok(self)
    }

    /// Requires pattern non-edges to map to network non-edges.
    pub fn induced(mut self, induced: bool) -> Self {
        self.induced = induced;
        self
    }

    pub fn with_distinguished(mut self, node: usize) -> Result<Self> {
        if node >= self.n_nodes() {
            return Err(Error::invalid(format!("node {node} is not a pattern node")));
        }
        self.distinguished = node;
        Ok(self)
    }

    /// Fails unless every constraint names a discrete column of `table` and
    /// one of its levels.
    pub fn check(&self, table: &CovariateTable) -> Result<()> {
        resolve_in_table(table, self).map(|_| ())
    }

    pub fn n_nodes(&self) -> usize {
        self.adjacency.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn distinguished(&self) -> usize {
        self.distinguished
    }

    pub fn constraints(&self) -> &[NodeConstraint] {
        &self.constraints
    }

    pub fn is_induced(&self) -> bool {
        self.induced
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency[node].len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a].binary_search(&b).is_ok()
    }

    fn bfs_order(&self, root: usize) -> Vec<usize> {
        let mut seen = vec![false; self.n_nodes()];
        let mut order = vec![root];
        seen[root] = true;
        let mut head = 0;
        while head < order.len() {
            let v = order[head];
            head += 1;
            for &w in &self.adjacency[v] {
                if !seen[w] {
                    seen[w] = true;
                    order.push(w);
                }
            }
        }
        order
    }
}

/// An injective, adjacency-preserving map from pattern nodes to units.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IsoMap {
    mapping: Vec<UnitId>,
}

impl IsoMap {
    pub fn image(&self, node: usize) -> UnitId {
        self.mapping[node]
    }

    pub fn as_slice(&self) -> &[UnitId] {
        &self.mapping
    }
}

/// Resolved equality constraint: pattern node, column values, required code.
struct ResolvedConstraint<'a> {
    node: usize,
    values: &'a [f64],
    code: f64,
}

fn resolve_constraints<'a>(
    net: &'a SocialNetwork,
    pattern: &NetworkPattern,
) -> Result<Vec<ResolvedConstraint<'a>>> {
    resolve_in_table(net.covariates(), pattern)
}

fn resolve_in_table<'a>(
    table: &'a CovariateTable,
    pattern: &NetworkPattern,
) -> Result<Vec<ResolvedConstraint<'a>>> {
    pattern
        .constraints
        .iter()
        .map(|c| {
            let col = table.column(&c.covariate)?;
            if col.kind() == CovariateKind::Numeric {
                return Err(Error::invalid(format!(
                    "pattern constraint on numeric covariate `{}` is not supported",
                    c.covariate
                )));
            }
            let code = col.code_of(&c.value).ok_or_else(|| {
                Error::invalid(format!(
                    "value `{}` is not a level of covariate `{}`",
                    c.value, c.covariate
                ))
            })?;
            Ok(ResolvedConstraint {
                node: c.node,
                values: col.values(),
                code,
            })
        })
        .collect()
}

/// Lazy enumerator of pattern-to-ego isomorphisms.
pub struct Isomorphisms<'a> {
    pattern: &'a NetworkPattern,
    members: Vec<UnitId>,
    local_adj: Vec<Vec<usize>>,
    net: &'a SocialNetwork,
    constraints: Vec<ResolvedConstraint<'a>>,
    // Pattern nodes in visiting order and, for each position > 0, the
    // position of an earlier pattern neighbor.
    order: Vec<usize>,
    parent_pos: Vec<usize>,
    candidates: Vec<Vec<usize>>,
    cursor: Vec<usize>,
    // Local member index assigned to each position.
    assigned: Vec<usize>,
    used: Vec<bool>,
    depth: usize,
    done: bool,
}

impl<'a> Isomorphisms<'a> {
    fn new(
        ego: &EgoNetwork<'a>,
        pattern: &'a NetworkPattern,
        pinned_root: Option<UnitId>,
    ) -> Result<Self> {
        let net = ego.network();
        let constraints = resolve_constraints(net, pattern)?;
        let members = ego.members().to_vec();
        let local_adj: Vec<Vec<usize>> = members
            .iter()
            .map(|&m| {
                net.adjacent(m)
                    .iter()
                    .filter_map(|j| members.binary_search(j).ok())
                    .collect()
            })
            .collect();
        let root = if pinned_root.is_some() {
            pattern.distinguished
        } else {
            0
        };
        let order = pattern.bfs_order(root);
        let mut position = vec![0; pattern.n_nodes()];
        for (p, &v) in order.iter().enumerate() {
            position[v] = p;
        }
        let parent_pos = order
            .iter()
            .enumerate()
            .map(|(p, &v)| {
                if p == 0 {
                    0
                } else {
                    pattern.adjacency[v]
                        .iter()
                        .map(|&w| position[w])
                        .filter(|&q| q < p)
                        .min()
                        .expect("connected pattern has an earlier neighbor")
                }
            })
            .collect();
        let root_candidates = match pinned_root {
            Some(unit) => members.binary_search(&unit).map(|k| vec![k]).unwrap_or_default(),
            None => (0..members.len()).collect(),
        };
        let k = pattern.n_nodes();
        let mut candidates = vec![Vec::new(); k];
        candidates[0] = root_candidates;
        let n_members = members.len();
        Ok(Isomorphisms {
            pattern,
            members,
            local_adj,
            net,
            constraints,
            order,
            parent_pos,
            candidates,
            cursor: vec![0; k],
            assigned: vec![usize::MAX; k],
            used: vec![false; n_members],
            depth: 0,
            done: k > n_members,
        })
    }

    fn feasible(&self, pos: usize, cand: usize) -> bool {
        if self.used[cand] {
            return false;
        }
        let v = self.order[pos];
        if self.local_adj[cand].len() < self.pattern.degree(v) {
            return false;
        }
        let unit = self.members[cand];
        for c in &self.constraints {
            if c.node == v && c.values[unit.index()] != c.code {
                return false;
            }
        }
        for q in 0..pos {
            let w = self.order[q];
            let other = self.members[self.assigned[q]];
            let host_edge = self.net.has_edge(unit, other);
            if self.pattern.has_edge(v, w) {
                if !host_edge {
                    return false;
                }
            } else if self.pattern.induced && host_edge {
                return false;
            }
        }
        true
    }

    fn release(&mut self, pos: usize) {
        let a = self.assigned[pos];
        if a != usize::MAX {
            self.used[a] = false;
            self.assigned[pos] = usize::MAX;
        }
    }
}

impl Iterator for Isomorphisms<'_> {
    type Item = IsoMap;

    fn next(&mut self) -> Option<IsoMap> {
        if self.done {
            return None;
        }
        let k = self.order.len();
        loop {
            let pos = self.depth;
            // Leaving a previously yielded or exhausted assignment.
            self.release(pos);
            let mut found = None;
            while self.cursor[pos] < self.candidates[pos].len() {
                let cand = self.candidates[pos][self.cursor[pos]];
                self.cursor[pos] += 1;
                if self.feasible(pos, cand) {
                    found = Some(cand);
                    break;
                }
            }
            match found {
                Some(cand) => {
                    self.assigned[pos] = cand;
                    self.used[cand] = true;
                    if pos + 1 == k {
                        let mut mapping = vec![UnitId(0); k];
                        for (p, &v) in self.order.iter().enumerate() {
                            mapping[v] = self.members[self.assigned[p]];
                        }
                        return Some(IsoMap { mapping });
                    }
                    let next = pos + 1;
                    let anchor = self.assigned[self.parent_pos[next]];
                    self.candidates[next] = self.local_adj[anchor].clone();
                    self.cursor[next] = 0;
                    self.depth = next;
                }
                None => {
                    if pos == 0 {
                        self.done = true;
                        return None;
                    }
                    self.depth = pos - 1;
                }
            }
        }
    }
}

/// Every injective adjacency-preserving map from `pattern` into `ego`
/// (non-induced unless the pattern says otherwise), lazily.
pub fn enumerate_isomorphisms<'a>(
    ego: &EgoNetwork<'a>,
    pattern: &'a NetworkPattern,
) -> Result<Isomorphisms<'a>> {
    Isomorphisms::new(ego, pattern, None)
}

/// True iff some pattern-preserving isomorphism maps the distinguished node
/// to `unit`.
pub fn check_pattern(net: &SocialNetwork, pattern: &NetworkPattern, unit: UnitId) -> Result<bool> {
    let ego = net.ego_subgraph(unit)?;
    check_in_ego(&ego, pattern)
}

/// [`check_pattern`] on an already-built ego network.
pub fn check_in_ego(ego: &EgoNetwork<'_>, pattern: &NetworkPattern) -> Result<bool> {
    let mut it = Isomorphisms::new(ego, pattern, Some(ego.center()))?;
    Ok(it.next().is_some())
}

/// Pattern indicator for every unit, as `0.0` / `1.0`.
pub fn pattern_indicator(net: &SocialNetwork, pattern: &NetworkPattern) -> Result<Vec<f64>> {
    resolve_constraints(net, pattern)?;
    (0..net.n())
        .into_par_iter()
        .map(|i| check_pattern(net, pattern, UnitId::from(i)).map(|b| if b { 1.0 } else { 0.0 }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::fixtures::{toy_network, u};
    use crate::network::{Column, CovariateTable};
    use proptest::prelude::*;

    /// Exhaustive oracle: try every injective map of pattern nodes into the
    /// ego members and keep the adjacency-preserving ones.
    fn brute_force(ego: &EgoNetwork<'_>, pattern: &NetworkPattern) -> Vec<Vec<UnitId>> {
        fn rec(
            ego: &EgoNetwork<'_>,
            pattern: &NetworkPattern,
            cur: &mut Vec<UnitId>,
            out: &mut Vec<Vec<UnitId>>,
        ) {
            if cur.len() == pattern.n_nodes() {
                let ok = pattern
                    .edges()
                    .iter()
                    .all(|&(a, b)| ego.has_edge(cur[a], cur[b]));
                if ok {
                    out.push(cur.clone());
                }
                return;
            }
            for &m in ego.members() {
                if !cur.contains(&m) {
                    cur.push(m);
                    rec(ego, pattern, cur, out);
                    cur.pop();
                }
            }
        }
        let mut out = Vec::new();
        rec(ego, pattern, &mut Vec::new(), &mut out);
        out
    }

    #[test]
    fn triangle_into_triangle_ego_gives_all_orderings() {
        let net = toy_network();
        let ego = net.ego_subgraph(u(4)).unwrap();
        let tri = NetworkPattern::clique(3).unwrap();
        let maps: Vec<_> = enumerate_isomorphisms(&ego, &tri).unwrap().collect();
        assert_eq!(maps.len(), 6);
        let mut images: Vec<_> = maps.iter().map(|m| m.as_slice().to_vec()).collect();
        images.sort();
        let mut expected = brute_force(&ego, &tri);
        expected.sort();
        assert_eq!(images, expected);
    }

    #[test]
    fn triangle_into_edge_ego_is_empty() {
        let net = toy_network();
        let ego = net.ego_subgraph(u(8)).unwrap();
        let tri = NetworkPattern::clique(3).unwrap();
        assert_eq!(enumerate_isomorphisms(&ego, &tri).unwrap().count(), 0);
        assert!(!check_pattern(&net, &tri, u(8)).unwrap());
    }

    #[test]
    fn single_node_pattern_maps_to_each_member() {
        let net = toy_network();
        let single = NetworkPattern::clique(1).unwrap();
        let ego = net.ego_subgraph(u(4)).unwrap();
        assert_eq!(enumerate_isomorphisms(&ego, &single).unwrap().count(), 3);
        for i in net.units() {
            assert!(check_pattern(&net, &single, i).unwrap());
        }
    }

    #[test]
    fn check_triangle_on_toy() {
        let net = toy_network();
        let tri = NetworkPattern::clique(3).unwrap();
        assert!(check_pattern(&net, &tri, u(4)).unwrap());
        let v = pattern_indicator(&net, &tri).unwrap();
        assert_eq!(v, vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn builtin_shapes() {
        let c3 = NetworkPattern::clique(3).unwrap();
        assert_eq!((c3.n_nodes(), c3.edges().len()), (3, 3));
        let s5 = NetworkPattern::star(5).unwrap();
        assert_eq!((s5.n_nodes(), s5.edges().len(), s5.distinguished()), (5, 4, 0));
        assert_eq!(s5.degree(0), 4);
        let c1 = NetworkPattern::clique(1).unwrap();
        assert_eq!((c1.n_nodes(), c1.edges().len(), c1.distinguished()), (1, 0, 0));
        assert!(NetworkPattern::clique(0).is_err());
        assert!(NetworkPattern::star(1).is_err());
        assert!(NetworkPattern::clique(9).is_err());
        assert_eq!(BuiltinPattern::parse("clique4").unwrap(), BuiltinPattern::Clique(4));
        assert_eq!(BuiltinPattern::parse("Star-5").unwrap(), BuiltinPattern::Star(5));
        assert!(BuiltinPattern::parse("ring4").is_err());
    }

    #[test]
    fn disconnected_pattern_rejected() {
        assert!(NetworkPattern::new(4, &[(0, 1), (2, 3)], 0).is_err());
        assert!(NetworkPattern::new(2, &[(0, 1)], 2).is_err());
    }

    #[test]
    fn covariate_constraints_filter_images() {
        let net = toy_network();
        // Edge pattern whose far end must have an election card.
        let p = NetworkPattern::new(2, &[(0, 1)], 0)
            .unwrap()
            .with_constraint(1, "election_card", "Yes")
            .unwrap();
        // Unit 4 (no card) neighbors 5 (card) and 6 (no card).
        assert!(check_pattern(&net, &p, u(4)).unwrap());
        // Unit 5's neighbors 4 and 6 have no card.
        assert!(!check_pattern(&net, &p, u(5)).unwrap());
        let bad = NetworkPattern::new(2, &[(0, 1)], 0)
            .unwrap()
            .with_constraint(1, "election_card", "Maybe")
            .unwrap();
        assert!(check_pattern(&net, &bad, u(4)).is_err());
    }

    #[test]
    fn induced_mode_rejects_extra_edges() {
        let net = toy_network();
        let path = NetworkPattern::new(3, &[(0, 1), (1, 2)], 1).unwrap();
        assert!(check_pattern(&net, &path, u(4)).unwrap());
        assert!(!check_pattern(&net, &path.clone().induced(true), u(4)).unwrap());
    }

    #[test]
    fn numeric_constraint_rejected() {
        let table = CovariateTable::new(2)
            .with_column(Column::numeric("x", vec![1.0, 2.0]))
            .unwrap();
        let net = SocialNetwork::from_edges(2, [(0, 1)], table).unwrap();
        let p = NetworkPattern::clique(2).unwrap().with_constraint(1, "x", "2").unwrap();
        assert!(check_pattern(&net, &p, UnitId(0)).is_err());
    }

    fn graph_strategy() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
        (2usize..=12).prop_flat_map(|n| {
            let pairs: Vec<(usize, usize)> =
                (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
            let len = pairs.len();
            (Just(n), proptest::collection::vec(any::<bool>(), len)).prop_map(move |(n, keep)| {
                let edges = pairs
                    .iter()
                    .zip(keep)
                    .filter(|(_, k)| *k)
                    .map(|(&e, _)| e)
                    .collect();
                (n, edges)
            })
        })
    }

    fn small_patterns() -> Vec<NetworkPattern> {
        vec![
            NetworkPattern::clique(3).unwrap(),
            NetworkPattern::star(3).unwrap(),
            NetworkPattern::new(3, &[(0, 1), (1, 2)], 0).unwrap(),
            NetworkPattern::new(4, &[(0, 1), (1, 2), (2, 3)], 1).unwrap(),
            NetworkPattern::new(4, &[(0, 1), (1, 2), (2, 0), (2, 3)], 3).unwrap(),
            NetworkPattern::clique(4).unwrap(),
        ]
    }

    proptest! {
        #[test]
        fn check_agrees_with_exhaustive_maps((n, edges) in graph_strategy()) {
            let net = SocialNetwork::from_edges(n, edges, CovariateTable::new(n)).unwrap();
            for p in small_patterns() {
                for i in net.units() {
                    let ego = net.ego_subgraph(i).unwrap();
                    let oracle = brute_force(&ego, &p).iter().any(|m| m[p.distinguished()] == i);
                    prop_assert_eq!(check_pattern(&net, &p, i).unwrap(), oracle);
                    let fast = enumerate_isomorphisms(&ego, &p).unwrap().count();
                    prop_assert_eq!(fast, brute_force(&ego, &p).len());
                }
            }
        }

        #[test]
        fn clique_check_ignores_distinguished_choice((n, edges) in graph_strategy(), k in 2usize..=4) {
            let net = SocialNetwork::from_edges(n, edges, CovariateTable::new(n)).unwrap();
            let base = NetworkPattern::clique(k).unwrap();
            for i in net.units() {
                let want = check_pattern(&net, &base, i).unwrap();
                for d in 1..k {
                    let p = base.clone().with_distinguished(d).unwrap();
                    prop_assert_eq!(check_pattern(&net, &p, i).unwrap(), want);
                }
            }
        }

        #[test]
        fn adding_edges_never_breaks_a_match((n, edges) in graph_strategy(), extra in proptest::collection::vec((0usize..12, 0usize..12), 1..6)) {
            let net = SocialNetwork::from_edges(n, edges.clone(), CovariateTable::new(n)).unwrap();
            let mut more = edges;
            more.extend(extra.into_iter().filter(|&(a, b)| a < n && b < n));
            let denser = SocialNetwork::from_edges(n, more, CovariateTable::new(n)).unwrap();
            for p in small_patterns() {
                for i in net.units() {
                    if check_pattern(&net, &p, i).unwrap() {
                        prop_assert!(check_pattern(&denser, &p, i).unwrap());
                    }
                }
            }
        }
    }
}
