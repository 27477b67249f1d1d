//! Social network data model.
//!
//! Units are dense integer ids `0..n`. Ties are undirected and stored without
//! self-loops; the convention that every unit is tied to itself is applied by
//! [`SocialNetwork::neighbors`], which always includes the unit.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UnitId(pub u32);

impl UnitId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for UnitId {
    fn from(i: usize) -> Self {
        UnitId(i as u32)
    }
}

impl fmt::Display for UnitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateKind {
    Binary,
    Categorical,
    Numeric,
}

impl CovariateKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "binary" | "bool" => Some(CovariateKind::Binary),
            "categorical" | "category" => Some(CovariateKind::Categorical),
            "numeric" | "number" | "real" => Some(CovariateKind::Numeric),
            _ => None,
        }
    }

    pub fn is_discrete(self) -> bool {
        !matches!(self, CovariateKind::Numeric)
    }
}

impl fmt::Display for CovariateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CovariateKind::Binary => "binary",
            CovariateKind::Categorical => "categorical",
            CovariateKind::Numeric => "numeric",
        })
    }
}

/// One covariate column.
///
/// Values are stored as `f64`. Binary and categorical columns hold level codes
/// (`0, 1, ..`) indexing into `levels`; a binary column's level `1` is the
/// "true" label. Missing entries are `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    name: String,
    kind: CovariateKind,
    values: Vec<f64>,
    levels: Vec<String>,
}

impl Column {
    pub fn numeric(name: impl Into<String>, values: Vec<f64>) -> Self {
        Column {
            name: name.into(),
            kind: CovariateKind::Numeric,
            values,
            levels: Vec::new(),
        }
    }

    /// Binary column with levels `"0"` and `"1"`.
    pub fn binary(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self::binary_labeled(name, values, ["0", "1"])
    }

    /// Binary column with explicit labels for code 0 and code 1.
    pub fn binary_labeled(name: impl Into<String>, values: Vec<f64>, labels: [&str; 2]) -> Self {
        Column {
            name: name.into(),
            kind: CovariateKind::Binary,
            values,
            levels: labels.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Categorical column; levels are the sorted distinct labels.
    pub fn categorical<S: AsRef<str>>(name: impl Into<String>, labels: &[S]) -> Self {
        let mut levels: Vec<String> = labels
            .iter()
            .map(|s| s.as_ref().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        levels.sort();
        levels.dedup();
        let values = labels
            .iter()
            .map(|s| {
                levels
                    .binary_search_by(|l| l.as_str().cmp(s.as_ref()))
                    .map(|k| k as f64)
                    .unwrap_or(f64::NAN)
            })
            .collect();
        Column {
            name: name.into(),
            kind: CovariateKind::Categorical,
            values,
            levels,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> CovariateKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn levels(&self) -> &[String] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Code for a label of a discrete column. Binary columns also accept the
    /// literal codes `0` / `1`.
    pub fn code_of(&self, label: &str) -> Option<f64> {
        match self.kind {
            CovariateKind::Numeric => label.trim().parse().ok(),
            _ => {
                if let Some(k) = self.levels.iter().position(|l| l == label) {
                    return Some(k as f64);
                }
                if self.kind == CovariateKind::Binary {
                    match label.trim() {
                        "0" => return Some(0.0),
                        "1" => return Some(1.0),
                        _ => {}
                    }
                }
                None
            }
        }
    }

    /// Text form of the value at `row`, as written to covariate files.
    pub fn label(&self, row: usize) -> String {
        let v = self.values[row];
        if v.is_nan() {
            return String::new();
        }
        match self.kind {
            CovariateKind::Numeric => format!("{v}"),
            _ => self
                .levels
                .get(v as usize)
                .cloned()
                .unwrap_or_else(|| format!("{v}")),
        }
    }
}

/// Per-unit covariate records sharing one schema.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateTable {
    n_rows: usize,
    columns: Vec<Column>,
    treatment: Option<String>,
    outcome: Option<String>,
}

impl CovariateTable {
    pub fn new(n_rows: usize) -> Self {
        CovariateTable {
            n_rows,
            columns: Vec::new(),
            treatment: None,
            outcome: None,
        }
    }

    pub fn with_column(mut self, column: Column) -> Result<Self> {
        self.push_column(column)?;
        Ok(self)
    }

    pub fn push_column(&mut self, column: Column) -> Result<()> {
        if column.len() != self.n_rows {
            return Err(Error::invalid(format!(
                "column `{}` has {} rows, expected {}",
                column.name,
                column.len(),
                self.n_rows
            )));
        }
        if self.columns.iter().any(|c| c.name == column.name) {
            return Err(Error::invalid(format!("duplicate column `{}`", column.name)));
        }
        self.columns.push(column);
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn schema(&self) -> Vec<(&str, CovariateKind)> {
        self.columns.iter().map(|c| (c.name(), c.kind())).collect()
    }

    pub fn get(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        self.get(name)
            .ok_or_else(|| Error::UnknownCovariate(name.to_string()))
    }

    /// Designates the treatment and outcome columns.
    pub fn designate(&mut self, treatment: &str, outcome: &str) -> Result<()> {
        self.column(treatment)?;
        self.column(outcome)?;
        self.treatment = Some(treatment.to_string());
        self.outcome = Some(outcome.to_string());
        Ok(())
    }

    pub fn treatment(&self) -> Option<&str> {
        self.treatment.as_deref()
    }

    pub fn outcome(&self) -> Option<&str> {
        self.outcome.as_deref()
    }
}

/// A single invariant violation found by [`SocialNetwork::validate`].
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    AsymmetricEdge { from: usize, to: usize },
    SelfLoop { unit: usize },
    DuplicateEdge { from: usize, to: usize },
    DanglingEdge { from: usize, to: usize },
    RowCount { expected: usize, found: usize },
    MissingValue { unit: usize, column: String },
    NonBinaryTreatment { unit: usize, column: String, value: f64 },
    OutOfRangeCode { unit: usize, column: String, value: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::AsymmetricEdge { from, to } => {
                write!(f, "edge {from}-{to} has no reverse {to}-{from}")
            }
            Violation::SelfLoop { unit } => write!(f, "unit {unit} has a stored self-loop"),
            Violation::DuplicateEdge { from, to } => write!(f, "edge {from}-{to} stored twice"),
            Violation::DanglingEdge { from, to } => {
                write!(f, "edge {from}-{to} references a unit that does not exist")
            }
            Violation::RowCount { expected, found } => {
                write!(f, "covariate table has {found} rows, network has {expected} units")
            }
            Violation::MissingValue { unit, column } => {
                write!(f, "unit {unit}: missing value in column `{column}`")
            }
            Violation::NonBinaryTreatment { unit, column, value } => {
                write!(f, "unit {unit}: treatment column `{column}` has non-binary value {value}")
            }
            Violation::OutOfRangeCode { unit, column, value } => {
                write!(f, "unit {unit}: column `{column}` has invalid level code {value}")
            }
        }
    }
}

/// Immutable social network: units, undirected ties and covariates.
#[derive(Debug, Clone)]
pub struct SocialNetwork {
    ids: Vec<String>,
    adjacency: Vec<Vec<UnitId>>,
    edge_set: HashSet<(u32, u32)>,
    covariates: CovariateTable,
}

impl SocialNetwork {
    /// Builds a network from undirected edges. Duplicate and reversed edges
    /// are collapsed; self-loops are dropped since every unit is implicitly
    /// tied to itself.
    pub fn from_edges<I>(n: usize, edges: I, covariates: CovariateTable) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        if covariates.n_rows() != n {
            return Err(Error::invalid(format!(
                "covariate table has {} rows, network has {n} units",
                covariates.n_rows()
            )));
        }
        let mut adjacency = vec![Vec::new(); n];
        for (a, b) in edges {
            if a >= n {
                return Err(Error::UnknownUnit(a));
            }
            if b >= n {
                return Err(Error::UnknownUnit(b));
            }
            if a == b {
                continue;
            }
            adjacency[a].push(UnitId::from(b));
            adjacency[b].push(UnitId::from(a));
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Self::assemble(default_ids(n), adjacency, covariates))
    }

    /// Builds a network from adjacency lists exactly as given, without
    /// symmetrizing. Use [`SocialNetwork::validate`] to inspect the result.
    pub fn from_adjacency_unchecked(adjacency: Vec<Vec<UnitId>>, covariates: CovariateTable) -> Self {
        let n = adjacency.len();
        Self::assemble(default_ids(n), adjacency, covariates)
    }

    fn assemble(ids: Vec<String>, adjacency: Vec<Vec<UnitId>>, covariates: CovariateTable) -> Self {
        let edge_set = adjacency
            .iter()
            .enumerate()
            .flat_map(|(i, list)| list.iter().map(move |j| (i as u32, j.0)))
            .collect();
        SocialNetwork {
            ids,
            adjacency,
            edge_set,
            covariates,
        }
    }

    /// Replaces the original string ids (one per unit, in unit order).
    pub fn with_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.n() {
            return Err(Error::invalid(format!(
                "{} ids supplied for {} units",
                ids.len(),
                self.n()
            )));
        }
        self.ids = ids;
        Ok(self)
    }

    /// Returns a copy with the covariate table replaced.
    pub fn with_covariates(&self, covariates: CovariateTable) -> Result<Self> {
        if covariates.n_rows() != self.n() {
            return Err(Error::invalid("covariate table row count does not match"));
        }
        let mut out = self.clone();
        out.covariates = covariates;
        Ok(out)
    }

    pub fn n(&self) -> usize {
        self.adjacency.len()
    }

    pub fn units(&self) -> impl Iterator<Item = UnitId> + '_ {
        (0..self.n()).map(UnitId::from)
    }

    pub fn id(&self, unit: UnitId) -> &str {
        &self.ids[unit.index()]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn covariates(&self) -> &CovariateTable {
        &self.covariates
    }

    pub fn covariates_mut(&mut self) -> &mut CovariateTable {
        &mut self.covariates
    }

    fn check(&self, unit: UnitId) -> Result<()> {
        if unit.index() < self.n() {
            Ok(())
        } else {
            Err(Error::UnknownUnit(unit.index()))
        }
    }

    /// Proper neighbors (excluding the unit itself), sorted.
    pub fn adjacent(&self, unit: UnitId) -> &[UnitId] {
        &self.adjacency[unit.index()]
    }

    pub fn degree(&self, unit: UnitId) -> usize {
        self.adjacency[unit.index()].len()
    }

    #[inline]
    pub fn has_edge(&self, a: UnitId, b: UnitId) -> bool {
        self.edge_set.contains(&(a.0, b.0))
    }

    pub fn edge_count(&self) -> usize {
        self.edges().count()
    }

    /// Undirected edges as `(a, b)` with `a < b`, in sorted order.
    pub fn edges(&self) -> impl Iterator<Item = (UnitId, UnitId)> + '_ {
        self.adjacency.iter().enumerate().flat_map(|(i, list)| {
            let a = UnitId::from(i);
            list.iter().filter(move |&&b| a < b).map(move |&b| (a, b))
        })
    }

    /// `N(i)`: the tied units plus `i` itself, sorted.
    pub fn neighbors(&self, unit: UnitId) -> Result<Vec<UnitId>> {
        self.check(unit)?;
        let list = &self.adjacency[unit.index()];
        let mut out = Vec::with_capacity(list.len() + 1);
        let pos = list.partition_point(|&j| j < unit);
        out.extend_from_slice(&list[..pos]);
        out.push(unit);
        out.extend(list[pos..].iter().copied().filter(|&j| j != unit));
        Ok(out)
    }

    /// Subgraph induced on `N(i)`.
    pub fn ego_subgraph(&self, unit: UnitId) -> Result<EgoNetwork<'_>> {
        let members = self.neighbors(unit)?;
        let mut edges = Vec::new();
        for (k, &a) in members.iter().enumerate() {
            for &b in &members[k + 1..] {
                if self.has_edge(a, b) {
                    edges.push((a, b));
                }
            }
        }
        Ok(EgoNetwork {
            net: self,
            center: unit,
            members,
            edges,
        })
    }

    /// Checks every structural and covariate invariant. An empty list means
    /// the network is well formed.
    pub fn validate(&self) -> Vec<Violation> {
        let n = self.n();
        let mut out = Vec::new();
        for (i, list) in self.adjacency.iter().enumerate() {
            let mut seen = HashSet::new();
            for &j in list {
                if j.index() >= n {
                    out.push(Violation::DanglingEdge { from: i, to: j.index() });
                    continue;
                }
                if j.index() == i {
                    out.push(Violation::SelfLoop { unit: i });
                    continue;
                }
                if !seen.insert(j) {
                    out.push(Violation::DuplicateEdge { from: i, to: j.index() });
                    continue;
                }
                if !self.adjacency[j.index()].contains(&UnitId::from(i)) {
                    out.push(Violation::AsymmetricEdge { from: i, to: j.index() });
                }
            }
        }
        let table = &self.covariates;
        if table.n_rows() != n {
            out.push(Violation::RowCount {
                expected: n,
                found: table.n_rows(),
            });
        }
        for col in table.columns() {
            for (u, &v) in col.values().iter().enumerate() {
                if v.is_nan() {
                    out.push(Violation::MissingValue {
                        unit: u,
                        column: col.name().to_string(),
                    });
                } else if col.kind().is_discrete()
                    && (v.fract() != 0.0 || v < 0.0 || v as usize >= col.levels().len())
                {
                    out.push(Violation::OutOfRangeCode {
                        unit: u,
                        column: col.name().to_string(),
                        value: v,
                    });
                }
            }
        }
        if let Some(t) = table.treatment().and_then(|t| table.get(t)) {
            for (u, &v) in t.values().iter().enumerate() {
                if !v.is_nan() && v != 0.0 && v != 1.0 {
                    out.push(Violation::NonBinaryTreatment {
                        unit: u,
                        column: t.name().to_string(),
                        value: v,
                    });
                }
            }
        }
        out
    }

    /// Degree histogram, keyed by degree.
    pub fn degree_histogram(&self) -> BTreeMap<usize, usize> {
        let mut h = BTreeMap::new();
        for list in &self.adjacency {
            *h.entry(list.len()).or_default() += 1;
        }
        h
    }
}

fn default_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| i.to_string()).collect()
}

/// The ego-centric network `G[N(i)]` of one unit.
#[derive(Debug, Clone)]
pub struct EgoNetwork<'a> {
    net: &'a SocialNetwork,
    center: UnitId,
    members: Vec<UnitId>,
    edges: Vec<(UnitId, UnitId)>,
}

impl<'a> EgoNetwork<'a> {
    pub fn network(&self) -> &'a SocialNetwork {
        self.net
    }

    pub fn center(&self) -> UnitId {
        self.center
    }

    /// Sorted members, including the center.
    pub fn members(&self) -> &[UnitId] {
        &self.members
    }

    /// Induced edges `(a, b)` with `a < b`.
    pub fn edges(&self) -> &[(UnitId, UnitId)] {
        &self.edges
    }

    pub fn contains(&self, unit: UnitId) -> bool {
        self.members.binary_search(&unit).is_ok()
    }

    pub fn has_edge(&self, a: UnitId, b: UnitId) -> bool {
        self.contains(a) && self.contains(b) && self.net.has_edge(a, b)
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// Edges of the ten-unit example network, as 1-based unit labels.
    pub const TOY_EDGES: [(usize, usize); 8] = [
        (3, 2),
        (3, 1),
        (2, 1),
        (6, 5),
        (6, 4),
        (5, 4),
        (7, 8),
        (10, 9),
    ];

    /// Ten-unit toy network; unit label `k` is `UnitId(k - 1)`.
    pub fn toy_network() -> SocialNetwork {
        let occupation = [
            "Farm Labour",
            "Factory worker",
            "Farm Labour",
            "Farm Labour",
            "Farm Labour",
            "Farm Labour",
            "Farm Labour",
            "Factory worker",
            "Factory worker",
            "Factory worker",
        ];
        let yes = |v: [u8; 10]| v.iter().map(|&b| b as f64).collect::<Vec<_>>();
        let mut table = CovariateTable::new(10)
            .with_column(Column::categorical("occupation", &occupation))
            .unwrap()
            .with_column(Column::binary_labeled(
                "election_card",
                yes([1, 0, 1, 0, 1, 0, 1, 1, 0, 0]),
                ["No", "Yes"],
            ))
            .unwrap()
            .with_column(Column::binary_labeled(
                "shg",
                yes([1, 0, 1, 1, 1, 0, 1, 1, 0, 1]),
                ["No", "Yes"],
            ))
            .unwrap()
            .with_column(Column::binary_labeled(
                "loan",
                yes([0, 1, 0, 1, 1, 0, 1, 1, 1, 1]),
                ["No", "Yes"],
            ))
            .unwrap();
        table.designate("shg", "loan").unwrap();
        SocialNetwork::from_edges(10, TOY_EDGES.iter().map(|&(a, b)| (a - 1, b - 1)), table)
            .unwrap()
            .with_ids((1..=10).map(|k| k.to_string()).collect())
            .unwrap()
    }

    pub fn u(label: usize) -> UnitId {
        UnitId::from(label - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn neighbors_of_triangle_member() {
        let net = toy_network();
        assert_eq!(net.neighbors(u(4)).unwrap(), vec![u(4), u(5), u(6)]);
    }

    #[test]
    fn neighbors_of_pair_member() {
        let net = toy_network();
        assert_eq!(net.neighbors(u(8)).unwrap(), vec![u(7), u(8)]);
    }

    #[test]
    fn isolated_unit_is_its_own_neighborhood() {
        let net = SocialNetwork::from_edges(1, [], CovariateTable::new(1)).unwrap();
        assert_eq!(net.neighbors(UnitId(0)).unwrap(), vec![UnitId(0)]);
        let ego = net.ego_subgraph(UnitId(0)).unwrap();
        assert_eq!(ego.members(), &[UnitId(0)]);
        assert!(ego.edges().is_empty());
    }

    #[test]
    fn unknown_unit_is_an_error() {
        let net = toy_network();
        assert!(matches!(net.neighbors(UnitId(10)), Err(Error::UnknownUnit(10))));
        assert!(net.ego_subgraph(UnitId(99)).is_err());
    }

    #[test]
    fn ego_subgraphs_of_toy_units() {
        let net = toy_network();
        let ego = net.ego_subgraph(u(4)).unwrap();
        assert_eq!(ego.center(), u(4));
        assert_eq!(ego.edges(), &[(u(4), u(5)), (u(4), u(6)), (u(5), u(6))]);
        let ego = net.ego_subgraph(u(8)).unwrap();
        assert_eq!(ego.members(), &[u(7), u(8)]);
        assert_eq!(ego.edges(), &[(u(7), u(8))]);
    }

    #[test]
    fn well_formed_toy_has_no_violations() {
        assert!(toy_network().validate().is_empty());
    }

    #[test]
    fn asymmetric_edge_is_reported_once() {
        let mut adj = vec![vec![]; 3];
        adj[0].push(UnitId(1));
        adj[1].push(UnitId(0));
        adj[1].push(UnitId(2));
        let net = SocialNetwork::from_adjacency_unchecked(adj, CovariateTable::new(3));
        assert_eq!(
            net.validate(),
            vec![Violation::AsymmetricEdge { from: 1, to: 2 }]
        );
    }

    #[test]
    fn non_binary_treatment_is_reported_once() {
        let mut table = CovariateTable::new(3)
            .with_column(Column::numeric("t", vec![0.0, 2.0, 1.0]))
            .unwrap()
            .with_column(Column::numeric("y", vec![0.0, 0.0, 1.0]))
            .unwrap();
        table.designate("t", "y").unwrap();
        let net = SocialNetwork::from_edges(3, [(0, 1)], table).unwrap();
        let v = net.validate();
        assert_eq!(v.len(), 1);
        assert!(matches!(v[0], Violation::NonBinaryTreatment { unit: 1, .. }));
    }

    #[test]
    fn duplicate_and_reversed_edges_collapse() {
        let net =
            SocialNetwork::from_edges(3, [(0, 1), (1, 0), (0, 1), (2, 2)], CovariateTable::new(3))
                .unwrap();
        assert_eq!(net.edge_count(), 1);
        assert!(net.validate().is_empty());
        assert!(net.has_edge(UnitId(1), UnitId(0)));
    }

    fn random_edges(n: usize) -> impl Strategy<Value = Vec<(usize, usize)>> {
        proptest::collection::vec((0..n, 0..n), 0..(n * 3))
    }

    proptest! {
        #[test]
        fn self_always_in_neighborhood(edges in random_edges(30)) {
            let net = SocialNetwork::from_edges(30, edges, CovariateTable::new(30)).unwrap();
            for i in net.units() {
                prop_assert!(net.neighbors(i).unwrap().contains(&i));
            }
        }

        #[test]
        fn ego_edges_match_brute_force(n in 1usize..50, seed_edges in random_edges(50)) {
            let edges: Vec<_> = seed_edges.into_iter().filter(|&(a, b)| a < n && b < n).collect();
            let net = SocialNetwork::from_edges(n, edges.clone(), CovariateTable::new(n)).unwrap();
            for i in 0..n {
                let members: Vec<usize> = (0..n)
                    .filter(|&j| j == i || edges.iter().any(|&(a, b)| (a == i && b == j) || (a == j && b == i)))
                    .collect();
                let mut expected = Vec::new();
                for (x, &a) in members.iter().enumerate() {
                    for &b in &members[x + 1..] {
                        if edges.iter().any(|&(p, q)| (p == a && q == b) || (p == b && q == a)) {
                            expected.push((UnitId::from(a), UnitId::from(b)));
                        }
                    }
                }
                let ego = net.ego_subgraph(UnitId::from(i)).unwrap();
                let want: Vec<UnitId> = members.iter().map(|&j| UnitId::from(j)).collect();
                prop_assert_eq!(ego.members(), want.as_slice());
                prop_assert_eq!(ego.edges(), expected.as_slice());
            }
        }
    }
}
