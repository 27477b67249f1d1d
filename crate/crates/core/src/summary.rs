//! Neighbor covariate summaries.
//!
//! A summary collapses the multiset of a unit's neighbors' values of one
//! covariate into a single number. The neighbor set excludes the unit unless
//! `include_self` is set. Units with an empty multiset get the neutral value
//! `0.0` and are flagged as isolated.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Column, CovariateKind, CovariateTable, SocialNetwork, UnitId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SummaryKind {
    Mean,
    FractionEqual { value: String },
    Count,
    Sum,
    Max,
    Min,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummarySpec {
    pub covariate: String,
    #[serde(flatten)]
    pub kind: SummaryKind,
    #[serde(default)]
    pub include_self: bool,
}

impl SummarySpec {
    pub fn new(covariate: &str, kind: SummaryKind) -> Self {
        SummarySpec {
            covariate: covariate.to_string(),
            kind,
            include_self: false,
        }
    }

    pub fn mean(covariate: &str) -> Self {
        Self::new(covariate, SummaryKind::Mean)
    }

    pub fn fraction_equal(covariate: &str, value: &str) -> Self {
        Self::new(
            covariate,
            SummaryKind::FractionEqual {
                value: value.to_string(),
            },
        )
    }

    pub fn including_self(mut self, include: bool) -> Self {
        self.include_self = include;
        self
    }

    /// Short label such as `mean(income)`.
    /// Fails unless `table` has a compatible column (and level, for
    /// `fraction_equal`).
    pub fn check(&self, table: &CovariateTable) -> Result<()> {
        prepare_table(table, self).map(|_| ())
    }

    pub fn describe(&self) -> String {
        let inner = match &self.kind {
            SummaryKind::FractionEqual { value } => format!("{}={value}", self.covariate),
            _ => self.covariate.clone(),
        };
        let name = match self.kind {
            SummaryKind::Mean => "mean",
            SummaryKind::FractionEqual { .. } => "fraction",
            SummaryKind::Count => "count",
            SummaryKind::Sum => "sum",
            SummaryKind::Max => "max",
            SummaryKind::Min => "min",
        };
        if self.include_self {
            format!("{name}({inner}; self)")
        } else {
            format!("{name}({inner})")
        }
    }

    /// Parses `mean(income)`, `fraction_equal(card, Yes)`, `count(x)` and so
    /// on; a trailing `; self` argument turns on `include_self`.
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        let open = text
            .find('(')
            .ok_or_else(|| Error::invalid(format!("expected `kind(covariate)`, got `{text}`")))?;
        let inner = text[open + 1..]
            .strip_suffix(')')
            .ok_or_else(|| Error::invalid(format!("missing `)` in `{text}`")))?;
        let (args, include_self) = match inner.split_once(';') {
            Some((a, flag)) if flag.trim() == "self" => (a, true),
            Some((_, flag)) => {
                return Err(Error::invalid(format!("unknown summary flag `{}`", flag.trim())))
            }
            None => (inner, false),
        };
        let mut parts = args.split(',').map(str::trim);
        let covariate = parts.next().unwrap_or_default();
        if covariate.is_empty() {
            return Err(Error::invalid(format!("missing covariate in `{text}`")));
        }
        let kind = match text[..open].trim() {
            "mean" | "avg" => SummaryKind::Mean,
            "count" => SummaryKind::Count,
            "sum" => SummaryKind::Sum,
            "max" => SummaryKind::Max,
            "min" => SummaryKind::Min,
            "fraction_equal" | "fraction" => SummaryKind::FractionEqual {
                value: parts
                    .next()
                    .filter(|v| !v.is_empty())
                    .ok_or_else(|| Error::invalid("fraction_equal needs a value"))?
                    .to_string(),
            },
            other => return Err(Error::invalid(format!("unknown summary kind `{other}`"))),
        };
        if parts.next().is_some() {
            return Err(Error::invalid(format!("too many arguments in `{text}`")));
        }
        Ok(SummarySpec {
            covariate: covariate.to_string(),
            kind,
            include_self,
        })
    }

    fn compatible(&self, col: &Column) -> Result<()> {
        let ok = match self.kind {
            SummaryKind::FractionEqual { .. } => col.kind().is_discrete(),
            SummaryKind::Count => true,
            _ => matches!(col.kind(), CovariateKind::Numeric | CovariateKind::Binary),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "summary {} is not defined on {} column `{}`",
                self.describe(),
                col.kind(),
                col.name()
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryValue {
    pub value: f64,
    pub isolated: bool,
}

/// Summary vector over all units, plus per-unit isolation flags.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryVector {
    pub values: Vec<f64>,
    pub isolated: Vec<bool>,
}

struct Prepared<'a> {
    values: &'a [f64],
    target: Option<f64>,
}

fn prepare<'a>(net: &'a SocialNetwork, spec: &SummarySpec) -> Result<Prepared<'a>> {
    prepare_table(net.covariates(), spec)
}

fn prepare_table<'a>(table: &'a CovariateTable, spec: &SummarySpec) -> Result<Prepared<'a>> {
    let col = table.column(&spec.covariate)?;
    spec.compatible(col)?;
    let target = match &spec.kind {
        SummaryKind::FractionEqual { value } => Some(col.code_of(value).ok_or_else(|| {
            Error::invalid(format!(
                "value `{value}` is not a level of covariate `{}`",
                spec.covariate
            ))
        })?),
        _ => None,
    };
    Ok(Prepared {
        values: col.values(),
        target,
    })
}

fn aggregate(kind: &SummaryKind, target: Option<f64>, xs: impl Iterator<Item = f64>) -> SummaryValue {
    let mut count = 0usize;
    let mut sum = 0.0;
    let mut hits = 0usize;
    let mut max = f64::NEG_INFINITY;
    let mut min = f64::INFINITY;
    for x in xs {
        count += 1;
        sum += x;
        max = max.max(x);
        min = min.min(x);
        if Some(x) == target {
            hits += 1;
        }
    }
    if count == 0 {
        return SummaryValue {
            value: 0.0,
            isolated: true,
        };
    }
    let value = match kind {
        SummaryKind::Mean => sum / count as f64,
        SummaryKind::FractionEqual { .. } => hits as f64 / count as f64,
        SummaryKind::Count => count as f64,
        SummaryKind::Sum => sum,
        SummaryKind::Max => max,
        SummaryKind::Min => min,
    };
    SummaryValue {
        value,
        isolated: false,
    }
}

fn summarize_prepared(net: &SocialNetwork, spec: &SummarySpec, p: &Prepared<'_>, unit: UnitId) -> SummaryValue {
    let own = spec.include_self.then(|| p.values[unit.index()]);
    let xs = net
        .adjacent(unit)
        .iter()
        .map(|j| p.values[j.index()])
        .chain(own);
    aggregate(&spec.kind, p.target, xs)
}

pub fn summarize_unit(net: &SocialNetwork, spec: &SummarySpec, unit: UnitId) -> Result<SummaryValue> {
    if unit.index() >= net.n() {
        return Err(Error::UnknownUnit(unit.index()));
    }
    let p = prepare(net, spec)?;
    Ok(summarize_prepared(net, spec, &p, unit))
}

pub fn summarize_all(net: &SocialNetwork, spec: &SummarySpec) -> Result<SummaryVector> {
    let p = prepare(net, spec)?;
    let (values, isolated) = (0..net.n())
        .into_par_iter()
        .map(|i| {
            let s = summarize_prepared(net, spec, &p, UnitId::from(i));
            (s.value, s.isolated)
        })
        .unzip();
    Ok(SummaryVector { values, isolated })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::fixtures::{toy_network, u};
    use crate::network::CovariateTable;
    use proptest::prelude::*;

    #[test]
    fn farm_labour_fraction_for_unit_four() {
        let net = toy_network();
        let spec = SummarySpec::fraction_equal("occupation", "Farm Labour");
        let s = summarize_unit(&net, &spec, u(4)).unwrap();
        assert_eq!(s.value, 1.0);
        assert!(!s.isolated);
    }

    #[test]
    fn count_is_degree() {
        let net = toy_network();
        let spec = SummarySpec::new("loan", SummaryKind::Count);
        for i in net.units() {
            let s = summarize_unit(&net, &spec, i).unwrap();
            assert_eq!(s.value, net.degree(i) as f64);
        }
    }

    #[test]
    fn election_card_fraction_on_toy() {
        let net = toy_network();
        let spec = SummarySpec::fraction_equal("election_card", "Yes");
        let v = summarize_all(&net, &spec).unwrap();
        // Hand-enumerated from the toy edges and card column
        // (cards: 1 Y, 2 N, 3 Y, 4 N, 5 Y, 6 N, 7 Y, 8 Y, 9 N, 10 N).
        assert_eq!(
            v.values,
            vec![0.5, 1.0, 0.5, 0.5, 0.0, 0.5, 1.0, 1.0, 0.0, 0.0]
        );
        assert!(v.isolated.iter().all(|&f| !f));
    }

    #[test]
    fn pair_sees_the_other_value() {
        let table = CovariateTable::new(2)
            .with_column(Column::binary("b", vec![1.0, 0.0]))
            .unwrap();
        let net = SocialNetwork::from_edges(2, [(0, 1)], table).unwrap();
        let v = summarize_all(&net, &SummarySpec::fraction_equal("b", "1")).unwrap();
        assert_eq!(v.values, vec![0.0, 1.0]);
    }

    #[test]
    fn isolated_units_get_zero_and_flag() {
        let table = CovariateTable::new(3)
            .with_column(Column::numeric("x", vec![5.0, 6.0, 7.0]))
            .unwrap();
        let net = SocialNetwork::from_edges(3, [], table).unwrap();
        let v = summarize_all(&net, &SummarySpec::mean("x")).unwrap();
        assert_eq!(v.values, vec![0.0; 3]);
        assert_eq!(v.isolated, vec![true; 3]);
        let with_self = summarize_all(&net, &SummarySpec::mean("x").including_self(true)).unwrap();
        assert_eq!(with_self.values, vec![5.0, 6.0, 7.0]);
    }

    #[test]
    fn incompatible_kinds_rejected() {
        let net = toy_network();
        assert!(summarize_all(&net, &SummarySpec::mean("occupation")).is_err());
        assert!(summarize_all(&net, &SummarySpec::mean("nope")).is_err());
        let table = CovariateTable::new(1)
            .with_column(Column::numeric("x", vec![1.0]))
            .unwrap();
        let net = SocialNetwork::from_edges(1, [], table).unwrap();
        assert!(summarize_all(&net, &SummarySpec::fraction_equal("x", "1")).is_err());
    }

    #[test]
    fn parse_round_trip() {
        let s = SummarySpec::parse("fraction_equal(card, Yes)").unwrap();
        assert_eq!(s, SummarySpec::fraction_equal("card", "Yes"));
        let s = SummarySpec::parse("mean(income; self)").unwrap();
        assert_eq!(s, SummarySpec::mean("income").including_self(true));
        assert!(SummarySpec::parse("median(x)").is_err());
        assert!(SummarySpec::parse("mean()").is_err());
        assert!(SummarySpec::parse("fraction_equal(x)").is_err());
    }

    #[test]
    fn hypothesis_file_form_deserializes() {
        let s: SummarySpec = serde_json::from_str(
            r#"{"covariate": "election_card", "kind": "fraction_equal", "value": "Yes"}"#,
        )
        .unwrap();
        assert_eq!(s, SummarySpec::fraction_equal("election_card", "Yes"));
    }

    fn net_with(values: Vec<f64>, edges: Vec<(usize, usize)>) -> SocialNetwork {
        let n = values.len();
        let table = CovariateTable::new(n)
            .with_column(Column::numeric("x", values))
            .unwrap();
        SocialNetwork::from_edges(n, edges, table).unwrap()
    }

    proptest! {
        #[test]
        fn relabeling_permutes_output(
            values in proptest::collection::vec(-50.0f64..50.0, 2..20),
            raw_edges in proptest::collection::vec((0usize..20, 0usize..20), 0..40),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            let n = values.len();
            let edges: Vec<_> = raw_edges.into_iter().filter(|&(a, b)| a < n && b < n).collect();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut crate::seed::rng(seed));
            let mut pvals = vec![0.0; n];
            for i in 0..n {
                pvals[perm[i]] = values[i];
            }
            let pedges = edges.iter().map(|&(a, b)| (perm[a], perm[b])).collect();
            let base = net_with(values, edges);
            let moved = net_with(pvals, pedges);
            for spec in [SummarySpec::mean("x"), SummarySpec::new("x", SummaryKind::Max), SummarySpec::new("x", SummaryKind::Sum)] {
                let a = summarize_all(&base, &spec).unwrap().values;
                let b = summarize_all(&moved, &spec).unwrap().values;
                for i in 0..n {
                    prop_assert!((a[i] - b[perm[i]]).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn mean_within_hull(
            values in proptest::collection::vec(-50.0f64..50.0, 2..20),
            raw_edges in proptest::collection::vec((0usize..20, 0usize..20), 1..40),
        ) {
            let n = values.len();
            let edges: Vec<_> = raw_edges.into_iter().filter(|&(a, b)| a < n && b < n).collect();
            let net = net_with(values.clone(), edges);
            let v = summarize_all(&net, &SummarySpec::mean("x")).unwrap();
            for i in net.units() {
                if v.isolated[i.index()] { continue; }
                let nb: Vec<f64> = net.adjacent(i).iter().map(|j| values[j.index()]).collect();
                let lo = nb.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = nb.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(v.values[i.index()] >= lo - 1e-9 && v.values[i.index()] <= hi + 1e-9);
            }
        }
    }
}
