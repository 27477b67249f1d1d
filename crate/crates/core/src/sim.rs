//! Synthetic vaccine trial on a preferential-attachment network, with known
//! effect modifiers, and the unit-count and noise sweeps built on it.
//!
//! Each unit has an age, an income, a randomized vaccine and an infection
//! outcome. Unvaccinated units are infected with probability
//! `expit(200 - income - 4 * avg_neighbor_income + 4 * triangle + noise)`,
//! vaccinated ones with probability 0.1, so income, neighbors' average income
//! and triangle membership modify the vaccine effect while age does not.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dag::CausalDag;
use crate::error::{Error, Result};
use crate::hetero::{run_test, Hypothesis, TestConfig};
use crate::network::{Column, CovariateTable, SocialNetwork, UnitId};
use crate::pattern::NetworkPattern;
use crate::seed;
use crate::summary::SummarySpec;

/// Infection probability of a vaccinated unit.
pub const VACCINATED_RISK: f64 = 0.1;

pub const TREATMENT: &str = "vaccine";
pub const OUTCOME: &str = "infect";

/// Causal DAG of the trial.
pub const TRIAL_DAG: &str = "\
treatment: vaccine
outcome: infect
summary: nbr_income = mean(income)
summary: nbr_age = mean(age)
pattern: triangle = clique3
age -> income
income -> infect
nbr_income -> infect
triangle -> infect
vaccine -> infect
";

pub fn trial_dag() -> CausalDag {
    CausalDag::parse(TRIAL_DAG).expect("trial DAG parses")
}

/// The five hypotheses of the trial, true modifiers first.
pub fn trial_hypotheses() -> Vec<Hypothesis> {
    vec![
        Hypothesis::unit_covariate("Income", "income"),
        Hypothesis::neighbor_summary("Neighbors' Avg. Income", SummarySpec::mean("income")),
        Hypothesis::pattern("Clique-3", NetworkPattern::clique(3).expect("clique")),
        Hypothesis::unit_covariate("Age", "age"),
        Hypothesis::neighbor_summary("Neighbors' Avg. Age", SummarySpec::mean("age")),
    ]
}

/// Logistic function, kept inside the open unit interval.
pub fn expit(x: f64) -> f64 {
    (1.0 / (1.0 + (-x).exp())).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Linear index of the unvaccinated infection probability. `literal`
/// selects the alternative grouping
/// `200 - income - 4 * (avg + 4 * triangle + noise)`.
pub fn linear_index(income: f64, avg_nbr_income: f64, triangle: f64, noise: f64, literal: bool) -> f64 {
    if literal {
        200.0 - income - 4.0 * (avg_nbr_income + 4.0 * triangle + noise)
    } else {
        200.0 - income - 4.0 * avg_nbr_income + 4.0 * triangle + noise
    }
}

/// Preferential-attachment graph: a clique on `m + 1` seed nodes, then each
/// new node links to `m` distinct existing nodes chosen with probability
/// proportional to degree.
pub fn ba_graph(n: usize, m: usize, seed_value: u64) -> Result<SocialNetwork> {
    ba_graph_with(n, m, &mut seed::rng(seed_value))
}

fn ba_graph_with(n: usize, m: usize, rng: &mut impl Rng) -> Result<SocialNetwork> {
    if m < 1 || n <= m {
        return Err(Error::invalid(format!(
            "preferential attachment needs n > m >= 1, got n={n}, m={m}"
        )));
    }
    let mut edges = Vec::with_capacity(m * (m + 1) / 2 + (n - m - 1) * m);
    let mut ends: Vec<usize> = Vec::with_capacity(2 * edges.capacity());
    for a in 0..=m {
        for b in a + 1..=m {
            edges.push((a, b));
            ends.extend([a, b]);
        }
    }
    let mut targets = Vec::with_capacity(m);
    for v in m + 1..n {
        targets.clear();
        while targets.len() < m {
            let t = ends[rng.random_range(0..ends.len())];
            if !targets.contains(&t) {
                targets.push(t);
            }
        }
        for &t in &targets {
            edges.push((t, v));
            ends.extend([t, v]);
        }
    }
    SocialNetwork::from_edges(n, edges, CovariateTable::new(n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n: usize,
    pub m: usize,
    pub sigma: f64,
    pub seed: u64,
    pub store_ground_truth: bool,
    pub literal: bool,
    /// Count the unit itself in its neighbors' average income.
    pub include_self: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 4096,
            m: 2,
            sigma: 1.0,
            seed: 0,
            store_ground_truth: false,
            literal: false,
            include_self: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub p: Vec<f64>,
    pub triangle: Vec<f64>,
    pub avg_nbr_income: Vec<f64>,
    /// True effect on the probability scale, `0.1 - p`.
    pub tau: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SimDataset {
    pub network: SocialNetwork,
    pub truth: Option<GroundTruth>,
}

/// Triangle membership by direct search of adjacent neighbor pairs.
fn triangles(net: &SocialNetwork) -> Vec<f64> {
    net.units()
        .map(|u| {
            let adj = net.adjacent(u);
            let hit = adj
                .iter()
                .enumerate()
                .any(|(k, &a)| adj[k + 1..].iter().any(|&b| net.has_edge(a, b)));
            hit as u8 as f64
        })
        .collect()
}

fn neighbor_average(net: &SocialNetwork, values: &[f64], include_self: bool) -> Vec<f64> {
    net.units()
        .map(|u| {
            let adj = net.adjacent(u);
            let (mut sum, mut count) = (adj.iter().map(|v| values[v.index()]).sum::<f64>(), adj.len());
            if include_self {
                sum += values[u.index()];
                count += 1;
            }
            if count == 0 {
                0.0
            } else {
                sum / count as f64
            }
        })
        .collect()
}

/// Unvaccinated infection probabilities on a fixed graph and covariates.
pub fn infection_probabilities(
    net: &SocialNetwork,
    income: &[f64],
    noise: &[f64],
    literal: bool,
    include_self: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let tri = triangles(net);
    let avg = neighbor_average(net, income, include_self);
    let p = (0..net.n())
        .map(|i| expit(linear_index(income[i], avg[i], tri[i], noise[i], literal)))
        .collect();
    (p, tri, avg)
}

pub fn simulate_trial(cfg: &SimConfig) -> Result<SimDataset> {
    if !cfg.sigma.is_finite() || cfg.sigma < 0.0 {
        return Err(Error::invalid(format!("noise sd must be finite and >= 0, got {}", cfg.sigma)));
    }
    let graph = ba_graph(cfg.n, cfg.m, seed::derive_named(cfg.seed, "graph"))?;
    let mut rng = seed::rng(seed::derive_named(cfg.seed, "covariates"));
    let n = cfg.n;
    let income_noise = Normal::new(0.0, 5.0).expect("valid normal");
    let eps = Normal::new(0.0, cfg.sigma).expect("valid normal");
    let (mut age, mut income, mut vaccine, mut noise) =
        (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let a = rng.random_range(21.0..=99.0);
        age.push(a);
        income.push(rng.random_range(20.0..=60.0) + a / 50.0 + income_noise.sample(&mut rng));
        vaccine.push(rng.random_bool(0.5) as u8 as f64);
        noise.push(eps.sample(&mut rng));
    }
    let (p, triangle, avg) = infection_probabilities(&graph, &income, &noise, cfg.literal, cfg.include_self);
    let infect: Vec<f64> = (0..n)
        .map(|i| {
            let unvaccinated = rng.random_bool(p[i].clamp(0.0, 1.0));
            let vaccinated = rng.random_bool(VACCINATED_RISK);
            (if vaccine[i] == 1.0 { vaccinated } else { unvaccinated }) as u8 as f64
        })
        .collect();
    let mut table = CovariateTable::new(n)
        .with_column(Column::numeric("age", age))?
        .with_column(Column::numeric("income", income))?
        .with_column(Column::binary(TREATMENT, vaccine))?
        .with_column(Column::binary(OUTCOME, infect))?;
    table.designate(TREATMENT, OUTCOME)?;
    let network = graph.with_covariates(table)?;
    let truth = cfg.store_ground_truth.then(|| GroundTruth {
        tau: p.iter().map(|&pi| VACCINATED_RISK - pi).collect(),
        p,
        triangle,
        avg_nbr_income: avg,
    });
    Ok(SimDataset { network, truth })
}

/// Dense ids `0..n` as strings, the id convention of generated data.
pub fn default_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| UnitId::from(i).to_string()).collect()
}

/// Seed the test stage uses for a dataset generated with `seed_value`.
pub fn estimation_seed(seed_value: u64) -> u64 {
    seed::derive_named(seed_value, "estimate")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Units,
    Noise,
}

/// One long-format sweep record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub n_or_variance: f64,
    pub rep: usize,
    pub hypothesis: String,
    pub delta_sq: f64,
    pub iota_sq: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepFailure {
    pub n_or_variance: f64,
    pub rep: usize,
    pub seed: u64,
    pub error: String,
}

/// Seed of replicate `rep` at sweep point `point`.
pub fn replicate_seed(root: u64, kind: SweepKind, point: usize, rep: usize) -> u64 {
    let tag = match kind {
        SweepKind::Units => 1,
        SweepKind::Noise => 2,
    };
    seed::derive(root, &[tag, point as u64, rep as u64])
}

/// `(label, delta^2, iota^2)` per hypothesis.
pub type ReplicateScores = Vec<(String, f64, f64)>;

/// Simulates and tests one replicate, returning one row per hypothesis.
pub fn run_replicate(cfg: &SimConfig, test: &TestConfig) -> Result<ReplicateScores> {
    let data = simulate_trial(cfg)?;
    let mut test = test.clone();
    test.estimator.seed = estimation_seed(cfg.seed);
    let report = run_test(&data.network, &trial_dag(), &trial_hypotheses(), &test)?;
    report
        .results
        .into_iter()
        .map(|r| match (r.delta_sq, r.iota_sq) {
            (Some(d), Some(i)) => Ok((r.label, d, i)),
            _ => Err(Error::invalid(format!(
                "hypothesis `{}` was not scored: {}",
                r.label,
                r.error.unwrap_or_else(|| r.decision.to_string())
            ))),
        })
        .collect()
}

fn sweep(
    base: &SimConfig,
    kind: SweepKind,
    points: &[f64],
    reps: usize,
    test: &TestConfig,
    sink: &mut dyn FnMut(&[SweepRow]) -> Result<()>,
) -> Result<Vec<SweepFailure>> {
    if points.is_empty() || reps == 0 {
        return Err(Error::invalid("sweep needs at least one point and one replicate"));
    }
    let mut failures = Vec::new();
    for (k, &x) in points.iter().enumerate() {
        let outcomes: Vec<(usize, u64, Result<ReplicateScores>)> = (0..reps)
            .into_par_iter()
            .map(|rep| {
                let s = replicate_seed(base.seed, kind, k, rep);
                let mut cfg = base.clone();
                cfg.seed = s;
                match kind {
                    SweepKind::Units => cfg.n = x as usize,
                    SweepKind::Noise => cfg.sigma = x.sqrt(),
                }
                (rep, s, run_replicate(&cfg, test))
            })
            .collect();
        let mut rows = Vec::new();
        for (rep, s, outcome) in outcomes {
            match outcome {
                Ok(scored) => rows.extend(scored.into_iter().map(|(hypothesis, delta_sq, iota_sq)| SweepRow {
                    n_or_variance: x,
                    rep,
                    hypothesis,
                    delta_sq,
                    iota_sq,
                    seed: s,
                })),
                Err(e) => failures.push(SweepFailure {
                    n_or_variance: x,
                    rep,
                    seed: s,
                    error: e.to_string(),
                }),
            }
        }
        sink(&rows)?;
    }
    Ok(failures)
}

/// Varies the unit count; rows reach `sink` one sweep point at a time.
pub fn sweep_units(
    base: &SimConfig,
    sizes: &[usize],
    reps: usize,
    test: &TestConfig,
    sink: &mut dyn FnMut(&[SweepRow]) -> Result<()>,
) -> Result<Vec<SweepFailure>> {
    let points: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
    sweep(base, SweepKind::Units, &points, reps, test, sink)
}

/// Varies the noise variance at fixed `base.n`.
pub fn sweep_noise(
    base: &SimConfig,
    variances: &[f64],
    reps: usize,
    test: &TestConfig,
    sink: &mut dyn FnMut(&[SweepRow]) -> Result<()>,
) -> Result<Vec<SweepFailure>> {
    if let Some(v) = variances.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::invalid(format!("noise variance must be finite and >= 0, got {v}")));
    }
    sweep(base, SweepKind::Noise, variances, reps, test, sink)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pattern::check_pattern;
    use crate::summary::summarize_all;

    #[test]
    fn small_graphs() {
        let g = ba_graph(3, 2, 1).unwrap();
        assert_eq!(g.edge_count(), 3);
        assert!(g.has_edge(UnitId(0), UnitId(1)) && g.has_edge(UnitId(1), UnitId(2)));
        assert_eq!(ba_graph(100, 2, 7).unwrap().edge_count(), 197);
        assert!(ba_graph(2, 2, 0).is_err());
        assert!(ba_graph(5, 0, 0).is_err());
    }

    #[test]
    fn graph_is_connected_and_deterministic() {
        let a = ba_graph(300, 3, 9).unwrap();
        let b = ba_graph(300, 3, 9).unwrap();
        assert_eq!(a.edges().collect::<Vec<_>>(), b.edges().collect::<Vec<_>>());
        let mut seen = vec![false; a.n()];
        let mut stack = vec![UnitId(0)];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &v in a.adjacent(u) {
                if !seen[v.index()] {
                    seen[v.index()] = true;
                    stack.push(v);
                }
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn degrees_are_heavy_tailed() {
        let mut hits = 0;
        for s in 0..20 {
            let g = ba_graph(4096, 2, s).unwrap();
            let mut d: Vec<usize> = g.units().map(|u| g.degree(u)).collect();
            d.sort_unstable();
            if d[d.len() - 1] >= 3 * d[d.len() / 2] {
                hits += 1;
            }
        }
        assert!(hits >= 19);
    }

    #[test]
    fn probabilities_by_hand() {
        // Triangle 0-1-2 plus a pendant 3 attached to 2.
        let net = SocialNetwork::from_edges(4, [(0, 1), (1, 2), (0, 2), (2, 3)], CovariateTable::new(4)).unwrap();
        let income = [40.0, 30.0, 35.0, 50.0];
        let (p, tri, avg) = infection_probabilities(&net, &income, &[0.0; 4], false, false);
        assert_eq!(tri, vec![1.0, 1.0, 1.0, 0.0]);
        assert_eq!(avg, vec![32.5, 37.5, 40.0, 35.0]);
        let by_hand: [f64; 4] = [
            200.0 - 40.0 - 4.0 * 32.5 + 4.0,
            200.0 - 30.0 - 4.0 * 37.5 + 4.0,
            200.0 - 35.0 - 4.0 * 40.0 + 4.0,
            200.0 - 50.0 - 4.0 * 35.0,
        ];
        for (pi, x) in p.iter().zip(by_hand) {
            assert!((pi - 1.0 / (1.0 + (-x).exp())).abs() < 1e-15);
        }
        let (lit, _, _) = infection_probabilities(&net, &income, &[0.0; 4], true, false);
        assert!((lit[3] - expit(200.0 - 50.0 - 4.0 * 35.0)).abs() < 1e-15);
        assert!((lit[0] - expit(200.0 - 40.0 - 4.0 * (32.5 + 4.0))).abs() < 1e-15);
        let (_, _, with_self) = infection_probabilities(&net, &income, &[0.0; 4], false, true);
        assert!((with_self[3] - 42.5).abs() < 1e-12);
        assert_eq!(expit(0.0), 0.5);
    }

    #[test]
    fn trial_invariants() {
        let cfg = SimConfig {
            n: 4096,
            seed: 21,
            store_ground_truth: true,
            ..Default::default()
        };
        let data = simulate_trial(&cfg).unwrap();
        let net = &data.network;
        let truth = data.truth.as_ref().unwrap();
        let cov = net.covariates();
        assert!(cov.column("age").unwrap().values().iter().all(|a| (21.0..=99.0).contains(a)));
        let vac = cov.column("vaccine").unwrap().values();
        let frac = vac.iter().sum::<f64>() / vac.len() as f64;
        assert!((frac - 0.5).abs() < 0.03);
        assert!(truth.p.iter().all(|&p| p > 0.0 && p < 1.0));
        let tri = pattern_check(net);
        assert_eq!(tri, truth.triangle);
        let avg = summarize_all(net, &SummarySpec::mean("income")).unwrap().values;
        for (a, b) in avg.iter().zip(&truth.avg_nbr_income) {
            assert!((a - b).abs() < 1e-9);
        }
        for i in 0..net.n() {
            assert!((truth.tau[i] - (VACCINATED_RISK - truth.p[i])).abs() < 1e-15);
        }
        assert!(net.validate().is_empty());
    }

    fn pattern_check(net: &SocialNetwork) -> Vec<f64> {
        let tri = NetworkPattern::clique(3).unwrap();
        net.units()
            .map(|u| check_pattern(net, &tri, u).unwrap() as u8 as f64)
            .collect()
    }

    #[test]
    fn simulation_is_deterministic() {
        let cfg = SimConfig {
            n: 200,
            seed: 5,
            store_ground_truth: true,
            ..Default::default()
        };
        let a = simulate_trial(&cfg).unwrap();
        let b = simulate_trial(&cfg).unwrap();
        assert_eq!(a.network.covariates(), b.network.covariates());
        assert_eq!(a.truth, b.truth);
    }

    #[test]
    fn higher_income_means_lower_risk() {
        for literal in [false, true] {
            for tri in [0.0, 1.0] {
                let p = |inc: f64, avg: f64| expit(linear_index(inc, avg, tri, 0.0, literal));
                assert!(p(40.5, 39.0) < p(40.0, 39.0));
                assert!(p(40.0, 39.5) < p(40.0, 39.0));
            }
        }
    }

    #[test]
    fn single_point_sweep_has_one_row_per_hypothesis() {
        let base = SimConfig {
            n: 128,
            seed: 3,
            ..Default::default()
        };
        let mut rows = Vec::new();
        let failures = sweep_units(&base, &[128], 1, &TestConfig::default(), &mut |r| {
            rows.extend_from_slice(r);
            Ok(())
        })
        .unwrap();
        assert!(failures.is_empty());
        assert_eq!(rows.len(), 5);
        let mut rows = Vec::new();
        sweep_noise(&base, &[1.0], 1, &TestConfig::default(), &mut |r| {
            rows.extend_from_slice(r);
            Ok(())
        })
        .unwrap();
        assert_eq!(rows.len(), 5);
    }

    #[test]
    fn too_small_replicates_are_recorded() {
        let base = SimConfig {
            seed: 3,
            ..Default::default()
        };
        let mut rows = Vec::new();
        let failures = sweep_units(&base, &[8, 64], 2, &TestConfig::default(), &mut |r| {
            rows.extend_from_slice(r);
            Ok(())
        })
        .unwrap();
        assert_eq!(failures.len(), 2);
        assert_eq!(rows.len(), 10);
    }
}
