//! Hypothesized effect modifiers and the heterogeneity test.
//!
//! Each hypothesis becomes a per-unit vector. The point effects are
//! projected onto that vector, giving a mean and variance per stratum of the
//! modifier, and `delta^2` averages the squared standardized distance of the
//! stratum means from the average effect. `iota^2` rescales it to a
//! percentage; the null of no modification is rejected when it exceeds the
//! threshold.

use std::fmt::{self, Write as _};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dag::{CausalDag, DropReason};
use crate::error::{Error, Result};
use crate::estimate::{build_unit_table, estimate_ade, estimate_cde, CdePosterior, EstimatorConfig, UnitTable};
use crate::network::{CovariateTable, SocialNetwork};
use crate::pattern::{pattern_indicator, NetworkPattern};
use crate::summary::{summarize_all, SummaryKind, SummarySpec};

#[derive(Debug, Clone, PartialEq)]
pub enum HypothesisKind {
    UnitCovariate(String),
    NeighborSummary(SummarySpec),
    Pattern(NetworkPattern),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub label: String,
    pub kind: HypothesisKind,
    /// DAG node this hypothesis stands for, when it differs from the default
    /// lookup.
    pub dag_var: Option<String>,
}

impl Hypothesis {
    pub fn unit_covariate(label: &str, covariate: &str) -> Self {
        Self::new(label, HypothesisKind::UnitCovariate(covariate.to_string()))
    }

    pub fn neighbor_summary(label: &str, spec: SummarySpec) -> Self {
        Self::new(label, HypothesisKind::NeighborSummary(spec))
    }

    pub fn pattern(label: &str, pattern: NetworkPattern) -> Self {
        Self::new(label, HypothesisKind::Pattern(pattern))
    }

    fn new(label: &str, kind: HypothesisKind) -> Self {
        Hypothesis {
            label: label.to_string(),
            kind,
            dag_var: None,
        }
    }

    pub fn with_dag_var(mut self, name: &str) -> Self {
        self.dag_var = Some(name.to_string());
        self
    }

    /// Fails if the hypothesis refers to a column or level `table` lacks.
    pub fn check_references(&self, table: &CovariateTable) -> Result<()> {
        match &self.kind {
            HypothesisKind::UnitCovariate(name) => table.column(name).map(|_| ()),
            HypothesisKind::NeighborSummary(spec) => spec.check(table),
            HypothesisKind::Pattern(p) => p.check(table),
        }
    }

    /// Whether the hypothesis vector takes few, discrete values.
    pub fn is_discrete(&self, table: &CovariateTable) -> Result<bool> {
        Ok(match &self.kind {
            HypothesisKind::UnitCovariate(name) => table.column(name)?.kind().is_discrete(),
            HypothesisKind::NeighborSummary(spec) => matches!(spec.kind, SummaryKind::Count),
            HypothesisKind::Pattern(_) => true,
        })
    }
}

/// Per-unit values of a hypothesized modifier.
pub fn gen_hyp_vector(net: &SocialNetwork, h: &Hypothesis) -> Result<Vec<f64>> {
    match &h.kind {
        HypothesisKind::UnitCovariate(name) => Ok(net.covariates().column(name)?.values().to_vec()),
        HypothesisKind::NeighborSummary(spec) => Ok(summarize_all(net, spec)?.values),
        HypothesisKind::Pattern(p) => pattern_indicator(net, p),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectionConfig {
    /// Equal-frequency bins for numeric modifiers.
    pub bins: usize,
    /// Modifiers with at most this many distinct values use exact groups.
    pub max_levels: usize,
    pub variance_floor: f64,
    pub min_n: usize,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig {
            bins: 10,
            max_levels: 10,
            variance_floor: 1e-6,
            min_n: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Group {
    pub mean: f64,
    pub variance: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "layout", rename_all = "snake_case")]
pub enum Grouping {
    /// One group per distinct modifier value.
    Levels { levels: Vec<f64> },
    /// Group `k` holds values in `[cuts[k-1], cuts[k])`.
    Bins { cuts: Vec<f64> },
    /// Constant modifier.
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectionModel {
    pub grouping: Grouping,
    pub groups: Vec<Group>,
    pub ade: f64,
    pub variance_floor: f64,
    pub degenerate: bool,
}

impl ProjectionModel {
    fn group_of(&self, h: f64) -> Option<usize> {
        match &self.grouping {
            Grouping::Levels { levels } => levels.iter().position(|&l| l == h),
            Grouping::Bins { cuts } => Some(cuts.partition_point(|&c| c <= h)),
            Grouping::Constant => Some(0),
        }
    }

    /// Fitted `(mean, variance)` of the effect at modifier value `h`.
    /// Unseen levels fall back to the average effect at the floor variance.
    pub fn predict(&self, h: f64) -> (f64, f64) {
        match self.group_of(h) {
            Some(k) => (self.groups[k].mean, self.groups[k].variance),
            None => (self.ade, self.variance_floor),
        }
    }
}

fn sample_variance(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let (n, sum) = xs.clone().fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    if n < 2 {
        return 0.0;
    }
    let m = sum / n as f64;
    xs.map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// Equal-frequency cut points, deduplicated, none at the minimum.
fn equal_frequency_cuts(hvec: &[f64], bins: usize) -> Vec<f64> {
    let mut sorted = hvec.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut cuts: Vec<f64> = (1..bins).map(|k| sorted[k * n / bins]).collect();
    cuts.dedup();
    cuts.retain(|&c| c > sorted[0]);
    cuts
}

/// Projects the effect posterior onto a modifier vector.
///
/// A group's variance is the spread of its mean over bootstrap draws plus
/// the spread of point effects inside it, floored at `variance_floor`.
pub fn project(post: &CdePosterior, hvec: &[f64], config: &ProjectionConfig) -> Result<ProjectionModel> {
    let n = post.n();
    if hvec.len() != n {
        return Err(Error::invalid(format!(
            "modifier has {} values for {n} units",
            hvec.len()
        )));
    }
    if n < config.min_n {
        return Err(Error::invalid(format!(
            "{n} units is below the projection minimum of {}",
            config.min_n
        )));
    }
    if let Some(i) = hvec.iter().position(|h| !h.is_finite()) {
        return Err(Error::invalid(format!("modifier value for unit {i} is not finite")));
    }
    if config.variance_floor.is_nan() || config.variance_floor <= 0.0 {
        return Err(Error::invalid("variance floor must be positive"));
    }
    let ade = estimate_ade(post);
    let mut levels = hvec.to_vec();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    if levels.len() == 1 {
        return Ok(ProjectionModel {
            grouping: Grouping::Constant,
            groups: vec![Group {
                mean: ade,
                variance: config.variance_floor,
                count: n,
            }],
            ade,
            variance_floor: config.variance_floor,
            degenerate: true,
        });
    }
    let grouping = if levels.len() <= config.max_levels {
        Grouping::Levels { levels }
    } else {
        Grouping::Bins {
            cuts: equal_frequency_cuts(hvec, config.bins.max(1)),
        }
    };
    let n_groups = match &grouping {
        Grouping::Levels { levels } => levels.len(),
        Grouping::Bins { cuts } => cuts.len() + 1,
        Grouping::Constant => 1,
    };
    let mut model = ProjectionModel {
        grouping,
        groups: Vec::new(),
        ade,
        variance_floor: config.variance_floor,
        degenerate: false,
    };
    let mut members = vec![Vec::new(); n_groups];
    for (i, &h) in hvec.iter().enumerate() {
        members[model.group_of(h).expect("observed value has a group")].push(i);
    }
    let reps = post.replicates;
    model.groups = members
        .iter()
        .map(|rows| {
            let count = rows.len();
            if count == 0 {
                return Group {
                    mean: ade,
                    variance: config.variance_floor,
                    count,
                };
            }
            let mean = rows.iter().map(|&i| post.point[i]).sum::<f64>() / count as f64;
            let draw_means = (0..reps).map(|b| {
                rows.iter().map(|&i| post.draws[i * reps + b]).sum::<f64>() / count as f64
            });
            let between = sample_variance(draw_means);
            let within = sample_variance(rows.iter().map(|&i| post.point[i]));
            Group {
                mean,
                variance: (between + within).max(config.variance_floor),
                count,
            }
        })
        .collect();
    Ok(model)
}

/// Mean of `(mean - ade)^2 / variance` over `(mean, variance)` pairs.
pub fn delta_sq_from(fitted: impl IntoIterator<Item = (f64, f64)>, ade: f64) -> f64 {
    let (n, sum) = fitted
        .into_iter()
        .fold((0usize, 0.0), |(n, s), (m, v)| (n + 1, s + (m - ade).powi(2) / v));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Heterogeneity of the projected effects around the average effect.
pub fn delta_sq(post: &CdePosterior, g: &ProjectionModel, hvec: &[f64]) -> f64 {
    let ade = estimate_ade(post);
    delta_sq_from(hvec.iter().map(|&h| g.predict(h)), ade)
}

/// Percentage form of `delta^2`, in `[0, 100)`.
pub fn iota_sq(d2: f64) -> f64 {
    if d2.is_nan() || d2 <= 1.0 {
        return 0.0;
    }
    (100.0 * (d2 - 1.0) / d2).min(100f64.next_down())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    RejectNull,
    FailToReject,
    Dropped,
    Error,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::RejectNull => "reject (effect modifier)",
            Decision::FailToReject => "fail to reject",
            Decision::Dropped => "dropped",
            Decision::Error => "error",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisResult {
    pub label: String,
    pub delta_sq: Option<f64>,
    pub iota_sq: Option<f64>,
    pub decision: Decision,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dropped: Option<DropReason>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Modifier took a single value.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct TestConfig {
    pub i0: f64,
    pub estimator: EstimatorConfig,
    pub projection: ProjectionConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestReport {
    pub ade: f64,
    pub n: usize,
    pub treatment: String,
    pub outcome: String,
    pub adjustment: Vec<String>,
    pub constant_outcome: bool,
    pub borrowed_units: usize,
    pub config: TestConfig,
    pub results: Vec<HypothesisResult>,
}

impl TestReport {
    pub fn result(&self, label: &str) -> Option<&HypothesisResult> {
        self.results.iter().find(|r| r.label == label)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Human-readable table: hypothesis, `delta^2`, `iota^2`, decision.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "treatment: {}  outcome: {}  n: {}  ADE: {:.4}  I0: {}",
            self.treatment, self.outcome, self.n, self.ade, self.config.i0
        );
        let _ = writeln!(out, "adjustment: {{{}}}", self.adjustment.join(", "));
        if self.results.is_empty() {
            return out;
        }
        let width = self
            .results
            .iter()
            .map(|r| r.label.chars().count())
            .max()
            .unwrap_or(0)
            .max("Hypothesis".len());
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<width$}  {:>10}  {:>6}  Decision", "Hypothesis", "δ²", "ι²");
        for r in &self.results {
            let d2 = r.delta_sq.map_or("-".to_string(), |v| format!("{v:.4}"));
            let i2 = r.iota_sq.map_or("-".to_string(), |v| format!("{v:.2}"));
            let mut decision = r.decision.to_string();
            if let Some(reason) = &r.dropped {
                let _ = write!(decision, " ({reason})");
            }
            if let Some(e) = &r.error {
                let _ = write!(decision, " ({e})");
            }
            let _ = writeln!(out, "{:<width$}  {d2:>10}  {i2:>6}  {decision}", r.label);
        }
        out
    }
}

/// Scores one modifier vector against a posterior.
pub fn score(
    post: &CdePosterior,
    hvec: &[f64],
    config: &ProjectionConfig,
    i0: f64,
) -> Result<(f64, f64, Decision, bool)> {
    let g = project(post, hvec, config)?;
    let d2 = delta_sq(post, &g, hvec);
    let i2 = iota_sq(d2);
    let decision = if i2 > i0 {
        Decision::RejectNull
    } else {
        Decision::FailToReject
    };
    Ok((d2, i2, decision, g.degenerate))
}

/// Runs the full test: screen, build the unit table, estimate effects, then
/// score every kept hypothesis independently.
pub fn run_test(
    net: &SocialNetwork,
    dag: &CausalDag,
    hyps: &[Hypothesis],
    config: &TestConfig,
) -> Result<TestReport> {
    run_with(net, dag, hyps, config, |table| estimate_cde(table, &config.estimator))
}

/// Like [`run_test`], but scores against given per-unit effect estimates
/// instead of fitting the outcome model.
pub fn run_test_with_effects(
    net: &SocialNetwork,
    dag: &CausalDag,
    hyps: &[Hypothesis],
    effects: &[f64],
    config: &TestConfig,
) -> Result<TestReport> {
    if effects.len() != net.n() {
        return Err(Error::invalid(format!(
            "{} effect values for {} units",
            effects.len(),
            net.n()
        )));
    }
    if let Some(i) = effects.iter().position(|e| !e.is_finite()) {
        return Err(Error::invalid(format!("effect value for unit {i} is not finite")));
    }
    run_with(net, dag, hyps, config, |_| {
        CdePosterior::from_draws(effects.to_vec(), 1, config.estimator.estimand)
    })
}

fn run_with(
    net: &SocialNetwork,
    dag: &CausalDag,
    hyps: &[Hypothesis],
    config: &TestConfig,
    effects: impl FnOnce(&UnitTable) -> Result<CdePosterior>,
) -> Result<TestReport> {
    let mut labels: Vec<&str> = hyps.iter().map(|h| h.label.as_str()).collect();
    labels.sort_unstable();
    if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::invalid(format!("duplicate hypothesis label `{}`", w[0])));
    }
    let screening = dag.screen_modifiers(hyps, net.covariates())?;
    let table = build_unit_table(net, dag, &screening.kept, &config.estimator)?;
    let post = effects(&table)?;
    let ade = estimate_ade(&post);
    let kept: Vec<HypothesisResult> = table
        .hypotheses
        .par_iter()
        .map(|col| match score(&post, &col.values, &config.projection, config.i0) {
            Ok((d2, i2, decision, degenerate)) => HypothesisResult {
                label: col.name.clone(),
                delta_sq: Some(d2),
                iota_sq: Some(i2),
                decision,
                dropped: None,
                error: None,
                degenerate,
            },
            Err(e) => HypothesisResult {
                label: col.name.clone(),
                delta_sq: None,
                iota_sq: None,
                decision: Decision::Error,
                dropped: None,
                error: Some(e.to_string()),
                degenerate: false,
            },
        })
        .collect();
    let mut results = Vec::with_capacity(hyps.len());
    let mut kept = kept.into_iter();
    for h in hyps {
        if let Some(d) = screening.dropped.iter().find(|d| d.hypothesis.label == h.label) {
            results.push(HypothesisResult {
                label: h.label.clone(),
                delta_sq: None,
                iota_sq: None,
                decision: Decision::Dropped,
                dropped: Some(d.reason.clone()),
                error: None,
                degenerate: false,
            });
        } else {
            results.push(kept.next().expect("one result per kept hypothesis"));
        }
    }
    Ok(TestReport {
        ade,
        n: net.n(),
        treatment: dag.treatment_name().to_string(),
        outcome: dag.outcome_name().to_string(),
        adjustment: table.confounders.iter().map(|c| c.name.clone()).collect(),
        constant_outcome: post.constant_outcome,
        borrowed_units: post.borrowed.iter().filter(|&&b| b).count(),
        config: config.clone(),
        results,
    })
}
