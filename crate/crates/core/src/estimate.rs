//! Per-unit conditional direct effect estimation.
//!
//! Two estimators share one output type. The ensemble estimator bags
//! depth-limited regression trees fit to the outcome given the adjustment
//! columns, the hypothesis columns and the unit's own treatment, and reads
//! each unit's effect off the counterfactual predictions at `T = 1` and
//! `T = 0`. The stratified estimator takes exact arm-mean differences inside
//! each cell of fully discrete features.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dag::{CausalDag, Role};
use crate::error::{Error, Result};
use crate::hetero::{gen_hyp_vector, Hypothesis};
use crate::network::SocialNetwork;
use crate::pattern::pattern_indicator;
use crate::seed;
use crate::summary::{summarize_all, SummarySpec};

/// Name of the optional fraction-of-treated-neighbors adjustment column.
pub const NEIGHBOR_TREATED: &str = "nbr_treated_fraction";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    #[default]
    Ensemble,
    Stratified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Estimand {
    #[default]
    RiskDifference,
    LogRiskRatio,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub estimator: EstimatorKind,
    /// Bootstrap replicates (trees for the ensemble).
    pub replicates: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub seed: u64,
    pub estimand: Estimand,
    pub p_min: f64,
    pub min_n: usize,
    /// Adds the fraction of treated neighbors as an adjustment column.
    pub neighbor_treated: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            estimator: EstimatorKind::Ensemble,
            replicates: 50,
            max_depth: 8,
            min_leaf: 5,
            seed: 0,
            estimand: Estimand::RiskDifference,
            p_min: 0.01,
            min_n: 16,
            neighbor_treated: false,
        }
    }
}

/// Most strata the stratified estimator accepts.
pub const MAX_STRATA: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureColumn {
    pub name: String,
    pub values: Vec<f64>,
    pub discrete: bool,
}

/// One row per unit: adjustment columns, hypothesis columns, treatment and
/// outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitTable {
    pub confounders: Vec<FeatureColumn>,
    pub hypotheses: Vec<FeatureColumn>,
    pub treatment: Vec<f64>,
    pub outcome: Vec<f64>,
}

impl UnitTable {
    /// Assembles a table from raw columns, checking lengths, missing values
    /// and the binary treatment.
    pub fn new(
        confounders: Vec<FeatureColumn>,
        hypotheses: Vec<FeatureColumn>,
        treatment: Vec<f64>,
        outcome: Vec<f64>,
    ) -> Result<Self> {
        let n = treatment.len();
        if outcome.len() != n {
            return Err(Error::invalid("outcome and treatment lengths differ"));
        }
        for col in confounders.iter().chain(&hypotheses) {
            if col.values.len() != n {
                return Err(Error::invalid(format!(
                    "column `{}` has {} rows, expected {n}",
                    col.name,
                    col.values.len()
                )));
            }
            if let Some(i) = col.values.iter().position(|v| v.is_nan()) {
                return Err(Error::invalid(format!("column `{}` is missing row {i}", col.name)));
            }
        }
        if let Some(i) = treatment.iter().position(|&t| t != 0.0 && t != 1.0) {
            return Err(Error::invalid(format!(
                "treatment must be 0/1, row {i} has {}",
                treatment[i]
            )));
        }
        if let Some(i) = outcome.iter().position(|v| v.is_nan()) {
            return Err(Error::invalid(format!("outcome is missing row {i}")));
        }
        Ok(UnitTable {
            confounders,
            hypotheses,
            treatment,
            outcome,
        })
    }

    pub fn n(&self) -> usize {
        self.treatment.len()
    }

    pub fn hypothesis(&self, name: &str) -> Option<&FeatureColumn> {
        self.hypotheses.iter().find(|c| c.name == name)
    }

    /// Adjustment and hypothesis columns, in model order.
    pub fn features(&self) -> impl Iterator<Item = &FeatureColumn> {
        self.confounders.iter().chain(&self.hypotheses)
    }

    fn check_positivity(&self) -> Result<()> {
        let treated = self.treatment.iter().filter(|&&t| t == 1.0).count();
        if treated == 0 || treated == self.n() {
            return Err(Error::Positivity(format!(
                "all {} units are in one treatment arm",
                self.n()
            )));
        }
        Ok(())
    }
}

/// Builds the unit table for the adjustment set of `dag` and the kept
/// hypotheses, labelled by hypothesis label.
pub fn build_unit_table(
    net: &SocialNetwork,
    dag: &CausalDag,
    hyps: &[Hypothesis],
    config: &EstimatorConfig,
) -> Result<UnitTable> {
    let table = net.covariates();
    let mut confounders = Vec::new();
    for v in dag.backdoor_set() {
        let name = dag.name(v);
        let column = match dag.role(v) {
            Role::NeighborSummary => {
                let spec = dag.summary_spec(v).expect("summary node has a spec");
                FeatureColumn {
                    name: name.to_string(),
                    values: summarize_all(net, spec)?.values,
                    discrete: false,
                }
            }
            Role::PatternIndicator => {
                let pattern = dag.pattern(v).expect("pattern node has a pattern");
                FeatureColumn {
                    name: name.to_string(),
                    values: pattern_indicator(net, pattern)?,
                    discrete: true,
                }
            }
            Role::Network if table.get(name).is_none() => continue,
            _ => {
                let col = table.column(name)?;
                FeatureColumn {
                    name: name.to_string(),
                    values: col.values().to_vec(),
                    discrete: col.kind().is_discrete(),
                }
            }
        };
        confounders.push(column);
    }
    let treatment = table.column(dag.treatment_name())?.values().to_vec();
    let outcome = table.column(dag.outcome_name())?.values().to_vec();
    if config.neighbor_treated {
        let spec = SummarySpec::mean(dag.treatment_name());
        confounders.push(FeatureColumn {
            name: NEIGHBOR_TREATED.to_string(),
            values: summarize_all(net, &spec)?.values,
            discrete: false,
        });
    }
    let hypotheses = hyps
        .iter()
        .map(|h| {
            Ok(FeatureColumn {
                name: h.label.clone(),
                values: gen_hyp_vector(net, h)?,
                discrete: h.is_discrete(table)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let tab = UnitTable::new(confounders, hypotheses, treatment, outcome)?;
    tab.check_positivity()?;
    Ok(tab)
}

/// Per-unit effect estimates with bootstrap draws.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CdePosterior {
    pub point: Vec<f64>,
    /// Row-major `n x replicates`.
    pub draws: Vec<f64>,
    pub replicates: usize,
    pub estimand: Estimand,
    pub constant_outcome: bool,
    /// Units whose stratum lacked one arm and borrowed the global arm mean.
    pub borrowed: Vec<bool>,
}

impl CdePosterior {
    /// Builds a posterior from draws alone; the point estimate is the row
    /// mean.
    pub fn from_draws(draws: Vec<f64>, replicates: usize, estimand: Estimand) -> Result<Self> {
        if replicates == 0 || !draws.len().is_multiple_of(replicates) {
            return Err(Error::invalid("draw matrix shape does not match replicate count"));
        }
        let point = draws
            .chunks(replicates)
            .map(|row| row.iter().sum::<f64>() / replicates as f64)
            .collect::<Vec<_>>();
        let n = point.len();
        Ok(CdePosterior {
            point,
            draws,
            replicates,
            estimand,
            constant_outcome: false,
            borrowed: vec![false; n],
        })
    }

    pub fn n(&self) -> usize {
        self.point.len()
    }

    pub fn row(&self, unit: usize) -> &[f64] {
        &self.draws[unit * self.replicates..(unit + 1) * self.replicates]
    }

    fn zeros(n: usize, replicates: usize, estimand: Estimand) -> Self {
        CdePosterior {
            point: vec![0.0; n],
            draws: vec![0.0; n * replicates],
            replicates,
            estimand,
            constant_outcome: true,
            borrowed: vec![false; n],
        }
    }
}

/// Average direct effect: the mean of the point estimates.
pub fn estimate_ade(post: &CdePosterior) -> f64 {
    mean(&post.point)
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// `ln(p1 / p0)` after clipping both into `[p_min, 1 - p_min]`.
pub fn log_risk_ratio(p1: f64, p0: f64, p_min: f64) -> Result<f64> {
    if !(p_min > 0.0 && p_min < 0.5) {
        return Err(Error::invalid(format!("p_min must lie in (0, 0.5), got {p_min}")));
    }
    Ok(log_rr_unchecked(p1, p0, p_min))
}

fn log_rr_unchecked(p1: f64, p0: f64, p_min: f64) -> f64 {
    let clip = |p: f64| p.clamp(p_min, 1.0 - p_min);
    (clip(p1) / clip(p0)).ln()
}

fn contrast(m1: f64, m0: f64, config: &EstimatorConfig) -> f64 {
    match config.estimand {
        Estimand::RiskDifference => m1 - m0,
        Estimand::LogRiskRatio => log_rr_unchecked(m1, m0, config.p_min),
    }
}

fn validate_config(tab: &UnitTable, config: &EstimatorConfig) -> Result<()> {
    if tab.n() < config.min_n {
        return Err(Error::invalid(format!(
            "{} units is below the minimum of {}",
            tab.n(),
            config.min_n
        )));
    }
    if config.replicates == 0 {
        return Err(Error::invalid("need at least one bootstrap replicate"));
    }
    if config.min_leaf == 0 {
        return Err(Error::invalid("min_leaf must be positive"));
    }
    if config.estimand == Estimand::LogRiskRatio {
        log_risk_ratio(0.5, 0.5, config.p_min)?;
        if tab.outcome.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::invalid("log risk ratio needs a 0/1 outcome"));
        }
    }
    tab.check_positivity()
}

/// Estimates every unit's conditional direct effect.
pub fn estimate_cde(tab: &UnitTable, config: &EstimatorConfig) -> Result<CdePosterior> {
    validate_config(tab, config)?;
    let first = tab.outcome[0];
    if tab.outcome.iter().all(|&y| y == first) {
        return Ok(CdePosterior::zeros(tab.n(), config.replicates, config.estimand));
    }
    match config.estimator {
        EstimatorKind::Ensemble => ensemble(tab, config),
        EstimatorKind::Stratified => stratified(tab, config),
    }
}

// Regression trees.

#[derive(Debug, Clone)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, feature: impl Fn(usize) -> f64) -> f64 {
        let mut k = 0;
        loop {
            match self.nodes[k] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature: f,
                    threshold,
                    left,
                    right,
                } => k = if feature(f) <= threshold { left } else { right },
            }
        }
    }
}

/// Row-major design matrix with the treatment as the last column.
struct Design {
    x: Vec<f64>,
    p: usize,
}

impl Design {
    fn new(tab: &UnitTable) -> Self {
        let cols: Vec<&[f64]> = tab
            .features()
            .map(|c| c.values.as_slice())
            .chain(std::iter::once(tab.treatment.as_slice()))
            .collect();
        let p = cols.len();
        let mut x = Vec::with_capacity(tab.n() * p);
        for i in 0..tab.n() {
            x.extend(cols.iter().map(|c| c[i]));
        }
        Design { x, p }
    }

    fn at(&self, i: usize, f: usize) -> f64 {
        self.x[i * self.p + f]
    }
}

struct TreeBuilder<'a> {
    design: &'a Design,
    y: &'a [f64],
    max_depth: usize,
    min_leaf: usize,
    nodes: Vec<Node>,
    scratch: Vec<(f64, f64)>,
}

impl TreeBuilder<'_> {
    fn build(&mut self, rows: &mut [usize], depth: usize) -> usize {
        let id = self.nodes.len();
        let n = rows.len();
        let total: f64 = rows.iter().map(|&i| self.y[i]).sum();
        self.nodes.push(Node::Leaf(total / n as f64));
        if depth >= self.max_depth || n < 2 * self.min_leaf {
            return id;
        }
        let Some((feature, threshold)) = self.best_split(rows, total) else {
            return id;
        };
        let design = self.design;
        let mut split = 0;
        for k in 0..n {
            if design.at(rows[k], feature) <= threshold {
                rows.swap(k, split);
                split += 1;
            }
        }
        let (l, r) = rows.split_at_mut(split);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }

    fn best_split(&mut self, rows: &[usize], total: f64) -> Option<(usize, f64)> {
        let n = rows.len();
        let base = total * total / n as f64;
        let mut best: Option<(f64, usize, f64)> = None;
        for f in 0..self.design.p {
            self.scratch.clear();
            self.scratch
                .extend(rows.iter().map(|&i| (self.design.at(i, f), self.y[i])));
            self.scratch.sort_by(|a, b| a.0.total_cmp(&b.0));
            if self.scratch[0].0 == self.scratch[n - 1].0 {
                continue;
            }
            let mut left_sum = 0.0;
            for k in 1..n {
                left_sum += self.scratch[k - 1].1;
                if k < self.min_leaf || n - k < self.min_leaf {
                    continue;
                }
                let (lo, hi) = (self.scratch[k - 1].0, self.scratch[k].0);
                if lo == hi {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / k as f64
                    + right_sum * right_sum / (n - k) as f64
                    - base;
                if gain > 1e-12 && best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, f, lo + (hi - lo) / 2.0));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}

fn fit_tree(design: &Design, y: &[f64], rows: &mut [usize], config: &EstimatorConfig) -> Tree {
    let mut b = TreeBuilder {
        design,
        y,
        max_depth: config.max_depth,
        min_leaf: config.min_leaf,
        nodes: Vec::new(),
        scratch: Vec::with_capacity(rows.len()),
    };
    b.build(rows, 0);
    Tree { nodes: b.nodes }
}

fn ensemble(tab: &UnitTable, config: &EstimatorConfig) -> Result<CdePosterior> {
    let n = tab.n();
    let design = Design::new(tab);
    let t_col = design.p - 1;
    let per_tree: Vec<Vec<f64>> = (0..config.replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = seed::rng(seed::derive(config.seed, &[b as u64]));
            let mut rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let tree = fit_tree(&design, &tab.outcome, &mut rows, config);
            (0..n)
                .map(|i| {
                    let at = |t: f64| {
                        tree.predict(|f| if f == t_col { t } else { design.at(i, f) })
                    };
                    contrast(at(1.0), at(0.0), config)
                })
                .collect()
        })
        .collect();
    let mut draws = vec![0.0; n * config.replicates];
    for (b, col) in per_tree.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            draws[i * config.replicates + b] = v;
        }
    }
    CdePosterior::from_draws(draws, config.replicates, config.estimand)
}

fn stratified(tab: &UnitTable, config: &EstimatorConfig) -> Result<CdePosterior> {
    if let Some(c) = tab.features().find(|c| !c.discrete) {
        return Err(Error::invalid(format!(
            "stratified estimator needs discrete features, `{}` is numeric",
            c.name
        )));
    }
    let n = tab.n();
    let cols: Vec<&[f64]> = tab.features().map(|c| c.values.as_slice()).collect();
    let mut strata: BTreeMap<Vec<u64>, [Vec<usize>; 2]> = BTreeMap::new();
    for i in 0..n {
        let key = cols.iter().map(|c| c[i].to_bits()).collect();
        strata.entry(key).or_default()[tab.treatment[i] as usize].push(i);
    }
    if strata.len() > MAX_STRATA {
        return Err(Error::invalid(format!(
            "{} strata exceed the limit of {MAX_STRATA}",
            strata.len()
        )));
    }
    let arm_mean = |rows: &[usize]| mean(&rows.iter().map(|&i| tab.outcome[i]).collect::<Vec<_>>());
    let global: [f64; 2] = [
        arm_mean(&(0..n).filter(|&i| tab.treatment[i] == 0.0).collect::<Vec<_>>()),
        arm_mean(&(0..n).filter(|&i| tab.treatment[i] == 1.0).collect::<Vec<_>>()),
    ];
    let reps = config.replicates;
    let mut point = vec![0.0; n];
    let mut draws = vec![0.0; n * reps];
    let mut borrowed = vec![false; n];
    for (s, arms) in strata.values().enumerate() {
        let exact = |arm: usize| {
            if arms[arm].is_empty() {
                global[arm]
            } else {
                arm_mean(&arms[arm])
            }
        };
        let tau = contrast(exact(1), exact(0), config);
        let mut rng = seed::rng(seed::derive(config.seed, &[s as u64]));
        let boot = |arm: usize, rng: &mut rand_chacha::ChaCha8Rng| {
            let rows = &arms[arm];
            if rows.is_empty() {
                return global[arm];
            }
            let total: f64 = (0..rows.len())
                .map(|_| tab.outcome[rows[rng.random_range(0..rows.len())]])
                .sum();
            total / rows.len() as f64
        };
        let mut raw: Vec<f64> = (0..reps)
            .map(|_| {
                let m1 = boot(1, &mut rng);
                let m0 = boot(0, &mut rng);
                contrast(m1, m0, config)
            })
            .collect();
        let shift = tau - mean(&raw);
        for d in &mut raw {
            *d += shift;
        }
        let degenerate = arms[0].is_empty() || arms[1].is_empty();
        for &i in arms[0].iter().chain(&arms[1]) {
            point[i] = tau;
            draws[i * reps..(i + 1) * reps].copy_from_slice(&raw);
            borrowed[i] = degenerate;
        }
    }
    Ok(CdePosterior {
        point,
        draws,
        replicates: reps,
        estimand: config.estimand,
        constant_outcome: false,
        borrowed,
    })
}
