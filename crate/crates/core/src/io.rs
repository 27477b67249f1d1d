//! Readers and writers for the on-disk formats.
//!
//! - Edge lists: one `src,dst` pair per line (comma, tab or space separated),
//!   optional header, `#` comments. Several files are unioned.
//! - Covariates: delimited text with a header; the first column is the unit
//!   id and fixes unit order. Column kinds are inferred unless a schema
//!   sidecar of `name: kind` lines says otherwise.
//! - Hypotheses: JSON, `{"i0": 0, "hypotheses": [...]}`.
//! - Sweeps: long-format CSV.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dag::DagBuilder;
use crate::error::{Error, Result};
use crate::hetero::{Hypothesis, HypothesisKind};
use crate::network::{Column, CovariateKind, CovariateTable, SocialNetwork};
use crate::pattern::{BuiltinPattern, NetworkPattern, NodeConstraint};
use crate::sim::{SimDataset, SweepRow, TRIAL_DAG};
use crate::summary::SummarySpec;

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn io_error(path: &str) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_string(),
        source,
    }
}

fn csv_error(label: &str, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: label.to_string(),
            source,
        },
        other => Error::parse(label, line, format!("{other:?}")),
    }
}

// Schema sidecar.

/// Parses `name: kind` lines.
pub fn parse_schema(text: &str, label: &str) -> Result<BTreeMap<String, CovariateKind>> {
    let mut out = BTreeMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (name, kind) = line
            .split_once(':')
            .ok_or_else(|| Error::parse(label, k + 1, format!("expected `name: kind`, got `{line}`")))?;
        let kind = CovariateKind::parse(kind.trim())
            .ok_or_else(|| Error::parse(label, k + 1, format!("unknown kind `{}`", kind.trim())))?;
        out.insert(name.trim().to_string(), kind);
    }
    Ok(out)
}

pub fn write_schema(table: &CovariateTable, w: &mut impl Write) -> std::io::Result<()> {
    for (name, kind) in table.schema() {
        writeln!(w, "{name}: {kind}")?;
    }
    Ok(())
}

// Covariates.

const YES_NO: [(&str, &str); 3] = [("no", "yes"), ("false", "true"), ("n", "y")];

fn yes_no_labels(cells: &[&str]) -> Option<[String; 2]> {
    let distinct: HashSet<String> = cells.iter().map(|c| c.to_ascii_lowercase()).collect();
    YES_NO.iter().find_map(|(no, yes)| {
        if !distinct.iter().all(|c| c == no || c == yes) {
            return None;
        }
        let spelled = |want: &str, fallback: &str| {
            cells
                .iter()
                .find(|c| c.eq_ignore_ascii_case(want))
                .map_or(fallback.to_string(), |c| c.to_string())
        };
        let cap = |s: &str| {
            let mut c = s.chars();
            c.next().map_or(String::new(), |f| f.to_uppercase().chain(c).collect())
        };
        Some([spelled(no, &cap(no)), spelled(yes, &cap(yes))])
    })
}

fn parse_numbers(cells: &[&str]) -> Option<Vec<f64>> {
    cells
        .iter()
        .map(|c| c.parse::<f64>().ok().filter(|v| v.is_finite()))
        .collect()
}

fn build_column(name: &str, cells: &[&str], kind: Option<CovariateKind>, label: &str) -> Result<Column> {
    let bad = |msg: String| Error::parse(label, 1, format!("column `{name}`: {msg}"));
    let numbers = parse_numbers(cells);
    let is_01 = |v: &[f64]| v.iter().all(|&x| x == 0.0 || x == 1.0);
    match kind {
        Some(CovariateKind::Numeric) => Ok(Column::numeric(
            name,
            numbers.ok_or_else(|| bad("expected numbers".into()))?,
        )),
        Some(CovariateKind::Categorical) => Ok(Column::categorical(name, cells)),
        Some(CovariateKind::Binary) => {
            if let Some(v) = numbers.filter(|v| is_01(v)) {
                return Ok(Column::binary(name, v));
            }
            let labels = yes_no_labels(cells).or_else(|| {
                let mut d: Vec<&str> = cells.to_vec();
                d.sort_unstable();
                d.dedup();
                (d.len() <= 2).then(|| [d[0].to_string(), d.last().unwrap().to_string()])
            });
            let labels = labels.ok_or_else(|| bad("more than two values in a binary column".into()))?;
            let values = cells
                .iter()
                .map(|c| if c.eq_ignore_ascii_case(&labels[1]) && labels[0] != labels[1] { 1.0 } else { 0.0 })
                .collect();
            Ok(Column::binary_labeled(name, values, [&labels[0], &labels[1]]))
        }
        None => match numbers {
            Some(v) if is_01(&v) => Ok(Column::binary(name, v)),
            Some(v) => Ok(Column::numeric(name, v)),
            None => match yes_no_labels(cells) {
                Some(labels) => {
                    let values = cells
                        .iter()
                        .map(|c| c.eq_ignore_ascii_case(&labels[1]) as u8 as f64)
                        .collect();
                    Ok(Column::binary_labeled(name, values, [&labels[0], &labels[1]]))
                }
                None => Ok(Column::categorical(name, cells)),
            },
        },
    }
}

/// Parses a covariate file, returning unit ids in file order and the table.
pub fn parse_covariates(
    text: &str,
    label: &str,
    schema: &BTreeMap<String, CovariateKind>,
) -> Result<(Vec<String>, CovariateTable)> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(label, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.is_empty() || headers[0].is_empty() {
        return Err(Error::parse(label, 1, "missing header row"));
    }
    let mut ids = Vec::new();
    let mut seen = HashSet::new();
    let mut cells: Vec<Vec<String>> = vec![Vec::new(); headers.len() - 1];
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(label, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let id = record[0].to_string();
        if id.is_empty() {
            return Err(Error::parse(label, line, "empty unit id"));
        }
        if !seen.insert(id.clone()) {
            return Err(Error::parse(label, line, format!("duplicate unit id `{id}`")));
        }
        for (c, value) in record.iter().skip(1).enumerate() {
            if value.is_empty() {
                return Err(Error::parse(
                    label,
                    line,
                    format!("missing value in column `{}`", headers[c + 1]),
                ));
            }
            cells[c].push(value.to_string());
        }
        ids.push(id);
    }
    for name in schema.keys() {
        if !headers[1..].contains(name) {
            return Err(Error::UnknownCovariate(name.clone()));
        }
    }
    let mut table = CovariateTable::new(ids.len());
    for (name, column) in headers[1..].iter().zip(&cells) {
        let refs: Vec<&str> = column.iter().map(String::as_str).collect();
        table.push_column(build_column(name, &refs, schema.get(name).copied(), label)?)?;
    }
    Ok((ids, table))
}

pub fn read_covariates(path: &Path, schema: Option<&Path>) -> Result<(Vec<String>, CovariateTable)> {
    let schema = match schema {
        Some(p) => parse_schema(&read_text(p)?, &p.display().to_string())?,
        None => BTreeMap::new(),
    };
    parse_covariates(&read_text(path)?, &path.display().to_string(), &schema)
}

/// Writes the covariate table with unit ids; labels for discrete columns,
/// shortest round-trip decimals for numeric ones.
pub fn write_covariates(net: &SocialNetwork, w: impl Write) -> Result<()> {
    let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    let table = net.covariates();
    let mut header = vec!["id".to_string()];
    header.extend(table.columns().iter().map(|c| c.name().to_string()));
    out.write_record(&header).map_err(|e| csv_error("covariates", e))?;
    for i in 0..net.n() {
        let mut row = vec![net.ids()[i].clone()];
        row.extend(table.columns().iter().map(|c| c.label(i)));
        out.write_record(&row).map_err(|e| csv_error("covariates", e))?;
    }
    out.flush().map_err(io_error("covariates"))
}

// Edges.

fn split_pair(line: &str) -> Vec<&str> {
    line.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .collect()
}

/// Parses one edge file against the id index.
pub fn parse_edges(text: &str, label: &str, index: &HashMap<String, usize>) -> Result<Vec<(usize, usize)>> {
    let mut edges = Vec::new();
    let mut first = true;
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let tokens = split_pair(line);
        if tokens.len() != 2 {
            return Err(Error::parse(label, k + 1, format!("expected `src,dst`, got `{line}`")));
        }
        let a = index.get(tokens[0]);
        let b = index.get(tokens[1]);
        let was_first = std::mem::replace(&mut first, false);
        match (a, b) {
            (Some(&a), Some(&b)) => edges.push((a, b)),
            _ if was_first => {}
            _ => {
                let missing = if a.is_none() { tokens[0] } else { tokens[1] };
                return Err(Error::parse(label, k + 1, format!("unknown unit id `{missing}`")));
            }
        }
    }
    Ok(edges)
}

pub fn read_edges(paths: &[PathBuf], ids: &[String]) -> Result<Vec<(usize, usize)>> {
    let index: HashMap<String, usize> = ids.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
    let mut all = Vec::new();
    for p in paths {
        all.extend(parse_edges(&read_text(p)?, &p.display().to_string(), &index)?);
    }
    Ok(all)
}

/// Canonical edge list: header, then pairs sorted by unit order.
pub fn write_edges(net: &SocialNetwork, w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "src,dst")?;
    for (a, b) in net.edges() {
        writeln!(w, "{},{}", net.id(a), net.id(b))?;
    }
    Ok(())
}

/// Loads a network from edge files, a covariate file and optional schema.
pub fn load_network(edges: &[PathBuf], covariates: &Path, schema: Option<&Path>) -> Result<SocialNetwork> {
    let (ids, table) = read_covariates(covariates, schema)?;
    let pairs = read_edges(edges, &ids)?;
    SocialNetwork::from_edges(ids.len(), pairs, table)?.with_ids(ids)
}

pub fn read_dag(path: &Path) -> Result<DagBuilder> {
    DagBuilder::parse(&read_text(path)?, &path.display().to_string())
}

// Hypotheses.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplicitPattern {
    pub nodes: usize,
    pub edges: Vec<(usize, usize)>,
    #[serde(default)]
    pub distinguished: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub constraints: Vec<NodeConstraint>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub induced: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PatternEntry {
    Builtin { builtin: String },
    Explicit(ExplicitPattern),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct HypothesisEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit_covariate: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neighbor_summary: Option<SummarySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<PatternEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dag_var: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct HypothesisFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i0: Option<f64>,
    #[serde(default)]
    pub hypotheses: Vec<HypothesisEntry>,
}

fn pattern_from_entry(entry: &PatternEntry) -> Result<(NetworkPattern, String)> {
    match entry {
        PatternEntry::Builtin { builtin } => {
            let b = BuiltinPattern::parse(builtin)?;
            Ok((b.build()?, b.to_string()))
        }
        PatternEntry::Explicit(e) => {
            let mut p = NetworkPattern::new(e.nodes, &e.edges, e.distinguished)?.induced(e.induced);
            for c in &e.constraints {
                p = p.with_constraint(c.node, &c.covariate, &c.value)?;
            }
            Ok((p, format!("pattern({} nodes)", e.nodes)))
        }
    }
}

fn pattern_to_entry(p: &NetworkPattern) -> PatternEntry {
    let k = p.n_nodes();
    for b in [BuiltinPattern::Clique(k), BuiltinPattern::Star(k)] {
        if b.build().is_ok_and(|q| &q == p) {
            return PatternEntry::Builtin { builtin: b.to_string() };
        }
    }
    PatternEntry::Explicit(ExplicitPattern {
        nodes: k,
        edges: p.edges().to_vec(),
        distinguished: p.distinguished(),
        constraints: p.constraints().to_vec(),
        induced: p.is_induced(),
    })
}

impl HypothesisEntry {
    pub fn to_hypothesis(&self) -> Result<Hypothesis> {
        let given = [
            self.unit_covariate.is_some(),
            self.neighbor_summary.is_some(),
            self.pattern.is_some(),
        ];
        if given.iter().filter(|&&g| g).count() != 1 {
            return Err(Error::invalid(
                "each hypothesis needs exactly one of unit_covariate, neighbor_summary, pattern",
            ));
        }
        let (kind, default_label) = if let Some(c) = &self.unit_covariate {
            (HypothesisKind::UnitCovariate(c.clone()), c.clone())
        } else if let Some(s) = &self.neighbor_summary {
            (HypothesisKind::NeighborSummary(s.clone()), s.describe())
        } else {
            let (p, name) = pattern_from_entry(self.pattern.as_ref().unwrap())?;
            (HypothesisKind::Pattern(p), name)
        };
        Ok(Hypothesis {
            label: self.label.clone().unwrap_or(default_label),
            kind,
            dag_var: self.dag_var.clone(),
        })
    }

    pub fn from_hypothesis(h: &Hypothesis) -> Self {
        let mut e = HypothesisEntry {
            label: Some(h.label.clone()),
            dag_var: h.dag_var.clone(),
            ..Default::default()
        };
        match &h.kind {
            HypothesisKind::UnitCovariate(c) => e.unit_covariate = Some(c.clone()),
            HypothesisKind::NeighborSummary(s) => e.neighbor_summary = Some(s.clone()),
            HypothesisKind::Pattern(p) => e.pattern = Some(pattern_to_entry(p)),
        }
        e
    }
}

/// Parses a hypothesis file into its threshold (if set) and hypotheses.
pub fn parse_hypotheses(text: &str, label: &str) -> Result<(Option<f64>, Vec<Hypothesis>)> {
    let file: HypothesisFile =
        serde_json::from_str(text).map_err(|e| Error::parse(label, e.line(), e.to_string()))?;
    let hyps = file
        .hypotheses
        .iter()
        .enumerate()
        .map(|(k, e)| {
            e.to_hypothesis()
                .map_err(|err| Error::invalid(format!("{label}: hypothesis {}: {err}", k + 1)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((file.i0, hyps))
}

pub fn read_hypotheses(path: &Path) -> Result<(Option<f64>, Vec<Hypothesis>)> {
    parse_hypotheses(&read_text(path)?, &path.display().to_string())
}

pub fn hypotheses_to_json(i0: Option<f64>, hyps: &[Hypothesis]) -> String {
    let file = HypothesisFile {
        i0,
        hypotheses: hyps.iter().map(HypothesisEntry::from_hypothesis).collect(),
    };
    serde_json::to_string_pretty(&file).expect("hypotheses serialize") + "\n"
}

// Simulation output.

pub fn write_ground_truth(net: &SocialNetwork, data: &SimDataset, w: impl Write) -> Result<()> {
    let Some(truth) = &data.truth else {
        return Err(Error::invalid("dataset was generated without ground truth"));
    };
    let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    out.write_record(["id", "p", "triangle", "avg_nbr_income", "tau"])
        .map_err(|e| csv_error("ground truth", e))?;
    for i in 0..net.n() {
        out.write_record([
            net.ids()[i].clone(),
            truth.p[i].to_string(),
            truth.triangle[i].to_string(),
            truth.avg_nbr_income[i].to_string(),
            truth.tau[i].to_string(),
        ])
        .map_err(|e| csv_error("ground truth", e))?;
    }
    out.flush().map_err(io_error("ground truth"))
}

/// Files written by [`write_simulation`].
pub const SIM_FILES: [&str; 5] = ["edges.csv", "covariates.csv", "schema.txt", "dag.txt", "hypotheses.json"];

/// Writes a simulated dataset in the formats the test command reads.
pub fn write_simulation(dir: &Path, data: &SimDataset, hyps: &[Hypothesis]) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_error(&dir.display().to_string()))?;
    let net = &data.network;
    let create = |name: &str| {
        let path = dir.join(name);
        fs::File::create(&path).map(std::io::BufWriter::new).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    };
    let mut edges = create(SIM_FILES[0])?;
    write_edges(net, &mut edges).and_then(|_| edges.flush()).map_err(io_error(SIM_FILES[0]))?;
    write_covariates(net, create(SIM_FILES[1])?)?;
    let mut schema = create(SIM_FILES[2])?;
    write_schema(net.covariates(), &mut schema)
        .and_then(|_| schema.flush())
        .map_err(io_error(SIM_FILES[2]))?;
    fs::write(dir.join(SIM_FILES[3]), TRIAL_DAG).map_err(io_error(SIM_FILES[3]))?;
    fs::write(dir.join(SIM_FILES[4]), hypotheses_to_json(Some(0.0), hyps)).map_err(io_error(SIM_FILES[4]))?;
    if data.truth.is_some() {
        write_ground_truth(net, data, create("ground_truth.csv")?)?;
    }
    Ok(())
}

// Sweeps.

/// Long-format sweep writer that flushes after every batch, so an
/// interrupted sweep leaves a valid file.
pub struct SweepWriter<W: Write> {
    out: csv::Writer<W>,
}

impl<W: Write> SweepWriter<W> {
    pub fn new(w: W) -> Result<Self> {
        let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        out.write_record(["n_or_variance", "rep", "hypothesis", "delta_sq", "iota_sq", "seed"])
            .map_err(|e| csv_error("sweep", e))?;
        out.flush().map_err(io_error("sweep"))?;
        Ok(SweepWriter { out })
    }

    pub fn write(&mut self, rows: &[SweepRow]) -> Result<()> {
        for r in rows {
            self.out
                .write_record([
                    r.n_or_variance.to_string(),
                    r.rep.to_string(),
                    r.hypothesis.clone(),
                    r.delta_sq.to_string(),
                    r.iota_sq.to_string(),
                    r.seed.to_string(),
                ])
                .map_err(|e| csv_error("sweep", e))?;
        }
        self.out.flush().map_err(io_error("sweep"))
    }
}
