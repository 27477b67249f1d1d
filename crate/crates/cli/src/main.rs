use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use teem::hetero::{run_test, run_test_with_effects, TestConfig};
use teem::io::{load_network, read_dag, read_hypotheses, write_simulation, SweepWriter};
use teem::sim::{estimation_seed, simulate_trial, sweep_noise, sweep_units, trial_hypotheses, SimConfig};

#[derive(Parser)]
#[command(name = "teem", version, about = "Test hypothesized treatment effect modifiers on a social network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the effect-modifier test on a network dataset.
    Test(TestArgs),
    /// Generate a synthetic vaccine trial on a preferential-attachment graph.
    Simulate(SimulateArgs),
    /// Repeat simulate-and-test over a grid of unit counts or noise levels.
    #[command(subcommand)]
    Sweep(SweepCommand),
}

#[derive(Args)]
struct TestArgs {
    /// Edge list file; repeat to merge several.
    #[arg(long, required = true, num_args = 1..)]
    edges: Vec<PathBuf>,
    #[arg(long)]
    covariates: PathBuf,
    /// `name: kind` lines fixing covariate kinds.
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    dag: PathBuf,
    #[arg(long)]
    hypotheses: PathBuf,
    /// Treatment column, if the DAG does not declare one.
    #[arg(long)]
    treatment: Option<String>,
    #[arg(long)]
    outcome: Option<String>,
    /// Rejection threshold on iota^2, in percent.
    #[arg(long)]
    i0: Option<f64>,
    /// Root seed; the estimator seed is derived from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Covariate column holding per-unit effect estimates; skips the
    /// outcome model.
    #[arg(long)]
    effects: Option<String>,
    /// TOML file with `[test]`, `[test.estimator]` and `[test.projection]` tables.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for report.txt and report.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 4096)]
    n: usize,
    /// Edges added per new node.
    #[arg(long, default_value_t = 2)]
    m: usize,
    /// Noise standard deviation.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write ground_truth.csv.
    #[arg(long)]
    ground_truth: bool,
    /// Use the alternative grouping of the infection index.
    #[arg(long)]
    literal: bool,
    /// Count each unit in its own neighbor income average.
    #[arg(long)]
    include_self: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum SweepCommand {
    /// Vary the number of units.
    Units {
        #[arg(long, value_delimiter = ',', default_value = "8,16,32,64,128,256,512,1024,2048,4096")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[command(flatten)]
        common: SweepArgs,
    },
    /// Vary the noise variance at a fixed unit count.
    Noise {
        #[arg(long, value_delimiter = ',', default_value = "0,1,4,16,64,256,1024,4096")]
        variances: Vec<f64>,
        #[arg(long, default_value_t = 4000)]
        n: usize,
        #[command(flatten)]
        common: SweepArgs,
    },
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, default_value_t = 25)]
    reps: usize,
    #[arg(long, default_value_t = 2)]
    m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    literal: bool,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV, written incrementally.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    test: TestConfig,
}

fn read_config(path: Option<&Path>) -> Result<TestConfig> {
    let Some(path) = path else {
        return Ok(TestConfig::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(cfg.test)
}

fn cmd_test(args: TestArgs) -> Result<()> {
    let mut config = read_config(args.config.as_deref())?;
    let mut builder = read_dag(&args.dag)?;
    for (flag, value, declared) in [
        ("treatment", &args.treatment, builder.has_treatment()),
        ("outcome", &args.outcome, builder.has_outcome()),
    ] {
        if value.is_none() && !declared {
            bail!("{} declares no {flag}; pass --{flag}", args.dag.display());
        }
    }
    if let Some(t) = &args.treatment {
        builder.treatment(t).with_context(|| format!("--treatment {t} conflicts with {}", args.dag.display()))?;
    }
    if let Some(y) = &args.outcome {
        builder.outcome(y).with_context(|| format!("--outcome {y} conflicts with {}", args.dag.display()))?;
    }
    let dag = builder.build().with_context(|| format!("building DAG from {}", args.dag.display()))?;

    let mut net = load_network(&args.edges, &args.covariates, args.schema.as_deref())?;
    net.covariates_mut()
        .designate(dag.treatment_name(), dag.outcome_name())
        .with_context(|| format!("columns of {}", args.covariates.display()))?;
    let violations = net.validate();
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(|v| format!("  {v}")).collect();
        bail!("invalid network:\n{}", list.join("\n"));
    }

    let (file_i0, hyps) = read_hypotheses(&args.hypotheses)?;
    for h in &hyps {
        h.check_references(net.covariates())
            .with_context(|| format!("hypothesis `{}`", h.label))?;
    }
    if let Some(i0) = args.i0.or(file_i0) {
        config.i0 = i0;
    }
    if let Some(seed) = args.seed {
        config.estimator.seed = estimation_seed(seed);
    }

    let report = match &args.effects {
        Some(column) => {
            let effects = net.covariates().column(column)?.values().to_vec();
            run_test_with_effects(&net, &dag, &hyps, &effects, &config)?
        }
        None => run_test(&net, &dag, &hyps, &config)?,
    };
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let table = report.to_table();
    fs::write(args.out.join("report.txt"), &table)?;
    fs::write(args.out.join("report.json"), report.to_json())?;
    print!("{table}");
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let cfg = SimConfig {
        n: args.n,
        m: args.m,
        sigma: args.sigma,
        seed: args.seed,
        store_ground_truth: args.ground_truth,
        literal: args.literal,
        include_self: args.include_self,
    };
    let data = simulate_trial(&cfg)?;
    write_simulation(&args.out, &data, &trial_hypotheses())?;
    eprintln!(
        "wrote {} units and {} edges to {}",
        data.network.n(),
        data.network.edge_count(),
        args.out.display()
    );
    Ok(())
}

fn cmd_sweep(cmd: SweepCommand) -> Result<()> {
    let common = match &cmd {
        SweepCommand::Units { common, .. } | SweepCommand::Noise { common, .. } => common,
    };
    let test = read_config(common.config.as_deref())?;
    let file = fs::File::create(&common.out).with_context(|| format!("creating {}", common.out.display()))?;
    let mut writer = SweepWriter::new(file)?;
    let mut sink = |rows: &[teem::sim::SweepRow]| writer.write(rows);
    let base = SimConfig {
        m: common.m,
        seed: common.seed,
        literal: common.literal,
        ..Default::default()
    };
    let failures = match &cmd {
        SweepCommand::Units { sizes, sigma, .. } => {
            let base = SimConfig { sigma: *sigma, ..base };
            sweep_units(&base, sizes, common.reps, &test, &mut sink)?
        }
        SweepCommand::Noise { variances, n, .. } => {
            let base = SimConfig { n: *n, ..base };
            sweep_noise(&base, variances, common.reps, &test, &mut sink)?
        }
    };
    if !failures.is_empty() {
        let mut err = std::io::stderr().lock();
        writeln!(err, "{} replicates failed:", failures.len())?;
        for f in &failures {
            writeln!(err, "  point {} rep {} seed {}: {}", f.n_or_variance, f.rep, f.seed, f.error)?;
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Test(args) => cmd_test(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Sweep(cmd) => cmd_sweep(cmd),
    }
}
