use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use entangle_core::exec::Execution;
use entangle_core::experiments::{run_scenario_with, run_small_example, Estimator, ExperimentConfig, Scenario, SmallExampleReport};
use entangle_core::kv::{parse_list, KeyValues};
use entangle_core::netmodel::NetworkModel;
use entangle_core::propensity::{brute_force_propensity, estimate_entangled, exact_degree_propensity, PropensityTable};
use entangle_core::rng::Streams;
use entangle_core::similarity::{run_similarity, SimilarityConfig};
use entangle_core::treatment::TreatmentDef;
use entangle_core::Graph;

#[derive(Parser)]
#[command(name = "entangle", version, about = "Propensity scores for treatments entangled through network evolution")]
struct Cli {
    /// Worker threads (default: all cores). Output does not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run every loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Five-unit worked example: propensity tables, similarity sets, contrasts.
    ExampleSmall {
        /// Monte-Carlo draws for the entangled propensity table.
        #[arg(long, default_value_t = 200_000)]
        b: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the report as JSON to this path.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Replicated RMSE study; writes `scenario,sigma,estimator,rmse,excluded`.
    Simulate {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        sims: usize,
        #[arg(long)]
        n: usize,
        /// Comma-separated list of SD(a_i) values.
        #[arg(long)]
        sigma: String,
        /// Monte-Carlo draws for the random-effect propensities.
        #[arg(long, default_value_t = 200)]
        b: usize,
        /// Number of propensity classes.
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        seed: u64,
        /// Comma-separated estimators (true, misspecified, random_effect).
        #[arg(long)]
        estimators: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Similarity report for a key-value study config.
    Similarity {
        #[arg(long)]
        config: PathBuf,
    },
    /// Propensity table for a model spec and a pre-treatment graph.
    Propensity {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        /// Treatment tag, e.g. `new_degree` or `more_than:10`.
        #[arg(long)]
        treatment: String,
        #[arg(long, default_value_t = 10_000)]
        b: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Method::MonteCarlo)]
        method: Method,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    MonteCarlo,
    Exact,
    BruteForce,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().context("configuring thread pool")?;
    }
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    match cli.command {
        Command::ExampleSmall { b, seed, json } => {
            let report = run_small_example(b, seed, exec)?;
            print!("{}", render_small_example(&report));
            if let Some(path) = json {
                fs::write(&path, serde_json::to_string_pretty(&report)?)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Command::Simulate { scenario, sims, n, sigma, b, k, seed, estimators, out } => {
            let scenario: Scenario = scenario.parse()?;
            let mut config = ExperimentConfig::new(scenario, seed);
            config.sims = sims;
            config.units = n;
            config.sigmas = parse_list(&sigma).map_err(anyhow::Error::msg).context("parsing --sigma")?;
            config.draws = b;
            config.classes = k;
            if let Some(list) = estimators {
                config.estimators = list.split(',').map(|s| s.trim().parse::<Estimator>()).collect::<Result<_, _>>()?;
            }
            let result = run_scenario_with(&config, exec)?;
            fs::write(&out, result.to_csv()).with_context(|| format!("writing {}", out.display()))?;
        }
        Command::Similarity { config } => {
            let kv = KeyValues::read(&config).with_context(|| format!("reading {}", config.display()))?;
            let report = run_similarity(&SimilarityConfig::from_key_values(&kv)?, exec)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Propensity { model, graph, treatment, b, seed, method } => {
            let table = propensity(&model, &graph, &treatment, b, seed, method, exec)?;
            print!("{}", table.to_csv());
        }
    }
    Ok(())
}

fn propensity(
    model: &Path,
    graph: &Path,
    treatment: &str,
    draws: usize,
    seed: u64,
    method: Method,
    exec: Execution,
) -> Result<PropensityTable> {
    let model = NetworkModel::read(model).with_context(|| format!("reading {}", model.display()))?;
    let g_minus = Graph::read_edge_list(graph).with_context(|| format!("reading {}", graph.display()))?;
    let def: TreatmentDef = treatment.parse()?;
    if draws == 0 {
        bail!("--b must be positive");
    }
    Ok(match method {
        Method::MonteCarlo => estimate_entangled(&model, &g_minus, def, draws, &Streams::new(seed), exec)?,
        Method::Exact => exact_degree_propensity(&model, &g_minus, def, exec)?,
        Method::BruteForce => brute_force_propensity(&model, &g_minus, def)?,
    })
}

fn render_table(out: &mut String, title: &str, table: &PropensityTable) {
    writeln!(out, "{title}").unwrap();
    write!(out, "{:>6}", "unit").unwrap();
    for l in 0..=table.l_max() {
        write!(out, "{:>8}", format!("l={l}")).unwrap();
    }
    writeln!(out).unwrap();
    for i in 0..table.n() {
        write!(out, "{:>6}", i + 1).unwrap();
        for v in table.row(i) {
            write!(out, "{v:>8.2}").unwrap();
        }
        writeln!(out).unwrap();
    }
    writeln!(out).unwrap();
}

fn render_small_example(report: &SmallExampleReport) -> String {
    let mut out = String::new();
    render_table(&mut out, "True model, exact enumeration", &report.exact);
    render_table(&mut out, &format!("True model, Monte Carlo (B = {})", report.draws), &report.monte_carlo);
    let c = &report.poisson_coefficients;
    render_table(&mut out, &format!("Poisson model, coefficients ({:.5}, {:.5})", c[0], c[1]), &report.poisson);
    writeln!(out, "similarity sets, true model:         {:?}", report.true_sets).unwrap();
    writeln!(out, "similarity sets, misspecified model: {:?}", report.misspecified_sets).unwrap();
    writeln!(out, "tau_2, true model:         {}", report.tau_true).unwrap();
    writeln!(out, "tau_2, misspecified model: {}", report.tau_misspecified).unwrap();
    writeln!(out, "E(Z_3) under the true model: {:.3}", report.expected_z3).unwrap();
    out
}
