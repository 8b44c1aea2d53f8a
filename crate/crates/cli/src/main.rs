use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use popmaj::clock::{phase_clock_params, ClockConfig, GraphScale};
use popmaj::dynamics::{majority_count, place_inputs, Placement};
use popmaj::engine::TraceMode;
use popmaj::experiment::{
    run_experiment, state_count_audit, trace_trial, write_records_jsonl, ExperimentConfig, GraphSpec, OutputPaths,
    ProtocolName, SeedSpec,
};
use popmaj::graph::{graph_stats, Graph, GraphFamily, EXPANSION_MAX_NODES};
use popmaj::majority::{run_until_sync, MajorityProtocol, Variant};
use popmaj::rng::trial_rng;
use popmaj::spectral::{population_walk_matrix, relaxation_time, spectral_sandwich_check, tau_rel};
use popmaj::{build_graph, Error};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_CENSORED: u8 = 3;

#[derive(Parser)]
#[command(name = "popmaj", version, about = "Exact-majority population protocol simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a graph and write it as JSON (or an edge list).
    GenGraph {
        #[command(flatten)]
        graph: GraphArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        edge_list: bool,
    },
    /// Relaxation time and structural statistics of a graph.
    Spectral {
        #[command(flatten)]
        graph: GraphArgs,
        /// Also compute the exact edge expansion and the sandwich check.
        #[arg(long)]
        expansion: bool,
    },
    /// One seeded trial; prints its record as JSON.
    Simulate {
        #[command(flatten)]
        graph: GraphArgs,
        #[arg(long)]
        protocol: ProtocolName,
        #[arg(long, default_value_t = 0.25)]
        gamma: f64,
        #[arg(long, default_value = "random")]
        placement: Placement,
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
        #[arg(long, default_value_t = 0)]
        trial_seed: u64,
        #[arg(long)]
        horizon: Option<u64>,
        /// Write a JSONL trace of the run here.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        snapshot_every: u64,
    },
    /// Run a study from a JSON config; flags override the file.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seeds: Option<u64>,
        #[arg(long)]
        base_seed: Option<u64>,
        #[arg(long)]
        horizon: Option<u64>,
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Phase-clock validation over seeded Algorithm-1 runs.
    ValidateClock {
        #[command(flatten)]
        graph: GraphArgs,
        #[arg(long, default_value_t = 10)]
        runs: u64,
        /// Number of phases to validate.
        #[arg(long, default_value_t = 20)]
        phases: usize,
        #[arg(long, default_value_t = 0.25)]
        gamma: f64,
        #[arg(long, default_value_t = 1)]
        base_seed: u64,
    },
    /// Exact state counts of a protocol.
    AuditStates {
        #[command(flatten)]
        graph: GraphArgs,
        #[arg(long)]
        protocol: ProtocolName,
    },
}

#[derive(Args, Clone)]
struct GraphArgs {
    /// Read the graph from a JSON file instead of generating it.
    #[arg(long, conflicts_with = "family")]
    graph_file: Option<PathBuf>,
    #[arg(long, default_value = "complete")]
    family: GraphFamily,
    #[arg(long, default_value_t = 16)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    graph_seed: u64,
    #[command(flatten)]
    clock: ClockArgs,
}

#[derive(Args, Clone)]
struct ClockArgs {
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    c_br: Option<f64>,
}

impl ClockArgs {
    fn apply(&self, mut cfg: ClockConfig) -> ClockConfig {
        if let Some(k) = self.kappa {
            cfg.kappa = k;
        }
        if let Some(l) = self.lambda {
            cfg.lambda = l;
        }
        if let Some(c) = self.c_br {
            cfg.c_br = c;
        }
        cfg
    }
}

impl GraphArgs {
    fn build(&self) -> popmaj::Result<Graph> {
        match &self.graph_file {
            Some(p) => Graph::from_json(&std::fs::read_to_string(p)?),
            None => build_graph(self.family, self.n, self.graph_seed),
        }
    }

    fn spec(&self) -> popmaj::Result<GraphSpec> {
        if self.graph_file.is_some() {
            return Err(Error::Config(
                "this command needs a generated graph, not --graph-file".into(),
            ));
        }
        Ok(GraphSpec::new(self.family, self.n, self.graph_seed))
    }
}

fn print_json<T: serde::Serialize>(v: &T) -> popmaj::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> popmaj::Result<u8> {
    match cli.command {
        Command::GenGraph { graph, out, edge_list } => {
            let g = graph.build()?;
            let text = if edge_list { g.to_edge_list() } else { g.to_json()? };
            match out {
                Some(p) => std::fs::write(p, text)?,
                None => println!("{text}"),
            }
        }
        Command::Spectral { graph, expansion } => {
            let g = graph.build()?;
            let summary = relaxation_time(&population_walk_matrix(&g))?;
            let stats = graph_stats(&g, expansion && g.n() <= EXPANSION_MAX_NODES)?;
            let sandwich = if expansion && g.n() <= EXPANSION_MAX_NODES {
                Some(spectral_sandwich_check(&g)?)
            } else {
                None
            };
            print_json(&serde_json::json!({
                "family": g.family(),
                "n": g.n(),
                "m": g.m(),
                "spectral": summary,
                "stats": stats,
                "sandwich": sandwich,
            }))?;
        }
        Command::Simulate {
            graph,
            protocol,
            gamma,
            placement,
            epsilon,
            trial_seed,
            horizon,
            trace,
            snapshot_every,
        } => {
            let cfg = ExperimentConfig {
                graphs: vec![graph.spec()?],
                protocol,
                gamma: Some(gamma),
                placement,
                epsilon: Some(epsilon),
                seeds: SeedSpec {
                    count: 1,
                    base: trial_seed,
                },
                horizon,
                time_mode: popmaj::engine::TimeMode::Discrete,
                clock: graph.clock.apply(ClockConfig::default()),
                output: OutputPaths::default(),
            };
            let (records, _) = run_experiment(&cfg)?;
            print_json(&records[0])?;
            if let Some(path) = trace {
                let mode = TraceMode {
                    snapshot_every,
                    capture_events: true,
                };
                trace_trial(&cfg, 0, 0, mode)?.write_jsonl(std::fs::File::create(path)?)?;
            }
            if records[0].censored {
                return Ok(EXIT_CENSORED);
            }
        }
        Command::Experiment {
            config,
            seeds,
            base_seed,
            horizon,
            records,
            summary,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(c) = seeds {
                cfg.seeds.count = c;
            }
            if let Some(b) = base_seed {
                cfg.seeds.base = b;
            }
            if horizon.is_some() {
                cfg.horizon = horizon;
            }
            if records.is_some() {
                cfg.output.records = records;
            }
            if summary.is_some() {
                cfg.output.summary = summary;
            }
            let (recs, stats) = run_experiment(&cfg)?;
            if cfg.output.records.is_none() {
                write_records_jsonl(&recs, std::io::stdout().lock())?;
            }
            eprintln!("{}", serde_json::to_string_pretty(&stats)?);
            if stats.any_inconclusive() {
                eprintln!("more than half of the trials were censored");
                return Ok(EXIT_CENSORED);
            }
        }
        Command::ValidateClock {
            graph,
            runs,
            phases,
            gamma,
            base_seed,
        } => {
            let g = graph.build()?;
            let scale = GraphScale::with_tau_rel(&g, tau_rel(&g)?);
            let params = phase_clock_params(&scale, &graph.clock.apply(ClockConfig::default()))?;
            let proto = MajorityProtocol::new(Variant::Alg1, &params)?;
            let horizon = (phases as f64 + 2.0) * params.eta_effective * params.r as f64;
            let mut passed = 0;
            for i in 0..runs {
                let mut rng = trial_rng(base_seed, i);
                let inputs = place_inputs(&g, majority_count(g.n(), gamma)?, Placement::Random, &mut rng)?;
                let monitor = run_until_sync(&proto, &g, &inputs, phases, &mut rng, horizon.ceil() as u64)?;
                let report = monitor.clock_report(&params, Some(phases))?;
                passed += report.passed() as u64;
                println!(
                    "{}",
                    serde_json::to_string(&serde_json::json!({ "run": i, "report": report }))?
                );
            }
            eprintln!("{passed}/{runs} runs passed");
        }
        Command::AuditStates { graph, protocol } => {
            let params = match protocol {
                ProtocolName::Alg1 | ProtocolName::Alg2 => {
                    let g = graph.build()?;
                    let scale = GraphScale::with_tau_rel(&g, tau_rel(&g)?);
                    Some(phase_clock_params(&scale, &graph.clock.apply(ClockConfig::default()))?)
                }
                _ => None,
            };
            let n = params.map_or(graph.n, |p| p.n);
            print_json(&state_count_audit(protocol, n, params.as_ref())?)?;
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Config(_) | Error::Parse(_) | Error::Parameter(_) | Error::Json(_) => EXIT_CONFIG,
                _ => EXIT_FAILURE,
            };
            ExitCode::from(code)
        }
    }
}
