use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ptsim::cli::{self, ExperimentSpec};
use ptsim::NetworkTopology;

const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

/// Packet transport simulator for local-information routing on complex
/// networks.
#[derive(Parser, Debug)]
#[command(name = "ptsim", version, args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Subcommand, Debug)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Run experiments (the default when no subcommand is given).
    Run(RunArgs),
    /// Compare run directories (or summary files) side by side.
    Compare {
        #[arg(required = true, num_args = 2..)]
        dirs: Vec<PathBuf>,
    },
    /// Write a Barabási–Albert topology to stdout.
    Topology {
        #[arg(long, default_value_t = 1000)]
        nodes: usize,
        #[arg(long, default_value_t = 2)]
        m: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Emit `i j` edge pairs instead of the adjacency matrix.
        #[arg(long)]
        edge_list: bool,
    },
}

#[derive(Args, Debug, Default)]
struct RunArgs {
    /// Flat key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    /// Adjacency matrix file to use instead of a generated network.
    #[arg(long)]
    topology_file: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    rate: Option<f64>,
    #[arg(long)]
    steps: Option<u64>,
    /// rw, st, std, cd or cdt; repeat for several.
    #[arg(long = "algorithm", value_delimiter = ',')]
    algorithms: Vec<String>,
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Comma-separated seed list; each seed gets its own subdirectory.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    queue_cap: Option<usize>,
    /// total or remaining.
    #[arg(long)]
    delivery_mode: Option<String>,
    /// Disable the random-walk start of ST/STD.
    #[arg(long)]
    no_bootstrap: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit with status 2 if any run jams.
    #[arg(long)]
    fail_on_jam: bool,
}

impl RunArgs {
    fn overrides(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut push = |k: &str, v: String| out.push((k.to_string(), v));
        if let Some(v) = self.nodes {
            push("nodes", v.to_string());
        }
        if let Some(v) = self.m {
            push("m", v.to_string());
        }
        if let Some(v) = &self.topology_file {
            push("topology_file", v.display().to_string());
        }
        if let Some(v) = self.rate {
            push("rate", v.to_string());
        }
        if let Some(v) = self.steps {
            push("steps", v.to_string());
        }
        if !self.algorithms.is_empty() {
            push("algorithms", self.algorithms.join(","));
        }
        if let Some(v) = self.seed {
            push("seed", v.to_string());
        }
        if let Some(v) = &self.seeds {
            push("seeds", v.clone());
        }
        if let Some(v) = self.queue_cap {
            push("queue_cap", v.to_string());
        }
        if let Some(v) = &self.delivery_mode {
            push("delivery_mode", v.clone());
        }
        if self.no_bootstrap {
            push("bootstrap", "false".into());
        }
        if let Some(v) = &self.out {
            push("out", v.display().to_string());
        }
        if self.fail_on_jam {
            push("fail_on_jam", "true".into());
        }
        out
    }

    fn spec(&self) -> Result<ExperimentSpec, String> {
        let text = match &self.config {
            Some(path) => std::fs::read_to_string(path)
                .map_err(|e| format!("reading {}: {e}", path.display()))?,
            None => String::new(),
        };
        cli::parse_config_with(&text, &self.overrides()).map_err(|e| e.to_string())
    }
}

fn run(args: &RunArgs) -> ExitCode {
    let spec = match args.spec() {
        Ok(spec) => spec,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match cli::run_experiment(&spec) {
        Ok(outcome) => {
            for (dir, s) in &outcome.runs {
                println!(
                    "{:<4} seed {:<6} steady load {:>10.2}  delivered {:>8}  jam {:<5} -> {}",
                    s.algorithm.name(),
                    s.seed,
                    s.steady_mean_load,
                    s.delivered,
                    s.jam.jammed,
                    dir.display()
                );
            }
            if spec.fail_on_jam && outcome.any_jam() {
                eprintln!("error: at least one run jammed");
                return ExitCode::from(EXIT_RUNTIME);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match cli.command {
        None => run(&cli.run),
        Some(Command::Run(args)) => run(&args),
        Some(Command::Compare { dirs }) => match cli::compare(&dirs) {
            Ok(table) => {
                print!("{table}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_RUNTIME)
            }
        },
        Some(Command::Topology {
            nodes,
            m,
            seed,
            edge_list,
        }) => match NetworkTopology::generate_ba(nodes, m, seed) {
            Ok(g) => {
                print!("{}", cli::export_topology(&g, edge_list));
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_USAGE)
            }
        },
    }
}
