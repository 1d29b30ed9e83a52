use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use roomrec_cli::runner::{load_corpus, run_experiment, RunOptions, EXPERIMENTS};
use roomrec_cli::{CliError, Result};
use roomrec_core::dataset::{DatasetStore, SplitPolicy};
use roomrec_core::sim::{synth_corpus, Interferer, SimSpec};

#[derive(Parser)]
#[command(name = "experiments", version, about = "Run the study designs on a corpus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write <name>.csv and <name>.json into --out.
    Run {
        /// design-matrix, arch-sweep, filters, filter-size, dense-layers, volume or robustness.
        name: String,
        /// Dataset store directory with splits, or a simulator spec JSON file.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Cap on SGD steps per trained network.
        #[arg(long)]
        max_steps: Option<usize>,
        /// Per-room training volumes for `volume`, comma separated.
        #[arg(long, value_delimiter = ',')]
        volumes: Option<Vec<usize>>,
        /// Architectures for `arch-sweep`, comma separated.
        #[arg(long, value_delimiter = ',')]
        archs: Option<Vec<String>>,
        /// Interferer JSON for `robustness`.
        #[arg(long)]
        interferer: Option<PathBuf>,
    },
    /// Generate a simulated corpus into a dataset store and assign splits.
    Corpus {
        /// Simulator spec JSON; defaults to 10 rooms x 1000 records.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        split_seed: u64,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            name,
            corpus,
            seed,
            out,
            max_steps,
            volumes,
            archs,
            interferer,
        } => {
            if !EXPERIMENTS.contains(&name.as_str()) {
                return Err(CliError::Usage(format!(
                    "unknown experiment `{name}`; one of {}",
                    EXPERIMENTS.join(", ")
                )));
            }
            let interferer = match interferer {
                Some(p) => Some(
                    serde_json::from_str::<Interferer>(&std::fs::read_to_string(&p)?)
                        .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?,
                ),
                None => None,
            };
            let corpus = load_corpus(&corpus)?;
            let opts = RunOptions {
                seed,
                max_steps,
                volumes,
                archs,
                interferer,
            };
            let (csv, json) = run_experiment(&name, &corpus, &opts, &out)?;
            println!("{}\n{}", csv.display(), json.display());
        }
        Command::Corpus { spec, out, split_seed } => {
            let spec = match spec {
                Some(p) => SimSpec::from_json(&std::fs::read_to_string(p)?)?,
                None => SimSpec::default(),
            };
            let records = synth_corpus::<f32>(&spec.profiles(), spec.per_room, &spec.context, spec.seed)?;
            let store = DatasetStore::open(&out)?;
            store.ingest(&records)?;
            let manifest = store.apply_split_with(
                |n| {
                    if n >= SplitPolicy::default().total() {
                        SplitPolicy::default()
                    } else {
                        SplitPolicy::proportional(n)
                    }
                },
                split_seed,
            )?;
            println!("{} rooms, {} records in {}", manifest.classes(), manifest.sample_count(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
