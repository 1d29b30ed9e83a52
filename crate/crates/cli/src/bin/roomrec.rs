use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use roomrec_cli::{emit_record, CaptureSource, CliError, Client, Mode, Result, SimOptions, DEFAULT_SERVER};
use roomrec_core::audio::wav;
use roomrec_core::sim::CaptureContext;
use roomrec_service::api::TaskState;

#[derive(Parser)]
#[command(name = "roomrec", version, about = "Capture echo records, upload them and label rooms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CaptureArgs {
    /// device, file:PATH or sim:PROFILE (PROFILE is room-NN or a profile JSON file).
    #[arg(long)]
    source: String,
    /// Master seed of simulated records.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seed of the default simulated room set.
    #[arg(long, default_value_t = 1)]
    profile_seed: u64,
    /// Index of the first simulated record.
    #[arg(long, default_value_t = 0)]
    start: usize,
    /// Capture context JSON for simulated records.
    #[arg(long)]
    context: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Capture records and write them to a WAV file.
    EmitRecord {
        #[arg(long, value_enum)]
        mode: Mode,
        #[command(flatten)]
        capture: CaptureArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Send records for recognition or as a labelling session; prints the JSON response.
    Upload {
        #[arg(long, value_enum)]
        mode: Mode,
        /// WAV file of records; `--source` captures instead.
        #[arg(long, conflicts_with = "source")]
        input: Option<PathBuf>,
        #[arg(long)]
        source: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        profile_seed: u64,
        #[arg(long, default_value_t = 0)]
        start: usize,
        #[arg(long, env = "ROOMREC_SERVER", default_value = DEFAULT_SERVER)]
        server: String,
    },
    /// Label an uploaded session, which queues a retrain.
    Label {
        #[arg(long)]
        session: String,
        #[arg(long)]
        label: String,
        /// Poll the retrain task until it finishes; exits nonzero if it fails.
        #[arg(long)]
        watch: bool,
        #[arg(long, default_value_t = 1800)]
        watch_timeout_secs: u64,
        #[arg(long, env = "ROOMREC_SERVER", default_value = DEFAULT_SERVER)]
        server: String,
    },
}

fn sim_options(seed: u64, profile_seed: u64, start: usize, context: Option<&PathBuf>) -> Result<SimOptions> {
    let context = match context {
        Some(p) => serde_json::from_str::<CaptureContext>(&std::fs::read_to_string(p)?)
            .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?,
        None => CaptureContext::default(),
    };
    Ok(SimOptions {
        profile_seed,
        seed,
        start,
        context,
    })
}

fn print_json<S: serde::Serialize>(v: &S) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::EmitRecord { mode, capture, out } => {
            let source: CaptureSource = capture.source.parse()?;
            let sim = sim_options(capture.seed, capture.profile_seed, capture.start, capture.context.as_ref())?;
            let records = emit_record(mode, &source, &sim)?;
            wav::write(&records, &out)?;
            println!("{} records written to {}", records.len(), out.display());
        }
        Command::Upload {
            mode,
            input,
            source,
            seed,
            profile_seed,
            start,
            server,
        } => {
            let source = match (input, source) {
                (Some(p), None) => CaptureSource::File(p),
                (None, Some(s)) => s.parse()?,
                _ => return Err(CliError::Usage("give exactly one of --input or --source".into())),
            };
            let records = emit_record(mode, &source, &sim_options(seed, profile_seed, start, None)?)?;
            print_json(&Client::new(&server)?.upload_data(mode, &records)?);
        }
        Command::Label {
            session,
            label,
            watch,
            watch_timeout_secs,
            server,
        } => {
            let client = Client::new(&server)?;
            let resp = client.upload_label(&session, &label)?;
            print_json(&resp);
            if watch {
                let done = client.watch(
                    &resp.task_id,
                    Duration::from_millis(500),
                    Duration::from_secs(watch_timeout_secs),
                    |t| eprintln!("task {}: {:?}", t.task_id, t.state),
                )?;
                print_json(&done);
                if done.state == TaskState::Failed {
                    return Err(CliError::Server {
                        status: 200,
                        message: format!("task failed: {}", done.error.unwrap_or_default()),
                    });
                }
            }
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
