//! `fedtrust`: runs the reputation experiments and checks exported ledgers.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedtrust::experiment::{
    self, build_world, configured_roster, keys_for_seed, parse_seed_list, DataProvider,
    ExperimentError, LoadError, MetricRow, ScenarioConfig,
};
use fedtrust::ids::PublisherId;
use fedtrust::ledger::export::{read_chain, write_chain, ImportError};
use fedtrust::ledger::{check_chain, Ledger};
use fedtrust::orchestrator::{run_task, OrchestratorError, Scheme, SchemeState, TaskEnv, TaskSpec};

const EXIT_VERIFY: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_RUN: u8 = 4;

#[derive(Parser)]
#[command(
    name = "fedtrust",
    version,
    about = "Reputation-based worker selection for federated learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Final accuracy without defenses over attack strength, EMD and attacker count.
    AccuracyGrid(RunArgs),
    /// Reputation of a worker that turns malicious, under every scheme.
    ReputationTrace(RunArgs),
    /// Accuracy as the reputation threshold rises.
    ThresholdSweep(RunArgs),
    /// Checks an exported chain file.
    Verify {
        /// Chain file written by `run-task --chain`.
        chain: PathBuf,
    },
    /// Runs a single task, appending its opinions to a chain file.
    RunTask {
        #[command(flatten)]
        run: RunArgs,
        /// Chain file to extend; created when missing.
        #[arg(long)]
        chain: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file (TOML). Defaults apply to anything it leaves out.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV; a `.summary.csv` is written beside it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seeds such as `1,2,5-9`, overriding the scenario.
    #[arg(long, value_parser = seed_list)]
    seeds: Option<SeedList>,
    /// Restrict to one scheme: msl, tsl, atv or nodefense.
    #[arg(long)]
    scheme: Option<Scheme>,
}

#[derive(Clone)]
struct SeedList(Vec<u64>);

fn seed_list(s: &str) -> Result<SeedList, String> {
    parse_seed_list(s).map(SeedList)
}

/// A failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        let code = match e {
            ExperimentError::Io { .. } => EXIT_IO,
            ExperimentError::Fl(fedtrust::fl::FlError::Io(_)) => EXIT_IO,
            _ => EXIT_RUN,
        };
        Failure::new(code, e.to_string())
    }
}

fn load_config(args: &RunArgs) -> Result<ScenarioConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => ScenarioConfig::load(path).map_err(|e| match e {
            LoadError::Io(io) => Failure::new(EXIT_IO, format!("{}: {io}", path.display())),
            LoadError::Config(c) => Failure::new(EXIT_RUN, format!("{}: {c}", path.display())),
        })?,
        None => ScenarioConfig::default(),
    };
    if let Some(seeds) = &args.seeds {
        cfg.experiment.seeds = seeds.0.clone();
    }
    if let Some(scheme) = args.scheme {
        cfg.experiment.scheme = scheme;
    }
    Ok(cfg)
}

fn emit(rows: &[MetricRow], out: &Option<PathBuf>, default: &str) -> Result<(), Failure> {
    let path = out.clone().unwrap_or_else(|| PathBuf::from(default));
    experiment::write_outputs(&path, rows)?;
    log::info!("wrote {} rows to {}", rows.len(), path.display());
    Ok(())
}

fn accuracy_grid(args: &RunArgs) -> Result<(), Failure> {
    let cfg = load_config(args)?;
    if args.scheme.is_some_and(|s| s != Scheme::NoDefense) {
        return Err(Failure::new(
            EXIT_USAGE,
            "accuracy-grid only runs without defenses",
        ));
    }
    emit(
        &experiment::accuracy_grid(&cfg)?,
        &args.out,
        "accuracy_grid.csv",
    )
}

fn reputation_trace(args: &RunArgs) -> Result<(), Failure> {
    let cfg = load_config(args)?;
    let mut rows = experiment::reputation_trace(&cfg)?;
    if let Some(s) = args.scheme {
        rows.retain(|r| r.scheme == s.name());
    }
    emit(&rows, &args.out, "reputation_trace.csv")
}

fn threshold_sweep(args: &RunArgs) -> Result<(), Failure> {
    let mut cfg = load_config(args)?;
    if let Some(s) = args.scheme {
        cfg.sweep.schemes = vec![s];
    }
    let mut rows = experiment::threshold_sweep(&cfg)?;
    if let Some(s) = args.scheme {
        rows.retain(|r| r.scheme == s.name());
    }
    emit(&rows, &args.out, "threshold_sweep.csv")
}

fn read_chain_file(
    path: &Path,
) -> Result<(Vec<fedtrust::ledger::Block>, fedtrust::ledger::KeyRegistry), Failure> {
    let file =
        File::open(path).map_err(|e| Failure::new(EXIT_IO, format!("{}: {e}", path.display())))?;
    read_chain(BufReader::new(file)).map_err(|e| match e {
        ImportError::Io(io) => Failure::new(EXIT_IO, format!("{}: {io}", path.display())),
        other => Failure::new(EXIT_VERIFY, format!("{}: {other}", path.display())),
    })
}

fn verify(path: &Path) -> Result<(), Failure> {
    let (chain, keys) = read_chain_file(path)?;
    check_chain(&chain, &keys)
        .map_err(|fault| Failure::new(EXIT_VERIFY, format!("{}: {fault}", path.display())))?;
    println!("{}: {} blocks verified", path.display(), chain.len());
    Ok(())
}

fn task(args: &RunArgs, chain_path: Option<&Path>) -> Result<(), Failure> {
    let cfg = load_config(args)?;
    let seed = cfg.experiment.seeds[0];
    let mut ledger = match chain_path.filter(|p| p.exists()) {
        Some(path) => {
            let (chain, keys) = read_chain_file(path)?;
            Ledger::from_parts(chain, keys)
                .map_err(|f| Failure::new(EXIT_VERIFY, format!("{}: {f}", path.display())))?
        }
        None => Ledger::new(keys_for_seed(&cfg, seed)),
    };
    let task_id = ledger.tip().height + 1;
    let publisher = PublisherId(((task_id - 1) % u64::from(cfg.reputation.publishers)) as u32);
    if ledger.keys().get(publisher).is_none() {
        return Err(Failure::new(
            EXIT_RUN,
            format!("chain has no key for {publisher}"),
        ));
    }

    let corpus = DataProvider::new(&cfg)?.corpus(&cfg, seed)?;
    let world = build_world(&cfg, &corpus, &configured_roster(&cfg), seed)?;
    let (training, reputation, miners) = (
        cfg.training_params(),
        cfg.reputation_params(),
        cfg.miner_set(),
    );
    let env = TaskEnv {
        validation: &corpus.validation,
        test: &corpus.test,
        training: &training,
        reputation: &reputation,
        miners: &miners,
    };
    let spec = TaskSpec {
        task_id,
        publisher_id: publisher,
        min_data_size: cfg.experiment.min_data_size,
        reputation_threshold: cfg.experiment.threshold,
        rounds: cfg.training.rounds,
        scheme: cfg.experiment.scheme,
    };
    let mut state = SchemeState::new();
    let report = run_task(&spec, &world.profiles, &mut ledger, &mut state, &env, seed).map_err(
        |e| match e {
            OrchestratorError::NoEligibleWorkers { .. } => {
                Failure::new(EXIT_RUN, format!("task aborted: {e}"))
            }
            other => Failure::new(EXIT_RUN, other.to_string()),
        },
    )?;

    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("task.csv"));
    let io_err =
        |p: &Path, e: std::io::Error| Failure::new(EXIT_IO, format!("{}: {e}", p.display()));
    let file = File::create(&out).map_err(|e| io_err(&out, e))?;
    report
        .write_csv(BufWriter::new(file))
        .map_err(|e| Failure::new(EXIT_IO, format!("{}: {e}", out.display())))?;
    if let Some(path) = chain_path {
        let file = File::create(path).map_err(|e| io_err(path, e))?;
        write_chain(BufWriter::new(file), ledger.chain(), ledger.keys())
            .map_err(|e| io_err(path, e))?;
    }
    println!(
        "task {task_id} ({publisher}, {}): {} of {} workers selected, accuracy {:.6}, ledger {}",
        spec.scheme,
        report.selected.len(),
        report.admitted.len(),
        report.final_accuracy,
        report.ledger.name()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FEDTRUST_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::AccuracyGrid(a) => accuracy_grid(a),
        Command::ReputationTrace(a) => reputation_trace(a),
        Command::ThresholdSweep(a) => threshold_sweep(a),
        Command::Verify { chain } => verify(chain),
        Command::RunTask { run, chain } => task(run, chain.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("fedtrust: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
