use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use sliders::analytics::{build_report, Aggregation, ReportOptions, TTest};
use sliders::board::Board;
use sliders::engine::{Mode, Quorum, SessionConfig, TieBreak};
use sliders::net::{Server, ServerConfig};
use sliders::oracle::DistanceTable;
use sliders::persistence::EventLog;
use sliders::sim::{run_experiment, ExperimentPlan};

#[derive(Parser)]
#[command(name = "sliders", version, about = "Voting-based 8-puzzle server, simulator and analytics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the game server.
    Serve(ServeArgs),
    /// Run a simulated experiment with synthetic agents.
    Simulate(SimulateArgs),
    /// Build a metrics report from event logs.
    Report(ReportArgs),
    /// Print the optimal distance of a board.
    Oracle(OracleArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum QuorumArg {
    All,
    Majority,
}

#[derive(Clone, Copy, ValueEnum)]
enum TieBreakArg {
    Lowest,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Solo,
    Group,
}

/// Session settings shared by `serve` and `simulate`. Flags override the
/// config file, which overrides the defaults.
#[derive(Args)]
struct SessionArgs {
    /// JSON file with session config fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    round_seconds: Option<f64>,
    #[arg(long)]
    session_minutes: Option<f64>,
    #[arg(long)]
    delay_seconds: Option<f64>,
    #[arg(long)]
    start_difficulty: Option<u32>,
    #[arg(long)]
    difficulty_step: Option<u32>,
    #[arg(long, value_enum)]
    feedback: Option<OnOff>,
    #[arg(long, value_enum)]
    quorum: Option<QuorumArg>,
    #[arg(long, value_enum)]
    tie_break: Option<TieBreakArg>,
}

impl SessionArgs {
    fn resolve(&self, mode: Option<ModeArg>, seed: Option<u64>) -> Result<SessionConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => SessionConfig::default(),
        };
        if let Some(m) = mode {
            cfg.mode = match m {
                ModeArg::Solo => Mode::Solo,
                ModeArg::Group => Mode::Group,
            };
        }
        if let Some(v) = self.round_seconds {
            cfg.round_seconds = v;
        }
        if let Some(v) = self.session_minutes {
            cfg.session_minutes = v;
        }
        if let Some(v) = self.delay_seconds {
            cfg.inter_puzzle_delay = v;
        }
        if let Some(v) = self.start_difficulty {
            cfg.start_difficulty = v;
        }
        if let Some(v) = self.difficulty_step {
            cfg.difficulty_step = v;
        }
        if let Some(v) = self.feedback {
            cfg.feedback_enabled = matches!(v, OnOff::On);
        }
        if let Some(v) = self.quorum {
            cfg.quorum = match v {
                QuorumArg::All => Quorum::All,
                QuorumArg::Majority => Quorum::Majority,
            };
        }
        if let Some(v) = self.tie_break {
            cfg.tie_break = match v {
                TieBreakArg::Lowest => TieBreak::LowestTile,
                TieBreakArg::Random => TieBreak::SeededRandom,
            };
        }
        if let Some(s) = seed {
            cfg.rng_seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 7878)]
    port: u16,
    #[arg(long, default_value = "0.0.0.0")]
    host: String,
    /// Default mode for joins that do not name one.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for session logs.
    #[arg(long, default_value = "logs")]
    log: PathBuf,
    /// Players a new group session waits for before starting.
    #[arg(long, default_value_t = 1)]
    group_size: usize,
    /// Seconds a disconnected player may reconnect and keep their seat.
    #[arg(long, default_value_t = 0.0)]
    grace_seconds: f64,
    /// Distance table cache file.
    #[arg(long)]
    cache: Option<PathBuf>,
    #[command(flatten)]
    session: SessionArgs,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 5)]
    agents: usize,
    /// One skill per agent, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [0.55, 0.65, 0.75, 0.85, 0.95])]
    skills: Vec<f64>,
    /// Vote latency range in seconds, as MIN..MAX.
    #[arg(long, default_value = "2..20", value_parser = parse_range)]
    latency: (f64, f64),
    /// Probability of switching to the tally leader.
    #[arg(long, default_value_t = 0.0)]
    persistence: f64,
    #[arg(long, default_value_t = 30)]
    trials: u32,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value = "sim-out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "welch")]
    ttest: TTestArg,
    #[arg(long)]
    cache: Option<PathBuf>,
    #[command(flatten)]
    session: SessionArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum TTestArg {
    Welch,
    Student,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum AggregationArg {
    PerPuzzle,
    Summed,
}

#[derive(Args)]
struct ReportArgs {
    /// A log file or a directory of `.jsonl` logs.
    #[arg(long)]
    log: PathBuf,
    #[arg(long, value_enum, default_value = "welch")]
    ttest: TTestArg,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    #[arg(long, value_enum, default_value = "per-puzzle")]
    aggregation: AggregationArg,
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    /// Nine comma-separated cells in row-major order, 0 for the blank.
    #[arg(long)]
    board: Board,
    /// Distance table cache file, created if missing.
    #[arg(long)]
    cache: Option<PathBuf>,
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("expected MIN..MAX, got {s:?}"))?;
    let lo: f64 = a.trim().parse().map_err(|e| format!("{a:?}: {e}"))?;
    let hi: f64 = b.trim().parse().map_err(|e| format!("{b:?}: {e}"))?;
    if lo > hi {
        return Err(format!("{lo} is above {hi}"));
    }
    Ok((lo, hi))
}

fn ttest(arg: TTestArg) -> TTest {
    match arg {
        TTestArg::Welch => TTest::Welch,
        TTestArg::Student => TTest::Student,
    }
}

fn load_table(cache: Option<&Path>) -> Result<Arc<DistanceTable>> {
    let table = match cache {
        Some(p) => DistanceTable::load_or_build(p).with_context(|| format!("distance table cache {}", p.display()))?,
        None => DistanceTable::build(),
    };
    Ok(Arc::new(table))
}

fn echo_config(label: &str, value: &impl serde::Serialize) {
    eprintln!("effective {label}: {}", serde_json::to_string(value).expect("config serializes"));
}

fn serve(args: ServeArgs) -> Result<()> {
    let session = args.session.resolve(args.mode, args.seed)?;
    if args.group_size == 0 {
        bail!("--group-size must be at least 1");
    }
    if !(args.grace_seconds >= 0.0 && args.grace_seconds.is_finite()) {
        bail!("--grace-seconds must be a non-negative number");
    }
    echo_config("session config", &session);
    eprintln!(
        "effective server config: {}",
        serde_json::json!({
            "listen": format!("{}:{}", args.host, args.port),
            "log": args.log,
            "group_size": args.group_size,
            "grace_seconds": args.grace_seconds,
        })
    );
    let table = load_table(args.cache.as_deref())?;
    let mut config = ServerConfig::new(session, &args.log);
    config.group_size = args.group_size;
    config.grace_ms = (args.grace_seconds * 1000.0).round() as u64;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let server = Server::bind(&format!("{}:{}", args.host, args.port), config, table).await?;
        tracing::info!("listening on {}", server.local_addr()?);
        tokio::select! {
            r = server.run() => r?,
            _ = tokio::signal::ctrl_c() => tracing::info!("shutting down"),
        }
        Ok(())
    })
}

fn simulate(args: SimulateArgs) -> Result<()> {
    if args.skills.len() != args.agents {
        bail!("--skills lists {} values for {} agents", args.skills.len(), args.agents);
    }
    let session = args.session.resolve(None, None)?;
    let mut plan = ExperimentPlan::with_skills(&args.skills, args.latency, session, args.trials, args.seed);
    for a in &mut plan.agents {
        a.persistence = args.persistence;
    }
    plan.validate()?;
    echo_config("plan", &plan);
    let table = load_table(args.cache.as_deref())?;
    let options = ReportOptions { ttest: ttest(args.ttest), ..Default::default() };
    let experiment = run_experiment(&plan, &table, options)?;
    experiment.write_to_dir(&args.out)?;
    std::fs::write(args.out.join("plan.json"), serde_json::to_string_pretty(&plan)?)?;
    print!("{}", experiment.report.to_text());
    eprintln!("wrote {} session logs to {}", experiment.logs.len(), args.out.display());
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let options = ReportOptions {
        ttest: ttest(args.ttest),
        aggregation: match args.aggregation {
            AggregationArg::PerPuzzle => Aggregation::PerPuzzleMean,
            AggregationArg::Summed => Aggregation::Summed,
        },
    };
    echo_config("report options", &options);
    let logs = EventLog::read_all(&args.log).with_context(|| format!("reading {}", args.log.display()))?;
    if logs.is_empty() {
        bail!("no .jsonl logs under {}", args.log.display());
    }
    let table = load_table(args.cache.as_deref())?;
    let report = build_report(&logs, Some(&table), options)?;
    match args.format {
        Format::Text => print!("{}", report.to_text()),
        Format::Csv => print!("{}", report.to_csv()),
    }
    Ok(())
}

fn oracle(args: OracleArgs) -> Result<()> {
    eprintln!("effective oracle config: {{\"board\":{:?},\"cache\":{:?}}}", args.board.cells(), args.cache);
    let table = load_table(args.cache.as_deref())?;
    println!("{}", table.optimal_distance(&args.board)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let result = match cli.command {
        Command::Serve(a) => serve(a),
        Command::Simulate(a) => simulate(a),
        Command::Report(a) => report(a),
        Command::Oracle(a) => oracle(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
