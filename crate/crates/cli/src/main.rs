//! `surveil`: solve, evaluate, simulate, synthesize, analyze and serve.
//!
//! Every command reads the same TOML configuration (`--config`); without one
//! the default task parameters apply. With `--server URL` the compute
//! commands run on a remote experiment service instead of in-process.
//!
//! Exit status: 0 on success, 2 for a bad configuration or arguments, 1 for
//! anything else.

mod render;

use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use render::Format;
use surveil_client::{ClientError, ExperimentClient};
use surveil_core::agents::{generate_sessions, PopulationSpec};
use surveil_core::analysis::{summarize, SummaryReport};
use surveil_core::api::{
    AnalyzeRequest, EvaluateRequest, ErrorCode, SimulateRequest, SolveRequest, SolveResponse,
    SynthRequest,
};
use surveil_core::catalog::PolicySpec;
use surveil_core::config::FileConfig;
use surveil_core::policy::{evaluate_policy_exact, simulate_missions};
use surveil_core::session::{read_jsonl, write_jsonl, SessionLog};
use surveil_core::Treatment;

#[derive(Parser, Debug)]
#[command(name = "surveil", version, about = "Drone surveillance stopping task: models, agents, analysis and experiment service")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for simulation and synthesis.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (a directory for `analyze`); standard output when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Run compute commands on this experiment service.
    #[arg(long, global = true)]
    server: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Optimal policy by backward induction, compared with the heuristic.
    Solve,
    /// Exact expected value and survival probability of policies.
    Evaluate {
        /// Repeatable. Defaults to the two heuristics and the optimum.
        #[arg(long)]
        policy: Vec<PolicySpec>,
        /// Treatment for agent policies.
        #[arg(long)]
        treatment: Option<Treatment>,
    },
    /// Monte Carlo statistics of a policy.
    Simulate {
        #[arg(long, default_value = "closed-heuristic")]
        policy: PolicySpec,
        #[arg(long)]
        treatment: Option<Treatment>,
        #[arg(short = 'n', long = "n", default_value_t = 100_000)]
        n: u64,
    },
    /// Session logs (JSONL) for a synthetic population.
    Synth {
        /// Population spec (TOML); `--seed` overrides its seed.
        #[arg(long)]
        population: PathBuf,
    },
    /// Summary tables from session logs (JSONL).
    Analyze {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Run the experiment service.
    Serve {
        /// Overrides `service.bind`.
        #[arg(long)]
        bind: Option<String>,
        /// Overrides `service.data_dir`.
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
}

enum Failure {
    Config(String),
    Internal(anyhow::Error),
}

impl From<surveil_core::Error> for Failure {
    fn from(e: surveil_core::Error) -> Self {
        use surveil_core::Error as E;
        match e {
            E::InvalidConfig(_) | E::OffLadder(_) | E::LadderTop(_) | E::Domain(_) => Failure::Config(e.to_string()),
            other => Failure::Internal(other.into()),
        }
    }
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        match &e {
            ClientError::Api { body, .. } if body.code == ErrorCode::Validation => Failure::Config(e.to_string()),
            ClientError::Url(_) => Failure::Config(e.to_string()),
            _ => Failure::Internal(e.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Internal(e)
    }
}

type Outcome<T = ()> = Result<T, Failure>;

fn runtime() -> Outcome<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure::Internal(e.into()))
}

fn emit(out: Option<&Path>, text: &str) -> Outcome {
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => std::io::stdout().write_all(text.as_bytes()).context("writing to stdout")?,
    }
    Ok(())
}

struct Ctx {
    cfg: FileConfig,
    /// Whether the configuration came from a file, so remote calls send it.
    explicit: bool,
    cli: Cli,
}

impl Ctx {
    fn remote(&self) -> Outcome<Option<(ExperimentClient, tokio::runtime::Runtime)>> {
        match &self.cli.server {
            None => Ok(None),
            Some(url) => Ok(Some((ExperimentClient::new(url)?, runtime()?))),
        }
    }

    fn remote_config(&self) -> Option<surveil_core::MissionConfig> {
        self.explicit.then(|| self.cfg.mission.clone())
    }
}

fn solve(ctx: &Ctx) -> Outcome {
    let resp = match ctx.remote()? {
        Some((client, rt)) => rt.block_on(client.solve(&SolveRequest { config: ctx.remote_config() }))?,
        None => SolveResponse::compute(&ctx.cfg.mission)?,
    };
    emit(ctx.cli.out.as_deref(), &render::solve(&resp, ctx.cli.format))
}

fn evaluate(ctx: &Ctx, policies: &[PolicySpec], treatment: Option<Treatment>) -> Outcome {
    let defaults = [PolicySpec::ClosedHeuristic, PolicySpec::OpenHeuristic, PolicySpec::Dp];
    let policies = if policies.is_empty() { &defaults[..] } else { policies };
    let mut evals = Vec::with_capacity(policies.len());
    let remote = ctx.remote()?;
    for spec in policies {
        let ev = match &remote {
            Some((client, rt)) => rt.block_on(client.evaluate(&EvaluateRequest {
                policy: spec.clone(),
                treatment,
                config: ctx.remote_config(),
            }))?,
            None => {
                let mut policy = spec.build(&ctx.cfg.mission, treatment)?;
                evaluate_policy_exact(&mut policy, &ctx.cfg.mission)?
            }
        };
        evals.push(ev);
    }
    emit(ctx.cli.out.as_deref(), &render::evaluations(&evals, ctx.cli.format))
}

fn simulate(ctx: &Ctx, spec: &PolicySpec, treatment: Option<Treatment>, n: u64) -> Outcome {
    let seed = ctx.cli.seed.unwrap_or(0);
    let stats = match ctx.remote()? {
        Some((client, rt)) => rt.block_on(client.simulate(&SimulateRequest {
            policy: spec.clone(),
            treatment,
            config: ctx.remote_config(),
            seed,
            n_missions: n,
        }))?,
        None => {
            let policy = spec.build(&ctx.cfg.mission, treatment)?;
            simulate_missions(&policy, &ctx.cfg.mission, seed, n)?
        }
    };
    emit(ctx.cli.out.as_deref(), &render::stats(&stats, ctx.cli.format))
}

fn synth(ctx: &Ctx, population: &Path) -> Outcome {
    let text = std::fs::read_to_string(population)
        .map_err(|e| Failure::Config(format!("{}: {e}", population.display())))?;
    let mut spec = PopulationSpec::from_toml(&text)?;
    if let Some(seed) = ctx.cli.seed {
        spec.seed = seed;
    }
    let sessions = match ctx.remote()? {
        Some((client, rt)) => {
            rt.block_on(client.synth(&SynthRequest { population: spec, config: ctx.remote_config() }))?
        }
        None => generate_sessions(&spec, &ctx.cfg.mission)?,
    };
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &sessions).context("serializing sessions")?;
    emit(ctx.cli.out.as_deref(), &String::from_utf8(buf).context("session log encoding")?)
}

fn load_sessions(path: &Path) -> Outcome<Vec<SessionLog>> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let sessions: Vec<SessionLog> =
        read_jsonl(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))?;
    for s in &sessions {
        s.verify().with_context(|| format!("session {} in {}", s.session_id, path.display()))?;
    }
    Ok(sessions)
}

fn analyze(ctx: &Ctx, input: &Path) -> Outcome {
    let sessions = load_sessions(input)?;
    let report: SummaryReport = match ctx.remote()? {
        Some((client, rt)) => rt.block_on(client.analyze(&AnalyzeRequest {
            sessions,
            options: ctx.explicit.then(|| ctx.cfg.analysis.clone()),
        }))?,
        None => summarize(&sessions, &ctx.cfg.analysis),
    };
    match &ctx.cli.out {
        Some(dir) => {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            emit(Some(&dir.join("summary.txt")), &report.render_text())?;
            emit(Some(&dir.join("summary.tsv")), &report.render_tsv())?;
            let json = serde_json::to_string_pretty(&report).context("serializing report")?;
            emit(Some(&dir.join("summary.json")), &(json + "\n"))
        }
        None => match ctx.cli.format {
            Format::Text => emit(None, &report.render_text()),
            Format::Tabular => emit(None, &report.render_tsv()),
        },
    }
}

fn serve(mut ctx: Ctx, bind: Option<String>, data_dir: Option<PathBuf>) -> Outcome {
    if ctx.cli.server.is_some() {
        return Err(Failure::Config("--server cannot be combined with serve".into()));
    }
    if let Some(b) = bind {
        ctx.cfg.service.bind = b;
    }
    if data_dir.is_some() {
        ctx.cfg.service.data_dir = data_dir;
    }
    if ctx.cli.seed.is_some() {
        ctx.cfg.service.seed = ctx.cli.seed;
    }
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .init();
    let rt = runtime()?;
    rt.block_on(surveil_service::serve(ctx.cfg)).context("experiment service")?;
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    let (cfg, explicit) = match &cli.config {
        Some(path) => (FileConfig::load(path)?, true),
        None => (FileConfig::default(), false),
    };
    let ctx = Ctx { cfg, explicit, cli };
    match &ctx.cli.command {
        Command::Solve => solve(&ctx),
        Command::Evaluate { policy, treatment } => evaluate(&ctx, policy, *treatment),
        Command::Simulate { policy, treatment, n } => simulate(&ctx, policy, *treatment, *n),
        Command::Synth { population } => synth(&ctx, population),
        Command::Analyze { input } => analyze(&ctx, input),
        Command::Serve { bind, data_dir } => {
            let (bind, data_dir) = (bind.clone(), data_dir.clone());
            serve(ctx, bind, data_dir)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("surveil: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Internal(e)) => {
            eprintln!("surveil: {e:#}");
            ExitCode::from(1)
        }
    }
}
