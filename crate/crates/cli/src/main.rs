//! `wayfarer`: train, evaluate, serve and inspect waypoint-following policies.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use wayfarer::checkpoint::{config_to_json, load_config};
use wayfarer::eval::{self, EvalOptions, SuccessReport, TestCase};
use wayfarer::run::RunWriter;
use wayfarer::trainer::{Metrics, TrainObserver};
use wayfarer::{AgentKind, Checkpoint, PolicyVariant, TrainConfig};
use wayfarer_teleop::{ServerConfig, SessionConfig};

#[derive(Parser)]
#[command(name = "wayfarer", version, about = "Goal-conditioned locomotion: train, evaluate, serve")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a policy and write checkpoints and metrics.
    Train(TrainArgs),
    /// Run test cases against a checkpoint and report success ratios.
    Eval(EvalArgs),
    /// Serve a checkpoint for live teleoperation over WebSocket.
    Serve(ServeArgs),
    /// Summarize a checkpoint, or print the default training config.
    Inspect(InspectArgs),
}

#[derive(clap::Args)]
struct TrainArgs {
    /// JSON training config; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Policy variant (1-5).
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=5))]
    variant: Option<u8>,
    #[arg(long, value_parser = parse_agent)]
    agent: Option<AgentKind>,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long, env = "WAYFARER_SEED")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Print progress every N iterations (0 = quiet).
    #[arg(long, default_value_t = 10)]
    log_every: u64,
    /// Run rollouts on a single thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Builtin,
}

#[derive(clap::Args)]
struct EvalArgs {
    checkpoint: PathBuf,
    /// Named test suite (ignored when --waypoints is given).
    #[arg(long, value_enum, default_value = "builtin")]
    suite: Suite,
    /// Custom path as "x1,y1;x2,y2;...".
    #[arg(long)]
    waypoints: Option<String>,
    #[arg(long, default_value_t = eval::DEFAULT_TRIALS)]
    trials: usize,
    /// Apply the policy mean instead of sampling actions.
    #[arg(long)]
    deterministic: bool,
    #[arg(long, env = "WAYFARER_SEED", default_value_t = 0)]
    seed: u64,
    /// Write one trajectory CSV per trial under this directory.
    #[arg(long)]
    export_traj: Option<PathBuf>,
    /// Output directory for reports.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(clap::Args)]
struct ServeArgs {
    checkpoint: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: String,
    /// Simulated one-way delay for operator commands.
    #[arg(long, default_value_t = 0)]
    command_delay_ms: u64,
    /// Keep the episode deadline after operator retasking.
    #[arg(long)]
    strict_clock: bool,
    /// Directory holding the operator console bundle.
    #[arg(long)]
    static_dir: Option<PathBuf>,
    #[arg(long, env = "WAYFARER_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(clap::Args)]
struct InspectArgs {
    #[arg(required_unless_present = "default_config")]
    checkpoint: Option<PathBuf>,
    /// Print the default training config as JSON.
    #[arg(long, conflicts_with = "checkpoint")]
    default_config: bool,
}

fn parse_agent(s: &str) -> Result<AgentKind, String> {
    s.parse::<AgentKind>().map_err(|e| e.to_string())
}

/// An error together with its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

trait Classify<T> {
    fn usage(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code: 1,
            error: e.into(),
        })
    }

    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code: 2,
            error: e.into(),
        })
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Cmd::Train(a) => train(a),
        Cmd::Eval(a) => evaluate(a),
        Cmd::Serve(a) => serve(a),
        Cmd::Inspect(a) => inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn train(args: TrainArgs) -> Result<(), Failure> {
    let mut cfg = match &args.config {
        Some(path) => load_config(path).usage()?,
        None => TrainConfig::default(),
    };
    if let Some(v) = args.variant {
        cfg.variant = PolicyVariant::new(v).usage()?;
    }
    if let Some(agent) = args.agent {
        cfg.episode.agent_kind = agent;
    }
    if let Some(n) = args.iterations {
        cfg.n_iterations = n;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.sequential {
        cfg.parallel = false;
    }
    cfg.validate().usage()?;

    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))
        .runtime()?;
    let resolved = config_to_json(&cfg).runtime()?;
    let config_path = args.out.join("config.json");
    fs::write(&config_path, resolved)
        .with_context(|| format!("writing {}", config_path.display()))
        .runtime()?;

    let writer = RunWriter::create(&args.out, cfg.checkpoint_every).runtime()?;
    let mut progress = Progress {
        writer,
        every: args.log_every,
        total: cfg.n_iterations,
    };
    let final_ckpt = wayfarer::train(&cfg, &mut progress).runtime()?;
    let path = progress.writer.write_final(&final_ckpt).runtime()?;
    println!("wrote {}", path.display());
    println!("wrote {}", progress.writer.metrics_path().display());
    Ok(())
}

struct Progress {
    writer: RunWriter,
    every: u64,
    total: u64,
}

impl TrainObserver for Progress {
    fn on_iteration(
        &mut self,
        m: &Metrics,
        checkpoint: &dyn Fn() -> Checkpoint,
    ) -> wayfarer::Result<()> {
        self.writer.on_iteration(m, checkpoint)?;
        if self.every > 0 && (m.iteration.is_multiple_of(self.every) || m.iteration == self.total) {
            eprintln!(
                "iter {:>5}/{}  return {:>8.2}  waypoints {:.2}  len {:>6.1}  value loss {:.3}  entropy {:.3}",
                m.iteration,
                self.total,
                m.mean_return,
                m.mean_waypoints,
                m.mean_episode_len,
                m.value_loss,
                m.entropy
            );
        }
        Ok(())
    }
}

fn evaluate(args: EvalArgs) -> Result<(), Failure> {
    if args.trials == 0 {
        return Err(anyhow!("--trials must be at least 1")).usage();
    }
    let cases: Vec<TestCase> = match &args.waypoints {
        Some(text) => vec![TestCase::new("custom", eval::parse_waypoints(text).usage()?)],
        None => match args.suite {
            Suite::Builtin => eval::builtin_suite(),
        },
    };
    let ckpt = Checkpoint::load(&args.checkpoint).runtime()?;
    let opts = EvalOptions {
        deterministic: args.deterministic,
        seed: args.seed,
        parallel: true,
    };
    let reports = cases
        .into_iter()
        .map(|c| eval::success_ratio(&ckpt, &c.with_trials(args.trials), &opts))
        .collect::<wayfarer::Result<Vec<_>>>()
        .runtime()?;

    print!("{}", eval::format_table(&reports));
    let csv_path = args.out.join("reports.csv");
    eval::write_reports(&reports, &csv_path).runtime()?;
    let json_path = args.out.join("reports.json");
    write_json_reports(&reports, &args, &json_path).runtime()?;
    println!("wrote {}", csv_path.display());

    if let Some(dir) = &args.export_traj {
        for r in &reports {
            for (k, trial) in r.trials.iter().enumerate() {
                let path = dir.join(format!("{}_trial{:02}.csv", r.case.name, k));
                eval::export_trajectory(trial, &path).runtime()?;
            }
        }
        println!("wrote trajectories to {}", dir.display());
    }
    Ok(())
}

/// The report rows plus per-trial detail.
fn write_json_reports(reports: &[SuccessReport], args: &EvalArgs, path: &Path) -> anyhow::Result<()> {
    let rows: Vec<_> = reports
        .iter()
        .map(|r| {
            serde_json::json!({
                "case": r.case.name,
                "waypoints": r.case.waypoints,
                "trials": r.trials.len(),
                "successes": r.successes,
                "ratio": r.success_ratio,
                "per_trial": r.trials.iter().map(|t| serde_json::json!({
                    "success": t.success,
                    "waypoints_reached": t.waypoints_reached,
                    "time_to_each": t.time_to_each,
                })).collect::<Vec<_>>(),
            })
        })
        .collect();
    let doc = serde_json::json!({
        "checkpoint": args.checkpoint.display().to_string(),
        "deterministic": args.deterministic,
        "seed": args.seed,
        "reports": rows,
    });
    let text = serde_json::to_string_pretty(&doc)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn serve(args: ServeArgs) -> Result<(), Failure> {
    let ckpt = Checkpoint::load(&args.checkpoint).runtime()?;
    let config = ServerConfig {
        addr: args.addr,
        session: SessionConfig {
            command_delay_ms: args.command_delay_ms,
            strict_clock: args.strict_clock,
            seed: args.seed,
            ..SessionConfig::default()
        },
        static_dir: args.static_dir,
        tick_interval: None,
    };
    let runtime = tokio::runtime::Runtime::new().runtime()?;
    runtime.block_on(async {
        let server = wayfarer_teleop::Server::bind(ckpt, config).await.runtime()?;
        let addr = server.local_addr().runtime()?;
        println!("serving on http://{addr} (telemetry and commands at ws://{addr}/ws)");
        server.run().await.runtime()
    })
}

fn inspect(args: InspectArgs) -> Result<(), Failure> {
    if args.default_config {
        println!("{}", config_to_json(&TrainConfig::default()).runtime()?);
        return Ok(());
    }
    let path = args.checkpoint.expect("required by clap");
    let ckpt = Checkpoint::load(&path).runtime()?;
    let dims = |m: &wayfarer::nn::Mlp| {
        let d = m.dims();
        let mut parts = vec![d.input.to_string()];
        parts.extend(d.hidden.iter().map(|h| h.to_string()));
        parts.push(d.output.to_string());
        parts.join("-")
    };
    let e = &ckpt.episode;
    println!("checkpoint   {}", path.display());
    println!("version      {}", ckpt.version);
    println!(
        "variant      {} ({:?}, {:?})",
        ckpt.variant.id(),
        e.training_style,
        e.info_style
    );
    println!("agent        {:?}", e.agent_kind);
    println!("iteration    {}", ckpt.iteration);
    println!("env steps    {}", ckpt.env_steps);
    println!("seed         {}", ckpt.seed);
    println!(
        "policy       {} ({} parameters)",
        dims(&ckpt.model.policy),
        ckpt.model.policy.param_count()
    );
    println!(
        "value        {} ({} parameters)",
        dims(&ckpt.model.value),
        ckpt.model.value.param_count()
    );
    let stds: Vec<String> = ckpt
        .model
        .head
        .log_std
        .iter()
        .map(|s| format!("{:.3}", s.exp()))
        .collect();
    println!("action std   [{}]", stds.join(", "));
    Ok(())
}
