use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rlforge::agents::{load_agent_for_eval, make_agent, Manifest};
use rlforge::envs::{make_env, ENV_IDS};
use rlforge::experiments::{
    algorithm_config, preset, run, run_evaluation_phase, EvalConfig, PhaseBudget, RunConfig, ALGORITHMS, PRESETS,
};
use rlforge_viz::{router, AppState, Session};

#[derive(Debug, Parser)]
#[command(name = "rlforge", version, about = "Train, evaluate and inspect reinforcement learning agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train an agent with periodic evaluation.
    Train(TrainArgs),
    /// Evaluate a saved agent.
    Eval(EvalArgs),
    /// Serve the visualizer for a saved or freshly initialized agent.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Named preset, e.g. dqn-cartpole.
    #[arg(long, conflicts_with_all = ["config", "algo", "env"])]
    preset: Option<String>,
    /// JSON run config; a run.json from an earlier run also works.
    #[arg(long, conflicts_with_all = ["algo", "env"])]
    config: Option<PathBuf>,
    #[arg(long, requires = "env")]
    algo: Option<String>,
    #[arg(long, requires = "algo")]
    env: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Total training steps.
    #[arg(long)]
    steps: Option<u64>,
    /// Output directory; defaults to results/<run name>/seed<seed>.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Parallel environments.
    #[arg(long)]
    n_envs: Option<usize>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Checkpoint directory holding manifest.json.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Defaults to the environment the agent was trained on.
    #[arg(long)]
    env: Option<String>,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    episodes: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, required_unless_present = "random_agent")]
    checkpoint: Option<PathBuf>,
    /// Serve a freshly initialized agent instead of a checkpoint.
    #[arg(long, conflicts_with = "checkpoint", requires = "env")]
    random_agent: bool,
    /// Algorithm of the random agent; dqn for discrete actions, sac otherwise.
    #[arg(long, requires = "random_agent")]
    algo: Option<String>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long, default_value_t = 8000)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Seeds the session and the random agent.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory with the UI bundle served at `/`.
    #[arg(long)]
    ui_dir: Option<PathBuf>,
}

enum CliError {
    /// Bad arguments: exit code 2.
    Usage(String),
    Failed(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Failed(e)
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn check_algo(algo: &str) -> Result<(), CliError> {
    if ALGORITHMS.contains(&algo) {
        Ok(())
    } else {
        Err(usage(format!("unknown algorithm {algo:?}; registered algorithms: {}", ALGORITHMS.join(", "))))
    }
}

fn check_env(env: &str) -> Result<(), CliError> {
    if ENV_IDS.contains(&env) {
        Ok(())
    } else {
        Err(usage(format!("unknown environment {env:?}; known environments: {}", ENV_IDS.join(", "))))
    }
}

/// A run config file, either bare or wrapped as in `run.json`.
fn read_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut v: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    if let Some(inner) = v.get_mut("config") {
        v = inner.take();
    }
    serde_json::from_value(v).map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// Resolves the flags into a run config and a name for the output directory.
fn resolve_train(args: &TrainArgs) -> Result<(RunConfig, String), CliError> {
    let (mut cfg, name) = if let Some(name) = &args.preset {
        let cfg = preset(name)
            .ok_or_else(|| usage(format!("unknown preset {name:?}; presets: {}", PRESETS.join(", "))))?;
        (cfg, name.clone())
    } else if let Some(path) = &args.config {
        let cfg = read_config(path)?;
        let name = path.file_stem().map_or("run".into(), |s| s.to_string_lossy().into_owned());
        (cfg, name)
    } else {
        let (Some(algo), Some(env)) = (&args.algo, &args.env) else {
            return Err(usage("give --preset, --config, or both --algo and --env"));
        };
        check_algo(algo)?;
        check_env(env)?;
        let agent = algorithm_config(algo, env).expect("algorithm checked above");
        let name = format!("{algo}-{env}");
        let base = preset(&name);
        let cfg = RunConfig {
            env: env.clone(),
            seed: 0,
            steps: base.as_ref().map_or(100_000, |p| p.steps),
            n_envs: 1,
            agent,
            eval: base.map_or_else(EvalConfig::default, |p| p.eval),
            out_dir: None,
            stop_at_score: None,
            save_replay: false,
        };
        (cfg, name)
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(steps) = args.steps {
        cfg.steps = steps;
    }
    if let Some(n) = args.n_envs {
        cfg.n_envs = n;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = Some(out.clone());
    }
    if cfg.out_dir.is_none() {
        cfg.out_dir = Some(PathBuf::from("results").join(&name).join(format!("seed{}", cfg.seed)));
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok((cfg, name))
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let (cfg, name) = resolve_train(&args)?;
    let out = cfg.out_dir.clone().expect("resolved above");
    log::info!("training {name} ({}) on {} for {} steps, seed {}", cfg.agent.algo(), cfg.env, cfg.steps, cfg.seed);
    let outcome = run(&cfg, None).context("training failed")?;
    println!("trained {} steps over {} episodes; results in {}", outcome.steps, outcome.episodes, out.display());
    match (outcome.re_eval, outcome.best_eval) {
        (Some(score), _) => println!("re-eval score {score}"),
        (None, Some((score, step))) => println!("best eval {score} at step {step}"),
        (None, None) => println!("no evaluation phase ran"),
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    if let Some(env) = &args.env {
        check_env(env)?;
    }
    let dir = &args.checkpoint;
    let manifest = Manifest::read(dir).with_context(|| format!("cannot load checkpoint {}", dir.display()))?;
    let agent = load_agent_for_eval(dir).with_context(|| format!("cannot load checkpoint {}", dir.display()))?;
    let env_id = args.env.unwrap_or_else(|| manifest.env_spec.id.clone());
    let mut env = make_env(&env_id).context("cannot create environment")?;
    if env.spec().obs_dim != manifest.env_spec.obs_dim || env.spec().action_space != manifest.env_spec.action_space {
        return Err(anyhow::anyhow!("checkpoint was trained on {:?}, which does not fit {env_id:?}", manifest.env_spec.id).into());
    }
    let eval = EvalConfig {
        budget: PhaseBudget::Episodes { n: args.episodes as usize },
        ..EvalConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let rec = run_evaluation_phase(agent.as_ref(), env.as_mut(), &eval, &mut rng).context("evaluation failed")?;
    println!("mean {} std {} over {} episodes", rec.mean, rec.std, rec.scores.len());
    Ok(())
}

fn serve_session(args: &ServeArgs) -> Result<Session, CliError> {
    if let Some(env) = &args.env {
        check_env(env)?;
    }
    let (agent, env_id) = match &args.checkpoint {
        Some(dir) => {
            let manifest = Manifest::read(dir).with_context(|| format!("cannot load checkpoint {}", dir.display()))?;
            let agent = load_agent_for_eval(dir).with_context(|| format!("cannot load checkpoint {}", dir.display()))?;
            (agent, args.env.clone().unwrap_or(manifest.env_spec.id))
        }
        None => {
            let env_id = args.env.clone().expect("clap requires --env with --random-agent");
            let spec = make_env(&env_id).context("cannot create environment")?.spec().clone();
            let algo = match &args.algo {
                Some(a) => a.clone(),
                None if spec.action_space.is_discrete() => "dqn".into(),
                None => "sac".into(),
            };
            check_algo(&algo)?;
            let cfg = algorithm_config(&algo, &env_id).expect("algorithm checked above");
            let agent = make_agent(&cfg, &spec, args.seed).map_err(|e| usage(e.to_string()))?;
            (agent, env_id)
        }
    };
    let env = make_env(&env_id).context("cannot create environment")?;
    Ok(Session::new(env, agent, args.seed).context("cannot start the session")?)
}

fn cmd_serve(args: ServeArgs) -> Result<(), CliError> {
    let session = serve_session(&args)?;
    let addr: SocketAddr = format!("{}:{}", args.host, args.port)
        .parse()
        .map_err(|e| usage(format!("bad address {}:{}: {e}", args.host, args.port)))?;
    let rt = tokio::runtime::Runtime::new().context("cannot start the runtime")?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("cannot listen on {addr}"))?;
        let local = listener.local_addr().context("no local address")?;
        println!("serving on http://{local}");
        let app = router(AppState::new(session), args.ui_dir);
        let shutdown = async {
            if tokio::signal::ctrl_c().await.is_err() {
                std::future::pending::<()>().await;
            }
            log::info!("interrupted, shutting down");
        };
        rlforge_viz::serve(listener, app, shutdown).await.context("server failed")
    })?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RLFORGE_LOG", "info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Serve(a) => cmd_serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Failed(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
