use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};

use chunkflow::analysis::{
    compute_metrics, export_queue_series, gnuplot_script, summary_text, AnalysisError,
};
use chunkflow::client::{run_tcp_client, ClientError};
use chunkflow::latency::{LatencyDist, LatencyProfile};
use chunkflow::policy::{NoisePolicy, Policy, PolicyError, ReplayPolicy, ScriptedPointMass};
use chunkflow::scenario::{parse_scenario, ScenarioConfig, ScenarioError, WorldSpec};
use chunkflow::server::{serve, PolicyServer, ServerError};
use chunkflow::sim::{simulate, SimError};
use chunkflow::sweep::{metrics_csv, series_csv, sweep, ParamGrid};
use chunkflow::trace::{RunTrace, TraceError};
use chunkflow::transport::ProtocolError;
use chunkflow::types::{Aggregation, ClientConfig, DistanceMetric, ValidationError};
use chunkflow::world::{PointMassWorld, StaticEnv, WorldConfig, POINT_MASS_JOINT_DIM};

const EXIT_CONFIG: u8 = 2;
const EXIT_PROTOCOL: u8 = 3;
const EXIT_PARTIAL_SWEEP: u8 = 4;

/// Asynchronous action-chunk inference: simulate, serve, run a client, and
/// analyze traces.
///
/// Every flag can also be set through an environment variable named
/// CHUNKFLOW_<FLAG>, e.g. CHUNKFLOW_DT_MS=20.
#[derive(Parser, Debug)]
#[command(name = "chunkflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a scenario on the virtual clock and write its trace.
    Simulate(SimulateArgs),
    /// Serve a stub policy over TCP with injected latency.
    Serve(ServeArgs),
    /// Run the robot client against a policy server on the wall clock.
    Client(ClientArgs),
    /// Compute metrics and plot data from a trace.
    Analyze(AnalyzeArgs),
    /// Simulate a grid of parameters and write long-format CSV.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Scenario file.
    #[arg(long, env = "CHUNKFLOW_SCENARIO")]
    scenario: PathBuf,
    /// Run seed; defaults to the first seed of the scenario.
    #[arg(long, env = "CHUNKFLOW_SEED")]
    seed: Option<u64>,
    /// Where to write the trace.
    #[arg(long, env = "CHUNKFLOW_TRACE", default_value = "out.trace")]
    trace: PathBuf,
}

#[derive(Args, Debug)]
struct ServeArgs {
    /// scripted, noise or replay.
    #[arg(long, env = "CHUNKFLOW_POLICY", default_value = "scripted")]
    policy: String,
    /// Inference latency: const:MS, uniform:LO:HI or lognormal:MU:SIGMA:LO:HI.
    #[arg(long, env = "CHUNKFLOW_LATENCY", default_value = "const:330")]
    latency: LatencyDist,
    /// Client to server transit latency.
    #[arg(long, env = "CHUNKFLOW_C2S", default_value = "const:0")]
    c2s: LatencyDist,
    /// Server to client transit latency.
    #[arg(long, env = "CHUNKFLOW_S2C", default_value = "const:0")]
    s2c: LatencyDist,
    #[arg(long, env = "CHUNKFLOW_LISTEN", default_value = "127.0.0.1:7878")]
    listen: String,
    /// Chunk size.
    #[arg(long, env = "CHUNKFLOW_N", default_value_t = 50)]
    n: usize,
    #[arg(long, env = "CHUNKFLOW_SEED", default_value_t = 0)]
    seed: u64,
    /// Waypoint spacing of the scripted and noise policies.
    #[arg(long, env = "CHUNKFLOW_V_MAX", default_value_t = 0.02)]
    v_max: f64,
    #[arg(long, env = "CHUNKFLOW_NOISE_SIGMA", default_value_t = 0.01)]
    noise_sigma: f64,
    /// Recording for the replay policy, one action per line.
    #[arg(long, env = "CHUNKFLOW_REPLAY_FILE")]
    replay_file: Option<PathBuf>,
    /// Joint count the replay policy announces.
    #[arg(long, env = "CHUNKFLOW_JOINT_DIM", default_value_t = POINT_MASS_JOINT_DIM)]
    joint_dim: usize,
    /// Exit after this many client sessions.
    #[arg(long, env = "CHUNKFLOW_MAX_SESSIONS")]
    max_sessions: Option<usize>,
}

#[derive(Args, Debug)]
struct ClientArgs {
    #[arg(long, env = "CHUNKFLOW_CONNECT", default_value = "127.0.0.1:7878")]
    connect: String,
    /// Take client and world settings from a scenario file; the flags
    /// below override it.
    #[arg(long, env = "CHUNKFLOW_SCENARIO")]
    scenario: Option<PathBuf>,
    /// Chunk size [default: 50].
    #[arg(long, env = "CHUNKFLOW_N")]
    n: Option<usize>,
    /// Queue threshold fraction [default: 0.7].
    #[arg(long, env = "CHUNKFLOW_G")]
    g: Option<f64>,
    /// Similarity filter threshold, 0 disables [default: 0].
    #[arg(long, env = "CHUNKFLOW_EPSILON")]
    epsilon: Option<f64>,
    /// l2 or linf [default: l2].
    #[arg(long, env = "CHUNKFLOW_METRIC")]
    metric: Option<DistanceMetric>,
    /// Control period in ms [default: 33].
    #[arg(long, env = "CHUNKFLOW_DT_MS")]
    dt_ms: Option<u64>,
    /// replace or blend:ALPHA [default: replace].
    #[arg(long, env = "CHUNKFLOW_AGG")]
    agg: Option<Aggregation>,
    /// Control ticks to run [default: 600].
    #[arg(long, env = "CHUNKFLOW_HORIZON")]
    horizon: Option<u64>,
    /// World seed; defaults to the first scenario seed, else 0.
    #[arg(long, env = "CHUNKFLOW_SEED")]
    seed: Option<u64>,
    /// pointmass or static [default: pointmass].
    #[arg(long, env = "CHUNKFLOW_WORLD")]
    world: Option<String>,
    #[arg(long, env = "CHUNKFLOW_TRACE", default_value = "client.trace")]
    trace: PathBuf,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[arg(long, env = "CHUNKFLOW_TRACE")]
    trace: PathBuf,
    /// Scenario the trace came from; without it n, g and dt come from the
    /// trace header.
    #[arg(long, env = "CHUNKFLOW_CONFIG")]
    config: Option<PathBuf>,
    /// Queue series CSV (tick,queue_size,regime_label).
    #[arg(long, env = "CHUNKFLOW_CSV")]
    csv: Option<PathBuf>,
    /// gnuplot script for the CSV.
    #[arg(long, env = "CHUNKFLOW_GNUPLOT")]
    gnuplot: Option<PathBuf>,
    /// Metrics summary; printed to stdout when omitted.
    #[arg(long, env = "CHUNKFLOW_SUMMARY")]
    summary: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Base scenario; built-in defaults when omitted.
    #[arg(long, env = "CHUNKFLOW_SCENARIO")]
    scenario: Option<PathBuf>,
    /// Threshold values.
    #[arg(
        long,
        env = "CHUNKFLOW_G",
        value_delimiter = ',',
        default_value = "0,0.7,1"
    )]
    g: Vec<f64>,
    /// Inference latency specs; empty keeps the scenario's.
    #[arg(long, env = "CHUNKFLOW_LATENCY", value_delimiter = ',')]
    latency: Vec<LatencyDist>,
    /// Chunk sizes; empty keeps the scenario's.
    #[arg(long, env = "CHUNKFLOW_N", value_delimiter = ',')]
    n: Vec<usize>,
    /// Filter thresholds; empty keeps the scenario's.
    #[arg(long, env = "CHUNKFLOW_EPSILON", value_delimiter = ',')]
    epsilon: Vec<f64>,
    /// Seeds; empty keeps the scenario's.
    #[arg(long, env = "CHUNKFLOW_SEEDS", value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Metrics CSV.
    #[arg(long, env = "CHUNKFLOW_OUT", default_value = "sweep.csv")]
    out: PathBuf,
    /// Queue series CSV of every cell.
    #[arg(long, env = "CHUNKFLOW_SERIES")]
    series: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, env = "CHUNKFLOW_THREADS", default_value_t = 4)]
    threads: usize,
}

fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_scenario(&text).with_context(|| format!("in {}", path.display()))
}

fn cmd_simulate(args: SimulateArgs) -> Result<u8> {
    let scenario = load_scenario(&args.scenario)?;
    let seed = args.seed.unwrap_or(scenario.seeds[0]);
    let trace = simulate(&scenario, seed)?;
    trace
        .write_to(&args.trace)
        .with_context(|| format!("writing {}", args.trace.display()))?;
    eprintln!(
        "simulated {} ticks, {} events -> {}",
        trace.header.ticks_run,
        trace.events.len(),
        args.trace.display()
    );
    Ok(0)
}

fn cmd_serve(args: ServeArgs) -> Result<u8> {
    let policy: Box<dyn Policy> = match args.policy.as_str() {
        "scripted" => Box::new(ScriptedPointMass::new(args.v_max)),
        "noise" => Box::new(NoisePolicy::new(args.v_max, args.noise_sigma, args.seed)),
        "replay" => {
            let path = args.replay_file.ok_or_else(|| {
                ScenarioError::Semantic("--policy replay needs --replay-file".into())
            })?;
            Box::new(ReplayPolicy::load(&path, args.joint_dim)?)
        }
        other => return Err(ScenarioError::Semantic(format!("unknown policy {other:?}")).into()),
    };
    if args.n == 0 {
        return Err(ValidationError::InvalidConfig("n must be >= 1".into()).into());
    }
    let profile = LatencyProfile::new(args.c2s, args.latency, args.s2c, args.seed);
    let mut server = PolicyServer::new(policy, args.n, profile);
    let listener =
        TcpListener::bind(&args.listen).with_context(|| format!("binding {}", args.listen))?;
    eprintln!("serving on {}", listener.local_addr()?);
    serve(listener, &mut server, args.max_sessions)?;
    Ok(0)
}

fn cmd_client(args: ClientArgs) -> Result<u8> {
    let scenario = match &args.scenario {
        Some(p) => load_scenario(p)?,
        None => ScenarioConfig::default(),
    };
    let mut config: ClientConfig = scenario.client_config();
    if let Some(v) = args.n {
        config.n = v;
    }
    if let Some(v) = args.g {
        config.g = v;
    }
    if let Some(v) = args.epsilon {
        config.epsilon = v;
    }
    if let Some(v) = args.metric {
        config.metric = v;
    }
    if let Some(v) = args.dt_ms {
        config.delta_t_ms = v;
    }
    if let Some(v) = args.agg {
        config.aggregation = v;
    }
    if let Some(v) = args.horizon {
        config.horizon = v;
    }
    config.validate()?;
    let seed = args.seed.unwrap_or(scenario.seeds[0]);

    let world = match args.world.as_deref() {
        None => scenario.world.clone(),
        Some("pointmass") => WorldSpec::PointMass(WorldConfig::default()),
        Some("static") => WorldSpec::Static(vec![0.0; POINT_MASS_JOINT_DIM]),
        Some(other) => {
            return Err(ScenarioError::Semantic(format!("unknown world {other:?}")).into())
        }
    };
    let action_dim = scenario.default_action_dim();
    let result = match world {
        WorldSpec::PointMass(w) => {
            w.validate()?;
            let mut env = PointMassWorld::new(w, seed);
            run_tcp_client(
                &args.connect,
                config,
                action_dim,
                &mut env,
                seed,
                scenario.stop_on_done,
            )?
        }
        WorldSpec::Static(j) => {
            let mut env = StaticEnv::new(chunkflow::types::JointState::new(j)?);
            run_tcp_client(&args.connect, config, action_dim, &mut env, seed, false)?
        }
    };
    result
        .trace
        .write_to(&args.trace)
        .with_context(|| format!("writing {}", args.trace.display()))?;
    eprintln!(
        "ran {} ticks -> {}",
        result.trace.header.ticks_run,
        args.trace.display()
    );
    match result.error {
        Some(e) => Err(anyhow::Error::from(e).context("run ended early; trace marked incomplete")),
        None => Ok(0),
    }
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<u8> {
    let trace = RunTrace::read_from(&args.trace)
        .with_context(|| format!("reading {}", args.trace.display()))?;
    let config = match &args.config {
        Some(p) => load_scenario(p)?.client_config(),
        None => ClientConfig {
            n: trace.header.n as usize,
            g: trace.header.g,
            delta_t_ms: trace.header.delta_t_ms,
            horizon: trace.header.horizon,
            ..ClientConfig::default()
        },
    };
    let metrics = compute_metrics(&trace, &config)?;
    if let Some(csv) = &args.csv {
        fs::write(csv, export_queue_series(&trace))
            .with_context(|| format!("writing {}", csv.display()))?;
        if let Some(gp) = &args.gnuplot {
            fs::write(
                gp,
                gnuplot_script(&csv.display().to_string(), trace.header.n),
            )
            .with_context(|| format!("writing {}", gp.display()))?;
        }
    } else if args.gnuplot.is_some() {
        return Err(anyhow!("--gnuplot needs --csv"));
    }
    let text = summary_text(&metrics, &config);
    match &args.summary {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(0)
}

fn cmd_sweep(args: SweepArgs) -> Result<u8> {
    let mut base = match &args.scenario {
        Some(p) => load_scenario(p)?,
        None => ScenarioConfig::default(),
    };
    if !args.seeds.is_empty() {
        base.seeds = args.seeds.clone();
    }
    let grid = ParamGrid {
        g: args.g,
        inference_latency: args.latency,
        n: args.n,
        epsilon: args.epsilon,
    };
    let rows = sweep(&base, &grid, args.threads);
    fs::write(&args.out, metrics_csv(&rows))
        .with_context(|| format!("writing {}", args.out.display()))?;
    if let Some(series) = &args.series {
        fs::write(series, series_csv(&rows))
            .with_context(|| format!("writing {}", series.display()))?;
    }
    let failed = rows.iter().filter(|r| r.failed()).count();
    eprintln!(
        "{} cells, {failed} failed -> {}",
        rows.len(),
        args.out.display()
    );
    for row in rows.iter().filter(|r| r.failed()) {
        if let Err(e) = &row.outcome {
            eprintln!(
                "  g={} n={} seed={}: {e}",
                row.cell.g, row.cell.n, row.cell.seed
            );
        }
    }
    Ok(if failed > 0 { EXIT_PARTIAL_SWEEP } else { 0 })
}

/// Maps an error to its exit code by looking through the cause chain.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ProtocolError>() {
            return EXIT_PROTOCOL;
        }
        if let Some(e) = cause.downcast_ref::<ClientError>() {
            return match e {
                ClientError::InvalidChunk(_) | ClientError::Transport(_) => EXIT_PROTOCOL,
                _ => 1,
            };
        }
        if let Some(e) = cause.downcast_ref::<ServerError>() {
            return match e {
                ServerError::Protocol(_) => EXIT_PROTOCOL,
                _ => 1,
            };
        }
        if let Some(e) = cause.downcast_ref::<SimError>() {
            return match e {
                SimError::Scenario(_) | SimError::JointDim { .. } | SimError::Policy(_) => {
                    EXIT_CONFIG
                }
                _ => 1,
            };
        }
        if cause.is::<ScenarioError>()
            || cause.is::<ValidationError>()
            || cause.is::<PolicyError>()
            || matches!(
                cause.downcast_ref::<AnalysisError>(),
                Some(AnalysisError::ConfigMismatch { .. })
            )
        {
            return EXIT_CONFIG;
        }
        if let Some(TraceError::Codec(_) | TraceError::BadMagic | TraceError::MissingHeader) =
            cause.downcast_ref::<TraceError>()
        {
            return EXIT_PROTOCOL;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Serve(a) => cmd_serve(a),
        Command::Client(a) => cmd_client(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
