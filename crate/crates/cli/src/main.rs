use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, Context};
use blockrar::sim::{frontier_sweep, run_scenario, Design, Scenario, ScenarioMetrics, SweepRow, DEFAULT_BURN_IN};
use blockrar::solver::{solve_with, Progress, SolveOptions, DEFAULT_STATE_BUDGET};
use blockrar::store::{self, Encoding};
use blockrar::{lambda_f_threshold, Error as CoreError, Smoothing, SolverConfig};
use blockrar_cli::service::{router, AppState};
use clap::{Args, Parser, Subcommand, ValueEnum};

const EXIT_USAGE: u8 = 2;
const EXIT_CAPACITY: u8 = 3;
const EXIT_MISMATCH: u8 = 4;
const EXIT_BIND: u8 = 5;

#[derive(Parser)]
#[command(
    name = "blockrar",
    version,
    about = "Design and evaluate blocked response-adaptive trials"
)]
struct Cli {
    /// Seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output file (solve, simulate) or directory (sweep).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Policy file encoding.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Binary,
}

impl From<Format> for Encoding {
    fn from(f: Format) -> Self {
        match f {
            Format::Text => Encoding::Text,
            Format::Binary => Encoding::Binary,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the optimal policy and write it to a file.
    Solve(SolveArgs),
    /// Simulate a design and write one row of metrics.
    Simulate(SimulateArgs),
    /// Solve and simulate over a grid of utility weights.
    Sweep(SweepArgs),
    /// Smallest failure weight at which a two-block design can beat one block.
    Threshold(ThresholdArgs),
    /// Serve policies and live trial sessions over HTTP.
    Serve(ServeArgs),
}

#[derive(Args, Clone)]
struct DesignArgs {
    /// Number of patients.
    #[arg(long = "n")]
    n: u32,
    #[arg(long, default_value_t = 4.0)]
    lambda_f: f64,
    #[arg(long, default_value_t = 0.01)]
    lambda_k: f64,
    /// Allowed allocations, comma separated.
    #[arg(long, value_delimiter = ',')]
    phi: Option<Vec<f64>>,
    /// Minimum block size; defaults to ⌈N/8⌉.
    #[arg(long)]
    t_min: Option<u32>,
    /// Block increment.
    #[arg(long, default_value_t = 2)]
    kappa: u32,
    /// Beta smoothing: one value, or four for (successes A, failures A, successes B, failures B).
    #[arg(long, value_delimiter = ',')]
    gamma: Option<Vec<f64>>,
}

impl DesignArgs {
    fn config(&self) -> anyhow::Result<SolverConfig> {
        let mut cfg = SolverConfig::new(self.n, self.lambda_f, self.lambda_k).with_block_increment(self.kappa);
        if let Some(phi) = &self.phi {
            cfg = cfg.with_allocation_set(phi.clone());
        }
        if let Some(t) = self.t_min {
            cfg = cfg.with_min_block(t);
        }
        match self.gamma.as_deref() {
            None => {}
            Some(&[g]) => cfg = cfg.with_smoothing(Smoothing::uniform(g)),
            Some(&[a, b, c, d]) => cfg = cfg.with_smoothing(Smoothing::from_array([a, b, c, d])),
            Some(other) => return Err(usage(format!("--gamma takes 1 or 4 values, got {}", other.len()))),
        }
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    design: DesignArgs,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Largest number of stored states to attempt.
    #[arg(long, default_value_t = DEFAULT_STATE_BUDGET)]
    budget: u64,
    /// Suppress the progress display.
    #[arg(long)]
    quiet: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    Onetoone,
    Rar,
    Brar,
}

#[derive(Args)]
struct SimulateArgs {
    /// Policy file to simulate.
    #[arg(long, conflicts_with = "design", required_unless_present = "design")]
    policy: Option<PathBuf>,
    /// Baseline design to simulate instead of a policy.
    #[arg(long, value_enum)]
    design: Option<Baseline>,
    #[arg(long)]
    p_a: f64,
    #[arg(long)]
    p_b: f64,
    #[arg(long = "n")]
    n: u32,
    #[arg(long, default_value_t = 10_000)]
    sims: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Utility weights for baselines; a policy uses its own.
    #[arg(long, default_value_t = 4.0)]
    lambda_f: f64,
    #[arg(long, default_value_t = 0.01)]
    lambda_k: f64,
    /// Fraction of patients randomized 1:1 before adaptation (rar only).
    #[arg(long, default_value_t = DEFAULT_BURN_IN)]
    burn_in: f64,
}

#[derive(Args)]
struct SweepArgs {
    /// CSV with columns lambda_f,lambda_k.
    #[arg(long, required_unless_present = "preset")]
    grid: Option<PathBuf>,
    /// CSV with columns p_a,p_b.
    #[arg(long, required_unless_present = "preset")]
    scenarios: Option<PathBuf>,
    /// Built-in grid and scenarios.
    #[arg(long, value_enum, conflicts_with_all = ["grid", "scenarios"])]
    preset: Option<Preset>,
    #[arg(long, default_value_t = 10_000)]
    sims: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = DEFAULT_STATE_BUDGET)]
    budget: u64,
    /// Design settings; --lambda-f/--lambda-k are replaced by the grid.
    #[arg(long = "n")]
    n: Option<u32>,
    #[arg(long, value_delimiter = ',')]
    phi: Option<Vec<f64>>,
    #[arg(long)]
    t_min: Option<u32>,
    #[arg(long, default_value_t = 2)]
    kappa: u32,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// N = 20 over λ_F ∈ {2,3,4,5} × λ_K ∈ {0.01,0.025,0.05,0.1}.
    Redesign,
}

#[derive(Args)]
struct ThresholdArgs {
    #[arg(long)]
    p_a: f64,
    #[arg(long)]
    p_b: f64,
    #[arg(long = "n")]
    n: u32,
    /// First block size.
    #[arg(long = "t")]
    t: u32,
    #[arg(long)]
    lambda_k: f64,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "policies")]
    policies: PathBuf,
    #[arg(long, default_value = "sessions")]
    sessions: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: String,
}

/// An error carrying its process exit code.
#[derive(Debug)]
struct Exit {
    code: u8,
    message: String,
}

impl std::fmt::Display for Exit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Exit {}

fn usage(message: String) -> anyhow::Error {
    Exit {
        code: EXIT_USAGE,
        message,
    }
    .into()
}

fn core_error(e: CoreError) -> anyhow::Error {
    let code = match &e {
        CoreError::SolverCapacity { .. } => EXIT_CAPACITY,
        CoreError::DesignPolicyMismatch(_) => EXIT_MISMATCH,
        CoreError::InvalidConfig(_) | CoreError::UndefinedThreshold { .. } | CoreError::NoPower { .. } => EXIT_USAGE,
        _ => 1,
    };
    Exit {
        code,
        message: e.to_string(),
    }
    .into()
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(a) => solve(&cli, a),
        Command::Simulate(a) => simulate(&cli, a),
        Command::Sweep(a) => sweep(&cli, a),
        Command::Threshold(a) => threshold(a),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.downcast_ref::<Exit>().map_or(1, |x| x.code))
        }
    }
}

fn solve(cli: &Cli, args: &SolveArgs) -> anyhow::Result<()> {
    let cfg = args.design.config()?;
    let encoding = Encoding::from(cli.format);
    let out = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("policy.{}", encoding.extension())));
    let opts = SolveOptions {
        state_budget: args.budget,
        threads: args.threads,
    };
    let quiet = args.quiet;
    let start = Instant::now();
    let policy = solve_with(&cfg, &opts, |p: Progress| {
        if !quiet {
            eprint!(
                "\rlevel {}/{} (total {:>4})  states {}/{}",
                p.levels_done, p.levels_total, p.level_total, p.states_done, p.states_total
            );
        }
    })
    .map_err(core_error)?;
    if !quiet {
        eprintln!();
    }
    let elapsed = start.elapsed();
    store::save(&policy, &out, encoding).map_err(core_error)?;
    println!("U* = {:.6}", policy.root_value());
    println!("states = {}", policy.entry_count());
    println!("wall time = {:.3}s", elapsed.as_secs_f64());
    println!("policy = {}", out.display());
    Ok(())
}

const METRIC_COLUMNS: [&str; 8] = [
    "rejection_rate",
    "effect_bias",
    "alloc_diff_mean",
    "alloc_diff_p5",
    "alloc_diff_p95",
    "mean_blocks",
    "utility_mean",
    "utility_sd",
];

fn metric_values(m: &ScenarioMetrics) -> [f64; 8] {
    [
        m.rejection_rate,
        m.effect_bias,
        m.alloc_diff_mean,
        m.alloc_diff_p5,
        m.alloc_diff_p95,
        m.mean_blocks,
        m.utility_mean,
        m.utility_sd,
    ]
}

fn simulate(cli: &Cli, args: &SimulateArgs) -> anyhow::Result<()> {
    let (design, cfg) = match (&args.policy, args.design) {
        (Some(path), _) => {
            let policy = store::load(path).map_err(core_error)?;
            if policy.n_patients() != args.n {
                return Err(Exit {
                    code: EXIT_MISMATCH,
                    message: format!(
                        "policy {} is for N={} but --n is {}",
                        path.display(),
                        policy.n_patients(),
                        args.n
                    ),
                }
                .into());
            }
            let cfg = policy.config().clone();
            (Design::Mdp(Arc::new(policy)), cfg)
        }
        (None, Some(b)) => {
            let design = match b {
                Baseline::Onetoone => Design::OneToOne,
                Baseline::Rar => Design::Rar { burn_in: args.burn_in },
                Baseline::Brar => Design::BlockedRar,
            };
            (design, SolverConfig::new(args.n, args.lambda_f, args.lambda_k))
        }
        (None, None) => return Err(usage("one of --policy or --design is required".into())),
    };
    let scenario = Scenario::new(args.p_a, args.p_b, args.n)
        .with_sims(args.sims)
        .with_alpha(args.alpha)
        .with_seed(cli.seed);
    let metrics = run_scenario(&design, &scenario, &cfg).map_err(core_error)?;

    let mut header = vec!["design", "p_a", "p_b", "n_patients", "n_sims", "alpha", "seed"];
    header.extend(METRIC_COLUMNS);
    let mut row = vec![
        design.label().to_string(),
        args.p_a.to_string(),
        args.p_b.to_string(),
        args.n.to_string(),
        args.sims.to_string(),
        args.alpha.to_string(),
        cli.seed.to_string(),
    ];
    row.extend(metric_values(&metrics).iter().map(f64::to_string));
    let mut buf = csv::Writer::from_writer(Vec::new());
    buf.write_record(&header)?;
    buf.write_record(&row)?;
    let mut bytes = buf.into_inner().map_err(|e| anyhow!("{e}"))?;
    if cli
        .out
        .as_ref()
        .is_some_and(|p| p.extension().is_some_and(|e| e == "json"))
    {
        let mut record = serde_json::Map::new();
        for (k, v) in header.iter().zip(&row) {
            let value = v
                .parse::<f64>()
                .map_or_else(|_| v.clone().into(), serde_json::Value::from);
            record.insert((*k).to_string(), value);
        }
        bytes = serde_json::to_vec_pretty(&record)?;
        bytes.push(b'\n');
    }
    match &cli.out {
        Some(path) => {
            std::fs::write(path, &bytes).with_context(|| format!("writing {}", path.display()))?;
            eprintln!("seed = {}; metrics written to {}", cli.seed, path.display());
        }
        None => {
            std::io::stdout().write_all(&bytes)?;
            eprintln!("seed = {}", cli.seed);
        }
    }
    Ok(())
}

#[derive(serde::Deserialize)]
struct GridRow {
    lambda_f: f64,
    lambda_k: f64,
}

#[derive(serde::Deserialize)]
struct ScenarioRow {
    p_a: f64,
    p_b: f64,
}

fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    r.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn unique(xs: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for x in xs {
        if !out.contains(&x) {
            out.push(x);
        }
    }
    out
}

fn sweep(cli: &Cli, args: &SweepArgs) -> anyhow::Result<()> {
    let (n, grid, rates) = match args.preset {
        Some(Preset::Redesign) => {
            let grid: Vec<(f64, f64)> = [2.0, 3.0, 4.0, 5.0]
                .iter()
                .flat_map(|&f| [0.01, 0.025, 0.05, 0.1].map(|k| (f, k)))
                .collect();
            (
                args.n.unwrap_or(20),
                grid,
                vec![(0.8, 0.4), (0.4, 0.4), (0.6, 0.2), (0.2, 0.2)],
            )
        }
        None => {
            let grid = read_csv::<GridRow>(args.grid.as_ref().unwrap())?
                .into_iter()
                .map(|g| (g.lambda_f, g.lambda_k))
                .collect();
            let rates = read_csv::<ScenarioRow>(args.scenarios.as_ref().unwrap())?
                .into_iter()
                .map(|s| (s.p_a, s.p_b))
                .collect();
            let n = args.n.ok_or_else(|| usage("--n is required without a preset".into()))?;
            (n, grid, rates)
        }
    };
    let mut base = SolverConfig::new(n, 0.0, 0.0).with_block_increment(args.kappa);
    if let Some(phi) = &args.phi {
        base = base.with_allocation_set(phi.clone());
    }
    if let Some(t) = args.t_min {
        base = base.with_min_block(t);
    }
    base.validate().map_err(|e| usage(e.to_string()))?;
    let scenarios: Vec<Scenario> = rates
        .iter()
        .map(|&(a, b)| {
            Scenario::new(a, b, n)
                .with_sims(args.sims)
                .with_alpha(args.alpha)
                .with_seed(cli.seed)
        })
        .collect();
    let opts = SolveOptions {
        state_budget: args.budget,
        threads: None,
    };

    let out_dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("sweep"));
    std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut table = csv::Writer::from_path(out_dir.join("sweep.csv"))?;
    let mut header = vec![
        "lambda_f",
        "lambda_k",
        "p_a",
        "p_b",
        "n_patients",
        "n_sims",
        "seed",
        "status",
    ];
    header.extend(METRIC_COLUMNS);
    header.extend(["power_half_width", "alloc_a_mean", "alloc_a_half_width", "error"]);
    table.write_record(&header)?;
    let mut log = std::fs::File::create(out_dir.join("sweep.log"))?;

    // Grid points are solved one at a time so a failure only marks its rows.
    for (lf, lk) in grid.iter().copied() {
        let start = Instant::now();
        let rows = frontier_sweep(&base, &unique([lf].into_iter()), &[lk], &scenarios, &opts);
        let failed = rows.iter().filter(|r| r.metrics.is_none()).count();
        writeln!(
            log,
            "lambda_f={lf} lambda_k={lk} rows={} failed={failed} seconds={:.3}{}",
            rows.len(),
            start.elapsed().as_secs_f64(),
            rows.iter()
                .find_map(|r| r.error.as_ref())
                .map(|e| format!(" error=\"{e}\""))
                .unwrap_or_default()
        )?;
        for r in &rows {
            table.write_record(sweep_record(r, cli.seed))?;
        }
    }
    table.flush()?;
    println!("sweep written to {}", out_dir.display());
    Ok(())
}

fn sweep_record(r: &SweepRow, seed: u64) -> Vec<String> {
    let s = &r.scenario;
    let mut rec = vec![
        r.failure_weight.to_string(),
        r.block_cost.to_string(),
        s.p_a.to_string(),
        s.p_b.to_string(),
        s.n_patients.to_string(),
        s.n_sims.to_string(),
        seed.to_string(),
        if r.metrics.is_some() { "ok" } else { "failed" }.to_string(),
    ];
    match &r.metrics {
        Some(m) => rec.extend(metric_values(m).iter().map(f64::to_string)),
        None => rec.extend(vec![String::new(); METRIC_COLUMNS.len()]),
    }
    for x in [r.power_half_width, r.alloc_a_mean, r.alloc_a_half_width] {
        rec.push(if x.is_nan() { String::new() } else { x.to_string() });
    }
    rec.push(r.error.clone().unwrap_or_default());
    rec
}

fn threshold(args: &ThresholdArgs) -> anyhow::Result<()> {
    let v = lambda_f_threshold(args.p_a, args.p_b, args.n, args.t, args.lambda_k).map_err(core_error)?;
    println!("{v:.6}");
    Ok(())
}

fn serve(args: &ServeArgs) -> anyhow::Result<()> {
    let state = AppState::load(&args.policies, &args.sessions)?;
    tracing::info!(policies = state.policies.len(), "loaded policies");
    let app = router(Arc::new(state));
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&args.bind).await.map_err(|e| Exit {
            code: EXIT_BIND,
            message: format!("cannot bind {}: {e}", args.bind),
        })?;
        tracing::info!(addr = %listener.local_addr()?, "listening");
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
