use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dcpi::exact::{run_scheme, verify_error_bounds, Depth, ErrorInjector, RateSource, SchemeConfig};
use dcpi::harness::{aggregate_path, auc_improvement, emit_plot_data, read_aggregate, run_sweep, RunConfig};
use dcpi::mdp::{TabularMdp, TabularPolicy, ValueVector};
use dcpi::neural::check_random_losses;
use dcpi::Error;
use log::error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Output root for runs and comparisons.
const OUTPUT_ENV: &str = "DCPI_OUTPUT_DIR";

#[derive(Parser)]
#[command(name = "dcpi", version, about = "Conservative policy iteration: exact verification and deep agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent over one or more seeds.
    Train(TrainArgs),
    /// Run the exact scheme on a tabular MDP and check its error relations.
    ExactVerify(ExactArgs),
    /// Finite-difference check of both training losses on random networks.
    Gradcheck(GradArgs),
    /// Compare two sweeps: AUC improvement of A over B, plus plot data.
    Compare(CompareArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// TOML configuration file with dotted keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed to run; repeat for a sweep. Replaces `run.seeds`.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Total environment steps per seed. Replaces `run.steps`.
    #[arg(long)]
    steps: Option<u64>,
    /// Override any configuration key, e.g. `--set rate.kind=adx`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Continue seeds from their last checkpoint.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct ExactArgs {
    /// MDP file; a random MDP is generated when omitted.
    #[arg(long)]
    mdp: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    states: usize,
    #[arg(long, default_value_t = 3)]
    actions: usize,
    #[arg(long, default_value_t = 0.9)]
    gamma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Evaluation depth m: a positive integer or `inf`.
    #[arg(long, default_value = "1")]
    depth: Depth,
    /// Mixture rate: a number in (0, 1], `kakade`, or `spi`.
    #[arg(long, default_value = "0.5")]
    alpha: String,
    #[arg(long, default_value_t = 50)]
    iterations: usize,
    /// Bound on injected value errors.
    #[arg(long, default_value_t = 0.0)]
    value_error: f64,
    /// Bound on injected policy errors.
    #[arg(long, default_value_t = 0.0)]
    policy_error: f64,
    /// Write the per-iteration loss and envelope to this CSV file.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct GradArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of random networks.
    #[arg(long, default_value_t = 20)]
    count: u64,
    /// Layer sizes, input first.
    #[arg(long, value_delimiter = ',', default_value = "4,16,16,2")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 1e-4)]
    perturbation: f64,
    #[arg(long, default_value_t = 1e-5)]
    tolerance: f64,
}

#[derive(Args)]
struct CompareArgs {
    /// Sweep directory of the candidate.
    #[arg(long)]
    a: PathBuf,
    /// Sweep directory of the reference.
    #[arg(long)]
    b: PathBuf,
    /// Where the plot data goes; defaults to `compare` under the output root.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A failure and the exit code it maps to.
struct Failure(u8, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(1, e.to_string())
    }
}

fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."))
}

fn train(args: TrainArgs) -> Result<(), Failure> {
    let table = match &args.config {
        Some(path) => std::fs::read_to_string(path)
            .map_err(|e| Failure(1, format!("{}: {e}", path.display())))?
            .parse::<toml::Table>()
            .map_err(|e| Failure(1, format!("{}: {e}", path.display())))?,
        None => toml::Table::new(),
    };
    let mut overrides = Vec::new();
    for raw in &args.overrides {
        let (k, v) = raw.split_once('=').ok_or_else(|| Failure(1, format!("expected KEY=VALUE, got `{raw}`")))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    if !args.seeds.is_empty() {
        let list = args.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(", ");
        overrides.push(("run.seeds".into(), format!("[{list}]")));
    }
    if let Some(steps) = args.steps {
        overrides.push(("run.steps".into(), steps.to_string()));
    }
    let mut config = RunConfig::from_table_with_overrides(table, &overrides)?;
    config.output_dir = output_root().join(&config.output_dir);

    let outcome = run_sweep(&config, args.resume)?;
    for (seed, rows) in &outcome.completed {
        let last = rows.last().map_or(f64::NAN, |r| r.score);
        println!("seed {seed}: {} iterations, last score {last:.1}", rows.len());
    }
    for (seed, e) in &outcome.failed {
        println!("seed {seed}: FAILED: {e}");
    }
    println!("aggregate: {}", aggregate_path(&config.output_dir).display());
    match outcome.exit_code() {
        0 => Ok(()),
        code => Err(Failure(code as u8, format!("{} of {} seeds failed", outcome.failed.len(), config.seeds.len()))),
    }
}

fn exact_verify(args: ExactArgs) -> Result<(), Failure> {
    let mdp = match &args.mdp {
        Some(path) => TabularMdp::load(path)?,
        None => TabularMdp::random(args.states, args.actions, args.gamma, &mut ChaCha8Rng::seed_from_u64(args.seed)),
    };
    let rate = match args.alpha.as_str() {
        "kakade" => RateSource::ExactKakade,
        "spi" => RateSource::ExactSpi,
        other => RateSource::Constant(
            other
                .parse()
                .map_err(|_| Failure(1, format!("--alpha: expected a number, `kakade` or `spi`, got `{other}`")))?,
        ),
    };
    let mut scheme = SchemeConfig::new(args.depth, rate, args.iterations);
    if args.value_error > 0.0 || args.policy_error > 0.0 {
        scheme = scheme.with_errors(ErrorInjector::Random {
            value_scale: args.value_error,
            policy_scale: args.policy_error,
            seed: args.seed,
        });
    }
    let v0 = ValueVector::zeros(mdp.n_states());
    let pi0 = TabularPolicy::uniform(mdp.n_states(), mdp.n_actions());
    let trace = run_scheme(&mdp, &scheme, &v0, &pi0)?;
    let report = verify_error_bounds(&mdp, &trace)?;
    if let Some(path) = &args.trace {
        std::fs::write(path, trace.to_csv(mdp.gamma())).map_err(|e| Failure(1, format!("{}: {e}", path.display())))?;
    }
    print!("{}", report.to_toml());
    if report.violations > 0 {
        return Err(Failure(2, format!("{} relation violations", report.violations)));
    }
    Ok(())
}

fn gradcheck(args: GradArgs) -> Result<(), Failure> {
    let mut worst: f64 = 0.0;
    for seed in args.seed..args.seed + args.count {
        let check = check_random_losses(&args.sizes, 16, seed, args.perturbation)?;
        let (q, pi) = (check.q_loss, check.pi_loss);
        println!(
            "seed {seed}: q-loss {:.3e} ({} skipped at kinks), policy-loss {:.3e} ({} skipped)",
            q.max_error, q.skipped_kinks, pi.max_error, pi.skipped_kinks
        );
        worst = worst.max(q.max_error).max(pi.max_error);
    }
    println!("max relative error {worst:.3e}");
    if worst >= args.tolerance {
        return Err(Failure(2, format!("relative error {worst:.3e} exceeds {:.1e}", args.tolerance)));
    }
    Ok(())
}

fn curve(dir: &Path) -> Result<Vec<f64>, Failure> {
    let rows = read_aggregate(aggregate_path(dir))?;
    if rows.iter().any(|r| !r.mean.is_finite()) {
        return Err(Failure(1, format!("{}: some iterations have no finished episode", dir.display())));
    }
    Ok(rows.iter().map(|r| r.mean).collect())
}

fn compare(args: CompareArgs) -> Result<(), Failure> {
    let (a, b) = (curve(&args.a)?, curve(&args.b)?);
    let auc = auc_improvement(&a, &b)?;
    let out = args.out.unwrap_or_else(|| output_root().join("compare"));
    std::fs::create_dir_all(&out).map_err(|e| Failure(1, format!("{}: {e}", out.display())))?;
    emit_plot_data(aggregate_path(&args.a), out.join("a.dat"))?;
    emit_plot_data(aggregate_path(&args.b), out.join("b.dat"))?;
    println!("auc_improvement = {auc}");
    println!("plot data: {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::ExactVerify(a) => exact_verify(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Compare(a) => compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, msg)) => {
            error!("{msg}");
            ExitCode::from(code)
        }
    }
}
