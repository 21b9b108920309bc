use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use l1prune_core::cliio::{
    eval_error, generate_problem, run_prune, run_sweep, ActivationMix, EvalInput, GenerateSpec,
    Manifest, RunOptions, DEFAULT_CALIBRATION_SAMPLES, MANIFEST_FILE,
};
use l1prune_core::{PruneError, SparsityPattern, WarmStartKind};

/// Layer-wise post-training pruning with an l1-regularised reconstruction solver.
#[derive(Parser, Debug)]
#[command(name = "l1prune", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic problem (weights, calibration data, manifest).
    Gen(GenArgs),
    /// Prune every unit of a manifest.
    Prune(PruneArgs),
    /// Recompute dense-vs-pruned unit output errors from files.
    Eval(EvalArgs),
    /// Prune at several unstructured rates, one report per rate.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    units: usize,
    #[arg(long, default_value_t = 3)]
    nodes: usize,
    /// Output dimension of every node.
    #[arg(long, default_value_t = 16)]
    m: usize,
    /// Unit input dimension.
    #[arg(long, default_value_t = 16)]
    n: usize,
    /// Calibration samples.
    #[arg(long, default_value_t = DEFAULT_CALIBRATION_SAMPLES)]
    p: usize,
    /// none | relu | alternate
    #[arg(long, default_value = "alternate")]
    activation: ActivationMix,
    #[arg(long, default_value = "unstructured:0.5")]
    pattern: SparsityPattern,
    #[arg(long, default_value = "wanda")]
    warm: WarmStartKind,
}

/// Overrides applied on top of the manifest.
#[derive(Args, Debug)]
struct TuneArgs {
    /// unstructured:<rate> | semi:<n>:<m>
    #[arg(long)]
    pattern: Option<SparsityPattern>,
    /// magnitude | wanda
    #[arg(long)]
    warm: Option<WarmStartKind>,
    #[arg(long)]
    seed: Option<u64>,
    /// Single-threaded gradient evaluation inside each solve.
    #[arg(long)]
    deterministic: bool,
    #[arg(long)]
    lambda0: Option<f64>,
    /// FISTA iterations per solve.
    #[arg(long = "K")]
    k: Option<usize>,
    /// Non-improving outer iterations allowed.
    #[arg(long = "T")]
    t: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    xi: Option<f64>,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Prune each node against the dense input instead of its pruned predecessors.
    #[arg(long)]
    no_correction: bool,
    /// Units pruned concurrently.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    /// Output directory (defaults to the manifest directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PruneArgs {
    /// Manifest file or the directory containing manifest.json.
    manifest: PathBuf,
    #[command(flatten)]
    tune: TuneArgs,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    manifest: PathBuf,
    /// Directory holding `<unit>/<node>.pruned.npy` (defaults to the manifest directory).
    #[arg(long)]
    pruned_dir: Option<PathBuf>,
    /// Seed for held-out activations.
    #[arg(long, default_value_t = 1, conflicts_with = "calibration")]
    seed: u64,
    /// Evaluate on the calibration activations instead.
    #[arg(long)]
    calibration: bool,
}

#[derive(Args, Debug)]
struct SweepArgs {
    manifest: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7")]
    rates: Vec<f64>,
    #[command(flatten)]
    tune: TuneArgs,
    #[command(flatten)]
    run: RunArgs,
}

const EXIT_NODE_FAILURE: u8 = 1;
const EXIT_INVALID: u8 = 2;

fn load_manifest(path: PathBuf) -> Result<Manifest, PruneError> {
    let path = if path.is_dir() { path.join(MANIFEST_FILE) } else { path };
    Manifest::load(path)
}

fn apply(tune: &TuneArgs, m: &mut Manifest) -> Result<(), PruneError> {
    if let Some(p) = tune.pattern {
        m.pattern = p;
    }
    if let Some(w) = tune.warm {
        m.warm_start = w;
    }
    if let Some(s) = tune.seed {
        m.seed = s;
    }
    if tune.deterministic {
        m.tuner.fista.deterministic = true;
    }
    if let Some(v) = tune.lambda0 {
        m.tuner.lambda_init = v;
    }
    if let Some(v) = tune.k {
        m.tuner.fista.max_iters = v;
    }
    if let Some(v) = tune.t {
        m.tuner.max_non_improving = v;
    }
    if let Some(v) = tune.epsilon {
        m.tuner.epsilon = v;
    }
    if let Some(v) = tune.xi {
        m.tuner.xi = v;
    }
    m.tuner.validate()?;
    m.validate()
}

fn options(run: &RunArgs) -> RunOptions {
    RunOptions {
        parallelism: run.parallel,
        corrected: !run.no_correction,
        out_dir: run.out.clone(),
    }
}

fn execute(cmd: Command) -> Result<bool, PruneError> {
    match cmd {
        Command::Gen(a) => {
            let spec = GenerateSpec {
                seed: a.seed,
                units: a.units,
                nodes_per_unit: a.nodes,
                out_dim: a.m,
                in_dim: a.n,
                samples: a.p,
                activation: a.activation,
                pattern: a.pattern,
                warm_start: a.warm,
                ..Default::default()
            };
            generate_problem(&a.out, &spec)?;
            println!("{}", a.out.join(MANIFEST_FILE).display());
            Ok(true)
        }
        Command::Prune(a) => {
            let mut m = load_manifest(a.manifest)?;
            apply(&a.tune, &mut m)?;
            let report = run_prune(&m, &options(&a.run))?;
            print!("{}", report.to_json()?);
            Ok(report.success)
        }
        Command::Eval(a) => {
            let m = load_manifest(a.manifest)?;
            let dir = a.pruned_dir.unwrap_or_else(|| m.base_dir.clone());
            let input = if a.calibration {
                EvalInput::Calibration
            } else {
                EvalInput::HeldOut { seed: a.seed }
            };
            let report = eval_error(&m, &dir, input)?;
            print!("{}", report.to_json()?);
            Ok(report.units.iter().all(|u| u.error.is_none()))
        }
        Command::Sweep(a) => {
            let mut m = load_manifest(a.manifest)?;
            apply(&a.tune, &mut m)?;
            let points = run_sweep(&m, &a.rates, &options(&a.run))?;
            println!("{}", serde_json::to_string_pretty(&points)?);
            Ok(points.iter().all(|p| p.success))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_NODE_FAILURE),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_INVALID)
        }
    }
}
