use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use rrapinn::experiment::{
    self, apply_assignments, AblationConfig, ExperimentConfig, Method, OUTPUT_ROOT_ENV,
};
use rrapinn::pde::ProblemKind;
use rrapinn::trainer::Penalty;

/// Tail-risk-aware PINN training and evaluation.
#[derive(Parser, Debug)]
#[command(name = "rrapinn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one method on one problem for every seed.
    Run(ExperimentArgs),
    /// Compare methods on one problem, reusing persisted runs.
    Compare {
        #[command(flatten)]
        args: ExperimentArgs,
        /// Comma-separated methods (default: all).
        #[arg(long, value_delimiter = ',')]
        methods: Vec<Method>,
    },
    /// Sweep the tail level alpha over several problems.
    Ablate(AblateArgs),
    /// Export the residual survival curve of a run directory.
    Ccdf {
        run_dir: PathBuf,
        /// Also render ccdf.svg.
        #[arg(long)]
        svg: bool,
    },
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// Experiment TOML file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    problem: Option<ProblemKind>,
    #[arg(long)]
    method: Option<Method>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Override a config key, e.g. `train.epochs=3000`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    assignments: Vec<String>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct OutputArgs {
    /// Output root; takes precedence over the config's output_dir.
    #[arg(long, env = OUTPUT_ROOT_ENV)]
    output_root: Option<PathBuf>,
}

impl OutputArgs {
    fn resolve(&self, fallback: &Path) -> PathBuf {
        self.output_root.clone().unwrap_or_else(|| fallback.to_path_buf())
    }
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    problems: Vec<ProblemKind>,
    #[arg(long, value_delimiter = ',')]
    alphas: Vec<f64>,
    /// `hinge` or `mean_excess`.
    #[arg(long, value_parser = parse_penalty)]
    penalty: Option<Penalty>,
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    assignments: Vec<String>,
    #[command(flatten)]
    output: OutputArgs,
}

fn parse_penalty(s: &str) -> Result<Penalty, String> {
    match s {
        "hinge" => Ok(Penalty::Hinge),
        "mean_excess" | "me" => Ok(Penalty::MeanExcess),
        _ => Err(format!("unknown penalty '{s}' (expected hinge or mean_excess)")),
    }
}

fn experiment_config(args: &ExperimentArgs, default_method: Method) -> Result<ExperimentConfig> {
    let mut cfg = match (&args.config, args.problem) {
        (Some(path), _) => ExperimentConfig::load(path)
            .with_context(|| format!("loading {}", path.display()))?,
        (None, Some(problem)) => ExperimentConfig::new(problem, args.method.unwrap_or(default_method)),
        (None, None) => bail!("either --config or --problem is required"),
    };
    if args.config.is_some() {
        if let Some(p) = args.problem {
            cfg.problem = p;
        }
        if let Some(m) = args.method {
            cfg.method = m;
        }
    }
    if !args.seeds.is_empty() {
        cfg.seeds = args.seeds.clone();
    }
    Ok(cfg.with_assignments(&args.assignments)?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            let cfg = experiment_config(&args, Method::Baseline)?;
            let root = args.output.resolve(&cfg.output_dir);
            for s in experiment::run(&cfg, &root)? {
                println!(
                    "{}  rel_l2={:.4e}  l_inf={:.4e}  q95_residual={:.4e}  q95_error={:.4e}",
                    s.dir.display(),
                    s.metrics.rel_l2,
                    s.metrics.l_inf,
                    s.metrics.q95_residual,
                    s.metrics.q95_error
                );
            }
        }
        Command::Compare { args, methods } => {
            let cfg = experiment_config(&args, Method::Baseline)?;
            let root = args.output.resolve(&cfg.output_dir);
            let methods = if methods.is_empty() {
                Method::ALL.to_vec()
            } else {
                methods
            };
            let rows = experiment::compare(&cfg, &methods, &root)?;
            print!("{}", experiment::comparison_csv(&rows));
        }
        Command::Ablate(args) => {
            let mut cfg = match &args.config {
                Some(path) => AblationConfig::load(path)
                    .with_context(|| format!("loading {}", path.display()))?,
                None => AblationConfig::default(),
            };
            if !args.problems.is_empty() {
                cfg.problems = args.problems.clone();
            }
            if !args.alphas.is_empty() {
                cfg.alphas = args.alphas.clone();
            }
            if let Some(p) = args.penalty {
                cfg.penalty = p;
            }
            if !args.seeds.is_empty() {
                cfg.seeds = args.seeds.clone();
            }
            let cfg = apply_assignments(&cfg, &args.assignments)?;
            let root = args.output.resolve(&cfg.output_dir);
            println!("scope,alpha,rel_l2,mean_abs_residual,final_eps");
            for r in experiment::ablate(&cfg, &root)? {
                println!(
                    "{},{},{:e},{:e},{:e}",
                    r.scope, r.alpha, r.rel_l2, r.mean_abs_residual, r.final_eps
                );
            }
        }
        Command::Ccdf { run_dir, svg } => {
            let curve = experiment::ccdf(&run_dir, svg)?;
            println!(
                "wrote {} ({} thresholds)",
                run_dir.join("ccdf.csv").display(),
                curve.len()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
