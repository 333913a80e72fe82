use clap::{Parser, Subcommand};
use optmodel_cli::{export_instance, parse_binding, parse_dims, run, CliError, ConfigFile, RunConfig, CONFIG_ENV};
use optmodel_core::corpus::{list_models, model, GENERATORS, SVM_BOX};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "optmodel", version, about = "Solve optimization problems written in a small modeling language")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a model against data files and write a JSON report.
    Solve(SolveArgs),
    /// Write a synthetic corpus instance (model, CSV data, run.toml).
    Gen {
        /// Generator name; see `optmodel models`.
        name: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// List bundled models and generators, or print one model.
    Models { name: Option<String> },
}

#[derive(clap::Args)]
struct SolveArgs {
    /// TOML run configuration; command-line flags take precedence.
    #[arg(long, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Parameter data, NAME=FILE (CSV or Matrix Market).
    #[arg(long, value_parser = parse_binding)]
    data: Vec<(String, String)>,
    /// Starting value for a variable, NAME=FILE.
    #[arg(long, value_parser = parse_binding)]
    init: Vec<(String, String)>,
    /// Size of a variable the data does not determine, NAME=RxC.
    #[arg(long, value_parser = parse_binding)]
    dim: Vec<(String, String)>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    feas_tol: Option<f64>,
    #[arg(long)]
    comp_tol: Option<f64>,
    #[arg(long)]
    max_outer: Option<usize>,
    #[arg(long)]
    max_inner: Option<usize>,
    /// L-BFGS-B memory size.
    #[arg(long)]
    history: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Report path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(short, long)]
    verbose: bool,
}

fn config(args: SolveArgs) -> Result<RunConfig, CliError> {
    let file = match &args.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let model = args
        .model
        .or(file.model.clone())
        .ok_or_else(|| CliError::Usage("no model given (use --model or a config file)".into()))?;
    let mut cfg = RunConfig::new(model);
    for (k, v) in args.data {
        cfg.data.insert(k, v.into());
    }
    for (k, v) in args.init {
        cfg.init.insert(k, v.into());
    }
    for (k, v) in args.dim {
        cfg.dims.insert(k, parse_dims(&v).map_err(CliError::Usage)?);
    }
    file.apply(&mut cfg)?;
    let s = &mut cfg.solver;
    s.tol = args.tol.or(file.tol).unwrap_or(s.tol);
    s.feas_tol = args.feas_tol.or(file.feas_tol).unwrap_or(s.feas_tol);
    s.comp_tol = args.comp_tol.or(file.comp_tol).unwrap_or(s.comp_tol);
    s.max_outer = args.max_outer.or(file.max_outer).unwrap_or(s.max_outer);
    s.max_inner = args.max_inner.or(file.max_inner).unwrap_or(s.max_inner);
    s.history = args.history.or(file.history).unwrap_or(s.history);
    for (flag, v) in [("--tol", s.tol), ("--feas-tol", s.feas_tol), ("--comp-tol", s.comp_tol)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(CliError::Usage(format!("{flag} must be positive, got {v}")));
        }
    }
    if s.history == 0 {
        return Err(CliError::Usage("--history must be at least 1".into()));
    }
    cfg.seed = args.seed.or(file.seed).unwrap_or(0);
    cfg.out = args.out.or(file.out);
    cfg.verbose = args.verbose;
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<u8, CliError> {
    match cli.command {
        Command::Solve(args) => {
            let cfg = config(args)?;
            let (report, code) = run(&cfg)?;
            if cfg.out.is_none() {
                println!("{}", report.to_json());
            }
            eprintln!(
                "{:?}: objective {:.10e}, outer {}, inner {}, {:.3} s",
                report.status,
                report.objective,
                report.iterations.outer,
                report.iterations.inner,
                report.wall_time_seconds
            );
            Ok(code as u8)
        }
        Command::Gen { name, seed, out } => {
            let run = export_instance(&name, seed, &out)?;
            eprintln!("wrote {}", run.display());
            Ok(0)
        }
        Command::Models { name: None } => {
            for m in list_models().iter().chain([&SVM_BOX]) {
                println!("{:<20} {}", m.name, m.title);
            }
            println!("\ngenerators: {}", GENERATORS.join(", "));
            Ok(0)
        }
        Command::Models { name: Some(n) } => {
            let m = model(&n).ok_or_else(|| CliError::Usage(format!("unknown model `{n}`")))?;
            print!("{}", m.text);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
