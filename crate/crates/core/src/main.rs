use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use wildsphere::config::{parse_schedule, ConfigError, RunConfig};
use wildsphere::pipeline::{export, report_text, run_build, saved_config, verify_dir, write_artifacts, MeshFormat, PipelineError};

/// Builds and certifies finite-depth sphere approximations that swallow a
/// Cantor set.
#[derive(Parser)]
#[command(name = "wildsphere", version)]
struct Cli {
    /// Worker threads; defaults to all cores.
    #[arg(long, env = "WILDSPHERE_THREADS", global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the stages and write meshes, ledger and manifest.
    Build(RunArgs),
    /// Rebuild and run the full certification suite.
    Verify(RunArgs),
    /// Re-emit the stage meshes of a build in another format.
    Export {
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Ply)]
        format: Format,
        /// Target directory; defaults to `<out>/export`.
        #[arg(long)]
        dest: Option<PathBuf>,
    },
    /// Print the ledger and lemma tables of a build.
    Report {
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    depth: Option<usize>,
    /// paper, mesh or geometric:<a>,<ratio>
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Mesh formats to write; OBJ and PLY when omitted.
    #[arg(long, value_enum)]
    format: Vec<Format>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Obj,
    Ply,
    Json,
}

impl From<Format> for MeshFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Obj => MeshFormat::Obj,
            Format::Ply => MeshFormat::Ply,
            Format::Json => MeshFormat::Json,
        }
    }
}

enum Failure {
    Config(String),
    Run(String),
    Checks,
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(c) => Failure::Config(c.to_string()),
            e => Failure::Run(e.to_string()),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn load_config(args: &RunArgs, fallback: bool) -> Result<RunConfig, Failure> {
    let path = args.config.clone().or_else(|| if fallback { saved_config(&args.out) } else { None });
    let mut cfg = match path {
        Some(p) => RunConfig::load(&p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = args.depth {
        cfg.depth = d;
    }
    if let Some(s) = &args.schedule {
        cfg.schedule = parse_schedule(s)?;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Build(args) => {
            let cfg = load_config(&args, false)?;
            let formats: Vec<MeshFormat> = if args.format.is_empty() { vec![MeshFormat::Obj, MeshFormat::Ply] } else { args.format.iter().map(|&f| f.into()).collect() };
            let run = run_build(&cfg)?;
            let manifest = write_artifacts(&run, &args.out, &formats)?;
            print!("{}", run.approx.ledger.to_text());
            println!("wrote {} artifacts to {}", manifest.artifacts.len() + 1, args.out.display());
            if !run.approx.ledger.pass {
                return Err(Failure::Checks);
            }
        }
        Command::Verify(args) => {
            let cfg = load_config(&args, true)?;
            let run = run_build(&cfg)?;
            let report = verify_dir(&run, &args.out)?;
            print!("{}", report.to_text());
            if !report.pass {
                return Err(Failure::Checks);
            }
        }
        Command::Export { out, format, dest } => {
            let dest = dest.unwrap_or_else(|| out.join("export"));
            let entries = export(&out, &dest, format.into())?;
            let mut ok = true;
            for e in &entries {
                println!("{} -> {} ({} vertices, {} triangles): {}", e.source, e.target, e.vertices, e.triangles, if e.round_trip { "round-trip ok" } else { "round-trip MISMATCH" });
                ok &= e.round_trip;
            }
            if !ok {
                return Err(Failure::Checks);
            }
        }
        Command::Report { out } => {
            let (text, pass) = report_text(&out)?;
            print!("{text}");
            if pass == Some(false) {
                return Err(Failure::Checks);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Checks) => ExitCode::from(1),
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Run(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
