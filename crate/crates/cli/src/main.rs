use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use ergolab_cli::{emit, parse_config, run, ExperimentConfig, ExperimentKind, OutputFormat, EXIT_CONFIG};
use ergolab_core::{SystemDescriptor, SystemKind};

#[derive(Parser)]
#[command(name = "ergolab", version, about = "Statistical experiments on chaotic maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `output.dir` (default `out`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `output.format`.
        #[arg(long, value_enum)]
        format: Option<Format>,
        /// Worker threads; results do not depend on this.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// List experiments and systems.
    List,
    /// Check a config file without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn load(path: &PathBuf) -> Result<ExperimentConfig, ExitCode> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        eprintln!("error: cannot read {}: {e}", path.display());
        ExitCode::from(EXIT_CONFIG as u8)
    })?;
    parse_config(&text).map_err(|errors| {
        eprintln!("error: {} has {} problem(s):", path.display(), errors.0.len());
        for issue in &errors.0 {
            eprintln!("  {issue}");
        }
        ExitCode::from(EXIT_CONFIG as u8)
    })
}

fn list() {
    println!("experiments:");
    for k in ExperimentKind::ALL {
        println!("  {:<24}{}", k.name(), k.description());
    }
    println!("systems:");
    for k in SystemKind::ALL {
        let d = SystemDescriptor::default_for(k);
        let params: Vec<String> = d.params().iter().map(|(n, v)| format!("system.{n}={v}")).collect();
        println!("  {:<24}{}", k.name(), params.join(" "));
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::List => {
            list();
            ExitCode::SUCCESS
        }
        Command::Validate { config } => match load(&config) {
            Ok(c) => {
                println!("ok: {} on {}", c.experiment, c.system.label());
                ExitCode::SUCCESS
            }
            Err(code) => code,
        },
        Command::Run {
            config,
            out,
            format,
            threads,
        } => {
            let cfg = match load(&config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            if let Some(n) = threads {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    eprintln!("error: cannot configure {n} threads: {e}");
                    return ExitCode::from(EXIT_CONFIG as u8);
                }
            }
            let started = Instant::now();
            let report = match run(&cfg) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(e.exit_code() as u8);
                }
            };
            eprintln!("{} finished in {:.2} s", cfg.experiment, started.elapsed().as_secs_f64());
            let format = match format {
                Some(Format::Csv) => OutputFormat::Csv,
                Some(Format::Json) => OutputFormat::Json,
                None => cfg.format,
            };
            let dir = out.or(cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
            match emit(&report, format, &dir) {
                Ok(paths) => {
                    for p in paths {
                        println!("{}", p.display());
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::FAILURE;
                }
            }
            for w in &report.warnings {
                eprintln!("warning [{}]: {}", w.code, w.message);
            }
            ExitCode::from(report.status.exit_code() as u8)
        }
    }
}
