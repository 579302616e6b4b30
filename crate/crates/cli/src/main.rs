mod commands;
mod config;
mod error;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Report;
use crate::config::{ExperimentConfig, Format};
use crate::error::CliError;
use crate::output::Meta;

#[derive(Debug, Parser)]
#[command(name = "eamac", version, about = "Energy- and age-aware random access: simulation, chain analysis and parameter search")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Result file; stdout when omitted.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Also write fig4.csv, fig5_aaoi.csv, fig5_avp.csv and fig6.csv, as far
    /// as the results cover them, next to the output.
    #[arg(long, global = true)]
    emit_plotdata: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Simulate one policy at one network size.
    Simulate,
    /// Simulate a fixed policy, or optimize a grid, over the `sweep` list of D.
    Sweep,
    /// Search a parameter grid at one network size and print the audit table.
    Optimize,
    /// Solve the energy and age chains for one policy.
    Analyze,
    /// Evaluate two or more policies over the `sweep` list of D.
    Compare,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Sweep => "sweep",
            Command::Optimize => "optimize",
            Command::Analyze => "analyze",
            Command::Compare => "compare",
        }
    }
}

/// `out.csv` + `audit` -> `out.audit.csv`.
fn side_path(main: &Path, name: &str) -> PathBuf {
    let stem = main.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let file = match main.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}.{name}.{ext}"),
        None => format!("{stem}.{name}"),
    };
    main.with_file_name(file)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config <path> is required".into()))?;
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|e| CliError::Config(format!("{} is not UTF-8: {e}", path.display())))?;
    let mut cfg = ExperimentConfig::parse(&text)?;
    if let Some(seed) = cli.seed {
        cfg.override_seed(seed);
    }

    let out_path = cli.output.clone().or_else(|| cfg.output.path.clone());
    let format = cli
        .format
        .or(cfg.output.format)
        .or_else(|| {
            out_path
                .as_ref()
                .filter(|p| p.extension().is_some_and(|e| e == "json"))
                .map(|_| Format::Json)
        })
        .unwrap_or_default();

    let report: Report = match cli.command {
        Command::Simulate => commands::simulate(&cfg)?,
        Command::Sweep => commands::sweep(&cfg)?,
        Command::Optimize => {
            let (report, opt) = commands::optimize(&cfg)?;
            eprintln!(
                "best at D={}: {} objective {}",
                opt.num_devices,
                serde_json::to_string(&opt.best_config).unwrap_or_default(),
                opt.best_objective
            );
            report
        }
        Command::Analyze => commands::analyze(&cfg)?,
        Command::Compare => commands::compare(&cfg)?,
    };

    let meta = Meta::new(cli.command.name(), &bytes, cfg.sim.seed);
    if let Some(table) = &report.table {
        output::write_bytes(out_path.as_deref(), &table.render(&meta, format)?)?;
    }
    for (name, table) in &report.side_tables {
        match &out_path {
            Some(p) => output::write_bytes(Some(&side_path(p, name)), &table.render(&meta, format)?)?,
            None => eprintln!("note: {name} table is written only with --output"),
        }
    }
    if cli.emit_plotdata {
        let dir = out_path
            .as_ref()
            .and_then(|p| p.parent())
            .filter(|p| !p.as_os_str().is_empty())
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        for p in output::emit_plotdata(&dir, &report.plot_points, &meta)? {
            eprintln!("wrote {}", p.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(3);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
