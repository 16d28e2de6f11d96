//! `gdp`: run the workbench from the command line.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 numeric
//! divergence.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gdp_core::pipeline::{run, Command, RunConfig};

#[derive(Parser)]
#[command(
    name = "gdp",
    version,
    about = "Demographic representation pretraining and transfer workbench"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated cells such as `seq-trad,ns-pe`, or `all`.
    #[arg(long, global = true)]
    cells: Option<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Write the synthetic pretraining cohort and downstream datasets.
    Syngen,
    /// Pretrain one model per cell on the CCI target.
    Pretrain,
    /// Export each downstream dataset with its GDP embedding columns.
    Embed,
    /// Evaluate baseline and GDP cells with the boosted classifier.
    Downstream,
    /// Write two-dimensional t-SNE layouts.
    Tsne,
    /// Rebuild tables and combined CSVs from saved results.
    Report,
}

impl Cmd {
    fn command(self) -> Command {
        match self {
            Cmd::Syngen => Command::Syngen,
            Cmd::Pretrain => Command::Pretrain,
            Cmd::Embed => Command::Embed,
            Cmd::Downstream => Command::Downstream,
            Cmd::Tsne => Command::Tsne,
            Cmd::Report => Command::Report,
        }
    }
}

fn config(common: &Common) -> gdp_core::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
    if let Some(c) = &common.cells {
        cfg.cells = c.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = cli.command.command();
    let result = config(&cli.common).and_then(|cfg| {
        let m = run(command, &cfg)?;
        Ok((cfg, m))
    });
    match result {
        Ok((cfg, m)) => {
            println!("{} ok: manifest {}", command.name(), m.manifest_id);
            for (path, hash) in &m.outputs {
                println!("  {}  {}", &hash[..12], cfg.out_dir.join(path).display());
            }
            for d in &m.design.embedder_downgrades {
                eprintln!("warning: {d}");
            }
            if matches!(command, Command::Downstream | Command::Report) {
                if let Ok(text) = std::fs::read_to_string(cfg.out_dir.join("reports/summary.txt")) {
                    println!("\n{text}");
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
