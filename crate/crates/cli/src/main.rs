use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use pmdi_cli::{run, Mode, RunConfig};

/// Distance scans, layout optimization and checks for passive MDI-QKD.
#[derive(Debug, Parser)]
#[command(name = "pmdi", version)]
struct Args {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured mode.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Results CSV; the manifest is written alongside.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let mut cfg = match RunConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(m) = args.mode {
        cfg.mode = m;
    }
    if let Some(o) = args.out {
        cfg.output = o;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(t) = args.threads {
        cfg.threads = t;
    }
    if let Err((_, key, message)) = cfg.validate() {
        eprintln!("error: {}: {key}: {message}", args.config.display());
        return ExitCode::from(2);
    }
    let summary = match run(&cfg) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    for c in &summary.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    for r in summary.rows.iter().filter(|r| !r.note.is_empty()) {
        eprintln!("warning: {} km: {}", r.distance_km, r.note);
    }
    println!(
        "{} rows -> {} ({:.1} s, config {})",
        summary.rows.len(),
        cfg.output.display(),
        summary.manifest.wall_time_s,
        &summary.manifest.config_hash[..12]
    );
    ExitCode::from(summary.exit_code() as u8)
}
