//! Executes a run: a worker pool over scan points, then serialized CSV and
//! manifest output.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use pmdi::keyrate::{optimize_active, optimize_layout, passive_rate, passive_small_ring, active_baseline, RateReport};
use pmdi::source::RegionLayout;
use pmdi::statistics::StatsCache;

use crate::config::{Mode, RunConfig};
use crate::verify::{run_checks, Check};

pub const COLUMNS: [&str; 15] = [
    "distance_km",
    "rate_passive",
    "rate_smallring",
    "rate_active",
    "y11_lower",
    "e11_upper",
    "q_z",
    "qber_z",
    "delta_z",
    "t3",
    "converged_passive",
    "converged_smallring",
    "converged_active",
    "config_hash",
    "note",
];

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Core(#[from] pmdi::Error),
    #[error("thread pool: {0}")]
    Pool(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.to_path_buf(), source }
}

/// One scan point. Fields a mode does not measure stay `None`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Row {
    pub distance_km: f64,
    pub rate_passive: Option<f64>,
    pub rate_smallring: Option<f64>,
    pub rate_active: Option<f64>,
    pub y11_lower: Option<f64>,
    pub e11_upper: Option<f64>,
    pub q_z: Option<f64>,
    pub qber_z: Option<f64>,
    pub delta_z: Option<f64>,
    pub t3: Option<f64>,
    pub converged_passive: Option<bool>,
    pub converged_smallring: Option<bool>,
    pub converged_active: Option<bool>,
    pub note: String,
}

impl Row {
    fn fill_bounds(&mut self, r: &RateReport) {
        self.y11_lower = Some(r.bounds.y11_lower);
        self.e11_upper = Some(r.bounds.e11_upper);
        self.q_z = Some(r.inputs.q_z);
        self.qber_z = Some(r.inputs.qber());
    }

    fn record(&self, hash: &str) -> Vec<String> {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.8e}")).unwrap_or_default();
        let b = |v: Option<bool>| v.map(|x| x.to_string()).unwrap_or_default();
        vec![
            format!("{:.8e}", self.distance_km),
            f(self.rate_passive),
            f(self.rate_smallring),
            f(self.rate_active),
            f(self.y11_lower),
            f(self.e11_upper),
            f(self.q_z),
            f(self.qber_z),
            f(self.delta_z),
            f(self.t3),
            b(self.converged_passive),
            b(self.converged_smallring),
            b(self.converged_active),
            hash.to_string(),
            self.note.clone(),
        ]
    }

    fn note(&mut self, what: &str, e: impl std::fmt::Display) {
        if !self.note.is_empty() {
            self.note.push_str("; ");
        }
        self.note.push_str(&format!("{what}: {e}"));
    }
}

fn passive_layout(cfg: &RunConfig, distance_km: f64, cache: &StatsCache, row: &mut Row) -> pmdi::Result<(RegionLayout, RateReport)> {
    let channel = cfg.channel_at(distance_km)?;
    let settings = cfg.stats_settings();
    let optimize = match cfg.mode {
        Mode::Optimize => true,
        Mode::Smallring => cfg.optimize,
        _ => false,
    };
    let (layout, report) = if optimize {
        let o = optimize_layout(&cfg.layout, &channel, &settings, cfg.f_ec, &cfg.search, Some(cache))?;
        if !o.converged {
            row.note("optimizer", "evaluation budget exhausted");
        }
        (o.layout, o.report)
    } else {
        (cfg.layout, passive_rate(&cfg.layout, &channel, &settings, cfg.f_ec, Some(cache))?)
    };
    row.rate_passive = Some(report.rate);
    row.converged_passive = Some(report.converged);
    row.delta_z = Some(layout.delta_z);
    row.t3 = Some(layout.t3);
    row.fill_bounds(&report);
    Ok((layout, report))
}

fn active(cfg: &RunConfig, distance_km: f64) -> pmdi::Result<RateReport> {
    let channel = cfg.channel_at(distance_km)?;
    let settings = cfg.stats_settings();
    if cfg.active.optimize {
        Ok(optimize_active(&channel, &settings, cfg.f_ec, cfg.active.sweeps)?.1)
    } else {
        active_baseline(&channel, cfg.active.intensities, &settings, cfg.f_ec)
    }
}

/// Evaluates one scan point. Failures are written into the row's note.
pub fn evaluate_point(cfg: &RunConfig, distance_km: f64, cache: &StatsCache) -> Row {
    let mut row = Row { distance_km, ..Row::default() };
    if cfg.mode != Mode::Baseline {
        match passive_layout(cfg, distance_km, cache, &mut row) {
            Ok((layout, _)) if cfg.mode == Mode::Smallring => {
                let channel = cfg.channel_at(distance_km);
                let report = channel.and_then(|ch| {
                    passive_small_ring(&layout, &ch, &cfg.stats_settings(), cfg.f_ec, cfg.rings, false, Some(cache))
                });
                match report {
                    Ok(r) => {
                        row.rate_smallring = Some(r.improved);
                        row.converged_smallring = Some(r.converged);
                    }
                    Err(e) => row.note("smallring", e),
                }
            }
            Ok(_) => {}
            Err(e) => row.note("passive", e),
        }
    }
    if cfg.mode == Mode::Baseline || cfg.with_active {
        match active(cfg, distance_km) {
            Ok(r) => {
                row.rate_active = Some(r.rate);
                row.converged_active = Some(r.converged);
                if cfg.mode == Mode::Baseline {
                    row.fill_bounds(&r);
                }
            }
            Err(e) => row.note("active", e),
        }
    }
    row
}

/// Rows in scan order, computed on a pool of `cfg.threads` workers.
pub fn scan(cfg: &RunConfig, cache: &StatsCache) -> Result<Vec<Row>, RunError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if cfg.threads > 0 {
        builder = builder.num_threads(cfg.threads);
    }
    let pool = builder.build().map_err(|e| RunError::Pool(e.to_string()))?;
    Ok(pool.install(|| cfg.distances_km.par_iter().map(|&d| evaluate_point(cfg, d, cache)).collect()))
}

pub fn write_csv<W: Write>(out: W, rows: &[Row], hash: &str) -> Result<(), RunError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(out);
    w.write_record(COLUMNS)?;
    for r in rows {
        w.write_record(r.record(hash))?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub mode: String,
    pub version: String,
    pub core_version: String,
    pub wall_time_s: f64,
    pub rows: usize,
    pub failed_rows: usize,
    pub results: String,
    pub config: String,
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_stem().map(|s| s.to_os_string()).unwrap_or_else(|| "results".into());
    name.push(".manifest.json");
    output.with_file_name(name)
}

/// What a run produced.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub rows: Vec<Row>,
    pub checks: Vec<Check>,
    pub manifest: Manifest,
}

impl RunSummary {
    /// Non-zero when a check failed or a row carries an error.
    pub fn exit_code(&self) -> i32 {
        let failed_checks = self.checks.iter().any(|c| !c.passed);
        if failed_checks || self.manifest.failed_rows > 0 {
            1
        } else {
            0
        }
    }
}

fn write_checks(path: &Path, checks: &[Check], hash: &str) -> Result<(), RunError> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["check", "passed", "detail", "config_hash"])?;
    for c in checks {
        w.write_record([c.name, if c.passed { "true" } else { "false" }, &c.detail, hash])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Runs `cfg` and writes the results CSV and manifest next to each other.
pub fn run(cfg: &RunConfig) -> Result<RunSummary, RunError> {
    let started = Instant::now();
    let hash = cfg.hash();
    if let Some(dir) = cfg.output.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let (rows, checks) = if cfg.mode == Mode::Verify {
        let checks = run_checks(cfg.seed);
        write_checks(&cfg.output, &checks, &hash)?;
        (Vec::new(), checks)
    } else {
        let cache = match &cfg.cache {
            Some(p) if p.exists() => StatsCache::load(p)?,
            _ => StatsCache::new(),
        };
        let rows = scan(cfg, &cache)?;
        let file = std::fs::File::create(&cfg.output).map_err(io_err(&cfg.output))?;
        write_csv(std::io::BufWriter::new(file), &rows, &hash)?;
        if let Some(p) = &cfg.cache {
            cache.save(p)?;
        }
        (rows, Vec::new())
    };
    let manifest = Manifest {
        config_hash: hash,
        seed: cfg.seed,
        mode: cfg.mode.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        core_version: pmdi::VERSION.to_string(),
        wall_time_s: started.elapsed().as_secs_f64(),
        rows: rows.len(),
        failed_rows: rows.iter().filter(|r| !r.note.is_empty()).count(),
        results: cfg.output.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        config: cfg.canonical(),
    };
    let path = manifest_path(&cfg.output);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(io_err(&path))?;
    Ok(RunSummary { rows, checks, manifest })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_fields_stay_empty() {
        let row = Row { distance_km: 10.0, rate_active: Some(1.5e-3), converged_active: Some(true), ..Row::default() };
        let mut buf = Vec::new();
        write_csv(&mut buf, &[row], "abc").unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.split("\r\n").collect();
        assert_eq!(lines[0], COLUMNS.join(","));
        assert_eq!(lines[1], "1.00000000e1,,,1.50000000e-3,,,,,,,,,true,abc,");
    }

    #[test]
    fn notes_with_commas_are_quoted() {
        let mut row = Row::default();
        row.note("passive", "bad, very bad");
        let mut buf = Vec::new();
        write_csv(&mut buf, &[row], "h").unwrap();
        assert!(String::from_utf8(buf).unwrap().contains("\"passive: bad, very bad\""));
    }

    #[test]
    fn manifest_sits_next_to_results() {
        assert_eq!(manifest_path(Path::new("out/distance_scan.csv")), PathBuf::from("out/distance_scan.manifest.json"));
    }
}
