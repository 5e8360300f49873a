//! Run configuration: one TOML file, top-level run keys plus sections.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use pmdi::channel::{ChannelParams, Rotation3D};
use pmdi::cubature::{IntegrationSettings, Strategy};
use pmdi::keyrate::SearchSpace;
use pmdi::source::{Normalization, RegionLayout};
use pmdi::statistics::StatsSettings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Passive rate at the configured layout.
    Scan,
    /// Passive rate with Δz and t3 optimized per distance.
    Optimize,
    /// Passive rate and its small-ring refinement.
    Smallring,
    /// Active three-intensity baseline.
    Baseline,
    /// Built-in property checks.
    Verify,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Mode::Scan => "scan",
            Mode::Optimize => "optimize",
            Mode::Smallring => "smallring",
            Mode::Baseline => "baseline",
            Mode::Verify => "verify",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSection {
    pub loss_db_per_km: f64,
    pub detector_efficiency: f64,
    pub dark_count_prob: f64,
    /// Error probability of the misalignment rotation in each arm.
    pub misalignment: f64,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self { loss_db_per_km: 0.2, detector_efficiency: 1.0, dark_count_prob: 1e-6, misalignment: 0.005 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegrationSection {
    pub rel_tol: f64,
    pub max_evals: usize,
    pub replicates: usize,
    pub min_points: usize,
    pub strategy: Strategy,
    pub phase_nodes: usize,
    pub n_max: usize,
    pub normalization: Normalization,
}

impl Default for IntegrationSection {
    fn default() -> Self {
        let s = StatsSettings::default();
        Self {
            rel_tol: s.integration.rel_tol,
            max_evals: s.integration.max_evals,
            replicates: s.integration.replicates,
            min_points: s.integration.min_points,
            strategy: s.integration.strategy,
            phase_nodes: s.phase_nodes,
            n_max: s.n_max,
            normalization: s.normalization,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActiveSection {
    /// Optimize the three intensities per distance; otherwise use `intensities`.
    pub optimize: bool,
    /// Weak, middle, signal.
    pub intensities: [f64; 3],
    pub sweeps: usize,
}

impl Default for ActiveSection {
    fn default() -> Self {
        Self { optimize: true, intensities: [0.01, 0.1, 0.5], sweeps: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    pub distances_km: Vec<f64>,
    #[serde(default = "default_f_ec")]
    pub f_ec: f64,
    /// Rings per party in smallring mode.
    #[serde(default = "default_rings")]
    pub rings: usize,
    /// Optimize Δz and t3 before the small-ring evaluation.
    #[serde(default = "default_true")]
    pub optimize: bool,
    /// Also fill the active-baseline column in passive modes.
    #[serde(default)]
    pub with_active: bool,
    /// Worker threads; 0 uses all cores.
    #[serde(default)]
    pub threads: usize,
    /// Pair-integral cache, loaded if present and rewritten after the run.
    #[serde(default)]
    pub cache: Option<PathBuf>,
    #[serde(default)]
    pub channel: ChannelSection,
    #[serde(default)]
    pub layout: RegionLayout,
    #[serde(default)]
    pub search: SearchSpace,
    #[serde(default)]
    pub integration: IntegrationSection,
    #[serde(default)]
    pub active: ActiveSection,
}

fn default_output() -> PathBuf {
    PathBuf::from("results.csv")
}

fn default_f_ec() -> f64 {
    1.16
}

fn default_rings() -> usize {
    10
}

fn default_true() -> bool {
    true
}

/// A configuration problem with its file position when known.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: Option<PathBuf>,
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let file = self.path.as_deref().map(|p| p.display().to_string()).unwrap_or_else(|| "<config>".into());
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "{file}:{l}:{c}: {}", self.message),
            (Some(l), None) => write!(f, "{file}:{l}: {}", self.message),
            _ => write!(f, "{file}: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// 1-based line and column of a byte offset.
fn position(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rfind('\n').map_or(before.len(), |i| before.len() - i - 1) + 1;
    (line, col)
}

/// Line of `key = ...` inside `[section]` (top level when `section` is empty).
fn locate(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            current = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

impl RunConfig {
    /// Default channel, layout and search settings over the given distances.
    pub fn new(mode: Mode, seed: u64, distances_km: Vec<f64>) -> Self {
        Self {
            mode,
            seed,
            output: default_output(),
            distances_km,
            f_ec: default_f_ec(),
            rings: default_rings(),
            optimize: true,
            with_active: false,
            threads: 0,
            cache: None,
            channel: ChannelSection::default(),
            layout: RegionLayout::default(),
            search: SearchSpace::default(),
            integration: IntegrationSection::default(),
            active: ActiveSection::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let (line, column) = match e.span() {
                Some(span) => {
                    let (l, c) = position(text, span.start);
                    (Some(l), Some(c))
                }
                None => (None, None),
            };
            ConfigError { path: None, line, column, message: e.message().to_string() }
        })?;
        cfg.validate().map_err(|(section, key, message)| ConfigError {
            path: None,
            line: locate(text, section, key),
            column: None,
            message,
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            path: Some(path.to_path_buf()),
            line: None,
            column: None,
            message: format!("cannot read: {e}"),
        })?;
        Self::from_toml(&text).map_err(|e| ConfigError { path: Some(path.to_path_buf()), ..e })
    }

    /// Semantic checks. Errors name the offending (section, key).
    pub fn validate(&self) -> Result<(), (&'static str, &'static str, String)> {
        if self.mode != Mode::Verify {
            if self.distances_km.is_empty() {
                return Err(("", "distances_km", "no scan points".into()));
            }
            if let Some(d) = self.distances_km.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
                return Err(("", "distances_km", format!("distance {d} km must be finite and >= 0")));
            }
            if self.distances_km.windows(2).any(|w| w[1] < w[0]) {
                return Err(("", "distances_km", "distances must be sorted ascending".into()));
            }
        }
        if !(self.f_ec >= 1.0 && self.f_ec.is_finite()) {
            return Err(("", "f_ec", format!("f_ec = {} must be >= 1", self.f_ec)));
        }
        if self.mode == Mode::Smallring && self.rings == 0 {
            return Err(("", "rings", "need at least one ring".into()));
        }
        let ch = &self.channel;
        if !(ch.loss_db_per_km >= 0.0 && ch.loss_db_per_km.is_finite()) {
            return Err(("channel", "loss_db_per_km", format!("loss {} must be >= 0", ch.loss_db_per_km)));
        }
        if !(0.0..=1.0).contains(&ch.detector_efficiency) {
            return Err(("channel", "detector_efficiency", "must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&ch.dark_count_prob) {
            return Err(("channel", "dark_count_prob", "must lie in [0, 1]".into()));
        }
        if !(0.0..=0.5).contains(&ch.misalignment) {
            return Err(("channel", "misalignment", "must lie in [0, 0.5]".into()));
        }
        if let Err(e) = self.layout.validate() {
            return Err(("layout", layout_key(&e.to_string()), e.to_string()));
        }
        let s = &self.search;
        if !(s.delta_z.0 > 0.0 && s.delta_z.0 < s.delta_z.1) {
            return Err(("search", "delta_z", "need 0 < min < max".into()));
        }
        if !(s.t3_max > self.layout.t2 && s.t3_max <= 1.0) {
            return Err(("search", "t3_max", "must lie in (t2, 1]".into()));
        }
        let g = &self.integration;
        if !(g.rel_tol > 0.0 && g.rel_tol < 1.0) {
            return Err(("integration", "rel_tol", "must lie in (0, 1)".into()));
        }
        if g.max_evals == 0 {
            return Err(("integration", "max_evals", "must be positive".into()));
        }
        if g.replicates < 2 {
            return Err(("integration", "replicates", "need at least two".into()));
        }
        if g.phase_nodes == 0 {
            return Err(("integration", "phase_nodes", "must be positive".into()));
        }
        let a = &self.active.intensities;
        if !(a.iter().all(|m| (0.0..=1.0).contains(m)) && a[0] <= a[1] && a[1] <= a[2]) {
            return Err(("active", "intensities", "need 0 <= weak <= middle <= signal <= 1".into()));
        }
        Ok(())
    }

    pub fn channel_at(&self, distance_km: f64) -> Result<ChannelParams, pmdi::Error> {
        let rot = Rotation3D::misalignment(self.channel.misalignment)?;
        Ok(ChannelParams {
            distance_km,
            loss_coeff_db_per_km: self.channel.loss_db_per_km,
            detector_efficiency: self.channel.detector_efficiency,
            dark_count_prob: self.channel.dark_count_prob,
            misalignment_a: rot,
            misalignment_b: rot,
        })
    }

    pub fn stats_settings(&self) -> StatsSettings {
        let g = &self.integration;
        StatsSettings {
            integration: IntegrationSettings {
                rel_tol: g.rel_tol,
                max_evals: g.max_evals,
                replicates: g.replicates,
                min_points: g.min_points,
                strategy: g.strategy,
                seed: self.seed,
                ..IntegrationSettings::default()
            },
            phase_nodes: g.phase_nodes,
            n_max: g.n_max,
            normalization: g.normalization,
        }
    }

    /// Canonical text of everything that affects results. Output location,
    /// thread count and cache path are left out.
    pub fn canonical(&self) -> String {
        let mut c = self.clone();
        c.output = PathBuf::new();
        c.threads = 0;
        c.cache = None;
        toml::to_string(&c).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Best guess of the layout key a validation message is about.
fn layout_key(message: &str) -> &'static str {
    for key in ["delta_z", "delta_xy", "delta_phi", "t1", "t2", "t3", "mu_max"] {
        if message.contains(key) {
            return key;
        }
    }
    "delta_z"
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "mode = \"scan\"\nseed = 7\ndistances_km = [0.0, 10.0]\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let c = RunConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.mode, Mode::Scan);
        assert_eq!(c.channel, ChannelSection::default());
        assert_eq!(c.f_ec, 1.16);
        assert_eq!(c.stats_settings().integration.seed, 7);
    }

    #[test]
    fn empty_scan_is_rejected_at_its_line() {
        let text = "mode = \"scan\"\nseed = 1\n\ndistances_km = []\n";
        let e = RunConfig::from_toml(text).unwrap_err();
        assert_eq!(e.message, "no scan points");
        assert_eq!(e.line, Some(4));
    }

    #[test]
    fn unsorted_distances_rejected() {
        let e = RunConfig::from_toml("mode = \"scan\"\nseed = 1\ndistances_km = [10, 5]\n").unwrap_err();
        assert!(e.message.contains("sorted"));
    }

    #[test]
    fn syntax_errors_carry_position() {
        let text = "mode = \"scan\"\nseed = 1\ndistances_km = [0]\n[channel]\nloss_db_per_km = = 2\n";
        let e = RunConfig::from_toml(text).unwrap_err();
        assert_eq!(e.line, Some(5), "{e}");
        assert!(e.column.is_some());
    }

    #[test]
    fn unknown_keys_are_errors() {
        let text = format!("{MINIMAL}[channel]\nlos_db_per_km = 0.2\n");
        let e = RunConfig::from_toml(&text).unwrap_err();
        assert_eq!(e.line, Some(5), "{e}");
    }

    #[test]
    fn seed_is_mandatory() {
        let e = RunConfig::from_toml("mode = \"scan\"\ndistances_km = [0]\n").unwrap_err();
        assert!(e.message.contains("seed"), "{e}");
    }

    #[test]
    fn semantic_error_in_section_points_at_key() {
        let text = format!("{MINIMAL}\n[layout]\nt1 = 0.3\nt2 = 0.2\n");
        let e = RunConfig::from_toml(&text).unwrap_err();
        assert!(e.line == Some(6) || e.line == Some(7), "{e}");
    }

    #[test]
    fn hash_ignores_output_location() {
        let a = RunConfig::from_toml(MINIMAL).unwrap();
        let mut b = a.clone();
        b.output = "elsewhere.csv".into();
        b.threads = 3;
        assert_eq!(a.hash(), b.hash());
        b.seed = 8;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn canonical_text_round_trips() {
        let a = RunConfig::from_toml(MINIMAL).unwrap();
        let b = RunConfig::from_toml(&a.canonical()).unwrap();
        assert_eq!(a.hash(), b.hash());
    }
}
