//! Experiment configuration and its flat `key = value` file format.
//!
//! Keys are the long CLI flag names without the leading dashes, so a config
//! file and a command line describe the same thing:
//!
//! ```text
//! # compare several sync periods
//! d = 100
//! K = 10
//! snr = 6.02
//! modes = central,local:2,local:3,local:T/2,noagg
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::protocol::{Mode, ProtocolConfig};
use crate::seeding::SeedDistance;

/// Environment variable that overrides `seed`.
pub const SEED_ENV: &str = "LOCALKMEANS_SEED";

/// Iterations used when none are given.
pub const DEFAULT_ITERATIONS: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Symmetric2,
    KMixture,
    Csv {
        path: PathBuf,
        label_column: Option<usize>,
        header: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitKind {
    /// Distributed KMeans++ over the generated data.
    KMeansPP,
    /// True centers moved by `rho * Gamma` in a random direction.
    Perturbed,
    /// Centers read from a CSV file, one center per row.
    File(PathBuf),
}

/// Number of local steps, possibly relative to the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalSteps {
    Fixed(usize),
    /// `T / divisor`, at least 1.
    HorizonFraction(usize),
}

impl LocalSteps {
    pub fn resolve(self, iterations: usize) -> usize {
        match self {
            LocalSteps::Fixed(l) => l,
            LocalSteps::HorizonFraction(div) => (iterations / div).max(1),
        }
    }
}

impl fmt::Display for LocalSteps {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LocalSteps::Fixed(l) => write!(f, "{l}"),
            LocalSteps::HorizonFraction(div) => write!(f, "T/{div}"),
        }
    }
}

impl FromStr for LocalSteps {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let parsed = match s.strip_prefix("T/") {
            Some(div) => div.parse().ok().filter(|&d| d > 0).map(LocalSteps::HorizonFraction),
            None => s.parse().ok().filter(|&l| l > 0).map(LocalSteps::Fixed),
        };
        parsed.ok_or_else(|| Error::Config(format!("invalid local step count '{s}'")))
    }
}

/// One protocol variant to run, e.g. `local:3` or `noagg`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSpec {
    pub mode: Mode,
    pub local_steps: LocalSteps,
}

impl RunSpec {
    pub fn new(mode: Mode, local_steps: usize) -> Self {
        Self {
            mode,
            local_steps: LocalSteps::Fixed(local_steps),
        }
    }

    pub fn protocol(&self, iterations: usize, record_every: usize, seed: u64) -> ProtocolConfig {
        ProtocolConfig {
            local_steps: self.local_steps.resolve(iterations),
            iterations,
            mode: self.mode,
            seed,
            record_every,
        }
    }

    /// File-name friendly label, with `L` resolved against `iterations`.
    pub fn label(&self, iterations: usize) -> String {
        let l = self.local_steps.resolve(iterations);
        match self.mode {
            Mode::Centralized => "central".into(),
            Mode::NoAggregation => "noagg".into(),
            Mode::LocalKMeans => format!("local_L{l}"),
            Mode::Symmetric2 => format!("sym2_L{l}"),
        }
    }
}

impl fmt::Display for RunSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(mode_name(self.mode))?;
        match (self.mode, self.local_steps) {
            (Mode::Centralized | Mode::NoAggregation, LocalSteps::Fixed(1)) => Ok(()),
            (_, steps) => write!(f, ":{steps}"),
        }
    }
}

impl FromStr for RunSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, steps) = match s.trim().split_once(':') {
            Some((a, b)) => (a, Some(b.parse::<LocalSteps>()?)),
            None => (s.trim(), None),
        };
        let mode = parse_mode(name)?;
        Ok(Self {
            mode,
            local_steps: steps.unwrap_or(LocalSteps::Fixed(1)),
        })
    }
}

pub fn parse_mode(s: &str) -> Result<Mode> {
    match s {
        "local" => Ok(Mode::LocalKMeans),
        "central" => Ok(Mode::Centralized),
        "noagg" => Ok(Mode::NoAggregation),
        "sym2" => Ok(Mode::Symmetric2),
        other => Err(Error::Config(format!(
            "unknown mode '{other}' (expected local, central, noagg or sym2)"
        ))),
    }
}

pub fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::LocalKMeans => "local",
        Mode::Centralized => "central",
        Mode::NoAggregation => "noagg",
        Mode::Symmetric2 => "sym2",
    }
}

/// Everything needed to reproduce a multi-trial experiment.
///
/// Trial `i` uses seed `base_seed + i`. The data generator draws machine `j`
/// from stream `j` of that seed, and seeding, perturbation and partitioning
/// each use their own reserved stream, so the sub-streams never overlap.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub source: DataSource,
    pub dim: usize,
    /// Clusters. For CSV data `None` means "number of label classes".
    pub num_clusters: Option<usize>,
    pub num_machines: usize,
    pub points_per_machine: usize,
    /// Target two-cluster SNR; used when `sigma` is unset.
    pub snr: f64,
    pub sigma: Option<f64>,
    /// Norm of each true center (`|theta*|` in the two-cluster model).
    pub center_scale: f64,
    pub init: InitKind,
    pub rho: f64,
    pub seed_distance: SeedDistance,
    pub runs: Vec<RunSpec>,
    pub iterations: usize,
    pub record_every: usize,
    pub trials: usize,
    pub base_seed: u64,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            source: DataSource::KMixture,
            dim: 100,
            num_clusters: Some(10),
            num_machines: 20,
            points_per_machine: 200,
            snr: 6.02,
            sigma: None,
            center_scale: 1.0,
            init: InitKind::KMeansPP,
            rho: 0.1,
            seed_distance: SeedDistance::Squared,
            runs: vec![RunSpec::new(Mode::LocalKMeans, 1)],
            iterations: DEFAULT_ITERATIONS,
            record_every: 1,
            trials: 20,
            base_seed: 0,
            out_dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.base_seed.wrapping_add(trial as u64)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.trials == 0 || self.iterations == 0 || self.record_every == 0 {
            return bad("trials, iters and record-every must be positive");
        }
        if self.runs.is_empty() {
            return bad("no run modes given");
        }
        let mut labels: Vec<String> = self.runs.iter().map(|r| r.label(self.iterations)).collect();
        labels.sort();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return bad("the same mode appears twice");
        }
        if self.num_machines == 0 {
            return bad("m must be positive");
        }
        if !matches!(self.source, DataSource::Csv { .. }) {
            if self.dim == 0 || self.points_per_machine == 0 {
                return bad("d and n must be positive");
            }
            match self.sigma {
                Some(s) if !(s >= 0.0 && s.is_finite()) => return bad("sigma must be finite and >= 0"),
                None if !(self.snr > 0.0 && self.snr.is_finite()) => return bad("snr must be positive"),
                _ => {}
            }
            if !(self.center_scale > 0.0 && self.center_scale.is_finite()) {
                return bad("scale must be positive");
            }
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return bad("rho must be finite and >= 0");
        }
        let sym = self.runs.iter().filter(|r| r.mode == Mode::Symmetric2).count();
        match (&self.source, sym) {
            (DataSource::Symmetric2, n) if n != self.runs.len() => {
                bad("symmetric two-cluster data only supports mode sym2")
            }
            (DataSource::Symmetric2, _) => Ok(()),
            (_, 0) => match (&self.source, self.num_clusters) {
                (DataSource::KMixture, None) => bad("K is required for synthetic data"),
                (DataSource::KMixture, Some(k)) if k == 0 || k > self.dim => {
                    bad("synthetic data needs 1 <= K <= d")
                }
                (DataSource::Csv { .. }, _) if self.init == InitKind::Perturbed => {
                    bad("perturbed init needs generated data with known centers")
                }
                _ => Ok(()),
            },
            _ => bad("mode sym2 needs the symmetric two-cluster generator"),
        }
    }

    /// Fields that determine the generated datasets and initial models.
    fn data_key(&self) -> String {
        let mut c = self.clone();
        c.runs = Vec::new();
        c.out_dir = PathBuf::new();
        c.record_every = 1;
        c.to_kv_string()
    }

    /// Whether two configs generate identical data and initializations.
    pub fn same_data_as(&self, other: &Self) -> bool {
        self.data_key() == other.data_key()
    }

    /// Parses a config file body. Unknown keys are an error.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_kv_str(text)?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_kv_str(&text)
    }

    pub fn apply_kv_str(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    /// Sets one option by its key (the CLI flag name without dashes).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
        }
        match key {
            "source" => {
                self.source = match value {
                    "sym2" => DataSource::Symmetric2,
                    "kmix" => DataSource::KMixture,
                    "csv" => match &self.source {
                        DataSource::Csv { .. } => self.source.clone(),
                        _ => return Err(Error::Config("source = csv needs data = PATH".into())),
                    },
                    other => return Err(Error::Config(format!("unknown source '{other}'"))),
                }
            }
            "data" => {
                let (label_column, header) = match &self.source {
                    DataSource::Csv {
                        label_column,
                        header,
                        ..
                    } => (*label_column, *header),
                    _ => (None, false),
                };
                self.source = DataSource::Csv {
                    path: PathBuf::from(value),
                    label_column,
                    header,
                };
            }
            "label-col" | "header" => match &mut self.source {
                DataSource::Csv {
                    label_column,
                    header,
                    ..
                } => {
                    if key == "header" {
                        *header = num::<bool>(key, value)?;
                    } else if value == "none" {
                        *label_column = None;
                    } else {
                        *label_column = Some(num(key, value)?);
                    }
                }
                _ => return Err(Error::Config(format!("{key} needs data = PATH first"))),
            },
            "mode" => {
                let mode = parse_mode(value)?;
                if mode == Mode::Symmetric2 {
                    self.source = DataSource::Symmetric2;
                }
                for r in &mut self.runs {
                    r.mode = mode;
                }
            }
            "L" => {
                let l: LocalSteps = value.parse()?;
                for r in &mut self.runs {
                    r.local_steps = l;
                }
            }
            "modes" => {
                self.runs = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(str::parse)
                    .collect::<Result<_>>()?;
                if self.runs.iter().any(|r| r.mode == Mode::Symmetric2) {
                    self.source = DataSource::Symmetric2;
                }
            }
            "iters" => self.iterations = num(key, value)?,
            "trials" => self.trials = num(key, value)?,
            "seed" => self.base_seed = num(key, value)?,
            "d" => self.dim = num(key, value)?,
            "K" => {
                self.num_clusters = if value == "auto" {
                    None
                } else {
                    Some(num(key, value)?)
                }
            }
            "m" => self.num_machines = num(key, value)?,
            "n" => self.points_per_machine = num(key, value)?,
            "snr" => {
                self.snr = num(key, value)?;
                self.sigma = None;
            }
            "sigma" => {
                self.sigma = if value == "auto" {
                    None
                } else {
                    Some(num(key, value)?)
                }
            }
            "scale" => self.center_scale = num(key, value)?,
            "init" => {
                self.init = match value {
                    "kmpp" => InitKind::KMeansPP,
                    "perturb" => InitKind::Perturbed,
                    v => match v.strip_prefix("file:") {
                        Some(p) => InitKind::File(PathBuf::from(p)),
                        None => {
                            return Err(Error::Config(format!(
                                "unknown init '{v}' (expected kmpp, perturb or file:PATH)"
                            )))
                        }
                    },
                }
            }
            "rho" => self.rho = num(key, value)?,
            "seed-distance" => {
                self.seed_distance = match value {
                    "squared" => SeedDistance::Squared,
                    "euclidean" => SeedDistance::Euclidean,
                    other => return Err(Error::Config(format!("unknown seed-distance '{other}'"))),
                }
            }
            "out" => self.out_dir = PathBuf::from(value),
            "record-every" => self.record_every = num(key, value)?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Applies `LOCALKMEANS_SEED` when it is set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.set("seed", v.trim())
                .map_err(|_| Error::Config(format!("{SEED_ENV}: cannot parse '{v}'")))?;
        }
        Ok(())
    }

    /// Serializes every option; [`ExperimentConfig::from_kv_str`] reads it back.
    pub fn to_kv_string(&self) -> String {
        let mut lines: Vec<String> = Vec::new();
        let mut push = |k: &str, v: String| lines.push(format!("{k} = {v}"));
        match &self.source {
            DataSource::Symmetric2 => push("source", "sym2".into()),
            DataSource::KMixture => push("source", "kmix".into()),
            DataSource::Csv {
                path,
                label_column,
                header,
            } => {
                push("data", path.display().to_string());
                push("label-col", label_column.map_or("none".into(), |c| c.to_string()));
                push("header", header.to_string());
            }
        }
        push("d", self.dim.to_string());
        push("K", self.num_clusters.map_or("auto".into(), |k| k.to_string()));
        push("m", self.num_machines.to_string());
        push("n", self.points_per_machine.to_string());
        push("snr", format!("{:?}", self.snr));
        push("sigma", self.sigma.map_or("auto".into(), |s| format!("{s:?}")));
        push("scale", format!("{:?}", self.center_scale));
        push(
            "init",
            match &self.init {
                InitKind::KMeansPP => "kmpp".into(),
                InitKind::Perturbed => "perturb".into(),
                InitKind::File(p) => format!("file:{}", p.display()),
            },
        );
        push("rho", format!("{:?}", self.rho));
        push(
            "seed-distance",
            match self.seed_distance {
                SeedDistance::Squared => "squared".into(),
                SeedDistance::Euclidean => "euclidean".into(),
            },
        );
        push(
            "modes",
            self.runs.iter().map(ToString::to_string).collect::<Vec<_>>().join(","),
        );
        push("iters", self.iterations.to_string());
        push("record-every", self.record_every.to_string());
        push("trials", self.trials.to_string());
        push("seed", self.base_seed.to_string());
        push("out", self.out_dir.display().to_string());
        let mut s = lines.join("\n");
        s.push('\n');
        s
    }
}
