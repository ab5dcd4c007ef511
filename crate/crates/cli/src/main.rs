//! `localkmeans`: run LocalKMeans experiments and write per-iteration CSVs.
//!
//! Options are read from `--config FILE` first, then `LOCALKMEANS_SEED`, then
//! the command line. Exit status is 0 on success, 1 for invalid
//! configuration and 2 for I/O failures.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use localkmeans::harness::{run_experiment, ExperimentConfig};
use localkmeans::Error;

#[derive(Debug, Parser)]
#[command(name = "localkmeans", version, about = "Simulate LocalKMeans against centralized and no-aggregation baselines")]
struct Cli {
    /// Config file of `key = value` lines using the flag names below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Protocol for a single run: local, central, noagg or sym2.
    #[arg(long, conflicts_with = "modes")]
    mode: Option<String>,
    /// Comma-separated runs, e.g. `central,local:2,local:T/2,noagg`.
    #[arg(long)]
    modes: Option<String>,
    /// Local steps between syncs; `T/k` is relative to the horizon.
    #[arg(long = "L", conflicts_with = "modes")]
    local_steps: Option<String>,
    /// Iterations T.
    #[arg(long)]
    iters: Option<String>,
    #[arg(long)]
    trials: Option<String>,
    /// Base seed; trial i uses seed + i.
    #[arg(long)]
    seed: Option<String>,
    /// Dimension.
    #[arg(long)]
    d: Option<String>,
    /// Number of clusters, or `auto` for labeled CSV data.
    #[arg(long = "K")]
    k: Option<String>,
    /// Machines.
    #[arg(long)]
    m: Option<String>,
    /// Points per machine.
    #[arg(long)]
    n: Option<String>,
    /// Target signal-to-noise ratio r (ignored when --sigma is set).
    #[arg(long)]
    snr: Option<String>,
    #[arg(long)]
    sigma: Option<String>,
    /// Norm of each true center.
    #[arg(long)]
    scale: Option<String>,
    /// kmpp, perturb or file:PATH.
    #[arg(long)]
    init: Option<String>,
    /// Perturbation size relative to the minimum center separation.
    #[arg(long)]
    rho: Option<String>,
    /// KMeans++ score: squared or euclidean.
    #[arg(long = "seed-distance")]
    seed_distance: Option<String>,
    /// CSV file of points to cluster instead of synthetic data.
    #[arg(long)]
    data: Option<String>,
    /// Zero-based label column of the CSV, or `none`.
    #[arg(long = "label-col")]
    label_col: Option<String>,
    /// Whether the CSV has a header row.
    #[arg(long)]
    header: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
    /// Record metrics every this many iterations (the last one is always kept).
    #[arg(long = "record-every")]
    record_every: Option<String>,
}

impl Cli {
    /// Flag values in the order they must be applied.
    fn overrides(&self) -> Vec<(&'static str, &str)> {
        [
            ("data", &self.data),
            ("label-col", &self.label_col),
            ("header", &self.header),
            ("modes", &self.modes),
            ("mode", &self.mode),
            ("L", &self.local_steps),
            ("iters", &self.iters),
            ("trials", &self.trials),
            ("seed", &self.seed),
            ("d", &self.d),
            ("K", &self.k),
            ("m", &self.m),
            ("n", &self.n),
            ("snr", &self.snr),
            ("sigma", &self.sigma),
            ("scale", &self.scale),
            ("init", &self.init),
            ("rho", &self.rho),
            ("seed-distance", &self.seed_distance),
            ("out", &self.out),
            ("record-every", &self.record_every),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.as_deref().map(|v| (k, v)))
        .collect()
    }
}

fn build_config(cli: &Cli) -> localkmeans::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply_env()?;
    for (key, value) in cli.overrides() {
        cfg.set(key, value)
            .map_err(|e| Error::Config(format!("--{key}: {e}")))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = build_config(&cli).and_then(|cfg| run_experiment(&cfg).map(|cmp| (cfg, cmp)));
    match result {
        Ok((cfg, cmp)) => {
            println!("mode\tA_aligned(final)\tobjective(final)\trounds");
            for m in &cmp.modes {
                println!(
                    "{}\t{}\t{}\t{}",
                    m.label,
                    fmt_opt(m.summary.final_mean("A_aligned")),
                    fmt_opt(m.summary.final_mean("objective")),
                    fmt_opt(m.summary.final_mean("rounds")),
                );
            }
            println!("wrote {}", cfg.out_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
