//! Multi-trial experiment execution and per-iteration summaries.

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::config::{DataSource, ExperimentConfig, InitKind, RunSpec};
use crate::error::{Error, Result};
use crate::lloyd::ClusterModel;
use crate::metrics::IterationRecord;
use crate::mixture::{
    generate_kmixture, generate_symmetric2, load_csv_dataset, partition, read_csv_points, sigma_for_snr,
    DistributedDataset, GroundTruth, LabeledPoints, MixtureSpec,
};
use crate::protocol::{run, run_symmetric2, Mode, RunResult};
use crate::seeding::{local_kmeans_pp_with, perturbed_init};

/// Starting point shared by every mode within a trial.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialModel {
    Centers(ClusterModel),
    /// Single vector for the symmetric two-cluster model.
    Theta(Array1<f64>),
}

impl InitialModel {
    fn checksum(&self) -> String {
        match self {
            InitialModel::Centers(m) => digest(m.centers.iter()),
            InitialModel::Theta(t) => digest(t.iter()),
        }
    }
}

fn digest<'a>(values: impl Iterator<Item = &'a f64>) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_bits().to_le_bytes());
    }
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Dataset and initialization of one trial.
#[derive(Debug, Clone)]
pub struct TrialSetup {
    pub trial: usize,
    pub seed: u64,
    pub data: DistributedDataset,
    pub init: InitialModel,
}

/// Noise level implied by the config: explicit `sigma`, or the one that gives
/// the requested two-cluster SNR with `|theta*| = scale`.
pub fn resolved_sigma(cfg: &ExperimentConfig) -> Result<f64> {
    match cfg.sigma {
        Some(s) => Ok(s),
        None => sigma_for_snr(
            cfg.snr,
            cfg.center_scale,
            cfg.dim,
            cfg.num_machines,
            cfg.points_per_machine,
        ),
    }
}

fn load_source(cfg: &ExperimentConfig) -> Result<Option<LabeledPoints>> {
    match &cfg.source {
        DataSource::Csv {
            path,
            label_column,
            header,
        } => load_csv_dataset(path, *label_column, *header).map(Some),
        _ => Ok(None),
    }
}

fn load_init_file(path: &std::path::Path) -> Result<Array2<f64>> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(read_csv_points(file, None, false)?.points)
}

/// Builds the dataset and initial model of trial `trial`.
pub fn prepare_trial(
    cfg: &ExperimentConfig,
    trial: usize,
    csv: Option<&LabeledPoints>,
    init_file: Option<&Array2<f64>>,
) -> Result<TrialSetup> {
    let seed = cfg.trial_seed(trial);
    let (data, k) = match &cfg.source {
        DataSource::Symmetric2 => {
            let mut theta = Array1::zeros(cfg.dim);
            theta[0] = cfg.center_scale;
            let sigma = resolved_sigma(cfg)?;
            let data = generate_symmetric2(&theta, sigma, cfg.num_machines, cfg.points_per_machine, seed)?;
            (data, 2)
        }
        DataSource::KMixture => {
            let k = cfg
                .num_clusters
                .ok_or_else(|| Error::Config("K is required for synthetic data".into()))?;
            let spec = MixtureSpec::orthonormal(
                cfg.dim,
                k,
                cfg.center_scale,
                resolved_sigma(cfg)?,
                cfg.num_machines,
                cfg.points_per_machine,
            )?;
            (generate_kmixture(&spec, seed)?, k)
        }
        DataSource::Csv { .. } => {
            let lp = csv.ok_or_else(|| Error::Config("CSV source was not loaded".into()))?;
            let k = match (cfg.num_clusters, lp.labels.is_some()) {
                (Some(k), _) => k,
                (None, true) => lp.num_classes(),
                (None, false) => return Err(Error::Config("unlabeled CSV data needs K".into())),
            };
            if lp.labels.is_some() && k != lp.num_classes() {
                return Err(Error::Config(format!(
                    "K = {k} but the label column has {} classes",
                    lp.num_classes()
                )));
            }
            let data = partition(lp.points.view(), lp.labels.as_deref(), cfg.num_machines, seed)?;
            (data, k)
        }
    };

    let symmetric = data.is_symmetric2();
    let init = match (&cfg.init, symmetric) {
        (InitKind::File(_), _) => {
            let centers = init_file
                .ok_or_else(|| Error::Config("init file was not loaded".into()))?
                .clone();
            if symmetric {
                InitialModel::Theta(centers.row(0).to_owned())
            } else {
                if centers.nrows() != k {
                    return Err(Error::Config(format!(
                        "init file has {} centers, expected {k}",
                        centers.nrows()
                    )));
                }
                InitialModel::Centers(ClusterModel::from_centers(centers)?)
            }
        }
        (InitKind::KMeansPP, false) => {
            InitialModel::Centers(local_kmeans_pp_with(&data, k, seed, cfg.seed_distance)?)
        }
        (InitKind::KMeansPP, true) => {
            let m = local_kmeans_pp_with(&data, 2, seed, cfg.seed_distance)?;
            InitialModel::Theta((&m.centers.row(0) - &m.centers.row(1)) / 2.0)
        }
        (InitKind::Perturbed, _) => {
            let truth = data
                .truth()
                .ok_or_else(|| Error::Config("perturbed init needs known centers".into()))?;
            let m = perturbed_init(truth.centers().view(), cfg.rho, seed)?;
            match truth {
                GroundTruth::Symmetric2 { .. } => InitialModel::Theta(m.centers.row(0).to_owned()),
                _ => InitialModel::Centers(m),
            }
        }
    };
    Ok(TrialSetup {
        trial,
        seed,
        data,
        init,
    })
}

/// One trial of one mode.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRun {
    pub trial: usize,
    pub seed: u64,
    pub data_checksum: String,
    pub init_checksum: String,
    pub result: RunResult,
}

/// Metric columns, in output order.
pub const FIELDS: [&str; 7] = ["A_raw", "A_aligned", "G", "Lambda", "Delta", "objective", "rounds"];

pub fn field_value(r: &IterationRecord, field: usize) -> Option<f64> {
    let l = r.labels.as_ref();
    match field {
        0 => l.map(|l| l.a_raw),
        1 => l.map(|l| l.a_aligned),
        2 => l.map(|l| l.g),
        3 => l.map(|l| l.lambda),
        4 => Some(r.delta),
        5 => Some(r.objective),
        6 => Some(r.rounds as f64),
        _ => None,
    }
}

/// Mean and population standard deviation of one field at one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
}

impl Moments {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let (lo, hi) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        // Rounding in the sum can push the mean a hair outside the sample range.
        let mean = (values.iter().sum::<f64>() / n).clamp(lo, hi);
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub t: usize,
    /// One entry per [`FIELDS`] column; `None` when no trial has the field.
    pub fields: Vec<Option<Moments>>,
}

/// Per-iteration mean and spread over trials.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSummary {
    pub rows: Vec<SummaryRow>,
}

impl TrialSummary {
    pub fn from_runs(runs: &[TrialRun]) -> Self {
        let len = runs.first().map_or(0, |r| r.result.records.len());
        let rows = (0..len)
            .map(|idx| {
                let t = runs[0].result.records[idx].t;
                let fields = (0..FIELDS.len())
                    .map(|f| {
                        let vals: Vec<f64> = runs
                            .iter()
                            .filter_map(|r| field_value(&r.result.records[idx], f))
                            .collect();
                        Moments::of(&vals)
                    })
                    .collect();
                SummaryRow { t, fields }
            })
            .collect();
        Self { rows }
    }

    pub fn field(&self, name: &str) -> Option<usize> {
        FIELDS.iter().position(|f| *f == name)
    }

    /// Mean of `name` at iteration `t`.
    pub fn mean_at(&self, name: &str, t: usize) -> Option<f64> {
        let f = self.field(name)?;
        self.rows.iter().find(|r| r.t == t)?.fields[f].map(|m| m.mean)
    }

    pub fn final_row(&self) -> Option<&SummaryRow> {
        self.rows.last()
    }

    pub fn final_mean(&self, name: &str) -> Option<f64> {
        let f = self.field(name)?;
        self.final_row()?.fields[f].map(|m| m.mean)
    }
}

/// All trials of one mode plus their summary.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeOutcome {
    pub spec: RunSpec,
    pub label: String,
    pub trials: Vec<TrialRun>,
    pub summary: TrialSummary,
}

impl ModeOutcome {
    /// Trial means of the initial (t = 0) records for `name`.
    pub fn initial_mean(&self, name: &str) -> Option<f64> {
        let f = FIELDS.iter().position(|x| *x == name)?;
        let vals: Vec<f64> = self
            .trials
            .iter()
            .filter_map(|t| field_value(&t.result.initial, f))
            .collect();
        Moments::of(&vals).map(|m| m.mean)
    }
}

/// Every mode of an experiment, run on the same per-trial data.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub config: ExperimentConfig,
    pub modes: Vec<ModeOutcome>,
}

impl Comparison {
    pub fn mode(&self, label: &str) -> Option<&ModeOutcome> {
        self.modes.iter().find(|m| m.label == label)
    }
}

fn run_one(setup: &TrialSetup, spec: &RunSpec, cfg: &ExperimentConfig) -> Result<RunResult> {
    let protocol = spec.protocol(cfg.iterations, cfg.record_every, setup.seed);
    match (&setup.init, spec.mode) {
        (InitialModel::Theta(theta), Mode::Symmetric2) => run_symmetric2(&setup.data, &protocol, theta.view()),
        (InitialModel::Centers(init), mode) if mode != Mode::Symmetric2 => run(&setup.data, &protocol, init),
        _ => Err(Error::Config("mode does not match the data source".into())),
    }
}

/// Runs every mode of `cfg` over all trials without writing anything.
///
/// Trials run in parallel; each trial builds its data and initial model once
/// and hands the same copies to every mode, so results do not depend on
/// scheduling.
pub fn execute(cfg: &ExperimentConfig) -> Result<Comparison> {
    cfg.validate()?;
    let csv = load_source(cfg)?;
    let init_file = match &cfg.init {
        InitKind::File(p) => Some(load_init_file(p)?),
        _ => None,
    };
    let per_trial: Vec<Vec<TrialRun>> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let setup = prepare_trial(cfg, trial, csv.as_ref(), init_file.as_ref())?;
            let data_checksum = setup.data.checksum();
            let init_checksum = setup.init.checksum();
            cfg.runs
                .iter()
                .map(|spec| {
                    Ok(TrialRun {
                        trial,
                        seed: setup.seed,
                        data_checksum: data_checksum.clone(),
                        init_checksum: init_checksum.clone(),
                        result: run_one(&setup, spec, cfg)?,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let modes = cfg
        .runs
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let trials: Vec<TrialRun> = per_trial.iter().map(|t| t[i].clone()).collect();
            ModeOutcome {
                spec: *spec,
                label: spec.label(cfg.iterations),
                summary: TrialSummary::from_runs(&trials),
                trials,
            }
        })
        .collect();
    Ok(Comparison {
        config: cfg.clone(),
        modes,
    })
}

/// Runs the experiment and writes its CSV files into `cfg.out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Comparison> {
    let cmp = execute(cfg)?;
    super::output::write_all(&cmp, &cfg.out_dir)?;
    Ok(cmp)
}

/// Merges configs that differ only in mode into one comparison, so every mode
/// sees identical datasets and initial models.
pub fn compare_modes(configs: &[ExperimentConfig]) -> Result<Comparison> {
    let first = configs
        .first()
        .ok_or_else(|| Error::Config("no configurations to compare".into()))?;
    if let Some(bad) = configs.iter().position(|c| !c.same_data_as(first)) {
        return Err(Error::Config(format!(
            "configuration {bad} generates different data than configuration 0"
        )));
    }
    let mut merged = first.clone();
    merged.runs = configs.iter().flat_map(|c| c.runs.iter().copied()).collect();
    execute(&merged)
}
