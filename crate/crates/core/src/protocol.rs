//! The LocalKMeans round structure.
//!
//! For `t = 0..T`: whenever `L` divides `t` the server aggregates the local
//! models (centers weighted by cluster size) and broadcasts the result, and
//! every machine overwrites its local centers with it. Then each machine runs
//! one Lloyd step on its own points.
//!
//! The two baselines are run modes: `Centralized` is LocalKMeans with `L = 1`
//! and `NoAggregation` never communicates after the shared initialization.
//! `Symmetric2` is the two-cluster variant where each machine keeps a single
//! vector and the server averages those vectors without weights.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::lloyd::{assign, lloyd_step, Assignment, ClusterModel};
use crate::metrics::{IterationRecord, Observer};
use crate::mixture::DistributedDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    LocalKMeans,
    Centralized,
    NoAggregation,
    Symmetric2,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolConfig {
    /// `L`: local steps between aggregations.
    pub local_steps: usize,
    /// `T`: total iterations.
    pub iterations: usize,
    pub mode: Mode,
    pub seed: u64,
    /// Record metrics at every `record_every`-th iteration (and always at `T`).
    pub record_every: usize,
}

impl ProtocolConfig {
    pub fn new(mode: Mode, local_steps: usize, iterations: usize) -> Self {
        Self {
            local_steps,
            iterations,
            mode,
            seed: 0,
            record_every: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.local_steps == 0 || self.iterations == 0 || self.record_every == 0 {
            return Err(Error::invalid("L, T and record_every must all be positive"));
        }
        Ok(())
    }

    /// `L` as actually used; centralized runs always aggregate every step.
    pub fn effective_local_steps(&self) -> usize {
        match self.mode {
            Mode::Centralized => 1,
            _ => self.local_steps,
        }
    }

    pub fn syncs_at(&self, t: usize) -> bool {
        self.mode != Mode::NoAggregation && t.is_multiple_of(self.effective_local_steps())
    }

    /// Aggregations performed over a full run.
    pub fn expected_rounds(&self) -> usize {
        (0..self.iterations).filter(|&t| self.syncs_at(t)).count()
    }

    pub fn records_at(&self, t: usize) -> bool {
        t > 0 && (t.is_multiple_of(self.record_every) || t == self.iterations)
    }
}

/// Communication so far, counted in scalars per machine.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CommCounters {
    pub rounds: usize,
    pub scalars_up: usize,
    pub scalars_down: usize,
}

/// Size-weighted average of the local models, one cluster at a time.
///
/// Machines are summed in index order. A cluster with zero total size keeps
/// `prev`'s center. When every contributing machine holds the same center the
/// result is that center exactly.
pub fn aggregate(local: &[ClusterModel], prev: &ClusterModel) -> Result<ClusterModel> {
    check_shapes(local, prev)?;
    let (k, d) = prev.centers.dim();
    let mut centers = Array2::<f64>::zeros((k, d));
    let mut sizes = vec![0usize; k];
    for c in 0..k {
        let contributors: Vec<&ClusterModel> = local.iter().filter(|l| l.sizes[c] > 0).collect();
        let total: usize = contributors.iter().map(|l| l.sizes[c]).sum();
        sizes[c] = total;
        let mut out = centers.row_mut(c);
        match contributors.as_slice() {
            [] => out.assign(&prev.centers.row(c)),
            [first, rest @ ..] if rest.iter().all(|l| l.centers.row(c) == first.centers.row(c)) => {
                out.assign(&first.centers.row(c))
            }
            _ => {
                for l in &contributors {
                    out.scaled_add(l.sizes[c] as f64, &l.centers.row(c));
                }
                out /= total as f64;
            }
        }
    }
    Ok(ClusterModel { centers, sizes })
}

/// Plain average of the local models, used by the two-cluster variant.
pub fn average_unweighted(local: &[ClusterModel], prev: &ClusterModel) -> Result<ClusterModel> {
    check_shapes(local, prev)?;
    let first = &local[0];
    let centers = if local.iter().all(|l| l.centers == first.centers) {
        first.centers.clone()
    } else {
        let mut sum = Array2::<f64>::zeros(prev.centers.dim());
        for l in local {
            sum += &l.centers;
        }
        sum / local.len() as f64
    };
    let sizes = (0..prev.k())
        .map(|c| local.iter().map(|l| l.sizes[c]).sum())
        .collect();
    Ok(ClusterModel { centers, sizes })
}

fn check_shapes(local: &[ClusterModel], prev: &ClusterModel) -> Result<()> {
    if local.is_empty() {
        return Err(Error::invalid("aggregation needs at least one local model"));
    }
    for l in local {
        if l.k() != prev.k() {
            return Err(Error::ClusterCountMismatch {
                expected: prev.k(),
                found: l.k(),
            });
        }
        crate::error::check_dim(prev.dim(), l.dim())?;
    }
    Ok(())
}

/// Two-cluster local step: `z = sign<x, theta>` (ties to `+1`), then
/// `theta = mean(z * x)`. Labels are returned as indices, `+1 -> 0`, `-1 -> 1`.
pub fn symmetric2_step(points: ArrayView2<f64>, theta: ArrayView1<f64>) -> (Assignment, ClusterModel) {
    let n = points.nrows();
    let mut sum = ndarray::Array1::<f64>::zeros(points.ncols());
    let mut labels = Vec::with_capacity(n);
    for p in points.outer_iter() {
        if p.dot(&theta) >= 0.0 {
            sum += &p;
            labels.push(0);
        } else {
            sum -= &p;
            labels.push(1);
        }
    }
    let centers = (sum / n as f64).insert_axis(Axis(0));
    (Assignment { labels }, ClusterModel { centers, sizes: vec![n] })
}

fn symmetric2_labels(points: ArrayView2<f64>, theta: ArrayView1<f64>) -> Assignment {
    Assignment {
        labels: points
            .outer_iter()
            .map(|p| usize::from(p.dot(&theta) < 0.0))
            .collect(),
    }
}

/// Everything the driver holds between iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct RunState {
    pub t: usize,
    pub local_models: Vec<ClusterModel>,
    /// The aggregate of the current local models. Equals the broadcast model
    /// right after a sync; otherwise it is the virtual iterate, which no
    /// machine actually holds.
    pub global_model: ClusterModel,
    /// `z^(t)` on each machine.
    pub assignments: Vec<Assignment>,
    pub comm: CommCounters,
    /// Whether an aggregation happened at the current `t`.
    pub synced: bool,
    symmetric: bool,
}

impl RunState {
    /// Every machine starts from `init`. Local sizes, which the first
    /// aggregation needs, come from one assignment pass against `init`.
    pub fn new(data: &DistributedDataset, init: &ClusterModel) -> Result<Self> {
        crate::error::check_dim(init.dim(), data.dim())?;
        let mut local_models = Vec::with_capacity(data.num_machines());
        let mut assignments = Vec::with_capacity(data.num_machines());
        for b in data.blocks() {
            let a = assign(b.view(), init.centers.view())?;
            local_models.push(ClusterModel {
                centers: init.centers.clone(),
                sizes: a.counts(init.k()),
            });
            assignments.push(a);
        }
        let global_model = aggregate(&local_models, init)?;
        Ok(Self {
            t: 0,
            local_models,
            global_model,
            assignments,
            comm: CommCounters::default(),
            synced: false,
            symmetric: false,
        })
    }

    /// Two-cluster start: every machine holds `theta` as its single vector.
    pub fn new_symmetric2(data: &DistributedDataset, theta: ArrayView1<f64>) -> Result<Self> {
        crate::error::check_dim(theta.len(), data.dim())?;
        let n = data.points_per_machine();
        let centers = theta.to_owned().insert_axis(Axis(0));
        let local_models = vec![
            ClusterModel {
                centers: centers.clone(),
                sizes: vec![n],
            };
            data.num_machines()
        ];
        let assignments = data
            .blocks()
            .iter()
            .map(|b| symmetric2_labels(b.view(), theta))
            .collect();
        let global_model = average_unweighted(&local_models, &local_models[0])?;
        Ok(Self {
            t: 0,
            local_models,
            global_model,
            assignments,
            comm: CommCounters::default(),
            synced: false,
            symmetric: true,
        })
    }

    pub fn is_symmetric2(&self) -> bool {
        self.symmetric
    }

    /// Aggregate and broadcast if `config` calls for a sync at the current `t`.
    pub fn sync_if_due(&mut self, config: &ProtocolConfig) -> Result<bool> {
        self.synced = config.syncs_at(self.t);
        if !self.synced {
            return Ok(false);
        }
        let global = if self.symmetric {
            average_unweighted(&self.local_models, &self.global_model)?
        } else {
            aggregate(&self.local_models, &self.global_model)?
        };
        let m = self.local_models.len();
        let (k, d) = global.centers.dim();
        for l in &mut self.local_models {
            l.centers.assign(&global.centers);
        }
        self.global_model = global;
        self.comm.rounds += 1;
        let up = if self.symmetric { d } else { k * (d + 1) };
        self.comm.scalars_up += m * up;
        self.comm.scalars_down += m * k * d;
        Ok(true)
    }

    /// One local step on every machine, then recompute the virtual iterate.
    pub fn local_update(&mut self, data: &DistributedDataset) -> Result<()> {
        for (i, block) in data.blocks().iter().enumerate() {
            let (a, model) = if self.symmetric {
                symmetric2_step(block.view(), self.local_models[i].centers.row(0))
            } else {
                lloyd_step(block.view(), &self.local_models[i])?
            };
            self.assignments[i] = a;
            self.local_models[i] = model;
        }
        self.global_model = if self.symmetric {
            average_unweighted(&self.local_models, &self.global_model)?
        } else {
            aggregate(&self.local_models, &self.global_model)?
        };
        self.t += 1;
        self.synced = false;
        Ok(())
    }

    /// Labels `z^(t)` of every machine.
    pub fn labels(&self) -> Vec<Vec<usize>> {
        self.assignments.iter().map(|a| a.labels.clone()).collect()
    }

    /// Aggregations that steps `0..t` have consumed.
    pub fn rounds_before_t(&self) -> usize {
        self.comm.rounds - usize::from(self.synced)
    }

    fn observe(&self, observer: &Observer, data: &DistributedDataset) -> Result<IterationRecord> {
        let labels = self.labels();
        let rounds = self.rounds_before_t();
        if self.symmetric {
            let expand = |m: &ClusterModel| -> Array2<f64> {
                let row = m.centers.row(0);
                ndarray::stack(Axis(0), &[row, (-&row).view()]).expect("same length")
            };
            let local_full: Vec<Array2<f64>> = self.local_models.iter().map(expand).collect();
            let local_views: Vec<ArrayView2<f64>> = local_full.iter().map(|c| c.view()).collect();
            let single: Vec<ArrayView2<f64>> = self.local_models.iter().map(|m| m.centers.view()).collect();
            let global_full = expand(&self.global_model);
            observer.record(
                data,
                self.t,
                &labels,
                &local_views,
                global_full.view(),
                Some((&single, self.global_model.centers.view())),
                rounds,
                self.synced,
            )
        } else {
            let local_views: Vec<ArrayView2<f64>> = self.local_models.iter().map(|m| m.centers.view()).collect();
            observer.record(
                data,
                self.t,
                &labels,
                &local_views,
                self.global_model.centers.view(),
                None,
                rounds,
                self.synced,
            )
        }
    }
}

/// Sync (when due) and one local step.
pub fn step(state: &mut RunState, data: &DistributedDataset, config: &ProtocolConfig) -> Result<()> {
    state.sync_if_due(config)?;
    state.local_update(data)
}

/// Outcome of a full run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    /// Observation of the starting state: labels from the assignment pass
    /// against the initial model.
    pub initial: IterationRecord,
    pub records: Vec<IterationRecord>,
    pub final_state: RunState,
}

impl RunResult {
    pub fn comm(&self) -> CommCounters {
        self.final_state.comm
    }
}

/// Runs LocalKMeans (or one of its baselines) for `config.iterations` steps.
pub fn run(data: &DistributedDataset, config: &ProtocolConfig, init: &ClusterModel) -> Result<RunResult> {
    config.validate()?;
    if config.mode == Mode::Symmetric2 {
        return Err(Error::invalid("symmetric two-cluster runs go through run_symmetric2"));
    }
    let observer = Observer::new(data, init.k())?;
    let state = RunState::new(data, init)?;
    drive(state, data, config, &observer)
}

/// Runs the two-cluster variant from the single vector `init_theta`.
pub fn run_symmetric2(
    data: &DistributedDataset,
    config: &ProtocolConfig,
    init_theta: ArrayView1<f64>,
) -> Result<RunResult> {
    config.validate()?;
    if !data.is_symmetric2() {
        return Err(Error::invalid("data was not generated by the symmetric two-cluster model"));
    }
    let observer = Observer::new(data, 2)?;
    let state = RunState::new_symmetric2(data, init_theta)?;
    drive(state, data, config, &observer)
}

fn drive(
    mut state: RunState,
    data: &DistributedDataset,
    config: &ProtocolConfig,
    observer: &Observer,
) -> Result<RunResult> {
    let initial = state.observe(observer, data)?;
    let mut records = Vec::with_capacity(config.iterations.div_ceil(config.record_every));
    for t in 0..config.iterations {
        state.sync_if_due(config)?;
        if config.records_at(t) {
            records.push(state.observe(observer, data)?);
        }
        state.local_update(data)?;
    }
    records.push(state.observe(observer, data)?);
    Ok(RunResult {
        initial,
        records,
        final_state: state,
    })
}
