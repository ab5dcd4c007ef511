//! Data for the simulated machines: Gaussian-mixture generators, separation
//! and SNR statistics, CSV ingestion and partitioning of real datasets.

use std::collections::HashMap;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lloyd::squared_distance;
use crate::rng::{machine_rng, stream_rng, STREAM_PARTITION};

/// Noise added to each generated point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseKind {
    /// Isotropic `N(0, sigma^2 I_d)`.
    #[default]
    Gaussian,
}

/// Ground-truth generative model for the K-cluster case.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    /// K x d matrix of true centers.
    pub centers: Array2<f64>,
    pub noise_std: f64,
    pub noise: NoiseKind,
    pub num_machines: usize,
    pub points_per_machine: usize,
    /// Probability of each cluster; uniform unless set.
    pub cluster_weights: Vec<f64>,
}

impl MixtureSpec {
    pub fn new(
        centers: Array2<f64>,
        noise_std: f64,
        num_machines: usize,
        points_per_machine: usize,
    ) -> Result<Self> {
        let k = centers.nrows();
        let spec = Self {
            centers,
            noise_std,
            noise: NoiseKind::Gaussian,
            num_machines,
            points_per_machine,
            cluster_weights: vec![1.0 / k.max(1) as f64; k],
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `K` centers `scale * e_k` in `R^d`: orthonormal up to `scale`, so every
    /// pairwise distance is `scale * sqrt(2)`.
    pub fn orthonormal(
        dim: usize,
        num_clusters: usize,
        scale: f64,
        noise_std: f64,
        num_machines: usize,
        points_per_machine: usize,
    ) -> Result<Self> {
        if num_clusters > dim {
            return Err(Error::invalid(format!(
                "cannot place {num_clusters} orthonormal centers in {dim} dimensions"
            )));
        }
        let mut centers = Array2::zeros((num_clusters, dim));
        for k in 0..num_clusters {
            centers[[k, k]] = scale;
        }
        Self::new(centers, noise_std, num_machines, points_per_machine)
    }

    /// The two-center model `{theta*, -theta*}` with balanced weights.
    pub fn symmetric2(
        theta_star: &Array1<f64>,
        noise_std: f64,
        num_machines: usize,
        points_per_machine: usize,
    ) -> Result<Self> {
        let mut centers = Array2::zeros((2, theta_star.len()));
        centers.row_mut(0).assign(theta_star);
        centers.row_mut(1).assign(&(-theta_star));
        Self::new(centers, noise_std, num_machines, points_per_machine)
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        self.cluster_weights = weights;
        self.validate()?;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.centers.ncols()
    }

    pub fn num_clusters(&self) -> usize {
        self.centers.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_clusters();
        if k == 0 || self.dim() == 0 {
            return Err(Error::invalid("mixture needs K >= 1 and d >= 1"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::invalid(format!("noise std {} must be finite and >= 0", self.noise_std)));
        }
        if self.num_machines == 0 || self.points_per_machine == 0 {
            return Err(Error::invalid("need m >= 1 machines and n >= 1 points per machine"));
        }
        if self.cluster_weights.len() != k {
            return Err(Error::ClusterCountMismatch {
                expected: k,
                found: self.cluster_weights.len(),
            });
        }
        if self.cluster_weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::invalid("cluster weights must be non-negative"));
        }
        let total: f64 = self.cluster_weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("cluster weights sum to {total}, not 1")));
        }
        if k > 1 && min_pairwise_distance(self.centers.view()) <= 0.0 {
            return Err(Error::invalid("true centers must be pairwise distinct"));
        }
        Ok(())
    }
}

/// True cluster membership of every point, laid out per machine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrueLabels {
    /// Symmetric two-cluster data: `+1` for `theta*`, `-1` for `-theta*`.
    Signed(Vec<Vec<i8>>),
    /// Cluster indices in `0..K`.
    Indexed(Vec<Vec<usize>>),
}

impl TrueLabels {
    /// Cluster indices; signed labels map `+1 -> 0` and `-1 -> 1`.
    pub fn indexed(&self) -> Vec<Vec<usize>> {
        match self {
            TrueLabels::Indexed(v) => v.clone(),
            TrueLabels::Signed(v) => v
                .iter()
                .map(|b| b.iter().map(|&z| if z > 0 { 0 } else { 1 }).collect())
                .collect(),
        }
    }

    pub fn num_clusters(&self) -> usize {
        match self {
            TrueLabels::Signed(_) => 2,
            TrueLabels::Indexed(v) => v.iter().flatten().max().map_or(0, |&m| m + 1),
        }
    }
}

/// What is known about how the data was produced.
#[derive(Debug, Clone, PartialEq)]
pub enum GroundTruth {
    Symmetric2 { theta_star: Array1<f64>, sigma: f64 },
    Mixture { centers: Array2<f64>, sigma: f64 },
    /// Real data: per-class means of the retained points stand in for centers.
    Empirical { centers: Array2<f64> },
}

impl GroundTruth {
    pub fn centers(&self) -> Array2<f64> {
        match self {
            GroundTruth::Symmetric2 { theta_star, .. } => {
                let mut c = Array2::zeros((2, theta_star.len()));
                c.row_mut(0).assign(theta_star);
                c.row_mut(1).assign(&(-theta_star));
                c
            }
            GroundTruth::Mixture { centers, .. } | GroundTruth::Empirical { centers } => {
                centers.clone()
            }
        }
    }
}

/// `m` blocks of `n` points each, with optional labels and ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributedDataset {
    blocks: Vec<Array2<f64>>,
    labels: Option<TrueLabels>,
    truth: Option<GroundTruth>,
}

impl DistributedDataset {
    pub fn new(
        blocks: Vec<Array2<f64>>,
        labels: Option<TrueLabels>,
        truth: Option<GroundTruth>,
    ) -> Result<Self> {
        let first = blocks
            .first()
            .ok_or_else(|| Error::invalid("dataset needs at least one machine"))?;
        let (n, d) = first.dim();
        if n == 0 || d == 0 {
            return Err(Error::invalid("machine blocks must be non-empty"));
        }
        for b in &blocks {
            if b.nrows() != n {
                return Err(Error::invalid(format!(
                    "machine blocks hold {} and {} points; all must hold n",
                    n,
                    b.nrows()
                )));
            }
            crate::error::check_dim(d, b.ncols())?;
        }
        if let Some(l) = &labels {
            let lens: Vec<usize> = match l {
                TrueLabels::Signed(v) => v.iter().map(Vec::len).collect(),
                TrueLabels::Indexed(v) => v.iter().map(Vec::len).collect(),
            };
            if lens.len() != blocks.len() || lens.iter().any(|&len| len != n) {
                return Err(Error::invalid("labels do not match the machine layout"));
            }
            if let TrueLabels::Signed(v) = l {
                if v.iter().flatten().any(|&z| z != 1 && z != -1) {
                    return Err(Error::invalid("signed labels must be +1 or -1"));
                }
            }
            if let Some(t) = &truth {
                let k = t.centers().nrows();
                if l.num_clusters() > k {
                    return Err(Error::invalid("a label exceeds the number of true clusters"));
                }
            }
        }
        Ok(Self {
            blocks,
            labels,
            truth,
        })
    }

    pub fn num_machines(&self) -> usize {
        self.blocks.len()
    }

    pub fn points_per_machine(&self) -> usize {
        self.blocks[0].nrows()
    }

    pub fn dim(&self) -> usize {
        self.blocks[0].ncols()
    }

    pub fn total_points(&self) -> usize {
        self.num_machines() * self.points_per_machine()
    }

    pub fn blocks(&self) -> &[Array2<f64>] {
        &self.blocks
    }

    pub fn block(&self, machine: usize) -> ArrayView2<'_, f64> {
        self.blocks[machine].view()
    }

    pub fn labels(&self) -> Option<&TrueLabels> {
        self.labels.as_ref()
    }

    pub fn truth(&self) -> Option<&GroundTruth> {
        self.truth.as_ref()
    }

    pub fn is_symmetric2(&self) -> bool {
        matches!(self.truth, Some(GroundTruth::Symmetric2 { .. }))
    }

    /// All points stacked machine by machine.
    pub fn pooled(&self) -> Array2<f64> {
        let views: Vec<_> = self.blocks.iter().map(|b| b.view()).collect();
        ndarray::concatenate(Axis(0), &views).expect("blocks share a dimension")
    }

    /// Short hex digest of points and labels; equal datasets give equal digests.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for b in &self.blocks {
            for v in b.iter() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        if let Some(l) = &self.labels {
            for row in l.indexed() {
                for z in row {
                    h.update((z as u64).to_le_bytes());
                }
            }
        }
        h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn gaussian_noise<R: Rng>(rng: &mut R, sigma: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    sigma * z
}

/// Symmetric two-cluster data `x = z * theta* + w` with `z` uniform on `{-1, +1}`.
pub fn generate_symmetric2(
    theta_star: &Array1<f64>,
    sigma: f64,
    m: usize,
    n: usize,
    seed: u64,
) -> Result<DistributedDataset> {
    if theta_star.is_empty() || theta_star.dot(theta_star) <= 0.0 {
        return Err(Error::invalid("theta* must have positive norm"));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) || m == 0 || n == 0 {
        return Err(Error::invalid("need sigma >= 0, m >= 1, n >= 1"));
    }
    let d = theta_star.len();
    let mut blocks = Vec::with_capacity(m);
    let mut labels = Vec::with_capacity(m);
    for i in 0..m {
        let mut rng = machine_rng(seed, i);
        let mut block = Array2::zeros((n, d));
        let mut zs = Vec::with_capacity(n);
        for mut row in block.outer_iter_mut() {
            let z: i8 = if rng.random::<bool>() { 1 } else { -1 };
            for (x, t) in row.iter_mut().zip(theta_star) {
                *x = f64::from(z) * t + gaussian_noise(&mut rng, sigma);
            }
            zs.push(z);
        }
        blocks.push(block);
        labels.push(zs);
    }
    DistributedDataset::new(
        blocks,
        Some(TrueLabels::Signed(labels)),
        Some(GroundTruth::Symmetric2 {
            theta_star: theta_star.clone(),
            sigma,
        }),
    )
}

/// K-cluster data `x = theta_z + w`, labels drawn by `cluster_weights`.
///
/// Machine `i` draws from its own stream of `seed`, so any single block can be
/// regenerated without the others.
pub fn generate_kmixture(spec: &MixtureSpec, seed: u64) -> Result<DistributedDataset> {
    spec.validate()?;
    let d = spec.dim();
    let n = spec.points_per_machine;
    let picker = WeightedIndex::new(&spec.cluster_weights)
        .map_err(|e| Error::invalid(format!("cluster weights: {e}")))?;
    let mut blocks = Vec::with_capacity(spec.num_machines);
    let mut labels = Vec::with_capacity(spec.num_machines);
    for i in 0..spec.num_machines {
        let mut rng = machine_rng(seed, i);
        let mut block = Array2::zeros((n, d));
        let mut zs = Vec::with_capacity(n);
        for mut row in block.outer_iter_mut() {
            let z = picker.sample(&mut rng);
            match spec.noise {
                NoiseKind::Gaussian => {
                    for (x, c) in row.iter_mut().zip(spec.centers.row(z)) {
                        *x = c + gaussian_noise(&mut rng, spec.noise_std);
                    }
                }
            }
            zs.push(z);
        }
        blocks.push(block);
        labels.push(zs);
    }
    DistributedDataset::new(
        blocks,
        Some(TrueLabels::Indexed(labels)),
        Some(GroundTruth::Mixture {
            centers: spec.centers.clone(),
            sigma: spec.noise_std,
        }),
    )
}

fn sample_size_factor(d: usize, m: usize, n: usize, mult: f64) -> f64 {
    (1.0 + mult * d as f64 / (m as f64 * n as f64)).sqrt()
}

/// Two-cluster SNR `r = |theta*| / (sigma * sqrt(1 + 9d/(mn)))`.
pub fn snr_2cluster(theta_norm: f64, sigma: f64, d: usize, m: usize, n: usize) -> f64 {
    theta_norm / (sigma * sample_size_factor(d, m, n, 9.0))
}

/// The noise level at which [`snr_2cluster`] equals `target_r`.
pub fn sigma_for_snr(target_r: f64, theta_norm: f64, d: usize, m: usize, n: usize) -> Result<f64> {
    if !(target_r > 0.0 && theta_norm > 0.0) {
        return Err(Error::invalid("target SNR and theta norm must be positive"));
    }
    if m == 0 || n == 0 {
        return Err(Error::invalid("need m >= 1 and n >= 1"));
    }
    Ok(theta_norm / (target_r * sample_size_factor(d, m, n, 9.0)))
}

/// K-cluster SNR `r_K = (Gamma / sigma) * sqrt(alpha / (1 + Kd/(mn)))`.
pub fn snr_kcluster(gamma: f64, sigma: f64, alpha: f64, k: usize, d: usize, m: usize, n: usize) -> f64 {
    (gamma / sigma) * alpha.sqrt() / sample_size_factor(d, m, n, k as f64)
}

pub(crate) fn pairwise_distances(centers: ArrayView2<f64>) -> Vec<f64> {
    let k = centers.nrows();
    let mut out = Vec::with_capacity(k * k.saturating_sub(1) / 2);
    for a in 0..k {
        for b in a + 1..k {
            out.push(squared_distance(centers.row(a), centers.row(b)).sqrt());
        }
    }
    out
}

/// Gamma: the smallest distance between two distinct centers.
pub fn min_pairwise_distance(centers: ArrayView2<f64>) -> f64 {
    pairwise_distances(centers)
        .into_iter()
        .fold(f64::INFINITY, f64::min)
}

/// Separation and balance statistics of a labeled dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparationReport {
    pub gamma: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Two-cluster SNR; set only for symmetric two-center models.
    pub r: Option<f64>,
    pub r_k: f64,
}

pub fn separation_report(dataset: &DistributedDataset, spec: &MixtureSpec) -> Result<SeparationReport> {
    let labels = dataset
        .labels()
        .ok_or_else(|| Error::invalid("separation report needs true labels"))?
        .indexed();
    let k = spec.num_clusters();
    if k < 2 {
        return Err(Error::invalid("separation needs at least two centers"));
    }
    crate::error::check_dim(spec.dim(), dataset.dim())?;
    let dists = pairwise_distances(spec.centers.view());
    let gamma = dists.iter().copied().fold(f64::INFINITY, f64::min);
    let lambda = dists.iter().copied().fold(0.0, f64::max) / gamma;

    let m = dataset.num_machines();
    let n = dataset.points_per_machine();
    let mut local = vec![vec![0usize; k]; m];
    for (i, row) in labels.iter().enumerate() {
        for &z in row {
            if z >= k {
                return Err(Error::invalid(format!("label {z} out of range for K={k}")));
            }
            local[i][z] += 1;
        }
    }
    let global: Vec<usize> = (0..k).map(|c| local.iter().map(|l| l[c]).sum()).collect();
    if let Some(empty) = global.iter().position(|&v| v == 0) {
        return Err(Error::Degenerate(format!("true cluster {empty} has no points")));
    }
    let mn = (m * n) as f64;
    let alpha = global.iter().map(|&v| v as f64 / mn).fold(f64::INFINITY, f64::min);
    let beta = local
        .iter()
        .flat_map(|l| l.iter().zip(&global).map(|(&a, &g)| a as f64 / g as f64))
        .fold(f64::INFINITY, f64::min);
    let d = spec.dim();
    let sigma = spec.noise_std;
    let r_k = snr_kcluster(gamma, sigma, alpha, k, d, m, n);
    let symmetric = k == 2
        && spec
            .centers
            .row(0)
            .iter()
            .zip(spec.centers.row(1))
            .all(|(a, b)| *a == -*b);
    let r = symmetric.then(|| snr_2cluster(gamma / 2.0, sigma, d, m, n));
    Ok(SeparationReport {
        gamma,
        lambda,
        alpha,
        beta,
        r,
        r_k,
    })
}

/// Points read from a CSV file, with labels mapped to `0..K`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPoints {
    pub points: Array2<f64>,
    pub labels: Option<Vec<usize>>,
    /// Original label text for each contiguous index.
    pub label_names: Vec<String>,
}

impl LabeledPoints {
    pub fn num_classes(&self) -> usize {
        self.label_names.len()
    }
}

/// Reads one point per row. With `label_column` set, that column holds the
/// class and the remaining columns the coordinates.
pub fn load_csv_dataset(
    path: impl AsRef<Path>,
    label_column: Option<usize>,
    has_header: bool,
) -> Result<LabeledPoints> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv_points(file, label_column, has_header).map_err(|e| match e {
        Error::Csv { source, .. } => Error::Csv {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

pub fn read_csv_points<R: std::io::Read>(
    reader: R,
    label_column: Option<usize>,
    has_header: bool,
) -> Result<LabeledPoints> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut width = None;
    let mut values = Vec::new();
    let mut raw_labels = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|source| Error::Csv {
            path: Default::default(),
            source,
        })?;
        let row = rec.position().map_or(idx + 1, |p| p.line() as usize);
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let w = *width.get_or_insert(rec.len());
        if rec.len() != w {
            return Err(Error::Parse {
                row,
                message: format!("expected {w} fields, found {}", rec.len()),
            });
        }
        if let Some(lc) = label_column {
            if lc >= w {
                return Err(Error::Parse {
                    row,
                    message: format!("label column {lc} not present in {w} columns"),
                });
            }
        }
        for (c, field) in rec.iter().enumerate() {
            if Some(c) == label_column {
                raw_labels.push(field.to_string());
                continue;
            }
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row,
                message: format!("column {c}: '{field}' is not numeric"),
            })?;
            values.push(v);
        }
    }
    let width = width.ok_or_else(|| Error::Parse {
        row: 0,
        message: "file contains no data rows".into(),
    })?;
    let dim = width - usize::from(label_column.is_some());
    if dim == 0 {
        return Err(Error::Parse {
            row: 1,
            message: "rows have no coordinate columns".into(),
        });
    }
    let count = values.len() / dim;
    let points = Array2::from_shape_vec((count, dim), values).expect("row widths checked");

    let (labels, label_names) = if label_column.is_some() {
        let (labels, names) = index_labels(&raw_labels);
        (Some(labels), names)
    } else {
        (None, Vec::new())
    };
    Ok(LabeledPoints {
        points,
        labels,
        label_names,
    })
}

/// Maps label strings to `0..K`, ordered numerically when every label is a
/// number and lexically otherwise.
fn index_labels(raw: &[String]) -> (Vec<usize>, Vec<String>) {
    let mut names: Vec<String> = raw.to_vec();
    names.sort();
    names.dedup();
    let numeric: Option<Vec<f64>> = names.iter().map(|s| s.parse().ok()).collect();
    if let Some(nums) = numeric {
        let mut pairs: Vec<(f64, String)> = nums.into_iter().zip(names).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        names = pairs.into_iter().map(|p| p.1).collect();
    }
    let index: HashMap<&str, usize> = names.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let labels = raw.iter().map(|s| index[s.as_str()]).collect();
    (labels, names)
}

/// Shuffles `points` with `seed` and deals them into `m` blocks of
/// `floor(N / m)`; the remainder is dropped.
pub fn partition(
    points: ArrayView2<f64>,
    labels: Option<&[usize]>,
    m: usize,
    seed: u64,
) -> Result<DistributedDataset> {
    let total = points.nrows();
    if m == 0 {
        return Err(Error::invalid("need at least one machine"));
    }
    if m > total {
        return Err(Error::invalid(format!("cannot split {total} points over {m} machines")));
    }
    if let Some(l) = labels {
        if l.len() != total {
            return Err(Error::invalid("labels and points differ in length"));
        }
    }
    let n = total / m;
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut stream_rng(seed, STREAM_PARTITION));
    let mut blocks = Vec::with_capacity(m);
    let mut block_labels = Vec::with_capacity(m);
    for chunk in order.chunks_exact(n).take(m) {
        blocks.push(points.select(Axis(0), chunk));
        if let Some(l) = labels {
            block_labels.push(chunk.iter().map(|&j| l[j]).collect::<Vec<_>>());
        }
    }
    let (labels, truth) = match labels {
        Some(_) => {
            let centers = class_means(&blocks, &block_labels)?;
            (
                Some(TrueLabels::Indexed(block_labels)),
                Some(GroundTruth::Empirical { centers }),
            )
        }
        None => (None, None),
    };
    DistributedDataset::new(blocks, labels, truth)
}

fn class_means(blocks: &[Array2<f64>], labels: &[Vec<usize>]) -> Result<Array2<f64>> {
    let k = labels.iter().flatten().max().map_or(0, |&m| m + 1);
    let d = blocks[0].ncols();
    let mut sums = Array2::<f64>::zeros((k, d));
    let mut counts = vec![0usize; k];
    for (b, l) in blocks.iter().zip(labels) {
        for (p, &z) in b.outer_iter().zip(l) {
            let mut row = sums.row_mut(z);
            row += &p;
            counts[z] += 1;
        }
    }
    for (mut row, &c) in sums.outer_iter_mut().zip(&counts) {
        if c > 0 {
            row /= c as f64;
        }
    }
    Ok(sums)
}
