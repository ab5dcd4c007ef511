//! Initial centers: distributed KMeans++ and perturbed ground truth.

use std::iter::Sum;
use std::ops::{Div, Mul};

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::lloyd::{squared_distance, ClusterModel};
use crate::mixture::{min_pairwise_distance, DistributedDataset};
use crate::rng::{stream_rng, STREAM_PERTURB, STREAM_SEEDING};

/// Score of a point relative to its nearest chosen center.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum SeedDistance {
    /// D^2 weighting, as in KMeans++.
    #[default]
    Squared,
    Euclidean,
}

impl SeedDistance {
    fn score(self, squared: f64) -> f64 {
        match self {
            SeedDistance::Squared => squared,
            SeedDistance::Euclidean => squared.sqrt(),
        }
    }
}

/// Index drawn with probability `weights[i] / sum(weights)`; `None` when all
/// weights are zero. Zero-weight entries are never returned.
fn sample_weighted<R: Rng>(weights: &[f64], rng: &mut R) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = None;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last = Some(i);
            if u < acc {
                return last;
            }
        }
    }
    last
}

/// Distributed KMeans++: each round a machine is drawn with probability
/// `E_i / sum E`, then a point inside it with probability `E_ij / E_i`, where
/// `E_ij` is the point's score (1 before any center exists).
///
/// The returned model has size zero for every center.
pub fn local_kmeans_pp(data: &DistributedDataset, k: usize, seed: u64) -> Result<ClusterModel> {
    local_kmeans_pp_with(data, k, seed, SeedDistance::Squared)
}

pub fn local_kmeans_pp_with(
    data: &DistributedDataset,
    k: usize,
    seed: u64,
    distance: SeedDistance,
) -> Result<ClusterModel> {
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    if k > data.total_points() {
        return Err(Error::invalid(format!(
            "cannot seed {k} centers from {} points",
            data.total_points()
        )));
    }
    let mut rng = stream_rng(seed, STREAM_SEEDING);
    let mut scores: Vec<Vec<f64>> = data
        .blocks()
        .iter()
        .map(|b| vec![1.0; b.nrows()])
        .collect();
    let mut chosen = vec![vec![false; data.points_per_machine()]; data.num_machines()];
    let mut centers = Array2::<f64>::zeros((k, data.dim()));
    for c in 0..k {
        let machine_totals: Vec<f64> = scores.iter().map(|s| s.iter().sum()).collect();
        let (i, j) = match sample_weighted(&machine_totals, &mut rng) {
            Some(i) => {
                let j = sample_weighted(&scores[i], &mut rng).expect("machine total is positive");
                (i, j)
            }
            None => uniform_unchosen(&chosen, &mut rng),
        };
        chosen[i][j] = true;
        let pick = data.block(i).row(j).to_owned();
        centers.row_mut(c).assign(&pick);
        for (block, s) in data.blocks().iter().zip(scores.iter_mut()) {
            for (p, e) in block.outer_iter().zip(s.iter_mut()) {
                let d = distance.score(squared_distance(p, pick.view()));
                if c == 0 || d < *e {
                    *e = d;
                }
            }
        }
    }
    ClusterModel::from_centers(centers)
}

fn uniform_unchosen<R: Rng>(chosen: &[Vec<bool>], rng: &mut R) -> (usize, usize) {
    let free: Vec<(usize, usize)> = chosen
        .iter()
        .enumerate()
        .flat_map(|(i, row)| {
            row.iter()
                .enumerate()
                .filter(|(_, &c)| !c)
                .map(move |(j, _)| (i, j))
        })
        .collect();
    free[rng.random_range(0..free.len())]
}

/// Probability of each point under the two-stage draw, given scores `E_ij`.
///
/// Generic so that callers can evaluate it in exact arithmetic.
pub fn two_stage_probabilities<T>(scores: &[Vec<T>]) -> Vec<Vec<T>>
where
    T: Copy + PartialEq + Sum<T> + Mul<Output = T> + Div<Output = T>,
{
    let zero: T = std::iter::empty().sum();
    let machine_totals: Vec<T> = scores.iter().map(|s| s.iter().copied().sum()).collect();
    let total: T = machine_totals.iter().copied().sum();
    scores
        .iter()
        .zip(&machine_totals)
        .map(|(s, &mt)| {
            s.iter()
                .map(|&e| {
                    if mt == zero {
                        zero
                    } else {
                        (mt / total) * (e / mt)
                    }
                })
                .collect()
        })
        .collect()
}

/// True centers moved by `rho * Gamma * g_k` with `g_k ~ N(0, I_d / d)`.
pub fn perturbed_init(true_centers: ArrayView2<f64>, rho: f64, seed: u64) -> Result<ClusterModel> {
    if !(rho >= 0.0 && rho.is_finite()) {
        return Err(Error::invalid(format!("rho must be finite and >= 0, got {rho}")));
    }
    let (k, d) = true_centers.dim();
    let gamma = if k > 1 {
        min_pairwise_distance(true_centers)
    } else {
        true_centers.row(0).dot(&true_centers.row(0)).sqrt()
    };
    let mut rng = stream_rng(seed, STREAM_PERTURB);
    let scale = rho * gamma / (d as f64).sqrt();
    let mut centers = true_centers.to_owned();
    for x in centers.iter_mut() {
        let g: f64 = rng.sample(StandardNormal);
        *x += scale * g;
    }
    ClusterModel::from_centers(centers)
}
