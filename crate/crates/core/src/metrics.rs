//! Observational metrics for a LocalKMeans run.
//!
//! Everything here is computed by an observer that can see every machine at
//! once. None of it costs protocol communication.

use ndarray::{Array2, ArrayView2};
use pathfinding::prelude::{kuhn_munkres, Matrix};

use crate::error::{check_dim, Error, Result};
use crate::lloyd::{local_objective, squared_distance, ClusterModel};
use crate::mixture::{min_pairwise_distance, DistributedDataset, GroundTruth};

/// Largest K for which label alignment enumerates every permutation.
pub const EXHAUSTIVE_ALIGNMENT_MAX_K: usize = 8;

/// Counts `counts[k][h]` of points with true label `k` and estimated label `h`,
/// globally and per machine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionTable {
    pub k: usize,
    pub counts: Vec<Vec<usize>>,
    pub per_machine: Vec<Vec<Vec<usize>>>,
}

impl ConfusionTable {
    pub fn from_labels(truth: &[Vec<usize>], est: &[Vec<usize>], k: usize) -> Result<Self> {
        if truth.len() != est.len() {
            return Err(Error::invalid(format!(
                "true labels cover {} machines, estimates {}",
                truth.len(),
                est.len()
            )));
        }
        let mut counts = vec![vec![0usize; k]; k];
        let mut per_machine = Vec::with_capacity(truth.len());
        for (t, e) in truth.iter().zip(est) {
            if t.len() != e.len() {
                return Err(Error::invalid("label arrays differ in length"));
            }
            let mut local = vec![vec![0usize; k]; k];
            for (&a, &b) in t.iter().zip(e) {
                if a >= k || b >= k {
                    return Err(Error::invalid(format!("label out of range for K={k}")));
                }
                local[a][b] += 1;
                counts[a][b] += 1;
            }
            per_machine.push(local);
        }
        Ok(Self {
            k,
            counts,
            per_machine,
        })
    }

    /// Table with estimated label `h` renamed to `perm[h]`.
    pub fn relabeled(&self, perm: &[usize]) -> Self {
        let remap = |t: &Vec<Vec<usize>>| {
            let mut out = vec![vec![0usize; self.k]; self.k];
            for (row_in, row_out) in t.iter().zip(out.iter_mut()) {
                for (h, &c) in row_in.iter().enumerate() {
                    row_out[perm[h]] += c;
                }
            }
            out
        };
        Self {
            k: self.k,
            counts: remap(&self.counts),
            per_machine: self.per_machine.iter().map(remap).collect(),
        }
    }

    /// Estimated cluster sizes `nu_h = sum_k counts[k][h]`.
    pub fn column_sums(&self) -> Vec<usize> {
        column_sums(&self.counts)
    }
}

fn column_sums(t: &[Vec<usize>]) -> Vec<usize> {
    let k = t.len();
    (0..k).map(|h| t.iter().map(|row| row[h]).sum()).collect()
}

fn diagonal_under(t: &[Vec<usize>], perm: &[usize]) -> usize {
    perm.iter().enumerate().map(|(h, &k)| t[k][h]).sum()
}

/// A relabeling of estimated clusters: estimated `h` corresponds to true `perm[h]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    pub perm: Vec<usize>,
    /// Points whose label agrees with the truth after relabeling.
    pub matched: usize,
}

/// Best relabeling by trying all K! permutations.
pub fn align_exhaustive(table: &ConfusionTable) -> Alignment {
    fn search(
        t: &[Vec<usize>],
        h: usize,
        used: &mut [bool],
        perm: &mut Vec<usize>,
        score: usize,
        best: &mut Alignment,
    ) {
        let k = t.len();
        if h == k {
            if score > best.matched || best.perm.is_empty() {
                *best = Alignment {
                    perm: perm.clone(),
                    matched: score,
                };
            }
            return;
        }
        for c in 0..k {
            if !used[c] {
                used[c] = true;
                perm.push(c);
                search(t, h + 1, used, perm, score + t[c][h], best);
                perm.pop();
                used[c] = false;
            }
        }
    }
    let mut best = Alignment {
        perm: Vec::new(),
        matched: 0,
    };
    let mut used = vec![false; table.k];
    search(&table.counts, 0, &mut used, &mut Vec::with_capacity(table.k), 0, &mut best);
    best
}

/// Best relabeling by maximum-weight bipartite matching.
pub fn align_assignment(table: &ConfusionTable) -> Alignment {
    let k = table.k;
    let weights = Matrix::from_fn(k, k, |(h, c)| table.counts[c][h] as i64);
    let (total, perm) = kuhn_munkres(&weights);
    Alignment {
        perm,
        matched: total as usize,
    }
}

pub fn best_alignment(table: &ConfusionTable) -> Alignment {
    if table.k <= EXHAUSTIVE_ALIGNMENT_MAX_K {
        align_exhaustive(table)
    } else {
        align_assignment(table)
    }
}

/// Misclustering rates `A` and per-machine `A_i`, raw and under the single
/// best global relabeling.
#[derive(Debug, Clone, PartialEq)]
pub struct Misclustering {
    pub a_raw: f64,
    pub a_aligned: f64,
    pub local_raw: Vec<f64>,
    pub local_aligned: Vec<f64>,
    pub alignment: Alignment,
}

pub fn misclustering(truth: &[Vec<usize>], est: &[Vec<usize>], k: usize) -> Result<Misclustering> {
    let table = ConfusionTable::from_labels(truth, est, k)?;
    Ok(misclustering_from_table(&table))
}

pub fn misclustering_from_table(table: &ConfusionTable) -> Misclustering {
    let identity: Vec<usize> = (0..table.k).collect();
    let alignment = best_alignment(table);
    let rate = |t: &[Vec<usize>], perm: &[usize]| {
        let total: usize = t.iter().flatten().sum();
        if total == 0 {
            0.0
        } else {
            1.0 - diagonal_under(t, perm) as f64 / total as f64
        }
    };
    let local_raw: Vec<f64> = table.per_machine.iter().map(|t| rate(t, &identity)).collect();
    let local_aligned: Vec<f64> = table
        .per_machine
        .iter()
        .map(|t| rate(t, &alignment.perm))
        .collect();
    // Machines hold equally many points, so the mean of the per-machine
    // rates is the pooled rate; computing it from pooled counts keeps it exact.
    Misclustering {
        a_raw: rate(&table.counts, &identity),
        a_aligned: rate(&table.counts, &alignment.perm),
        local_raw,
        local_aligned,
        alignment,
    }
}

/// Cluster-wise misclustering: the worst false-positive or true-negative rate
/// over clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterwiseError {
    pub g: f64,
    pub local: Vec<f64>,
    /// Some rate had a zero denominator (an empty estimated or true cluster)
    /// and was left out of the maximum.
    pub degenerate: bool,
}

fn clusterwise_single(t: &[Vec<usize>], current: &[usize]) -> (f64, bool) {
    let k = t.len();
    let mut g = 0.0f64;
    let mut degenerate = false;
    for c in 0..k {
        let truth_size: usize = t[c].iter().sum();
        let false_pos: usize = (0..k).filter(|&h| h != c).map(|h| t[h][c]).sum();
        let missed: usize = (0..k).filter(|&h| h != c).map(|h| t[c][h]).sum();
        if current[c] == 0 {
            degenerate = true;
        } else {
            g = g.max(false_pos as f64 / current[c] as f64);
        }
        if truth_size == 0 {
            degenerate = true;
        } else {
            g = g.max(missed as f64 / truth_size as f64);
        }
    }
    (g, degenerate)
}

/// `G = max_k max(FP_k / nu_k, TN_k / nu*_k)` on the table as given.
///
/// `current_sizes` must equal the table's column sums.
pub fn clusterwise_g(table: &ConfusionTable, current_sizes: &[usize]) -> Result<ClusterwiseError> {
    if current_sizes != table.column_sums().as_slice() {
        return Err(Error::invalid(
            "current cluster sizes disagree with the confusion table",
        ));
    }
    let (g, mut degenerate) = clusterwise_single(&table.counts, current_sizes);
    let local = table
        .per_machine
        .iter()
        .map(|t| {
            let (gi, deg) = clusterwise_single(t, &column_sums(t));
            degenerate |= deg;
            gi
        })
        .collect();
    Ok(ClusterwiseError {
        g,
        local,
        degenerate,
    })
}

/// `max_k |est_k - truth_{perm(k)}| / gamma`; identity matching when `perm` is `None`.
pub fn center_error_lambda(
    est: ArrayView2<f64>,
    truth: ArrayView2<f64>,
    gamma: f64,
    perm: Option<&[usize]>,
) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::invalid(format!("Gamma must be positive, got {gamma}")));
    }
    if est.nrows() != truth.nrows() {
        return Err(Error::ClusterCountMismatch {
            expected: truth.nrows(),
            found: est.nrows(),
        });
    }
    check_dim(truth.ncols(), est.ncols())?;
    let worst = est
        .outer_iter()
        .enumerate()
        .map(|(h, row)| {
            let k = perm.map_or(h, |p| p[h]);
            squared_distance(row, truth.row(k)).sqrt()
        })
        .fold(0.0, f64::max);
    Ok(worst / gamma)
}

/// `max_k (1/m) sum_i |theta_{k,i} - theta_k|^2 / normalizer`.
///
/// With a single-row model this is the two-cluster deviation, normalized by
/// `|theta*|^2`; in the K-cluster case the normalizer is `Gamma^2`.
pub fn deviation_delta(local: &[ArrayView2<f64>], global: ArrayView2<f64>, normalizer: f64) -> Result<f64> {
    if !(normalizer > 0.0) {
        return Err(Error::invalid(format!("normalizer must be positive, got {normalizer}")));
    }
    if local.is_empty() {
        return Ok(0.0);
    }
    for l in local {
        if l.dim() != global.dim() {
            return Err(Error::invalid("local and global models differ in shape"));
        }
    }
    let m = local.len() as f64;
    let worst = (0..global.nrows())
        .map(|k| {
            local
                .iter()
                .map(|l| squared_distance(l.row(k), global.row(k)))
                .sum::<f64>()
                / m
        })
        .fold(0.0, f64::max);
    Ok(worst / normalizer)
}

/// KMeans objective over every point of every machine.
pub fn global_objective(data: &DistributedDataset, centers: ArrayView2<f64>) -> Result<f64> {
    data.blocks()
        .iter()
        .map(|b| local_objective(b.view(), centers))
        .sum()
}

/// Label-dependent part of an iteration record.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMetrics {
    pub a_raw: f64,
    pub a_aligned: f64,
    /// Per-machine misclustering under the global relabeling.
    pub a_local: Vec<f64>,
    /// Cluster-wise misclustering of the relabeled estimate.
    pub g: f64,
    pub g_degenerate: bool,
    pub lambda: f64,
    pub lambda_local: Vec<f64>,
}

/// Metrics observed at iteration `t`.
///
/// Labels are the estimates `z^(t)` produced by step `t - 1`; models are the
/// ones the machines hold entering step `t`, after any broadcast at `t`.
/// `rounds` counts the aggregations consumed by steps `0..t`.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub t: usize,
    pub rounds: usize,
    pub is_sync: bool,
    pub delta: f64,
    pub objective: f64,
    pub labels: Option<LabelMetrics>,
}

impl IterationRecord {
    pub fn a_aligned(&self) -> Option<f64> {
        self.labels.as_ref().map(|l| l.a_aligned)
    }
}

/// Precomputed truth used to evaluate records for one dataset.
#[derive(Debug, Clone)]
pub struct Observer {
    truth_labels: Option<Vec<Vec<usize>>>,
    truth_centers: Option<Array2<f64>>,
    gamma: f64,
    normalizer: f64,
}

impl Observer {
    /// `k` is the number of clusters the estimates use.
    pub fn new(data: &DistributedDataset, k: usize) -> Result<Self> {
        let truth_labels = data.labels().map(|l| l.indexed());
        let truth_centers = match (data.truth(), &truth_labels) {
            (Some(t), _) => Some(t.centers()),
            (None, Some(l)) => Some(empirical_centers(data, l, k)),
            (None, None) => None,
        };
        if let Some(c) = &truth_centers {
            if c.nrows() != k {
                return Err(Error::ClusterCountMismatch {
                    expected: c.nrows(),
                    found: k,
                });
            }
        }
        let gamma = match &truth_centers {
            Some(c) if k > 1 => min_pairwise_distance(c.view()),
            _ => 1.0,
        };
        if truth_centers.is_some() && !(gamma > 0.0) {
            return Err(Error::Degenerate("true centers coincide".into()));
        }
        let normalizer = match data.truth() {
            Some(GroundTruth::Symmetric2 { theta_star, .. }) => theta_star.dot(theta_star),
            _ => gamma * gamma,
        };
        Ok(Self {
            truth_labels,
            truth_centers,
            gamma,
            normalizer,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn delta_normalizer(&self) -> f64 {
        self.normalizer
    }

    /// `local` and `global` are full K-center models; for the symmetric
    /// two-cluster run pass `delta_models` holding the single-vector models.
    #[allow(clippy::too_many_arguments)]
    pub fn record(
        &self,
        data: &DistributedDataset,
        t: usize,
        est_labels: &[Vec<usize>],
        local: &[ArrayView2<f64>],
        global: ArrayView2<f64>,
        delta_models: Option<(&[ArrayView2<f64>], ArrayView2<f64>)>,
        rounds: usize,
        is_sync: bool,
    ) -> Result<IterationRecord> {
        let delta = match delta_models {
            Some((l, g)) => deviation_delta(l, g, self.normalizer)?,
            None => deviation_delta(local, global, self.normalizer)?,
        };
        let objective = global_objective(data, global)?;
        let labels = match (&self.truth_labels, &self.truth_centers) {
            (Some(truth), Some(centers)) => {
                let k = global.nrows();
                let table = ConfusionTable::from_labels(truth, est_labels, k)?;
                let mis = misclustering_from_table(&table);
                let perm = &mis.alignment.perm;
                let relabeled = table.relabeled(perm);
                let cw = clusterwise_g(&relabeled, &relabeled.column_sums())?;
                let lambda = center_error_lambda(global, centers.view(), self.gamma, Some(perm))?;
                let lambda_local = local
                    .iter()
                    .map(|l| center_error_lambda(*l, centers.view(), self.gamma, Some(perm)))
                    .collect::<Result<Vec<_>>>()?;
                Some(LabelMetrics {
                    a_raw: mis.a_raw,
                    a_aligned: mis.a_aligned,
                    a_local: mis.local_aligned,
                    g: cw.g,
                    g_degenerate: cw.degenerate,
                    lambda,
                    lambda_local,
                })
            }
            _ => None,
        };
        Ok(IterationRecord {
            t,
            rounds,
            is_sync,
            delta,
            objective,
            labels,
        })
    }
}

fn empirical_centers(data: &DistributedDataset, labels: &[Vec<usize>], k: usize) -> Array2<f64> {
    let mut sums = Array2::<f64>::zeros((k, data.dim()));
    let mut counts = vec![0usize; k];
    for (b, l) in data.blocks().iter().zip(labels) {
        for (p, &z) in b.outer_iter().zip(l) {
            if z < k {
                let mut row = sums.row_mut(z);
                row += &p;
                counts[z] += 1;
            }
        }
    }
    for (mut row, &c) in sums.outer_iter_mut().zip(&counts) {
        if c > 0 {
            row /= c as f64;
        }
    }
    sums
}

/// Convenience for single-model callers.
pub fn model_objective(data: &DistributedDataset, model: &ClusterModel) -> Result<f64> {
    global_objective(data, model.centers.view())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn identical_labels_have_zero_error() {
        let z = vec![vec![0, 1, 2], vec![2, 2, 0]];
        let m = misclustering(&z, &z, 3).unwrap();
        assert_eq!((m.a_raw, m.a_aligned), (0.0, 0.0));
    }

    #[test]
    fn global_flip_is_fully_wrong_raw_and_right_aligned() {
        let z = vec![vec![0, 1, 1, 0], vec![1, 1, 0, 0]];
        let flipped: Vec<Vec<usize>> = z.iter().map(|r| r.iter().map(|&v| 1 - v).collect()).collect();
        let m = misclustering(&z, &flipped, 2).unwrap();
        assert_eq!(m.a_raw, 1.0);
        assert_eq!(m.a_aligned, 0.0);
        assert_eq!(m.alignment.perm, vec![1, 0]);
    }

    #[test]
    fn per_machine_rates_average_to_global() {
        let truth = vec![vec![0, 0, 1, 1], vec![0, 0, 1, 1]];
        let est = vec![vec![0, 0, 1, 0], vec![1, 0, 0, 0]];
        let m = misclustering(&truth, &est, 2).unwrap();
        assert_eq!(m.local_raw, vec![0.25, 0.75]);
        assert_eq!(m.a_raw, 0.5);
    }

    #[test]
    fn misclustering_rejects_length_mismatch() {
        assert!(misclustering(&[vec![0, 1]], &[vec![0]], 2).is_err());
        assert!(misclustering(&[vec![0]], &[vec![0], vec![1]], 2).is_err());
    }

    #[test]
    fn diagonal_table_has_zero_g() {
        let t = ConfusionTable::from_labels(&[vec![0, 1, 2, 2]], &[vec![0, 1, 2, 2]], 3).unwrap();
        let g = clusterwise_g(&t, &t.column_sums()).unwrap();
        assert_eq!(g.g, 0.0);
        assert!(!g.degenerate);
    }

    #[test]
    fn g_from_formula() {
        // nu* = (4, 4); one point of cluster 0 estimated as 1, so nu = (3, 5).
        let truth = vec![vec![0, 0, 0, 0, 1, 1, 1, 1]];
        let est = vec![vec![0, 0, 0, 1, 1, 1, 1, 1]];
        let t = ConfusionTable::from_labels(&truth, &est, 2).unwrap();
        assert_eq!(t.column_sums(), vec![3, 5]);
        let g = clusterwise_g(&t, &[3, 5]).unwrap();
        assert_eq!(g.g, 0.25);
        assert!(clusterwise_g(&t, &[4, 4]).is_err());
    }

    #[test]
    fn empty_estimated_cluster_is_flagged() {
        let t = ConfusionTable::from_labels(&[vec![0, 1]], &[vec![0, 0]], 2).unwrap();
        let g = clusterwise_g(&t, &t.column_sums()).unwrap();
        assert!(g.degenerate);
        assert_eq!(g.g, 1.0);
    }

    #[test]
    fn lambda_examples() {
        let truth = array![[1.0, 0.0], [0.0, 1.0]];
        let gamma = 2f64.sqrt();
        assert_eq!(center_error_lambda(truth.view(), truth.view(), gamma, None).unwrap(), 0.0);
        let mut est = truth.clone();
        est[[1, 0]] += gamma / 2.0;
        let l = center_error_lambda(est.view(), truth.view(), gamma, None).unwrap();
        assert!((l - 0.5).abs() < 1e-15);
        let scaled = center_error_lambda((&est * 3.0).view(), (&truth * 3.0).view(), 3.0 * gamma, None).unwrap();
        assert!((scaled - l).abs() < 1e-12);
        assert!(center_error_lambda(est.view(), truth.view(), 0.0, None).is_err());
    }

    #[test]
    fn lambda_uses_permutation() {
        let truth = array![[1.0, 0.0], [0.0, 1.0]];
        let swapped = array![[0.0, 1.0], [1.0, 0.0]];
        assert_eq!(center_error_lambda(swapped.view(), truth.view(), 1.0, Some(&[1, 0])).unwrap(), 0.0);
    }

    #[test]
    fn delta_examples() {
        let g = array![[3.0]];
        let same = [g.view(), g.view()];
        assert_eq!(deviation_delta(&same, g.view(), 4.0).unwrap(), 0.0);
        let a = array![[4.0]];
        let b = array![[2.0]];
        assert_eq!(deviation_delta(&[a.view(), b.view()], g.view(), 4.0).unwrap(), 0.25);
        let (a2, b2, g2) = (&a + 10.0, &b + 10.0, &g + 10.0);
        assert_eq!(deviation_delta(&[a2.view(), b2.view()], g2.view(), 4.0).unwrap(), 0.25);
        assert!(deviation_delta(&same, g.view(), 0.0).is_err());
    }

    #[test]
    fn objective_examples() {
        use crate::mixture::DistributedDataset;
        let ds = DistributedDataset::new(vec![array![[0.0], [0.0]], array![[4.0], [4.0]]], None, None).unwrap();
        assert_eq!(global_objective(&ds, array![[0.0], [4.0]].view()).unwrap(), 0.0);
        assert_eq!(global_objective(&ds, array![[1.0], [3.0]].view()).unwrap(), 4.0);
        let sum: f64 = ds
            .blocks()
            .iter()
            .map(|b| local_objective(b.view(), array![[1.0], [3.0]].view()).unwrap())
            .sum();
        assert_eq!(global_objective(&ds, array![[1.0], [3.0]].view()).unwrap(), sum);
    }

    fn labelings() -> impl Strategy<Value = (usize, Vec<Vec<usize>>, Vec<Vec<usize>>)> {
        (1usize..=6, 1usize..4, 1usize..12).prop_flat_map(|(k, m, n)| {
            let block = prop::collection::vec(prop::collection::vec(0..k, n), m);
            (Just(k), block.clone(), block)
        })
    }

    proptest! {
        #[test]
        fn exhaustive_and_assignment_alignment_agree((k, truth, est) in labelings()) {
            let t = ConfusionTable::from_labels(&truth, &est, k).unwrap();
            prop_assert_eq!(align_exhaustive(&t).matched, align_assignment(&t).matched);
        }

        #[test]
        fn g_bounds_a((k, truth, est) in labelings()) {
            let t = ConfusionTable::from_labels(&truth, &est, k).unwrap();
            let m = misclustering_from_table(&t);
            let g = clusterwise_g(&t, &t.column_sums()).unwrap();
            prop_assert!(m.a_aligned <= m.a_raw);
            prop_assert!(m.a_raw <= g.g + 1e-12);
        }

        #[test]
        fn metrics_invariant_under_common_relabeling((k, truth, est) in labelings(), seed in 0u64..1000) {
            use rand::seq::SliceRandom;
            let mut perm: Vec<usize> = (0..k).collect();
            perm.shuffle(&mut crate::rng::stream_rng(seed, 0));
            let map = |z: &Vec<Vec<usize>>| -> Vec<Vec<usize>> {
                z.iter().map(|r| r.iter().map(|&v| perm[v]).collect()).collect()
            };
            let a = misclustering(&truth, &est, k).unwrap();
            let b = misclustering(&map(&truth), &map(&est), k).unwrap();
            prop_assert_eq!(a.a_raw, b.a_raw);
            prop_assert_eq!(a.a_aligned, b.a_aligned);
            let ta = ConfusionTable::from_labels(&truth, &est, k).unwrap();
            let tb = ConfusionTable::from_labels(&map(&truth), &map(&est), k).unwrap();
            prop_assert_eq!(
                clusterwise_g(&ta, &ta.column_sums()).unwrap().g,
                clusterwise_g(&tb, &tb.column_sums()).unwrap().g
            );
        }
    }
}
