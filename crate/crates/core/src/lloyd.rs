//! Single-machine Lloyd primitives: nearest-center assignment, mean update and
//! the KMeans objective. One `assign` followed by one `update_centers` is one
//! local step.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{check_dim, Error, Result};

/// K centers together with the number of points each one currently owns.
///
/// `sizes` are local cluster sizes on a machine, or the summed sizes after
/// aggregation on the server. A size of zero marks a cluster that received
/// no points; its center is then whatever it was before.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub centers: Array2<f64>,
    pub sizes: Vec<usize>,
}

impl ClusterModel {
    pub fn new(centers: Array2<f64>, sizes: Vec<usize>) -> Result<Self> {
        if centers.nrows() != sizes.len() {
            return Err(Error::ClusterCountMismatch {
                expected: centers.nrows(),
                found: sizes.len(),
            });
        }
        if centers.nrows() == 0 {
            return Err(Error::invalid("a cluster model needs at least one center"));
        }
        Ok(Self { centers, sizes })
    }

    /// Centers with all sizes set to zero, as produced by an initializer.
    pub fn from_centers(centers: Array2<f64>) -> Result<Self> {
        let k = centers.nrows();
        Self::new(centers, vec![0; k])
    }

    pub fn k(&self) -> usize {
        self.centers.nrows()
    }

    pub fn dim(&self) -> usize {
        self.centers.ncols()
    }

    pub fn total_size(&self) -> usize {
        self.sizes.iter().sum()
    }
}

/// Per-point cluster indices for one block of points.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub labels: Vec<usize>,
}

impl Assignment {
    pub fn counts(&self, k: usize) -> Vec<usize> {
        let mut counts = vec![0; k];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

#[inline]
pub fn squared_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index and squared distance of the nearest center. Ties go to the lower index.
#[inline]
pub fn nearest(point: ArrayView1<f64>, centers: ArrayView2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.outer_iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// Labels each point with its nearest center under squared Euclidean distance.
pub fn assign(points: ArrayView2<f64>, centers: ArrayView2<f64>) -> Result<Assignment> {
    if centers.nrows() == 0 {
        return Err(Error::invalid("assign needs at least one center"));
    }
    check_dim(centers.ncols(), points.ncols())?;
    let labels = points
        .outer_iter()
        .map(|p| nearest(p, centers).0)
        .collect();
    Ok(Assignment { labels })
}

/// Recomputes every center as the mean of its assigned points.
///
/// Sums run in point order so the result does not depend on how callers
/// schedule machines. A cluster with no points keeps `prev`'s center and gets
/// size zero.
pub fn update_centers(
    points: ArrayView2<f64>,
    assignment: &Assignment,
    k: usize,
    prev: &ClusterModel,
) -> Result<ClusterModel> {
    if prev.k() != k {
        return Err(Error::ClusterCountMismatch {
            expected: k,
            found: prev.k(),
        });
    }
    check_dim(prev.dim(), points.ncols())?;
    if assignment.labels.len() != points.nrows() {
        return Err(Error::invalid(format!(
            "assignment covers {} points but block has {}",
            assignment.labels.len(),
            points.nrows()
        )));
    }
    let mut sums = Array2::<f64>::zeros((k, points.ncols()));
    let mut sizes = vec![0usize; k];
    for (p, &l) in points.outer_iter().zip(&assignment.labels) {
        if l >= k {
            return Err(Error::invalid(format!("label {l} out of range for K={k}")));
        }
        let mut row = sums.row_mut(l);
        row += &p;
        sizes[l] += 1;
    }
    for (mut row, (&size, prev_row)) in sums
        .axis_iter_mut(Axis(0))
        .zip(sizes.iter().zip(prev.centers.outer_iter()))
    {
        if size == 0 {
            row.assign(&prev_row);
        } else {
            row /= size as f64;
        }
    }
    Ok(ClusterModel {
        centers: sums,
        sizes,
    })
}

/// Sum over points of the squared distance to the nearest center.
pub fn local_objective(points: ArrayView2<f64>, centers: ArrayView2<f64>) -> Result<f64> {
    if centers.nrows() == 0 {
        return Err(Error::invalid("objective needs at least one center"));
    }
    check_dim(centers.ncols(), points.ncols())?;
    Ok(points.outer_iter().map(|p| nearest(p, centers).1).sum())
}

/// One local Lloyd step: assign against `model`, then recompute means.
pub fn lloyd_step(points: ArrayView2<f64>, model: &ClusterModel) -> Result<(Assignment, ClusterModel)> {
    let assignment = assign(points, model.centers.view())?;
    let updated = update_centers(points, &assignment, model.k(), model)?;
    Ok((assignment, updated))
}
