//! Multi-modal fusion, K-means over a rolling queue of fused embeddings, and
//! nearest-centroid assignment.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::numeric::{seeded_rng, Graph, NodeId, Real, Tensor};
use crate::seeds;

/// `R = (g_v + g_t + g_a) / 3`, row by row.
pub fn fuse_multimodal<T: Real>(g: &mut Graph<T>, gv: NodeId, gt: NodeId, ga: NodeId) -> Result<NodeId> {
    g.mean_of(&[gv, gt, ga])
}

pub fn fuse_multimodal_value<T: Real>(gv: &Tensor<T>, gt: &Tensor<T>, ga: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let (a, b, c) = (g.input(gv.clone()), g.input(gt.clone()), g.input(ga.clone()));
    let r = fuse_multimodal(&mut g, a, b, c)?;
    Ok(g.value(r).clone())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CentroidSet<T = f32> {
    pub k: usize,
    pub dim: usize,
    pub centroids: Tensor<T>,
    /// Sum of squared distances to the nearest centroid at the last fit.
    pub inertia: f64,
}

#[derive(Clone, Debug)]
pub enum KMeansInit<'a, T = f32> {
    KMeansPlusPlus,
    WarmStart(&'a CentroidSet<T>),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub max_iters: usize,
    /// Stop once an iteration improves inertia by less than this fraction.
    pub tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            max_iters: 10,
            tol: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansFit<T = f32> {
    pub centroids: CentroidSet<T>,
    pub assignments: Vec<usize>,
    /// Inertia of the initial centroids followed by one entry per Lloyd
    /// iteration.
    pub history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid and its squared distance; ties go to the lowest index.
fn nearest(p: &[f64], centroids: &[f64], d: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.chunks(d).enumerate() {
        let dist = sq_dist(p, c);
        if dist < best.1 {
            best = (j, dist);
        }
    }
    best
}

fn assign_f64(points: &[f64], centroids: &[f64], d: usize) -> Vec<(usize, f64)> {
    let n = points.len() / d;
    exec::map_indices(n, |i| nearest(&points[i * d..(i + 1) * d], centroids, d))
}

/// Index of the nearest centroid (squared Euclidean) for each point.
pub fn assign<T: Real>(points: &Tensor<T>, centroids: &Tensor<T>) -> Result<Vec<usize>> {
    let (_, d) = points.require_matrix("points")?;
    let (k, cd) = centroids.require_matrix("centroids")?;
    if cd != d {
        return Err(Error::dim(format!("points have width {d}, centroids {cd}")));
    }
    if k == 0 {
        return Err(Error::contract("assign: empty centroid set"));
    }
    let p: Vec<f64> = points.data().iter().map(|v| v.as_f64()).collect();
    let c: Vec<f64> = centroids.data().iter().map(|v| v.as_f64()).collect();
    Ok(assign_f64(&p, &c, d).into_iter().map(|(j, _)| j).collect())
}

fn kmeans_pp<R: Rng>(rng: &mut R, points: &[f64], n: usize, d: usize, k: usize) -> Vec<f64> {
    let mut chosen = vec![rng.random_range(0..n)];
    let mut dist: Vec<f64> = (0..n)
        .map(|i| sq_dist(&points[i * d..(i + 1) * d], &points[chosen[0] * d..(chosen[0] + 1) * d]))
        .collect();
    while chosen.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (i, &w) in dist.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            // every point coincides with a chosen centroid
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        let c = &points[next * d..(next + 1) * d];
        for (i, di) in dist.iter_mut().enumerate() {
            *di = di.min(sq_dist(&points[i * d..(i + 1) * d], c));
        }
    }
    chosen
        .iter()
        .flat_map(|&i| points[i * d..(i + 1) * d].iter().copied())
        .collect()
}

/// One Lloyd update: per-cluster means, with empty clusters re-seeded at
/// the points farthest from their current centroid.
fn lloyd_update(points: &[f64], labels: &[(usize, f64)], d: usize, k: usize) -> Vec<f64> {
    let mut sums = vec![0.0; k * d];
    let mut counts = vec![0usize; k];
    for (i, &(j, _)) in labels.iter().enumerate() {
        counts[j] += 1;
        for (s, &x) in sums[j * d..(j + 1) * d].iter_mut().zip(&points[i * d..(i + 1) * d]) {
            *s += x;
        }
    }
    let mut far: Vec<usize> = (0..labels.len()).collect();
    far.sort_by(|&a, &b| labels[b].1.total_cmp(&labels[a].1).then(a.cmp(&b)));
    let mut far = far.into_iter();
    for j in 0..k {
        let c = &mut sums[j * d..(j + 1) * d];
        if counts[j] > 0 {
            let n = counts[j] as f64;
            c.iter_mut().for_each(|s| *s /= n);
        } else if let Some(i) = far.next() {
            c.copy_from_slice(&points[i * d..(i + 1) * d]);
        }
    }
    sums
}

/// Lloyd's algorithm on `points` (`[N × d]`). Stops after `max_iters`
/// iterations or once the relative inertia improvement drops below `tol`.
pub fn kmeans_fit<T: Real>(
    points: &Tensor<T>,
    k: usize,
    init: KMeansInit<'_, T>,
    params: KMeansParams,
    seed: u64,
) -> Result<KMeansFit<T>> {
    let (n, d) = if points.rank() == 2 {
        (points.rows(), points.cols())
    } else {
        return Err(Error::dim("kmeans: points must be a matrix"));
    };
    if k == 0 {
        return Err(Error::config("k", "must be positive"));
    }
    if n < k {
        return Err(Error::contract(format!(
            "kmeans needs at least k={k} points, got {n}"
        )));
    }
    let pts: Vec<f64> = points.data().iter().map(|v| v.as_f64()).collect();
    let mut centroids = match init {
        KMeansInit::KMeansPlusPlus => kmeans_pp(&mut seeded_rng(seed, seeds::KMEANS), &pts, n, d, k),
        KMeansInit::WarmStart(prev) => {
            if prev.k != k || prev.dim != d {
                return Err(Error::dim(format!(
                    "warm start has {}×{} centroids, need {k}×{d}",
                    prev.k, prev.dim
                )));
            }
            prev.centroids.data().iter().map(|v| v.as_f64()).collect()
        }
    };
    let mut labels = assign_f64(&pts, &centroids, d);
    let mut inertia: f64 = labels.iter().map(|l| l.1).sum();
    let mut history = vec![inertia];
    for _ in 0..params.max_iters {
        centroids = lloyd_update(&pts, &labels, d, k);
        labels = assign_f64(&pts, &centroids, d);
        let next: f64 = labels.iter().map(|l| l.1).sum();
        history.push(next);
        let improvement = inertia - next;
        inertia = next;
        if improvement <= params.tol * inertia.max(f64::MIN_POSITIVE) || inertia == 0.0 {
            break;
        }
    }
    if centroids.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("kmeans produced non-finite centroids"));
    }
    Ok(KMeansFit {
        centroids: CentroidSet {
            k,
            dim: d,
            centroids: Tensor::new(vec![k, d], centroids.into_iter().map(T::from_f64).collect())?,
            inertia,
        },
        assignments: labels.into_iter().map(|(j, _)| j).collect(),
        history,
    })
}

/// FIFO of the most recent fused-embedding batches.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterQueue<T = f32> {
    capacity: usize,
    buffer: VecDeque<Tensor<T>>,
}

impl<T: Real> ClusterQueue<T> {
    pub fn new(capacity_batches: usize) -> Result<Self> {
        if capacity_batches == 0 {
            return Err(Error::config("queue_batches", "must be positive"));
        }
        Ok(Self {
            capacity: capacity_batches,
            buffer: VecDeque::with_capacity(capacity_batches),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn batches(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.buffer.iter()
    }

    /// Appends a batch, evicting the oldest once full.
    pub fn push(&mut self, batch: Tensor<T>) -> Result<()> {
        let (_, d) = batch.require_matrix("queue batch")?;
        if let Some(first) = self.buffer.front() {
            if first.cols() != d {
                return Err(Error::dim(format!(
                    "queue holds width {}, got {d}",
                    first.cols()
                )));
            }
        }
        if self.buffer.len() == self.capacity {
            self.buffer.pop_front();
        }
        self.buffer.push_back(batch);
        Ok(())
    }

    /// Retained batches stacked oldest first. Empty queue gives a `[0 × 0]`
    /// matrix.
    pub fn snapshot(&self) -> Tensor<T> {
        let d = self.buffer.front().map_or(0, Tensor::cols);
        let rows: usize = self.buffer.iter().map(Tensor::rows).sum();
        let mut data = Vec::with_capacity(rows * d);
        for b in &self.buffer {
            data.extend_from_slice(b.data());
        }
        Tensor::new(vec![rows, d], data).expect("consistent widths")
    }
}
