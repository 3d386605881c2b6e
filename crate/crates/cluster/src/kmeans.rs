//! Lloyd's k-means with k-means++ seeding. Assignment ties break toward the
//! lowest centroid index; empty clusters are reseeded from the farthest point.

use nn_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ClusterError, Result};

#[derive(Debug, Clone)]
pub struct KMeansModel {
    /// k x d centroid matrix.
    pub centroids: Tensor,
    /// Total squared distance to assigned centroids, one entry per Lloyd
    /// iteration; nonincreasing.
    pub inertia_trace: Vec<f64>,
}

impl KMeansModel {
    pub fn k(&self) -> usize {
        self.centroids.rows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.cols()
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lowest index.
fn nearest(centroids: &Tensor, point: &[f64]) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = dist2(centroids.row(0), point);
    for j in 1..centroids.rows() {
        let d = dist2(centroids.row(j), point);
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    (best, best_d)
}

fn count_distinct(features: &Tensor) -> usize {
    let mut rows: Vec<&[f64]> = (0..features.rows()).map(|i| features.row(i)).collect();
    rows.sort_by(|a, b| a.partial_cmp(b).unwrap());
    rows.dedup();
    rows.len()
}

fn plus_plus_init(features: &Tensor, k: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let n = features.rows();
    let d = features.cols();
    let mut centroids = Tensor::zeros(vec![k, d]);
    let first = rng.gen_range(0..n);
    centroids.row_mut(0).copy_from_slice(features.row(first));
    let mut min_d2: Vec<f64> = (0..n)
        .map(|i| dist2(features.row(i), features.row(first)))
        .collect();
    for j in 1..k {
        let total: f64 = min_d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in min_d2.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        centroids.row_mut(j).copy_from_slice(features.row(pick));
        for i in 0..n {
            let dnew = dist2(features.row(i), features.row(pick));
            if dnew < min_d2[i] {
                min_d2[i] = dnew;
            }
        }
    }
    centroids
}

pub fn kmeans_fit(features: &Tensor, k: usize, iters: usize, seed: u64) -> Result<KMeansModel> {
    if k < 2 {
        return Err(ClusterError::Invalid(format!("k must be >= 2, got {k}")));
    }
    let distinct = count_distinct(features);
    if distinct < k {
        return Err(ClusterError::TooFewDistinct { distinct, k });
    }
    let n = features.rows();
    let d = features.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(features, k, &mut rng);
    let mut inertia_trace = Vec::new();
    let mut labels = vec![usize::MAX; n];
    for _ in 0..iters {
        // assignment
        let mut inertia = 0.0;
        let mut changed = false;
        for i in 0..n {
            let (j, dj) = nearest(&centroids, features.row(i));
            inertia += dj;
            if labels[i] != j {
                labels[i] = j;
                changed = true;
            }
        }
        inertia_trace.push(inertia);
        if !changed && inertia_trace.len() > 1 {
            break;
        }
        // centroid update with fixed-order accumulation
        let mut sums = Tensor::zeros(vec![k, d]);
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let j = labels[i];
            counts[j] += 1;
            for (s, &v) in sums.row_mut(j).iter_mut().zip(features.row(i)) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                let inv = 1.0 / counts[j] as f64;
                for (c, &s) in centroids.row_mut(j).iter_mut().zip(sums.row(j)) {
                    *c = s * inv;
                }
            } else {
                // reseed an empty cluster from the point farthest from its
                // centroid; the point's own distance then drops to zero and
                // no other assignment can get worse
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = dist2(features.row(a), centroids.row(labels[a]));
                        let db = dist2(features.row(b), centroids.row(labels[b]));
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                centroids.row_mut(j).copy_from_slice(features.row(far));
            }
        }
    }
    Ok(KMeansModel {
        centroids,
        inertia_trace,
    })
}

/// Nearest-centroid labels for every row of `features`.
pub fn assign(model: &KMeansModel, features: &Tensor) -> Result<Vec<usize>> {
    if features.cols() != model.dim() {
        return Err(ClusterError::DimensionMismatch {
            expected: model.dim(),
            got: features.cols(),
        });
    }
    Ok((0..features.rows())
        .map(|i| nearest(&model.centroids, features.row(i)).0)
        .collect())
}
