//! k-means, silhouette score and a two-component PCA projection for session
//! embeddings.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;

fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans<T> {
    pub centroids: Vec<Vec<T>>,
    pub labels: Vec<usize>,
    pub inertia: T,
}

/// Lloyd's algorithm with k-means++ seeding, best of `restarts` runs.
pub fn kmeans<T: Scalar>(points: &[Vec<T>], k: usize, restarts: usize, seed: u64) -> KMeans<T> {
    assert!(k >= 1 && points.len() >= k, "need at least k points");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeans<T>> = None;
    for _ in 0..restarts.max(1) {
        let run = lloyd(points, plus_plus_init(points, k, &mut rng));
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    best.expect("at least one restart")
}

fn plus_plus_init<T: Scalar, R: Rng>(points: &[Vec<T>], k: usize, rng: &mut R) -> Vec<Vec<T>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    while centroids.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .map(|p| centroids.iter().map(|c| sq_dist(p, c)).fold(T::infinity(), T::min).as_f64())
            .collect();
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            d2.iter().position(|&d| {
                r -= d;
                r <= 0.0
            })
            .unwrap_or(points.len() - 1)
        } else {
            rng.random_range(0..points.len())
        };
        centroids.push(points[next].clone());
    }
    centroids
}

fn lloyd<T: Scalar>(points: &[Vec<T>], mut centroids: Vec<Vec<T>>) -> KMeans<T> {
    let dim = points[0].len();
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..300 {
        let mut changed = false;
        for (p, label) in points.iter().zip(labels.iter_mut()) {
            let nearest = nearest(p, &centroids);
            if nearest != *label {
                *label = nearest;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<&Vec<T>> = points.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(p, _)| p).collect();
            if members.is_empty() {
                continue;
            }
            let n = T::from_usize_lossy(members.len());
            *centroid = (0..dim).map(|d| members.iter().map(|p| p[d]).sum::<T>() / n).collect();
        }
    }
    let inertia = points.iter().zip(&labels).map(|(p, &l)| sq_dist(p, &centroids[l])).sum();
    KMeans { centroids, labels, inertia }
}

fn nearest<T: Scalar>(p: &[T], centroids: &[Vec<T>]) -> usize {
    let mut best = (0, T::infinity());
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(p, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best.0
}

/// Mean silhouette coefficient with Euclidean distance. Points in singleton
/// clusters score 0. Returns `None` unless there are at least 2 clusters.
pub fn mean_silhouette<T: Scalar>(points: &[Vec<T>], labels: &[usize]) -> Option<T> {
    let k = labels.iter().copied().max()? + 1;
    let sizes: Vec<usize> = (0..k).map(|c| labels.iter().filter(|&&l| l == c).count()).collect();
    if sizes.iter().filter(|&&n| n > 0).count() < 2 {
        return None;
    }
    let mut total = T::zero();
    for (i, p) in points.iter().enumerate() {
        let own = labels[i];
        if sizes[own] <= 1 {
            continue;
        }
        let mut sums = vec![T::zero(); k];
        for (j, q) in points.iter().enumerate() {
            if i != j {
                sums[labels[j]] += sq_dist(p, q).sqrt();
            }
        }
        let a = sums[own] / T::from_usize_lossy(sizes[own] - 1);
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / T::from_usize_lossy(sizes[c]))
            .fold(T::infinity(), T::min);
        let denom = a.max(b);
        if denom > T::zero() {
            total += (b - a) / denom;
        }
    }
    Some(total / T::from_usize_lossy(points.len()))
}

/// Projects rows onto the top two principal components. Each component's
/// sign is fixed so that its first non-negligible loading is positive.
pub fn pca_2d(points: &[Vec<f64>]) -> Vec<[f64; 2]> {
    let n = points.len();
    if n == 0 {
        return vec![];
    }
    let dim = points[0].len();
    let mean: Vec<f64> = (0..dim).map(|d| points.iter().map(|p| p[d]).sum::<f64>() / n as f64).collect();
    let centered = DMatrix::from_fn(n, dim, |r, c| points[r][c] - mean[c]);
    let cov = centered.transpose() * &centered / (n.max(2) - 1) as f64;
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let components: Vec<Vec<f64>> = order
        .iter()
        .take(2)
        .map(|&idx| {
            let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
            if v.iter().find(|x| x.abs() > 1e-12).is_some_and(|&x| x < 0.0) {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();

    (0..n)
        .map(|r| {
            let mut out = [0.0; 2];
            for (k, comp) in components.iter().enumerate() {
                out[k] = (0..dim).map(|c| centered[(r, c)] * comp[c]).sum();
            }
            out
        })
        .collect()
}
