//! Seeded Lloyd k-means with k-means++ initialization.
//!
//! The generator is ChaCha8 seeded from a `u64`, so labels depend only on
//! the input points and the seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dense::Matrix;

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_plus_plus(points: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.rows();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centers = vec![points.row(first).to_vec()];
    let mut d2: Vec<f64> = (0..n).map(|i| dist2(points.row(i), &centers[0])).collect();

    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                acc += w;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            pick.expect("positive total has a positive weight")
        } else {
            // all remaining points coincide with a center
            (0..n).find(|&i| !chosen[i]).unwrap_or(0)
        };
        chosen[pick] = true;
        let c = points.row(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(dist2(points.row(i), &c));
        }
        centers.push(c);
    }
    centers
}

/// Nearest center, ties to the lowest index.
fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = dist2(p, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Clusters the rows of `points` into `k` groups; returns one label per row.
///
/// Terminates when no centroid moves farther than `tol` or after
/// `max_iters` Lloyd steps. A cluster left empty by an assignment step takes
/// the point farthest from its own centroid.
///
/// *Panics* unless `1 <= k <= points.rows()`.
pub fn kmeans(points: &Matrix, k: usize, seed: u64, max_iters: usize, tol: f64) -> Vec<usize> {
    let n = points.rows();
    assert!(k >= 1 && k <= n, "kmeans needs 1 <= k <= n (k={k}, n={n})");
    if k == 1 {
        return vec![0; n];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = kmeans_plus_plus(points, k, &mut rng);
    let mut labels = vec![0usize; n];

    for _ in 0..max_iters.max(1) {
        let mut dists = vec![0.0; n];
        for i in 0..n {
            let (c, d) = nearest(points.row(i), &centers);
            labels[i] = c;
            dists[i] = d;
        }

        let mut sizes = vec![0usize; k];
        for &l in &labels {
            sizes[l] += 1;
        }
        for empty in 0..k {
            if sizes[empty] > 0 {
                continue;
            }
            let mut far: Option<usize> = None;
            for i in 0..n {
                if sizes[labels[i]] > 1 && far.is_none_or(|f| dists[i] > dists[f]) {
                    far = Some(i);
                }
            }
            let i = far.expect("n >= k leaves a donor cluster");
            sizes[labels[i]] -= 1;
            labels[i] = empty;
            sizes[empty] = 1;
            dists[i] = 0.0;
            centers[empty] = points.row(i).to_vec();
        }

        let dim = points.cols();
        let mut next = vec![vec![0.0; dim]; k];
        for i in 0..n {
            for (acc, x) in next[labels[i]].iter_mut().zip(points.row(i)) {
                *acc += x;
            }
        }
        for (c, center) in next.iter_mut().enumerate() {
            let size = sizes[c] as f64;
            center.iter_mut().for_each(|v| *v /= size);
        }
        let shift = centers
            .iter()
            .zip(&next)
            .map(|(a, b)| dist2(a, b).sqrt())
            .fold(0.0, f64::max);
        centers = next;
        if shift <= tol {
            break;
        }
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_blobs() -> Matrix {
        let mut rows = vec![vec![0.0, 0.0]; 5];
        rows.extend(vec![vec![10.0, 10.0]; 5]);
        Matrix::from_rows(&rows)
    }

    #[test]
    fn separable_blobs_split_cleanly() {
        for seed in 0..20 {
            let labels = kmeans(&two_blobs(), 2, seed, 100, 1e-9);
            assert!(labels[..5].iter().all(|&l| l == labels[0]));
            assert!(labels[5..].iter().all(|&l| l == labels[5]));
            assert_ne!(labels[0], labels[5]);
        }
    }

    #[test]
    fn same_seed_same_labels() {
        let pts = Matrix::from_fn(30, 3, |i, j| ((i * 31 + j * 17) % 13) as f64 / 3.0);
        let a = kmeans(&pts, 4, 42, 100, 1e-9);
        let b = kmeans(&pts, 4, 42, 100, 1e-9);
        assert_eq!(a, b);
        assert!(a.iter().all(|&l| l < 4));
    }

    #[test]
    fn single_cluster() {
        assert_eq!(kmeans(&two_blobs(), 1, 7, 100, 1e-9), vec![0; 10]);
    }

    #[test]
    fn k_equals_n_gives_singletons() {
        let pts = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![5.0]]);
        let mut labels = kmeans(&pts, 3, 3, 100, 1e-9);
        labels.sort_unstable();
        assert_eq!(labels, vec![0, 1, 2]);
    }

    #[test]
    fn duplicate_points_still_fill_every_cluster() {
        let pts = Matrix::from_rows(&vec![vec![1.0, 1.0]; 4]);
        let labels = kmeans(&pts, 3, 9, 100, 1e-9);
        for c in 0..3 {
            assert!(labels.contains(&c), "cluster {c} empty: {labels:?}");
        }
    }
}
