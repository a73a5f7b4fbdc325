//! Spectral grouping of one room type's images into room spaces.
//!
//! The overlap matrix is treated as an affinity matrix. Its symmetric
//! normalized Laplacian `I − D^{-1/2} W D^{-1/2}` is diagonalized, the
//! eigenvectors of the `k` smallest eigenvalues are row-normalized into a
//! spectral embedding, and k-means on those rows yields the room groups.
//! A single noise-removal pass then moves weakly connected members of each
//! group to the unassigned bucket.

mod dense;
mod jacobi;
mod kmeans;

use std::collections::HashMap;

use thiserror::Error;

use crate::overlap::OverlapMatrix;

pub use dense::Matrix;
pub use jacobi::{jacobi_eigen, SymmetricEigen};
pub use kmeans::kmeans;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClusterError {
    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {off_norm:e})")]
    NoConvergence { sweeps: usize, off_norm: f64 },
    #[error("invalid clustering parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClusterWarning {
    /// Fewer images than requested groups; every image became a singleton.
    DegenerateInput { images: usize, k: usize },
    /// Noise removal emptied a previously non-empty group.
    EmptiedGroup { index: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralParams {
    pub k: usize,
    pub seed: u64,
    pub kmeans_max_iters: usize,
    pub kmeans_tol: f64,
    pub jacobi_tol: f64,
    pub jacobi_max_sweeps: usize,
    pub degree_epsilon: f64,
}

impl Default for SpectralParams {
    fn default() -> Self {
        SpectralParams {
            k: 1,
            seed: 0,
            kmeans_max_iters: 100,
            kmeans_tol: 1e-9,
            jacobi_tol: 1e-10,
            jacobi_max_sweeps: 100,
            degree_epsilon: 1e-12,
        }
    }
}

impl SpectralParams {
    pub fn with_k(k: usize, seed: u64) -> Self {
        SpectralParams {
            k,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ClusterError> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ClusterError::InvalidParams(format!("{name} must be positive, got {v}")))
            }
        };
        if self.k == 0 {
            return Err(ClusterError::InvalidParams("k must be at least 1".into()));
        }
        positive("kmeans_tol", self.kmeans_tol)?;
        positive("jacobi_tol", self.jacobi_tol)?;
        positive("degree_epsilon", self.degree_epsilon)
    }
}

/// `k` groups of image ids plus the ids pruned as noise.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Grouping {
    pub groups: Vec<Vec<String>>,
    pub unassigned: Vec<String>,
}

impl Grouping {
    pub fn all_ids(&self) -> impl Iterator<Item = &String> {
        self.groups.iter().flatten().chain(&self.unassigned)
    }

    /// Group index per id; unassigned ids are absent.
    pub fn labels(&self) -> HashMap<&str, usize> {
        self.groups
            .iter()
            .enumerate()
            .flat_map(|(g, ids)| ids.iter().map(move |id| (id.as_str(), g)))
            .collect()
    }
}

/// `L = I − D^{-1/2} W D^{-1/2}` with degrees floored at `eps`.
pub fn normalized_laplacian(w: &OverlapMatrix, eps: f64) -> Matrix {
    let n = w.len();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| 1.0 / w.row(i).iter().sum::<f64>().max(eps).sqrt())
        .collect();
    Matrix::from_fn(n, n, |i, j| {
        let identity = if i == j { 1.0 } else { 0.0 };
        // scale product first so the result is exactly symmetric
        identity - (inv_sqrt[i] * inv_sqrt[j]) * w.get(i, j)
    })
}

/// Row-normalized eigenvectors of the `k` smallest Laplacian eigenvalues.
/// Zero rows map to `e_1`.
pub fn spectral_embed(w: &OverlapMatrix, params: &SpectralParams) -> Result<Matrix, ClusterError> {
    params.validate()?;
    let n = w.len();
    if n < params.k {
        return Err(ClusterError::InvalidParams(format!(
            "spectral embedding needs n >= k (n={n}, k={})",
            params.k
        )));
    }
    let lap = normalized_laplacian(w, params.degree_epsilon);
    let eig = jacobi_eigen(&lap, params.jacobi_tol, params.jacobi_max_sweeps)?;
    let mut out = Matrix::from_fn(n, params.k, |i, j| eig.vectors[(i, j)]);
    for i in 0..n {
        let row = out.row_mut(i);
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|x| *x /= norm);
        } else {
            row.iter_mut().for_each(|x| *x = 0.0);
            row[0] = 1.0;
        }
    }
    Ok(out)
}

/// Spectral clustering of the matrix ids into exactly `params.k` groups.
///
/// Groups are ordered by their earliest member in matrix order; empty
/// groups come last. k-means runs on the embedding rows sorted
/// lexicographically, so the partition does not depend on the id order of
/// `w`.
pub fn spectral_cluster(
    w: &OverlapMatrix,
    params: &SpectralParams,
) -> Result<(Grouping, Vec<ClusterWarning>), ClusterError> {
    params.validate()?;
    let n = w.len();
    let k = params.k;
    if n < k {
        let mut groups: Vec<Vec<String>> = w.ids().iter().map(|id| vec![id.clone()]).collect();
        groups.resize(k, Vec::new());
        return Ok((
            Grouping {
                groups,
                unassigned: vec![],
            },
            vec![ClusterWarning::DegenerateInput { images: n, k }],
        ));
    }

    let embedding = spectral_embed(w, params)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        embedding
            .row(a)
            .iter()
            .zip(embedding.row(b))
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let sorted = Matrix::from_fn(n, k, |i, j| embedding[(order[i], j)]);
    let sorted_labels = kmeans(&sorted, k, params.seed, params.kmeans_max_iters, params.kmeans_tol);
    let mut labels = vec![0usize; n];
    for (pos, &row) in order.iter().enumerate() {
        labels[row] = sorted_labels[pos];
    }

    let mut slot_of_label: Vec<Option<usize>> = vec![None; k];
    let mut groups: Vec<Vec<String>> = Vec::with_capacity(k);
    for (i, &label) in labels.iter().enumerate() {
        let slot = *slot_of_label[label].get_or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[slot].push(w.ids()[i].clone());
    }
    groups.resize(k, Vec::new());
    Ok((
        Grouping {
            groups,
            unassigned: vec![],
        },
        vec![],
    ))
}

/// Mean overlap of each member with the other members of its group.
pub fn member_means(group: &[String], w: &OverlapMatrix) -> Vec<f64> {
    let index = w.index_map();
    let rows: Vec<usize> = group.iter().map(|id| index[id.as_str()]).collect();
    let m = rows.len();
    rows.iter()
        .map(|&i| {
            let sum: f64 = rows.iter().filter(|&&j| j != i).map(|&j| w.get(i, j)).sum();
            sum / (m - 1) as f64
        })
        .collect()
}

/// Mean pairwise overlap within a group; 1 for singletons, 0 when empty.
pub fn mean_internal_score(group: &[String], w: &OverlapMatrix) -> f64 {
    match group.len() {
        0 => 0.0,
        1 => 1.0,
        m => member_means(group, w).iter().sum::<f64>() / m as f64,
    }
}

/// Moves every member whose mean in-group overlap is below `tau` times the
/// group's best member mean to `unassigned`. Groups with fewer than two
/// members are left alone; the group count never changes.
///
/// *Panics* if a grouped id is missing from `w`.
pub fn remove_noise(g: &Grouping, w: &OverlapMatrix, tau: f64) -> Grouping {
    let mut out = Grouping {
        groups: Vec::with_capacity(g.groups.len()),
        unassigned: g.unassigned.clone(),
    };
    for group in &g.groups {
        if group.len() < 2 {
            out.groups.push(group.clone());
            continue;
        }
        let means = member_means(group, w);
        let best = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let threshold = tau * best;
        let mut kept = Vec::with_capacity(group.len());
        for (id, &m) in group.iter().zip(&means) {
            if m < threshold {
                out.unassigned.push(id.clone());
            } else {
                kept.push(id.clone());
            }
        }
        out.groups.push(kept);
    }
    out
}

/// Indices of groups that were non-empty in `before` and are empty in `after`.
pub fn emptied_groups(before: &Grouping, after: &Grouping) -> Vec<ClusterWarning> {
    before
        .groups
        .iter()
        .zip(&after.groups)
        .enumerate()
        .filter(|(_, (b, a))| !b.is_empty() && a.is_empty())
        .map(|(index, _)| ClusterWarning::EmptiedGroup { index })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("i{i}")).collect()
    }

    fn matrix(rows: &[Vec<f64>]) -> OverlapMatrix {
        OverlapMatrix::from_dense(ids(rows.len()), rows.concat()).unwrap()
    }

    fn block_matrix(sizes: &[usize], inside: f64, across: f64) -> OverlapMatrix {
        let block: Vec<usize> = sizes.iter().enumerate().flat_map(|(b, &s)| vec![b; s]).collect();
        OverlapMatrix::from_pairs(ids(block.len()), |i, j| {
            Ok::<_, ()>(if block[i] == block[j] { inside } else { across })
        })
        .unwrap()
    }

    #[test]
    fn laplacian_hand_values() {
        let l = normalized_laplacian(&matrix(&[vec![1.0, 0.0], vec![0.0, 1.0]]), 1e-12);
        assert_eq!(l.as_slice(), &[0.0, 0.0, 0.0, 0.0]);
        // D = diag(2,2): L = I - W/2
        let l = normalized_laplacian(&matrix(&[vec![1.0, 1.0], vec![1.0, 1.0]]), 1e-12);
        for (got, want) in l.as_slice().iter().zip([0.5, -0.5, -0.5, 0.5]) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn laplacian_is_symmetric() {
        let w = OverlapMatrix::from_pairs(ids(7), |i, j| Ok::<_, ()>(((i * 13 + j * 7) % 10) as f64 / 10.0)).unwrap();
        assert!(normalized_laplacian(&w, 1e-12).is_symmetric());
    }

    #[test]
    fn block_embedding_is_constant_within_blocks() {
        let w = block_matrix(&[3, 4], 1.0, 0.0);
        let e = spectral_embed(&w, &SpectralParams::with_k(2, 0)).unwrap();
        for block in [0..3, 3..7] {
            let first = e.row(block.start).to_vec();
            for i in block {
                for (a, b) in e.row(i).iter().zip(&first) {
                    assert!((a - b).abs() < 1e-6);
                }
            }
        }
        let dot: f64 = e.row(0).iter().zip(e.row(3)).map(|(a, b)| a * b).sum();
        assert!(dot.abs() < 1e-6, "blocks should map to orthogonal directions");
    }

    #[test]
    fn full_basis_rows_are_unit() {
        let w = OverlapMatrix::from_pairs(ids(5), |i, j| Ok::<_, ()>(0.1 + ((i + 2 * j) % 4) as f64 / 5.0)).unwrap();
        let e = spectral_embed(&w, &SpectralParams::with_k(5, 0)).unwrap();
        for i in 0..5 {
            let norm: f64 = e.row(i).iter().map(|x| x * x).sum();
            assert!((norm - 1.0).abs() < 1e-12);
        }
        let e = spectral_embed(&matrix(&[vec![1.0]]), &SpectralParams::with_k(1, 0)).unwrap();
        assert_eq!(e.as_slice(), &[1.0]);
    }

    #[test]
    fn planted_fig5_shape() {
        let w = block_matrix(&[3, 3, 3, 3], 0.9, 0.1);
        let (g, warnings) = spectral_cluster(&w, &SpectralParams::with_k(4, 11)).unwrap();
        assert!(warnings.is_empty());
        let expected: Vec<Vec<String>> = (0..4).map(|b| ids(12)[b * 3..b * 3 + 3].to_vec()).collect();
        assert_eq!(g.groups, expected);
    }

    #[test]
    fn fewer_images_than_rooms() {
        let w = block_matrix(&[3], 0.8, 0.0);
        let (g, warnings) = spectral_cluster(&w, &SpectralParams::with_k(5, 0)).unwrap();
        assert_eq!(g.groups.len(), 5);
        assert_eq!(g.groups.iter().filter(|x| x.len() == 1).count(), 3);
        assert_eq!(g.groups.iter().filter(|x| x.is_empty()).count(), 2);
        assert_eq!(warnings, vec![ClusterWarning::DegenerateInput { images: 3, k: 5 }]);
    }

    #[test]
    fn invalid_params() {
        let w = block_matrix(&[2], 0.8, 0.0);
        assert!(spectral_cluster(&w, &SpectralParams::with_k(0, 0)).is_err());
        let p = SpectralParams {
            jacobi_tol: 0.0,
            ..SpectralParams::with_k(1, 0)
        };
        assert!(spectral_cluster(&w, &p).is_err());
    }

    fn group(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn uniform_group_keeps_everyone() {
        let w = OverlapMatrix::from_pairs(group(&["a", "b", "c", "d"]), |_, _| Ok::<_, ()>(0.8)).unwrap();
        let g = Grouping {
            groups: vec![group(&["a", "b", "c", "d"])],
            unassigned: vec![],
        };
        assert_eq!(remove_noise(&g, &w, 0.5), g);
        assert_eq!(remove_noise(&g, &w, 1.0), g);
    }

    #[test]
    fn outlier_removed_by_hand_threshold() {
        // m_a = m_b = (0.9+0.2)/2 = 0.55, m_c = 0.2; 0.5 * 0.55 = 0.275 > 0.2
        let w = matrix(&[vec![1.0, 0.9, 0.2], vec![0.9, 1.0, 0.2], vec![0.2, 0.2, 1.0]]);
        let g = Grouping {
            groups: vec![group(&["i0", "i1", "i2"]), group(&[])],
            unassigned: vec![],
        };
        let means = member_means(&g.groups[0], &w);
        assert!((means[0] - 0.55).abs() < 1e-12 && (means[2] - 0.2).abs() < 1e-12);
        let out = remove_noise(&g, &w, 0.5);
        assert_eq!(out.groups, vec![group(&["i0", "i1"]), group(&[])]);
        assert_eq!(out.unassigned, group(&["i2"]));
    }

    #[test]
    fn tau_one_keeps_only_top_tier() {
        let w = matrix(&[
            vec![1.0, 0.9, 0.5, 0.9],
            vec![0.9, 1.0, 0.5, 0.9],
            vec![0.5, 0.5, 1.0, 0.5],
            vec![0.9, 0.9, 0.5, 1.0],
        ]);
        let g = Grouping {
            groups: vec![group(&["i0", "i1", "i2", "i3"])],
            unassigned: vec![],
        };
        let out = remove_noise(&g, &w, 1.0);
        assert_eq!(out.groups[0], group(&["i0", "i1", "i3"]));
        assert_eq!(out.unassigned, group(&["i2"]));
    }

    #[test]
    fn singletons_untouched_and_partition_preserved() {
        let w = block_matrix(&[2, 1, 3], 0.7, 0.05);
        let (g, _) = spectral_cluster(&w, &SpectralParams::with_k(3, 5)).unwrap();
        let out = remove_noise(&g, &w, 0.9);
        let before: BTreeSet<_> = g.all_ids().collect();
        let after: Vec<_> = out.all_ids().collect();
        assert_eq!(after.len(), before.len());
        assert_eq!(after.into_iter().collect::<BTreeSet<_>>(), before);
        assert_eq!(out.groups.len(), 3);
    }

    #[test]
    fn internal_score_edge_cases() {
        let w = matrix(&[vec![1.0, 0.4], vec![0.4, 1.0]]);
        assert_eq!(mean_internal_score(&[], &w), 0.0);
        assert_eq!(mean_internal_score(&group(&["i0"]), &w), 1.0);
        assert!((mean_internal_score(&group(&["i0", "i1"]), &w) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn emptied_group_warning() {
        let before = Grouping {
            groups: vec![group(&["a", "b"]), group(&[])],
            unassigned: vec![],
        };
        let after = Grouping {
            groups: vec![group(&[]), group(&[])],
            unassigned: group(&["a", "b"]),
        };
        assert_eq!(emptied_groups(&before, &after), vec![ClusterWarning::EmptiedGroup { index: 0 }]);
    }
}
