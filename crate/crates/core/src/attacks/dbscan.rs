//! Density-based clustering with a k-distance knee for choosing `ε`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NOISE: i64 = -1;
const EPS_FLOOR: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    /// Cluster id per row, [`NOISE`] for noise.
    pub labels: Vec<i64>,
    pub eps: f64,
    pub min_pts: usize,
}

impl ClusterAssignment {
    pub fn cluster_count(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize)
    }

    pub fn noise_fraction(&self) -> f64 {
        if self.labels.is_empty() {
            return 0.0;
        }
        self.labels.iter().filter(|&&l| l == NOISE).count() as f64 / self.labels.len() as f64
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn neighbors(x: &[Vec<f64>], i: usize, eps2: f64) -> Vec<usize> {
    (0..x.len()).filter(|&j| dist2(&x[i], &x[j]) <= eps2).collect()
}

/// Clusters rows by density reachability. A row is a core point when at least
/// `min_pts` rows, itself included, lie within `eps`. Core points are expanded
/// in index order.
pub fn dbscan(x: &[Vec<f64>], eps: f64, min_pts: usize) -> Result<ClusterAssignment> {
    if !(eps > 0.0) || min_pts < 2 {
        return Err(Error::InvalidArgument(format!(
            "DBSCAN needs eps > 0 and min_pts >= 2, got {eps} and {min_pts}"
        )));
    }
    const UNSEEN: i64 = -2;
    let eps2 = eps * eps;
    let mut labels = vec![UNSEEN; x.len()];
    let mut next = 0i64;
    for i in 0..x.len() {
        if labels[i] != UNSEEN {
            continue;
        }
        let seeds = neighbors(x, i, eps2);
        if seeds.len() < min_pts {
            labels[i] = NOISE;
            continue;
        }
        let id = next;
        next += 1;
        labels[i] = id;
        let mut queue = std::collections::VecDeque::from(seeds);
        while let Some(j) = queue.pop_front() {
            if labels[j] == NOISE {
                labels[j] = id;
            }
            if labels[j] != UNSEEN {
                continue;
            }
            labels[j] = id;
            let nb = neighbors(x, j, eps2);
            if nb.len() >= min_pts {
                queue.extend(nb.into_iter().filter(|&k| labels[k] == UNSEEN || labels[k] == NOISE));
            }
        }
    }
    Ok(ClusterAssignment {
        labels,
        eps,
        min_pts,
    })
}

/// Sorted distances from every row to its `k`-th nearest other row.
pub fn k_distances(x: &[Vec<f64>], k: usize) -> Vec<f64> {
    let mut out: Vec<f64> = (0..x.len())
        .map(|i| {
            let mut d: Vec<f64> = (0..x.len())
                .filter(|&j| j != i)
                .map(|j| dist2(&x[i], &x[j]))
                .collect();
            let k = k.min(d.len()).max(1) - 1;
            let (_, kth, _) = d.select_nth_unstable_by(k, f64::total_cmp);
            kth.sqrt()
        })
        .collect();
    out.sort_by(f64::total_cmp);
    out
}

/// Point of the sorted curve farthest below the chord joining its ends, on
/// axes rescaled to the unit square. `None` when no point lies below the chord.
pub fn knee(curve: &[f64]) -> Option<usize> {
    let n = curve.len();
    if n < 3 {
        return None;
    }
    let (lo, hi) = (curve[0], curve[n - 1]);
    if !(hi - lo > 0.0) {
        return None;
    }
    let mut best = None;
    let mut best_gap = 1e-12;
    for (i, &y) in curve.iter().enumerate() {
        let xs = i as f64 / (n - 1) as f64;
        let ys = (y - lo) / (hi - lo);
        let gap = xs - ys;
        if gap > best_gap {
            best_gap = gap;
            best = Some(i);
        }
    }
    best
}

/// `min_pts = max(10, 2·dim)`; `ε` at the knee of the `(min_pts − 1)`-nearest
/// other-row distance curve, so that a row at the knee is exactly a core
/// point. A flat curve or a zero-distance knee falls back to the median
/// distance, floored at `1e-9`.
pub fn choose_dbscan_params(x: &[Vec<f64>]) -> Result<(f64, usize)> {
    let dim = x.first().map_or(0, Vec::len);
    let min_pts = (2 * dim).max(10);
    if x.len() <= min_pts {
        return Err(Error::InvalidArgument(format!(
            "choosing DBSCAN parameters needs more than {min_pts} rows, got {}",
            x.len()
        )));
    }
    let curve = k_distances(x, min_pts - 1);
    let eps = knee(&curve)
        .map(|i| curve[i])
        .filter(|&e| e > 0.0)
        .unwrap_or(curve[curve.len() / 2]);
    Ok((eps.max(EPS_FLOOR), min_pts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Stream};
    use proptest::prelude::*;

    fn blobs(seed: u64, per: usize, radius: f64, centers: &[[f64; 2]]) -> Vec<Vec<f64>> {
        let mut rng = rng::stream(seed, Stream::Sampling, 3);
        let mut out = Vec::new();
        for c in centers {
            for _ in 0..per {
                let a = 2.0 * std::f64::consts::PI * rng::unit(&mut rng);
                let r = radius * rng::unit(&mut rng).sqrt();
                out.push(vec![c[0] + r * a.cos(), c[1] + r * a.sin()]);
            }
        }
        out
    }

    /// Partition as a set of sorted member lists, ignoring cluster ids.
    fn partition(labels: &[i64], ids: &[usize]) -> Vec<Vec<usize>> {
        let mut groups: std::collections::BTreeMap<i64, Vec<usize>> = Default::default();
        for (k, &l) in labels.iter().enumerate() {
            let key = if l == NOISE { -1 - ids[k] as i64 - 1 } else { l };
            groups.entry(key).or_default().push(ids[k]);
        }
        let mut parts: Vec<Vec<usize>> = groups
            .into_values()
            .map(|mut g| {
                g.sort_unstable();
                g
            })
            .collect();
        parts.sort();
        parts
    }

    #[test]
    fn two_separated_clouds() {
        let x = blobs(1, 50, 0.1, &[[0.0, 0.0], [10.0, 0.0]]);
        let a = dbscan(&x, 0.5, 5).unwrap();
        assert_eq!(a.cluster_count(), 2);
        assert_eq!(a.noise_fraction(), 0.0);
    }

    #[test]
    fn a_lone_point_is_noise() {
        let a = dbscan(&[vec![0.0, 0.0]], 1.0, 2).unwrap();
        assert_eq!(a.labels, vec![NOISE]);
    }

    #[test]
    fn identical_points_form_one_cluster() {
        let x = vec![vec![1.0, 1.0]; 20];
        let a = dbscan(&x, 0.1, 5).unwrap();
        assert_eq!(a.cluster_count(), 1);
        assert!(a.labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn chosen_parameters_recover_separated_clusters() {
        let x = blobs(2, 200, 0.3, &[[0.0, 0.0], [5.0, 5.0]]);
        let (eps, min_pts) = choose_dbscan_params(&x).unwrap();
        // oracle: the gap between the clouds is about 6.5, far above any within-cloud spacing
        assert!(eps < 6.0);
        let a = dbscan(&x, eps, min_pts).unwrap();
        assert_eq!(a.cluster_count(), 2);
        let left: std::collections::BTreeSet<i64> = a.labels[..200].iter().copied().filter(|&l| l != NOISE).collect();
        let right: std::collections::BTreeSet<i64> = a.labels[200..].iter().copied().filter(|&l| l != NOISE).collect();
        assert_eq!(left.len(), 1);
        assert_eq!(right.len(), 1);
        assert_ne!(left, right);
    }

    #[test]
    fn uniform_cube_is_reported_without_failure() {
        let mut rng = rng::stream(5, Stream::Sampling, 4);
        let x: Vec<Vec<f64>> = (0..300)
            .map(|_| (0..3).map(|_| rng::unit(&mut rng)).collect())
            .collect();
        let (eps, min_pts) = choose_dbscan_params(&x).unwrap();
        let a = dbscan(&x, eps, min_pts).unwrap();
        assert!(a.cluster_count() <= 3 || a.noise_fraction() > 0.3);
    }

    #[test]
    fn duplicate_heavy_data_uses_the_fallback() {
        let mut x = vec![vec![0.0, 0.0]; 40];
        x.push(vec![1.0, 1.0]);
        assert!(knee(&k_distances(&x[..40], 9)).is_none());
        let (eps, _) = choose_dbscan_params(&x).unwrap();
        assert_eq!(eps, EPS_FLOOR);
        let a = dbscan(&x, eps, 10).unwrap();
        assert_eq!(a.cluster_count(), 1);
        assert_eq!(a.labels[40], NOISE);
    }

    #[test]
    fn every_cluster_has_min_pts_members() {
        let x = blobs(6, 60, 0.5, &[[0.0, 0.0], [3.0, 0.0], [0.0, 3.0]]);
        let a = dbscan(&x, 0.3, 8).unwrap();
        for c in 0..a.cluster_count() as i64 {
            assert!(a.labels.iter().filter(|&&l| l == c).count() >= 8);
        }
    }

    proptest! {
        #[test]
        fn row_order_does_not_change_the_partition(seed in any::<u64>()) {
            let x = blobs(seed, 30, 0.4, &[[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]]);
            let mut order: Vec<usize> = (0..x.len()).collect();
            rng::shuffle(&mut rng::stream(seed, Stream::Sampling, 9), &mut order);
            let y: Vec<Vec<f64>> = order.iter().map(|&i| x[i].clone()).collect();
            let a = dbscan(&x, 0.6, 5).unwrap();
            let b = dbscan(&y, 0.6, 5).unwrap();
            let ids: Vec<usize> = (0..x.len()).collect();
            prop_assert_eq!(partition(&a.labels, &ids), partition(&b.labels, &order));
        }
    }
}
