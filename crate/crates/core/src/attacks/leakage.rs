//! Scoring how well clusters line up with private classes.

use serde::{Deserialize, Serialize};

use super::dbscan::{ClusterAssignment, NOISE};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnsupervisedLeakage {
    /// Fraction of rows whose private class equals their cluster's majority;
    /// noise rows are assigned the global majority class.
    pub accuracy: f64,
    /// Share of clusters whose majority private class holds more than half the members.
    pub private_majority_fraction: f64,
    pub clusters: usize,
    pub noise_fraction: f64,
    /// Accuracy of always guessing the global majority class.
    pub baseline: f64,
    /// Set when no cluster was found and the score is the baseline.
    pub no_clusters: bool,
}

fn majority(counts: &[usize]) -> (usize, usize) {
    let mut best = 0;
    for (k, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = k;
        }
    }
    (best, counts[best])
}

pub fn unsupervised_leakage(
    assignment: &ClusterAssignment,
    private: &[usize],
    classes: usize,
) -> Result<UnsupervisedLeakage> {
    let n = private.len();
    if assignment.labels.len() != n || n == 0 {
        return Err(Error::InvalidArgument(format!(
            "{} cluster labels for {n} private labels",
            assignment.labels.len()
        )));
    }
    if let Some(p) = private.iter().find(|&&p| p >= classes) {
        return Err(Error::InvalidArgument(format!("private label {p} outside 0..{classes}")));
    }
    let k = assignment.cluster_count();
    let mut global = vec![0usize; classes];
    let mut per = vec![vec![0usize; classes]; k];
    for (&l, &p) in assignment.labels.iter().zip(private) {
        global[p] += 1;
        if l != NOISE {
            per[l as usize][p] += 1;
        }
    }
    let (global_major, global_count) = majority(&global);
    let mut hits = 0usize;
    let mut pure = 0usize;
    for counts in &per {
        let (_, top) = majority(counts);
        hits += top;
        if 2 * top > counts.iter().sum::<usize>() {
            pure += 1;
        }
    }
    hits += assignment
        .labels
        .iter()
        .zip(private)
        .filter(|&(&l, &p)| l == NOISE && p == global_major)
        .count();
    Ok(UnsupervisedLeakage {
        accuracy: hits as f64 / n as f64,
        private_majority_fraction: if k == 0 { 0.0 } else { pure as f64 / k as f64 },
        clusters: k,
        noise_fraction: assignment.noise_fraction(),
        baseline: global_count as f64 / n as f64,
        no_clusters: k == 0,
    })
}
