//! Attacks on exported bottleneck features: PCA followed by DBSCAN with a
//! cluster-majority leakage score, and supervised MLP probes.

pub mod dbscan;
pub mod leakage;
pub mod pca;
pub mod probe;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use dbscan::{choose_dbscan_params, dbscan, ClusterAssignment};
pub use leakage::{unsupervised_leakage, UnsupervisedLeakage};
pub use pca::{pca_fit, PcaModel};
pub use probe::{supervised_probe, ProbeConfig, ProbeResult};

use crate::data::Split;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::trainer::{write_atomic, FeatureExport, NUM_PRIVATE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    /// Feature rows attacked; the unbiased test split by default.
    #[serde(default = "d_split")]
    pub split: Split,
    #[serde(default)]
    pub dbscan_eps: Option<f64>,
    #[serde(default)]
    pub dbscan_min_pts: Option<usize>,
    /// Share of the attacked rows the probes train on; the rest is held out.
    #[serde(default = "d_probe_fraction")]
    pub probe_train_fraction: f64,
    #[serde(default = "d_probes")]
    pub probes: Vec<ProbeConfig>,
    #[serde(default)]
    pub seed: u64,
}

fn d_split() -> Split {
    Split::Test
}
fn d_probe_fraction() -> f64 {
    0.5
}
fn d_probes() -> Vec<ProbeConfig> {
    vec![ProbeConfig::one_hidden(), ProbeConfig::two_hidden()]
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            split: d_split(),
            dbscan_eps: None,
            dbscan_min_pts: None,
            probe_train_fraction: d_probe_fraction(),
            probes: d_probes(),
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.probe_train_fraction > 0.0 && self.probe_train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "probe_train_fraction must lie in (0, 1), got {}",
                self.probe_train_fraction
            )));
        }
        if self.dbscan_eps.is_some_and(|e| !(e > 0.0)) || self.dbscan_min_pts.is_some_and(|m| m < 2) {
            return Err(Error::Config("dbscan_eps must be positive and dbscan_min_pts at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub checkpoint_id: String,
    pub split: Split,
    pub rows: usize,
    pub pca_dim: usize,
    pub retained_energy: f64,
    pub dbscan_eps: f64,
    pub dbscan_min_pts: usize,
    pub unsupervised: UnsupervisedLeakage,
    pub probes: Vec<ProbeResult>,
}

impl LeakageReport {
    pub fn probe(&self, layout: &str) -> Option<&ProbeResult> {
        self.probes.iter().find(|p| p.layout == layout)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Row of the two-component scatter used to plot the clustering.
#[derive(Clone, Debug, PartialEq)]
pub struct ScatterRow {
    pub pc1: f64,
    pub pc2: f64,
    pub cluster: i64,
    pub target: usize,
    pub private: usize,
}

pub fn write_scatter_csv(path: &Path, rows: &[ScatterRow]) -> Result<()> {
    let mut text = String::from("pc1,pc2,cluster,t,p\n");
    for r in rows {
        text.push_str(&format!("{},{},{},{},{}\n", r.pc1, r.pc2, r.cluster, r.target, r.private));
    }
    write_atomic(path, text.as_bytes())
}

/// Runs the unsupervised attack and every configured probe on one split.
pub fn run_attacks(features: &FeatureExport, cfg: &AttackConfig) -> Result<(LeakageReport, Vec<ScatterRow>)> {
    cfg.validate()?;
    let rows = features.of_split(cfg.split);
    if rows.len() < 4 {
        return Err(Error::Data(format!(
            "feature export has {} `{}` rows; the attacks need at least 4",
            rows.len(),
            cfg.split.tag()
        )));
    }
    let x: Vec<Vec<f64>> = rows.iter().map(|r| r.v_hat.clone()).collect();
    let private: Vec<usize> = rows.iter().map(|r| r.private).collect();

    let pca = pca_fit(&x)?;
    let projected: Vec<Vec<f64>> = x.iter().map(|r| pca.project(r, pca.dim)).collect();
    let (eps, min_pts) = match (cfg.dbscan_eps, cfg.dbscan_min_pts) {
        (Some(e), Some(m)) => (e, m),
        (e, m) => {
            let (auto_e, auto_m) = choose_dbscan_params(&projected)?;
            (e.unwrap_or(auto_e), m.unwrap_or(auto_m))
        }
    };
    let assignment = dbscan(&projected, eps, min_pts)?;
    let unsupervised = unsupervised_leakage(&assignment, &private, NUM_PRIVATE)?;

    let mut order: Vec<usize> = (0..x.len()).collect();
    rng::shuffle(&mut rng::stream(cfg.seed, Stream::Probe, u32::MAX), &mut order);
    let cut = ((x.len() as f64 * cfg.probe_train_fraction).round() as usize).clamp(1, x.len() - 1);
    let pick = |ids: &[usize]| -> (Vec<Vec<f64>>, Vec<usize>) {
        (ids.iter().map(|&i| x[i].clone()).collect(), ids.iter().map(|&i| private[i]).collect())
    };
    let (tr_x, tr_y) = pick(&order[..cut]);
    let (te_x, te_y) = pick(&order[cut..]);
    let probes = cfg
        .probes
        .iter()
        .map(|p| supervised_probe(&tr_x, &tr_y, &te_x, &te_y, NUM_PRIVATE, p, cfg.seed))
        .collect::<Result<Vec<_>>>()?;

    let scatter = rows
        .iter()
        .zip(&x)
        .zip(&assignment.labels)
        .map(|((r, v), &cluster)| {
            let pc = pca.project(v, 2.min(pca.components.len()));
            ScatterRow {
                pc1: pc[0],
                pc2: pc.get(1).copied().unwrap_or(0.0),
                cluster,
                target: r.target,
                private: r.private,
            }
        })
        .collect();
    let report = LeakageReport {
        checkpoint_id: features.checkpoint_id.clone(),
        split: cfg.split,
        rows: x.len(),
        pca_dim: pca.dim,
        retained_energy: pca.retained_energy(pca.dim),
        dbscan_eps: eps,
        dbscan_min_pts: min_pts,
        unsupervised,
        probes,
    };
    Ok((report, scatter))
}
