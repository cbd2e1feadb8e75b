//! Closed-form information analysis of the biased-MNIST construction.
//!
//! Entropies are in base-10 digits, so ten uniform classes carry exactly 1.
//! `0·log 0` is taken as 0 everywhere.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CLASSES: usize = 10;
const PROB_FLOOR: f64 = 1e-9;
const GOLDEN_TOL: f64 = 1e-4;

fn xlog(x: f64) -> f64 {
    if x > 0.0 {
        x * x.log10()
    } else {
        0.0
    }
}

fn check_prob(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must lie in [0, 1], got {v}")))
    }
}

/// `H(P|T) = −ρ·log ρ − (1−ρ)·log((1−ρ)/9)`.
pub fn conditional_entropy_p_given_t(rho: f64) -> Result<f64> {
    check_prob("rho", rho)?;
    let off = (1.0 - rho) / 9.0;
    Ok(-(xlog(rho) + 9.0 * xlog(off)))
}

/// `I(P,T) = H(P) − H(P|T)` with `H(P) = 1`.
pub fn mutual_info_pt(rho: f64) -> Result<f64> {
    Ok(1.0 - conditional_entropy_p_given_t(rho)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeakageModelParams {
    pub rho: f64,
    /// Tendency of the model to classify on target features rather than private ones.
    pub b: f64,
}

impl LeakageModelParams {
    pub fn new(rho: f64, b: f64) -> Result<Self> {
        check_prob("rho", rho)?;
        check_prob("b", b)?;
        Ok(LeakageModelParams { rho, b })
    }
}

/// Probability table over `(t, p, z)`, indexed `[t][p][z]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteJoint(pub [[[f64; CLASSES]; CLASSES]; CLASSES]);

impl DiscreteJoint {
    pub fn total(&self) -> f64 {
        self.0.iter().flatten().flatten().sum()
    }

    /// `P(p, z)` by summing over `t`.
    pub fn marginal_pz(&self) -> [[f64; CLASSES]; CLASSES] {
        let mut m = [[0.0; CLASSES]; CLASSES];
        for slab in &self.0 {
            for p in 0..CLASSES {
                for z in 0..CLASSES {
                    m[p][z] += slab[p][z];
                }
            }
        }
        m
    }
}

/// `P(t,p,z) = ⅒·[δ_tpz·ρ + (1−δ_tz)·δ_tp·(1−b)(1−ρ)/9 + (1−δ_tp)·δ_tz·b(1−ρ)/9]`.
pub fn joint_tpz(params: LeakageModelParams) -> DiscreteJoint {
    let LeakageModelParams { rho, b } = params;
    let mut j = [[[0.0; CLASSES]; CLASSES]; CLASSES];
    for (t, slab) in j.iter_mut().enumerate() {
        for (p, row) in slab.iter_mut().enumerate() {
            for (z, cell) in row.iter_mut().enumerate() {
                let d = |a: usize, c: usize| if a == c { 1.0 } else { 0.0 };
                let tpz = d(t, p) * d(p, z);
                *cell = 0.1
                    * (tpz * rho
                        + (1.0 - d(t, z)) * d(t, p) * (1.0 - b) * (1.0 - rho) / 9.0
                        + (1.0 - d(t, p)) * d(t, z) * b * (1.0 - rho) / 9.0);
            }
        }
    }
    DiscreteJoint(j)
}

/// Mutual information of a two-dimensional probability table.
pub fn mutual_info_table(m: &[[f64; CLASSES]; CLASSES]) -> f64 {
    let rows: Vec<f64> = m.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..CLASSES).map(|z| m.iter().map(|r| r[z]).sum()).collect();
    let mut total = 0.0;
    for (p, row) in m.iter().enumerate() {
        for (z, &v) in row.iter().enumerate() {
            if v > 0.0 {
                total += v * (v / (rows[p] * cols[z])).log10();
            }
        }
    }
    total.max(0.0)
}

/// `I(Z,P)` from the numerically marginalized joint.
pub fn mutual_info_pz(params: LeakageModelParams) -> f64 {
    mutual_info_table(&joint_tpz(params).marginal_pz())
}

/// The closed-form `P(p,z)` as printed alongside the joint:
/// diagonal `⅒·[ρ + b(1−ρ)]`, off-diagonal `⅒·(1−b)(1−ρ)/9`.
pub fn printed_marginal_pz(params: LeakageModelParams) -> [[f64; CLASSES]; CLASSES] {
    let LeakageModelParams { rho, b } = params;
    let mut m = [[0.0; CLASSES]; CLASSES];
    for (p, row) in m.iter_mut().enumerate() {
        for (z, cell) in row.iter_mut().enumerate() {
            *cell = if p == z {
                0.1 * (rho + (1.0 - rho) / 9.0 * 9.0 * b)
            } else {
                0.1 * (1.0 - b) * (1.0 - rho) / 9.0
            };
        }
    }
    m
}

/// How far the printed `P(p,z)` is from the marginal of the joint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalGap {
    pub rho: f64,
    pub b: f64,
    /// Largest absolute cell difference.
    pub max_cell_gap: f64,
    pub mi_numeric: f64,
    pub mi_printed: f64,
}

pub fn marginal_gap(params: LeakageModelParams) -> MarginalGap {
    let numeric = joint_tpz(params).marginal_pz();
    let printed = printed_marginal_pz(params);
    let max_cell_gap = numeric
        .iter()
        .flatten()
        .zip(printed.iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    MarginalGap {
        rho: params.rho,
        b: params.b,
        max_cell_gap,
        mi_numeric: mutual_info_table(&numeric),
        mi_printed: mutual_info_table(&printed),
    }
}

/// Integer counts over `(t, p, z)` with `z` the model prediction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EmpiricalCounts(pub [[[u64; CLASSES]; CLASSES]; CLASSES]);

impl Default for EmpiricalCounts {
    fn default() -> Self {
        EmpiricalCounts([[[0; CLASSES]; CLASSES]; CLASSES])
    }
}

impl EmpiricalCounts {
    pub fn from_triples(triples: impl IntoIterator<Item = (usize, usize, usize)>) -> Result<Self> {
        let mut c = Self::default();
        for (t, p, z) in triples {
            if t >= CLASSES || p >= CLASSES || z >= CLASSES {
                return Err(Error::InvalidArgument(format!("triple ({t}, {p}, {z}) out of range")));
            }
            c.0[t][p][z] += 1;
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.0.iter().flatten().flatten().sum()
    }

    pub fn scaled(&self, k: u64) -> Self {
        let mut c = self.clone();
        c.0.iter_mut().flatten().flatten().for_each(|v| *v *= k);
        c
    }
}

/// Maximum-likelihood tendency `b̂` for the given `ρ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BEstimate {
    pub b: f64,
    pub log_likelihood: f64,
    /// Share of counts in cells the model gives zero probability.
    pub misfit_fraction: f64,
}

pub fn log_likelihood(counts: &EmpiricalCounts, params: LeakageModelParams) -> f64 {
    let j = joint_tpz(params);
    counts
        .0
        .iter()
        .flatten()
        .flatten()
        .zip(j.0.iter().flatten().flatten())
        .filter(|(&n, _)| n > 0)
        .map(|(&n, &p)| n as f64 * p.max(PROB_FLOOR).log10())
        .sum()
}

/// Golden-section search for the likelihood maximum over `b ∈ [0, 1]`.
pub fn estimate_b(counts: &EmpiricalCounts, rho: f64) -> Result<BEstimate> {
    check_prob("rho", rho)?;
    let total = counts.total();
    if total == 0 {
        return Err(Error::InvalidArgument("estimate_b needs non-empty counts".into()));
    }
    let ll = |b: f64| log_likelihood(counts, LeakageModelParams { rho, b });
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (ll(x1), ll(x2));
    while hi - lo > GOLDEN_TOL {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = ll(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = ll(x1);
        }
    }
    // the maximum of a concave likelihood may sit on the boundary
    let mut b = 0.5 * (lo + hi);
    let mut best = ll(b);
    for edge in [0.0, 1.0] {
        let v = ll(edge);
        if v > best {
            b = edge;
            best = v;
        }
    }
    let j = joint_tpz(LeakageModelParams { rho, b: 0.5 });
    let misfit: u64 = counts
        .0
        .iter()
        .flatten()
        .flatten()
        .zip(j.0.iter().flatten().flatten())
        .filter(|(_, &p)| p == 0.0)
        .map(|(&n, _)| n)
        .sum();
    Ok(BEstimate {
        b,
        log_likelihood: best,
        misfit_fraction: misfit as f64 / total as f64,
    })
}

/// `(ρ, I(P,T))` rows.
pub fn pt_curve(rhos: &[f64]) -> Result<Vec<(f64, f64)>> {
    rhos.iter().map(|&r| Ok((r, mutual_info_pt(r)?))).collect()
}

/// `ρ, b, I(Z,P)` rows with the printed-marginal variant alongside.
pub fn pz_curve(rhos: &[f64], bs: &[f64]) -> Result<Vec<MarginalGap>> {
    let mut out = Vec::new();
    for &rho in rhos {
        for &b in bs {
            out.push(marginal_gap(LeakageModelParams::new(rho, b)?));
        }
    }
    Ok(out)
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

pub fn write_pt_csv(path: &Path, rows: &[(f64, f64)]) -> Result<()> {
    let mut text = String::from("rho,I_PT\n");
    for (r, i) in rows {
        text.push_str(&format!("{r},{i}\n"));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_pz_csv(path: &Path, rows: &[MarginalGap]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::from("rho,b,I_ZP,I_ZP_printed_marginal,max_cell_gap\n");
    for g in rows {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            g.rho, g.b, g.mi_numeric, g.mi_printed, g.max_cell_gap
        ));
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
