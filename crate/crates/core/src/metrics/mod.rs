//! Disentanglement evaluation.
//!
//! Sources and discretized latents are compared through a normalized
//! mutual information heatmap; modularity/compactness scores summarize
//! its column and row concentration, a linear probe measures
//! explicitness, and a small random forest yields DCI-style scores.
//! All estimators are deterministic under a fixed seed so checkpoint
//! selection is reproducible.

pub mod forest;
pub mod probe;

use serde::{Deserialize, Serialize};

use crate::tensor::{Result, TensorError};

/// Slack allowed above 1.0 for plugin-estimator rounding.
pub const NMI_SLACK: f64 = 1e-9;

/// Latents prepared for evaluation: per-sample continuous values,
/// quantized values, and discrete codes.
#[derive(Debug, Clone, Default)]
pub struct LatentEval {
    /// Continuous latents, `[n][n_z]`.
    pub cont: Vec<Vec<f64>>,
    /// Quantized latent values, `[n][n_z]`.
    pub values: Vec<Vec<f64>>,
    /// Discrete code per latent, `[n][n_z]`.
    pub codes: Vec<Vec<usize>>,
}

impl LatentEval {
    pub fn len(&self) -> usize {
        self.cont.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cont.is_empty()
    }

    pub fn n_z(&self) -> usize {
        self.cont.first().map_or(0, Vec::len)
    }

    pub fn code_column(&self, j: usize) -> Vec<usize> {
        self.codes.iter().map(|row| row[j]).collect()
    }

    pub fn cont_column(&self, j: usize) -> Vec<f64> {
        self.cont.iter().map(|row| row[j]).collect()
    }

    /// Discretizes continuous columns into `bins` equal-width bins;
    /// used for baselines whose latents carry no quantizer codes.
    pub fn from_continuous(cont: Vec<Vec<f64>>, bins: usize) -> Self {
        let n_z = cont.first().map_or(0, Vec::len);
        let mut lo = vec![f64::INFINITY; n_z];
        let mut hi = vec![f64::NEG_INFINITY; n_z];
        for row in &cont {
            for (j, &v) in row.iter().enumerate() {
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
        let codes: Vec<Vec<usize>> = cont
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(j, &v)| {
                        let span = hi[j] - lo[j];
                        if span <= 0.0 {
                            0
                        } else {
                            (((v - lo[j]) / span * bins as f64) as usize).min(bins - 1)
                        }
                    })
                    .collect()
            })
            .collect();
        Self {
            values: cont.clone(),
            cont,
            codes,
        }
    }
}

/// Plugin (empirical-histogram) entropy in nats.
pub fn entropy(a: &[usize]) -> Result<f64> {
    if a.is_empty() {
        return Err(TensorError::Empty { op: "entropy" });
    }
    let k = a.iter().max().unwrap() + 1;
    let mut counts = vec![0usize; k];
    for &v in a {
        counts[v] += 1;
    }
    let n = a.len() as f64;
    let mut h = 0.0;
    for &c in &counts {
        if c > 0 {
            let p = c as f64 / n;
            h -= p * p.ln();
        }
    }
    Ok(h)
}

/// Plugin mutual information in nats from the joint empirical
/// histogram of two paired discrete variables. Clamped at zero, where
/// floating rounding could otherwise leave a tiny negative residue.
pub fn plugin_mi(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(TensorError::Empty { op: "plugin_mi" });
    }
    if a.len() != b.len() {
        return Err(TensorError::ShapeMismatch {
            op: "plugin_mi",
            lhs: vec![a.len()],
            rhs: vec![b.len()],
        });
    }
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let mut joint = vec![0usize; ka * kb];
    let mut ca = vec![0usize; ka];
    let mut cb = vec![0usize; kb];
    for (&x, &y) in a.iter().zip(b) {
        joint[x * kb + y] += 1;
        ca[x] += 1;
        cb[y] += 1;
    }
    let n = a.len() as f64;
    let mut mi = 0.0;
    for x in 0..ka {
        for y in 0..kb {
            let c = joint[x * kb + y];
            if c > 0 {
                let p = c as f64 / n;
                let px = ca[x] as f64 / n;
                let py = cb[y] as f64 / n;
                mi += p * (p / (px * py)).ln();
            }
        }
    }
    Ok(mi.max(0.0))
}

/// Normalized mutual information heatmap `m[i][j] = I(s_i; z_j) /
/// H(s_i)` together with the active-latent mask.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NmiHeatmap {
    /// `[n_s][n_z]`.
    pub m: Vec<Vec<f64>>,
    pub active: Vec<bool>,
}

/// A latent counts as active when its quantized values take at least
/// two distinct codes on the evaluation set and its continuous values
/// are not collapsed.
pub fn active_latents(latents: &LatentEval) -> Vec<bool> {
    (0..latents.n_z())
        .map(|j| {
            let codes = latents.code_column(j);
            let distinct = {
                let mut c = codes.clone();
                c.sort_unstable();
                c.dedup();
                c.len()
            };
            let col = latents.cont_column(j);
            let n = col.len() as f64;
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            distinct >= 2 && var.sqrt() > 1e-3
        })
        .collect()
}

/// Heatmap over all (source, latent) pairs; sources given as columns.
pub fn nmi_heatmap(sources: &[Vec<usize>], latents: &LatentEval) -> Result<NmiHeatmap> {
    if sources.is_empty() || latents.is_empty() {
        return Err(TensorError::Empty { op: "nmi_heatmap" });
    }
    let n_z = latents.n_z();
    let mut m = Vec::with_capacity(sources.len());
    for src in sources {
        let h = entropy(src)?;
        let mut row = Vec::with_capacity(n_z);
        for j in 0..n_z {
            let mi = plugin_mi(src, &latents.code_column(j))?;
            row.push(if h > 0.0 { mi / h } else { 0.0 });
        }
        m.push(row);
    }
    Ok(NmiHeatmap {
        m,
        active: active_latents(latents),
    })
}

fn ratio_gap(max: f64, sum: f64, k: usize) -> f64 {
    if k <= 1 {
        return 1.0;
    }
    let r = if sum > 1e-12 { max / sum } else { 1.0 / k as f64 };
    ((k as f64 * r - 1.0) / (k as f64 - 1.0)).clamp(0.0, 1.0)
}

/// Modularity: how concentrated each active latent's information is on
/// a single source, averaged over active latents.
pub fn info_modularity(h: &NmiHeatmap) -> f64 {
    let n_s = h.m.len();
    let mut scores = Vec::new();
    for j in 0..h.active.len() {
        if !h.active[j] {
            continue;
        }
        let col: Vec<f64> = h.m.iter().map(|row| row[j]).collect();
        let sum: f64 = col.iter().sum();
        let max = col.iter().cloned().fold(0.0, f64::max);
        scores.push(ratio_gap(max, sum, n_s));
    }
    if scores.is_empty() {
        0.0
    } else {
        scores.iter().sum::<f64>() / scores.len() as f64
    }
}

/// Compactness: how concentrated each source is on a single active
/// latent, averaged over sources and rescaled by the active count.
pub fn info_compactness(h: &NmiHeatmap) -> f64 {
    let n_active = h.active.iter().filter(|a| **a).count();
    if n_active == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for row in &h.m {
        let vals: Vec<f64> = row
            .iter()
            .zip(&h.active)
            .filter(|(_, a)| **a)
            .map(|(v, _)| *v)
            .collect();
        let sum: f64 = vals.iter().sum();
        let max = vals.iter().cloned().fold(0.0, f64::max);
        total += ratio_gap(max, sum, n_active);
    }
    total / h.m.len() as f64
}

/// Full metric bundle for one checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub info_m: f64,
    pub info_c: f64,
    pub info_e: f64,
    pub dci_d: f64,
    pub dci_c: f64,
    pub dci_i: f64,
    pub psnr: f64,
    pub step: u64,
    pub active: Vec<bool>,
    pub heatmap: Vec<Vec<f64>>,
}

impl MetricsReport {
    /// All six scores in `[0,1]`, PSNR finite, no NaN anywhere.
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        let ok = [
            self.info_m,
            self.info_c,
            self.info_e,
            self.dci_d,
            self.dci_c,
            self.dci_i,
        ]
        .iter()
        .all(|&v| in_unit(v))
            && self.psnr.is_finite()
            && self
                .heatmap
                .iter()
                .flatten()
                .all(|v| v.is_finite() && *v >= 0.0 && *v <= 1.0 + NMI_SLACK);
        if ok {
            Ok(())
        } else {
            Err(TensorError::Domain {
                op: "metrics_report",
                detail: "metric out of range or non-finite".into(),
            })
        }
    }
}

/// Anything that can decode latent rows back into images; lets the
/// traversal renderer stay independent of the concrete model type.
pub trait TraversalDecoder {
    fn decode_rows(&self, z: &[Vec<f64>]) -> Result<Vec<Vec<f64>>>;
}

/// Decodes a sweep of latent `j` across `[lo, hi]` with all other
/// dimensions pinned to `base_z`; returns `n_steps` images.
pub fn traversal_row(
    decoder: &dyn TraversalDecoder,
    base_z: &[f64],
    j: usize,
    lo: f64,
    hi: f64,
    n_steps: usize,
) -> Result<Vec<Vec<f64>>> {
    if n_steps < 2 {
        return Err(TensorError::Domain {
            op: "traversal_row",
            detail: "need at least 2 sweep steps".into(),
        });
    }
    let rows: Vec<Vec<f64>> = (0..n_steps)
        .map(|k| {
            let t = k as f64 / (n_steps - 1) as f64;
            let mut z = base_z.to_vec();
            z[j] = lo + t * (hi - lo);
            z
        })
        .collect();
    decoder.decode_rows(&rows)
}
