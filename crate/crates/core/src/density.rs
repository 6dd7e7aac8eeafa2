//! Kernel-based latent multiinformation.
//!
//! Joint and marginal latent densities are estimated from the batch
//! with diagonal Gaussian kernels; the joint bandwidths follow
//! Silverman's rule from the per-dimension standard deviations, the
//! marginals use the standard deviations directly. The multiinformation
//! loss is the batch mean of `log q(z) - sum_j log q_j(z_j)`.
//!
//! Everything is differentiable both through the latents and through
//! the bandwidths, and each density has a naive double-loop reference
//! implementation kept alongside the vectorized one so the two routes
//! can be compared at any time.

use crate::quantize::LatentBatch;
use crate::tensor::{Result, Tensor, TensorError};

/// Lower bound on per-dimension standard deviations. A batch with one
/// repeated value would otherwise zero the bandwidth and blow up the
/// density estimates.
pub const SIGMA_FLOOR: f64 = 1e-4;

const LN_2PI: f64 = 1.837877066409345483560659472811; // ln(2*pi)

/// Bandwidths for one batch: the (floored) per-dimension std `sigma`,
/// the marginal kernel bandwidths, and joint smoothing variances.
pub struct SmoothingSpec {
    pub sigma: Tensor,
    pub marginal_bw: Tensor,
    pub s_diag: Tensor,
    pub mode: SmoothingMode,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SmoothingMode {
    Silverman,
    Fixed(f64),
}

/// Silverman's rule of thumb: joint smoothing matrix diagonal
/// `S_jj = (4 / ((n_z + 2) n_b))^(2/(n_z+4)) * sigma_j^2`, and the 1-D
/// rule `(4 / (3 n_b))^(1/5) * sigma_j` for each marginal bandwidth.
/// Scaling the marginals the same way as the joint keeps the
/// multiinformation estimate calibrated: with raw-sigma marginal
/// kernels the marginals are far more oversmoothed than the joint and
/// the estimate of an independent batch sits a few tenths of a nat
/// above zero instead of near it.
pub fn silverman(sigma: &Tensor, n_b: usize, n_z: usize) -> Result<SmoothingSpec> {
    if n_b < 2 {
        return Err(TensorError::Domain {
            op: "silverman",
            detail: format!("need at least 2 samples, got {n_b}"),
        });
    }
    let factor = (4.0 / ((n_z as f64 + 2.0) * n_b as f64)).powf(2.0 / (n_z as f64 + 4.0));
    let marginal_factor = (4.0 / (3.0 * n_b as f64)).powf(0.2);
    let sigma = sigma.clamp_min(SIGMA_FLOOR)?;
    let s_diag = sigma.square()?.mul_scalar(factor)?;
    let marginal_bw = sigma.mul_scalar(marginal_factor)?;
    Ok(SmoothingSpec {
        sigma,
        marginal_bw,
        s_diag,
        mode: SmoothingMode::Silverman,
    })
}

/// Fixed-bandwidth smoothing: joint variances `h^2`, marginal std `h`.
pub fn fixed_smoothing(h: f64, n_z: usize) -> Result<SmoothingSpec> {
    if h <= 0.0 {
        return Err(TensorError::Domain {
            op: "fixed_smoothing",
            detail: format!("bandwidth must be positive, got {h}"),
        });
    }
    Ok(SmoothingSpec {
        sigma: Tensor::full(vec![n_z], h),
        marginal_bw: Tensor::full(vec![n_z], h),
        s_diag: Tensor::full(vec![n_z], h * h),
        mode: SmoothingMode::Fixed(h),
    })
}

/// Log joint density of every batch row under the diagonal-Gaussian
/// KDE built from the same batch (self term included), shape `[n_b]`.
pub fn kde_log_joint(z_batch: &Tensor, spec: &SmoothingSpec) -> Result<Tensor> {
    let (n_b, n_z) = batch_dims(z_batch)?;
    // pairwise differences [n_b, n_b, n_z] via broadcast
    let zi = reshape(z_batch, vec![n_b, 1, n_z])?;
    let zj = reshape(z_batch, vec![1, n_b, n_z])?;
    let diff = zi.sub(&zj)?;
    let s = reshape(&spec.s_diag, vec![1, 1, n_z])?;
    let maha = diff.square()?.div(&s)?.sum_axis(2, false)?; // [n_b, n_b]
    let lse = maha.mul_scalar(-0.5)?.logsumexp_axis(1, false)?; // [n_b]
    // shared log normalizer: -log n_b - (n_z/2) log 2pi - 1/2 sum_j log S_jj
    let log_det = spec.s_diag.log()?.sum_all()?;
    let norm = log_det
        .mul_scalar(-0.5)?
        .add_scalar(-(n_b as f64).ln() - 0.5 * n_z as f64 * LN_2PI)?;
    lse.add(&norm)
}

/// Log marginal density of dimension `j` for every batch row under the
/// 1-D Gaussian KDE with the spec's marginal bandwidth, shape `[n_b]`.
pub fn kde_log_marginal(z_batch: &Tensor, j: usize, spec: &SmoothingSpec) -> Result<Tensor> {
    let (n_b, n_z) = batch_dims(z_batch)?;
    if j >= n_z {
        return Err(TensorError::InvalidAxis {
            axis: j,
            shape: z_batch.shape().to_vec(),
        });
    }
    let col = z_batch.slice(1, j, j + 1)?; // [n_b, 1]
    let sig = spec.marginal_bw.slice(0, j, j + 1)?; // [1]
    let zi = reshape(&col, vec![n_b, 1])?;
    let zj = reshape(&col, vec![1, n_b])?;
    let scaled = zi.sub(&zj)?.div(&reshape(&sig, vec![1, 1])?)?;
    let lse = scaled.square()?.mul_scalar(-0.5)?.logsumexp_axis(1, false)?;
    let norm = sig
        .log()?
        .neg()?
        .add_scalar(-(n_b as f64).ln() - 0.5 * LN_2PI)?
        .sum_all()?;
    lse.add(&norm)
}

/// All marginal log densities stacked, shape `[n_b, n_z]`.
fn kde_log_marginals(z_batch: &Tensor, spec: &SmoothingSpec) -> Result<Tensor> {
    let (n_b, n_z) = batch_dims(z_batch)?;
    let mut cols = Vec::with_capacity(n_z);
    for j in 0..n_z {
        cols.push(reshape(&kde_log_marginal(z_batch, j, spec)?, vec![n_b, 1])?);
    }
    let refs: Vec<&Tensor> = cols.iter().collect();
    Tensor::concat(&refs, 1)
}

/// Latent multiinformation estimate with Silverman bandwidths from the
/// batch's continuous statistics, evaluated at the quantized values.
pub fn klm_loss(latents: &LatentBatch) -> Result<Tensor> {
    let spec = silverman(&latents.sigma, latents.batch_size(), latents.n_z())?;
    multiinformation(&latents.z, &spec)
}

/// Multiinformation with a fixed smoothing parameter for both the
/// joint and the marginals (the naive baseline's estimator).
pub fn klm_loss_naive(latents: &LatentBatch, h: f64) -> Result<Tensor> {
    let spec = fixed_smoothing(h, latents.n_z())?;
    multiinformation(&latents.z, &spec)
}

/// `mean_i [ log q(z_i) - sum_j log q_j(z_ij) ]`.
pub fn multiinformation(z_batch: &Tensor, spec: &SmoothingSpec) -> Result<Tensor> {
    let (n_b, _) = batch_dims(z_batch)?;
    if n_b < 2 {
        return Err(TensorError::Domain {
            op: "klm_loss",
            detail: format!("batch size {n_b} too small for density estimation"),
        });
    }
    let log_joint = kde_log_joint(z_batch, spec)?;
    let log_marg = kde_log_marginals(z_batch, spec)?.sum_axis(1, false)?;
    log_joint.sub(&log_marg)?.mean_all()
}

/// Naive O(n_b^2) double-loop references for the densities above.
/// These share no tensor machinery with the vectorized path.
pub mod reference {
    use super::LN_2PI;

    /// Per-row log joint density by direct summation.
    pub fn log_joint(rows: &[Vec<f64>], s_diag: &[f64]) -> Vec<f64> {
        let n_b = rows.len();
        let n_z = s_diag.len();
        let log_norm: f64 = -(n_b as f64).ln()
            - 0.5 * n_z as f64 * LN_2PI
            - 0.5 * s_diag.iter().map(|s| s.ln()).sum::<f64>();
        let mut out = Vec::with_capacity(n_b);
        for zi in rows {
            let mut acc = 0.0f64;
            for zk in rows {
                let mut m = 0.0;
                for j in 0..n_z {
                    let d = zi[j] - zk[j];
                    m += d * d / s_diag[j];
                }
                acc += (-0.5 * m).exp();
            }
            out.push(acc.ln() + log_norm - 0.0);
        }
        out
    }

    /// Per-row log marginal density of dimension `j` by direct summation.
    pub fn log_marginal(rows: &[Vec<f64>], j: usize, sigma_j: f64) -> Vec<f64> {
        let n_b = rows.len();
        let log_norm = -(n_b as f64).ln() - 0.5 * LN_2PI - sigma_j.ln();
        rows.iter()
            .map(|zi| {
                let mut acc = 0.0f64;
                for zk in rows {
                    let d = (zi[j] - zk[j]) / sigma_j;
                    acc += (-0.5 * d * d).exp();
                }
                acc.ln() + log_norm
            })
            .collect()
    }

    /// Multiinformation from the direct-summation densities.
    pub fn multiinformation(rows: &[Vec<f64>], s_diag: &[f64], sigma: &[f64]) -> f64 {
        let joint = log_joint(rows, s_diag);
        let n_b = rows.len();
        let mut total = 0.0;
        for (i, item) in joint.iter().enumerate() {
            let mut marg = 0.0;
            for (j, &sj) in sigma.iter().enumerate() {
                marg += log_marginal(rows, j, sj)[i];
            }
            total += item - marg;
        }
        total / n_b as f64
    }
}

fn batch_dims(z: &Tensor) -> Result<(usize, usize)> {
    if z.shape().len() != 2 {
        return Err(TensorError::ShapeMismatch {
            op: "density",
            lhs: z.shape().to_vec(),
            rhs: vec![0, 0],
        });
    }
    Ok((z.shape()[0], z.shape()[1]))
}

fn reshape(t: &Tensor, shape: Vec<usize>) -> Result<Tensor> {
    t.reshape(shape)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{backward, Tape};

    fn rows_of(t: &Tensor) -> Vec<Vec<f64>> {
        let n_z = t.shape()[1];
        t.data().chunks(n_z).map(|c| c.to_vec()).collect()
    }

    fn pseudo_batch(n_b: usize, n_z: usize, seed: f64) -> Tensor {
        let mut x = seed;
        let data: Vec<f64> = (0..n_b * n_z)
            .map(|_| {
                x = (x * 97.0 + 0.123).sin();
                x
            })
            .collect();
        Tensor::new(vec![n_b, n_z], data).unwrap()
    }

    #[test]
    fn silverman_exact_quarter() {
        let sigma = Tensor::new(vec![2], vec![1.0, 1.0]).unwrap();
        let spec = silverman(&sigma, 64, 2).unwrap();
        assert_eq!(spec.s_diag.data(), &[0.25, 0.25]);
    }

    #[test]
    fn silverman_floors_zero_sigma() {
        let sigma = Tensor::new(vec![2], vec![0.0, 1.0]).unwrap();
        let spec = silverman(&sigma, 64, 2).unwrap();
        let factor = 0.25;
        assert_eq!(spec.s_diag.data()[0], factor * SIGMA_FLOOR * SIGMA_FLOOR);
    }

    #[test]
    fn silverman_scales_quadratically() {
        let sigma = Tensor::new(vec![1], vec![0.7]).unwrap();
        let spec1 = silverman(&sigma, 32, 1).unwrap();
        let sigma2 = Tensor::new(vec![1], vec![1.4]).unwrap();
        let spec2 = silverman(&sigma2, 32, 1).unwrap();
        assert!((spec2.s_diag.data()[0] / spec1.s_diag.data()[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn silverman_rejects_single_sample() {
        let sigma = Tensor::new(vec![1], vec![1.0]).unwrap();
        assert!(silverman(&sigma, 1, 1).is_err());
    }

    #[test]
    fn single_point_joint_density_is_kernel_peak() {
        let z = Tensor::new(vec![1, 3], vec![0.4, -2.0, 7.0]).unwrap();
        let sigma = Tensor::new(vec![3], vec![0.5, 1.0, 2.0]).unwrap();
        let spec = silverman(&sigma, 2, 3).unwrap();
        // bypass the batch-size guard: evaluate the joint directly
        let lj = kde_log_joint(&z, &spec).unwrap();
        let s = spec.s_diag.data();
        let expected = -0.5 * 3.0 * LN_2PI - 0.5 * s.iter().map(|v| v.ln()).sum::<f64>();
        assert!((lj.data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn single_point_marginal_density() {
        let z = Tensor::new(vec![1, 1], vec![3.3]).unwrap();
        let spec = fixed_smoothing(0.7, 1).unwrap();
        let lm = kde_log_marginal(&z, 0, &spec).unwrap();
        let expected = -0.5 * LN_2PI - 0.7f64.ln();
        assert!((lm.data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn vectorized_matches_double_loop() {
        let z = pseudo_batch(8, 3, 0.31);
        let sigma = Tensor::new(vec![3], vec![0.8, 0.5, 1.3]).unwrap();
        let spec = silverman(&sigma, 8, 3).unwrap();
        let lj = kde_log_joint(&z, &spec).unwrap();
        let reference = reference::log_joint(&rows_of(&z), spec.s_diag.data());
        for (a, b) in lj.data().iter().zip(&reference) {
            assert!((a - b).abs() / b.abs().max(1e-12) < 1e-10);
        }
        for j in 0..3 {
            let lm = kde_log_marginal(&z, j, &spec).unwrap();
            let rm = reference::log_marginal(&rows_of(&z), j, spec.marginal_bw.data()[j]);
            for (a, b) in lm.data().iter().zip(&rm) {
                assert!((a - b).abs() / b.abs().max(1e-12) < 1e-10);
            }
        }
    }

    #[test]
    fn translation_invariance() {
        let z = pseudo_batch(6, 2, 0.9);
        let shifted_data: Vec<f64> = z
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + if i % 2 == 0 { 11.0 } else { -4.0 })
            .collect();
        let zs = Tensor::new(vec![6, 2], shifted_data).unwrap();
        let spec = fixed_smoothing(0.4, 2).unwrap();
        let a = kde_log_joint(&z, &spec).unwrap();
        let b = kde_log_joint(&zs, &spec).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-9);
        }
        let am = kde_log_marginal(&z, 1, &spec).unwrap();
        let bm = kde_log_marginal(&zs, 1, &spec).unwrap();
        for (x, y) in am.data().iter().zip(bm.data()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn duplicated_dimension_inflates_multiinformation() {
        // spread-out values duplicated across two dims
        let n = 64;
        let vals: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect();
        let mut data = Vec::new();
        for &v in &vals {
            data.push(v);
            data.push(v);
        }
        let z = Tensor::new(vec![n, 2], data).unwrap();
        let lb = LatentBatch::from_values(&z).unwrap();
        let mi = klm_loss(&lb).unwrap().to_scalar().unwrap();
        assert!(mi > 0.5, "duplicated-dim multiinformation {mi} too small");
    }

    #[test]
    fn identical_points_stay_finite() {
        let z = Tensor::new(vec![8, 2], vec![0.25; 16]).unwrap();
        let lb = LatentBatch::from_values(&z).unwrap();
        let mi = klm_loss(&lb).unwrap().to_scalar().unwrap();
        assert!(mi.is_finite());
    }

    #[test]
    fn batch_too_small_for_klm() {
        let z = Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap();
        let lb = LatentBatch::from_values(&z).unwrap();
        assert!(klm_loss(&lb).is_err());
    }

    #[test]
    fn klm_differentiable_through_latents_and_sigma() {
        let tape = Tape::new();
        let z = tape.watch(&pseudo_batch(10, 2, 0.4));
        let lb = LatentBatch::from_tensors(z.clone(), z.clone(), vec![]).unwrap();
        let loss = klm_loss(&lb).unwrap();
        let g = backward(&loss).unwrap();
        let gz = g.get(&z).unwrap();
        assert!(gz.iter().any(|&v| v.abs() > 1e-9));
        assert!(gz.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn scale_robustness_of_silverman_terms() {
        // scaling one dimension and its sigma together leaves the
        // Mahalanobis terms and that dimension's marginal shape intact
        let z = pseudo_batch(12, 2, 0.77);
        let scaled: Vec<f64> = z
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| if i % 2 == 0 { v * 5.0 } else { *v })
            .collect();
        let zs = Tensor::new(vec![12, 2], scaled).unwrap();
        let lb_a = LatentBatch::from_values(&z).unwrap();
        let lb_b = LatentBatch::from_values(&zs).unwrap();
        let mi_a = klm_loss(&lb_a).unwrap().to_scalar().unwrap();
        let mi_b = klm_loss(&lb_b).unwrap().to_scalar().unwrap();
        assert!((mi_a - mi_b).abs() < 1e-9);
    }
}
