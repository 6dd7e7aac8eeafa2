//! Decoder curvature penalties.
//!
//! The vanilla Hessian penalty estimates the sum of squared
//! off-diagonal Hessian entries of each regularized decoder activation
//! via the variance of Rademacher quadratic forms; the normalized
//! variant divides a sigma-scaled numerator by a Gaussian-probed
//! denominator, making the statistic invariant to rescaling of either
//! the activations or any latent.
//!
//! Quadratic forms are approximated with central finite differences, so
//! the whole penalty costs forward passes only. A brute-force
//! coordinate-pair Hessian oracle lives alongside for exact evaluation
//! of the same statistics on small decoders.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::quantize::LatentBatch;
use crate::tensor::{Result, Tensor, TensorError};

/// Floor applied to the normalized penalty's denominator; an exactly
/// affine decoder zeroes both variances.
pub const DENOM_FLOOR: f64 = 1e-12;

/// Anything that can expose regularized activations for a latent batch.
///
/// Implementations return one tensor per tap, each `[n_b, d_k]`, in a
/// fixed order.
pub trait TapDecoder {
    fn forward_taps(&self, z: &Tensor) -> Result<Vec<Tensor>>;
}

/// Per-step probe configuration.
#[derive(Debug, Clone, Copy)]
pub struct ProbeSpec {
    /// Perturbations per sample; the probe variance needs at least 2.
    pub n_p: usize,
    /// Finite-difference step.
    pub epsilon: f64,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        Self { n_p: 2, epsilon: 0.1 }
    }
}

impl ProbeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_p < 2 {
            return Err(TensorError::Domain {
                op: "probe_spec",
                detail: format!("n_p must be at least 2, got {}", self.n_p),
            });
        }
        if self.epsilon <= 0.0 {
            return Err(TensorError::Domain {
                op: "probe_spec",
                detail: format!("epsilon must be positive, got {}", self.epsilon),
            });
        }
        Ok(())
    }
}

/// One probe's direction matrices, shape `[n_b, n_z]` each: `v` is
/// scale-adjusted Rademacher (`|v_ij| = sigma_j` exactly), `w` is
/// Gaussian with per-dimension variances `sigma_j^2`.
pub struct PerturbationDraw {
    pub v: Tensor,
    pub w: Tensor,
}

/// Raw, unscaled direction draws for `n_p` probes: unit signs and
/// standard normals, `[n_b, n_z]` per probe. Multiplication by `sigma`
/// happens on the tape so it stays differentiable w.r.t. the batch
/// statistics; keeping the raw draws separate also lets an external
/// oracle replay the exact same randomness.
pub struct RawDraws {
    pub signs: Vec<Tensor>,
    pub normals: Vec<Tensor>,
}

pub fn draw_raw(n_b: usize, n_z: usize, n_p: usize, rng: &mut ChaCha8Rng) -> Result<RawDraws> {
    let mut signs = Vec::with_capacity(n_p);
    let mut normals = Vec::with_capacity(n_p);
    for _ in 0..n_p {
        let s: Vec<f64> = (0..n_b * n_z)
            .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
            .collect();
        let n: Vec<f64> = (0..n_b * n_z).map(|_| standard_normal(rng)).collect();
        signs.push(Tensor::new(vec![n_b, n_z], s)?);
        normals.push(Tensor::new(vec![n_b, n_z], n)?);
    }
    Ok(RawDraws { signs, normals })
}

/// Draws perturbation directions for a batch.
pub fn draw_perturbations(
    sigma: &Tensor,
    n_b: usize,
    rng: &mut ChaCha8Rng,
) -> Result<PerturbationDraw> {
    let raw = draw_raw(n_b, sigma.numel(), 1, rng)?;
    scale_draw(sigma, &raw.signs[0], &raw.normals[0])
}

fn scale_draw(sigma: &Tensor, signs: &Tensor, normals: &Tensor) -> Result<PerturbationDraw> {
    let n_z = sigma.numel();
    let sig_row = sigma.reshape(vec![1, n_z])?;
    Ok(PerturbationDraw {
        v: signs.mul(&sig_row)?,
        w: normals.mul(&sig_row)?,
    })
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; consumes two uniforms per draw
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Central-difference curvature of every tap along `direction`:
/// `(g(z + eps d) - 2 g(z) + g(z - eps d)) / eps^2`, one tensor per
/// tap. Three forward passes, all on the tape.
pub fn curvature_probe(
    decoder: &dyn TapDecoder,
    z: &Tensor,
    direction: &Tensor,
    epsilon: f64,
) -> Result<Vec<Tensor>> {
    let center = decoder.forward_taps(z)?;
    curvature_probe_with_center(decoder, z, &center, direction, epsilon)
}

/// Same as [`curvature_probe`] but reuses precomputed center taps, so
/// each probe costs two forward passes.
pub fn curvature_probe_with_center(
    decoder: &dyn TapDecoder,
    z: &Tensor,
    center: &[Tensor],
    direction: &Tensor,
    epsilon: f64,
) -> Result<Vec<Tensor>> {
    let step = direction.mul_scalar(epsilon)?;
    let plus = decoder.forward_taps(&z.add(&step)?)?;
    let minus = decoder.forward_taps(&z.sub(&step)?)?;
    let inv_eps2 = 1.0 / (epsilon * epsilon);
    plus.iter()
        .zip(minus.iter())
        .zip(center.iter())
        .map(|((p, m), c)| {
            p.add(m)?.sub(&c.mul_scalar(2.0)?)?.mul_scalar(inv_eps2)
        })
        .collect()
}

/// Unbiased sample variance across a small set of probe tensors.
fn variance_over_probes(probes: &[Tensor]) -> Result<Tensor> {
    let n_p = probes.len();
    debug_assert!(n_p >= 2);
    let mut sum = probes[0].clone();
    for p in &probes[1..] {
        sum = sum.add(p)?;
    }
    let mean = sum.mul_scalar(1.0 / n_p as f64)?;
    let mut acc: Option<Tensor> = None;
    for p in probes {
        let sq = p.sub(&mean)?.square()?;
        acc = Some(match acc {
            Some(a) => a.add(&sq)?,
            None => sq,
        });
    }
    acc.unwrap().mul_scalar(1.0 / (n_p - 1) as f64)
}

/// Vanilla Hessian penalty: per sample and tap dimension, the unbiased
/// variance over `n_p` Rademacher(1) probes, summed over tap
/// dimensions and averaged over the batch. With `normalize`, each
/// tap's probe values are first divided by the tap's batch RMS
/// (activation normalization for the baseline).
pub fn vanilla_hp_loss(
    decoder: &dyn TapDecoder,
    z_batch: &Tensor,
    rng: &mut ChaCha8Rng,
    probe: ProbeSpec,
    normalize: bool,
) -> Result<Tensor> {
    probe.validate()?;
    let (n_b, n_z) = (z_batch.shape()[0], z_batch.shape()[1]);
    let draws = draw_raw(n_b, n_z, probe.n_p, rng)?;
    vanilla_hp_loss_with_draws(decoder, z_batch, &draws, probe.epsilon, normalize)
}

/// [`vanilla_hp_loss`] with externally supplied Rademacher(1)
/// directions (`draws.signs`).
pub fn vanilla_hp_loss_with_draws(
    decoder: &dyn TapDecoder,
    z_batch: &Tensor,
    draws: &RawDraws,
    epsilon: f64,
    normalize: bool,
) -> Result<Tensor> {
    let center = decoder.forward_taps(z_batch)?;
    vanilla_hp_loss_with_center(decoder, z_batch, draws, epsilon, normalize, &center)
}

/// [`vanilla_hp_loss_with_draws`] reusing precomputed center taps;
/// perturbed evaluations are batched into one decoder forward.
pub fn vanilla_hp_loss_with_center(
    decoder: &dyn TapDecoder,
    z_batch: &Tensor,
    draws: &RawDraws,
    epsilon: f64,
    normalize: bool,
    center: &[Tensor],
) -> Result<Tensor> {
    let n_b = z_batch.shape()[0];
    let n_p = draws.signs.len();
    let scales: Option<Vec<Tensor>> = if normalize {
        Some(
            center
                .iter()
                .map(|t| t.square()?.mean_all()?.clamp_min(DENOM_FLOOR)?.sqrt())
                .collect::<Result<_>>()?,
        )
    } else {
        None
    };
    let mut blocks = Vec::with_capacity(2 * n_p);
    for dir in &draws.signs {
        let step = dir.mul_scalar(epsilon)?;
        blocks.push(z_batch.add(&step)?);
        blocks.push(z_batch.sub(&step)?);
    }
    let refs: Vec<&Tensor> = blocks.iter().collect();
    let taps_all = decoder.forward_taps(&Tensor::concat(&refs, 0)?)?;
    let inv_eps2 = 1.0 / (epsilon * epsilon);
    let mut probes_per_tap: Vec<Vec<Tensor>> = vec![Vec::new(); center.len()];
    for l in 0..n_p {
        let base = l * 2 * n_b;
        for (k, tap) in taps_all.iter().enumerate() {
            let plus = tap.slice(0, base, base + n_b)?;
            let minus = tap.slice(0, base + n_b, base + 2 * n_b)?;
            let fd = plus
                .add(&minus)?
                .sub(&center[k].mul_scalar(2.0)?)?
                .mul_scalar(inv_eps2)?;
            let fd = match &scales {
                Some(s) => fd.div(&s[k])?,
                None => fd,
            };
            probes_per_tap[k].push(fd);
        }
    }
    let mut per_sample: Option<Tensor> = None;
    for probes in &probes_per_tap {
        let var = variance_over_probes(probes)?; // [n_b, d_k]
        let summed = var.sum_axis(1, false)?; // [n_b]
        per_sample = Some(match per_sample {
            Some(a) => a.add(&summed)?,
            None => summed,
        });
    }
    per_sample.ok_or(TensorError::Empty { op: "vanilla_hp" })?.mean_all()
}

/// Normalized Hessian penalty: per sample, the ratio of summed probe
/// variances under scale-adjusted Rademacher directions to summed
/// probe variances under Gaussian directions, numerators and
/// denominators aggregated over taps before the (floored) division.
pub fn nhp_loss(
    decoder: &dyn TapDecoder,
    latents: &LatentBatch,
    rng: &mut ChaCha8Rng,
    probe: ProbeSpec,
) -> Result<Tensor> {
    probe.validate()?;
    let n_b = latents.z.shape()[0];
    let draws = draw_raw(n_b, latents.n_z(), probe.n_p, rng)?;
    nhp_loss_with_draws(decoder, latents, &draws, probe.epsilon)
}

/// [`nhp_loss`] with externally supplied raw direction draws.
pub fn nhp_loss_with_draws(
    decoder: &dyn TapDecoder,
    latents: &LatentBatch,
    draws: &RawDraws,
    epsilon: f64,
) -> Result<Tensor> {
    let center = decoder.forward_taps(&latents.z)?;
    nhp_loss_with_center(decoder, latents, draws, epsilon, &center)
}

/// [`nhp_loss_with_draws`] reusing already-computed center taps (the
/// reconstruction pass provides them during training). All perturbed
/// evaluations are batched into a single decoder forward.
pub fn nhp_loss_with_center(
    decoder: &dyn TapDecoder,
    latents: &LatentBatch,
    draws: &RawDraws,
    epsilon: f64,
    center: &[Tensor],
) -> Result<Tensor> {
    let z = &latents.z;
    let n_b = z.shape()[0];
    let n_p = draws.signs.len();
    let n_taps = center.len();
    // stack [z + eps d; z - eps d] for every probe direction
    let mut blocks = Vec::with_capacity(4 * n_p);
    for (signs, normals) in draws.signs.iter().zip(&draws.normals) {
        let draw = scale_draw(&latents.sigma, signs, normals)?;
        for dir in [&draw.v, &draw.w] {
            let step = dir.mul_scalar(epsilon)?;
            blocks.push(z.add(&step)?);
            blocks.push(z.sub(&step)?);
        }
    }
    let refs: Vec<&Tensor> = blocks.iter().collect();
    let stacked = Tensor::concat(&refs, 0)?;
    let taps_all = decoder.forward_taps(&stacked)?;
    let inv_eps2 = 1.0 / (epsilon * epsilon);

    let mut numer_probes: Vec<Vec<Tensor>> = vec![Vec::new(); n_taps];
    let mut denom_probes: Vec<Vec<Tensor>> = vec![Vec::new(); n_taps];
    for l in 0..n_p {
        for (which, sink) in [(0usize, &mut numer_probes), (1usize, &mut denom_probes)] {
            let base = (l * 4 + which * 2) * n_b;
            for (k, tap) in taps_all.iter().enumerate() {
                let plus = tap.slice(0, base, base + n_b)?;
                let minus = tap.slice(0, base + n_b, base + 2 * n_b)?;
                let fd = plus
                    .add(&minus)?
                    .sub(&center[k].mul_scalar(2.0)?)?
                    .mul_scalar(inv_eps2)?;
                sink[k].push(fd);
            }
        }
    }
    let mut numer: Option<Tensor> = None;
    let mut denom: Option<Tensor> = None;
    for k in 0..n_taps {
        let nv = variance_over_probes(&numer_probes[k])?.sum_axis(1, false)?;
        let dv = variance_over_probes(&denom_probes[k])?.sum_axis(1, false)?;
        numer = Some(match numer {
            Some(a) => a.add(&nv)?,
            None => nv,
        });
        denom = Some(match denom {
            Some(a) => a.add(&dv)?,
            None => dv,
        });
    }
    let numer = numer.ok_or(TensorError::Empty { op: "nhp" })?;
    let denom = denom.unwrap().clamp_min(DENOM_FLOOR)?;
    numer.div(&denom)?.mean_all()
}

/// Decoder defined by a plain per-row function; a single tap. Used by
/// oracle suites and tests where the decoder is a closed form.
pub struct FnDecoder<F: Fn(&[f64]) -> Vec<f64>> {
    f: F,
    out_dim: usize,
}

impl<F: Fn(&[f64]) -> Vec<f64>> FnDecoder<F> {
    pub fn new(out_dim: usize, f: F) -> Self {
        Self { f, out_dim }
    }
}

impl<F: Fn(&[f64]) -> Vec<f64>> TapDecoder for FnDecoder<F> {
    fn forward_taps(&self, z: &Tensor) -> Result<Vec<Tensor>> {
        let n_z = z.shape()[1];
        let n_b = z.shape()[0];
        let mut out = Vec::with_capacity(n_b * self.out_dim);
        for row in z.data().chunks(n_z) {
            let y = (self.f)(row);
            debug_assert_eq!(y.len(), self.out_dim);
            out.extend_from_slice(&y);
        }
        Ok(vec![Tensor::new(vec![n_b, self.out_dim], out)?])
    }
}

/// Full `n_z x n_z` Hessian of one tap dimension by central
/// differences over coordinate pairs. Exact for quadratics; used to
/// evaluate the penalty statistics in closed form on small decoders.
pub fn hessian_oracle(
    decoder: &dyn TapDecoder,
    z: &[f64],
    tap: usize,
    dim: usize,
    epsilon: f64,
) -> Result<Vec<Vec<f64>>> {
    let n_z = z.len();
    let eval = |point: &[f64]| -> Result<f64> {
        let t = Tensor::new(vec![1, n_z], point.to_vec())?;
        let taps = decoder.forward_taps(&t)?;
        let tap_t = taps.get(tap).ok_or(TensorError::InvalidAxis {
            axis: tap,
            shape: vec![taps.len()],
        })?;
        Ok(tap_t.data()[dim])
    };
    let f0 = eval(z)?;
    let mut h = vec![vec![0.0; n_z]; n_z];
    let mut zp = z.to_vec();
    for a in 0..n_z {
        // diagonal: standard central second difference
        zp[a] = z[a] + epsilon;
        let fp = eval(&zp)?;
        zp[a] = z[a] - epsilon;
        let fm = eval(&zp)?;
        zp[a] = z[a];
        h[a][a] = (fp - 2.0 * f0 + fm) / (epsilon * epsilon);
        for b in 0..a {
            // off-diagonal: four-point cross difference
            zp[a] = z[a] + epsilon;
            zp[b] = z[b] + epsilon;
            let fpp = eval(&zp)?;
            zp[b] = z[b] - epsilon;
            let fpm = eval(&zp)?;
            zp[a] = z[a] - epsilon;
            zp[b] = z[b] + epsilon;
            let fmp = eval(&zp)?;
            zp[b] = z[b] - epsilon;
            let fmm = eval(&zp)?;
            zp[a] = z[a];
            zp[b] = z[b];
            let v = (fpp - fpm - fmp + fmm) / (4.0 * epsilon * epsilon);
            h[a][b] = v;
            h[b][a] = v;
        }
    }
    Ok(h)
}

/// Exact statistics of a Hessian matrix used by the property checks.
pub mod oracle_stats {
    use super::*;

    /// Sum of squared off-diagonal entries (the vanilla statistic).
    pub fn offdiag_sq_sum(h: &[Vec<f64>]) -> f64 {
        let n = h.len();
        let mut s = 0.0;
        for a in 0..n {
            for b in 0..n {
                if a != b {
                    s += h[a][b] * h[a][b];
                }
            }
        }
        s
    }

    /// Sigma-weighted normalized statistic:
    /// off-diagonal mass over total mass of `(H_ab sigma_a sigma_b)^2`.
    pub fn normalized_ratio(h: &[Vec<f64>], sigma: &[f64]) -> f64 {
        let n = h.len();
        let mut off = 0.0;
        let mut total = 0.0;
        for a in 0..n {
            for b in 0..n {
                let t = h[a][b] * sigma[a] * sigma[b];
                let t2 = t * t;
                total += t2;
                if a != b {
                    off += t2;
                }
            }
        }
        off / total.max(DENOM_FLOOR)
    }

    /// Monte-Carlo variance of the exact quadratic form `d^T H d` over
    /// `draws` directions with `d_j = +/- sigma_j`.
    pub fn mc_var_rademacher(
        h: &[Vec<f64>],
        sigma: &[f64],
        draws: usize,
        rng: &mut ChaCha8Rng,
    ) -> f64 {
        mc_var(h, draws, rng, |rng, j| {
            if rng.gen::<bool>() {
                sigma[j]
            } else {
                -sigma[j]
            }
        })
    }

    /// Monte-Carlo variance of the exact quadratic form over Gaussian
    /// directions with per-dimension std `sigma_j`.
    pub fn mc_var_gaussian(
        h: &[Vec<f64>],
        sigma: &[f64],
        draws: usize,
        rng: &mut ChaCha8Rng,
    ) -> f64 {
        mc_var(h, draws, rng, |rng, j| sigma[j] * super::standard_normal(rng))
    }

    fn mc_var(
        h: &[Vec<f64>],
        draws: usize,
        rng: &mut ChaCha8Rng,
        mut component: impl FnMut(&mut ChaCha8Rng, usize) -> f64,
    ) -> f64 {
        let n = h.len();
        let mut d = vec![0.0; n];
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..draws {
            for (j, dj) in d.iter_mut().enumerate() {
                *dj = component(rng, j);
            }
            let mut q = 0.0;
            for a in 0..n {
                let mut row = 0.0;
                for b in 0..n {
                    row += h[a][b] * d[b];
                }
                q += d[a] * row;
            }
            sum += q;
            sum_sq += q * q;
        }
        let n_f = draws as f64;
        (sum_sq - sum * sum / n_f) / (n_f - 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn bilinear() -> FnDecoder<impl Fn(&[f64]) -> Vec<f64>> {
        FnDecoder::new(1, |z: &[f64]| vec![z[0] * z[1]])
    }

    #[test]
    fn curvature_probe_exact_on_bilinear() {
        // g(z) = z1 z2, direction (1,1): v^T H v = 2 exactly
        let dec = bilinear();
        let z = Tensor::new(vec![1, 2], vec![0.3, -0.7]).unwrap();
        let dir = Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
        let probes = curvature_probe(&dec, &z, &dir, 0.1).unwrap();
        assert!((probes[0].data()[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn curvature_probe_zero_on_affine() {
        let dec = FnDecoder::new(1, |z: &[f64]| vec![3.0 * z[0] - 2.0 * z[1] + 5.0]);
        let z = Tensor::new(vec![1, 2], vec![0.4, 0.2]).unwrap();
        let dir = Tensor::new(vec![1, 2], vec![0.6, -1.1]).unwrap();
        let probes = curvature_probe(&dec, &z, &dir, 0.1).unwrap();
        assert!(probes[0].data()[0].abs() < 1e-9);
    }

    #[test]
    fn curvature_probe_second_derivative() {
        let dec = FnDecoder::new(1, |z: &[f64]| vec![z[0] * z[0]]);
        let z = Tensor::new(vec![1, 2], vec![1.5, 0.0]).unwrap();
        let dir = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
        let probes = curvature_probe(&dec, &z, &dir, 0.1).unwrap();
        assert!((probes[0].data()[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn hessian_oracle_bilinear() {
        let dec = bilinear();
        let h = hessian_oracle(&dec, &[0.2, 0.6], 0, 0, 1e-3).unwrap();
        assert!((h[0][1] - 1.0).abs() < 1e-7);
        assert!((h[1][0] - 1.0).abs() < 1e-7);
        assert!(h[0][0].abs() < 1e-7);
        assert!(h[1][1].abs() < 1e-7);
    }

    #[test]
    fn vanilla_monte_carlo_matches_closed_form() {
        // Var[v^T H v] = 4 for g = z1 z2 with Rademacher(1)
        let dec = bilinear();
        let n = 20_000; // smaller than the acceptance run, same check
        let z = Tensor::new(vec![n, 2], vec![0.1; n * 2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let loss = vanilla_hp_loss(&dec, &z, &mut rng, ProbeSpec::default(), false)
            .unwrap()
            .to_scalar()
            .unwrap();
        assert!((loss - 4.0).abs() / 4.0 < 0.05, "got {loss}");
    }

    #[test]
    fn vanilla_scales_quadratically_with_output() {
        let dec_small = bilinear();
        let dec_big = FnDecoder::new(1, |z: &[f64]| vec![10.0 * z[0] * z[1]]);
        let n = 8_000;
        let z = Tensor::new(vec![n, 2], vec![0.0; n * 2]).unwrap();
        let mut rng1 = ChaCha8Rng::seed_from_u64(5);
        let mut rng2 = ChaCha8Rng::seed_from_u64(5);
        let a = vanilla_hp_loss(&dec_small, &z, &mut rng1, ProbeSpec::default(), false)
            .unwrap()
            .to_scalar()
            .unwrap();
        let b = vanilla_hp_loss(&dec_big, &z, &mut rng2, ProbeSpec::default(), false)
            .unwrap()
            .to_scalar()
            .unwrap();
        assert!((b / a - 100.0).abs() < 1e-6, "ratio {}", b / a);
    }

    #[test]
    fn vanilla_vanishes_on_separable() {
        let dec = FnDecoder::new(1, |z: &[f64]| vec![z[0] * z[0] + (z[1] * 1.7).sin()]);
        let n = 2_000;
        let z = Tensor::new(vec![n, 2], vec![0.2; n * 2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let loss = vanilla_hp_loss(&dec, &z, &mut rng, ProbeSpec::default(), false)
            .unwrap()
            .to_scalar()
            .unwrap();
        // only finite-difference truncation error remains
        assert!(loss.abs() < 1e-3, "got {loss}");
    }

    #[test]
    fn nhp_ratio_one_for_pure_bilinear() {
        // With many perturbations per sample both variances converge to
        // 2(sigma1 sigma2 H_12)^2, so every per-sample ratio tends to 1.
        // (At n_p=2 on a single tap dim the ratio is heavy-tailed, which
        // is why training aggregates over tap dims before dividing.)
        let dec = bilinear();
        let n = 400;
        let vals: Vec<f64> = (0..n * 2).map(|i| ((i as f64) * 0.37).sin()).collect();
        let v = Tensor::new(vec![n, 2], vals).unwrap();
        let latents = LatentBatch::from_values(&v).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let probe = ProbeSpec { n_p: 400, epsilon: 0.1 };
        let loss = nhp_loss(&dec, &latents, &mut rng, probe)
            .unwrap()
            .to_scalar()
            .unwrap();
        assert!((loss - 1.0).abs() < 0.05, "got {loss}");
    }

    #[test]
    fn nhp_zero_for_separable() {
        let dec = FnDecoder::new(1, |z: &[f64]| vec![z[0] * z[0] + z[1] * z[1]]);
        let n = 500;
        let vals: Vec<f64> = (0..n * 2).map(|i| ((i as f64) * 0.61).cos()).collect();
        let v = Tensor::new(vec![n, 2], vals).unwrap();
        let latents = LatentBatch::from_values(&v).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let loss = nhp_loss(&dec, &latents, &mut rng, ProbeSpec::default())
            .unwrap()
            .to_scalar()
            .unwrap();
        assert!(loss.abs() < 1e-4, "got {loss}");
    }

    #[test]
    fn nhp_invariant_to_output_scale() {
        // shared rng: probe values scale by exactly alpha^2 in both the
        // numerator and the denominator, so the ratio is unchanged
        let dec_small = bilinear();
        let dec_big = FnDecoder::new(1, |z: &[f64]| vec![10.0 * z[0] * z[1]]);
        let n = 200;
        let vals: Vec<f64> = (0..n * 2).map(|i| ((i as f64) * 0.29).sin()).collect();
        let v = Tensor::new(vec![n, 2], vals).unwrap();
        let latents = LatentBatch::from_values(&v).unwrap();
        let probe = ProbeSpec { n_p: 100, epsilon: 0.1 };
        let mut rng1 = ChaCha8Rng::seed_from_u64(13);
        let mut rng2 = ChaCha8Rng::seed_from_u64(13);
        let a = nhp_loss(&dec_small, &latents, &mut rng1, probe)
            .unwrap()
            .to_scalar()
            .unwrap();
        let b = nhp_loss(&dec_big, &latents, &mut rng2, probe)
            .unwrap()
            .to_scalar()
            .unwrap();
        assert!((a - b).abs() / a.abs() < 1e-9, "a={a} b={b}");
    }

    #[test]
    fn probe_spec_rejects_single_perturbation() {
        let bad = ProbeSpec { n_p: 1, epsilon: 0.1 };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn rademacher_magnitudes_exact() {
        let sigma = Tensor::new(vec![3], vec![0.2, 1.5, 0.01]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draw = draw_perturbations(&sigma, 5, &mut rng).unwrap();
        for (i, &v) in draw.v.data().iter().enumerate() {
            let j = i % 3;
            assert_eq!(v.abs(), sigma.data()[j]);
        }
    }
}
