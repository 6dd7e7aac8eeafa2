//! Latent discretization.
//!
//! Two schemes share one interface: finite scalar quantization onto a
//! fixed uniform grid in `[-1, 1]`, and a learned per-dimension scalar
//! codebook trained with quantization/commitment losses. Both route
//! gradients through the rounding with a straight-through estimator.

use crate::density::SIGMA_FLOOR;
use crate::tensor::{Result, Tensor, TensorError};

/// Fixed-grid quantizer spec: `n_q` values per latent dimension, grid
/// `{-1, -1 + 2/(n_q-1), ..., 1}` with exact endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FsqSpec {
    pub n_z: usize,
    pub n_q: usize,
}

impl FsqSpec {
    pub fn new(n_z: usize, n_q: usize) -> Result<Self> {
        if n_q < 2 {
            return Err(TensorError::Domain {
                op: "fsq_spec",
                detail: format!("n_q must be at least 2, got {n_q}"),
            });
        }
        Ok(Self { n_z, n_q })
    }

    /// Grid value for level `l`, computed so that endpoints are exactly
    /// at -1 and 1 and the grid is exactly symmetric.
    pub fn grid_value(&self, level: usize) -> f64 {
        let m = (self.n_q - 1) as i64;
        (2 * level as i64 - m) as f64 / m as f64
    }

    /// Level index of a continuous value in `(-1, 1)`; ties round half
    /// away from zero on the scaled axis.
    pub fn level_of(&self, c: f64) -> usize {
        let m = (self.n_q - 1) as f64;
        let scaled = m / 2.0 * (c + 1.0);
        let l = scaled.round();
        (l.max(0.0).min(m)) as usize
    }

    pub fn codebook(&self) -> Vec<f64> {
        (0..self.n_q).map(|l| self.grid_value(l)).collect()
    }
}

/// One batch of latents: continuous values `c`, quantized values `z`
/// (straight-through to the encoder), and the per-dimension standard
/// deviation of the continuous values.
pub struct LatentBatch {
    /// Continuous latents in `(-1, 1)`, shape `[n_b, n_z]`.
    pub c: Tensor,
    /// Quantized latents for decoding/densities, shape `[n_b, n_z]`.
    pub z: Tensor,
    /// Per-dimension std of `c` (uncorrected divisor, floored), shape `[n_z]`.
    pub sigma: Tensor,
    /// Per-dimension discrete code indices, row-major `[n_b * n_z]`.
    pub codes: Vec<usize>,
}

impl LatentBatch {
    /// Assembles a batch from already-formed continuous and quantized
    /// tensors. The std uses the uncorrected divisor (the batch is the
    /// population of interest) and is floored before the square root so
    /// its gradient stays finite on degenerate batches.
    pub fn from_tensors(c: Tensor, z: Tensor, codes: Vec<usize>) -> Result<Self> {
        let sigma = c
            .variance_axis(0, false)?
            .clamp_min(SIGMA_FLOOR * SIGMA_FLOOR)?
            .sqrt()?;
        Ok(Self { c, z, sigma, codes })
    }

    /// Test helper: batch whose continuous and quantized values
    /// coincide with the given rows.
    pub fn from_values(values: &Tensor) -> Result<Self> {
        Self::from_tensors(values.clone(), values.clone(), vec![])
    }

    pub fn batch_size(&self) -> usize {
        self.c.shape()[0]
    }

    pub fn n_z(&self) -> usize {
        self.c.shape()[1]
    }
}

/// Finite scalar quantization of raw (pre-tanh) encoder outputs.
///
/// The continuous latents are `tanh` of the input; each dimension is
/// rescaled to `[0, n_q-1]`, rounded, and mapped back onto the fixed
/// grid. Gradients pass straight through the rounding, so the Jacobian
/// of `z` w.r.t. the pre-activation equals that of `tanh`.
pub fn fsq_quantize(c_pre: &Tensor, spec: &FsqSpec) -> Result<LatentBatch> {
    if c_pre.shape().len() != 2 || c_pre.shape()[1] != spec.n_z {
        return Err(TensorError::ShapeMismatch {
            op: "fsq_quantize",
            lhs: c_pre.shape().to_vec(),
            rhs: vec![0, spec.n_z],
        });
    }
    let c = c_pre.tanh()?;
    let mut codes = Vec::with_capacity(c.numel());
    let mut zdata = Vec::with_capacity(c.numel());
    for &v in c.data() {
        let l = spec.level_of(v);
        codes.push(l);
        zdata.push(spec.grid_value(l));
    }
    let z = Tensor::straight_through(&c, &zdata)?;
    LatentBatch::from_tensors(c, z, codes)
}

/// Learnable per-dimension scalar codebook (the VQ-style baseline).
#[derive(Debug, Clone)]
pub struct LearnedCodebook {
    pub n_z: usize,
    pub n_v: usize,
}

impl LearnedCodebook {
    pub fn new(n_z: usize, n_v: usize) -> Result<Self> {
        if n_v == 0 {
            return Err(TensorError::Empty { op: "lq_codebook" });
        }
        Ok(Self { n_z, n_v })
    }

    /// Initial values: a uniform grid over `[-1, 1]` per dimension.
    pub fn init_values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_z * self.n_v);
        for _ in 0..self.n_z {
            for l in 0..self.n_v {
                let m = (self.n_v - 1).max(1) as i64;
                out.push((2 * l as i64 - m) as f64 / m as f64);
            }
        }
        out
    }
}

/// Output of [`lq_quantize`]: the straight-through batch plus the
/// gathered codebook entries that keep the codebook trainable.
pub struct LqQuantized {
    pub latents: LatentBatch,
    /// Selected codebook values, differentiable w.r.t. the codebook.
    pub z_entries: Tensor,
}

/// Nearest-codebook-value quantization per dimension. Ties pick the
/// lowest index. `values` must be the `[n_z, n_v]` codebook parameter
/// tensor (tracked during training).
pub fn lq_quantize(c: &Tensor, book: &LearnedCodebook, values: &Tensor) -> Result<LqQuantized> {
    if values.shape() != [book.n_z, book.n_v] {
        return Err(TensorError::ShapeMismatch {
            op: "lq_quantize",
            lhs: values.shape().to_vec(),
            rhs: vec![book.n_z, book.n_v],
        });
    }
    if c.shape().len() != 2 || c.shape()[1] != book.n_z {
        return Err(TensorError::ShapeMismatch {
            op: "lq_quantize",
            lhs: c.shape().to_vec(),
            rhs: vec![0, book.n_z],
        });
    }
    let n_b = c.shape()[0];
    let vdata = values.data();
    let mut flat_indices = Vec::with_capacity(n_b * book.n_z);
    let mut codes = Vec::with_capacity(n_b * book.n_z);
    for (i, &cv) in c.data().iter().enumerate() {
        let j = i % book.n_z;
        let row = &vdata[j * book.n_v..(j + 1) * book.n_v];
        let mut best = 0usize;
        let mut best_dist = f64::INFINITY;
        for (l, &e) in row.iter().enumerate() {
            let d = (cv - e).abs();
            if d < best_dist {
                best_dist = d;
                best = l;
            }
        }
        codes.push(best);
        flat_indices.push(j * book.n_v + best);
    }
    let z_entries = values.gather_flat(&flat_indices, vec![n_b, book.n_z])?;
    let z = Tensor::straight_through(c, z_entries.data())?;
    let latents = LatentBatch::from_tensors(c.clone(), z, codes)?;
    Ok(LqQuantized { latents, z_entries })
}

/// Dictionary-learning losses for the learned codebook: the
/// quantization loss moves codebook entries toward (detached)
/// continuous values, the commitment loss pulls continuous values
/// toward (detached) selected entries. Both are means of per-sample
/// squared norms.
pub fn lq_losses(c: &Tensor, z_entries: &Tensor) -> Result<(Tensor, Tensor)> {
    if c.shape() != z_entries.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "lq_losses",
            lhs: c.shape().to_vec(),
            rhs: z_entries.shape().to_vec(),
        });
    }
    let quantize = c
        .stop_gradient()
        .sub(z_entries)?
        .square()?
        .sum_axis(1, false)?
        .mean_all()?;
    let commit = c
        .sub(&z_entries.stop_gradient())?
        .square()?
        .sum_axis(1, false)?
        .mean_all()?;
    Ok((quantize, commit))
}
