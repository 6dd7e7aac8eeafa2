//! Training loop, evaluation harness, and checkpoint selection.
//!
//! One tape is built per step and dropped after backward. Batches come
//! from the data substream, curvature probes from the perturbation
//! substream, so the two never interleave. Checkpoints snapshot
//! parameters, optimizer moments, and RNG positions; resuming from one
//! reproduces the original trajectory bit for bit.

use crate::config::RunConfig;
use crate::data::{SyntheticProcess, IMAGE_PIXELS};
use crate::metrics::{
    self, info_compactness, info_modularity, nmi_heatmap, LatentEval,
    MetricsReport, TraversalDecoder,
};
use crate::model::adamw::{adamw_step, AdamHyper, AdamState};
use crate::model::checkpoint::Checkpoint;
use crate::model::objective::{tripod_objective, Components};
use crate::model::{Autoencoder, LatentKind};
use crate::quantize::{fsq_quantize, lq_quantize};
use crate::tensor::rng::{RngState, Stream};
use crate::tensor::{backward, Result, Tape, Tensor, TensorError};

/// Per-step log row.
#[derive(Debug, Clone, Copy)]
pub struct StepRow {
    pub step: u64,
    pub components: Components,
}

/// Per-evaluation log row (light metrics only).
#[derive(Debug, Clone, Copy)]
pub struct EvalRow {
    pub step: u64,
    pub psnr: f64,
    pub info_m: f64,
    pub info_c: f64,
}

pub struct TrainResult {
    pub checkpoints: Vec<Checkpoint>,
    pub steps: Vec<StepRow>,
    pub evals: Vec<EvalRow>,
}

/// Trains from scratch under `config`.
pub fn train(config: &RunConfig) -> Result<TrainResult> {
    train_inner(config, None)
}

/// Resumes from a checkpoint (parameters, moments, RNG positions).
pub fn train_resumed(config: &RunConfig, from: &Checkpoint) -> Result<TrainResult> {
    train_inner(config, Some(from))
}

fn train_inner(config: &RunConfig, from: Option<&Checkpoint>) -> Result<TrainResult> {
    config.validate()?;
    let proc = config.process().ok_or_else(|| TensorError::Domain {
        op: "train",
        detail: format!("unknown dataset `{}`", config.dataset),
    })?;
    let config_hash = config.hash();
    let config_json = config.to_json();

    let mut rng = RngState::new(config.seed);
    let mut model = Autoencoder::build(config, &proc, &mut rng)?;
    let mut adam = AdamState::for_params(&model.params);
    let mut start_step = 0u64;
    if let Some(ckpt) = from {
        if ckpt.params.entries.len() != model.params.entries.len() {
            return Err(TensorError::Domain {
                op: "train",
                detail: "checkpoint does not match the configured architecture".into(),
            });
        }
        model.params = ckpt.params.clone();
        adam = ckpt.adam_state();
        rng = ckpt.rng_state();
        start_step = ckpt.step;
    }
    let hyper = AdamHyper {
        lr: config.lr,
        beta1: config.beta1,
        beta2: config.beta2,
        eps: 1e-8,
        weight_decay: config.weight_decay,
    };

    let eval_set = proc.enumerate_all();
    let mut result = TrainResult {
        checkpoints: Vec::new(),
        steps: Vec::new(),
        evals: Vec::new(),
    };

    let snapshot = |step: u64,
                        model: &Autoencoder,
                        adam: &AdamState,
                        rng: &RngState,
                        result: &mut TrainResult|
     -> Result<()> {
        let (le, recon_psnr) = eval_latents(model, &eval_set)?;
        let sources = source_columns(&proc, &eval_set);
        let heat = nmi_heatmap(&sources, &le)?;
        result.evals.push(EvalRow {
            step,
            psnr: recon_psnr,
            info_m: info_modularity(&heat),
            info_c: info_compactness(&heat),
        });
        result.checkpoints.push(Checkpoint::snapshot(
            step,
            config_hash,
            config_json.clone(),
            rng,
            &model.params,
            adam,
        ));
        Ok(())
    };

    if from.is_none() {
        snapshot(0, &model, &adam, &rng, &mut result)?;
    }

    for step in start_step..config.max_updates {
        let x = sample_batch(&proc, config.batch_size, &mut rng)?;
        let tape = Tape::new();
        let bound = model.bind(&tape)?;
        let out = tripod_objective(&x, &bound, config, &mut rng)?;
        let grads = backward(&out.loss)?;
        let grad_vecs: Vec<Option<Vec<f64>>> = bound
            .tensors
            .iter()
            .map(|t| grads.get(t).map(|g| g.to_vec()))
            .collect();
        drop(bound);
        adamw_step(&mut model.params, &grad_vecs, &mut adam, hyper);
        result.steps.push(StepRow {
            step: step + 1,
            components: out.components,
        });
        let done = step + 1 == config.max_updates;
        if (config.eval_every > 0 && (step + 1) % config.eval_every == 0) || done {
            snapshot(step + 1, &model, &adam, &rng, &mut result)?;
        }
    }
    Ok(result)
}

/// Assembles one batch of flattened images from the data stream.
pub fn sample_batch(
    proc: &SyntheticProcess,
    batch_size: usize,
    rng: &mut RngState,
) -> Result<Tensor> {
    let mut data = Vec::with_capacity(batch_size * IMAGE_PIXELS);
    for _ in 0..batch_size {
        let (_, x) = proc.sample_pair(rng.stream(Stream::Data));
        data.extend_from_slice(&x);
    }
    Tensor::new(vec![batch_size, IMAGE_PIXELS], data)
}

/// Source value columns of an enumerated/sampled labelled set.
pub fn source_columns(
    proc: &SyntheticProcess,
    set: &[(Vec<usize>, Vec<f64>)],
) -> Vec<Vec<usize>> {
    (0..proc.n_sources())
        .map(|i| set.iter().map(|(s, _)| s[i]).collect())
        .collect()
}

/// Runs the frozen model over a labelled set: latents for metrics plus
/// the global reconstruction PSNR.
pub fn eval_latents(
    model: &Autoencoder,
    set: &[(Vec<usize>, Vec<f64>)],
) -> Result<(LatentEval, f64)> {
    let bound = model.bind_frozen()?;
    let n_z = model.n_z();
    let mut le = LatentEval::default();
    let mut sq_err = 0.0f64;
    let mut n_pix = 0usize;
    for chunk in set.chunks(256) {
        let mut data = Vec::with_capacity(chunk.len() * IMAGE_PIXELS);
        for (_, x) in chunk {
            data.extend_from_slice(x);
        }
        let x = Tensor::new(vec![chunk.len(), IMAGE_PIXELS], data)?;
        let c_pre = bound.encode(&x)?;
        let latents = match &model.latent {
            LatentKind::Fsq(spec) => fsq_quantize(&c_pre, spec)?,
            LatentKind::Lq(book) => {
                let c = c_pre.tanh()?;
                lq_quantize(&c, book, bound.codebook()?)?.latents
            }
        };
        let taps = crate::hessian::TapDecoder::forward_taps(&bound.decoder(), &latents.z)?;
        let logits = taps.last().unwrap();
        for (row, (_, x_row)) in chunk.iter().enumerate() {
            let offset = row * IMAGE_PIXELS;
            for (p, &xv) in x_row.iter().enumerate() {
                let rec = sigmoid(logits.data()[offset + p]);
                sq_err += (rec - xv) * (rec - xv);
            }
            n_pix += IMAGE_PIXELS;
            let zoff = row * n_z;
            le.cont
                .push(latents.c.data()[zoff..zoff + n_z].to_vec());
            le.values
                .push(latents.z.data()[zoff..zoff + n_z].to_vec());
            le.codes
                .push(latents.codes[zoff..zoff + n_z].to_vec());
        }
    }
    let mse = sq_err / n_pix as f64;
    let global_psnr = if mse <= 0.0 {
        crate::model::PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(crate::model::PSNR_CAP)
    };
    Ok((le, global_psnr))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Full metric bundle for a model on its process, deterministic under
/// `seed`. Probe and forest features are restricted to active latents.
pub fn evaluate_model(
    model: &Autoencoder,
    proc: &SyntheticProcess,
    step: u64,
    seed: u64,
) -> Result<MetricsReport> {
    let set = proc.enumerate_all();
    let (le, global_psnr) = eval_latents(model, &set)?;
    let sources = source_columns(proc, &set);
    let heat = nmi_heatmap(&sources, &le)?;
    let active = heat.active.clone();
    let features: Vec<Vec<f64>> = le
        .cont
        .iter()
        .map(|row| {
            row.iter()
                .zip(&active)
                .filter(|(_, a)| **a)
                .map(|(v, _)| *v)
                .collect()
        })
        .collect();
    let cards = proc.cardinalities();
    let info_e = if features.first().map_or(0, Vec::len) == 0 {
        0.0
    } else {
        metrics::probe::info_explicitness(&sources, &features, &cards, seed)?
    };
    let (dci_d, dci_c, dci_i) = if features.first().map_or(0, Vec::len) == 0 {
        (0.0, 0.0, 0.0)
    } else {
        metrics::forest::dci(&sources, &features, &cards, seed)?
    };
    let report = MetricsReport {
        info_m: info_modularity(&heat),
        info_c: info_compactness(&heat),
        info_e,
        dci_d,
        dci_c,
        dci_i,
        psnr: global_psnr,
        step,
        active,
        heatmap: heat.m,
    };
    report.validate()?;
    Ok(report)
}

/// Among checkpoints whose evaluation PSNR clears the threshold, the
/// one with the best modularity; earliest step wins ties.
pub fn select_checkpoint<'a>(
    series: &'a [Checkpoint],
    evals: &[EvalRow],
    psnr_threshold: f64,
) -> Result<&'a Checkpoint> {
    let mut best: Option<(&Checkpoint, f64)> = None;
    for ckpt in series {
        let Some(row) = evals.iter().find(|e| e.step == ckpt.step) else {
            continue;
        };
        if row.psnr < psnr_threshold {
            continue;
        }
        if best.map_or(true, |(_, m)| row.info_m > m) {
            best = Some((ckpt, row.info_m));
        }
    }
    best.map(|(c, _)| c).ok_or(TensorError::NoCheckpointPassed)
}

/// Decoder wrapper for latent traversals.
pub struct ModelDecoder<'a> {
    pub model: &'a Autoencoder,
}

impl TraversalDecoder for ModelDecoder<'_> {
    fn decode_rows(&self, z: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let bound = self.model.bind_frozen()?;
        let n_z = self.model.n_z();
        let mut flat = Vec::with_capacity(z.len() * n_z);
        for row in z {
            flat.extend_from_slice(row);
        }
        let zt = Tensor::new(vec![z.len(), n_z], flat)?;
        let taps = crate::hessian::TapDecoder::forward_taps(&bound.decoder(), &zt)?;
        let logits = taps.last().unwrap();
        Ok(logits
            .data()
            .chunks(self.model.image_pixels)
            .map(|img| img.iter().map(|&l| sigmoid(l)).collect())
            .collect())
    }
}

/// Occupied value range of each latent on an evaluation set.
pub fn occupied_ranges(le: &LatentEval) -> Vec<(f64, f64)> {
    let n_z = le.n_z();
    let mut out = vec![(f64::INFINITY, f64::NEG_INFINITY); n_z];
    for row in &le.values {
        for (j, &v) in row.iter().enumerate() {
            out[j].0 = out[j].0.min(v);
            out[j].1 = out[j].1.max(v);
        }
    }
    out
}
