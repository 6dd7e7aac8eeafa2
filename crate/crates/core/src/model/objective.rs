//! The full training objective: reconstruction plus weighted latent
//! multiinformation and Hessian-penalty terms, with leg toggles that
//! swap in the naive variants or drop a term entirely. The learned-
//! codebook path additionally contributes its quantization and
//! commitment losses.

use crate::config::{HpMode, KlmMode, RunConfig};
use crate::density::{klm_loss, klm_loss_naive};
use crate::hessian::{
    draw_raw, nhp_loss_with_center, vanilla_hp_loss_with_center, ProbeSpec, RawDraws,
};
use crate::model::{psnr, BoundModel, LatentKind};
use crate::quantize::{fsq_quantize, lq_losses, lq_quantize, LatentBatch};
use crate::tensor::rng::{RngState, Stream};
use crate::tensor::{Result, Tensor};

/// Scalar values of each objective term for logging.
#[derive(Debug, Clone, Copy, Default)]
pub struct Components {
    pub total: f64,
    pub recon: f64,
    pub klm: f64,
    pub nhp: f64,
    pub lq_quantize: f64,
    pub lq_commit: f64,
    /// PSNR of this batch's reconstructions.
    pub psnr: f64,
}

pub struct ObjectiveOut {
    pub loss: Tensor,
    pub components: Components,
    pub latents: LatentBatch,
}

/// Computes the objective for one batch of flattened images, drawing
/// probe directions from the perturbation stream.
pub fn tripod_objective(
    x: &Tensor,
    bound: &BoundModel<'_>,
    config: &RunConfig,
    rng: &mut RngState,
) -> Result<ObjectiveOut> {
    let draws = match config.hp_mode {
        HpMode::Off => None,
        _ => {
            let n_b = x.shape()[0];
            let n_z = bound.model.n_z();
            Some(draw_raw(
                n_b,
                n_z,
                config.n_p,
                rng.stream(Stream::Perturb),
            )?)
        }
    };
    tripod_objective_with_draws(x, bound, config, draws.as_ref())
}

/// Same objective with externally supplied probe draws; the entry
/// point for finite-difference verification, which must replay the
/// exact same randomness on every perturbed evaluation.
pub fn tripod_objective_with_draws(
    x: &Tensor,
    bound: &BoundModel<'_>,
    config: &RunConfig,
    draws: Option<&RawDraws>,
) -> Result<ObjectiveOut> {
    let c_pre = bound.encode(x)?;
    let c = c_pre.tanh()?;

    let mut lq_terms: Option<(Tensor, Tensor)> = None;
    let latents = match &bound.model.latent {
        LatentKind::Fsq(spec) => fsq_quantize(&c_pre, spec)?,
        LatentKind::Lq(book) => {
            let q = lq_quantize(&c, book, bound.codebook()?)?;
            lq_terms = Some(lq_losses(&c, &q.z_entries)?);
            q.latents
        }
    };

    let decoder = bound.decoder();
    let taps = crate::hessian::TapDecoder::forward_taps(&decoder, &latents.z)?;
    let logits = taps.last().unwrap();
    let recon = logits.bce_with_logits(x)?.mean_all()?;

    ProbeSpec {
        n_p: config.n_p,
        epsilon: config.epsilon,
    }
    .validate()?;

    let klm = match config.klm_mode {
        KlmMode::Klm => Some(klm_loss(&latents)?),
        KlmMode::KlmNaive => Some(klm_loss_naive(&latents, config.klm_fixed_h)?),
        KlmMode::Off => None,
    };
    let hp = match (config.hp_mode, draws) {
        (HpMode::Off, _) => None,
        (_, None) => {
            return Err(crate::tensor::TensorError::Domain {
                op: "tripod_objective",
                detail: "hessian penalty enabled but no probe draws supplied".into(),
            })
        }
        (HpMode::Nhp, Some(d)) => Some(nhp_loss_with_center(
            &decoder,
            &latents,
            d,
            config.epsilon,
            &taps,
        )?),
        (HpMode::Vanilla, Some(d)) => Some(vanilla_hp_loss_with_center(
            &decoder,
            &latents.z,
            d,
            config.epsilon,
            true,
            &taps,
        )?),
    };

    let mut components = Components {
        recon: recon.to_scalar()?,
        ..Default::default()
    };
    let mut loss = recon;
    if let Some(k) = &klm {
        components.klm = k.to_scalar()?;
        if config.lambda_klm != 0.0 {
            loss = loss.add(&k.mul_scalar(config.lambda_klm)?)?;
        }
    }
    if let Some(h) = &hp {
        components.nhp = h.to_scalar()?;
        if config.lambda_nhp != 0.0 {
            loss = loss.add(&h.mul_scalar(config.lambda_nhp)?)?;
        }
    }
    if let Some((q, cm)) = &lq_terms {
        components.lq_quantize = q.to_scalar()?;
        components.lq_commit = cm.to_scalar()?;
        loss = loss.add(q)?.add(cm)?;
    }
    components.total = loss.to_scalar()?;

    // batch PSNR from the sigmoid reconstructions
    let x_hat: Vec<f64> = logits.data().iter().map(|&l| sigmoid(l)).collect();
    components.psnr = psnr(x.data(), &x_hat);

    Ok(ObjectiveOut {
        loss,
        components,
        latents,
    })
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::QuantizerKind;
    use crate::data::SyntheticProcess;
    use crate::model::Autoencoder;
    use crate::tensor::Tape;

    fn batch(proc: &SyntheticProcess, rng: &mut RngState, n: usize) -> Tensor {
        let mut data = Vec::with_capacity(n * crate::data::IMAGE_PIXELS);
        for _ in 0..n {
            let (_, x) = proc.sample_pair(rng.stream(Stream::Data));
            data.extend_from_slice(&x);
        }
        Tensor::new(vec![n, crate::data::IMAGE_PIXELS], data).unwrap()
    }

    fn tiny(quantizer: QuantizerKind) -> RunConfig {
        RunConfig {
            hidden_width: 16,
            hidden_layers: 2,
            batch_size: 8,
            quantizer,
            ..Default::default()
        }
    }

    #[test]
    fn zero_weights_reduce_to_reconstruction() {
        let proc = SyntheticProcess::blob();
        let cfg = RunConfig {
            lambda_klm: 0.0,
            lambda_nhp: 0.0,
            ..tiny(QuantizerKind::Fsq)
        };
        let mut rng = RngState::new(1);
        let model = Autoencoder::build(&cfg, &proc, &mut rng).unwrap();
        let tape = Tape::new();
        let bound = model.bind(&tape).unwrap();
        let x = batch(&proc, &mut rng, 8);
        let out = tripod_objective(&x, &bound, &cfg, &mut rng).unwrap();
        assert_eq!(out.components.total, out.components.recon);
    }

    #[test]
    fn objective_bit_reproducible() {
        let proc = SyntheticProcess::blob();
        let cfg = tiny(QuantizerKind::Fsq);
        let run = || {
            let mut rng = RngState::new(3);
            let model = Autoencoder::build(&cfg, &proc, &mut rng).unwrap();
            let tape = Tape::new();
            let bound = model.bind(&tape).unwrap();
            let x = batch(&proc, &mut rng, 8);
            let out = tripod_objective(&x, &bound, &cfg, &mut rng).unwrap();
            (
                out.components.total.to_bits(),
                out.components.klm.to_bits(),
                out.components.nhp.to_bits(),
            )
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn lq_path_adds_codebook_losses() {
        let proc = SyntheticProcess::blob();
        let cfg = RunConfig {
            klm_mode: KlmMode::KlmNaive,
            hp_mode: HpMode::Vanilla,
            ..tiny(QuantizerKind::Lq)
        };
        let mut rng = RngState::new(2);
        let model = Autoencoder::build(&cfg, &proc, &mut rng).unwrap();
        let tape = Tape::new();
        let bound = model.bind(&tape).unwrap();
        let x = batch(&proc, &mut rng, 8);
        let out = tripod_objective(&x, &bound, &cfg, &mut rng).unwrap();
        assert!(out.components.lq_commit > 0.0 || out.components.lq_quantize > 0.0);
        assert!(out.components.total.is_finite());
    }
}
