//! MLP autoencoder, training objective, and checkpointing.

pub mod adamw;
pub mod checkpoint;
pub mod objective;
pub mod train;

use rand::Rng;

use crate::config::{QuantizerKind, RunConfig};
use crate::data::SyntheticProcess;
use crate::hessian::TapDecoder;
use crate::quantize::{FsqSpec, LearnedCodebook};
use crate::tensor::rng::{RngState, Stream};
use crate::tensor::{Result, Tape, Tensor, TensorError};

/// One named parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Ordered parameter collection; order is the optimizer's contract.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    pub entries: Vec<Param>,
}

impl ParamSet {
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        self.entries.push(Param {
            name: name.into(),
            shape,
            data,
        });
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|p| p.name == name)
    }
}

#[derive(Debug, Clone)]
pub enum LatentKind {
    Fsq(FsqSpec),
    Lq(LearnedCodebook),
}

/// Fully-connected autoencoder with tanh hidden layers. The encoder
/// emits raw pre-activation latents; the decoder's taps are every
/// hidden activation plus the output logits.
#[derive(Debug, Clone)]
pub struct Autoencoder {
    /// Layer sizes `[in, hidden.., n_z]`.
    pub enc_dims: Vec<usize>,
    /// Layer sizes `[n_z, hidden.., pixels]`.
    pub dec_dims: Vec<usize>,
    pub latent: LatentKind,
    pub params: ParamSet,
    pub image_pixels: usize,
}

fn xavier_init(rng: &mut rand_chacha::ChaCha8Rng, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..fan_in * fan_out)
        .map(|_| rng.gen_range(-bound..bound))
        .collect()
}

impl Autoencoder {
    /// Builds the model dictated by a config for a given process.
    pub fn build(config: &RunConfig, proc: &SyntheticProcess, rng: &mut RngState) -> Result<Self> {
        let pixels = crate::data::IMAGE_PIXELS;
        let n_z = config.latent_dim(proc);
        let mut enc_dims = vec![pixels];
        enc_dims.extend(std::iter::repeat(config.hidden_width).take(config.hidden_layers));
        enc_dims.push(n_z);
        let mut dec_dims = vec![n_z];
        dec_dims.extend(std::iter::repeat(config.hidden_width).take(config.hidden_layers));
        dec_dims.push(pixels);

        let mut params = ParamSet::default();
        let init_rng = rng.stream(Stream::Init);
        for (prefix, dims) in [("enc", &enc_dims), ("dec", &dec_dims)] {
            for l in 0..dims.len() - 1 {
                let (fi, fo) = (dims[l], dims[l + 1]);
                let mut w = xavier_init(init_rng, fi, fo);
                // start the latent head well inside tanh's linear
                // region; saturated latents get no gradient and the
                // quantizer cannot recover from a collapsed batch
                if prefix == "enc" && l == dims.len() - 2 {
                    for v in &mut w {
                        *v *= 0.25;
                    }
                }
                params.push(format!("{prefix}.w{l}"), vec![fi, fo], w);
                params.push(format!("{prefix}.b{l}"), vec![fo], vec![0.0; fo]);
            }
        }
        let latent = match config.quantizer {
            QuantizerKind::Fsq => LatentKind::Fsq(FsqSpec::new(n_z, config.n_q)?),
            QuantizerKind::Lq => {
                let book = LearnedCodebook::new(n_z, config.n_q)?;
                params.push("codebook", vec![n_z, config.n_q], book.init_values());
                LatentKind::Lq(book)
            }
        };
        Ok(Self {
            enc_dims,
            dec_dims,
            latent,
            params,
            image_pixels: pixels,
        })
    }

    pub fn n_z(&self) -> usize {
        *self.enc_dims.last().unwrap()
    }

    /// Binds current parameter values onto a tape as tracked leaves.
    pub fn bind(&self, tape: &Tape) -> Result<BoundModel<'_>> {
        let tensors: Vec<Tensor> = self
            .params
            .entries
            .iter()
            .map(|p| Ok(tape.watch(&Tensor::new(p.shape.clone(), p.data.clone())?)))
            .collect::<Result<_>>()?;
        Ok(BoundModel { model: self, tensors })
    }

    /// Untracked binding for evaluation-only passes.
    pub fn bind_frozen(&self) -> Result<BoundModel<'_>> {
        let tensors: Vec<Tensor> = self
            .params
            .entries
            .iter()
            .map(|p| Tensor::new(p.shape.clone(), p.data.clone()))
            .collect::<Result<_>>()?;
        Ok(BoundModel { model: self, tensors })
    }
}

/// Parameters materialized as (possibly tracked) tensors for one step.
pub struct BoundModel<'a> {
    pub model: &'a Autoencoder,
    pub tensors: Vec<Tensor>,
}

impl<'a> BoundModel<'a> {
    fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.model
            .params
            .index_of(name)
            .map(|i| &self.tensors[i])
            .ok_or_else(|| TensorError::Domain {
                op: "bound_model",
                detail: format!("unknown parameter `{name}`"),
            })
    }

    fn mlp_forward(&self, prefix: &str, n_layers: usize, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut taps = Vec::with_capacity(n_layers);
        let mut h = x.clone();
        for l in 0..n_layers {
            let w = self.tensor(&format!("{prefix}.w{l}"))?;
            let b = self.tensor(&format!("{prefix}.b{l}"))?;
            let lin = h.matmul(w)?.add(b)?;
            h = if l + 1 < n_layers { lin.tanh()? } else { lin };
            taps.push(h.clone());
        }
        Ok(taps)
    }

    /// Raw (pre-tanh) encoder output, shape `[n_b, n_z]`.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        let n_layers = self.model.enc_dims.len() - 1;
        Ok(self.mlp_forward("enc", n_layers, x)?.pop().unwrap())
    }

    /// Decoder view exposing taps for curvature probes.
    pub fn decoder(&self) -> BoundDecoder<'_, 'a> {
        BoundDecoder { bound: self }
    }

    pub fn codebook(&self) -> Result<&Tensor> {
        self.tensor("codebook")
    }
}

/// Decoder half of a bound model; taps are every hidden activation
/// (post-tanh) plus the output logits.
pub struct BoundDecoder<'b, 'a> {
    bound: &'b BoundModel<'a>,
}

impl TapDecoder for BoundDecoder<'_, '_> {
    fn forward_taps(&self, z: &Tensor) -> Result<Vec<Tensor>> {
        let n_layers = self.bound.model.dec_dims.len() - 1;
        self.bound.mlp_forward("dec", n_layers, z)
    }
}

/// Peak signal-to-noise ratio in dB for images in `[0,1]`, capped at
/// 99 dB (exact reconstruction has infinite PSNR).
pub const PSNR_CAP: f64 = 99.0;

pub fn psnr(x: &[f64], x_hat: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), x_hat.len());
    let mse: f64 = x
        .iter()
        .zip(x_hat)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x.len() as f64;
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> RunConfig {
        RunConfig {
            hidden_width: 8,
            hidden_layers: 2,
            ..Default::default()
        }
    }

    #[test]
    fn build_wires_expected_shapes() {
        let cfg = tiny_config();
        let proc = SyntheticProcess::blob();
        let mut rng = RngState::new(0);
        let model = Autoencoder::build(&cfg, &proc, &mut rng).unwrap();
        assert_eq!(model.n_z(), 8); // 2 * 4 sources
        assert_eq!(model.enc_dims, vec![256, 8, 8, 8]);
        assert_eq!(model.dec_dims, vec![8, 8, 8, 256]);
        let bound = model.bind_frozen().unwrap();
        let x = Tensor::zeros(vec![2, 256]);
        let c_pre = bound.encode(&x).unwrap();
        assert_eq!(c_pre.shape(), &[2, 8]);
        let taps = bound.decoder().forward_taps(&c_pre).unwrap();
        assert_eq!(taps.len(), 3);
        assert_eq!(taps.last().unwrap().shape(), &[2, 256]);
    }

    #[test]
    fn same_seed_same_initialization() {
        let cfg = tiny_config();
        let proc = SyntheticProcess::blob();
        let a = Autoencoder::build(&cfg, &proc, &mut RngState::new(5)).unwrap();
        let b = Autoencoder::build(&cfg, &proc, &mut RngState::new(5)).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn psnr_reference_points() {
        // MSE 0.01 -> 20 dB
        let x = vec![0.5; 100];
        let y: Vec<f64> = x.iter().map(|v| v + 0.1).collect();
        assert!((psnr(&x, &y) - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&x, &x), PSNR_CAP);
    }
}
