//! Run configuration: the flat-JSON file format shared by the CLI, the
//! training loop, and checkpoints. Unknown keys are rejected so typos
//! fail loudly, and every field has a default so `{}` is a valid file.

use serde::{Deserialize, Serialize};

use crate::data::SyntheticProcess;
use crate::tensor::{Result, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantizerKind {
    Fsq,
    Lq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlmMode {
    Klm,
    KlmNaive,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HpMode {
    Nhp,
    Vanilla,
    Off,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: String,
    pub max_updates: u64,
    pub eval_every: u64,
    pub batch_size: usize,
    /// Latent dimensionality; `null` means twice the source count.
    pub n_z: Option<usize>,
    pub n_q: usize,
    pub quantizer: QuantizerKind,
    pub klm_mode: KlmMode,
    pub hp_mode: HpMode,
    pub lambda_klm: f64,
    pub lambda_nhp: f64,
    /// Fixed bandwidth for the naive multiinformation estimator.
    pub klm_fixed_h: f64,
    pub n_p: usize,
    pub epsilon: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub psnr_threshold: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dataset: "blob".into(),
            max_updates: 20_000,
            eval_every: 1_000,
            batch_size: 64,
            n_z: None,
            n_q: 12,
            quantizer: QuantizerKind::Fsq,
            klm_mode: KlmMode::Klm,
            hp_mode: HpMode::Nhp,
            lambda_klm: 1e-2,
            lambda_nhp: 1e-2,
            klm_fixed_h: 0.1,
            n_p: 2,
            epsilon: 0.1,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.99,
            weight_decay: 0.0,
            hidden_width: 256,
            hidden_layers: 3,
            psnr_threshold: 35.0,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| TensorError::Domain {
            op: "run_config",
            detail: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |detail: String| {
            Err(TensorError::Domain {
                op: "run_config",
                detail,
            })
        };
        if self.batch_size < 2 {
            return fail(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if self.lambda_klm < 0.0 || self.lambda_nhp < 0.0 {
            return fail("regularization weights must be nonnegative".into());
        }
        if self.n_q < 2 {
            return fail(format!("n_q must be at least 2, got {}", self.n_q));
        }
        if self.n_p < 2 {
            return fail(format!("n_p must be at least 2, got {}", self.n_p));
        }
        if self.epsilon <= 0.0 {
            return fail("epsilon must be positive".into());
        }
        if self.klm_fixed_h <= 0.0 {
            return fail("klm_fixed_h must be positive".into());
        }
        if self.hidden_layers == 0 || self.hidden_width == 0 {
            return fail("hidden_layers and hidden_width must be positive".into());
        }
        if self.process().is_none() {
            return fail(format!("unknown dataset `{}`", self.dataset));
        }
        Ok(())
    }

    pub fn process(&self) -> Option<SyntheticProcess> {
        SyntheticProcess::by_name(&self.dataset)
    }

    /// Latent dimensionality: explicit, or twice the source count.
    pub fn latent_dim(&self, proc: &SyntheticProcess) -> usize {
        self.n_z.unwrap_or(2 * proc.n_sources())
    }

    /// FNV-1a over the canonical JSON form; embedded in every output.
    pub fn hash(&self) -> u64 {
        fnv1a64(self.to_json().as_bytes())
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}
