//! Linear explicitness probe.
//!
//! A multinomial logistic regression is fit per source on the
//! continuous latents with a fixed full-batch Adam budget and a seeded
//! train/test split; explicitness is held-out accuracy normalized
//! against chance.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Result, TensorError};

const ITERS: usize = 600;
const LR: f64 = 0.1;
const TRAIN_FRACTION: f64 = 0.75;

/// Held-out accuracy of a softmax-regression probe predicting `labels`
/// from `features`, deterministic given the seed.
pub fn logistic_probe_accuracy(
    features: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
    seed: u64,
) -> Result<f64> {
    let n = features.len();
    if n == 0 || labels.len() != n {
        return Err(TensorError::Empty { op: "logistic_probe" });
    }
    let d = features[0].len();
    if d == 0 {
        return Ok(0.0);
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n_train = ((n as f64 * TRAIN_FRACTION) as usize).clamp(1, n - 1);
    let (train_idx, test_idx) = idx.split_at(n_train);

    // standardize with training statistics
    let mut mean = vec![0.0; d];
    let mut var = vec![0.0; d];
    for &i in train_idx {
        for (j, &v) in features[i].iter().enumerate() {
            mean[j] += v;
        }
    }
    for m in &mut mean {
        *m /= n_train as f64;
    }
    for &i in train_idx {
        for (j, &v) in features[i].iter().enumerate() {
            var[j] += (v - mean[j]) * (v - mean[j]);
        }
    }
    let scale: Vec<f64> = var
        .iter()
        .map(|v| {
            let s = (v / n_train as f64).sqrt();
            if s > 1e-9 {
                1.0 / s
            } else {
                0.0
            }
        })
        .collect();
    let x_of = |i: usize| -> Vec<f64> {
        features[i]
            .iter()
            .enumerate()
            .map(|(j, &v)| (v - mean[j]) * scale[j])
            .collect()
    };

    // weights [(d+1) x k] with bias row, Adam state
    let k = n_classes;
    let mut w = vec![0.0; (d + 1) * k];
    let mut m1 = vec![0.0; w.len()];
    let mut m2 = vec![0.0; w.len()];
    let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let inv_n = 1.0 / n_train as f64;
    for t in 1..=ITERS {
        let mut grad = vec![0.0; w.len()];
        for &i in train_idx {
            let x = x_of(i);
            let mut logits = vec![0.0; k];
            for (c, logit) in logits.iter_mut().enumerate() {
                let mut acc = w[d * k + c]; // bias
                for (j, &xv) in x.iter().enumerate() {
                    acc += w[j * k + c] * xv;
                }
                *logit = acc;
            }
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut expsum = 0.0;
            let mut probs = vec![0.0; k];
            for (c, &l) in logits.iter().enumerate() {
                let e = (l - mx).exp();
                probs[c] = e;
                expsum += e;
            }
            for (c, p) in probs.iter_mut().enumerate() {
                *p /= expsum;
                let err = (*p - if labels[i] == c { 1.0 } else { 0.0 }) * inv_n;
                for (j, &xv) in x.iter().enumerate() {
                    grad[j * k + c] += err * xv;
                }
                grad[d * k + c] += err;
            }
        }
        let bc1 = 1.0 - b1.powi(t as i32);
        let bc2 = 1.0 - b2.powi(t as i32);
        for (j, g) in grad.iter().enumerate() {
            m1[j] = b1 * m1[j] + (1.0 - b1) * g;
            m2[j] = b2 * m2[j] + (1.0 - b2) * g * g;
            w[j] -= LR * (m1[j] / bc1) / ((m2[j] / bc2).sqrt() + eps);
        }
    }

    let mut correct = 0usize;
    for &i in test_idx {
        let x = x_of(i);
        let mut best = 0usize;
        let mut best_v = f64::NEG_INFINITY;
        for c in 0..k {
            let mut acc = w[d * k + c];
            for (j, &xv) in x.iter().enumerate() {
                acc += w[j * k + c] * xv;
            }
            if acc > best_v {
                best_v = acc;
                best = c;
            }
        }
        if best == labels[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / test_idx.len() as f64)
}

/// Mean over sources of chance-normalized probe accuracy, on the
/// active continuous latents.
pub fn info_explicitness(
    sources: &[Vec<usize>],
    features: &[Vec<f64>],
    cards: &[usize],
    seed: u64,
) -> Result<f64> {
    if sources.is_empty() {
        return Err(TensorError::Empty { op: "info_explicitness" });
    }
    let mut total = 0.0;
    for (i, src) in sources.iter().enumerate() {
        let acc = logistic_probe_accuracy(features, src, cards[i], seed ^ (i as u64) << 8)?;
        let chance = 1.0 / cards[i] as f64;
        total += ((acc - chance) / (1.0 - chance)).clamp(0.0, 1.0);
    }
    Ok(total / sources.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_case(card: usize, reps: usize) -> (Vec<usize>, Vec<Vec<f64>>) {
        let mut labels = Vec::new();
        let mut features = Vec::new();
        for r in 0..reps {
            for c in 0..card {
                labels.push(c);
                // a second, uninformative feature varies with r
                features.push(vec![c as f64, (r % 3) as f64]);
            }
        }
        (labels, features)
    }

    #[test]
    fn identity_latents_fully_explicit() {
        let (labels, features) = identity_case(8, 32);
        let acc = logistic_probe_accuracy(&features, &labels, 8, 0).unwrap();
        assert!(acc >= 0.98, "accuracy {acc}");
    }

    #[test]
    fn constant_latents_score_zero() {
        let labels: Vec<usize> = (0..256).map(|i| i % 4).collect();
        let features = vec![vec![1.0, 1.0]; 256];
        let sources = vec![labels];
        let e = info_explicitness(&sources, &features, &[4], 3).unwrap();
        assert!(e < 0.1, "explicitness {e}");
    }

    #[test]
    fn deterministic_given_seed() {
        let (labels, features) = identity_case(4, 16);
        // corrupt half the informative feature so accuracy is partial
        let noisy: Vec<Vec<f64>> = features
            .iter()
            .enumerate()
            .map(|(i, f)| {
                if i % 2 == 0 {
                    vec![0.0, f[1]]
                } else {
                    f.clone()
                }
            })
            .collect();
        let a = logistic_probe_accuracy(&noisy, &labels, 4, 11).unwrap();
        let b = logistic_probe_accuracy(&noisy, &labels, 4, 11).unwrap();
        assert!((a - b).abs() < 1e-9);
    }
}
