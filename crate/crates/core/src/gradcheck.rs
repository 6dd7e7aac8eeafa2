//! Central finite-difference gradient checking.
//!
//! These helpers recompute a scalar function from perturbed copies of
//! its input data, so they share no code path with the tape's backward
//! rules and act as an independent oracle for them.

use crate::tensor::Result;

/// Numerical gradient of `f` at `x` by central differences.
pub fn finite_diff_grad(
    f: &mut dyn FnMut(&[f64]) -> Result<f64>,
    x: &[f64],
    step: f64,
) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let plus = f(&probe)?;
        probe[i] = orig - step;
        let minus = f(&probe)?;
        probe[i] = orig;
        grad[i] = (plus - minus) / (2.0 * step);
    }
    Ok(grad)
}

/// Maximum elementwise relative error between two gradients, floored
/// so near-zero entries compare absolutely.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Relative error of `value` against a reference, floored.
pub fn rel_err(value: f64, reference: f64) -> f64 {
    (value - reference).abs() / reference.abs().max(1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{backward, Tape, Tensor};

    #[test]
    fn matmul_gradient_matches_central_differences() {
        // random-ish fixed 3x4 * 4x2 product
        let a_data: Vec<f64> = (0..12).map(|i| ((i * 7 + 3) % 11) as f64 / 11.0 - 0.4).collect();
        let b_data: Vec<f64> = (0..8).map(|i| ((i * 5 + 1) % 13) as f64 / 13.0 - 0.5).collect();

        let loss_of = |a: &[f64], b: &[f64]| -> f64 {
            let ta = Tensor::new(vec![3, 4], a.to_vec()).unwrap();
            let tb = Tensor::new(vec![4, 2], b.to_vec()).unwrap();
            // weighted sum so the gradient is not uniform
            let prod = ta.matmul(&tb).unwrap();
            let w = Tensor::new(vec![3, 2], (0..6).map(|i| 0.3 + i as f64).collect()).unwrap();
            prod.mul(&w).unwrap().sum_all().unwrap().to_scalar().unwrap()
        };

        let tape = Tape::new();
        let ta = tape.watch(&Tensor::new(vec![3, 4], a_data.clone()).unwrap());
        let tb = tape.watch(&Tensor::new(vec![4, 2], b_data.clone()).unwrap());
        let w = Tensor::new(vec![3, 2], (0..6).map(|i| 0.3 + i as f64).collect()).unwrap();
        let loss = ta.matmul(&tb).unwrap().mul(&w).unwrap().sum_all().unwrap();
        let grads = backward(&loss).unwrap();

        let ga_num =
            finite_diff_grad(&mut |a| Ok(loss_of(a, &b_data)), &a_data, 1e-5).unwrap();
        let gb_num =
            finite_diff_grad(&mut |b| Ok(loss_of(&a_data, b)), &b_data, 1e-5).unwrap();
        assert!(max_rel_err(grads.get(&ta).unwrap(), &ga_num, 1e-8) < 1e-6);
        assert!(max_rel_err(grads.get(&tb).unwrap(), &gb_num, 1e-8) < 1e-6);
    }
}
