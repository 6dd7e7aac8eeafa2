//! Verification suites: gradient checks against central finite
//! differences, KDE vectorization against the double-loop reference,
//! the Hutchinson off-diagonal identity, and the two penalty
//! propositions (scale invariance and the sampled-ratio equality),
//! each evaluated with explicit measured errors and thresholds.
//!
//! The full-objective gradient check recomputes the loss through an
//! independently written plain-`f64` forward pass (no tensor/tape
//! machinery) with the quantization offsets and probe draws frozen, so
//! the finite differences probe exactly the surrogate the
//! straight-through estimator differentiates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::density::{self, silverman, SIGMA_FLOOR};
use crate::gradcheck::{finite_diff_grad, max_rel_err, rel_err};
use crate::hessian::{
    draw_raw, hessian_oracle, oracle_stats, vanilla_hp_loss_with_draws, FnDecoder, RawDraws,
    TapDecoder,
};
use crate::model::objective::tripod_objective_with_draws;
use crate::model::{Autoencoder, LatentKind, ParamSet};
use crate::quantize::{FsqSpec, LatentBatch};
use crate::tensor::{backward, Result, Tape, Tensor};

/// Seed for every stochastic oracle; fixed so pass/fail is
/// reproducible run to run.
pub const ORACLE_SEED: u64 = 20240531;

#[derive(Debug, Clone)]
pub struct OracleCheck {
    pub name: String,
    pub measured: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl OracleCheck {
    fn new(name: impl Into<String>, measured: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            threshold,
            pass: measured.is_finite() && measured <= threshold,
        }
    }
}

impl std::fmt::Display for OracleCheck {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {}: measured={:.3e} threshold={:.3e}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.threshold
        )
    }
}

pub const SUITES: &[&str] = &["gradcheck", "kde", "hutchinson", "prop31", "prop32"];

/// Runs one named suite, or all of them.
pub fn run_suite(name: &str) -> Result<Vec<OracleCheck>> {
    match name {
        "gradcheck" => suite_gradcheck(),
        "kde" => suite_kde(),
        "hutchinson" => suite_hutchinson(),
        "prop31" => suite_prop31(),
        "prop32" => suite_prop32(),
        "all" => {
            let mut all = Vec::new();
            for s in SUITES {
                all.extend(run_suite(s)?);
            }
            Ok(all)
        }
        other => Err(crate::tensor::TensorError::Domain {
            op: "oracle",
            detail: format!("unknown suite `{other}`"),
        }),
    }
}

fn pseudo_data(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

// ---------------------------------------------------------------- gradcheck

const GRAD_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-5;

fn op_check(
    name: &str,
    shape: Vec<usize>,
    data: Vec<f64>,
    f: impl Fn(&Tensor) -> Result<Tensor>,
) -> Result<OracleCheck> {
    let tape = Tape::new();
    let x = tape.watch(&Tensor::new(shape.clone(), data.clone())?);
    let y = f(&x)?;
    // weighted sum so every output element contributes distinctly
    let w: Vec<f64> = (0..y.numel()).map(|i| 0.3 + 0.17 * i as f64).collect();
    let wt = Tensor::new(y.shape().to_vec(), w.clone())?;
    let loss = y.mul(&wt)?.sum_all()?;
    let grads = backward(&loss)?;
    let analytic = grads.get_or_zeros(&x);
    let numeric = finite_diff_grad(
        &mut |xd| {
            let xt = Tensor::new(shape.clone(), xd.to_vec())?;
            let y = f(&xt)?;
            Ok(y
                .data()
                .iter()
                .zip(&w)
                .map(|(a, b)| a * b)
                .sum())
        },
        &data,
        FD_STEP,
    )?;
    Ok(OracleCheck::new(
        format!("gradcheck_{name}"),
        max_rel_err(&analytic, &numeric, 1e-6),
        GRAD_TOL,
    ))
}

fn suite_gradcheck() -> Result<Vec<OracleCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(ORACLE_SEED);
    let mut checks = Vec::new();

    let a23 = pseudo_data(&mut rng, 6, -1.2, 1.2);
    let b23 = pseudo_data(&mut rng, 6, 0.4, 1.6); // positive: safe divisor
    let b3 = pseudo_data(&mut rng, 3, -0.9, 0.9);
    let m34 = pseudo_data(&mut rng, 12, -0.8, 0.8);
    let m42 = pseudo_data(&mut rng, 8, -0.8, 0.8);
    let pos = pseudo_data(&mut rng, 6, 0.2, 2.0);
    let away_from_zero: Vec<f64> = pseudo_data(&mut rng, 6, 0.1, 1.0)
        .into_iter()
        .enumerate()
        .map(|(i, v)| if i % 2 == 0 { v } else { -v })
        .collect();

    let fixed_b = Tensor::new(vec![2, 3], b23.clone())?;
    let fixed_row = Tensor::new(vec![3], b3.clone())?;
    let fixed_m42 = Tensor::new(vec![4, 2], m42.clone())?;
    let fixed_m34 = Tensor::new(vec![3, 4], m34.clone())?;

    checks.push(op_check("add", vec![2, 3], a23.clone(), |x| x.add(&fixed_b))?);
    checks.push(op_check("add_broadcast", vec![2, 3], a23.clone(), |x| {
        x.add(&fixed_row)
    })?);
    checks.push(op_check("sub", vec![2, 3], a23.clone(), |x| x.sub(&fixed_b))?);
    checks.push(op_check("mul", vec![2, 3], a23.clone(), |x| x.mul(&fixed_b))?);
    checks.push(op_check("div_lhs", vec![2, 3], a23.clone(), |x| x.div(&fixed_b))?);
    checks.push(op_check("div_rhs", vec![2, 3], pos.clone(), |x| fixed_b.div(x))?);
    checks.push(op_check("neg", vec![2, 3], a23.clone(), |x| x.neg())?);
    checks.push(op_check("matmul_lhs", vec![3, 4], m34.clone(), |x| {
        x.matmul(&fixed_m42)
    })?);
    checks.push(op_check("matmul_rhs", vec![4, 2], m42.clone(), |x| {
        fixed_m34.matmul(x)
    })?);
    checks.push(op_check("tanh", vec![2, 3], a23.clone(), |x| x.tanh())?);
    checks.push(op_check("sigmoid", vec![2, 3], a23.clone(), |x| x.sigmoid())?);
    checks.push(op_check("relu", vec![2, 3], away_from_zero.clone(), |x| x.relu())?);
    checks.push(op_check("exp", vec![2, 3], a23.clone(), |x| x.exp())?);
    checks.push(op_check("log", vec![2, 3], pos.clone(), |x| x.log())?);
    checks.push(op_check("sqrt", vec![2, 3], pos.clone(), |x| x.sqrt())?);
    checks.push(op_check("square", vec![2, 3], a23.clone(), |x| x.square())?);
    checks.push(op_check("add_scalar", vec![2, 3], a23.clone(), |x| {
        x.add_scalar(0.7)
    })?);
    checks.push(op_check("mul_scalar", vec![2, 3], a23.clone(), |x| {
        x.mul_scalar(-1.3)
    })?);
    checks.push(op_check("clamp_min", vec![2, 3], away_from_zero.clone(), |x| {
        x.clamp_min(0.0)
    })?);
    checks.push(op_check("broadcast_to", vec![3], b3.clone(), |x| {
        x.broadcast_to(&[4, 3])
    })?);
    checks.push(op_check("sum_all", vec![2, 3], a23.clone(), |x| x.sum_all())?);
    checks.push(op_check("mean_all", vec![2, 3], a23.clone(), |x| x.mean_all())?);
    checks.push(op_check("sum_axis", vec![2, 3], a23.clone(), |x| {
        x.sum_axis(1, false)
    })?);
    checks.push(op_check("mean_axis", vec![2, 3], a23.clone(), |x| {
        x.mean_axis(0, true)
    })?);
    checks.push(op_check("variance_unbiased", vec![4, 2], m42.clone(), |x| {
        x.variance_axis(0, true)
    })?);
    checks.push(op_check("variance_biased", vec![4, 2], m42.clone(), |x| {
        x.variance_axis(0, false)
    })?);
    checks.push(op_check("logsumexp", vec![2, 3], a23.clone(), |x| {
        x.logsumexp_axis(1, false)
    })?);
    checks.push(op_check("concat", vec![2, 3], a23.clone(), |x| {
        Tensor::concat(&[x, &fixed_b], 1)
    })?);
    checks.push(op_check("slice", vec![2, 3], a23.clone(), |x| x.slice(1, 1, 3))?);
    checks.push(op_check("reshape", vec![2, 3], a23.clone(), |x| {
        x.reshape(vec![3, 2])
    })?);
    checks.push(op_check("gather_flat", vec![2, 3], a23.clone(), |x| {
        x.gather_flat(&[0, 2, 2, 5, 1], vec![5])
    })?);
    let targets = Tensor::new(vec![2, 3], pseudo_data(&mut rng, 6, 0.05, 0.95))?;
    checks.push(op_check("bce_with_logits", vec![2, 3], a23.clone(), |x| {
        x.bce_with_logits(&targets)
    })?);
    checks.push(op_check("klm_loss", vec![6, 2], pseudo_data(&mut rng, 12, -0.9, 0.9), |x| {
        let lb = LatentBatch::from_tensors(x.clone(), x.clone(), vec![])?;
        crate::density::klm_loss(&lb)
    })?);
    checks.push(full_objective_check()?);
    Ok(checks)
}

/// End-to-end gradient of a small model's full objective against
/// finite differences of the independent plain forward.
fn full_objective_check() -> Result<OracleCheck> {
    let pixels = 16usize;
    let (n_b, n_z, width) = (4usize, 4usize, 8usize);
    let config = RunConfig {
        n_z: Some(n_z),
        hidden_width: width,
        hidden_layers: 2,
        batch_size: n_b,
        lambda_klm: 1e-2,
        lambda_nhp: 1e-2,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(ORACLE_SEED ^ 0xf00d);
    let model = tiny_model(pixels, n_z, width, &mut rng)?;
    let x_rows: Vec<Vec<f64>> = (0..n_b)
        .map(|_| pseudo_data(&mut rng, pixels, 0.02, 0.98))
        .collect();
    let x = Tensor::new(
        vec![n_b, pixels],
        x_rows.iter().flatten().copied().collect(),
    )?;
    let draws = draw_raw(n_b, n_z, config.n_p, &mut rng)?;

    // analytic gradients from the tape
    let tape = Tape::new();
    let bound = model.bind(&tape)?;
    let out = tripod_objective_with_draws(&x, &bound, &config, Some(&draws))?;
    let grads = backward(&out.loss)?;
    let analytic: Vec<Vec<f64>> = bound
        .tensors
        .iter()
        .map(|t| grads.get_or_zeros(t))
        .collect();
    // decoder parameters must actually receive curvature gradient
    let dec_norm: f64 = model
        .params
        .entries
        .iter()
        .zip(&analytic)
        .filter(|(p, _)| p.name.starts_with("dec."))
        .flat_map(|(_, g)| g.iter())
        .map(|g| g * g)
        .sum();
    if dec_norm == 0.0 {
        return Ok(OracleCheck::new("gradcheck_full_objective", f64::INFINITY, GRAD_TOL));
    }

    // freeze the straight-through offsets at the base point
    let offsets: Vec<f64> = out
        .latents
        .z
        .data()
        .iter()
        .zip(out.latents.c.data())
        .map(|(z, c)| z - c)
        .collect();

    let mut worst = 0.0f64;
    for (k, param) in model.params.entries.iter().enumerate() {
        let numeric = finite_diff_grad(
            &mut |pd| {
                let mut probe = model.clone();
                probe.params.entries[k].data = pd.to_vec();
                plain_objective(&probe, &x_rows, &offsets, &draws, &config)
            },
            &param.data,
            FD_STEP,
        )?;
        worst = worst.max(max_rel_err(&analytic[k], &numeric, 1e-6));
    }
    Ok(OracleCheck::new("gradcheck_full_objective", worst, GRAD_TOL))
}

fn tiny_model(
    pixels: usize,
    n_z: usize,
    width: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Autoencoder> {
    let enc_dims = vec![pixels, width, width, n_z];
    let dec_dims = vec![n_z, width, width, pixels];
    let mut params = ParamSet::default();
    for (prefix, dims) in [("enc", &enc_dims), ("dec", &dec_dims)] {
        for l in 0..dims.len() - 1 {
            let (fi, fo) = (dims[l], dims[l + 1]);
            let bound = (6.0 / (fi + fo) as f64).sqrt();
            params.push(
                format!("{prefix}.w{l}"),
                vec![fi, fo],
                pseudo_data(rng, fi * fo, -bound, bound),
            );
            params.push(
                format!("{prefix}.b{l}"),
                vec![fo],
                pseudo_data(rng, fo, -0.05, 0.05),
            );
        }
    }
    Ok(Autoencoder {
        enc_dims,
        dec_dims,
        latent: LatentKind::Fsq(FsqSpec::new(n_z, 12)?),
        params,
        image_pixels: pixels,
    })
}

// ---- independent plain-f64 forward pass (no tensor machinery) ----

fn plain_linear(w: &[f64], b: &[f64], fi: usize, fo: usize, x: &[f64]) -> Vec<f64> {
    let mut out = b.to_vec();
    for (i, &xv) in x.iter().enumerate().take(fi) {
        for o in 0..fo {
            out[o] += xv * w[i * fo + o];
        }
    }
    out
}

fn plain_mlp(
    params: &ParamSet,
    prefix: &str,
    dims: &[usize],
    x: &[f64],
) -> Vec<Vec<f64>> {
    let mut taps = Vec::new();
    let mut h = x.to_vec();
    for l in 0..dims.len() - 1 {
        let w = &params.entries[params.index_of(&format!("{prefix}.w{l}")).unwrap()].data;
        let b = &params.entries[params.index_of(&format!("{prefix}.b{l}")).unwrap()].data;
        let mut lin = plain_linear(w, b, dims[l], dims[l + 1], &h);
        if l + 1 < dims.len() - 1 {
            for v in &mut lin {
                *v = v.tanh();
            }
        }
        taps.push(lin.clone());
        h = lin;
    }
    taps
}

fn plain_objective(
    model: &Autoencoder,
    x_rows: &[Vec<f64>],
    offsets: &[f64],
    draws: &RawDraws,
    config: &RunConfig,
) -> Result<f64> {
    let n_b = x_rows.len();
    let n_z = model.n_z();
    // encode, tanh, frozen-offset quantization surrogate
    let mut c_rows = Vec::with_capacity(n_b);
    for row in x_rows {
        let c_pre = plain_mlp(&model.params, "enc", &model.enc_dims, row)
            .pop()
            .unwrap();
        c_rows.push(c_pre.iter().map(|v| v.tanh()).collect::<Vec<f64>>());
    }
    let z_rows: Vec<Vec<f64>> = c_rows
        .iter()
        .enumerate()
        .map(|(i, c)| {
            c.iter()
                .enumerate()
                .map(|(j, v)| v + offsets[i * n_z + j])
                .collect()
        })
        .collect();
    // per-dimension floored std of the continuous values
    let mut sigma = vec![0.0; n_z];
    for j in 0..n_z {
        let mean: f64 = c_rows.iter().map(|r| r[j]).sum::<f64>() / n_b as f64;
        let var: f64 =
            c_rows.iter().map(|r| (r[j] - mean) * (r[j] - mean)).sum::<f64>() / n_b as f64;
        sigma[j] = var.max(SIGMA_FLOOR * SIGMA_FLOOR).sqrt();
    }
    // reconstruction: stable softplus BCE over decoder logits
    let mut recon = 0.0;
    let dec_taps_at = |z: &[f64]| plain_mlp(&model.params, "dec", &model.dec_dims, z);
    let mut center_taps = Vec::with_capacity(n_b);
    for (xi, zi) in x_rows.iter().zip(&z_rows) {
        let taps = dec_taps_at(zi);
        let logits = taps.last().unwrap();
        for (&l, &t) in logits.iter().zip(xi) {
            recon += l.max(0.0) - l * t + (-l.abs()).exp().ln_1p();
        }
        center_taps.push(taps);
    }
    recon /= (n_b * model.image_pixels) as f64;

    // kernel-based multiinformation via the double-loop reference
    let factor =
        (4.0 / ((n_z as f64 + 2.0) * n_b as f64)).powf(2.0 / (n_z as f64 + 4.0));
    let marginal_factor = (4.0 / (3.0 * n_b as f64)).powf(0.2);
    let s_diag: Vec<f64> = sigma.iter().map(|s| factor * s * s).collect();
    let marginal_bw: Vec<f64> = sigma.iter().map(|s| marginal_factor * s).collect();
    let klm = density::reference::multiinformation(&z_rows, &s_diag, &marginal_bw);

    // normalized Hessian penalty with the shared raw draws
    let n_p = draws.signs.len();
    let eps = config.epsilon;
    let mut nhp = 0.0;
    for (i, zi) in z_rows.iter().enumerate() {
        let mut probes_v: Vec<Vec<f64>> = Vec::with_capacity(n_p);
        let mut probes_w: Vec<Vec<f64>> = Vec::with_capacity(n_p);
        for l in 0..n_p {
            let sdata = draws.signs[l].data();
            let ndata = draws.normals[l].data();
            let dir_v: Vec<f64> = (0..n_z).map(|j| sigma[j] * sdata[i * n_z + j]).collect();
            let dir_w: Vec<f64> = (0..n_z).map(|j| sigma[j] * ndata[i * n_z + j]).collect();
            for (dir, sink) in [(dir_v, &mut probes_v), (dir_w, &mut probes_w)] {
                let zp: Vec<f64> = zi.iter().zip(&dir).map(|(z, d)| z + eps * d).collect();
                let zm: Vec<f64> = zi.iter().zip(&dir).map(|(z, d)| z - eps * d).collect();
                let tp = dec_taps_at(&zp);
                let tm = dec_taps_at(&zm);
                let flat: Vec<f64> = tp
                    .iter()
                    .zip(&tm)
                    .zip(&center_taps[i])
                    .flat_map(|((p, m), c)| {
                        p.iter()
                            .zip(m)
                            .zip(c)
                            .map(|((pv, mv), cv)| (pv + mv - 2.0 * cv) / (eps * eps))
                            .collect::<Vec<f64>>()
                    })
                    .collect();
                sink.push(flat);
            }
        }
        let dims = probes_v[0].len();
        let mut numer = 0.0;
        let mut denom = 0.0;
        for d in 0..dims {
            for (probes, acc) in [(&probes_v, &mut numer), (&probes_w, &mut denom)] {
                let mean: f64 = probes.iter().map(|p| p[d]).sum::<f64>() / n_p as f64;
                let var: f64 = probes
                    .iter()
                    .map(|p| (p[d] - mean) * (p[d] - mean))
                    .sum::<f64>()
                    / (n_p - 1) as f64;
                *acc += var;
            }
        }
        nhp += numer / denom.max(crate::hessian::DENOM_FLOOR);
    }
    nhp /= n_b as f64;

    Ok(recon + config.lambda_klm * klm + config.lambda_nhp * nhp)
}

// ---------------------------------------------------------------- kde

fn suite_kde() -> Result<Vec<OracleCheck>> {
    let mut checks = Vec::new();
    let sigma = Tensor::new(vec![2], vec![1.0, 1.0])?;
    let spec = silverman(&sigma, 64, 2)?;
    let exact = (spec.s_diag.data()[0] - 0.25)
        .abs()
        .max((spec.s_diag.data()[1] - 0.25).abs());
    checks.push(OracleCheck::new("kde_silverman_exact_quarter", exact, 0.0));

    let mut rng = ChaCha8Rng::seed_from_u64(ORACLE_SEED ^ 0x1de);
    let mut worst = 0.0f64;
    for case in 0..50 {
        let n_b = 4 + (case % 13);
        let n_z = 1 + (case % 5);
        let z = Tensor::new(
            vec![n_b, n_z],
            pseudo_data(&mut rng, n_b * n_z, -1.5, 1.5),
        )?;
        let lb = LatentBatch::from_values(&z)?;
        let spec = silverman(&lb.sigma, n_b, n_z)?;
        let rows: Vec<Vec<f64>> = z.data().chunks(n_z).map(|c| c.to_vec()).collect();
        let joint = crate::density::kde_log_joint(&z, &spec)?;
        let joint_ref = density::reference::log_joint(&rows, spec.s_diag.data());
        for (a, b) in joint.data().iter().zip(&joint_ref) {
            worst = worst.max((a - b).abs() / b.abs().max(1e-12));
        }
        for j in 0..n_z {
            let marg = crate::density::kde_log_marginal(&z, j, &spec)?;
            let marg_ref =
                density::reference::log_marginal(&rows, j, spec.marginal_bw.data()[j]);
            for (a, b) in marg.data().iter().zip(&marg_ref) {
                worst = worst.max((a - b).abs() / b.abs().max(1e-12));
            }
        }
    }
    checks.push(OracleCheck::new("kde_vectorized_vs_double_loop", worst, 1e-10));
    Ok(checks)
}

// ---------------------------------------------------------------- hutchinson

const MC_DRAWS: usize = 100_000;

fn random_mlp_tap(rng: &mut ChaCha8Rng, n_z: usize, width: usize) -> FnDecoder<impl Fn(&[f64]) -> Vec<f64>> {
    let w1 = pseudo_data(rng, n_z * width, -0.8, 0.8);
    let b1 = pseudo_data(rng, width, -0.2, 0.2);
    let w2 = pseudo_data(rng, width, -0.8, 0.8);
    let b2 = rng.gen_range(-0.2..0.2);
    FnDecoder::new(1, move |z: &[f64]| {
        let mut acc = b2;
        for h in 0..width {
            let mut pre = b1[h];
            for (j, &zv) in z.iter().enumerate() {
                pre += w1[j * width + h] * zv;
            }
            acc += w2[h] * pre.tanh();
        }
        vec![acc]
    })
}

fn suite_hutchinson() -> Result<Vec<OracleCheck>> {
    let mut checks = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(ORACLE_SEED ^ 0xbead);

    // closed form: g = z1 z2 has Var[v^T H v] = 4 under Rademacher(1)
    let h_closed = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
    let mc = oracle_stats::mc_var_rademacher(&h_closed, &[1.0, 1.0], MC_DRAWS, &mut rng);
    checks.push(OracleCheck::new(
        "hutchinson_bilinear_var_is_4",
        rel_err(mc, 4.0),
        0.02,
    ));

    // the finite-difference loss path reproduces the same statistic
    let dec = FnDecoder::new(1, |z: &[f64]| vec![z[0] * z[1]]);
    let n = 50_000;
    let z = Tensor::new(vec![n, 2], vec![0.1; n * 2])?;
    let draws = draw_raw(n, 2, 2, &mut rng)?;
    let loss = vanilla_hp_loss_with_draws(&dec, &z, &draws, 0.1, false)?.to_scalar()?;
    checks.push(OracleCheck::new(
        "hutchinson_fd_loss_matches_4",
        rel_err(loss, 4.0),
        0.02,
    ));

    // random MLP: Monte-Carlo variance matches 2 * sum of squared
    // off-diagonals computed from the brute-force Hessian
    let dec = random_mlp_tap(&mut rng, 4, 16);
    let z0 = pseudo_data(&mut rng, 4, -0.8, 0.8);
    let h = hessian_oracle(&dec, &z0, 0, 0, 1e-3)?;
    let ones = vec![1.0; 4];
    let mc = oracle_stats::mc_var_rademacher(&h, &ones, MC_DRAWS, &mut rng);
    let closed = 2.0 * oracle_stats::offdiag_sq_sum(&h);
    checks.push(OracleCheck::new(
        "hutchinson_mlp_matches_oracle",
        rel_err(mc, closed),
        0.02,
    ));
    Ok(checks)
}

// ---------------------------------------------------------------- prop 3.1

fn suite_prop31() -> Result<Vec<OracleCheck>> {
    let mut checks = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(ORACLE_SEED ^ 0x31);

    let cases: Vec<(String, Box<dyn Fn(&[f64]) -> Vec<f64>>)> = {
        let mlp = random_mlp_tap(&mut rng, 3, 12);
        vec![
            ("bilinear".to_string(), Box::new(|z: &[f64]| vec![z[0] * z[1]])),
            ("mlp".to_string(), Box::new(move |z: &[f64]| {
                let t = Tensor::new(vec![1, z.len()], z.to_vec()).unwrap();
                mlp.forward_taps(&t).unwrap()[0].data().to_vec()
            })),
        ]
    };
    for (label, f) in cases {
        let n_z = if label == "bilinear" { 2 } else { 3 };
        let z0 = pseudo_data(&mut rng, n_z, -0.7, 0.7);
        let sigma = pseudo_data(&mut rng, n_z, 0.5, 1.5);
        let base = FnDecoder::new(1, |z: &[f64]| f(z));
        let h = hessian_oracle(&base, &z0, 0, 0, 1e-3)?;
        let eq14 = oracle_stats::offdiag_sq_sum(&h);
        let eq15 = oracle_stats::normalized_ratio(&h, &sigma);
        let mut worst14 = 0.0f64;
        let mut worst15 = 0.0f64;
        for alpha in [0.1, 10.0] {
            let scaled = FnDecoder::new(1, |z: &[f64]| {
                f(z).into_iter().map(|v| alpha * v).collect()
            });
            let hs = hessian_oracle(&scaled, &z0, 0, 0, 1e-3)?;
            worst14 = worst14.max(rel_err(
                oracle_stats::offdiag_sq_sum(&hs),
                alpha * alpha * eq14,
            ));
            worst15 =
                worst15.max((oracle_stats::normalized_ratio(&hs, &sigma) - eq15).abs());
        }
        checks.push(OracleCheck::new(
            format!("prop31_{label}_eq14_scales_alpha_sq"),
            worst14,
            1e-6,
        ));
        checks.push(OracleCheck::new(
            format!("prop31_{label}_eq15_output_invariant"),
            worst15,
            1e-9,
        ));

        // latent rescaling z_j <- s_j z_j with sigma recomputed
        let scales = pseudo_data(&mut rng, n_z, 0.5, 2.0);
        let (s_in, z0s, sigma_s): (Vec<f64>, Vec<f64>, Vec<f64>) = (
            scales.clone(),
            z0.iter().zip(&scales).map(|(z, s)| z * s).collect(),
            sigma.iter().zip(&scales).map(|(g, s)| g * s).collect(),
        );
        let reparam = FnDecoder::new(1, move |z: &[f64]| {
            let back: Vec<f64> = z.iter().zip(&s_in).map(|(v, s)| v / s).collect();
            f(&back)
        });
        let hr = hessian_oracle(&reparam, &z0s, 0, 0, 1e-3)?;
        let eq15_r = oracle_stats::normalized_ratio(&hr, &sigma_s);
        checks.push(OracleCheck::new(
            format!("prop31_{label}_eq15_latent_invariant"),
            (eq15_r - eq15).abs(),
            1e-6,
        ));
    }
    Ok(checks)
}

// ---------------------------------------------------------------- prop 3.2

fn suite_prop32() -> Result<Vec<OracleCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(ORACLE_SEED ^ 0x32);
    let total = 20usize;
    let mut failures = 0usize;
    let mut worst = 0.0f64;
    for _ in 0..total {
        let dec = random_mlp_tap(&mut rng, 4, 16);
        let z0 = pseudo_data(&mut rng, 4, -0.8, 0.8);
        let sigma = pseudo_data(&mut rng, 4, 0.5, 1.5);
        let h = hessian_oracle(&dec, &z0, 0, 0, 1e-3)?;
        let num = oracle_stats::mc_var_rademacher(&h, &sigma, MC_DRAWS, &mut rng);
        let den = oracle_stats::mc_var_gaussian(&h, &sigma, MC_DRAWS, &mut rng);
        let mc_ratio = num / den;
        let oracle_ratio = oracle_stats::normalized_ratio(&h, &sigma);
        let err = rel_err(mc_ratio, oracle_ratio);
        worst = worst.max(err);
        if err > 0.02 {
            failures += 1;
        }
    }
    Ok(vec![
        OracleCheck::new("prop32_failures_out_of_20", failures as f64, 1.0),
        OracleCheck::new("prop32_worst_case_rel_err", worst, 0.10),
    ])
}
