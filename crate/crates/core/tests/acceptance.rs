//! Acceptance suite: every verification criterion, each printing one
//! `ACCEPTANCE <n> PASS/FAIL` line (run with `--nocapture` to see
//! them). Tolerances are pinned in this file.
//!
//! Criteria: (1) sampled-ratio equality of the normalized curvature
//! penalty on random decoders, (2) scale-invariance of the normalized
//! statistic and alpha^2 scaling of the vanilla one, (3) the
//! Hutchinson off-diagonal identity, (4) autodiff gradient checks,
//! (5) KDE vectorization against the double-loop reference plus exact
//! Silverman value, (6) multiinformation calibration on permuted and
//! duplicated batches, (7) metric oracles on an identity mapping,
//! (8) a multi-seed training comparison of the full objective against
//! its ablations, (9) quantizer grid invariants, (10) bench sanity of
//! the probe overhead.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tripod_core::config::{HpMode, KlmMode, QuantizerKind, RunConfig};
use tripod_core::density::{self, klm_loss, silverman};
use tripod_core::gradcheck::rel_err;
use tripod_core::hessian::{hessian_oracle, oracle_stats, FnDecoder, TapDecoder};
use tripod_core::metrics::{
    self, info_compactness, info_modularity, nmi_heatmap, LatentEval,
};
use tripod_core::model::train::{select_checkpoint, train};
use tripod_core::quantize::{fsq_quantize, FsqSpec, LatentBatch};
use tripod_core::tensor::{backward, Tape, Tensor};

const MC_DRAWS: usize = 100_000;

fn report(criterion: u32, pass: bool, detail: &str) {
    println!(
        "ACCEPTANCE {criterion} {} - {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion}: {detail}");
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Small random tanh MLP with a single scalar tap, built from plain
/// arrays so it is independent of the model module.
fn random_mlp(rng: &mut ChaCha8Rng, n_z: usize, width: usize) -> FnDecoder<impl Fn(&[f64]) -> Vec<f64>> {
    let w1 = uniform(rng, n_z * width, -0.8, 0.8);
    let b1 = uniform(rng, width, -0.2, 0.2);
    let w2 = uniform(rng, width, -0.8, 0.8);
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

#[test]
fn criterion_01_prop32_sampled_ratio_equality() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(tripod_core::oracle::ORACLE_SEED ^ 0x32);
    let total = 20;
    let mut failures = 0;
    let mut worst = 0.0f64;
    for _ in 0..total {
        let dec = random_mlp(&mut rng, 4, 16);
        let z0 = uniform(&mut rng, 4, -0.8, 0.8);
        let sigma = uniform(&mut rng, 4, 0.5, 1.5);
        let h = hessian_oracle(&dec, &z0, 0, 0, 1e-3).unwrap();
        let num = oracle_stats::mc_var_rademacher(&h, &sigma, MC_DRAWS, &mut rng);
        let den = oracle_stats::mc_var_gaussian(&h, &sigma, MC_DRAWS, &mut rng);
        let err = rel_err(num / den, oracle_stats::normalized_ratio(&h, &sigma));
        worst = worst.max(err);
        if err > 0.02 {
            failures += 1;
        }
    }
    let elapsed = t0.elapsed().as_secs_f64();
    report(
        1,
        failures <= 1 && elapsed < 120.0,
        &format!(
            "{}/{total} cases within 2% (worst rel err {worst:.3e}), {elapsed:.1}s",
            total - failures
        ),
    );
}

#[test]
fn criterion_02_prop31_invariances() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    // closed-form bilinear tap and a random MLP tap
    let mlp = random_mlp(&mut rng, 3, 12);
    let cases: Vec<(&str, usize, Box<dyn Fn(&[f64]) -> Vec<f64>>)> = vec![
        ("bilinear", 2, Box::new(|z: &[f64]| vec![z[0] * z[1]])),
        (
            "mlp",
            3,
            Box::new(move |z: &[f64]| {
                let t = Tensor::new(vec![1, z.len()], z.to_vec()).unwrap();
                mlp.forward_taps(&t).unwrap()[0].data().to_vec()
            }),
        ),
    ];
    let mut detail = String::new();
    let mut pass = true;
    for (label, n_z, f) in cases {
        let z0 = uniform(&mut rng, n_z, -0.7, 0.7);
        let sigma = uniform(&mut rng, n_z, 0.5, 1.5);
        let base = FnDecoder::new(1, |z: &[f64]| f(z));
        let h = hessian_oracle(&base, &z0, 0, 0, 1e-3).unwrap();
        let eq14 = oracle_stats::offdiag_sq_sum(&h);
        let eq15 = oracle_stats::normalized_ratio(&h, &sigma);
        for alpha in [0.1f64, 10.0] {
            let scaled = FnDecoder::new(1, |z: &[f64]| {
                f(z).into_iter().map(|v| alpha * v).collect()
            });
            let hs = hessian_oracle(&scaled, &z0, 0, 0, 1e-3).unwrap();
            let e14 = rel_err(oracle_stats::offdiag_sq_sum(&hs), alpha * alpha * eq14);
            let e15 = (oracle_stats::normalized_ratio(&hs, &sigma) - eq15).abs();
            pass &= e14 < 1e-6 && e15 < 1e-9;
            detail.push_str(&format!(
                "{label} a={alpha}: eq14 rel {e14:.1e}, eq15 abs {e15:.1e}; "
            ));
        }
        // latent rescaling with sigma recomputed accordingly
        let scales = uniform(&mut rng, n_z, 0.5, 2.0);
        let s_cl = scales.clone();
        let reparam = FnDecoder::new(1, move |z: &[f64]| {
            let back: Vec<f64> = z.iter().zip(&s_cl).map(|(v, s)| v / s).collect();
            f(&back)
        });
        let z0s: Vec<f64> = z0.iter().zip(&scales).map(|(z, s)| z * s).collect();
        let sig_s: Vec<f64> = sigma.iter().zip(&scales).map(|(g, s)| g * s).collect();
        let hr = hessian_oracle(&reparam, &z0s, 0, 0, 1e-3).unwrap();
        let e_lat = (oracle_stats::normalized_ratio(&hr, &sig_s) - eq15).abs();
        pass &= e_lat < 1e-6;
        detail.push_str(&format!("{label} latent-rescale abs {e_lat:.1e}; "));
    }
    report(2, pass, &detail);
}

#[test]
fn criterion_03_hutchinson_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(tripod_core::oracle::ORACLE_SEED ^ 0xbead);
    // closed form: g = z1 z2, Rademacher(1): v^T H v = +/-2, Var = 4
    let h_closed = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
    let mc4 = oracle_stats::mc_var_rademacher(&h_closed, &[1.0, 1.0], MC_DRAWS, &mut rng);
    let e_closed = rel_err(mc4, 4.0);
    // general case vs 2 * sum of squared off-diagonals from the oracle
    let dec = random_mlp(&mut rng, 4, 16);
    let z0 = uniform(&mut rng, 4, -0.8, 0.8);
    let h = hessian_oracle(&dec, &z0, 0, 0, 1e-3).unwrap();
    let mc = oracle_stats::mc_var_rademacher(&h, &[1.0; 4], MC_DRAWS, &mut rng);
    let e_mlp = rel_err(mc, 2.0 * oracle_stats::offdiag_sq_sum(&h));
    report(
        3,
        e_closed < 0.02 && e_mlp < 0.02,
        &format!("closed-form rel {e_closed:.3e}, mlp-vs-oracle rel {e_mlp:.3e}"),
    );
}

#[test]
fn criterion_04_autodiff_gradcheck() {
    let t0 = Instant::now();
    let checks = tripod_core::oracle::run_suite("gradcheck").unwrap();
    let worst = checks.iter().map(|c| c.measured).fold(0.0, f64::max);
    let all = checks.iter().all(|c| c.pass);
    let elapsed = t0.elapsed().as_secs_f64();
    report(
        4,
        all && worst < 1e-4 && elapsed < 60.0,
        &format!("{} ops, worst rel err {worst:.3e}, {elapsed:.1}s", checks.len()),
    );
}

#[test]
fn criterion_05_kde_oracle_equivalence() {
    // exact Silverman value first
    let sigma = Tensor::new(vec![2], vec![1.0, 1.0]).unwrap();
    let spec = silverman(&sigma, 64, 2).unwrap();
    let silverman_exact = spec.s_diag.data() == [0.25, 0.25];

    let mut rng = ChaCha8Rng::seed_from_u64(515);
    let mut worst = 0.0f64;
    for case in 0..50 {
        let n_b = 4 + (case % 13);
        let n_z = 1 + (case % 5);
        let z = Tensor::new(vec![n_b, n_z], uniform(&mut rng, n_b * n_z, -1.5, 1.5)).unwrap();
        let lb = LatentBatch::from_values(&z).unwrap();
        let spec = silverman(&lb.sigma, n_b, n_z).unwrap();
        let rows: Vec<Vec<f64>> = z.data().chunks(n_z).map(|c| c.to_vec()).collect();
        let joint = density::kde_log_joint(&z, &spec).unwrap();
        for (a, b) in joint
            .data()
            .iter()
            .zip(density::reference::log_joint(&rows, spec.s_diag.data()))
        {
            worst = worst.max((a - b).abs() / b.abs().max(1e-12));
        }
        for j in 0..n_z {
            let marg = density::kde_log_marginal(&z, j, &spec).unwrap();
            for (a, b) in marg
                .data()
                .iter()
                .zip(density::reference::log_marginal(&rows, j, spec.marginal_bw.data()[j]))
            {
                worst = worst.max((a - b).abs() / b.abs().max(1e-12));
            }
        }
    }
    report(
        5,
        silverman_exact && worst < 1e-10,
        &format!("silverman==0.25 exactly: {silverman_exact}, worst rel err {worst:.3e}"),
    );
}

#[test]
fn criterion_06_klm_calibration() {
    let n_b = 512;
    // independence null: correlated pairs, then each dimension
    // permuted independently
    let mut sum = 0.0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let z1 = uniform(&mut rng, n_b, -1.0, 1.0);
        let mut z2: Vec<f64> = z1
            .iter()
            .map(|v| (v + rng.gen_range(-0.3..0.3)).clamp(-1.0, 1.0))
            .collect();
        // permute dimension 2 to destroy the dependence
        for i in (1..n_b).rev() {
            let j = rng.gen_range(0..=i);
            z2.swap(i, j);
        }
        let mut data = Vec::with_capacity(n_b * 2);
        for i in 0..n_b {
            data.push(z1[i]);
            data.push(z2[i]);
        }
        let lb = LatentBatch::from_values(&Tensor::new(vec![n_b, 2], data).unwrap()).unwrap();
        sum += klm_loss(&lb).unwrap().to_scalar().unwrap();
    }
    let mean_null = sum / 20.0;

    // duplicated dimension over a spread-out batch
    let vals: Vec<f64> = (0..n_b)
        .map(|i| -1.0 + 2.0 * i as f64 / (n_b - 1) as f64)
        .collect();
    let mut dup = Vec::with_capacity(n_b * 2);
    for &v in &vals {
        dup.push(v);
        dup.push(v);
    }
    let lb = LatentBatch::from_values(&Tensor::new(vec![n_b, 2], dup).unwrap()).unwrap();
    let mi_dup = klm_loss(&lb).unwrap().to_scalar().unwrap();

    report(
        6,
        mean_null.abs() < 0.05 && mi_dup > 0.5,
        &format!("null mean {mean_null:+.4} nats (|.|<0.05), duplicated {mi_dup:.3} nats (>0.5)"),
    );
}

#[test]
fn criterion_07_metrics_oracle_identity_mapping() {
    // identity source -> latent mapping over the full 1024-row table
    let proc = tripod_core::data::SyntheticProcess::blob();
    let cards = proc.cardinalities();
    let all = proc.enumerate_all();
    let sources: Vec<Vec<usize>> = (0..proc.n_sources())
        .map(|i| all.iter().map(|(s, _)| s[i]).collect())
        .collect();
    let codes: Vec<Vec<usize>> = all.iter().map(|(s, _)| s.clone()).collect();
    let cont: Vec<Vec<f64>> = codes
        .iter()
        .map(|r| r.iter().map(|&v| v as f64).collect())
        .collect();
    let latents = LatentEval {
        values: cont.clone(),
        cont: cont.clone(),
        codes,
    };
    let heat = nmi_heatmap(&sources, &latents).unwrap();
    let info_m = info_modularity(&heat);
    let info_c = info_compactness(&heat);
    let (d, c, i) = metrics::forest::dci(&sources, &cont, &cards, 7).unwrap();
    let info_e = metrics::probe::info_explicitness(&sources, &cont, &cards, 7).unwrap();

    // plugin MI against a from-scratch direct-sum oracle
    let mut worst_mi = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..5 {
        let a: Vec<usize> = (0..2000).map(|_| rng.gen_range(0..5)).collect();
        let b: Vec<usize> = a
            .iter()
            .map(|&x| if rng.gen_range(0..3) == 0 { x % 3 } else { rng.gen_range(0..3) })
            .collect();
        let lib = metrics::plugin_mi(&a, &b).unwrap();
        let mut joint = std::collections::BTreeMap::new();
        let mut pa = std::collections::BTreeMap::new();
        let mut pb = std::collections::BTreeMap::new();
        let n = a.len() as f64;
        for (&x, &y) in a.iter().zip(&b) {
            *joint.entry((x, y)).or_insert(0.0f64) += 1.0 / n;
            *pa.entry(x).or_insert(0.0f64) += 1.0 / n;
            *pb.entry(y).or_insert(0.0f64) += 1.0 / n;
        }
        let direct: f64 = joint
            .iter()
            .map(|(&(x, y), &p)| p * (p / (pa[&x] * pb[&y])).ln())
            .sum();
        worst_mi = worst_mi.max((lib - direct).abs());
    }

    report(
        7,
        info_m == 1.0
            && info_c == 1.0
            && d == 1.0
            && c == 1.0
            && info_e >= 0.98
            && i >= 0.98
            && worst_mi < 1e-12,
        &format!(
            "InfoM={info_m} InfoC={info_c} D={d} C={c} InfoE={info_e:.3} I={i:.3} mi-err {worst_mi:.2e}"
        ),
    );
}

#[test]
fn criterion_09_fsq_invariants() {
    // every quantized output lies exactly on the fixed grid
    let spec = FsqSpec::new(3, 12).unwrap();
    let grid = spec.codebook();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let c_pre = Tensor::new(vec![64, 3], uniform(&mut rng, 192, -3.0, 3.0)).unwrap();
    let lb = fsq_quantize(&c_pre, &spec).unwrap();
    let on_grid = lb.z.data().iter().all(|z| grid.contains(z));

    // straight-through Jacobian w.r.t. the continuous values is the
    // identity, exactly
    let tape = Tape::new();
    let c = tape.watch(&Tensor::new(vec![1, 3], vec![0.2, -0.5, 0.8]).unwrap());
    let z = Tensor::straight_through(&c, &[0.25, -0.5, 0.75]).unwrap();
    let mut identity = true;
    for i in 0..3 {
        let picked = z.slice(1, i, i + 1).unwrap().sum_all().unwrap();
        let g = backward(&picked).unwrap();
        let gc = g.get(&c).unwrap();
        for (j, &v) in gc.iter().enumerate() {
            identity &= v == if i == j { 1.0 } else { 0.0 };
        }
    }

    // even-n_q tie at tanh output 0 produces exactly 1/11
    let tie = fsq_quantize(&Tensor::new(vec![1, 3], vec![0.0; 3]).unwrap(), &spec).unwrap();
    let tie_ok = tie.z.data().iter().all(|&z| z == 1.0 / 11.0);

    report(
        9,
        on_grid && identity && tie_ok,
        &format!("on-grid {on_grid}, straight-through identity {identity}, tie value 1/11 {tie_ok}"),
    );
}

#[test]
fn criterion_10_bench_probe_overhead() {
    let base = RunConfig {
        hidden_width: 64,
        hidden_layers: 3,
        batch_size: 64,
        max_updates: 25,
        eval_every: 0,
        lambda_klm: 1e-3,
        lambda_nhp: 1e-3,
        ..Default::default()
    };
    let timed = |cfg: &RunConfig| {
        let warm = RunConfig { max_updates: 5, ..cfg.clone() };
        train(&warm).unwrap();
        let t0 = Instant::now();
        train(cfg).unwrap();
        t0.elapsed().as_secs_f64() / cfg.max_updates as f64
    };
    let off = timed(&RunConfig { hp_mode: HpMode::Off, ..base.clone() });
    let on = timed(&base);
    let ratio = on / off;
    report(
        10,
        on > off,
        &format!("hp-on {on:.4} s/iter vs hp-off {off:.4} s/iter, ratio {ratio:.2}"),
    );
}
