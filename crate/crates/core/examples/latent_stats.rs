use tripod_core::config::RunConfig;
use tripod_core::model::checkpoint::Checkpoint;
use tripod_core::model::train::eval_latents;
use tripod_core::model::Autoencoder;
use tripod_core::tensor::rng::RngState;

fn main() {
    let path = std::env::args().nth(1).expect("checkpoint path");
    let ckpt = Checkpoint::read_from(std::path::Path::new(&path)).unwrap();
    let cfg = RunConfig::from_json(&ckpt.config_json).unwrap();
    let proc = cfg.process().unwrap();
    let mut rng = RngState::new(cfg.seed);
    let mut model = Autoencoder::build(&cfg, &proc, &mut rng).unwrap();
    model.params = ckpt.params.clone();
    let set = proc.enumerate_all();
    let (le, psnr) = eval_latents(&model, &set).unwrap();
    let n_z = le.n_z();
    println!("psnr {psnr:.2}");
    for j in 0..n_z {
        let col = le.cont_column(j);
        let mean: f64 = col.iter().sum::<f64>() / col.len() as f64;
        let var: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / col.len() as f64;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in &col { lo = lo.min(v); hi = hi.max(v); }
        let mut codes = le.code_column(j);
        codes.sort_unstable();
        codes.dedup();
        println!("dim {j}: mean {mean:+.4} std {:.4} range [{lo:+.4},{hi:+.4}] codes {:?}", var.sqrt(), codes);
    }
}
