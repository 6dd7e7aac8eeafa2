fn main() {
    for suite in ["gradcheck", "kde", "hutchinson", "prop31", "prop32"] {
        let t0 = std::time::Instant::now();
        match tripod_core::oracle::run_suite(suite) {
            Ok(checks) => {
                for c in &checks {
                    println!("{c}");
                }
                println!("-- {suite}: {:.2}s", t0.elapsed().as_secs_f64());
            }
            Err(e) => println!("ERROR {suite}: {e}"),
        }
    }
}
