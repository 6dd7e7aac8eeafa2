use std::process::Command;

fn main() {
    // Embed a git-describe-style version so every output file can state
    // exactly which build produced it.
    let describe = Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "untracked".to_string());
    println!(
        "cargo:rustc-env=TRIPOD_BUILD_VERSION=v{}+{}",
        env!("CARGO_PKG_VERSION"),
        describe
    );
    println!("cargo:rerun-if-changed=build.rs");
}
